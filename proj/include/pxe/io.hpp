#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pxe/error.hpp"
#include "pxe/eval.hpp"
#include "pxe/sampling.hpp"
#include "pxe/trainer.hpp"

namespace pxe {

/// EMB1: magic "EMB1", u32 N, u32 D, then N*D little-endian 32-bit floats
/// row-major. All multi-byte values little-endian regardless of host.
void write_embeddings(const std::string& path, const Matrix& embeddings);
Matrix read_embeddings(const std::string& path);

/// BIN1: magic "BIN1", u32 N, u32 D_bits, then N*ceil(D/64) little-endian
/// 64-bit words.
void write_binary_codes(const std::string& path, const BinaryCodeMatrix& codes);
BinaryCodeMatrix read_binary_codes(const std::string& path);

/// One decimal integer per line.
void write_labels(const std::string& path, const std::vector<std::size_t>& labels);
std::vector<std::size_t> read_labels(const std::string& path);

/// PXE1: magic "PXE1", u32 version (1), u8 trunk kind, u8 layer-norm flag,
/// u32 F, u32 H, u32 D, u32 class count, f64 layer-norm epsilon, then the
/// trunk weight (affine trunks only), trunk bias, projection, and proxy
/// tensors as little-endian 64-bit floats row-major.
struct Checkpoint {
    EmbeddingModel model;
    ProxyMatrix proxies;
};

void save_checkpoint(const std::string& path, const EmbeddingModel& model,
                     const ProxyMatrix& proxies);
Checkpoint load_checkpoint(const std::string& path);

/// Dataset CSV: one row per sample, label first, then the features. An
/// optional header is detected by a non-numeric feature cell in the first
/// row. Labels (integer or string) map to dense indices in first-appearance
/// order; label_names keeps the original spelling per dense index.
struct CsvDataset {
    Dataset dataset;
    std::vector<std::string> label_names;
};

void write_dataset_csv(const std::string& path, const Dataset& dataset,
                       bool header = true);
CsvDataset read_dataset_csv(const std::string& path);

/// Per-epoch history: "epoch,mean_loss,lr" with epochs counted from 0.
/// Wall times are deliberately not serialized so reruns are byte-identical.
void write_history_csv(const std::string& path, const TrainHistory& history);

/// key=value lines; blank lines and '#' comments are skipped. Order is
/// preserved; duplicate keys keep their last value when merged downstream.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues read_key_values(const std::string& path);
void write_key_values(const std::string& path, const KeyValues& entries);

std::string format_double(double v);

}  // namespace pxe
