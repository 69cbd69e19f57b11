#include "pxe/io.hpp"

#include <bit>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace pxe {

namespace {

std::ofstream open_out(const std::string& path, bool binary) {
    std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc
                                   : std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path, bool binary) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) throw IoError("cannot open: " + path);
    return in;
}

void put_bytes(std::ostream& out, std::uint64_t v, int n_bytes) {
    for (int b = 0; b < n_bytes; ++b)
        out.put(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

std::uint64_t get_bytes(std::istream& in, int n_bytes, const std::string& path) {
    std::uint64_t v = 0;
    for (int b = 0; b < n_bytes; ++b) {
        const int c = in.get();
        if (c == EOF) throw IoError("truncated file: " + path);
        v |= static_cast<std::uint64_t>(c & 0xFF) << (8 * b);
    }
    return v;
}

void put_u32(std::ostream& out, std::uint32_t v) { put_bytes(out, v, 4); }
void put_u64(std::ostream& out, std::uint64_t v) { put_bytes(out, v, 8); }
void put_f32(std::ostream& out, float v) {
    put_bytes(out, std::bit_cast<std::uint32_t>(v), 4);
}
void put_f64(std::ostream& out, double v) {
    put_bytes(out, std::bit_cast<std::uint64_t>(v), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& p) {
    return static_cast<std::uint32_t>(get_bytes(in, 4, p));
}
std::uint64_t get_u64(std::istream& in, const std::string& p) {
    return get_bytes(in, 8, p);
}
float get_f32(std::istream& in, const std::string& p) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(get_bytes(in, 4, p)));
}
double get_f64(std::istream& in, const std::string& p) {
    return std::bit_cast<double>(get_bytes(in, 8, p));
}

void put_magic(std::ostream& out, const char* magic) { out.write(magic, 4); }

void expect_magic(std::istream& in, const char* magic, const std::string& path) {
    char buf[4];
    if (!in.read(buf, 4) || std::string_view(buf, 4) != magic)
        throw IoError("bad magic, expected " + std::string(magic) + ": " + path);
}

void check_stream(std::ostream& out, const std::string& path) {
    if (!out) throw IoError("write failed: " + path);
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool parse_double(const std::string& cell, double& out) {
    const std::string t = trim(cell);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size();
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_embeddings(const std::string& path, const Matrix& embeddings) {
    auto out = open_out(path, true);
    put_magic(out, "EMB1");
    put_u32(out, static_cast<std::uint32_t>(embeddings.rows));
    put_u32(out, static_cast<std::uint32_t>(embeddings.cols));
    for (double v : embeddings.data) put_f32(out, static_cast<float>(v));
    check_stream(out, path);
}

Matrix read_embeddings(const std::string& path) {
    auto in = open_in(path, true);
    expect_magic(in, "EMB1", path);
    const std::uint32_t n = get_u32(in, path);
    const std::uint32_t d = get_u32(in, path);
    Matrix m(n, d);
    for (auto& v : m.data) v = static_cast<double>(get_f32(in, path));
    return m;
}

void write_binary_codes(const std::string& path, const BinaryCodeMatrix& codes) {
    auto out = open_out(path, true);
    put_magic(out, "BIN1");
    put_u32(out, static_cast<std::uint32_t>(codes.n));
    put_u32(out, static_cast<std::uint32_t>(codes.dim_bits));
    for (std::uint64_t w : codes.words) put_u64(out, w);
    check_stream(out, path);
}

BinaryCodeMatrix read_binary_codes(const std::string& path) {
    auto in = open_in(path, true);
    expect_magic(in, "BIN1", path);
    BinaryCodeMatrix codes;
    codes.n = get_u32(in, path);
    codes.dim_bits = get_u32(in, path);
    codes.words.resize(codes.n * codes.words_per_row());
    for (auto& w : codes.words) w = get_u64(in, path);
    return codes;
}

void write_labels(const std::string& path, const std::vector<std::size_t>& labels) {
    auto out = open_out(path, false);
    for (std::size_t label : labels) out << label << '\n';
    check_stream(out, path);
}

std::vector<std::size_t> read_labels(const std::string& path) {
    auto in = open_in(path, false);
    std::vector<std::size_t> labels;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        char* end = nullptr;
        const long long v = std::strtoll(t.c_str(), &end, 10);
        if (end != t.c_str() + t.size() || v < 0)
            throw IoError("bad label line '" + t + "': " + path);
        labels.push_back(static_cast<std::size_t>(v));
    }
    return labels;
}

void save_checkpoint(const std::string& path, const EmbeddingModel& model,
                     const ProxyMatrix& proxies) {
    auto out = open_out(path, true);
    put_magic(out, "PXE1");
    put_u32(out, 1);
    out.put(static_cast<char>(model.trunk_kind));
    out.put(model.use_layer_norm ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(model.feature_dim()));
    put_u32(out, static_cast<std::uint32_t>(model.hidden_dim()));
    put_u32(out, static_cast<std::uint32_t>(model.embed_dim()));
    put_u32(out, static_cast<std::uint32_t>(proxies.class_count()));
    put_f64(out, model.layer_norm_epsilon);
    for (double v : model.trunk_weight.data) put_f64(out, v);
    for (double v : model.trunk_bias) put_f64(out, v);
    for (double v : model.projection.data) put_f64(out, v);
    for (double v : proxies.weights.data) put_f64(out, v);
    check_stream(out, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    auto in = open_in(path, true);
    expect_magic(in, "PXE1", path);
    const std::uint32_t version = get_u32(in, path);
    if (version != 1)
        throw IoError("unsupported checkpoint version " + std::to_string(version) +
                      ": " + path);

    const int kind_byte = in.get();
    const int ln_byte = in.get();
    if (kind_byte == EOF || ln_byte == EOF) throw IoError("truncated file: " + path);
    if (kind_byte != 0 && kind_byte != 1)
        throw IoError("bad trunk kind byte: " + path);

    Checkpoint ckpt;
    ckpt.model.trunk_kind = static_cast<TrunkKind>(kind_byte);
    ckpt.model.use_layer_norm = ln_byte != 0;
    const std::uint32_t f = get_u32(in, path);
    const std::uint32_t h = get_u32(in, path);
    const std::uint32_t d = get_u32(in, path);
    const std::uint32_t classes = get_u32(in, path);
    ckpt.model.layer_norm_epsilon = get_f64(in, path);

    if (ckpt.model.trunk_kind == TrunkKind::kAffineTanh) {
        ckpt.model.trunk_weight = Matrix(h, f);
        for (auto& v : ckpt.model.trunk_weight.data) v = get_f64(in, path);
        ckpt.model.trunk_bias.resize(h);
        for (auto& v : ckpt.model.trunk_bias) v = get_f64(in, path);
    } else if (f != h) {
        throw IoError("identity trunk with F != H: " + path);
    }
    ckpt.model.projection = Matrix(h, d);
    for (auto& v : ckpt.model.projection.data) v = get_f64(in, path);
    ckpt.proxies.weights = Matrix(classes, d);
    for (auto& v : ckpt.proxies.weights.data) v = get_f64(in, path);
    return ckpt;
}

void write_dataset_csv(const std::string& path, const Dataset& dataset, bool header) {
    auto out = open_out(path, false);
    if (header) {
        out << "label";
        for (std::size_t j = 0; j < dataset.feature_dim(); ++j) out << ",f" << j;
        out << '\n';
    }
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        out << dataset.labels[i];
        auto row = dataset.features.row(i);
        for (double v : row) out << ',' << format_double(v);
        out << '\n';
    }
    check_stream(out, path);
}

CsvDataset read_dataset_csv(const std::string& path) {
    auto in = open_in(path, false);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) throw IoError("empty dataset: " + path);

    // Header row: any feature cell of the first row that is not a number.
    bool header = false;
    for (std::size_t j = 1; j < rows[0].size(); ++j) {
        double ignored;
        if (!parse_double(rows[0][j], ignored)) {
            header = true;
            break;
        }
    }
    const std::size_t first = header ? 1 : 0;
    if (first >= rows.size()) throw IoError("dataset has a header but no rows: " + path);
    if (rows[first].size() < 2)
        throw IoError("dataset rows need a label and at least one feature: " + path);
    const std::size_t width = rows[first].size();

    CsvDataset out;
    out.dataset.features = Matrix(rows.size() - first, width - 1);
    out.dataset.labels.resize(rows.size() - first);
    std::vector<std::string> names;
    for (std::size_t r = first; r < rows.size(); ++r) {
        if (rows[r].size() != width)
            throw IoError("ragged dataset row " + std::to_string(r + 1) + ": " + path);
        const std::string label = trim(rows[r][0]);
        std::size_t id = names.size();
        for (std::size_t k = 0; k < names.size(); ++k)
            if (names[k] == label) {
                id = k;
                break;
            }
        if (id == names.size()) names.push_back(label);
        out.dataset.labels[r - first] = id;
        for (std::size_t j = 1; j < width; ++j) {
            double v;
            if (!parse_double(rows[r][j], v))
                throw IoError("bad feature cell '" + trim(rows[r][j]) + "' at row " +
                              std::to_string(r + 1) + ": " + path);
            out.dataset.features.at(r - first, j - 1) = v;
        }
    }
    out.dataset.class_count = names.size();
    out.label_names = std::move(names);
    out.dataset.validate();
    return out;
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
    auto out = open_out(path, false);
    out << "epoch,mean_loss,lr\n";
    for (std::size_t e = 0; e < history.epochs.size(); ++e)
        out << e << ',' << format_double(history.epochs[e].mean_loss) << ','
            << format_double(history.epochs[e].lr) << '\n';
    check_stream(out, path);
}

KeyValues read_key_values(const std::string& path) {
    auto in = open_in(path, false);
    KeyValues out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw IoError("expected key=value at line " + std::to_string(lineno) +
                          ": " + path);
        const std::string key = trim(t.substr(0, eq));
        if (key.empty())
            throw IoError("empty key at line " + std::to_string(lineno) + ": " + path);
        out.emplace_back(key, trim(t.substr(eq + 1)));
    }
    return out;
}

void write_key_values(const std::string& path, const KeyValues& entries) {
    auto out = open_out(path, false);
    for (const auto& [key, value] : entries) out << key << '=' << value << '\n';
    check_stream(out, path);
}

}  // namespace pxe
