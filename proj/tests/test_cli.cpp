#include "pxe/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "doctest.h"
#include "pxe/io.hpp"
#include "pxe/linalg.hpp"
#include "pxe/trainer.hpp"

using namespace pxe;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("pxe_cli_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(std::vector<std::string> args) { return run_command(args); }

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Tiny well-separated dataset: 6 classes x 12 samples, 8 features.
void make_data(const TempDir& dir, const std::string& name, const std::string& seed = "7") {
    REQUIRE(run({"gen", "--classes", "6", "--per-class", "12", "--dim", "8",
                 "--center-scale", "5", "--noise-sigma", "0.3", "--seed", seed, "-o",
                 dir.file(name)}) == 0);
}

std::vector<std::string> small_train(const TempDir& dir, const std::string& out,
                                     const std::string& seed = "3") {
    return {"train", "--data", dir.file("data.csv"), "-o", dir.file(out),
            "--epochs", "4", "--embed-dim", "8", "--classes-per-batch", "3",
            "--samples-per-class", "4", "--seed", seed};
}

std::string value_for(const KeyValues& kv, const std::string& key) {
    for (const auto& [k, v] : kv)
        if (k == key) return v;
    return "<missing>";
}

}  // namespace

TEST_CASE("gen writes the dataset, prints nothing false, and is reproducible") {
    TempDir dir;
    make_data(dir, "a.csv");
    const CsvDataset csv = read_dataset_csv(dir.file("a.csv"));
    CHECK(csv.dataset.size() == 72);
    CHECK(csv.dataset.feature_dim() == 8);
    CHECK(csv.dataset.class_count == 6);

    const KeyValues kv = read_key_values(dir.file("a.csv.config"));
    CHECK(value_for(kv, "classes") == "6");
    CHECK(value_for(kv, "seed") == "7");

    make_data(dir, "b.csv");
    CHECK(slurp(dir.file("a.csv")) == slurp(dir.file("b.csv")));
}

TEST_CASE("gen rejects too-small per-class counts") {
    TempDir dir;
    CHECK(run({"gen", "--classes", "4", "--per-class", "1", "--dim", "8", "-o",
               dir.file("x.csv")}) == 2);
}

TEST_CASE("usage errors exit 2, help exits 0") {
    CHECK(run({}) == 2);
    CHECK(run({"frobnicate"}) == 2);
    CHECK(run({"train", "--no-such-flag"}) == 2);
    CHECK(run({"train"}) == 2);  // --data missing
    CHECK(run({"--help"}) == 0);
    CHECK(run({"train", "--help"}) == 0);
}

TEST_CASE("train, embed, eval pipeline produces consistent artifacts") {
    TempDir dir;
    make_data(dir, "data.csv");
    REQUIRE(run(small_train(dir, "run")) == 0);

    const Checkpoint ck = load_checkpoint(dir.file("run/model.pxe"));
    CHECK(ck.model.feature_dim() == 8);
    CHECK(ck.model.embed_dim() == 8);
    CHECK(ck.proxies.class_count() == 6);

    const std::string history = slurp(dir.file("run/history.csv"));
    CHECK(history.rfind("epoch,mean_loss,lr\n", 0) == 0);
    CHECK(std::count(history.begin(), history.end(), '\n') == 5);  // header + 4 epochs

    REQUIRE(run({"embed", "--model", dir.file("run/model.pxe"), "--data",
                 dir.file("data.csv"), "-o", dir.file("emb")}) == 0);
    const Matrix emb = read_embeddings(dir.file("emb/embeddings.emb"));
    CHECK(emb.rows == 72);
    CHECK(emb.cols == 8);
    for (std::size_t i = 0; i < emb.rows; ++i)
        CHECK(std::fabs(norm2(emb.row_vector(i)) - 1.0) < 1e-6);
    CHECK(read_labels(dir.file("emb/labels.txt")).size() == 72);

    REQUIRE(run({"eval", "--embeddings", dir.file("emb/embeddings.emb"), "--labels",
                 dir.file("emb/labels.txt"), "-o", dir.file("ev"), "--binary",
                 "--seed", "5"}) == 0);
    const std::string report = slurp(dir.file("ev/report.csv"));
    CHECK(report.find("mode,metric,value\n") == 0);
    CHECK(report.find("float,recall@1,") != std::string::npos);
    CHECK(report.find("float,recall@8,") != std::string::npos);
    CHECK(report.find("float,nmi,") != std::string::npos);
    CHECK(report.find("binary,recall@1,") != std::string::npos);
    CHECK(report.find("binary,nmi,") != std::string::npos);
    CHECK(std::filesystem::exists(dir.file("ev/codes.bin")));
    const BinaryCodeMatrix codes = read_binary_codes(dir.file("ev/codes.bin"));
    CHECK(codes.n == 72);
    CHECK(codes.dim_bits == 8);
}

TEST_CASE("the full pipeline is byte-identical across reruns of one seed") {
    TempDir dir;
    make_data(dir, "data.csv");
    for (const char* tag : {"a", "b"}) {
        const std::string t(tag);
        REQUIRE(run(small_train(dir, "run_" + t)) == 0);
        REQUIRE(run({"embed", "--model", dir.file("run_" + t + "/model.pxe"), "--data",
                     dir.file("data.csv"), "-o", dir.file("emb_" + t)}) == 0);
        REQUIRE(run({"eval", "--embeddings", dir.file("emb_" + t + "/embeddings.emb"),
                     "--labels", dir.file("emb_" + t + "/labels.txt"), "-o",
                     dir.file("ev_" + t), "--binary", "--seed", "5"}) == 0);
    }
    CHECK(slurp(dir.file("run_a/model.pxe")) == slurp(dir.file("run_b/model.pxe")));
    CHECK(slurp(dir.file("run_a/history.csv")) == slurp(dir.file("run_b/history.csv")));
    CHECK(slurp(dir.file("emb_a/embeddings.emb")) == slurp(dir.file("emb_b/embeddings.emb")));
    CHECK(slurp(dir.file("emb_a/labels.txt")) == slurp(dir.file("emb_b/labels.txt")));
    CHECK(slurp(dir.file("ev_a/report.csv")) == slurp(dir.file("ev_b/report.csv")));
    CHECK(slurp(dir.file("ev_a/codes.bin")) == slurp(dir.file("ev_b/codes.bin")));
}

TEST_CASE("changing the seed changes the trained model") {
    TempDir dir;
    make_data(dir, "data.csv");
    REQUIRE(run(small_train(dir, "s1", "1")) == 0);
    REQUIRE(run(small_train(dir, "s2", "2")) == 0);
    CHECK(slurp(dir.file("s1/model.pxe")) != slurp(dir.file("s2/model.pxe")));
}

TEST_CASE("config file fills unset options and explicit flags win") {
    TempDir dir;
    make_data(dir, "data.csv");
    {
        std::ofstream cfg(dir.file("train.cfg"));
        cfg << "epochs=2\nseed=9\nembed-dim=4\n";
    }
    REQUIRE(run({"train", "--data", dir.file("data.csv"), "--config",
                 dir.file("train.cfg"), "--epochs", "1", "--classes-per-batch", "3",
                 "--samples-per-class", "4", "-o", dir.file("run")}) == 0);
    const KeyValues kv = read_key_values(dir.file("run/train_config.txt"));
    CHECK(value_for(kv, "epochs") == "1");     // flag beat the file
    CHECK(value_for(kv, "seed") == "9");       // file beat the default
    CHECK(value_for(kv, "embed-dim") == "4");  // file beat the default
    const Checkpoint ck = load_checkpoint(dir.file("run/model.pxe"));
    CHECK(ck.model.embed_dim() == 4);
}

TEST_CASE("a resolved config reproduces its run byte for byte") {
    TempDir dir;
    make_data(dir, "data.csv");
    REQUIRE(run(small_train(dir, "orig", "11")) == 0);
    REQUIRE(run({"train", "--config", dir.file("orig/train_config.txt"), "-o",
                 dir.file("replay")}) == 0);
    CHECK(slurp(dir.file("orig/model.pxe")) == slurp(dir.file("replay/model.pxe")));
    CHECK(slurp(dir.file("orig/history.csv")) == slurp(dir.file("replay/history.csv")));
}

TEST_CASE("unknown config keys exit 2") {
    TempDir dir;
    make_data(dir, "data.csv");
    {
        std::ofstream cfg(dir.file("bad.cfg"));
        cfg << "epoch=3\n";
    }
    CHECK(run({"train", "--data", dir.file("data.csv"), "--config", dir.file("bad.cfg"),
               "-o", dir.file("run")}) == 2);
}

TEST_CASE("embed rejects a dataset whose width does not match the checkpoint") {
    TempDir dir;
    make_data(dir, "data.csv");
    REQUIRE(run(small_train(dir, "run")) == 0);
    REQUIRE(run({"gen", "--classes", "4", "--per-class", "6", "--dim", "6", "-o",
                 dir.file("narrow.csv")}) == 0);
    CHECK(run({"embed", "--model", dir.file("run/model.pxe"), "--data",
               dir.file("narrow.csv"), "-o", dir.file("emb")}) == 2);
}

TEST_CASE("eval exits 2 when K exceeds the gallery") {
    TempDir dir;
    make_data(dir, "data.csv");
    REQUIRE(run(small_train(dir, "run")) == 0);
    REQUIRE(run({"embed", "--model", dir.file("run/model.pxe"), "--data",
                 dir.file("data.csv"), "-o", dir.file("emb")}) == 0);
    CHECK(run({"eval", "--embeddings", dir.file("emb/embeddings.emb"), "--labels",
               dir.file("emb/labels.txt"), "-o", dir.file("ev"), "--ks", "1000"}) == 2);
}

TEST_CASE("numerical divergence exits 3") {
    TempDir dir;
    make_data(dir, "data.csv");
    CHECK(run({"train", "--data", dir.file("data.csv"), "-o", dir.file("run"),
               "--epochs", "1", "--classes-per-batch", "3", "--samples-per-class", "4",
               "--weight-decay", "1e200"}) == 3);
}

TEST_CASE("a constant feature row breaks layer norm with exit 3") {
    TempDir dir;
    make_data(dir, "data.csv");
    REQUIRE(run(small_train(dir, "run")) == 0);
    {
        std::ofstream out(dir.file("poison.csv"));
        out << "label,f0,f1,f2,f3,f4,f5,f6,f7\n";
        out << "0,1,2,3,4,5,6,7,8\n";
        out << "1,5,5,5,5,5,5,5,5\n";
    }
    CHECK(run({"embed", "--model", dir.file("run/model.pxe"), "--data",
               dir.file("poison.csv"), "-o", dir.file("emb")}) == 3);
}

TEST_CASE("sweep emits one row per value and keeps going after a bad point") {
    TempDir dir;
    make_data(dir, "data.csv");
    REQUIRE(run({"sweep", "--data", dir.file("data.csv"), "-o", dir.file("sw"),
                 "--axis", "dim", "--values", "4,8,1", "--epochs", "2",
                 "--classes-per-batch", "3", "--samples-per-class", "4", "--seed",
                 "11"}) == 0);
    const std::string csv = slurp(dir.file("sw/sweep.csv"));
    CHECK(csv.find("value,status,r_at_1,nmi,bin_r_at_1,bin_nmi,seconds,note\n") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.find("4,ok,") != std::string::npos);
    CHECK(csv.find("8,ok,") != std::string::npos);
    CHECK(csv.find("1,error,") != std::string::npos);
    CHECK(std::filesystem::exists(dir.file("sw/sweep_config.txt")));
}

TEST_CASE("sweep covers the subsample and samples-per-class axes") {
    TempDir dir;
    make_data(dir, "data.csv");
    REQUIRE(run({"sweep", "--data", dir.file("data.csv"), "-o", dir.file("sub"),
                 "--axis", "subsample", "--values", "1.0,0.5", "--epochs", "2",
                 "--classes-per-batch", "3", "--samples-per-class", "4"}) == 0);
    const std::string sub = slurp(dir.file("sub/sweep.csv"));
    CHECK(sub.find("1,ok,") != std::string::npos);
    CHECK(sub.find("0.5,ok,") != std::string::npos);

    REQUIRE(run({"sweep", "--data", dir.file("data.csv"), "-o", dir.file("spc"),
                 "--axis", "samples-per-class", "--values", "2,4", "--epochs", "2",
                 "--batch-size", "12"}) == 0);
    const std::string spc = slurp(dir.file("spc/sweep.csv"));
    CHECK(spc.find("2,ok,") != std::string::npos);
    CHECK(spc.find("4,ok,") != std::string::npos);
}

TEST_CASE("gradcheck passes, honors the loss filter, and fails the sign-flip control") {
    TempDir dir;
    CHECK(run({"gradcheck", "--seed", "4"}) == 0);
    CHECK(run({"gradcheck", "--seed", "4", "--loss", "nca"}) == 0);
    CHECK(run({"gradcheck", "--seed", "4", "--loss", "lmcl", "--inject-sign-flip",
               "-o", dir.file("gc")}) == 1);
    const std::string report = slurp(dir.file("gc/gradcheck_report.txt"));
    CHECK(report.find("sign_flip_control") != std::string::npos);
    CHECK(report.find("GRADCHECK FAIL") != std::string::npos);
    CHECK(report.find("worst coordinate") != std::string::npos);
}

TEST_CASE("eval K set follows the --ks flag") {
    TempDir dir;
    make_data(dir, "data.csv");
    REQUIRE(run(small_train(dir, "run")) == 0);
    REQUIRE(run({"embed", "--model", dir.file("run/model.pxe"), "--data",
                 dir.file("data.csv"), "-o", dir.file("emb")}) == 0);
    REQUIRE(run({"eval", "--embeddings", dir.file("emb/embeddings.emb"), "--labels",
                 dir.file("emb/labels.txt"), "-o", dir.file("ev"), "--ks", "1,10"}) == 0);
    const std::string report = slurp(dir.file("ev/report.csv"));
    CHECK(report.find("float,recall@1,") != std::string::npos);
    CHECK(report.find("float,recall@10,") != std::string::npos);
    CHECK(report.find("recall@2,") == std::string::npos);
    CHECK(report.find("recall@8,") == std::string::npos);
}
