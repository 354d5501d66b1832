#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "xferlab/checkpoint.hpp"
#include "xferlab/optim.hpp"

using namespace xferlab;
namespace fs = std::filesystem;

namespace {

Model trained_model() {
    const InputShape in{1, 16, 16};
    Model model = build_micro_resnet(in, 5, 4, 3);
    Rng rng(4);
    Tensor x(Shape{4, 1, 16, 16});
    for (auto& v : x.data()) v = rng.uniform();
    AdamState st;
    for (int i = 0; i < 2; ++i) {
        model.zero_grad();
        softmax_cross_entropy(model.forward(x, Mode::train), std::vector<std::size_t>{0, 1, 2, 3}).backward();
        std::vector<double> lrs(5, 1e-2);
        adam_step(model.parameters(), st, lrs);
    }
    model.replace_head(3, 77);
    const std::vector<std::string> base{"stem", "stage1"};
    model.set_trainable(base, false);
    const std::vector<double> lrs{1e-5, 1e-5, 1e-4, 1e-3, 1e-2};
    model.set_learning_rates(lrs);
    return model;
}

}  // namespace

TEST(Checkpoint, RoundTripRestoresEveryArrayAndFlag) {
    Model model = trained_model();
    const std::string bytes = serialize_checkpoint(model);
    Model loaded = deserialize_checkpoint(bytes);
    EXPECT_EQ(loaded.spec(), model.spec());
    for (std::size_t g = 0; g < model.group_count(); ++g) {
        EXPECT_EQ(loaded.checksum(g), model.checksum(g));
        EXPECT_EQ(loaded.group(g).trainable, model.group(g).trainable);
        EXPECT_EQ(loaded.group(g).learning_rate, model.group(g).learning_rate);
    }
    EXPECT_FALSE(loaded.parameters().front().value.requires_grad());
    EXPECT_EQ(serialize_checkpoint(loaded), bytes);
}

TEST(Checkpoint, IdenticalStatesGiveIdenticalBytes) {
    Model a = trained_model();
    Model b = trained_model();
    EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
}

TEST(Checkpoint, FileRoundTrip) {
    const fs::path dir = fs::temp_directory_path() / "xferlab_ckpt_test";
    fs::remove_all(dir);
    Model model = trained_model();
    save_checkpoint(model, dir / "nested" / "m.ckpt");
    Model loaded = load_checkpoint(dir / "nested" / "m.ckpt");
    EXPECT_EQ(serialize_checkpoint(loaded), serialize_checkpoint(model));
    for (const auto& e : fs::directory_iterator(dir / "nested"))
        EXPECT_EQ(e.path().filename().string(), "m.ckpt");  // no temp files left behind
    fs::remove_all(dir);
}

TEST(Checkpoint, RejectsCorruptInput) {
    Model model = trained_model();
    std::string bytes = serialize_checkpoint(model);
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
    EXPECT_THROW(deserialize_checkpoint("garbage!"), DataError);
    std::string bad_version = bytes;
    bad_version[8] = 9;
    EXPECT_THROW(deserialize_checkpoint(bad_version), DataError);
    EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}
