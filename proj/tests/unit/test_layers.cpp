#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "xferlab/model.hpp"
#include "xferlab/optim.hpp"

using namespace xferlab;

namespace {

Tensor random_batch(std::uint64_t seed, std::size_t n, const InputShape& in) {
    Rng rng(seed);
    Tensor x(Shape{n, in.channels, in.height, in.width});
    for (auto& v : x.data()) v = rng.uniform();
    return x;
}

// Independent parameter count: walk the layers by hand.
std::size_t hand_parameter_count(std::size_t channels, std::size_t w, std::size_t k) {
    auto conv = [](std::size_t cin, std::size_t cout, std::size_t ks) { return cin * cout * ks * ks; };
    auto bn = [](std::size_t c) { return 2 * c; };
    auto block = [&](std::size_t c) { return 2 * (conv(c, c, 3) + bn(c)); };
    std::size_t total = conv(channels, w, 3) + bn(w);                // stem
    total += 2 * block(w);                                            // stage1
    total += conv(w, 2 * w, 1) + bn(2 * w) + 2 * block(2 * w);        // stage2
    total += conv(2 * w, 4 * w, 1) + bn(4 * w) + 2 * block(4 * w);    // stage3
    total += 4 * w * k + k;                                           // head
    return total;
}

void train_steps(Model& model, const Tensor& x, const std::vector<std::size_t>& y, int steps, double lr) {
    AdamState state;
    for (int s = 0; s < steps; ++s) {
        model.zero_grad();
        softmax_cross_entropy(model.forward(x, Mode::train), y).backward();
        const auto params = model.parameters();
        std::vector<double> lrs(model.group_count(), lr);
        adam_step(params, state, lrs);
    }
}

std::vector<std::uint64_t> group_checksums(Model& m) {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < m.group_count(); ++i) out.push_back(m.checksum(i));
    return out;
}

}  // namespace

TEST(ResidualBlock, ZeroBranchIsIdentity) {
    ResidualBlock block("b", 3);
    for (auto& v : block.conv1().weight().data()) v = 0.0;
    for (auto& v : block.conv2().weight().data()) v = 0.0;
    Rng rng(1);
    Tensor x(Shape{2, 3, 5, 5});
    for (auto& v : x.data()) v = rng.normal();  // negative values too
    for (Mode mode : {Mode::train, Mode::eval}) {
        const Tensor out = block.forward(x, {mode, false});
        for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(out[i], x[i]);
    }
}

TEST(ResidualBlock, GradientsMatchFiniteDifferences) {
    Rng rng(2);
    ResidualBlock block("b", 2);
    block.init_he(rng);
    std::vector<NamedTensor> params;
    std::vector<NamedBuffer> buffers;
    block.collect("", params, buffers);
    std::vector<Tensor> inputs;
    Tensor x(Shape{3, 2, 4, 4});
    for (auto& v : x.data()) v = rng.normal();
    inputs.push_back(x);
    for (auto& p : params) inputs.push_back(p.value);
    const double err = xferlab::testing::check_gradients(
        [&block](std::vector<Tensor>& in) {
            // Batch statistics without touching running stats keeps the
            // objective a pure function of the inputs.
            return block.forward(in[0], {Mode::train, false});
        },
        inputs, {0.3, -1.2, 0.8, 2.0, -0.4});
    EXPECT_LT(err, 1e-4);
}

TEST(MicroResNet, OutputShapeIsBatchByClasses) {
    const InputShape in{1, 16, 16};
    Model model = build_micro_resnet(in, 3, 4, 7);
    EXPECT_EQ(model.forward(random_batch(1, 4, in), Mode::train).shape(), (Shape{4, 3}));
    EXPECT_EQ(model.predict(random_batch(2, 2, in)).shape(), (Shape{2, 3}));
}

TEST(MicroResNet, GroupsEndWithHead) {
    Model model = build_micro_resnet({1, 16, 16}, 3, 4, 7);
    EXPECT_EQ(model.group_names(), (std::vector<std::string>{"stem", "stage1", "stage2", "stage3", "head"}));
}

TEST(MicroResNet, ParameterCountMatchesHandWalkthrough) {
    struct Case {
        std::size_t channels, width, k, hw;
    };
    for (const auto& c : {Case{1, 8, 4, 32}, Case{1, 4, 2, 16}, Case{3, 6, 37, 24}, Case{1, 16, 10, 16}}) {
        Model model = build_micro_resnet({c.channels, c.hw, c.hw}, c.k, c.width, 1);
        EXPECT_EQ(model.parameter_count(), hand_parameter_count(c.channels, c.width, c.k))
            << "width=" << c.width << " K=" << c.k;
    }
    // width 8, K 4, 32x32 walkthrough written out:
    //   stem 72+16, stage1 2*2*(576+16), stage2 128+32 + 4*(2304+32),
    //   stage3 512+64 + 4*(9216+64), head 128+4
    EXPECT_EQ(hand_parameter_count(1, 8, 4), 88u + 2368u + 9504u + 37696u + 132u);
    Model small = build_micro_resnet({1, 32, 32}, 4, 8, 1);
    EXPECT_LE(small.parameter_count(), 200000u);
}

TEST(MicroResNet, RejectsTinyInputsAndBadClassCounts) {
    EXPECT_THROW(build_micro_resnet({1, 8, 8}, 3, 4, 0), ConfigError);
    EXPECT_THROW(build_micro_resnet({1, 16, 15}, 3, 4, 0), ConfigError);
    EXPECT_THROW(build_micro_resnet({1, 16, 16}, 1, 4, 0), ConfigError);
}

TEST(MicroResNet, EvalModeIsDeterministic) {
    const InputShape in{1, 16, 16};
    Model model = build_micro_resnet(in, 3, 4, 7);
    const Tensor x = random_batch(3, 5, in);
    train_steps(model, x, {0, 1, 2, 0, 1}, 2, 1e-2);
    const Tensor a = model.predict(x);
    const Tensor b = model.predict(x);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(MicroResNet, EvalModeUsesRunningStatsOnly) {
    const InputShape in{1, 16, 16};
    Model model = build_micro_resnet(in, 3, 4, 7);
    const Tensor x = random_batch(4, 6, in);
    const Tensor full = model.predict(x);
    // The first row scored alone must equal its row in the full batch.
    Tensor first(Shape{1, 1, 16, 16});
    std::copy(x.data().begin(), x.data().begin() + 256, first.data().begin());
    const Tensor single = model.predict(first);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(single[j], full[j]);
}

TEST(ReplaceHead, PreservesBaseFeatures) {
    const InputShape in{1, 16, 16};
    Model model = build_micro_resnet(in, 6, 4, 11);
    const Tensor x = random_batch(5, 3, in);
    train_steps(model, x, {0, 1, 2}, 2, 1e-2);
    const Tensor before = model.predict_features(x);
    const std::uint64_t base_before = model.base_checksum();
    Model swapped = replace_head(model, 4, 99);
    EXPECT_EQ(swapped.num_classes(), 4u);
    EXPECT_EQ(swapped.predict(x).shape(), (Shape{3, 4}));
    EXPECT_EQ(swapped.base_checksum(), base_before);
    const Tensor after = swapped.predict_features(x);
    for (std::size_t i = 0; i < before.numel(); ++i) ASSERT_EQ(before[i], after[i]);
}

TEST(ReplaceHead, SameKFreshInitChangesOnlyOutputs) {
    const InputShape in{1, 16, 16};
    Model model = build_micro_resnet(in, 3, 4, 11);
    const Tensor x = random_batch(6, 2, in);
    Model swapped = replace_head(model, 3, 12345);
    const Tensor f0 = model.predict_features(x), f1 = swapped.predict_features(x);
    for (std::size_t i = 0; i < f0.numel(); ++i) ASSERT_EQ(f0[i], f1[i]);
    const Tensor o0 = model.predict(x), o1 = swapped.predict(x);
    bool differs = false;
    for (std::size_t i = 0; i < o0.numel(); ++i) differs |= o0[i] != o1[i];
    EXPECT_TRUE(differs);
}

TEST(ReplaceHead, SameSeedGivesIdenticalHead) {
    Model model = build_micro_resnet({1, 16, 16}, 3, 4, 11);
    Model a = replace_head(model, 5, 42);
    Model b = replace_head(model, 5, 42);
    EXPECT_EQ(a.checksum(4), b.checksum(4));
    Model c = replace_head(model, 5, 43);
    EXPECT_NE(a.checksum(4), c.checksum(4));
    EXPECT_THROW(replace_head(model, 1, 0), ConfigError);
}

TEST(SetTrainable, FrozenBaseKeepsParametersAndRunningStats) {
    const InputShape in{1, 16, 16};
    Model model = build_micro_resnet(in, 3, 4, 21);
    const std::vector<std::string> base{"stem", "stage1", "stage2", "stage3"};
    set_trainable(model, base, false);
    const auto before = group_checksums(model);
    train_steps(model, random_batch(7, 6, in), {0, 1, 2, 0, 1, 2}, 3, 1e-2);
    const auto after = group_checksums(model);
    for (std::size_t g = 0; g < 4; ++g) EXPECT_EQ(before[g], after[g]) << "group " << g;
    EXPECT_NE(before[4], after[4]);
}

TEST(SetTrainable, ZeroLearningRateLeavesEverythingButStats) {
    const InputShape in{1, 16, 16};
    Model model = build_micro_resnet(in, 3, 4, 22);
    std::vector<std::vector<double>> before;
    for (auto& p : model.parameters()) before.emplace_back(p.value.data().begin(), p.value.data().end());
    train_steps(model, random_batch(8, 4, in), {0, 1, 2, 0}, 2, 0.0);
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < before[i].size(); ++j) ASSERT_EQ(params[i].value[j], before[i][j]);
}

TEST(SetTrainable, FrozenHeadOnlyBaseChanges) {
    const InputShape in{1, 16, 16};
    Model model = build_micro_resnet(in, 3, 4, 23);
    const std::vector<std::string> head{"head"};
    set_trainable(model, head, false);
    const auto before = group_checksums(model);
    train_steps(model, random_batch(9, 4, in), {0, 1, 2, 0}, 2, 1e-2);
    const auto after = group_checksums(model);
    EXPECT_EQ(before[4], after[4]);
    for (std::size_t g = 0; g < 4; ++g) EXPECT_NE(before[g], after[g]);
}

TEST(SetTrainable, UnknownGroupIsConfigError) {
    Model model = build_micro_resnet({1, 16, 16}, 3, 4, 0);
    const std::vector<std::string> names{"stage9"};
    EXPECT_THROW(set_trainable(model, names, false), ConfigError);
}

TEST(Model, LearningRatesMustBeNonDecreasing) {
    Model model = build_micro_resnet({1, 16, 16}, 3, 4, 0);
    const std::vector<double> ok{1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
    model.set_learning_rates(ok);
    EXPECT_EQ(model.learning_rates(), ok);
    const std::vector<double> bad{1e-3, 1e-5, 1e-4, 1e-3, 1e-2};
    EXPECT_THROW(model.set_learning_rates(bad), ConfigError);
}

TEST(Model, CopiesAreDeep) {
    Model a = build_micro_resnet({1, 16, 16}, 3, 4, 0);
    Model b = a;
    b.parameters().front().value[0] += 1.0;
    EXPECT_NE(a.checksum(0), b.checksum(0));
}
