#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "gradcheck.hpp"
#include "xferlab/ops.hpp"
#include "xferlab/rng.hpp"

using namespace xferlab;
using xferlab::testing::check_gradients;

namespace {

constexpr int kInstances = 20;
constexpr double kTol = 1e-4;

Tensor random_tensor(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

std::vector<double> random_weights(Rng& rng, std::size_t n) {
    std::vector<double> w(n);
    for (auto& v : w) v = rng.normal();
    return w;
}

using Op = std::function<Tensor(std::vector<Tensor>&)>;

void expect_fd_agreement(const char* name, std::vector<Shape> shapes, const Op& op, std::uint64_t seed) {
    Rng rng(seed);
    for (int k = 0; k < kInstances; ++k) {
        std::vector<Tensor> inputs;
        for (const auto& s : shapes) inputs.push_back(random_tensor(rng, s));
        const double err = check_gradients(op, inputs, random_weights(rng, 64));
        EXPECT_LT(err, kTol) << name << " instance " << k;
    }
}

}  // namespace

// --- forward examples ----------------------------------------------------

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
    Tensor m(Shape{2, 2}, {1, 2, 3, 4});
    const auto out = matmul(eye, m);
    EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, ProjectorSelectsFirstRow) {
    Tensor p(Shape{2, 2}, {1, 0, 0, 0});
    Tensor m(Shape{2, 2}, {5, 6, 7, 8});
    const auto out = matmul(p, m);
    EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{5, 6, 0, 0}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3}));
        FAIL();
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos);
        EXPECT_NE(msg.find("and [2x3]"), std::string::npos);
    }
}

TEST(Conv2d, UnitKernelIsIdentity) {
    Tensor x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k(Shape{1, 1, 1, 1}, 1.0);
    const auto out = conv2d(x, k);
    ASSERT_EQ(out.shape(), x.shape());
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(out[i], x[i]);
}

TEST(Conv2d, OnesKernelSums) {
    const auto out = conv2d(Tensor(Shape{1, 1, 3, 3}, 1.0), Tensor(Shape{1, 1, 3, 3}, 1.0));
    ASSERT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(out[0], 9.0);
}

TEST(Conv2d, IsCrossCorrelation) {
    // A kernel with a single 1 at top-left picks the top-left neighbour.
    Tensor x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k(Shape{1, 1, 2, 2}, {1, 0, 0, 0});
    const auto out = conv2d(x, k);
    EXPECT_EQ(out[0], 1.0);
    EXPECT_EQ(out[3], 5.0);
}

TEST(Conv2d, OutputGeometryUsesFloorDivision) {
    const auto out = conv2d(Tensor(Shape{2, 3, 8, 7}), Tensor(Shape{4, 3, 3, 3}), {2, 1});
    EXPECT_EQ(out.shape(), (Shape{2, 4, 4, 4}));
}

TEST(Conv2d, RejectsNonPositiveOutput) {
    EXPECT_THROW(conv2d(Tensor(Shape{1, 1, 2, 2}), Tensor(Shape{1, 1, 3, 3})), ConfigError);
    EXPECT_THROW(conv2d(Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 3, 3}), {0, 0}), ConfigError);
    EXPECT_THROW(conv2d(Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 1, 3, 3})), DimensionError);
}

TEST(Relu, SplitsOnSign) {
    const auto out = relu(Tensor(Shape{3}, {-1, 0, 2}));
    EXPECT_EQ(out[0], 0.0);
    EXPECT_EQ(out[1], 0.0);
    EXPECT_EQ(out[2], 2.0);
}

TEST(MaxPool, RoutesGradientToUniqueMax) {
    Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    x.set_requires_grad(true);
    Tensor out = maxpool2d(x, 2, 2);
    ASSERT_EQ(out.numel(), 1u);
    EXPECT_EQ(out[0], 4.0);
    sum(out).backward();
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_EQ(x.grad()[1], 0.0);
    EXPECT_EQ(x.grad()[2], 0.0);
    EXPECT_EQ(x.grad()[3], 1.0);
}

TEST(MaxPool, TiesGoToFirstRowMajorIndex) {
    Tensor x(Shape{1, 1, 2, 2}, {3, 5, 5, 5});
    x.set_requires_grad(true);
    sum(maxpool2d(x, 2, 2)).backward();
    EXPECT_EQ(x.grad()[1], 1.0);
    EXPECT_EQ(x.grad()[2], 0.0);
    EXPECT_EQ(x.grad()[3], 0.0);
}

TEST(AvgPool, GradientIsUniformOverWindow) {
    Tensor x(Shape{1, 1, 4, 4}, 0.5);
    x.set_requires_grad(true);
    sum(avgpool2d(x, 2, 2)).backward();
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Structural, AddAndFlattenCheckShapes) {
    EXPECT_THROW(add(Tensor(Shape{2, 2}), Tensor(Shape{4})), DimensionError);
    EXPECT_EQ(flatten(Tensor(Shape{3, 2, 2, 2})).shape(), (Shape{3, 8}));
    EXPECT_THROW(reshape(Tensor(Shape{3, 2}), Shape{5}), DimensionError);
}

// --- loss examples -------------------------------------------------------

TEST(SoftmaxCrossEntropy, UniformScoresGiveLogK) {
    for (std::size_t k : {2u, 3u, 10u, 37u}) {
        Tensor s(Shape{4, k}, 0.7);
        const std::vector<std::size_t> y{0, 1, 0, 1};
        EXPECT_NEAR(softmax_cross_entropy(s, y).item(), std::log(static_cast<double>(k)), 1e-9);
    }
    EXPECT_NEAR(softmax_cross_entropy(Tensor(Shape{1, 3}), std::vector<std::size_t>{2}).item(), 1.098612, 1e-6);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectIsNearZero) {
    Tensor s(Shape{1, 3}, {30, 0, 0});
    const double loss = softmax_cross_entropy(s, std::vector<std::size_t>{0}).item();
    EXPECT_GE(loss, 0.0);
    EXPECT_LT(loss, 1e-12);
}

TEST(SoftmaxCrossEntropy, StableForHugeScores) {
    Tensor s(Shape{1, 2}, {1000, -1000});
    EXPECT_NEAR(softmax_cross_entropy(s, std::vector<std::size_t>{1}).item(), 2000.0, 1e-9);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRangeNamesSample) {
    try {
        softmax_cross_entropy(Tensor(Shape{3, 2}), std::vector<std::size_t>{0, 1, 2});
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("sample 2"), std::string::npos);
    }
}

TEST(SoftmaxCrossEntropy, RowsSumToOne) {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor s(Shape{5, 7});
        for (auto& v : s.data()) v = rng.normal(0.0, 5.0);
        const auto p = softmax_rows(s);
        for (std::size_t i = 0; i < 5; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < 7; ++j) total += p[i * 7 + j];
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
    }
}

TEST(SoftmaxCrossEntropy, NonNegative) {
    Rng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor s(Shape{3, 4});
        for (auto& v : s.data()) v = rng.normal(0.0, 3.0);
        EXPECT_GE(softmax_cross_entropy(s, std::vector<std::size_t>{0, 3, 1}).item(), 0.0);
    }
}

// --- finite-difference agreement, 20 random instances per op ------------

TEST(GradCheck, Matmul) {
    expect_fd_agreement("matmul", {{3, 3}, {3, 3}},
                        [](std::vector<Tensor>& in) { return matmul(in[0], in[1]); }, 101);
    expect_fd_agreement("matmul rect", {{2, 5}, {5, 3}},
                        [](std::vector<Tensor>& in) { return matmul(in[0], in[1]); }, 102);
}

TEST(GradCheck, SumOfMatmulWrtA) {
    Rng rng(103);
    for (int k = 0; k < kInstances; ++k) {
        Tensor a = random_tensor(rng, {3, 3});
        Tensor b = random_tensor(rng, {3, 3});
        a.set_requires_grad(true);
        sum(matmul(a, b)).backward();
        auto f = [&] {
            NoGradGuard g;
            return sum(matmul(a, b)).item();
        };
        const auto numeric = xferlab::testing::numeric_gradient(f, a);
        EXPECT_LT(xferlab::testing::relative_error(a.grad(), numeric), kTol);
    }
}

TEST(GradCheck, Conv2d) {
    expect_fd_agreement("conv2d", {{2, 3, 8, 8}, {4, 3, 3, 3}},
                        [](std::vector<Tensor>& in) { return conv2d(in[0], in[1], {1, 0}); }, 201);
}

TEST(GradCheck, Conv2dStridedPadded) {
    expect_fd_agreement("conv2d s2 p1", {{2, 2, 7, 6}, {3, 2, 3, 3}},
                        [](std::vector<Tensor>& in) { return conv2d(in[0], in[1], {2, 1}); }, 202);
}

TEST(GradCheck, Relu) {
    expect_fd_agreement("relu", {{4, 6}}, [](std::vector<Tensor>& in) { return relu(in[0]); }, 301);
}

TEST(GradCheck, MaxPool) {
    expect_fd_agreement("maxpool", {{2, 2, 6, 6}},
                        [](std::vector<Tensor>& in) { return maxpool2d(in[0], 2, 2); }, 302);
}

TEST(GradCheck, AvgPool) {
    expect_fd_agreement("avgpool", {{2, 2, 6, 6}},
                        [](std::vector<Tensor>& in) { return avgpool2d(in[0], 3, 1); }, 303);
}

TEST(GradCheck, GlobalAvgPool) {
    expect_fd_agreement("gap", {{2, 3, 4, 5}}, [](std::vector<Tensor>& in) { return global_avgpool(in[0]); }, 304);
}

TEST(GradCheck, AddScaleMulFlatten) {
    expect_fd_agreement("add", {{3, 4}, {3, 4}}, [](std::vector<Tensor>& in) { return add(in[0], in[1]); }, 401);
    expect_fd_agreement("scale", {{3, 4}}, [](std::vector<Tensor>& in) { return scale(in[0], -2.5); }, 402);
    expect_fd_agreement("mul", {{3, 4}, {3, 4}}, [](std::vector<Tensor>& in) { return mul(in[0], in[1]); }, 403);
    expect_fd_agreement("flatten", {{2, 3, 2, 2}}, [](std::vector<Tensor>& in) { return flatten(in[0]); }, 404);
    expect_fd_agreement("add_bias", {{3, 4}, {4}},
                        [](std::vector<Tensor>& in) { return add_bias(in[0], in[1]); }, 405);
}

TEST(GradCheck, BatchNormBatchStatistics) {
    expect_fd_agreement("batchnorm", {{4, 3, 3, 3}, {3}, {3}},
                        [](std::vector<Tensor>& in) {
                            RunningStats stats{std::vector<double>(3, 0.0), std::vector<double>(3, 1.0)};
                            return batchnorm2d(in[0], in[1], in[2], stats, {true, false, 0.1, 1e-5});
                        },
                        501);
}

TEST(GradCheck, BatchNormRunningStatistics) {
    expect_fd_agreement("batchnorm eval", {{3, 2, 3, 3}, {2}, {2}},
                        [](std::vector<Tensor>& in) {
                            RunningStats stats{{0.3, -0.2}, {1.5, 0.7}};
                            return batchnorm2d(in[0], in[1], in[2], stats, {false, false, 0.1, 1e-5});
                        },
                        502);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
    Rng rng(601);
    for (int k = 0; k < kInstances; ++k) {
        std::vector<std::size_t> labels(4);
        for (auto& l : labels) l = rng.below(5);
        std::vector<Tensor> in{random_tensor(rng, {4, 5})};
        const double err = check_gradients(
            [&labels](std::vector<Tensor>& t) { return softmax_cross_entropy(t[0], labels); }, in, {1.0});
        EXPECT_LT(err, kTol);
    }
}

TEST(BatchNorm, RunningVarianceStaysNonNegative) {
    Rng rng(700);
    RunningStats stats{std::vector<double>(2, 0.0), std::vector<double>(2, 1.0)};
    Tensor gamma(Shape{2}, 1.0), beta(Shape{2}, 0.0);
    for (int i = 0; i < 30; ++i) {
        Tensor x = random_tensor(rng, {3, 2, 2, 2});
        batchnorm2d(x, gamma, beta, stats, {});
        for (double v : stats.var) EXPECT_GE(v, 0.0);
    }
    // single-sample batch of a constant plane: zero variance
    batchnorm2d(Tensor(Shape{1, 2, 1, 1}, 3.0), gamma, beta, stats, {});
    for (double v : stats.var) EXPECT_GE(v, 0.0);
}
