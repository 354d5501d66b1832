#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "xferlab/lr_finder.hpp"
#include "xferlab/optim.hpp"

using namespace xferlab;

namespace {

/// f(x) = 0.5 * lambda * x^2 trained by SGD; unstable for lr > 2 / lambda.
struct QuadraticProbe {
    double lambda;
    Tensor x{Shape{1}, 1.0};
    double saved = 0.0;

    explicit QuadraticProbe(double l) : lambda(l) { x.set_requires_grad(true); }

    void save() { saved = x[0]; }
    void restore() { x[0] = saved; }
    double step(double lr) {
        const double loss = 0.5 * lambda * x[0] * x[0];
        x.zero_grad();
        x.grad()[0] = lambda * x[0];
        const std::vector<ParamSlot> slots{{"x", x, 0, true}};
        sgd_step(slots, std::vector<double>{lr});
        return loss;
    }
};

struct ConstantProbe {
    double value;
    void save() {}
    void restore() {}
    double step(double) { return value; }
};

}  // namespace

static_assert(LrProbe<QuadraticProbe>);

TEST(LrFinder, SweepEndpointsAndGeometricMidpoint) {
    const LrFinderConfig cfg{1e-7, 10.0, 100, 0.98, 4.0};
    EXPECT_EQ(sweep_lr(cfg, 0), 1e-7);
    EXPECT_EQ(sweep_lr(cfg, 99), 10.0);
    const LrFinderConfig odd{1e-7, 10.0, 101, 0.98, 4.0};
    EXPECT_NEAR(sweep_lr(odd, 50), 1e-3, 1e-15);
}

TEST(LrFinder, TraceIsStrictlyIncreasingGeometric) {
    ConstantProbe probe{1.0};
    const auto trace = lr_range_test(probe, {1e-7, 10.0, 100, 0.98, 4.0});
    ASSERT_EQ(trace.points.size(), 100u);
    EXPECT_FALSE(trace.divergence_index.has_value());
    const double ratio = trace.points[1].lr / trace.points[0].lr;
    for (std::size_t i = 1; i < trace.points.size(); ++i) {
        EXPECT_GT(trace.points[i].lr, trace.points[i - 1].lr);
        EXPECT_NEAR(trace.points[i].lr / trace.points[i - 1].lr, ratio, 1e-9);
    }
    // flat curve: no descent, fallback is lr at min / 10
    EXPECT_DOUBLE_EQ(trace.suggested_lr, 1e-8);
}

TEST(LrFinder, QuadraticSuggestionBelowStabilityThreshold) {
    const double lambda = 20.0;  // 2 / lambda = 0.1
    QuadraticProbe probe(lambda);
    const auto trace = lr_range_test(probe, {1e-4, 10.0, 100, 0.9, 4.0});
    EXPECT_LT(trace.suggested_lr, 2.0 / lambda);
    EXPECT_GT(trace.suggested_lr, 1e-4);
    ASSERT_TRUE(trace.divergence_index.has_value());
    EXPECT_GT(trace.points[*trace.divergence_index].lr, 2.0 / lambda);
    EXPECT_EQ(trace.points.size(), *trace.divergence_index + 1);
    EXPECT_EQ(probe.x[0], 1.0);
}

TEST(LrFinder, SmoothedLossIsBiasCorrectedEma) {
    QuadraticProbe probe(1.0);
    const double beta = 0.7;
    const auto trace = lr_range_test(probe, {1e-3, 1e-2, 5, beta, 4.0});
    double avg = 0.0;
    for (std::size_t i = 0; i < trace.points.size(); ++i) {
        avg = beta * avg + (1 - beta) * trace.points[i].raw_loss;
        EXPECT_NEAR(trace.points[i].smoothed_loss, avg / (1 - std::pow(beta, i + 1.0)), 1e-15);
    }
    EXPECT_DOUBLE_EQ(trace.points[0].smoothed_loss, trace.points[0].raw_loss);
}

TEST(LrFinder, SuggestionStrictlyInsideWithoutDivergence) {
    QuadraticProbe probe(1.0);
    const auto trace = lr_range_test(probe, {1e-4, 1e-1, 40, 0.9, 4.0});
    EXPECT_FALSE(trace.divergence_index.has_value());
    EXPECT_GT(trace.suggested_lr, 1e-4);
    EXPECT_LT(trace.suggested_lr, 1e-1);
}

TEST(LrFinder, NonFiniteFirstLossReportsLrLoTooHigh) {
    ConstantProbe probe{std::numeric_limits<double>::infinity()};
    try {
        lr_range_test(probe, {1e-3, 1.0, 10, 0.9, 4.0});
        FAIL();
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("too high"), std::string::npos);
    }
}

TEST(LrFinder, RejectsBadConfig) {
    ConstantProbe probe{1.0};
    EXPECT_THROW(lr_range_test(probe, {1e-2, 1e-3, 10, 0.9, 4.0}), ConfigError);
    EXPECT_THROW(lr_range_test(probe, {1e-3, 1e-2, 1, 0.9, 4.0}), ConfigError);
}

TEST(LrFinder, CsvHeaderAndRows) {
    ConstantProbe probe{2.0};
    const auto csv = to_csv(lr_range_test(probe, {1e-3, 1e-1, 3, 0.5, 4.0}));
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "iter,lr,raw_loss,smoothed_loss");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 3);
}
