#include <algorithm>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "phc/grad_check.hpp"
#include "phc/layers.hpp"
#include "phc/ops.hpp"
#include "test_util.hpp"

using namespace phc;
using phc::testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> grads(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

// Values bounded away from zero, for relu and abs.
Tensor away_from_kinks(Shape shape, std::mt19937_64& rng) {
    Tensor t = random_tensor(std::move(shape), rng);
    for (auto& v : t.mutable_data()) v = (v < 0 ? -0.1 : 0.1) + v;
    return t;
}

constexpr double kPrimitiveTol = 1e-6;

} // namespace

TEST(Primitives, ReluExample) {
    const Tensor y = ops::relu(Tensor::from({2}, {-1.0, 2.0}));
    EXPECT_EQ(values(y), (std::vector<double>{0.0, 2.0}));
}

TEST(Primitives, SegmentSumExample) {
    const std::vector<std::int64_t> seg{0, 0, 1};
    const Tensor y = ops::segment_sum(Tensor::from({3, 1}, {1, 2, 3}), seg, 2);
    EXPECT_EQ(values(y), (std::vector<double>{3.0, 3.0}));
}

TEST(Primitives, ReshapeRoundTrip) {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({3, 8}, rng);
    const Tensor cube = ops::reshape(x, {3, 2, 4});
    EXPECT_EQ(cube.shape(), (Shape{3, 2, 4}));
    EXPECT_EQ(values(ops::reshape(cube, {3, 8})), values(x));
    EXPECT_THROW(ops::reshape(x, {5, 5}), Error);
}

TEST(Primitives, ShapeMismatchIsReported) {
    const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 3});
    try {
        ops::matmul(a, b);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
    EXPECT_THROW(ops::add(a, Tensor::zeros({3, 2})), Error);
}

TEST(Primitives, NonFiniteOutputIsReported) {
    try {
        ops::exp(Tensor::from({1}, {1000.0}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonFinite);
    }
    EXPECT_THROW(ops::scale(Tensor::from({1}, {1.0}), std::numeric_limits<double>::infinity()), Error);
}

TEST(Primitives, GatherRejectsOutOfRangeIndex) {
    const Tensor table = Tensor::zeros({3, 2});
    const std::vector<std::int64_t> bad{0, 3};
    EXPECT_THROW(ops::gather_rows(table, bad), Error);
    const std::vector<std::int64_t> negative{-1};
    EXPECT_THROW(ops::gather_rows(table, negative), Error);
}

TEST(Primitives, KronMatchesAlgebraKronecker) {
    std::mt19937_64 rng(4);
    const Matrix x = phc::testing::random_matrix(2, 3, rng), y = phc::testing::random_matrix(3, 2, rng);
    auto vec = [](const Matrix& m) { return std::vector<double>(m.data().begin(), m.data().end()); };
    const Tensor t = ops::kron(Tensor::from({2, 3}, vec(x)), Tensor::from({3, 2}, vec(y)));
    EXPECT_EQ(values(t), vec(kronecker(x, y)));
}

TEST(Primitives, EmptySegmentsAreZeroForEveryMode) {
    const Tensor v = Tensor::from({2, 1}, {-4.0, 6.0});
    const std::vector<std::int64_t> seg{0, 0};
    for (auto mode : {ops::SegmentReduce::Sum, ops::SegmentReduce::Mean, ops::SegmentReduce::Min,
                      ops::SegmentReduce::Max}) {
        const Tensor y = ops::segment_reduce(v, seg, 3, mode);
        EXPECT_EQ(y.data()[1], 0.0);
        EXPECT_EQ(y.data()[2], 0.0);
    }
    EXPECT_EQ(ops::segment_reduce(v, seg, 1, ops::SegmentReduce::Mean).item(), 1.0);
    EXPECT_EQ(ops::segment_reduce(v, seg, 1, ops::SegmentReduce::Min).item(), -4.0);
    EXPECT_EQ(ops::segment_reduce(v, seg, 1, ops::SegmentReduce::Max).item(), 6.0);
}

TEST(Backward, SumGivesOnes) {
    Tensor x = Tensor::from({3}, {0.3, -1.0, 2.0}, true);
    ops::sum(x).backward();
    EXPECT_EQ(grads(x), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, SumOfSquares) {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    ops::sum(ops::mul(x, x)).backward();
    EXPECT_EQ(grads(x), (std::vector<double>{2, 4}));
}

TEST(Backward, NonScalarLossIsRejected) {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    EXPECT_THROW(ops::scale(x, 2.0).backward(), Error);
}

TEST(Backward, FanOutIsAdditive) {
    std::mt19937_64 rng(2);
    const Tensor w1 = random_tensor({4, 3}, rng, false), w2 = random_tensor({4, 3}, rng, false);
    const Tensor x0 = random_tensor({4, 3}, rng, false);

    auto run = [&](int which) {
        Tensor x = x0.clone();
        x.set_requires_grad(true);
        Tensor f = ops::sum(ops::mul(ops::sigmoid(x), w1));
        Tensor g = ops::sum(ops::mul(ops::mul(x, x), w2));
        Tensor loss = which == 0 ? ops::add(f, g) : which == 1 ? f : g;
        loss.backward();
        return grads(x);
    };
    const auto both = run(0), f = run(1), g = run(2);
    for (std::size_t i = 0; i < both.size(); ++i) EXPECT_EQ(both[i], f[i] + g[i]);
}

TEST(Backward, ReusedParameterAccumulates) {
    Tensor x = Tensor::from({1}, {3.0}, true);
    // x used three times: d/dx (x + 2x + x*x) = 3 + 2x
    ops::sum(ops::add_n(std::vector{x, ops::scale(x, 2.0), ops::mul(x, x)})).backward();
    EXPECT_EQ(x.grad()[0], 9.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    Tensor y;
    {
        NoGradGuard guard;
        y = ops::sum(ops::mul(x, x));
    }
    EXPECT_FALSE(y.requires_grad());
    EXPECT_EQ(y.item(), 5.0);
    EXPECT_THROW(y.backward(), Error);
    EXPECT_TRUE(ops::sum(x).requires_grad());
}

TEST(Backward, TapeIsTopological) {
    std::mt19937_64 rng(3);
    Tensor a = random_tensor({2, 2}, rng), b = random_tensor({2, 2}, rng);
    const Tensor loss = ops::sum(ops::relu(ops::add(ops::matmul(a, b), a)));
    const Tape tape = Tape::record(loss);
    const auto& nodes = tape.nodes();
    ASSERT_GE(nodes.size(), 4u);
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (const auto& in : nodes[i]->inputs) {
            if (!in->requires_grad) continue;
            const auto pos = std::find(nodes.begin(), nodes.end(), in) - nodes.begin();
            EXPECT_LT(static_cast<std::size_t>(pos), i);
        }
    EXPECT_EQ(nodes.back(), loss.node());
}

TEST(SegmentMinMax, TiesRouteToLowestIndex) {
    for (auto mode : {ops::SegmentReduce::Min, ops::SegmentReduce::Max}) {
        Tensor v = Tensor::from({5, 1}, {2.0, 7.0, 2.0, 7.0, 5.0}, true);
        const std::vector<std::int64_t> seg{0, 0, 0, 0, 1};
        Tensor y = ops::segment_reduce(v, seg, 2, mode);
        ops::sum(ops::mul(y, Tensor::from({2, 1}, {3.0, 4.0}))).backward();
        const std::vector<double> expected = mode == ops::SegmentReduce::Min
                                                 ? std::vector<double>{3, 0, 0, 0, 4}
                                                 : std::vector<double>{0, 3, 0, 0, 4};
        EXPECT_EQ(grads(v), expected);
    }
}

TEST(SegmentMinMax, ColumnsRouteIndependently) {
    Tensor v = Tensor::from({3, 2}, {1.0, 9.0, 4.0, 0.0, 4.0, 9.0}, true);
    const std::vector<std::int64_t> seg{0, 0, 0};
    ops::sum(ops::segment_reduce(v, seg, 1, ops::SegmentReduce::Max)).backward();
    EXPECT_EQ(grads(v), (std::vector<double>{0, 1, 1, 0, 0, 0}));
}

// -- per-primitive adjoint checks --------------------------------------------

class PrimitiveGrad : public ::testing::Test {
protected:
    std::mt19937_64 rng{12345};

    void check(const std::function<Tensor(std::vector<Tensor>&)>& build, std::vector<Tensor> inputs) {
        const Tensor weights = random_tensor(build(inputs).shape(), rng, false);
        auto f = [&]() { return ops::sum(ops::mul(build(inputs), weights)); };
        EXPECT_LT(grad_check(f, inputs, 1e-6), kPrimitiveTol);
    }
};

TEST_F(PrimitiveGrad, Matmul) {
    check([](auto& in) { return ops::matmul(in[0], in[1]); }, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
}

TEST_F(PrimitiveGrad, MatmulNt) {
    check([](auto& in) { return ops::matmul_nt(in[0], in[1]); },
          {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)});
}

TEST_F(PrimitiveGrad, Kron) {
    check([](auto& in) { return ops::kron(in[0], in[1]); }, {random_tensor({2, 3}, rng), random_tensor({3, 2}, rng)});
}

TEST_F(PrimitiveGrad, KronSum) {
    check([](auto& in) { return ops::kron_sum(in[0], in[1]); },
          {random_tensor({3, 3, 3}, rng), random_tensor({3, 2, 4}, rng)});
}

TEST_F(PrimitiveGrad, Elementwise) {
    check([](auto& in) { return ops::add(in[0], in[1]); }, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    check([](auto& in) { return ops::sub(in[0], in[1]); }, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    check([](auto& in) { return ops::mul(in[0], in[1]); }, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
    check([](auto& in) { return ops::add_n(std::span<const Tensor>(in)); },
          {random_tensor({4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)});
    check([](auto& in) { return ops::add_bias(in[0], in[1]); }, {random_tensor({3, 2}, rng), random_tensor({2}, rng)});
    check([](auto& in) { return ops::scale(in[0], -1.7); }, {random_tensor({5}, rng)});
    check([](auto& in) { return ops::mul_scalar(in[0], in[1]); }, {random_tensor({2, 2}, rng), random_tensor({1}, rng)});
}

TEST_F(PrimitiveGrad, Activations) {
    check([](auto& in) { return ops::relu(in[0]); }, {away_from_kinks({3, 4}, rng)});
    check([](auto& in) { return ops::abs(in[0]); }, {away_from_kinks({3, 4}, rng)});
    check([](auto& in) { return ops::sigmoid(in[0]); }, {random_tensor({3, 4}, rng)});
    check([](auto& in) { return ops::exp(in[0]); }, {random_tensor({3, 4}, rng)});
}

TEST_F(PrimitiveGrad, ReductionsAndLayout) {
    check([](auto& in) { return ops::sum(in[0]); }, {random_tensor({2, 3}, rng)});
    check([](auto& in) { return ops::mean(in[0]); }, {random_tensor({2, 3}, rng)});
    check([](auto& in) { return ops::reshape(in[0], {2, 3, 2}); }, {random_tensor({2, 6}, rng)});
    check([](auto& in) { return ops::concat(std::span<const Tensor>(in), 0); },
          {random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)});
    check([](auto& in) { return ops::concat(std::span<const Tensor>(in), 1); },
          {random_tensor({2, 3}, rng), random_tensor({2, 1}, rng)});
    check([](auto& in) { return ops::tile_cols(in[0], 3); }, {random_tensor({2, 2}, rng)});
    const std::vector<std::int64_t> idx{2, 0, 2, 1};
    check([&](auto& in) { return ops::gather_rows(in[0], idx); }, {random_tensor({3, 2}, rng)});
}

TEST_F(PrimitiveGrad, SegmentOps) {
    const std::vector<std::int64_t> seg{0, 2, 0, 2, 2, 0};
    for (auto mode : {ops::SegmentReduce::Sum, ops::SegmentReduce::Mean, ops::SegmentReduce::Min,
                      ops::SegmentReduce::Max}) {
        check([&](auto& in) { return ops::segment_reduce(in[0], seg, 4, mode); }, {random_tensor({6, 3}, rng)});
    }
    check([&](auto& in) { return ops::segment_softmax(in[0], seg, 4); }, {random_tensor({6, 3}, rng)});
}

TEST_F(PrimitiveGrad, BatchNorm) {
    check([](auto& in) { return ops::batch_norm_train(in[0], in[1], in[2], 1e-5); },
          {random_tensor({5, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)});
    const std::vector<double> mu{0.1, -0.2, 0.3}, var{1.5, 0.7, 2.0};
    check([&](auto& in) { return ops::batch_norm_eval(in[0], in[1], in[2], mu, var, 1e-5); },
          {random_tensor({4, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)});
}

TEST_F(PrimitiveGrad, LossKernels) {
    for (double p : {1.5, 2.0, 3.0}) {
        check([p](auto& in) { return ops::stack_lp_norm(in[0], p); }, {random_tensor({3, 2, 2}, rng)});
    }
    const std::vector<double> target{0.5, std::nan(""), -1.0, 2.0, 0.25, 7.0};
    check([&](auto& in) { return ops::mae_loss(in[0], target); }, {away_from_kinks({3, 2}, rng)});
    const std::vector<double> labels{1.0, 0.0, std::nan(""), 1.0};
    check([&](auto& in) { return ops::bce_with_logits(in[0], labels); }, {random_tensor({2, 2}, rng)});
    const std::vector<std::int64_t> classes{2, 0, 1};
    check([&](auto& in) { return ops::softmax_cross_entropy(in[0], classes); }, {random_tensor({3, 4}, rng)});
}

TEST(GradCheck, SumOfSquares) {
    std::mt19937_64 rng(8);
    std::vector<Tensor> x{random_tensor({10}, rng)};
    auto f = [&]() { return ops::sum(ops::mul(x[0], x[0])); };
    EXPECT_LT(grad_check(f, x, 1e-6), 1e-8);
}

TEST(GradCheck, PhmLayerWithSigmoid) {
    std::mt19937_64 rng(9);
    PhmLinear layer = init_phm(4, 8, 12, PhmInit{WeightInit::PhcNormal, ContributionScheme::Uniform, true, false}, 3);
    for (auto& v : layer.bias().mutable_data()) v = 0.1;
    const Tensor x = random_tensor({5, 12}, rng, false);
    std::vector<Tensor> params{layer.contributions(), layer.weights(), layer.bias()};
    auto f = [&]() { return ops::sum(ops::sigmoid(layer.forward(x))); };
    const auto result = grad_check(f, params, GradCheckOptions{1e-6, 0});
    EXPECT_LT(result.max_rel_error, 1e-4);
    EXPECT_EQ(result.coords_checked, 64u + 4u * 2 * 3 + 8u);
}

TEST(GradCheck, AssembledProductGradients) {
    std::mt19937_64 rng(10);
    std::vector<Tensor> params{random_tensor({3, 3, 3}, rng), random_tensor({3, 2, 2}, rng)};
    const Tensor x = random_tensor({6, 1}, rng, false);
    auto f = [&]() { return ops::sum(ops::matmul(ops::kron_sum(params[0], params[1]), x)); };
    EXPECT_LT(grad_check(f, params, 1e-6), 1e-6);
}

TEST(GradCheck, ReportsWorstCoordinate) {
    // Deliberately wrong adjoint: detach hides the dependence on x from backward.
    std::vector<Tensor> x{Tensor::from({3}, {1.0, 2.0, 3.0}, true)};
    auto f = [&]() { return ops::add(ops::sum(x[0]), ops::sum(ops::mul(x[0].detach(), x[0].detach()))); };
    const auto r = grad_check(f, x, GradCheckOptions{1e-6, 0});
    EXPECT_GT(r.max_rel_error, 0.5);
    EXPECT_EQ(r.worst_coord, 2u);
}

TEST(GradCheck, StridedProbingLimitsCoordinates) {
    std::mt19937_64 rng(11);
    std::vector<Tensor> x{random_tensor({100}, rng)};
    auto f = [&]() { return ops::sum(ops::mul(x[0], x[0])); };
    EXPECT_EQ(grad_check(f, x, GradCheckOptions{1e-6, 7}).coords_checked, 7u);
}
