#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bicd/numerics.hpp"
#include "test_util.hpp"

using namespace bicd;
using bicd::testing::finite_difference;
using bicd::testing::max_rel_error;
using bicd::testing::random_tensor;
using bicd::testing::random_unit_lt;

namespace {

// Checks d(build(inputs))/d(inputs[k]) against central differences for all k.
double gradient_check(const std::vector<Tensor>& inputs,
                      const std::function<Var(Tape&, const std::vector<Var>&)>& build) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.param(t));
    Var loss = build(tape, vars);
    tape.backward(loss);
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto f = [&](const Tensor& x) {
            Tape t2;
            std::vector<Var> vs;
            for (std::size_t q = 0; q < inputs.size(); ++q) vs.push_back(t2.param(q == k ? x : inputs[q]));
            return build(t2, vs).value()[0];
        };
        worst = std::max(worst, max_rel_error(tape.grad(vars[k]), finite_difference(f, inputs[k])));
    }
    return worst;
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::matrix(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j)
            for (std::size_t k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
    return out;
}

}  // namespace

TEST(Tensor, RejectsBadShapes) {
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    EXPECT_THROW(Tensor(Shape{}), DimensionError);
    EXPECT_THROW(Tensor(Shape{1, 1, 1, 1}), DimensionError);
    Tensor t({2}, std::vector<double>{1.0, NAN});
    EXPECT_FALSE(t.all_finite());
    EXPECT_THROW(t.assert_finite(), NumericError);
}

TEST(Matmul, IdentityAndScalar) {
    Tape tape;
    auto c = matmul(tape.constant(Tensor::from_rows({{1, 0}, {0, 1}})), tape.constant(Tensor::from_rows({{3, 4}, {5, 6}})));
    EXPECT_EQ(c.value(), Tensor::from_rows({{3, 4}, {5, 6}}));
    auto s = matmul(tape.constant(Tensor::from_rows({{2}})), tape.constant(Tensor::from_rows({{3}})));
    EXPECT_DOUBLE_EQ(s.value()[0], 6.0);
}

TEST(Matmul, MatchesTripleLoop) {
    RngStream rng(1, 0);
    Tape tape;
    Tensor a = random_tensor(rng, {5, 4}), b = random_tensor(rng, {4, 3});
    auto c = matmul(tape.constant(a), tape.constant(b));
    EXPECT_LT(max_abs_diff(c.value(), naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tape tape;
    try {
        matmul(tape.constant(Tensor::matrix(2, 3)), tape.constant(Tensor::matrix(2, 3)));
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos);
    }
}

TEST(Elementwise, KnownValues) {
    Tape tape;
    EXPECT_DOUBLE_EQ(sigmoid(tape.constant(Tensor({1}, 0.0))).value()[0], 0.5);
    EXPECT_NEAR(elu(tape.constant(Tensor({1}, -1.0))).value()[0], std::exp(-1.0) - 1.0, 1e-15);
    EXPECT_NEAR(elu(tape.constant(Tensor({1}, -1.0))).value()[0], -0.6321, 1e-4);
    EXPECT_DOUBLE_EQ(elementwise(Unary::relu, tape.constant(Tensor({1}, -2.0))).value()[0], 0.0);
}

TEST(Elementwise, SigmoidGradientAtZero) {
    Tape tape;
    auto x = tape.param(Tensor({1}, 0.0));
    tape.backward(sum(sigmoid(x)));
    EXPECT_DOUBLE_EQ(tape.grad(x)[0], 0.25);
    auto fd = finite_difference([](const Tensor& t) { return bicd::sigmoid(t[0]); }, Tensor({1}, 0.0));
    EXPECT_NEAR(fd[0], 0.25, 1e-8);
}

TEST(Elementwise, LogDomainErrorNamesIndex) {
    Tape tape;
    try {
        elementwise(Unary::log, tape.constant(Tensor({3}, std::vector<double>{1.0, 2.0, 0.0})));
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("index 2"), std::string::npos);
    }
}

TEST(MaskedRowSoftmax, Cases) {
    Tape tape;
    Tensor mask = Tensor::from_rows({{0, 0}, {1, 0}});
    auto y = masked_row_softmax(tape.constant(Tensor::from_rows({{5, 7}, {0, 3}})), mask);
    EXPECT_EQ(y.value(), Tensor::from_rows({{0, 0}, {1, 0}}));

    auto y2 = masked_row_softmax(tape.constant(Tensor::from_rows({{0, 0}})), Tensor::from_rows({{1, 1}}));
    EXPECT_DOUBLE_EQ(y2.value()(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(y2.value()(0, 1), 0.5);

    auto y3 = masked_row_softmax(tape.constant(Tensor::from_rows({{1, 2, 3}})), Tensor::from_rows({{1, 1, 1}}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(y3.value()(0, j), std::exp(j + 1.0) / z, 1e-12);
}

TEST(MaskedRowSoftmax, RowsSumToOne) {
    RngStream rng(3, 0);
    for (int trial = 0; trial < 20; ++trial) {
        Tape tape;
        const std::size_t n = 2 + trial % 7;
        Tensor mask = Tensor::matrix(n, n);
        for (auto& v : mask.storage()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        auto y = masked_row_softmax(tape.constant(random_tensor(rng, {n, n}, -5, 5)), mask);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0, m = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                s += y.value()(i, j);
                m += mask(i, j);
                if (mask(i, j) == 0.0) EXPECT_EQ(y.value()(i, j), 0.0);
            }
            EXPECT_NEAR(s, m > 0 ? 1.0 : 0.0, 1e-12);
        }
    }
}

TEST(UnitLtSolve, IdentityAndTwoByTwo) {
    Tape tape;
    RngStream rng(4, 0);
    Tensor rhs = random_tensor(rng, {3, 2});
    EXPECT_EQ(unit_lt_solve(tape.constant(Tensor::identity(3)), tape.constant(rhs)).value(), rhs);

    const double a = 0.7, e1 = 1.3, e2 = -0.4;
    auto y = unit_lt_solve(tape.constant(Tensor::from_rows({{1, 0}, {-a, 1}})), tape.constant(Tensor::from_rows({{e1}, {e2}})));
    EXPECT_DOUBLE_EQ(y.value()(0, 0), e1);
    EXPECT_DOUBLE_EQ(y.value()(1, 0), a * e1 + e2);
}

TEST(UnitLtSolve, MatchesDenseInverse) {
    RngStream rng(5, 0);
    Tensor w = random_unit_lt(rng, 8);
    Tensor rhs = random_tensor(rng, {8, 3});
    Tape tape;
    auto y = unit_lt_solve(tape.constant(w), tape.constant(rhs));
    EXPECT_LT(max_abs_diff(y.value(), matmul_plain(bicd::testing::dense_inverse(w), rhs)), 1e-10);
}

TEST(UnitLtSolve, RoundTrip) {
    RngStream rng(6, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + trial % 12;
        Tensor w = random_unit_lt(rng, n);
        Tensor y = random_tensor(rng, {n, 2});
        EXPECT_LT(max_abs_diff(forward_substitute(w, matmul_plain(w, y)), y), 1e-10);
    }
}

TEST(UnitLtSolve, StructureErrors) {
    Tensor bad_diag = Tensor::identity(3);
    bad_diag(1, 1) = 2.0;
    EXPECT_THROW(forward_substitute(bad_diag, Tensor::matrix(3, 1)), StructureError);
    Tensor upper = Tensor::identity(3);
    upper(0, 2) = 1e-6;
    EXPECT_THROW(forward_substitute(upper, Tensor::matrix(3, 1)), StructureError);
    Tensor tiny = Tensor::identity(3);
    tiny(0, 2) = 1e-13;
    EXPECT_NO_THROW(forward_substitute(tiny, Tensor::matrix(3, 1)));
}

TEST(NumericalRank, Cases) {
    EXPECT_EQ(numerical_rank(Tensor::matrix(4, 3)), 0u);
    Tensor outer = Tensor::matrix(4, 3);
    const double u[4] = {1, -2, 0.5, 3}, v[3] = {0.3, 1, -2};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) outer(i, j) = u[i] * v[j];
    EXPECT_EQ(numerical_rank(outer), 1u);

    RngStream rng(7, 0);
    Tensor full = random_tensor(rng, {6, 4});
    EXPECT_EQ(numerical_rank(full), bicd::testing::elimination_rank(full));
    EXPECT_EQ(numerical_rank(full), 4u);
}

TEST(NumericalRank, PermutationInvariant) {
    RngStream rng(8, 0);
    for (int trial = 0; trial < 20; ++trial) {
        // Rank-deficient by construction: product of 6x2 and 2x5 plus a tiny term.
        Tensor m = matmul_plain(random_tensor(rng, {6, 2}), random_tensor(rng, {2, 5}));
        if (trial % 2) m(0, 0) += 1.0;
        Tensor p = m;
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 5; ++j) p(i, j) = m(5 - i, (j + 2) % 5);
        EXPECT_EQ(numerical_rank(m), numerical_rank(p));
    }
}

TEST(NumericalRank, SingularValuesOfDiagonal) {
    Tensor d = Tensor::from_rows({{3, 0}, {0, -1}, {0, 0}});
    auto sv = singular_values(d);
    ASSERT_EQ(sv.size(), 2u);
    EXPECT_NEAR(sv[0], 3.0, 1e-14);
    EXPECT_NEAR(sv[1], 1.0, 1e-14);
    // Wide input uses the transposed orientation.
    Tensor wide = Tensor::from_rows({{0, 2, 0, 0}, {1, 0, 0, 0}});
    EXPECT_EQ(numerical_rank(wide), 2u);
    // Tolerance is relative to the largest singular value.
    Tensor graded = Tensor::from_rows({{1, 0}, {0, 0.005}});
    EXPECT_EQ(numerical_rank(graded, 1e-2), 1u);
    EXPECT_EQ(numerical_rank(graded, 1e-3), 2u);
}

TEST(GumbelLogistic, Moments) {
    RngStream rng(9, 0);
    Tensor t = sample_gumbel_logistic(rng, {1000000});
    const double n = static_cast<double>(t.size());
    const double m = t.sum() / n;
    double v = 0.0;
    for (double x : t.storage()) v += (x - m) * (x - m);
    v /= n - 1.0;
    EXPECT_NEAR(m, 0.0, 0.01);
    EXPECT_NEAR(v, std::numbers::pi * std::numbers::pi / 3.0, 0.05);
}

TEST(GumbelLogistic, Deterministic) {
    RngStream a(42, 3), b(42, 3), c(42, 4);
    Tensor ta = sample_gumbel_logistic(a, {64}), tb = sample_gumbel_logistic(b, {64}), tc = sample_gumbel_logistic(c, {64});
    EXPECT_EQ(ta, tb);
    EXPECT_NE(ta, tc);
}

TEST(Backward, Square) {
    Tape tape;
    auto x = tape.param(Tensor({1}, 3.0));
    tape.backward(sum(mul(x, x)));
    EXPECT_DOUBLE_EQ(tape.grad(x)[0], 6.0);
}

TEST(Backward, UnusedParameterAndConstantGetZero) {
    Tape tape;
    auto x = tape.param(Tensor({2}, 1.0));
    auto unused = tape.param(Tensor({3}, 1.0));
    auto c = tape.constant(Tensor({2}, 2.0));
    tape.backward(sum(mul(x, c)));
    EXPECT_EQ(tape.grad(unused), Tensor({3}, 0.0));
    EXPECT_EQ(tape.grad(c), Tensor({2}, 0.0));
    EXPECT_EQ(tape.grad(x), Tensor({2}, 2.0));
}

TEST(Backward, NonScalarLossIsContractError) {
    Tape tape;
    auto x = tape.param(Tensor({2}, 1.0));
    EXPECT_THROW(tape.backward(x), ContractError);
    Tape other;
    auto y = other.param(Tensor({1}, 1.0));
    EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, SigmoidOfProductMatchesFiniteDifferences) {
    RngStream rng(10, 0);
    double worst = gradient_check({random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})},
                                  [](Tape&, const std::vector<Var>& v) { return sum(sigmoid(matmul(v[0], v[1]))); });
    EXPECT_LT(worst, 1e-4);
}

// One gradient check per differentiable op over 20 random small instances.
TEST(Backward, EveryOpMatchesFiniteDifferences) {
    RngStream rng(11, 0);
    Tensor mask = Tensor::from_rows({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}});
    std::vector<std::pair<const char*, std::function<double()>>> checks = {
        {"matmul", [&] {
             return gradient_check({random_tensor(rng, {3, 2}), random_tensor(rng, {2, 4})},
                                   [](Tape&, auto& v) { return sum(elu(matmul(v[0], v[1]))); });
         }},
        {"unary", [&] {
             return gradient_check({random_tensor(rng, {2, 3}, 0.2, 2.0)}, [](Tape&, auto& v) {
                 Var a = elementwise(Unary::tanh, v[0]);
                 Var b = elementwise(Unary::log, v[0]);
                 Var c = elementwise(Unary::exp, scale(v[0], 0.5));
                 Var d = elementwise(Unary::relu, add_scalar(v[0], -1.0));
                 return sum(add(add(mul(a, b), c), mul(d, elu(add_scalar(v[0], -1.0)))));
             });
         }},
        {"softmax", [&] {
             return gradient_check({random_tensor(rng, {3, 3}), random_tensor(rng, {3, 3})}, [&](Tape&, auto& v) {
                 return sum(mul(masked_row_softmax(v[0], mask), v[1]));
             });
         }},
        {"unit_lt_solve", [&] {
             Tensor w = random_unit_lt(rng, 4);
             return gradient_check({w, random_tensor(rng, {4, 2}), random_tensor(rng, {4, 2})}, [](Tape& t, auto& v) {
                 // Re-impose unit-LT structure on the perturbed w.
                 Tensor lower_mask = Tensor::matrix(4, 4);
                 for (std::size_t i = 0; i < 4; ++i)
                     for (std::size_t j = 0; j < i; ++j) lower_mask(i, j) = 1.0;
                 Var w = add(t.constant(Tensor::identity(4)), mul(v[0], t.constant(lower_mask)));
                 return sum(mul(unit_lt_solve(w, v[1]), v[2]));
             });
         }},
        {"pooled_gram", [&] {
             return gradient_check({random_tensor(rng, {6, 2}), random_tensor(rng, {6, 2}), random_tensor(rng, {3, 3})},
                                   [](Tape&, auto& v) { return sum(mul(pooled_gram(v[0], v[1], 2, 0.7), v[2])); });
         }},
        {"broadcast", [&] {
             return gradient_check({random_tensor(rng, {3, 2}), random_tensor(rng, {1, 2}), random_tensor(rng, {3, 1}),
                                     random_tensor(rng, {3, 1})},
                                   [](Tape&, auto& v) {
                                       Var a = add_row(v[0], v[1]);
                                       Var b = row_scale(v[2], a);
                                       Var c = concat_cols(b, v[3]);
                                       return sum(mul(c, c));
                                   });
         }},
        {"div_mse", [&] {
             return gradient_check({random_tensor(rng, {2, 2}), random_tensor(rng, {2, 2}), random_tensor(rng, {1}, 0.5, 2.0)},
                                   [](Tape&, auto& v) { return add(mse(div_by_scalar(v[0], v[2]), v[1]), mean(v[1])); });
         }},
        {"bernoulli_kl", [&] {
             return gradient_check({random_tensor(rng, {3, 3}, -3, 3)},
                                   [&](Tape&, auto& v) { return bernoulli_kl_from_logits(v[0], mask, 0.3); });
         }},
    };
    for (auto& [name, check] : checks)
        for (int trial = 0; trial < 20; ++trial) EXPECT_LT(check(), 1e-4) << name << " trial " << trial;
}

TEST(BernoulliKl, ZeroAtPriorAndMatchesDirectFormula) {
    Tape tape;
    const double p0 = 0.3;
    Tensor mask({2}, 1.0);
    auto at_prior = bernoulli_kl_from_logits(tape.constant(Tensor({2}, std::log(p0 / (1 - p0)))), mask, p0);
    EXPECT_NEAR(at_prior.value()[0], 0.0, 1e-15);
    auto kl = bernoulli_kl_from_logits(tape.constant(Tensor({2}, std::vector<double>{1.5, -0.5})), mask, p0);
    double direct = 0.0;
    for (double l : {1.5, -0.5}) {
        const double p = 1.0 / (1.0 + std::exp(-l));
        direct += p * std::log(p / p0) + (1 - p) * std::log((1 - p) / (1 - p0));
    }
    EXPECT_NEAR(kl.value()[0], direct, 1e-12);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    Tensor w({3}, std::vector<double>{1, 2, 3});
    const Tensor before = w;
    Adam opt;
    opt.step({{"w", &w}}, {Tensor({3}, 0.0)});
    EXPECT_EQ(w, before);
    EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, HandIteratedRecurrence) {
    Tensor w({1}, 0.0);
    Adam opt({.lr = 0.1});
    double m = 0, v = 0, x = 0;
    for (int t = 1; t <= 5; ++t) {
        opt.step({{"w", &w}}, {Tensor({1}, 1.0)});
        m = 0.9 * m + 0.1;
        v = 0.999 * v + 0.001;
        x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(w[0], x, 1e-14);
        if (t == 1) EXPECT_NEAR(w[0], -0.1, 1e-8);
    }
    EXPECT_EQ(opt.steps(), 5u);
}

TEST(Adam, NanGradientNamesParameter) {
    Tensor w({1}, 0.0);
    Adam opt;
    try {
        opt.step({{"encoder.w_q", &w}}, {Tensor({1}, NAN)});
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("encoder.w_q"), std::string::npos);
    }
    EXPECT_THROW(opt.step({{"w", &w}}, {Tensor({2}, 0.0)}), DimensionError);
}

TEST(Adam, DeterministicTrajectories) {
    auto run = [] {
        RngStream rng(12, 0);
        Tensor w = random_tensor(rng, {4});
        Adam opt;
        for (int i = 0; i < 50; ++i) {
            Tape tape;
            auto p = tape.param(w);
            tape.backward(sum(elementwise(Unary::tanh, mul(p, p))));
            opt.step({{"w", &w}}, {tape.grad(p)});
        }
        return w;
    };
    EXPECT_EQ(run(), run());
}
