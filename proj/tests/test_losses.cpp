#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "spanft/error.hpp"
#include "spanft/losses.hpp"
#include "spanft/model.hpp"

using namespace spanft;
using losses::Objective;
using losses::TrainingSample;

namespace {

// Log-softmax of raw logits, row-major [rows, vocab].
model::LogProbs from_logits(const std::vector<double> & z, std::size_t vocab) {
    model::LogProbs lp{z.size() / vocab, vocab, z};
    for (std::size_t r = 0; r < lp.rows; ++r) {
        double m = -INFINITY;
        for (std::size_t k = 0; k < vocab; ++k) {
            m = std::max(m, z[r * vocab + k]);
        }
        double s = 0.0;
        for (std::size_t k = 0; k < vocab; ++k) {
            s += std::exp(z[r * vocab + k] - m);
        }
        for (std::size_t k = 0; k < vocab; ++k) {
            lp.values[r * vocab + k] = z[r * vocab + k] - m - std::log(s);
        }
    }
    return lp;
}

// Rows with explicit probabilities.
model::LogProbs from_probs(const std::vector<std::vector<double>> & rows) {
    model::LogProbs lp{rows.size(), rows[0].size(), {}};
    for (const auto & row : rows) {
        for (double p : row) {
            lp.values.push_back(std::log(p));
        }
    }
    return lp;
}

// [doc=0] [summary = 1 2 1]: rows 0..2 predict the summary tokens.
TrainingSample toy(corpus::Label label, std::vector<std::size_t> mask = {}) {
    TrainingSample s;
    s.token_ids = {0, 1, 2, 1};
    s.summary_start = 1;
    s.summary_end = 4;
    s.label = label;
    s.mask.indices = std::move(mask);
    return s;
}

const std::vector<std::vector<double>> kRows{{0.2, 0.5, 0.3}, {0.1, 0.3, 0.6}, {0.25, 0.7, 0.05}, {0.3, 0.3, 0.4}};
// Probabilities of the summary tokens 1, 2, 1 under kRows.
const double p0 = 0.5, p1 = 0.6, p2 = 0.7;

ErrorKind kind_of(const std::function<void()> & f) {
    try {
        f();
    } catch (const Error & e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorKind::IoError;
}

} // namespace

TEST(HandOracle, PositiveBranch) {
    const auto lp = from_probs(kRows);
    for (double eps : {0.0, 0.3, 0.5, 1.0}) {
        const double expected = -(1 - eps) * (std::log(p0) + std::log(p1) + std::log(p2));
        EXPECT_NEAR(losses::loss_ga(toy(corpus::Label::positive), lp, eps), expected, 1e-10);
        EXPECT_NEAR(losses::loss_ul(toy(corpus::Label::positive), lp, eps), expected, 1e-10);
    }
}

TEST(HandOracle, NegativeBranch) {
    const auto lp = from_probs(kRows);
    const auto neg = toy(corpus::Label::negative, {1, 2});
    for (double eps : {0.0, 0.3, 0.5, 1.0}) {
        EXPECT_NEAR(losses::loss_ga(neg, lp, eps), eps * (std::log(p1) + std::log(p2)), 1e-10);
        EXPECT_NEAR(losses::loss_ul(neg, lp, eps), -eps * (std::log(1 - p1) + std::log(1 - p2)), 1e-10);
    }
}

TEST(HandOracle, SingleTokenExamples) {
    const auto lp = from_probs({{0.5, 0.5}, {0.5, 0.5}});
    TrainingSample s;
    s.token_ids = {0, 1};
    s.summary_start = 1;
    s.summary_end = 2;
    EXPECT_NEAR(losses::loss_ga(s, lp, 0.0), 0.6931471805599453, 1e-12);
    s.label = corpus::Label::negative;
    s.mask.indices = {0};
    EXPECT_EQ(losses::loss_ga(s, lp, 0.0), 0.0);
    EXPECT_EQ(losses::loss_ul(s, lp, 0.0), 0.0);
    EXPECT_NEAR(losses::loss_ga(s, lp, 1.0), -0.6931471805599453, 1e-12);
    EXPECT_NEAR(losses::loss_ul(s, lp, 1.0), 0.6931471805599453, 1e-12);
}

TEST(HandOracle, UnlikelihoodLimits) {
    TrainingSample s = toy(corpus::Label::negative, {0});
    auto rows = kRows;
    rows[0] = {1.0 - 1e-300, 1e-300, 0.0 + 1e-300};
    EXPECT_NEAR(losses::loss_ul(s, from_probs(rows), 1.0), 0.0, 1e-12);
    // A near-certain masked token is clamped at the complement floor.
    rows[0] = {1e-12, 1.0 - 2e-12, 1e-12};
    EXPECT_NEAR(losses::loss_ul(s, from_probs(rows), 1.0), -std::log(losses::kComplementFloor), 1e-9);
}

TEST(Properties, SignsAndZeroWeight) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01(0.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> z(4 * 3);
        for (auto & v : z) {
            v = n01(rng);
        }
        const auto lp = from_logits(z, 3);
        const auto neg = toy(corpus::Label::negative, {static_cast<std::size_t>(trial % 3)});
        const double eps = (trial % 11) / 10.0;
        EXPECT_GE(losses::loss_ul(neg, lp, eps), 0.0);
        EXPECT_GE(losses::loss_ul(toy(corpus::Label::positive), lp, eps), 0.0);
        EXPECT_LE(losses::loss_ga(neg, lp, eps), 0.0);
        EXPECT_EQ(losses::loss_ga(neg, lp, 0.0), 0.0);
        EXPECT_EQ(losses::loss_ul(neg, lp, 0.0), 0.0);
        EXPECT_EQ(losses::loss_ga(toy(corpus::Label::positive), lp, eps),
                  losses::loss_ul(toy(corpus::Label::positive), lp, eps));
    }
}

TEST(Properties, GradientPushesMaskedTokenDown) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> z(12);
        for (auto & v : z) {
            v = n01(rng);
        }
        const auto lp = from_logits(z, 3);
        const std::size_t r = trial % 3;
        const auto neg = toy(corpus::Label::negative, {r});
        const std::size_t row = r;  // summary_start - 1 + r
        const auto y = static_cast<std::size_t>(neg.token_ids[1 + r]);
        for (auto objective : {Objective::ga, Objective::ul}) {
            const auto g = losses::loss_and_gradient(objective, neg, lp, 0.5);
            // Descent lowers the logit of the masked token.
            EXPECT_GT(g.dlogits[row * 3 + y], 0.0);
        }
    }
}

TEST(Gradient, MatchesFiniteDifferencesOnLogits) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    std::vector<double> z(12);
    for (auto & v : z) {
        v = n01(rng);
    }
    const std::vector<TrainingSample> samples{toy(corpus::Label::positive), toy(corpus::Label::negative, {0, 2})};
    for (auto objective : {Objective::ga, Objective::ul, Objective::nll_summary, Objective::nll_masked}) {
        for (const auto & s : samples) {
            if (objective == Objective::nll_masked && s.label == corpus::Label::positive) {
                continue;
            }
            const double eps = 0.3;
            const auto g = losses::loss_and_gradient(objective, s, from_logits(z, 3), eps, 0.5);
            EXPECT_NEAR(g.loss, 0.5 * losses::sample_loss(objective, s, from_logits(z, 3), eps), 1e-14);
            for (std::size_t i = 0; i < z.size(); ++i) {
                auto zp = z;
                auto zm = z;
                zp[i] += 1e-5;
                zm[i] -= 1e-5;
                const double numeric = 0.5 *
                    (losses::sample_loss(objective, s, from_logits(zp, 3), eps) -
                     losses::sample_loss(objective, s, from_logits(zm, 3), eps)) /
                    2e-5;
                EXPECT_NEAR(g.dlogits[i], numeric, 1e-7) << i;
            }
        }
    }
}

TEST(Gradient, ZeroWeightGivesExactZeros) {
    const auto lp = from_probs(kRows);
    for (auto objective : {Objective::ga, Objective::ul}) {
        const auto g = losses::loss_and_gradient(objective, toy(corpus::Label::negative, {1}), lp, 0.0);
        EXPECT_TRUE(g.zero_gradient);
        for (double v : g.dlogits) {
            EXPECT_EQ(v, 0.0);
        }
        const auto pos = losses::loss_and_gradient(objective, toy(corpus::Label::positive), lp, 1.0);
        EXPECT_TRUE(pos.zero_gradient);
    }
}

TEST(Gradient, EpsilonZeroEqualsSummaryCrossEntropy) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n01;
    std::vector<double> z(12);
    for (auto & v : z) {
        v = n01(rng);
    }
    const auto lp = from_logits(z, 3);
    const auto sft = losses::loss_and_gradient(Objective::nll_summary, toy(corpus::Label::positive), lp, 0.0, 0.25);
    for (auto objective : {Objective::ga, Objective::ul}) {
        const auto g = losses::loss_and_gradient(objective, toy(corpus::Label::positive), lp, 0.0, 0.25);
        EXPECT_EQ(g.loss, sft.loss);
        EXPECT_EQ(g.dlogits, sft.dlogits);
    }
}

TEST(Batch, MeanOfSampleLosses) {
    const auto lp = from_probs(kRows);
    const auto pos = toy(corpus::Label::positive);
    const auto neg = toy(corpus::Label::negative, {0});
    for (auto objective : {Objective::ga, Objective::ul}) {
        const std::vector<TrainingSample> one{pos};
        const std::vector<model::LogProbs> one_lp{lp};
        EXPECT_EQ(losses::batch_loss(objective, one, one_lp, 0.3), losses::sample_loss(objective, pos, lp, 0.3));
        const std::vector<TrainingSample> dup{pos, pos};
        const std::vector<model::LogProbs> dup_lp{lp, lp};
        EXPECT_DOUBLE_EQ(losses::batch_loss(objective, dup, dup_lp, 0.3), losses::sample_loss(objective, pos, lp, 0.3));
        const std::vector<TrainingSample> mixed{pos, neg};
        EXPECT_NEAR(losses::batch_loss(objective, mixed, dup_lp, 0.3),
                    0.5 * (losses::sample_loss(objective, pos, lp, 0.3) + losses::sample_loss(objective, neg, lp, 0.3)),
                    1e-15);
    }
    EXPECT_EQ(kind_of([&] { losses::batch_loss(Objective::ga, {}, {}, 0.3); }), ErrorKind::EmptyBatch);
    const std::vector<TrainingSample> two{pos, neg};
    const std::vector<model::LogProbs> one{lp};
    EXPECT_EQ(kind_of([&] { losses::batch_loss(Objective::ga, two, one, 0.3); }), ErrorKind::ShapeMismatch);
}

TEST(Validation, Errors) {
    const auto lp = from_probs(kRows);
    EXPECT_EQ(kind_of([&] { losses::loss_ga(toy(corpus::Label::negative), lp, 0.5); }), ErrorKind::EmptyMask);
    EXPECT_EQ(kind_of([&] { losses::validate(toy(corpus::Label::negative)); }), ErrorKind::SchemaError);
    auto empty_mask = toy(corpus::Label::negative);
    EXPECT_EQ(kind_of([&] {
                  losses::loss_and_gradient(Objective::ul, empty_mask, lp, 0.5);
              }),
              ErrorKind::EmptyMask);
    EXPECT_EQ(kind_of([&] { losses::validate(toy(corpus::Label::negative, {3})); }), ErrorKind::SchemaError);
    EXPECT_EQ(kind_of([&] { losses::validate(toy(corpus::Label::positive, {0})); }), ErrorKind::SchemaError);
    auto bad_range = toy(corpus::Label::positive);
    bad_range.summary_start = 0;
    EXPECT_EQ(kind_of([&] { losses::validate(bad_range); }), ErrorKind::InvalidArgument);
    EXPECT_EQ(kind_of([&] { losses::loss_ga(toy(corpus::Label::positive), lp, 1.5); }), ErrorKind::InvalidArgument);
    EXPECT_EQ(kind_of([&] { losses::loss_ul(toy(corpus::Label::positive), lp, -0.1); }), ErrorKind::InvalidArgument);
    model::LogProbs short_lp{2, 3, std::vector<double>(6, std::log(1.0 / 3))};
    EXPECT_EQ(kind_of([&] { losses::loss_ga(toy(corpus::Label::positive), short_lp, 0.5); }),
              ErrorKind::ShapeMismatch);
}

namespace {

model::ParameterVector random_parameters(std::uint64_t seed) {
    model::Model m(model::ModelConfig{7, 4, 1, 8, 2, seed});
    auto p = m.get_parameters();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    for (auto & v : p.values) {
        v += n01(rng);
    }
    return p;
}

} // namespace

TEST(TaskVector, ComputeIsAnExactDifference) {
    const auto a = random_parameters(1);
    const auto b = random_parameters(2);
    const auto c = random_parameters(3);
    const auto zero = losses::compute_task_vector(a, a);
    for (double v : zero.values) {
        EXPECT_EQ(v, 0.0);
    }
    const auto ab = losses::compute_task_vector(a, b);
    for (std::size_t i = 0; i < ab.values.size(); ++i) {
        EXPECT_EQ(ab.values[i], a.values[i] - b.values[i]);
    }
    const auto ac = losses::compute_task_vector(a, c);
    const auto cb = losses::compute_task_vector(c, b);
    for (std::size_t i = 0; i < ab.values.size(); ++i) {
        EXPECT_NEAR(ac.values[i] + cb.values[i], ab.values[i], 1e-12);
    }
    const model::ParameterVector other = model::Model(model::ModelConfig{8, 4, 1, 8, 2, 0}).get_parameters();
    EXPECT_EQ(kind_of([&] { losses::compute_task_vector(a, other); }), ErrorKind::ShapeMismatch);
}

TEST(TaskVector, MergeEndpointsAndAffinity) {
    const auto base = random_parameters(4);
    const auto pos = losses::compute_task_vector(random_parameters(5), base);
    const auto neg = losses::compute_task_vector(random_parameters(6), base);
    const auto at0 = losses::merge_task_vectors(base, pos, neg, 0.0);
    const auto at1 = losses::merge_task_vectors(base, pos, neg, 1.0);
    for (std::size_t i = 0; i < base.values.size(); ++i) {
        EXPECT_EQ(at0.values[i], base.values[i] + pos.values[i]);
        EXPECT_EQ(at1.values[i], base.values[i] - neg.values[i]);
    }
    const auto same = losses::merge_task_vectors(base, pos, pos, 0.3);
    for (std::size_t i = 0; i < base.values.size(); ++i) {
        EXPECT_NEAR(same.values[i], base.values[i] + 0.4 * pos.values[i], 1e-12);
    }
    // Affine in epsilon: the midpoint merge is the mean of the endpoints.
    const auto mid = losses::merge_task_vectors(base, pos, neg, 0.5);
    for (std::size_t i = 0; i < base.values.size(); ++i) {
        EXPECT_NEAR(mid.values[i], 0.5 * (at0.values[i] + at1.values[i]), 1e-12);
    }
    EXPECT_EQ(kind_of([&] { losses::merge_task_vectors(base, pos, neg, 1.2); }), ErrorKind::InvalidArgument);
}
