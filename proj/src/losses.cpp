#include "spanft/losses.hpp"

#include <cmath>

#include "spanft/error.hpp"

namespace spanft::losses {

void validate(const TrainingSample & sample) {
    if (sample.summary_start == 0 || sample.summary_start > sample.summary_end ||
        sample.summary_end > sample.token_ids.size()) {
        fail(ErrorKind::InvalidArgument, "summary range must lie inside the sequence after at least one token");
    }
    if ((sample.label == corpus::Label::positive) != sample.mask.indices.empty()) {
        fail(ErrorKind::SchemaError, "mask must be empty exactly for positive samples");
    }
    for (auto index : sample.mask.indices) {
        if (index >= sample.summary_length()) {
            fail(ErrorKind::SchemaError, "mask index outside the summary");
        }
    }
}

void check_epsilon(double epsilon) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
        fail(ErrorKind::InvalidArgument, "epsilon must lie in [0, 1]");
    }
}

namespace {

void check_shapes(const TrainingSample & sample, const model::LogProbs & logprobs) {
    if (logprobs.rows != sample.token_ids.size() || logprobs.values.size() != logprobs.rows * logprobs.vocab) {
        fail(ErrorKind::ShapeMismatch, "log-probabilities do not align with the sample");
    }
}

void require_mask(const TrainingSample & sample) {
    if (sample.mask.indices.empty()) {
        fail(ErrorKind::EmptyMask, "negative sample without masked tokens");
    }
}

// Target token of summary-relative index r and the row that predicts it.
struct Target {
    std::size_t row;
    int token;
};

Target target(const TrainingSample & sample, std::size_t r) {
    const std::size_t position = sample.summary_start + r;
    return {position - 1, sample.token_ids[position]};
}

// Cross-entropy terms over the given summary-relative indices, weighted by
// `coef` in the gradient; returns the sum of log-probabilities.
template <class Indices>
double nll_terms(const TrainingSample & sample, const model::LogProbs & lp, const Indices & indices, double coef,
                 std::vector<double> * grad) {
    double sum = 0.0;
    for (std::size_t r : indices) {
        const auto [row, token] = target(sample, r);
        sum += lp.at(row, static_cast<std::size_t>(token));
        if (grad != nullptr) {
            double * g = grad->data() + row * lp.vocab;
            for (std::size_t k = 0; k < lp.vocab; ++k) {
                g[k] += coef * std::exp(lp.at(row, k));
            }
            g[token] -= coef;
        }
    }
    return sum;
}

struct Range {
    std::size_t n;
    struct It {
        std::size_t i;
        std::size_t operator*() const { return i; }
        It & operator++() {
            ++i;
            return *this;
        }
        bool operator!=(const It & o) const { return i != o.i; }
    };
    It begin() const { return {0}; }
    It end() const { return {n}; }
};

// -sum over masked tokens of log(1 - p), p clamped to at most 1 - floor.
double unlikelihood_terms(const TrainingSample & sample, const model::LogProbs & lp, double coef,
                          std::vector<double> * grad) {
    double sum = 0.0;
    for (std::size_t r : sample.mask.indices) {
        const auto [row, token] = target(sample, r);
        const double log_p = lp.at(row, static_cast<std::size_t>(token));
        const double complement = -std::expm1(log_p);
        const bool clamped = complement < kComplementFloor;
        sum += std::log(clamped ? kComplementFloor : complement);
        if (grad != nullptr && !clamped) {
            // d(-log(1 - p_y))/dz_k = p_y (delta_yk - p_k) / (1 - p_y)
            const double p_y = std::exp(log_p);
            const double factor = coef * p_y / complement;
            double * g = grad->data() + row * lp.vocab;
            for (std::size_t k = 0; k < lp.vocab; ++k) {
                g[k] -= factor * std::exp(lp.at(row, k));
            }
            g[token] += factor;
        }
    }
    return -sum;
}

LossAndGradient evaluate(Objective objective, const TrainingSample & sample, const model::LogProbs & lp,
                         double epsilon, double scale, bool with_gradient) {
    check_shapes(sample, lp);
    if (objective == Objective::ga || objective == Objective::ul) {
        check_epsilon(epsilon);
    }
    LossAndGradient out;
    std::vector<double> * grad = nullptr;
    if (with_gradient) {
        out.dlogits.assign(lp.rows * lp.vocab, 0.0);
        grad = &out.dlogits;
    }
    const bool positive = sample.label == corpus::Label::positive;
    switch (objective) {
        case Objective::nll_summary: {
            const double sum = nll_terms(sample, lp, Range{sample.summary_length()}, 1.0 * scale, grad);
            out.loss = -1.0 * sum * scale;
            break;
        }
        case Objective::nll_masked: {
            if (positive) {
                out.zero_gradient = true;
                break;
            }
            require_mask(sample);
            const double sum = nll_terms(sample, lp, sample.mask.indices, 1.0 * scale, grad);
            out.loss = -1.0 * sum * scale;
            break;
        }
        case Objective::ga:
        case Objective::ul: {
            if (positive) {
                const double w = 1.0 - epsilon;
                const double sum = nll_terms(sample, lp, Range{sample.summary_length()}, w * scale, grad);
                out.loss = -w * sum * scale;
                out.zero_gradient = w == 0.0;
                break;
            }
            require_mask(sample);
            if (objective == Objective::ga) {
                // +eps * sum log p: its gradient is the negated cross-entropy gradient.
                const double sum = nll_terms(sample, lp, sample.mask.indices, -epsilon * scale, grad);
                out.loss = epsilon * sum * scale;
            } else {
                out.loss = epsilon * unlikelihood_terms(sample, lp, epsilon * scale, grad) * scale;
            }
            out.zero_gradient = epsilon == 0.0;
            break;
        }
    }
    if (with_gradient && out.zero_gradient) {
        std::fill(out.dlogits.begin(), out.dlogits.end(), 0.0);
    }
    return out;
}

} // namespace

double loss_ga(const TrainingSample & sample, const model::LogProbs & logprobs, double epsilon) {
    return evaluate(Objective::ga, sample, logprobs, epsilon, 1.0, false).loss;
}

double loss_ul(const TrainingSample & sample, const model::LogProbs & logprobs, double epsilon) {
    return evaluate(Objective::ul, sample, logprobs, epsilon, 1.0, false).loss;
}

double sample_loss(Objective objective, const TrainingSample & sample, const model::LogProbs & logprobs,
                   double epsilon) {
    return evaluate(objective, sample, logprobs, epsilon, 1.0, false).loss;
}

LossAndGradient loss_and_gradient(Objective objective, const TrainingSample & sample,
                                  const model::LogProbs & logprobs, double epsilon, double scale) {
    return evaluate(objective, sample, logprobs, epsilon, scale, true);
}

double batch_loss(Objective objective, std::span<const TrainingSample> batch,
                  std::span<const model::LogProbs> logprobs, double epsilon) {
    if (batch.empty()) {
        fail(ErrorKind::EmptyBatch, "batch has no samples");
    }
    if (batch.size() != logprobs.size()) {
        fail(ErrorKind::ShapeMismatch, "one log-probability matrix per sample is required");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        total += sample_loss(objective, batch[i], logprobs[i], epsilon);
    }
    return total / static_cast<double>(batch.size());
}

TaskVector compute_task_vector(const model::ParameterVector & fine_tuned, const model::ParameterVector & base) {
    if (!fine_tuned.same_shape(base) || fine_tuned.values.size() != base.values.size()) {
        fail(ErrorKind::ShapeMismatch, "task vector operands have different layouts");
    }
    TaskVector tau;
    tau.layout = base.layout;
    tau.values.resize(base.values.size());
    for (std::size_t i = 0; i < tau.values.size(); ++i) {
        tau.values[i] = fine_tuned.values[i] - base.values[i];
    }
    return tau;
}

model::ParameterVector merge_task_vectors(const model::ParameterVector & base, const TaskVector & positive,
                                          const TaskVector & negative, double epsilon) {
    check_epsilon(epsilon);
    if (!positive.same_shape(base) || !negative.same_shape(base) || positive.values.size() != base.values.size() ||
        negative.values.size() != base.values.size()) {
        fail(ErrorKind::ShapeMismatch, "task vectors do not match the base model");
    }
    model::ParameterVector merged;
    merged.layout = base.layout;
    merged.values.resize(base.values.size());
    const double keep = 1.0 - epsilon;
    for (std::size_t i = 0; i < merged.values.size(); ++i) {
        merged.values[i] = base.values[i] + keep * positive.values[i] - epsilon * negative.values[i];
    }
    return merged;
}

} // namespace spanft::losses
