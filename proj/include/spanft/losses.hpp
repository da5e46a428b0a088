#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "spanft/align.hpp"
#include "spanft/corpus.hpp"
#include "spanft/model.hpp"

namespace spanft::losses {

// One sequence laid out as [document] <sum> [summary] <eos>. The summary
// range covers the summary tokens and the trailing end token; mask indices
// are relative to summary_start.
struct TrainingSample {
    std::vector<int> token_ids;
    std::size_t summary_start = 0;
    std::size_t summary_end = 0;
    corpus::Label label = corpus::Label::positive;
    align::TokenMask mask;

    std::size_t summary_length() const noexcept { return summary_end - summary_start; }
};

// Throws SchemaError when the mask and label disagree or indices fall outside
// the summary, and InvalidArgument when the summary range is invalid.
void validate(const TrainingSample & sample);

// Throws InvalidArgument unless 0 <= epsilon <= 1.
void check_epsilon(double epsilon);

inline constexpr double kComplementFloor = 1e-6;

enum class Objective {
    ga,           // gradient ascent on masked tokens of negatives
    ul,           // unlikelihood on masked tokens of negatives
    nll_summary,  // plain cross-entropy over every summary token, any label
    nll_masked,   // cross-entropy over masked tokens only
};

// Per-sample losses are token sums. `logprobs` comes from a forward pass over
// sample.token_ids.
double loss_ga(const TrainingSample & sample, const model::LogProbs & logprobs, double epsilon);
double loss_ul(const TrainingSample & sample, const model::LogProbs & logprobs, double epsilon);

struct LossAndGradient {
    double loss = 0.0;
    std::vector<double> dlogits;  // [rows, vocab], d(loss)/d(logits)
    bool zero_gradient = false;   // every entry of dlogits is exactly zero
};

// `scale` multiplies both the loss and its gradient (1/batch for a batch mean).
// Objectives ga and ul take epsilon; the nll objectives ignore it.
LossAndGradient loss_and_gradient(Objective objective, const TrainingSample & sample,
                                  const model::LogProbs & logprobs, double epsilon, double scale = 1.0);

double sample_loss(Objective objective, const TrainingSample & sample, const model::LogProbs & logprobs,
                   double epsilon);

// Mean over samples of the per-sample loss. Throws EmptyBatch.
double batch_loss(Objective objective, std::span<const TrainingSample> batch,
                  std::span<const model::LogProbs> logprobs, double epsilon);

struct TaskVector : model::NamedVector {};

// Elementwise fine_tuned - base. Throws ShapeMismatch.
TaskVector compute_task_vector(const model::ParameterVector & fine_tuned, const model::ParameterVector & base);

// base + (1 - epsilon) * positive - epsilon * negative. Throws ShapeMismatch.
model::ParameterVector merge_task_vectors(const model::ParameterVector & base, const TaskVector & positive,
                                          const TaskVector & negative, double epsilon);

} // namespace spanft::losses
