#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spanft/align.hpp"
#include "spanft/corpus.hpp"
#include "spanft/losses.hpp"
#include "spanft/model.hpp"

namespace spanft::trainer {

// lm trains plain cross-entropy on every summary regardless of label; it is
// used to produce a base model that already summarizes (and hallucinates).
enum class Method { sft, ga, ul, tv, lm };

std::string_view to_string(Method method) noexcept;
Method parse_method(std::string_view text);

// Loss for the negative branch of the task-vector pipeline.
enum class NegativeLoss { masked, full_summary };

struct TrainingConfig {
    Method method = Method::sft;
    double epsilon = 0.0;
    double learning_rate = 5e-5;
    double warmup_ratio = 0.01;
    std::size_t batch_size = 16;
    std::size_t epochs = 1;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    bool clip_gradients = false;
    double max_grad_norm = 1.0;
    std::optional<std::size_t> max_steps;
    NegativeLoss tv_negative_loss = NegativeLoss::masked;

    // Throws InvalidArgument on out-of-range fields.
    void validate() const;
};

// Linear warmup over ceil(warmup_ratio * total_steps) steps, then linear decay
// to zero at total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio);

struct StepRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double learning_rate = 0.0;
    double grad_norm = 0.0;

    friend bool operator==(const StepRecord &, const StepRecord &) = default;
};

struct RunLog {
    std::vector<StepRecord> steps;
    std::string checkpoint;

    void write_csv(std::ostream & out) const;
    void write_csv(const std::string & path) const;

    friend bool operator==(const RunLog &, const RunLog &) = default;
};

// Sequences [document] <sum> [summary] <eos>. Throws ContextOverflow when a
// sample does not fit.
losses::TrainingSample make_training_sample(const corpus::LabeledSample & sample,
                                            const align::WordTokenizer & tokenizer, std::size_t context_length);
std::vector<losses::TrainingSample> make_training_samples(std::span<const corpus::LabeledSample> samples,
                                                          const align::WordTokenizer & tokenizer,
                                                          std::size_t context_length);

// Prompt for generation: [document] <sum>.
std::vector<int> make_prompt(std::string_view document, const align::WordTokenizer & tokenizer);

// Trains in place with method sft, ga, ul or lm. Throws EmptyDataset when no
// sample is usable and NaNLoss (leaving the model untouched) on a non-finite
// loss or parameter.
RunLog train(model::Model & model, std::span<const losses::TrainingSample> dataset, const TrainingConfig & config);

struct TaskVectorRun {
    model::Model merged;
    model::ParameterVector positive_fine_tuned;
    model::ParameterVector negative_fine_tuned;
    RunLog positive_log;
    RunLog negative_log;
};

// Fine-tunes one copy of `base` on positives and another on negatives, then
// merges the two task vectors with config.epsilon.
TaskVectorRun train_task_vector_pipeline(const model::Model & base, std::span<const losses::TrainingSample> dataset,
                                         const TrainingConfig & config);

} // namespace spanft::trainer
