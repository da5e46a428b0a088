#include "spanft/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "spanft/error.hpp"
#include "spanft/rng.hpp"

namespace spanft::trainer {

std::string_view to_string(Method method) noexcept {
    switch (method) {
        case Method::sft: return "sft";
        case Method::ga: return "ga";
        case Method::ul: return "ul";
        case Method::tv: return "tv";
        case Method::lm: return "lm";
    }
    return "sft";
}

Method parse_method(std::string_view text) {
    for (auto m : {Method::sft, Method::ga, Method::ul, Method::tv, Method::lm}) {
        if (to_string(m) == text) {
            return m;
        }
    }
    fail(ErrorKind::InvalidArgument, "unknown method: " + std::string(text));
}

void TrainingConfig::validate() const {
    losses::check_epsilon(epsilon);
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        fail(ErrorKind::InvalidArgument, "learning_rate must be > 0");
    }
    if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) {
        fail(ErrorKind::InvalidArgument, "warmup_ratio must lie in [0, 1]");
    }
    if (epochs < 1) {
        fail(ErrorKind::InvalidArgument, "epochs must be >= 1");
    }
    if (batch_size < 1) {
        fail(ErrorKind::InvalidArgument, "batch_size must be >= 1");
    }
    if (!(weight_decay >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(adam_epsilon > 0.0)) {
        fail(ErrorKind::InvalidArgument, "invalid optimizer coefficients");
    }
    if (clip_gradients && !(max_grad_norm > 0.0)) {
        fail(ErrorKind::InvalidArgument, "max_grad_norm must be > 0");
    }
}

double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio) {
    if (total_steps == 0 || step >= total_steps) {
        return 0.0;
    }
    const auto warmup = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
    if (step < warmup) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    return peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

void RunLog::write_csv(std::ostream & out) const {
    out << "step,loss,learning_rate,grad_norm\n";
    char buf[128];
    for (const auto & s : steps) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", s.step, s.loss, s.learning_rate, s.grad_norm);
        out << buf;
    }
}

void RunLog::write_csv(const std::string & path) const {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::IoError, "cannot write " + path);
    }
    write_csv(out);
}

losses::TrainingSample make_training_sample(const corpus::LabeledSample & sample,
                                            const align::WordTokenizer & tokenizer, std::size_t context_length) {
    const auto doc = tokenizer.encode(sample.doc.text);
    const auto summary = tokenizer.encode(sample.summary.text);
    losses::TrainingSample out;
    out.token_ids = doc.token_ids;
    out.token_ids.push_back(align::WordTokenizer::kSummarizeId);
    out.summary_start = out.token_ids.size();
    out.token_ids.insert(out.token_ids.end(), summary.token_ids.begin(), summary.token_ids.end());
    out.token_ids.push_back(align::WordTokenizer::kEosId);
    out.summary_end = out.token_ids.size();
    out.label = sample.label;
    if (sample.label == corpus::Label::negative) {
        out.mask = align::spans_to_token_mask(summary, sample.char_spans);
    }
    if (out.token_ids.size() > context_length) {
        fail(ErrorKind::ContextOverflow, "sample " + sample.id + " needs " + std::to_string(out.token_ids.size()) +
                                             " tokens, context is " + std::to_string(context_length));
    }
    losses::validate(out);
    return out;
}

std::vector<losses::TrainingSample> make_training_samples(std::span<const corpus::LabeledSample> samples,
                                                          const align::WordTokenizer & tokenizer,
                                                          std::size_t context_length) {
    std::vector<losses::TrainingSample> out;
    out.reserve(samples.size());
    for (const auto & s : samples) {
        out.push_back(make_training_sample(s, tokenizer, context_length));
    }
    return out;
}

std::vector<int> make_prompt(std::string_view document, const align::WordTokenizer & tokenizer) {
    auto ids = tokenizer.encode(document).token_ids;
    ids.push_back(align::WordTokenizer::kSummarizeId);
    return ids;
}

namespace {

losses::Objective objective_for(Method method) {
    switch (method) {
        case Method::ga: return losses::Objective::ga;
        case Method::ul: return losses::Objective::ul;
        case Method::sft:
        case Method::lm: return losses::Objective::nll_summary;
        case Method::tv: break;
    }
    fail(ErrorKind::InvalidArgument, "method tv trains through the task-vector pipeline");
}

RunLog run(model::Model & model, std::span<const losses::TrainingSample> dataset, const std::vector<std::size_t> & usable,
           losses::Objective objective, const TrainingConfig & config) {
    config.validate();
    if (usable.empty()) {
        fail(ErrorKind::EmptyDataset, "no training samples for method " + std::string(to_string(config.method)));
    }
    const std::size_t n = usable.size();
    const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
    std::size_t total = per_epoch * config.epochs;
    if (config.max_steps) {
        total = std::min(total, *config.max_steps);
    }

    auto weights = model.weights();
    const std::vector<double> initial(weights.begin(), weights.end());
    std::vector<double> grad(weights.size()), m(weights.size(), 0.0), v(weights.size(), 0.0);
    model::Activations cache;
    RunLog log;
    const auto abort = [&](std::size_t step, const std::string & what) {
        std::copy(initial.begin(), initial.end(), weights.begin());
        fail(ErrorKind::NaNLoss, what + " at step " + std::to_string(step));
    };

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs && step < total; ++epoch) {
        std::vector<std::size_t> order = usable;
        Rng rng(Rng::mix(config.seed, epoch));
        rng.shuffle(order);
        for (std::size_t begin = 0; begin < n && step < total; begin += config.batch_size, ++step) {
            const std::size_t end = std::min(n, begin + config.batch_size);
            const double scale = 1.0 / static_cast<double>(end - begin);
            std::fill(grad.begin(), grad.end(), 0.0);
            double loss = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                const auto & sample = dataset[order[i]];
                const auto lp = model.forward(sample.token_ids, cache);
                const auto lg = losses::loss_and_gradient(objective, sample, lp, config.epsilon, scale);
                loss += lg.loss;
                if (!lg.zero_gradient) {
                    model.backward(cache, lg.dlogits, grad);
                }
            }
            if (!std::isfinite(loss)) {
                abort(step, "non-finite loss");
            }
            double norm_sq = 0.0;
            for (double g : grad) {
                norm_sq += g * g;
            }
            const double norm = std::sqrt(norm_sq);
            if (!std::isfinite(norm)) {
                abort(step, "non-finite gradient");
            }
            if (config.clip_gradients && norm > config.max_grad_norm) {
                const double c = config.max_grad_norm / norm;
                for (double & g : grad) {
                    g *= c;
                }
            }
            const double lr = lr_schedule(step, total, config.learning_rate, config.warmup_ratio);
            const double t = static_cast<double>(step + 1);
            const double bias1 = 1.0 - std::pow(config.beta1, t);
            const double bias2 = 1.0 - std::pow(config.beta2, t);
            for (std::size_t k = 0; k < weights.size(); ++k) {
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * grad[k];
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * grad[k] * grad[k];
                const double update = (m[k] / bias1) / (std::sqrt(v[k] / bias2) + config.adam_epsilon);
                weights[k] -= lr * (update + config.weight_decay * weights[k]);
            }
            log.steps.push_back({step, loss, lr, norm});
        }
    }
    for (double w : weights) {
        if (!std::isfinite(w)) {
            abort(step, "non-finite parameter");
        }
    }
    return log;
}

} // namespace

RunLog train(model::Model & model, std::span<const losses::TrainingSample> dataset, const TrainingConfig & config) {
    const auto objective = objective_for(config.method);
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (config.method != Method::sft || dataset[i].label == corpus::Label::positive) {
            usable.push_back(i);
        }
    }
    return run(model, dataset, usable, objective, config);
}

TaskVectorRun train_task_vector_pipeline(const model::Model & base, std::span<const losses::TrainingSample> dataset,
                                         const TrainingConfig & config) {
    config.validate();
    std::vector<std::size_t> positives, negatives;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        (dataset[i].label == corpus::Label::positive ? positives : negatives).push_back(i);
    }
    if (positives.empty() || negatives.empty()) {
        fail(ErrorKind::EmptyDataset, "the task-vector pipeline needs positive and negative samples");
    }
    TrainingConfig branch = config;
    branch.method = Method::sft;
    branch.epsilon = 0.0;

    model::Model positive = base;
    auto positive_log = run(positive, dataset, positives, losses::Objective::nll_summary, branch);
    model::Model negative = base;
    const auto negative_objective = config.tv_negative_loss == NegativeLoss::masked ? losses::Objective::nll_masked
                                                                                     : losses::Objective::nll_summary;
    auto negative_log = run(negative, dataset, negatives, negative_objective, branch);

    const auto theta_pre = base.get_parameters();
    auto theta_pos = positive.get_parameters();
    auto theta_neg = negative.get_parameters();
    const auto merged_parameters =
        losses::merge_task_vectors(theta_pre, losses::compute_task_vector(theta_pos, theta_pre),
                                   losses::compute_task_vector(theta_neg, theta_pre), config.epsilon);
    model::Model merged = base;
    merged.set_parameters(merged_parameters);
    return {std::move(merged), std::move(theta_pos), std::move(theta_neg), std::move(positive_log),
            std::move(negative_log)};
}

} // namespace spanft::trainer
