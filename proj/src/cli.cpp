#include "spanft/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "spanft/align.hpp"
#include "spanft/annotate.hpp"
#include "spanft/corpus.hpp"
#include "spanft/error.hpp"
#include "spanft/eval.hpp"
#include "spanft/model.hpp"
#include "spanft/synth.hpp"
#include "spanft/trainer.hpp"

namespace spanft::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Resolved setting values with flag > config file > default precedence.
class Settings {
public:
    void load_config(const std::string & path) {
        std::ifstream in(path);
        if (!in) {
            fail(ErrorKind::IoError, "cannot open config file " + path);
        }
        config_ = json::parse(in, nullptr, false);
        if (config_.is_discarded() || !config_.is_object()) {
            fail(ErrorKind::SchemaError, "config file is not a JSON object: " + path);
        }
    }

    template <class T>
    T get(const std::string & key, const std::optional<T> & flag, const T & fallback) {
        T value = fallback;
        if (flag) {
            value = *flag;
        } else if (config_.contains(key)) {
            try {
                value = config_.at(key).get<T>();
            } catch (const json::exception & e) {
                fail(ErrorKind::SchemaError, "config key " + key + ": " + e.what());
            }
        }
        resolved_[key] = value;
        return value;
    }

    template <class T>
    std::optional<T> get_optional(const std::string & key, const std::optional<T> & flag) {
        std::optional<T> value = flag;
        if (!value && config_.contains(key) && !config_.at(key).is_null()) {
            try {
                value = config_.at(key).get<T>();
            } catch (const json::exception & e) {
                fail(ErrorKind::SchemaError, "config key " + key + ": " + e.what());
            }
        }
        resolved_[key] = value ? json(*value) : json(nullptr);
        return value;
    }

    // Required path-like values.
    std::string require(const std::string & key, const std::optional<std::string> & flag) {
        auto value = get_optional(key, flag);
        if (!value || value->empty()) {
            fail(ErrorKind::UsageError, "missing required option --" + dashed(key));
        }
        return *value;
    }

    const json & resolved() const { return resolved_; }

    static std::string dashed(std::string key) {
        for (char & c : key) {
            if (c == '_') {
                c = '-';
            }
        }
        return key;
    }

private:
    json config_ = json::object();
    json resolved_ = json::object();
};

// Raw flag values; unset flags stay empty so the config file can supply them.
struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> method;
    std::optional<double> epsilon;
    std::optional<std::string> dataset;
    std::optional<std::string> test;
    std::optional<std::string> epsilons;
    std::optional<std::string> scorer;
    std::optional<std::string> endpoint;
    std::optional<std::string> mock;
    std::optional<std::string> input;
    std::optional<std::string> vocab;
    std::optional<std::string> base;
    std::optional<std::string> positive;
    std::optional<std::string> negative;
    std::optional<std::string> checkpoint;
    std::optional<std::size_t> n_docs;
    std::optional<double> hallucination_rate;
    std::optional<std::string> dataset_tag;
    std::optional<std::string> generator_tag;
    std::optional<std::size_t> workers;
    std::optional<int> max_retries;
    std::optional<std::string> model_tag;
    std::optional<double> learning_rate;
    std::optional<double> warmup_ratio;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> epochs;
    std::optional<double> weight_decay;
    std::optional<double> beta1;
    std::optional<double> beta2;
    std::optional<double> adam_epsilon;
    std::optional<double> clip_grad_norm;
    std::optional<std::size_t> max_steps;
    std::optional<std::string> tv_negative_loss;
    std::optional<int> context_length;
    std::optional<int> n_layers;
    std::optional<int> d_model;
    std::optional<int> n_heads;
    std::optional<std::string> strategy;
    std::optional<double> top_p;
    std::optional<double> temperature;
    std::optional<bool> distinct_attributes;
};

struct Context {
    Settings settings;
    json inputs = json::object();
    json outputs = json::object();
    std::string out_dir;
    std::ostream * out = nullptr;
};

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void make_dir(const std::string & dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        fail(ErrorKind::IoError, "cannot create directory " + dir + ": " + ec.message());
    }
}

std::string output_path(Context & ctx, const std::string & key, const std::string & name) {
    const auto path = (fs::path(ctx.out_dir) / name).string();
    ctx.outputs[key] = path;
    return path;
}

void write_manifest(Context & ctx, const std::string & command) {
    json seeds = json::object();
    for (const auto & [key, value] : ctx.settings.resolved().items()) {
        if (key.find("seed") != std::string::npos) {
            seeds[key] = value;
        }
    }
    const json manifest{{"command", command},
                        {"resolved_config", ctx.settings.resolved()},
                        {"seeds", seeds},
                        {"inputs", ctx.inputs},
                        {"outputs", ctx.outputs},
                        {"toolkit_version", kToolkitVersion},
                        {"timestamp", timestamp()}};
    std::ofstream out(fs::path(ctx.out_dir) / "manifest.json");
    if (!out) {
        fail(ErrorKind::IoError, "cannot write manifest in " + ctx.out_dir);
    }
    out << manifest.dump(2) << '\n';
}

std::vector<json> read_jsonl(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open " + path);
    }
    std::vector<json> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) {
            continue;
        }
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            fail(ErrorKind::SchemaError, path + ":" + std::to_string(number) + ": not a JSON object");
        }
        out.push_back(std::move(j));
    }
    return out;
}

void write_jsonl(const std::string & path, const std::vector<json> & rows) {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::IoError, "cannot write " + path);
    }
    for (const auto & row : rows) {
        out << row.dump() << '\n';
    }
}

template <class T>
T field(const json & j, const char * key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception & e) {
        fail(ErrorKind::SchemaError, std::string("field ") + key + ": " + e.what());
    }
}

// Source/summary pair awaiting annotation.
struct Pair {
    std::string id;
    corpus::SourceDocument doc;
    corpus::GeneratedSummary summary;
};

json pair_to_json(const Pair & p) {
    return {{"id", p.id},
            {"doc_id", p.doc.id},
            {"dataset_tag", p.doc.dataset_tag},
            {"generator_tag", p.summary.generator_tag},
            {"source_text", p.doc.text},
            {"summary_text", p.summary.text}};
}

Pair pair_from_json(const json & j) {
    Pair p;
    p.id = field<std::string>(j, "id");
    p.doc.id = field<std::string>(j, "doc_id");
    p.doc.dataset_tag = field<std::string>(j, "dataset_tag");
    p.doc.text = field<std::string>(j, "source_text");
    p.summary.doc_id = p.doc.id;
    p.summary.generator_tag = field<std::string>(j, "generator_tag");
    p.summary.text = field<std::string>(j, "summary_text");
    return p;
}

align::WordTokenizer load_vocab(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open " + path);
    }
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        fail(ErrorKind::SchemaError, "vocabulary file is not a JSON object: " + path);
    }
    align::WordTokenizer tokenizer(field<std::vector<std::string>>(j, "vocabulary"));
    if (j.contains("vocab_tag") && j.at("vocab_tag") != tokenizer.vocab_tag()) {
        fail(ErrorKind::SchemaError, "vocabulary tag mismatch in " + path);
    }
    return tokenizer;
}

void save_vocab(const std::string & path, const align::WordTokenizer & tokenizer) {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::IoError, "cannot write " + path);
    }
    out << json{{"vocab_tag", tokenizer.vocab_tag()}, {"vocabulary", tokenizer.vocabulary()}}.dump(2) << '\n';
}

align::WordTokenizer fit_tokenizer(std::span<const corpus::LabeledSample> samples) {
    std::vector<std::string> texts;
    for (const auto & s : samples) {
        texts.push_back(s.doc.text);
        texts.push_back(s.summary.text);
    }
    return align::WordTokenizer::fit(texts);
}

void print_line(Context & ctx, const std::string & text) { *ctx.out << text << '\n'; }

// ---- commands -------------------------------------------------------------

void cmd_synth_gen(Context & ctx, const Flags & f) {
    auto & s = ctx.settings;
    const auto seed = s.get<std::uint64_t>("seed", f.seed, 0);
    const auto n_docs = s.get<std::size_t>("n_docs", f.n_docs, 1000);
    const auto rate = s.get<double>("hallucination_rate", f.hallucination_rate, 0.5);
    const auto dataset_tag = s.get<std::string>("dataset_tag", f.dataset_tag, "synth");
    const auto generator_tag = s.get<std::string>("generator_tag", f.generator_tag, "template");
    synth::GenOptions options;
    options.distinct_attributes = s.get<bool>("distinct_attributes", f.distinct_attributes, false);
    const auto samples = synth::gen_corpus(seed, n_docs, rate, options);

    std::vector<json> pairs;
    std::vector<corpus::LabeledSample> gold;
    for (const auto & sample : samples) {
        auto labeled = synth::to_labeled(sample, dataset_tag, generator_tag);
        pairs.push_back(pair_to_json({labeled.id, labeled.doc, labeled.summary}));
        gold.push_back(std::move(labeled));
    }
    write_jsonl(output_path(ctx, "pairs", "pairs.jsonl"), pairs);
    synth::write_ground_truth(output_path(ctx, "ground_truth", "ground_truth.jsonl"), samples);
    corpus::write_dataset(output_path(ctx, "gold_dataset", "gold.jsonl"), gold);
    std::size_t negatives = 0;
    for (const auto & g : gold) {
        negatives += g.label == corpus::Label::negative ? 1 : 0;
    }
    print_line(ctx, "generated " + std::to_string(samples.size()) + " samples (" + std::to_string(negatives) +
                        " negative) in " + ctx.out_dir);
}

void cmd_annotate(Context & ctx, const Flags & f) {
    auto & s = ctx.settings;
    const auto input = s.require("input", f.input);
    ctx.inputs["input"] = input;
    const auto mock_path = s.get_optional<std::string>("mock", f.mock);
    const auto endpoint_path = s.get_optional<std::string>("endpoint", f.endpoint);
    const auto workers = s.get<std::size_t>("workers", f.workers, 1);
    const auto max_retries = s.get<int>("max_retries", f.max_retries, 2);
    const auto model_tag = s.get<std::string>("model_tag", f.model_tag, "gpt-4o");
    if (mock_path.has_value() == endpoint_path.has_value()) {
        fail(ErrorKind::UsageError, "annotate needs exactly one of --mock or --endpoint");
    }

    std::vector<Pair> pairs;
    for (const auto & j : read_jsonl(input)) {
        pairs.push_back(pair_from_json(j));
    }
    std::unique_ptr<annotate::AnnotatorEndpoint> endpoint;
    if (mock_path) {
        ctx.inputs["mock"] = *mock_path;
        std::map<std::string, std::vector<std::string>> by_id;
        for (const auto & record : synth::read_ground_truth(*mock_path)) {
            by_id[record.id] = record.span_texts;
        }
        annotate::MockAnnotator::GroundTruth truth;
        for (const auto & p : pairs) {
            if (auto it = by_id.find(p.id); it != by_id.end()) {
                truth[{p.doc.text, p.summary.text}] = it->second;
            }
        }
        endpoint = annotate::mock_annotator(std::move(truth));
    } else {
        ctx.inputs["endpoint"] = *endpoint_path;
        endpoint = std::make_unique<annotate::HttpChatEndpoint>(annotate::EndpointConfig::load(*endpoint_path));
    }

    std::vector<annotate::AnnotationRequest> requests;
    for (const auto & p : pairs) {
        annotate::AnnotationRequest r;
        r.source = p.doc.text;
        r.summary = p.summary.text;
        r.model_tag = model_tag;
        r.max_retries = max_retries;
        requests.push_back(std::move(r));
    }
    const auto outcomes = annotate::annotate_batch(requests, *endpoint, workers);
    std::vector<json> annotated;
    std::vector<json> failures;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto & o = outcomes[i];
        if (o.result) {
            json row = pair_to_json(pairs[i]);
            row["reasoning"] = o.result->annotation.reasoning;
            row["spans"] = o.result->annotation.spans;
            row["attempts"] = o.result->attempts;
            row["raw_response"] = o.result->raw_response;
            annotated.push_back(std::move(row));
        } else {
            failures.push_back({{"id", pairs[i].id},
                                {"error", std::string(to_string(o.error.value_or(ErrorKind::AnnotationFailed)))},
                                {"message", o.error_message}});
        }
    }
    write_jsonl(output_path(ctx, "annotations", "annotations.jsonl"), annotated);
    write_jsonl(output_path(ctx, "failures", "failures.jsonl"), failures);
    print_line(ctx, "annotated " + std::to_string(annotated.size()) + " of " + std::to_string(pairs.size()) +
                        " pairs, " + std::to_string(failures.size()) + " failed");
}

void cmd_build(Context & ctx, const Flags & f) {
    auto & s = ctx.settings;
    const auto input = s.require("input", f.input);
    ctx.inputs["input"] = input;
    std::vector<corpus::LabeledSample> samples;
    for (const auto & j : read_jsonl(input)) {
        const auto p = pair_from_json(j);
        corpus::SpanAnnotation annotation{field<std::string>(j, "reasoning"),
                                          field<std::vector<std::string>>(j, "spans")};
        auto sample = corpus::classify_sample(p.doc, p.summary, annotation);
        corpus::validate(sample);
        samples.push_back(std::move(sample));
    }
    if (samples.empty()) {
        fail(ErrorKind::EmptyDataset, "no annotated samples in " + input);
    }
    const auto tokenizer = fit_tokenizer(samples);
    corpus::write_dataset(output_path(ctx, "dataset", "dataset.jsonl"), samples);
    save_vocab(output_path(ctx, "vocab", "vocab.json"), tokenizer);
    print_line(ctx, "built " + std::to_string(samples.size()) + " samples, tokenizer " + tokenizer.vocab_tag());
}

void cmd_stats(Context & ctx, const Flags & f) {
    auto & s = ctx.settings;
    const auto dataset = s.require("dataset", f.dataset);
    ctx.inputs["dataset"] = dataset;
    const auto vocab = s.get_optional<std::string>("vocab", f.vocab);
    const auto samples = corpus::read_dataset(dataset);
    std::optional<align::WordTokenizer> tokenizer;
    if (vocab) {
        ctx.inputs["vocab"] = *vocab;
        tokenizer.emplace(load_vocab(*vocab));
    } else {
        tokenizer.emplace(fit_tokenizer(samples));
    }
    const auto stats = corpus::compute_stats(samples, *tokenizer);
    std::ostringstream table;
    corpus::print_stats(table, stats);
    *ctx.out << table.str();
    if (!ctx.out_dir.empty()) {
        std::ofstream out(output_path(ctx, "stats", "stats.txt"));
        out << table.str();
    }
}

trainer::TrainingConfig training_config(Settings & s, const Flags & f) {
    trainer::TrainingConfig c;
    c.method = trainer::parse_method(s.get<std::string>("method", f.method, "sft"));
    c.epsilon = s.get<double>("epsilon", f.epsilon, 0.0);
    c.learning_rate = s.get<double>("learning_rate", f.learning_rate, c.learning_rate);
    c.warmup_ratio = s.get<double>("warmup_ratio", f.warmup_ratio, c.warmup_ratio);
    c.batch_size = s.get<std::size_t>("batch_size", f.batch_size, c.batch_size);
    c.epochs = s.get<std::size_t>("epochs", f.epochs, c.epochs);
    c.weight_decay = s.get<double>("weight_decay", f.weight_decay, c.weight_decay);
    c.seed = s.get<std::uint64_t>("seed", f.seed, c.seed);
    c.beta1 = s.get<double>("beta1", f.beta1, c.beta1);
    c.beta2 = s.get<double>("beta2", f.beta2, c.beta2);
    c.adam_epsilon = s.get<double>("adam_epsilon", f.adam_epsilon, c.adam_epsilon);
    if (const auto clip = s.get_optional<double>("clip_grad_norm", f.clip_grad_norm)) {
        c.clip_gradients = true;
        c.max_grad_norm = *clip;
    }
    c.max_steps = s.get_optional<std::size_t>("max_steps", f.max_steps);
    const auto negative_loss = s.get<std::string>("tv_negative_loss", f.tv_negative_loss, "masked");
    if (negative_loss == "masked") {
        c.tv_negative_loss = trainer::NegativeLoss::masked;
    } else if (negative_loss == "full") {
        c.tv_negative_loss = trainer::NegativeLoss::full_summary;
    } else {
        fail(ErrorKind::UsageError, "--tv-negative-loss must be masked or full");
    }
    c.validate();
    return c;
}

model::Checkpoint checkpoint_of(const model::Model & m, const align::WordTokenizer & tokenizer) {
    return {m.config(), m.get_parameters(), tokenizer.vocab_tag(), tokenizer.vocabulary()};
}

align::WordTokenizer tokenizer_of(const model::Checkpoint & c) {
    align::WordTokenizer tokenizer(c.vocabulary);
    if (tokenizer.vocab_tag() != c.vocab_tag) {
        fail(ErrorKind::SchemaError, "checkpoint vocabulary does not match its tag");
    }
    return tokenizer;
}

struct Loaded {
    model::Model model;
    align::WordTokenizer tokenizer;
};

Loaded load_model(const std::string & path) {
    const auto c = model::load_checkpoint(path);
    return {model::model_from_checkpoint(c), tokenizer_of(c)};
}

std::string save_model(Context & ctx, const std::string & key, const std::string & name, const model::Model & m,
                       const align::WordTokenizer & tokenizer) {
    const auto checkpoint = checkpoint_of(m, tokenizer);
    model::save_checkpoint(output_path(ctx, key, name), checkpoint);
    return model::parameter_hash(checkpoint.parameters);
}

// Base model from --base, or a fresh one sized by the model flags.
Loaded base_model(Context & ctx, const Flags & f, const std::vector<corpus::LabeledSample> & samples,
                  std::uint64_t seed) {
    auto & s = ctx.settings;
    if (const auto base = s.get_optional<std::string>("base", f.base)) {
        ctx.inputs["base"] = *base;
        return load_model(*base);
    }
    align::WordTokenizer tokenizer = [&] {
        if (const auto vocab = s.get_optional<std::string>("vocab", f.vocab)) {
            ctx.inputs["vocab"] = *vocab;
            return load_vocab(*vocab);
        }
        return fit_tokenizer(samples);
    }();
    model::ModelConfig config;
    config.vocab_size = tokenizer.vocab_size();
    config.context_length = s.get<int>("context_length", f.context_length, config.context_length);
    config.n_layers = s.get<int>("n_layers", f.n_layers, config.n_layers);
    config.d_model = s.get<int>("d_model", f.d_model, config.d_model);
    config.n_heads = s.get<int>("n_heads", f.n_heads, config.n_heads);
    config.seed = seed;
    config.validate();
    return {model::Model(config), std::move(tokenizer)};
}

void cmd_train(Context & ctx, const Flags & f) {
    auto & s = ctx.settings;
    const auto dataset = s.require("dataset", f.dataset);
    ctx.inputs["dataset"] = dataset;
    const auto config = training_config(s, f);
    const auto samples = corpus::read_dataset(dataset);
    auto loaded = base_model(ctx, f, samples, config.seed);
    const auto context = static_cast<std::size_t>(loaded.model.config().context_length);
    const auto data = trainer::make_training_samples(samples, loaded.tokenizer, context);

    if (config.method == trainer::Method::tv) {
        const auto run = trainer::train_task_vector_pipeline(loaded.model, data, config);
        save_model(ctx, "base_checkpoint", "base.ckpt", loaded.model, loaded.tokenizer);
        model::Model positive = loaded.model;
        positive.set_parameters(run.positive_fine_tuned);
        model::Model negative = loaded.model;
        negative.set_parameters(run.negative_fine_tuned);
        save_model(ctx, "positive_checkpoint", "positive.ckpt", positive, loaded.tokenizer);
        save_model(ctx, "negative_checkpoint", "negative.ckpt", negative, loaded.tokenizer);
        run.positive_log.write_csv(output_path(ctx, "positive_log", "positive_log.csv"));
        run.negative_log.write_csv(output_path(ctx, "negative_log", "negative_log.csv"));
        const auto hash = save_model(ctx, "checkpoint", "model.ckpt", run.merged, loaded.tokenizer);
        print_line(ctx, "checkpoint " + ctx.outputs["checkpoint"].get<std::string>() + " hash " + hash);
        return;
    }
    auto log = trainer::train(loaded.model, data, config);
    const auto hash = save_model(ctx, "checkpoint", "model.ckpt", loaded.model, loaded.tokenizer);
    log.checkpoint = ctx.outputs["checkpoint"].get<std::string>();
    log.write_csv(output_path(ctx, "run_log", "run_log.csv"));
    const double last = log.steps.empty() ? 0.0 : log.steps.back().loss;
    print_line(ctx, "trained " + std::to_string(log.steps.size()) + " steps, final loss " + std::to_string(last));
    print_line(ctx, "checkpoint " + log.checkpoint + " hash " + hash);
}

void cmd_merge(Context & ctx, const Flags & f) {
    auto & s = ctx.settings;
    const auto base = s.require("base", f.base);
    const auto positive = s.require("positive", f.positive);
    const auto negative = s.require("negative", f.negative);
    const auto epsilon = s.get<double>("epsilon", f.epsilon, 0.3);
    ctx.inputs = {{"base", base}, {"positive", positive}, {"negative", negative}};
    const auto pre = model::load_checkpoint(base);
    const auto pos = model::load_checkpoint(positive);
    const auto neg = model::load_checkpoint(negative);
    if (pos.vocab_tag != pre.vocab_tag || neg.vocab_tag != pre.vocab_tag) {
        fail(ErrorKind::ShapeMismatch, "checkpoints use different vocabularies");
    }
    const auto merged_parameters = losses::merge_task_vectors(
        pre.parameters, losses::compute_task_vector(pos.parameters, pre.parameters),
        losses::compute_task_vector(neg.parameters, pre.parameters), epsilon);
    model::Model merged = model::model_from_checkpoint(pre);
    merged.set_parameters(merged_parameters);
    const auto hash = save_model(ctx, "checkpoint", "model.ckpt", merged, tokenizer_of(pre));
    print_line(ctx, "checkpoint " + ctx.outputs["checkpoint"].get<std::string>() + " hash " + hash);
}

model::GenerationStrategy strategy_of(Settings & s, const Flags & f, std::uint64_t seed) {
    const auto name = s.get<std::string>("strategy", f.strategy, "greedy");
    if (name == "greedy") {
        return model::GenerationStrategy::greedy();
    }
    if (name == "nucleus") {
        return model::GenerationStrategy::nucleus(s.get<double>("top_p", f.top_p, 0.7),
                                                  s.get<double>("temperature", f.temperature, 1.0), seed);
    }
    fail(ErrorKind::UsageError, "--strategy must be greedy or nucleus");
}

// One test document per distinct document id, in first-seen order.
std::vector<eval::TestDocument> documents_of(const std::vector<corpus::LabeledSample> & samples) {
    std::vector<eval::TestDocument> docs;
    std::map<std::string, bool> seen;
    for (const auto & sample : samples) {
        if (!seen[sample.doc.id]) {
            seen[sample.doc.id] = true;
            docs.push_back({sample.doc.id, sample.doc.text});
        }
    }
    return docs;
}

void cmd_eval(Context & ctx, const Flags & f) {
    auto & s = ctx.settings;
    const auto checkpoint = s.require("checkpoint", f.checkpoint);
    const auto dataset = s.require("dataset", f.dataset);
    ctx.inputs = {{"checkpoint", checkpoint}, {"dataset", dataset}};
    const auto seed = s.get<std::uint64_t>("seed", f.seed, 0);
    const auto scorer = eval::make_scorer(s.get<std::string>("scorer", f.scorer, "oracle"));
    const auto strategy = strategy_of(s, f, seed);
    const auto loaded = load_model(checkpoint);
    const auto docs = documents_of(corpus::read_dataset(dataset));
    const auto report = eval::evaluate_model(loaded.model, loaded.tokenizer, docs, *scorer, strategy);
    std::vector<json> rows;
    for (const auto & sample : report.samples) {
        rows.push_back({{"id", sample.id},
                        {"summary", sample.summary},
                        {"score", sample.score.value},
                        {"statements", sample.score.statements},
                        {"unsupported", sample.score.unsupported}});
    }
    write_jsonl(output_path(ctx, "samples", "samples.jsonl"), rows);
    const json summary{{"scorer", scorer->name()},
                       {"documents", report.samples.size()},
                       {"aggregate_score", report.aggregate},
                       {"hallucinated_fact_rate", report.hallucinated_fact_rate},
                       {"statements", report.statements}};
    std::ofstream(output_path(ctx, "report", "report.json")) << summary.dump(2) << '\n';
    char buf[160];
    std::snprintf(buf, sizeof buf, "documents %zu aggregate_score %.6f hallucinated_fact_rate %.6f",
                  report.samples.size(), report.aggregate, report.hallucinated_fact_rate);
    print_line(ctx, buf);
}

std::vector<double> parse_epsilons(const std::string & text) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception &) {
            fail(ErrorKind::UsageError, "--epsilons must be a comma-separated list of numbers");
        }
    }
    if (out.empty()) {
        fail(ErrorKind::UsageError, "--epsilons is empty");
    }
    return out;
}

void cmd_sweep(Context & ctx, const Flags & f) {
    auto & s = ctx.settings;
    const auto dataset = s.require("dataset", f.dataset);
    const auto test = s.require("test", f.test);
    const auto base = s.require("base", f.base);
    ctx.inputs = {{"dataset", dataset}, {"test", test}, {"base", base}};
    auto config = training_config(s, f);
    const auto epsilons = parse_epsilons(s.get<std::string>("epsilons", f.epsilons, "0.01,0.1,0.3,0.5,0.7"));
    const auto scorer = eval::make_scorer(s.get<std::string>("scorer", f.scorer, "oracle"));
    const auto loaded = load_model(base);
    const auto samples = corpus::read_dataset(dataset);
    const auto data = trainer::make_training_samples(samples, loaded.tokenizer,
                                                     static_cast<std::size_t>(loaded.model.config().context_length));
    const auto docs = documents_of(corpus::read_dataset(test));
    const auto rows =
        eval::epsilon_sweep(loaded.model, loaded.tokenizer, data, docs, config.method, epsilons, *scorer, config);
    eval::write_sweep_csv(output_path(ctx, "sweep", "sweep.csv"), rows);
    std::ostringstream table;
    eval::write_sweep_csv(table, rows);
    *ctx.out << table.str();
}

void print_error(std::ostream & err, std::string_view kind, std::string_view message) {
    err << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

} // namespace

int run(const std::vector<std::string> & args, std::ostream & out, std::ostream & err) {
    CLI::App app{"Span-level hallucination fine-tuning toolkit", "spanft"};
    app.set_version_flag("--version", kToolkitVersion);
    app.require_subcommand(1);
    Flags f;

    auto common = [&](CLI::App * cmd, bool needs_out) {
        cmd->add_option("--config", f.config, "JSON config file; keys are option names with underscores");
        cmd->add_option("--seed", f.seed, "seed for every random choice");
        auto * o = cmd->add_option("--out", f.out, "run directory for all outputs");
        if (!needs_out) {
            o->description("optional run directory for outputs");
        }
    };
    auto training = [&](CLI::App * cmd) {
        cmd->add_option("--method", f.method, "sft, ga, ul, tv or lm");
        cmd->add_option("--epsilon", f.epsilon, "weight of negative samples in [0, 1]");
        cmd->add_option("--learning-rate", f.learning_rate, "peak learning rate (default 5e-5)");
        cmd->add_option("--warmup-ratio", f.warmup_ratio, "fraction of steps used for warmup (default 0.01)");
        cmd->add_option("--batch-size", f.batch_size, "samples per step (default 16)");
        cmd->add_option("--epochs", f.epochs, "passes over the data (default 1)");
        cmd->add_option("--weight-decay", f.weight_decay, "decoupled weight decay (default 0)");
        cmd->add_option("--beta1", f.beta1, "first moment coefficient (default 0.9)");
        cmd->add_option("--beta2", f.beta2, "second moment coefficient (default 0.999)");
        cmd->add_option("--adam-epsilon", f.adam_epsilon, "optimizer epsilon (default 1e-8)");
        cmd->add_option("--clip-grad-norm", f.clip_grad_norm, "clip the gradient norm (off by default)");
        cmd->add_option("--max-steps", f.max_steps, "stop after this many optimizer steps");
        cmd->add_option("--tv-negative-loss", f.tv_negative_loss, "masked or full (task-vector negative branch)");
    };

    auto * synth_gen = app.add_subcommand("synth-gen", "generate a synthetic corpus with known hallucinations");
    common(synth_gen, true);
    synth_gen->add_option("--n-docs", f.n_docs, "number of samples (default 1000)");
    synth_gen->add_option("--hallucination-rate", f.hallucination_rate, "fraction of perturbed summaries (default 0.5)");
    synth_gen->add_option("--dataset-tag", f.dataset_tag, "dataset tag (default synth)");
    synth_gen->add_option("--generator-tag", f.generator_tag, "generator tag (default template)");
    synth_gen->add_option("--distinct-attributes", f.distinct_attributes, "each attribute at most once per document");

    auto * annotate_cmd = app.add_subcommand("annotate", "annotate source/summary pairs with hallucinated spans");
    common(annotate_cmd, true);
    annotate_cmd->add_option("--input", f.input, "pairs file (JSONL)");
    annotate_cmd->add_option("--endpoint", f.endpoint, "annotator endpoint config (JSON)");
    annotate_cmd->add_option("--mock", f.mock, "answer from a synthetic ground-truth file instead of an endpoint");
    annotate_cmd->add_option("--workers", f.workers, "concurrent requests (default 1)");
    annotate_cmd->add_option("--max-retries", f.max_retries, "repair attempts per pair (default 2)");
    annotate_cmd->add_option("--model-tag", f.model_tag, "annotator model name (default gpt-4o)");

    auto * build = app.add_subcommand("build", "turn annotations into a labeled dataset and vocabulary");
    common(build, true);
    build->add_option("--input", f.input, "annotations file (JSONL)");

    auto * stats = app.add_subcommand("stats", "print per-group counts and hallucinated token ratios");
    common(stats, false);
    stats->add_option("--dataset", f.dataset, "labeled dataset (JSONL)");
    stats->add_option("--vocab", f.vocab, "vocabulary file; fitted on the dataset when absent");

    auto * train = app.add_subcommand("train", "fine-tune a model");
    common(train, true);
    training(train);
    train->add_option("--dataset", f.dataset, "labeled training dataset (JSONL)");
    train->add_option("--base", f.base, "starting checkpoint; a fresh model when absent");
    train->add_option("--vocab", f.vocab, "vocabulary for a fresh model");
    train->add_option("--context-length", f.context_length, "fresh model context length (default 80)");
    train->add_option("--n-layers", f.n_layers, "fresh model layers (default 2)");
    train->add_option("--d-model", f.d_model, "fresh model width (default 32)");
    train->add_option("--n-heads", f.n_heads, "fresh model attention heads (default 4)");

    auto * merge = app.add_subcommand("merge", "combine task vectors of two fine-tunes");
    common(merge, true);
    merge->add_option("--base", f.base, "pre-trained checkpoint");
    merge->add_option("--positive", f.positive, "checkpoint fine-tuned on positives");
    merge->add_option("--negative", f.negative, "checkpoint fine-tuned on negatives");
    merge->add_option("--epsilon", f.epsilon, "weight of the negative task vector (default 0.3)");

    auto * eval_cmd = app.add_subcommand("eval", "generate summaries and score their faithfulness");
    common(eval_cmd, true);
    eval_cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint");
    eval_cmd->add_option("--dataset", f.dataset, "dataset whose documents are summarized");
    eval_cmd->add_option("--scorer", f.scorer, "oracle (default)");
    eval_cmd->add_option("--strategy", f.strategy, "greedy (default) or nucleus");
    eval_cmd->add_option("--top-p", f.top_p, "nucleus mass (default 0.7)");
    eval_cmd->add_option("--temperature", f.temperature, "nucleus temperature (default 1.0)");

    auto * sweep = app.add_subcommand("sweep", "train and evaluate one model per epsilon");
    common(sweep, true);
    training(sweep);
    sweep->add_option("--dataset", f.dataset, "labeled training dataset (JSONL)");
    sweep->add_option("--test", f.test, "dataset whose documents are summarized");
    sweep->add_option("--base", f.base, "pre-trained checkpoint");
    sweep->add_option("--epsilons", f.epsilons, "comma-separated list (default 0.01,0.1,0.3,0.5,0.7)");
    sweep->add_option("--scorer", f.scorer, "oracle (default)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp &) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForAllHelp &) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion &) {
        out << kToolkitVersion << '\n';
        return 0;
    } catch (const CLI::ParseError & e) {
        print_error(err, to_string(ErrorKind::UsageError), e.what());
        return exit_code(ErrorKind::UsageError);
    }

    CLI::App * chosen = app.get_subcommands().front();
    const std::string command = chosen->get_name();
    Context ctx;
    ctx.out = &out;
    try {
        if (f.config) {
            ctx.settings.load_config(*f.config);
            ctx.inputs["config"] = *f.config;
        }
        const bool needs_out = command != "stats";
        if (auto dir = ctx.settings.get_optional<std::string>("out", f.out)) {
            ctx.out_dir = *dir;
        } else if (needs_out) {
            fail(ErrorKind::UsageError, "missing required option --out");
        }
        if (!ctx.out_dir.empty()) {
            make_dir(ctx.out_dir);
        }
        if (command == "synth-gen") {
            cmd_synth_gen(ctx, f);
        } else if (command == "annotate") {
            cmd_annotate(ctx, f);
        } else if (command == "build") {
            cmd_build(ctx, f);
        } else if (command == "stats") {
            cmd_stats(ctx, f);
        } else if (command == "train") {
            cmd_train(ctx, f);
        } else if (command == "merge") {
            cmd_merge(ctx, f);
        } else if (command == "eval") {
            cmd_eval(ctx, f);
        } else if (command == "sweep") {
            cmd_sweep(ctx, f);
        }
        if (!ctx.out_dir.empty()) {
            write_manifest(ctx, command);
        }
    } catch (const Error & e) {
        print_error(err, to_string(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const std::exception & e) {
        print_error(err, to_string(ErrorKind::IoError), e.what());
        return exit_code(ErrorKind::IoError);
    }
    return 0;
}

int main(int argc, char ** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace spanft::cli
