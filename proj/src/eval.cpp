#include "spanft/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

#include "spanft/error.hpp"
#include "spanft/rng.hpp"

namespace spanft::eval {

OracleResult oracle_score(std::span<const synth::FactRecord> facts, std::string_view generated_summary,
                          const synth::Vocabulary & vocabulary) {
    OracleResult out;
    for (const auto & statement : synth::parse_statements(generated_summary, vocabulary)) {
        ++out.statements;
        if (!statement.fact || !synth::entailed(*statement.fact, facts)) {
            ++out.unsupported;
        }
    }
    out.zero_statements = out.statements == 0;
    if (out.statements > 0) {
        out.hallucinated_fact_rate = static_cast<double>(out.unsupported) / static_cast<double>(out.statements);
        out.score = 1.0 - out.hallucinated_fact_rate;
    }
    return out;
}

OracleScorer::OracleScorer(const synth::Vocabulary & vocabulary) : vocabulary_(&vocabulary) {}

Score OracleScorer::score(std::string_view source, std::string_view summary) const {
    std::vector<synth::FactRecord> facts;
    for (const auto & statement : synth::parse_statements(source, *vocabulary_)) {
        if (statement.fact) {
            facts.push_back(*statement.fact);
        }
    }
    const auto r = oracle_score(facts, summary, *vocabulary_);
    return {r.score, r.statements, r.unsupported};
}

Score ExternalScorer::score(std::string_view, std::string_view) const {
    fail(ErrorKind::NotImplemented, "scorer " + name() + " has no bundled implementation");
}

std::string ExternalScorer::name() const {
    switch (kind_) {
        case Kind::g_eval: return "g-eval";
        case Kind::align_score: return "alignscore";
        case Kind::bart_score: return "bartscore";
    }
    return "external";
}

std::unique_ptr<FaithfulnessScorer> make_scorer(std::string_view name) {
    if (name == "oracle") {
        return std::make_unique<OracleScorer>();
    }
    if (name == "g-eval") {
        return std::make_unique<ExternalScorer>(ExternalScorer::Kind::g_eval);
    }
    if (name == "alignscore") {
        return std::make_unique<ExternalScorer>(ExternalScorer::Kind::align_score);
    }
    if (name == "bartscore") {
        return std::make_unique<ExternalScorer>(ExternalScorer::Kind::bart_score);
    }
    fail(ErrorKind::InvalidArgument, "unknown scorer: " + std::string(name));
}

std::vector<TestDocument> test_documents(std::span<const synth::SynthSample> samples) {
    std::vector<TestDocument> out;
    out.reserve(samples.size());
    for (const auto & s : samples) {
        out.push_back({s.id, s.document_text});
    }
    return out;
}

ScoreReport evaluate_model(const model::Model & model, const align::WordTokenizer & tokenizer,
                           std::span<const TestDocument> test_set, const FaithfulnessScorer & scorer,
                           const model::GenerationStrategy & strategy) {
    ScoreReport report;
    const auto context = static_cast<std::size_t>(model.config().context_length);
    std::size_t unsupported = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        const auto & doc = test_set[i];
        const auto prompt = trainer::make_prompt(doc.source, tokenizer);
        const std::size_t room = prompt.size() < context ? context - prompt.size() : 0;
        model::GenerationStrategy per_doc = strategy;
        per_doc.seed = Rng::mix(strategy.seed, i);
        auto ids = model::generate(model, prompt, room, per_doc, align::WordTokenizer::kEosId);
        std::vector<int> generated(ids.begin() + static_cast<std::ptrdiff_t>(prompt.size()), ids.end());
        if (!generated.empty() && generated.back() == align::WordTokenizer::kEosId) {
            generated.pop_back();
        }
        SampleScore sample{doc.id, tokenizer.decode(generated), {}};
        sample.score = scorer.score(doc.source, sample.summary);
        total += sample.score.value;
        report.statements += sample.score.statements;
        unsupported += sample.score.unsupported;
        report.samples.push_back(std::move(sample));
    }
    if (!test_set.empty()) {
        report.aggregate = total / static_cast<double>(test_set.size());
    }
    if (report.statements > 0) {
        report.hallucinated_fact_rate = static_cast<double>(unsupported) / static_cast<double>(report.statements);
    }
    return report;
}

std::vector<double> default_epsilons() { return {0.01, 0.1, 0.3, 0.5, 0.7}; }

std::vector<SweepRow> epsilon_sweep(const model::Model & base, const align::WordTokenizer & tokenizer,
                                    std::span<const losses::TrainingSample> train_set,
                                    std::span<const TestDocument> test_set, trainer::Method method,
                                    std::span<const double> epsilons, const FaithfulnessScorer & scorer,
                                    const trainer::TrainingConfig & config) {
    for (double e : epsilons) {
        losses::check_epsilon(e);
    }
    std::vector<SweepRow> rows;
    for (double epsilon : epsilons) {
        trainer::TrainingConfig c = config;
        c.method = method;
        c.epsilon = epsilon;
        SweepRow row{method, epsilon, c.seed, std::numeric_limits<double>::quiet_NaN(),
                     std::numeric_limits<double>::quiet_NaN(), "ok"};
        try {
            std::optional<model::Model> tuned;
            if (method == trainer::Method::tv) {
                tuned.emplace(trainer::train_task_vector_pipeline(base, train_set, c).merged);
            } else {
                tuned.emplace(base);
                trainer::train(*tuned, train_set, c);
            }
            const auto report = evaluate_model(*tuned, tokenizer, test_set, scorer);
            row.aggregate_score = report.aggregate;
            row.hallucinated_fact_rate = report.hallucinated_fact_rate;
        } catch (const Error & e) {
            if (e.kind() != ErrorKind::NaNLoss) {
                throw;
            }
            row.status = "nan";
        }
        rows.push_back(row);
    }
    return rows;
}

void write_sweep_csv(std::ostream & out, std::span<const SweepRow> rows) {
    out << "method,epsilon,seed,aggregate_score,hallucinated_fact_rate,status\n";
    char buf[256];
    for (const auto & r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%llu,%.17g,%.17g,%s\n", std::string(trainer::to_string(r.method)).c_str(),
                      r.epsilon, static_cast<unsigned long long>(r.seed), r.aggregate_score,
                      r.hallucinated_fact_rate, r.status.c_str());
        out << buf;
    }
}

void write_sweep_csv(const std::string & path, std::span<const SweepRow> rows) {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::IoError, "cannot write " + path);
    }
    write_sweep_csv(out, rows);
}

} // namespace spanft::eval
