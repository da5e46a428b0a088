#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spanft/align.hpp"
#include "spanft/losses.hpp"
#include "spanft/model.hpp"
#include "spanft/synth.hpp"
#include "spanft/trainer.hpp"

namespace spanft::eval {

struct Score {
    double value = 0.0;  // higher is more faithful
    std::size_t statements = 0;
    std::size_t unsupported = 0;
};

class FaithfulnessScorer {
public:
    virtual ~FaithfulnessScorer() = default;
    virtual Score score(std::string_view source, std::string_view summary) const = 0;
    virtual std::string name() const = 0;
};

struct OracleResult {
    double score = 1.0;
    double hallucinated_fact_rate = 0.0;
    std::size_t statements = 0;
    std::size_t unsupported = 0;
    bool zero_statements = true;
};

// Every sentence of the summary is a statement; one that does not parse under
// the template grammar counts as unsupported.
OracleResult oracle_score(std::span<const synth::FactRecord> facts, std::string_view generated_summary,
                          const synth::Vocabulary & vocabulary = synth::default_vocabulary());

// Reads the source facts off the templated source text.
class OracleScorer final : public FaithfulnessScorer {
public:
    explicit OracleScorer(const synth::Vocabulary & vocabulary = synth::default_vocabulary());
    Score score(std::string_view source, std::string_view summary) const override;
    std::string name() const override { return "oracle"; }

private:
    const synth::Vocabulary * vocabulary_;
};

// Adapters for learned judges. None is bundled; score() throws NotImplemented.
// BARTScore in particular is known to correlate poorly with faithfulness for
// models trained with these objectives, since they shift token likelihoods.
class ExternalScorer final : public FaithfulnessScorer {
public:
    enum class Kind { g_eval, align_score, bart_score };
    explicit ExternalScorer(Kind kind) : kind_(kind) {}
    Score score(std::string_view source, std::string_view summary) const override;
    std::string name() const override;

private:
    Kind kind_;
};

std::unique_ptr<FaithfulnessScorer> make_scorer(std::string_view name);

struct TestDocument {
    std::string id;
    std::string source;
};

struct SampleScore {
    std::string id;
    std::string summary;
    Score score;
};

struct ScoreReport {
    std::vector<SampleScore> samples;
    double aggregate = 0.0;               // mean per-sample score
    double hallucinated_fact_rate = 0.0;  // unsupported statements over all statements
    std::size_t statements = 0;
};

std::vector<TestDocument> test_documents(std::span<const synth::SynthSample> samples);

// Generates one summary per document and scores it against the source.
ScoreReport evaluate_model(const model::Model & model, const align::WordTokenizer & tokenizer,
                           std::span<const TestDocument> test_set, const FaithfulnessScorer & scorer,
                           const model::GenerationStrategy & strategy = model::GenerationStrategy::greedy());

struct SweepRow {
    trainer::Method method = trainer::Method::sft;
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    double aggregate_score = 0.0;
    double hallucinated_fact_rate = 0.0;
    std::string status;  // "ok" or "nan"
};

std::vector<double> default_epsilons();

// One fine-tune (or merge, for tv) of `base` per epsilon with a shared seed.
// A run aborted by NaNLoss is kept as a row with status "nan".
std::vector<SweepRow> epsilon_sweep(const model::Model & base, const align::WordTokenizer & tokenizer,
                                    std::span<const losses::TrainingSample> train_set,
                                    std::span<const TestDocument> test_set, trainer::Method method,
                                    std::span<const double> epsilons, const FaithfulnessScorer & scorer,
                                    const trainer::TrainingConfig & config);

void write_sweep_csv(std::ostream & out, std::span<const SweepRow> rows);
void write_sweep_csv(const std::string & path, std::span<const SweepRow> rows);

} // namespace spanft::eval
