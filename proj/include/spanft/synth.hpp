#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spanft/corpus.hpp"
#include "spanft/span.hpp"

// Synthetic fact corpora with injected, exactly-known hallucinations.
//
// Every sentence follows the template "<Entity>'s <attribute> is <value>."
// over closed vocabularies, so whether a statement is entailed by the
// document facts can be decided exactly.
namespace spanft::synth {

struct FactRecord {
    std::string entity;
    std::string attribute;
    std::string value;

    friend auto operator<=>(const FactRecord &, const FactRecord &) = default;
};

struct Attribute {
    std::string name;
    std::vector<std::string> values;
};

struct Vocabulary {
    std::vector<std::string> entities;
    std::vector<Attribute> attributes;

    const Attribute * find_attribute(std::string_view name) const;
    bool has_entity(std::string_view name) const;
};

const Vocabulary & default_vocabulary();

enum class PerturbationKind { none, value_swap, entity_swap, fabricated_fact };

std::string_view to_string(PerturbationKind kind) noexcept;
PerturbationKind parse_perturbation_kind(std::string_view text);

struct SynthSample {
    std::string id;
    std::vector<FactRecord> facts;           // document facts, in rendered order
    std::string document_text;
    std::vector<FactRecord> summary_facts;   // facts the summary restates before perturbation
    std::string summary_text;
    std::vector<CharSpan> true_spans;
    std::vector<PerturbationKind> perturbations;

    PerturbationKind perturbation_kind() const noexcept {
        return perturbations.empty() ? PerturbationKind::none : perturbations.front();
    }

    friend bool operator==(const SynthSample &, const SynthSample &) = default;
};

std::string render_fact(const FactRecord & fact);
std::string render_facts(std::span<const FactRecord> facts);

// One sentence of a templated text. `fact` is set when the sentence parses
// under the template grammar with known vocabulary words.
struct Statement {
    CharSpan sentence;  // including the final '.', when present
    std::optional<FactRecord> fact;
    CharSpan entity_range;
    CharSpan value_range;
};

std::vector<Statement> parse_statements(std::string_view text, const Vocabulary & vocabulary = default_vocabulary());

struct Perturbation {
    std::string text;
    CharSpan span;
};

// Introduces one unfaithful statement into a templated summary. The returned
// span covers exactly the replaced or appended substring. value_swap prefers a
// value another document entity holds for the same attribute, entity_swap
// prefers an entity of the document. Throws
// NoPerturbableSlot when the summary renders no facts.
Perturbation inject_hallucination(std::string_view summary_text, std::span<const FactRecord> facts,
                                  PerturbationKind kind, std::uint64_t seed,
                                  const Vocabulary & vocabulary = default_vocabulary());

struct GenOptions {
    std::size_t min_facts = 3;
    std::size_t max_facts = 5;
    std::size_t min_entities = 2;
    std::size_t max_entities = 3;
    std::size_t min_summary_facts = 2;
    std::size_t max_summary_facts = 3;
    std::size_t perturbations_per_negative = 1;
    // Each attribute occurs at most once per document.
    bool distinct_attributes = false;
    // Relative weights of value_swap, entity_swap, fabricated_fact.
    double value_swap_weight = 1.0;
    double entity_swap_weight = 1.0;
    double fabricated_fact_weight = 1.0;
    std::string id_prefix = "synth";
};

// Pure function of its arguments. Each sample is perturbed independently
// with probability `hallucination_rate`.
std::vector<SynthSample> gen_corpus(std::uint64_t seed, std::size_t n_docs, double hallucination_rate,
                                    const GenOptions & options = {},
                                    const Vocabulary & vocabulary = default_vocabulary());

corpus::LabeledSample to_labeled(const SynthSample & sample, std::string_view dataset_tag = "synth",
                                 std::string_view generator_tag = "template");

// Ground-truth sidecar: one JSON object per line with id, perturbation kinds,
// spans, span texts and the document facts.
void write_ground_truth(const std::string & path, std::span<const SynthSample> samples);

struct GroundTruthRecord {
    std::string id;
    std::vector<PerturbationKind> perturbations;
    std::vector<CharSpan> spans;
    std::vector<std::string> span_texts;
    std::vector<FactRecord> facts;
};

std::vector<GroundTruthRecord> read_ground_truth(const std::string & path);

// Exact entailment check against the closed fact set.
bool entailed(const FactRecord & statement, std::span<const FactRecord> facts);

} // namespace spanft::synth
