#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spanft/span.hpp"

namespace spanft::align {
class Tokenizer;
}

// Annotated summary corpora: parsing annotator output, locating spans,
// positive/negative classification, statistics and the JSONL dataset format.
namespace spanft::corpus {

struct SourceDocument {
    std::string id;
    std::string dataset_tag;
    std::string text;

    friend bool operator==(const SourceDocument &, const SourceDocument &) = default;
};

struct GeneratedSummary {
    std::string doc_id;
    std::string generator_tag;
    std::string text;

    friend bool operator==(const GeneratedSummary &, const GeneratedSummary &) = default;
};

struct SpanAnnotation {
    std::string reasoning;
    std::vector<std::string> spans;

    friend bool operator==(const SpanAnnotation &, const SpanAnnotation &) = default;
};

enum class Label { positive, negative };

std::string_view to_string(Label label) noexcept;
Label parse_label(std::string_view text);

struct LabeledSample {
    std::string id;
    SourceDocument doc;
    GeneratedSummary summary;
    Label label = Label::positive;
    std::vector<CharSpan> char_spans;  // code-point offsets into summary.text
    std::string annotator_reasoning;

    friend bool operator==(const LabeledSample &, const LabeledSample &) = default;
};

// Throws SchemaError when an invariant of LabeledSample does not hold.
void validate(const LabeledSample & sample);

inline constexpr std::string_view kReasoningMarker = "[[ ## reasoning ## ]]";
inline constexpr std::string_view kSpansMarker = "[[ ## hallucinated_spans ## ]]";
inline constexpr std::string_view kCompletedMarker = "[[ ## completed ## ]]";

// Greedy left-to-right placement: each span is matched at its first occurrence
// starting at or after the end of the previous match.
std::vector<CharSpan> locate_spans(std::string_view summary_text, std::span<const std::string> spans);

SpanAnnotation parse_annotation_response(std::string_view raw, std::string_view summary_text);

LabeledSample classify_sample(const SourceDocument & doc, const GeneratedSummary & summary,
                              const SpanAnnotation & annotation);

struct GroupKey {
    std::string dataset_tag;
    std::string generator_tag;

    friend auto operator<=>(const GroupKey &, const GroupKey &) = default;
};

struct GroupStats {
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::optional<double> htr;  // absent when the group has no negatives
};

struct DatasetStats {
    std::map<GroupKey, GroupStats> groups;
    std::string tokenizer_tag;

    std::size_t total() const noexcept;
};

// Hallucinated-token ratio of one sample: |mask| / |tokens(summary)|.
double hallucinated_token_ratio(const LabeledSample & sample, const align::Tokenizer & tokenizer);

DatasetStats compute_stats(std::span<const LabeledSample> samples, const align::Tokenizer & tokenizer);

void print_stats(std::ostream & out, const DatasetStats & stats);

inline constexpr int kDatasetSchemaVersion = 1;

void write_dataset(std::ostream & out, std::span<const LabeledSample> samples);
std::vector<LabeledSample> read_dataset(std::istream & in);
void write_dataset(const std::string & path, std::span<const LabeledSample> samples);
std::vector<LabeledSample> read_dataset(const std::string & path);

} // namespace spanft::corpus
