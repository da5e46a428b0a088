#include "spanft/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>

#include "json.hpp"
#include "spanft/align.hpp"
#include "spanft/error.hpp"
#include "spanft/utf8.hpp"

namespace spanft::corpus {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

std::size_t require_marker(std::string_view raw, std::string_view marker, std::size_t from) {
    const auto pos = raw.find(marker, from);
    if (pos == std::string_view::npos) {
        fail(ErrorKind::MissingMarker, "missing marker " + std::string(marker));
    }
    return pos;
}

} // namespace

std::string_view to_string(Label label) noexcept {
    return label == Label::positive ? "positive" : "negative";
}

Label parse_label(std::string_view text) {
    if (text == "positive") {
        return Label::positive;
    }
    if (text == "negative") {
        return Label::negative;
    }
    fail(ErrorKind::SchemaError, "unknown label: " + std::string(text));
}

void validate(const LabeledSample & sample) {
    if (sample.doc.text.empty()) {
        fail(ErrorKind::SchemaError, sample.id + ": empty source text");
    }
    if (sample.summary.text.empty()) {
        fail(ErrorKind::SchemaError, sample.id + ": empty summary text");
    }
    if (sample.summary.doc_id != sample.doc.id) {
        fail(ErrorKind::SchemaError, sample.id + ": summary doc_id does not match document id");
    }
    if ((sample.label == Label::positive) != sample.char_spans.empty()) {
        fail(ErrorKind::SchemaError, sample.id + ": label must be positive exactly when there are no spans");
    }
    const std::size_t len = utf8::length(sample.summary.text);
    std::size_t prev_end = 0;
    for (const auto & span : sample.char_spans) {
        if (span.start >= span.end || span.end > len || span.start < prev_end) {
            fail(ErrorKind::SchemaError, sample.id + ": spans must be non-empty, in range, sorted and disjoint");
        }
        prev_end = span.end;
    }
}

std::vector<CharSpan> locate_spans(std::string_view summary_text, std::span<const std::string> spans) {
    const auto text = utf8::decode(summary_text);
    std::vector<CharSpan> located;
    located.reserve(spans.size());
    std::size_t cursor = 0;
    for (const auto & span : spans) {
        const auto needle = utf8::decode(span);
        if (needle.empty()) {
            fail(ErrorKind::MalformedList, "empty span string");
        }
        const auto pos = text.find(needle, cursor);
        if (pos == std::u32string::npos) {
            if (text.find(needle) == std::u32string::npos) {
                fail(ErrorKind::SpanNotFound, "span is not a substring of the summary: \"" + span + "\"");
            }
            fail(ErrorKind::OrderViolation,
                 "span \"" + span + "\" has no occurrence after the previous span (ends at " + std::to_string(cursor) +
                     ")");
        }
        located.push_back({pos, pos + needle.size()});
        cursor = pos + needle.size();
    }
    return located;
}

SpanAnnotation parse_annotation_response(std::string_view raw, std::string_view summary_text) {
    const auto reasoning_at = require_marker(raw, kReasoningMarker, 0);
    const auto reasoning_begin = reasoning_at + kReasoningMarker.size();
    const auto spans_at = require_marker(raw, kSpansMarker, reasoning_begin);
    const auto spans_begin = spans_at + kSpansMarker.size();
    const auto completed_at = require_marker(raw, kCompletedMarker, spans_begin);

    SpanAnnotation annotation;
    annotation.reasoning = std::string(trim(raw.substr(reasoning_begin, spans_at - reasoning_begin)));

    const auto block = trim(raw.substr(spans_begin, completed_at - spans_begin));
    const json parsed = json::parse(block.begin(), block.end(), nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded() || !parsed.is_array()) {
        fail(ErrorKind::MalformedList, "hallucinated_spans is not a JSON array: " + std::string(block));
    }
    for (const auto & item : parsed) {
        if (!item.is_string()) {
            fail(ErrorKind::MalformedList, "hallucinated_spans contains a non-string item: " + item.dump());
        }
        annotation.spans.push_back(item.get<std::string>());
    }
    locate_spans(summary_text, annotation.spans);
    return annotation;
}

LabeledSample classify_sample(const SourceDocument & doc, const GeneratedSummary & summary,
                              const SpanAnnotation & annotation) {
    LabeledSample sample;
    sample.id = summary.generator_tag.empty() ? doc.id : doc.id + ":" + summary.generator_tag;
    sample.doc = doc;
    sample.summary = summary;
    sample.annotator_reasoning = annotation.reasoning;
    sample.char_spans = locate_spans(summary.text, annotation.spans);
    sample.label = sample.char_spans.empty() ? Label::positive : Label::negative;
    return sample;
}

std::size_t DatasetStats::total() const noexcept {
    std::size_t n = 0;
    for (const auto & [key, group] : groups) {
        n += group.positives + group.negatives;
    }
    return n;
}

double hallucinated_token_ratio(const LabeledSample & sample, const align::Tokenizer & tokenizer) {
    const auto tokens = tokenizer.encode(sample.summary.text);
    if (tokens.size() == 0) {
        return 0.0;
    }
    const auto mask = align::spans_to_token_mask(tokens, sample.char_spans);
    return static_cast<double>(mask.size()) / static_cast<double>(tokens.size());
}

DatasetStats compute_stats(std::span<const LabeledSample> samples, const align::Tokenizer & tokenizer) {
    DatasetStats stats;
    stats.tokenizer_tag = tokenizer.vocab_tag();
    std::map<GroupKey, double> ratio_sums;
    for (const auto & sample : samples) {
        const GroupKey key{sample.doc.dataset_tag, sample.summary.generator_tag};
        auto & group = stats.groups[key];
        if (sample.label == Label::positive) {
            ++group.positives;
        } else {
            ++group.negatives;
            ratio_sums[key] += hallucinated_token_ratio(sample, tokenizer);
        }
    }
    for (auto & [key, group] : stats.groups) {
        if (group.negatives > 0) {
            group.htr = ratio_sums[key] / static_cast<double>(group.negatives);
        }
    }
    return stats;
}

void print_stats(std::ostream & out, const DatasetStats & stats) {
    out << std::left << std::setw(16) << "dataset" << std::setw(16) << "generator" << std::right << std::setw(8)
        << "pos" << std::setw(8) << "neg" << std::setw(8) << "HTR" << '\n';
    for (const auto & [key, group] : stats.groups) {
        out << std::left << std::setw(16) << key.dataset_tag << std::setw(16) << key.generator_tag << std::right
            << std::setw(8) << group.positives << std::setw(8) << group.negatives << std::setw(8);
        if (group.htr) {
            out << std::fixed << std::setprecision(3) << *group.htr;
        } else {
            out << "-";
        }
        out << '\n';
    }
    out << "total " << stats.total() << "  tokenizer " << stats.tokenizer_tag << '\n';
}

namespace {

const std::set<std::string> kRecordFields = {
    "schema_version", "id", "doc_id", "dataset_tag", "generator_tag", "source_text",
    "summary_text", "label", "spans", "annotator_reasoning",
};

json to_json(const LabeledSample & sample) {
    json spans = json::array();
    for (const auto & span : sample.char_spans) {
        spans.push_back({{"start", span.start}, {"end", span.end}});
    }
    return {
        {"schema_version", kDatasetSchemaVersion},
        {"id", sample.id},
        {"doc_id", sample.doc.id},
        {"dataset_tag", sample.doc.dataset_tag},
        {"generator_tag", sample.summary.generator_tag},
        {"source_text", sample.doc.text},
        {"summary_text", sample.summary.text},
        {"label", to_string(sample.label)},
        {"spans", spans},
        {"annotator_reasoning", sample.annotator_reasoning},
    };
}

template <class T>
T field(const json & record, const char * name) {
    try {
        return record.at(name).get<T>();
    } catch (const json::exception & e) {
        fail(ErrorKind::SchemaError, std::string("field '") + name + "': " + e.what());
    }
}

LabeledSample from_json(const json & record) {
    if (!record.is_object()) {
        fail(ErrorKind::SchemaError, "record is not an object");
    }
    for (const auto & [key, value] : record.items()) {
        if (!kRecordFields.contains(key)) {
            fail(ErrorKind::SchemaError, "unknown field '" + key + "'");
        }
    }
    for (const auto & name : kRecordFields) {
        if (!record.contains(name)) {
            fail(ErrorKind::SchemaError, "missing field '" + name + "'");
        }
    }
    if (field<int>(record, "schema_version") != kDatasetSchemaVersion) {
        fail(ErrorKind::SchemaError, "unsupported schema_version " + record.at("schema_version").dump());
    }
    LabeledSample sample;
    sample.id = field<std::string>(record, "id");
    sample.doc.id = field<std::string>(record, "doc_id");
    sample.doc.dataset_tag = field<std::string>(record, "dataset_tag");
    sample.doc.text = field<std::string>(record, "source_text");
    sample.summary.doc_id = sample.doc.id;
    sample.summary.generator_tag = field<std::string>(record, "generator_tag");
    sample.summary.text = field<std::string>(record, "summary_text");
    sample.label = parse_label(field<std::string>(record, "label"));
    sample.annotator_reasoning = field<std::string>(record, "annotator_reasoning");
    const json & spans = record.at("spans");
    if (!spans.is_array()) {
        fail(ErrorKind::SchemaError, "field 'spans' is not an array");
    }
    for (const auto & span : spans) {
        if (!span.is_object() || span.size() != 2) {
            fail(ErrorKind::SchemaError, "span must be an object with exactly start and end");
        }
        sample.char_spans.push_back({field<std::size_t>(span, "start"), field<std::size_t>(span, "end")});
    }
    validate(sample);
    return sample;
}

} // namespace

void write_dataset(std::ostream & out, std::span<const LabeledSample> samples) {
    for (const auto & sample : samples) {
        validate(sample);
        out << to_json(sample).dump() << '\n';
    }
}

std::vector<LabeledSample> read_dataset(std::istream & in) {
    std::vector<LabeledSample> samples;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const json record = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (record.is_discarded()) {
            fail(ErrorKind::SchemaError, "line " + std::to_string(line_no) + ": not valid JSON");
        }
        try {
            samples.push_back(from_json(record));
        } catch (const Error & e) {
            fail(e.kind(), "line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!ids.insert(samples.back().id).second) {
            fail(ErrorKind::SchemaError, "line " + std::to_string(line_no) + ": duplicate id " + samples.back().id);
        }
    }
    return samples;
}

void write_dataset(const std::string & path, std::span<const LabeledSample> samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::IoError, "cannot open for writing: " + path);
    }
    write_dataset(out, samples);
}

std::vector<LabeledSample> read_dataset(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open for reading: " + path);
    }
    return read_dataset(in);
}

} // namespace spanft::corpus
