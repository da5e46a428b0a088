#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <sstream>

#include "spanft/align.hpp"
#include "spanft/annotate.hpp"
#include "spanft/corpus.hpp"
#include "spanft/error.hpp"
#include "spanft/utf8.hpp"

using namespace spanft;
using corpus::Label;

namespace {

ErrorKind kind_of(const std::function<void()> & f) {
    try {
        f();
    } catch (const Error & e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorKind::IoError;
}

std::string response(std::string_view spans_block) {
    return "[[ ## reasoning ## ]]\nsome reasoning\n\n[[ ## hallucinated_spans ## ]]\n" + std::string(spans_block) +
           "\n\n[[ ## completed ## ]]";
}

corpus::LabeledSample make_sample(std::string id, std::string summary, std::vector<CharSpan> spans,
                                  std::string dataset = "d", std::string generator = "g") {
    corpus::LabeledSample s;
    s.id = id;
    s.doc = {id + "-doc", dataset, "A source text."};
    s.summary = {s.doc.id, generator, std::move(summary)};
    s.label = spans.empty() ? Label::positive : Label::negative;
    s.char_spans = std::move(spans);
    return s;
}

} // namespace

TEST(LocateSpans, FirstOccurrence) {
    const std::vector<std::string> spans{"abc"};
    EXPECT_EQ(corpus::locate_spans("abcabc", spans), (std::vector<CharSpan>{{0, 3}}));
}

TEST(LocateSpans, RepeatedSpanTakesNextOccurrence) {
    const std::vector<std::string> spans{"abc", "abc"};
    EXPECT_EQ(corpus::locate_spans("abcabc", spans), (std::vector<CharSpan>{{0, 3}, {3, 6}}));
}

TEST(LocateSpans, AbsentAndOutOfOrder) {
    const std::vector<std::string> absent{"xyz"};
    EXPECT_EQ(kind_of([&] { corpus::locate_spans("hello", absent); }), ErrorKind::SpanNotFound);
    const std::vector<std::string> reversed{"world", "hello"};
    EXPECT_EQ(kind_of([&] { corpus::locate_spans("hello world", reversed); }), ErrorKind::OrderViolation);
    const std::vector<std::string> overlapping{"abcd", "cde"};
    EXPECT_EQ(kind_of([&] { corpus::locate_spans("abcdef", overlapping); }), ErrorKind::OrderViolation);
}

TEST(LocateSpans, OffsetsAreCodePoints) {
    const std::vector<std::string> spans{"café", "東京"};
    EXPECT_EQ(corpus::locate_spans("un café à 東京", spans), (std::vector<CharSpan>{{3, 7}, {10, 12}}));
}

// Brute force: enumerate every order-respecting placement and check that the
// greedy result is the lexicographically smallest one.
TEST(LocateSpans, GreedyMatchesBruteForceOnRandomStrings) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> letter(0, 1);
    for (int trial = 0; trial < 300; ++trial) {
        std::string text;
        for (int i = 0; i < 10; ++i) {
            text.push_back(letter(rng) ? 'a' : 'b');
        }
        std::vector<std::string> spans;
        const int n_spans = 1 + static_cast<int>(rng() % 3);
        for (int k = 0; k < n_spans; ++k) {
            std::string s;
            const int len = 1 + static_cast<int>(rng() % 3);
            for (int i = 0; i < len; ++i) {
                s.push_back(letter(rng) ? 'a' : 'b');
            }
            spans.push_back(s);
        }
        std::vector<std::vector<CharSpan>> placements;
        std::vector<CharSpan> current;
        std::function<void(std::size_t, std::size_t)> search = [&](std::size_t k, std::size_t from) {
            if (k == spans.size()) {
                placements.push_back(current);
                return;
            }
            for (std::size_t p = from; p + spans[k].size() <= text.size(); ++p) {
                if (text.compare(p, spans[k].size(), spans[k]) == 0) {
                    current.push_back({p, p + spans[k].size()});
                    search(k + 1, p + spans[k].size());
                    current.pop_back();
                }
            }
        };
        search(0, 0);
        if (placements.empty()) {
            EXPECT_THROW(corpus::locate_spans(text, spans), Error);
            continue;
        }
        const auto best = *std::min_element(placements.begin(), placements.end());
        const auto got = corpus::locate_spans(text, spans);
        EXPECT_EQ(got, best) << text;
        EXPECT_EQ(corpus::locate_spans(text, spans), got);
        for (std::size_t i = 1; i < got.size(); ++i) {
            EXPECT_LE(got[i - 1].end, got[i].start);
            EXPECT_LT(got[i - 1].start, got[i].start);
        }
    }
}

TEST(ParseResponse, DemoResponses) {
    const auto demos = annotate::demo_examples();
    ASSERT_EQ(demos.size(), 2u);
    const auto first = corpus::parse_annotation_response(demos[0].response, demos[0].summary);
    EXPECT_EQ(first.spans, (std::vector<std::string>{"Bob agreed"}));
    EXPECT_FALSE(first.reasoning.empty());
    const auto second = corpus::parse_annotation_response(demos[1].response, demos[1].summary);
    EXPECT_EQ(second.spans, (std::vector<std::string>{"76", "the entire wreckage will be recovered within a day",
                                                      "the jet made an evasive maneuver"}));
}

TEST(ParseResponse, EmptyList) {
    const auto a = corpus::parse_annotation_response(response("[]"), "Any summary.");
    EXPECT_TRUE(a.spans.empty());
    EXPECT_EQ(a.reasoning, "some reasoning");
}

TEST(ParseResponse, Errors) {
    EXPECT_EQ(kind_of([] { corpus::parse_annotation_response("[[ ## hallucinated_spans ## ]]\n[]", "x"); }),
              ErrorKind::MissingMarker);
    EXPECT_EQ(kind_of([] {
                  corpus::parse_annotation_response("[[ ## reasoning ## ]]\nr\n[[ ## hallucinated_spans ## ]]\n[]",
                                                    "x");
              }),
              ErrorKind::MissingMarker);
    EXPECT_EQ(kind_of([] { corpus::parse_annotation_response(response("['single quotes']"), "single quotes"); }),
              ErrorKind::MalformedList);
    EXPECT_EQ(kind_of([] { corpus::parse_annotation_response(response("[1, 2]"), "1 2"); }),
              ErrorKind::MalformedList);
    EXPECT_EQ(kind_of([] { corpus::parse_annotation_response(response("{\"a\": 1}"), "a"); }),
              ErrorKind::MalformedList);
    EXPECT_EQ(kind_of([] { corpus::parse_annotation_response(response("[\"zebra\"]"), "A summary."); }),
              ErrorKind::SpanNotFound);
    EXPECT_EQ(kind_of([] { corpus::parse_annotation_response(response("[\"B\", \"A\"]"), "A then B."); }),
              ErrorKind::OrderViolation);
}

TEST(Classify, LabelsFollowSpans) {
    const corpus::SourceDocument doc{"d1", "demo", "Source."};
    const corpus::GeneratedSummary summary{"d1", "gen", "Bob agreed with Lenny."};
    const auto pos = corpus::classify_sample(doc, summary, {"none", {}});
    EXPECT_EQ(pos.label, Label::positive);
    EXPECT_TRUE(pos.char_spans.empty());
    const auto neg = corpus::classify_sample(doc, summary, {"r", {"Bob agreed"}});
    EXPECT_EQ(neg.label, Label::negative);
    EXPECT_EQ(neg.char_spans, (std::vector<CharSpan>{{0, 10}}));
    EXPECT_EQ(utf8::slice(summary.text, 0, 10), "Bob agreed");
}

TEST(Classify, DemoOneCoversBobAgreed) {
    const auto & demo = annotate::demo_examples()[0];
    const corpus::SourceDocument doc{"demo-1", "demo", std::string(demo.source)};
    const corpus::GeneratedSummary summary{"demo-1", "demo", std::string(demo.summary)};
    const auto sample =
        corpus::classify_sample(doc, summary, corpus::parse_annotation_response(demo.response, demo.summary));
    ASSERT_EQ(sample.label, Label::negative);
    ASSERT_EQ(sample.char_spans.size(), 1u);
    EXPECT_EQ(utf8::slice(summary.text, sample.char_spans[0].start, sample.char_spans[0].end), "Bob agreed");
}

TEST(Validate, RejectsBrokenInvariants) {
    auto s = make_sample("a", "Some summary.", {{0, 4}});
    EXPECT_NO_THROW(corpus::validate(s));
    auto no_spans = s;
    no_spans.char_spans.clear();
    EXPECT_EQ(kind_of([&] { corpus::validate(no_spans); }), ErrorKind::SchemaError);
    auto reversed = s;
    reversed.char_spans = {{5, 8}, {0, 4}};
    EXPECT_EQ(kind_of([&] { corpus::validate(reversed); }), ErrorKind::SchemaError);
    auto past_end = s;
    past_end.char_spans = {{5, 100}};
    EXPECT_EQ(kind_of([&] { corpus::validate(past_end); }), ErrorKind::SchemaError);
    auto empty_text = s;
    empty_text.summary.text.clear();
    EXPECT_EQ(kind_of([&] { corpus::validate(empty_text); }), ErrorKind::SchemaError);
}

TEST(Stats, HandComputedRatios) {
    // Ten tokens, four of them masked.
    const std::string text = "one two three four five six seven eight nine ten";
    const auto tok = align::WordTokenizer::fit(std::vector<std::string>{text});
    const std::vector<corpus::LabeledSample> samples{make_sample("p", text, {}),
                                                     make_sample("n", text, {{4, 24}})};
    ASSERT_EQ(tok.encode(text).size(), 10u);
    const auto stats = corpus::compute_stats(samples, tok);
    ASSERT_EQ(stats.groups.size(), 1u);
    const auto & g = stats.groups.begin()->second;
    EXPECT_EQ(g.positives, 1u);
    EXPECT_EQ(g.negatives, 1u);
    ASSERT_TRUE(g.htr.has_value());
    EXPECT_EQ(*g.htr, 0.4);
    EXPECT_EQ(stats.tokenizer_tag, tok.vocab_tag());

    std::ostringstream out;
    corpus::print_stats(out, stats);
    EXPECT_NE(out.str().find("0.400"), std::string::npos);
}

TEST(Stats, MeanOverNegativesAndAbsentForPositiveGroups) {
    const std::string text = "one two three four five six seven eight nine ten";
    const auto tok = align::WordTokenizer::fit(std::vector<std::string>{text});
    const std::vector<corpus::LabeledSample> samples{
        make_sample("a", text, {{0, 7}}),                  // 2 of 10
        make_sample("b", text, {{0, 18}}),                 // 4 of 10
        make_sample("c", text, {}, "other", "g"),          // positive-only group
    };
    const auto stats = corpus::compute_stats(samples, tok);
    EXPECT_NEAR(*stats.groups.at({"d", "g"}).htr, 0.3, 1e-15);
    EXPECT_FALSE(stats.groups.at({"other", "g"}).htr.has_value());
    EXPECT_EQ(stats.total(), samples.size());
}

TEST(Dataset, RoundTrip) {
    std::vector<corpus::LabeledSample> samples{make_sample("p", "Plain summary.", {}),
                                               make_sample("u", "Ünïcode → 東京 spans ok", {{0, 7}, {10, 12}})};
    samples[1].annotator_reasoning = "line one\nline \"two\"";
    std::stringstream io;
    corpus::write_dataset(io, samples);
    EXPECT_EQ(corpus::read_dataset(io), samples);

    std::stringstream empty;
    corpus::write_dataset(empty, {});
    EXPECT_TRUE(corpus::read_dataset(empty).empty());
}

TEST(Dataset, SchemaErrors) {
    std::stringstream io;
    corpus::write_dataset(io, std::vector<corpus::LabeledSample>{make_sample("p", "Plain summary.", {})});
    const std::string line = io.str();

    auto with = [](std::string text) {
        std::stringstream in(text);
        return kind_of([&] { corpus::read_dataset(in); });
    };
    EXPECT_EQ(with(line.substr(0, line.size() - 2) + ",\"extra\":1}\n"), ErrorKind::SchemaError);
    std::string missing = line;
    missing.replace(missing.find("\"label\""), 7, "\"lable\"");
    EXPECT_EQ(with(missing), ErrorKind::SchemaError);
    EXPECT_EQ(with("not json\n"), ErrorKind::SchemaError);
    EXPECT_EQ(with(line + line), ErrorKind::SchemaError);
}
