#include "spanft/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <utility>

#include "json.hpp"
#include "spanft/align.hpp"
#include "spanft/error.hpp"
#include "spanft/rng.hpp"
#include "spanft/utf8.hpp"

namespace spanft::synth {

using nlohmann::json;

const Attribute * Vocabulary::find_attribute(std::string_view name) const {
    for (const auto & attribute : attributes) {
        if (attribute.name == name) {
            return &attribute;
        }
    }
    return nullptr;
}

bool Vocabulary::has_entity(std::string_view name) const {
    return std::find(entities.begin(), entities.end(), name) != entities.end();
}

const Vocabulary & default_vocabulary() {
    static const Vocabulary vocabulary{
        {"Pat", "Kim", "Lee", "Sam", "Alex", "Robin", "Jordan", "Casey", "Morgan", "Taylor", "Quinn", "Riley"},
        {
            {"color", {"red", "blue", "green", "yellow", "purple", "orange"}},
            {"city", {"Paris", "Rome", "Oslo", "Lima", "Cairo", "Tokyo"}},
            {"pet", {"cat", "dog", "parrot", "rabbit", "turtle", "hamster"}},
            {"sport", {"tennis", "chess", "rugby", "golf", "hockey", "cricket"}},
            {"food", {"pasta", "curry", "sushi", "tacos", "salad", "soup"}},
            {"job", {"nurse", "pilot", "chef", "baker", "farmer", "lawyer"}},
        },
    };
    return vocabulary;
}

std::string_view to_string(PerturbationKind kind) noexcept {
    switch (kind) {
        case PerturbationKind::none: return "none";
        case PerturbationKind::value_swap: return "value_swap";
        case PerturbationKind::entity_swap: return "entity_swap";
        case PerturbationKind::fabricated_fact: return "fabricated_fact";
    }
    return "none";
}

PerturbationKind parse_perturbation_kind(std::string_view text) {
    for (auto kind : {PerturbationKind::none, PerturbationKind::value_swap, PerturbationKind::entity_swap,
                      PerturbationKind::fabricated_fact}) {
        if (to_string(kind) == text) {
            return kind;
        }
    }
    fail(ErrorKind::SchemaError, "unknown perturbation kind: " + std::string(text));
}

std::string render_fact(const FactRecord & fact) {
    return fact.entity + "'s " + fact.attribute + " is " + fact.value + ".";
}

std::string render_facts(std::span<const FactRecord> facts) {
    std::string out;
    for (const auto & fact : facts) {
        if (!out.empty()) {
            out += ' ';
        }
        out += render_fact(fact);
    }
    return out;
}

bool entailed(const FactRecord & statement, std::span<const FactRecord> facts) {
    return std::find(facts.begin(), facts.end(), statement) != facts.end();
}

namespace {

bool known_value(const Vocabulary & vocabulary, std::string_view value) {
    for (const auto & attribute : vocabulary.attributes) {
        if (std::find(attribute.values.begin(), attribute.values.end(), value) != attribute.values.end()) {
            return true;
        }
    }
    return false;
}

// Matches the pieces of one sentence body (without the final period).
void match_template(const std::u32string & text, std::size_t begin, std::size_t end, const Vocabulary & vocabulary,
                    Statement & statement) {
    auto pieces = align::split_pieces(std::u32string_view(text).substr(begin, end - begin));
    if (pieces.size() != 6) {
        return;
    }
    const auto word = [&](std::size_t i) { return utf8::encode(pieces[i].text); };
    const bool shape = pieces[1].text == U"'" && !pieces[1].space_before && pieces[2].text == U"s" &&
                       !pieces[2].space_before && pieces[3].space_before && pieces[4].text == U"is" &&
                       pieces[4].space_before && pieces[5].space_before;
    if (!shape) {
        return;
    }
    FactRecord fact{word(0), word(3), word(5)};
    if (!vocabulary.has_entity(fact.entity) || vocabulary.find_attribute(fact.attribute) == nullptr ||
        !known_value(vocabulary, fact.value)) {
        return;
    }
    statement.fact = std::move(fact);
    statement.entity_range = {begin + pieces[0].range.start, begin + pieces[0].range.end};
    statement.value_range = {begin + pieces[5].range.start, begin + pieces[5].range.end};
}

} // namespace

std::vector<Statement> parse_statements(std::string_view text, const Vocabulary & vocabulary) {
    const auto cps = utf8::decode(text);
    std::vector<Statement> statements;
    std::size_t i = 0;
    while (i < cps.size()) {
        while (i < cps.size() && utf8::is_space(cps[i])) {
            ++i;
        }
        if (i == cps.size()) {
            break;
        }
        const std::size_t begin = i;
        while (i < cps.size() && cps[i] != U'.') {
            ++i;
        }
        const bool terminated = i < cps.size();
        const std::size_t body_end = i;
        Statement statement;
        statement.sentence = {begin, terminated ? i + 1 : i};
        // The period must follow the value directly; an unterminated sentence never parses.
        if (terminated && body_end > begin && !utf8::is_space(cps[body_end - 1])) {
            match_template(cps, begin, body_end, vocabulary, statement);
        }
        statements.push_back(std::move(statement));
        i = terminated ? i + 1 : i;
    }
    return statements;
}

namespace {

struct Edit {
    std::string text;
    CharSpan span;            // span of the inserted text in the new string
    CharSpan replaced;        // range replaced in the old string
};

std::vector<std::string> document_entities(std::span<const FactRecord> facts) {
    std::vector<std::string> out;
    for (const auto & fact : facts) {
        if (std::find(out.begin(), out.end(), fact.entity) == out.end()) {
            out.push_back(fact.entity);
        }
    }
    return out;
}

bool has_pair(std::span<const FactRecord> facts, std::string_view entity, std::string_view attribute) {
    return std::any_of(facts.begin(), facts.end(),
                       [&](const FactRecord & f) { return f.entity == entity && f.attribute == attribute; });
}

Edit replace_range(const std::u32string & text, CharSpan range, const std::string & replacement) {
    const auto inserted = utf8::decode(replacement);
    std::u32string out = text.substr(0, range.start) + inserted + text.substr(range.end);
    return {utf8::encode(out), {range.start, range.start + inserted.size()}, range};
}

std::optional<Edit> try_inject(const std::u32string & text, const std::vector<Statement> & slots,
                               std::span<const FactRecord> facts, PerturbationKind kind, Rng & rng,
                               const Vocabulary & vocabulary) {
    if (kind == PerturbationKind::fabricated_fact) {
        auto entities = document_entities(facts);
        for (const auto & slot : slots) {
            if (std::find(entities.begin(), entities.end(), slot.fact->entity) == entities.end()) {
                entities.push_back(slot.fact->entity);
            }
        }
        std::vector<std::pair<std::string, const Attribute *>> open;
        for (const auto & entity : entities) {
            for (const auto & attribute : vocabulary.attributes) {
                if (!has_pair(facts, entity, attribute.name)) {
                    open.emplace_back(entity, &attribute);
                }
            }
        }
        if (open.empty()) {
            for (const auto & entity : vocabulary.entities) {
                if (std::find(entities.begin(), entities.end(), entity) == entities.end()) {
                    for (const auto & attribute : vocabulary.attributes) {
                        open.emplace_back(entity, &attribute);
                    }
                }
            }
        }
        if (open.empty()) {
            return std::nullopt;
        }
        const auto & [entity, attribute] = open[rng.uniform_index(open.size())];
        const FactRecord fabricated{entity, attribute->name,
                                    attribute->values[rng.uniform_index(attribute->values.size())]};
        const std::u32string sentence = utf8::decode(render_fact(fabricated));
        std::u32string out = text;
        if (!out.empty()) {
            out.push_back(U' ');
        }
        const std::size_t start = out.size();
        out += sentence;
        return Edit{utf8::encode(out), {start, out.size()}, {text.size(), text.size()}};
    }

    std::vector<std::size_t> order(slots.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    rng.shuffle(order);
    for (std::size_t index : order) {
        const Statement & slot = slots[index];
        const FactRecord & fact = *slot.fact;
        if (kind == PerturbationKind::value_swap) {
            const Attribute * attribute = vocabulary.find_attribute(fact.attribute);
            std::vector<std::string> candidates;
            for (const auto & value : attribute->values) {
                if (value != fact.value && !entailed({fact.entity, fact.attribute, value}, facts)) {
                    candidates.push_back(value);
                }
            }
            // Values that another document entity holds for this attribute come first.
            std::vector<std::string> distractors;
            for (const auto & value : candidates) {
                if (std::any_of(facts.begin(), facts.end(), [&](const FactRecord & f) {
                        return f.attribute == fact.attribute && f.value == value;
                    })) {
                    distractors.push_back(value);
                }
            }
            const auto & pool = distractors.empty() ? candidates : distractors;
            if (!pool.empty()) {
                return replace_range(text, slot.value_range, pool[rng.uniform_index(pool.size())]);
            }
        } else {
            std::vector<std::string> candidates;
            for (const auto & entity : document_entities(facts)) {
                if (entity != fact.entity && !entailed({entity, fact.attribute, fact.value}, facts)) {
                    candidates.push_back(entity);
                }
            }
            if (candidates.empty()) {
                for (const auto & entity : vocabulary.entities) {
                    if (entity != fact.entity && !entailed({entity, fact.attribute, fact.value}, facts)) {
                        candidates.push_back(entity);
                    }
                }
            }
            if (!candidates.empty()) {
                return replace_range(text, slot.entity_range, candidates[rng.uniform_index(candidates.size())]);
            }
        }
    }
    return std::nullopt;
}

std::vector<Statement> perturbable_slots(std::string_view text, const Vocabulary & vocabulary,
                                         std::span<const CharSpan> taken) {
    std::vector<Statement> slots;
    for (auto & statement : parse_statements(text, vocabulary)) {
        if (!statement.fact) {
            continue;
        }
        const bool used = std::any_of(taken.begin(), taken.end(),
                                      [&](const CharSpan & s) { return s.overlaps(statement.sentence); });
        if (!used) {
            slots.push_back(std::move(statement));
        }
    }
    return slots;
}

} // namespace

Perturbation inject_hallucination(std::string_view summary_text, std::span<const FactRecord> facts,
                                  PerturbationKind kind, std::uint64_t seed, const Vocabulary & vocabulary) {
    if (kind == PerturbationKind::none) {
        fail(ErrorKind::InvalidArgument, "inject_hallucination needs a perturbation kind other than none");
    }
    const auto slots = perturbable_slots(summary_text, vocabulary, {});
    if (slots.empty()) {
        fail(ErrorKind::NoPerturbableSlot, "summary renders no facts");
    }
    Rng rng(seed);
    auto edit = try_inject(utf8::decode(summary_text), slots, facts, kind, rng, vocabulary);
    if (!edit) {
        fail(ErrorKind::NoPerturbableSlot, "no slot admits a " + std::string(to_string(kind)));
    }
    return {std::move(edit->text), edit->span};
}

namespace {

PerturbationKind draw_kind(Rng & rng, const GenOptions & options) {
    const double total = options.value_swap_weight + options.entity_swap_weight + options.fabricated_fact_weight;
    const double u = rng.uniform() * total;
    if (u < options.value_swap_weight) {
        return PerturbationKind::value_swap;
    }
    if (u < options.value_swap_weight + options.entity_swap_weight) {
        return PerturbationKind::entity_swap;
    }
    return PerturbationKind::fabricated_fact;
}

std::string sample_id(const GenOptions & options, std::uint64_t seed, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu", index);
    return options.id_prefix + "-" + std::to_string(seed) + "-" + buf;
}

std::size_t draw_between(Rng & rng, std::size_t lo, std::size_t hi) {
    return lo + rng.uniform_index(hi - lo + 1);
}

} // namespace

std::vector<SynthSample> gen_corpus(std::uint64_t seed, std::size_t n_docs, double hallucination_rate,
                                    const GenOptions & options, const Vocabulary & vocabulary) {
    if (n_docs < 1) {
        fail(ErrorKind::InvalidArgument, "n_docs must be >= 1");
    }
    if (!(hallucination_rate >= 0.0 && hallucination_rate <= 1.0)) {
        fail(ErrorKind::InvalidArgument, "hallucination_rate must lie in [0, 1]");
    }
    if (options.min_entities < 1 || options.min_entities > options.max_entities ||
        options.max_entities > vocabulary.entities.size() || options.min_facts < 1 ||
        options.min_facts > options.max_facts || options.min_summary_facts < 1 ||
        options.min_summary_facts > options.max_summary_facts) {
        fail(ErrorKind::InvalidArgument, "inconsistent corpus generation options");
    }

    std::vector<SynthSample> samples;
    samples.reserve(n_docs);
    for (std::size_t index = 0; index < n_docs; ++index) {
        Rng rng(Rng::mix(seed, index));
        SynthSample sample;
        sample.id = sample_id(options, seed, index);

        auto entities = vocabulary.entities;
        rng.shuffle(entities);
        entities.resize(draw_between(rng, options.min_entities, options.max_entities));

        std::vector<std::pair<std::size_t, std::size_t>> cells;
        for (std::size_t e = 0; e < entities.size(); ++e) {
            for (std::size_t a = 0; a < vocabulary.attributes.size(); ++a) {
                cells.emplace_back(e, a);
            }
        }
        rng.shuffle(cells);
        if (options.distinct_attributes) {
            std::vector<char> used(vocabulary.attributes.size(), 0);
            std::erase_if(cells, [&](const auto & cell) { return std::exchange(used[cell.second], char{1}) != 0; });
        }
        const std::size_t n_facts = std::min(draw_between(rng, options.min_facts, options.max_facts), cells.size());
        for (std::size_t f = 0; f < n_facts; ++f) {
            const auto & attribute = vocabulary.attributes[cells[f].second];
            sample.facts.push_back(
                {entities[cells[f].first], attribute.name, attribute.values[rng.uniform_index(attribute.values.size())]});
        }
        sample.document_text = render_facts(sample.facts);

        std::vector<std::size_t> picks(n_facts);
        for (std::size_t f = 0; f < n_facts; ++f) {
            picks[f] = f;
        }
        rng.shuffle(picks);
        picks.resize(std::min(draw_between(rng, options.min_summary_facts, options.max_summary_facts), n_facts));
        std::sort(picks.begin(), picks.end());
        for (std::size_t f : picks) {
            sample.summary_facts.push_back(sample.facts[f]);
        }
        sample.summary_text = render_facts(sample.summary_facts);

        if (rng.uniform() < hallucination_rate) {
            for (std::size_t p = 0; p < options.perturbations_per_negative; ++p) {
                const auto kind = draw_kind(rng, options);
                const auto slots = perturbable_slots(sample.summary_text, vocabulary, sample.true_spans);
                if (slots.empty() && kind != PerturbationKind::fabricated_fact) {
                    continue;
                }
                auto edit = try_inject(utf8::decode(sample.summary_text), slots, sample.facts, kind, rng, vocabulary);
                if (!edit) {
                    continue;
                }
                const auto delta = static_cast<std::ptrdiff_t>(edit->span.length()) -
                                   static_cast<std::ptrdiff_t>(edit->replaced.length());
                for (auto & span : sample.true_spans) {
                    if (span.start >= edit->replaced.end) {
                        span.start = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(span.start) + delta);
                        span.end = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(span.end) + delta);
                    }
                }
                sample.summary_text = std::move(edit->text);
                sample.true_spans.push_back(edit->span);
                sample.perturbations.push_back(kind);
            }
            std::sort(sample.true_spans.begin(), sample.true_spans.end());
        }
        samples.push_back(std::move(sample));
    }
    return samples;
}

corpus::LabeledSample to_labeled(const SynthSample & sample, std::string_view dataset_tag,
                                 std::string_view generator_tag) {
    corpus::LabeledSample labeled;
    labeled.id = sample.id;
    labeled.doc = {sample.id, std::string(dataset_tag), sample.document_text};
    labeled.summary = {sample.id, std::string(generator_tag), sample.summary_text};
    labeled.char_spans = sample.true_spans;
    labeled.label = sample.true_spans.empty() ? corpus::Label::positive : corpus::Label::negative;
    return labeled;
}

void write_ground_truth(const std::string & path, std::span<const SynthSample> samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::IoError, "cannot open for writing: " + path);
    }
    for (const auto & sample : samples) {
        json kinds = json::array();
        for (auto kind : sample.perturbations) {
            kinds.push_back(to_string(kind));
        }
        json spans = json::array();
        json texts = json::array();
        for (const auto & span : sample.true_spans) {
            spans.push_back({{"start", span.start}, {"end", span.end}});
            texts.push_back(utf8::slice(sample.summary_text, span.start, span.end));
        }
        json facts = json::array();
        for (const auto & fact : sample.facts) {
            facts.push_back({{"entity", fact.entity}, {"attribute", fact.attribute}, {"value", fact.value}});
        }
        out << json{{"id", sample.id}, {"perturbations", kinds}, {"spans", spans}, {"span_texts", texts},
                    {"facts", facts}}
                   .dump()
            << '\n';
    }
}

std::vector<GroundTruthRecord> read_ground_truth(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open for reading: " + path);
    }
    std::vector<GroundTruthRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        try {
            const json j = json::parse(line);
            GroundTruthRecord record;
            record.id = j.at("id").get<std::string>();
            for (const auto & kind : j.at("perturbations")) {
                record.perturbations.push_back(parse_perturbation_kind(kind.get<std::string>()));
            }
            for (const auto & span : j.at("spans")) {
                record.spans.push_back({span.at("start").get<std::size_t>(), span.at("end").get<std::size_t>()});
            }
            record.span_texts = j.at("span_texts").get<std::vector<std::string>>();
            for (const auto & fact : j.at("facts")) {
                record.facts.push_back({fact.at("entity").get<std::string>(), fact.at("attribute").get<std::string>(),
                                        fact.at("value").get<std::string>()});
            }
            records.push_back(std::move(record));
        } catch (const json::exception & e) {
            fail(ErrorKind::SchemaError, std::string("ground truth: ") + e.what());
        }
    }
    return records;
}

} // namespace spanft::synth
