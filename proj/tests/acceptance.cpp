// Acceptance suite: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "spanft/annotate.hpp"
#include "spanft/corpus.hpp"
#include "spanft/error.hpp"
#include "spanft/eval.hpp"
#include "spanft/losses.hpp"
#include "spanft/model.hpp"
#include "spanft/synth.hpp"
#include "spanft/trainer.hpp"
#include "spanft/utf8.hpp"

using namespace spanft;
using trainer::Method;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char * format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Loss values against hand computation on a 3-token toy distribution.

Outcome loss_hand_oracle() {
    // Rows predict the summary tokens 1, 2, 0 at positions 1..3.
    const std::vector<std::vector<double>> p{{0.2, 0.5, 0.3}, {0.1, 0.3, 0.6}, {0.7, 0.2, 0.1}, {0.4, 0.4, 0.2}};
    model::LogProbs lp{4, 3, {}};
    for (const auto & row : p) {
        for (double v : row) {
            lp.values.push_back(std::log(v));
        }
    }
    losses::TrainingSample pos;
    pos.token_ids = {0, 1, 2, 0};
    pos.summary_start = 1;
    pos.summary_end = 4;
    auto neg = pos;
    neg.label = corpus::Label::negative;
    neg.mask.indices = {0, 2};

    const double a = 0.5, b = 0.6, c = 0.7;  // p(target) per summary position
    double worst = 0.0;
    for (double eps : {0.0, 0.3, 0.5, 1.0}) {
        const double pos_expected = -(1.0 - eps) * (std::log(a) + std::log(b) + std::log(c));
        const double ga_neg = eps * (std::log(a) + std::log(c));
        const double ul_neg = -eps * (std::log(1.0 - a) + std::log(1.0 - c));
        worst = std::max({worst, std::abs(losses::loss_ga(pos, lp, eps) - pos_expected),
                          std::abs(losses::loss_ul(pos, lp, eps) - pos_expected),
                          std::abs(losses::loss_ga(neg, lp, eps) - ga_neg),
                          std::abs(losses::loss_ul(neg, lp, eps) - ul_neg)});
    }
    return {worst <= 1e-10, fmt("max abs error %.3g over eps {0, 0.3, 0.5, 1}", worst)};
}

// ---------------------------------------------------------------------------
// Shared small-scale fixture for criteria 2 to 4.

struct Small {
    align::WordTokenizer tokenizer;
    std::vector<losses::TrainingSample> samples;
    model::ModelConfig config;
};

Small small_fixture(std::size_t n_docs, int d_model, int n_layers, std::uint64_t seed) {
    const auto corpus = synth::gen_corpus(seed, n_docs, 0.5);
    std::vector<std::string> texts;
    std::vector<corpus::LabeledSample> labeled;
    for (const auto & s : corpus) {
        texts.push_back(s.document_text);
        texts.push_back(s.summary_text);
        labeled.push_back(synth::to_labeled(s));
    }
    Small f{align::WordTokenizer::fit(texts), {}, {}};
    f.config = {static_cast<int>(f.tokenizer.vocab_size()), 80, n_layers, d_model, 4, seed};
    f.samples = trainer::make_training_samples(labeled, f.tokenizer, 80);
    return f;
}

// 2. Epsilon zero reduces ga and ul to SFT; the merge reduces to the positive fine-tune.
Outcome epsilon_zero_equivalence() {
    const auto start = std::chrono::steady_clock::now();
    const auto f = small_fixture(200, 32, 2, 7);
    std::vector<losses::TrainingSample> positives;
    for (const auto & s : f.samples) {
        if (s.label == corpus::Label::positive) {
            positives.push_back(s);
        }
    }
    trainer::TrainingConfig config;
    config.learning_rate = 1e-3;
    config.batch_size = 8;
    config.seed = 3;
    const model::Model base(f.config);
    const auto hash_after = [&](Method method) {
        model::Model m = base;
        auto c = config;
        c.method = method;
        c.epsilon = 0.0;
        trainer::train(m, positives, c);
        return model::parameter_hash(m.get_parameters());
    };
    const auto sft = hash_after(Method::sft);
    const auto ga = hash_after(Method::ga);
    const auto ul = hash_after(Method::ul);

    auto c = config;
    c.method = Method::tv;
    const auto run = trainer::train_task_vector_pipeline(base, f.samples, c);
    const auto pre = base.get_parameters();
    const auto merged = run.merged.get_parameters();
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < pre.values.size(); ++i) {
        mismatches += merged.values[i] != pre.values[i] + (run.positive_fine_tuned.values[i] - pre.values[i]);
    }
    const bool pass = sft == ga && sft == ul && mismatches == 0;
    return {pass, fmt("sft %s ga %s ul %s; tv merge mismatches %zu (%.1fs)", sft.c_str(), ga.c_str(), ul.c_str(),
                      mismatches, seconds_since(start))};
}

// 3. Analytical gradients of both losses against central differences.
Outcome gradient_audit() {
    const auto start = std::chrono::steady_clock::now();
    const auto f = small_fixture(12, 8, 2, 5);
    auto config = f.config;
    config.n_heads = 2;
    model::Model m(config);
    if (model::parameter_count(config) > 20000) {
        return {false, "audit model exceeds 20k parameters"};
    }
    // Move away from the symmetric initialization so every parameter matters.
    {
        auto p = m.get_parameters();
        std::mt19937_64 rng(17);
        std::normal_distribution<double> noise(0.0, 0.1);
        for (auto & v : p.values) {
            v += noise(rng);
        }
        m.set_parameters(p);
    }
    std::vector<losses::TrainingSample> pos, neg;
    for (const auto & s : f.samples) {
        (s.label == corpus::Label::positive ? pos : neg).push_back(s);
    }
    const std::map<std::string, std::vector<losses::TrainingSample>> batches{
        {"positive", {pos[0], pos[1]}}, {"negative", {neg[0], neg[1]}}, {"mixed", {pos[2], neg[2], neg[3]}}};

    const double h = 1e-4;
    const double eps = 0.3;
    double worst = 0.0;
    std::size_t checked = 0;
    auto weights = m.weights();
    for (auto objective : {losses::Objective::ga, losses::Objective::ul}) {
        for (const auto & [name, batch] : batches) {
            const double scale = 1.0 / static_cast<double>(batch.size());
            const auto loss = [&] {
                double total = 0.0;
                for (const auto & s : batch) {
                    total += scale * losses::sample_loss(objective, s, m.forward(s.token_ids), eps);
                }
                return total;
            };
            std::vector<double> grad(weights.size(), 0.0);
            model::Activations cache;
            for (const auto & s : batch) {
                const auto lp = m.forward(s.token_ids, cache);
                const auto lg = losses::loss_and_gradient(objective, s, lp, eps, scale);
                m.backward(cache, lg.dlogits, grad);
            }
            double max_grad = 0.0;
            for (double g : grad) {
                max_grad = std::max(max_grad, std::abs(g));
            }
            for (std::size_t i = 0; i < weights.size(); ++i) {
                const double saved = weights[i];
                weights[i] = saved + h;
                const double up = loss();
                weights[i] = saved - h;
                const double down = loss();
                weights[i] = saved;
                const double numeric = (up - down) / (2.0 * h);
                // Relative error, floored so that vanishing entries are compared absolutely.
                const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-3 * max_grad});
                worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
                ++checked;
            }
        }
    }
    return {worst <= 1e-3, fmt("%zu parameters, %zu comparisons, worst relative error %.3g (%.1fs)",
                               model::parameter_count(config), checked, worst, seconds_since(start))};
}

// 4. Merge against a recombination of checkpoints read back from disk.
Outcome task_vector_algebra() {
    const auto f = small_fixture(60, 16, 1, 9);
    const model::Model base(f.config);
    trainer::TrainingConfig c;
    c.method = Method::tv;
    c.learning_rate = 1e-3;
    c.batch_size = 8;
    const auto run = trainer::train_task_vector_pipeline(base, f.samples, c);

    const auto dir = std::filesystem::temp_directory_path() / "spanft_acceptance_tv";
    std::filesystem::create_directories(dir);
    const auto save = [&](const std::string & name, const model::ParameterVector & p) {
        model::save_checkpoint((dir / name).string(),
                               model::Checkpoint{f.config, p, f.tokenizer.vocab_tag(), f.tokenizer.vocabulary()});
        return model::load_checkpoint((dir / name).string()).parameters.values;
    };
    const auto pre = save("base.ckpt", base.get_parameters());
    const auto pos = save("positive.ckpt", run.positive_fine_tuned);
    const auto neg = save("negative.ckpt", run.negative_fine_tuned);

    double worst = 0.0;
    for (double eps : {0.0, 0.3, 1.0}) {
        const auto merged = losses::merge_task_vectors(
            base.get_parameters(), losses::compute_task_vector(run.positive_fine_tuned, base.get_parameters()),
            losses::compute_task_vector(run.negative_fine_tuned, base.get_parameters()), eps);
        for (std::size_t i = 0; i < pre.size(); ++i) {
            const double expected = pre[i] + (1.0 - eps) * (pos[i] - pre[i]) - eps * (neg[i] - pre[i]);
            worst = std::max(worst, std::abs(merged.values[i] - expected));
        }
    }
    std::filesystem::remove_all(dir);
    return {worst <= 1e-12, fmt("max abs deviation %.3g over eps {0, 0.3, 1}", worst)};
}

// 5. Demo responses parse to the printed span lists; HTR of a constructed group.
Outcome span_round_trip() {
    const std::vector<std::vector<std::string>> expected{
        {"Bob agreed"},
        {"76", "the entire wreckage will be recovered within a day", "the jet made an evasive maneuver"}};
    const auto demos = annotate::demo_examples();
    bool pass = demos.size() == expected.size();
    for (std::size_t i = 0; pass && i < demos.size(); ++i) {
        const auto parsed = corpus::parse_annotation_response(demos[i].response, demos[i].summary);
        pass = parsed.spans == expected[i];
        const auto located = corpus::locate_spans(demos[i].summary, parsed.spans);
        pass = pass && located.size() == expected[i].size();
        for (std::size_t k = 0; pass && k < located.size(); ++k) {
            pass = utf8::slice(demos[i].summary, located[k].start, located[k].end) == expected[i][k];
        }
    }
    const std::string text = "one two three four five six seven eight nine ten";
    const auto tok = align::WordTokenizer::fit(std::vector<std::string>{text});
    corpus::LabeledSample p{"p", {"d", "g", "A document."}, {"d", "m", text}, corpus::Label::positive, {}, ""};
    corpus::LabeledSample n{"n", {"d", "g", "A document."}, {"d", "m", text}, corpus::Label::negative, {{4, 24}}, ""};
    const std::vector<corpus::LabeledSample> group{p, n};
    const auto stats = corpus::compute_stats(group, tok);
    const auto & g = stats.groups.begin()->second;
    const bool htr_ok = stats.groups.size() == 1 && tok.encode(text).size() == 10 && g.htr && *g.htr == 0.4;
    return {pass && htr_ok, fmt("demo spans %s; HTR %.3f", pass ? "match" : "differ", g.htr.value_or(-1.0))};
}

} // namespace

namespace {

// Seeded desk-scale experiment shared by criteria 6 to 8.
struct Measurements {
    double base_rate = 0.0;
    double sft_rate = 0.0;
    double tv_rate = 0.0;
    std::vector<eval::SweepRow> ul;
    std::vector<eval::SweepRow> ga;

    std::vector<double> numbers() const {
        std::vector<double> v{base_rate, sft_rate, tv_rate};
        for (const auto * rows : {&ul, &ga}) {
            for (const auto & r : *rows) {
                v.push_back(r.aggregate_score);
                v.push_back(r.hallucinated_fact_rate);
            }
        }
        return v;
    }
};

// Reference values from the first seeded run, in Measurements::numbers() order.
const std::vector<double> kPinned{
    0.22818254603682947, 0.23451327433628319, 0.23495145631067962, 0.7566666666666666, 0.23524229074889869,
    0.75466666666666682, 0.23679577464788731, 0.76233333333333342, 0.23247559893522626, 0.74680000000000002,
    0.24729241877256317, 0.70107142857142846, 0.30311355311355309, 0.75800000000000012, 0.23389232127096204,
    0.75700000000000023, 0.23497757847533632, 0.75566666666666682, 0.23800564440263405, 0.75600000000000012,
    0.24281466798810702, 0.753, 0.24749498997995992
};

const eval::SweepRow & at(const std::vector<eval::SweepRow> & rows, double epsilon) {
    for (const auto & r : rows) {
        if (r.epsilon == epsilon) {
            return r;
        }
    }
    throw std::runtime_error("missing sweep row");
}

Measurements measure() {
    const auto train_set = synth::gen_corpus(0, 5000, 0.5);
    const auto test_set = synth::gen_corpus(1, 500, 0.0);
    std::vector<corpus::LabeledSample> labeled;
    std::vector<std::string> texts;
    for (const auto & s : train_set) {
        labeled.push_back(synth::to_labeled(s));
        texts.push_back(s.document_text);
        texts.push_back(s.summary_text);
    }
    const auto tok = align::WordTokenizer::fit(texts);
    const auto samples = trainer::make_training_samples(labeled, tok, 80);
    const auto docs = eval::test_documents(test_set);
    const eval::OracleScorer oracle;

    // The pretrained summarizer: plain language modelling on every pair.
    model::Model base(model::ModelConfig{static_cast<int>(tok.vocab_size()), 80, 2, 32, 4, 0});
    trainer::TrainingConfig pre;
    pre.method = Method::lm;
    pre.learning_rate = 3e-3;
    pre.warmup_ratio = 0.05;
    pre.epochs = 10;
    trainer::train(base, samples, pre);

    trainer::TrainingConfig config;
    config.learning_rate = 1e-4;
    Measurements m;
    m.base_rate = eval::evaluate_model(base, tok, docs, oracle).hallucinated_fact_rate;
    {
        model::Model sft = base;
        auto c = config;
        c.method = Method::sft;
        trainer::train(sft, samples, c);
        m.sft_rate = eval::evaluate_model(sft, tok, docs, oracle).hallucinated_fact_rate;
    }
    {
        auto c = config;
        c.method = Method::tv;
        c.epsilon = 0.3;
        const auto run = trainer::train_task_vector_pipeline(base, samples, c);
        m.tv_rate = eval::evaluate_model(run.merged, tok, docs, oracle).hallucinated_fact_rate;
    }
    const auto grid = eval::default_epsilons();
    m.ul = eval::epsilon_sweep(base, tok, samples, docs, Method::ul, grid, oracle, config);
    m.ga = eval::epsilon_sweep(base, tok, samples, docs, Method::ga, grid, oracle, config);
    return m;
}

// 6. Span-aware methods against the SFT baseline.
Outcome directional(const Measurements & m) {
    const double ul = at(m.ul, 0.5).hallucinated_fact_rate;
    const double ga = at(m.ga, 0.01).hallucinated_fact_rate;
    const auto reduction = [&](double rate) { return (m.sft_rate - rate) / m.sft_rate; };
    const bool pass = ga <= m.sft_rate && ul <= m.sft_rate && m.tv_rate <= m.sft_rate && reduction(ul) >= 0.10 &&
                      reduction(m.tv_rate) >= 0.10;
    return {pass, fmt("rates base %.4f sft %.4f ul@0.5 %.4f (%+.1f%%) tv@0.3 %.4f (%+.1f%%) ga@0.01 %.4f (%+.1f%%)",
                      m.base_rate, m.sft_rate, ul, -100 * reduction(ul), m.tv_rate, -100 * reduction(m.tv_rate), ga,
                      -100 * reduction(ga))};
}

// 7. ul stays near its smallest-epsilon score; ga falls below it.
Outcome stability(const Measurements & m) {
    const double ul0 = at(m.ul, 0.01).aggregate_score;
    const double ga0 = at(m.ga, 0.01).aggregate_score;
    bool pass = m.ul.front().status == "ok" && m.ga.front().status == "ok";
    std::string ul_scores, ga_scores;
    for (const auto & r : m.ul) {
        pass = pass && r.status == "ok" && std::abs(r.aggregate_score - ul0) <= 0.10 * ul0;
        ul_scores += fmt(" %.4f", r.aggregate_score);
    }
    for (const auto & r : m.ga) {
        if (r.epsilon >= 0.1) {
            pass = pass && (r.status == "nan" || r.aggregate_score < ga0);
        }
        ga_scores += r.status == "nan" ? std::string(" nan") : fmt(" %.4f", r.aggregate_score);
    }
    return {pass, "ul scores" + ul_scores + "; ga scores" + ga_scores};
}

// 8. A second run reproduces every number bit for bit.
Outcome determinism(const Measurements & first, const Measurements & second) {
    const auto a = first.numbers();
    const auto b = second.numbers();
    std::size_t differ = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        differ += std::memcmp(&a[i], &b[i], sizeof(double)) != 0;
    }
    std::size_t off_pin = a.size();
    if (kPinned.size() == a.size()) {
        off_pin = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            off_pin += !(std::abs(a[i] - kPinned[i]) <= 1e-12);
        }
    }
    return {differ == 0 && off_pin == 0,
            fmt("%zu of %zu numbers differ between runs; %zu differ from the pinned reference", differ, a.size(),
                off_pin)};
}

std::vector<std::pair<std::string, Outcome>> run_experiments() {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::pair<std::string, Outcome>> out;
    try {
        const auto first = measure();
        std::printf("experiment numbers:");
        for (double v : first.numbers()) {
            std::printf(" %.17g", v);
        }
        std::printf(" (%.0fs)\n", seconds_since(start));
        out.emplace_back("span-aware methods beat the SFT baseline", directional(first));
        out.emplace_back("ul is stable across epsilon while ga degrades", stability(first));
        const auto second = measure();
        out.emplace_back("experiments reproduce bit-exactly", determinism(first, second));
    } catch (const std::exception & e) {
        const Outcome failed{false, std::string("error: ") + e.what()};
        while (out.size() < 3) {
            out.emplace_back("experiment", failed);
        }
    }
    return out;
}

} // namespace

int main() {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"loss values match the hand oracle", loss_hand_oracle},
        {"epsilon 0 reduces to the SFT baseline", epsilon_zero_equivalence},
        {"gradients match central differences", gradient_audit},
        {"task-vector merge matches checkpoint recombination", task_vector_algebra},
        {"span pipeline round trip and HTR", span_round_trip},
    };
    int failures = 0;
    int index = 0;
    const auto report = [&](const std::string & name, const Outcome & o) {
        ++index;
        failures += o.pass ? 0 : 1;
        std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", index, name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    };
    for (const auto & [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception & e) {
            o = {false, std::string("error: ") + e.what()};
        }
        report(name, o);
    }
    for (const auto & [name, o] : run_experiments()) {
        report(name, o);
    }
    std::printf("%d of %d criteria passed (%.0fs)\n", index - failures, index, seconds_since(start));
    return failures == 0 ? 0 : 1;
}
