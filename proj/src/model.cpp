#include "spanft/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "spanft/error.hpp"
#include "spanft/rng.hpp"

namespace spanft::model {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

struct LayerOffsets {
    std::size_t ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, fc_w, fc_b, proj_w, proj_b;
};

struct Offsets {
    std::size_t tok, pos;
    std::vector<LayerOffsets> layers;
    std::size_t lnf_g, lnf_b;
};

Offsets offsets_of(const std::vector<TensorSpec> & layout, const ModelConfig & config) {
    Offsets o{};
    std::size_t k = 0;
    o.tok = layout[k++].offset;
    o.pos = layout[k++].offset;
    for (int l = 0; l < config.n_layers; ++l) {
        LayerOffsets lo{};
        lo.ln1_g = layout[k++].offset;
        lo.ln1_b = layout[k++].offset;
        lo.qkv_w = layout[k++].offset;
        lo.qkv_b = layout[k++].offset;
        lo.out_w = layout[k++].offset;
        lo.out_b = layout[k++].offset;
        lo.ln2_g = layout[k++].offset;
        lo.ln2_b = layout[k++].offset;
        lo.fc_w = layout[k++].offset;
        lo.fc_b = layout[k++].offset;
        lo.proj_w = layout[k++].offset;
        lo.proj_b = layout[k++].offset;
        o.layers.push_back(lo);
    }
    o.lnf_g = layout[k++].offset;
    o.lnf_b = layout[k++].offset;
    return o;
}

// Fixed-order dot product with four partial sums.
inline double dot(const double * a, const double * b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) {
        s0 += a[i] * b[i];
    }
    return (s0 + s2) + (s1 + s3);
}

inline void axpy(double a, const double * x, double * y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += a * x[i];
    }
}

// y = b + x W, W is [in, out].
inline void affine(const double * x, const double * w, const double * b, double * y, std::size_t in,
                   std::size_t out) {
    std::copy(b, b + out, y);
    for (std::size_t i = 0; i < in; ++i) {
        axpy(x[i], w + i * out, y, out);
    }
}

// Given dy, accumulates dW, db and writes dx.
inline void affine_backward(const double * x, const double * w, const double * dy, double * dx, double * dw,
                            double * db, std::size_t in, std::size_t out) {
    for (std::size_t o = 0; o < out; ++o) {
        db[o] += dy[o];
    }
    for (std::size_t i = 0; i < in; ++i) {
        dx[i] = dot(w + i * out, dy, out);
        axpy(x[i], dy, dw + i * out, out);
    }
}

inline void layer_norm(const double * x, const double * gain, const double * bias, double * xhat, double & rstd,
                       double * y, std::size_t n) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean += x[i];
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double c = x[i] - mean;
        var += c * c;
    }
    var /= static_cast<double>(n);
    rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t i = 0; i < n; ++i) {
        xhat[i] = (x[i] - mean) * rstd;
        y[i] = xhat[i] * gain[i] + bias[i];
    }
}

// Adds the input gradient to dx.
inline void layer_norm_backward(const double * xhat, double rstd, const double * gain, const double * dy,
                                double * dx, double * dgain, double * dbias, double * scratch, std::size_t n) {
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dgain[i] += dy[i] * xhat[i];
        dbias[i] += dy[i];
        scratch[i] = dy[i] * gain[i];
        mean_d += scratch[i];
        mean_dx += scratch[i] * xhat[i];
    }
    mean_d /= static_cast<double>(n);
    mean_dx /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        dx[i] += rstd * (scratch[i] - mean_d - xhat[i] * mean_dx);
    }
}

constexpr double kGeluC = 0.79788456080286535588;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

inline double gelu(double u) {
    return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
}

inline double gelu_grad(double u) {
    const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

void log_softmax(double * row, std::size_t n) {
    const double m = *std::max_element(row, row + n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sum += std::exp(row[i] - m);
    }
    const double lse = m + std::log(sum);
    for (std::size_t i = 0; i < n; ++i) {
        row[i] -= lse;
    }
}

void prepare(Activations & a, const ModelConfig & c) {
    const std::size_t C = sz(c.context_length), d = sz(c.d_model), H = sz(c.n_heads), V = sz(c.vocab_size);
    if (a.layers.size() == sz(c.n_layers) && a.hf.size() == C * d && a.logprobs.size() == C * V &&
        (a.layers.empty() || a.layers[0].probs.size() == H * C * C)) {
        return;
    }
    a.layers.assign(sz(c.n_layers), {});
    for (auto & l : a.layers) {
        l.x_in.assign(C * d, 0.0);
        l.xhat1.assign(C * d, 0.0);
        l.rstd1.assign(C, 0.0);
        l.h1.assign(C * d, 0.0);
        l.qkv.assign(C * 3 * d, 0.0);
        l.probs.assign(H * C * C, 0.0);
        l.att.assign(C * d, 0.0);
        l.x_mid.assign(C * d, 0.0);
        l.xhat2.assign(C * d, 0.0);
        l.rstd2.assign(C, 0.0);
        l.h2.assign(C * d, 0.0);
        l.u.assign(C * 4 * d, 0.0);
        l.g.assign(C * 4 * d, 0.0);
    }
    a.xhatf.assign(C * d, 0.0);
    a.rstdf.assign(C, 0.0);
    a.hf.assign(C * d, 0.0);
    a.logprobs.assign(C * V, 0.0);
}

} // namespace

void ModelConfig::validate() const {
    if (vocab_size <= 0 || context_length <= 0 || n_layers <= 0 || d_model <= 0 || n_heads <= 0) {
        fail(ErrorKind::InvalidArgument, "model sizes must be positive");
    }
    if (d_model % n_heads != 0) {
        fail(ErrorKind::InvalidArgument, "d_model must be divisible by n_heads");
    }
}

std::vector<TensorSpec> parameter_layout(const ModelConfig & config) {
    config.validate();
    const std::size_t V = sz(config.vocab_size), C = sz(config.context_length), d = sz(config.d_model);
    std::vector<TensorSpec> layout;
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (auto s : shape) {
            n *= s;
        }
        layout.push_back({std::move(name), std::move(shape), offset, n});
        offset += n;
    };
    add("tok_emb", {V, d});
    add("pos_emb", {C, d});
    for (int l = 0; l < config.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        add(p + "ln1.gain", {d});
        add(p + "ln1.bias", {d});
        add(p + "attn.qkv.weight", {d, 3 * d});
        add(p + "attn.qkv.bias", {3 * d});
        add(p + "attn.out.weight", {d, d});
        add(p + "attn.out.bias", {d});
        add(p + "ln2.gain", {d});
        add(p + "ln2.bias", {d});
        add(p + "mlp.fc.weight", {d, 4 * d});
        add(p + "mlp.fc.bias", {4 * d});
        add(p + "mlp.proj.weight", {4 * d, d});
        add(p + "mlp.proj.bias", {d});
    }
    add("ln_f.gain", {d});
    add("ln_f.bias", {d});
    return layout;
}

std::size_t parameter_count(const ModelConfig & config) {
    const auto layout = parameter_layout(config);
    return layout.back().offset + layout.back().size;
}

std::span<const double> NamedVector::tensor(std::string_view name) const {
    for (const auto & spec : layout) {
        if (spec.name == name) {
            return {values.data() + spec.offset, spec.size};
        }
    }
    fail(ErrorKind::InvalidArgument, "no tensor named " + std::string(name));
}

Model::Model(const ModelConfig & config) : config_(config), layout_(parameter_layout(config)) {
    weights_.assign(layout_.back().offset + layout_.back().size, 0.0);
    Rng rng(config.seed);
    const double residual_std = kInitStd / std::sqrt(2.0 * config.n_layers);
    for (const auto & spec : layout_) {
        double * w = weights_.data() + spec.offset;
        const auto & n = spec.name;
        if (n.ends_with(".gain")) {
            std::fill(w, w + spec.size, 1.0);
        } else if (n.ends_with(".bias")) {
            // zero
        } else {
            const double std = (n.ends_with("attn.out.weight") || n.ends_with("mlp.proj.weight")) ? residual_std
                                                                                                  : kInitStd;
            for (std::size_t i = 0; i < spec.size; ++i) {
                w[i] = rng.normal(0.0, std);
            }
        }
    }
}

Model::~Model() = default;
Model::Model(const Model &) = default;
Model & Model::operator=(const Model &) = default;
Model::Model(Model &&) noexcept = default;
Model & Model::operator=(Model &&) noexcept = default;

ParameterVector Model::get_parameters() const {
    ParameterVector p;
    p.layout = layout_;
    p.values = weights_;
    return p;
}

void Model::set_parameters(const ParameterVector & parameters) {
    if (parameters.layout != layout_ || parameters.values.size() != weights_.size()) {
        fail(ErrorKind::ShapeMismatch, "parameter layout does not match the model");
    }
    weights_ = parameters.values;
}

void Model::step(const int * ids, std::size_t t, Activations & a) const {
    const auto & c = config_;
    const std::size_t C = sz(c.context_length), d = sz(c.d_model), H = sz(c.n_heads), V = sz(c.vocab_size);
    const std::size_t dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Offsets o = offsets_of(layout_, c);
    const double * W = weights_.data();

    const int id = ids[t];
    if (id < 0 || sz(id) >= V) {
        fail(ErrorKind::InvalidArgument, "token id out of range: " + std::to_string(id));
    }
    std::vector<double> x(d), tmp(4 * d);
    for (std::size_t i = 0; i < d; ++i) {
        x[i] = W[o.tok + sz(id) * d + i] + W[o.pos + t * d + i];
    }
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        auto & L = a.layers[l];
        const auto & lo = o.layers[l];
        std::copy(x.begin(), x.end(), L.x_in.begin() + t * d);
        layer_norm(x.data(), W + lo.ln1_g, W + lo.ln1_b, &L.xhat1[t * d], L.rstd1[t], &L.h1[t * d], d);
        double * qkv_t = &L.qkv[t * 3 * d];
        affine(&L.h1[t * d], W + lo.qkv_w, W + lo.qkv_b, qkv_t, d, 3 * d);
        double * att_t = &L.att[t * d];
        std::fill(att_t, att_t + d, 0.0);
        for (std::size_t h = 0; h < H; ++h) {
            double * p = &L.probs[(h * C + t) * C];
            const double * q = qkv_t + h * dh;
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t s = 0; s <= t; ++s) {
                p[s] = dot(q, &L.qkv[s * 3 * d + d + h * dh], dh) * scale;
                m = std::max(m, p[s]);
            }
            double sum = 0.0;
            for (std::size_t s = 0; s <= t; ++s) {
                p[s] = std::exp(p[s] - m);
                sum += p[s];
            }
            for (std::size_t s = 0; s <= t; ++s) {
                p[s] /= sum;
                axpy(p[s], &L.qkv[s * 3 * d + 2 * d + h * dh], att_t + h * dh, dh);
            }
        }
        affine(att_t, W + lo.out_w, W + lo.out_b, tmp.data(), d, d);
        for (std::size_t i = 0; i < d; ++i) {
            x[i] += tmp[i];
        }
        std::copy(x.begin(), x.end(), L.x_mid.begin() + t * d);
        layer_norm(x.data(), W + lo.ln2_g, W + lo.ln2_b, &L.xhat2[t * d], L.rstd2[t], &L.h2[t * d], d);
        double * u = &L.u[t * 4 * d];
        double * g = &L.g[t * 4 * d];
        affine(&L.h2[t * d], W + lo.fc_w, W + lo.fc_b, u, d, 4 * d);
        for (std::size_t i = 0; i < 4 * d; ++i) {
            g[i] = gelu(u[i]);
        }
        affine(g, W + lo.proj_w, W + lo.proj_b, tmp.data(), 4 * d, d);
        for (std::size_t i = 0; i < d; ++i) {
            x[i] += tmp[i];
        }
    }
    double * hf = &a.hf[t * d];
    layer_norm(x.data(), W + o.lnf_g, W + o.lnf_b, &a.xhatf[t * d], a.rstdf[t], hf, d);
    double * row = &a.logprobs[t * V];
    for (std::size_t v = 0; v < V; ++v) {
        row[v] = dot(hf, W + o.tok + v * d, d);
    }
    log_softmax(row, V);
}

LogProbs Model::forward(std::span<const int> token_ids) const {
    Activations cache;
    return forward(token_ids, cache);
}

LogProbs Model::forward(std::span<const int> token_ids, Activations & cache) const {
    if (token_ids.size() > sz(config_.context_length)) {
        fail(ErrorKind::ContextOverflow, "sequence of " + std::to_string(token_ids.size()) +
                                             " tokens exceeds context length " +
                                             std::to_string(config_.context_length));
    }
    if (token_ids.empty()) {
        fail(ErrorKind::InvalidArgument, "empty token sequence");
    }
    prepare(cache, config_);
    cache.ids.assign(token_ids.begin(), token_ids.end());
    cache.length = token_ids.size();
    for (std::size_t t = 0; t < cache.length; ++t) {
        step(cache.ids.data(), t, cache);
    }
    const std::size_t V = sz(config_.vocab_size);
    LogProbs out;
    out.rows = cache.length;
    out.vocab = V;
    out.values.assign(cache.logprobs.begin(), cache.logprobs.begin() + static_cast<std::ptrdiff_t>(cache.length * V));
    return out;
}

void Model::backward(const Activations & a, std::span<const double> dlogits, std::span<double> gradient) const {
    const auto & c = config_;
    const std::size_t C = sz(c.context_length), d = sz(c.d_model), H = sz(c.n_heads), V = sz(c.vocab_size);
    const std::size_t T = a.length, dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    if (dlogits.size() != T * V) {
        fail(ErrorKind::ShapeMismatch, "dlogits must be [length, vocab]");
    }
    if (gradient.size() != weights_.size()) {
        fail(ErrorKind::ShapeMismatch, "gradient buffer does not match parameter count");
    }
    const Offsets o = offsets_of(layout_, c);
    const double * W = weights_.data();
    double * G = gradient.data();

    std::vector<double> dx(T * d, 0.0), dh_buf(T * 4 * d, 0.0), dqkv(T * 3 * d, 0.0), scratch(d), dnorm(d), dp(C);

    // Output head and final norm.
    for (std::size_t t = 0; t < T; ++t) {
        const double * dl = dlogits.data() + t * V;
        if (std::all_of(dl, dl + V, [](double v) { return v == 0.0; })) {
            continue;
        }
        double * dhf = dh_buf.data();
        std::fill(dhf, dhf + d, 0.0);
        const double * hf = &a.hf[t * d];
        for (std::size_t v = 0; v < V; ++v) {
            if (dl[v] != 0.0) {
                axpy(dl[v], W + o.tok + v * d, dhf, d);
                axpy(dl[v], hf, G + o.tok + v * d, d);
            }
        }
        layer_norm_backward(&a.xhatf[t * d], a.rstdf[t], W + o.lnf_g, dhf, &dx[t * d], G + o.lnf_g, G + o.lnf_b,
                            scratch.data(), d);
    }

    for (std::size_t li = a.layers.size(); li-- > 0;) {
        const auto & L = a.layers[li];
        const auto & lo = o.layers[li];
        // MLP block: dx holds d(loss)/d(x_out).
        for (std::size_t t = 0; t < T; ++t) {
            const double * dout = &dx[t * d];
            double * dg = &dh_buf[t * 4 * d];
            affine_backward(&L.g[t * 4 * d], W + lo.proj_w, dout, dg, G + lo.proj_w, G + lo.proj_b, 4 * d, d);
            const double * u = &L.u[t * 4 * d];
            for (std::size_t i = 0; i < 4 * d; ++i) {
                dg[i] *= gelu_grad(u[i]);
            }
            affine_backward(&L.h2[t * d], W + lo.fc_w, dg, dnorm.data(), G + lo.fc_w, G + lo.fc_b, d, 4 * d);
            layer_norm_backward(&L.xhat2[t * d], L.rstd2[t], W + lo.ln2_g, dnorm.data(), &dx[t * d], G + lo.ln2_g,
                                G + lo.ln2_b, scratch.data(), d);
        }
        // Attention block: dx holds d(loss)/d(x_mid).
        std::fill(dqkv.begin(), dqkv.end(), 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            double * datt = &dh_buf[t * d];
            affine_backward(&L.att[t * d], W + lo.out_w, &dx[t * d], datt, G + lo.out_w, G + lo.out_b, d, d);
        }
        for (std::size_t t = 0; t < T; ++t) {
            const double * datt = &dh_buf[t * d];
            for (std::size_t h = 0; h < H; ++h) {
                const double * p = &L.probs[(h * C + t) * C];
                const double * da = datt + h * dh;
                double sum = 0.0;
                for (std::size_t s = 0; s <= t; ++s) {
                    dp[s] = dot(da, &L.qkv[s * 3 * d + 2 * d + h * dh], dh);
                    axpy(p[s], da, &dqkv[s * 3 * d + 2 * d + h * dh], dh);
                    sum += p[s] * dp[s];
                }
                const double * q = &L.qkv[t * 3 * d + h * dh];
                double * dq = &dqkv[t * 3 * d + h * dh];
                for (std::size_t s = 0; s <= t; ++s) {
                    const double ds = p[s] * (dp[s] - sum) * scale;
                    if (ds != 0.0) {
                        axpy(ds, &L.qkv[s * 3 * d + d + h * dh], dq, dh);
                        axpy(ds, q, &dqkv[s * 3 * d + d + h * dh], dh);
                    }
                }
            }
        }
        for (std::size_t t = 0; t < T; ++t) {
            affine_backward(&L.h1[t * d], W + lo.qkv_w, &dqkv[t * 3 * d], dnorm.data(), G + lo.qkv_w, G + lo.qkv_b,
                            d, 3 * d);
            layer_norm_backward(&L.xhat1[t * d], L.rstd1[t], W + lo.ln1_g, dnorm.data(), &dx[t * d], G + lo.ln1_g,
                                G + lo.ln1_b, scratch.data(), d);
        }
    }

    for (std::size_t t = 0; t < T; ++t) {
        axpy(1.0, &dx[t * d], G + o.tok + sz(a.ids[t]) * d, d);
        axpy(1.0, &dx[t * d], G + o.pos + t * d, d);
    }
}

Model::Decoder::Decoder(const Model & model) : model_(&model), state_(std::make_unique<Activations>()) {
    prepare(*state_, model.config());
}

Model::Decoder::~Decoder() = default;
Model::Decoder::Decoder(Decoder &&) noexcept = default;

std::span<const double> Model::Decoder::push(int token_id) {
    const auto & c = model_->config();
    if (ids_.size() >= sz(c.context_length)) {
        fail(ErrorKind::ContextOverflow, "decoder is at the context length");
    }
    ids_.push_back(token_id);
    const std::size_t t = ids_.size() - 1;
    state_->length = ids_.size();
    model_->step(ids_.data(), t, *state_);
    const std::size_t V = sz(c.vocab_size);
    return {state_->logprobs.data() + t * V, V};
}

std::size_t Model::Decoder::length() const noexcept { return ids_.size(); }

Probabilities forward_probs(const Model & model, std::span<const int> token_ids) {
    auto lp = model.forward(token_ids);
    Probabilities p{lp.rows, lp.vocab, std::move(lp.values)};
    for (auto & v : p.values) {
        v = std::exp(v);
    }
    return p;
}

namespace {

int argmax(std::span<const double> row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

int sample_nucleus(std::span<const double> logprobs, double top_p, double temperature, Rng & rng) {
    std::vector<double> p(logprobs.size());
    const double m = *std::max_element(logprobs.begin(), logprobs.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp((logprobs[i] - m) / temperature);
        sum += p[i];
    }
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    std::size_t keep = 0;
    double mass = 0.0;
    while (keep < order.size()) {
        mass += p[order[keep]] / sum;
        ++keep;
        if (mass >= top_p) {
            break;
        }
    }
    double kept = 0.0;
    for (std::size_t k = 0; k < keep; ++k) {
        kept += p[order[k]];
    }
    double r = rng.uniform() * kept;
    for (std::size_t k = 0; k < keep; ++k) {
        r -= p[order[k]];
        if (r < 0.0) {
            return static_cast<int>(order[k]);
        }
    }
    return static_cast<int>(order[keep - 1]);
}

} // namespace

std::vector<int> generate(const Model & model, std::span<const int> prompt_ids, std::size_t max_new,
                          const GenerationStrategy & strategy, int end_token) {
    const std::size_t C = sz(model.config().context_length);
    if (prompt_ids.empty()) {
        fail(ErrorKind::InvalidArgument, "generation needs a non-empty prompt");
    }
    if (prompt_ids.size() > C) {
        fail(ErrorKind::ContextOverflow, "prompt of " + std::to_string(prompt_ids.size()) +
                                             " tokens exceeds context length " + std::to_string(C));
    }
    if (strategy.kind == GenerationStrategy::Kind::nucleus &&
        (!(strategy.top_p > 0.0) || strategy.top_p > 1.0 || !(strategy.temperature > 0.0))) {
        fail(ErrorKind::InvalidArgument, "nucleus sampling needs 0 < top_p <= 1 and temperature > 0");
    }
    Rng rng(strategy.seed);
    Model::Decoder decoder(model);
    std::vector<int> out(prompt_ids.begin(), prompt_ids.end());
    std::span<const double> next;
    for (int id : prompt_ids) {
        next = decoder.push(id);
    }
    for (std::size_t k = 0; k < max_new && out.size() < C; ++k) {
        const int token = strategy.kind == GenerationStrategy::Kind::greedy
            ? argmax(next)
            : sample_nucleus(next, strategy.top_p, strategy.temperature, rng);
        out.push_back(token);
        if (token == end_token || out.size() >= C) {
            break;
        }
        next = decoder.push(token);
    }
    return out;
}

} // namespace spanft::model
