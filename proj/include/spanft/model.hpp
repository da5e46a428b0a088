#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// A small pre-norm causal transformer language model with learned positional
// embeddings and a weight-tied output head, trained with hand-written
// reverse-mode gradients in double precision.
namespace spanft::model {

struct ModelConfig {
    int vocab_size = 0;
    int context_length = 80;
    int n_layers = 2;
    int d_model = 32;
    int n_heads = 4;
    std::uint64_t seed = 0;

    // Throws InvalidArgument unless all sizes are positive and d_model % n_heads == 0.
    void validate() const;

    friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

struct TensorSpec {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;

    friend bool operator==(const TensorSpec &, const TensorSpec &) = default;
};

// Deterministic tensor order. Dense weights are stored input-major: a
// [in, out] matrix maps x to x * W.
std::vector<TensorSpec> parameter_layout(const ModelConfig & config);

// V*d + C*d + L*(12*d^2 + 13*d) + 2*d
std::size_t parameter_count(const ModelConfig & config);

struct NamedVector {
    std::vector<TensorSpec> layout;
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    std::span<const double> tensor(std::string_view name) const;
    bool same_shape(const NamedVector & other) const noexcept { return layout == other.layout; }

    friend bool operator==(const NamedVector &, const NamedVector &) = default;
};

struct ParameterVector : NamedVector {};

// Row-major [rows, vocab] matrix of next-token log-probabilities: row t is the
// distribution over the token at position t + 1.
struct LogProbs {
    std::size_t rows = 0;
    std::size_t vocab = 0;
    std::vector<double> values;

    double at(std::size_t row, std::size_t token) const { return values[row * vocab + token]; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * vocab, vocab}; }
};

// Same layout as LogProbs, holding probabilities.
struct Probabilities {
    std::size_t rows = 0;
    std::size_t vocab = 0;
    std::vector<double> values;

    double at(std::size_t row, std::size_t token) const { return values[row * vocab + token]; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * vocab, vocab}; }
};

// Per-sequence activations kept for the backward pass. Buffers are sized for
// the full context once and reused across calls.
struct LayerActivations {
    std::vector<double> x_in, xhat1, rstd1, h1, qkv, probs, att, x_mid, xhat2, rstd2, h2, u, g;
};

struct Activations {
    std::size_t length = 0;
    std::vector<int> ids;
    std::vector<LayerActivations> layers;
    std::vector<double> xhatf, rstdf, hf, logprobs;
};

class Model {
public:
    // Deterministic initialization from config.seed.
    explicit Model(const ModelConfig & config);
    ~Model();
    Model(const Model &);
    Model & operator=(const Model &);
    Model(Model &&) noexcept;
    Model & operator=(Model &&) noexcept;

    const ModelConfig & config() const noexcept { return config_; }

    ParameterVector get_parameters() const;
    // Throws ShapeMismatch when the layout differs.
    void set_parameters(const ParameterVector & parameters);

    std::span<const double> weights() const noexcept { return weights_; }
    std::span<double> weights() noexcept { return weights_; }
    const std::vector<TensorSpec> & layout() const noexcept { return layout_; }

    // Throws ContextOverflow when token_ids exceeds the context length.
    LogProbs forward(std::span<const int> token_ids) const;
    LogProbs forward(std::span<const int> token_ids, Activations & cache) const;

    // Accumulates d(loss)/d(weights) into `gradient` given d(loss)/d(logits)
    // for the sequence last passed through forward(ids, cache).
    void backward(const Activations & cache, std::span<const double> dlogits, std::span<double> gradient) const;

    // Incremental decoding with a key/value cache. Produces log-probabilities
    // identical to forward() for the same prefix.
    class Decoder {
    public:
        explicit Decoder(const Model & model);
        ~Decoder();
        Decoder(Decoder &&) noexcept;

        // Appends one token; returns log-probabilities of the next token.
        std::span<const double> push(int token_id);
        std::size_t length() const noexcept;

    private:
        const Model * model_;
        std::unique_ptr<Activations> state_;
        std::vector<int> ids_;
    };

private:
    friend class Decoder;
    void step(const int * ids, std::size_t t, Activations & cache) const;

    ModelConfig config_;
    std::vector<TensorSpec> layout_;
    std::vector<double> weights_;
};

Probabilities forward_probs(const Model & model, std::span<const int> token_ids);

struct GenerationStrategy {
    enum class Kind { greedy, nucleus } kind = Kind::greedy;
    double top_p = 1.0;
    double temperature = 1.0;
    std::uint64_t seed = 0;

    static GenerationStrategy greedy() { return {}; }
    static GenerationStrategy nucleus(double top_p, double temperature, std::uint64_t seed) {
        return {Kind::nucleus, top_p, temperature, seed};
    }
};

// Returns prompt + generated tokens; generation stops after `end_token` (which
// is kept) or after max_new tokens, whichever comes first, and never exceeds
// the context length. Throws ContextOverflow when the prompt alone does.
std::vector<int> generate(const Model & model, std::span<const int> prompt_ids, std::size_t max_new,
                          const GenerationStrategy & strategy, int end_token);

// Checkpoint: a text header line with JSON metadata followed by the raw
// little-endian float64 parameter payload.
struct Checkpoint {
    ModelConfig config;
    ParameterVector parameters;
    std::string vocab_tag;
    std::vector<std::string> vocabulary;
};

inline constexpr int kCheckpointSchemaVersion = 1;

void save_checkpoint(std::ostream & out, const Checkpoint & checkpoint);
Checkpoint load_checkpoint(std::istream & in);
void save_checkpoint(const std::string & path, const Checkpoint & checkpoint);
Checkpoint load_checkpoint(const std::string & path);

// FNV-1a 64 over the payload bytes, hex-encoded.
std::string parameter_hash(const ParameterVector & parameters);

Model model_from_checkpoint(const Checkpoint & checkpoint);

} // namespace spanft::model
