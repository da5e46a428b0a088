#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "spanft/span.hpp"

// Tokenization with character offsets, and the mapping from character-level
// hallucination spans to token-level masks.
namespace spanft::align {

struct TokenizedText {
    std::vector<int> token_ids;
    std::vector<CharSpan> offsets;  // one per token, code-point ranges into the source text
    std::string vocab_tag;
    std::size_t text_length = 0;    // in code points

    std::size_t size() const noexcept { return token_ids.size(); }
};

// Sorted, duplicate-free token positions in [0, T).
struct TokenMask {
    std::vector<std::size_t> indices;

    bool empty() const noexcept { return indices.empty(); }
    std::size_t size() const noexcept { return indices.size(); }
    bool contains(std::size_t index) const noexcept;

    friend bool operator==(const TokenMask &, const TokenMask &) = default;
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual TokenizedText encode(std::string_view text) const = 0;
    virtual std::string decode(std::span<const int> token_ids) const = 0;
    virtual int vocab_size() const = 0;
    virtual std::string vocab_tag() const = 0;
};

// A maximal run of word characters, or a single punctuation character.
struct Piece {
    std::u32string text;
    CharSpan range;
    bool space_before = false;
};

std::vector<Piece> split_pieces(std::u32string_view text);

// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

// Reference tokenizer: whitespace/punctuation segmentation over a closed
// vocabulary of pieces. A piece preceded by whitespace is stored with a
// leading U+2581 marker, so decoding restores single spaces. Pieces outside
// the vocabulary encode as <unk> and decode as the literal "<unk>".
class WordTokenizer final : public Tokenizer {
public:
    static constexpr std::string_view kUnk = "<unk>";
    static constexpr std::string_view kSummarize = "<sum>";
    static constexpr std::string_view kEos = "<eos>";
    static constexpr std::string_view kSpaceMarker = "▁";

    static constexpr int kUnkId = 0;
    static constexpr int kSummarizeId = 1;
    static constexpr int kEosId = 2;

    // Special tokens only.
    WordTokenizer();
    // `vocabulary` must begin with the three special tokens in id order.
    explicit WordTokenizer(std::vector<std::string> vocabulary);

    // Learns the vocabulary of every piece occurring in `texts`, sorted.
    static WordTokenizer fit(std::span<const std::string> texts);

    TokenizedText encode(std::string_view text) const override;
    std::string decode(std::span<const int> token_ids) const override;
    int vocab_size() const override { return static_cast<int>(vocabulary_.size()); }
    std::string vocab_tag() const override { return tag_; }

    const std::vector<std::string> & vocabulary() const noexcept { return vocabulary_; }
    std::optional<int> id_of(std::string_view piece) const;

private:
    std::vector<std::string> vocabulary_;
    std::unordered_map<std::string, int> ids_;
    std::string tag_;
};

// A token is masked iff its range overlaps some span by at least one character.
// Throws SpanOutOfRange for empty or out-of-bounds spans.
TokenMask spans_to_token_mask(const TokenizedText & tokens, std::span<const CharSpan> char_spans);

} // namespace spanft::align
