#include "spanft/align.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <set>

#include "spanft/error.hpp"
#include "spanft/utf8.hpp"

namespace spanft::align {

namespace {

std::string piece_key(const Piece & piece) {
    std::string key;
    if (piece.space_before) {
        key = WordTokenizer::kSpaceMarker;
    }
    key += utf8::encode(piece.text);
    return key;
}

std::string hash_tag(const std::vector<std::string> & vocabulary) {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto & entry : vocabulary) {
        for (unsigned char c : entry) {
            h = (h ^ c) * 1099511628211ull;
        }
        h = (h ^ 0x0A) * 1099511628211ull;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return "word-v1:" + std::to_string(vocabulary.size()) + ":" + buf;
}

} // namespace

bool TokenMask::contains(std::size_t index) const noexcept {
    return std::binary_search(indices.begin(), indices.end(), index);
}

std::vector<Piece> split_pieces(std::u32string_view text) {
    std::vector<Piece> pieces;
    bool space_pending = false;
    std::size_t i = 0;
    while (i < text.size()) {
        const char32_t c = text[i];
        if (utf8::is_space(c)) {
            space_pending = true;
            ++i;
            continue;
        }
        Piece piece;
        piece.space_before = space_pending;
        space_pending = false;
        if (utf8::is_punct(c)) {
            piece.text = std::u32string(1, c);
            piece.range = {i, i + 1};
            ++i;
        } else {
            const std::size_t start = i;
            while (i < text.size() && !utf8::is_space(text[i]) && !utf8::is_punct(text[i])) {
                ++i;
            }
            piece.text = std::u32string(text.substr(start, i - start));
            piece.range = {start, i};
        }
        pieces.push_back(std::move(piece));
    }
    return pieces;
}

std::string normalize_whitespace(std::string_view text) {
    const auto cps = utf8::decode(text);
    std::u32string out;
    bool pending = false;
    for (char32_t c : cps) {
        if (utf8::is_space(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending) {
            out.push_back(U' ');
            pending = false;
        }
        out.push_back(c);
    }
    return utf8::encode(out);
}

WordTokenizer::WordTokenizer()
    : WordTokenizer(std::vector<std::string>{std::string(kUnk), std::string(kSummarize), std::string(kEos)}) {}

WordTokenizer::WordTokenizer(std::vector<std::string> vocabulary) : vocabulary_(std::move(vocabulary)) {
    if (vocabulary_.size() < 3 || vocabulary_[kUnkId] != kUnk || vocabulary_[kSummarizeId] != kSummarize ||
        vocabulary_[kEosId] != kEos) {
        fail(ErrorKind::InvalidArgument, "vocabulary must start with <unk>, <sum>, <eos>");
    }
    for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
        if (!ids_.emplace(vocabulary_[i], static_cast<int>(i)).second) {
            fail(ErrorKind::InvalidArgument, "duplicate vocabulary entry: " + vocabulary_[i]);
        }
    }
    tag_ = hash_tag(vocabulary_);
}

WordTokenizer WordTokenizer::fit(std::span<const std::string> texts) {
    std::set<std::string> keys;
    for (const auto & text : texts) {
        for (const auto & piece : split_pieces(utf8::decode(text))) {
            keys.insert(piece_key(piece));
        }
    }
    std::vector<std::string> vocabulary{std::string(kUnk), std::string(kSummarize), std::string(kEos)};
    for (const auto & key : keys) {
        if (key != kUnk && key != kSummarize && key != kEos) {
            vocabulary.push_back(key);
        }
    }
    return WordTokenizer(std::move(vocabulary));
}

std::optional<int> WordTokenizer::id_of(std::string_view piece) const {
    const auto it = ids_.find(std::string(piece));
    if (it == ids_.end()) {
        return std::nullopt;
    }
    return it->second;
}

TokenizedText WordTokenizer::encode(std::string_view text) const {
    const auto cps = utf8::decode(text);
    TokenizedText out;
    out.vocab_tag = tag_;
    out.text_length = cps.size();
    for (const auto & piece : split_pieces(cps)) {
        const auto it = ids_.find(piece_key(piece));
        out.token_ids.push_back(it == ids_.end() ? kUnkId : it->second);
        out.offsets.push_back(piece.range);
    }
    return out;
}

std::string WordTokenizer::decode(std::span<const int> token_ids) const {
    std::string out;
    for (int id : token_ids) {
        if (id < 0 || id >= vocab_size()) {
            fail(ErrorKind::InvalidArgument, "token id out of range: " + std::to_string(id));
        }
        const std::string & key = vocabulary_[static_cast<std::size_t>(id)];
        if (key.starts_with(kSpaceMarker)) {
            if (!out.empty()) {
                out.push_back(' ');
            }
            out.append(key, kSpaceMarker.size());
        } else {
            out += key;
        }
    }
    return out;
}

TokenMask spans_to_token_mask(const TokenizedText & tokens, std::span<const CharSpan> char_spans) {
    for (const auto & span : char_spans) {
        if (span.start >= span.end || span.end > tokens.text_length) {
            fail(ErrorKind::SpanOutOfRange, "span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                                                ") invalid for text of length " + std::to_string(tokens.text_length));
        }
    }
    TokenMask mask;
    for (std::size_t t = 0; t < tokens.offsets.size(); ++t) {
        const bool hit = std::any_of(char_spans.begin(), char_spans.end(),
                                     [&](const CharSpan & s) { return s.overlaps(tokens.offsets[t]); });
        if (hit) {
            mask.indices.push_back(t);
        }
    }
    return mask;
}

} // namespace spanft::align
