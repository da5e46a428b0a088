#pragma once

#include <compare>
#include <cstddef>

namespace spanft {

// Half-open [start, end) range of code-point offsets.
struct CharSpan {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const noexcept { return end - start; }
    bool overlaps(const CharSpan & other) const noexcept { return start < other.end && other.start < end; }

    friend auto operator<=>(const CharSpan &, const CharSpan &) = default;
};

} // namespace spanft
