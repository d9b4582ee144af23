#include "odx/tokens.hpp"

namespace odx {

namespace {

enum class Piece { Letter, Digit, Space, Punct };

Piece classify(unsigned char c) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) return Piece::Letter;
    if (c >= '0' && c <= '9') return Piece::Digit;
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return Piece::Space;
    return Piece::Punct;
}

constexpr long ceil_div(long n, long k) { return (n + k - 1) / k; }

long piece_cost(Piece kind, long length, bool has_newline) {
    switch (kind) {
        case Piece::Letter: return ceil_div(length, 9);
        case Piece::Digit: return ceil_div(length, 2);
        case Piece::Punct: return ceil_div(length, 2);
        case Piece::Space: return (has_newline || length > 1) ? 1 : 0;
    }
    return 0;
}

}  // namespace

long estimate_tokens(std::string_view text) {
    long total = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        const Piece kind = classify(static_cast<unsigned char>(text[i]));
        std::size_t j = i;
        bool newline = false;
        while (j < text.size() && classify(static_cast<unsigned char>(text[j])) == kind) {
            newline = newline || text[j] == '\n';
            ++j;
        }
        total += piece_cost(kind, static_cast<long>(j - i), newline);
        i = j;
    }
    return total;
}

}  // namespace odx
