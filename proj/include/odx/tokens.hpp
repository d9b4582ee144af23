#pragma once

#include <string_view>

namespace odx {

/// Approximate BPE token count of `text`.
///
/// The text is split into pieces the way byte-pair tokenizers pre-tokenize:
/// letter runs, digit runs, punctuation runs and whitespace runs. Each piece
/// costs ceil(bytes / k) tokens with a per-class k (letters 9, digits 2,
/// punctuation 2); a single space is free because it attaches to the next
/// piece, any longer whitespace run or line break costs one token. Per-piece
/// costs only grow when a piece is extended, so the estimate is monotone:
/// estimate(a + b) >= max(estimate(a), estimate(b)). Returns 0 for "".
long estimate_tokens(std::string_view text);

}  // namespace odx
