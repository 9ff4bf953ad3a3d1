//! Tokenization shared by retrieval, the reward encoder and query-length limits.

/// Lowercases `text` and splits it on every non-alphanumeric character.
///
/// This is the analyzer used by the sparse index, the hashing embedder and the
/// reward encoder. No stemming, no stopword removal.
pub fn analyze(text: &str) -> Vec<String> {
    text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

/// Number of whitespace-delimited tokens in `text`.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps the first `max_tokens` whitespace tokens of `text`, rejoined by single
/// spaces. Inputs at or under the limit are returned unchanged.
pub fn truncate_query(text: &str, max_tokens: usize) -> String {
    let max_tokens = max_tokens.max(1);
    if whitespace_token_count(text) <= max_tokens {
        return text.to_owned();
    }
    text.split_whitespace().take(max_tokens).collect::<Vec<_>>().join(" ")
}

/// Contiguous n-grams of `tokens`, joined with U+001F so that n-grams of
/// different order can never collide textually.
pub fn ngrams(tokens: &[String], order: usize) -> impl Iterator<Item = String> + '_ {
    let order = order.max(1);
    tokens.windows(order).map(|w| w.join("\u{1f}"))
}
