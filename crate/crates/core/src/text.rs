//! Word tokenization shared by lexicon matching, the vocabulary and the
//! scoring protocol.

/// Lowercases `text` and splits it on every non-alphanumeric character.
///
/// Only whole tokens are produced, so `"hero"` never yields `"her"`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Indefinite article for `word`: `"an"` before a vowel letter, else `"a"`.
pub fn indefinite_article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("She doesn't have time, for HER family!"),
            vec!["she", "doesn", "t", "have", "time", "for", "her", "family"]
        );
    }

    #[test]
    fn empty_and_symbol_only_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" -- ... !").is_empty());
    }

    #[test]
    fn article_heuristic() {
        assert_eq!(indefinite_article("engineer"), "an");
        assert_eq!(indefinite_article("Artist"), "an");
        assert_eq!(indefinite_article("writer"), "a");
        // letter-based, not phoneme-based
        assert_eq!(indefinite_article("hour"), "a");
    }
}
