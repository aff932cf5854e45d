//! Sentence normalization shared by set difference, keyword tests and
//! corpus validation.

use unicode_normalization::UnicodeNormalization;

/// NFC, lowercase, collapse internal whitespace, trim, and drop trailing
/// periods. Idempotent.
pub fn normalize_text(text: &str) -> String {
    let lowered: String = text.to_lowercase().nfc().collect();
    let mut out = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    while out.ends_with('.') {
        out.pop();
        let trimmed = out.trim_end().len();
        out.truncate(trimmed);
    }
    out
}

/// Normalized text split on every non-alphanumeric character.
pub fn tokens(text: &str) -> Vec<String> {
    normalize_text(text)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// True when the tokens of `phrase` occur contiguously in `haystack`.
/// A phrase without tokens never matches.
pub fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    if phrase.is_empty() || phrase.len() > haystack.len() {
        return false;
    }
    haystack.windows(phrase.len()).any(|w| w == phrase)
}

/// Whitespace-delimited word count of the raw text.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_rules() {
        assert_eq!(normalize_text("  He Runs.  "), "he runs");
        assert_eq!(normalize_text("A  B"), normalize_text("a b"));
        assert_eq!(normalize_text("x . ."), "x");
        assert_eq!(normalize_text(""), "");
        // decomposed e + combining acute composes under NFC
        assert_eq!(normalize_text("Cafe\u{301}"), normalize_text("café"));
    }

    #[test]
    fn phrase_containment_is_token_based() {
        let hay = tokens("We threw a party last night.");
        assert!(!contains_phrase(&hay, &tokens("art")));
        assert!(contains_phrase(&hay, &tokens("party")));
        assert!(contains_phrase(&hay, &tokens("Last Night")));
        assert!(!contains_phrase(&hay, &tokens("night last")));
        assert!(!contains_phrase(&hay, &tokens("...")));
    }
}
