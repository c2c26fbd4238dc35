//! Query normalization and tokenization shared by every keyed structure.

/// Trims, collapses internal whitespace runs to a single space and case-folds.
pub fn normalize_query(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Splits normalized text into tokens.
///
/// Tokens are whitespace-separated words with leading and trailing
/// punctuation stripped, so `"Coca-Cola,"` becomes `"coca-cola"`. Words made
/// only of punctuation are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize_query(text)
        .split(' ')
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_collapses_and_folds() {
        assert_eq!(normalize_query("  Cat\t  VIDEOS \n"), "cat videos");
        assert_eq!(normalize_query(""), "");
        assert_eq!(normalize_query("   "), "");
    }

    #[test]
    fn tokenize_keeps_intra_word_hyphens() {
        assert_eq!(
            tokenize("Coca-Cola The Fostered Children!"),
            vec!["coca-cola", "the", "fostered", "children"]
        );
        assert_eq!(tokenize("#drama # -- ok"), vec!["drama", "ok"]);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
