//! String normalization and line parsing for model output.

/// Whitespace-collapsed, case-folded form used as the simulator lookup key.
pub fn fingerprint(s: &str) -> String {
    collapse_whitespace(&s.to_lowercase())
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Perspective label normalization: lowercase, trim, collapse whitespace.
pub fn normalize_label(s: &str) -> String {
    fingerprint(s)
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Answer normalization for lexical matching: casefold, punctuation to
/// spaces, articles dropped.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let spaced: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let words: Vec<&str> = spaced.split_whitespace().collect();
    let kept: Vec<&str> = words
        .iter()
        .copied()
        .filter(|w| !ARTICLES.contains(w))
        .collect();
    // An answer made only of articles ("A") keeps them.
    if kept.is_empty() {
        words.join(" ")
    } else {
        kept.join(" ")
    }
}

/// True when `needle` occurs in `haystack` on word boundaries after both are
/// normalized with [`normalize_answer`]. An empty needle never matches.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let needle = normalize_answer(needle);
    if needle.is_empty() {
        return false;
    }
    let hay = format!(" {} ", normalize_answer(haystack));
    hay.contains(&format!(" {needle} "))
}

/// Lexical correctness: some gold answer occurs in `answer` on word
/// boundaries after normalization.
pub fn matches_gold<S: AsRef<str>>(answer: &str, golds: &[S]) -> bool {
    golds
        .iter()
        .any(|g| contains_normalized(answer, g.as_ref()))
}

/// Strips list decorations such as `Q3:`, `3.`, `3)`, `-`, `*` from the start
/// of a line.
pub fn strip_list_prefix(line: &str) -> &str {
    let mut s = line.trim();
    if let Some(rest) = s.strip_prefix(['-', '*', '•']) {
        s = rest.trim_start();
    }
    let mut chars = s.char_indices().peekable();
    let q_prefixed = matches!(chars.peek(), Some((_, 'Q' | 'q')));
    if q_prefixed {
        chars.next();
    }
    let mut digits_end = None;
    while let Some(&(i, c)) = chars.peek() {
        if c.is_ascii_digit() {
            digits_end = Some(i + c.len_utf8());
            chars.next();
        } else {
            break;
        }
    }
    if let Some(end) = digits_end {
        let rest = &s[end..];
        if let Some(r) = rest.strip_prefix([':', '.', ')']) {
            return r.trim_start();
        }
    }
    s
}

/// Parsed lines plus the number of non-blank lines that were rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedLines {
    pub items: Vec<String>,
    pub dropped: usize,
}

/// One question per line. A line qualifies if, after prefix stripping, it is
/// non-empty and ends with a question mark.
pub fn parse_question_lines(raw: &str) -> ParsedLines {
    let mut out = ParsedLines::default();
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let q = collapse_whitespace(strip_list_prefix(line));
        if !q.is_empty() && q.ends_with('?') {
            out.items.push(q);
        } else {
            out.dropped += 1;
        }
    }
    out
}

/// One short label per line; trailing punctuation removed. Lines that look
/// like sentences (ending in `?`) or that run past twelve words are rejected.
pub fn parse_label_lines(raw: &str) -> ParsedLines {
    let mut out = ParsedLines::default();
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let label = collapse_whitespace(strip_list_prefix(line));
        let label = label
            .trim_end_matches(['.', ',', ';', ':'])
            .trim()
            .to_string();
        if label.is_empty() || label.ends_with('?') || label.split_whitespace().count() > 12 {
            out.dropped += 1;
        } else {
            out.items.push(label);
        }
    }
    out
}

/// 64-bit FNV-1a. Stable across platforms and toolchains, used to derive
/// per-query rng streams.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_collapses_and_folds() {
        assert_eq!(
            fingerprint("  What is the   CURRENT capital\nof France? "),
            "what is the current capital of france?"
        );
    }

    #[test]
    fn answer_normalization_drops_articles_and_punctuation() {
        assert_eq!(
            normalize_answer("The capital is Budapest."),
            "capital is budapest"
        );
        assert_eq!(normalize_answer("An Apple, a day"), "apple day");
        assert_eq!(normalize_answer("A."), "a");
    }

    #[test]
    fn containment_respects_word_boundaries() {
        assert!(contains_normalized("The capital is Budapest.", "Budapest"));
        assert!(!contains_normalized("Parisian cafes", "Paris"));
        assert!(!contains_normalized("anything", "the"));
    }

    #[test]
    fn gold_matching() {
        assert!(matches_gold("Budapest", &["Budapest"]));
        assert!(matches_gold("The capital is Budapest.", &["Budapest"]));
        assert!(!matches_gold("Vienna", &["Budapest"]));
        assert!(matches_gold(
            "vegetable oil",
            &["soybean oil", "Vegetable Oil"]
        ));
        assert!(!matches_gold("oil", &["vegetable oil"]));
    }

    #[test]
    fn list_prefixes() {
        assert_eq!(strip_list_prefix("Q1: How?"), "How?");
        assert_eq!(strip_list_prefix("  3. Why?"), "Why?");
        assert_eq!(strip_list_prefix("2) What?"), "What?");
        assert_eq!(
            strip_list_prefix("- cultural influence"),
            "cultural influence"
        );
        assert_eq!(strip_list_prefix("Quick question?"), "Quick question?");
        assert_eq!(strip_list_prefix("1990 was a year"), "1990 was a year");
    }

    #[test]
    fn question_lines_drop_non_questions() {
        let parsed = parse_question_lines("Q1: A?\n\nnot a question\nQ2: B?\n");
        assert_eq!(parsed.items, vec!["A?", "B?"]);
        assert_eq!(parsed.dropped, 1);
    }

    #[test]
    fn label_lines() {
        let parsed =
            parse_label_lines("demographic statistics\n\n- education policy.\nIs this a label?");
        assert_eq!(
            parsed.items,
            vec!["demographic statistics", "education policy"]
        );
        assert_eq!(parsed.dropped, 1);
    }

    #[test]
    fn stable_hash_known_value() {
        assert_eq!(stable_hash(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(stable_hash("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
