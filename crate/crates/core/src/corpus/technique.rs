use std::sync::LazyLock;

use regex::Regex;

/// Dimension patterns removed from technique strings, applied in order to
/// the lowercased input. Documented in `docs/technique_patterns.md`.
pub const DIMENSION_PATTERNS: [&str; 3] = [
    // 167 x 124 cm, 167×124cm, 20 x 30 x 4.5 cm, 12cm x 8cm, 44 x 38
    r"\d+(?:[.,]\d+)?\s*(?:(?:mm|cm|m)\b\s*)?[x×]\s*\d+(?:[.,]\d+)?(?:\s*(?:(?:mm|cm|m)\b\s*)?[x×]\s*\d+(?:[.,]\d+)?)?(?:\s*(?:mm|cm|m)\b)?",
    // height 85 cm, diameter: 30 cm, h. 12.5 cm
    r"\b(?:height|width|depth|length|diameter|diam|h|w|d)\b\.?\s*:?\s*\d+(?:[.,]\d+)?\s*(?:mm|cm|m)\b",
    // 85 cm
    r"\d+(?:[.,]\d+)?\s*(?:mm|cm|m)\b",
];

static PATTERNS: LazyLock<Vec<Regex>> =
    LazyLock::new(|| DIMENSION_PATTERNS.iter().map(|p| Regex::new(p).expect("valid pattern")).collect());
static EMPTY_PARENS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[(\[]\s*[,;:]*\s*[)\]]").unwrap());
static SPACE_BEFORE_SEP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+([,;:])").unwrap());
static REPEATED_SEP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([,;:])(?:\s*[,;:])+").unwrap());
static SPACES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());

const EDGE: &[char] = &[',', ';', ':', '.', '-', '–', ' '];

fn clean_once(s: &str) -> String {
    let mut out = s.to_lowercase();
    for re in PATTERNS.iter() {
        out = re.replace_all(&out, " ").into_owned();
    }
    out = EMPTY_PARENS.replace_all(&out, " ").into_owned();
    out = SPACES.replace_all(&out, " ").into_owned();
    out = SPACE_BEFORE_SEP.replace_all(&out, "$1").into_owned();
    out = REPEATED_SEP.replace_all(&out, "$1").into_owned();
    out.trim_matches(EDGE).to_string()
}

/// Removes physical-dimension substrings, tidies leftover separators and
/// lowercases. Idempotent.
pub fn clean_technique(raw: &str) -> String {
    let mut cur = clean_once(raw);
    for _ in 0..8 {
        let next = clean_once(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}
