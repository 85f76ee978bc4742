//! Post-message normalization: Unicode NFC, Vietnamese tone-mark placement,
//! HTML stripping, and placeholder substitution for recognized pattern
//! classes.
//!
//! The whole recognized-pattern set is pinned here, in one place, and
//! versioned; tests assert exact behavior against it. Passes run in a fixed
//! order (HTML, tone marks, url, email, datetime, phone, emoji, number,
//! whitespace) because later classes would otherwise eat pieces of earlier
//! ones. The pass is idempotent: placeholders match none of the patterns and
//! the HTML stripper preserves them.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Bump when any pattern below changes.
pub const PATTERN_SET_VERSION: &str = "1";

pub const TOKEN_URL: &str = "<url>";
pub const TOKEN_EMAIL: &str = "<email>";
pub const TOKEN_DATETIME: &str = "<datetime>";
pub const TOKEN_PHONE: &str = "<phone>";
pub const TOKEN_EMOJI: &str = "<emoji>";
pub const TOKEN_NUMBER: &str = "<number>";

const PLACEHOLDER_NAMES: [&str; 6] = ["url", "email", "datetime", "phone", "emoji", "number"];

const KINDS: [&str; 8] = [
    "html", "tone", "url", "email", "datetime", "phone", "emoji", "number",
];

fn re(pattern: &str) -> Regex {
    Regex::new(pattern).expect("static pattern compiles")
}

struct Patterns {
    html: Regex,
    url: Regex,
    email: Regex,
    datetime: Regex,
    phone: Regex,
    emoji: Regex,
    number: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        html: re(r"<[^<>]+>"),
        url: re(r#"(?:https?://|www\.)[^\s<>"]+"#),
        email: re(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9.\-]+\.[A-Za-z]{2,}"),
        // d/m/y or y-m-d dates with an optional time, or a standalone time.
        datetime: re(
            r"(?x)
            \b\d{1,2}[/.\-]\d{1,2}[/.\-]\d{2,4}(?:\s+\d{1,2}:\d{2}(?::\d{2})?)?\b
            | \b\d{4}-\d{1,2}-\d{1,2}(?:\s+\d{1,2}:\d{2}(?::\d{2})?)?\b
            | \b\d{1,2}:\d{2}(?::\d{2})?\b",
        ),
        // Local 0- or +84-prefixed numbers with 8-10 further digits; the
        // leading capture guards against matching inside a digit run.
        phone: re(r"(?P<pre>^|[^0-9+])(?P<body>(?:\+?84|0)(?:[\s.\-]?\d){8,10})\b"),
        emoji: re(
            r"[\u{1F000}-\u{1FAFF}\u{2600}-\u{27BF}\u{2B00}-\u{2BFF}\u{2190}-\u{21FF}\u{FE0F}\u{200D}]+",
        ),
        number: re(r"\d+(?:[.,]\d+)*"),
    })
}

/// Normalized text plus how many replacements each pass made.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct NormalizedText {
    pub text: String,
    pub replacement_counts: BTreeMap<String, usize>,
}

/// Tone-marked second vowels of the oa/oe/uy clusters, with the rewrite that
/// carries the mark onto the first vowel (dictionary-style placement). The
/// rewrite applies only when the cluster ends the syllable.
const TONE_REWRITES: [(char, char, char); 15] = [
    // (first vowel, toned second vowel, toned first vowel)
    ('o', 'à', 'ò'),
    ('o', 'á', 'ó'),
    ('o', 'ả', 'ỏ'),
    ('o', 'ã', 'õ'),
    ('o', 'ạ', 'ọ'),
    ('o', 'è', 'ò'),
    ('o', 'é', 'ó'),
    ('o', 'ẻ', 'ỏ'),
    ('o', 'ẽ', 'õ'),
    ('o', 'ẹ', 'ọ'),
    ('u', 'ỳ', 'ù'),
    ('u', 'ý', 'ú'),
    ('u', 'ỷ', 'ủ'),
    ('u', 'ỹ', 'ũ'),
    ('u', 'ỵ', 'ụ'),
];

fn plain_second(toned: char) -> char {
    match toned {
        'à' | 'á' | 'ả' | 'ã' | 'ạ' => 'a',
        'è' | 'é' | 'ẻ' | 'ẽ' | 'ẹ' => 'e',
        _ => 'y',
    }
}

fn rewrite_tone_marks(input: &str) -> (String, usize) {
    let chars: Vec<char> = input.chars().collect();
    let mut out = String::with_capacity(input.len());
    let mut count = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let lower = c.to_lowercase().next().unwrap_or(c);
        let next = chars.get(i + 1).copied();
        let mut rewritten = false;
        if let Some(n) = next {
            let n_lower = n.to_lowercase().next().unwrap_or(n);
            let syllable_final = chars
                .get(i + 2)
                .map_or(true, |after| !after.is_alphabetic());
            if syllable_final {
                for &(first, toned_second, toned_first) in &TONE_REWRITES {
                    if lower == first && n_lower == toned_second {
                        let new_first = if c.is_uppercase() {
                            toned_first.to_uppercase().next().unwrap_or(toned_first)
                        } else {
                            toned_first
                        };
                        let second = plain_second(toned_second);
                        let new_second = if n.is_uppercase() {
                            second.to_uppercase().next().unwrap_or(second)
                        } else {
                            second
                        };
                        out.push(new_first);
                        out.push(new_second);
                        count += 1;
                        i += 2;
                        rewritten = true;
                        break;
                    }
                }
            }
        }
        if !rewritten {
            out.push(c);
            i += 1;
        }
    }
    (out, count)
}

fn strip_html(input: &str) -> (String, usize) {
    let mut count = 0;
    let stripped = patterns()
        .html
        .replace_all(input, |caps: &regex::Captures| {
            let inner = &caps[0][1..caps[0].len() - 1];
            if PLACEHOLDER_NAMES.contains(&inner) {
                caps[0].to_string()
            } else {
                count += 1;
                " ".to_string()
            }
        })
        .into_owned();
    // The handful of entities that commonly survive scraped posts.
    let decoded = stripped
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
        .replace("&quot;", "\"")
        .replace("&#39;", "'");
    (decoded, count)
}

fn replace_counting(input: &str, pattern: &Regex, token: &str) -> (String, usize) {
    let count = pattern.find_iter(input).count();
    if count == 0 {
        return (input.to_string(), 0);
    }
    (pattern.replace_all(input, token).into_owned(), count)
}

/// Full normalization pass. Idempotent: feeding the output back in changes
/// nothing and reports all-zero counts.
pub fn normalize_text(raw: &str) -> NormalizedText {
    let mut counts: BTreeMap<String, usize> = KINDS.iter().map(|k| (k.to_string(), 0)).collect();

    let nfc: String = raw.nfc().collect();
    let (text, html) = strip_html(&nfc);
    counts.insert("html".into(), html);
    let (text, tone) = rewrite_tone_marks(&text);
    counts.insert("tone".into(), tone);
    let (text, url) = replace_counting(&text, &patterns().url, TOKEN_URL);
    counts.insert("url".into(), url);
    let (text, email) = replace_counting(&text, &patterns().email, TOKEN_EMAIL);
    counts.insert("email".into(), email);
    let (text, datetime) = replace_counting(&text, &patterns().datetime, TOKEN_DATETIME);
    counts.insert("datetime".into(), datetime);

    let mut phone = 0;
    let text = patterns()
        .phone
        .replace_all(&text, |caps: &regex::Captures| {
            phone += 1;
            format!("{}{}", &caps["pre"], TOKEN_PHONE)
        })
        .into_owned();
    counts.insert("phone".into(), phone);

    let (text, emoji) = replace_counting(&text, &patterns().emoji, TOKEN_EMOJI);
    counts.insert("emoji".into(), emoji);
    let (text, number) = replace_counting(&text, &patterns().number, TOKEN_NUMBER);
    counts.insert("number".into(), number);

    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    NormalizedText {
        text,
        replacement_counts: counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(s: &str) -> NormalizedText {
        normalize_text(s)
    }

    #[test]
    fn empty_string() {
        let n = norm("");
        assert_eq!(n.text, "");
        assert!(n.replacement_counts.values().all(|&c| c == 0));
    }

    #[test]
    fn email_replacement() {
        let n = norm("Liên hệ a@b.com nhé");
        assert_eq!(n.text, "Liên hệ <email> nhé");
        assert_eq!(n.replacement_counts["email"], 1);
    }

    #[test]
    fn url_swallows_embedded_email() {
        let n = norm("xem http://user@host.com/page và www.vd.vn/a?b=1");
        assert_eq!(n.text, "xem <url> và <url>");
        assert_eq!(n.replacement_counts["url"], 2);
        assert_eq!(n.replacement_counts["email"], 0);
    }

    #[test]
    fn html_tags_stripped_but_placeholders_survive() {
        let n = norm("<p>tin <b>nóng</b></p> gửi <email> nhé");
        assert_eq!(n.text, "tin nóng gửi <email> nhé");
        assert_eq!(n.replacement_counts["html"], 4);
    }

    #[test]
    fn datetime_and_phone_and_number() {
        let n = norm("hẹn 20/10/2020 lúc 10:30 gọi 0912345678 giá 15.000");
        assert_eq!(
            n.text,
            "hẹn <datetime> lúc <datetime> gọi <phone> giá <number>"
        );
        assert_eq!(n.replacement_counts["datetime"], 2);
        assert_eq!(n.replacement_counts["phone"], 1);
        assert_eq!(n.replacement_counts["number"], 1);
    }

    #[test]
    fn plus_84_phone() {
        let n = norm("sđt +84 912 345 678 đây");
        assert_eq!(n.text, "sđt <phone> đây");
    }

    #[test]
    fn emoji_runs_collapse_to_one_token() {
        let n = norm("vui quá 😀😀🎉 nhỉ ☀");
        assert_eq!(n.text, "vui quá <emoji> nhỉ <emoji>");
        assert_eq!(n.replacement_counts["emoji"], 2);
    }

    #[test]
    fn tone_marks_move_to_first_vowel_when_syllable_final() {
        assert_eq!(norm("hoà bình").text, "hòa bình");
        assert_eq!(norm("thuý đi").text, "thúy đi");
        assert_eq!(norm("khoẻ").text, "khỏe");
        // Cluster followed by a consonant keeps its spelling.
        assert_eq!(norm("toán hoạch").text, "toán hoạch");
        // Uppercase variants.
        assert_eq!(norm("Hoà").text, "Hòa");
        assert_eq!(norm("HOÀ").text, "HÒA");
    }

    #[test]
    fn nfc_composes_decomposed_input() {
        // "e" + combining acute vs precomposed "é".
        let decomposed = "cafe\u{0301}";
        let n = norm(decomposed);
        assert_eq!(n.text, "café");
    }

    #[test]
    fn idempotent_on_messy_input() {
        let messy = "<div>Sốc! hoà 😱 xem www.tin.vn/x gửi a@b.vn lúc 9:15 ngày 1/1/21, \
                     gọi 0987654321 nhận 1.000.000 đ</div>";
        let once = norm(messy);
        let twice = norm(&once.text);
        assert_eq!(once.text, twice.text);
        assert!(
            twice.replacement_counts.values().all(|&c| c == 0),
            "second pass counted {:?}",
            twice.replacement_counts
        );
    }

    #[test]
    fn no_recognized_patterns_remain() {
        let messy = "mail a@b.com web https://x.y 5/6/2020 0912345678 😀 123";
        let n = norm(messy);
        assert_eq!(patterns().email.find_iter(&n.text).count(), 0);
        assert_eq!(patterns().url.find_iter(&n.text).count(), 0);
        assert_eq!(patterns().datetime.find_iter(&n.text).count(), 0);
        assert_eq!(patterns().number.find_iter(&n.text).count(), 0);
        assert_eq!(patterns().emoji.find_iter(&n.text).count(), 0);
    }

    #[test]
    fn whitespace_collapses() {
        assert_eq!(norm("a   b\t\nc").text, "a b c");
    }
}
