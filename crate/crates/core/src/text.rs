//! Small text helpers shared by the encoder double, style-span location and
//! token selection. All offsets are in Unicode scalar values.

/// A word of a prompt and its character range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '-'
}

/// Splits on anything that is not alphanumeric, `'` or `-`.
pub fn words(text: &str) -> Vec<Word> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut count = 0;
    for (i, c) in text.chars().enumerate() {
        count = i + 1;
        if is_word_char(c) {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        } else if !current.is_empty() {
            out.push(Word {
                text: std::mem::take(&mut current),
                start,
                end: i,
            });
        }
    }
    if !current.is_empty() {
        out.push(Word {
            text: current,
            start,
            end: count,
        });
    }
    out.into_iter()
        .map(|w| trim_word(w))
        .filter(|w| !w.text.is_empty())
        .collect()
}

// Strip leading/trailing apostrophes and hyphens ("'quoted'", "--").
fn trim_word(w: Word) -> Word {
    let chars: Vec<char> = w.text.chars().collect();
    let lead = chars.iter().take_while(|c| !c.is_alphanumeric()).count();
    if lead == chars.len() {
        return Word {
            text: String::new(),
            start: w.start,
            end: w.start,
        };
    }
    let trail = chars.iter().rev().take_while(|c| !c.is_alphanumeric()).count();
    Word {
        text: chars[lead..chars.len() - trail].iter().collect(),
        start: w.start + lead,
        end: w.end - trail,
    }
}

fn chars_eq_ci(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// All case-insensitive occurrences of `needle` in `haystack`, as character
/// ranges, in order of appearance.
pub fn find_all_ci(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    let hay: Vec<char> = haystack.chars().collect();
    let pat: Vec<char> = needle.chars().collect();
    if pat.is_empty() || pat.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - pat.len())
        .filter(|&i| hay[i..i + pat.len()].iter().zip(&pat).all(|(&a, &b)| chars_eq_ci(a, b)))
        .map(|i| (i, i + pat.len()))
        .collect()
}

/// Whether the character range sits on word boundaries of `haystack`.
pub fn on_word_boundary(haystack: &str, range: (usize, usize)) -> bool {
    let chars: Vec<char> = haystack.chars().collect();
    let before = range.0 == 0 || !chars[range.0 - 1].is_alphanumeric();
    let after = range.1 >= chars.len() || !chars[range.1].is_alphanumeric();
    before && after
}

pub fn contains_ci(haystack: &str, needle: &str) -> bool {
    !find_all_ci(haystack, needle).is_empty()
}
