//! Keyword-level prompt parsing for the semantic metrics: count phrases
//! ("3 birds"), positional cues ("in front of") and object-class mentions.
//!
//! Vocabularies are plain data files so they can be replaced without code
//! changes; the bundled defaults live under `data/`. All spans are byte
//! offsets into the prompt.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_CUES: &str = include_str!("../data/positional_cues.txt");
const DEFAULT_NUMBER_WORDS: &str = include_str!("../data/number_words.txt");
const DEFAULT_CLASSES: &str = include_str!("../data/coco_classes.tsv");

/// Function words that cannot head a counted noun phrase.
const NON_NOUNS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "is", "are", "was", "were", "be", "been", "it", "its", "in", "on",
    "at", "to", "by", "for", "from", "with", "that", "this", "these", "those", "which", "who", "more", "less",
    "than", "other", "another", "each", "per", "times", "very", "some", "any", "all", "has", "have", "had",
    "while", "as", "into", "onto", "up", "down", "out", "off", "over", "under", "near", "next",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Token<'a> {
    text: &'a str,
    start: usize,
    end: usize,
}

/// Maximal runs of alphanumerics and apostrophes.
fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        let word_char = c.is_alphanumeric() || c == '\'';
        match (word_char, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Token {
                    text: &text[s..i],
                    start: s,
                    end: i,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &text[s..],
            start: s,
            end: text.len(),
        });
    }
    out
}

fn is_whitespace_gap(text: &str, a: &Token, b: &Token) -> bool {
    let gap = &text[a.end..b.start];
    !gap.is_empty() && gap.chars().all(char::is_whitespace)
}

/// Strips a regular plural ending: `-ies` → `-y`, `-es` after a sibilant,
/// otherwise a lone `-s`. Words ending in `ss`, `us` or `is` are left alone.
pub fn singularize(word: &str) -> String {
    let w = word.to_lowercase();
    let n = w.len();
    if n > 4 && w.ends_with("ies") {
        return format!("{}y", &w[..n - 3]);
    }
    for suffix in ["ches", "shes", "sses", "xes", "zes"] {
        if n > suffix.len() + 1 && w.ends_with(suffix) {
            return w[..n - 2].to_string();
        }
    }
    if n > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is") {
        return w[..n - 1].to_string();
    }
    w
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read_data_file(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_error(source: &str, line: usize, reason: &str) -> Error {
    Error::Malformed {
        path: source.into(),
        line,
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSpec {
    pub count: u32,
    pub noun: String,
    pub span: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct CountExtractor {
    number_words: HashMap<String, u32>,
}

impl CountExtractor {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut number_words = HashMap::new();
        for (line, l) in data_lines(text) {
            let (word, value) = l
                .split_once('\t')
                .ok_or_else(|| data_error(source, line, "expected word<TAB>value"))?;
            let value: u32 = value
                .trim()
                .parse()
                .map_err(|_| data_error(source, line, "value is not an integer"))?;
            if value == 0 {
                return Err(data_error(source, line, "counts start at 1"));
            }
            number_words.insert(word.trim().to_lowercase(), value);
        }
        Ok(Self { number_words })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_data_file(path)?, &path.display().to_string())
    }

    pub fn bundled() -> &'static Self {
        static CELL: OnceLock<CountExtractor> = OnceLock::new();
        CELL.get_or_init(|| Self::parse(DEFAULT_NUMBER_WORDS, "number_words.txt").expect("bundled number words"))
    }

    fn count_of(&self, token: &str) -> Option<u32> {
        if token.bytes().all(|b| b.is_ascii_digit()) {
            return token.parse().ok().filter(|n| (1..=99).contains(n));
        }
        self.number_words.get(&token.to_lowercase()).copied()
    }

    /// Left-to-right, non-overlapping: a number token immediately followed
    /// (whitespace only) by a noun-like token.
    pub fn extract(&self, prompt: &str) -> Vec<CountSpec> {
        let tokens = tokenize(prompt);
        let mut out = Vec::new();
        let mut i = 0;
        while i + 1 < tokens.len() {
            let (num, head) = (&tokens[i], &tokens[i + 1]);
            if let Some(count) = self.count_of(num.text) {
                let lower = head.text.to_lowercase();
                let noun_like = head.text.chars().all(|c| c.is_alphabetic() || c == '\'')
                    && !NON_NOUNS.contains(&lower.as_str())
                    && self.count_of(head.text).is_none();
                if noun_like && is_whitespace_gap(prompt, num, head) {
                    out.push(CountSpec {
                        count,
                        noun: singularize(&lower),
                        span: (num.start, head.end),
                    });
                    i += 2;
                    continue;
                }
            }
            i += 1;
        }
        out
    }
}

pub fn extract_count_specs(prompt: &str) -> Vec<CountSpec> {
    CountExtractor::bundled().extract(prompt)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalCue {
    /// Canonical vocabulary phrase.
    pub cue: String,
    pub span: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct CueVocabulary {
    /// Tokenized phrases, longest first.
    phrases: Vec<Vec<String>>,
}

impl CueVocabulary {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut phrases = Vec::new();
        for (line, l) in data_lines(text) {
            let toks: Vec<String> = tokenize(l).iter().map(|t| t.text.to_lowercase()).collect();
            if toks.is_empty() {
                return Err(data_error(source, line, "cue has no words"));
            }
            if seen.insert(toks.join(" ")) {
                phrases.push(toks);
            }
        }
        if phrases.len() < 2 {
            return Err(Error::invalid(format!("{source}: need at least two cues to form swaps")));
        }
        phrases.sort_by_key(|p| std::cmp::Reverse(p.len()));
        Ok(Self { phrases })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_data_file(path)?, &path.display().to_string())
    }

    pub fn bundled() -> &'static Self {
        static CELL: OnceLock<CueVocabulary> = OnceLock::new();
        CELL.get_or_init(|| Self::parse(DEFAULT_CUES, "positional_cues.txt").expect("bundled cues"))
    }

    pub fn cues(&self) -> Vec<String> {
        let mut v: Vec<String> = self.phrases.iter().map(|p| p.join(" ")).collect();
        v.sort();
        v
    }

    pub fn contains(&self, cue: &str) -> bool {
        let norm = normalize_phrase(cue);
        self.phrases.iter().any(|p| p.join(" ") == norm)
    }

    /// Longest match first at each token position; matches do not overlap.
    pub fn extract(&self, prompt: &str) -> Vec<PositionalCue> {
        let tokens = tokenize(prompt);
        let lower: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.phrases.iter().find(|p| {
                i + p.len() <= tokens.len()
                    && p.iter().zip(&lower[i..]).all(|(a, b)| a == b)
                    && (1..p.len()).all(|k| is_whitespace_gap(prompt, &tokens[i + k - 1], &tokens[i + k]))
            });
            match hit {
                Some(p) => {
                    out.push(PositionalCue {
                        cue: p.join(" "),
                        span: (tokens[i].start, tokens[i + p.len() - 1].end),
                    });
                    i += p.len();
                }
                None => i += 1,
            }
        }
        out
    }

    /// Replaces exactly the cue's span. Returns the new prompt and the cue
    /// now occupying that position, so the swap can be undone.
    pub fn swap(&self, prompt: &str, cue: &PositionalCue, replacement: &str) -> Result<(String, PositionalCue)> {
        let (start, end) = cue.span;
        let found = prompt
            .get(start..end)
            .ok_or_else(|| Error::invalid(format!("span {start}..{end} is outside the prompt")))?;
        if normalize_phrase(found) != cue.cue {
            return Err(Error::invalid(format!(
                "span {start}..{end} holds {found:?}, not the cue {:?}",
                cue.cue
            )));
        }
        let replacement_norm = normalize_phrase(replacement);
        if !self.contains(replacement) {
            return Err(Error::invalid(format!("{replacement:?} is not a positional cue")));
        }
        if replacement_norm == cue.cue {
            return Err(Error::invalid("replacement must differ from the original cue"));
        }
        let mut out = String::with_capacity(prompt.len() + replacement.len());
        out.push_str(&prompt[..start]);
        out.push_str(replacement);
        out.push_str(&prompt[end..]);
        let new_cue = PositionalCue {
            cue: replacement_norm,
            span: (start, start + replacement.len()),
        };
        Ok((out, new_cue))
    }

    /// The prompt with the cue swapped for every other vocabulary phrase,
    /// in sorted cue order.
    pub fn variants(&self, prompt: &str, cue: &PositionalCue) -> Result<Vec<String>> {
        self.cues()
            .iter()
            .filter(|c| **c != cue.cue)
            .map(|c| self.swap(prompt, cue, c).map(|(s, _)| s))
            .collect()
    }
}

fn normalize_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn extract_positional_cues(prompt: &str) -> Vec<PositionalCue> {
    CueVocabulary::bundled().extract(prompt)
}

pub fn swap_positional_cue(prompt: &str, cue: &PositionalCue, replacement: &str) -> Result<String> {
    CueVocabulary::bundled().swap(prompt, cue, replacement).map(|(s, _)| s)
}

#[derive(Debug, Clone)]
pub struct ClassVocabulary {
    /// (class, tokenized synonym), longest synonym first.
    synonyms: Vec<(String, Vec<String>)>,
    classes: Vec<String>,
}

impl ClassVocabulary {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut classes = Vec::new();
        let mut seen = HashSet::new();
        let mut synonyms = Vec::new();
        for (line, l) in data_lines(text) {
            let (class, syns) = l
                .split_once('\t')
                .ok_or_else(|| data_error(source, line, "expected class<TAB>synonyms"))?;
            let class = class.trim().to_string();
            if !seen.insert(class.clone()) {
                return Err(data_error(source, line, &format!("duplicate class {class:?}")));
            }
            for syn in syns.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                if syn.chars().any(char::is_uppercase) {
                    return Err(data_error(source, line, &format!("synonym {syn:?} is not lowercase")));
                }
                let toks: Vec<String> = tokenize(syn).iter().map(|t| t.text.to_string()).collect();
                if !toks.is_empty() {
                    synonyms.push((class.clone(), toks));
                }
            }
            classes.push(class);
        }
        synonyms.sort_by_key(|s| std::cmp::Reverse(s.1.len()));
        Ok(Self { synonyms, classes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_data_file(path)?, &path.display().to_string())
    }

    /// The 80 COCO detector classes.
    pub fn bundled() -> &'static Self {
        static CELL: OnceLock<ClassVocabulary> = OnceLock::new();
        CELL.get_or_init(|| Self::parse(DEFAULT_CLASSES, "coco_classes.tsv").expect("bundled classes"))
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Whole-word, case-insensitive matching. A prompt token also matches
    /// its singular form, and at each position the longest synonym wins
    /// ("teddy bear" is not also a "bear").
    pub fn match_classes(&self, prompt: &str) -> BTreeSet<String> {
        let toks: Vec<(String, String)> = tokenize(prompt)
            .iter()
            .map(|t| {
                let lower = t.text.to_lowercase();
                let single = singularize(&lower);
                (lower, single)
            })
            .collect();
        let mut out = BTreeSet::new();
        let mut i = 0;
        while i < toks.len() {
            let hit = self.synonyms.iter().find(|(_, syn)| {
                i + syn.len() <= toks.len()
                    && syn
                        .iter()
                        .zip(&toks[i..])
                        .all(|(s, (lower, single))| s == lower || s == single)
            });
            match hit {
                Some((class, syn)) => {
                    out.insert(class.clone());
                    i += syn.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

pub fn match_classes(prompt: &str, vocab: &ClassVocabulary) -> BTreeSet<String> {
    vocab.match_classes(prompt)
}
