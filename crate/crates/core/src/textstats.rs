//! Caption language statistics: sentence, word, letter and syllable counts,
//! Flesch Reading Ease, and a grade-level consensus over five standard
//! readability formulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens that end with a period but do not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "etc", "e.g", "i.e", "no", "inc", "ltd", "co",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "approx", "fig",
];

const GRADE_FLOOR: i64 = 4;

/// Splits on `.`, `!` or `?` followed by whitespace or end of text.
///
/// A run of terminators (`?!`, `...`) counts as one boundary. Tokens on the
/// abbreviation list (`Dr.`, `e.g.`) do not end a sentence. Text without a
/// terminator is a single sentence; whitespace-only text has none.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i;
            while j + 1 < chars.len() && matches!(chars[j + 1].1, '.' | '!' | '?') {
                j += 1;
            }
            let end = chars.get(j + 1).map_or(text.len(), |&(b, _)| b);
            let at_boundary = chars.get(j + 1).is_none_or(|&(_, n)| n.is_whitespace());
            if at_boundary && !(c == '.' && j == i && is_abbreviation(&text[start..chars[i].0])) {
                push_trimmed(&mut out, &text[start..end]);
                start = end;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

fn is_abbreviation(before_period: &str) -> bool {
    let last = before_period.split_whitespace().next_back().unwrap_or("");
    let last = last.trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    ABBREVIATIONS.contains(&last.as_str())
}

/// Whitespace-separated tokens with leading and trailing punctuation removed;
/// tokens that are pure punctuation are dropped.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect()
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Vowel-group syllable heuristic.
///
/// Counts maximal runs of `aeiouy`, drops a silent trailing `e` unless the
/// word ends in consonant + `le`, and never returns less than one for a word
/// with a letter in it.
pub fn count_syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if letters.is_empty() {
        return 0;
    }
    let mut groups = 0usize;
    let mut in_vowel = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !in_vowel {
            groups += 1;
        }
        in_vowel = v;
    }
    let n = letters.len();
    if letters[n - 1] == 'e' {
        let consonant_le = n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]);
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    groups.max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub sentences: usize,
    pub words: usize,
    /// Alphabetic codepoints anywhere in the text.
    pub letters: usize,
    /// Alphanumeric characters inside words, used by ARI.
    pub characters: usize,
    pub syllables: usize,
    /// Words with three or more syllables.
    pub polysyllables: usize,
    pub flesch: Option<f64>,
    pub grade_consensus: Option<f64>,
}

impl TextStats {
    pub fn compute(text: &str) -> Self {
        let sentences = split_sentences(text).len();
        let ws = words(text);
        let mut syllables = 0;
        let mut polysyllables = 0;
        let mut characters = 0;
        for w in &ws {
            let s = count_syllables(w);
            syllables += s;
            if s >= 3 {
                polysyllables += 1;
            }
            characters += w.chars().filter(|c| c.is_alphanumeric()).count();
        }
        let mut stats = TextStats {
            sentences,
            words: ws.len(),
            letters: text.chars().filter(|c| c.is_alphabetic()).count(),
            characters,
            syllables,
            polysyllables,
            flesch: None,
            grade_consensus: None,
        };
        if stats.is_defined() {
            stats.flesch = Some(stats.flesch_score());
            stats.grade_consensus = Some(consensus(&stats.grade_battery()));
        }
        stats
    }

    fn is_defined(&self) -> bool {
        self.sentences >= 1 && self.words >= 1
    }

    fn words_per_sentence(&self) -> f64 {
        self.words as f64 / self.sentences as f64
    }

    fn syllables_per_word(&self) -> f64 {
        self.syllables as f64 / self.words as f64
    }

    fn flesch_score(&self) -> f64 {
        206.835 - 1.015 * self.words_per_sentence() - 84.6 * self.syllables_per_word()
    }

    /// Unrounded grades: Flesch–Kincaid, SMOG, Coleman–Liau, ARI, Gunning Fog.
    pub fn grade_battery(&self) -> [f64; 5] {
        let w = self.words as f64;
        let s = self.sentences as f64;
        let wps = self.words_per_sentence();
        let fk = 0.39 * wps + 11.8 * self.syllables_per_word() - 15.59;
        let smog = 1.0430 * (self.polysyllables as f64 * 30.0 / s).sqrt() + 3.1291;
        let l = self.letters as f64 / w * 100.0;
        let s100 = s / w * 100.0;
        let coleman_liau = 0.0588 * l - 0.296 * s100 - 15.8;
        let ari = 4.71 * (self.characters as f64 / w) + 0.5 * wps - 21.43;
        let fog = 0.4 * (wps + 100.0 * self.polysyllables as f64 / w);
        [fk, smog, coleman_liau, ari, fog]
    }
}

/// Mode of the rounded grades, ties to the lower grade, floored at grade 4.
pub fn consensus(grades: &[f64]) -> f64 {
    let mut rounded: Vec<i64> = grades.iter().map(|g| g.round() as i64).collect();
    rounded.sort_unstable();
    let mut best = (0usize, i64::MAX);
    let mut i = 0;
    while i < rounded.len() {
        let j = rounded[i..].iter().take_while(|&&g| g == rounded[i]).count();
        // ascending scan: strict > keeps the lower grade on ties
        if j > best.0 {
            best = (j, rounded[i]);
        }
        i += j;
    }
    best.1.max(GRADE_FLOOR) as f64
}

pub fn flesch_reading_ease(text: &str) -> Result<f64> {
    TextStats::compute(text)
        .flesch
        .ok_or(Error::Undefined("text needs at least one sentence and one word"))
}

pub fn grade_consensus(text: &str) -> Result<f64> {
    TextStats::compute(text)
        .grade_consensus
        .ok_or(Error::Undefined("text needs at least one sentence and one word"))
}

/// Standard Flesch bands.
pub fn flesch_label(score: f64) -> &'static str {
    match score {
        s if s >= 90.0 => "Very Easy",
        s if s >= 80.0 => "Easy",
        s if s >= 70.0 => "Fairly Easy",
        s if s >= 60.0 => "Standard",
        s if s >= 50.0 => "Fairly Difficult",
        s if s >= 30.0 => "Difficult",
        _ => "Very Confusing",
    }
}

/// Sums behind a [`CorpusTextReport`]; merge is exact for counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TextStatsAccumulator {
    pub n: u64,
    pub sentences: u64,
    pub words: u64,
    pub letters: u64,
    pub syllables: u64,
    pub polysyllables: u64,
    pub defined: u64,
    pub flesch_sum: f64,
    pub grade_sum: f64,
}

impl TextStatsAccumulator {
    pub fn push(&mut self, s: &TextStats) {
        self.n += 1;
        self.sentences += s.sentences as u64;
        self.words += s.words as u64;
        self.letters += s.letters as u64;
        self.syllables += s.syllables as u64;
        self.polysyllables += s.polysyllables as u64;
        if let (Some(f), Some(g)) = (s.flesch, s.grade_consensus) {
            self.defined += 1;
            self.flesch_sum += f;
            self.grade_sum += g;
        }
    }

    pub fn push_text(&mut self, text: &str) {
        self.push(&TextStats::compute(text));
    }

    pub fn merge(&mut self, o: &TextStatsAccumulator) {
        self.n += o.n;
        self.sentences += o.sentences;
        self.words += o.words;
        self.letters += o.letters;
        self.syllables += o.syllables;
        self.polysyllables += o.polysyllables;
        self.defined += o.defined;
        self.flesch_sum += o.flesch_sum;
        self.grade_sum += o.grade_sum;
    }

    pub fn report(&self) -> CorpusTextReport {
        let mean = |sum: f64, n: u64| (n > 0).then(|| sum / n as f64);
        let flesch = mean(self.flesch_sum, self.defined);
        CorpusTextReport {
            n: self.n,
            mean_sentences: mean(self.sentences as f64, self.n),
            mean_words: mean(self.words as f64, self.n),
            mean_letters: mean(self.letters as f64, self.n),
            mean_syllables: mean(self.syllables as f64, self.n),
            mean_polysyllables: mean(self.polysyllables as f64, self.n),
            mean_flesch: flesch,
            mean_grade_consensus: mean(self.grade_sum, self.defined),
            undefined_count: self.n - self.defined,
            readability: flesch.map(|f| flesch_label(f).to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTextReport {
    pub n: u64,
    pub mean_sentences: Option<f64>,
    pub mean_words: Option<f64>,
    pub mean_letters: Option<f64>,
    pub mean_syllables: Option<f64>,
    pub mean_polysyllables: Option<f64>,
    /// Over captions where Flesch is defined.
    pub mean_flesch: Option<f64>,
    pub mean_grade_consensus: Option<f64>,
    /// Captions excluded from the Flesch and grade means.
    pub undefined_count: u64,
    pub readability: Option<String>,
}

pub fn corpus_text_stats<I, S>(captions: I) -> CorpusTextReport
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut acc = TextStatsAccumulator::default();
    for c in captions {
        acc.push_text(c.as_ref());
    }
    acc.report()
}
