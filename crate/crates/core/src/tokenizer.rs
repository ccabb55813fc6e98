//! Token counting for the text-encoder context gate.
//!
//! `word` mode counts whitespace tokens. `bpe` mode reproduces the CLIP
//! byte-level BPE from its merges file (plain or gzipped), and counts the
//! start and end markers too, since they occupy context slots.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Merges used by the CLIP text encoder (vocab 49408 = 256·2 + merges + 2).
pub const CLIP_MERGES: usize = 49152 - 256 - 2;

const CLIP_PATTERN: &str =
    r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+";

/// How captions are tokenized: `word` or `bpe:<merges file>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TokenizerSpec {
    Word,
    Bpe(PathBuf),
}

impl FromStr for TokenizerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "word" => Ok(TokenizerSpec::Word),
            other => match other.strip_prefix("bpe:") {
                Some(path) if !path.is_empty() => Ok(TokenizerSpec::Bpe(PathBuf::from(path))),
                _ => Err(Error::invalid(format!("tokenizer must be `word` or `bpe:<path>`, got {other:?}"))),
            },
        }
    }
}

impl TryFrom<String> for TokenizerSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TokenizerSpec> for String {
    fn from(t: TokenizerSpec) -> String {
        t.to_string()
    }
}

impl fmt::Display for TokenizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerSpec::Word => f.write_str("word"),
            TokenizerSpec::Bpe(p) => write!(f, "bpe:{}", p.display()),
        }
    }
}

impl TokenizerSpec {
    pub fn load(&self) -> Result<Tokenizer> {
        match self {
            TokenizerSpec::Word => Ok(Tokenizer::Word),
            TokenizerSpec::Bpe(path) => Ok(Tokenizer::Bpe(Box::new(ClipBpe::load(path)?))),
        }
    }
}

#[derive(Debug)]
pub enum Tokenizer {
    Word,
    Bpe(Box<ClipBpe>),
}

impl Tokenizer {
    pub fn count(&self, text: &str) -> usize {
        match self {
            Tokenizer::Word => text.split_whitespace().count(),
            Tokenizer::Bpe(bpe) => bpe.encode(text).len() + 2,
        }
    }
}

/// Outcome of the context-length gate for one caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateResult {
    pub kept: bool,
    pub tokens: usize,
}

/// Keeps a caption iff its token count is at most `limit`.
pub fn token_gate(caption: &str, tokenizer: &Tokenizer, limit: usize) -> Result<GateResult> {
    if limit == 0 {
        return Err(Error::invalid("token limit must be at least 1"));
    }
    let tokens = tokenizer.count(caption);
    Ok(GateResult {
        kept: tokens <= limit,
        tokens,
    })
}

/// CLIP's reversible byte → printable-unicode table.
fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
    let mut extra = 0;
    for b in 0u32..256 {
        table[b as usize] = if printable(b) {
            char::from_u32(b).expect("latin-1")
        } else {
            extra += 1;
            char::from_u32(255 + extra).expect("valid codepoint")
        };
    }
    table
}

pub struct ClipBpe {
    ranks: HashMap<(String, String), usize>,
    byte_chars: [char; 256],
    pattern: Regex,
    whitespace: Regex,
    cache: Mutex<HashMap<String, usize>>,
}

impl fmt::Debug for ClipBpe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClipBpe").field("merges", &self.ranks.len()).finish()
    }
}

impl ClipBpe {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = if raw.starts_with(&[0x1f, 0x8b]) {
            let mut s = String::new();
            flate2::read::GzDecoder::new(&raw[..])
                .read_to_string(&mut s)
                .map_err(|e| Error::io(path, e))?;
            s
        } else {
            String::from_utf8(raw).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?
        };
        Self::from_merges(&text, CLIP_MERGES)
    }

    /// Parses a merges listing: an optional `#version` header, then one
    /// space-separated pair per line in priority order.
    pub fn from_merges(text: &str, max_merges: usize) -> Result<Self> {
        let mut lines = text.lines().peekable();
        if lines.peek().is_some_and(|l| l.contains("#version")) {
            lines.next();
        }
        let mut ranks = HashMap::new();
        for (rank, line) in lines.filter(|l| !l.trim().is_empty()).take(max_merges).enumerate() {
            let mut parts = line.split_whitespace();
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::invalid(format!("merges line {} is not a pair: {line:?}", rank + 1)));
            };
            ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
        }
        Ok(Self {
            ranks,
            byte_chars: bytes_to_unicode(),
            pattern: Regex::new(CLIP_PATTERN).expect("static pattern"),
            whitespace: Regex::new(r"\s+").expect("static pattern"),
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Number of BPE pieces for one pre-token.
    fn piece_count(&self, token: &str) -> usize {
        if let Some(&n) = self.cache.lock().expect("cache lock").get(token) {
            return n;
        }
        let mut word: Vec<String> = token
            .bytes()
            .map(|b| self.byte_chars[b as usize].to_string())
            .collect();
        if let Some(last) = word.last_mut() {
            last.push_str("</w>");
        }
        while word.len() > 1 {
            let best = word
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, p[0].clone(), p[1].clone())))
                .min_by_key(|(r, _, _)| *r);
            let Some((_, first, second)) = best else { break };
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == first && word[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut word[i]));
                    i += 1;
                }
            }
            word = merged;
        }
        let n = word.len();
        self.cache.lock().expect("cache lock").insert(token.to_string(), n);
        n
    }

    /// Pre-tokens of the cleaned, lowercased text.
    pub fn pretokenize(&self, text: &str) -> Vec<String> {
        let cleaned = self.whitespace.replace_all(text.trim(), " ").to_lowercase();
        self.pattern
            .find_iter(&cleaned)
            .map(|m| m.as_str().to_string())
            .collect()
    }

    /// Content tokens (without start/end markers), as BPE piece counts per
    /// pre-token flattened into one entry per piece.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, tok) in self.pretokenize(text).iter().enumerate() {
            out.extend(std::iter::repeat_n(i, self.piece_count(tok)));
        }
        out
    }
}
