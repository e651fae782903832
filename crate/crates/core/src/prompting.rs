//! Prompt rendering and rule-based tokenization with modality tags.
//!
//! Numbers are split into single-character tokens so that every digit of a
//! rendered value is its own time-series token. Rendering records the byte
//! span of every value it writes, and [`Tokenizer::tokenize_rendered`] tags a
//! token as time series exactly when it falls inside one of those spans.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{contract, Error, Result};

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
pub const PAD_TOKEN: &str = "[PAD]";
pub const OOV_TOKEN: &str = "[OOV]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Text,
    TimeSeries,
}

/// A prompt string plus the byte ranges of every numeric value rendered into it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    pub value_spans: Vec<Range<usize>>,
}

impl RenderedPrompt {
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Plural unit used after a step count, e.g. `hour` → `hours`.
pub fn freq_plural(freq: &str) -> String {
    if freq.starts_with(|c: char| c.is_ascii_digit()) {
        "steps".to_string()
    } else if freq.ends_with('s') {
        freq.to_string()
    } else {
        format!("{freq}s")
    }
}

struct Builder {
    text: String,
    spans: Vec<Range<usize>>,
    decimals: usize,
}

impl Builder {
    fn new(decimals: usize) -> Self {
        Self {
            text: String::new(),
            spans: Vec::new(),
            decimals,
        }
    }

    fn push(&mut self, s: &str) {
        self.text.push_str(s);
    }

    fn value(&mut self, v: f64) {
        let start = self.text.len();
        self.text.push_str(&format!("{v:.*}", self.decimals));
        self.spans.push(start..self.text.len());
    }

    /// `a`, `a and b`, or `a, b, …, and z`.
    fn list(&mut self, values: &[f64]) {
        let n = values.len();
        for (i, &v) in values.iter().enumerate() {
            if i > 0 {
                match (n, i == n - 1) {
                    (2, _) => self.push(" and "),
                    (_, true) => self.push(", and "),
                    _ => self.push(", "),
                }
            }
            self.value(v);
        }
    }

    fn finish(self) -> RenderedPrompt {
        RenderedPrompt {
            text: self.text,
            value_spans: self.spans,
        }
    }
}

/// `The values were <v1>, …, and <vH> every <freq>. Forecast the values for the
/// next <M> <freq plural>.`
pub fn render_history_prompt(
    values: &[f64],
    freq: &str,
    horizon: usize,
    decimals: usize,
) -> Result<RenderedPrompt> {
    if values.is_empty() {
        return Err(contract("history prompt needs at least one value"));
    }
    let mut b = Builder::new(decimals);
    b.push("The values were ");
    b.list(values);
    b.push(&format!(
        " every {freq}. Forecast the values for the next {horizon} {}.",
        freq_plural(freq)
    ));
    Ok(b.finish())
}

/// `The values were <h1>, …, and <hH> every <freq>. The values for the next <G>
/// <freq plural> will be <g1>, …, and <gG>.`
pub fn render_groundtruth_prompt(
    history: &[f64],
    future: &[f64],
    freq: &str,
    decimals: usize,
) -> Result<RenderedPrompt> {
    if history.is_empty() || future.is_empty() {
        return Err(contract(
            "ground-truth prompt needs history and future values",
        ));
    }
    let mut b = Builder::new(decimals);
    b.push("The values were ");
    b.list(history);
    b.push(&format!(
        " every {freq}. The values for the next {} {} will be ",
        future.len(),
        freq_plural(freq)
    ));
    b.list(future);
    b.push(".");
    Ok(b.finish())
}

const TEMPLATE_WORDS: &[&str] = &[
    "The", "values", "were", "every", "Forecast", "the", "for", "next", "will", "be", "and",
    "steps", "second", "seconds", "minute", "minutes", "hour", "hours", "day", "days", "week",
    "weeks", "month", "months", "year", "years",
];

/// Closed vocabulary; the line number in the vocabulary file is the token id.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    version: u32,
}

impl Vocabulary {
    pub fn standard() -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        tokens.extend(('0'..='9').map(String::from));
        tokens.extend([".", "-", ",", ":", ";"].map(String::from));
        tokens.extend(TEMPLATE_WORDS.iter().map(|w| w.to_string()));
        Self::from_tokens(tokens).expect("standard vocabulary is valid")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != OOV_TOKEN {
            return Err(contract("vocabulary must start with [PAD] and [OOV]"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(contract(format!("duplicate token `{t}`")));
            }
        }
        let digest = Sha256::digest(tokens.join("\n").as_bytes());
        let version = u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]]);
        Ok(Self {
            tokens,
            index,
            version,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(OOV_TOKEN, String::as_str)
    }
}

/// Token ids with per-token modality tags, right-padded with `[PAD]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedTokenSequence {
    pub ids: Vec<u32>,
    pub tags: Vec<Modality>,
    /// Number of leading non-pad tokens.
    pub true_len: usize,
    pub vocab_version: u32,
}

impl TaggedTokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Right-pads to `len` with `[PAD]` tokens tagged as text.
    pub fn pad_to(&mut self, len: usize) {
        while self.ids.len() < len {
            self.ids.push(PAD_ID);
            self.tags.push(Modality::Text);
        }
    }
}

/// Pads a batch of sequences to the longest one.
pub fn pad_batch(seqs: &mut [TaggedTokenSequence]) {
    let max = seqs.iter().map(TaggedTokenSequence::len).max().unwrap_or(0);
    seqs.iter_mut().for_each(|s| s.pad_to(max));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PieceKind {
    Word,
    NumberChar,
    Punct,
}

struct Piece {
    span: Range<usize>,
    kind: PieceKind,
}

/// Splits text into words, single-character number pieces and punctuation.
fn segment(text: &str) -> Vec<Piece> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |k: usize| chars.get(k + 1).map_or(text.len(), |c| c.0);
    let mut out = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        let (pos, c) = chars[k];
        let next = chars.get(k + 1).map(|c| c.1);
        if c.is_whitespace() {
            k += 1;
        } else if c.is_ascii_digit() || (c == '-' && next.is_some_and(|n| n.is_ascii_digit())) {
            // numeric literal: -?digits(.digits)?
            let mut j = k;
            if c == '-' {
                out.push(Piece {
                    span: pos..end_of(j),
                    kind: PieceKind::NumberChar,
                });
                j += 1;
            }
            let mut seen_point = false;
            while j < chars.len() {
                let cj = chars[j].1;
                let after = chars.get(j + 1).map(|c| c.1);
                let take = cj.is_ascii_digit()
                    || (cj == '.' && !seen_point && after.is_some_and(|a| a.is_ascii_digit()));
                if !take {
                    break;
                }
                seen_point |= cj == '.';
                out.push(Piece {
                    span: chars[j].0..end_of(j),
                    kind: PieceKind::NumberChar,
                });
                j += 1;
            }
            k = j;
        } else if c.is_alphabetic() {
            let mut j = k;
            while j < chars.len() && chars[j].1.is_alphabetic() {
                j += 1;
            }
            out.push(Piece {
                span: pos..end_of(j - 1),
                kind: PieceKind::Word,
            });
            k = j;
        } else {
            out.push(Piece {
                span: pos..end_of(k),
                kind: PieceKind::Punct,
            });
            k += 1;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocabulary,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new(Vocabulary::standard())
    }
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn build(&self, text: &str, tag: impl Fn(&Piece) -> Modality) -> TaggedTokenSequence {
        let pieces = segment(text);
        let ids = pieces
            .iter()
            .map(|p| self.vocab.id(&text[p.span.clone()]))
            .collect::<Vec<_>>();
        let tags = pieces.iter().map(tag).collect();
        TaggedTokenSequence {
            true_len: ids.len(),
            ids,
            tags,
            vocab_version: self.vocab.version(),
        }
    }

    /// Tokenizes free text; every numeric-literal character is tagged as time series.
    pub fn tokenize(&self, prompt: &str) -> Result<TaggedTokenSequence> {
        if prompt.trim().is_empty() {
            return Err(contract("cannot tokenize an empty prompt"));
        }
        Ok(self.build(prompt, |p| match p.kind {
            PieceKind::NumberChar => Modality::TimeSeries,
            _ => Modality::Text,
        }))
    }

    /// Tokenizes a rendered prompt, tagging exactly the characters of rendered values.
    pub fn tokenize_rendered(&self, prompt: &RenderedPrompt) -> TaggedTokenSequence {
        self.build(&prompt.text, |p| {
            let inside = prompt
                .value_spans
                .iter()
                .any(|s| s.start <= p.span.start && p.span.end <= s.end);
            if inside {
                Modality::TimeSeries
            } else {
                Modality::Text
            }
        })
    }

    /// Rebuilds text from ids, up to whitespace normalization.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter(|&&id| id != PAD_ID)
            .map(|&id| self.vocab.token(id))
            .collect();
        let is_digit = |t: &str| t.len() == 1 && t.as_bytes()[0].is_ascii_digit();
        let mut out = String::new();
        for (i, &t) in toks.iter().enumerate() {
            let prev = i.checked_sub(1).map(|j| toks[j]);
            let prev2 = i.checked_sub(2).map(|j| toks[j]);
            let joins = match prev {
                None => true,
                Some(p) => {
                    matches!(t, "," | "." | ":" | ";")
                        || (is_digit(t) && (is_digit(p) || p == "-"))
                        || (is_digit(t) && p == "." && prev2.is_some_and(is_digit))
                }
            };
            if !joins {
                out.push(' ');
            }
            out.push_str(t);
        }
        out
    }
}
