//! Rule-based direct-quote attribution, quote-type classification and the
//! exporters for sequence-labelling (BIO) and extractive QA training data.

use std::fmt;
use std::io::{self, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QuoteRecord, QuoteType};
use crate::pipeline::{paired_quotes_check, TriggerLexicon};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotatorError {
    #[error("quotation marks are not paired")]
    UnbalancedQuotes,
    #[error("{0} span not found in main sentence")]
    SpanNotFound(&'static str),
    #[error("predicted source required for predicted_source mode")]
    MissingPrediction,
    #[error("invalid BIO sequence: {0}")]
    InvalidBio(String),
}

/// A token with its byte range in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Whitespace tokenization with leading and trailing punctuation split off
/// into one token per character. Inner punctuation (`O'Brien`, `U.S`) stays.
pub fn tokenize_detached(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut chunk_start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                split_chunk(text, s, i, &mut out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    out
}

fn split_chunk<'a>(text: &'a str, start: usize, end: usize, out: &mut Vec<Token<'a>>) {
    let chunk = &text[start..end];
    let first_alnum = chunk.char_indices().find(|(_, c)| c.is_alphanumeric());
    let Some((core_start, _)) = first_alnum else {
        for (i, c) in chunk.char_indices() {
            let s = start + i;
            out.push(Token { text: &text[s..s + c.len_utf8()], start: s, end: s + c.len_utf8() });
        }
        return;
    };
    let (last_i, last_c) = chunk
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .expect("chunk has an alphanumeric char");
    let core_end = last_i + last_c.len_utf8();
    for (i, c) in chunk[..core_start].char_indices() {
        let s = start + i;
        out.push(Token { text: &text[s..s + c.len_utf8()], start: s, end: s + c.len_utf8() });
    }
    out.push(Token {
        text: &chunk[core_start..core_end],
        start: start + core_start,
        end: start + core_end,
    });
    for (i, c) in chunk[core_end..].char_indices() {
        let s = start + core_end + i;
        out.push(Token { text: &text[s..s + c.len_utf8()], start: s, end: s + c.len_utf8() });
    }
}

fn is_quote_mark(c: char) -> bool {
    matches!(c, '"' | '\u{201C}' | '\u{201D}')
}

/// Byte ranges of top-level quoted segments, marks included.
fn quoted_segments(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut open: Option<(usize, char)> = None;
    let mut depth = 0usize;
    for (i, c) in text.char_indices() {
        match (open, c) {
            (None, '"') => open = Some((i, '"')),
            (None, '\u{201C}') => {
                open = Some((i, '\u{201C}'));
                depth = 1;
            }
            (Some((s, '"')), '"') => {
                out.push(s..i + 1);
                open = None;
            }
            (Some((_, '\u{201C}')), '\u{201C}') => depth += 1,
            (Some((s, '\u{201C}')), '\u{201D}') => {
                depth -= 1;
                if depth == 0 {
                    out.push(s..i + c.len_utf8());
                    open = None;
                }
            }
            _ => {}
        }
    }
    out
}

/// Output of [`extract_direct`]. Spans are byte ranges into the sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub source: String,
    pub source_span: (usize, usize),
    pub quote: String,
    pub quote_spans: Vec<(usize, usize)>,
    pub trigger: String,
}

const PRONOUNS: [&str; 5] = ["he", "she", "they", "we", "i"];
const NAME_CONNECTORS: [&str; 10] = ["of", "for", "de", "da", "van", "von", "der", "den", "al", "bin"];
const DETERMINERS: [&str; 3] = ["the", "a", "an"];

fn is_capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
}

fn is_pronoun(tok: &str) -> bool {
    PRONOUNS.contains(&tok.to_lowercase().as_str())
}

/// Token index ranges (into `tokens`) of a capitalized run ending at `last`
/// or starting at `first`. `.` tokens glued to the previous token
/// (abbreviations such as `Dr.`) and lowercase connectors between names
/// are absorbed. Leading determiners are trimmed.
fn name_run(tokens: &[Token<'_>], outside: &[bool], anchor: usize, backwards: bool) -> Option<Range<usize>> {
    let glued_period = |j: usize| {
        tokens[j].text == "." && j > 0 && tokens[j - 1].end == tokens[j].start && is_capitalized(tokens[j - 1].text)
    };
    let usable = |j: usize| outside[j];
    // A run of connectors (`von der`) starting at `j` that is followed, in
    // the walking direction, by a capitalized token; returns that token.
    let connector_chain = |j: usize, backwards: bool| -> Option<usize> {
        let mut k = j;
        loop {
            if !usable(k) {
                return None;
            }
            let t = tokens[k].text;
            if NAME_CONNECTORS.contains(&t) {
                k = if backwards { k.checked_sub(1)? } else { k + 1 };
                if k >= tokens.len() {
                    return None;
                }
            } else {
                return (k != j && is_capitalized(t)).then_some(k);
            }
        }
    };
    if !usable(anchor) {
        return None;
    }
    if is_pronoun(tokens[anchor].text) {
        return Some(anchor..anchor + 1);
    }
    if !is_capitalized(tokens[anchor].text) {
        return None;
    }
    let (mut lo, mut hi) = (anchor, anchor + 1);
    if backwards {
        while lo > 0 && usable(lo - 1) {
            let prev = lo - 1;
            let t = tokens[prev].text;
            if is_capitalized(t) || glued_period(prev) {
                lo = prev;
            } else if let Some(j) = connector_chain(prev, true) {
                lo = j;
            } else {
                break;
            }
        }
    } else {
        while hi < tokens.len() && usable(hi) {
            let t = tokens[hi].text;
            if is_capitalized(t) || glued_period(hi) {
                hi += 1;
            } else if let Some(j) = connector_chain(hi, false) {
                hi = j + 1;
            } else {
                break;
            }
        }
        // a trailing glued period is sentence punctuation, not an abbreviation
        while hi > lo + 1 && tokens[hi - 1].text == "." && hi == tokens.len() {
            hi -= 1;
        }
    }
    while lo < hi && DETERMINERS.contains(&tokens[lo].text.to_lowercase().as_str()) {
        lo += 1;
    }
    (lo < hi).then_some(lo..hi)
}

/// Extracts a direct quote and its source from one sentence.
///
/// The quote is every quotation-mark-delimited segment, joined in order
/// with single spaces. The source is the capitalized token run (or
/// personal pronoun) next to the first trigger verb outside the quotes:
/// immediately before it, then immediately after it, then the nearest run
/// further left. Returns `None` when there are no quotation marks or no
/// attributable trigger.
pub fn extract_direct(
    sentence_text: &str,
    lexicon: &TriggerLexicon,
) -> Result<Option<Attribution>, AnnotatorError> {
    if !paired_quotes_check(sentence_text) {
        return Err(AnnotatorError::UnbalancedQuotes);
    }
    let segments = quoted_segments(sentence_text);
    if segments.is_empty() {
        return Ok(None);
    }
    let tokens = tokenize_detached(sentence_text);
    let outside: Vec<bool> = tokens
        .iter()
        .map(|t| !segments.iter().any(|s| s.start <= t.start && t.start < s.end))
        .collect();

    for (i, tok) in tokens.iter().enumerate() {
        if !outside[i] || !tok.text.chars().all(char::is_alphabetic) || !lexicon.matches_surface(tok.text) {
            continue;
        }
        let before = (i > 0).then(|| name_run(&tokens, &outside, i - 1, true)).flatten();
        let after = (i + 1 < tokens.len())
            .then(|| name_run(&tokens, &outside, i + 1, false))
            .flatten();
        let farther = || {
            (0..i)
                .rev()
                .filter(|&j| outside[j])
                .find_map(|j| name_run(&tokens, &outside, j, true))
        };
        let Some(run) = before.or(after).or_else(farther) else {
            continue;
        };
        let span = (tokens[run.start].start, tokens[run.end - 1].end);
        let quote_spans: Vec<(usize, usize)> = segments.iter().map(|s| (s.start, s.end)).collect();
        let quote = quote_spans
            .iter()
            .map(|&(s, e)| &sentence_text[s..e])
            .collect::<Vec<_>>()
            .join(" ");
        return Ok(Some(Attribution {
            source: sentence_text[span.0..span.1].to_owned(),
            source_span: span,
            quote,
            quote_spans,
            trigger: tok.text.to_owned(),
        }));
    }
    Ok(None)
}

/// Classifies a quote span by its quotation marks: no marks is indirect,
/// fully enclosed is direct, anything else is mixed.
pub fn classify_quote_text(quote: &str) -> QuoteType {
    if !quote.chars().any(is_quote_mark) {
        return QuoteType::Indirect;
    }
    if !paired_quotes_check(quote) {
        return QuoteType::Mixed;
    }
    let mut unquoted = String::new();
    let mut last = 0;
    for seg in quoted_segments(quote) {
        unquoted.push_str(&quote[last..seg.start]);
        last = seg.end;
    }
    unquoted.push_str(&quote[last..]);
    if unquoted.chars().any(char::is_alphanumeric) {
        QuoteType::Mixed
    } else {
        QuoteType::Direct
    }
}

pub fn classify_quote_type(record: &QuoteRecord) -> QuoteType {
    classify_quote_text(&record.quote)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BioTag {
    BeginSource,
    InsideSource,
    BeginQuote,
    InsideQuote,
    Outside,
}

impl BioTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BioTag::BeginSource => "B-S",
            BioTag::InsideSource => "I-S",
            BioTag::BeginQuote => "B-Q",
            BioTag::InsideQuote => "I-Q",
            BioTag::Outside => "O",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "B-S" => BioTag::BeginSource,
            "I-S" => BioTag::InsideSource,
            "B-Q" => BioTag::BeginQuote,
            "I-Q" => BioTag::InsideQuote,
            "O" => BioTag::Outside,
            _ => return None,
        })
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tokens and their tags. `offsets` holds byte ranges into the tagged
/// sentence when the sequence was produced from text, and is empty
/// otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioSequence {
    tokens: Vec<String>,
    tags: Vec<BioTag>,
    offsets: Vec<(usize, usize)>,
}

impl BioSequence {
    pub fn new(tokens: Vec<String>, tags: Vec<BioTag>) -> Result<Self, AnnotatorError> {
        if tokens.len() != tags.len() {
            return Err(AnnotatorError::InvalidBio(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        for (i, tag) in tags.iter().enumerate() {
            let prev = i.checked_sub(1).map(|p| tags[p]);
            let ok = match tag {
                BioTag::InsideSource => {
                    matches!(prev, Some(BioTag::BeginSource | BioTag::InsideSource))
                }
                BioTag::InsideQuote => {
                    matches!(prev, Some(BioTag::BeginQuote | BioTag::InsideQuote))
                }
                _ => true,
            };
            if !ok {
                return Err(AnnotatorError::InvalidBio(format!(
                    "{tag} at position {i} does not continue a span"
                )));
            }
        }
        Ok(BioSequence {
            tokens,
            tags,
            offsets: Vec::new(),
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tags(&self) -> &[BioTag] {
        &self.tags
    }

    /// Token-index ranges of the first source span and the first quote span.
    pub fn spans(&self) -> (Option<Range<usize>>, Option<Range<usize>>) {
        let find = |begin: BioTag, inside: BioTag| {
            let start = self.tags.iter().position(|&t| t == begin)?;
            let len = self.tags[start + 1..]
                .iter()
                .take_while(|&&t| t == inside)
                .count();
            Some(start..start + 1 + len)
        };
        (
            find(BioTag::BeginSource, BioTag::InsideSource),
            find(BioTag::BeginQuote, BioTag::InsideQuote),
        )
    }

    /// Recovers `(source, quote)` text from the sentence this sequence was
    /// built from.
    pub fn decode<'t>(&self, text: &'t str) -> (Option<&'t str>, Option<&'t str>) {
        if self.offsets.len() != self.tokens.len() {
            return (None, None);
        }
        let slice = |r: Range<usize>| &text[self.offsets[r.start].0..self.offsets[r.end - 1].1];
        let (s, q) = self.spans();
        (s.map(slice), q.map(slice))
    }

    /// Two-column `token<TAB>tag` lines followed by a blank line.
    pub fn write_conll<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (tok, tag) in self.tokens.iter().zip(&self.tags) {
            writeln!(out, "{tok}\t{tag}")?;
        }
        writeln!(out)
    }
}

fn locate(haystack: &str, needle: &str, avoid: Option<&Range<usize>>) -> Option<Range<usize>> {
    if needle.trim().is_empty() {
        return None;
    }
    haystack
        .match_indices(needle)
        .map(|(i, m)| i..i + m.len())
        .find(|r| avoid.is_none_or(|a| r.end <= a.start || r.start >= a.end))
}

/// Byte ranges of the quote and of the first source occurrence that does
/// not overlap it.
fn locate_record_spans(record: &QuoteRecord) -> Result<(Range<usize>, Range<usize>), AnnotatorError> {
    let quote = locate(&record.main_sentence, &record.quote, None)
        .ok_or(AnnotatorError::SpanNotFound("quote"))?;
    let source = locate(&record.main_sentence, &record.source_surface, Some(&quote))
        .ok_or(AnnotatorError::SpanNotFound("source"))?;
    Ok((source, quote))
}

pub fn to_bio(record: &QuoteRecord) -> Result<BioSequence, AnnotatorError> {
    let (source, quote) = locate_record_spans(record)?;
    let tokens = tokenize_detached(&record.main_sentence);
    let overlaps = |t: &Token<'_>, r: &Range<usize>| t.start < r.end && t.end > r.start;
    let mut tags = Vec::with_capacity(tokens.len());
    let (mut in_source, mut in_quote) = (false, false);
    for t in &tokens {
        let tag = if overlaps(t, &quote) {
            let tag = if in_quote { BioTag::InsideQuote } else { BioTag::BeginQuote };
            in_quote = true;
            tag
        } else if overlaps(t, &source) {
            let tag = if in_source { BioTag::InsideSource } else { BioTag::BeginSource };
            in_source = true;
            tag
        } else {
            BioTag::Outside
        };
        tags.push(tag);
    }
    if !in_quote {
        return Err(AnnotatorError::SpanNotFound("quote"));
    }
    if !in_source {
        return Err(AnnotatorError::SpanNotFound("source"));
    }
    let mut seq = BioSequence::new(tokens.iter().map(|t| t.text.to_owned()).collect(), tags)?;
    seq.offsets = tokens.iter().map(|t| (t.start, t.end)).collect();
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    #[default]
    TrueSource,
    PredictedSource,
    Masked,
}

pub const SOURCE_QUESTION: &str = "Who is the source?";

/// One extractive-QA example. `answer_start` is a character offset into
/// [`QaExample::context`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub question: String,
    pub context_l: String,
    pub context_s: String,
    pub context_r: String,
    pub answer_start: usize,
    pub answer_text: String,
    #[serde(skip)]
    pub source_mode: SourceMode,
}

impl QaExample {
    /// Non-empty segments joined by single spaces.
    pub fn context(&self) -> String {
        join_segments(&self.context_l, &self.context_s, &self.context_r)
    }
}

fn join_segments(l: &str, s: &str, r: &str) -> String {
    [l, s, r]
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn quote_question(source: &str) -> String {
    format!("What did {source} say?")
}

/// Builds the source question and the quote question for one record.
pub fn to_qa(
    record: &QuoteRecord,
    mode: SourceMode,
    predicted_source: Option<&str>,
) -> Result<(QaExample, QaExample), AnnotatorError> {
    let asked = match mode {
        SourceMode::TrueSource => record.source_surface.as_str(),
        SourceMode::PredictedSource => predicted_source.ok_or(AnnotatorError::MissingPrediction)?,
        SourceMode::Masked => "they",
    };
    let (source, quote) = locate_record_spans(record)?;
    let prefix_chars = if record.left_sentence.is_empty() {
        0
    } else {
        record.left_sentence.chars().count() + 1
    };
    let s = &record.main_sentence;
    let char_offset = |byte: usize| prefix_chars + s[..byte].chars().count();
    let example = |question: String, span: &Range<usize>| QaExample {
        question,
        context_l: record.left_sentence.clone(),
        context_s: s.clone(),
        context_r: record.right_sentence.clone(),
        answer_start: char_offset(span.start),
        answer_text: s[span.clone()].to_owned(),
        source_mode: mode,
    };
    Ok((
        example(SOURCE_QUESTION.to_owned(), &source),
        example(quote_question(asked), &quote),
    ))
}
