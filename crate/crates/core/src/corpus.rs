//! Ingestion and quantization of specification documents.
//!
//! A document is plain UTF-8 text whose section headings look like
//! `5.5.1.2.4 Attach procedure`. Ingestion keeps only the prose of the
//! selected top-level sections: table rows, figure/table captions, code-like
//! lines and reference-only lines are dropped, editor's notes are kept.
//! Quantization then turns every section into one or more segments that fit
//! the token budget without crossing section or sentence boundaries.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_SEGMENT_TOKENS: usize = 320;
pub const DEFAULT_MIN_SEGMENT_TOKENS: usize = 8;
pub const DEFAULT_CUE_WORDS: &[&str] = &["shall", "should", "may", "must", "is", "are"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub corpus_id: String,
    /// Top-level section numbers to retain. Empty keeps every section.
    pub section_range: Vec<u32>,
    pub max_segment_tokens: usize,
    pub min_segment_tokens: usize,
    /// A segment survives only if it contains one of these words. Empty disables the check.
    #[serde(default)]
    pub cue_words: Vec<String>,
}

impl CorpusProfile {
    pub fn new(corpus_id: impl Into<String>) -> Self {
        Self {
            corpus_id: corpus_id.into(),
            section_range: Vec::new(),
            max_segment_tokens: DEFAULT_MAX_SEGMENT_TOKENS,
            min_segment_tokens: DEFAULT_MIN_SEGMENT_TOKENS,
            cue_words: DEFAULT_CUE_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_sections(mut self, sections: impl IntoIterator<Item = u32>) -> Self {
        self.section_range = sections.into_iter().collect();
        self
    }

    pub fn with_token_bounds(mut self, min: usize, max: usize) -> Self {
        self.min_segment_tokens = min;
        self.max_segment_tokens = max;
        self
    }

    pub fn without_cues(mut self) -> Self {
        self.cue_words.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus_id.is_empty()
            || !self
                .corpus_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::InvalidProfile(format!(
                "corpus id `{}` must be nonempty and use [A-Za-z0-9_-]",
                self.corpus_id
            )));
        }
        if self.min_segment_tokens < 1 || self.min_segment_tokens >= self.max_segment_tokens {
            return Err(Error::InvalidProfile(format!(
                "need 1 <= min_segment_tokens < max_segment_tokens, got {} and {}",
                self.min_segment_tokens, self.max_segment_tokens
            )));
        }
        Ok(())
    }

    fn keeps_section(&self, top_level: u32) -> bool {
        self.section_range.is_empty() || self.section_range.contains(&top_level)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    pub section_path: String,
    pub paragraph_index: usize,
    pub text: String,
    pub token_count: usize,
}

impl Segment {
    /// Corpus part of the segment id.
    pub fn corpus_id(&self) -> &str {
        self.segment_id.rsplit_once(':').map_or("", |(c, _)| c)
    }

    pub fn ordinal(&self) -> usize {
        self.segment_id
            .rsplit_once(':')
            .and_then(|(_, o)| o.parse().ok())
            .unwrap_or(0)
    }
}

pub fn segment_id(corpus_id: &str, ordinal: usize) -> String {
    format!("{corpus_id}:{ordinal:06}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub profile: CorpusProfile,
    pub segments: Vec<Segment>,
    pub source_digest: String,
}

impl Corpus {
    /// Runs ingestion, quantization and deduplication over one document.
    pub fn build(raw_text: &str, profile: CorpusProfile) -> Result<Self> {
        let tree = ingest_document(raw_text, &profile)?;
        let segments = dedupe_segments(quantize_segments(&tree, &profile));
        let source_digest = hex::encode(Sha256::digest(tree.render().as_bytes()));
        Ok(Self {
            profile,
            segments,
            source_digest,
        })
    }
}

// ---------------------------------------------------------------------------
// Line cleaning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Blank,
    Heading,
    Prose,
    TableRow,
    Caption,
    Code,
    CrossReference,
}

impl LineKind {
    pub fn is_removed(self) -> bool {
        matches!(
            self,
            LineKind::TableRow | LineKind::Caption | LineKind::Code | LineKind::CrossReference
        )
    }
}

macro_rules! regex {
    ($re:literal) => {{
        static RE: OnceLock<Regex> = OnceLock::new();
        RE.get_or_init(|| Regex::new($re).unwrap())
    }};
}

fn heading_parts(line: &str) -> Option<(&str, &str)> {
    let caps = regex!(r"^(\d+(?:\.\d+)*)\s+(\p{Lu}.{0,150})$").captures(line.trim())?;
    Some((caps.get(1)?.as_str(), caps.get(2)?.as_str().trim()))
}

fn is_table_row(line: &str) -> bool {
    let separators = line.chars().filter(|&c| c == '\t' || c == '|').count();
    if separators >= 2 {
        return true;
    }
    let mut runs = 0;
    let mut spaces = 0;
    for c in line.chars() {
        if c == ' ' {
            spaces += 1;
        } else {
            if spaces >= 2 {
                runs += 1;
            }
            spaces = 0;
        }
    }
    runs >= 3
}

fn is_caption(line: &str) -> bool {
    regex!(r"^(?:Figure|Table)\s+[A-Z]?\d+(?:[.\-][0-9A-Za-z]+)*:?(?:\s|$)").is_match(line)
}

fn is_code(line: &str) -> bool {
    if line.contains('{') || line.contains('}') {
        return true;
    }
    if regex!(r"^[A-Za-z_][\w.\[\]]*\s*[-+*/]?=\s*[^=].*;$").is_match(line)
        || regex!(r"^[A-Za-z_][\w:.]*\s*\(.*\)\s*;$").is_match(line)
    {
        return true;
    }
    let body = regex!(r"^(?:[a-z]|\d{1,2}|[ivx]+)\)\s+").replace(line, "");
    let nonspace = body.chars().filter(|c| !c.is_whitespace()).count();
    let symbols = body.chars().filter(|c| ";=(){}[]<>".contains(*c)).count();
    nonspace > 0 && (body.contains(';') || body.contains('=')) && symbols * 5 >= nonspace
}

fn is_cross_reference(line: &str) -> bool {
    regex!(
        r"(?i)^(?:(?:see|refer to|as (?:specified|defined|described) in)\s+)?(?:3GPP\s+)?T[SR]\s+\d+\.\d+(?:\s*\[\d+\])?(?:,?\s*(?:sub)?clause\s+[\d.]+)?\s*\.?$"
    )
    .is_match(line)
        || regex!(r"^\[\d+\]\.?$").is_match(line)
}

/// Classifies one raw line. Each line is judged on its own.
pub fn classify_line(line: &str) -> LineKind {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        LineKind::Blank
    } else if heading_parts(trimmed).is_some() {
        LineKind::Heading
    } else if is_table_row(trimmed) {
        LineKind::TableRow
    } else if is_caption(trimmed) {
        LineKind::Caption
    } else if is_code(trimmed) {
        LineKind::Code
    } else if is_cross_reference(trimmed) {
        LineKind::CrossReference
    } else {
        LineKind::Prose
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub lines: Vec<String>,
}

impl Paragraph {
    pub fn text(&self) -> String {
        self.lines.join(" ")
    }

    pub fn token_count(&self) -> usize {
        self.lines
            .iter()
            .map(|l| l.split_whitespace().count())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub path: String,
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

impl Section {
    pub fn top_level(&self) -> u32 {
        self.path
            .split('.')
            .next()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0)
    }

    pub fn prose(&self) -> String {
        self.paragraphs
            .iter()
            .map(Paragraph::text)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Cleaned sections in document order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionTree {
    pub sections: Vec<Section>,
}

impl SectionTree {
    /// Renders the tree back to plain text that ingests to the same tree.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for section in &self.sections {
            out.push_str(&section.path);
            out.push(' ');
            out.push_str(&section.title);
            out.push('\n');
            for paragraph in &section.paragraphs {
                out.push('\n');
                for line in &paragraph.lines {
                    out.push_str(line);
                    out.push('\n');
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn prose_line_count(&self) -> usize {
        self.sections
            .iter()
            .flat_map(|s| &s.paragraphs)
            .map(|p| p.lines.len())
            .sum()
    }
}

pub fn ingest_document(raw_text: &str, profile: &CorpusProfile) -> Result<SectionTree> {
    profile.validate()?;
    let mut sections: Vec<Section> = Vec::new();
    let mut current: Option<Section> = None;
    let mut paragraph: Vec<String> = Vec::new();
    let mut saw_heading = false;

    fn close_paragraph(section: &mut Option<Section>, paragraph: &mut Vec<String>) {
        if let Some(section) = section.as_mut() {
            if !paragraph.is_empty() {
                section.paragraphs.push(Paragraph {
                    lines: std::mem::take(paragraph),
                });
            }
        }
        paragraph.clear();
    }

    for line in raw_text.lines() {
        match classify_line(line) {
            LineKind::Heading => {
                saw_heading = true;
                close_paragraph(&mut current, &mut paragraph);
                if let Some(done) = current.take() {
                    sections.push(done);
                }
                let (path, title) = heading_parts(line).expect("classified as heading");
                current = Some(Section {
                    path: path.to_string(),
                    title: title.to_string(),
                    paragraphs: Vec::new(),
                });
            }
            LineKind::Blank => close_paragraph(&mut current, &mut paragraph),
            LineKind::Prose if current.is_some() => paragraph.push(line.trim().to_string()),
            _ => {}
        }
    }
    close_paragraph(&mut current, &mut paragraph);
    if let Some(done) = current.take() {
        sections.push(done);
    }

    if !saw_heading {
        return Err(Error::MalformedHeadings);
    }
    sections.retain(|s| profile.keeps_section(s.top_level()));
    if sections.iter().all(|s| s.paragraphs.is_empty()) {
        return Err(Error::EmptyAfterCleaning(profile.corpus_id.clone()));
    }
    Ok(SectionTree { sections })
}

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "cf.", "vs.", "no.", "fig.", "approx.",
];

fn ends_sentence(token: &str) -> bool {
    let stripped = token.trim_end_matches(['"', '\'', ')', ']']);
    (stripped.ends_with('.') || stripped.ends_with('!') || stripped.ends_with('?'))
        && !ABBREVIATIONS.contains(&stripped.to_ascii_lowercase().as_str())
}

/// Splits text into sentences, each a list of whitespace tokens.
pub fn split_sentences(text: &str) -> Vec<Vec<&str>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for token in text.split_whitespace() {
        current.push(token);
        if ends_sentence(token) {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

/// Greedily packs whole sentences into chunks of at most `max_tokens` tokens.
/// A single sentence longer than the budget is cut at token boundaries.
pub fn chunk_sentences(text: &str, max_tokens: usize) -> Vec<String> {
    let mut chunks: Vec<Vec<&str>> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for sentence in split_sentences(text) {
        if current.len() + sentence.len() <= max_tokens {
            current.extend(sentence);
            continue;
        }
        if !current.is_empty() {
            chunks.push(std::mem::take(&mut current));
        }
        if sentence.len() <= max_tokens {
            current = sentence;
        } else {
            let mut pieces = sentence
                .chunks(max_tokens)
                .map(<[&str]>::to_vec)
                .collect::<Vec<_>>();
            current = pieces.pop().unwrap_or_default();
            chunks.extend(pieces);
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks.into_iter().map(|c| c.join(" ")).collect()
}

struct Piece {
    paragraph_index: usize,
    text: String,
    tokens: usize,
}

impl Piece {
    fn new(paragraph_index: usize, text: String) -> Self {
        let tokens = text.split_whitespace().count();
        Self {
            paragraph_index,
            text,
            tokens,
        }
    }
}

fn section_pieces(section: &Section, profile: &CorpusProfile) -> Vec<Piece> {
    let max = profile.max_segment_tokens;
    let total: usize = section.paragraphs.iter().map(Paragraph::token_count).sum();
    if total == 0 {
        return Vec::new();
    }
    if total <= max {
        return vec![Piece::new(0, section.prose())];
    }
    let mut pieces = Vec::new();
    for (index, paragraph) in section.paragraphs.iter().enumerate() {
        let text = paragraph.text();
        if paragraph.token_count() <= max {
            pieces.push(Piece::new(index, text));
        } else {
            pieces.extend(
                chunk_sentences(&text, max)
                    .into_iter()
                    .map(|c| Piece::new(index, c)),
            );
        }
    }
    pieces
}

fn merge_short(section: &Section, pieces: Vec<Piece>, profile: &CorpusProfile) -> Vec<Piece> {
    let (min, max) = (profile.min_segment_tokens, profile.max_segment_tokens);
    let mut out: Vec<Piece> = Vec::new();
    let mut carry: Option<Piece> = None;
    let count = pieces.len();
    for (i, mut piece) in pieces.into_iter().enumerate() {
        if let Some(prefix) = carry.take() {
            if prefix.tokens + piece.tokens <= max {
                piece = Piece {
                    paragraph_index: prefix.paragraph_index,
                    text: format!("{} {}", prefix.text, piece.text),
                    tokens: prefix.tokens + piece.tokens,
                };
            } else {
                log::debug!(
                    "dropping short section-initial remainder in {}",
                    section.path
                );
            }
        }
        if piece.tokens >= min {
            out.push(piece);
            continue;
        }
        match out.last_mut() {
            Some(prev) if prev.tokens + piece.tokens <= max => {
                prev.text.push(' ');
                prev.text.push_str(&piece.text);
                prev.tokens += piece.tokens;
            }
            None if i + 1 < count => carry = Some(piece),
            _ => log::debug!(
                "dropping {}-token remainder in section {}",
                piece.tokens,
                section.path
            ),
        }
    }
    out
}

fn has_cue(text: &str, cues: &[String]) -> bool {
    cues.is_empty()
        || text.split_whitespace().any(|w| {
            let word = w
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            cues.contains(&word)
        })
}

/// Turns the cleaned tree into token-bounded segments, numbered in document order.
pub fn quantize_segments(tree: &SectionTree, profile: &CorpusProfile) -> Vec<Segment> {
    let mut segments = Vec::new();
    for section in &tree.sections {
        let pieces = merge_short(section, section_pieces(section, profile), profile);
        for piece in pieces {
            if !has_cue(&piece.text, &profile.cue_words) {
                continue;
            }
            segments.push(Segment {
                segment_id: segment_id(&profile.corpus_id, segments.len()),
                section_path: section.path.clone(),
                paragraph_index: piece.paragraph_index,
                text: piece.text,
                token_count: piece.tokens,
            });
        }
    }
    segments
}

pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Drops segments whose normalized text was already seen, keeping the first occurrence.
pub fn dedupe_segments(segments: Vec<Segment>) -> Vec<Segment> {
    let mut seen = HashSet::new();
    segments
        .into_iter()
        .filter(|s| seen.insert(normalize_text(&s.text)))
        .collect()
}
