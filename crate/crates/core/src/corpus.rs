//! Token sequences, gold segmentations and the tab-separated column format.
//!
//! One token per line with five columns:
//!
//! ```text
//! surface  POS  in_title(0|1)  phrase_tag(or "-")  span_tag(B-<label>|I-<label>|O)
//! ```
//!
//! A blank line ends a sentence and lines starting with `#` are comments.
//! Maximal runs of `O` become a single segment carrying the default label.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

/// Errors raised while reading or validating a corpus.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sentence {sentence}: {message}")]
    Validation { sentence: usize, message: String },
    #[error("invalid label set: {0}")]
    LabelSet(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Index of a label inside a [`LabelSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelId(pub usize);

impl LabelId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub pos: String,
    pub in_title: bool,
    /// Chunk tag from an external parser (`NP`, `VP`, ...), if one was supplied.
    pub phrase_tag: Option<String>,
}

impl Token {
    pub fn new(surface: impl Into<String>, pos: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            pos: pos.into(),
            in_title: false,
            phrase_tag: None,
        }
    }

    pub fn in_title(mut self, in_title: bool) -> Self {
        self.in_title = in_title;
        self
    }

    pub fn with_phrase_tag(mut self, tag: impl Into<String>) -> Self {
        self.phrase_tag = Some(tag.into());
        self
    }
}

/// A labeled span `[start, end]`, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: LabelId,
}

impl Segment {
    pub fn new(start: usize, end: usize, label: LabelId) -> Self {
        debug_assert!(start <= end);
        Segment { start, end, label }
    }

    /// Segments are never empty.
    #[allow(clippy::len_without_is_empty)]
    #[inline]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    /// Gold segmentation; contiguous and covering every token exactly once.
    pub gold: Vec<Segment>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>, gold: Vec<Segment>) -> Self {
        Sentence { tokens, gold }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks token and segmentation invariants.
    pub fn validate(&self, labels: &LabelSet) -> Result<(), String> {
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.surface.is_empty() {
                return Err(format!("token {i} has an empty surface"));
            }
            if tok.pos.is_empty() {
                return Err(format!("token {i} has an empty POS tag"));
            }
        }
        validate_cover(&self.gold, self.len(), labels)
    }

    /// Returns true when any token carries a parser-supplied phrase tag.
    pub fn has_phrase_tags(&self) -> bool {
        self.tokens.iter().any(|t| t.phrase_tag.is_some())
    }
}

/// Checks that `segments` tile `[0, n)` in increasing order with known labels.
pub fn validate_cover(segments: &[Segment], n: usize, labels: &LabelSet) -> Result<(), String> {
    let mut next = 0;
    for seg in segments {
        if seg.start != next {
            return Err(format!(
                "segment ({}, {}) starts at {} but the previous segment ended before {}",
                seg.start, seg.end, seg.start, next
            ));
        }
        if seg.end < seg.start || seg.end >= n {
            return Err(format!("segment ({}, {}) out of bounds for length {n}", seg.start, seg.end));
        }
        if seg.label.0 >= labels.len() {
            return Err(format!("segment ({}, {}) has unknown label {}", seg.start, seg.end, seg.label));
        }
        next = seg.end + 1;
    }
    if next != n {
        return Err(format!("segments cover {next} of {n} tokens"));
    }
    Ok(())
}

/// Ordered label inventory with the subset whose duration is modeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    durational: Vec<bool>,
    default_label: LabelId,
}

impl LabelSet {
    pub fn new(labels: &[&str], durational: &[&str], default_label: &str) -> Result<Self, CorpusError> {
        let labels: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        Self::from_names(labels, durational.iter().map(|s| s.to_string()).collect(), default_label)
    }

    pub fn from_names(
        labels: Vec<String>,
        durational: Vec<String>,
        default_label: &str,
    ) -> Result<Self, CorpusError> {
        if labels.len() < 2 {
            return Err(CorpusError::LabelSet("at least two labels are required".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.chars().any(char::is_whitespace) {
                return Err(CorpusError::LabelSet(format!("invalid label name {l:?}")));
            }
            if labels[..i].contains(l) {
                return Err(CorpusError::LabelSet(format!("duplicate label {l}")));
            }
        }
        let mut flags = vec![false; labels.len()];
        for d in &durational {
            match labels.iter().position(|l| l == d) {
                Some(i) => flags[i] = true,
                None => return Err(CorpusError::LabelSet(format!("durational label {d} is not a label"))),
            }
        }
        let default_label = labels
            .iter()
            .position(|l| l == default_label)
            .map(LabelId)
            .ok_or_else(|| CorpusError::LabelSet(format!("default label {default_label} is not a label")))?;
        if flags[default_label.0] {
            return Err(CorpusError::LabelSet("the default label cannot be durational".into()));
        }
        Ok(LabelSet {
            labels,
            durational: flags,
            default_label,
        })
    }

    /// The two-label keyphrase inventory `{NKP, KP}` with `KP` durational.
    pub fn keyphrase() -> Self {
        Self::new(&["NKP", "KP"], &["KP"], "NKP").expect("static label set is valid")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn name(&self, id: LabelId) -> &str {
        &self.labels[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, name: &str) -> Option<LabelId> {
        self.labels.iter().position(|l| l == name).map(LabelId)
    }

    pub fn ids(&self) -> impl Iterator<Item = LabelId> {
        (0..self.labels.len()).map(LabelId)
    }

    #[inline]
    pub fn is_durational(&self, id: LabelId) -> bool {
        self.durational[id.0]
    }

    pub fn durational(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.ids().filter(|&id| self.is_durational(id))
    }

    pub fn default_label(&self) -> LabelId {
        self.default_label
    }
}

/// Reader options for the column format.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Accept four-column lines without a span tag (treated as `O`).
    pub allow_missing_tags: bool,
}

pub fn parse_corpus<R: BufRead>(reader: R, labels: &LabelSet) -> Result<Vec<Sentence>, CorpusError> {
    parse_corpus_with(reader, labels, ParseOptions::default())
}

pub fn parse_corpus_with<R: BufRead>(
    reader: R,
    labels: &LabelSet,
    options: ParseOptions,
) -> Result<Vec<Sentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags: Vec<SpanTag> = Vec::new();
    let mut first_line = 0;

    let mut flush = |tokens: &mut Vec<Token>, tags: &mut Vec<SpanTag>, line: usize| -> Result<(), CorpusError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let gold = decode_bio(tags, labels);
        let sentence = Sentence::new(std::mem::take(tokens), gold);
        tags.clear();
        sentence.validate(labels).map_err(|message| CorpusError::Validation {
            sentence: sentences.len(),
            message: format!("{message} (sentence starting at line {line})"),
        })?;
        sentences.push(sentence);
        Ok(())
    };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            flush(&mut tokens, &mut tags, first_line)?;
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        if tokens.is_empty() {
            first_line = lineno;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        let expected_ok = cols.len() == 5 || (options.allow_missing_tags && cols.len() == 4);
        if !expected_ok {
            return Err(CorpusError::Parse {
                line: lineno,
                message: format!("expected 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let err = |message: String| CorpusError::Parse { line: lineno, message };
        let surface = cols[0].trim();
        let pos = cols[1].trim();
        if surface.is_empty() {
            return Err(err("empty surface".into()));
        }
        if pos.is_empty() {
            return Err(err("empty POS tag".into()));
        }
        let in_title = match cols[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("in_title must be 0 or 1, found {other:?}"))),
        };
        let phrase_tag = match cols[3].trim() {
            "-" | "" => None,
            t => Some(t.to_string()),
        };
        let tag = match cols.get(4) {
            Some(raw) => SpanTag::parse(raw.trim(), labels).map_err(err)?,
            None => SpanTag::Outside,
        };
        tokens.push(Token {
            surface: surface.to_string(),
            pos: pos.to_string(),
            in_title,
            phrase_tag,
        });
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags, first_line)?;
    Ok(sentences)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SpanTag {
    Begin(LabelId),
    Inside(LabelId),
    Outside,
}

impl SpanTag {
    fn parse(raw: &str, labels: &LabelSet) -> Result<Self, String> {
        if raw == "O" {
            return Ok(SpanTag::Outside);
        }
        let (kind, name) = raw
            .split_once('-')
            .ok_or_else(|| format!("malformed span tag {raw:?}"))?;
        let id = labels.id(name).ok_or_else(|| format!("unknown label {name:?}"))?;
        match kind {
            "B" => Ok(SpanTag::Begin(id)),
            "I" => Ok(SpanTag::Inside(id)),
            _ => Err(format!("malformed span tag {raw:?}")),
        }
    }
}

// An I- tag that does not continue a segment of the same label opens a new one.
fn decode_bio(tags: &[SpanTag], labels: &LabelSet) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    // (label, opened by O-run?)
    let mut open: Option<(LabelId, bool)> = None;
    for (i, &tag) in tags.iter().enumerate() {
        let (label, outside, starts) = match tag {
            SpanTag::Outside => (labels.default_label(), true, !matches!(open, Some((_, true)))),
            SpanTag::Begin(l) => (l, false, true),
            SpanTag::Inside(l) => (l, false, open != Some((l, false))),
        };
        if starts {
            out.push(Segment::new(i, i, label));
            open = Some((label, outside));
        } else if let Some(last) = out.last_mut() {
            last.end = i;
        }
    }
    out
}

/// Writes sentences in the column format using `segments[i]` as span tags for
/// sentence `i` (pass the gold segmentations to serialize a corpus verbatim).
pub fn write_corpus<W: Write>(
    mut w: W,
    sentences: &[Sentence],
    segments: &[&[Segment]],
    labels: &LabelSet,
) -> std::io::Result<()> {
    assert_eq!(sentences.len(), segments.len());
    for (k, (s, segs)) in sentences.iter().zip(segments).enumerate() {
        if k > 0 {
            writeln!(w)?;
        }
        let tags = encode_bio(segs, s.len(), labels);
        for (tok, tag) in s.tokens.iter().zip(tags) {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                tok.surface,
                tok.pos,
                u8::from(tok.in_title),
                tok.phrase_tag.as_deref().unwrap_or("-"),
                tag
            )?;
        }
    }
    Ok(())
}

/// Serializes gold segmentations.
pub fn write_gold<W: Write>(w: W, sentences: &[Sentence], labels: &LabelSet) -> std::io::Result<()> {
    let segs: Vec<&[Segment]> = sentences.iter().map(|s| s.gold.as_slice()).collect();
    write_corpus(w, sentences, &segs, labels)
}

fn encode_bio(segments: &[Segment], n: usize, labels: &LabelSet) -> Vec<String> {
    let mut tags = vec!["O".to_string(); n];
    for seg in segments {
        if seg.label == labels.default_label() {
            continue;
        }
        let name = labels.name(seg.label);
        tags[seg.start] = format!("B-{name}");
        for t in &mut tags[seg.start + 1..=seg.end] {
            *t = format!("I-{name}");
        }
    }
    tags
}

/// Splits gold segments longer than `max_len` left to right into pieces of at
/// most `max_len` tokens with the same label.
pub fn split_long_segments(sentence: &Sentence, max_len: usize) -> Sentence {
    assert!(max_len >= 1, "maximum segment length must be positive");
    let mut gold = Vec::with_capacity(sentence.gold.len());
    for seg in &sentence.gold {
        let mut start = seg.start;
        while start <= seg.end {
            let end = (start + max_len - 1).min(seg.end);
            gold.push(Segment::new(start, end, seg.label));
            start = end + 1;
        }
    }
    Sentence::new(sentence.tokens.clone(), gold)
}

/// POS pattern for noun groups: a run of `modifiers ∪ heads` tags ending in a head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NounGroupPattern {
    pub modifiers: BTreeSet<String>,
    pub heads: BTreeSet<String>,
}

impl Default for NounGroupPattern {
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        NounGroupPattern {
            modifiers: set(&["JJ", "JJR", "JJS", "VBG"]),
            heads: set(&["NN", "NNS", "NNP", "NNPS"]),
        }
    }
}

impl NounGroupPattern {
    #[inline]
    pub fn is_noun(&self, pos: &str) -> bool {
        self.heads.contains(pos)
    }

    #[inline]
    pub fn admits(&self, pos: &str) -> bool {
        self.heads.contains(pos) || self.modifiers.contains(pos)
    }

    /// Whether `tokens[start..=end]` is a noun group. Parser phrase tags, when
    /// the sentence has any, take precedence over the POS pattern.
    pub fn matches(&self, sentence: &Sentence, start: usize, end: usize) -> bool {
        let span = &sentence.tokens[start..=end];
        if sentence.has_phrase_tags() {
            return span.iter().all(|t| t.phrase_tag.as_deref() == Some("NP"));
        }
        span.iter().all(|t| self.admits(&t.pos)) && self.is_noun(&span[span.len() - 1].pos)
    }
}

/// All noun-group spans of at most `max_len` tokens, as inclusive `(start, end)`.
pub fn noun_group_spans(
    sentence: &Sentence,
    pattern: &NounGroupPattern,
    max_len: usize,
) -> BTreeSet<(usize, usize)> {
    let n = sentence.len();
    let mut spans = BTreeSet::new();
    for start in 0..n {
        for end in start..n.min(start + max_len) {
            if pattern.matches(sentence, start, end) {
                spans.insert((start, end));
            }
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<Sentence>, CorpusError> {
        parse_corpus(text.as_bytes(), &LabelSet::keyphrase())
    }

    fn sent_from_tags(tags: &[&str]) -> String {
        tags.iter()
            .enumerate()
            .map(|(i, t)| format!("w{i}\tNN\t0\t-\t{t}\n"))
            .collect()
    }

    const KP: LabelId = LabelId(1);
    const NKP: LabelId = LabelId(0);

    #[test]
    fn bio_decoding_examples() {
        let s = parse(&sent_from_tags(&["B-KP", "I-KP", "O"])).unwrap();
        assert_eq!(s[0].gold, vec![Segment::new(0, 1, KP), Segment::new(2, 2, NKP)]);

        let s = parse(&sent_from_tags(&["O", "O", "O"])).unwrap();
        assert_eq!(s[0].gold, vec![Segment::new(0, 2, NKP)]);

        let s = parse(&sent_from_tags(&["B-KP", "B-KP"])).unwrap();
        assert_eq!(s[0].gold, vec![Segment::new(0, 0, KP), Segment::new(1, 1, KP)]);
    }

    #[test]
    fn stray_inside_tag_opens_segment() {
        let s = parse(&sent_from_tags(&["O", "I-KP", "I-KP"])).unwrap();
        assert_eq!(s[0].gold, vec![Segment::new(0, 0, NKP), Segment::new(1, 2, KP)]);
    }

    #[test]
    fn blank_lines_and_comments() {
        let text = format!("# header\n{}\n\n{}\n", sent_from_tags(&["O"]), sent_from_tags(&["B-KP", "O"]));
        let s = parse(&text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].tokens.len(), 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "a\tNN\t0\t-\tO\nb\tNN\t0\tO\n";
        match parse(text) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_parse_error() {
        let err = parse("a\tNN\t0\t-\tB-XYZ\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("unknown label"));
    }

    #[test]
    fn bad_title_flag() {
        assert!(parse("a\tNN\t2\t-\tO\n").is_err());
    }

    #[test]
    fn four_columns_only_with_option() {
        let text = "a\tNN\t0\t-\n";
        assert!(parse(text).is_err());
        let opts = ParseOptions {
            allow_missing_tags: true,
        };
        let s = parse_corpus_with(text.as_bytes(), &LabelSet::keyphrase(), opts).unwrap();
        assert_eq!(s[0].gold, vec![Segment::new(0, 0, NKP)]);
    }

    #[test]
    fn validation_rejects_gaps_and_overlaps() {
        let labels = LabelSet::keyphrase();
        let toks = vec![Token::new("a", "NN"), Token::new("b", "NN"), Token::new("c", "NN")];
        let gap = Sentence::new(toks.clone(), vec![Segment::new(0, 0, KP), Segment::new(2, 2, KP)]);
        assert!(gap.validate(&labels).is_err());
        let overlap = Sentence::new(toks.clone(), vec![Segment::new(0, 1, KP), Segment::new(1, 2, KP)]);
        assert!(overlap.validate(&labels).is_err());
        let short = Sentence::new(toks, vec![Segment::new(0, 1, KP)]);
        assert!(short.validate(&labels).is_err());
    }

    #[test]
    fn split_examples() {
        let toks: Vec<Token> = (0..5).map(|i| Token::new(format!("w{i}"), "NN")).collect();
        let s = Sentence::new(toks.clone(), vec![Segment::new(0, 4, NKP)]);
        assert_eq!(
            split_long_segments(&s, 2).gold,
            vec![Segment::new(0, 1, NKP), Segment::new(2, 3, NKP), Segment::new(4, 4, NKP)]
        );

        let s = Sentence::new(toks[..2].to_vec(), vec![Segment::new(0, 1, KP)]);
        assert_eq!(split_long_segments(&s, 2), s);

        let s = Sentence::new(toks[..3].to_vec(), vec![Segment::new(0, 2, KP)]);
        assert_eq!(
            split_long_segments(&s, 2).gold,
            vec![Segment::new(0, 1, KP), Segment::new(2, 2, KP)]
        );
    }

    fn pos_sentence(pos: &[&str]) -> Sentence {
        let toks: Vec<Token> = pos.iter().enumerate().map(|(i, p)| Token::new(format!("w{i}"), *p)).collect();
        let n = toks.len();
        Sentence::new(toks, vec![Segment::new(0, n - 1, NKP)])
    }

    #[test]
    fn noun_groups_from_pos() {
        let pat = NounGroupPattern::default();
        let spans = noun_group_spans(&pos_sentence(&["JJ", "NN"]), &pat, 2);
        assert_eq!(spans, [(0, 1), (1, 1)].into_iter().collect());

        let spans = noun_group_spans(&pos_sentence(&["IN", "NN"]), &pat, 2);
        assert_eq!(spans, [(1, 1)].into_iter().collect());
    }

    #[test]
    fn phrase_tags_take_precedence() {
        let mut s = pos_sentence(&["DT", "JJ", "NN", "VBZ"]);
        for (t, tag) in s.tokens.iter_mut().zip(["NP", "NP", "NP", "VP"]) {
            t.phrase_tag = Some(tag.into());
        }
        let spans = noun_group_spans(&s, &NounGroupPattern::default(), 3);
        assert!(spans.contains(&(0, 2)));
        assert!(!spans.contains(&(2, 3)));
        // DT is outside the POS pattern but the parser says NP
        assert!(spans.contains(&(0, 0)));
    }

    #[test]
    fn label_set_rules() {
        assert!(LabelSet::new(&["KP"], &[], "KP").is_err());
        assert!(LabelSet::new(&["A", "A"], &[], "A").is_err());
        assert!(LabelSet::new(&["A", "B"], &["C"], "A").is_err());
        assert!(LabelSet::new(&["A", "B"], &["B"], "C").is_err());
        let ls = LabelSet::keyphrase();
        assert_eq!(ls.default_label(), NKP);
        assert!(ls.is_durational(KP));
        assert_eq!(ls.durational().collect::<Vec<_>>(), vec![KP]);
    }
}
