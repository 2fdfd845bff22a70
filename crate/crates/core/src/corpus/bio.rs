//! BIO tag syntax and span conversion with conlleval semantics.

use std::fmt;

use crate::error::{Error, Result};

pub const OUTSIDE: &str = "O";

/// A labeled entity span over token positions, `end` inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Span {
            label: label.into(),
            start,
            end,
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{}]", self.label, self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BioTag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

/// Parse one tag. Anything other than `O`, `B-X` or `I-X` with nonempty `X` is rejected.
pub fn parse_tag(tag: &str) -> Option<BioTag<'_>> {
    if tag == OUTSIDE {
        return Some(BioTag::Outside);
    }
    let (prefix, label) = tag.split_at_checked(2)?;
    if label.is_empty() {
        return None;
    }
    match prefix {
        "B-" => Some(BioTag::Begin(label)),
        "I-" => Some(BioTag::Inside(label)),
        _ => None,
    }
}

pub fn is_valid_tag(tag: &str) -> bool {
    parse_tag(tag).is_some()
}

/// Decode spans. An `I-X` that does not continue an `X` span opens a new one.
/// Unparseable tags are treated as `O`.
pub fn spans_from_bio<S: AsRef<str>>(tags: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, t) in tags.iter().enumerate() {
        match parse_tag(t.as_ref()).unwrap_or(BioTag::Outside) {
            BioTag::Outside => {
                spans.extend(open.take());
            }
            BioTag::Begin(label) => {
                spans.extend(open.take());
                open = Some(Span::new(label, i, i));
            }
            BioTag::Inside(label) => match open.as_mut() {
                Some(span) if span.label == label => span.end = i,
                _ => {
                    spans.extend(open.take());
                    open = Some(Span::new(label, i, i));
                }
            },
        }
    }
    spans.extend(open);
    spans
}

/// Encode non-overlapping spans as a tag sequence of the given length.
pub fn bio_from_spans(spans: &[Span], length: usize) -> Result<Vec<String>> {
    let mut tags = vec![OUTSIDE.to_string(); length];
    let mut taken = vec![false; length];
    for s in spans {
        if s.start > s.end || s.end >= length {
            return Err(Error::input(format!("span {s} outside sentence of length {length}")));
        }
        if s.label.is_empty() {
            return Err(Error::input("span with empty label"));
        }
        for i in s.start..=s.end {
            if taken[i] {
                return Err(Error::input(format!("span {s} overlaps another span")));
            }
            taken[i] = true;
            let prefix = if i == s.start { "B-" } else { "I-" };
            tags[i] = format!("{prefix}{}", s.label);
        }
    }
    Ok(tags)
}
