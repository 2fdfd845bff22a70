use std::fs;
use std::io::Write;
use std::path::Path;

use super::bio::is_valid_tag;
use super::{Corpus, LabeledCorpus, LabeledSentence, Split, UnlabeledCorpus};
use crate::error::{Error, Result};

/// How the tag column is validated on read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagScheme {
    /// `O`, `B-X` or `I-X`; an `I-X` must continue an `X` span.
    Bio,
    /// Tags are opaque strings (e.g. part-of-speech).
    Opaque,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Raw whitespace-split rows grouped into blocks, with 1-based line numbers.
pub fn read_conll_columns(path: &Path) -> Result<Vec<Vec<(usize, Vec<String>)>>> {
    let text = read_text(path)?;
    let mut blocks = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        current.push((i + 1, line.split_whitespace().map(String::from).collect()));
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    Ok(blocks)
}

/// Read a labeled corpus: first column is the token, last column the tag.
pub fn read_conll(path: &Path, scheme: TagScheme, split: Split, domain: &str) -> Result<LabeledCorpus> {
    let blocks = read_conll_columns(path)?;
    if blocks.is_empty() {
        return Err(Error::data(path, None, "empty corpus"));
    }
    let mut sentences = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut words = Vec::with_capacity(block.len());
        let mut tags: Vec<String> = Vec::with_capacity(block.len());
        for (line, cols) in block {
            if cols.len() < 2 {
                return Err(Error::data(path, Some(line), "expected a token and a tag column"));
            }
            let tag = cols.last().expect("at least two columns").clone();
            if scheme == TagScheme::Bio {
                if !is_valid_tag(&tag) {
                    return Err(Error::data(path, Some(line), format!("malformed BIO tag {tag:?}")));
                }
                if let Some(label) = tag.strip_prefix("I-") {
                    let continues = tags.last().is_some_and(|p| {
                        p.strip_prefix("B-").or_else(|| p.strip_prefix("I-")) == Some(label)
                    });
                    if !continues {
                        return Err(Error::data(
                            path,
                            Some(line),
                            format!("{tag} does not continue a {label} span"),
                        ));
                    }
                }
            }
            words.push(cols[0].clone());
            tags.push(tag);
        }
        sentences.push(LabeledSentence::new(words, tags));
    }
    Ok(Corpus::new(sentences, split, domain))
}

pub fn write_conll(path: &Path, corpus: &LabeledCorpus) -> Result<()> {
    let mut out = String::new();
    for s in &corpus.sentences {
        for (w, t) in s.words.iter().zip(&s.tags) {
            out.push_str(w);
            out.push(' ');
            out.push_str(t);
            out.push('\n');
        }
        out.push('\n');
    }
    write_all(path, out.as_bytes())
}

/// Gold corpus with a predicted-tag column appended.
pub fn write_conll_with_predictions(path: &Path, corpus: &LabeledCorpus, predicted: &[Vec<String>]) -> Result<()> {
    if predicted.len() != corpus.len() {
        return Err(Error::input("prediction count differs from sentence count"));
    }
    let mut out = String::new();
    for (s, p) in corpus.sentences.iter().zip(predicted) {
        if p.len() != s.len() {
            return Err(Error::input("prediction length differs from sentence length"));
        }
        for ((w, t), pt) in s.words.iter().zip(&s.tags).zip(p) {
            out.push_str(&format!("{w} {t} {pt}\n"));
        }
        out.push('\n');
    }
    write_all(path, out.as_bytes())
}

/// One sentence per line, whitespace-tokenized. Blank lines are skipped.
pub fn read_plaintext(path: &Path, split: Split, domain: &str) -> Result<UnlabeledCorpus> {
    let text = read_text(path)?;
    let sentences: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(Error::data(path, None, "empty corpus"));
    }
    Ok(Corpus::new(sentences, split, domain))
}

pub fn write_plaintext(path: &Path, corpus: &UnlabeledCorpus) -> Result<()> {
    let mut out = String::new();
    for s in &corpus.sentences {
        out.push_str(&s.join(" "));
        out.push('\n');
    }
    write_all(path, out.as_bytes())
}

pub(crate) fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_two_token_block() {
        let f = tmp("Budi B-PERSON\nmakan O\n");
        let c = read_conll(f.path(), TagScheme::Bio, Split::Train, "t").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sentences[0].words, ["Budi", "makan"]);
        assert_eq!(c.sentences[0].tags, ["B-PERSON", "O"]);
    }

    #[test]
    fn rejects_unprefixed_tag_with_line() {
        let f = tmp("# comment\nBudi B-PERSON\n\nAni PERSON\n");
        match read_conll(f.path(), TagScheme::Bio, Split::Train, "t") {
            Err(Error::Data { line, .. }) => assert_eq!(line, Some(4)),
            other => panic!("unexpected {other:?}"),
        }
        // The same file is fine when tags are opaque.
        assert!(read_conll(f.path(), TagScheme::Opaque, Split::Train, "t").is_ok());
    }

    #[test]
    fn rejects_orphan_inside_in_gold() {
        let f = tmp("a O\nb I-LOC\n");
        assert!(matches!(
            read_conll(f.path(), TagScheme::Bio, Split::Train, "t"),
            Err(Error::Data { line: Some(2), .. })
        ));
        let f = tmp("a B-PER\nb I-LOC\n");
        assert!(read_conll(f.path(), TagScheme::Bio, Split::Train, "t").is_err());
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = tmp("\n# only a comment\n\n");
        assert!(matches!(
            read_conll(f.path(), TagScheme::Bio, Split::Train, "t"),
            Err(Error::Data { .. })
        ));
        let blank = tmp("\n\n");
        assert!(read_plaintext(blank.path(), Split::Train, "u").is_err());
    }

    #[test]
    fn conll_round_trip() {
        let f = tmp("Budi B-PERSON\nke O\nJakarta B-LOC\n\nhalo O\n\n\nsaya O\nBudi B-PERSON\nSantoso I-PERSON\n");
        let c = read_conll(f.path(), TagScheme::Bio, Split::Dev, "t").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.conll");
        write_conll(&p, &c).unwrap();
        let back = read_conll(&p, TagScheme::Bio, Split::Dev, "t").unwrap();
        assert_eq!(c, back);
        assert_eq!(back.len(), 3);
    }

    #[test]
    fn plaintext_round_trip() {
        let f = tmp("saya  mau pesan\n\nhalo\n");
        let c = read_plaintext(f.path(), Split::Train, "u").unwrap();
        assert_eq!(c.sentences, vec![vec!["saya", "mau", "pesan"], vec!["halo"]]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.txt");
        write_plaintext(&p, &c).unwrap();
        assert_eq!(read_plaintext(&p, Split::Train, "u").unwrap(), c);
    }
}
