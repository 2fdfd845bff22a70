use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bio::OUTSIDE;

/// Reserved word symbol for out-of-vocabulary tokens; always id 0.
pub const OOV_WORD: &str = "<unk>";
/// Character id used for unseen characters.
pub const OOV_CHAR: usize = 0;

/// A token indexed against a [`Vocabulary`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub lower: String,
    pub char_ids: Vec<usize>,
    pub word_id: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
struct VocabData {
    words: Vec<String>,
    counts: Vec<usize>,
    chars: Vec<char>,
    labels: Vec<String>,
}

/// Word, character and label symbol tables.
///
/// Word ids are dense with `0` reserved for [`OOV_WORD`]. Character ids are
/// dense with `0` reserved for unseen characters. Sentence boundary markers
/// are never entered.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabData", into = "VocabData")]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<usize>,
    word_index: HashMap<String, usize>,
    chars: Vec<char>,
    char_index: HashMap<char, usize>,
    labels: Vec<String>,
    label_index: HashMap<String, usize>,
}

impl From<VocabData> for Vocabulary {
    fn from(d: VocabData) -> Self {
        Vocabulary::from_parts(d.words, d.counts, d.chars, d.labels)
    }
}

impl From<Vocabulary> for VocabData {
    fn from(v: Vocabulary) -> Self {
        VocabData {
            words: v.words,
            counts: v.counts,
            chars: v.chars,
            labels: v.labels,
        }
    }
}

/// Collects counts before freezing a [`Vocabulary`].
#[derive(Default, Debug)]
pub struct VocabBuilder {
    words: BTreeMap<String, usize>,
    chars: BTreeMap<char, usize>,
    labels: BTreeMap<String, usize>,
}

impl VocabBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_words<S: AsRef<str>>(&mut self, words: &[S]) {
        for w in words {
            let lower = w.as_ref().to_lowercase();
            for c in lower.chars() {
                *self.chars.entry(c).or_default() += 1;
            }
            *self.words.entry(lower).or_default() += 1;
        }
    }

    pub fn add_tags<S: AsRef<str>>(&mut self, tags: &[S]) {
        for t in tags {
            *self.labels.entry(t.as_ref().to_string()).or_default() += 1;
        }
    }

    pub fn build(self, min_count: usize) -> Vocabulary {
        let mut words = vec![OOV_WORD.to_string()];
        let mut counts = vec![0];
        for (w, c) in self.words {
            if c >= min_count.max(1) && w != OOV_WORD {
                words.push(w);
                counts.push(c);
            } else {
                counts[0] += c;
            }
        }
        let chars = self.chars.into_keys().collect();
        let labels = sort_labels(self.labels.into_keys().collect());
        Vocabulary::from_parts(words, counts, chars, labels)
    }
}

/// `O` first, then by entity type with `B-` before `I-`; opaque tags sorted plainly.
fn sort_labels(mut labels: Vec<String>) -> Vec<String> {
    labels.sort_by(|a, b| label_key(a).cmp(&label_key(b)));
    labels
}

fn label_key(l: &str) -> (u8, &str, &str) {
    if l == OUTSIDE {
        return (0, "", "");
    }
    match l.split_at_checked(2) {
        Some((p @ ("B-" | "I-"), rest)) if !rest.is_empty() => (1, rest, p),
        _ => (2, l, ""),
    }
}

impl Vocabulary {
    fn from_parts(words: Vec<String>, counts: Vec<usize>, chars: Vec<char>, labels: Vec<String>) -> Self {
        let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let char_index = chars.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
        let label_index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Vocabulary {
            words,
            counts,
            word_index,
            chars,
            char_index,
            labels,
            label_index,
        }
    }

    /// Number of word ids including the OOV id.
    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// Number of character ids including the unseen-character id.
    pub fn char_count(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn oov_id(&self) -> usize {
        0
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts[id]
    }

    /// Lowercases before lookup.
    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.word_index.contains_key(&word.to_lowercase())
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(OOV_CHAR)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    pub fn token(&self, surface: &str) -> Token {
        let lower = surface.to_lowercase();
        let mut char_ids: Vec<usize> = lower.chars().map(|c| self.char_id(c)).collect();
        if char_ids.is_empty() {
            char_ids.push(OOV_CHAR);
        }
        Token {
            surface: surface.to_string(),
            word_id: self.word_index.get(&lower).copied().unwrap_or(0),
            lower,
            char_ids,
        }
    }

    pub fn index_sentence<S: AsRef<str>>(&self, words: &[S]) -> Vec<Token> {
        words.iter().map(|w| self.token(w.as_ref())).collect()
    }

    /// Label ids for a tag sequence; `None` if any tag is unknown.
    pub fn label_ids<S: AsRef<str>>(&self, tags: &[S]) -> Option<Vec<usize>> {
        tags.iter().map(|t| self.label_id(t.as_ref())).collect()
    }

    /// Append words and characters from `other` that are missing here.
    /// Existing ids are unchanged. Returns the number of new words.
    pub fn extend_with(&mut self, other: &Vocabulary) -> usize {
        let mut added = 0;
        for (w, &c) in other.words.iter().zip(&other.counts).skip(1) {
            if !self.word_index.contains_key(w) {
                self.word_index.insert(w.clone(), self.words.len());
                self.words.push(w.clone());
                self.counts.push(c);
                added += 1;
            }
        }
        for &ch in &other.chars {
            if !self.char_index.contains_key(&ch) {
                self.chars.push(ch);
                self.char_index.insert(ch, self.chars.len());
            }
        }
        added
    }

    /// Same words and characters, different label set.
    pub fn with_labels(&self, labels: &[String]) -> Vocabulary {
        Vocabulary::from_parts(
            self.words.clone(),
            self.counts.clone(),
            self.chars.clone(),
            labels.to_vec(),
        )
    }

    /// Hex SHA-256 over the canonical serialized form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocabulary serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn lowercases_word_types() {
        let mut b = VocabBuilder::new();
        b.add_words(&words("Halo halo HALO"));
        let v = b.build(1);
        assert_eq!(v.word_count(), 2);
        let id = v.word_id("halo");
        assert_eq!(v.word(id), "halo");
        assert_eq!(v.count(id), 3);
        assert_eq!(v.word_id("HaLo"), id);
    }

    #[test]
    fn min_count_maps_rare_words_to_oov() {
        let mut b = VocabBuilder::new();
        b.add_words(&words("a a b"));
        let v = b.build(2);
        assert_eq!(v.word_id("b"), v.oov_id());
        assert_ne!(v.word_id("a"), v.oov_id());
    }

    #[test]
    fn no_boundary_markers() {
        let mut b = VocabBuilder::new();
        b.add_words(&words("saya mau pesan"));
        let v = b.build(1);
        for marker in ["<s>", "</s>", "<bos>", "<eos>", "<S>", "</S>"] {
            assert!(!v.contains_word(marker));
        }
        assert_eq!(v.words()[0], OOV_WORD);
    }

    #[test]
    fn ids_are_dense_bijection() {
        let mut b = VocabBuilder::new();
        b.add_words(&words("x y z x"));
        b.add_tags(&["I-PER", "O", "B-PER", "B-LOC"]);
        let v = b.build(1);
        for (i, w) in v.words().iter().enumerate() {
            assert_eq!(v.word_id(w), i);
        }
        assert_eq!(v.labels(), ["O", "B-LOC", "B-PER", "I-PER"]);
        for (i, l) in v.labels().iter().enumerate() {
            assert_eq!(v.label_id(l), Some(i));
        }
        for (i, &c) in v.chars.iter().enumerate() {
            assert_eq!(v.char_id(c), i + 1);
        }
    }

    #[test]
    fn extension_keeps_existing_ids() {
        let mut b = VocabBuilder::new();
        b.add_words(&words("a b"));
        let mut v = b.build(1);
        let before: Vec<_> = v.words().to_vec();
        let mut b2 = VocabBuilder::new();
        b2.add_words(&words("b c é"));
        let added = v.extend_with(&b2.build(1));
        assert_eq!(added, 2);
        assert_eq!(&v.words()[..before.len()], &before[..]);
        assert_eq!(v.word_id("c"), before.len());
        assert_ne!(v.char_id('é'), OOV_CHAR);
    }

    #[test]
    fn serde_round_trip() {
        let mut b = VocabBuilder::new();
        b.add_words(&words("Budi makan nasi"));
        b.add_tags(&["B-PERSON", "O"]);
        let v = b.build(1);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.fingerprint(), back.fingerprint());
    }
}
