//! Corpora: reading, validation, vocabularies, subsampling and batching.

pub mod batch;
pub mod bio;
pub mod conll;
pub mod vocab;

pub use batch::{make_batches, subsample, Batch};
pub use bio::{bio_from_spans, is_valid_tag, spans_from_bio, Span};
pub use conll::{
    read_conll, read_conll_columns, read_plaintext, write_conll, write_conll_with_predictions,
    write_plaintext, TagScheme,
};
pub use vocab::{Token, VocabBuilder, Vocabulary, OOV_WORD};

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// A tokenized sentence with one tag per token.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

impl LabeledSentence {
    pub fn new(words: Vec<String>, tags: Vec<String>) -> Self {
        debug_assert_eq!(words.len(), tags.len());
        LabeledSentence { words, tags }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Anything that exposes a token sequence.
pub trait Words {
    fn words(&self) -> &[String];
}

impl Words for LabeledSentence {
    fn words(&self) -> &[String] {
        &self.words
    }
}

impl Words for Vec<String> {
    fn words(&self) -> &[String] {
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus<S> {
    pub sentences: Vec<S>,
    pub split: Split,
    pub domain: String,
}

pub type LabeledCorpus = Corpus<LabeledSentence>;
pub type UnlabeledCorpus = Corpus<Vec<String>>;

impl<S> Corpus<S> {
    pub fn new(sentences: Vec<S>, split: Split, domain: impl Into<String>) -> Self {
        Corpus {
            sentences,
            split,
            domain: domain.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

impl<S: Words> Corpus<S> {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.words().len()).sum()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.sentences.iter().map(|s| s.words().len()).collect()
    }
}

impl LabeledCorpus {
    /// Drop the tags.
    pub fn unlabeled(&self) -> UnlabeledCorpus {
        Corpus::new(
            self.sentences.iter().map(|s| s.words.clone()).collect(),
            self.split,
            self.domain.clone(),
        )
    }

    pub fn tags(&self) -> Vec<Vec<String>> {
        self.sentences.iter().map(|s| s.tags.clone()).collect()
    }
}

/// Vocabulary over words, characters and tags of the given corpora.
pub fn build_vocab(corpora: &[&LabeledCorpus], min_count: usize) -> Vocabulary {
    let mut b = VocabBuilder::new();
    for c in corpora {
        for s in &c.sentences {
            b.add_words(&s.words);
            b.add_tags(&s.tags);
        }
    }
    b.build(min_count)
}

/// Vocabulary over words and characters of unlabeled corpora.
pub fn build_word_vocab<S: Words>(corpora: &[&Corpus<S>], min_count: usize) -> Vocabulary {
    let mut b = VocabBuilder::new();
    for c in corpora {
        for s in &c.sentences {
            b.add_words(s.words());
        }
    }
    b.build(min_count)
}
