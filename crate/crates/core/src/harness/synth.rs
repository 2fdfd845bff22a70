//! Synthetic two-domain benchmark.
//!
//! Three domains share one set of entity gazetteers: a generic domain that
//! only provides unlabeled text, a source domain annotated with 13 entity
//! types and a noisier target domain annotated with 6. The domains differ in
//! their filler and cue vocabularies; `overlap` sets the fraction shared by
//! all three and `conversational_overlap` the fraction shared by source and
//! target.
//! Entity names are built from the same syllables as ordinary words, so
//! spelling alone does not reveal them. Every token also carries a coarse
//! part-of-speech tag for the probing task, and a few words are noun or verb
//! depending on the preceding word.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    bio_from_spans, write_conll, write_plaintext, Corpus, LabeledCorpus, LabeledSentence, Span, Split,
    UnlabeledCorpus,
};
use crate::error::{Error, Result};

pub const SOURCE_TYPES: [&str; 13] = [
    "AREA",
    "CURRENCY",
    "DATETIME",
    "DURATION",
    "EMAIL",
    "LENGTH",
    "LOCATION",
    "NUMBER",
    "PERSON",
    "PHONE",
    "TEMPERATURE",
    "VOLUME",
    "WEIGHT",
];
pub const TARGET_TYPES: [&str; 6] = ["DATETIME", "EMAIL", "GENDER", "LOCATION", "PERSON", "PHONE"];

pub const GENERIC: &str = "generic";
pub const SOURCE: &str = "source";
pub const TARGET: &str = "target";
const DOMAINS: [&str; 3] = [GENERIC, SOURCE, TARGET];

/// File names inside a benchmark directory.
pub mod files {
    pub const GENERIC: &str = "generic.txt";
    pub const GENERIC_DEV: &str = "generic_dev.txt";
    pub const SOURCE_UNLABELED: &str = "source_unlabeled.txt";
    pub const SOURCE_UNLABELED_DEV: &str = "source_unlabeled_dev.txt";
    pub const SOURCE_TRAIN: &str = "source_train.conll";
    pub const SOURCE_DEV: &str = "source_dev.conll";
    pub const SOURCE_TEST: &str = "source_test.conll";
    pub const TARGET_TRAIN: &str = "target_train.conll";
    pub const TARGET_DEV: &str = "target_dev.conll";
    pub const TARGET_TEST: &str = "target_test.conll";
    pub const PROBE_TRAIN: &str = "probe_train.conll";
    pub const PROBE_DEV: &str = "probe_dev.conll";
}

const GAZETTEER_SEED: u64 = 0x6761_7a65;
const SYLLABLES: [&str; 30] = [
    "ka", "ri", "mo", "tu", "se", "na", "lo", "pe", "di", "ga", "bu", "fi", "ja", "ne", "ho", "wa", "si", "to", "ma", "le",
    "ru", "de", "po", "ya", "ki", "ba", "nu", "re", "go", "la",
];
const POS_CLASSES: [&str; 7] = ["PRON", "VERB", "DET", "NOUN", "ADJ", "ADV", "PART"];
const CLOSED_CLASS_SIZE: usize = 4;
const AMBIGUOUS_WORDS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSizes {
    pub generic: usize,
    pub generic_dev: usize,
    pub source_train: usize,
    pub source_dev: usize,
    pub source_test: usize,
    /// Unlabeled source sentences beyond the labeled ones.
    pub source_extra: usize,
    pub source_unlabeled_dev: usize,
    pub target_train: usize,
    pub target_dev: usize,
    pub target_test: usize,
    pub probe_train: usize,
    pub probe_dev: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        CorpusSizes {
            generic: 1500,
            generic_dev: 150,
            source_train: 400,
            source_dev: 100,
            source_test: 100,
            source_extra: 600,
            source_unlabeled_dev: 100,
            target_train: 1000,
            target_dev: 100,
            target_test: 200,
            probe_train: 300,
            probe_dev: 150,
        }
    }
}

impl CorpusSizes {
    fn all(&self) -> [(&'static str, usize); 12] {
        [
            ("generic", self.generic),
            ("generic_dev", self.generic_dev),
            ("source_train", self.source_train),
            ("source_dev", self.source_dev),
            ("source_test", self.source_test),
            ("source_extra", self.source_extra),
            ("source_unlabeled_dev", self.source_unlabeled_dev),
            ("target_train", self.target_train),
            ("target_dev", self.target_dev),
            ("target_test", self.target_test),
            ("probe_train", self.probe_train),
            ("probe_dev", self.probe_dev),
        ]
    }
}

/// Benchmark description. Templates are strings of slot letters:
/// `E` cue word plus entity, `V` pronoun plus verb, `N` noun phrase,
/// `A` adverb, `P` particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Entity names per type; multiword names are space separated.
    pub gazetteers: BTreeMap<String, Vec<String>>,
    pub source_types: Vec<String>,
    pub target_types: Vec<String>,
    /// Relative mention frequency per type; missing types weigh 1.
    pub type_weights: BTreeMap<String, f64>,
    /// Templates per domain (`generic`, `source`, `target`).
    pub templates: BTreeMap<String, Vec<String>>,
    /// Fraction of the open-class and cue vocabulary shared by all domains.
    pub overlap: f64,
    /// Fraction shared by the source and target domains (at least `overlap`).
    pub conversational_overlap: f64,
    /// Per-token typo probability in the target domain.
    pub noise_rate: f64,
    /// Open-class words per part of speech and domain.
    pub filler_words: usize,
    /// Type-specific cue words per type and domain.
    pub cue_words: usize,
    /// Probability that a mention uses a type-neutral cue.
    pub neutral_cue_rate: f64,
    /// Probability that a mention is followed by a type-specific word.
    pub right_cue_rate: f64,
    pub sizes: CorpusSizes,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let types: BTreeSet<&str> = SOURCE_TYPES.iter().chain(&TARGET_TYPES).copied().collect();
        let weights = [("PERSON", 4.0), ("LOCATION", 4.0), ("DATETIME", 2.0), ("NUMBER", 2.0), ("CURRENCY", 2.0)];
        let templates = [
            (GENERIC, vec!["N V E N", "E V N A", "V N E", "N A V E", "V E N A", "A N V E E"]),
            (SOURCE, vec!["V E", "V N E P", "P V N E", "V E N", "E V N", "V N E E"]),
            (TARGET, vec!["P V E A", "N V E P", "V A E", "P E V N", "A V N E P", "V E"]),
        ];
        SyntheticSpec {
            gazetteers: default_gazetteers(&types, 40),
            source_types: SOURCE_TYPES.iter().map(|s| s.to_string()).collect(),
            target_types: TARGET_TYPES.iter().map(|s| s.to_string()).collect(),
            type_weights: weights.iter().map(|(t, w)| (t.to_string(), *w)).collect(),
            templates: templates
                .iter()
                .map(|(d, ts)| (d.to_string(), ts.iter().map(|t| t.to_string()).collect()))
                .collect(),
            overlap: 0.5,
            conversational_overlap: 0.75,
            noise_rate: 0.05,
            filler_words: 16,
            cue_words: 4,
            neutral_cue_rate: 0.4,
            right_cue_rate: 0.5,
            sizes: CorpusSizes::default(),
        }
    }
}

impl SyntheticSpec {
    /// A reduced lexicon whose source domain stays under 200 word types.
    pub fn small() -> Self {
        let base = SyntheticSpec::default();
        let types: BTreeSet<&str> = base.gazetteers.keys().map(String::as_str).collect();
        SyntheticSpec {
            gazetteers: default_gazetteers(&types, 5),
            filler_words: 6,
            cue_words: 2,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in self.sizes.all() {
            if n == 0 {
                return Err(Error::config(format!("synthetic corpus size {name} must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.overlap) || !(0.0..=1.0).contains(&self.conversational_overlap) {
            return Err(Error::config("overlap ratios must lie in [0, 1]"));
        }
        let rates = [self.neutral_cue_rate, self.right_cue_rate];
        if !(0.0..1.0).contains(&self.noise_rate) || rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("noise and cue rates must be probabilities"));
        }
        if self.filler_words == 0 || self.cue_words == 0 {
            return Err(Error::config("filler_words and cue_words must be positive"));
        }
        if self.source_types.is_empty() || self.target_types.is_empty() {
            return Err(Error::config("source and target need at least one entity type"));
        }
        for t in self.source_types.iter().chain(&self.target_types) {
            let entries = self.gazetteers.get(t).map_or(0, |g| g.iter().filter(|e| !e.trim().is_empty()).count());
            if entries == 0 {
                return Err(Error::config(format!("empty gazetteer for entity type {t}")));
            }
        }
        for d in [GENERIC, SOURCE, TARGET] {
            let ts = self.templates.get(d).filter(|ts| !ts.is_empty());
            let ts = ts.ok_or_else(|| Error::config(format!("no templates for domain {d}")))?;
            for t in ts {
                if t.split_whitespace().any(|s| !matches!(s, "E" | "V" | "N" | "A" | "P")) || t.trim().is_empty() {
                    return Err(Error::config(format!("bad template {t:?} for domain {d}")));
                }
            }
        }
        Ok(())
    }

    fn domain_types(&self, domain: &str) -> Vec<String> {
        match domain {
            SOURCE => self.source_types.clone(),
            TARGET => self.target_types.clone(),
            _ => {
                let all: BTreeSet<&String> = self.source_types.iter().chain(&self.target_types).collect();
                all.into_iter().cloned().collect()
            }
        }
    }
}

/// Build `size` names per type from syllables, digits and unit words.
pub fn default_gazetteers(types: &BTreeSet<&str>, size: usize) -> BTreeMap<String, Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(GAZETTEER_SEED);
    let mut words = WordMaker::default();
    let mut g = BTreeMap::new();
    let pool = |rng: &mut ChaCha8Rng, words: &mut WordMaker, n: usize| -> Vec<String> {
        (0..n).map(|_| words.fresh(rng, 2, 3)).collect()
    };
    let number = |rng: &mut ChaCha8Rng| rng.random_range(1..1000u32).to_string();
    let first = pool(&mut rng, &mut words, size.max(2));
    let last = pool(&mut rng, &mut words, (size / 2).max(2));
    let places = pool(&mut rng, &mut words, size.max(2));
    let months = pool(&mut rng, &mut words, 12);
    let days = pool(&mut rng, &mut words, 7);
    let domains = pool(&mut rng, &mut words, 4);
    let genders = pool(&mut rng, &mut words, 6);
    for &t in types {
        let mut entries = BTreeSet::new();
        let mut attempts = 0;
        while entries.len() < size && attempts < size * 50 {
            attempts += 1;
            let e = match t {
                "PERSON" => {
                    let f = first.choose(&mut rng).unwrap().clone();
                    if rng.random_bool(0.5) {
                        format!("{f} {}", last.choose(&mut rng).unwrap())
                    } else {
                        f
                    }
                }
                "LOCATION" => places.choose(&mut rng).unwrap().clone(),
                "DATETIME" => {
                    if rng.random_bool(0.4) {
                        days.choose(&mut rng).unwrap().clone()
                    } else {
                        format!("{} {}", rng.random_range(1..29), months.choose(&mut rng).unwrap())
                    }
                }
                "EMAIL" => format!(
                    "{}@{}.com",
                    first.choose(&mut rng).unwrap(),
                    domains.choose(&mut rng).unwrap()
                ),
                "PHONE" => {
                    let digits: String = (0..rng.random_range(8..11)).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect();
                    format!("08{digits}")
                }
                "NUMBER" => number(&mut rng),
                "GENDER" => genders.choose(&mut rng).unwrap().clone(),
                _ => {
                    let units = unit_words(t);
                    format!("{} {}", number(&mut rng), units[rng.random_range(0..units.len())])
                }
            };
            entries.insert(e);
        }
        g.insert(t.to_string(), entries.into_iter().collect());
    }
    g
}

fn unit_words(t: &str) -> Vec<String> {
    let stems: &[&str] = match t {
        "CURRENCY" => &["ribu", "juta", "rupiah"],
        "AREA" => &["hektar", "meterpersegi"],
        "DURATION" => &["jam", "menit", "hari"],
        "LENGTH" => &["meter", "senti", "kilo"],
        "TEMPERATURE" => &["derajat", "celcius"],
        "VOLUME" => &["liter", "galon"],
        "WEIGHT" => &["gram", "kilogram", "ton"],
        _ => &["unit"],
    };
    stems.iter().map(|s| s.to_string()).collect()
}

/// Unique syllable words.
#[derive(Default)]
struct WordMaker {
    used: BTreeSet<String>,
}

impl WordMaker {
    /// Generic, source and target lists of `n` words: a part shared by all
    /// domains, a further part shared by source and target, the rest own.
    fn domain_lists<R: Rng>(&mut self, rng: &mut R, spec: &SyntheticSpec, n: usize) -> [Vec<String>; 3] {
        let all = ((n as f64) * spec.overlap).round() as usize;
        let conv = (((n as f64) * spec.conversational_overlap).round() as usize).max(all);
        let shared: Vec<String> = (0..all).map(|_| self.fresh(rng, 1, 2)).collect();
        let mut generic = shared.clone();
        generic.extend((all..n).map(|_| self.fresh(rng, 2, 3)));
        let mut source = shared;
        source.extend((all..conv).map(|_| self.fresh(rng, 2, 3)));
        let mut target = source.clone();
        source.extend((conv..n).map(|_| self.fresh(rng, 2, 3)));
        target.extend((conv..n).map(|_| self.fresh(rng, 2, 3)));
        [generic, source, target]
    }

    fn fresh<R: Rng>(&mut self, rng: &mut R, min: usize, max: usize) -> String {
        loop {
            let n = rng.random_range(min..=max);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

/// Open-class words, cue words and ambiguous noun/verb words per domain.
struct Lexicon {
    pos: BTreeMap<(String, String), Vec<String>>,
    cues: BTreeMap<(String, String), Vec<String>>,
    right_cues: BTreeMap<(String, String), Vec<String>>,
    neutral_cues: Vec<String>,
    ambiguous: Vec<String>,
}

impl Lexicon {
    fn build(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut words = WordMaker::default();
        for entry in spec.gazetteers.values().flatten() {
            for w in entry.split_whitespace() {
                words.used.insert(w.to_lowercase());
            }
        }
        let mut pos = BTreeMap::new();
        for class in POS_CLASSES {
            let closed = matches!(class, "PRON" | "DET");
            let lists = if closed {
                let shared: Vec<String> = (0..CLOSED_CLASS_SIZE).map(|_| words.fresh(rng, 1, 2)).collect();
                [shared.clone(), shared.clone(), shared]
            } else {
                words.domain_lists(rng, spec, spec.filler_words)
            };
            for (d, list) in DOMAINS.iter().zip(lists) {
                pos.insert((d.to_string(), class.to_string()), list);
            }
        }
        let ambiguous: Vec<String> = (0..AMBIGUOUS_WORDS).map(|_| words.fresh(rng, 2, 2)).collect();
        let all_types: BTreeSet<&String> = spec.gazetteers.keys().collect();
        let mut cues = BTreeMap::new();
        let mut right_cues = BTreeMap::new();
        for t in all_types {
            for table in [&mut cues, &mut right_cues] {
                let lists = words.domain_lists(rng, spec, spec.cue_words);
                for (d, list) in DOMAINS.iter().zip(lists) {
                    table.insert((d.to_string(), t.clone()), list);
                }
            }
        }
        let neutral_cues = (0..3).map(|_| words.fresh(rng, 1, 2)).collect();
        Lexicon {
            pos,
            cues,
            right_cues,
            neutral_cues,
            ambiguous,
        }
    }

    fn word(&self, rng: &mut ChaCha8Rng, domain: &str, class: &str) -> String {
        let list = &self.pos[&(domain.to_string(), class.to_string())];
        if matches!(class, "NOUN" | "VERB") && rng.random_bool(0.25) {
            return self.ambiguous.choose(rng).unwrap().clone();
        }
        list.choose(rng).unwrap().clone()
    }
}

/// One generated sentence with entity and part-of-speech annotation.
#[derive(Clone, Debug, PartialEq)]
struct Annotated {
    words: Vec<String>,
    entity_tags: Vec<String>,
    pos_tags: Vec<String>,
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    lexicon: Lexicon,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn sentence(&mut self, domain: &str) -> Annotated {
        let spec = self.spec;
        let types = spec.domain_types(domain);
        let weights: Vec<f64> = types.iter().map(|t| *spec.type_weights.get(t).unwrap_or(&1.0)).collect();
        let total: f64 = weights.iter().sum();
        let template = spec.templates[domain].choose(&mut self.rng).unwrap().clone();
        let mut words: Vec<String> = Vec::new();
        let mut pos: Vec<String> = Vec::new();
        let mut spans = Vec::new();
        let push = |words: &mut Vec<String>, pos: &mut Vec<String>, w: String, p: &str| {
            words.push(w);
            pos.push(p.to_string());
        };
        for slot in template.split_whitespace() {
            match slot {
                "V" => {
                    let w = self.lexicon.word(&mut self.rng, domain, "PRON");
                    push(&mut words, &mut pos, w, "PRON");
                    let w = self.lexicon.word(&mut self.rng, domain, "VERB");
                    push(&mut words, &mut pos, w, "VERB");
                }
                "N" => {
                    let w = self.lexicon.word(&mut self.rng, domain, "DET");
                    push(&mut words, &mut pos, w, "DET");
                    if self.rng.random_bool(0.4) {
                        let w = self.lexicon.word(&mut self.rng, domain, "ADJ");
                        push(&mut words, &mut pos, w, "ADJ");
                    }
                    let w = self.lexicon.word(&mut self.rng, domain, "NOUN");
                    push(&mut words, &mut pos, w, "NOUN");
                }
                "A" => {
                    let w = self.lexicon.word(&mut self.rng, domain, "ADV");
                    push(&mut words, &mut pos, w, "ADV");
                }
                "P" => {
                    let w = self.lexicon.word(&mut self.rng, domain, "PART");
                    push(&mut words, &mut pos, w, "PART");
                }
                _ => {
                    let mut pick = self.rng.random::<f64>() * total;
                    let mut ty = &types[types.len() - 1];
                    for (t, w) in types.iter().zip(&weights) {
                        if pick < *w {
                            ty = t;
                            break;
                        }
                        pick -= w;
                    }
                    let cue = if self.rng.random_bool(spec.neutral_cue_rate) {
                        self.lexicon.neutral_cues.choose(&mut self.rng).unwrap().clone()
                    } else {
                        self.lexicon.cues[&(domain.to_string(), ty.clone())]
                            .choose(&mut self.rng)
                            .unwrap()
                            .clone()
                    };
                    push(&mut words, &mut pos, cue, "ADP");
                    let name = spec.gazetteers[ty].choose(&mut self.rng).unwrap();
                    let start = words.len();
                    for w in name.split_whitespace() {
                        let p = if w.bytes().all(|b| b.is_ascii_digit()) { "NUM" } else { "NNP" };
                        push(&mut words, &mut pos, w.to_lowercase(), p);
                    }
                    spans.push(Span::new(ty.clone(), start, words.len() - 1));
                    if self.rng.random_bool(spec.right_cue_rate) {
                        let key = (domain.to_string(), ty.clone());
                        let w = self.lexicon.right_cues[&key].choose(&mut self.rng).unwrap().clone();
                        push(&mut words, &mut pos, w, "ADP");
                    }
                }
            }
        }
        if domain == TARGET && spec.noise_rate > 0.0 {
            for w in &mut words {
                if self.rng.random_bool(spec.noise_rate) {
                    *w = typo(&mut self.rng, w);
                }
            }
        }
        let entity_tags = bio_from_spans(&spans, words.len()).expect("spans are disjoint and in range");
        Annotated {
            words,
            entity_tags,
            pos_tags: pos,
        }
    }

    fn many(&mut self, domain: &str, n: usize) -> Vec<Annotated> {
        (0..n).map(|_| self.sentence(domain)).collect()
    }
}

fn typo<R: Rng>(rng: &mut R, word: &str) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let i = rng.random_range(0..chars.len());
    if rng.random_bool(0.5) {
        chars[i] = char::from(b'a' + rng.random_range(0..26u8));
    } else {
        let c = chars[i];
        chars.insert(i, c);
    }
    chars.into_iter().collect()
}

/// All corpora of one benchmark instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub generic: UnlabeledCorpus,
    pub generic_dev: UnlabeledCorpus,
    /// Every labeled source sentence plus extra unlabeled ones.
    pub source_unlabeled: UnlabeledCorpus,
    pub source_unlabeled_dev: UnlabeledCorpus,
    pub source_train: LabeledCorpus,
    pub source_dev: LabeledCorpus,
    pub source_test: LabeledCorpus,
    pub target_train: LabeledCorpus,
    pub target_dev: LabeledCorpus,
    pub target_test: LabeledCorpus,
    /// Source-domain sentences tagged with parts of speech.
    pub probe_train: LabeledCorpus,
    pub probe_dev: LabeledCorpus,
}

impl SyntheticData {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_plaintext(&dir.join(files::GENERIC), &self.generic)?;
        write_plaintext(&dir.join(files::GENERIC_DEV), &self.generic_dev)?;
        write_plaintext(&dir.join(files::SOURCE_UNLABELED), &self.source_unlabeled)?;
        write_plaintext(&dir.join(files::SOURCE_UNLABELED_DEV), &self.source_unlabeled_dev)?;
        write_conll(&dir.join(files::SOURCE_TRAIN), &self.source_train)?;
        write_conll(&dir.join(files::SOURCE_DEV), &self.source_dev)?;
        write_conll(&dir.join(files::SOURCE_TEST), &self.source_test)?;
        write_conll(&dir.join(files::TARGET_TRAIN), &self.target_train)?;
        write_conll(&dir.join(files::TARGET_DEV), &self.target_dev)?;
        write_conll(&dir.join(files::TARGET_TEST), &self.target_test)?;
        write_conll(&dir.join(files::PROBE_TRAIN), &self.probe_train)?;
        write_conll(&dir.join(files::PROBE_DEV), &self.probe_dev)
    }
}

fn ner(sentences: &[Annotated], split: Split, domain: &str) -> LabeledCorpus {
    let s = sentences
        .iter()
        .map(|a| LabeledSentence::new(a.words.clone(), a.entity_tags.clone()))
        .collect();
    Corpus::new(s, split, domain)
}

fn pos(sentences: &[Annotated], split: Split, domain: &str) -> LabeledCorpus {
    let s = sentences
        .iter()
        .map(|a| LabeledSentence::new(a.words.clone(), a.pos_tags.clone()))
        .collect();
    Corpus::new(s, split, domain)
}

fn plain(sentences: &[Annotated], split: Split, domain: &str) -> UnlabeledCorpus {
    Corpus::new(sentences.iter().map(|a| a.words.clone()).collect(), split, domain)
}

/// Generate every corpus of the benchmark; deterministic per `(spec, seed)`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon = Lexicon::build(spec, &mut rng);
    let mut g = Generator { spec, lexicon, rng };
    let z = &spec.sizes;
    let generic = g.many(GENERIC, z.generic);
    let generic_dev = g.many(GENERIC, z.generic_dev);
    let source_train = g.many(SOURCE, z.source_train);
    let source_dev = g.many(SOURCE, z.source_dev);
    let source_test = g.many(SOURCE, z.source_test);
    let source_extra = g.many(SOURCE, z.source_extra);
    let source_unlabeled_dev = g.many(SOURCE, z.source_unlabeled_dev);
    let target_train = g.many(TARGET, z.target_train);
    let target_dev = g.many(TARGET, z.target_dev);
    let target_test = g.many(TARGET, z.target_test);
    let probe_train = g.many(SOURCE, z.probe_train);
    let probe_dev = g.many(SOURCE, z.probe_dev);

    let mut unlabeled: Vec<Annotated> = source_train
        .iter()
        .chain(&source_dev)
        .chain(&source_test)
        .chain(&source_extra)
        .cloned()
        .collect();
    let order = rand::seq::index::sample(&mut g.rng, unlabeled.len(), unlabeled.len()).into_vec();
    unlabeled = order.into_iter().map(|i| unlabeled[i].clone()).collect();

    Ok(SyntheticData {
        generic: plain(&generic, Split::Train, GENERIC),
        generic_dev: plain(&generic_dev, Split::Dev, GENERIC),
        source_unlabeled: plain(&unlabeled, Split::Train, SOURCE),
        source_unlabeled_dev: plain(&source_unlabeled_dev, Split::Dev, SOURCE),
        source_train: ner(&source_train, Split::Train, SOURCE),
        source_dev: ner(&source_dev, Split::Dev, SOURCE),
        source_test: ner(&source_test, Split::Test, SOURCE),
        target_train: ner(&target_train, Split::Train, TARGET),
        target_dev: ner(&target_dev, Split::Dev, TARGET),
        target_test: ner(&target_test, Split::Test, TARGET),
        probe_train: pos(&probe_train, Split::Train, SOURCE),
        probe_dev: pos(&probe_dev, Split::Dev, SOURCE),
    })
}

/// A single-domain labeled corpus of `n` source sentences.
pub fn source_corpus(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<LabeledCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon = Lexicon::build(spec, &mut rng);
    let mut g = Generator { spec, lexicon, rng };
    Ok(ner(&g.many(SOURCE, n), Split::Train, SOURCE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_word_vocab, read_conll, TagScheme};
    use std::collections::HashMap;

    fn tiny() -> SyntheticSpec {
        SyntheticSpec {
            sizes: CorpusSizes {
                generic: 40,
                generic_dev: 5,
                source_train: 20,
                source_dev: 5,
                source_test: 5,
                source_extra: 10,
                source_unlabeled_dev: 5,
                target_train: 30,
                target_dev: 5,
                target_test: 5,
                probe_train: 10,
                probe_dev: 5,
            },
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_synthetic(&tiny(), 9).unwrap().write(a.path()).unwrap();
        gen_synthetic(&tiny(), 9).unwrap().write(b.path()).unwrap();
        for name in [files::GENERIC, files::SOURCE_UNLABELED, files::TARGET_TEST, files::PROBE_DEV] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name}");
        }
        assert_ne!(gen_synthetic(&tiny(), 10).unwrap(), gen_synthetic(&tiny(), 9).unwrap());
    }

    #[test]
    fn written_tags_are_valid_bio() {
        let dir = tempfile::tempdir().unwrap();
        let data = gen_synthetic(&tiny(), 3).unwrap();
        data.write(dir.path()).unwrap();
        for name in [files::SOURCE_TRAIN, files::TARGET_TRAIN, files::TARGET_TEST] {
            let c = read_conll(&dir.path().join(name), TagScheme::Bio, Split::Train, "x").unwrap();
            assert!(!c.is_empty());
        }
        let labels = |c: &LabeledCorpus| -> BTreeSet<String> {
            c.tags().into_iter().flatten().filter_map(|t| t.get(2..).map(String::from)).collect()
        };
        let tt: BTreeSet<String> = TARGET_TYPES.iter().map(|s| s.to_string()).collect();
        assert!(labels(&data.target_train).is_subset(&tt));
        assert!(labels(&data.source_train).contains("PERSON"));
        assert!(!labels(&data.source_train).contains("GENDER"));
    }

    #[test]
    fn source_labeled_is_within_unlabeled_superset() {
        let data = gen_synthetic(&tiny(), 4).unwrap();
        let mut pool: HashMap<&Vec<String>, usize> = HashMap::new();
        for s in &data.source_unlabeled.sentences {
            *pool.entry(s).or_default() += 1;
        }
        for s in &data.source_train.sentences {
            let c = pool.get_mut(&s.words).expect("labeled sentence missing from unlabeled corpus");
            assert!(*c > 0);
            *c -= 1;
        }
        assert_eq!(data.source_unlabeled.len(), 40);
    }

    #[test]
    fn domains_share_entities_but_not_all_vocabulary() {
        let data = gen_synthetic(&SyntheticSpec::default(), 1).unwrap();
        let g = build_word_vocab(&[&data.generic], 1);
        let s = build_word_vocab(&[&data.source_unlabeled], 1);
        let known = s.words().iter().filter(|w| g.contains_word(w)).count();
        assert!(known > s.word_count() / 3 && known < s.word_count());
        assert_eq!(data.target_train.len(), 1000);
    }

    #[test]
    fn small_spec_has_under_200_word_types() {
        let c = source_corpus(&SyntheticSpec::small(), 500, 1).unwrap();
        let v = build_word_vocab(&[&c], 1);
        assert!(v.word_count() <= 200, "{}", v.word_count());
    }

    #[test]
    fn empty_gazetteer_is_rejected() {
        let mut spec = tiny();
        spec.gazetteers.insert("PERSON".into(), vec![]);
        assert!(matches!(gen_synthetic(&spec, 1), Err(Error::Config(_))));
        let mut spec = tiny();
        spec.sizes.target_train = 0;
        assert!(gen_synthetic(&spec, 1).is_err());
    }
}
