//! Diagnostic classifiers over frozen representations.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_cross_entropy, Graph, Gradients, Linear, ParameterSet};
use crate::bilm::BiLmModel;
use crate::corpus::LabeledCorpus;
use crate::error::{Error, Result};
use crate::parallel::Parallelism;
use crate::tagger::TaggerModel;
use crate::train::{fit, Objective, TrainSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentationSource {
    PretrainedLm,
    FinetunedLm,
    TaggerBilstm,
}

impl fmt::Display for RepresentationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RepresentationSource::PretrainedLm => "pretrained-lm",
            RepresentationSource::FinetunedLm => "finetuned-lm",
            RepresentationSource::TaggerBilstm => "tagger-bilstm",
        })
    }
}

impl std::str::FromStr for RepresentationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained-lm" => Ok(RepresentationSource::PretrainedLm),
            "finetuned-lm" => Ok(RepresentationSource::FinetunedLm),
            "tagger-bilstm" => Ok(RepresentationSource::TaggerBilstm),
            other => Err(Error::config(format!("unknown representation source {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum FrozenModel<'a> {
    Lm(&'a BiLmModel),
    Tagger(&'a TaggerModel),
}

/// Per-token vectors for every sentence. Models are only read.
pub fn extract_frozen_reps<S: AsRef<str> + Sync>(
    model: FrozenModel,
    sentences: &[Vec<S>],
    source: RepresentationSource,
    parallelism: Parallelism,
) -> Result<Vec<Vec<Vec<f64>>>> {
    use RepresentationSource::*;
    match (model, source) {
        (FrozenModel::Lm(m), PretrainedLm | FinetunedLm) => {
            let finetuned = !m.manifest.lineage.is_empty();
            if finetuned != (source == FinetunedLm) {
                return Err(Error::config(format!("{} cannot serve as a {source} source", m.name())));
            }
            parallelism.map(sentences, |s| m.elmo(s)).into_iter().collect()
        }
        (FrozenModel::Tagger(t), TaggerBilstm) => parallelism.map(sentences, |s| t.bilstm_outputs(s)).into_iter().collect(),
        (FrozenModel::Lm(m), _) => Err(Error::config(format!("{} is a language model, not a {source} source", m.name()))),
        (FrozenModel::Tagger(t), _) => Err(Error::config(format!("{} is a tagger, not a {source} source", t.name()))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub source: String,
    pub dev_accuracy: f64,
    pub train_accuracy: f64,
    pub epochs: usize,
    pub tokens: usize,
}

impl fmt::Display for ProbeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "source\t{}", self.source)?;
        writeln!(f, "dev_accuracy\t{:.4}", self.dev_accuracy)?;
        writeln!(f, "train_accuracy\t{:.4}", self.train_accuracy)?;
        writeln!(f, "epochs\t{}", self.epochs)?;
        writeln!(f, "tokens\t{}", self.tokens)
    }
}

/// Probe defaults: Adam at 0.001, patience 25 on dev accuracy, no L2.
pub fn probe_settings(seed: u64) -> TrainSettings {
    TrainSettings {
        l2: 0.0,
        seed,
        ..TrainSettings::default()
    }
}

struct ProbeObjective {
    layer: Linear,
}

impl Objective for ProbeObjective {
    type Example = (Vec<f64>, usize);

    fn example_loss(
        &self,
        params: &ParameterSet,
        ex: &(Vec<f64>, usize),
        _rng: Option<&mut ChaCha8Rng>,
        grads: &mut Gradients,
    ) -> Result<(f64, f64)> {
        let mut g = Graph::new(params);
        let x = g.constant(ex.0.clone());
        let logits = self.layer.forward(&mut g, x)?;
        let loss = softmax_cross_entropy(&mut g, logits, ex.1)?;
        g.backward(loss, grads);
        Ok((g.scalar(loss), 1.0))
    }

    fn example_len(&self, _: &(Vec<f64>, usize)) -> usize {
        1
    }
}

fn predict_class(params: &ParameterSet, layer: &Linear, x: &[f64]) -> usize {
    let w = params.get(layer.weight);
    let b = params.value(layer.bias);
    let mut best = (0, f64::NEG_INFINITY);
    for (c, &bias) in b.iter().enumerate() {
        let s = bias + w.row(c).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

fn accuracy(params: &ParameterSet, layer: &Linear, data: &[(Vec<f64>, usize)]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data.iter().filter(|(x, y)| predict_class(params, layer, x) == *y).count();
    hits as f64 / data.len() as f64
}

/// Train a single affine + softmax layer on fixed token vectors.
pub fn train_probe(
    train_reps: &[Vec<f64>],
    train_tags: &[String],
    dev_reps: &[Vec<f64>],
    dev_tags: &[String],
    settings: &TrainSettings,
    parallelism: Parallelism,
) -> Result<ProbeReport> {
    if train_reps.len() != train_tags.len() || dev_reps.len() != dev_tags.len() {
        return Err(Error::input("probe needs exactly one tag per representation"));
    }
    let dim = train_reps
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::input("probe training set is empty"))?;
    if let Some(bad) = train_reps.iter().chain(dev_reps).find(|r| r.len() != dim) {
        return Err(Error::input(format!("representation of width {} where {dim} expected", bad.len())));
    }
    let labels: Vec<&String> = {
        let mut l: Vec<&String> = train_tags.iter().chain(dev_tags).collect();
        l.sort();
        l.dedup();
        l
    };
    let index: BTreeMap<&String, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let pack = |reps: &[Vec<f64>], tags: &[String]| -> Vec<(Vec<f64>, usize)> {
        reps.iter().cloned().zip(tags.iter().map(|t| index[t])).collect()
    };
    let train = pack(train_reps, train_tags);
    let dev = pack(dev_reps, dev_tags);

    let mut params = ParameterSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let layer = Linear::build(&mut params, "probe", dim, labels.len(), &mut rng)?;
    let objective = ProbeObjective { layer };
    let outcome = fit(&objective, params, &train, settings, parallelism, |p| Ok(accuracy(p, &layer, &dev)))?;
    Ok(ProbeReport {
        source: String::new(),
        dev_accuracy: outcome.best_metric,
        train_accuracy: accuracy(&outcome.params, &layer, &train),
        epochs: outcome.history.len(),
        tokens: train.len(),
    })
}

/// Extract representations for two tagged corpora and train a probe.
pub fn probe_corpus(
    model: FrozenModel,
    source: RepresentationSource,
    train: &LabeledCorpus,
    dev: &LabeledCorpus,
    settings: &TrainSettings,
    parallelism: Parallelism,
) -> Result<ProbeReport> {
    let flatten = |c: &LabeledCorpus| -> Result<(Vec<Vec<f64>>, Vec<String>)> {
        let words: Vec<Vec<String>> = c.sentences.iter().map(|s| s.words.clone()).collect();
        let reps = extract_frozen_reps(model, &words, source, parallelism)?;
        Ok((reps.into_iter().flatten().collect(), c.tags().into_iter().flatten().collect()))
    };
    let (tr, tt) = flatten(train)?;
    let (dr, dt) = flatten(dev)?;
    let mut report = train_probe(&tr, &tt, &dr, &dt, settings, parallelism)?;
    report.source = source.to_string();
    Ok(report)
}

/// Per-word majority tag with a global fallback.
#[derive(Clone, Debug, PartialEq)]
pub struct MostFrequentTag {
    by_word: BTreeMap<String, String>,
    fallback: String,
}

fn majority(counts: &BTreeMap<&str, usize>) -> String {
    // BTreeMap order gives the lexicographically smallest tag among ties
    let mut best: Option<(&str, usize)> = None;
    for (&tag, &n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((tag, n));
        }
    }
    best.map(|(t, _)| t.to_string()).unwrap_or_default()
}

impl MostFrequentTag {
    pub fn fit(train: &LabeledCorpus) -> Self {
        let mut per_word: BTreeMap<String, BTreeMap<&str, usize>> = BTreeMap::new();
        let mut global: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &train.sentences {
            for (w, t) in s.words.iter().zip(&s.tags) {
                *per_word.entry(w.to_lowercase()).or_default().entry(t).or_default() += 1;
                *global.entry(t).or_default() += 1;
            }
        }
        MostFrequentTag {
            by_word: per_word.iter().map(|(w, c)| (w.clone(), majority(c))).collect(),
            fallback: majority(&global),
        }
    }

    pub fn predict(&self, word: &str) -> &str {
        self.by_word.get(&word.to_lowercase()).unwrap_or(&self.fallback)
    }
}

/// Token accuracy of the most-frequent-tag baseline.
pub fn most_frequent_tag(train: &LabeledCorpus, eval: &LabeledCorpus) -> f64 {
    let model = MostFrequentTag::fit(train);
    let (mut hits, mut total) = (0usize, 0usize);
    for s in &eval.sentences {
        for (w, t) in s.words.iter().zip(&s.tags) {
            total += 1;
            hits += usize::from(model.predict(w) == t);
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
