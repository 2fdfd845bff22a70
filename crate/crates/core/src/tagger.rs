//! CNN-BiLSTM-CRF sequence labeler with optional frozen biLM features.
//!
//! Token input is `word ⊕ char-CNN ⊕ ELMo`. ELMo vectors come from a
//! language model whose parameters live in the same [`ParameterSet`] under
//! `lm.*`, marked frozen; they are computed once per sentence and fed to
//! the network as constants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{dropout, Graph, Gradients, Linear, LstmCell, ParamId, ParameterSet, Tensor, Var};
use crate::bilm::{adopt_params, corpus_fingerprint, derived_name, elmo_topmost, BiLm, BiLmModel, LM_PREFIX};
use crate::corpus::{LabeledCorpus, Token, VocabBuilder, Vocabulary};
use crate::crf::{crf_nll_node, transition_side, viterbi};
use crate::encoder::{EncoderConfig, TokenEncoder};
use crate::error::{Error, Result};
use crate::eval::{span_f1, EvalReport};
use crate::harness::checkpoint::{config_hash, content_id, Checkpoint, Manifest, ModelKind};
use crate::multitask::LmHeads;
use crate::parallel::Parallelism;
use crate::train::{fit, EpochRecord, Objective, TrainSettings};

pub const TAGGER_PREFIX: &str = "tagger";
pub const CRF_PREFIX: &str = "crf";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_kernel: usize,
    pub highway_layers: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Dropout on the word/char input and on BiLSTM outputs.
    pub dropout: f64,
    /// Dropout on the ELMo input.
    pub elmo_dropout: f64,
    /// Weight of the auxiliary language-model loss; `None` means no LM heads.
    pub lm_gamma: Option<f64>,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            word_dim: 50,
            char_dim: 16,
            char_filters: 128,
            char_kernel: 3,
            highway_layers: 2,
            hidden: 200,
            layers: 2,
            dropout: 0.5,
            elmo_dropout: 0.5,
            lm_gamma: None,
        }
    }
}

impl TaggerConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            word_dim: self.word_dim,
            char_dim: self.char_dim,
            char_filters: self.char_filters,
            char_kernel: self.char_kernel,
            highway_layers: self.highway_layers,
            char_output: self.char_filters,
        }
    }

    /// Same network shape, ignoring dropout rates.
    pub fn same_architecture(&self, other: &TaggerConfig) -> bool {
        TaggerConfig {
            dropout: 0.0,
            elmo_dropout: 0.0,
            lm_gamma: self.lm_gamma.map(|_| 0.0),
            ..self.clone()
        } == TaggerConfig {
            dropout: 0.0,
            elmo_dropout: 0.0,
            lm_gamma: other.lm_gamma.map(|_| 0.0),
            ..other.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::config("tagger BiLSTM needs positive hidden size and layers"));
        }
        for (name, r) in [("dropout", self.dropout), ("elmo_dropout", self.elmo_dropout)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::config(format!("{name} {r} outside [0, 1)")));
            }
        }
        if let Some(gamma) = self.lm_gamma {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::config(format!("lm_gamma must be finite and non-negative, got {gamma}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmLayer {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

/// Parameter handles of a tagger.
#[derive(Clone, Debug)]
pub struct Tagger {
    pub config: TaggerConfig,
    pub encoder: TokenEncoder,
    pub bilstm: Vec<BiLstmLayer>,
    pub emission: Linear,
    pub transitions: ParamId,
    pub labels: usize,
    pub lm: Option<BiLm>,
    pub heads: Option<LmHeads>,
}

/// Sizes needed to lay out a tagger.
#[derive(Clone, Debug)]
pub struct TaggerShape<'a> {
    pub words: usize,
    pub chars: usize,
    pub labels: usize,
    pub lm: Option<(&'a crate::bilm::BiLmConfig, &'a Vocabulary)>,
}

impl Tagger {
    pub fn build<R: rand::Rng + ?Sized>(
        params: &mut ParameterSet,
        config: &TaggerConfig,
        shape: &TaggerShape,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if shape.labels == 0 {
            return Err(Error::input("empty label set"));
        }
        let encoder = TokenEncoder::build(
            params,
            &format!("{TAGGER_PREFIX}.encoder"),
            &config.encoder(),
            shape.words,
            shape.chars,
            rng,
        )?;
        let elmo_dim = shape.lm.map_or(0, |(c, _)| c.elmo_dim);
        let mut input = encoder.output_dim() + elmo_dim;
        let mut bilstm = Vec::with_capacity(config.layers);
        for j in 0..config.layers {
            let forward = LstmCell::build(params, &format!("{TAGGER_PREFIX}.bilstm.{j}.forward"), input, config.hidden, rng)?;
            let backward = LstmCell::build(params, &format!("{TAGGER_PREFIX}.bilstm.{j}.backward"), input, config.hidden, rng)?;
            bilstm.push(BiLstmLayer { forward, backward });
            input = 2 * config.hidden;
        }
        let (emission, transitions) = build_crf(params, input, shape.labels, rng)?;
        let lm = match shape.lm {
            Some((lm_config, lm_vocab)) => {
                let lm = BiLm::build(params, LM_PREFIX, lm_config, lm_vocab.word_count(), lm_vocab.char_count(), rng)?;
                params.set_trainable_prefix(&format!("{LM_PREFIX}."), false);
                Some(lm)
            }
            None => None,
        };
        let heads = match config.lm_gamma {
            Some(gamma) => Some(LmHeads::build(params, config.hidden, shape.words, gamma, rng)?),
            None => None,
        };
        Ok(Tagger {
            config: config.clone(),
            encoder,
            bilstm,
            emission,
            transitions,
            labels: shape.labels,
            lm,
            heads,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.config.hidden
    }

    /// BiLSTM outputs per layer; each position is `forward ⊕ backward`.
    /// Also returns the first layer's directional states.
    pub fn contextualize(
        &self,
        g: &mut Graph,
        tokens: &[Token],
        elmo: Option<&[Vec<f64>]>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Contextualized> {
        let rate = self.config.dropout;
        let mut inputs = Vec::with_capacity(tokens.len());
        for (k, t) in tokens.iter().enumerate() {
            let v = self.encoder.token_vector(g, t)?;
            let mut v = dropout(g, v, rate, rng.as_deref_mut())?;
            if let Some(ctx) = elmo {
                let e = g.constant(ctx[k].clone());
                let e = dropout(g, e, self.config.elmo_dropout, rng.as_deref_mut())?;
                v = g.concat(&[v, e]);
            }
            inputs.push(v);
        }
        let mut first = None;
        let mut outputs = inputs;
        for layer in &self.bilstm {
            let f = layer.forward.run(g, &outputs, false)?;
            let b = layer.backward.run(g, &outputs, true)?;
            if first.is_none() {
                first = Some((f.clone(), b.clone()));
            }
            outputs = f.iter().zip(&b).map(|(&x, &y)| g.concat(&[x, y])).collect();
        }
        let (first_forward, first_backward) = first.expect("at least one layer");
        Ok(Contextualized {
            outputs,
            first_forward,
            first_backward,
        })
    }

    pub fn emissions(&self, g: &mut Graph, outputs: &[Var], mut rng: Option<&mut ChaCha8Rng>) -> Result<Vec<Var>> {
        outputs
            .iter()
            .map(|&h| {
                let h = dropout(g, h, self.config.dropout, rng.as_deref_mut())?;
                self.emission.forward(g, h)
            })
            .collect()
    }

    /// ELMo features for a sentence if this tagger has a language model.
    pub fn elmo_for<S: AsRef<str>>(
        &self,
        params: &ParameterSet,
        lm_vocab: Option<&Vocabulary>,
        words: &[S],
    ) -> Result<Option<Vec<Vec<f64>>>> {
        match (&self.lm, lm_vocab) {
            (Some(lm), Some(v)) => Ok(Some(elmo_topmost(params, lm, &v.index_sentence(words))?)),
            (None, _) => Ok(None),
            (Some(_), None) => Err(Error::Checkpoint("tagger with a language model but no LM vocabulary".into())),
        }
    }
}

fn build_crf<R: rand::Rng + ?Sized>(
    params: &mut ParameterSet,
    input: usize,
    labels: usize,
    rng: &mut R,
) -> Result<(Linear, ParamId)> {
    let emission = Linear::build(params, &format!("{CRF_PREFIX}.emission"), input, labels, rng)?;
    let side = transition_side(labels);
    let transitions = params.add(format!("{CRF_PREFIX}.transitions"), Tensor::zeros(&[side, side]), true)?;
    Ok((emission, transitions))
}

pub struct Contextualized {
    pub outputs: Vec<Var>,
    pub first_forward: Vec<Var>,
    pub first_backward: Vec<Var>,
}

/// An indexed training or evaluation sentence.
#[derive(Clone, Debug)]
pub struct TaggedExample {
    pub tokens: Vec<Token>,
    pub gold: Vec<usize>,
    pub elmo: Option<Vec<Vec<f64>>>,
}

/// Loss components of one sentence.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub crf: f64,
    pub lm: f64,
    pub total: f64,
}

impl Tagger {
    /// Builds the loss graph; returns the root and its components.
    pub fn loss(
        &self,
        g: &mut Graph,
        ex: &TaggedExample,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, LossParts)> {
        let ctx = self.contextualize(g, &ex.tokens, ex.elmo.as_deref(), rng.as_deref_mut())?;
        let em = self.emissions(g, &ctx.outputs, rng.as_deref_mut())?;
        let crf = crf_nll_node(g, &em, self.transitions, &ex.gold)?;
        match &self.heads {
            None => {
                let v = g.scalar(crf);
                Ok((crf, LossParts { crf: v, lm: 0.0, total: v }))
            }
            Some(heads) => {
                let lm = heads.loss(g, &ctx, &ex.tokens, self.config.dropout, rng)?;
                let weighted = g.scale(lm, heads.gamma);
                let root = g.sum_scalars(&[crf, weighted]);
                Ok((
                    root,
                    LossParts {
                        crf: g.scalar(crf),
                        lm: g.scalar(lm),
                        total: g.scalar(root),
                    },
                ))
            }
        }
    }

    pub fn decode(&self, params: &ParameterSet, tokens: &[Token], elmo: Option<&[Vec<f64>]>) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(params);
        let ctx = self.contextualize(&mut g, tokens, elmo, None)?;
        let em = self.emissions(&mut g, &ctx.outputs, None)?;
        let em: Vec<Vec<f64>> = em.iter().map(|&v| g.value(v).to_vec()).collect();
        Ok(viterbi(&em, params.value(self.transitions))?.0)
    }
}

pub struct TaggerObjective<'a> {
    pub tagger: &'a Tagger,
}

impl Objective for TaggerObjective<'_> {
    type Example = TaggedExample;

    fn example_loss(
        &self,
        params: &ParameterSet,
        ex: &TaggedExample,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut Gradients,
    ) -> Result<(f64, f64)> {
        let mut g = Graph::new(params);
        let (root, parts) = self.tagger.loss(&mut g, ex, rng)?;
        g.backward(root, grads);
        Ok((parts.total, 1.0))
    }

    fn example_len(&self, ex: &TaggedExample) -> usize {
        ex.tokens.len()
    }
}

#[derive(Clone, Debug)]
pub struct TaggerModel {
    pub tagger: Tagger,
    pub params: ParameterSet,
    pub manifest: Manifest,
}

impl TaggerModel {
    pub fn new(
        config: &TaggerConfig,
        vocab: Vocabulary,
        lm: Option<&BiLmModel>,
        name: &str,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let shape = TaggerShape {
            words: vocab.word_count(),
            chars: vocab.char_count(),
            labels: vocab.label_count(),
            lm: lm.map(|m| (m.config(), m.vocab())),
        };
        let tagger = Tagger::build(&mut params, config, &shape, &mut rng)?;
        let kind = if config.lm_gamma.is_some() {
            ModelKind::Multitask
        } else {
            ModelKind::Tagger
        };
        let mut manifest = Manifest::new(kind, name, vocab);
        manifest.seed = seed;
        manifest.tagger = Some(config.clone());
        manifest.external.insert("lm".into(), "none".into());
        if let Some(m) = lm {
            let copied = params.copy_matching_from(&m.params, &format!("{LM_PREFIX}."))?;
            if copied != m.params.len() {
                return Err(Error::config("language model does not fit the tagger layout"));
            }
            manifest.bilm = Some(m.config().clone());
            manifest.set_lm_vocab(Some(m.vocab().clone()));
            manifest.derive_from(&m.manifest);
            manifest.external.insert("lm".into(), format!("{} {}", m.name(), m.id()));
        }
        Ok(TaggerModel { tagger, params, manifest })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.manifest.vocab
    }

    pub fn lm_vocab(&self) -> Option<&Vocabulary> {
        self.manifest.lm_vocab.as_ref()
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    pub fn labels(&self) -> &[String] {
        self.vocab().labels()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.manifest.clone(), self.params.clone())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let m = &ckpt.manifest;
        if m.kind == ModelKind::Bilm {
            return Err(Error::config(format!("checkpoint {} is a language model, not a tagger", m.name)));
        }
        let config = m
            .tagger
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("tagger checkpoint without configuration".into()))?;
        let shape = TaggerShape {
            words: m.vocab.word_count(),
            chars: m.vocab.char_count(),
            labels: m.vocab.label_count(),
            lm: match (&m.bilm, &m.lm_vocab) {
                (Some(c), Some(v)) => Some((c, v)),
                (None, None) => None,
                _ => return Err(Error::Checkpoint("incomplete language model description".into())),
            },
        };
        let mut params = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tagger = Tagger::build(&mut params, config, &shape, &mut rng)?;
        adopt_params(&mut params, &ckpt.params)?;
        Ok(TaggerModel {
            tagger,
            params,
            manifest: m.clone(),
        })
    }

    /// Index a labeled corpus and attach ELMo features.
    pub fn examples(&self, corpus: &LabeledCorpus, parallelism: Parallelism) -> Result<Vec<TaggedExample>> {
        let vocab = self.vocab();
        let lm_vocab = self.lm_vocab();
        parallelism
            .map(&corpus.sentences, |s| {
                let gold = vocab.label_ids(&s.tags).ok_or_else(|| {
                    Error::input(format!(
                        "{} {}: tag outside the label set {:?}",
                        corpus.domain,
                        corpus.split,
                        vocab.labels()
                    ))
                })?;
                Ok(TaggedExample {
                    tokens: vocab.index_sentence(&s.words),
                    gold,
                    elmo: self.tagger.elmo_for(&self.params, lm_vocab, &s.words)?,
                })
            })
            .into_iter()
            .collect()
    }

    /// Tag sentences with Viterbi decoding.
    pub fn predict<S: AsRef<str> + Sync>(&self, sentences: &[Vec<S>], parallelism: Parallelism) -> Result<Vec<Vec<String>>> {
        parallelism
            .map(sentences, |words| {
                let elmo = self.tagger.elmo_for(&self.params, self.lm_vocab(), words)?;
                let tokens = self.vocab().index_sentence(words);
                let ids = self.tagger.decode(&self.params, &tokens, elmo.as_deref())?;
                Ok(ids.into_iter().map(|i| self.vocab().label(i).to_string()).collect())
            })
            .into_iter()
            .collect()
    }

    pub fn evaluate(&self, corpus: &LabeledCorpus, parallelism: Parallelism) -> Result<EvalReport> {
        let words: Vec<Vec<String>> = corpus.sentences.iter().map(|s| s.words.clone()).collect();
        span_f1(corpus, &self.predict(&words, parallelism)?)
    }

    /// Per-token final-layer BiLSTM outputs (`2 × hidden` wide).
    pub fn bilstm_outputs<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<Vec<f64>>> {
        let elmo = self.tagger.elmo_for(&self.params, self.lm_vocab(), words)?;
        let tokens = self.vocab().index_sentence(words);
        let mut g = Graph::new(&self.params);
        let ctx = self.tagger.contextualize(&mut g, &tokens, elmo.as_deref(), None)?;
        Ok(ctx.outputs.iter().map(|&v| g.value(v).to_vec()).collect())
    }

    /// Bytes of the frozen language model parameters.
    pub fn lm_bytes(&self) -> Vec<u8> {
        self.params.bytes_with_prefix(&format!("{LM_PREFIX}."))
    }

    fn seal(&mut self) {
        self.manifest.id = content_id(&self.manifest.name, &self.params);
    }
}

/// Word vocabulary of `train`, labels of `train` and `dev`.
pub fn tagger_vocab(train: &LabeledCorpus, dev: &LabeledCorpus) -> Vocabulary {
    let mut b = VocabBuilder::new();
    for s in &train.sentences {
        b.add_words(&s.words);
        b.add_tags(&s.tags);
    }
    for s in &dev.sentences {
        b.add_tags(&s.tags);
    }
    b.build(1)
}

#[derive(Clone, Debug)]
pub struct TaggerTraining {
    pub model: TaggerModel,
    pub dev_f1: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub(crate) fn run_tagger(
    mut model: TaggerModel,
    train: &LabeledCorpus,
    dev: &LabeledCorpus,
    settings: &TrainSettings,
    parallelism: Parallelism,
) -> Result<TaggerTraining> {
    if train.is_empty() {
        return Err(Error::input(format!("tagger training corpus {} is empty", train.domain)));
    }
    let train_ex = model.examples(train, parallelism)?;
    let dev_ex = model.examples(dev, parallelism)?;
    let tagger = model.tagger.clone();
    let labels = model.vocab().labels().to_vec();
    let gold_dev = dev.tags();
    let outcome = fit(
        &TaggerObjective { tagger: &tagger },
        model.params.clone(),
        &train_ex,
        settings,
        parallelism,
        |p| {
            let predicted: Vec<Vec<String>> = parallelism
                .map(&dev_ex, |ex| {
                    tagger
                        .decode(p, &ex.tokens, ex.elmo.as_deref())
                        .map(|ids| ids.into_iter().map(|i| labels[i].clone()).collect())
                })
                .into_iter()
                .collect::<Result<_>>()?;
            Ok(crate::eval::span_f1_tags(&gold_dev, &predicted)?.f1())
        },
    )?;
    model.params = outcome.params;
    model.manifest.seed = settings.seed;
    model.manifest.config_hash = config_hash(&(&model.tagger.config, settings));
    model
        .manifest
        .data
        .insert(format!("train:{}", train.domain), corpus_fingerprint(train));
    model
        .manifest
        .data
        .insert(format!("dev:{}", dev.domain), corpus_fingerprint(dev));
    model.seal();
    Ok(TaggerTraining {
        model,
        dev_f1: outcome.best_metric,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
    })
}

/// Train a tagger, optionally on top of a frozen language model.
pub fn train_tagger(
    train: &LabeledCorpus,
    dev: &LabeledCorpus,
    lm: Option<&BiLmModel>,
    config: &TaggerConfig,
    settings: &TrainSettings,
    parallelism: Parallelism,
) -> Result<TaggerTraining> {
    let vocab = tagger_vocab(train, dev);
    let name = match lm {
        Some(m) => format!("{}_Sup[{}]", m.name(), train.domain),
        None => format!("Sup[{}]", train.domain),
    };
    let mut model = TaggerModel::new(config, vocab, lm, &name, settings.seed)?;
    model.manifest.target_domain = Some(train.domain.clone());
    run_tagger(model, train, dev, settings, parallelism)
}

/// Initialise a target-domain tagger from a source tagger.
///
/// The word and character tables keep every source row and gain fresh
/// rows for target-only symbols. Everything except the CRF is copied; the
/// CRF is rebuilt for the target label set.
pub fn transfer_tagger(
    source: &TaggerModel,
    train: &LabeledCorpus,
    dev: &LabeledCorpus,
    config: &TaggerConfig,
    seed: u64,
) -> Result<TaggerModel> {
    if !source.tagger.config.same_architecture(config) {
        return Err(Error::config(format!(
            "fine-tuning configuration does not match the architecture of {}",
            source.name()
        )));
    }
    let target = tagger_vocab(train, dev);
    let mut vocab = source.vocab().with_labels(target.labels());
    vocab.extend_with(&target);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::new();
    let shape = TaggerShape {
        words: vocab.word_count(),
        chars: vocab.char_count(),
        labels: vocab.label_count(),
        lm: source.manifest.bilm.as_ref().zip(source.lm_vocab()),
    };
    let tagger = Tagger::build(&mut params, config, &shape, &mut rng)?;
    let crf = format!("{CRF_PREFIX}.");
    for id in params.ids().collect::<Vec<_>>() {
        let name = params.name(id).to_string();
        if name.starts_with(&crf) {
            continue;
        }
        let Some(src) = source.params.by_name(&name) else { continue };
        let dst = params.get_mut(id);
        let same_tail = dst.shape()[1..] == src.shape()[1..];
        if dst.shape() == src.shape() {
            dst.data_mut().copy_from_slice(src.data());
        } else if same_tail && dst.shape()[0] >= src.shape()[0] {
            dst.data_mut()[..src.len()].copy_from_slice(src.data());
        } else {
            return Err(Error::config(format!(
                "cannot transfer {name}: {:?} into {:?}",
                src.shape(),
                dst.shape()
            )));
        }
    }

    let mut manifest = Manifest::new(source.manifest.kind, derived_name(source.name(), &train.domain), vocab);
    manifest.derive_from(&source.manifest);
    manifest.tagger = Some(config.clone());
    manifest.bilm = source.manifest.bilm.clone();
    manifest.set_lm_vocab(source.manifest.lm_vocab.clone());
    manifest.external = source.manifest.external.clone();
    manifest.source_domain = source.manifest.target_domain.clone();
    manifest.target_domain = Some(train.domain.clone());
    manifest.seed = seed;
    Ok(TaggerModel { tagger, params, manifest })
}

/// Transfer then train on the target corpus with fresh optimizer state.
pub fn finetune_tagger(
    source: &TaggerModel,
    train: &LabeledCorpus,
    dev: &LabeledCorpus,
    config: &TaggerConfig,
    settings: &TrainSettings,
    parallelism: Parallelism,
) -> Result<TaggerTraining> {
    let model = transfer_tagger(source, train, dev, config, settings.seed)?;
    run_tagger(model, train, dev, settings, parallelism)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::bilm::{train_bilm, BiLmConfig};
    use crate::corpus::{Corpus, LabeledSentence, Split};

    pub(crate) fn small_config() -> TaggerConfig {
        TaggerConfig {
            word_dim: 6,
            char_dim: 4,
            char_filters: 5,
            char_kernel: 3,
            highway_layers: 1,
            hidden: 6,
            layers: 1,
            dropout: 0.0,
            elmo_dropout: 0.0,
            lm_gamma: None,
        }
    }

    pub(crate) fn labeled(domain: &str, rows: &[(&str, &str)]) -> LabeledCorpus {
        let sentences = rows
            .iter()
            .map(|(w, t)| {
                LabeledSentence::new(
                    w.split_whitespace().map(String::from).collect(),
                    t.split_whitespace().map(String::from).collect(),
                )
            })
            .collect();
        Corpus::new(sentences, Split::Train, domain)
    }

    pub(crate) fn toy() -> LabeledCorpus {
        labeled(
            "toy",
            &[
                ("budi makan di jakarta", "B-PER O O B-LOC"),
                ("ani pergi ke bandung", "B-PER O O B-LOC"),
                ("budi santoso tinggal di bogor", "B-PER I-PER O O B-LOC"),
                ("saya mau pesan", "O O O"),
                ("ani ke jakarta", "B-PER O B-LOC"),
                ("dewi makan di bandung", "B-PER O O B-LOC"),
            ],
        )
    }

    fn fast() -> TrainSettings {
        TrainSettings {
            learning_rate: 0.02,
            batch_size: 2,
            epochs: 60,
            patience: 60,
            l2: 0.0,
            ..TrainSettings::default()
        }
    }

    #[test]
    fn overfits_small_corpus() {
        let c = toy();
        let out = train_tagger(&c, &c, None, &small_config(), &fast(), Parallelism::Rayon).unwrap();
        assert!(out.dev_f1 >= 0.99, "{}", out.dev_f1);
        let r = out.model.evaluate(&c, Parallelism::Sequential).unwrap();
        assert_eq!(r.f1(), out.dev_f1);
    }

    #[test]
    fn predictions_are_well_formed() {
        let c = toy();
        let m = TaggerModel::new(&small_config(), tagger_vocab(&c, &c), None, "Sup[toy]", 1).unwrap();
        let sents = vec![vec!["budi", "pergi", "xyz"], vec!["a"]];
        let p1 = m.predict(&sents, Parallelism::Rayon).unwrap();
        let p2 = m.predict(&sents, Parallelism::Sequential).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1[0].len(), 3);
        assert!(p1.iter().flatten().all(|t| m.labels().contains(t)));
    }

    #[test]
    fn unknown_gold_tag_is_input_error() {
        let c = toy();
        let m = TaggerModel::new(&small_config(), tagger_vocab(&c, &c), None, "x", 1).unwrap();
        let bad = labeled("toy", &[("budi", "B-ORG")]);
        assert!(matches!(m.examples(&bad, Parallelism::Sequential), Err(Error::Input(_))));
    }

    fn tiny_lm(c: &LabeledCorpus) -> BiLmModel {
        let cfg = BiLmConfig {
            char_dim: 4,
            char_filters: 4,
            char_kernel: 3,
            highway_layers: 1,
            elmo_dim: 6,
            layers: 2,
            dropout: 0.0,
        };
        let u = c.unlabeled();
        let s = TrainSettings {
            epochs: 2,
            ..fast()
        };
        train_bilm(&u, &u, &cfg, &s, Parallelism::Rayon).unwrap().model
    }

    #[test]
    fn lm_stays_frozen_and_transfer_copies() {
        let c = toy();
        let lm = tiny_lm(&c);
        let s = TrainSettings { epochs: 3, ..fast() };
        let src = train_tagger(&c, &c, Some(&lm), &small_config(), &s, Parallelism::Rayon).unwrap();
        assert_eq!(src.model.lm_bytes(), lm.params.bytes_with_prefix("lm."));
        assert_eq!(src.model.name(), "LM[toy]_Sup[toy]");

        let target = labeled(
            "chat",
            &[("mau ke surabaya", "O O B-LOC"), ("rina mau makan", "B-PER O O")],
        );
        let t = transfer_tagger(&src.model, &target, &target, &small_config(), 5).unwrap();
        let prefix = format!("{TAGGER_PREFIX}.bilstm");
        assert_eq!(t.params.bytes_with_prefix(&prefix), src.model.params.bytes_with_prefix(&prefix));
        assert_eq!(t.lm_bytes(), lm.params.bytes_with_prefix("lm."));
        let side = transition_side(t.vocab().label_count());
        assert_eq!(t.params.get(t.tagger.transitions).shape(), &[side, side]);
        let emb = t.tagger.encoder.word_embedding().unwrap();
        let src_rows = src.model.vocab().word_count();
        assert!(emb.rows > src_rows);
        let src_emb = src.model.params.get(src.model.tagger.encoder.word_embedding().unwrap().table);
        assert_eq!(&t.params.get(emb.table).data()[..src_emb.len()], src_emb.data());
        assert_eq!(t.name(), "LM[toy]_Sup[toy-chat]");
        assert_eq!(t.manifest.lineage.len(), 2);

        let ft = finetune_tagger(&src.model, &target, &target, &small_config(), &s, Parallelism::Rayon).unwrap();
        assert_eq!(ft.model.lm_bytes(), lm.params.bytes_with_prefix("lm."));

        let wrong = TaggerConfig {
            hidden: 7,
            ..small_config()
        };
        assert!(matches!(
            transfer_tagger(&src.model, &target, &target, &wrong, 5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn checkpoint_reload_reproduces_f1() {
        let c = toy();
        let lm = tiny_lm(&c);
        let s = TrainSettings { epochs: 4, ..fast() };
        let out = train_tagger(&c, &c, Some(&lm), &small_config(), &s, Parallelism::Rayon).unwrap();
        let bytes = out.model.to_checkpoint().to_bytes().unwrap();
        let back = TaggerModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
        let a = out.model.evaluate(&c, Parallelism::Rayon).unwrap();
        let b = back.evaluate(&c, Parallelism::Rayon).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.f1(), out.dev_f1);
        assert!(!back.params.is_trainable(back.params.id("lm.bos").unwrap()));
    }

    #[test]
    fn default_bilstm_output_width() {
        let c = toy();
        let cfg = TaggerConfig {
            word_dim: 4,
            char_filters: 4,
            ..TaggerConfig::default()
        };
        let m = TaggerModel::new(&cfg, tagger_vocab(&c, &c), None, "x", 1).unwrap();
        assert_eq!(m.bilstm_outputs(&["budi", "makan"]).unwrap()[0].len(), 400);
    }
}
