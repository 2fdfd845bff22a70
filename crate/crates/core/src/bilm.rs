//! Bidirectional LSTM language model and ELMo-style contextual embeddings.
//!
//! Token inputs `x_k` come from the character path of [`TokenEncoder`].
//! The forward stack reads `[BOS, x_1 .. x_N]` and predicts `t_k` from the
//! state after `t_{k-1}`; the backward stack reads `[x_1 .. x_N, EOS]` right
//! to left and predicts `t_k` from the state after `t_{k+1}`. The boundary
//! markers are learned input vectors, never prediction targets. Both
//! directions share the encoder and the output softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{dropout, softmax_cross_entropy, Graph, Gradients, Linear, LstmCell, ParamId, ParameterSet, Tensor, Var};
use crate::corpus::{Token, UnlabeledCorpus, Vocabulary};
use crate::encoder::{EncoderConfig, TokenEncoder};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{config_hash, content_id, Checkpoint, Manifest, ModelKind};
use crate::parallel::Parallelism;
use crate::train::{fit, EpochRecord, Objective, TrainSettings};

/// Name prefix of every language model parameter.
pub const LM_PREFIX: &str = "lm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLmConfig {
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_kernel: usize,
    pub highway_layers: usize,
    /// Width of the concatenated topmost states; each direction has half.
    pub elmo_dim: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for BiLmConfig {
    fn default() -> Self {
        BiLmConfig {
            char_dim: 16,
            char_filters: 128,
            char_kernel: 3,
            highway_layers: 2,
            elmo_dim: 1024,
            layers: 2,
            dropout: 0.1,
        }
    }
}

impl BiLmConfig {
    pub fn hidden(&self) -> usize {
        self.elmo_dim / 2
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            word_dim: 0,
            char_dim: self.char_dim,
            char_filters: self.char_filters,
            char_kernel: self.char_kernel,
            highway_layers: self.highway_layers,
            char_output: self.hidden(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("language model needs at least one layer"));
        }
        if self.elmo_dim < 2 || self.elmo_dim % 2 != 0 {
            return Err(Error::config(format!("elmo_dim must be even and positive, got {}", self.elmo_dim)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("lm dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Parameter handles of a biLM inside some [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct BiLm {
    pub config: BiLmConfig,
    pub vocab_size: usize,
    pub encoder: TokenEncoder,
    pub forward: Vec<LstmCell>,
    pub backward: Vec<LstmCell>,
    pub bos: ParamId,
    pub eos: ParamId,
    pub softmax: Linear,
}

/// Graph handles for one sentence.
pub struct LmStates {
    /// Context-independent inputs, one per token.
    pub x: Vec<Var>,
    /// `forward[j][p]`: layer `j` state after reading `p` tokens (`p = 0` is BOS).
    pub forward: Vec<Vec<Var>>,
    /// `backward[j][p]`: layer `j` state covering tokens `p..` and EOS (`p = N` is EOS).
    pub backward: Vec<Vec<Var>>,
}

impl LmStates {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Forward state of layer `j` at token `k`.
    pub fn forward_at(&self, j: usize, k: usize) -> Var {
        self.forward[j][k + 1]
    }

    /// Backward state of layer `j` at token `k`.
    pub fn backward_at(&self, j: usize, k: usize) -> Var {
        self.backward[j][k]
    }
}

impl BiLm {
    pub fn build<R: rand::Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        config: &BiLmConfig,
        vocab_size: usize,
        char_rows: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let h = config.hidden();
        let encoder = TokenEncoder::build(params, &format!("{prefix}.encoder"), &config.encoder(), 0, char_rows, rng)?;
        let stack = |dir: &str, params: &mut ParameterSet, rng: &mut R| -> Result<Vec<LstmCell>> {
            (0..config.layers)
                .map(|j| LstmCell::build(params, &format!("{prefix}.{dir}.{j}"), h, h, rng))
                .collect()
        };
        let forward = stack("forward", params, rng)?;
        let backward = stack("backward", params, rng)?;
        let bos = params.add(format!("{prefix}.bos"), Tensor::normal(&[h], 0.1, rng), true)?;
        let eos = params.add(format!("{prefix}.eos"), Tensor::normal(&[h], 0.1, rng), true)?;
        let softmax = Linear::build(params, &format!("{prefix}.softmax"), h, vocab_size, rng)?;
        Ok(BiLm {
            config: config.clone(),
            vocab_size,
            encoder,
            forward,
            backward,
            bos,
            eos,
            softmax,
        })
    }

    pub fn layers(&self) -> usize {
        self.config.layers
    }

    /// Run both stacks over a sentence. `rng` enables dropout.
    pub fn states(&self, g: &mut Graph, tokens: &[Token], mut rng: Option<&mut ChaCha8Rng>) -> Result<LmStates> {
        let rate = self.config.dropout;
        let x = tokens
            .iter()
            .map(|t| self.encoder.char_vector(g, t))
            .collect::<Result<Vec<_>>>()?;
        let bos = g.lookup(self.bos, 0);
        let eos = g.lookup(self.eos, 0);

        let mut fwd_in: Vec<Var> = std::iter::once(bos).chain(x.iter().copied()).collect();
        let mut bwd_in: Vec<Var> = x.iter().copied().chain(std::iter::once(eos)).collect();
        let mut forward = Vec::with_capacity(self.layers());
        let mut backward = Vec::with_capacity(self.layers());
        for j in 0..self.layers() {
            for v in fwd_in.iter_mut().chain(bwd_in.iter_mut()) {
                *v = dropout(g, *v, rate, rng.as_deref_mut())?;
            }
            let f = self.forward[j].run(g, &fwd_in, false)?;
            let b = self.backward[j].run(g, &bwd_in, true)?;
            fwd_in = f.clone();
            bwd_in = b.clone();
            forward.push(f);
            backward.push(b);
        }
        Ok(LmStates { x, forward, backward })
    }

    /// Per-token losses `(forward, backward)` as graph scalars.
    pub fn token_losses(
        &self,
        g: &mut Graph,
        tokens: &[Token],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let states = self.states(g, tokens, rng.as_deref_mut())?;
        let top = self.layers() - 1;
        let n = tokens.len();
        let mut fwd = Vec::with_capacity(n);
        let mut bwd = Vec::with_capacity(n);
        for (k, tok) in tokens.iter().enumerate() {
            let hf = dropout(g, states.forward[top][k], self.config.dropout, rng.as_deref_mut())?;
            let lf = self.softmax.forward(g, hf)?;
            fwd.push(softmax_cross_entropy(g, lf, tok.word_id)?);
            let hb = dropout(g, states.backward[top][k + 1], self.config.dropout, rng.as_deref_mut())?;
            let lb = self.softmax.forward(g, hb)?;
            bwd.push(softmax_cross_entropy(g, lb, tok.word_id)?);
        }
        Ok((fwd, bwd))
    }
}

/// A trained language model with its manifest.
#[derive(Clone, Debug)]
pub struct BiLmModel {
    pub lm: BiLm,
    pub params: ParameterSet,
    pub manifest: Manifest,
}

impl BiLmModel {
    pub fn new(config: &BiLmConfig, vocab: Vocabulary, name: &str, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let lm = BiLm::build(&mut params, LM_PREFIX, config, vocab.word_count(), vocab.char_count(), &mut rng)?;
        let mut manifest = Manifest::new(ModelKind::Bilm, name, vocab);
        manifest.seed = seed;
        manifest.bilm = Some(config.clone());
        Ok(BiLmModel { lm, params, manifest })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.manifest.vocab
    }

    pub fn config(&self) -> &BiLmConfig {
        &self.lm.config
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.manifest.clone(), self.params.clone())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let m = &ckpt.manifest;
        if m.kind != ModelKind::Bilm {
            return Err(Error::config(format!("checkpoint {} is not a language model", m.name)));
        }
        let config = m
            .bilm
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("language model checkpoint without configuration".into()))?;
        let mut model = BiLmModel::new(config, m.vocab.clone(), &m.name, m.seed)?;
        adopt_params(&mut model.params, &ckpt.params)?;
        model.manifest = m.clone();
        Ok(model)
    }

    fn seal(&mut self) {
        self.manifest.id = content_id(&self.manifest.name, &self.params);
    }

    fn index(&self, corpus: &UnlabeledCorpus) -> Vec<Vec<Token>> {
        corpus
            .sentences
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| self.vocab().index_sentence(s))
            .collect()
    }
}

/// Copy every value of `source` into `target`, requiring identical name
/// sets and shapes.
pub(crate) fn adopt_params(target: &mut ParameterSet, source: &ParameterSet) -> Result<()> {
    if target.len() != source.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, architecture expects {}",
            source.len(),
            target.len()
        )));
    }
    let copied = target.copy_matching_from(source, "")?;
    if copied != target.len() {
        return Err(Error::Checkpoint("checkpoint parameter names do not match the architecture".into()));
    }
    for id in target.ids().collect::<Vec<_>>() {
        let src = source.id(target.name(id)).expect("name checked above");
        target.set_trainable(id, source.is_trainable(src));
    }
    Ok(())
}

/// Summed negative log-likelihood of both directions over a batch.
pub fn bilm_nll(params: &ParameterSet, lm: &BiLm, batch: &[Vec<Token>]) -> Result<f64> {
    if batch.is_empty() || batch.iter().all(|s| s.is_empty()) {
        return Err(Error::input("empty language model batch"));
    }
    let mut total = 0.0;
    for tokens in batch {
        let (f, b) = directional_losses(params, lm, tokens)?;
        total += f.iter().sum::<f64>() + b.iter().sum::<f64>();
    }
    Ok(total)
}

/// Per-token forward and backward losses without dropout.
pub fn directional_losses(params: &ParameterSet, lm: &BiLm, tokens: &[Token]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new(params);
    let (f, b) = lm.token_losses(&mut g, tokens, None)?;
    Ok((
        f.iter().map(|&v| g.scalar(v)).collect(),
        b.iter().map(|&v| g.scalar(v)).collect(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub forward: f64,
    pub backward: f64,
    pub joint: f64,
    pub tokens: usize,
}

pub fn perplexity(params: &ParameterSet, lm: &BiLm, sentences: &[Vec<Token>], parallelism: Parallelism) -> Result<PerplexityReport> {
    let parts = parallelism.map(sentences, |s| directional_losses(params, lm, s));
    let (mut f, mut b, mut n) = (0.0, 0.0, 0usize);
    for part in parts {
        let (pf, pb) = part?;
        n += pf.len();
        f += pf.iter().sum::<f64>();
        b += pb.iter().sum::<f64>();
    }
    if n == 0 {
        return Err(Error::input("perplexity of an empty corpus"));
    }
    let nf = n as f64;
    Ok(PerplexityReport {
        forward: (f / nf).exp(),
        backward: (b / nf).exp(),
        joint: ((f + b) / (2.0 * nf)).exp(),
        tokens: n,
    })
}

impl BiLmModel {
    pub fn perplexity(&self, corpus: &UnlabeledCorpus, parallelism: Parallelism) -> Result<PerplexityReport> {
        perplexity(&self.params, &self.lm, &self.index(corpus), parallelism)
    }
}

pub struct LmObjective<'a> {
    pub lm: &'a BiLm,
}

impl Objective for LmObjective<'_> {
    type Example = Vec<Token>;

    fn example_loss(
        &self,
        params: &ParameterSet,
        tokens: &Vec<Token>,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut Gradients,
    ) -> Result<(f64, f64)> {
        let mut g = Graph::new(params);
        let (f, b) = self.lm.token_losses(&mut g, tokens, rng)?;
        let terms: Vec<Var> = f.into_iter().chain(b).collect();
        let loss = g.sum_scalars(&terms);
        g.backward(loss, grads);
        Ok((g.scalar(loss), terms.len() as f64))
    }

    fn example_len(&self, tokens: &Vec<Token>) -> usize {
        tokens.len()
    }
}

#[derive(Clone, Debug)]
pub struct LmTraining {
    pub model: BiLmModel,
    pub train: PerplexityReport,
    pub dev: PerplexityReport,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn run_lm(
    mut model: BiLmModel,
    train: &UnlabeledCorpus,
    dev: &UnlabeledCorpus,
    settings: &TrainSettings,
    parallelism: Parallelism,
) -> Result<LmTraining> {
    let train_ix = model.index(train);
    let dev_ix = model.index(dev);
    if train_ix.is_empty() {
        return Err(Error::input(format!("language model corpus {} is empty", train.domain)));
    }
    if dev_ix.is_empty() {
        return Err(Error::input(format!("language model dev corpus {} is empty", dev.domain)));
    }
    let lm = model.lm.clone();
    let outcome = fit(
        &LmObjective { lm: &lm },
        model.params.clone(),
        &train_ix,
        settings,
        parallelism,
        |p| Ok(-perplexity(p, &lm, &dev_ix, parallelism)?.joint),
    )?;
    model.params = outcome.params;
    model.manifest.config_hash = config_hash(&(&model.lm.config, settings));
    model.manifest.seed = settings.seed;
    model
        .manifest
        .data
        .insert(format!("lm-train:{}", train.domain), corpus_fingerprint(train));
    model.seal();
    Ok(LmTraining {
        train: perplexity(&model.params, &lm, &train_ix, parallelism)?,
        dev: perplexity(&model.params, &lm, &dev_ix, parallelism)?,
        model,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
    })
}

/// SHA-256 over the whitespace-joined sentences.
pub fn corpus_fingerprint<S: crate::corpus::Words>(corpus: &crate::corpus::Corpus<S>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for s in &corpus.sentences {
        h.update(s.words().join(" ").as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// Pretrain a biLM. The vocabulary is built from the training corpus.
pub fn train_bilm(
    train: &UnlabeledCorpus,
    dev: &UnlabeledCorpus,
    config: &BiLmConfig,
    settings: &TrainSettings,
    parallelism: Parallelism,
) -> Result<LmTraining> {
    let vocab = crate::corpus::build_word_vocab(&[train], 1);
    let name = format!("LM[{}]", train.domain);
    let mut model = BiLmModel::new(config, vocab, &name, settings.seed)?;
    model.manifest.source_domain = Some(train.domain.clone());
    run_lm(model, train, dev, settings, parallelism)
}

/// Continue training on in-domain text. The base vocabulary is kept and
/// unseen words map to OOV; a corpus with no known words is rejected.
pub fn finetune_bilm(
    base: &BiLmModel,
    train: &UnlabeledCorpus,
    dev: &UnlabeledCorpus,
    settings: &TrainSettings,
    parallelism: Parallelism,
) -> Result<LmTraining> {
    let vocab = base.vocab();
    let known = train.sentences.iter().flatten().filter(|w| vocab.contains_word(w)).count();
    if known == 0 {
        return Err(Error::config(format!(
            "fine-tuning corpus {} shares no words with the {} vocabulary",
            train.domain,
            base.name()
        )));
    }
    let mut model = base.clone();
    model.manifest.name = derived_name(base.name(), &train.domain);
    model.manifest.derive_from(&base.manifest);
    model.manifest.target_domain = Some(train.domain.clone());
    run_lm(model, train, dev, settings, parallelism)
}

/// `LM[a]` + `b` → `LM[a-b]`.
pub fn derived_name(base: &str, domain: &str) -> String {
    match base.strip_suffix(']') {
        Some(stem) => format!("{stem}-{domain}]"),
        None => format!("{base}-{domain}"),
    }
}

/// The `2L + 1` representations of one token: `x_k`, then forward layers
/// `1..=L`, then backward layers `1..=L`.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationSet {
    pub members: Vec<Vec<f64>>,
}

impl RepresentationSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn token_input(&self) -> &[f64] {
        &self.members[0]
    }
}

pub fn collect_representations(params: &ParameterSet, lm: &BiLm, tokens: &[Token]) -> Result<Vec<RepresentationSet>> {
    let mut g = Graph::new(params);
    let st = lm.states(&mut g, tokens, None)?;
    Ok((0..tokens.len())
        .map(|k| {
            let mut members = vec![g.value(st.x[k]).to_vec()];
            members.extend((0..lm.layers()).map(|j| g.value(st.forward_at(j, k)).to_vec()));
            members.extend((0..lm.layers()).map(|j| g.value(st.backward_at(j, k)).to_vec()));
            RepresentationSet { members }
        })
        .collect())
}

/// Concatenated topmost forward and backward states per token.
pub fn elmo_topmost(params: &ParameterSet, lm: &BiLm, tokens: &[Token]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new(params);
    let st = lm.states(&mut g, tokens, None)?;
    let top = lm.layers() - 1;
    Ok((0..tokens.len())
        .map(|k| {
            let mut v = g.value(st.forward_at(top, k)).to_vec();
            v.extend_from_slice(g.value(st.backward_at(top, k)));
            v
        })
        .collect())
}

impl BiLmModel {
    pub fn elmo<S: AsRef<str>>(&self, sentence: &[S]) -> Result<Vec<Vec<f64>>> {
        elmo_topmost(&self.params, &self.lm, &self.vocab().index_sentence(sentence))
    }

    pub fn representations<S: AsRef<str>>(&self, sentence: &[S]) -> Result<Vec<RepresentationSet>> {
        collect_representations(&self.params, &self.lm, &self.vocab().index_sentence(sentence))
    }
}
