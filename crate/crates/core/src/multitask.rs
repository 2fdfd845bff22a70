//! Tagger with auxiliary next/previous word prediction.
//!
//! The heads read the first BiLSTM layer, whose forward states depend only
//! on earlier tokens and backward states only on later ones. Deeper layers
//! mix both directions and would leak the target word.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{dropout, softmax_cross_entropy, Graph, Linear, ParameterSet, Var};
use crate::corpus::{LabeledCorpus, Token};
use crate::error::{Error, Result};
use crate::parallel::Parallelism;
use crate::tagger::{run_tagger, tagger_vocab, Contextualized, TaggerConfig, TaggerModel, TaggerTraining};
use crate::train::TrainSettings;

pub const DEFAULT_GAMMA: f64 = 0.1;
pub const HEADS_PREFIX: &str = "multitask";

#[derive(Clone, Debug)]
pub struct LmHeads {
    pub forward: Linear,
    pub backward: Linear,
    pub gamma: f64,
}

impl LmHeads {
    pub fn build<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        hidden: usize,
        vocab_size: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(LmHeads {
            forward: Linear::build(params, &format!("{HEADS_PREFIX}.forward_head"), hidden, vocab_size, rng)?,
            backward: Linear::build(params, &format!("{HEADS_PREFIX}.backward_head"), hidden, vocab_size, rng)?,
            gamma,
        })
    }

    /// Per-token `(forward, backward)` losses. Token `k` is predicted from
    /// the forward state at `k − 1` and the backward state at `k + 1`; a
    /// zero state stands in beyond the sentence edges.
    pub fn token_losses(
        &self,
        g: &mut Graph,
        ctx: &Contextualized,
        tokens: &[Token],
        rate: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let n = tokens.len();
        let hidden = self.forward.input;
        let mut fwd = Vec::with_capacity(n);
        let mut bwd = Vec::with_capacity(n);
        for (k, tok) in tokens.iter().enumerate() {
            let hf = if k == 0 { g.zeros(hidden) } else { ctx.first_forward[k - 1] };
            let hf = dropout(g, hf, rate, rng.as_deref_mut())?;
            let lf = self.forward.forward(g, hf)?;
            fwd.push(softmax_cross_entropy(g, lf, tok.word_id)?);
            let hb = if k + 1 == n { g.zeros(hidden) } else { ctx.first_backward[k + 1] };
            let hb = dropout(g, hb, rate, rng.as_deref_mut())?;
            let lb = self.backward.forward(g, hb)?;
            bwd.push(softmax_cross_entropy(g, lb, tok.word_id)?);
        }
        Ok((fwd, bwd))
    }

    /// Summed, unweighted LM loss of both heads.
    pub fn loss(
        &self,
        g: &mut Graph,
        ctx: &Contextualized,
        tokens: &[Token],
        rate: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (f, b) = self.token_losses(g, ctx, tokens, rate, rng)?;
        let all: Vec<Var> = f.into_iter().chain(b).collect();
        Ok(g.sum_scalars(&all))
    }
}

/// `crf_nll + γ · (forward LM NLL + backward LM NLL)` for one sentence,
/// returned as `(total, crf, lm)`.
pub fn multitask_loss(model: &TaggerModel, sentence: &crate::corpus::LabeledSentence) -> Result<(f64, f64, f64)> {
    if model.tagger.heads.is_none() {
        return Err(Error::config("model has no language-model heads"));
    }
    let corpus = LabeledCorpus::new(vec![sentence.clone()], crate::corpus::Split::Train, "");
    let ex = model.examples(&corpus, Parallelism::Sequential)?.remove(0);
    let mut g = Graph::new(&model.params);
    let (_, parts) = model.tagger.loss(&mut g, &ex, None)?;
    Ok((parts.total, parts.crf, parts.lm))
}

/// Train the multitask baseline on the target corpus alone.
pub fn train_multitask(
    train: &LabeledCorpus,
    dev: &LabeledCorpus,
    config: &TaggerConfig,
    settings: &TrainSettings,
    parallelism: Parallelism,
) -> Result<TaggerTraining> {
    let config = TaggerConfig {
        lm_gamma: Some(config.lm_gamma.unwrap_or(DEFAULT_GAMMA)),
        ..config.clone()
    };
    let name = format!("Multitask[{}]", train.domain);
    let mut model = TaggerModel::new(&config, tagger_vocab(train, dev), None, &name, settings.seed)?;
    model.manifest.target_domain = Some(train.domain.clone());
    run_tagger(model, train, dev, settings, parallelism)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check_with_floor, Gradients};
    use crate::harness::checkpoint::ModelKind;
    use crate::tagger::tests::{small_config, toy};
    use crate::tagger::{train_tagger, TaggerObjective};
    use crate::train::Objective;

    fn with_gamma(gamma: f64) -> TaggerConfig {
        TaggerConfig {
            lm_gamma: Some(gamma),
            ..small_config()
        }
    }

    fn settings() -> TrainSettings {
        TrainSettings {
            learning_rate: 0.02,
            batch_size: 2,
            epochs: 5,
            patience: 50,
            l2: 0.0,
            ..TrainSettings::default()
        }
    }

    #[test]
    fn zero_gamma_is_plain_crf() {
        let c = toy();
        let m = TaggerModel::new(&with_gamma(0.0), tagger_vocab(&c, &c), None, "m", 2).unwrap();
        for s in &c.sentences {
            let (total, crf, lm) = multitask_loss(&m, s).unwrap();
            assert_eq!(total, crf);
            assert!(lm > 0.0);
        }
    }

    #[test]
    fn zero_heads_give_uniform_lm_loss() {
        let c = toy();
        let mut m = TaggerModel::new(&with_gamma(0.3), tagger_vocab(&c, &c), None, "m", 2).unwrap();
        let heads = m.tagger.heads.clone().unwrap();
        for lin in [heads.forward, heads.backward] {
            m.params.get_mut(lin.weight).fill(0.0);
            m.params.get_mut(lin.bias).fill(0.0);
        }
        let v = m.vocab().word_count() as f64;
        let s = &c.sentences[2];
        let (total, crf, lm) = multitask_loss(&m, s).unwrap();
        let expected = 2.0 * s.len() as f64 * v.ln();
        assert!((lm - expected).abs() < 1e-9);
        assert!((total - crf - 0.3 * expected).abs() < 1e-9);
    }

    #[test]
    fn heads_read_only_their_direction() {
        let c = toy();
        let m = TaggerModel::new(&with_gamma(1.0), tagger_vocab(&c, &c), None, "m", 2).unwrap();
        let heads = m.tagger.heads.as_ref().unwrap();
        let losses = |words: &[&str]| {
            let tokens = m.vocab().index_sentence(words);
            let mut g = Graph::new(&m.params);
            let ctx = m.tagger.contextualize(&mut g, &tokens, None, None).unwrap();
            let (f, b) = heads.token_losses(&mut g, &ctx, &tokens, 0.0, None).unwrap();
            (
                f.iter().map(|&v| g.scalar(v)).collect::<Vec<_>>(),
                b.iter().map(|&v| g.scalar(v)).collect::<Vec<_>>(),
            )
        };
        let (fa, ba) = losses(&["budi", "makan", "di", "jakarta"]);
        let (fb, bb) = losses(&["budi", "makan", "ke", "bogor"]);
        // targets equal and context before k equal for k <= 1
        assert_eq!(fa[..2], fb[..2]);
        let (_, bc) = losses(&["ani", "pergi", "di", "jakarta"]);
        assert_eq!(ba[2..], bc[2..]);
        assert_ne!(ba[1], bb[1]);
    }

    #[test]
    fn zero_gamma_trajectory_matches_plain_tagger() {
        let c = toy();
        let plain = train_tagger(&c, &c, None, &small_config(), &settings(), Parallelism::Rayon).unwrap();
        let multi = train_multitask(&c, &c, &with_gamma(0.0), &settings(), Parallelism::Rayon).unwrap();
        assert_eq!(plain.history, multi.history);
        assert_eq!(multi.model.manifest.kind, ModelKind::Multitask);
        assert_eq!(multi.model.manifest.external["lm"], "none");
        assert!(multi.model.manifest.lineage.is_empty());
    }

    #[test]
    fn both_components_decrease() {
        let c = toy();
        let cfg = with_gamma(0.5);
        let s = settings();
        let m0 = TaggerModel::new(&cfg, tagger_vocab(&c, &c), None, "m", s.seed).unwrap();
        let sum = |m: &TaggerModel| {
            c.sentences.iter().fold((0.0, 0.0), |acc, s| {
                let (_, crf, lm) = multitask_loss(m, s).unwrap();
                (acc.0 + crf, acc.1 + lm)
            })
        };
        let before = sum(&m0);
        let trained = train_multitask(&c, &c, &cfg, &s, Parallelism::Rayon).unwrap();
        let after = sum(&trained.model);
        assert!(after.0 < before.0 && after.1 < before.1, "{before:?} -> {after:?}");
        let again = train_multitask(&c, &c, &cfg, &s, Parallelism::Sequential).unwrap();
        assert_eq!(again.model.params, trained.model.params);
    }

    #[test]
    fn multitask_gradient_matches_finite_differences() {
        let c = toy();
        let cfg = TaggerConfig {
            word_dim: 3,
            char_dim: 2,
            char_filters: 3,
            hidden: 3,
            ..with_gamma(0.7)
        };
        let m = TaggerModel::new(&cfg, tagger_vocab(&c, &c), None, "m", 4).unwrap();
        let ex = m.examples(&c, Parallelism::Sequential).unwrap();
        let obj = TaggerObjective { tagger: &m.tagger };
        let check = finite_diff_check_with_floor(&m.params, 1e-4, 1e-6, |p, grads| {
            let mut local = Gradients::for_params(p);
            let loss = obj.example_loss(p, &ex[2], None, &mut local).unwrap().0;
            if let Some(g) = grads {
                *g = local;
            }
            loss
        })
        .unwrap();
        assert!(check.max_rel_error <= 1e-4, "{check:?}");
    }
}
