//! Mini-batch training loop shared by every model.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{add_l2_penalty, adam_update, clip_global_norm, AdamState, Gradients, ParameterSet};
use crate::corpus::make_batches;
use crate::error::{Error, Result};
use crate::parallel::{Parallelism, GRAD_CHUNK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            learning_rate: 0.001,
            clip_norm: 5.0,
            batch_size: 32,
            epochs: 150,
            patience: 25,
            l2: 0.1,
            seed: 1,
        }
    }
}

/// A differentiable per-example objective.
pub trait Objective: Sync {
    type Example: Sync;

    /// Loss of one example plus its averaging weight; the gradient of the
    /// loss is accumulated into `grads`. `rng` is present only in training
    /// mode and drives dropout.
    fn example_loss(
        &self,
        params: &ParameterSet,
        example: &Self::Example,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut Gradients,
    ) -> Result<(f64, f64)>;

    fn example_len(&self, example: &Self::Example) -> usize;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters from the epoch with the best dev metric.
    pub params: ParameterSet,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Mean loss and summed gradient over a set of examples. Chunks are fixed
/// in size and reduced in order, so the result does not depend on the
/// parallelism mode.
pub fn batch_gradient<O: Objective>(
    objective: &O,
    params: &ParameterSet,
    examples: &[&O::Example],
    seeds: Option<&[u64]>,
    parallelism: Parallelism,
) -> Result<(f64, f64, Gradients)> {
    let items: Vec<(usize, Option<u64>)> = (0..examples.len())
        .map(|i| (i, seeds.map(|s| s[i])))
        .collect();
    let parts = parallelism.map_chunks(&items, GRAD_CHUNK, |chunk| -> Result<(f64, f64, Gradients)> {
        let mut grads = Gradients::for_params(params);
        let (mut loss, mut weight) = (0.0, 0.0);
        for &(i, seed) in chunk {
            let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
            let (l, w) = objective.example_loss(params, examples[i], rng.as_mut(), &mut grads)?;
            loss += l;
            weight += w;
        }
        Ok((loss, weight, grads))
    });
    let mut total = Gradients::for_params(params);
    let (mut loss, mut weight) = (0.0, 0.0);
    for part in parts {
        let (l, w, g) = part?;
        loss += l;
        weight += w;
        total.add_assign(&g);
    }
    Ok((loss, weight, total))
}

/// Train with Adam, gradient clipping, L2 and early stopping.
///
/// `validate` returns a dev metric where higher is better; training stops
/// after `patience` epochs without improvement and the best parameters
/// are returned.
pub fn fit<O, V>(
    objective: &O,
    mut params: ParameterSet,
    examples: &[O::Example],
    settings: &TrainSettings,
    parallelism: Parallelism,
    mut validate: V,
) -> Result<FitOutcome>
where
    O: Objective,
    V: FnMut(&ParameterSet) -> Result<f64>,
{
    if examples.is_empty() {
        return Err(Error::input("cannot train on an empty corpus"));
    }
    let lengths: Vec<usize> = examples.iter().map(|e| objective.example_len(e)).collect();
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut best_params = params.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=settings.epochs {
        let batches = make_batches(&lengths, settings.batch_size, rng.next_u64())?;
        let (mut epoch_loss, mut epoch_weight) = (0.0, 0.0);
        for batch in &batches {
            let refs: Vec<&O::Example> = batch.sentence_ids.iter().map(|&i| &examples[i]).collect();
            let seeds: Vec<u64> = refs.iter().map(|_| rng.next_u64()).collect();
            let (loss, weight, mut grads) = batch_gradient(objective, &params, &refs, Some(&seeds), parallelism)?;
            let weight = weight.max(f64::MIN_POSITIVE);
            grads.scale(1.0 / weight);
            let mean = loss / weight + add_l2_penalty(&params, &mut grads, settings.l2);
            if !mean.is_finite() || grads.first_non_finite(&params).is_some() {
                let location = grads
                    .first_non_finite(&params)
                    .unwrap_or_else(|| "loss".to_string());
                return Err(Error::Numeric {
                    location: format!("{location} (epoch {epoch})"),
                });
            }
            clip_global_norm(&mut grads, &params, settings.clip_norm);
            adam_update(&mut params, &grads, &mut state, settings.learning_rate)?;
            if let Err(name) = params.all_finite() {
                return Err(Error::Numeric {
                    location: format!("{name} (epoch {epoch})"),
                });
            }
            epoch_loss += loss;
            epoch_weight += weight;
        }
        let metric = validate(&params)?;
        let train_loss = epoch_loss / epoch_weight;
        log::debug!("epoch {epoch}: train loss {train_loss:.5}, dev metric {metric:.5}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            dev_metric: metric,
        });
        if metric > best_metric {
            best_metric = metric;
            best_epoch = epoch;
            best_params = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= settings.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(FitOutcome {
        params: best_params,
        best_epoch,
        best_metric,
        history,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    /// Least squares on one weight: loss = (w·x − y)².
    struct Line;

    impl Objective for Line {
        type Example = (f64, f64);

        fn example_loss(
            &self,
            params: &ParameterSet,
            ex: &(f64, f64),
            _rng: Option<&mut ChaCha8Rng>,
            grads: &mut Gradients,
        ) -> Result<(f64, f64)> {
            let id = params.id("w").unwrap();
            let w = params.value(id)[0];
            let r = w * ex.0 - ex.1;
            grads.slot_mut(id, 1)[0] += 2.0 * r * ex.0;
            Ok((r * r, 1.0))
        }

        fn example_len(&self, _: &(f64, f64)) -> usize {
            1
        }
    }

    fn params() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.add("w", Tensor::zeros(&[1]), true).unwrap();
        p
    }

    fn settings() -> TrainSettings {
        TrainSettings {
            learning_rate: 0.05,
            l2: 0.0,
            epochs: 200,
            patience: 1000,
            batch_size: 4,
            ..TrainSettings::default()
        }
    }

    #[test]
    fn fits_a_line_and_is_deterministic() {
        let data: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 / 10.0, 3.0 * i as f64 / 10.0)).collect();
        let run = || {
            fit(&Line, params(), &data, &settings(), Parallelism::Rayon, |p| {
                Ok(-(p.value(p.id("w").unwrap())[0] - 3.0).abs())
            })
            .unwrap()
        };
        let a = run();
        assert!((a.params.value(a.params.id("w").unwrap())[0] - 3.0).abs() < 0.05);
        let b = run();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn patience_stops_training() {
        let data = vec![(1.0, 1.0); 4];
        let s = TrainSettings {
            patience: 25,
            ..settings()
        };
        let out = fit(&Line, params(), &data, &s, Parallelism::Sequential, |_| Ok(0.0)).unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.history.len(), 26);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn parallel_and_sequential_match() {
        let data: Vec<(f64, f64)> = (0..37).map(|i| ((i as f64).sin(), (i as f64).cos())).collect();
        let a = fit(&Line, params(), &data, &settings(), Parallelism::Rayon, |_| Ok(0.0)).unwrap();
        let b = fit(&Line, params(), &data, &settings(), Parallelism::Sequential, |_| Ok(0.0)).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn nan_aborts_with_location() {
        let data = vec![(f64::NAN, 1.0)];
        let err = fit(&Line, params(), &data, &settings(), Parallelism::Sequential, |_| Ok(0.0)).unwrap_err();
        match err {
            Error::Numeric { location } => assert!(location.starts_with('w'), "{location}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
