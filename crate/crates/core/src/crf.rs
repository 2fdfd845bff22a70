//! Linear-chain CRF: partition function, likelihood and Viterbi decoding.
//!
//! Scores live in log space. For `n` labels the transition matrix is
//! `(n + 2) × (n + 2)`, row-major, `transitions[from * (n + 2) + to]`, with
//! virtual states `START = n` and `STOP = n + 1`. A path `y` scores
//!
//! `A[START, y0] + Σ_t E[t, y_t] + Σ_{t≥1} A[y_{t−1}, y_t] + A[y_{T−1}, STOP]`.

use crate::autodiff::{log_sum_exp, Graph, LocalGrad, ParamId, Var};
use crate::error::{Error, Result};

/// Transition matrix side for `n` labels.
pub fn transition_side(labels: usize) -> usize {
    labels + 2
}

struct Scores<'a> {
    emissions: &'a [Vec<f64>],
    transitions: &'a [f64],
    n: usize,
}

impl<'a> Scores<'a> {
    fn new(emissions: &'a [Vec<f64>], transitions: &'a [f64]) -> Result<Self> {
        let first = emissions
            .first()
            .ok_or_else(|| Error::input("CRF needs at least one position"))?;
        let n = first.len();
        if n == 0 {
            return Err(Error::input("CRF needs at least one label"));
        }
        if emissions.iter().any(|row| row.len() != n) {
            return Err(Error::input("emission rows differ in width"));
        }
        if emissions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite emission score"));
        }
        let side = transition_side(n);
        if transitions.len() != side * side {
            return Err(Error::input(format!(
                "transition matrix has {} entries, expected {}",
                transitions.len(),
                side * side
            )));
        }
        Ok(Scores {
            emissions,
            transitions,
            n,
        })
    }

    #[inline]
    fn a(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * (self.n + 2) + to]
    }

    fn start(&self) -> usize {
        self.n
    }

    fn stop(&self) -> usize {
        self.n + 1
    }

    fn len(&self) -> usize {
        self.emissions.len()
    }

    /// Forward log-potentials `alpha[t][y]`.
    fn forward(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut alpha = Vec::with_capacity(self.len());
        alpha.push((0..n).map(|y| self.a(self.start(), y) + self.emissions[0][y]).collect::<Vec<_>>());
        let mut buf = vec![0.0; n];
        for t in 1..self.len() {
            let prev = &alpha[t - 1];
            let row: Vec<f64> = (0..n)
                .map(|y| {
                    for (p, b) in buf.iter_mut().enumerate() {
                        *b = prev[p] + self.a(p, y);
                    }
                    log_sum_exp(&buf) + self.emissions[t][y]
                })
                .collect();
            alpha.push(row);
        }
        alpha
    }

    /// Backward log-potentials `beta[t][y]` (excluding position `t` itself).
    fn backward(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let len = self.len();
        let mut beta = vec![vec![0.0; n]; len];
        for y in 0..n {
            beta[len - 1][y] = self.a(y, self.stop());
        }
        let mut buf = vec![0.0; n];
        for t in (0..len - 1).rev() {
            for y in 0..n {
                for (q, b) in buf.iter_mut().enumerate() {
                    *b = self.a(y, q) + self.emissions[t + 1][q] + beta[t + 1][q];
                }
                beta[t][y] = log_sum_exp(&buf);
            }
        }
        beta
    }

    fn log_partition_from(&self, alpha: &[Vec<f64>]) -> f64 {
        let last = alpha.last().expect("nonempty");
        let terms: Vec<f64> = (0..self.n).map(|y| last[y] + self.a(y, self.stop())).collect();
        log_sum_exp(&terms)
    }

    fn path_score(&self, path: &[usize]) -> Result<f64> {
        if path.len() != self.len() {
            return Err(Error::input(format!(
                "path length {} differs from sequence length {}",
                path.len(),
                self.len()
            )));
        }
        if let Some(&bad) = path.iter().find(|&&y| y >= self.n) {
            return Err(Error::input(format!("label {bad} outside label set of {}", self.n)));
        }
        // Same association order as the Viterbi recursion.
        let mut s = self.a(self.start(), path[0]) + self.emissions[0][path[0]];
        for t in 1..path.len() {
            s = s + self.a(path[t - 1], path[t]) + self.emissions[t][path[t]];
        }
        Ok(s + self.a(path[path.len() - 1], self.stop()))
    }
}

/// `log Σ_y exp(score(y))` by the forward recursion.
pub fn crf_log_partition(emissions: &[Vec<f64>], transitions: &[f64]) -> Result<f64> {
    let s = Scores::new(emissions, transitions)?;
    Ok(s.log_partition_from(&s.forward()))
}

pub fn crf_path_score(emissions: &[Vec<f64>], transitions: &[f64], path: &[usize]) -> Result<f64> {
    Scores::new(emissions, transitions)?.path_score(path)
}

/// `log Z − score(gold)`.
pub fn crf_nll(emissions: &[Vec<f64>], transitions: &[f64], gold: &[usize]) -> Result<f64> {
    let s = Scores::new(emissions, transitions)?;
    let gold_score = s.path_score(gold)?;
    Ok(s.log_partition_from(&s.forward()) - gold_score)
}

/// Negative log-likelihood with its gradient with respect to emissions and
/// transitions (expected counts minus gold counts).
#[derive(Clone, Debug)]
pub struct CrfLoss {
    pub nll: f64,
    pub log_partition: f64,
    pub d_emissions: Vec<Vec<f64>>,
    pub d_transitions: Vec<f64>,
}

pub fn crf_nll_with_grad(emissions: &[Vec<f64>], transitions: &[f64], gold: &[usize]) -> Result<CrfLoss> {
    let s = Scores::new(emissions, transitions)?;
    let gold_score = s.path_score(gold)?;
    let alpha = s.forward();
    let beta = s.backward();
    let log_z = s.log_partition_from(&alpha);
    let (n, len, side) = (s.n, s.len(), s.n + 2);

    let mut d_em = vec![vec![0.0; n]; len];
    let mut d_tr = vec![0.0; side * side];
    for t in 0..len {
        for y in 0..n {
            d_em[t][y] = (alpha[t][y] + beta[t][y] - log_z).exp();
        }
    }
    for y in 0..n {
        d_tr[s.start() * side + y] += d_em[0][y];
        d_tr[y * side + s.stop()] += d_em[len - 1][y];
    }
    for t in 1..len {
        for p in 0..n {
            for y in 0..n {
                let lp = alpha[t - 1][p] + s.a(p, y) + emissions[t][y] + beta[t][y] - log_z;
                d_tr[p * side + y] += lp.exp();
            }
        }
    }
    d_tr[s.start() * side + gold[0]] -= 1.0;
    d_tr[gold[len - 1] * side + s.stop()] -= 1.0;
    for t in 0..len {
        d_em[t][gold[t]] -= 1.0;
        if t > 0 {
            d_tr[gold[t - 1] * side + gold[t]] -= 1.0;
        }
    }
    Ok(CrfLoss {
        nll: log_z - gold_score,
        log_partition: log_z,
        d_emissions: d_em,
        d_transitions: d_tr,
    })
}

/// Highest-scoring label sequence and its score. When several predecessors
/// tie, the lowest label index wins; likewise for the final label.
pub fn viterbi(emissions: &[Vec<f64>], transitions: &[f64]) -> Result<(Vec<usize>, f64)> {
    let s = Scores::new(emissions, transitions)?;
    let (n, len) = (s.n, s.len());
    let mut delta: Vec<f64> = (0..n).map(|y| s.a(s.start(), y) + emissions[0][y]).collect();
    let mut back = vec![vec![0usize; n]; len];
    for t in 1..len {
        let mut next = vec![0.0; n];
        for y in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (p, &d) in delta.iter().enumerate() {
                let v = d + s.a(p, y);
                if v > best {
                    best = v;
                    arg = p;
                }
            }
            next[y] = best + emissions[t][y];
            back[t][y] = arg;
        }
        delta = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (y, &d) in delta.iter().enumerate() {
        let v = d + s.a(y, s.stop());
        if v > best {
            best = v;
            last = y;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok((path, best))
}

/// CRF negative log-likelihood as a graph node over per-position emission
/// vectors and a transition parameter.
pub fn crf_nll_node(g: &mut Graph, emissions: &[Var], transitions: ParamId, gold: &[usize]) -> Result<Var> {
    let em: Vec<Vec<f64>> = emissions.iter().map(|&v| g.value(v).to_vec()).collect();
    let tr = g.params().value(transitions);
    let loss = crf_nll_with_grad(&em, tr, gold)?;
    let inputs = emissions.iter().copied().zip(loss.d_emissions).collect();
    Ok(g.custom_scalar(
        loss.nll,
        LocalGrad {
            inputs,
            params: vec![(transitions, loss.d_transitions)],
        },
    ))
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Exhaustive enumeration over all label paths.

    pub fn all_paths(len: usize, n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..n).map(move |y| {
                        let mut q = p.clone();
                        q.push(y);
                        q
                    })
                })
                .collect();
        }
        out
    }

    pub fn score(em: &[Vec<f64>], tr: &[f64], path: &[usize]) -> f64 {
        let n = em[0].len();
        let side = n + 2;
        let mut s = tr[n * side + path[0]];
        for (t, &y) in path.iter().enumerate() {
            s += em[t][y];
            if t > 0 {
                s += tr[path[t - 1] * side + y];
            }
        }
        s + tr[path[path.len() - 1] * side + n + 1]
    }

    pub fn log_partition(em: &[Vec<f64>], tr: &[f64]) -> f64 {
        let scores: Vec<f64> = all_paths(em.len(), em[0].len())
            .iter()
            .map(|p| score(em, tr, p))
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
    }

    /// Best path; among exact ties the one that is smallest when compared
    /// from the last position backwards (the Viterbi backtrack rule).
    pub fn argmax(em: &[Vec<f64>], tr: &[f64]) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for p in all_paths(em.len(), em[0].len()) {
            let s = score(em, tr, &p);
            let better = match &best {
                None => true,
                Some((bp, bs)) => {
                    s > *bs || (s == *bs && p.iter().rev().lt(bp.iter().rev()))
                }
            };
            if better {
                best = Some((p, s));
            }
        }
        best.expect("at least one path")
    }
}
