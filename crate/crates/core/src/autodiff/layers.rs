//! Differentiable building blocks shared by the language model and the taggers.

use rand::Rng;

use super::graph::{Graph, LocalGrad, Var};
use super::params::{ParamId, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Affine map `W x + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn build<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::uniform_fan_in(&[output, input], rng),
            true,
        )?;
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[output]), true)?;
        Ok(Linear {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.affine(self.weight, Some(self.bias), x)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn build<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = params.add(name.to_string(), Tensor::normal(&[rows, dim], 0.1, rng), true)?;
        Ok(Embedding { table, rows, dim })
    }

    pub fn forward(&self, g: &mut Graph, row: usize) -> Result<Var> {
        if row >= self.rows {
            return Err(Error::input(format!(
                "embedding row {row} out of range for table of {} rows",
                self.rows
            )));
        }
        Ok(g.lookup(self.table, row))
    }
}

/// LSTM cell with input, forget, candidate and output blocks stacked in one
/// `[4H, I + H]` weight matrix (in that order).
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub gates: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn build<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let gates = Linear::build(params, name, input + hidden, 4 * hidden, rng)?;
        Ok(LstmCell {
            gates,
            input,
            hidden,
        })
    }

    /// One time step: returns `(h', c')`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let (xl, hl, cl) = (g.value(x).len(), g.value(h).len(), g.value(c).len());
        if xl != self.input || hl != self.hidden || cl != self.hidden {
            return Err(Error::config(format!(
                "lstm step expects x:{} h:{} c:{}, got x:{xl} h:{hl} c:{cl}",
                self.input, self.hidden, self.hidden
            )));
        }
        let n = self.hidden;
        let xh = g.concat(&[x, h]);
        let z = self.gates.forward(g, xh)?;
        let zi = g.slice(z, 0, n);
        let zf = g.slice(z, n, n);
        let zg = g.slice(z, 2 * n, n);
        let zo = g.slice(z, 3 * n, n);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Run over a whole sequence from zero state. Outputs are returned in
    /// position order regardless of direction.
    pub fn run(&self, g: &mut Graph, inputs: &[Var], reverse: bool) -> Result<Vec<Var>> {
        let mut h = g.zeros(self.hidden);
        let mut c = g.zeros(self.hidden);
        let mut out = vec![h; inputs.len()];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..inputs.len()).rev())
        } else {
            Box::new(0..inputs.len())
        };
        for k in order {
            let (h2, c2) = self.step(g, inputs[k], h, c)?;
            h = h2;
            c = c2;
            out[k] = h;
        }
        Ok(out)
    }
}

/// Free-function form of a single LSTM update.
pub fn lstm_step(g: &mut Graph, cell: &LstmCell, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    cell.step(g, x, h, c)
}

/// `g ⊙ relu(W_h x + b_h) + (1 − g) ⊙ x` with `g = sigmoid(W_g x + b_g)`.
#[derive(Clone, Copy, Debug)]
pub struct Highway {
    pub transform: Linear,
    pub gate: Linear,
    pub dim: usize,
}

impl Highway {
    pub fn build<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        name: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let transform = Linear::build(params, &format!("{name}.transform"), dim, dim, rng)?;
        let gate = Linear::build(params, &format!("{name}.gate"), dim, dim, rng)?;
        Ok(Highway {
            transform,
            gate,
            dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.transform.input != self.transform.output {
            return Err(Error::config("highway transform must be square"));
        }
        let h = self.transform.forward(g, x)?;
        let h = g.relu(h);
        let z = self.gate.forward(g, x)?;
        let gate = g.sigmoid(z);
        let delta = g.sub(h, x)?;
        let mixed = g.mul(gate, delta)?;
        g.add(x, mixed)
    }
}

/// 1-D convolution over character vectors followed by max-over-time pooling.
///
/// Sequences shorter than the kernel are right-padded with zero vectors up
/// to the kernel width, so every word yields at least one window.
#[derive(Clone, Copy, Debug)]
pub struct CharCnn {
    pub filters: Linear,
    pub kernel: usize,
    pub char_dim: usize,
}

impl CharCnn {
    pub fn build<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        name: &str,
        char_dim: usize,
        num_filters: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel == 0 {
            return Err(Error::config("char-CNN kernel width must be positive"));
        }
        let filters = Linear::build(params, name, kernel * char_dim, num_filters, rng)?;
        Ok(CharCnn {
            filters,
            kernel,
            char_dim,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.filters.output
    }

    pub fn forward(&self, g: &mut Graph, chars: &[Var]) -> Result<Var> {
        if chars.is_empty() {
            return Err(Error::input("char-CNN needs at least one character"));
        }
        let mut seq = chars.to_vec();
        while seq.len() < self.kernel {
            let pad = g.zeros(self.char_dim);
            seq.push(pad);
        }
        let mut windows = Vec::with_capacity(seq.len() + 1 - self.kernel);
        for start in 0..=seq.len() - self.kernel {
            let win = g.concat(&seq[start..start + self.kernel]);
            windows.push(self.filters.forward(g, win)?);
        }
        g.max_pool(&windows)
    }
}

/// Free-function form of the char-CNN with max pooling.
pub fn char_cnn_maxpool(g: &mut Graph, cnn: &CharCnn, char_embeddings: &[Var]) -> Result<Var> {
    cnn.forward(g, char_embeddings)
}

/// Free-function form of a highway layer.
pub fn highway_layer(g: &mut Graph, layer: &Highway, x: Var) -> Result<Var> {
    layer.forward(g, x)
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `−log softmax(logits)[target]`; gradient `softmax(logits) − onehot(target)`.
pub fn softmax_cross_entropy(g: &mut Graph, logits: Var, target: usize) -> Result<Var> {
    let z = g.value(logits);
    if target >= z.len() {
        return Err(Error::input(format!(
            "target class {target} out of range for {} logits",
            z.len()
        )));
    }
    let lp = log_softmax(z);
    let loss = -lp[target];
    let mut grad: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    grad[target] -= 1.0;
    Ok(g.custom_scalar(
        loss,
        LocalGrad {
            inputs: vec![(logits, grad)],
            params: Vec::new(),
        },
    ))
}

/// Inverted-dropout mask: kept units are scaled by `1 / (1 − rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, n: usize, rate: f64) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 - rate;
    (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Apply dropout when a generator is supplied; identity otherwise.
pub fn dropout<R: Rng + ?Sized>(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let n = g.value(x).len();
            let mask = dropout_mask(rng, n, rate);
            g.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::Gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_lstm_gives_zero_state() {
        let mut p = ParameterSet::new();
        let cell = LstmCell::build(&mut p, "lstm", 4, 3, &mut rng()).unwrap();
        p.get_mut(cell.gates.weight).fill(0.0);
        let mut g = Graph::new(&p);
        let x = g.constant(vec![0.3, -1.0, 2.0, 0.5]);
        let h = g.zeros(3);
        let c = g.zeros(3);
        let (h2, c2) = lstm_step(&mut g, &cell, x, h, c).unwrap();
        assert_eq!(g.value(h2), &[0.0; 3]);
        assert_eq!(g.value(c2), &[0.0; 3]);
    }

    #[test]
    fn lstm_dims_follow_config() {
        let mut p = ParameterSet::new();
        let cell = LstmCell::build(&mut p, "lstm", 50, 200, &mut rng()).unwrap();
        let mut g = Graph::new(&p);
        let x = g.constant(vec![0.1; 50]);
        let h = g.zeros(200);
        let c = g.zeros(200);
        let (h2, c2) = cell.step(&mut g, x, h, c).unwrap();
        assert_eq!(g.value(h2).len(), 200);
        assert_eq!(g.value(c2).len(), 200);
        let bad = g.constant(vec![0.1; 49]);
        assert!(matches!(cell.step(&mut g, bad, h, c), Err(Error::Config(_))));
    }

    #[test]
    fn highway_gate_saturation() {
        let mut p = ParameterSet::new();
        let hw = Highway::build(&mut p, "hw", 4, &mut rng()).unwrap();
        let x = vec![0.5, -0.25, 1.5, -2.0];

        p.get_mut(hw.gate.bias).fill(-20.0);
        let mut g = Graph::new(&p);
        let xv = g.constant(x.clone());
        let y = highway_layer(&mut g, &hw, xv).unwrap();
        let dev = g.value(y).iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-6, "carry deviation {dev}");

        p.get_mut(hw.gate.bias).fill(20.0);
        let mut g = Graph::new(&p);
        let xv = g.constant(x.clone());
        let y = hw.forward(&mut g, xv).unwrap();
        let t = hw.transform.forward(&mut g, xv).unwrap();
        let expected: Vec<f64> = g.value(t).iter().map(|v| v.max(0.0)).collect();
        for (a, b) in g.value(y).iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn highway_rejects_non_square() {
        let mut p = ParameterSet::new();
        let mut r = rng();
        let hw = Highway {
            transform: Linear::build(&mut p, "t", 4, 3, &mut r).unwrap(),
            gate: Linear::build(&mut p, "g", 4, 4, &mut r).unwrap(),
            dim: 4,
        };
        let mut g = Graph::new(&p);
        let x = g.constant(vec![0.0; 4]);
        assert!(matches!(hw.forward(&mut g, x), Err(Error::Config(_))));
    }

    #[test]
    fn char_cnn_output_width_is_filter_count() {
        let mut p = ParameterSet::new();
        let cnn = CharCnn::build(&mut p, "cnn", 16, 128, 3, &mut rng()).unwrap();
        let mut g = Graph::new(&p);
        let chars: Vec<Var> = (0..5).map(|i| g.constant(vec![i as f64 * 0.1; 16])).collect();
        let out = char_cnn_maxpool(&mut g, &cnn, &chars).unwrap();
        assert_eq!(g.value(out).len(), 128);
    }

    #[test]
    fn char_cnn_self_inner_product() {
        // Filter equal to the only window of a 3-character word.
        let a = [1.0, 2.0];
        let b = [0.5, -1.0];
        let c = [3.0, 0.0];
        let mut p = ParameterSet::new();
        let cnn = CharCnn::build(&mut p, "cnn", 2, 1, 3, &mut rng()).unwrap();
        p.get_mut(cnn.filters.weight)
            .data_mut()
            .copy_from_slice(&[a[0], a[1], b[0], b[1], c[0], c[1]]);
        p.get_mut(cnn.filters.bias).fill(0.0);
        let mut g = Graph::new(&p);
        let chars = [g.constant(a.to_vec()), g.constant(b.to_vec()), g.constant(c.to_vec())];
        let out = cnn.forward(&mut g, &chars).unwrap();
        // 1 + 4 + 0.25 + 1 + 9 + 0
        assert_eq!(g.value(out), &[15.25]);
    }

    #[test]
    fn char_cnn_pads_short_words() {
        let mut p = ParameterSet::new();
        let cnn = CharCnn::build(&mut p, "cnn", 2, 3, 3, &mut rng()).unwrap();
        let w = p.get(cnn.filters.weight).clone();
        let bias = p.value(cnn.filters.bias).to_vec();
        let mut g = Graph::new(&p);
        let ch = g.constant(vec![0.7, -0.2]);
        let out = cnn.forward(&mut g, &[ch]).unwrap();
        let padded = [0.7, -0.2, 0.0, 0.0, 0.0, 0.0];
        for f in 0..3 {
            let expected: f64 =
                bias[f] + w.row(f).iter().zip(&padded).map(|(a, b)| a * b).sum::<f64>();
            assert_eq!(g.value(out)[f], expected);
        }
    }

    #[test]
    fn cross_entropy_identities() {
        let p = ParameterSet::new();
        let mut g = Graph::new(&p);
        let z = g.constant(vec![0.0; 7]);
        let l = softmax_cross_entropy(&mut g, z, 3).unwrap();
        assert!((g.scalar(l) - 7f64.ln()).abs() < 1e-12);

        let mut logits = vec![0.0; 5];
        logits[2] = 1000.0;
        let z = g.constant(logits);
        let l = softmax_cross_entropy(&mut g, z, 2).unwrap();
        assert!(g.scalar(l) <= 1e-6);

        assert!(matches!(softmax_cross_entropy(&mut g, z, 5), Err(Error::Input(_))));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut p = ParameterSet::new();
        let e = p
            .add("z", Tensor::new(vec![3], vec![0.2, -1.0, 0.7]).unwrap(), true)
            .unwrap();
        let mut g = Graph::new(&p);
        let z = g.lookup(e, 0);
        let l = softmax_cross_entropy(&mut g, z, 1).unwrap();
        let mut grads = Gradients::for_params(&p);
        g.backward(l, &mut grads);
        let lp = log_softmax(&[0.2, -1.0, 0.7]);
        let expected = [lp[0].exp(), lp[1].exp() - 1.0, lp[2].exp()];
        for (a, b) in grads.get(e).unwrap().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_mask_scaling() {
        let mut r = rng();
        let m = dropout_mask(&mut r, 1000, 0.5);
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        assert_eq!(dropout_mask(&mut r, 3, 0.0), vec![1.0; 3]);
    }
}
