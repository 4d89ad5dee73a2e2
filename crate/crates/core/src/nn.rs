//! A small multilayer perceptron with exact backpropagation, enough to
//! carry the actor and critic networks.
//!
//! Two output heads exist: a row-softmax head that turns `|S| * |X|`
//! logits into a row-stochastic action matrix, and a scalar affine
//! head for critics. Hidden layers are rectified. Exploration hooks:
//! Gaussian noise can be added to the last hidden layer's
//! pre-activation, and inverted dropout can mask hidden units.
//!
//! Everything is plain `f64` vectors; each forward pass records a tape
//! from which `backward` produces exact parameter and input gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{ActionMatrix, BeliefState};
use crate::error::{Error, Result};

/// Output head of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Reshape the output layer into `rows x cols` and softmax each row.
    RowSoftmax { rows: usize, cols: usize },
    /// Single affine output.
    Scalar,
}

/// A feed-forward network: rectified hidden layers plus a head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    input_dim: usize,
    hidden: Vec<usize>,
    head: Head,
    /// Row-major `out x in` weight matrix per layer (hidden layers then
    /// the output layer).
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    /// Dropout rate in `[0, 1)` applied to hidden activations when a
    /// mask is requested.
    dropout: f64,
}

/// Per-parameter partials, shaped like the network's parameters.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &MlpPolicy) -> Self {
        Self {
            d_weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in self.d_weights.iter_mut().chain(self.d_biases.iter_mut()) {
            for v in w.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        for w in self.d_weights.iter().chain(self.d_biases.iter()) {
            for v in w {
                s += v * v;
            }
        }
        s.sqrt()
    }

    /// Rescales in place so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.l2_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights
            .iter()
            .chain(self.d_biases.iter())
            .all(|w| w.iter().all(|v| v.is_finite()))
    }
}

/// Recorded forward pass: inputs, pre-activations, post-activations,
/// and the head output, plus any dropout masks that were applied.
#[derive(Debug, Clone)]
pub struct Tape {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    output: Vec<f64>,
    masks: Option<Vec<Vec<f64>>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl MlpPolicy {
    /// Actor: belief in, row-stochastic `n_states x n_inputs` matrix
    /// out. Weights are fan-in uniform, seeded by the caller's RNG.
    pub fn actor<R: Rng + ?Sized>(
        belief_dim: usize,
        n_states: usize,
        n_inputs: usize,
        hidden: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(
            belief_dim,
            hidden,
            Head::RowSoftmax {
                rows: n_states,
                cols: n_inputs,
            },
            dropout,
            rng,
        )
    }

    /// Critic: `(belief, action)` in, scalar out.
    pub fn critic<R: Rng + ?Sized>(
        belief_dim: usize,
        n_states: usize,
        n_inputs: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(
            belief_dim + n_states * n_inputs,
            hidden,
            Head::Scalar,
            0.0,
            rng,
        )
    }

    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        head: Head,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must lie in [0,1), got {dropout}"
            )));
        }
        let out_dim = match head {
            Head::RowSoftmax { rows, cols } => {
                if rows == 0 || cols == 0 {
                    return Err(Error::InvalidArgument("empty action matrix head".into()));
                }
                rows * cols
            }
            Head::Scalar => 1,
        };
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            input_dim,
            hidden: hidden.to_vec(),
            head,
            weights,
            biases,
            dropout,
        })
    }

    /// All-zero weights; useful as a neutral starting point (softmax of
    /// zeros is uniform, scalar head outputs 0).
    pub fn zeroed(mut self) -> Self {
        for w in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    #[inline]
    pub fn head(&self) -> Head {
        self.head
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn dropout_rate(&self) -> f64 {
        self.dropout
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn last_hidden_width(&self) -> Option<usize> {
        self.hidden.last().copied()
    }

    /// Fresh inverted-dropout masks for each hidden layer.
    pub fn sample_dropout_masks<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let keep = 1.0 - self.dropout;
        self.hidden
            .iter()
            .map(|&w| {
                (0..w)
                    .map(|_| {
                        if self.dropout > 0.0 && rng.gen::<f64>() < self.dropout {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Runs the network, recording a tape. `noise` (if any) is added to
    /// the last hidden layer's pre-activation; `masks` (if any) scale
    /// the hidden activations.
    pub fn forward(
        &self,
        input: &[f64],
        noise: Option<&[f64]>,
        masks: Option<&[Vec<f64>]>,
    ) -> Result<Tape> {
        if input.len() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} entries, network expects {}",
                input.len(),
                self.input_dim
            )));
        }
        if let Some(nz) = noise {
            let want = self.last_hidden_width().unwrap_or(0);
            if nz.len() != want {
                return Err(Error::ShapeMismatch(format!(
                    "noise has {} entries, last hidden layer has {want}",
                    nz.len()
                )));
            }
        }
        if let Some(ms) = masks {
            if ms.len() != self.hidden.len() || ms.iter().zip(&self.hidden).any(|(m, &w)| m.len() != w)
            {
                return Err(Error::ShapeMismatch("dropout masks mis-shaped".into()));
            }
        }
        let n_layers = self.weights.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(self.hidden.len());
        let mut cur = input.to_vec();
        for l in 0..n_layers {
            let out_dim = self.biases[l].len();
            let in_dim = cur.len();
            let mut z = self.biases[l].clone();
            for o in 0..out_dim {
                let row = &self.weights[l][o * in_dim..(o + 1) * in_dim];
                z[o] += row.iter().zip(&cur).map(|(w, v)| w * v).sum::<f64>();
            }
            let is_last_hidden = !self.hidden.is_empty() && l + 2 == n_layers;
            if is_last_hidden {
                if let Some(nz) = noise {
                    for (zv, nv) in z.iter_mut().zip(nz) {
                        *zv += nv;
                    }
                }
            }
            pre.push(z.clone());
            if l < n_layers - 1 {
                let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
                if let Some(ms) = masks {
                    for (av, mv) in a.iter_mut().zip(&ms[l]) {
                        *av *= mv;
                    }
                }
                post.push(a.clone());
                cur = a;
            } else {
                cur = z;
            }
        }
        let output = match self.head {
            Head::Scalar => cur,
            Head::RowSoftmax { rows, cols } => {
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    let row = &cur[r * cols..(r + 1) * cols];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut denom = 0.0;
                    for (j, &v) in row.iter().enumerate() {
                        let e = (v - max).exp();
                        out[r * cols + j] = e;
                        denom += e;
                    }
                    for j in 0..cols {
                        out[r * cols + j] /= denom;
                    }
                }
                out
            }
        };
        Ok(Tape {
            input: input.to_vec(),
            pre,
            post,
            output,
            masks: masks.map(|m| m.to_vec()),
        })
    }

    /// Actor convenience: belief to action matrix.
    pub fn actor_forward(
        &self,
        z: &BeliefState,
        noise: Option<&[f64]>,
        masks: Option<&[Vec<f64>]>,
    ) -> Result<ActionMatrix> {
        let Head::RowSoftmax { rows, cols } = self.head else {
            return Err(Error::InvalidArgument(
                "actor_forward on a scalar-head network".into(),
            ));
        };
        let tape = self.forward(z.probs(), noise, masks)?;
        ActionMatrix::new(rows, cols, tape.output.clone())
    }

    /// Critic convenience: `(belief, action)` to scalar.
    pub fn critic_forward(&self, z: &BeliefState, u: &ActionMatrix) -> Result<f64> {
        if self.head != Head::Scalar {
            return Err(Error::InvalidArgument(
                "critic_forward on a softmax-head network".into(),
            ));
        }
        let tape = self.forward(&critic_input(z, u), None, None)?;
        Ok(tape.output[0])
    }

    /// Exact gradients of `sum(upstream * output)` with respect to all
    /// parameters and to the input vector.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(GradientSet, Vec<f64>)> {
        if upstream.len() != tape.output.len() {
            return Err(Error::ShapeMismatch(format!(
                "upstream has {} entries, output has {}",
                upstream.len(),
                tape.output.len()
            )));
        }
        let n_layers = self.weights.len();
        if tape.pre.len() != n_layers {
            return Err(Error::InvalidArgument(
                "tape does not match this network".into(),
            ));
        }
        let mut grads = GradientSet::zeros_like(self);
        // Head backward into the output layer's pre-activation.
        let mut delta: Vec<f64> = match self.head {
            Head::Scalar => upstream.to_vec(),
            Head::RowSoftmax { rows, cols } => {
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let u_row = &tape.output[r * cols..(r + 1) * cols];
                    let g_row = &upstream[r * cols..(r + 1) * cols];
                    let dot: f64 = u_row.iter().zip(g_row).map(|(u, g)| u * g).sum();
                    for j in 0..cols {
                        d[r * cols + j] = u_row[j] * (g_row[j] - dot);
                    }
                }
                d
            }
        };
        for l in (0..n_layers).rev() {
            let below: &[f64] = if l == 0 { &tape.input } else { &tape.post[l - 1] };
            let in_dim = below.len();
            let out_dim = delta.len();
            for o in 0..out_dim {
                let dw = &mut grads.d_weights[l][o * in_dim..(o + 1) * in_dim];
                for (i, &b) in below.iter().enumerate() {
                    dw[i] += delta[o] * b;
                }
                grads.d_biases[l][o] += delta[o];
            }
            // Gradient into the layer below.
            let mut d_below = vec![0.0; in_dim];
            for o in 0..out_dim {
                let row = &self.weights[l][o * in_dim..(o + 1) * in_dim];
                for (i, &w) in row.iter().enumerate() {
                    d_below[i] += w * delta[o];
                }
            }
            if l == 0 {
                return Ok((grads, d_below));
            }
            // Through dropout mask and rectifier of hidden layer l-1.
            let pre = &tape.pre[l - 1];
            if let Some(masks) = &tape.masks {
                for (v, m) in d_below.iter_mut().zip(&masks[l - 1]) {
                    *v *= m;
                }
            }
            for (v, &p) in d_below.iter_mut().zip(pre) {
                if p <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = d_below;
        }
        // Networks always have at least one layer, so the loop returned.
        unreachable!("backward exits at layer 0");
    }

    pub fn checkpoint_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Critic input layout: belief entries then the flattened action.
pub fn critic_input(z: &BeliefState, u: &ActionMatrix) -> Vec<f64> {
    let mut v = Vec::with_capacity(z.dim() + u.entries().len());
    v.extend_from_slice(z.probs());
    v.extend_from_slice(u.entries());
    v
}

/// Polyak averaging: `target <- alpha * source + (1 - alpha) * target`.
pub fn soft_update(target: &mut MlpPolicy, source: &MlpPolicy, alpha: f64) -> Result<()> {
    if target.weights.len() != source.weights.len()
        || target
            .weights
            .iter()
            .zip(&source.weights)
            .any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::ShapeMismatch(
            "target and source networks differ in shape".into(),
        ));
    }
    for (t, s) in target
        .weights
        .iter_mut()
        .zip(&source.weights)
        .chain(target.biases.iter_mut().zip(&source.biases))
    {
        for (tv, sv) in t.iter_mut().zip(s) {
            *tv = alpha * sv + (1.0 - alpha) * tv;
        }
    }
    Ok(())
}

/// Adaptive-moment optimizer over a network's parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Option<GradientSet>,
    v: Option<GradientSet>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: None,
            v: None,
        }
    }

    /// Moves parameters along `direction * gradient` (`+1.0` to ascend,
    /// `-1.0` to descend). Non-finite gradients surface as an error and
    /// the step is skipped.
    pub fn step(
        &mut self,
        net: &mut MlpPolicy,
        grads: &GradientSet,
        direction: f64,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient update skipped".into()));
        }
        if self.m.is_none() {
            self.m = Some(GradientSet::zeros_like(net));
            self.v = Some(GradientSet::zeros_like(net));
        }
        let (m, v) = (self.m.as_mut().unwrap(), self.v.as_mut().unwrap());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] += direction * self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        };
        for l in 0..net.weights.len() {
            apply(
                &mut net.weights[l],
                &grads.d_weights[l],
                &mut m.d_weights[l],
                &mut v.d_weights[l],
            );
            apply(
                &mut net.biases[l],
                &grads.d_biases[l],
                &mut m.d_biases[l],
                &mut v.d_biases[l],
            );
        }
        Ok(())
    }
}
