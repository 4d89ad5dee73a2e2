//! The feedback-capacity MDP: belief states over the channel state,
//! row-stochastic action matrices, the Bayes (BCJR) belief recursion,
//! the mutual-information reward, and Monte-Carlo rate evaluation.
//!
//! All operations are pure functions of their inputs plus an explicit
//! RNG handle, so parallel rollouts only need independent RNG streams.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{UnifilarChannel, PROB_EPS};
use crate::error::{Error, Result};

/// Posterior distribution of the channel state given past outputs.
///
/// Entries are clamped at [`PROB_EPS`] and renormalized after every
/// update, which prevents drift over million-step rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    probs: Vec<f64>,
}

impl BeliefState {
    /// Validates, clamps tiny entries to zero, and renormalizes.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty belief".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(
                "belief entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidArgument("belief sums to zero".into()));
        }
        let mut z = Self { probs };
        z.renormalize();
        Ok(z)
    }

    /// Deterministic belief concentrated on `state`.
    pub fn corner(dim: usize, state: usize) -> Self {
        assert!(state < dim);
        let mut probs = vec![0.0; dim];
        probs[state] = 1.0;
        Self { probs }
    }

    pub fn uniform(dim: usize) -> Self {
        Self {
            probs: vec![1.0 / dim as f64; dim],
        }
    }

    /// Uniform sample from the probability simplex (via exponential
    /// spacings).
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut probs: Vec<f64> = (0..dim)
            .map(|_| -(rng.gen::<f64>().max(f64::MIN_POSITIVE)).ln())
            .collect();
        let sum: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= sum;
        }
        let mut z = Self { probs };
        z.renormalize();
        z
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Max-norm distance between two beliefs.
    pub fn max_norm_distance(&self, other: &[f64]) -> f64 {
        self.probs
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn renormalize(&mut self) {
        for p in self.probs.iter_mut() {
            if *p < PROB_EPS {
                *p = 0.0;
            }
        }
        let sum: f64 = self.probs.iter().sum();
        for p in self.probs.iter_mut() {
            *p /= sum;
        }
    }
}

/// Row-stochastic `|S| x |X|` matrix: row `s` is the input distribution
/// used when the channel state is `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMatrix {
    n_states: usize,
    n_inputs: usize,
    /// Row-major `u(x|s)` indexed by `s * n_inputs + x`.
    rows: Vec<f64>,
}

impl ActionMatrix {
    pub fn new(n_states: usize, n_inputs: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != n_states * n_inputs {
            return Err(Error::ShapeMismatch(format!(
                "action matrix needs {} entries, got {}",
                n_states * n_inputs,
                rows.len()
            )));
        }
        for s in 0..n_states {
            let row = &rows[s * n_inputs..(s + 1) * n_inputs];
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "action row {s} has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "action row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_inputs,
            rows,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            n_states: n,
            n_inputs: n,
            rows: vec![1.0 / n as f64; n * n],
        }
    }

    /// Deterministic action: from every state, transmit `per_state[s]`.
    pub fn deterministic(n: usize, per_state: &[usize]) -> Self {
        assert_eq!(per_state.len(), n);
        let mut rows = vec![0.0; n * n];
        for (s, &x) in per_state.iter().enumerate() {
            assert!(x < n);
            rows[s * n + x] = 1.0;
        }
        Self {
            n_states: n,
            n_inputs: n,
            rows,
        }
    }

    #[inline]
    pub fn prob(&self, s: usize, x: usize) -> f64 {
        self.rows[s * self.n_inputs + x]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s * self.n_inputs..(s + 1) * self.n_inputs]
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    #[inline]
    pub fn entries(&self) -> &[f64] {
        &self.rows
    }
}

/// One environment step: the deterministic reward, the sampled channel
/// output (the MDP disturbance), and the updated belief.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub disturbance: usize,
    pub next_belief: BeliefState,
}

fn check_dims(ch: &UnifilarChannel, z: &BeliefState, u: &ActionMatrix) -> Result<()> {
    let n = ch.alphabet_size();
    if z.dim() != n || u.n_states() != n || u.n_inputs() != n {
        return Err(Error::ShapeMismatch(format!(
            "channel has alphabet {n}, belief dim {}, action {}x{}",
            z.dim(),
            u.n_states(),
            u.n_inputs()
        )));
    }
    Ok(())
}

/// Output law `P(y) = sum_{x,s} z(s) u(x|s) p(y|x,s)`.
pub fn output_prob(ch: &UnifilarChannel, z: &BeliefState, u: &ActionMatrix) -> Result<Vec<f64>> {
    check_dims(ch, z, u)?;
    Ok(output_prob_unchecked(ch, z.probs(), u))
}

fn output_prob_unchecked(ch: &UnifilarChannel, z: &[f64], u: &ActionMatrix) -> Vec<f64> {
    let n = ch.alphabet_size();
    let mut py = vec![0.0; n];
    for s in 0..n {
        let zs = z[s];
        if zs == 0.0 {
            continue;
        }
        for x in 0..n {
            let w = zs * u.prob(s, x);
            if w == 0.0 {
                continue;
            }
            let row = ch.transition_prob(x, s).expect("in range");
            for y in 0..n {
                py[y] += w * row[y];
            }
        }
    }
    py
}

/// Unnormalized posterior over the next state after observing `y`,
/// together with the marginal `P(y)`. No clamping; smooth in `(z, u)`.
pub(crate) fn bcjr_raw(
    ch: &UnifilarChannel,
    z: &[f64],
    u: &ActionMatrix,
    y: usize,
) -> (Vec<f64>, f64) {
    let n = ch.alphabet_size();
    let mut post = vec![0.0; n];
    let mut py = 0.0;
    for s in 0..n {
        let zs = z[s];
        if zs == 0.0 {
            continue;
        }
        for x in 0..n {
            let mass = zs * u.prob(s, x) * ch.prob(y, x, s);
            if mass > 0.0 {
                post[ch.next_state_unchecked(x, s, y)] += mass;
                py += mass;
            }
        }
    }
    (post, py)
}

/// The Bayes (BCJR) belief recursion: posterior over the next channel
/// state given that output `y` was observed.
pub fn bcjr_update(
    ch: &UnifilarChannel,
    z: &BeliefState,
    u: &ActionMatrix,
    y: usize,
) -> Result<BeliefState> {
    check_dims(ch, z, u)?;
    if y >= ch.alphabet_size() {
        return Err(Error::InvalidArgument(format!("output {y} out of range")));
    }
    let (mut post, py) = bcjr_raw(ch, z.probs(), u, y);
    if py <= 0.0 {
        return Err(Error::ImpossibleObservation { y });
    }
    for p in post.iter_mut() {
        *p /= py;
    }
    BeliefState::new(post)
}

/// Expected one-step reward `I(X,S;Y)` in bits under `(z, u)`:
/// `H(Y) - sum_{x,s} z(s) u(x|s) H(Y|x,s)`, with `0 log 0 = 0`.
pub fn reward(ch: &UnifilarChannel, z: &BeliefState, u: &ActionMatrix) -> Result<f64> {
    check_dims(ch, z, u)?;
    Ok(reward_unchecked(ch, z.probs(), u))
}

fn reward_unchecked(ch: &UnifilarChannel, z: &[f64], u: &ActionMatrix) -> f64 {
    let n = ch.alphabet_size();
    let py = output_prob_unchecked(ch, z, u);
    let h_out: f64 = -py
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>();
    let mut h_cond = 0.0;
    for s in 0..n {
        let zs = z[s];
        if zs == 0.0 {
            continue;
        }
        for x in 0..n {
            let w = zs * u.prob(s, x);
            if w > 0.0 {
                h_cond += w * ch.output_entropy(x, s);
            }
        }
    }
    h_out - h_cond
}

/// Reward together with its exact partial derivatives with respect to
/// the belief entries and the (unconstrained) action entries.
///
/// Outputs with `P(y) = 0` contribute nothing to either the value or
/// the gradient.
pub fn reward_grad(
    ch: &UnifilarChannel,
    z: &[f64],
    u: &ActionMatrix,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = ch.alphabet_size();
    let py = output_prob_unchecked(ch, z, u);
    let inv_ln2 = std::f64::consts::LOG2_E;
    // d H(P_Y) / d P(y) = -(log2 P(y) + 1/ln 2)
    let dh: Vec<f64> = py
        .iter()
        .map(|&p| if p > 0.0 { -(p.log2() + inv_ln2) } else { 0.0 })
        .collect();
    let h_out: f64 = -py
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>();
    let mut value = h_out;
    let mut dz = vec![0.0; n];
    let mut du = vec![0.0; n * n];
    for s in 0..n {
        for x in 0..n {
            let row = ch.transition_prob(x, s).expect("in range");
            let hxs = ch.output_entropy(x, s);
            let mut dpy_term = 0.0;
            for y in 0..n {
                if row[y] > 0.0 {
                    dpy_term += row[y] * dh[y];
                }
            }
            let w = z[s] * u.prob(s, x);
            if w > 0.0 {
                value -= w * hxs;
            }
            du[s * n + x] = z[s] * (dpy_term - hxs);
            dz[s] += u.prob(s, x) * (dpy_term - hxs);
        }
    }
    (value, dz, du)
}

/// Jacobians of the normalized BCJR update `z' = f(z, u, y)`:
/// `dz'/dz` is `n x n` (row-major over `(s', s)`) and `dz'/du` is
/// `n x n^2` (row-major over `(s', (s,x))`). Returns `None` when the
/// observation has zero probability.
#[allow(clippy::type_complexity)]
pub fn bcjr_grad(
    ch: &UnifilarChannel,
    z: &[f64],
    u: &ActionMatrix,
    y: usize,
) -> Option<(Vec<f64>, f64, Vec<f64>, Vec<f64>)> {
    let n = ch.alphabet_size();
    let (post, py) = bcjr_raw(ch, z, u, y);
    if py <= 0.0 {
        return None;
    }
    let znext: Vec<f64> = post.iter().map(|p| p / py).collect();
    // d post(s')/dz(s) and d P(y)/dz(s); same for u. Quotient rule:
    // dz'(s')/dtheta = (dpost(s')/dtheta - z'(s') dpy/dtheta) / py.
    let mut dz = vec![0.0; n * n];
    let mut du = vec![0.0; n * n * n];
    for s in 0..n {
        for x in 0..n {
            let k = ch.prob(y, x, s);
            if k == 0.0 {
                continue;
            }
            let sp = ch.next_state_unchecked(x, s, y);
            // via z(s): weight u(x|s) k
            let wz = u.prob(s, x) * k;
            for t in 0..n {
                let dpost = if t == sp { wz } else { 0.0 };
                dz[t * n + s] += (dpost - znext[t] * wz) / py;
            }
            // via u(s,x): weight z(s) k
            let wu = z[s] * k;
            for t in 0..n {
                let dpost = if t == sp { wu } else { 0.0 };
                du[t * n * n + s * n + x] += (dpost - znext[t] * wu) / py;
            }
        }
    }
    Some((znext, py, dz, du))
}

/// Samples an output, computes the reward, and advances the belief.
pub fn env_step<R: Rng + ?Sized>(
    ch: &UnifilarChannel,
    z: &BeliefState,
    u: &ActionMatrix,
    rng: &mut R,
) -> Result<StepOutcome> {
    check_dims(ch, z, u)?;
    let py = output_prob_unchecked(ch, z.probs(), u);
    let y = sample_categorical(&py, rng);
    let r = reward_unchecked(ch, z.probs(), u);
    let next_belief = bcjr_update(ch, z, u, y)?;
    Ok(StepOutcome {
        reward: r,
        disturbance: y,
        next_belief,
    })
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let mut t = rng.gen::<f64>() * probs.iter().sum::<f64>();
    for (i, &p) in probs.iter().enumerate() {
        t -= p;
        if t <= 0.0 && p > 0.0 {
            return i;
        }
    }
    // Fall back on the last symbol with positive mass.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("probability vector has positive mass")
}

/// Average reward of `policy` along one sampled trajectory of length
/// `t_mc`, in bits per channel use.
pub fn monte_carlo_rate<R: Rng + ?Sized>(
    ch: &UnifilarChannel,
    mut policy: impl FnMut(&BeliefState) -> ActionMatrix,
    z0: &BeliefState,
    t_mc: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(monte_carlo_rate_with_std(ch, &mut policy, z0, t_mc, rng)?.0)
}

/// Like [`monte_carlo_rate`] but also returns the standard deviation of
/// the per-step rewards, for sigma-scaled comparisons.
pub fn monte_carlo_rate_with_std<R: Rng + ?Sized>(
    ch: &UnifilarChannel,
    mut policy: impl FnMut(&BeliefState) -> ActionMatrix,
    z0: &BeliefState,
    t_mc: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if t_mc == 0 {
        return Err(Error::InvalidArgument("t_mc must be positive".into()));
    }
    let mut z = z0.clone();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..t_mc {
        let u = policy(&z);
        let step = env_step(ch, &z, &u, rng)?;
        sum += step.reward;
        sum_sq += step.reward * step.reward;
        z = step.next_belief;
    }
    let mean = sum / t_mc as f64;
    let var = (sum_sq / t_mc as f64 - mean * mean).max(0.0);
    Ok((mean, var.sqrt()))
}

/// One row of a rollout trace: step index, sampled output, reward, and
/// the belief that the action was computed from.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: usize,
    pub y: usize,
    pub reward: f64,
    pub belief: Vec<f64>,
}

/// Rolls a policy out and records `(t, y_t, r_t, z_{t-1})` rows for
/// structure extraction.
pub fn rollout_trace<R: Rng + ?Sized>(
    ch: &UnifilarChannel,
    mut policy: impl FnMut(&BeliefState) -> ActionMatrix,
    z0: &BeliefState,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<TraceRow>> {
    let mut z = z0.clone();
    let mut rows = Vec::with_capacity(steps);
    for t in 0..steps {
        let u = policy(&z);
        let step = env_step(ch, &z, &u, rng)?;
        rows.push(TraceRow {
            t,
            y: step.disturbance,
            reward: step.reward,
            belief: z.probs().to_vec(),
        });
        z = step.next_belief;
    }
    Ok(rows)
}

/// Renders trace rows as CSV with header `t,y,r,z0..z{n-1}`.
pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::new();
    if let Some(first) = rows.first() {
        out.push_str("t,y,r");
        for i in 0..first.belief.len() {
            out.push_str(&format!(",z{i}"));
        }
        out.push('\n');
    }
    for row in rows {
        out.push_str(&format!("{},{},{}", row.t, row.y, row.reward));
        for v in &row.belief {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
