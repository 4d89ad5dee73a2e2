//! The duality upper bound on feedback capacity.
//!
//! Pairing a channel with a Q-graph and a per-node test distribution
//! yields a *finite* average-reward MDP whose state is `(s, q)`, whose
//! action is the channel input, and whose reward is the KL divergence
//! between the channel's output row and the node's test row. The
//! average reward of that MDP upper-bounds the feedback capacity, so
//! solving it (relative value iteration) or certifying a conjectured
//! value function (Bellman residual check) produces analytic bounds.
//!
//! The module also carries the closed-form machinery for the Ising
//! family: the quartic and quadratic root parameters, the capacity
//! expression for small alphabets, and the bound collection plotted
//! over alphabet sweeps.

use serde::Serialize;

use crate::channel::UnifilarChannel;
use crate::error::{Error, Result};
use crate::qgraph::{small_node, QGraph, TestDistribution};

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.log2();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).log2();
    }
    h
}

/// Shannon entropy of a nonnegative vector (bits).
pub fn entropy_bits(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

// ---------------------------------------------------------------------------
// Root parameters and closed forms
// ---------------------------------------------------------------------------

/// Root in `[0,1]` of `x^4 - ((n-1)^4 + 4) x^3 + 6 x^2 - 4 x + 1`,
/// found by bisection. The sign change over `[0,1]` is guaranteed: the
/// polynomial is `+1` at zero and `-(n-1)^4` at one.
pub fn quartic_root(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "quartic parameter defined for alphabet sizes >= 2, got {n}"
        )));
    }
    let k4 = ((n - 1) as f64).powi(4);
    let poly = |x: f64| x.powi(4) - (k4 + 4.0) * x.powi(3) + 6.0 * x * x - 4.0 * x + 1.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if !(poly(lo) > 0.0 && poly(hi) < 0.0) {
        return Err(Error::Internal(
            "quartic lost its sign change on [0,1]".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = poly(mid);
        if v == 0.0 {
            return Ok(mid);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    Ok(if poly(lo).abs() < poly(mid).abs() {
        lo
    } else {
        mid
    })
}

/// Root in `[0,1]` of `x^2 - (2 + (n-1)^2 / (16 n)) x + 1`, via the
/// product-of-roots form (the two roots multiply to 1, so the small one
/// is `2 / (b + sqrt(b^2 - 4))`).
pub fn quadratic_root(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "quadratic parameter defined for alphabet sizes >= 3, got {n}"
        )));
    }
    let b = 2.0 + ((n - 1) as f64).powi(2) / (16.0 * n as f64);
    Ok(2.0 / (b + (b * b - 4.0).sqrt()))
}

/// The rate of the small-alphabet scheme at repeat probability `p`:
/// `2 (H2(p) + (1-p) log(n-1)) / (p + 3)` bits per use.
pub fn scheme_objective(n: usize, p: f64) -> f64 {
    2.0 * (binary_entropy(p) + (1.0 - p) * ((n - 1) as f64).log2()) / (p + 3.0)
}

/// Feedback capacity of the Ising channel for alphabet sizes 2..=8,
/// returned together with the maximizing repeat probability.
///
/// Computed twice — by golden-section maximization of the scheme
/// objective and by `log(1/p)/2` at the quartic root — and the two
/// routes must agree to 1e-9.
pub fn capacity_small(n: usize) -> Result<(f64, f64)> {
    if !(2..=8).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "closed-form capacity is established for alphabet sizes 2..=8 only \
             (the small-graph value function needs an average reward below 2); got {n}"
        )));
    }
    let (c_max, p_star) = maximize_scheme_objective(n);
    let c_root = 0.5 * (1.0 / quartic_root(n)?).log2();
    if (c_max - c_root).abs() > 1e-9 {
        return Err(Error::Internal(format!(
            "capacity disagreement at n={n}: maximization gives {c_max}, root form gives {c_root}"
        )));
    }
    Ok((c_max, p_star))
}

fn maximize_scheme_objective(n: usize) -> (f64, f64) {
    let f = |p: f64| scheme_objective(n, p);
    // Coarse bracket, then golden-section refinement.
    let mut best_p = 0.0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=1000 {
        let p = i as f64 / 1000.0;
        let v = f(p);
        if v > best_v {
            best_v = v;
            best_p = p;
        }
    }
    let mut lo = (best_p - 2e-3).max(0.0);
    let mut hi = (best_p + 2e-3).min(1.0);
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-12 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        }
    }
    let p_star = 0.5 * (lo + hi);
    (f(p_star), p_star)
}

/// Capacity bound collection for one alphabet size. `cap_small` is the
/// exact capacity (alphabet sizes 2..=8); `ub_large` is the
/// quadratic-root upper bound (>= 3); `ub_34` and `lb_asymp` are the
/// `3/4 log` pair (> 2); `lb_scheme_small` is the best rate of the
/// repeat-coding scheme, a valid lower bound for every alphabet size.
#[derive(Debug, Clone, Serialize)]
pub struct CapacityBounds {
    pub alphabet: usize,
    pub cap_small: Option<f64>,
    pub ub_large: Option<f64>,
    pub ub_34: Option<f64>,
    pub lb_scheme_small: f64,
    pub lb_asymp: Option<f64>,
}

pub fn bounds(n: usize) -> Result<CapacityBounds> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "alphabet size must be >= 2, got {n}"
        )));
    }
    let cap_small = if n <= 8 {
        Some(capacity_small(n)?.0)
    } else {
        None
    };
    let ub_large = if n >= 3 {
        Some(0.5 * (n as f64 / quadratic_root(n)?).log2())
    } else {
        None
    };
    let (ub_34, lb_asymp) = if n > 2 {
        (
            Some(0.75 * (n as f64).log2()),
            Some(0.75 * (n as f64 / 2.0).log2()),
        )
    } else {
        (None, None)
    };
    let lb_scheme_small = match cap_small {
        Some(c) => c,
        None => maximize_scheme_objective(n).0,
    };
    Ok(CapacityBounds {
        alphabet: n,
        cap_small,
        ub_large,
        ub_34,
        lb_scheme_small,
        lb_asymp,
    })
}

// ---------------------------------------------------------------------------
// The duality MDP
// ---------------------------------------------------------------------------

/// Finite MDP over states `(s, q)` with input actions and KL rewards
/// (bits). The transition on `(x, y)` is `(f(x,s,y), phi(q,y))` with
/// probability `p(y|x,s)`.
#[derive(Debug, Clone)]
pub struct DualityMdp {
    channel: UnifilarChannel,
    graph: QGraph,
    /// Reward `R(s,q,x)` indexed by `(s * |Q| + q) * |X| + x`.
    reward: Vec<f64>,
}

impl DualityMdp {
    #[inline]
    pub fn n_channel_states(&self) -> usize {
        self.channel.alphabet_size()
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.graph.node_count()
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.channel.alphabet_size()
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_channel_states() * self.n_nodes()
    }

    #[inline]
    pub fn state_index(&self, s: usize, q: usize) -> usize {
        s * self.n_nodes() + q
    }

    #[inline]
    pub fn reward(&self, s: usize, q: usize, x: usize) -> f64 {
        self.reward[self.state_index(s, q) * self.n_actions() + x]
    }

    pub fn channel(&self) -> &UnifilarChannel {
        &self.channel
    }

    pub fn graph(&self) -> &QGraph {
        &self.graph
    }

    /// One application of the Bellman optimality operator at `(s, q)`:
    /// `max_x [ R(s,q,x) + sum_y p(y|x,s) V(f(x,s,y), phi(q,y)) ]`,
    /// returning the value and the lowest maximizing action.
    fn backup(&self, values: &[f64], s: usize, q: usize) -> (f64, usize) {
        let n = self.n_channel_states();
        let mut best = f64::NEG_INFINITY;
        let mut best_x = 0;
        for x in 0..n {
            let mut v = self.reward(s, q, x);
            let row = self.channel.transition_prob(x, s).expect("in range");
            for (y, &py) in row.iter().enumerate() {
                if py > 0.0 {
                    let sp = self.channel.next_state_unchecked(x, s, y);
                    let qp = self.graph.step(q, y);
                    v += py * values[self.state_index(sp, qp)];
                }
            }
            if v > best {
                best = v;
                best_x = x;
            }
        }
        (best, best_x)
    }
}

/// Builds the duality MDP, failing with the offending `(s, q, x, y)`
/// if the test distribution gives zero mass to an output the channel
/// can produce (which would make the KL reward infinite).
pub fn build_duality_mdp(
    ch: &UnifilarChannel,
    graph: &QGraph,
    t: &TestDistribution,
) -> Result<DualityMdp> {
    let n = ch.alphabet_size();
    if graph.output_count() != n {
        return Err(Error::ShapeMismatch(format!(
            "graph labelled with {} outputs, channel has {n}",
            graph.output_count()
        )));
    }
    if t.node_count() != graph.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "test distribution covers {} nodes, graph has {}",
            t.node_count(),
            graph.node_count()
        )));
    }
    let nq = graph.node_count();
    let mut reward = vec![0.0; n * nq * n];
    for s in 0..n {
        for q in 0..nq {
            for x in 0..n {
                let row = ch.transition_prob(x, s)?;
                let mut kl = 0.0;
                for (y, &py) in row.iter().enumerate() {
                    if py > 0.0 {
                        let ty = t.prob(y, q);
                        if ty <= 0.0 {
                            return Err(Error::InfiniteKl { s, q, x, y });
                        }
                        kl += py * (py / ty).log2();
                    }
                }
                reward[(s * nq + q) * n + x] = kl;
            }
        }
    }
    Ok(DualityMdp {
        channel: ch.clone(),
        graph: graph.clone(),
        reward,
    })
}

/// Solution of the average-reward MDP: the gain `rho` (bits/use), a
/// relative value table over `(s, q)`, and the greedy policy.
#[derive(Debug, Clone)]
pub struct ValueSolution {
    pub rho: f64,
    /// Relative values indexed by `s * |Q| + q`.
    pub values: Vec<f64>,
    /// Greedy action per state, lowest index on ties.
    pub greedy: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// Bellman residual of `(rho, values)` (see [`verify_bellman`]).
    pub residual: f64,
}

/// Damping weight for the aperiodicity transform used inside value
/// iteration. Deterministic optimal policies here can induce periodic
/// chains (known-state and ambiguous nodes alternating), under which
/// undamped iterate differences oscillate instead of settling.
const VI_DAMPING: f64 = 0.5;

/// Relative value iteration with span-seminorm stopping.
///
/// Each sweep applies the damped operator
/// `V <- (1 - tau) V + tau T(V)` and renormalizes against the reference
/// state `(s=0, q=0)`. The iteration stops once the span of successive
/// differences drops below `tol * tau`; the gain is the span midpoint
/// divided by `tau`. Hitting `max_iters` yields a result flagged as
/// non-converged rather than an error.
pub fn value_iteration(mdp: &DualityMdp, tol: f64, max_iters: usize) -> ValueSolution {
    let ns = mdp.n_states();
    let tau = VI_DAMPING;
    let mut values = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut converged = false;
    let mut iterations = 0;
    let mut rho = 0.0;
    for it in 1..=max_iters {
        iterations = it;
        let mut min_d = f64::INFINITY;
        let mut max_d = f64::NEG_INFINITY;
        for s in 0..mdp.n_channel_states() {
            for q in 0..mdp.n_nodes() {
                let i = mdp.state_index(s, q);
                let (backed, _) = mdp.backup(&values, s, q);
                let damped = (1.0 - tau) * values[i] + tau * backed;
                let d = damped - values[i];
                min_d = min_d.min(d);
                max_d = max_d.max(d);
                next[i] = damped;
            }
        }
        rho = 0.5 * (min_d + max_d) / tau;
        let reference = next[0];
        for (v, w) in values.iter_mut().zip(&next) {
            *v = w - reference;
        }
        if max_d - min_d < tol * tau {
            converged = true;
            break;
        }
    }
    let greedy: Vec<usize> = (0..mdp.n_channel_states())
        .flat_map(|s| (0..mdp.n_nodes()).map(move |q| (s, q)))
        .map(|(s, q)| mdp.backup(&values, s, q).1)
        .collect();
    let residual = verify_bellman(mdp, &values, rho).max_residual;
    ValueSolution {
        rho,
        values,
        greedy,
        converged,
        iterations,
        residual,
    }
}

/// Result of checking a candidate `(V, rho)` against the Bellman
/// equation: the largest absolute residual
/// `max_x [R + sum_y p V(next)] - (rho + V(s,q))` and where it occurs.
#[derive(Debug, Clone, Copy)]
pub struct BellmanReport {
    pub max_residual: f64,
    pub worst_state: (usize, usize),
}

impl BellmanReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual <= tol
    }
}

pub fn verify_bellman(mdp: &DualityMdp, values: &[f64], rho: f64) -> BellmanReport {
    assert_eq!(values.len(), mdp.n_states(), "value table covers all states");
    let mut worst = 0.0;
    let mut worst_state = (0, 0);
    for s in 0..mdp.n_channel_states() {
        for q in 0..mdp.n_nodes() {
            let (backed, _) = mdp.backup(values, s, q);
            let r = (backed - rho - values[mdp.state_index(s, q)]).abs();
            if r > worst {
                worst = r;
                worst_state = (s, q);
            }
        }
    }
    BellmanReport {
        max_residual: worst,
        worst_state,
    }
}

/// Closed-form solution of the small-graph duality MDP (alphabet sizes
/// 2..=8): `p` is the quartic root, `rho = log(1/p)/2`, and the value
/// table takes one of four values depending on whether the node knows
/// the state and whether its state matches `s`.
pub fn analytic_value_small(n: usize) -> Result<ValueSolution> {
    if !(2..=8).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "the small-graph value function satisfies the Bellman equation only while \
             the average reward stays below 2, which holds for alphabet sizes 2..=8; got {n}"
        )));
    }
    let p = quartic_root(n)?;
    let rho = 0.5 * (1.0 / p).log2();
    let (graph, t) = crate::qgraph::ising_qgraph_small(n, p)?;
    let ch = UnifilarChannel::ising(n)?;
    let mdp = build_duality_mdp(&ch, &graph, &t)?;
    let nq = graph.node_count();
    let mut values = vec![0.0; n * nq];
    let lg1p = (1.0 + p).log2();
    for s in 0..n {
        for g in 0..n {
            values[s * nq + small_node(n, true, g)] = if g == s { rho } else { 1.0 + 1.5 * rho };
            values[s * nq + small_node(n, false, g)] = if g == s {
                2.0 * rho - 1.0 + lg1p
            } else {
                1.5 * rho + lg1p
            };
        }
    }
    finish_analytic(mdp, rho, values)
}

/// Closed-form solution of the large-graph duality MDP (alphabet sizes
/// >= 3): `p` is the quadratic root, `rho = log(n/p)/2`, and the value
/// table takes three values (root node; matching node; mismatched
/// node).
pub fn analytic_value_large(n: usize) -> Result<ValueSolution> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "large-graph solution needs alphabet size >= 3, got {n}"
        )));
    }
    let p = quadratic_root(n)?;
    let rho = 0.5 * (n as f64 / p).log2();
    let (graph, t) = crate::qgraph::ising_qgraph_large(n, p)?;
    let ch = UnifilarChannel::ising(n)?;
    let mdp = build_duality_mdp(&ch, &graph, &t)?;
    let nq = graph.node_count();
    let logn = (n as f64).log2();
    let mut values = vec![0.0; n * nq];
    for s in 0..n {
        for q in 0..nq {
            let tag = graph.tag(q).expect("large graph tags every node");
            values[s * nq + q] = match tag.last_state {
                None => rho,
                Some(g) if g == s => 2.0 * rho - logn,
                Some(_) => 2.0 * rho + 2.0 - logn,
            };
        }
    }
    finish_analytic(mdp, rho, values)
}

fn finish_analytic(mdp: DualityMdp, rho: f64, values: Vec<f64>) -> Result<ValueSolution> {
    let report = verify_bellman(&mdp, &values, rho);
    let greedy: Vec<usize> = (0..mdp.n_channel_states())
        .flat_map(|s| (0..mdp.n_nodes()).map(move |q| (s, q)))
        .map(|(s, q)| mdp.backup(&values, s, q).1)
        .collect();
    Ok(ValueSolution {
        rho,
        values,
        greedy,
        converged: true,
        iterations: 0,
        residual: report.max_residual,
    })
}
