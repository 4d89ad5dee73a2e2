//! Unifilar finite-state channels.
//!
//! A unifilar channel is described by an output kernel `p(y|x,s)` and a
//! deterministic next-state function `s' = f(x,s,y)`. The input, output,
//! and state alphabets all share one cardinality here, so a channel is
//! fully specified by that cardinality and two dense rank-3 tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities below this are treated as exact zeros, which keeps
/// support sets crisp for unifilarity checks.
pub const PROB_EPS: f64 = 1e-12;

/// A unifilar finite-state channel with `|X| = |Y| = |S|`.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifilarChannel {
    n: usize,
    /// `p(y|x,s)` indexed by `(x*n + s)*n + y`.
    kernel: Vec<f64>,
    /// `f(x,s,y)` with the same indexing. Entries on zero-probability
    /// triples are retained but never consulted.
    state_fn: Vec<usize>,
    /// Cached `H(Y|x,s)` in bits, indexed by `x*n + s`.
    cond_entropy: Vec<f64>,
}

/// On-disk JSON schema for a channel:
/// `{ "alphabet_size": n, "kernel": [...], "state_fn": [...] }`
/// with both tables row-major over `(x, s, y)`.
#[derive(Debug, Serialize, Deserialize)]
struct ChannelSpec {
    alphabet_size: usize,
    kernel: Vec<f64>,
    state_fn: Vec<usize>,
}

impl UnifilarChannel {
    /// Builds a channel from dense tables, validating that every kernel
    /// row is a probability vector and that `state_fn` is in range.
    pub fn new(alphabet_size: usize, kernel: Vec<f64>, state_fn: Vec<usize>) -> Result<Self> {
        let n = alphabet_size;
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "alphabet size must be at least 2, got {n}"
            )));
        }
        let len = n * n * n;
        if kernel.len() != len || state_fn.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "expected {len} kernel and state_fn entries for alphabet size {n}, got {} and {}",
                kernel.len(),
                state_fn.len()
            )));
        }
        let mut kernel = kernel;
        for p in kernel.iter_mut() {
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "kernel entries must be finite and nonnegative, got {p}"
                )));
            }
            if *p < PROB_EPS {
                *p = 0.0;
            }
        }
        for (x, s) in index_pairs(n) {
            let row = &kernel[(x * n + s) * n..(x * n + s) * n + n];
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "kernel row p(.|x={x},s={s}) sums to {sum}, expected 1"
                )));
            }
            for (y, &p) in row.iter().enumerate() {
                if p > 0.0 && state_fn[(x * n + s) * n + y] >= n {
                    return Err(Error::InvalidArgument(format!(
                        "state_fn(x={x},s={s},y={y}) out of range"
                    )));
                }
            }
        }
        let mut cond_entropy = vec![0.0; n * n];
        for (x, s) in index_pairs(n) {
            let row = &kernel[(x * n + s) * n..(x * n + s) * n + n];
            cond_entropy[x * n + s] = -row
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.log2())
                .sum::<f64>();
        }
        Ok(Self {
            n,
            kernel,
            state_fn,
            cond_entropy,
        })
    }

    /// The Ising channel: the output equals the current input or the
    /// previous one with probability one half each, and the state
    /// becomes the input.
    pub fn ising(alphabet_size: usize) -> Result<Self> {
        let n = alphabet_size;
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "Ising channel needs alphabet size >= 2, got {n}"
            )));
        }
        let mut kernel = vec![0.0; n * n * n];
        let mut state_fn = vec![0usize; n * n * n];
        for (x, s) in index_pairs(n) {
            let base = (x * n + s) * n;
            if x == s {
                kernel[base + x] = 1.0;
            } else {
                kernel[base + x] = 0.5;
                kernel[base + s] = 0.5;
            }
            for y in 0..n {
                state_fn[base + y] = x;
            }
        }
        Self::new(n, kernel, state_fn)
    }

    /// Parses either the builtin alias `ising:N` or a JSON channel spec.
    pub fn from_spec_str(spec: &str) -> Result<Self> {
        if let Some(rest) = spec.strip_prefix("ising:") {
            let n: usize = rest.parse().map_err(|_| {
                Error::InvalidArgument(format!("bad alphabet size in channel alias {spec:?}"))
            })?;
            return Self::ising(n);
        }
        Self::from_json(spec)
    }

    /// Deserializes a channel from its JSON schema.
    pub fn from_json(json: &str) -> Result<Self> {
        let spec: ChannelSpec = serde_json::from_str(json)?;
        Self::new(spec.alphabet_size, spec.kernel, spec.state_fn)
    }

    /// Serializes the channel into its JSON schema.
    pub fn to_json(&self) -> String {
        let spec = ChannelSpec {
            alphabet_size: self.n,
            kernel: self.kernel.clone(),
            state_fn: self.state_fn.clone(),
        };
        serde_json::to_string(&spec).expect("channel spec serializes")
    }

    #[inline]
    pub fn alphabet_size(&self) -> usize {
        self.n
    }

    /// The kernel row `p(.|x,s)` as a slice of length `|Y|`.
    pub fn transition_prob(&self, x: usize, s: usize) -> Result<&[f64]> {
        self.check_symbol(x, "input")?;
        self.check_symbol(s, "state")?;
        let base = (x * self.n + s) * self.n;
        Ok(&self.kernel[base..base + self.n])
    }

    /// `p(y|x,s)` without bounds diagnostics; panics on out-of-range
    /// symbols.
    #[inline]
    pub fn prob(&self, y: usize, x: usize, s: usize) -> f64 {
        self.kernel[(x * self.n + s) * self.n + y]
    }

    /// `f(x,s,y)`, defined only on triples the channel can produce.
    pub fn next_state(&self, x: usize, s: usize, y: usize) -> Result<usize> {
        self.check_symbol(x, "input")?;
        self.check_symbol(s, "state")?;
        self.check_symbol(y, "output")?;
        if self.prob(y, x, s) <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "next_state undefined on zero-probability triple (x={x}, s={s}, y={y})"
            )));
        }
        Ok(self.state_fn[(x * self.n + s) * self.n + y])
    }

    /// `f(x,s,y)` without the support check; callers must stay on the
    /// channel's support.
    #[inline]
    pub fn next_state_unchecked(&self, x: usize, s: usize, y: usize) -> usize {
        self.state_fn[(x * self.n + s) * self.n + y]
    }

    /// Cached `H(Y|x,s)` in bits.
    #[inline]
    pub fn output_entropy(&self, x: usize, s: usize) -> f64 {
        self.cond_entropy[x * self.n + s]
    }

    fn check_symbol(&self, v: usize, what: &str) -> Result<()> {
        if v >= self.n {
            return Err(Error::InvalidArgument(format!(
                "{what} symbol {v} out of range for alphabet size {}",
                self.n
            )));
        }
        Ok(())
    }
}

fn index_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |x| (0..n).map(move |s| (x, s)))
}
