//! Zero-error coding schemes for the Ising channel, simulated end to
//! end against the actual channel law.
//!
//! Two schemes are implemented. The *repeat* scheme sends a first-order
//! Markov symbol stream and retransmits whenever the output echoed the
//! previous state; it achieves the capacity for alphabet sizes up to 8.
//! The *partition* scheme splits the alphabet into two halves, draws
//! symbols uniformly and alternately from them, and uses the half
//! membership of each output to tell input from state; its rate is
//! `3/4 log(|X|/2)` for any even alphabet size.
//!
//! Both decoders must reproduce the source stream exactly; any
//! disagreement is a hard failure, not a statistic.

use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;

use crate::channel::UnifilarChannel;
use crate::duality::scheme_objective;
use crate::error::{Error, Result};

/// A first-order Markov symbol stream: repeat the previous symbol with
/// probability `p`, otherwise draw uniformly among the other symbols.
/// The implicit predecessor of the first symbol is 0.
#[derive(Debug, Clone)]
pub struct SymbolStream {
    pub alphabet: usize,
    pub p: f64,
    pub symbols: Vec<usize>,
}

pub fn markov_source<R: Rng + ?Sized>(
    n: usize,
    p: f64,
    m: usize,
    rng: &mut R,
) -> Result<SymbolStream> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "alphabet size must be >= 2, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "repeat probability must lie in [0,1], got {p}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("stream length must be >= 1".into()));
    }
    let mut symbols = Vec::with_capacity(m);
    let mut prev = 0usize;
    for _ in 0..m {
        let next = if rng.gen::<f64>() < p {
            prev
        } else {
            // Uniform over the n-1 other symbols.
            let k = rng.gen_range(0..n - 1);
            if k < prev {
                k
            } else {
                k + 1
            }
        };
        symbols.push(next);
        prev = next;
    }
    Ok(SymbolStream {
        alphabet: n,
        p,
        symbols,
    })
}

/// Statistics of one simulated code run. `errors` is always zero for a
/// returned value; a decode disagreement surfaces as an error instead.
#[derive(Debug, Clone, Serialize)]
pub struct CodeRunStats {
    pub symbols_sent: usize,
    /// Channel uses spent on information symbols (excludes the two
    /// state-setting uses and, for the partition scheme, flush padding).
    pub channel_uses: usize,
    pub uses_per_symbol: f64,
    /// Uses that carried padding while flushing the stream tail.
    pub padding_uses: usize,
    pub errors: usize,
    #[serde(skip)]
    pub decoded: Vec<usize>,
    /// Channel uses per source symbol, index-aligned with the stream.
    #[serde(skip)]
    pub per_symbol_uses: Vec<u8>,
    /// Per-transmission indicator: did the output echo the fresh input
    /// (rather than the previous state)?
    #[serde(skip)]
    pub output_was_input: Vec<bool>,
    pub notes: Vec<String>,
}

fn require_ising(ch: &UnifilarChannel) -> Result<usize> {
    let n = ch.alphabet_size();
    if *ch != UnifilarChannel::ising(n)? {
        return Err(Error::InvalidArgument(
            "coding schemes are specified for the Ising channel".into(),
        ));
    }
    Ok(n)
}

/// One Ising channel use with explicit state bookkeeping.
fn ising_use<R: Rng + ?Sized>(x: usize, s: usize, rng: &mut R) -> usize {
    if x == s || rng.gen::<f64>() < 0.5 {
        x
    } else {
        s
    }
}

/// Simulates the repeat scheme: transmit each stream symbol, retransmit
/// it when the output equalled the previous state, and decode by
/// skipping the echo in each repeated output pair.
pub fn simulate_small_scheme<R: Rng + ?Sized>(
    ch: &UnifilarChannel,
    stream: &SymbolStream,
    rng: &mut R,
) -> Result<CodeRunStats> {
    let n = require_ising(ch)?;
    if stream.alphabet != n {
        return Err(Error::ShapeMismatch(format!(
            "stream alphabet {} vs channel {n}",
            stream.alphabet
        )));
    }
    let m = stream.symbols.len();
    // Set the initial state by transmitting 0 twice; the decoder
    // discards both outputs and anchors on the second (always 0).
    let mut state = rng.gen_range(0..n);
    let _ = ising_use(0, state, rng);
    state = 0;
    let y0 = ising_use(0, state, rng);
    debug_assert_eq!(y0, 0);

    let mut outputs = Vec::with_capacity(2 * m);
    let mut per_symbol_uses = Vec::with_capacity(m);
    let mut output_was_input = Vec::with_capacity(2 * m);
    for &sym in &stream.symbols {
        let prev_state = state;
        let y = ising_use(sym, prev_state, rng);
        outputs.push(y);
        output_was_input.push(y == sym);
        state = sym;
        if y == prev_state {
            // Retransmission is deterministic: input equals state now.
            let y2 = ising_use(sym, state, rng);
            debug_assert_eq!(y2, sym);
            outputs.push(y2);
            output_was_input.push(true);
            per_symbol_uses.push(2);
        } else {
            per_symbol_uses.push(1);
        }
    }

    // Decode: a repeated output is an echo; the symbol after it is the
    // information symbol regardless of its value.
    let mut decoded = Vec::with_capacity(m);
    let mut prev = 0usize;
    let mut i = 0usize;
    while i < outputs.len() {
        if outputs[i] != prev {
            decoded.push(outputs[i]);
            prev = outputs[i];
            i += 1;
        } else {
            let Some(&sym) = outputs.get(i + 1) else {
                return Err(Error::DecodeMismatch(
                    "output stream ended inside an echo pair".into(),
                ));
            };
            decoded.push(sym);
            prev = sym;
            i += 2;
        }
    }
    if decoded != stream.symbols {
        let at = decoded
            .iter()
            .zip(&stream.symbols)
            .position(|(a, b)| a != b);
        return Err(Error::DecodeMismatch(format!(
            "repeat-scheme decode diverged (first mismatch at {at:?}, lengths {} vs {m})",
            decoded.len()
        )));
    }
    let channel_uses = outputs.len();
    Ok(CodeRunStats {
        symbols_sent: m,
        channel_uses,
        uses_per_symbol: channel_uses as f64 / m as f64,
        padding_uses: 0,
        errors: 0,
        decoded,
        per_symbol_uses,
        output_was_input,
        notes: vec!["two state-setting uses excluded from channel_uses".into()],
    })
}

/// Rate of the repeat scheme at repeat probability `p`:
/// `2 (H2(p) + (1-p) log(|X|-1)) / (p+3)` bits per channel use.
pub fn rate_small(n: usize, p: f64) -> f64 {
    scheme_objective(n, p)
}

/// Rate of the partition scheme: `3/4 log(|X|/2)`; the scheme needs at
/// least two symbols per half.
pub fn rate_asymp(n: usize) -> Result<f64> {
    if n <= 2 {
        return Err(Error::InvalidArgument(format!(
            "partition-scheme rate needs alphabet size > 2, got {n}"
        )));
    }
    Ok(0.75 * (n as f64 / 2.0).log2())
}

/// The two partition halves used by the alternating scheme: the lower
/// and upper `floor(n/2)` symbols. For odd `n` the top symbol is
/// dropped.
pub fn partition_halves(n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "partition scheme needs alphabet size >= 4, got {n}"
        )));
    }
    let h = n / 2;
    Ok(((0..h).collect(), (h..2 * h).collect()))
}

/// Draws `m` symbols alternately and uniformly from the two halves
/// (first symbol from the lower half).
pub fn alternating_source<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let (a, b) = partition_halves(n)?;
    if m == 0 {
        return Err(Error::InvalidArgument("stream length must be >= 1".into()));
    }
    Ok((0..m)
        .map(|i| {
            let half = if i % 2 == 0 { &a } else { &b };
            half[rng.gen_range(0..half.len())]
        })
        .collect())
}

/// Simulates the partition scheme on an alternating symbol stream.
///
/// Each output's half membership tells the decoder whether it carries
/// the fresh input or the previous state, so an output is stored
/// exactly when it is fresh information: either it is the input, or it
/// is a state that never got through before. The encoder mirrors that
/// rule through feedback and returns a lost symbol to the top of its
/// half's buffer, which retransmits it two slots later. Stream tails
/// are flushed with padding transmissions that the decoder's
/// length-aware truncation discards.
pub fn simulate_asymp_scheme<R: Rng + ?Sized>(
    ch: &UnifilarChannel,
    symbols: &[usize],
    rng: &mut R,
) -> Result<CodeRunStats> {
    let n = require_ising(ch)?;
    let (half_a, half_b) = partition_halves(n)?;
    let m = symbols.len();
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two symbols".into()));
    }
    let in_a = |v: usize| v < half_a.len();
    let in_b = |v: usize| v >= half_a.len() && v < half_a.len() + half_b.len();
    // Split the interleaved stream into per-half queues, validating
    // membership.
    let mut queue_a: VecDeque<(usize, usize)> = VecDeque::new(); // (stream index, value)
    let mut queue_b: VecDeque<(usize, usize)> = VecDeque::new();
    for (i, &v) in symbols.iter().enumerate() {
        if i % 2 == 0 {
            if !in_a(v) {
                return Err(Error::InvalidArgument(format!(
                    "symbol {v} at even position {i} is not in the lower half"
                )));
            }
            queue_a.push_back((i, v));
        } else {
            if !in_b(v) {
                return Err(Error::InvalidArgument(format!(
                    "symbol {v} at odd position {i} is not in the upper half"
                )));
            }
            queue_b.push_back((i, v));
        }
    }
    let need_a = queue_a.len();
    let need_b = queue_b.len();

    // State setup: transmit one upper-half symbol twice so slot 1 (a
    // lower-half turn) sees a state from the opposite half.
    let init = half_b[0];
    let mut state = rng.gen_range(0..n);
    let _ = ising_use(init, state, rng);
    state = init;
    let y_init = ising_use(init, state, rng);
    debug_assert_eq!(y_init, init);

    let mut per_symbol_uses = vec![0u8; m];
    let mut output_was_input = Vec::new();
    let mut stored_a: Vec<usize> = Vec::new();
    let mut stored_b: Vec<usize> = Vec::new();
    let mut info_uses = 0usize;
    let mut padding_uses = 0usize;

    // Per-slot history needed by the one-slot-delayed pushback rule.
    // Slot 0 is the (virtual) second init use: its output was the
    // input, and it carried no information symbol.
    let mut prev_w = true;
    let mut prev_slot: Option<(usize, usize)> = None; // (stream index, value) of previous slot
    let slot_cap = 12 * m + 1024;
    let mut slot = 0usize;
    while stored_a.len() < need_a || stored_b.len() < need_b {
        slot += 1;
        if slot > slot_cap {
            return Err(Error::DecodeMismatch(format!(
                "partition scheme failed to flush within {slot_cap} slots"
            )));
        }
        let a_turn = slot % 2 == 1;
        let (queue, pad) = if a_turn {
            (&mut queue_a, half_a[0])
        } else {
            (&mut queue_b, half_b[0])
        };
        let entry = queue.pop_front();
        let (sym, is_pad) = match entry {
            Some((_, v)) => (v, false),
            None => (pad, true),
        };
        if is_pad {
            padding_uses += 1;
        } else {
            info_uses += 1;
            per_symbol_uses[entry.unwrap().0] += 1;
        }

        let y = ising_use(sym, state, rng);
        let w = y == sym; // membership test: y's half vs the slot's half
        debug_assert_eq!(w, if a_turn { in_a(y) } else { !in_a(y) });
        output_was_input.push(w);
        state = sym;

        // Decoder: store unless the output is a state echo of a symbol
        // that already got through last slot.
        if !(!w && prev_w) {
            let stored = if in_a(y) {
                &mut stored_a
            } else {
                &mut stored_b
            };
            stored.push(y);
        }

        // Encoder: the previous slot's symbol is lost exactly when its
        // own output was an echo and this output is not; return it to
        // the top of its buffer (its half plays again next slot).
        if !prev_w && w {
            if let Some(prev_entry) = prev_slot {
                let back = if a_turn { &mut queue_b } else { &mut queue_a };
                back.push_front(prev_entry);
                // The retransmission will be re-counted when popped.
            }
        }

        prev_w = w;
        prev_slot = if is_pad { None } else { entry };
    }

    // Drop stored padding beyond the expected counts and rebuild the
    // interleaved stream.
    stored_a.truncate(need_a);
    stored_b.truncate(need_b);
    if stored_a.len() != need_a || stored_b.len() != need_b {
        return Err(Error::DecodeMismatch("partition decode came up short".into()));
    }
    let mut decoded = Vec::with_capacity(m);
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..m {
        if i % 2 == 0 {
            decoded.push(stored_a[ia]);
            ia += 1;
        } else {
            decoded.push(stored_b[ib]);
            ib += 1;
        }
    }
    if decoded != symbols {
        let at = decoded.iter().zip(symbols).position(|(a, b)| a != b);
        return Err(Error::DecodeMismatch(format!(
            "partition-scheme decode diverged (first mismatch at {at:?})"
        )));
    }

    let mut notes = vec![
        "two state-setting uses excluded from channel_uses".into(),
        format!("{padding_uses} padding uses flushed the stream tail"),
    ];
    if n % 2 == 1 {
        notes.push(format!(
            "odd alphabet: symbol {} unused; entropy accounting uses floor(|X|/2)",
            n - 1
        ));
    }
    Ok(CodeRunStats {
        symbols_sent: m,
        channel_uses: info_uses,
        uses_per_symbol: info_uses as f64 / m as f64,
        padding_uses,
        errors: 0,
        decoded,
        per_symbol_uses,
        output_was_input,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::{binary_entropy, capacity_small, quartic_root};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn markov_source_degenerate_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = markov_source(3, 1.0, 100, &mut rng).unwrap();
        assert!(s.symbols.iter().all(|&v| v == 0));
        let s = markov_source(2, 0.0, 100, &mut rng).unwrap();
        // Binary with no repeats strictly alternates starting from 1.
        for (i, &v) in s.symbols.iter().enumerate() {
            assert_eq!(v, (i + 1) % 2);
        }
    }

    #[test]
    fn markov_source_empirical_entropy_rate() {
        let n = 4;
        let p = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = markov_source(n, p, 1_000_000, &mut rng).unwrap();
        // Plug-in conditional entropy from bigram counts.
        let mut counts = vec![0usize; n * n];
        let mut prev = 0usize;
        for &v in &s.symbols {
            counts[prev * n + v] += 1;
            prev = v;
        }
        let total: usize = counts.iter().sum();
        let mut h = 0.0;
        for a in 0..n {
            let row_total: usize = counts[a * n..(a + 1) * n].iter().sum();
            if row_total == 0 {
                continue;
            }
            let pa = row_total as f64 / total as f64;
            for b in 0..n {
                let c = counts[a * n + b];
                if c > 0 {
                    let pba = c as f64 / row_total as f64;
                    h -= pa * pba * pba.log2();
                }
            }
        }
        let expect = binary_entropy(p) + (1.0 - p) * ((n - 1) as f64).log2();
        assert!((h - expect).abs() < 0.01, "h={h} expect={expect}");
    }

    #[test]
    fn small_scheme_zero_error_and_use_count() {
        let n = 4;
        let p = {
            let (_, p_star) = capacity_small(n).unwrap();
            p_star
        };
        let ch = UnifilarChannel::ising(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 100_000;
        let stream = markov_source(n, p, m, &mut rng).unwrap();
        let stats = simulate_small_scheme(&ch, &stream, &mut rng).unwrap();
        assert_eq!(stats.errors, 0);
        assert_eq!(stats.decoded, stream.symbols);
        let e_l = 2.0 * p + 1.5 * (1.0 - p);
        let var = 4.0 * p + 2.5 * (1.0 - p) - e_l * e_l;
        let sigma = (var / m as f64).sqrt();
        assert!(
            (stats.uses_per_symbol - e_l).abs() < 3.0 * sigma,
            "uses/symbol {} vs {}",
            stats.uses_per_symbol,
            e_l
        );
    }

    #[test]
    fn small_scheme_empirical_rate_near_capacity() {
        let n = 4;
        let (cap, p_star) = capacity_small(n).unwrap();
        let ch = UnifilarChannel::ising(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 200_000;
        let stream = markov_source(n, p_star, m, &mut rng).unwrap();
        let stats = simulate_small_scheme(&ch, &stream, &mut rng).unwrap();
        let entropy_rate = binary_entropy(p_star) + (1.0 - p_star) * ((n - 1) as f64).log2();
        let rate = entropy_rate / stats.uses_per_symbol;
        assert!((rate - cap).abs() < 0.01, "rate={rate} cap={cap}");
    }

    #[test]
    fn small_scheme_always_repeat_costs_two_uses() {
        let n = 3;
        let ch = UnifilarChannel::ising(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stream = markov_source(n, 1.0, 500, &mut rng).unwrap();
        let stats = simulate_small_scheme(&ch, &stream, &mut rng).unwrap();
        assert!(stats.per_symbol_uses.iter().all(|&u| u == 2));
        assert_eq!(stats.channel_uses, 1000);
    }

    #[test]
    fn rate_small_reference_values() {
        assert!((rate_small(2, 0.5) - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(rate_small(5, 1.0), 0.0);
        // Max over p equals the capacity for small alphabets.
        for n in 2..=8 {
            let (cap, p_star) = capacity_small(n).unwrap();
            assert!((rate_small(n, p_star) - cap).abs() < 1e-9);
        }
    }

    #[test]
    fn rate_asymp_reference_values() {
        assert!((rate_asymp(4).unwrap() - 0.75).abs() < 1e-12);
        assert!((rate_asymp(8).unwrap() - 1.5).abs() < 1e-12);
        assert!(rate_asymp(2).is_err());
    }

    #[test]
    fn rate_crossover_between_schemes() {
        // Sweep both closed forms: the partition scheme overtakes the
        // repeat scheme at alphabet size 505 and stays ahead. The
        // repeat-scheme maximum equals log(1/p)/2 at the quartic root
        // for every alphabet size, which gives an independent route to
        // the same curve.
        let max_scheme = |n: usize| 0.5 * (1.0 / quartic_root(n).unwrap()).log2();
        let mut crossover = None;
        for n in 3..=1024usize {
            let a = rate_asymp(n).unwrap();
            let s = max_scheme(n);
            if crossover.is_none() && a > s {
                crossover = Some(n);
            }
            if let Some(c) = crossover {
                assert!(a > max_scheme(n) || n < c);
            }
        }
        assert_eq!(crossover, Some(505));
    }

    #[test]
    fn asymp_scheme_zero_error_and_use_count() {
        for n in [4usize, 8, 16] {
            let ch = UnifilarChannel::ising(n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5 + n as u64);
            let m = 60_000;
            let symbols = alternating_source(n, m, &mut rng).unwrap();
            let stats = simulate_asymp_scheme(&ch, &symbols, &mut rng).unwrap();
            assert_eq!(stats.errors, 0);
            let sigma = (4.0 / 9.0 / m as f64).sqrt();
            assert!(
                (stats.uses_per_symbol - 4.0 / 3.0).abs() < 3.0 * sigma,
                "n={n} uses/symbol {}",
                stats.uses_per_symbol
            );
        }
    }

    #[test]
    fn asymp_scheme_empirical_rate() {
        let n = 16;
        let ch = UnifilarChannel::ising(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = 100_000;
        let symbols = alternating_source(n, m, &mut rng).unwrap();
        let stats = simulate_asymp_scheme(&ch, &symbols, &mut rng).unwrap();
        let rate = (n as f64 / 2.0).log2() / stats.uses_per_symbol;
        assert!(
            (rate - rate_asymp(n).unwrap()).abs() < 0.02,
            "rate={rate} expect={}",
            rate_asymp(n).unwrap()
        );
    }

    #[test]
    fn asymp_scheme_odd_alphabet_drops_top_symbol() {
        let n = 5;
        let ch = UnifilarChannel::ising(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let symbols = alternating_source(n, 10_000, &mut rng).unwrap();
        assert!(symbols.iter().all(|&v| v < 4));
        let stats = simulate_asymp_scheme(&ch, &symbols, &mut rng).unwrap();
        assert_eq!(stats.errors, 0);
        assert!(stats.notes.iter().any(|s| s.contains("odd alphabet")));
    }

    #[test]
    fn asymp_scheme_rejects_misaligned_stream() {
        let ch = UnifilarChannel::ising(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Upper-half symbol in an even slot.
        assert!(simulate_asymp_scheme(&ch, &[3, 2], &mut rng).is_err());
    }

    #[test]
    fn simulators_reject_non_ising_channels() {
        // A channel with the right shape but the wrong kernel.
        let n = 4;
        let ising = UnifilarChannel::ising(n).unwrap();
        let mut kernel = Vec::new();
        let mut state_fn = Vec::new();
        for x in 0..n {
            for s in 0..n {
                for y in 0..n {
                    kernel.push(if y == x { 1.0 } else { 0.0 });
                    state_fn.push(x);
                }
                let _ = s;
            }
        }
        let noiseless = UnifilarChannel::new(n, kernel, state_fn).unwrap();
        assert_ne!(ising, noiseless);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let stream = markov_source(n, 0.3, 10, &mut rng).unwrap();
        assert!(simulate_small_scheme(&noiseless, &stream, &mut rng).is_err());
    }
}
