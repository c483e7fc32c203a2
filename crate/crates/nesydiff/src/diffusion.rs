//! Forward masking process and its reverse posterior.
//!
//! A sequence of `W` symbolic tokens is noised by independently replacing
//! each token with MASK; the survival probability at time `t` is `alpha(t)`,
//! decreasing from 1 at `t = 0` to 0 at `t = 1`. Masks only accumulate:
//! jumping from time `s` to `t > s` keeps an unmasked token with probability
//! `alpha(t) / alpha(s)`. Conditioned on the clean sequence, the reverse
//! posterior either keeps a masked position masked or reveals the clean
//! token; unmasked positions are copied verbatim.

use crate::error::{Error, Result};
use crate::rng::RandomSource;

/// Sentinel token for a masked position. Real tokens live in `1..=vocab`, so
/// 0 never collides with a value and serializes naturally.
pub const MASK: u32 = 0;

/// Noising schedule `alpha(t)`: strictly decreasing, `alpha(0) = 1`,
/// `alpha(1) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoisingSchedule {
    /// `alpha(t) = 1 - t`.
    Linear,
    /// `alpha(t) = 1 - t^degree`, degree >= 2.
    Polynomial { degree: u32 },
}

impl NoisingSchedule {
    pub fn validate(self) -> Result<()> {
        match self {
            NoisingSchedule::Linear => Ok(()),
            NoisingSchedule::Polynomial { degree } => {
                if degree < 2 {
                    Err(Error::domain(format!(
                        "polynomial schedule degree must be >= 2, got {degree}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Survival probability `alpha(t)` for `t` in `[0, 1]`.
    pub fn alpha(self, t: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&t));
        match self {
            NoisingSchedule::Linear => 1.0 - t,
            NoisingSchedule::Polynomial { degree } => 1.0 - t.powi(degree as i32),
        }
    }

    /// Derivative `alpha'(t)`; negative on `(0, 1]`.
    pub fn alpha_prime(self, t: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&t));
        match self {
            NoisingSchedule::Linear => -1.0,
            NoisingSchedule::Polynomial { degree } => {
                -(degree as f64) * t.powi(degree as i32 - 1)
            }
        }
    }

    /// Inverse `alpha^{-1}(a)` on `[0, 1]`.
    pub fn alpha_inv(self, a: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&a));
        match self {
            NoisingSchedule::Linear => 1.0 - a,
            NoisingSchedule::Polynomial { degree } => (1.0 - a).powf(1.0 / degree as f64),
        }
    }
}

fn check_time(name: &str, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) || !t.is_finite() {
        return Err(Error::domain(format!("{name} = {t} outside [0, 1]")));
    }
    Ok(())
}

/// Token sequence with masked positions. Tokens are `1..=vocab`; `MASK`
/// marks an absent value.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskedSeq {
    vocab: u32,
    toks: Vec<u32>,
}

impl MaskedSeq {
    /// Wraps raw tokens; every entry must be `MASK` or in `1..=vocab`.
    pub fn new(vocab: u32, toks: Vec<u32>) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::domain("vocab must be positive"));
        }
        for (i, &tk) in toks.iter().enumerate() {
            if tk != MASK && tk > vocab {
                return Err(Error::domain(format!(
                    "token {tk} at position {i} outside 1..={vocab}"
                )));
            }
        }
        Ok(MaskedSeq { vocab, toks })
    }

    /// Sequence of `len` masked positions.
    pub fn fully_masked(vocab: u32, len: usize) -> Self {
        MaskedSeq {
            vocab,
            toks: vec![MASK; len],
        }
    }

    /// Builds a complete sequence from zero-based semantic values
    /// (`value v` maps to token `v + 1`).
    pub fn from_values(vocab: u32, values: &[u32]) -> Result<Self> {
        let toks = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v >= vocab {
                    Err(Error::domain(format!(
                        "value {v} at position {i} outside 0..{vocab}"
                    )))
                } else {
                    Ok(v + 1)
                }
            })
            .collect::<Result<Vec<u32>>>()?;
        Ok(MaskedSeq { vocab, toks })
    }

    pub fn len(&self) -> usize {
        self.toks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.toks.is_empty()
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    pub fn tok(&self, i: usize) -> u32 {
        self.toks[i]
    }

    pub fn toks(&self) -> &[u32] {
        &self.toks
    }

    pub fn set(&mut self, i: usize, tok: u32) {
        assert!(
            tok == MASK || tok <= self.vocab,
            "token {tok} outside 1..={}",
            self.vocab
        );
        self.toks[i] = tok;
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.toks[i] == MASK
    }

    pub fn is_complete(&self) -> bool {
        self.toks.iter().all(|&tk| tk != MASK)
    }

    pub fn n_masked(&self) -> usize {
        self.toks.iter().filter(|&&tk| tk == MASK).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_masked(i)).collect()
    }

    /// Zero-based semantic value at position `i`; errors if masked.
    pub fn value(&self, i: usize) -> Result<u32> {
        if self.is_masked(i) {
            Err(Error::domain(format!("position {i} is masked")))
        } else {
            Ok(self.toks[i] - 1)
        }
    }

    /// Zero-based semantic values of a complete sequence.
    pub fn values(&self) -> Result<Vec<u32>> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    /// True if `self` refines `coarser`: both sequences agree wherever
    /// `coarser` is unmasked (`self` may reveal more positions).
    pub fn extends(&self, coarser: &MaskedSeq) -> bool {
        self.len() == coarser.len()
            && self.vocab == coarser.vocab
            && self
                .toks
                .iter()
                .zip(&coarser.toks)
                .all(|(&fine, &coarse)| coarse == MASK || fine == coarse)
    }
}

fn check_same_shape(a: &MaskedSeq, b: &MaskedSeq) -> Result<()> {
    if a.len() != b.len() || a.vocab() != b.vocab() {
        return Err(Error::shape(format!(
            "sequence shapes differ: len {} vocab {} vs len {} vocab {}",
            a.len(),
            a.vocab(),
            b.len(),
            b.vocab()
        )));
    }
    Ok(())
}

/// One jump of the forward process from time `s` to `t >= s`: every token
/// still unmasked at `s` survives with probability `alpha(t) / alpha(s)`.
pub fn forward_mask_step(
    ws: &MaskedSeq,
    s: f64,
    t: f64,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<MaskedSeq> {
    sched.validate()?;
    check_time("s", s)?;
    check_time("t", t)?;
    if t < s {
        return Err(Error::domain(format!("forward jump needs s <= t, got s={s} t={t}")));
    }
    let alpha_s = sched.alpha(s);
    let alpha_t = sched.alpha(t);
    let keep = if alpha_s == 0.0 { 1.0 } else { alpha_t / alpha_s };
    let mut out = ws.clone();
    for i in 0..out.len() {
        if !out.is_masked(i) && rng.uniform() >= keep {
            out.set(i, MASK);
        }
    }
    Ok(out)
}

/// Jump-forward draw from the clean sequence: each token independently
/// survives to time `t` with probability `alpha(t)`.
pub fn forward_mask(
    w0: &MaskedSeq,
    t: f64,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<MaskedSeq> {
    if !w0.is_complete() {
        return Err(Error::domain(
            "forward_mask needs a complete clean sequence",
        ));
    }
    forward_mask_step(w0, 0.0, t, sched, rng)
}

fn check_reverse_args(
    wt: &MaskedSeq,
    w0: &MaskedSeq,
    s: f64,
    t: f64,
    sched: NoisingSchedule,
) -> Result<()> {
    sched.validate()?;
    check_time("s", s)?;
    check_time("t", t)?;
    if s >= t {
        return Err(Error::domain(format!(
            "reverse posterior needs s < t, got s={s} t={t}"
        )));
    }
    check_same_shape(wt, w0)?;
    if !w0.is_complete() {
        return Err(Error::domain("clean sequence must be complete"));
    }
    if !w0.extends(wt) {
        return Err(Error::domain(
            "noised sequence is inconsistent with the clean sequence",
        ));
    }
    Ok(())
}

/// Draw from the reverse posterior `q(w_s | w_t, w_0)` for `s < t`. Unmasked
/// positions are copied; a masked position reveals the clean token with
/// probability `(alpha(s) - alpha(t)) / (1 - alpha(t))`.
pub fn reverse_posterior_sample(
    wt: &MaskedSeq,
    w0: &MaskedSeq,
    s: f64,
    t: f64,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<MaskedSeq> {
    check_reverse_args(wt, w0, s, t, sched)?;
    let alpha_s = sched.alpha(s);
    let alpha_t = sched.alpha(t);
    let unmask = (alpha_s - alpha_t) / (1.0 - alpha_t);
    let mut out = wt.clone();
    for i in 0..out.len() {
        if out.is_masked(i) && rng.uniform() < unmask {
            out.set(i, w0.tok(i));
        }
    }
    Ok(out)
}

/// Probability mass `q(w_s | w_t, w_0)` of one reverse jump. Zero unless
/// `w_0` refines `w_s` and `w_s` refines `w_t`; otherwise masked positions
/// stay masked with probability `(1 - alpha(s)) / (1 - alpha(t))` and reveal
/// the clean token with the complementary per-position mass, giving
///
/// ```text
/// ((1 - alpha_s) / (1 - alpha_t))^{|M_s|}
///   * ((alpha_s - alpha_t) / (1 - alpha_t))^{|M_t| - |M_s|}
/// ```
///
/// where `M_s`, `M_t` are the masked sets of `w_s`, `w_t`.
pub fn reverse_posterior_pmf(
    ws: &MaskedSeq,
    wt: &MaskedSeq,
    w0: &MaskedSeq,
    s: f64,
    t: f64,
    sched: NoisingSchedule,
) -> Result<f64> {
    check_reverse_args(wt, w0, s, t, sched)?;
    check_same_shape(ws, wt)?;
    if !w0.extends(ws) || !ws.extends(wt) {
        return Ok(0.0);
    }
    let alpha_s = sched.alpha(s);
    let alpha_t = sched.alpha(t);
    let stay = (1.0 - alpha_s) / (1.0 - alpha_t);
    let reveal = (alpha_s - alpha_t) / (1.0 - alpha_t);
    let masked_s = ws.n_masked() as i32;
    let masked_t = wt.n_masked() as i32;
    Ok(stay.powi(masked_s) * reveal.powi(masked_t - masked_s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SCHEDULES: [NoisingSchedule; 2] = [
        NoisingSchedule::Linear,
        NoisingSchedule::Polynomial { degree: 2 },
    ];

    #[test]
    fn linear_schedule_values() {
        let s = NoisingSchedule::Linear;
        assert_eq!(s.alpha(0.0), 1.0);
        assert_eq!(s.alpha(1.0), 0.0);
        assert_eq!(s.alpha(0.25), 0.75);
        assert_eq!(s.alpha_prime(0.6), -1.0);
        // alpha'(t) / (1 - alpha(t)) = -1/t for the linear schedule.
        let t = 0.4;
        assert!((s.alpha_prime(t) / (1.0 - s.alpha(t)) + 1.0 / t).abs() < 1e-12);
    }

    #[test]
    fn polynomial_schedule_endpoints_and_slope() {
        let s = NoisingSchedule::Polynomial { degree: 2 };
        assert_eq!(s.alpha(0.0), 1.0);
        assert_eq!(s.alpha(1.0), 0.0);
        assert!((s.alpha(0.5) - 0.75).abs() < 1e-15);
        assert!((s.alpha_prime(0.5) + 1.0).abs() < 1e-15);
        assert!(NoisingSchedule::Polynomial { degree: 1 }.validate().is_err());
    }

    #[test]
    fn alpha_prime_matches_finite_difference() {
        let eps = 1e-6;
        for sched in SCHEDULES {
            for k in 1..40 {
                let t = k as f64 / 40.0 * 0.98;
                let fd = (sched.alpha(t + eps) - sched.alpha(t - eps)) / (2.0 * eps);
                assert!(
                    (fd - sched.alpha_prime(t)).abs() < 1e-8,
                    "{sched:?} at t={t}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn alpha_inv_inverts_alpha(t in 0.0f64..=1.0, poly in proptest::bool::ANY) {
            let sched = if poly {
                NoisingSchedule::Polynomial { degree: 2 }
            } else {
                NoisingSchedule::Linear
            };
            let a = sched.alpha(t);
            prop_assert!((sched.alpha_inv(a) - t).abs() < 1e-12);
        }

        #[test]
        fn alpha_is_strictly_decreasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for sched in SCHEDULES {
                prop_assert!(sched.alpha(lo) > sched.alpha(hi));
            }
        }
    }

    #[test]
    fn masked_seq_validation() {
        assert!(MaskedSeq::new(3, vec![0, 1, 3]).is_ok());
        assert!(MaskedSeq::new(3, vec![4]).is_err());
        assert!(MaskedSeq::new(0, vec![]).is_err());
        assert!(MaskedSeq::from_values(2, &[0, 1]).is_ok());
        assert!(MaskedSeq::from_values(2, &[2]).is_err());
        let w = MaskedSeq::from_values(2, &[0, 1]).unwrap();
        assert_eq!(w.toks(), &[1, 2]);
        assert_eq!(w.values().unwrap(), vec![0, 1]);
    }

    #[test]
    fn extends_is_a_refinement_order() {
        let v = 4;
        let w0 = MaskedSeq::new(v, vec![2, 3, 1]).unwrap();
        let wt = MaskedSeq::new(v, vec![2, MASK, MASK]).unwrap();
        let other = MaskedSeq::new(v, vec![1, MASK, MASK]).unwrap();
        assert!(w0.extends(&wt));
        assert!(w0.extends(&w0));
        assert!(wt.extends(&MaskedSeq::fully_masked(v, 3)));
        assert!(!w0.extends(&other));
        assert!(!wt.extends(&w0));
    }

    #[test]
    fn forward_mask_identity_at_zero_and_full_at_one() {
        let w0 = MaskedSeq::from_values(4, &[0, 1, 2, 3, 0]).unwrap();
        for sched in SCHEDULES {
            let mut rng = RandomSource::from_seed(1);
            let same = forward_mask(&w0, 0.0, sched, &mut rng).unwrap();
            assert_eq!(same, w0);
            let gone = forward_mask(&w0, 1.0, sched, &mut rng).unwrap();
            assert_eq!(gone.n_masked(), 5);
        }
    }

    #[test]
    fn forward_mask_rejects_partial_input() {
        let wt = MaskedSeq::new(2, vec![1, MASK]).unwrap();
        let mut rng = RandomSource::from_seed(1);
        assert!(forward_mask(&wt, 0.5, NoisingSchedule::Linear, &mut rng).is_err());
        assert!(forward_mask_step(&wt, 0.2, 0.5, NoisingSchedule::Linear, &mut rng).is_ok());
    }

    #[test]
    fn forward_mask_rejects_bad_times() {
        let w0 = MaskedSeq::from_values(2, &[0]).unwrap();
        let mut rng = RandomSource::from_seed(1);
        assert!(forward_mask(&w0, -0.1, NoisingSchedule::Linear, &mut rng).is_err());
        assert!(forward_mask(&w0, 1.1, NoisingSchedule::Linear, &mut rng).is_err());
        assert!(forward_mask_step(&w0, 0.6, 0.5, NoisingSchedule::Linear, &mut rng).is_err());
    }

    #[test]
    fn mask_rate_matches_schedule() {
        let n = 4000;
        let w0 = MaskedSeq::from_values(2, &vec![0; n]).unwrap();
        for sched in SCHEDULES {
            for &t in &[0.2, 0.5, 0.8] {
                let mut rng = RandomSource::from_seed(42);
                let wt = forward_mask(&w0, t, sched, &mut rng).unwrap();
                let p = 1.0 - sched.alpha(t);
                let sd = (n as f64 * p * (1.0 - p)).sqrt();
                let observed = wt.n_masked() as f64;
                assert!(
                    (observed - n as f64 * p).abs() < 3.0 * sd,
                    "{sched:?} t={t}: {observed} masked, expected {}",
                    n as f64 * p
                );
            }
        }
    }

    /// Single-position chain identity: jumping 0 -> s -> t has the same
    /// masking law as jumping 0 -> t directly.
    #[test]
    fn two_jumps_compose_exactly() {
        for sched in SCHEDULES {
            for &(s, t) in &[(0.3, 0.7), (0.1, 0.9), (0.5, 0.6)] {
                // P(masked at t via s) = (1 - alpha_s) + alpha_s * (1 - alpha_t/alpha_s)
                let a_s = sched.alpha(s);
                let a_t = sched.alpha(t);
                let via = (1.0 - a_s) + a_s * (1.0 - a_t / a_s);
                let direct = 1.0 - a_t;
                assert!((via - direct).abs() < 1e-12, "{sched:?} s={s} t={t}");

                // Empirical check through the samplers.
                let w0 = MaskedSeq::from_values(2, &vec![0; 2000]).unwrap();
                let mut rng = RandomSource::from_seed(7);
                let ws = forward_mask(&w0, s, sched, &mut rng).unwrap();
                let wt = forward_mask_step(&ws, s, t, sched, &mut rng).unwrap();
                let sd = (2000.0 * direct * (1.0 - direct)).sqrt();
                assert!((wt.n_masked() as f64 - 2000.0 * direct).abs() < 3.0 * sd);
            }
        }
    }

    #[test]
    fn reverse_posterior_sample_copies_and_reveals() {
        // Unmask probability (alpha_s - alpha_t)/(1 - alpha_t) = 1 when s=0.
        let w0 = MaskedSeq::from_values(8, &[1, 6]).unwrap();
        let wt = MaskedSeq::new(8, vec![2, MASK]).unwrap();
        let mut rng = RandomSource::from_seed(3);
        for _ in 0..50 {
            let ws =
                reverse_posterior_sample(&wt, &w0, 0.0, 0.5, NoisingSchedule::Linear, &mut rng)
                    .unwrap();
            assert_eq!(ws, w0);
        }
    }

    #[test]
    fn reverse_posterior_rejects_inconsistent_args() {
        let w0 = MaskedSeq::from_values(2, &[0, 1]).unwrap();
        let wt = MaskedSeq::new(2, vec![2, MASK]).unwrap();
        let mut rng = RandomSource::from_seed(3);
        // wt disagrees with w0 at position 0.
        assert!(
            reverse_posterior_sample(&wt, &w0, 0.1, 0.5, NoisingSchedule::Linear, &mut rng)
                .is_err()
        );
        let wt_ok = MaskedSeq::new(2, vec![1, MASK]).unwrap();
        // s >= t.
        assert!(
            reverse_posterior_sample(&wt_ok, &w0, 0.5, 0.5, NoisingSchedule::Linear, &mut rng)
                .is_err()
        );
    }

    /// Enumerates every candidate `w_s` on the refinement lattice between
    /// `w_t` and `w_0` and checks the posterior pmf sums to one.
    fn pmf_total(w0: &MaskedSeq, wt: &MaskedSeq, s: f64, t: f64, sched: NoisingSchedule) -> f64 {
        let masked = wt.masked_indices();
        let mut total = 0.0;
        for subset in 0u32..(1 << masked.len()) {
            let mut ws = wt.clone();
            for (bit, &pos) in masked.iter().enumerate() {
                if subset >> bit & 1 == 1 {
                    ws.set(pos, w0.tok(pos));
                }
            }
            total += reverse_posterior_pmf(&ws, wt, w0, s, t, sched).unwrap();
        }
        total
    }

    proptest! {
        #[test]
        fn reverse_posterior_pmf_normalizes(
            seed in 0u64..1000,
            s_frac in 0.05f64..0.95,
            t in 0.1f64..1.0,
            len in 1usize..=4,
            poly in proptest::bool::ANY,
        ) {
            let sched = if poly {
                NoisingSchedule::Polynomial { degree: 2 }
            } else {
                NoisingSchedule::Linear
            };
            let s = s_frac * t * 0.999;
            let mut rng = RandomSource::from_seed(seed);
            let vals: Vec<u32> = (0..len).map(|_| rng.below(4) as u32).collect();
            let w0 = MaskedSeq::from_values(4, &vals).unwrap();
            let wt = forward_mask(&w0, t, sched, &mut rng).unwrap();
            let total = pmf_total(&w0, &wt, s, t, sched);
            prop_assert!((total - 1.0).abs() < 1e-9, "total {total}");
        }
    }

    #[test]
    fn reverse_posterior_pmf_zero_off_lattice() {
        let w0 = MaskedSeq::from_values(3, &[0, 1]).unwrap();
        let wt = MaskedSeq::new(3, vec![MASK, MASK]).unwrap();
        // Wrong value at position 0: not between wt and w0.
        let ws = MaskedSeq::new(3, vec![3, MASK]).unwrap();
        let p = reverse_posterior_pmf(&ws, &wt, &w0, 0.2, 0.8, NoisingSchedule::Linear).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn reverse_posterior_sample_matches_pmf() {
        let sched = NoisingSchedule::Linear;
        let (s, t) = (0.3, 0.8);
        let w0 = MaskedSeq::from_values(3, &[2, 0]).unwrap();
        let wt = MaskedSeq::fully_masked(3, 2);
        let mut rng = RandomSource::from_seed(9);
        let n = 10_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let ws = reverse_posterior_sample(&wt, &w0, s, t, sched, &mut rng).unwrap();
            *counts.entry(ws.toks().to_vec()).or_insert(0usize) += 1;
        }
        let mut tv = 0.0;
        let masked = wt.masked_indices();
        for subset in 0u32..(1 << masked.len()) {
            let mut ws = wt.clone();
            for (bit, &pos) in masked.iter().enumerate() {
                if subset >> bit & 1 == 1 {
                    ws.set(pos, w0.tok(pos));
                }
            }
            let exact = reverse_posterior_pmf(&ws, &wt, &w0, s, t, sched).unwrap();
            let freq = *counts.get(ws.toks()).unwrap_or(&0) as f64 / n as f64;
            tv += 0.5 * (exact - freq).abs();
        }
        assert!(tv < 0.02, "total variation {tv}");
    }
}
