//! Brute-force reference implementations.
//!
//! Everything here trades time for certainty: exhaustive enumeration over
//! sequence spaces, unmask orders, or grid paths, and central finite
//! differences over every parameter. The fast estimators elsewhere in the
//! crate are tested against these at desk scale. Budgets are hard errors so
//! an oracle is never silently approximate.

use crate::diffusion::{MaskedSeq, NoisingSchedule, MASK};
use crate::error::{Error, Result};
use crate::model::{GradientBundle, ModelParams};
use crate::program::{GridSpec, Program};
use crate::rng::RandomSource;

/// Cap on exhaustive sequence enumeration.
#[derive(Clone, Copy, Debug)]
pub struct EnumerationBudget {
    pub max_sequences: u64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_sequences: 200_000,
        }
    }
}

impl EnumerationBudget {
    /// Number of completions of `n_masked` positions over `vocab` values, or
    /// an error if it exceeds the budget.
    pub fn check(&self, vocab: u32, n_masked: usize) -> Result<u64> {
        let mut total: u128 = 1;
        for _ in 0..n_masked {
            total = total.saturating_mul(vocab as u128);
            if total > self.max_sequences as u128 {
                return Err(Error::Budget(format!(
                    "{vocab}^{n_masked} sequences exceed the cap of {}",
                    self.max_sequences
                )));
            }
        }
        Ok(total as u64)
    }
}

/// All complete sequences extending `wt`, in canonical lexicographic order:
/// position 0 is most significant, values ascend.
pub fn enumerate_extensions(wt: &MaskedSeq, budget: &EnumerationBudget) -> Result<Vec<MaskedSeq>> {
    let masked = wt.masked_indices();
    let count = budget.check(wt.vocab(), masked.len())?;
    let mut out = Vec::with_capacity(count as usize);
    let mut current = wt.clone();
    fn rec(current: &mut MaskedSeq, masked: &[usize], depth: usize, out: &mut Vec<MaskedSeq>) {
        if depth == masked.len() {
            out.push(current.clone());
            return;
        }
        let pos = masked[depth];
        for tok in 1..=current.vocab() {
            current.set(pos, tok);
            rec(current, masked, depth + 1, out);
        }
        current.set(pos, MASK);
    }
    rec(&mut current, &masked, 0, &mut out);
    Ok(out)
}

/// All complete sequences of `len` positions over `vocab` values.
pub fn enumerate_sequences(
    vocab: u32,
    len: usize,
    budget: &EnumerationBudget,
) -> Result<Vec<MaskedSeq>> {
    enumerate_extensions(&MaskedSeq::fully_masked(vocab, len), budget)
}

/// Probability of the complete sequence `w` under the per-position rows of
/// `dist` (carry-over rows make non-extensions impossible).
pub fn seq_prob(dist: &crate::model::UnmaskingDistribution, w: &MaskedSeq) -> f64 {
    (0..w.len()).map(|i| dist.prob(i, w.tok(i))).product()
}

/// Exact weighted model count for one output position: the probability that
/// a completion of `wt` drawn from `dist` maps to `y`'s value at position
/// `dim`, summed by enumeration.
pub fn exact_wmc_dim(
    dist: &crate::model::UnmaskingDistribution,
    prog: &dyn Program,
    wt: &MaskedSeq,
    y: &MaskedSeq,
    dim: usize,
    budget: &EnumerationBudget,
) -> Result<f64> {
    if dim >= prog.output_dims() {
        return Err(Error::domain(format!(
            "output position {dim} outside 0..{}",
            prog.output_dims()
        )));
    }
    let mut total = 0.0;
    for cand in enumerate_extensions(wt, budget)? {
        let out = prog.eval(&cand)?;
        if out.tok(dim) == y.tok(dim) {
            total += seq_prob(dist, &cand);
        }
    }
    Ok(total)
}

/// Exact value of the output loss term at one noised state:
/// `alpha'(t) * sum_i log WMC_i(wt, y)`.
pub fn exact_output_loss(
    params: &ModelParams,
    x: &[f64],
    wt: &MaskedSeq,
    prog: &dyn Program,
    y: &MaskedSeq,
    t: f64,
    sched: NoisingSchedule,
    budget: &EnumerationBudget,
) -> Result<f64> {
    let dist = params.dist(x, wt)?;
    let mut total = 0.0;
    for dim in 0..prog.output_dims() {
        let wmc = exact_wmc_dim(&dist, prog, wt, y, dim, budget)?;
        if wmc <= 0.0 {
            return Err(Error::domain(format!(
                "output position {dim} has zero mass at this state"
            )));
        }
        total += wmc.ln();
    }
    Ok(sched.alpha_prime(t) * total)
}

/// Exact gradient of the output loss term, by full enumeration:
/// `alpha'(t) * sum_i (grad WMC_i) / WMC_i`.
pub fn exact_output_grad(
    params: &ModelParams,
    x: &[f64],
    wt: &MaskedSeq,
    prog: &dyn Program,
    y: &MaskedSeq,
    t: f64,
    sched: NoisingSchedule,
    budget: &EnumerationBudget,
) -> Result<GradientBundle> {
    let dist = params.dist(x, wt)?;
    let candidates = enumerate_extensions(wt, budget)?;
    let mut wmc = vec![0.0; prog.output_dims()];
    let mut hits: Vec<Vec<usize>> = Vec::with_capacity(candidates.len());
    for cand in &candidates {
        let out = prog.eval(cand)?;
        let mut dims = Vec::new();
        for dim in 0..prog.output_dims() {
            if out.tok(dim) == y.tok(dim) {
                wmc[dim] += seq_prob(&dist, cand);
                dims.push(dim);
            }
        }
        hits.push(dims);
    }
    for (dim, &w) in wmc.iter().enumerate() {
        if w <= 0.0 {
            return Err(Error::domain(format!(
                "output position {dim} has zero mass at this state"
            )));
        }
    }
    // grad sum_i log WMC_i = sum_w p(w) [sum_{i : hit} 1/WMC_i] grad log p(w).
    let coeffs: Vec<f64> = candidates
        .iter()
        .zip(&hits)
        .map(|(cand, dims)| {
            let inv: f64 = dims.iter().map(|&d| 1.0 / wmc[d]).sum();
            sched.alpha_prime(t) * seq_prob(&dist, cand) * inv
        })
        .collect();
    params.backward_logprob_batch(x, wt, &candidates, &coeffs)
}

/// Exact hard-constrained conditional over completions of `wt`:
/// `q(w) = p(w | wt, x) 1[program(w) = y] / Z`. Errors when no completion
/// satisfies the constraint.
pub fn exact_conditional(
    dist: &crate::model::UnmaskingDistribution,
    prog: &dyn Program,
    wt: &MaskedSeq,
    y: &MaskedSeq,
    budget: &EnumerationBudget,
) -> Result<Vec<(MaskedSeq, f64)>> {
    let mut support = Vec::new();
    let mut z = 0.0;
    for cand in enumerate_extensions(wt, budget)? {
        if prog.eval(&cand)?.toks() == y.toks() {
            let p = seq_prob(dist, &cand);
            z += p;
            support.push((cand, p));
        }
    }
    if z <= 0.0 {
        return Err(Error::domain(
            "no completion consistent with the output has positive mass",
        ));
    }
    for (_, p) in &mut support {
        *p /= z;
    }
    Ok(support)
}

/// Entropy of the exact hard-constrained conditional.
pub fn exact_conditional_entropy(
    dist: &crate::model::UnmaskingDistribution,
    prog: &dyn Program,
    wt: &MaskedSeq,
    y: &MaskedSeq,
    budget: &EnumerationBudget,
) -> Result<f64> {
    let cond = exact_conditional(dist, prog, wt, y, budget)?;
    Ok(cond
        .iter()
        .map(|(_, q)| if *q > 0.0 { -q * q.ln() } else { 0.0 })
        .sum())
}

/// Exact law of the continuous-time reverse process started from the fully
/// masked state: positions unmask one at a time in a uniformly random order,
/// each value drawn from the model at the partial state reached so far.
/// Enumerates all `W! * V^W` (order, values) paths; capped at `W, V <= 4`.
/// Returns the distribution over complete sequences in canonical order.
pub fn exact_reverse_distribution(
    params: &ModelParams,
    x: &[f64],
) -> Result<Vec<(MaskedSeq, f64)>> {
    let shape = params.shape();
    let (w, v) = (shape.seq_len, shape.vocab);
    if w > 4 || v > 4 {
        return Err(Error::Budget(format!(
            "reverse-law enumeration is capped at 4 positions x 4 values, got {w}x{v}"
        )));
    }
    let budget = EnumerationBudget::default();
    let all = enumerate_sequences(v, w, &budget)?;
    let index: std::collections::HashMap<Vec<u32>, usize> = all
        .iter()
        .enumerate()
        .map(|(i, s)| (s.toks().to_vec(), i))
        .collect();
    let mut mass = vec![0.0; all.len()];

    fn rec(
        params: &ModelParams,
        x: &[f64],
        state: &mut MaskedSeq,
        weight: f64,
        index: &std::collections::HashMap<Vec<u32>, usize>,
        mass: &mut [f64],
    ) -> Result<()> {
        let masked = state.masked_indices();
        if masked.is_empty() {
            mass[index[state.toks()]] += weight;
            return Ok(());
        }
        let dist = params.dist(x, state)?;
        let order_weight = weight / masked.len() as f64;
        for &pos in &masked {
            for tok in 1..=state.vocab() {
                let p = dist.prob(pos, tok);
                if p == 0.0 {
                    continue;
                }
                state.set(pos, tok);
                rec(params, x, state, order_weight * p, index, mass)?;
                state.set(pos, MASK);
            }
        }
        Ok(())
    }

    let mut state = MaskedSeq::fully_masked(v, w);
    rec(params, x, &mut state, 1.0, &index, &mut mass)?;
    Ok(all.into_iter().zip(mass).collect())
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `integral_0^1 a^m (1-a)^n da = m! n! / (m+n+1)!`.
fn beta_integral(m: usize, n: usize) -> f64 {
    (ln_factorial(m) + ln_factorial(n) - ln_factorial(m + n + 1)).exp()
}

/// Exact continuous-time likelihood `p(y | x)` of a single-position output
/// under the reverse process: the output position unmasks at a random time
/// and draws `y` with the model-count probability at the concept state
/// reached by then. Averages over unmasked subsets (time integrals in closed
/// form), unmask orders, and value draws. Any strictly decreasing schedule
/// yields the same value, since time enters only through `alpha`.
pub fn exact_output_likelihood(
    params: &ModelParams,
    x: &[f64],
    prog: &dyn Program,
    y: &MaskedSeq,
) -> Result<f64> {
    if prog.output_dims() != 1 {
        return Err(Error::domain(format!(
            "closed-form likelihood covers single-position outputs, got {}",
            prog.output_dims()
        )));
    }
    if !y.is_complete() || y.len() != 1 {
        return Err(Error::domain("output must be one complete position"));
    }
    let shape = params.shape();
    let w = shape.seq_len;
    if w > 4 || shape.vocab > 4 {
        return Err(Error::Budget(format!(
            "likelihood enumeration is capped at 4 positions x 4 values, got {w}x{}",
            shape.vocab
        )));
    }
    let budget = EnumerationBudget::default();

    // Sum over (ordered prefix of unmasked positions, their values) of the
    // path probability times the count-weighted mass of y at the final state.
    fn rec(
        params: &ModelParams,
        x: &[f64],
        prog: &dyn Program,
        y: &MaskedSeq,
        state: &mut MaskedSeq,
        remaining: &[usize],
        weight: f64,
        budget: &EnumerationBudget,
    ) -> Result<f64> {
        if remaining.is_empty() {
            let dist = params.dist(x, state)?;
            return Ok(weight * exact_wmc_dim(&dist, prog, state, y, 0, budget)?);
        }
        let dist = params.dist(x, state)?;
        let mut total = 0.0;
        for (k, &pos) in remaining.iter().enumerate() {
            let rest: Vec<usize> = remaining
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &p)| p)
                .collect();
            for tok in 1..=state.vocab() {
                let p = dist.prob(pos, tok);
                if p == 0.0 {
                    continue;
                }
                state.set(pos, tok);
                total += rec(params, x, prog, y, state, &rest, weight * p, budget)?;
                state.set(pos, MASK);
            }
        }
        Ok(total)
    }

    let mut total = 0.0;
    for subset in 0u32..(1 << w) {
        let dims: Vec<usize> = (0..w).filter(|&i| subset >> i & 1 == 1).collect();
        let m = dims.len();
        // P(these positions unmasked, others not) integrated over the
        // output's unmask time, divided by the m! enumerated orders.
        let time_weight = beta_integral(m, w - m) / (ln_factorial(m)).exp();
        let mut state = MaskedSeq::fully_masked(shape.vocab, w);
        let contribution = rec(params, x, prog, y, &mut state, &dims, 1.0, &budget)?;
        total += time_weight * contribution;
    }
    Ok(total)
}

/// Central finite differences of a scalar function of the parameters, over
/// every coordinate.
pub fn finite_difference(
    params: &ModelParams,
    eps: f64,
    mut f: impl FnMut(&ModelParams) -> Result<f64>,
) -> Result<GradientBundle> {
    let mut grad = GradientBundle::zeros(params.shape());
    let mut probe = params.clone();
    for i in 0..params.n_params() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Exhaustive least-cost simple path from the top-left to the bottom-right
/// cell, by depth-first search with positive-cost pruning. Grids above
/// 4x4 are refused.
pub fn brute_force_shortest_path(spec: &GridSpec, cost_idx: &[u32]) -> Result<f64> {
    if spec.side > 4 {
        return Err(Error::Budget(format!(
            "exhaustive path search is capped at side 4, got {}",
            spec.side
        )));
    }
    if cost_idx.len() != spec.cells() {
        return Err(Error::shape(format!(
            "{} cost indices for {} cells",
            cost_idx.len(),
            spec.cells()
        )));
    }
    let cost_of = |cell: usize| spec.costs[cost_idx[cell] as usize];
    let goal = spec.cells() - 1;
    let mut visited = vec![false; spec.cells()];
    let mut best = f64::INFINITY;

    fn dfs(
        spec: &GridSpec,
        cost_of: &dyn Fn(usize) -> f64,
        goal: usize,
        cur: usize,
        so_far: f64,
        visited: &mut [bool],
        best: &mut f64,
    ) {
        if so_far >= *best {
            return;
        }
        if cur == goal {
            *best = so_far;
            return;
        }
        for v in spec.neighbors(cur) {
            if !visited[v] {
                visited[v] = true;
                dfs(spec, cost_of, goal, v, so_far + cost_of(v), visited, best);
                visited[v] = false;
            }
        }
    }

    visited[0] = true;
    dfs(spec, &cost_of, goal, 0, cost_of(0), &mut visited, &mut best);
    Ok(best)
}

/// Per-pattern sum `-sum_{i masked} log p_i(w0_i | w_t)` for every masking
/// pattern of `w0`, used by the exact bound diagnostics below.
fn pattern_scores(params: &ModelParams, x: &[f64], w0: &MaskedSeq) -> Result<Vec<(usize, f64)>> {
    let w = w0.len();
    if w > 16 {
        return Err(Error::Budget(format!(
            "masking-pattern enumeration is capped at 16 positions, got {w}"
        )));
    }
    let mut out = Vec::with_capacity(1 << w);
    for pattern in 0u32..(1 << w) {
        let mut wt = w0.clone();
        for i in 0..w {
            if pattern >> i & 1 == 1 {
                wt.set(i, MASK);
            }
        }
        let n_masked = pattern.count_ones() as usize;
        let score = if n_masked == 0 {
            0.0
        } else {
            let dist = params.dist(x, &wt)?;
            -(0..w)
                .filter(|&i| wt.is_masked(i))
                .map(|i| dist.log_prob(i, w0.tok(i)))
                .sum::<f64>()
        };
        out.push((n_masked, score));
    }
    Ok(out)
}

/// Exact `T`-step masking bound on `-log p(w0 | x)` for a frozen model:
/// each step reveals positions between consecutive grid times and scores
/// them under the model at the noised state. Computed by enumerating all
/// masking patterns; the per-step revealed set is integrated out.
pub fn mdm_nelbo_discrete_exact(
    params: &ModelParams,
    x: &[f64],
    w0: &MaskedSeq,
    t_steps: usize,
    sched: NoisingSchedule,
) -> Result<f64> {
    if t_steps == 0 {
        return Err(Error::domain("need at least one step"));
    }
    let scores = pattern_scores(params, x, w0)?;
    let w = w0.len();
    let mut total = 0.0;
    for k in 1..=t_steps {
        let t = k as f64 / t_steps as f64;
        let s = (k - 1) as f64 / t_steps as f64;
        let (a_t, a_s) = (sched.alpha(t), sched.alpha(s));
        let mask_p = 1.0 - a_t;
        let reveal = (a_s - a_t) / (1.0 - a_t);
        for &(m, score) in &scores {
            if m == 0 {
                continue;
            }
            let pattern_p = mask_p.powi(m as i32) * a_t.powi((w - m) as i32);
            total += pattern_p * reveal * score;
        }
    }
    Ok(total)
}

/// Exact continuous-time masking bound on `-log p(w0 | x)` for a frozen
/// model. The time integral is closed-form per masking pattern
/// (`integral a^{W-m} (1-a)^{m-1} da`), so the value is schedule-invariant.
pub fn mdm_nelbo_continuous_exact(
    params: &ModelParams,
    x: &[f64],
    w0: &MaskedSeq,
) -> Result<f64> {
    let scores = pattern_scores(params, x, w0)?;
    let w = w0.len();
    let mut total = 0.0;
    for &(m, score) in &scores {
        if m == 0 {
            continue;
        }
        total += beta_integral(w - m, m - 1) * score;
    }
    Ok(total)
}

/// Mean and standard error of a sample.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    assert!(n >= 2.0, "need at least two samples");
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo estimate of the `T`-step bound: draws a step index and a
/// noised state, then scores the expected revealed positions. Returns the
/// mean and its standard error.
pub fn mdm_nelbo_discrete_mc(
    params: &ModelParams,
    x: &[f64],
    w0: &MaskedSeq,
    t_steps: usize,
    sched: NoisingSchedule,
    n_samples: usize,
    rng: &mut RandomSource,
) -> Result<(f64, f64)> {
    if t_steps == 0 {
        return Err(Error::domain("need at least one step"));
    }
    let mut draws = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let k = rng.below(t_steps) + 1;
        let t = k as f64 / t_steps as f64;
        let s = (k - 1) as f64 / t_steps as f64;
        let (a_t, a_s) = (sched.alpha(t), sched.alpha(s));
        let reveal = (a_s - a_t) / (1.0 - a_t);
        let wt = crate::diffusion::forward_mask(w0, t, sched, rng)?;
        let score = if wt.n_masked() == 0 {
            0.0
        } else {
            let dist = params.dist(x, &wt)?;
            -(0..w0.len())
                .filter(|&i| wt.is_masked(i))
                .map(|i| dist.log_prob(i, w0.tok(i)))
                .sum::<f64>()
        };
        draws.push(t_steps as f64 * reveal * score);
    }
    Ok(mean_and_se(&draws))
}

/// Monte-Carlo estimate of the continuous-time bound with uniformly drawn
/// times. Returns the mean and its standard error.
pub fn mdm_nelbo_continuous_mc(
    params: &ModelParams,
    x: &[f64],
    w0: &MaskedSeq,
    sched: NoisingSchedule,
    n_samples: usize,
    rng: &mut RandomSource,
) -> Result<(f64, f64)> {
    let mut draws = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let t = rng.uniform_open();
        let weight = -sched.alpha_prime(t) / (1.0 - sched.alpha(t));
        let wt = crate::diffusion::forward_mask(w0, t, sched, rng)?;
        let score = if wt.n_masked() == 0 {
            0.0
        } else {
            let dist = params.dist(x, &wt)?;
            -(0..w0.len())
                .filter(|&i| wt.is_masked(i))
                .map(|i| dist.log_prob(i, w0.tok(i)))
                .sum::<f64>()
        };
        draws.push(weight * score);
    }
    Ok(mean_and_se(&draws))
}
