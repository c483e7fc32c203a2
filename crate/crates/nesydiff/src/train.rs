//! Gradient estimation for the variational training objective.
//!
//! Each example contributes three loss terms: a concept unmasking loss that
//! pulls the model toward the variational concept sample, an output unmasking
//! loss estimated by a score-function estimator with a leave-one-out
//! baseline, and an entropy bonus that keeps the variational posterior from
//! collapsing. The variational posterior itself is sampled by running the
//! reverse sampler with every unmasking draw tilted toward the observed
//! output through self-normalized importance resampling.

use crate::diffusion::{forward_mask, reverse_posterior_sample, MaskedSeq, NoisingSchedule};
use crate::error::{Error, Result};
use crate::model::{GradientBundle, ModelParams, UnmaskingDistribution};
use crate::oracle::{self, EnumerationBudget};
use crate::program::Program;
use crate::rng::RandomSource;

/// Relative weights of the three loss terms. The output term conventionally
/// stays at 1 and the other two are tuned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Concept unmasking loss weight.
    pub gamma_w: f64,
    /// Variational entropy bonus weight.
    pub gamma_h: f64,
    /// Output unmasking loss weight.
    pub gamma_y: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma_w: 1e-5,
            gamma_h: 0.01,
            gamma_y: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_w", self.gamma_w),
            ("gamma_h", self.gamma_h),
            ("gamma_y", self.gamma_y),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!(
                    "{name} must be a finite nonnegative real, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How the entropy bonus is computed. Both act at the fully masked state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntropyMode {
    /// Entropy of the model's factorized completion distribution. Cheap and
    /// the default.
    Unconditional,
    /// Entropy of the completion distribution restricted to sequences the
    /// program maps onto the observed output, by exhaustive enumeration.
    /// Only viable for small concept spaces.
    Conditional,
}

/// Estimator knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainHyper {
    /// Sample count of the score-function estimator; it divides by one less,
    /// so at least 2.
    pub rloo_samples: usize,
    /// Candidates drawn per importance-resampling step.
    pub snis_candidates: usize,
    /// Constraint penalty: each violated output position multiplies a
    /// candidate's reward by exp(-beta).
    pub beta: f64,
    pub entropy_mode: EntropyMode,
    /// Margin of the reward rescaling: the best candidate's weight never
    /// exceeds exp(margin), preventing overflow.
    pub reward_rescale_margin: f64,
    /// Floor of the reward rescaling: no candidate's weight falls below
    /// exp(-floor), preventing underflow to zero.
    pub reward_floor: f64,
    /// Rounds of the time-discretized variational sampler. When the round
    /// count reaches the concept count, the sampler unmasks exactly one
    /// position per event instead.
    pub sampler_steps: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            rloo_samples: 16,
            snis_candidates: 8,
            beta: 10.0,
            entropy_mode: EntropyMode::Unconditional,
            reward_rescale_margin: 70.0,
            reward_floor: 100.0,
            sampler_steps: 8,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.rloo_samples < 2 {
            return Err(Error::domain(format!(
                "the leave-one-out baseline needs >= 2 samples, got {}",
                self.rloo_samples
            )));
        }
        if self.snis_candidates == 0 {
            return Err(Error::domain("need >= 1 resampling candidate"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::domain(format!(
                "constraint penalty must be a positive real, got {}",
                self.beta
            )));
        }
        for (name, v) in [
            ("reward_rescale_margin", self.reward_rescale_margin),
            ("reward_floor", self.reward_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!(
                    "{name} must be a positive real, got {v}"
                )));
            }
        }
        if self.sampler_steps == 0 {
            return Err(Error::domain("need >= 1 sampler round"));
        }
        Ok(())
    }
}

/// Number of output positions where the program's value on `w` differs from
/// the observed output.
pub fn violations(prog: &dyn Program, w: &MaskedSeq, y0: &MaskedSeq) -> Result<usize> {
    let out = prog.eval(w)?;
    if y0.len() != out.len() || y0.vocab() != out.vocab() {
        return Err(Error::shape(format!(
            "observed output {}x{} vs program output {}x{}",
            y0.len(),
            y0.vocab(),
            out.len(),
            out.vocab()
        )));
    }
    Ok((0..out.len()).filter(|&i| out.tok(i) != y0.tok(i)).count())
}

/// Soft constraint reward in (0, 1]: exactly 1 when the program reproduces
/// the observed output, shrinking by exp(-beta) per violated position.
pub fn relaxed_reward(
    prog: &dyn Program,
    w: &MaskedSeq,
    y0: &MaskedSeq,
    beta: f64,
) -> Result<f64> {
    Ok((-beta * violations(prog, w, y0)? as f64).exp())
}

/// Reward weights for a batch of candidates, rescaled in log space so the
/// best candidates keep their exact ratios while extreme penalties neither
/// overflow nor all round to zero. With penalties `l_j = beta * count_j`,
/// the shift is `min(mean_j l_j, margin + min_j l_j)` and each weight is
/// `exp(-min(l_j - shift, floor))`: the best weight never exceeds
/// exp(margin), the worst never drops below exp(-floor).
pub fn stable_rewards(violation_counts: &[usize], beta: f64, margin: f64, floor: f64) -> Vec<f64> {
    assert!(!violation_counts.is_empty(), "need at least one candidate");
    let ls: Vec<f64> = violation_counts.iter().map(|&c| beta * c as f64).collect();
    let mean = ls.iter().sum::<f64>() / ls.len() as f64;
    let min = ls.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = mean.min(margin + min);
    ls.iter().map(|l| (-(l - shift).min(floor)).exp()).collect()
}

/// Draws candidates from `dist`, weighs each by its stabilized constraint
/// reward, and resamples one in proportion. With a strong penalty this
/// effectively keeps the candidate violating the fewest output constraints.
pub fn snis_select(
    dist: &UnmaskingDistribution,
    prog: &dyn Program,
    y0: &MaskedSeq,
    hyper: &TrainHyper,
    rng: &mut RandomSource,
) -> Result<MaskedSeq> {
    let mut candidates = Vec::with_capacity(hyper.snis_candidates);
    let mut counts = Vec::with_capacity(hyper.snis_candidates);
    for _ in 0..hyper.snis_candidates {
        let cand = dist.sample_completion(rng);
        counts.push(violations(prog, &cand, y0)?);
        candidates.push(cand);
    }
    let weights = stable_rewards(
        &counts,
        hyper.beta,
        hyper.reward_rescale_margin,
        hyper.reward_floor,
    );
    let pick = rng.categorical(&weights);
    Ok(candidates.swap_remove(pick))
}

/// Samples a complete concept sequence approximately distributed as the
/// reverse process conditioned on the observed output: the reverse sampler
/// runs as usual, but every unmasking draw comes from an importance-resampled
/// completion tilted toward `y0`.
///
/// One position unmasks per event when `sampler_steps` covers the sequence
/// length; the model never reads the clock, so only the uniformly random
/// unmask order matters there. Otherwise the time grid has `sampler_steps`
/// rounds and each round reveals a random subset through the reverse
/// posterior.
pub fn sample_variational(
    params: &ModelParams,
    x: &[f64],
    y0: &MaskedSeq,
    prog: &dyn Program,
    hyper: &TrainHyper,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<MaskedSeq> {
    hyper.validate()?;
    let w = prog.concept_dims();
    let mut state = MaskedSeq::fully_masked(prog.concept_vocab(), w);
    if hyper.sampler_steps >= w {
        while state.n_masked() > 0 {
            let masked = state.masked_indices();
            let pos = masked[rng.below(masked.len())];
            let dist = params.dist(x, &state)?;
            let chosen = snis_select(&dist, prog, y0, hyper, rng)?;
            state.set(pos, chosen.tok(pos));
        }
    } else {
        let t_steps = hyper.sampler_steps;
        for k in (1..=t_steps).rev() {
            let t = k as f64 / t_steps as f64;
            let s = (k - 1) as f64 / t_steps as f64;
            let dist = params.dist(x, &state)?;
            let chosen = snis_select(&dist, prog, y0, hyper, rng)?;
            state = reverse_posterior_sample(&state, &chosen, s, t, sched, rng)?;
        }
    }
    Ok(state)
}

/// Gradient and value of the concept unmasking loss at one noised state:
/// `alpha'(t)/(1 - alpha(t))` times the summed log-probability of the clean
/// tokens over currently masked positions. The weight is negative, so the
/// bundle is a descent direction that raises those log-probabilities.
pub fn concept_loss_grad(
    params: &ModelParams,
    x: &[f64],
    w0: &MaskedSeq,
    wt: &MaskedSeq,
    t: f64,
    sched: NoisingSchedule,
) -> Result<(GradientBundle, f64)> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::domain(format!("time {t} outside (0, 1]")));
    }
    if !w0.is_complete() {
        return Err(Error::domain("clean sequence must be complete"));
    }
    let weight = sched.alpha_prime(t) / (1.0 - sched.alpha(t));
    let grad = params.backward_logprob(x, wt, w0, weight)?;
    let value = weight * params.dist(x, wt)?.logprob_masked(w0)?;
    Ok((grad, value))
}

/// Score-function estimate of the output unmasking loss gradient with a
/// leave-one-out baseline. Draws `s` completions of `wt`, scores every output
/// position by agreement with `y0`, and weights each completion's
/// log-likelihood gradient by its centered agreement. Positions no sample
/// gets right carry no signal; they are skipped and counted in the second
/// return value.
pub fn rloo_output_grad(
    params: &ModelParams,
    x: &[f64],
    wt: &MaskedSeq,
    y0: &MaskedSeq,
    prog: &dyn Program,
    s: usize,
    t: f64,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<(GradientBundle, usize)> {
    if s < 2 {
        return Err(Error::domain(format!(
            "the leave-one-out baseline needs >= 2 samples, got {s}"
        )));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::domain(format!("time {t} outside (0, 1]")));
    }
    let dist = params.dist(x, wt)?;
    let y_dims = prog.output_dims();
    let mut samples = Vec::with_capacity(s);
    let mut hits: Vec<Vec<bool>> = Vec::with_capacity(s);
    for _ in 0..s {
        let cand = dist.sample_completion(rng);
        let out = prog.eval(&cand)?;
        if out.len() != y0.len() || out.vocab() != y0.vocab() {
            return Err(Error::shape(
                "observed output shape differs from program output",
            ));
        }
        hits.push((0..y_dims).map(|i| out.tok(i) == y0.tok(i)).collect());
        samples.push(cand);
    }
    let a_prime = sched.alpha_prime(t);
    let mut skipped = 0usize;
    let mut coeffs = vec![0.0; s];
    for i in 0..y_dims {
        let mu = hits.iter().filter(|h| h[i]).count() as f64 / s as f64;
        if mu == 0.0 {
            skipped += 1;
            continue;
        }
        let scale = a_prime / (mu * (s - 1) as f64);
        for (j, h) in hits.iter().enumerate() {
            coeffs[j] += scale * (f64::from(h[i]) - mu);
        }
    }
    let grad = params.backward_logprob_batch(x, wt, &samples, &coeffs)?;
    Ok((grad, skipped))
}

/// Exact entropy of the output-constrained completion distribution at the
/// fully masked state, with its parameter gradient. Enumerates every concept
/// sequence, so the concept space must fit the budget; larger tasks should
/// use the unconditional entropy instead.
pub fn conditional_entropy_grad(
    params: &ModelParams,
    x: &[f64],
    y0: &MaskedSeq,
    prog: &dyn Program,
    budget: &EnumerationBudget,
) -> Result<(GradientBundle, f64)> {
    budget
        .check(prog.concept_vocab(), prog.concept_dims())
        .map_err(|e| {
            Error::Budget(format!(
                "{e}; switch to the unconditional entropy mode for this task"
            ))
        })?;
    let masked = MaskedSeq::fully_masked(prog.concept_vocab(), prog.concept_dims());
    let dist = params.dist(x, &masked)?;
    let cond = oracle::exact_conditional(&dist, prog, &masked, y0, budget)?;
    let entropy: f64 = cond
        .iter()
        .map(|(_, q)| if *q > 0.0 { -q * q.ln() } else { 0.0 })
        .sum();
    // dH = -Cov_q(log q, d log p): coefficient -q (log q + H) per sequence.
    let targets: Vec<MaskedSeq> = cond.iter().map(|(w, _)| w.clone()).collect();
    let coeffs: Vec<f64> = cond
        .iter()
        .map(|(_, q)| {
            if *q > 0.0 {
                -q * (q.ln() + entropy)
            } else {
                0.0
            }
        })
        .collect();
    let grad = params.backward_logprob_batch(x, &masked, &targets, &coeffs)?;
    Ok((grad, entropy))
}

/// Bookkeeping from one gradient estimate.
#[derive(Clone, Copy, Debug, Default)]
pub struct EstimatorStats {
    /// Output positions skipped because no sample satisfied them.
    pub mu_zero_dims: usize,
    /// Output positions considered in total.
    pub output_dims: usize,
}

/// One end-to-end loss-gradient estimate for a single example: samples the
/// variational posterior, noises it at a uniform time, and combines the
/// concept, output, and entropy gradients as
/// `(gamma_w / W) g_w + (gamma_y / Y) g_y - (gamma_h / W) dH`.
/// Terms with zero weight are skipped entirely. The indirect dependence of
/// the variational sample on the parameters is deliberately not
/// differentiated through.
pub fn estimate_gradient(
    params: &ModelParams,
    x: &[f64],
    y0: &MaskedSeq,
    prog: &dyn Program,
    weights: &LossWeights,
    hyper: &TrainHyper,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<(GradientBundle, EstimatorStats)> {
    weights.validate()?;
    hyper.validate()?;
    let w_dims = prog.concept_dims() as f64;
    let y_dims = prog.output_dims() as f64;

    let w0 = sample_variational(params, x, y0, prog, hyper, sched, rng)?;
    let t = rng.uniform_open();
    let wt = forward_mask(&w0, t, sched, rng)?;

    let mut total = GradientBundle::zeros(params.shape());
    let mut stats = EstimatorStats {
        mu_zero_dims: 0,
        output_dims: prog.output_dims(),
    };
    if weights.gamma_y > 0.0 {
        let (g_y, skipped) = rloo_output_grad(
            params,
            x,
            &wt,
            y0,
            prog,
            hyper.rloo_samples,
            t,
            sched,
            rng,
        )?;
        total.add_scaled(&g_y, weights.gamma_y / y_dims);
        stats.mu_zero_dims = skipped;
    }
    if weights.gamma_w > 0.0 {
        let (g_w, _) = concept_loss_grad(params, x, &w0, &wt, t, sched)?;
        total.add_scaled(&g_w, weights.gamma_w / w_dims);
    }
    if weights.gamma_h > 0.0 {
        let entropy_grad = match hyper.entropy_mode {
            EntropyMode::Unconditional => {
                let masked = MaskedSeq::fully_masked(prog.concept_vocab(), prog.concept_dims());
                params.backward_entropy(x, &masked)?.1
            }
            EntropyMode::Conditional => {
                conditional_entropy_grad(params, x, y0, prog, &EnumerationBudget::default())?.0
            }
        };
        // The entropy enters the objective negatively: more entropy, less loss.
        total.add_scaled(&entropy_grad, -weights.gamma_h / w_dims);
    }
    Ok((total, stats))
}

/// Linearly annealed step size for the given 1-based epoch: full strength on
/// the first epoch, `base / epochs` on the last. The taper lets the gradient
/// noise settle instead of keeping the parameters on a stationary random walk
/// around the optimum, which matters for solutions that live in shallow
/// basins (a hedged posterior is held at uniform only by the entropy bonus).
pub fn epoch_learning_rate(base: f64, epoch: usize, epochs: usize) -> f64 {
    debug_assert!(epoch >= 1 && epoch <= epochs);
    base * (1.0 - (epoch - 1) as f64 / epochs as f64)
}

/// Monte-Carlo estimate of the variational objective, for logging and bound
/// checks.
#[derive(Clone, Copy, Debug)]
pub struct NelboEstimate {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

/// Averages sampled concept and output loss values minus the entropy bonus
/// over a batch, cycling through the examples. The output term's per-position
/// agreement mass is enumerated exactly when the concept space fits the
/// default budget; otherwise it falls back to an empirical rate over the
/// score-function sample count (floored at half a count, since that path only
/// feeds logging at scales where enumeration is impossible).
pub fn nelbo_value_estimate(
    params: &ModelParams,
    batch: &[(&[f64], &MaskedSeq)],
    prog: &dyn Program,
    hyper: &TrainHyper,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
    samples: usize,
) -> Result<NelboEstimate> {
    if samples == 0 {
        return Err(Error::domain("need at least one sample"));
    }
    if batch.is_empty() {
        return Err(Error::domain("need at least one example"));
    }
    hyper.validate()?;
    let budget = EnumerationBudget::default();
    let exact_agreement = budget
        .check(prog.concept_vocab(), prog.concept_dims())
        .is_ok();
    let masked_root = MaskedSeq::fully_masked(prog.concept_vocab(), prog.concept_dims());
    let mut draws = Vec::with_capacity(samples);
    for n in 0..samples {
        let (x, y0) = batch[n % batch.len()];
        let w0 = sample_variational(params, x, y0, prog, hyper, sched, rng)?;
        let t = rng.uniform_open();
        let wt = forward_mask(&w0, t, sched, rng)?;
        let dist = params.dist(x, &wt)?;
        let l_w = sched.alpha_prime(t) / (1.0 - sched.alpha(t)) * dist.logprob_masked(&w0)?;
        let a_prime = sched.alpha_prime(t);
        let mut l_y = 0.0;
        if exact_agreement {
            for dim in 0..prog.output_dims() {
                let wmc = oracle::exact_wmc_dim(&dist, prog, &wt, y0, dim, &budget)?;
                // Zero mass logs as -inf, which is the honest answer here.
                l_y += a_prime * wmc.ln();
            }
        } else {
            let s = hyper.rloo_samples;
            let mut agree = vec![0usize; prog.output_dims()];
            for _ in 0..s {
                let out = prog.eval(&dist.sample_completion(rng))?;
                for (i, a) in agree.iter_mut().enumerate() {
                    *a += usize::from(out.tok(i) == y0.tok(i));
                }
            }
            for &a in &agree {
                let rate = (a as f64).max(0.5) / s as f64;
                l_y += a_prime * rate.ln();
            }
        }
        let h = match hyper.entropy_mode {
            EntropyMode::Unconditional => params.backward_entropy(x, &masked_root)?.0,
            EntropyMode::Conditional => {
                let dist0 = params.dist(x, &masked_root)?;
                oracle::exact_conditional_entropy(&dist0, prog, &masked_root, y0, &budget)?
            }
        };
        draws.push(l_w + l_y - h);
    }
    let (mean, se) = if draws.len() >= 2 {
        oracle::mean_and_se(&draws)
    } else {
        (draws[0], f64::INFINITY)
    };
    Ok(NelboEstimate { mean, se, samples })
}
