//! Acceptance suite: twelve behavioral criteria covering estimator bias,
//! likelihood bounds, sampler laws, gradient correctness, end-to-end
//! training on all three tasks, and the symbolic oracles. Each criterion
//! prints one pass/fail line with its measured values; statistical criteria
//! run at frozen seeds.

use std::collections::HashMap;

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use nesydiff::config::{RunConfig, TaskKind};
use nesydiff::diffusion::{MaskedSeq, NoisingSchedule};
use nesydiff::error::Result;
use nesydiff::infer::{self, VoteStrategy};
use nesydiff::metrics::{self, EceConfig};
use nesydiff::model::{
    adam_step, AdamConfig, AdamState, GradientBundle, ModelParams, ModelShape,
};
use nesydiff::oracle::{self, EnumerationBudget};
use nesydiff::program::{Cnf, DigitAddition, GridShortestPath, GridSpec, Program, XorChain};
use nesydiff::rng::RandomSource;
use nesydiff::task::{self, Dataset};
use nesydiff::train::{self, EntropyMode, TrainHyper};

const SCHED: NoisingSchedule = NoisingSchedule::Linear;

struct Check {
    name: &'static str,
    detail: String,
    passed: bool,
}

impl Check {
    fn line(&self, idx: usize) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!("[{status}] {idx:>2} {}: {}", self.name, self.detail)
    }
}

fn small_shape(seq_len: usize, vocab: u32) -> ModelShape {
    ModelShape {
        feat_dim: 2,
        emb_dim: 3,
        hidden: 4,
        seq_len,
        vocab,
    }
}

fn frozen_model(seq_len: usize, vocab: u32, seed: u64, scale: f64) -> ModelParams {
    let mut rng = RandomSource::from_seed(seed);
    let mut params = ModelParams::init(small_shape(seq_len, vocab), &mut rng)
        .expect("desk-scale shape is valid");
    params.randomize(scale, &mut rng);
    params
}

/// 1. Averaging many score-function gradient bundles at a frozen state
/// reproduces the enumerated gradient of the output loss within sampling
/// noise: worst per-coordinate z-score at most 3 over 10^4 bundles. The
/// bundle sample count is large enough that the estimator's mean-in-the-
/// denominator bias sits below this resolution.
fn criterion_unbiased_output_gradient() -> Result<Check> {
    let params = frozen_model(3, 2, 211, 0.7);
    let x = [0.2, -0.5];
    let prog = XorChain::new(3)?;
    let w_ref = MaskedSeq::from_values(2, &[1, 0, 1])?;
    let y0 = prog.eval(&w_ref)?;
    let wt = MaskedSeq::fully_masked(2, 3);
    let t = 0.7;
    let (reps, samples) = (10_000usize, 1024usize);
    let exact = oracle::exact_output_grad(
        &params,
        &x,
        &wt,
        &prog,
        &y0,
        t,
        SCHED,
        &EnumerationBudget::default(),
    )?;

    let n = params.n_params();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut rng = RandomSource::from_seed(1);
    for _ in 0..reps {
        let (g, _) =
            train::rloo_output_grad(&params, &x, &wt, &y0, &prog, samples, t, SCHED, &mut rng)?;
        for (i, &v) in g.data().iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let reps_f = reps as f64;
    let mut worst = 0.0f64;
    for i in 0..n {
        let mean = sum[i] / reps_f;
        let var = (sum_sq[i] - reps_f * mean * mean) / (reps_f - 1.0);
        let se = (var / reps_f).sqrt();
        if se > 0.0 {
            worst = worst.max((mean - exact.data()[i]).abs() / se);
        } else if (mean - exact.data()[i]).abs() > 1e-12 {
            worst = f64::INFINITY;
        }
    }
    Ok(Check {
        name: "score-function output gradient is unbiased",
        detail: format!("worst coordinate z = {worst:.2} over {reps} bundles, want <= 3"),
        passed: worst <= 3.0,
    })
}

/// 2. The sampled training objective dominates the exact negative output
/// log-likelihood: on 20 random frozen models, a 10^4-sample estimate with
/// exact inner model counts stays above the enumerated value minus three
/// standard errors.
fn criterion_objective_bounds_likelihood() -> Result<Check> {
    let prog = XorChain::new(2)?;
    let x = [0.3, -0.2];
    let hyper = TrainHyper {
        snis_candidates: 64,
        beta: 20.0,
        entropy_mode: EntropyMode::Conditional,
        sampler_steps: 8,
        ..TrainHyper::default()
    };
    let mut worst = f64::INFINITY;
    for i in 0..20u64 {
        let params = frozen_model(2, 2, 300 + i, 0.6);
        // Condition on the likelier of the two outputs so every resampling
        // round has abundant consistent candidates.
        let one = MaskedSeq::from_values(2, &[1])?;
        let y0 = if oracle::exact_output_likelihood(&params, &x, &prog, &one)? >= 0.5 {
            one
        } else {
            MaskedSeq::from_values(2, &[0])?
        };
        let exact = oracle::exact_output_likelihood(&params, &x, &prog, &y0)?;
        let mut rng = RandomSource::from_seed(0x0bad_f00d ^ i);
        let est =
            train::nelbo_value_estimate(&params, &[(&x, &y0)], &prog, &hyper, SCHED, &mut rng, 10_000)?;
        worst = worst.min((est.mean + exact.ln()) / est.se);
    }
    Ok(Check {
        name: "sampled objective dominates the exact negative log-likelihood",
        detail: format!("worst z = {worst:+.2} over 20 random models, want >= -3"),
        passed: worst >= -3.0,
    })
}

/// 3. The round-count masking bound converges to the continuous-time value:
/// the exact gap |L_T - L_inf| never grows along T in {1,2,4,8,16,32}, and
/// at T = 32 it sits below the noise floor of a 10^4-sample estimate.
fn criterion_round_refinement_converges() -> Result<Check> {
    let params = frozen_model(2, 2, 401, 0.8);
    let x = [0.25, -0.45];
    let w0 = MaskedSeq::from_values(2, &[0, 1])?;
    let l_inf = oracle::mdm_nelbo_continuous_exact(&params, &x, &w0)?;
    let mut gaps = Vec::new();
    for t_steps in [1usize, 2, 4, 8, 16, 32] {
        let l_t = oracle::mdm_nelbo_discrete_exact(&params, &x, &w0, t_steps, SCHED)?;
        gaps.push((l_t - l_inf).abs());
    }
    let monotone = gaps.windows(2).all(|g| g[1] <= g[0] + 1e-12);

    let mut rng = RandomSource::from_seed(1);
    let (mc, se) = oracle::mdm_nelbo_discrete_mc(&params, &x, &w0, 32, SCHED, 10_000, &mut rng)?;
    let l32 = oracle::mdm_nelbo_discrete_exact(&params, &x, &w0, 32, SCHED)?;
    let below_floor = gaps[5] <= 3.0 * se;
    let mc_consistent = (mc - l32).abs() <= 3.0 * se;
    Ok(Check {
        name: "round-count refinement converges to the continuous bound",
        detail: format!(
            "gaps {:.1e} -> {:.1e} monotone {monotone}, final gap vs 3se {:.1e}/{:.1e}, mc z {:.2}",
            gaps[0],
            gaps[5],
            gaps[5],
            3.0 * se,
            (mc - l32).abs() / se
        ),
        passed: monotone && below_floor && mc_consistent,
    })
}

/// 4. Importance resampling with 64 candidates draws from the enumerated
/// output-conditioned completion law within 0.05 total variation at 10^4
/// trials.
fn criterion_resampling_matches_conditional() -> Result<Check> {
    let params = frozen_model(2, 2, 409, 0.5);
    let x = [0.6, -0.4];
    let prog = XorChain::new(2)?;
    let y0 = MaskedSeq::from_values(2, &[1])?;
    let wt = MaskedSeq::fully_masked(2, 2);
    let dist = params.dist(&x, &wt)?;
    let cond = oracle::exact_conditional(&dist, &prog, &wt, &y0, &EnumerationBudget::default())?;
    let hyper = TrainHyper {
        snis_candidates: 64,
        beta: 20.0,
        ..TrainHyper::default()
    };
    let n = 10_000usize;
    let mut rng = RandomSource::from_seed(2);
    let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
    for _ in 0..n {
        let w = train::snis_select(&dist, &prog, &y0, &hyper, &mut rng)?;
        *counts.entry(w.toks().to_vec()).or_insert(0) += 1;
    }
    let mut tv = 0.0;
    let mut off_support = 0usize;
    for (w, count) in &counts {
        if !cond.iter().any(|(c, _)| c.toks() == w.as_slice()) {
            off_support += count;
        }
    }
    for (w, q) in &cond {
        let emp = *counts.get(w.toks()).unwrap_or(&0) as f64 / n as f64;
        tv += (emp - q).abs();
    }
    tv = (tv + off_support as f64 / n as f64) / 2.0;
    Ok(Check {
        name: "importance resampling matches the enumerated conditional",
        detail: format!("total variation {tv:.4} at {n} trials, want < 0.05"),
        passed: tv < 0.05,
    })
}

/// 5. The one-event-per-step sampler and the 2-round sampler draw the same
/// law on a weakly state-dependent two-position model: a two-sample
/// chi-square test keeps p > 0.01 at 10^5 draws each, and both empirical
/// laws sit within 0.02 total variation of the enumerated reverse law.
fn criterion_samplers_agree() -> Result<Check> {
    let params = frozen_model(2, 2, 109, 0.15);
    let x = [0.3, 0.1];
    let law = oracle::exact_reverse_distribution(&params, &x)?;
    let n = 100_000usize;
    let mut rng_a = RandomSource::from_seed(21);
    let mut rng_b = RandomSource::from_seed(21 ^ 0xffff);
    let mut counts_a: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut counts_b: HashMap<Vec<u32>, usize> = HashMap::new();
    for _ in 0..n {
        let w = infer::first_hitting_sample(&params, &x, SCHED, &mut rng_a)?;
        *counts_a.entry(w.toks().to_vec()).or_insert(0) += 1;
        let w = infer::time_discretized_sample(&params, &x, 2, SCHED, &mut rng_b)?;
        *counts_b.entry(w.toks().to_vec()).or_insert(0) += 1;
    }
    let mut stat = 0.0;
    let mut tv_a = 0.0;
    let mut tv_b = 0.0;
    for (w, p) in &law {
        let oa = *counts_a.get(w.toks()).unwrap_or(&0) as f64;
        let ob = *counts_b.get(w.toks()).unwrap_or(&0) as f64;
        if oa + ob > 0.0 {
            stat += (oa - ob) * (oa - ob) / (oa + ob);
        }
        tv_a += (oa / n as f64 - p).abs();
        tv_b += (ob / n as f64 - p).abs();
    }
    tv_a /= 2.0;
    tv_b /= 2.0;
    let dof = (law.len() - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(dof).expect("positive dof").cdf(stat);
    let passed = p_value > 0.01 && tv_a < 0.02 && tv_b < 0.02;
    Ok(Check {
        name: "one-shot and round-based samplers draw the same law",
        detail: format!(
            "chi-square p = {p_value:.3} (want > 0.01), TV {tv_a:.4}/{tv_b:.4} (want < 0.02)"
        ),
        passed,
    })
}

/// 6. Analytic gradients of every backward operation (log-probability,
/// unmasking entropy, output-conditioned entropy) match central finite
/// differences within 1e-4 relative error on 5 random tiny networks.
fn criterion_gradients_match_finite_differences() -> Result<Check> {
    let prog = XorChain::new(2)?;
    let y0 = MaskedSeq::from_values(2, &[1])?;
    let x = [0.4, -0.3];
    let wt = MaskedSeq::fully_masked(2, 2);
    let w0 = MaskedSeq::from_values(2, &[1, 0])?;
    let budget = EnumerationBudget::default();
    let eps = 1e-5;
    let rel_err = |got: &GradientBundle, want: &GradientBundle| {
        let mut diff = got.clone();
        diff.add_scaled(want, -1.0);
        diff.norm() / want.norm().max(1e-12)
    };

    let mut worst = 0.0f64;
    for seed in 501..=505u64 {
        let params = frozen_model(2, 2, seed, 0.8);

        let analytic = params.backward_logprob(&x, &wt, &w0, 1.0)?;
        let numeric =
            oracle::finite_difference(&params, eps, |p| p.dist(&x, &wt)?.logprob_masked(&w0))?;
        worst = worst.max(rel_err(&analytic, &numeric));

        let (_, analytic) = params.backward_entropy(&x, &wt)?;
        let numeric =
            oracle::finite_difference(&params, eps, |p| Ok(p.backward_entropy(&x, &wt)?.0))?;
        worst = worst.max(rel_err(&analytic, &numeric));

        let (analytic, _) = train::conditional_entropy_grad(&params, &x, &y0, &prog, &budget)?;
        let numeric = oracle::finite_difference(&params, eps, |p| {
            Ok(train::conditional_entropy_grad(p, &x, &y0, &prog, &budget)?.1)
        })?;
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    Ok(Check {
        name: "analytic gradients match finite differences",
        detail: format!("worst relative error {worst:.2e} over 5 networks x 3 operations, want < 1e-4"),
        passed: worst < 1e-4,
    })
}

// Substream indices mirroring the command-line driver, so a training run
// here reproduces `nesydiff train` at the same config and seed.
const STREAM_TRAIN_DATA: u64 = 1;
const STREAM_EVAL_DATA: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_TRAIN: u64 = 4;

fn train_model(c: &RunConfig, train_set: &Dataset, prog: &(dyn Program + Sync)) -> Result<ModelParams> {
    let root = RandomSource::from_seed(c.seed);
    let shape = ModelShape {
        feat_dim: train_set.feat_dim,
        emb_dim: c.emb_dim,
        hidden: c.hidden,
        seq_len: train_set.concept_len,
        vocab: train_set.concept_vocab,
    };
    let mut params = ModelParams::init(shape, &mut root.substream(STREAM_INIT))?;
    let mut adam = AdamState::new(shape);
    let train_root = root.substream(STREAM_TRAIN);
    for epoch in 1..=c.epochs {
        let adam_cfg = AdamConfig::new(train::epoch_learning_rate(
            c.learning_rate,
            epoch,
            c.epochs,
        ));
        let mut epoch_rng = train_root.substream(epoch as u64);
        let order = epoch_rng.permutation(train_set.len());
        for (b, batch) in order.chunks(c.batch_size).enumerate() {
            let grads: Vec<GradientBundle> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let ex = &train_set.examples[idx];
                    let mut rng = epoch_rng.substream(((b as u64) << 32) | (j as u64 + 1));
                    train::estimate_gradient(
                        &params, &ex.x, &ex.y0, prog, &c.weights, &c.hyper, SCHED, &mut rng,
                    )
                    .map(|(g, _)| g)
                })
                .collect::<Result<_>>()?;
            let mut total = GradientBundle::zeros(shape);
            for g in &grads {
                total.add_scaled(g, 1.0 / batch.len() as f64);
            }
            adam_step(&mut params, &mut adam, &adam_cfg, &total);
        }
    }
    Ok(params)
}

fn predict_outputs(
    params: &ModelParams,
    eval: &Dataset,
    prog: &(dyn Program + Sync),
    strategy: &VoteStrategy,
    t_steps: usize,
    root: &RandomSource,
) -> Result<Vec<MaskedSeq>> {
    eval.examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng = root.substream(i as u64);
            let pool = infer::draw_samples(params, &ex.x, strategy.samples, t_steps, SCHED, &mut rng)?;
            infer::vote_output(&pool, prog, strategy.output)
        })
        .collect()
}

/// 7. Training on the exclusive-or task spreads concept probability over
/// both indistinguishable explanations instead of committing to one: over
/// 10 seeds the label accuracy stays at or above 0.99 while every estimated
/// concept marginal on the inherently ambiguous inputs lies in [0.4, 0.6]
/// and the concept calibration error stays below 0.1.
fn criterion_xor_hedges_ambiguity() -> Result<Check> {
    let mut min_acc = f64::INFINITY;
    let mut marg_lo = f64::INFINITY;
    let mut marg_hi = f64::NEG_INFINITY;
    let mut max_ece = f64::NEG_INFINITY;
    for seed in 1..=10u64 {
        let mut c = RunConfig::defaults_for(TaskKind::Xor);
        c.seed = seed;
        let root = RandomSource::from_seed(c.seed);
        let train_set = task::make_xor_task(
            c.train_examples,
            c.noise_sigma,
            &mut root.substream(STREAM_TRAIN_DATA),
        );
        let eval_set = task::make_xor_task(
            c.eval_examples,
            c.noise_sigma,
            &mut root.substream(STREAM_EVAL_DATA),
        );
        let prog = XorChain::new(2)?;
        let params = train_model(&c, &train_set, &prog)?;

        let eval_root = root.substream(5);
        let outputs = predict_outputs(
            &params,
            &eval_set,
            &prog,
            &c.vote,
            c.hyper.sampler_steps,
            &eval_root,
        )?;
        let golds: Vec<MaskedSeq> = eval_set.examples.iter().map(|e| e.y0.clone()).collect();
        let acc = metrics::exact_match_accuracy(&outputs, &golds)?;
        min_acc = min_acc.min(acc);

        // Every input is ambiguous here: flipping both concepts preserves
        // the output, so the hedged solution is 1/2 per value. The whole
        // split keeps the calibration bins populated (128 pairs would put
        // binomial noise alone above the threshold).
        let subset = &eval_set.examples[..];
        let marg_root = root.substream(6);
        let marginals: Vec<Vec<Vec<f64>>> = subset
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut rng = marg_root.substream(i as u64);
                infer::estimate_marginals(&params, &ex.x, 1000, c.hyper.sampler_steps, SCHED, &mut rng)
            })
            .collect::<Result<_>>()?;
        for rows in &marginals {
            for row in rows {
                for &m in row {
                    marg_lo = marg_lo.min(m);
                    marg_hi = marg_hi.max(m);
                }
            }
        }
        let truths: Vec<MaskedSeq> = subset
            .iter()
            .map(|e| e.concepts.clone().expect("generator records truth"))
            .collect();
        let ece = metrics::ece(
            &marginals,
            &truths,
            &EceConfig {
                bins: 10,
                marginal_samples: 1000,
            },
        )?;
        max_ece = max_ece.max(ece);
    }
    let passed = min_acc >= 0.99 && marg_lo >= 0.4 && marg_hi <= 0.6 && max_ece < 0.1;
    Ok(Check {
        name: "xor training hedges concepts across ambiguous solutions",
        detail: format!(
            "10 seeds: min accuracy {min_acc:.3} (want >= 0.99), marginals [{marg_lo:.3}, {marg_hi:.3}] (want within [0.4, 0.6]), max calibration error {max_ece:.3} (want < 0.1)"
        ),
        passed,
    })
}

/// 8. Learning two-digit addition from sum supervision alone reaches at
/// least 0.90 held-out exact match within 20 epochs on synthetic glyphs.
fn criterion_addition_trains() -> Result<Check> {
    let mut c = RunConfig::defaults_for(TaskKind::Addition);
    c.seed = 1;
    let root = RandomSource::from_seed(c.seed);
    let mut train_rng = root.substream(STREAM_TRAIN_DATA);
    let mut eval_rng = root.substream(STREAM_EVAL_DATA);
    let train_pool = task::synthetic_digit_pool(c.pool_per_digit, c.noise_sigma, &mut train_rng);
    let eval_pool = task::synthetic_digit_pool(c.eval_pool_per_digit, c.noise_sigma, &mut eval_rng);
    let train_set = task::make_addition_task(&train_pool, c.digits_per_operand, &mut train_rng)?;
    let eval_set = task::make_addition_task(&eval_pool, c.digits_per_operand, &mut eval_rng)?;
    let prog = DigitAddition::new(c.digits_per_operand)?;
    let params = train_model(&c, &train_set, &prog)?;

    let outputs = predict_outputs(
        &params,
        &eval_set,
        &prog,
        &c.vote,
        c.hyper.sampler_steps,
        &root.substream(5),
    )?;
    let golds: Vec<MaskedSeq> = eval_set.examples.iter().map(|e| e.y0.clone()).collect();
    let acc = metrics::exact_match_accuracy(&outputs, &golds)?;
    Ok(Check {
        name: "digit addition reaches strong held-out exact match",
        detail: format!(
            "accuracy {acc:.3} after {} epochs on {} held-out pairs, want >= 0.90",
            c.epochs,
            eval_set.len()
        ),
        passed: acc >= 0.90,
    })
}

/// 9. Learning grid costs from optimal-path supervision alone yields paths
/// whose cost under the true grid matches the optimum on at least 0.95 of
/// held-out instances, at noise 0.5 on a 4x4 grid.
fn criterion_path_planning_trains() -> Result<Check> {
    let mut c = RunConfig::defaults_for(TaskKind::Path);
    c.seed = 1;
    let spec = GridSpec::new(c.grid_side, GridSpec::DEFAULT_COSTS.to_vec(), c.eight_connected)?;
    let root = RandomSource::from_seed(c.seed);
    let train_set = task::make_path_task(
        &spec,
        c.train_examples,
        c.noise_sigma,
        &mut root.substream(STREAM_TRAIN_DATA),
    );
    let eval_set = task::make_path_task(
        &spec,
        c.eval_examples,
        c.noise_sigma,
        &mut root.substream(STREAM_EVAL_DATA),
    );
    let prog = GridShortestPath::new(spec.clone());
    let params = train_model(&c, &train_set, &prog)?;

    let outputs = predict_outputs(
        &params,
        &eval_set,
        &prog,
        &c.vote,
        c.hyper.sampler_steps,
        &root.substream(5),
    )?;
    let truths: Vec<MaskedSeq> = eval_set
        .examples
        .iter()
        .map(|e| e.concepts.clone().expect("generator records truth"))
        .collect();
    let acc = metrics::path_cost_accuracy(&outputs, &truths, &spec)?;
    Ok(Check {
        name: "grid planning recovers cost-optimal paths",
        detail: format!(
            "cost-match {acc:.3} on {} held-out grids at noise {}, want >= 0.95",
            eval_set.len(),
            c.noise_sigma
        ),
        passed: acc >= 0.95,
    })
}

/// 10. For clause-satisfaction programs the exact output loss at the fully
/// masked state factorizes into the log product of per-clause satisfaction
/// probabilities under the position marginals, to 1e-9 over 100 random
/// 3-clause formulas on 4 binary concepts.
fn criterion_clause_loss_factorizes() -> Result<Check> {
    let mut rng = RandomSource::from_seed(77);
    let x = [0.3, 0.8];
    let wt = MaskedSeq::fully_masked(2, 4);
    let budget = EnumerationBudget::default();
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut clauses = Vec::new();
        for _ in 0..3 {
            let n_lits = 1 + rng.below(3);
            let mut vars: Vec<i32> = (1..=4).collect();
            let mut clause = Vec::new();
            for _ in 0..n_lits {
                let v = vars.swap_remove(rng.below(vars.len()));
                clause.push(if rng.uniform() < 0.5 { v } else { -v });
            }
            clauses.push(clause);
        }
        let prog = Cnf::new(4, clauses.clone())?;
        let y = MaskedSeq::from_values(2, &[1, 1, 1])?;
        let params = frozen_model(4, 2, 700 + i, 0.8);
        let loss = oracle::exact_output_loss(&params, &x, &wt, &prog, &y, 1.0, SCHED, &budget)?;

        let dist = params.dist(&x, &wt)?;
        let mut log_prod = 0.0;
        for clause in &clauses {
            let mut p_unsat = 1.0;
            for &lit in clause {
                let pos = lit.unsigned_abs() as usize - 1;
                let p_false = if lit > 0 {
                    dist.row(pos)[0]
                } else {
                    dist.row(pos)[1]
                };
                p_unsat *= p_false;
            }
            log_prod += (1.0 - p_unsat).ln();
        }
        worst = worst.max((loss - SCHED.alpha_prime(1.0) * log_prod).abs());
    }
    Ok(Check {
        name: "clause satisfaction loss factorizes over clauses",
        detail: format!("worst |difference| {worst:.2e} over 100 formulas, want <= 1e-9"),
        passed: worst <= 1e-9,
    })
}

/// 11. The planner's minimal path cost equals exhaustive search exactly on
/// 500 random 3x3 grids and 100 random 4x4 grids, across both
/// connectivities.
fn criterion_planner_matches_exhaustive_search() -> Result<Check> {
    let mut rng = RandomSource::from_seed(88);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (side, count) in [(3usize, 500usize), (4, 100)] {
        for i in 0..count {
            let spec = GridSpec::new(side, GridSpec::DEFAULT_COSTS.to_vec(), i % 2 == 1)?;
            let cost_idx: Vec<u32> = (0..spec.cells())
                .map(|_| rng.below(spec.costs.len()) as u32)
                .collect();
            let path = nesydiff::program::dijkstra_path(&spec, &cost_idx)?;
            let planned = spec.path_cost(&cost_idx, &path)?;
            let brute = oracle::brute_force_shortest_path(&spec, &cost_idx)?;
            worst = worst.max((planned - brute).abs());
            checked += 1;
        }
    }
    Ok(Check {
        name: "planner minimum cost equals exhaustive search",
        detail: format!("worst |difference| {worst:.1e} over {checked} grids, want exactly 0"),
        passed: worst == 0.0,
    })
}

/// 12. The calibration metric separates a calibrated prediction stream
/// (error below 0.02) from an anti-calibrated one (error above 0.98).
fn criterion_calibration_metric_separates() -> Result<Check> {
    let mut rng = RandomSource::from_seed(99);
    let n = 100_000usize;
    let calibrated: Vec<(f64, bool)> = (0..n)
        .map(|_| {
            let conf = rng.uniform();
            (conf, rng.uniform() < conf)
        })
        .collect();
    let anti: Vec<(f64, bool)> = (0..n)
        .map(|_| {
            let conf = 0.99 + 0.01 * rng.uniform();
            (conf, rng.uniform() < 1.0 - conf)
        })
        .collect();
    let ece_cal = metrics::binned_ece(&calibrated, 10)?;
    let ece_anti = metrics::binned_ece(&anti, 10)?;
    Ok(Check {
        name: "calibration error separates calibrated from inverted streams",
        detail: format!("calibrated {ece_cal:.4} (want < 0.02), inverted {ece_anti:.4} (want > 0.98)"),
        passed: ece_cal < 0.02 && ece_anti > 0.98,
    })
}

// Each criterion paired with its stated wall-clock budget, if any.
const CRITERIA: &[(fn() -> Result<Check>, Option<f64>)] = &[
    (criterion_unbiased_output_gradient, Some(30.0)),
    (criterion_objective_bounds_likelihood, Some(60.0)),
    (criterion_round_refinement_converges, None),
    (criterion_resampling_matches_conditional, None),
    (criterion_samplers_agree, None),
    (criterion_gradients_match_finite_differences, None),
    (criterion_xor_hedges_ambiguity, Some(3000.0)),
    (criterion_addition_trains, Some(900.0)),
    (criterion_path_planning_trains, Some(600.0)),
    (criterion_clause_loss_factorizes, None),
    (criterion_planner_matches_exhaustive_search, None),
    (criterion_calibration_metric_separates, None),
];

fn run_criterion(idx: usize) -> (String, bool) {
    let (run, budget) = CRITERIA[idx];
    let start = std::time::Instant::now();
    let outcome = run();
    let elapsed = start.elapsed().as_secs_f64();
    match outcome {
        Ok(mut check) => {
            let within = budget.is_none_or(|b| elapsed <= b);
            check.passed = check.passed && within;
            let time = match budget {
                Some(b) => format!(" [{elapsed:.1}s of {b:.0}s]"),
                None => format!(" [{elapsed:.1}s]"),
            };
            (format!("{}{time}", check.line(idx + 1)), check.passed)
        }
        Err(e) => (
            format!("[FAIL] {:>2} errored: {e} [{elapsed:.1}s]", idx + 1),
            false,
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for idx in 0..CRITERIA.len() {
        let (line, passed) = run_criterion(idx);
        println!("{line}");
        if !passed {
            failures.push(line.clone());
        }
        lines.push(line);
    }
    assert!(
        failures.is_empty(),
        "acceptance criteria failed:\n{}\nfull report:\n{}",
        failures.join("\n"),
        lines.join("\n")
    );
}

// TEMPORARY calibration entry point; removed once all constants are frozen.
#[test]
fn cal_fast_subset() {
    for idx in [0usize, 1, 2, 3, 4, 5, 9, 10, 11] {
        let (line, _) = run_criterion(idx);
        println!("{line}");
    }
}

// TEMPORARY calibration entry point; removed once all constants are frozen.
#[test]
fn cal_training_runs() {
    for idx in [7usize, 8] {
        let (line, _) = run_criterion(idx);
        println!("{line}");
    }
}
