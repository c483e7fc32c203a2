//! Reverse-process sampling and majority-vote prediction.
//!
//! Two samplers produce complete concept sequences: an event-per-position
//! sampler that is exact for the continuous-time reverse process, and a
//! round-based discretization for long sequences. Predictions then pool a
//! budget of samples and vote, either on program outputs or on the concept
//! sequences themselves.

use std::collections::HashMap;

use crate::diffusion::{reverse_posterior_sample, MaskedSeq, NoisingSchedule};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::program::Program;
use crate::rng::RandomSource;

/// How pooled concept samples turn into one output prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputVote {
    /// Push every sample through the program and return the most frequent
    /// complete output.
    ProgramThenSequenceMode,
    /// Push every sample through the program and return the per-position
    /// output modes.
    ProgramThenPositionMode,
    /// Apply the program to the most frequent concept sequence.
    SequenceModeThenProgram,
    /// Apply the program to the per-position concept modes.
    PositionModeThenProgram,
}

/// How pooled concept samples turn into one concept prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConceptVote {
    /// Most frequent complete sequence.
    SequenceMode,
    /// Independent per-position modes.
    PositionMode,
}

/// Voting configuration: the sample budget is shared by the output and the
/// concept vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoteStrategy {
    pub output: OutputVote,
    pub concepts: ConceptVote,
    /// Pooled sample count.
    pub samples: usize,
}

impl Default for VoteStrategy {
    fn default() -> Self {
        VoteStrategy {
            output: OutputVote::ProgramThenSequenceMode,
            concepts: ConceptVote::SequenceMode,
            samples: 8,
        }
    }
}

impl VoteStrategy {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::domain("need a sample budget of at least 1"));
        }
        Ok(())
    }
}

/// Exact reverse-process sample, one unmask event per position: with `k`
/// positions still masked at time `t`, the next event happens at
/// `s = alpha_inv(1 - u^(1/k) (1 - alpha(t)))` for uniform `u`, where one
/// uniformly chosen masked position takes a value from the model row. The
/// model never reads the clock, so the times only document the trajectory.
pub fn first_hitting_sample(
    params: &ModelParams,
    x: &[f64],
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<MaskedSeq> {
    let shape = params.shape();
    let mut state = MaskedSeq::fully_masked(shape.vocab, shape.seq_len);
    let mut t = 1.0;
    for k in (1..=shape.seq_len).rev() {
        let u = rng.uniform_open();
        let s = sched.alpha_inv(1.0 - u.powf(1.0 / k as f64) * (1.0 - sched.alpha(t)));
        let masked = state.masked_indices();
        let pos = masked[rng.below(masked.len())];
        let dist = params.dist(x, &state)?;
        let tok = rng.categorical(dist.row(pos)) as u32 + 1;
        state.set(pos, tok);
        t = s;
    }
    Ok(state)
}

/// Reverse-process sample over a uniform time grid: each round draws a full
/// completion from the model and remasks it through the reverse posterior
/// toward the next grid time. The last round targets time 0, where every
/// position stays revealed, so the result is always complete.
pub fn time_discretized_sample(
    params: &ModelParams,
    x: &[f64],
    t_steps: usize,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<MaskedSeq> {
    if t_steps == 0 {
        return Err(Error::domain("need at least one round"));
    }
    let shape = params.shape();
    let mut state = MaskedSeq::fully_masked(shape.vocab, shape.seq_len);
    for k in (1..=t_steps).rev() {
        let t = k as f64 / t_steps as f64;
        let s = (k - 1) as f64 / t_steps as f64;
        let dist = params.dist(x, &state)?;
        let w0 = dist.sample_completion(rng);
        state = reverse_posterior_sample(&state, &w0, s, t, sched, rng)?;
    }
    Ok(state)
}

/// Draws one concept sample with whichever sampler the round budget permits:
/// the exact event-per-position sampler when `t_steps` covers the sequence
/// length, the round-based discretization otherwise.
pub fn sample_concepts(
    params: &ModelParams,
    x: &[f64],
    t_steps: usize,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<MaskedSeq> {
    if t_steps >= params.shape().seq_len {
        first_hitting_sample(params, x, sched, rng)
    } else {
        time_discretized_sample(params, x, t_steps, sched, rng)
    }
}

/// Draws a pool of concept samples for voting.
pub fn draw_samples(
    params: &ModelParams,
    x: &[f64],
    count: usize,
    t_steps: usize,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<Vec<MaskedSeq>> {
    (0..count)
        .map(|_| sample_concepts(params, x, t_steps, sched, rng))
        .collect()
}

/// Most frequent sequence; ties go to the lexicographically smallest token
/// vector.
fn modal_sequence(samples: &[MaskedSeq]) -> MaskedSeq {
    let mut counts: HashMap<&[u32], usize> = HashMap::new();
    for s in samples {
        *counts.entry(s.toks()).or_insert(0) += 1;
    }
    let (best, _) = counts
        .into_iter()
        .max_by(|(a_toks, a_n), (b_toks, b_n)| a_n.cmp(b_n).then(b_toks.cmp(a_toks)))
        .expect("non-empty sample pool");
    samples
        .iter()
        .find(|s| s.toks() == best)
        .expect("winner came from the pool")
        .clone()
}

/// Per-position modes; ties go to the smallest token.
fn positionwise_modes(samples: &[MaskedSeq]) -> MaskedSeq {
    let vocab = samples[0].vocab();
    let len = samples[0].len();
    let mut toks = Vec::with_capacity(len);
    for i in 0..len {
        let mut counts = vec![0usize; vocab as usize + 1];
        for s in samples {
            counts[s.tok(i) as usize] += 1;
        }
        let tok = (1..=vocab).max_by_key(|&v| (counts[v as usize], std::cmp::Reverse(v)));
        toks.push(tok.expect("vocab is nonzero"));
    }
    MaskedSeq::new(vocab, toks).expect("modes are valid tokens")
}

fn check_pool(samples: &[MaskedSeq]) -> Result<()> {
    let Some(first) = samples.first() else {
        return Err(Error::domain("need at least one sample to vote"));
    };
    for s in samples {
        if s.len() != first.len() || s.vocab() != first.vocab() {
            return Err(Error::shape("vote pool mixes sequence shapes"));
        }
        if !s.is_complete() {
            return Err(Error::domain("vote pool contains a masked sequence"));
        }
    }
    Ok(())
}

/// Aggregates a sample pool into one concept prediction.
pub fn predict_concepts(samples: &[MaskedSeq], mode: ConceptVote) -> Result<MaskedSeq> {
    check_pool(samples)?;
    Ok(match mode {
        ConceptVote::SequenceMode => modal_sequence(samples),
        ConceptVote::PositionMode => positionwise_modes(samples),
    })
}

/// Aggregates a sample pool into one output prediction through the program.
pub fn vote_output(
    samples: &[MaskedSeq],
    prog: &dyn Program,
    mode: OutputVote,
) -> Result<MaskedSeq> {
    check_pool(samples)?;
    match mode {
        OutputVote::ProgramThenSequenceMode | OutputVote::ProgramThenPositionMode => {
            let outputs: Vec<MaskedSeq> = samples
                .iter()
                .map(|s| prog.eval(s))
                .collect::<Result<_>>()?;
            Ok(match mode {
                OutputVote::ProgramThenSequenceMode => modal_sequence(&outputs),
                _ => positionwise_modes(&outputs),
            })
        }
        OutputVote::SequenceModeThenProgram => prog.eval(&modal_sequence(samples)),
        OutputVote::PositionModeThenProgram => prog.eval(&positionwise_modes(samples)),
    }
}

/// Draws the strategy's sample budget and votes on the output.
pub fn predict_output(
    params: &ModelParams,
    x: &[f64],
    prog: &dyn Program,
    strategy: &VoteStrategy,
    t_steps: usize,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<MaskedSeq> {
    strategy.validate()?;
    let samples = draw_samples(params, x, strategy.samples, t_steps, sched, rng)?;
    vote_output(&samples, prog, strategy.output)
}

/// Empirical per-position value frequencies from a fresh sample pool, as a
/// `seq_len x vocab` matrix whose rows sum to one.
pub fn estimate_marginals(
    params: &ModelParams,
    x: &[f64],
    count: usize,
    t_steps: usize,
    sched: NoisingSchedule,
    rng: &mut RandomSource,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::domain("need at least one sample"));
    }
    let shape = params.shape();
    let mut rows = vec![vec![0.0; shape.vocab as usize]; shape.seq_len];
    for _ in 0..count {
        let w = sample_concepts(params, x, t_steps, sched, rng)?;
        for (i, row) in rows.iter_mut().enumerate() {
            row[(w.tok(i) - 1) as usize] += 1.0;
        }
    }
    for row in &mut rows {
        for p in row.iter_mut() {
            *p /= count as f64;
        }
    }
    Ok(rows)
}
