//! Evaluation metrics: exact-match output accuracy, micro-averaged concept
//! accuracy, path-cost accuracy, and binned expected calibration error over
//! marginal concept probabilities.

use crate::diffusion::MaskedSeq;
use crate::error::{Error, Result};
use crate::program::{dijkstra_path, GridSpec};

fn check_aligned(predictions: &[MaskedSeq], golds: &[MaskedSeq]) -> Result<()> {
    if predictions.len() != golds.len() {
        return Err(Error::shape(format!(
            "{} predictions against {} references",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::domain("no predictions to score"));
    }
    for (p, g) in predictions.iter().zip(golds) {
        if p.len() != g.len() || p.vocab() != g.vocab() {
            return Err(Error::shape(format!(
                "prediction of {} positions (vocab {}) against reference of {} (vocab {})",
                p.len(),
                p.vocab(),
                g.len(),
                g.vocab()
            )));
        }
    }
    Ok(())
}

/// Fraction of predictions that match their reference at every position.
pub fn exact_match_accuracy(predictions: &[MaskedSeq], golds: &[MaskedSeq]) -> Result<f64> {
    check_aligned(predictions, golds)?;
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.toks() == g.toks())
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Fraction of matching positions pooled over the whole dataset, so every
/// concept dimension counts equally regardless of which example it is in.
pub fn concept_accuracy(predictions: &[MaskedSeq], golds: &[MaskedSeq]) -> Result<f64> {
    check_aligned(predictions, golds)?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, g) in predictions.iter().zip(golds) {
        total += p.len();
        hits += p.toks().iter().zip(g.toks()).filter(|(a, b)| a == b).count();
    }
    Ok(hits as f64 / total as f64)
}

/// Path-planning score: a predicted path mask counts as correct when the
/// cells it marks cost the same, under the true cell costs, as the true
/// least-cost path. Predictions are assumed to come from a planner, so the
/// metric scores cost only, not connectivity.
pub fn path_cost_accuracy(
    predicted_paths: &[MaskedSeq],
    true_concepts: &[MaskedSeq],
    spec: &GridSpec,
) -> Result<f64> {
    if predicted_paths.len() != true_concepts.len() {
        return Err(Error::shape(format!(
            "{} predictions against {} references",
            predicted_paths.len(),
            true_concepts.len()
        )));
    }
    if predicted_paths.is_empty() {
        return Err(Error::domain("no predictions to score"));
    }
    let mut hits = 0usize;
    for (mask, concepts) in predicted_paths.iter().zip(true_concepts) {
        let idx = concepts.values()?;
        let marked: Vec<usize> = mask
            .values()?
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(cell, _)| cell)
            .collect();
        let predicted_cost = spec.path_cost(&idx, &marked)?;
        let best = dijkstra_path(spec, &idx)?;
        let best_cost = spec.path_cost(&idx, &best)?;
        if (predicted_cost - best_cost).abs() < 1e-9 {
            hits += 1;
        }
    }
    Ok(hits as f64 / predicted_paths.len() as f64)
}

/// Calibration-error settings.
#[derive(Clone, Copy, Debug)]
pub struct EceConfig {
    /// Equal-width confidence bins over `[0, 1]`.
    pub bins: usize,
    /// Sample budget for estimating marginals when a caller needs to build
    /// them first.
    pub marginal_samples: usize,
}

impl Default for EceConfig {
    fn default() -> Self {
        EceConfig {
            bins: 10,
            marginal_samples: 1000,
        }
    }
}

impl EceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::domain(format!(
                "need at least 2 calibration bins, got {}",
                self.bins
            )));
        }
        if self.marginal_samples == 0 {
            return Err(Error::domain("need at least one marginal sample"));
        }
        Ok(())
    }
}

/// Binned expected calibration error of `(confidence, correct)` pairs:
/// confidences fall into equal-width bins, and the result is the
/// count-weighted mean of |bin accuracy - bin mean confidence|.
pub fn binned_ece(pairs: &[(f64, bool)], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::domain(format!(
            "need at least 2 calibration bins, got {bins}"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::domain("no predictions to calibrate"));
    }
    let mut count = vec![0usize; bins];
    let mut hit = vec![0usize; bins];
    let mut conf = vec![0.0f64; bins];
    for &(c, correct) in pairs {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::domain(format!("confidence {c} outside [0, 1]")));
        }
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        hit[b] += usize::from(correct);
        conf[b] += c;
    }
    let n = pairs.len() as f64;
    let mut ece = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let acc = hit[b] as f64 / count[b] as f64;
        let mean_conf = conf[b] / count[b] as f64;
        ece += count[b] as f64 / n * (acc - mean_conf).abs();
    }
    Ok(ece)
}

/// Expected calibration error over per-position marginal distributions: the
/// predicted value at each position is the argmax of its marginal row (ties
/// to the smaller value), the confidence is that row entry, and correctness
/// is checked against the true concepts. All positions of all examples pool
/// into one binned estimate.
pub fn ece(
    marginals: &[Vec<Vec<f64>>],
    truths: &[MaskedSeq],
    config: &EceConfig,
) -> Result<f64> {
    config.validate()?;
    if marginals.len() != truths.len() {
        return Err(Error::shape(format!(
            "{} marginal tables against {} references",
            marginals.len(),
            truths.len()
        )));
    }
    let mut pairs = Vec::new();
    for (table, truth) in marginals.iter().zip(truths) {
        if table.len() != truth.len() {
            return Err(Error::shape(format!(
                "marginal table of {} rows against {} concepts",
                table.len(),
                truth.len()
            )));
        }
        let truth_vals = truth.values()?;
        for (row, &t) in table.iter().zip(&truth_vals) {
            if row.len() != truth.vocab() as usize {
                return Err(Error::shape(format!(
                    "marginal row of {} entries for a vocabulary of {}",
                    row.len(),
                    truth.vocab()
                )));
            }
            for &p in row {
                if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                    return Err(Error::domain(format!("marginal {p} outside [0, 1]")));
                }
            }
            let pred = (0..row.len())
                .max_by(|&a, &b| {
                    row[a]
                        .partial_cmp(&row[b])
                        .expect("finite marginals")
                        .then(b.cmp(&a))
                })
                .expect("non-empty row");
            pairs.push((row[pred], pred as u32 == t));
        }
    }
    binned_ece(&pairs, config.bins)
}
