//! Command-line driver: train a model, evaluate or sample from a
//! checkpoint, and run the self-verification suites.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use nesydiff::config::{self, RunConfig, TaskKind};
use nesydiff::diffusion::{MaskedSeq, NoisingSchedule};
use nesydiff::error::{Error, Result};
use nesydiff::infer::{self, OutputVote, VoteStrategy};
use nesydiff::metrics::{self, EceConfig};
use nesydiff::model::{
    adam_step, AdamConfig, AdamState, GradientBundle, ModelParams, ModelShape,
};
use nesydiff::program::{DigitAddition, GridShortestPath, GridSpec, Program, XorChain};
use nesydiff::rng::RandomSource;
use nesydiff::task::{self, Dataset, DigitPool};
use nesydiff::train::{self, EstimatorStats};
use nesydiff::verify::{run_checks, CheckLevel};

#[derive(Parser)]
#[command(
    name = "nesydiff",
    version,
    about = "Masked diffusion over symbolic concepts, trained through programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes per-epoch metrics, a checkpoint, and the
    /// resolved config into the output directory.
    Train {
        /// Config file; task defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metrics CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score all four output-vote strategies instead of the configured
        /// one.
        #[arg(long)]
        sweep: bool,
    },
    /// Draw concept samples from a checkpoint for one held-out example.
    Sample {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Held-out example index.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Number of samples to draw.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Run the verification suite; exits nonzero on any failed check.
    Verify {
        #[arg(long, value_enum, default_value_t = LevelArg::Fast)]
        level: LevelArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { config, seed, out } => {
            cmd_train(&resolve_config(config.as_deref(), seed)?, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            config,
            seed,
            checkpoint,
            out,
            sweep,
        } => {
            cmd_eval(
                &resolve_config(config.as_deref(), seed)?,
                &checkpoint,
                out.as_deref(),
                sweep,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sample {
            config,
            seed,
            checkpoint,
            index,
            count,
        } => {
            cmd_sample(
                &resolve_config(config.as_deref(), seed)?,
                &checkpoint,
                index,
                count,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { level, seed } => {
            let level = match level {
                LevelArg::Fast => CheckLevel::Fast,
                LevelArg::Full => CheckLevel::Full,
            };
            let report = run_checks(level, seed)?;
            print!("{}", report.render());
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut c = match path {
        Some(p) => config::load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

// Independent substream indices per run phase, so dataset construction,
// initialization, training, and evaluation never share draws.
const STREAM_TRAIN_DATA: u64 = 1;
const STREAM_EVAL_DATA: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_TRAIN: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_NELBO: u64 = 6;
const STREAM_SAMPLE: u64 = 7;

struct TaskSetup {
    prog: Box<dyn Program + Send + Sync>,
    train: Dataset,
    eval: Dataset,
    grid: Option<GridSpec>,
}

/// Digit images come from IDX files under the data directory when all four
/// standard files are present, otherwise from the synthetic glyph pool.
fn load_digit_pools(
    c: &RunConfig,
    train_rng: &mut RandomSource,
    eval_rng: &mut RandomSource,
) -> Result<(DigitPool, DigitPool)> {
    let dir = task::data_dir();
    let paths = [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ];
    if paths.iter().all(|p| p.exists()) {
        Ok((
            task::load_idx_pair(&paths[0], &paths[1])?,
            task::load_idx_pair(&paths[2], &paths[3])?,
        ))
    } else {
        Ok((
            task::synthetic_digit_pool(c.pool_per_digit, c.noise_sigma, train_rng),
            task::synthetic_digit_pool(c.eval_pool_per_digit, c.noise_sigma, eval_rng),
        ))
    }
}

fn build_task(c: &RunConfig) -> Result<TaskSetup> {
    let root = RandomSource::from_seed(c.seed);
    let mut train_rng = root.substream(STREAM_TRAIN_DATA);
    let mut eval_rng = root.substream(STREAM_EVAL_DATA);
    match c.task {
        TaskKind::Xor => Ok(TaskSetup {
            prog: Box::new(XorChain::new(2)?),
            train: task::make_xor_task(c.train_examples, c.noise_sigma, &mut train_rng),
            eval: task::make_xor_task(c.eval_examples, c.noise_sigma, &mut eval_rng),
            grid: None,
        }),
        TaskKind::Addition => {
            let (train_pool, eval_pool) = load_digit_pools(c, &mut train_rng, &mut eval_rng)?;
            Ok(TaskSetup {
                prog: Box::new(DigitAddition::new(c.digits_per_operand)?),
                train: task::make_addition_task(&train_pool, c.digits_per_operand, &mut train_rng)?,
                eval: task::make_addition_task(&eval_pool, c.digits_per_operand, &mut eval_rng)?,
                grid: None,
            })
        }
        TaskKind::Path => {
            let spec = GridSpec::new(
                c.grid_side,
                GridSpec::DEFAULT_COSTS.to_vec(),
                c.eight_connected,
            )?;
            Ok(TaskSetup {
                prog: Box::new(GridShortestPath::new(spec.clone())),
                train: task::make_path_task(&spec, c.train_examples, c.noise_sigma, &mut train_rng),
                eval: task::make_path_task(&spec, c.eval_examples, c.noise_sigma, &mut eval_rng),
                grid: Some(spec),
            })
        }
    }
}

fn model_shape(c: &RunConfig, ds: &Dataset) -> ModelShape {
    ModelShape {
        feat_dim: ds.feat_dim,
        emb_dim: c.emb_dim,
        hidden: c.hidden,
        seq_len: ds.concept_len,
        vocab: ds.concept_vocab,
    }
}

struct SplitMetrics {
    label_acc: f64,
    concept_acc: f64,
    ece: f64,
}

/// Scores one strategy on the held-out split: an output vote and a concept
/// vote from a shared sample pool per example, plus marginal calibration.
/// Per-example substreams keep the result independent of worker scheduling.
fn evaluate_split(
    c: &RunConfig,
    setup: &TaskSetup,
    params: &ModelParams,
    strategy: &VoteStrategy,
    marginal_samples: usize,
    rng_root: &RandomSource,
) -> Result<SplitMetrics> {
    let sched = NoisingSchedule::Linear;
    let t_steps = c.hyper.sampler_steps;
    let results: Vec<(MaskedSeq, MaskedSeq, Vec<Vec<f64>>)> = setup
        .eval
        .examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng = rng_root.substream(i as u64);
            let pool =
                infer::draw_samples(params, &ex.x, strategy.samples, t_steps, sched, &mut rng)?;
            let y = infer::vote_output(&pool, &*setup.prog, strategy.output)?;
            let w = infer::predict_concepts(&pool, strategy.concepts)?;
            let marg =
                infer::estimate_marginals(params, &ex.x, marginal_samples, t_steps, sched, &mut rng)?;
            Ok((y, w, marg))
        })
        .collect::<Result<_>>()?;

    let outputs: Vec<MaskedSeq> = results.iter().map(|(y, _, _)| y.clone()).collect();
    let concepts: Vec<MaskedSeq> = results.iter().map(|(_, w, _)| w.clone()).collect();
    let marginals: Vec<Vec<Vec<f64>>> = results.into_iter().map(|(_, _, m)| m).collect();
    let gold_outputs: Vec<MaskedSeq> = setup.eval.examples.iter().map(|e| e.y0.clone()).collect();
    let gold_concepts: Vec<MaskedSeq> = setup
        .eval
        .examples
        .iter()
        .map(|e| e.concepts.clone().expect("generators record ground truth"))
        .collect();

    // The planning task scores a prediction by the cost of the cells it
    // marks; the other tasks ask for the exact output.
    let label_acc = match &setup.grid {
        Some(spec) => metrics::path_cost_accuracy(&outputs, &gold_concepts, spec)?,
        None => metrics::exact_match_accuracy(&outputs, &gold_outputs)?,
    };
    let concept_acc = metrics::concept_accuracy(&concepts, &gold_concepts)?;
    let ece = metrics::ece(
        &marginals,
        &gold_concepts,
        &EceConfig {
            bins: c.ece_bins,
            marginal_samples,
        },
    )?;
    Ok(SplitMetrics {
        label_acc,
        concept_acc,
        ece,
    })
}

fn format_float(v: f64) -> String {
    format!("{v:.6}")
}

fn cmd_train(c: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), config::serialize_config(c))?;
    let setup = build_task(c)?;
    let root = RandomSource::from_seed(c.seed);
    let shape = model_shape(c, &setup.train);
    let mut params = ModelParams::init(shape, &mut root.substream(STREAM_INIT))?;
    let mut adam = AdamState::new(shape);
    let sched = NoisingSchedule::Linear;

    let csv_path = out.join("train.csv");
    let mut csv = std::io::BufWriter::new(fs::File::create(&csv_path)?);
    writeln!(csv, "epoch,nelbo_estimate,label_acc,concept_acc,ece,mu_zero_rate")?;
    csv.flush()?;

    let train_root = root.substream(STREAM_TRAIN);
    let nelbo_pairs: Vec<(&[f64], &MaskedSeq)> = setup
        .train
        .examples
        .iter()
        .map(|e| (e.x.as_slice(), &e.y0))
        .collect();
    let nelbo_draws = nelbo_pairs.len().clamp(2, 512);

    for epoch in 1..=c.epochs {
        let adam_cfg = AdamConfig::new(train::epoch_learning_rate(
            c.learning_rate,
            epoch,
            c.epochs,
        ));
        let mut epoch_rng = train_root.substream(epoch as u64);
        let order = epoch_rng.permutation(setup.train.len());
        let mut mu_zero = 0usize;
        let mut mu_total = 0usize;
        for (b, batch) in order.chunks(c.batch_size).enumerate() {
            let results: Vec<(GradientBundle, EstimatorStats)> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let ex = &setup.train.examples[idx];
                    let mut rng = epoch_rng.substream(((b as u64) << 32) | (j as u64 + 1));
                    train::estimate_gradient(
                        &params,
                        &ex.x,
                        &ex.y0,
                        &*setup.prog,
                        &c.weights,
                        &c.hyper,
                        sched,
                        &mut rng,
                    )
                })
                .collect::<Result<_>>()?;
            let mut total = GradientBundle::zeros(shape);
            for (g, stats) in &results {
                total.add_scaled(g, 1.0 / batch.len() as f64);
                mu_zero += stats.mu_zero_dims;
                mu_total += stats.output_dims;
            }
            adam_step(&mut params, &mut adam, &adam_cfg, &total);
        }

        let eval_root = root.substream(STREAM_EVAL).substream(epoch as u64);
        let metrics = evaluate_split(
            c,
            &setup,
            &params,
            &c.vote,
            c.epoch_ece_samples,
            &eval_root,
        )?;
        let mut nelbo_rng = root.substream(STREAM_NELBO).substream(epoch as u64);
        let nelbo = train::nelbo_value_estimate(
            &params,
            &nelbo_pairs,
            &*setup.prog,
            &c.hyper,
            sched,
            &mut nelbo_rng,
            nelbo_draws,
        )?;
        let mu_zero_rate = if mu_total == 0 {
            0.0
        } else {
            mu_zero as f64 / mu_total as f64
        };
        writeln!(
            csv,
            "{epoch},{},{},{},{},{}",
            format_float(nelbo.mean),
            format_float(metrics.label_acc),
            format_float(metrics.concept_acc),
            format_float(metrics.ece),
            format_float(mu_zero_rate)
        )?;
        csv.flush()?;
    }
    params.save(&out.join("model.ckpt"), Some(&adam))?;
    Ok(())
}

fn load_checked_params(c: &RunConfig, setup: &TaskSetup, checkpoint: &Path) -> Result<ModelParams> {
    let (params, _) = ModelParams::load(checkpoint)?;
    let want = model_shape(c, &setup.eval);
    if params.shape() != want {
        return Err(Error::shape(format!(
            "checkpoint shape {:?} differs from the config's {:?}",
            params.shape(),
            want
        )));
    }
    Ok(params)
}

fn cmd_eval(c: &RunConfig, checkpoint: &Path, out: Option<&Path>, sweep: bool) -> Result<()> {
    let setup = build_task(c)?;
    let params = load_checked_params(c, &setup, checkpoint)?;
    let root = RandomSource::from_seed(c.seed);

    let strategies: Vec<VoteStrategy> = if sweep {
        [
            OutputVote::ProgramThenSequenceMode,
            OutputVote::ProgramThenPositionMode,
            OutputVote::SequenceModeThenProgram,
            OutputVote::PositionModeThenProgram,
        ]
        .into_iter()
        .map(|output| VoteStrategy { output, ..c.vote })
        .collect()
    } else {
        vec![c.vote]
    };

    let mut text = String::from("output_vote,concept_vote,samples,label_acc,concept_acc,ece\n");
    for (si, strategy) in strategies.iter().enumerate() {
        let eval_root = root.substream(STREAM_EVAL).substream(si as u64);
        let m = evaluate_split(c, &setup, &params, strategy, c.ece_samples, &eval_root)?;
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            config::output_vote_name(strategy.output),
            config::concept_vote_name(strategy.concepts),
            strategy.samples,
            format_float(m.label_acc),
            format_float(m.concept_acc),
            format_float(m.ece),
        ));
    }
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_sample(c: &RunConfig, checkpoint: &Path, index: usize, count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::domain("need at least one sample"));
    }
    let setup = build_task(c)?;
    let params = load_checked_params(c, &setup, checkpoint)?;
    let n = setup.eval.len();
    if index >= n {
        return Err(Error::domain(format!(
            "example index {index} outside the held-out split of {n}"
        )));
    }
    let ex = &setup.eval.examples[index];
    let root = RandomSource::from_seed(c.seed);
    let mut rng = root.substream(STREAM_SAMPLE).substream(index as u64);
    let sched = NoisingSchedule::Linear;

    println!("held-out example {index} of {n} ({})", c.task.name());
    if let Some(gold) = &ex.concepts {
        println!("gold concepts: {:?}", gold.values()?);
    }
    println!("gold output:   {:?}", ex.y0.values()?);
    let pool = infer::draw_samples(
        &params,
        &ex.x,
        count,
        c.hyper.sampler_steps,
        sched,
        &mut rng,
    )?;
    for (i, w) in pool.iter().enumerate() {
        let y = setup.prog.eval(w)?;
        println!(
            "sample {:>3}: concepts {:?} -> output {:?}",
            i + 1,
            w.values()?,
            y.values()?
        );
    }
    let voted_y = infer::vote_output(&pool, &*setup.prog, c.vote.output)?;
    let voted_w = infer::predict_concepts(&pool, c.vote.concepts)?;
    println!(
        "vote ({}): output {:?}",
        config::output_vote_name(c.vote.output),
        voted_y.values()?
    );
    println!(
        "vote ({}): concepts {:?}",
        config::concept_vote_name(c.vote.concepts),
        voted_w.values()?
    );
    Ok(())
}
