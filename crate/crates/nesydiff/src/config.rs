//! Run configuration: a flat struct covering task, model, training, and
//! inference settings, with a line-oriented `key = value` text format split
//! into `[task]`, `[model]`, `[train]`, `[infer]`, and `[run]` sections.
//! Unknown keys and sections are hard errors naming the offender, and
//! parse -> serialize -> parse is the identity.

use crate::error::{Error, Result};
use crate::infer::{ConceptVote, OutputVote, VoteStrategy};
use crate::train::{EntropyMode, LossWeights, TrainHyper};

/// Which dataset and program a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Two hidden bits with noisy one-hot features, output their XOR.
    Xor,
    /// Digit-image addition over an IDX pool or the synthetic glyph pool.
    Addition,
    /// Grid path planning over noisy per-cell cost features.
    Path,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Xor => "xor",
            TaskKind::Addition => "addition",
            TaskKind::Path => "path",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "xor" => Ok(TaskKind::Xor),
            "addition" => Ok(TaskKind::Addition),
            "path" => Ok(TaskKind::Path),
            other => Err(Error::Config(format!(
                "unknown task kind '{other}', want xor, addition, or path"
            ))),
        }
    }
}

/// Everything a training or evaluation run needs. Field groups correspond to
/// the config file sections listed in the module docs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    /// Training-set size for the synthetic-feature tasks.
    pub train_examples: usize,
    /// Held-out evaluation-set size for the synthetic-feature tasks.
    pub eval_examples: usize,
    /// Feature noise scale (and pixel noise for synthetic digit images).
    pub noise_sigma: f64,
    /// Digits per operand in the addition task.
    pub digits_per_operand: usize,
    /// Synthetic digit-pool copies per class for training.
    pub pool_per_digit: usize,
    /// Synthetic digit-pool copies per class for evaluation.
    pub eval_pool_per_digit: usize,
    /// Grid side length for the path task.
    pub grid_side: usize,
    /// Whether grid moves include diagonals.
    pub eight_connected: bool,
    pub emb_dim: usize,
    pub hidden: usize,
    /// Peak optimizer step size; the trainer anneals it linearly to
    /// `learning_rate / epochs` over the run.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub hyper: TrainHyper,
    pub vote: VoteStrategy,
    /// Calibration-error bin count.
    pub ece_bins: usize,
    /// Sample budget for marginal estimation in final calibration scoring.
    pub ece_samples: usize,
    /// Cheaper marginal budget for the per-epoch progress metrics.
    pub epoch_ece_samples: usize,
    pub seed: u64,
}

impl RunConfig {
    /// Task-specific defaults; shared fields follow the hyperparameter
    /// settings the estimators were validated under.
    pub fn defaults_for(task: TaskKind) -> Self {
        let base = RunConfig {
            task,
            train_examples: 2000,
            eval_examples: 500,
            noise_sigma: 0.1,
            digits_per_operand: 1,
            pool_per_digit: 100,
            eval_pool_per_digit: 20,
            grid_side: 4,
            eight_connected: false,
            emb_dim: 8,
            hidden: 32,
            learning_rate: 3e-3,
            batch_size: 16,
            epochs: 30,
            weights: LossWeights::default(),
            hyper: TrainHyper::default(),
            vote: VoteStrategy::default(),
            ece_bins: 10,
            ece_samples: 1000,
            epoch_ece_samples: 100,
            seed: 0,
        };
        match task {
            TaskKind::Xor => RunConfig {
                // The hedged optimum is a shallow basin held only by the
                // entropy bonus, so the run needs a long annealing tail for
                // the per-input marginals to settle at calibrated values.
                epochs: 60,
                hyper: TrainHyper {
                    rloo_samples: 32,
                    snis_candidates: 32,
                    beta: 20.0,
                    entropy_mode: EntropyMode::Conditional,
                    sampler_steps: 8,
                    ..TrainHyper::default()
                },
                weights: LossWeights {
                    gamma_h: 3.0,
                    ..LossWeights::default()
                },
                ..base
            },
            TaskKind::Addition => RunConfig {
                pool_per_digit: 2000,
                learning_rate: 1e-3,
                epochs: 20,
                emb_dim: 16,
                hidden: 64,
                hyper: TrainHyper {
                    rloo_samples: 64,
                    snis_candidates: 64,
                    beta: 20.0,
                    sampler_steps: 8,
                    ..TrainHyper::default()
                },
                // Digit grounding is driven by the output term alone here: an
                // entropy bonus at this scale holds the masked-state rows at
                // uniform and stalls the symmetry breaking the output signal
                // needs, so it is off for this task.
                weights: LossWeights {
                    gamma_w: 2e-5,
                    gamma_h: 0.0,
                    ..LossWeights::default()
                },
                ..base
            },
            TaskKind::Path => RunConfig {
                train_examples: 2000,
                eval_examples: 200,
                noise_sigma: 0.5,
                learning_rate: 1e-3,
                batch_size: 50,
                epochs: 40,
                emb_dim: 12,
                // The trunk must pass 16 cells x 5 classes of independent
                // signal; anything under 80 hidden units is a rank bottleneck
                // on the logit map.
                hidden: 128,
                hyper: TrainHyper {
                    rloo_samples: 32,
                    snis_candidates: 16,
                    beta: 12.0,
                    sampler_steps: 20,
                    ..TrainHyper::default()
                },
                weights: LossWeights {
                    gamma_w: 1e-5,
                    gamma_h: 0.002,
                    ..LossWeights::default()
                },
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.hyper.validate()?;
        self.vote.validate()?;
        if self.emb_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite positive",
                self.learning_rate
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise {} must be finite nonnegative",
                self.noise_sigma
            )));
        }
        if self.digits_per_operand == 0 {
            return Err(Error::Config("need at least one digit per operand".into()));
        }
        if self.grid_side < 2 {
            return Err(Error::Config(format!(
                "grid side {} must be at least 2",
                self.grid_side
            )));
        }
        if self.ece_bins < 2 {
            return Err(Error::Config(format!(
                "calibration bins {} must be at least 2",
                self.ece_bins
            )));
        }
        if self.ece_samples == 0 || self.epoch_ece_samples == 0 {
            return Err(Error::Config("need at least one calibration sample".into()));
        }
        if self.train_examples == 0 || self.eval_examples == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        if self.pool_per_digit == 0 || self.eval_pool_per_digit == 0 {
            return Err(Error::Config("digit pool sizes must be positive".into()));
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::defaults_for(TaskKind::Xor)
    }
}

pub fn output_vote_name(v: OutputVote) -> &'static str {
    match v {
        OutputVote::ProgramThenSequenceMode => "program-then-sequence",
        OutputVote::ProgramThenPositionMode => "program-then-position",
        OutputVote::SequenceModeThenProgram => "sequence-then-program",
        OutputVote::PositionModeThenProgram => "position-then-program",
    }
}

fn output_vote_from(name: &str) -> Result<OutputVote> {
    match name {
        "program-then-sequence" => Ok(OutputVote::ProgramThenSequenceMode),
        "program-then-position" => Ok(OutputVote::ProgramThenPositionMode),
        "sequence-then-program" => Ok(OutputVote::SequenceModeThenProgram),
        "position-then-program" => Ok(OutputVote::PositionModeThenProgram),
        other => Err(Error::Config(format!("unknown output vote '{other}'"))),
    }
}

pub fn concept_vote_name(v: ConceptVote) -> &'static str {
    match v {
        ConceptVote::SequenceMode => "sequence",
        ConceptVote::PositionMode => "position",
    }
}

fn concept_vote_from(name: &str) -> Result<ConceptVote> {
    match name {
        "sequence" => Ok(ConceptVote::SequenceMode),
        "position" => Ok(ConceptVote::PositionMode),
        other => Err(Error::Config(format!("unknown concept vote '{other}'"))),
    }
}

fn entropy_name(m: EntropyMode) -> &'static str {
    match m {
        EntropyMode::Unconditional => "unconditional",
        EntropyMode::Conditional => "conditional",
    }
}

fn entropy_from(name: &str) -> Result<EntropyMode> {
    match name {
        "unconditional" => Ok(EntropyMode::Unconditional),
        "conditional" => Ok(EntropyMode::Conditional),
        other => Err(Error::Config(format!("unknown entropy mode '{other}'"))),
    }
}

/// Renders a config in canonical section and key order.
pub fn serialize_config(c: &RunConfig) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line("[task]".into());
    line(format!("kind = {}", c.task.name()));
    line(format!("train_examples = {}", c.train_examples));
    line(format!("eval_examples = {}", c.eval_examples));
    line(format!("noise = {}", c.noise_sigma));
    line(format!("digits = {}", c.digits_per_operand));
    line(format!("pool_per_digit = {}", c.pool_per_digit));
    line(format!("eval_pool_per_digit = {}", c.eval_pool_per_digit));
    line(format!("grid_side = {}", c.grid_side));
    line(format!("eight_connected = {}", c.eight_connected));
    line(String::new());
    line("[model]".into());
    line(format!("embedding = {}", c.emb_dim));
    line(format!("hidden = {}", c.hidden));
    line(String::new());
    line("[train]".into());
    line(format!("learning_rate = {}", c.learning_rate));
    line(format!("batch = {}", c.batch_size));
    line(format!("epochs = {}", c.epochs));
    line(format!("gamma_output = {}", c.weights.gamma_y));
    line(format!("gamma_concept = {}", c.weights.gamma_w));
    line(format!("gamma_entropy = {}", c.weights.gamma_h));
    line(format!("rloo_samples = {}", c.hyper.rloo_samples));
    line(format!("snis_candidates = {}", c.hyper.snis_candidates));
    line(format!("beta = {}", c.hyper.beta));
    line(format!("entropy = {}", entropy_name(c.hyper.entropy_mode)));
    line(format!("reward_margin = {}", c.hyper.reward_rescale_margin));
    line(format!("reward_floor = {}", c.hyper.reward_floor));
    line(format!("sampler_steps = {}", c.hyper.sampler_steps));
    line(String::new());
    line("[infer]".into());
    line(format!("output_vote = {}", output_vote_name(c.vote.output)));
    line(format!("concept_vote = {}", concept_vote_name(c.vote.concepts)));
    line(format!("vote_samples = {}", c.vote.samples));
    line(format!("ece_bins = {}", c.ece_bins));
    line(format!("ece_samples = {}", c.ece_samples));
    line(format!("epoch_ece_samples = {}", c.epoch_ece_samples));
    line(String::new());
    line("[run]".into());
    line(format!("seed = {}", c.seed));
    out
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, want: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}' has value '{value}', want {want}")))
}

/// Parses the `key = value` text format. The task kind is read first so the
/// remaining keys override that task's defaults; any unknown section or key
/// is an error naming it.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return Err(Error::Config(format!(
                    "line {}: unterminated section header '{raw}'",
                    lineno + 1
                )));
            };
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        if section.is_empty() {
            return Err(Error::Config(format!(
                "line {}: key before any [section] header",
                lineno + 1
            )));
        }
        let full = format!("{section}.{}", key.trim());
        if pairs.iter().any(|(k, _)| *k == full) {
            return Err(Error::Config(format!("duplicate key '{full}'")));
        }
        pairs.push((full, value.trim().to_string()));
    }

    let kind = match pairs.iter().find(|(k, _)| k == "task.kind") {
        Some((_, v)) => TaskKind::from_name(v)?,
        None => TaskKind::Xor,
    };
    let mut c = RunConfig::defaults_for(kind);
    for (key, value) in &pairs {
        let v = value.as_str();
        match key.as_str() {
            "task.kind" => c.task = TaskKind::from_name(v)?,
            "task.train_examples" => c.train_examples = parse_num(key, v, "a count")?,
            "task.eval_examples" => c.eval_examples = parse_num(key, v, "a count")?,
            "task.noise" => c.noise_sigma = parse_num(key, v, "a number")?,
            "task.digits" => c.digits_per_operand = parse_num(key, v, "a count")?,
            "task.pool_per_digit" => c.pool_per_digit = parse_num(key, v, "a count")?,
            "task.eval_pool_per_digit" => c.eval_pool_per_digit = parse_num(key, v, "a count")?,
            "task.grid_side" => c.grid_side = parse_num(key, v, "a count")?,
            "task.eight_connected" => c.eight_connected = parse_num(key, v, "true or false")?,
            "model.embedding" => c.emb_dim = parse_num(key, v, "a count")?,
            "model.hidden" => c.hidden = parse_num(key, v, "a count")?,
            "train.learning_rate" => c.learning_rate = parse_num(key, v, "a number")?,
            "train.batch" => c.batch_size = parse_num(key, v, "a count")?,
            "train.epochs" => c.epochs = parse_num(key, v, "a count")?,
            "train.gamma_output" => c.weights.gamma_y = parse_num(key, v, "a number")?,
            "train.gamma_concept" => c.weights.gamma_w = parse_num(key, v, "a number")?,
            "train.gamma_entropy" => c.weights.gamma_h = parse_num(key, v, "a number")?,
            "train.rloo_samples" => c.hyper.rloo_samples = parse_num(key, v, "a count")?,
            "train.snis_candidates" => c.hyper.snis_candidates = parse_num(key, v, "a count")?,
            "train.beta" => c.hyper.beta = parse_num(key, v, "a number")?,
            "train.entropy" => c.hyper.entropy_mode = entropy_from(v)?,
            "train.reward_margin" => c.hyper.reward_rescale_margin = parse_num(key, v, "a number")?,
            "train.reward_floor" => c.hyper.reward_floor = parse_num(key, v, "a number")?,
            "train.sampler_steps" => c.hyper.sampler_steps = parse_num(key, v, "a count")?,
            "infer.output_vote" => c.vote.output = output_vote_from(v)?,
            "infer.concept_vote" => c.vote.concepts = concept_vote_from(v)?,
            "infer.vote_samples" => c.vote.samples = parse_num(key, v, "a count")?,
            "infer.ece_bins" => c.ece_bins = parse_num(key, v, "a count")?,
            "infer.ece_samples" => c.ece_samples = parse_num(key, v, "a count")?,
            "infer.epoch_ece_samples" => c.epoch_ece_samples = parse_num(key, v, "a count")?,
            "run.seed" => c.seed = parse_num(key, v, "an unsigned integer")?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
    }
    c.validate()?;
    Ok(c)
}

/// Reads and parses a config file.
pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
