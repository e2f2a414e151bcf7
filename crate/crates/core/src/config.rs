//! Experiment configuration: a flat key-value text file with section
//! prefixes (`section.key = value`), every key defaulted, unknown keys
//! rejected. Command-line flags override the seed and output directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::BiasConfig;
use crate::baselines::{DpoConfig, PpoConfig};
use crate::error::{Error, Result};
use crate::sim_env::CorpusConfig;
use crate::tracebias::TraceBiasConfig;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Experiment id; set from the subcommand being run.
    pub experiment: String,
    pub seed: u64,
    pub out_dir: PathBuf,

    pub corpus: CorpusConfig,

    /// Embedding width of both scorer copies.
    pub scorer_dim: usize,
    pub scorer_lr: f64,
    pub er_ratio: f64,
    pub replay_capacity: usize,

    /// Static-scorer training budget, learning rate, and holdout rule
    /// (every n-th item).
    pub static_steps: u64,
    pub static_lr: f64,
    pub static_holdout_every: usize,

    pub bias: BiasConfig,
    /// Per-token substitution probability per augmentation round.
    pub p_sub: f64,
    pub synonym_rounds: usize,

    pub flip_period: u64,
    pub max_negative: usize,

    pub track_steps: u64,
    pub eval_interval: u64,
    pub probe_size: usize,
    /// Interactions injected into the database when a domain activates.
    pub inject_per_phase: usize,
    /// Probability that an online update trains on a stored record instead
    /// of the fresh interaction.
    pub db_draw_prob: f64,
    /// Probability that a fresh interaction targets a negative-supervision
    /// domain when one exists.
    pub neg_focus: f64,
    /// Probability of storing a synonym-augmented variant per injected
    /// interaction.
    pub synonym_prob: f64,
    pub rescore_enabled: bool,

    pub policy_dim: usize,
    pub max_gen_len: usize,

    pub sft_steps: u64,
    pub sft_lr: f64,

    pub tracebias: TraceBiasConfig,
    pub ppo: PpoConfig,
    pub dpo: DpoConfig,

    /// Per-method update budget and training epochs in the comparison run.
    pub compare_steps: usize,
    pub compare_epochs: usize,
    pub eval_prompts: usize,
    pub judge_threshold: f64,

    pub stability_steps: usize,

    pub er_steps: u64,
    pub er_probe_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: String::new(),
            seed: 42,
            out_dir: PathBuf::from("runs"),
            corpus: CorpusConfig::default(),
            scorer_dim: 16,
            scorer_lr: 0.025,
            er_ratio: 0.5,
            replay_capacity: 600,
            static_steps: 2000,
            static_lr: 0.1,
            static_holdout_every: 5,
            bias: BiasConfig::default(),
            p_sub: 0.3,
            synonym_rounds: 4,
            flip_period: 150,
            max_negative: 2,
            track_steps: 750,
            eval_interval: 30,
            probe_size: 16,
            inject_per_phase: 40,
            db_draw_prob: 0.92,
            neg_focus: 0.7,
            synonym_prob: 0.5,
            rescore_enabled: true,
            policy_dim: 16,
            max_gen_len: 10,
            sft_steps: 1200,
            sft_lr: 0.1,
            tracebias: TraceBiasConfig::default(),
            ppo: PpoConfig::default(),
            dpo: DpoConfig::default(),
            compare_steps: 300,
            compare_epochs: 2,
            eval_prompts: 64,
            judge_threshold: 0.5,
            stability_steps: 300,
            er_steps: 200,
            er_probe_size: 48,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse value {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("key {key}: expected a boolean, got {value:?}"))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "corpus.n_traces" => self.corpus.n_traces = parse_num(key, value)?,
            "corpus.static_pool_size" => self.corpus.static_pool_size = parse_num(key, value)?,
            "corpus.max_trace_steps" => self.corpus.max_trace_steps = parse_num(key, value)?,
            "corpus.neutral_prob" => self.corpus.neutral_prob = parse_num(key, value)?,
            "scorer.dim" => self.scorer_dim = parse_num(key, value)?,
            "scorer.lr" => self.scorer_lr = parse_num(key, value)?,
            "scorer.er_ratio" => self.er_ratio = parse_num(key, value)?,
            "scorer.replay_capacity" => self.replay_capacity = parse_num(key, value)?,
            "static.steps" => self.static_steps = parse_num(key, value)?,
            "static.lr" => self.static_lr = parse_num(key, value)?,
            "static.holdout_every" => self.static_holdout_every = parse_num(key, value)?,
            "bias.s_sig" => self.bias.s_sig = parse_num(key, value)?,
            "bias.rescore_period" => self.bias.rescore_period = parse_num(key, value)?,
            "bias.p_sub" => self.p_sub = parse_num(key, value)?,
            "bias.synonym_rounds" => self.synonym_rounds = parse_num(key, value)?,
            "schedule.flip_period" => self.flip_period = parse_num(key, value)?,
            "schedule.max_negative" => self.max_negative = parse_num(key, value)?,
            "track.steps" => self.track_steps = parse_num(key, value)?,
            "track.eval_interval" => self.eval_interval = parse_num(key, value)?,
            "track.probe_size" => self.probe_size = parse_num(key, value)?,
            "track.inject_per_phase" => self.inject_per_phase = parse_num(key, value)?,
            "track.db_draw_prob" => self.db_draw_prob = parse_num(key, value)?,
            "track.neg_focus" => self.neg_focus = parse_num(key, value)?,
            "track.synonym_prob" => self.synonym_prob = parse_num(key, value)?,
            "track.rescore" => self.rescore_enabled = parse_bool(key, value)?,
            "policy.dim" => self.policy_dim = parse_num(key, value)?,
            "policy.max_gen_len" => self.max_gen_len = parse_num(key, value)?,
            "sft.steps" => self.sft_steps = parse_num(key, value)?,
            "sft.lr" => self.sft_lr = parse_num(key, value)?,
            "tracebias.gamma" => self.tracebias.gamma = parse_num(key, value)?,
            "tracebias.lr" => self.tracebias.lr = parse_num(key, value)?,
            "tracebias.max_context_len" => self.tracebias.max_context_len = parse_num(key, value)?,
            "tracebias.step_cap" => self.tracebias.trace_step_cap = parse_num(key, value)?,
            "tracebias.refresh_per_epoch" => {
                self.tracebias.refresh_per_epoch = parse_bool(key, value)?
            }
            "ppo.clip_eps" => self.ppo.clip_eps = parse_num(key, value)?,
            "ppo.c1" => self.ppo.c1 = parse_num(key, value)?,
            "ppo.c2" => self.ppo.c2 = parse_num(key, value)?,
            "ppo.lr" => self.ppo.lr = parse_num(key, value)?,
            "ppo.gamma" => self.ppo.gamma = parse_num(key, value)?,
            "dpo.beta" => self.dpo.beta = parse_num(key, value)?,
            "dpo.lr" => self.dpo.lr = parse_num(key, value)?,
            "compare.steps" => self.compare_steps = parse_num(key, value)?,
            "compare.epochs" => self.compare_epochs = parse_num(key, value)?,
            "compare.eval_prompts" => self.eval_prompts = parse_num(key, value)?,
            "judge.threshold" => self.judge_threshold = parse_num(key, value)?,
            "stability.steps" => self.stability_steps = parse_num(key, value)?,
            "er.steps" => self.er_steps = parse_num(key, value)?,
            "er.probe_size" => self.er_probe_size = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Parses the flat `key = value` format; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse_str(&text)
    }

    /// Defaults, or the file when given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }

    /// Command-line overrides; flags win over the file.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out_dir: Option<PathBuf>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out_dir {
            self.out_dir = o;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bias.validate()?;
        self.tracebias.validate()?;
        self.ppo.validate()?;
        self.dpo.validate()?;
        if !(0.0..=1.0).contains(&self.er_ratio) {
            return Err(Error::Config(format!("scorer.er_ratio {} outside [0, 1]", self.er_ratio)));
        }
        for (key, p) in [
            ("bias.p_sub", self.p_sub),
            ("track.db_draw_prob", self.db_draw_prob),
            ("track.neg_focus", self.neg_focus),
            ("track.synonym_prob", self.synonym_prob),
            ("corpus.neutral_prob", self.corpus.neutral_prob),
            ("judge.threshold", self.judge_threshold),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{key} {p} outside [0, 1]")));
            }
        }
        if self.scorer_dim == 0 || self.policy_dim == 0 {
            return Err(Error::Config("model dims must be >= 1".into()));
        }
        if self.static_holdout_every < 2 {
            return Err(Error::Config("static.holdout_every must be >= 2".into()));
        }
        if self.eval_interval == 0 || self.flip_period == 0 {
            return Err(Error::Config("intervals must be >= 1".into()));
        }
        if self.synonym_rounds == 0 {
            return Err(Error::Config("bias.synonym_rounds must be >= 1".into()));
        }
        if self.compare_epochs == 0 || self.compare_steps == 0 {
            return Err(Error::Config("compare budget must be >= 1".into()));
        }
        if self.max_gen_len == 0 {
            return Err(Error::Config("policy.max_gen_len must be >= 1".into()));
        }
        Ok(())
    }
}
