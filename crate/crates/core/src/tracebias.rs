//! TraceBias: per-trace policy optimization on tracked reward gaps.
//!
//! A trace is a multi-step dialogue trajectory with stored per-step label
//! scores. For each step the trainer accumulates a discounted running label
//! reward, generates a response, obtains a real reward from the environment,
//! and adds `-w_t * (label_running - real_running)` to the trace loss, where
//! `w_t` is the mean-logprob (DAM) ratio between the current policy and a
//! frozen reference. One gradient update is applied per trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::policy::{backprop_weighted_logprob, PolicyGrad, PolicyParams};
use crate::scorer::SatisfactionDistribution;
use crate::tokens::{TokenId, Vocab, BOS};

/// Upper bound on stored trace length.
pub const MAX_TRACE_LEN: usize = 8;

/// One dialogue step: the user input, the reference response, and the stored
/// label distribution whose step score supervises the trainer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStepSample {
    pub user_input: Vec<String>,
    pub reference_response: Vec<String>,
    pub label: SatisfactionDistribution,
}

impl TraceStepSample {
    /// Scalar label score in [-1, 1].
    pub fn label_score(&self) -> f64 {
        self.label.step_score()
    }
}

/// An ordered multi-step trajectory tagged with its domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSample {
    pub steps: Vec<TraceStepSample>,
    pub domain: String,
}

impl TraceSample {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() || self.steps.len() > MAX_TRACE_LEN {
            return Err(Error::InvalidInput(format!(
                "trace must have 1..={MAX_TRACE_LEN} steps, got {}",
                self.steps.len()
            )));
        }
        for step in &self.steps {
            step.label.validate()?;
            if step.user_input.is_empty() || step.reference_response.is_empty() {
                return Err(Error::InvalidInput(
                    "trace steps need non-empty input and reference response".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TraceBiasConfig {
    /// Discount over trace steps.
    pub gamma: f64,
    pub lr: f64,
    /// Generation stops contributing once the context outgrows this.
    pub max_context_len: usize,
    /// Cap on how many steps of each trace are consumed.
    pub trace_step_cap: usize,
    /// Cap on generated response length per step.
    pub max_gen_len: usize,
    /// Whether the harness refreshes the reference policy each epoch.
    pub refresh_per_epoch: bool,
}

impl Default for TraceBiasConfig {
    fn default() -> Self {
        TraceBiasConfig {
            gamma: 0.99,
            lr: 1e-2,
            max_context_len: 48,
            trace_step_cap: MAX_TRACE_LEN,
            max_gen_len: 10,
            refresh_per_epoch: true,
        }
    }
}

impl TraceBiasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be > 0", self.lr)));
        }
        if self.trace_step_cap == 0 || self.max_gen_len == 0 || self.max_context_len == 0 {
            return Err(Error::Config("trace caps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Discounted trace score: sum_j gamma^(j-1) * s_j.
pub fn trace_score(step_scores: &[f64], gamma: f64) -> f64 {
    assert!(!step_scores.is_empty(), "trace_score of empty sequence");
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma {gamma} outside (0, 1]");
    let mut acc = 0.0;
    let mut disc = 1.0;
    for &s in step_scores {
        acc += disc * s;
        disc *= gamma;
    }
    acc
}

/// Reward bias between the label and real trajectories.
pub fn advantage(s_label: f64, s_real: f64) -> f64 {
    s_label - s_real
}

/// Batch loss -sum_i A_i * ratio_i over (advantage, ratio) samples.
pub fn tracebias_loss(samples: &[(f64, f64)]) -> f64 {
    samples.iter().map(|&(a, r)| -a * r).sum()
}

/// Per-update gradient L2 norms with summary statistics.
#[derive(Debug, Clone, Default)]
pub struct GradNormLog {
    norms: Vec<f64>,
}

impl GradNormLog {
    pub fn push(&mut self, norm: f64) {
        debug_assert!(norm >= 0.0);
        self.norms.push(norm);
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.norms
    }

    pub fn mean(&self) -> f64 {
        if self.norms.is_empty() {
            0.0
        } else {
            self.norms.iter().sum::<f64>() / self.norms.len() as f64
        }
    }

    /// Population variance of the recorded norms.
    pub fn variance(&self) -> f64 {
        if self.norms.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        self.norms.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.norms.len() as f64
    }
}

/// Source of real rewards for generated responses. Implementations own
/// whatever scorer they need; the trainer only sees scalar rewards.
pub trait RewardEnv {
    fn step_reward(
        &mut self,
        trace: &TraceSample,
        step_idx: usize,
        generated: &[TokenId],
        rng: &mut Rng,
    ) -> Result<f64>;
}

/// Frozen pieces of one trace rollout, sufficient to evaluate the loss as a
/// pure function of the policy parameters.
#[derive(Debug, Clone)]
pub struct StepRollout {
    pub context: Vec<TokenId>,
    pub generated: Vec<TokenId>,
    /// Running reward gap at this step: realized reward so far minus the
    /// label trace so far. Generations that outperform the stored labels
    /// carry positive gaps and get reinforced.
    pub reward_gap: f64,
    pub ref_mean_logprob: f64,
}

#[derive(Debug, Clone)]
pub struct TraceRollout {
    pub steps: Vec<StepRollout>,
    pub label_total: f64,
    pub real_total: f64,
    pub skipped_steps: usize,
}

/// Walks one trace: context grows with user inputs and generated responses,
/// label and real rewards accumulate with discount, and each surviving step
/// is frozen for the loss.
pub fn rollout_trace(
    policy: &PolicyParams,
    reference: &PolicyParams,
    trace: &TraceSample,
    env: &mut dyn RewardEnv,
    vocab: &Vocab,
    cfg: &TraceBiasConfig,
    rng: &mut Rng,
) -> Result<TraceRollout> {
    trace.validate()?;
    cfg.validate()?;
    let mut context = vec![BOS];
    let mut label_reward = 0.0;
    let mut real_reward = 0.0;
    let mut discount = 1.0;
    let mut steps = Vec::new();
    let mut skipped = 0usize;
    for (t, step) in trace.steps.iter().enumerate().take(cfg.trace_step_cap) {
        context.extend(vocab.ids(&step.user_input));
        label_reward += discount * step.label_score();
        let generated = policy.sample(&context, cfg.max_gen_len, rng)?;
        if context.len() > cfg.max_context_len {
            break;
        }
        if generated.is_empty() {
            skipped += 1;
            discount *= cfg.gamma;
            continue;
        }
        let ref_mean = reference.log_probs(&context, &generated)?.mean_logprob;
        let reward = env.step_reward(trace, t, &generated, rng)?;
        real_reward += discount * reward;
        steps.push(StepRollout {
            context: context.clone(),
            generated: generated.clone(),
            reward_gap: advantage(real_reward, label_reward),
            ref_mean_logprob: ref_mean,
        });
        context.extend(generated);
        discount *= cfg.gamma;
    }
    Ok(TraceRollout {
        steps,
        label_total: label_reward,
        real_total: real_reward,
        skipped_steps: skipped,
    })
}

/// Loss and analytic gradient over frozen rollout steps:
/// loss = sum_t -w_t * gap_t with w_t = exp(mean_theta - mean_ref).
pub fn tracebias_loss_and_grad(
    policy: &PolicyParams,
    steps: &[StepRollout],
) -> Result<(f64, PolicyGrad)> {
    let mut loss = 0.0;
    let mut weights = Vec::with_capacity(steps.len());
    for s in steps {
        let mean_theta = policy.log_probs(&s.context, &s.generated)?.mean_logprob;
        let w = (mean_theta - s.ref_mean_logprob).exp();
        loss -= w * s.reward_gap;
        weights.push(-s.reward_gap * w);
    }
    let batch: Vec<(&[TokenId], &[TokenId], f64)> = steps
        .iter()
        .zip(&weights)
        .map(|(s, &w)| (s.context.as_slice(), s.generated.as_slice(), w))
        .collect();
    let grad = backprop_weighted_logprob(policy, &batch)?;
    Ok((loss, grad))
}

/// One update's worth of the shared metric schema. The signal column carries
/// the trace advantage for TraceBias and the clipped-objective trainers, and
/// the preference margin for pairwise training.
#[derive(Debug, Clone, Copy)]
pub struct UpdateRow {
    pub loss: f64,
    pub signal: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub mean_advantage: f64,
    pub grad_norms: GradNormLog,
    pub per_update: Vec<UpdateRow>,
    pub updates: usize,
    pub skipped_steps: usize,
}

/// One pass over the dataset: per trace, roll out, compute the DAM-weighted
/// loss, apply a single gradient update, and log the gradient norm.
pub fn train_epoch(
    policy: &mut PolicyParams,
    reference: &PolicyParams,
    dataset: &[TraceSample],
    env: &mut dyn RewardEnv,
    vocab: &Vocab,
    cfg: &TraceBiasConfig,
    rng: &mut Rng,
) -> Result<EpochMetrics> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("train_epoch needs a non-empty dataset".into()));
    }
    cfg.validate()?;
    let mut metrics = EpochMetrics::default();
    let mut loss_sum = 0.0;
    let mut adv_sum = 0.0;
    for trace in dataset {
        let rollout = rollout_trace(policy, reference, trace, env, vocab, cfg, rng)?;
        metrics.skipped_steps += rollout.skipped_steps;
        if rollout.steps.is_empty() {
            continue;
        }
        let (loss, grad) = tracebias_loss_and_grad(policy, &rollout.steps)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "tracebias loss diverged on a {}-step trace in domain {:?}",
                rollout.steps.len(),
                trace.domain
            )));
        }
        policy.gradient_step(&grad, cfg.lr);
        let norm = grad.l2_norm();
        let adv = advantage(rollout.real_total, rollout.label_total);
        metrics.grad_norms.push(norm);
        metrics.per_update.push(UpdateRow {
            loss,
            signal: adv,
            grad_norm: norm,
        });
        loss_sum += loss;
        adv_sum += adv;
        metrics.updates += 1;
    }
    if metrics.updates > 0 {
        metrics.mean_loss = loss_sum / metrics.updates as f64;
        metrics.mean_advantage = adv_sum / metrics.updates as f64;
    }
    Ok(metrics)
}
