//! Toy autoregressive policy and its gradient kernel.
//!
//! The policy is a trainable bigram model: the previous token's embedding is
//! mapped through a linear layer to next-token logits. That keeps every
//! gradient exactly derivable while still exposing the quantities the
//! training objectives need: per-token conditional log-probabilities,
//! token-level mean log-probabilities, and the ratio of means between two
//! parameter sets.

use crate::error::{Error, Result};
use crate::numerics::{softmax, Rng};
use crate::tokens::{TokenId, EOS};

/// Parameters of the bigram policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub vocab_size: usize,
    pub dim: usize,
    /// vocab_size x dim, row-major.
    pub embed: Vec<f64>,
    /// dim x vocab_size, row-major.
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

/// Dense gradient with the same layout as [`PolicyParams`].
#[derive(Debug, Clone)]
pub struct PolicyGrad {
    pub embed: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros(params: &PolicyParams) -> Self {
        PolicyGrad {
            embed: vec![0.0; params.embed.len()],
            out_w: vec![0.0; params.out_w.len()],
            out_b: vec![0.0; params.out_b.len()],
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.embed
            .iter()
            .chain(&self.out_w)
            .chain(&self.out_b)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for g in self
            .embed
            .iter_mut()
            .chain(self.out_w.iter_mut())
            .chain(self.out_b.iter_mut())
        {
            *g *= c;
        }
    }

    pub fn add_scaled(&mut self, other: &PolicyGrad, c: f64) {
        for (a, b) in self.embed.iter_mut().zip(&other.embed) {
            *a += c * b;
        }
        for (a, b) in self.out_w.iter_mut().zip(&other.out_w) {
            *a += c * b;
        }
        for (a, b) in self.out_b.iter_mut().zip(&other.out_b) {
            *a += c * b;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.embed.len() + self.out_w.len() + self.out_b.len());
        v.extend_from_slice(&self.embed);
        v.extend_from_slice(&self.out_w);
        v.extend_from_slice(&self.out_b);
        v
    }

    /// Cosine similarity between two gradients viewed as flat vectors.
    pub fn cosine(&self, other: &PolicyGrad) -> f64 {
        let a = self.to_flat();
        let b = other.to_flat();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }
}

/// A scored (context, output) pair: per-token conditional log-probs and their
/// arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub context: Vec<TokenId>,
    pub output: Vec<TokenId>,
    pub per_token_logprob: Vec<f64>,
    pub mean_logprob: f64,
}

impl Rollout {
    /// Builds a rollout from parts, computing the mean. Used by tests and by
    /// callers that already hold per-token log-probs.
    pub fn from_parts(
        context: Vec<TokenId>,
        output: Vec<TokenId>,
        per_token_logprob: Vec<f64>,
    ) -> Result<Self> {
        if output.is_empty() || per_token_logprob.len() != output.len() {
            return Err(Error::InvalidInput(format!(
                "rollout needs one log-prob per output token, got {} for {} tokens",
                per_token_logprob.len(),
                output.len()
            )));
        }
        let mean = per_token_logprob.iter().sum::<f64>() / per_token_logprob.len() as f64;
        Ok(Rollout {
            context,
            output,
            per_token_logprob,
            mean_logprob: mean,
        })
    }

    pub fn sum_logprob(&self) -> f64 {
        self.per_token_logprob.iter().sum()
    }
}

/// Mean-logprob policy ratio between two rollouts over the same pair:
/// exp(mean_theta - mean_old). Length-normalized by construction.
pub fn dam_ratio(rollout_theta: &Rollout, rollout_old: &Rollout) -> Result<f64> {
    if rollout_theta.context != rollout_old.context || rollout_theta.output != rollout_old.output {
        return Err(Error::InvalidInput(
            "dam_ratio requires rollouts over the identical (context, output) pair".into(),
        ));
    }
    Ok((rollout_theta.mean_logprob - rollout_old.mean_logprob).exp())
}

/// Summed-logprob ratio, the conventional unnormalized form. Grows as
/// exp(T * gap) with sequence length for a fixed per-token gap.
pub fn sum_ratio(rollout_theta: &Rollout, rollout_old: &Rollout) -> Result<f64> {
    if rollout_theta.context != rollout_old.context || rollout_theta.output != rollout_old.output {
        return Err(Error::InvalidInput(
            "sum_ratio requires rollouts over the identical (context, output) pair".into(),
        ));
    }
    Ok((rollout_theta.sum_logprob() - rollout_old.sum_logprob()).exp())
}

impl PolicyParams {
    pub fn init(vocab_size: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        if vocab_size < 4 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "policy needs vocab_size >= 4 and dim > 0, got {vocab_size} x {dim}"
            )));
        }
        let embed = (0..vocab_size * dim)
            .map(|_| rng.uniform(-0.05, 0.05))
            .collect();
        let out_w = (0..dim * vocab_size)
            .map(|_| rng.uniform(-0.05, 0.05))
            .collect();
        Ok(PolicyParams {
            vocab_size,
            dim,
            embed,
            out_w,
            out_b: vec![0.0; vocab_size],
        })
    }

    pub fn zeros(vocab_size: usize, dim: usize) -> Result<Self> {
        if vocab_size < 4 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "policy needs vocab_size >= 4 and dim > 0, got {vocab_size} x {dim}"
            )));
        }
        Ok(PolicyParams {
            vocab_size,
            dim,
            embed: vec![0.0; vocab_size * dim],
            out_w: vec![0.0; dim * vocab_size],
            out_b: vec![0.0; vocab_size],
        })
    }

    fn check_ids(&self, tokens: &[TokenId]) -> Result<()> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} out of range for vocab of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Next-token logits conditioned on the previous token.
    pub fn logits(&self, prev: TokenId) -> Vec<f64> {
        let mut z = self.out_b.clone();
        let row = &self.embed[prev * self.dim..(prev + 1) * self.dim];
        for (j, &e) in row.iter().enumerate() {
            let w = &self.out_w[j * self.vocab_size..(j + 1) * self.vocab_size];
            for (v, zv) in z.iter_mut().enumerate() {
                *zv += e * w[v];
            }
        }
        z
    }

    /// Distribution over the next token given a non-empty context.
    pub fn next_token_dist(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        let last = *context.last().ok_or_else(|| {
            Error::InvalidInput("next_token_dist needs a non-empty context".into())
        })?;
        self.check_ids(context)?;
        softmax(&self.logits(last))
    }

    /// Teacher-forced per-token conditional log-probs of `output` after
    /// `context`, along with their mean.
    pub fn log_probs(&self, context: &[TokenId], output: &[TokenId]) -> Result<Rollout> {
        if context.is_empty() {
            return Err(Error::InvalidInput("log_probs needs a non-empty context".into()));
        }
        if output.is_empty() {
            return Err(Error::InvalidInput("log_probs needs a non-empty output".into()));
        }
        self.check_ids(context)?;
        self.check_ids(output)?;
        let mut per_token = Vec::with_capacity(output.len());
        let mut prev = *context.last().unwrap();
        for &y in output {
            let z = self.logits(prev);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            per_token.push(z[y] - lse);
            prev = y;
        }
        Rollout::from_parts(context.to_vec(), output.to_vec(), per_token)
    }

    /// Ancestral sampling; stops after emitting EOS or at `max_len` tokens.
    /// Deterministic under a fixed generator state.
    pub fn sample(&self, context: &[TokenId], max_len: usize, rng: &mut Rng) -> Result<Vec<TokenId>> {
        if max_len == 0 {
            return Err(Error::InvalidInput("sample needs max_len >= 1".into()));
        }
        let mut ctx = context.to_vec();
        let mut out = Vec::new();
        while out.len() < max_len {
            let dist = self.next_token_dist(&ctx)?;
            let u = rng.next_f64();
            let mut acc = 0.0;
            let mut tok = self.vocab_size - 1;
            for (v, &p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    tok = v;
                    break;
                }
            }
            out.push(tok);
            ctx.push(tok);
            if tok == EOS {
                break;
            }
        }
        Ok(out)
    }

    pub fn gradient_step(&mut self, grad: &PolicyGrad, lr: f64) {
        for (p, g) in self.embed.iter_mut().zip(&grad.embed) {
            *p -= lr * g;
        }
        for (p, g) in self.out_w.iter_mut().zip(&grad.out_w) {
            *p -= lr * g;
        }
        for (p, g) in self.out_b.iter_mut().zip(&grad.out_b) {
            *p -= lr * g;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.embed);
        v.extend_from_slice(&self.out_w);
        v.extend_from_slice(&self.out_b);
        v
    }

    pub fn from_flat(vocab_size: usize, dim: usize, flat: &[f64]) -> Result<Self> {
        let expect = vocab_size * dim + dim * vocab_size + vocab_size;
        if flat.len() != expect {
            return Err(Error::InvalidInput(format!(
                "flat vector has {} entries, expected {expect}",
                flat.len()
            )));
        }
        let (embed, rest) = flat.split_at(vocab_size * dim);
        let (out_w, out_b) = rest.split_at(dim * vocab_size);
        Ok(PolicyParams {
            vocab_size,
            dim,
            embed: embed.to_vec(),
            out_w: out_w.to_vec(),
            out_b: out_b.to_vec(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.embed.len() + self.out_w.len() + self.out_b.len()
    }

    /// One maximum-likelihood descent step on -mean_logprob(target | context).
    /// Returns the pre-step loss. Used for supervised pretraining.
    pub fn mle_step(&mut self, context: &[TokenId], target: &[TokenId], lr: f64) -> Result<f64> {
        let rollout = self.log_probs(context, target)?;
        let grad = backprop_weighted_logprob(self, &[(context, target, -1.0)])?;
        self.gradient_step(&grad, lr);
        Ok(-rollout.mean_logprob)
    }
}

/// Adds the chain-rule contribution of a logit-space gradient `gu` at
/// conditioning token `prev` into a parameter gradient.
pub(crate) fn accumulate_logit_grad(
    params: &PolicyParams,
    grad: &mut PolicyGrad,
    prev: TokenId,
    gu: &[f64],
) {
    let row = &params.embed[prev * params.dim..(prev + 1) * params.dim];
    for (v, &g) in gu.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad.out_b[v] += g;
        for (j, &e) in row.iter().enumerate() {
            grad.out_w[j * params.vocab_size + v] += e * g;
            grad.embed[prev * params.dim + j] += params.out_w[j * params.vocab_size + v] * g;
        }
    }
}

/// Analytic gradient of sum_i weight_i * mean_logprob(output_i | context_i)
/// with respect to the policy parameters. This is the shared kernel behind
/// every policy objective in the crate.
pub fn backprop_weighted_logprob(
    params: &PolicyParams,
    batch: &[(&[TokenId], &[TokenId], f64)],
) -> Result<PolicyGrad> {
    let mut grad = PolicyGrad::zeros(params);
    let mut gu = vec![0.0; params.vocab_size];
    for &(context, output, weight) in batch {
        if !weight.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite weight {weight}")));
        }
        if context.is_empty() || output.is_empty() {
            return Err(Error::InvalidInput(
                "backprop_weighted_logprob needs non-empty context and output".into(),
            ));
        }
        params.check_ids(context)?;
        params.check_ids(output)?;
        if weight == 0.0 {
            continue;
        }
        let t_len = output.len() as f64;
        let mut prev = *context.last().unwrap();
        for &y in output {
            let p = softmax(&params.logits(prev))?;
            // d mean / d logit_v = (1/T) (1[v == y] - p_v), scaled by weight.
            for v in 0..params.vocab_size {
                gu[v] = (if v == y { 1.0 - p[v] } else { -p[v] }) * weight / t_len;
            }
            accumulate_logit_grad(params, &mut grad, prev, &gu);
            prev = y;
        }
    }
    Ok(grad)
}
