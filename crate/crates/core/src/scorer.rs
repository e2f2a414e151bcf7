//! Satisfaction scorer: an embedding table plus a linear head producing
//! per-token 3-class logits that are mean-pooled and softmaxed into a
//! bad/neutral/good distribution.
//!
//! The static scorer and the online-adapted copy share this architecture and
//! parameter shape; the online copy starts as an exact clone of the trained
//! static parameters. Training is soft-label cross-entropy, optionally
//! interleaved with experience replay against the static-labeled buffer.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cross_entropy, softmax, Rng, PROB_FLOOR};
use crate::tokens::TokenId;

/// Hard cap on scored sequence length.
pub const MAX_SEQ_LEN: usize = 64;

/// Number of satisfaction classes: bad, neutral, good.
pub const CLASSES: usize = 3;

/// A probability simplex over {bad, neutral, good}; the universal score
/// currency of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionDistribution {
    pub p_bad: f64,
    pub p_neutral: f64,
    pub p_good: f64,
}

impl SatisfactionDistribution {
    pub fn new(p_bad: f64, p_neutral: f64, p_good: f64) -> Result<Self> {
        let d = SatisfactionDistribution {
            p_bad,
            p_neutral,
            p_good,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn from_probs(p: &[f64]) -> Result<Self> {
        if p.len() != CLASSES {
            return Err(Error::InvalidInput(format!(
                "satisfaction distribution needs {CLASSES} entries, got {}",
                p.len()
            )));
        }
        SatisfactionDistribution::new(p[0], p[1], p[2])
    }

    pub fn uniform() -> Self {
        SatisfactionDistribution {
            p_bad: 1.0 / 3.0,
            p_neutral: 1.0 / 3.0,
            p_good: 1.0 / 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput(format!(
                "satisfaction entries must be finite and nonnegative: {a:?}"
            )));
        }
        let sum: f64 = a.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "satisfaction entries sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; CLASSES] {
        [self.p_bad, self.p_neutral, self.p_good]
    }

    /// Scalar reward in [-1, 1]: probability of good minus probability of bad.
    pub fn step_score(&self) -> f64 {
        self.p_good - self.p_bad
    }

    /// Index of the most probable class (0 bad, 1 neutral, 2 good).
    pub fn argmax(&self) -> usize {
        let a = self.as_array();
        let mut best = 0;
        for c in 1..CLASSES {
            if a[c] > a[best] {
                best = c;
            }
        }
        best
    }
}

/// Parameters of the satisfaction scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub vocab_size: usize,
    pub dim: usize,
    /// vocab_size x dim, row-major.
    pub embed: Vec<f64>,
    /// dim x 3, row-major.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

/// Dense gradient with the same layout as [`ScorerParams`].
#[derive(Debug, Clone)]
pub struct ScorerGrad {
    pub embed: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl ScorerGrad {
    fn zeros(params: &ScorerParams) -> Self {
        ScorerGrad {
            embed: vec![0.0; params.embed.len()],
            head_w: vec![0.0; params.head_w.len()],
            head_b: vec![0.0; params.head_b.len()],
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.embed
            .iter()
            .chain(&self.head_w)
            .chain(&self.head_b)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

impl ScorerParams {
    /// Seeded initialization: uniform weights in (-0.05, 0.05), zero bias.
    pub fn init(vocab_size: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        if vocab_size < 4 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "scorer needs vocab_size >= 4 and dim > 0, got {vocab_size} x {dim}"
            )));
        }
        let embed = (0..vocab_size * dim)
            .map(|_| rng.uniform(-0.05, 0.05))
            .collect();
        let head_w = (0..dim * CLASSES)
            .map(|_| rng.uniform(-0.05, 0.05))
            .collect();
        Ok(ScorerParams {
            vocab_size,
            dim,
            embed,
            head_w,
            head_b: vec![0.0; CLASSES],
        })
    }

    /// All-zero parameters; scores everything as exactly uniform.
    pub fn zeros(vocab_size: usize, dim: usize) -> Result<Self> {
        if vocab_size < 4 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "scorer needs vocab_size >= 4 and dim > 0, got {vocab_size} x {dim}"
            )));
        }
        Ok(ScorerParams {
            vocab_size,
            dim,
            embed: vec![0.0; vocab_size * dim],
            head_w: vec![0.0; dim * CLASSES],
            head_b: vec![0.0; CLASSES],
        })
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("scorer input is empty".into()));
        }
        if tokens.len() > MAX_SEQ_LEN {
            return Err(Error::InvalidInput(format!(
                "scorer input has {} tokens, cap is {MAX_SEQ_LEN}",
                tokens.len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} out of range for vocab of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Per-token class logits: embedding row times head plus bias.
    fn token_logits(&self, token: TokenId) -> [f64; CLASSES] {
        let mut z = [self.head_b[0], self.head_b[1], self.head_b[2]];
        let row = &self.embed[token * self.dim..(token + 1) * self.dim];
        for (j, &e) in row.iter().enumerate() {
            for c in 0..CLASSES {
                z[c] += e * self.head_w[j * CLASSES + c];
            }
        }
        z
    }

    /// Mean-pooled logits over the sequence, softmaxed into a distribution.
    pub fn score(&self, tokens: &[TokenId]) -> Result<SatisfactionDistribution> {
        self.check_tokens(tokens)?;
        let n = tokens.len() as f64;
        let mut mean = [0.0; CLASSES];
        for &t in tokens {
            let z = self.token_logits(t);
            for c in 0..CLASSES {
                mean[c] += z[c] / n;
            }
        }
        let p = softmax(&mean)?;
        SatisfactionDistribution::from_probs(&p)
    }

    /// Cross-entropy of the prediction against a soft label, plus its exact
    /// gradient with respect to all parameters.
    pub fn loss_and_grad(
        &self,
        tokens: &[TokenId],
        soft_label: &SatisfactionDistribution,
    ) -> Result<(f64, ScorerGrad)> {
        soft_label.validate()?;
        let pred = self.score(tokens)?;
        let y = soft_label.as_array();
        let p = pred.as_array();
        let loss = cross_entropy(&y, &p)?;

        // d loss / d p, honoring the probability floor: floored coordinates
        // contribute a constant and have zero derivative.
        let mut dl_dp = [0.0; CLASSES];
        for c in 0..CLASSES {
            if y[c] != 0.0 && p[c] > PROB_FLOOR {
                dl_dp[c] = -y[c] / p[c];
            }
        }
        // Chain through the softmax Jacobian.
        let weighted: f64 = (0..CLASSES).map(|c| dl_dp[c] * p[c]).sum();
        let mut g_z = [0.0; CLASSES];
        for c in 0..CLASSES {
            g_z[c] = p[c] * (dl_dp[c] - weighted);
        }

        let n = tokens.len() as f64;
        let mut mean_embed = vec![0.0; self.dim];
        for &t in tokens {
            let row = &self.embed[t * self.dim..(t + 1) * self.dim];
            for (j, &e) in row.iter().enumerate() {
                mean_embed[j] += e / n;
            }
        }

        let mut grad = ScorerGrad::zeros(self);
        grad.head_b.copy_from_slice(&g_z);
        for j in 0..self.dim {
            for c in 0..CLASSES {
                grad.head_w[j * CLASSES + c] = mean_embed[j] * g_z[c];
            }
        }
        // d loss / d mean-embedding, then distributed over token occurrences.
        let mut g_e = vec![0.0; self.dim];
        for j in 0..self.dim {
            for c in 0..CLASSES {
                g_e[j] += self.head_w[j * CLASSES + c] * g_z[c];
            }
        }
        for &t in tokens {
            for j in 0..self.dim {
                grad.embed[t * self.dim + j] += g_e[j] / n;
            }
        }
        Ok((loss, grad))
    }

    /// One gradient-descent step on the soft-label cross-entropy. Returns the
    /// pre-step loss.
    pub fn train_step_soft(
        &mut self,
        tokens: &[TokenId],
        soft_label: &SatisfactionDistribution,
        lr: f64,
    ) -> Result<f64> {
        if !(lr >= 0.0) {
            return Err(Error::InvalidInput(format!("learning rate {lr} must be >= 0")));
        }
        let (loss, grad) = self.loss_and_grad(tokens, soft_label)?;
        self.apply_grad(&grad, lr);
        Ok(loss)
    }

    pub fn apply_grad(&mut self, grad: &ScorerGrad, lr: f64) {
        for (p, g) in self.embed.iter_mut().zip(&grad.embed) {
            *p -= lr * g;
        }
        for (p, g) in self.head_w.iter_mut().zip(&grad.head_w) {
            *p -= lr * g;
        }
        for (p, g) in self.head_b.iter_mut().zip(&grad.head_b) {
            *p -= lr * g;
        }
    }

    /// Flat parameter vector (embed, head_w, head_b) for gradient checking.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.embed);
        v.extend_from_slice(&self.head_w);
        v.extend_from_slice(&self.head_b);
        v
    }

    pub fn from_flat(vocab_size: usize, dim: usize, flat: &[f64]) -> Result<Self> {
        let expect = vocab_size * dim + dim * CLASSES + CLASSES;
        if flat.len() != expect {
            return Err(Error::InvalidInput(format!(
                "flat vector has {} entries, expected {expect}",
                flat.len()
            )));
        }
        let (embed, rest) = flat.split_at(vocab_size * dim);
        let (head_w, head_b) = rest.split_at(dim * CLASSES);
        Ok(ScorerParams {
            vocab_size,
            dim,
            embed: embed.to_vec(),
            head_w: head_w.to_vec(),
            head_b: head_b.to_vec(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.embed.len() + self.head_w.len() + self.head_b.len()
    }
}

/// A stored training item carrying its static-dataset label.
#[derive(Debug, Clone)]
pub struct ReplayItem {
    pub tokens: Vec<TokenId>,
    pub static_label: SatisfactionDistribution,
}

/// FIFO buffer of replay items with a fixed capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<ReplayItem>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    /// Appends an item, evicting the oldest when full.
    pub fn push(&mut self, item: ReplayItem) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn sample<'a>(&'a self, rng: &mut Rng) -> Option<&'a ReplayItem> {
        if self.items.is_empty() {
            None
        } else {
            Some(&self.items[rng.below(self.items.len())])
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Which branch an experience-replay step took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErBranch {
    /// Trained on a replayed item against its static label.
    Replay,
    /// Trained on the current sample against its fresh soft label.
    Supervised,
}

/// One online update with stochastic experience replay: with probability
/// `er_ratio` the step trains on a uniformly drawn buffer item against its
/// static label, otherwise on the current sample against its soft label.
pub fn er_train_step(
    params: &mut ScorerParams,
    current: (&[TokenId], &SatisfactionDistribution),
    buffer: &ReplayBuffer,
    er_ratio: f64,
    rng: &mut Rng,
    lr: f64,
) -> Result<(f64, ErBranch)> {
    if !(0.0..=1.0).contains(&er_ratio) {
        return Err(Error::Config(format!("er_ratio {er_ratio} outside [0, 1]")));
    }
    if er_ratio > 0.0 && buffer.is_empty() {
        return Err(Error::Config(
            "er_ratio > 0 requires a non-empty replay buffer".into(),
        ));
    }
    let p = rng.next_f64();
    if p < er_ratio {
        let item = buffer.sample(rng).expect("buffer checked non-empty");
        let loss = params.train_step_soft(&item.tokens, &item.static_label, lr)?;
        Ok((loss, ErBranch::Replay))
    } else {
        let loss = params.train_step_soft(current.0, current.1, lr)?;
        Ok((loss, ErBranch::Supervised))
    }
}
