//! Python bindings for the core types and operations: the seeded generator,
//! both model families, the satisfaction-score algebra, and the scalar
//! objective forms used by the trainers.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use arf_core::augment;
use arf_core::baselines;
use arf_core::numerics;
use arf_core::policy::{self, PolicyParams};
use arf_core::scorer::{SatisfactionDistribution, ScorerParams};
use arf_core::sim_env;
use arf_core::snapshot::{self, PolicySnapshot, ScorerSnapshot};
use arf_core::tracebias;

fn err<T>(result: arf_core::Result<T>) -> PyResult<T> {
    result.map_err(|e| PyValueError::new_err(e.to_string()))
}

fn dist(triple: (f64, f64, f64)) -> PyResult<SatisfactionDistribution> {
    err(SatisfactionDistribution::new(triple.0, triple.1, triple.2))
}

fn triple(d: SatisfactionDistribution) -> (f64, f64, f64) {
    (d.p_bad, d.p_neutral, d.p_good)
}

/// Deterministic counter-based random generator.
#[pyclass]
struct Rng {
    inner: numerics::Rng,
}

#[pymethods]
impl Rng {
    #[new]
    fn new(seed: u64) -> Self {
        Rng {
            inner: numerics::Rng::new(seed),
        }
    }

    /// Independent generator for the given stream id.
    fn stream(&self, stream_id: u64) -> Rng {
        Rng {
            inner: self.inner.stream(stream_id),
        }
    }

    fn next_f64(&mut self) -> f64 {
        self.inner.next_f64()
    }

    fn below(&mut self, n: usize) -> PyResult<usize> {
        if n == 0 {
            return Err(PyValueError::new_err("below(0) is undefined"));
        }
        Ok(self.inner.below(n))
    }
}

/// Satisfaction scorer: embedding table plus linear head, mean-pooled into a
/// (bad, neutral, good) distribution.
#[pyclass]
struct Scorer {
    params: ScorerParams,
}

#[pymethods]
impl Scorer {
    #[new]
    fn new(vocab_size: usize, dim: usize, seed: u64) -> PyResult<Self> {
        let mut rng = numerics::Rng::new(seed);
        Ok(Scorer {
            params: err(ScorerParams::init(vocab_size, dim, &mut rng))?,
        })
    }

    #[staticmethod]
    fn zeros(vocab_size: usize, dim: usize) -> PyResult<Self> {
        Ok(Scorer {
            params: err(ScorerParams::zeros(vocab_size, dim))?,
        })
    }

    fn score(&self, tokens: Vec<usize>) -> PyResult<(f64, f64, f64)> {
        Ok(triple(err(self.params.score(&tokens))?))
    }

    fn step_score(&self, tokens: Vec<usize>) -> PyResult<f64> {
        Ok(err(self.params.score(&tokens))?.step_score())
    }

    /// One soft-label gradient step; returns the pre-step loss.
    fn train_step(&mut self, tokens: Vec<usize>, label: (f64, f64, f64), lr: f64) -> PyResult<f64> {
        let label = dist(label)?;
        err(self.params.train_step_soft(&tokens, &label, lr))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json_string(&ScorerSnapshot::from_params(&self.params))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Scorer> {
        let snap: ScorerSnapshot = serde_json::from_str(text)
            .map_err(|e| PyValueError::new_err(format!("parse: {e}")))?;
        Ok(Scorer {
            params: err(snap.into_params())?,
        })
    }

    fn fingerprint(&self) -> String {
        snapshot::scorer_fingerprint(&self.params)
    }

    fn clone_params(&self) -> Scorer {
        Scorer {
            params: self.params.clone(),
        }
    }
}

/// Bigram policy over the shared vocabulary.
#[pyclass]
struct Policy {
    params: PolicyParams,
}

#[pymethods]
impl Policy {
    #[new]
    fn new(vocab_size: usize, dim: usize, seed: u64) -> PyResult<Self> {
        let mut rng = numerics::Rng::new(seed);
        Ok(Policy {
            params: err(PolicyParams::init(vocab_size, dim, &mut rng))?,
        })
    }

    #[staticmethod]
    fn zeros(vocab_size: usize, dim: usize) -> PyResult<Self> {
        Ok(Policy {
            params: err(PolicyParams::zeros(vocab_size, dim))?,
        })
    }

    fn next_token_dist(&self, context: Vec<usize>) -> PyResult<Vec<f64>> {
        err(self.params.next_token_dist(&context))
    }

    fn sample(&self, context: Vec<usize>, max_len: usize, rng: &mut Rng) -> PyResult<Vec<usize>> {
        err(self.params.sample(&context, max_len, &mut rng.inner))
    }

    /// Teacher-forced per-token log-probs and their mean.
    fn log_probs(&self, context: Vec<usize>, output: Vec<usize>) -> PyResult<(Vec<f64>, f64)> {
        let rollout = err(self.params.log_probs(&context, &output))?;
        Ok((rollout.per_token_logprob.clone(), rollout.mean_logprob))
    }

    /// Mean-logprob ratio of this policy over another on one pair.
    fn dam_ratio(&self, old: &Policy, context: Vec<usize>, output: Vec<usize>) -> PyResult<f64> {
        let theta = err(self.params.log_probs(&context, &output))?;
        let reference = err(old.params.log_probs(&context, &output))?;
        err(policy::dam_ratio(&theta, &reference))
    }

    /// Summed-logprob ratio, the unnormalized form.
    fn sum_ratio(&self, old: &Policy, context: Vec<usize>, output: Vec<usize>) -> PyResult<f64> {
        let theta = err(self.params.log_probs(&context, &output))?;
        let reference = err(old.params.log_probs(&context, &output))?;
        err(policy::sum_ratio(&theta, &reference))
    }

    /// One maximum-likelihood step toward the target; returns the pre-step loss.
    fn mle_step(&mut self, context: Vec<usize>, target: Vec<usize>, lr: f64) -> PyResult<f64> {
        err(self.params.mle_step(&context, &target, lr))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json_string(&PolicySnapshot::from_params(&self.params))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Policy> {
        let snap: PolicySnapshot = serde_json::from_str(text)
            .map_err(|e| PyValueError::new_err(format!("parse: {e}")))?;
        Ok(Policy {
            params: err(snap.into_params())?,
        })
    }
}

fn serde_json_string<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyValueError::new_err(format!("serialize: {e}")))
}

#[pyfunction]
fn softmax(logits: Vec<f64>) -> PyResult<Vec<f64>> {
    err(numerics::softmax(&logits))
}

#[pyfunction]
fn sigmoid(x: f64) -> f64 {
    numerics::sigmoid(x)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    err(numerics::cosine_similarity(&a, &b))
}

#[pyfunction]
fn cross_entropy(soft_label: Vec<f64>, pred: Vec<f64>) -> PyResult<f64> {
    err(numerics::cross_entropy(&soft_label, &pred))
}

#[pyfunction]
fn step_score(score: (f64, f64, f64)) -> PyResult<f64> {
    Ok(dist(score)?.step_score())
}

/// Agreement weight: sigmoid of the centered cosine similarity, scaled.
#[pyfunction]
fn cos_weight(c_new: (f64, f64, f64), c_old: (f64, f64, f64), s_sig: f64) -> PyResult<f64> {
    err(augment::cos_weight(&dist(c_new)?, &dist(c_old)?, s_sig))
}

/// Agreement-weighted convex blend of two score vectors.
#[pyfunction]
fn biased_score(
    c_arf: (f64, f64, f64),
    c_basic: (f64, f64, f64),
    s_sig: f64,
) -> PyResult<(f64, f64, f64)> {
    Ok(triple(err(augment::biased_score(
        &dist(c_arf)?,
        &dist(c_basic)?,
        s_sig,
    ))?))
}

#[pyfunction]
fn trace_score(step_scores: Vec<f64>, gamma: f64) -> PyResult<f64> {
    if step_scores.is_empty() || !(gamma > 0.0 && gamma <= 1.0) {
        return Err(PyValueError::new_err(
            "trace_score needs a non-empty sequence and gamma in (0, 1]",
        ));
    }
    Ok(tracebias::trace_score(&step_scores, gamma))
}

#[pyfunction]
fn advantage(s_label: f64, s_real: f64) -> f64 {
    tracebias::advantage(s_label, s_real)
}

#[pyfunction]
fn tracebias_loss(samples: Vec<(f64, f64)>) -> f64 {
    tracebias::tracebias_loss(&samples)
}

#[pyfunction]
fn bt_probability(r_w: f64, r_l: f64) -> f64 {
    baselines::bt_probability(r_w, r_l)
}

#[pyfunction]
fn ppo_clip_loss(ratio: f64, advantage: f64, clip_eps: f64) -> PyResult<f64> {
    if !(ratio > 0.0) || !(clip_eps > 0.0) {
        return Err(PyValueError::new_err("ratio and clip_eps must be positive"));
    }
    Ok(baselines::ppo_clip_loss(ratio, advantage, clip_eps))
}

#[pyfunction]
fn strength_to_class(strength: f64) -> PyResult<String> {
    let class = err(sim_env::strength_to_class(strength))?;
    Ok(match class {
        sim_env::SatClass::Bad => "bad".to_string(),
        sim_env::SatClass::Neutral => "neutral".to_string(),
        sim_env::SatClass::Good => "good".to_string(),
    })
}

/// The fixed 64-token vocabulary as strings, reserved ids first.
#[pyfunction]
fn default_vocabulary() -> Vec<String> {
    let vocab = sim_env::build_vocab();
    (0..vocab.size()).map(|i| vocab.token(i).to_string()).collect()
}

#[pymodule]
fn arf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Rng>()?;
    m.add_class::<Scorer>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(sigmoid, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(step_score, m)?)?;
    m.add_function(wrap_pyfunction!(cos_weight, m)?)?;
    m.add_function(wrap_pyfunction!(biased_score, m)?)?;
    m.add_function(wrap_pyfunction!(trace_score, m)?)?;
    m.add_function(wrap_pyfunction!(advantage, m)?)?;
    m.add_function(wrap_pyfunction!(tracebias_loss, m)?)?;
    m.add_function(wrap_pyfunction!(bt_probability, m)?)?;
    m.add_function(wrap_pyfunction!(ppo_clip_loss, m)?)?;
    m.add_function(wrap_pyfunction!(strength_to_class, m)?)?;
    m.add_function(wrap_pyfunction!(default_vocabulary, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
