//! Deterministic scalar/vector primitives, seeded randomness, and the
//! finite-difference oracle used to validate every analytic gradient in the
//! crate.
//!
//! All math is 64-bit. Log arguments are clamped at [`PROB_FLOOR`] so
//! cross-entropy on near-delta labels stays finite.

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based pseudo-random generator.
///
/// The draw sequence is a pure function of (seed, stream id, counter), so the
/// same seed reproduces the same sequence on any platform, and independent
/// subsystems can split their own streams without consuming each other's
/// draws.
#[derive(Debug, Clone)]
pub struct Rng {
    key: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            key: mix(seed ^ 0x5851_F42D_4C95_7F2D),
            counter: 0,
        }
    }

    /// Derives an independent generator for the given stream id. Streams with
    /// different ids never share draws; the parent is left untouched.
    pub fn stream(&self, stream_id: u64) -> Rng {
        Rng {
            key: mix(self.key ^ mix(stream_id.wrapping_mul(GOLDEN).wrapping_add(0x1F12_3BB5))),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Panics if n == 0.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below called with n = 0");
        (self.next_u64() % n as u64) as usize
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Numerically stable softmax. Errors on non-finite input; the output sums to
/// one within 1e-12 and is invariant under constant shifts of the input.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of empty vector".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "softmax input must be finite, got {logits:?}"
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// ln(1 + exp(x)) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Cosine similarity for nonnegative vectors; the result lies in [0, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "cosine similarity needs equal-length non-empty vectors, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    for v in a.iter().chain(b.iter()) {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::InvalidInput(
                "cosine similarity requires finite nonnegative entries".into(),
            ));
        }
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

fn validate_simplex(p: &[f64], name: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidInput(format!("{name}: empty simplex")));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput(format!(
            "{name}: simplex entries must be finite and nonnegative, got {p:?}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "{name}: simplex sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Cross-entropy -sum p_i log q_i between two distributions over the same
/// support. Entries of `pred` are clamped at [`PROB_FLOOR`] before the log.
pub fn cross_entropy(soft_label: &[f64], pred: &[f64]) -> Result<f64> {
    validate_simplex(soft_label, "cross_entropy label")?;
    validate_simplex(pred, "cross_entropy prediction")?;
    if soft_label.len() != pred.len() {
        return Err(Error::InvalidInput(
            "cross_entropy: mismatched distribution lengths".into(),
        ));
    }
    Ok(soft_label
        .iter()
        .zip(pred)
        .map(|(&p, &q)| if p == 0.0 { 0.0 } else { -p * q.max(PROB_FLOOR).ln() })
        .sum())
}

/// Worst-case agreement between an analytic gradient and central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub param_count: usize,
}

/// Compares `analytic` against the central difference
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) coordinate-wise.
///
/// The relative error denominator is floored at 1e-6 so coordinates whose true
/// gradient is zero do not blow up the report.
pub fn fd_gradient_check<F>(
    loss_eval: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<GradReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if params.is_empty() {
        return Err(Error::InvalidInput("fd_gradient_check: no parameters".into()));
    }
    if params.len() != analytic.len() {
        return Err(Error::InvalidInput(format!(
            "fd_gradient_check: {} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("fd_gradient_check: eps must be > 0".into()));
    }
    let mut work = params.to_vec();
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        work[i] = params[i] + eps;
        let up = loss_eval(&work)?;
        work[i] = params[i] - eps;
        let down = loss_eval(&work)?;
        work[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::OracleFailure(format!(
                "loss non-finite at perturbation of coordinate {i}: f+={up}, f-={down}"
            )));
        }
        let fd = (up - down) / (2.0 * eps);
        let abs = (fd - analytic[i]).abs();
        let rel = abs / fd.abs().max(analytic[i].abs()).max(1e-6);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    Ok(GradReport {
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        param_count: params.len(),
    })
}
