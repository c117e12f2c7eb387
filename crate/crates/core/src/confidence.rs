//! Monte-Carlo dropout moments and the Cantelli confidence bound.
//!
//! For an output random variable `Z` with mean `p` and standard deviation
//! `σ`, the one-sided Chebyshev inequality bounds the mass on the wrong side
//! of a threshold `T`. The complement gives a lower bound on the probability
//! that `Z` agrees with the pseudo-label `1[p >= T]`:
//!
//! ```text
//! l = (p - T)^2 / (σ^2 + (p - T)^2)
//! ```
//!
//! The bound has the same closed form for both labels. At `p == T` with
//! `σ == 0` the ratio is `0/0`; it is defined as `0`, since a prediction
//! sitting exactly on the threshold carries no directional evidence.

use crate::field::{ConfidenceField, ProbField, UncertField};
use crate::{Error, Result};

/// Stochastic forward outputs `z_1..z_n` for one image.
#[derive(Debug, Clone)]
pub struct McSamples {
    samples: Vec<ProbField>,
}

impl McSamples {
    pub fn new(samples: Vec<ProbField>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 MC samples, got {}",
                samples.len()
            )));
        }
        let dims = samples[0].dims();
        if let Some(s) = samples.iter().find(|s| s.dims() != dims) {
            return Err(Error::ShapeMismatch(format!(
                "MC sample {:?} differs from {:?}",
                s.dims(),
                dims
            )));
        }
        Ok(Self { samples })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[ProbField] {
        &self.samples
    }
}

/// Per-class probability and uncertainty stacks for the multi-class bound.
#[derive(Debug, Clone)]
pub struct ClassProbStack {
    probs: Vec<ProbField>,
    sigmas: Vec<UncertField>,
}

impl ClassProbStack {
    const SIMPLEX_TOL: f64 = 1e-9;

    pub fn new(probs: Vec<ProbField>, sigmas: Vec<UncertField>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidParameter("need at least 2 classes".into()));
        }
        if probs.len() != sigmas.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} probability maps but {} uncertainty maps",
                probs.len(),
                sigmas.len()
            )));
        }
        let dims = probs[0].dims();
        if probs.iter().any(|p| p.dims() != dims) || sigmas.iter().any(|s| s.dims() != dims) {
            return Err(Error::ShapeMismatch("class maps differ in size".into()));
        }
        for i in 0..probs[0].len() {
            let total: f64 = probs.iter().map(|p| p.values()[i]).sum();
            if (total - 1.0).abs() > Self::SIMPLEX_TOL {
                return Err(Error::InvalidValue(format!(
                    "class probabilities at pixel {i} sum to {total}"
                )));
            }
        }
        Ok(Self { probs, sigmas })
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }
}

/// Per-pixel mean and population standard deviation (divisor `n`).
pub fn mc_statistics(s: &McSamples) -> Result<(ProbField, UncertField)> {
    let (h, w) = s.samples[0].dims();
    let n = s.n() as f64;
    let len = h * w;
    // shifted by the first sample so that identical samples give an exact
    // mean and zero spread
    let first = s.samples[0].values();
    let mut mean = vec![0.0; len];
    for z in &s.samples[1..] {
        for ((m, v), v0) in mean.iter_mut().zip(z.values()).zip(first) {
            *m += v - v0;
        }
    }
    for (m, v0) in mean.iter_mut().zip(first) {
        *m = v0 + *m / n;
    }
    let mut var = vec![0.0; len];
    for z in &s.samples {
        for ((acc, v), m) in var.iter_mut().zip(z.values()).zip(&mean) {
            let d = v - m;
            *acc += d * d;
        }
    }
    let sigma = var.into_iter().map(|v| (v / n).sqrt()).collect();
    // mean of values in [0,1] can drift a few ulps outside
    let mean = mean.into_iter().map(|m| m.clamp(0.0, 1.0)).collect();
    Ok((ProbField::new(h, w, mean)?, UncertField::new(h, w, sigma)?))
}

/// Closed-form bound for one pixel.
pub fn confidence_bound(p: f64, sigma: f64, threshold: f64) -> f64 {
    let gap = (p - threshold) * (p - threshold);
    let denom = sigma * sigma + gap;
    if denom == 0.0 {
        0.0
    } else {
        gap / denom
    }
}

/// Binary-mode confidence at a fixed threshold.
pub fn chebyshev_confidence(p: &ProbField, sigma: &UncertField, threshold: f64) -> Result<ConfidenceField> {
    if p.dims() != sigma.dims() {
        return Err(Error::ShapeMismatch(format!(
            "probability {:?} vs uncertainty {:?}",
            p.dims(),
            sigma.dims()
        )));
    }
    let (h, w) = p.dims();
    let values = p
        .values()
        .iter()
        .zip(sigma.values())
        .map(|(&pv, &sv)| confidence_bound(pv, sv, threshold))
        .collect();
    ConfidenceField::new(h, w, values)
}

/// Multi-class confidence: the threshold becomes the runner-up probability
/// and `σ` is the uncertainty of the top class.
pub fn chebyshev_confidence_multiclass(s: &ClassProbStack) -> Result<ConfidenceField> {
    let (h, w) = s.probs[0].dims();
    let mut values = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let mut top = 0usize;
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for (k, p) in s.probs.iter().enumerate() {
            let v = p.values()[i];
            if v > best {
                second = best;
                best = v;
                top = k;
            } else if v > second {
                second = v;
            }
        }
        values.push(confidence_bound(best, s.sigmas[top].values()[i], second));
    }
    ConfidenceField::new(h, w, values)
}

/// Mean confidence over all pixels.
pub fn mean_confidence(l: &ConfidenceField) -> f64 {
    let mean = l.values().iter().sum::<f64>() / l.len() as f64;
    mean.clamp(0.0, 1.0)
}
