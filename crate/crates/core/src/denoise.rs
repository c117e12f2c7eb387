//! Pseudo-label denoising.
//!
//! Direct denoising keeps pixels whose confidence clears a scheduled
//! threshold `η`. Prototypical denoising additionally requires the pixel's
//! pseudo-label to agree with the nearest confidence-weighted class
//! prototype in feature space. Baseline noise scores (entropy, raw
//! uncertainty, confidence complement) are provided for comparison.

use serde::{Deserialize, Serialize};

use crate::confidence::confidence_bound;
use crate::field::{ConfidenceField, FeatureField, LabelField, Mask, ProbField, UncertField};
use crate::{Error, Result};

/// Linear decay of the direct-denoising threshold over an adaptation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaSchedule {
    pub eta_start: f64,
    pub eta_end: f64,
    pub total_steps: usize,
}

impl EtaSchedule {
    pub fn new(eta_start: f64, eta_end: f64, total_steps: usize) -> Result<Self> {
        if !(0.0 < eta_end && eta_end <= eta_start && eta_start < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eta schedule needs 0 < end <= start < 1, got {eta_start} -> {eta_end}"
            )));
        }
        Ok(Self { eta_start, eta_end, total_steps })
    }
}

/// Threshold at `step`; a zero-length schedule stays at `eta_start`.
pub fn eta_at(sched: &EtaSchedule, step: usize) -> Result<f64> {
    if step > sched.total_steps {
        return Err(Error::StepOutOfRange { step, total: sched.total_steps });
    }
    if sched.total_steps == 0 {
        return Ok(sched.eta_start);
    }
    Ok(sched.eta_start + (sched.eta_end - sched.eta_start) * step as f64 / sched.total_steps as f64)
}

/// `1[l >= eta]`.
pub fn direct_mask(l: &ConfidenceField, eta: f64) -> Mask {
    let (h, w) = l.dims();
    Mask::new(h, w, l.values().iter().map(|&v| v >= eta).collect()).expect("same dims")
}

/// Confidence-weighted class centroids; `None` where a class has no weight.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    depth: usize,
    prototypes: Vec<Option<Vec<f64>>>,
}

impl PrototypeSet {
    pub fn new(depth: usize, prototypes: Vec<Option<Vec<f64>>>) -> Result<Self> {
        for z in prototypes.iter().flatten() {
            if z.len() != depth || z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue("prototype must be finite with the set's depth".into()));
            }
        }
        Ok(Self { depth, prototypes })
    }

    pub fn classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.prototypes.get(class).and_then(|p| p.as_deref())
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.get(class).is_some()
    }
}

/// One pixel set contributing to prototype estimation.
#[derive(Debug, Clone, Copy)]
pub struct PrototypeInput<'a> {
    pub features: &'a FeatureField,
    pub labels: &'a LabelField,
    pub confidence: &'a ConfidenceField,
}

/// Prototypes over the union of all pixels in `batch`, accumulated in batch
/// then row-major pixel order.
pub fn compute_prototypes_batch(batch: &[PrototypeInput<'_>], classes: usize) -> Result<PrototypeSet> {
    let depth = batch.first().ok_or(Error::Empty("prototype batch"))?.features.depth();
    let mut sums = vec![vec![0.0; depth]; classes];
    let mut weights = vec![0.0; classes];
    for item in batch {
        let dims = item.features.dims();
        if item.labels.dims() != dims || item.confidence.dims() != dims || item.features.depth() != depth {
            return Err(Error::ShapeMismatch("prototype inputs differ in size".into()));
        }
        for (i, (&k, &l)) in item.labels.values().iter().zip(item.confidence.values()).enumerate() {
            let k = k as usize;
            if k >= classes {
                return Err(Error::InvalidValue(format!("label {k} not below {classes} classes")));
            }
            if l == 0.0 {
                continue;
            }
            weights[k] += l;
            for (s, e) in sums[k].iter_mut().zip(item.features.pixel(i)) {
                *s += e * l;
            }
        }
    }
    let prototypes = sums
        .into_iter()
        .zip(weights)
        .map(|(s, w)| (w > 0.0).then(|| s.into_iter().map(|v| v / w).collect()))
        .collect();
    PrototypeSet::new(depth, prototypes)
}

/// Prototypes from a single field triple.
pub fn compute_prototypes(
    f: &FeatureField,
    y: &LabelField,
    l: &ConfidenceField,
    classes: usize,
) -> Result<PrototypeSet> {
    compute_prototypes_batch(&[PrototypeInput { features: f, labels: y, confidence: l }], classes)
}

/// Nearest present prototype per pixel; ties go to the lowest class index.
pub fn prototypical_labels(f: &FeatureField, protos: &PrototypeSet) -> Result<LabelField> {
    if f.depth() != protos.depth() {
        return Err(Error::ShapeMismatch(format!(
            "feature depth {} vs prototype depth {}",
            f.depth(),
            protos.depth()
        )));
    }
    if (0..protos.classes()).all(|k| !protos.is_present(k)) {
        return Err(Error::NoPrototypes);
    }
    let (h, w) = f.dims();
    let mut labels = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let e = f.pixel(i);
        let mut best = (f64::INFINITY, 0u32);
        for k in 0..protos.classes() {
            if let Some(z) = protos.get(k) {
                let d: f64 = e.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, k as u32);
                }
            }
        }
        labels.push(best.1);
    }
    LabelField::new(h, w, protos.classes(), labels)
}

/// Which factors of the combined mask are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskFactors {
    pub consistency: bool,
    pub confidence: bool,
}

impl Default for MaskFactors {
    fn default() -> Self {
        Self { consistency: true, confidence: true }
    }
}

/// Combined keep-mask with either factor optionally forced to 1.
///
/// Pixels whose pseudo-label class has no prototype skip the consistency
/// factor.
pub fn combined_mask_with(
    y: &LabelField,
    y_proto: &LabelField,
    protos: Option<&PrototypeSet>,
    l: &ConfidenceField,
    eta: f64,
    factors: MaskFactors,
) -> Result<Mask> {
    let dims = y.dims();
    if y_proto.dims() != dims || l.dims() != dims {
        return Err(Error::ShapeMismatch("mask inputs differ in size".into()));
    }
    let values = y
        .values()
        .iter()
        .zip(y_proto.values())
        .zip(l.values())
        .map(|((&a, &b), &c)| {
            let has_proto = protos.is_none_or(|p| p.is_present(a as usize));
            let consistent = !factors.consistency || !has_proto || a == b;
            let confident = !factors.confidence || c >= eta;
            consistent && confident
        })
        .collect();
    Mask::new(dims.0, dims.1, values)
}

/// `1[y == y_proto] * 1[l >= eta]`.
pub fn combined_mask(
    y: &LabelField,
    y_proto: &LabelField,
    protos: Option<&PrototypeSet>,
    l: &ConfidenceField,
    eta: f64,
) -> Result<Mask> {
    combined_mask_with(y, y_proto, protos, l, eta, MaskFactors::default())
}

/// Baseline scorer for noise detection; higher means more likely noisy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScoreMethod {
    Entropy,
    Uncertainty,
    ChebyshevComplement,
}

impl NoiseScoreMethod {
    pub const ALL: [NoiseScoreMethod; 3] = [Self::Entropy, Self::Uncertainty, Self::ChebyshevComplement];

    pub fn name(self) -> &'static str {
        match self {
            Self::Entropy => "entropy",
            Self::Uncertainty => "uncertainty",
            Self::ChebyshevComplement => "chebyshev_complement",
        }
    }

    /// Flagging threshold used by the denoising evaluation table.
    pub fn default_threshold(self) -> f64 {
        match self {
            Self::Entropy => 0.1,
            Self::Uncertainty => 0.05,
            Self::ChebyshevComplement => 0.05,
        }
    }
}

/// Binary entropy in nats with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(p) + term(1.0 - p)
}

pub fn baseline_noise_score(
    p: &ProbField,
    sigma: &UncertField,
    method: NoiseScoreMethod,
    threshold: f64,
) -> Result<Vec<f64>> {
    if p.dims() != sigma.dims() {
        return Err(Error::ShapeMismatch("score inputs differ in size".into()));
    }
    let scores = match method {
        NoiseScoreMethod::Entropy => p.values().iter().map(|&v| binary_entropy(v)).collect(),
        NoiseScoreMethod::Uncertainty => sigma.values().to_vec(),
        NoiseScoreMethod::ChebyshevComplement => p
            .values()
            .iter()
            .zip(sigma.values())
            .map(|(&pv, &sv)| 1.0 - confidence_bound(pv, sv, threshold))
            .collect(),
    };
    Ok(scores)
}
