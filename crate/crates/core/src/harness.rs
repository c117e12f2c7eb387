//! Experiment drivers shared by the command-line tool and the test suites.

use serde::Serialize;

use crate::adapt::{adapt_run, make_pseudo_labels, AdaptConfig, AdaptOutcome, PseudoLabels, Toggles};
use crate::denoise::{
    baseline_noise_score, combined_mask, compute_prototypes_batch, prototypical_labels, NoiseScoreMethod,
    PrototypeInput,
};
use crate::field::{Image, Mask};
use crate::metrics::{
    mean_std, noise_classification_metrics, pr_curve_pooled, seg_scores, NoiseEval, PrCurve, ScoredLabels, SegScores,
};
use crate::model::{forward, Checkpoint, ForwardMode, ModelParams};
use crate::synthdata::{Benchmark, Dataset};
use crate::{rng, Result};

/// Probability cut for turning network output into a segmentation.
pub const PREDICTION_THRESHOLD: f64 = 0.5;

/// Deterministic prediction `p >= 0.5`.
pub fn predict_mask(params: &ModelParams, img: &Image) -> Result<Mask> {
    let p = forward(params, img, ForwardMode::Deterministic)?.prob_field()?;
    let (h, w) = p.dims();
    Mask::new(h, w, p.values().iter().map(|&v| v >= PREDICTION_THRESHOLD).collect())
}

/// Per-image scores and their means over the dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegSummary {
    pub dice_mean: f64,
    pub dice_std: f64,
    /// Mean over images where both surfaces exist.
    pub asd_mean: Option<f64>,
    pub asd_std: Option<f64>,
    pub asd_count: usize,
    #[serde(skip)]
    pub per_image: Vec<SegScores>,
}

pub fn evaluate_segmentation(params: &ModelParams, data: &Dataset) -> Result<SegSummary> {
    let per_image = data
        .samples
        .iter()
        .map(|s| seg_scores(&predict_mask(params, &s.image)?, &s.label.class_mask(1)))
        .collect::<Result<Vec<_>>>()?;
    let dice: Vec<f64> = per_image.iter().map(|s| s.dice).collect();
    let asd: Vec<f64> = per_image.iter().filter_map(|s| s.asd).collect();
    let (dice_mean, dice_std) = mean_std(&dice).unwrap_or((f64::NAN, f64::NAN));
    let asd_stats = mean_std(&asd);
    Ok(SegSummary {
        dice_mean,
        dice_std,
        asd_mean: asd_stats.map(|s| s.0),
        asd_std: asd_stats.map(|s| s.1),
        asd_count: asd.len(),
        per_image,
    })
}

/// A noise detector evaluated by the denoising study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseMethod {
    Score(NoiseScoreMethod),
    /// Flags pixels whose label disagrees with the nearest prototype.
    Prototypical,
    /// Flags pixels outside the combined keep-mask.
    Combined,
}

impl DenoiseMethod {
    pub const ALL: [DenoiseMethod; 5] = [
        DenoiseMethod::Score(NoiseScoreMethod::Entropy),
        DenoiseMethod::Score(NoiseScoreMethod::Uncertainty),
        DenoiseMethod::Score(NoiseScoreMethod::ChebyshevComplement),
        DenoiseMethod::Prototypical,
        DenoiseMethod::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DenoiseMethod::Score(m) => m.name(),
            DenoiseMethod::Prototypical => "prototypical",
            DenoiseMethod::Combined => "combined",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseOptions {
    pub methods: Vec<DenoiseMethod>,
    /// Flagging threshold per score method; defaults when absent.
    pub entropy_threshold: f64,
    pub uncertainty_threshold: f64,
    pub chebyshev_threshold: f64,
    /// Confidence cut of the combined mask.
    pub eta: f64,
    /// Ascending thresholds of the PR curves.
    pub curve_thresholds: Vec<f64>,
}

impl DenoiseOptions {
    pub fn new(eta: f64) -> Self {
        Self {
            methods: DenoiseMethod::ALL.to_vec(),
            entropy_threshold: NoiseScoreMethod::Entropy.default_threshold(),
            uncertainty_threshold: NoiseScoreMethod::Uncertainty.default_threshold(),
            chebyshev_threshold: NoiseScoreMethod::ChebyshevComplement.default_threshold(),
            eta,
            curve_thresholds: (0..=200).map(|i| i as f64 / 200.0).collect(),
        }
    }

    pub fn threshold(&self, m: NoiseScoreMethod) -> f64 {
        match m {
            NoiseScoreMethod::Entropy => self.entropy_threshold,
            NoiseScoreMethod::Uncertainty => self.uncertainty_threshold,
            NoiseScoreMethod::ChebyshevComplement => self.chebyshev_threshold,
        }
    }
}

/// Macro-averaged detection quality of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenoiseRow {
    pub method: DenoiseMethod,
    /// Flagging threshold (η for the combined mask; absent for prototypes).
    pub threshold: Option<f64>,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// Counts pooled over every image.
    pub pooled: NoiseEval,
}

#[derive(Debug, Clone)]
pub struct DenoiseReport {
    pub rows: Vec<DenoiseRow>,
    /// PR curves of the score methods, pooled over all pixels.
    pub curves: Vec<(NoiseScoreMethod, PrCurve)>,
    /// Fraction of pseudo-labels that disagree with the ground truth.
    pub noise_rate: f64,
}

/// Pseudo-labels for every image of `data`, seeded per image.
pub fn dataset_pseudo_labels(params: &ModelParams, data: &Dataset, cfg: &AdaptConfig) -> Result<Vec<PseudoLabels>> {
    data.samples
        .iter()
        .enumerate()
        .map(|(i, s)| make_pseudo_labels(params, &s.image, cfg, rng::derive(cfg.seed, "eval-mc", i as u64, 0)))
        .collect()
}

/// Compares each detector's flags with the actual pseudo-label errors of the
/// given model on `data`. Prototypes pool the whole dataset.
pub fn evaluate_denoising(
    params: &ModelParams,
    data: &Dataset,
    cfg: &AdaptConfig,
    opts: &DenoiseOptions,
) -> Result<DenoiseReport> {
    let pls = dataset_pseudo_labels(params, data, cfg)?;
    let inputs: Vec<PrototypeInput<'_>> = pls
        .iter()
        .map(|p| PrototypeInput { features: &p.features, labels: &p.labels, confidence: &p.confidence })
        .collect();
    let protos = compute_prototypes_batch(&inputs, 2)?;
    let proto_labels = pls.iter().map(|p| prototypical_labels(&p.features, &protos)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &method in &opts.methods {
        let mut f1 = Vec::with_capacity(pls.len());
        let mut acc = Vec::with_capacity(pls.len());
        let mut pooled = NoiseEval::from_counts(0, 0, 0, 0);
        let threshold = match method {
            DenoiseMethod::Score(m) => Some(opts.threshold(m)),
            DenoiseMethod::Prototypical => None,
            DenoiseMethod::Combined => Some(opts.eta),
        };
        for ((pl, s), yp) in pls.iter().zip(&data.samples).zip(&proto_labels) {
            let (h, w) = pl.labels.dims();
            let flags = match method {
                DenoiseMethod::Score(m) => {
                    let t = opts.threshold(m);
                    let score = baseline_noise_score(&pl.prob, &pl.sigma, m, cfg.threshold)?;
                    Mask::new(h, w, score.iter().map(|&v| v >= t).collect())?
                }
                DenoiseMethod::Prototypical => Mask::new(
                    h,
                    w,
                    pl.labels
                        .values()
                        .iter()
                        .zip(yp.values())
                        .map(|(&a, &b)| protos.is_present(a as usize) && a != b)
                        .collect(),
                )?,
                DenoiseMethod::Combined => {
                    combined_mask(&pl.labels, yp, Some(&protos), &pl.confidence, opts.eta)?.not()
                }
            };
            let e = noise_classification_metrics(&flags, &pl.labels, &s.label)?;
            f1.push(e.f1);
            acc.push(e.accuracy);
            pooled = pooled.merge(&e);
        }
        let (f1_mean, f1_std) = mean_std(&f1).unwrap_or_default();
        let (accuracy_mean, accuracy_std) = mean_std(&acc).unwrap_or_default();
        rows.push(DenoiseRow { method, threshold, f1_mean, f1_std, accuracy_mean, accuracy_std, pooled });
    }

    let mut curves = Vec::new();
    for m in NoiseScoreMethod::ALL {
        if !opts.methods.contains(&DenoiseMethod::Score(m)) {
            continue;
        }
        let scores = pls
            .iter()
            .map(|pl| baseline_noise_score(&pl.prob, &pl.sigma, m, cfg.threshold))
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<ScoredLabels<'_>> = scores
            .iter()
            .zip(&pls)
            .zip(&data.samples)
            .map(|((score, pl), s)| ScoredLabels { score, pl: &pl.labels, gt: &s.label })
            .collect();
        curves.push((m, pr_curve_pooled(&items, &opts.curve_thresholds)?));
    }

    let wrong: usize = pls
        .iter()
        .zip(&data.samples)
        .map(|(pl, s)| pl.labels.values().iter().zip(s.label.values()).filter(|(a, b)| a != b).count())
        .sum();
    let total: usize = data.samples.iter().map(|s| s.label.len()).sum();
    Ok(DenoiseReport { rows, curves, noise_rate: wrong as f64 / total as f64 })
}

/// Adapts on the target-train split and scores the student on target-test.
pub fn adapt_and_evaluate(
    source: &Checkpoint,
    bench: &Benchmark,
    cfg: &AdaptConfig,
) -> Result<(AdaptOutcome, SegSummary)> {
    let outcome = adapt_run(source, &bench.target_train, cfg)?;
    let summary = evaluate_segmentation(&outcome.student.params, &bench.target_test)?;
    Ok((outcome, summary))
}

/// The ablation grid: `(label, toggles)` with label bits in the order
/// diversity, student branch, confidence weighting, direct denoising,
/// prototypical denoising.
pub fn ablation_rows() -> Vec<(String, Toggles)> {
    ["00000", "10000", "11000", "11100", "11110", "11101", "01111", "10011", "11011", "11111"]
        .iter()
        .map(|bits| {
            let b: Vec<bool> = bits.chars().map(|c| c == '1').collect();
            let t = Toggles {
                diversity: b[0],
                student_branch: b[1],
                confidence_weighting: b[2],
                direct_denoise: b[3],
                proto_denoise: b[4],
            };
            (bits.to_string(), t)
        })
        .collect()
}

/// One ablation or sweep result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub label: String,
    pub config: AdaptConfig,
    pub summary: SegSummary,
}

pub fn run_ablation(source: &Checkpoint, bench: &Benchmark, base: &AdaptConfig) -> Result<Vec<RunResult>> {
    ablation_rows()
        .into_iter()
        .map(|(label, toggles)| {
            let config = AdaptConfig { toggles, ..base.clone() };
            let (_, summary) = adapt_and_evaluate(source, bench, &config)?;
            Ok(RunResult { label, config, summary })
        })
        .collect()
}

pub const DEFAULT_GAMMAS: [f64; 6] = [0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0];

pub fn sweep_gamma(source: &Checkpoint, bench: &Benchmark, base: &AdaptConfig, gammas: &[f64]) -> Result<Vec<RunResult>> {
    if gammas.is_empty() {
        return Err(crate::Error::Empty("gamma list"));
    }
    gammas
        .iter()
        .map(|&gamma| {
            let config = AdaptConfig { gamma, ..base.clone() };
            let (_, summary) = adapt_and_evaluate(source, bench, &config)?;
            Ok(RunResult { label: crate::report::fmt_real(gamma), config, summary })
        })
        .collect()
}
