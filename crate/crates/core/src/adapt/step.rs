//! One teacher-student adaptation step.

use serde::Serialize;

use super::augment::augment;
use super::config::AdaptConfig;
use super::loss::{diversity_loss, masked_ce, supervision_weights};
use crate::confidence::{chebyshev_confidence, mc_statistics, mean_confidence};
use crate::denoise::{
    combined_mask_with, compute_prototypes_batch, eta_at, prototypical_labels, EtaSchedule, MaskFactors,
    PrototypeInput,
};
use crate::field::{binarize, ConfidenceField, FeatureField, Image, LabelField, Mask, ProbField, UncertField};
use crate::model::{
    adam_step, backprop, ema_update, forward, mc_forward, AdamConfig, AdamState, ForwardMode, Gradients, ModelParams,
};
use crate::{rng, Error, Result};

/// Pseudo-labels of one image with the statistics they came from.
#[derive(Debug, Clone)]
pub struct PseudoLabels {
    pub labels: LabelField,
    pub confidence: ConfidenceField,
    pub features: FeatureField,
    pub prob: ProbField,
    pub sigma: UncertField,
}

/// MC-dropout mean and spread, thresholded labels, their confidence bound,
/// and deterministic features.
pub fn make_pseudo_labels(params: &ModelParams, img: &Image, cfg: &AdaptConfig, seed: u64) -> Result<PseudoLabels> {
    let samples = mc_forward(params, img, cfg.mc_passes, seed, cfg.dropout_rate)?;
    let (prob, sigma) = mc_statistics(&samples)?;
    let labels = binarize(&prob, cfg.threshold);
    let confidence = chebyshev_confidence(&prob, &sigma, cfg.threshold)?;
    let features = forward(params, img, ForwardMode::Deterministic)?.features()?;
    Ok(PseudoLabels { labels, confidence, features, prob, sigma })
}

/// Hard targets of one stream for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    pub labels: LabelField,
    pub mask: Mask,
    pub weight: f64,
}

/// Everything about one image that the student objective treats as constant.
#[derive(Debug, Clone)]
pub struct ObjectiveItem {
    /// The student's (augmented) input.
    pub image: Image,
    pub dropout_seed: u64,
    pub teacher: Supervision,
    pub student: Option<Supervision>,
}

/// Weighted masked cross-entropy over both streams plus the diversity term,
/// as a function of the student parameters only.
#[derive(Debug, Clone)]
pub struct StepObjective {
    pub items: Vec<ObjectiveItem>,
    pub lambda: f64,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    /// Unweighted teacher-stream CE summed over the batch.
    pub loss_te: f64,
    pub loss_st: f64,
    pub loss_div: f64,
    pub total: f64,
}

impl StepObjective {
    pub fn value_and_grad(&self, params: &ModelParams) -> Result<(ObjectiveValue, Gradients)> {
        self.evaluate(params, true).map(|(v, g)| (v, g.expect("requested")))
    }

    pub fn value(&self, params: &ModelParams) -> Result<ObjectiveValue> {
        self.evaluate(params, false).map(|(v, _)| v)
    }

    fn evaluate(&self, params: &ModelParams, with_grad: bool) -> Result<(ObjectiveValue, Option<Gradients>)> {
        if self.items.is_empty() {
            return Err(Error::Empty("objective batch"));
        }
        let mut traces = Vec::with_capacity(self.items.len());
        let mut probs = Vec::with_capacity(self.items.len());
        for item in &self.items {
            let mode = ForwardMode::Stochastic { seed: item.dropout_seed, rate: self.dropout_rate };
            let t = forward(params, &item.image, mode)?;
            probs.push(t.prob_field()?);
            traces.push(t);
        }

        let mut value = ObjectiveValue { loss_te: 0.0, loss_st: 0.0, loss_div: 0.0, total: 0.0 };
        let mut d_logits: Vec<Vec<f64>> = Vec::with_capacity(self.items.len());
        for (item, p) in self.items.iter().zip(&probs) {
            let (ce_te, g_te) = masked_ce(p, &item.teacher.labels, &item.teacher.mask)?;
            value.loss_te += ce_te;
            value.total += item.teacher.weight * ce_te;
            let mut d: Vec<f64> = g_te.iter().map(|g| item.teacher.weight * g).collect();
            if let Some(st) = &item.student {
                let (ce_st, g_st) = masked_ce(p, &st.labels, &st.mask)?;
                value.loss_st += ce_st;
                value.total += st.weight * ce_st;
                d.iter_mut().zip(&g_st).for_each(|(a, g)| *a += st.weight * g);
            }
            d_logits.push(d);
        }
        if self.lambda > 0.0 {
            let (div, g_div) = diversity_loss(&probs)?;
            value.loss_div = div;
            value.total += self.lambda * div;
            for (d, g) in d_logits.iter_mut().zip(&g_div) {
                d.iter_mut().zip(g).for_each(|(a, b)| *a += self.lambda * b);
            }
        } else {
            value.loss_div = diversity_loss(&probs)?.0;
        }

        if !with_grad {
            return Ok((value, None));
        }
        let mut grads = Gradients::zeros(params.arch());
        for (trace, d) in traces.iter().zip(&d_logits) {
            grads.add_scaled(&backprop(params, trace, d)?, 1.0)?;
        }
        Ok((value, Some(grads)))
    }
}

/// Per-step log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub eta: f64,
    /// Batch-mean teacher weight.
    pub w_te: f64,
    pub w_st: f64,
    pub loss_te: f64,
    pub loss_st: f64,
    pub loss_div: f64,
    pub loss_total: f64,
    /// Fraction of pixels kept by the teacher-stream mask.
    pub mask_frac_te: f64,
    pub mask_frac_st: f64,
}

fn stream_supervision(
    pls: &[PseudoLabels],
    eta: f64,
    cfg: &AdaptConfig,
) -> Result<Vec<(LabelField, Mask)>> {
    let factors = MaskFactors { consistency: cfg.toggles.proto_denoise, confidence: cfg.toggles.direct_denoise };
    let protos = if factors.consistency {
        let inputs: Vec<PrototypeInput<'_>> = pls
            .iter()
            .map(|p| PrototypeInput { features: &p.features, labels: &p.labels, confidence: &p.confidence })
            .collect();
        Some(compute_prototypes_batch(&inputs, 2)?)
    } else {
        None
    };
    pls.iter()
        .map(|p| {
            let (h, w) = p.labels.dims();
            let mask = match &protos {
                Some(set) if (0..set.classes()).any(|k| set.is_present(k)) => {
                    let y_proto = prototypical_labels(&p.features, set)?;
                    combined_mask_with(&p.labels, &y_proto, Some(set), &p.confidence, eta, factors)?
                }
                // no class carries weight: consistency is vacuous
                _ => combined_mask_with(
                    &p.labels,
                    &p.labels,
                    None,
                    &p.confidence,
                    eta,
                    MaskFactors { consistency: false, ..factors },
                )?,
            };
            debug_assert_eq!(mask.dims(), (h, w));
            Ok((p.labels.clone(), mask))
        })
        .collect()
}

/// Batch-level statistics gathered while building the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub eta: f64,
    pub w_te: f64,
    pub w_st: f64,
    pub mask_frac_te: f64,
    pub mask_frac_st: f64,
}

/// Generates both streams' pseudo-labels, masks and weights for `batch` and
/// freezes them into a [`StepObjective`].
///
/// `total_steps` is the length of the η schedule; `step` must not exceed it.
pub fn build_objective(
    student: &ModelParams,
    teacher: &ModelParams,
    batch: &[Image],
    step: usize,
    total_steps: usize,
    cfg: &AdaptConfig,
) -> Result<(StepObjective, StepStats)> {
    if batch.is_empty() {
        return Err(Error::Empty("adaptation batch"));
    }
    let sched = EtaSchedule::new(cfg.eta_start, cfg.eta_end, total_steps)?;
    let eta = eta_at(&sched, step)?;
    let s = step as u64;

    let augmented = batch
        .iter()
        .enumerate()
        .map(|(i, img)| augment(img, rng::derive(cfg.seed, "augment", s, i as u64), &cfg.augmentation))
        .collect::<Result<Vec<_>>>()?;
    let teacher_pl = batch
        .iter()
        .enumerate()
        .map(|(i, img)| make_pseudo_labels(teacher, img, cfg, rng::derive(cfg.seed, "teacher-mc", s, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let student_pl = if cfg.toggles.student_branch {
        Some(
            augmented
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    make_pseudo_labels(student, img, cfg, rng::derive(cfg.seed, "student-mc", s, i as u64))
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    let te_sup = stream_supervision(&teacher_pl, eta, cfg)?;
    let st_sup = student_pl.as_deref().map(|pl| stream_supervision(pl, eta, cfg)).transpose()?;

    let n = batch.len() as f64;
    let mut stats = StepStats { eta, w_te: 0.0, w_st: 0.0, mask_frac_te: 0.0, mask_frac_st: 0.0 };
    let mut items = Vec::with_capacity(batch.len());
    for (i, (image, (te_labels, te_mask))) in augmented.into_iter().zip(te_sup).enumerate() {
        let (w_te, w_st) = match &student_pl {
            None => (1.0, 0.0),
            Some(st) => supervision_weights(
                mean_confidence(&teacher_pl[i].confidence),
                mean_confidence(&st[i].confidence),
                cfg.effective_gamma(),
                cfg.weight_sign,
            ),
        };
        stats.w_te += w_te / n;
        stats.w_st += w_st / n;
        stats.mask_frac_te += te_mask.fraction() / n;
        let student = st_sup.as_ref().map(|sup| {
            let (labels, mask) = sup[i].clone();
            stats.mask_frac_st += mask.fraction() / n;
            Supervision { labels, mask, weight: w_st }
        });
        items.push(ObjectiveItem {
            image,
            dropout_seed: rng::derive(cfg.seed, "train-dropout", s, i as u64),
            teacher: Supervision { labels: te_labels, mask: te_mask, weight: w_te },
            student,
        });
    }
    let objective = StepObjective { items, lambda: cfg.effective_lambda(), dropout_rate: cfg.dropout_rate };
    Ok((objective, stats))
}

/// Builds the objective, takes one Adam step on the student, then moves the
/// teacher toward the updated student.
#[allow(clippy::too_many_arguments)]
pub fn adapt_step(
    student: &mut ModelParams,
    adam: &mut AdamState,
    teacher: &mut ModelParams,
    batch: &[Image],
    step: usize,
    total_steps: usize,
    cfg: &AdaptConfig,
) -> Result<StepReport> {
    let (objective, stats) = build_objective(student, teacher, batch, step, total_steps, cfg)?;
    let (value, grads) = objective.value_and_grad(student)?;
    adam_step(student, &grads, adam, &AdamConfig::with_lr(cfg.lr))?;
    *teacher = ema_update(teacher, student, cfg.beta)?;
    Ok(StepReport {
        step,
        eta: stats.eta,
        w_te: stats.w_te,
        w_st: stats.w_st,
        loss_te: value.loss_te,
        loss_st: value.loss_st,
        loss_div: value.loss_div,
        loss_total: value.total,
        mask_frac_te: stats.mask_frac_te,
        mask_frac_st: stats.mask_frac_st,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::config::{Augmentation, Toggles};
    use crate::model::init_params;
    use rand::Rng;

    fn images(seed: u64, n: usize, side: usize) -> Vec<Image> {
        let mut r = rng::stream(seed, "step-test", 0, 0);
        (0..n)
            .map(|_| Image::new(side, side, 1, (0..side * side).map(|_| r.random::<f64>()).collect()).unwrap())
            .collect()
    }

    fn small_cfg() -> AdaptConfig {
        AdaptConfig { mc_passes: 3, seed: 5, ..AdaptConfig::default() }
    }

    #[test]
    fn rate_zero_gives_full_confidence_off_threshold() {
        let p = init_params(1, 1, 1).unwrap();
        let cfg = AdaptConfig { dropout_rate: 0.0, ..small_cfg() };
        let pl = make_pseudo_labels(&p, &images(1, 1, 6)[0], &cfg, 3).unwrap();
        assert!(pl.sigma.values().iter().all(|&s| s == 0.0));
        for (&pv, &l) in pl.prob.values().iter().zip(pl.confidence.values()) {
            assert_eq!(l, if pv == cfg.threshold { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn pseudo_labels_are_seeded() {
        let p = init_params(1, 1, 1).unwrap();
        let img = &images(2, 1, 6)[0];
        let a = make_pseudo_labels(&p, img, &small_cfg(), 9).unwrap();
        let b = make_pseudo_labels(&p, img, &small_cfg(), 9).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.confidence, b.confidence);
    }

    #[test]
    fn empty_masks_without_diversity_leave_student() {
        let mut student = init_params(1, 1, 1).unwrap();
        let mut teacher = student.clone();
        let before = student.clone();
        let mut adam = AdamState::new(&student);
        // eta above any reachable confidence empties every mask
        let cfg = AdaptConfig {
            eta_start: 0.999_999_999,
            eta_end: 0.999_999_999,
            dropout_rate: 0.5,
            toggles: Toggles { diversity: false, ..Toggles::default() },
            ..small_cfg()
        };
        let batch = images(3, 2, 5);
        let (obj, stats) = build_objective(&student, &teacher, &batch, 0, 1, &cfg).unwrap();
        assert!(obj.items.iter().all(|i| i.teacher.mask.count() == 0));
        assert_eq!(stats.mask_frac_te, 0.0);
        let r = adapt_step(&mut student, &mut adam, &mut teacher, &batch, 0, 1, &cfg).unwrap();
        assert_eq!(student, before);
        assert_eq!(r.loss_total, 0.0);
    }

    #[test]
    fn weighting_off_gives_equal_weights() {
        let student = init_params(1, 1, 1).unwrap();
        let teacher = init_params(2, 1, 1).unwrap();
        let cfg = AdaptConfig { toggles: Toggles { confidence_weighting: false, ..Toggles::default() }, ..small_cfg() };
        let (_, stats) = build_objective(&student, &teacher, &images(4, 2, 5), 0, 4, &cfg).unwrap();
        assert_eq!((stats.w_te, stats.w_st), (0.5, 0.5));
    }

    #[test]
    fn all_toggles_off_is_plain_teacher_self_training() {
        let student = init_params(1, 1, 1).unwrap();
        let teacher = init_params(2, 1, 1).unwrap();
        let cfg = AdaptConfig { toggles: Toggles::all(false), ..small_cfg() };
        let (obj, stats) = build_objective(&student, &teacher, &images(5, 3, 5), 1, 4, &cfg).unwrap();
        assert_eq!(obj.lambda, 0.0);
        assert_eq!((stats.w_te, stats.w_st), (1.0, 0.0));
        for item in &obj.items {
            assert!(item.student.is_none());
            assert_eq!(item.teacher.weight, 1.0);
            assert_eq!(item.teacher.mask.count(), item.teacher.mask.len());
        }
    }

    #[test]
    fn masked_pixels_receive_no_gradient() {
        let student = init_params(1, 1, 1).unwrap();
        let teacher = init_params(2, 1, 1).unwrap();
        let (mut obj, _) = build_objective(&student, &teacher, &images(6, 2, 5), 0, 2, &small_cfg()).unwrap();
        obj.lambda = 0.0;
        // half the pixels masked out in both streams
        for item in &mut obj.items {
            let (h, w) = item.teacher.mask.dims();
            item.teacher.mask = Mask::from_fn(h, w, |y, x| (y + x) % 2 == 0).unwrap();
            if let Some(st) = &mut item.student {
                st.mask = item.teacher.mask.clone();
            }
        }
        let (_, g0) = obj.value_and_grad(&student).unwrap();
        let flip = |sup: &mut Supervision| {
            let (h, w) = sup.labels.dims();
            let vals = sup
                .labels
                .values()
                .iter()
                .zip(sup.mask.values())
                .map(|(&v, &keep)| if keep { v } else { 1 - v })
                .collect();
            sup.labels = LabelField::new(h, w, 2, vals).unwrap();
        };
        for item in &mut obj.items {
            flip(&mut item.teacher);
            if let Some(st) = &mut item.student {
                flip(st);
            }
        }
        let (_, g1) = obj.value_and_grad(&student).unwrap();
        assert_eq!(g0, g1);
    }

    #[test]
    fn step_is_reproducible() {
        let cfg = AdaptConfig { augmentation: Augmentation::default(), ..small_cfg() };
        let run = || {
            let mut student = init_params(7, 1, 1).unwrap();
            let mut teacher = student.clone();
            let mut adam = AdamState::new(&student);
            let r = adapt_step(&mut student, &mut adam, &mut teacher, &images(7, 3, 6), 2, 5, &cfg).unwrap();
            (r, student, teacher)
        };
        let (r1, s1, t1) = run();
        let (r2, s2, t2) = run();
        assert_eq!(format!("{r1:?}"), format!("{r2:?}"));
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
    }
}
