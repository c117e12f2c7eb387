//! Segmentation and noise-detection scores.

use serde::Serialize;

use crate::field::{LabelField, Mask};
use crate::{Error, Result};

fn same_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// `2|A ∩ B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    same_dims(pred.dims(), gt.dims(), "dice")?;
    let inter = pred.values().iter().zip(gt.values()).filter(|(a, b)| **a && **b).count();
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Foreground pixels with a background 4-neighbour; outside the image
/// counts as background.
pub fn boundary(mask: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = mask.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1);
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

fn mean_nearest(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|&(y, x)| {
            to.iter()
                .map(|&(ty, tx)| {
                    let dy = y as f64 - ty as f64;
                    let dx = x as f64 - tx as f64;
                    dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / from.len() as f64
}

/// Symmetric average surface distance in pixels, by exhaustive
/// nearest-neighbour search between the two boundaries.
pub fn asd(pred: &Mask, gt: &Mask) -> Result<f64> {
    same_dims(pred.dims(), gt.dims(), "asd")?;
    let bp = boundary(pred);
    let bg = boundary(gt);
    if bp.is_empty() {
        return Err(Error::UndefinedSurface("prediction"));
    }
    if bg.is_empty() {
        return Err(Error::UndefinedSurface("ground truth"));
    }
    Ok(0.5 * (mean_nearest(&bp, &bg) + mean_nearest(&bg, &bp)))
}

/// Dice and ASD of one prediction; ASD is absent when either surface is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegScores {
    pub dice: f64,
    pub asd: Option<f64>,
}

pub fn seg_scores(pred: &Mask, gt: &Mask) -> Result<SegScores> {
    let d = dice(pred, gt)?;
    let a = match asd(pred, gt) {
        Ok(v) => Some(v),
        Err(Error::UndefinedSurface(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SegScores { dice: d, asd: a })
}

/// Mean and population standard deviation; `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Confusion counts for "pseudo-label is wrong" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseEval {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl NoiseEval {
    /// Derived rates, with every 0/0 ratio taken as 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        let accuracy = ratio((tp + tn) as f64, (tp + fp + tn + fn_) as f64);
        Self { tp, fp, tn, fn_, precision, recall, f1, accuracy }
    }

    pub fn merge(&self, other: &NoiseEval) -> NoiseEval {
        NoiseEval::from_counts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn_ + other.fn_)
    }
}

/// Ground-truth noise map `pl != gt`.
pub fn noise_map(pl: &LabelField, gt: &LabelField) -> Result<Vec<bool>> {
    same_dims(pl.dims(), gt.dims(), "noise map")?;
    Ok(pl.values().iter().zip(gt.values()).map(|(a, b)| a != b).collect())
}

fn count(flags: impl Iterator<Item = bool>, noisy: &[bool]) -> NoiseEval {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (f, &n) in flags.zip(noisy) {
        match (f, n) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    NoiseEval::from_counts(tp, fp, tn, fn_)
}

/// Scores `flags` (true = predicted noisy) against the actual noise map.
pub fn noise_classification_metrics(flags: &Mask, pl: &LabelField, gt: &LabelField) -> Result<NoiseEval> {
    same_dims(flags.dims(), pl.dims(), "noise flags")?;
    let noisy = noise_map(pl, gt)?;
    Ok(count(flags.values().iter().copied(), &noisy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall at ascending thresholds, with the trapezoidal area over
/// recall.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub area: f64,
}

/// One image's noise scores with its pseudo-labels and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct ScoredLabels<'a> {
    pub score: &'a [f64],
    pub pl: &'a LabelField,
    pub gt: &'a LabelField,
}

/// Flags `score >= t` for each threshold; counts are pooled over all items.
pub fn pr_curve_pooled(items: &[ScoredLabels<'_>], thresholds: &[f64]) -> Result<PrCurve> {
    if thresholds.is_empty() {
        return Err(Error::Empty("threshold list"));
    }
    if thresholds.windows(2).any(|w| w[0].partial_cmp(&w[1]).is_none_or(|o| o.is_gt())) {
        return Err(Error::InvalidParameter("thresholds must be sorted ascending".into()));
    }
    let mut noisy = Vec::with_capacity(items.len());
    for it in items {
        if it.score.len() != it.pl.len() {
            return Err(Error::ShapeMismatch(format!("{} scores for {} pixels", it.score.len(), it.pl.len())));
        }
        noisy.push(noise_map(it.pl, it.gt)?);
    }
    let points: Vec<PrPoint> = thresholds
        .iter()
        .map(|&t| {
            let e = items
                .iter()
                .zip(&noisy)
                .map(|(it, n)| count(it.score.iter().map(|&s| s >= t), n))
                .fold(NoiseEval::from_counts(0, 0, 0, 0), |a, b| a.merge(&b));
            PrPoint { threshold: t, precision: e.precision, recall: e.recall, f1: e.f1 }
        })
        .collect();
    let area = points
        .windows(2)
        .map(|w| (w[0].recall - w[1].recall).abs() * 0.5 * (w[0].precision + w[1].precision))
        .sum();
    Ok(PrCurve { points, area })
}

pub fn pr_curve(score: &[f64], pl: &LabelField, gt: &LabelField, thresholds: &[f64]) -> Result<PrCurve> {
    pr_curve_pooled(&[ScoredLabels { score, pl, gt }], thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
        Mask::from_fn(h, w, |y, x| on.contains(&(y, x))).unwrap()
    }

    fn labels(v: &[u32]) -> LabelField {
        LabelField::new(1, v.len(), 2, v.to_vec()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = mask(3, 3, &[(0, 0), (1, 1)]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &mask(3, 3, &[(2, 2)])).unwrap(), 0.0);
        let p = mask(1, 8, &[(0, 0), (0, 1), (0, 2)]);
        let g = mask(1, 8, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]);
        assert_eq!(dice(&p, &g).unwrap(), 0.5);
        let e = Mask::filled(2, 2, false).unwrap();
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&e, &Mask::filled(2, 3, false).unwrap()).is_err());
    }

    #[test]
    fn asd_examples() {
        let a = mask(5, 5, &[(1, 1), (1, 2), (2, 1), (2, 2)]);
        assert_eq!(asd(&a, &a).unwrap(), 0.0);
        let p = mask(1, 6, &[(0, 1)]);
        let g = mask(1, 6, &[(0, 4)]);
        assert_eq!(asd(&p, &g).unwrap(), 3.0);
        let e = Mask::filled(1, 6, false).unwrap();
        assert!(matches!(asd(&e, &g), Err(Error::UndefinedSurface(_))));
        assert_eq!(seg_scores(&e, &g).unwrap().asd, None);
    }

    #[test]
    fn full_image_boundary_is_its_border() {
        let m = Mask::filled(4, 4, true).unwrap();
        assert_eq!(boundary(&m).len(), 12);
    }

    #[test]
    fn noise_metric_examples() {
        // TP=2, FP=1, FN=2, TN=5
        let pl = labels(&[1, 1, 1, 1, 1, 0, 0, 0, 0, 0]);
        let gt = labels(&[0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        let flags = Mask::new(1, 10, vec![true, true, true, false, false, false, false, false, false, false]).unwrap();
        let e = noise_classification_metrics(&flags, &pl, &gt).unwrap();
        assert_eq!((e.tp, e.fp, e.fn_, e.tn), (2, 1, 2, 5));
        assert!((e.precision - 2.0 / 3.0).abs() <= 1e-12);
        assert_eq!(e.recall, 0.5);
        assert!((e.f1 - 4.0 / 7.0).abs() <= 1e-12);
        assert!((e.accuracy - 0.7).abs() <= 1e-12);

        let exact = Mask::new(1, 10, noise_map(&pl, &gt).unwrap()).unwrap();
        let e = noise_classification_metrics(&exact, &pl, &gt).unwrap();
        assert_eq!((e.precision, e.recall, e.f1, e.accuracy), (1.0, 1.0, 1.0, 1.0));

        let none = Mask::filled(1, 10, false).unwrap();
        let e = noise_classification_metrics(&none, &gt, &gt).unwrap();
        assert_eq!((e.f1, e.accuracy), (0.0, 1.0));
    }

    #[test]
    fn pr_curve_examples() {
        let score = [0.9, 0.5, 0.1];
        let pl = labels(&[1, 0, 0]);
        let gt = labels(&[0, 0, 0]);
        let c = pr_curve(&score, &pl, &gt, &[0.0]).unwrap();
        assert_eq!(c.points[0].recall, 1.0);
        let c = pr_curve(&score, &pl, &gt, &[0.95]).unwrap();
        assert_eq!(c.points[0].recall, 0.0);

        // t=0.25 flags {0,1}: P=1/2, R=1; t=0.75 flags {0}: P=1, R=1
        let c = pr_curve(&score, &pl, &gt, &[0.25, 0.75]).unwrap();
        assert_eq!((c.points[0].precision, c.points[0].recall), (0.5, 1.0));
        assert_eq!((c.points[1].precision, c.points[1].recall), (1.0, 1.0));
        assert_eq!(c.area, 0.0);
        assert!(pr_curve(&score, &pl, &gt, &[]).is_err());
        assert!(pr_curve(&score, &pl, &gt, &[0.5, 0.2]).is_err());
    }

    fn brute_boundary(m: &Mask) -> Vec<(usize, usize)> {
        let (h, w) = m.dims();
        let at = |y: isize, x: isize| -> bool {
            y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m.get(y as usize, x as usize)
        };
        let mut out = Vec::new();
        for y in 0..h as isize {
            for x in 0..w as isize {
                if at(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| !at(y + dy, x + dx)) {
                    out.push((y as usize, x as usize));
                }
            }
        }
        out
    }

    fn mask_strategy() -> impl Strategy<Value = (Mask, Mask)> {
        (1usize..=16, 1usize..=16).prop_flat_map(|(h, w)| {
            (prop::collection::vec(any::<bool>(), h * w), prop::collection::vec(any::<bool>(), h * w))
                .prop_map(move |(a, b)| (Mask::new(h, w, a).unwrap(), Mask::new(h, w, b).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn dice_matches_set_arithmetic((a, b) in mask_strategy()) {
            let set = |m: &Mask| -> std::collections::BTreeSet<usize> {
                m.values().iter().enumerate().filter(|(_, v)| **v).map(|(i, _)| i).collect()
            };
            let (sa, sb) = (set(&a), set(&b));
            let want = if sa.is_empty() && sb.is_empty() {
                1.0
            } else {
                2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
            };
            prop_assert_eq!(dice(&a, &b).unwrap(), want);
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        }

        #[test]
        fn asd_matches_definition((a, b) in mask_strategy()) {
            let (ba, bb) = (brute_boundary(&a), brute_boundary(&b));
            prop_assert_eq!(&boundary(&a), &ba);
            if ba.is_empty() || bb.is_empty() {
                prop_assert!(asd(&a, &b).is_err());
            } else {
                let d = |p: (usize, usize), q: (usize, usize)| {
                    ((p.0 as f64 - q.0 as f64).powi(2) + (p.1 as f64 - q.1 as f64).powi(2)).sqrt()
                };
                let one = |from: &[(usize, usize)], to: &[(usize, usize)]| {
                    from.iter().map(|&p| to.iter().map(|&q| d(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>()
                        / from.len() as f64
                };
                let want = 0.5 * (one(&ba, &bb) + one(&bb, &ba));
                let got = asd(&a, &b).unwrap();
                prop_assert!((got - want).abs() <= 1e-12);
                prop_assert_eq!(got, asd(&b, &a).unwrap());
            }
        }

        #[test]
        fn curve_points_match_single_threshold_metrics(
            data in prop::collection::vec((0.0f64..1.0, 0u32..2, 0u32..2), 1..40),
            mut ts in prop::collection::vec(0.0f64..1.0, 1..6),
        ) {
            ts.sort_by(f64::total_cmp);
            let score: Vec<f64> = data.iter().map(|d| d.0).collect();
            let pl = labels(&data.iter().map(|d| d.1).collect::<Vec<_>>());
            let gt = labels(&data.iter().map(|d| d.2).collect::<Vec<_>>());
            let c = pr_curve(&score, &pl, &gt, &ts).unwrap();
            for (p, &t) in c.points.iter().zip(&ts) {
                let flags = Mask::new(1, score.len(), score.iter().map(|&s| s >= t).collect()).unwrap();
                let e = noise_classification_metrics(&flags, &pl, &gt).unwrap();
                prop_assert_eq!((p.precision, p.recall, p.f1), (e.precision, e.recall, e.f1));
            }
            prop_assert!(c.points.windows(2).all(|w| w[1].recall <= w[0].recall));
        }

        #[test]
        fn separable_scores_reach_unit_f1(data in prop::collection::vec((0u32..2, 0u32..2), 2..40)) {
            let pl = labels(&data.iter().map(|d| d.0).collect::<Vec<_>>());
            let gt = labels(&data.iter().map(|d| d.1).collect::<Vec<_>>());
            let noisy = noise_map(&pl, &gt).unwrap();
            prop_assume!(noisy.iter().any(|&n| n));
            let score: Vec<f64> = noisy.iter().map(|&n| if n { 0.8 } else { 0.2 }).collect();
            let c = pr_curve(&score, &pl, &gt, &[0.0, 0.5, 1.0]).unwrap();
            prop_assert!(c.points.iter().any(|p| p.f1 == 1.0));
        }
    }
}
