//! Synthetic shifted-domain segmentation benchmark.
//!
//! Scenes are unions of axis-aligned ellipses on a flat background. The
//! target domain applies a monotone intensity transform plus noise on top of
//! the same kind of scenes, leaving geometry (and thus ground truth) intact.

mod io;

pub use io::{load_benchmark, load_dataset, read_pgm, save_benchmark, write_pgm, BenchmarkIndex, DatasetIndex};

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::field::{Image, LabelField};
use crate::{rng, Error, Result};

/// Scene geometry and intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Semi-axes are drawn uniformly in `[min_axis, max_axis]` pixels.
    pub min_axis: f64,
    pub max_axis: f64,
    pub foreground: f64,
    pub background: f64,
    pub noise_std: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            min_blobs: 1,
            max_blobs: 3,
            min_axis: 3.0,
            max_axis: 8.0,
            foreground: 0.35,
            background: 0.1,
            noise_std: 0.05,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.height == 0 || self.width == 0 {
            return bad(format!("scene size {}x{}", self.height, self.width));
        }
        if self.min_blobs == 0 || self.min_blobs > self.max_blobs {
            return bad(format!("blob range [{}, {}]", self.min_blobs, self.max_blobs));
        }
        if !(self.min_axis >= 1.0 && self.min_axis <= self.max_axis) {
            return bad(format!("axis range [{}, {}]", self.min_axis, self.max_axis));
        }
        if 2.0 * self.max_axis > self.height.min(self.width) as f64 {
            return bad(format!("axis {} does not fit a {}x{} scene", self.max_axis, self.height, self.width));
        }
        for v in [self.foreground, self.background] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("intensity {v} outside [0, 1]"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std = {}", self.noise_std));
        }
        Ok(())
    }
}

/// Intensity transform `gain · in^gamma + offset + noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub offset: f64,
    pub gain: f64,
    pub gamma: f64,
    pub noise_std: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self { offset: 0.15, gain: 0.7, gamma: 1.4, noise_std: 0.05 }
    }
}

impl DomainSpec {
    pub fn identity() -> Self {
        Self { offset: 0.0, gain: 1.0, gamma: 1.0, noise_std: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gamma > 0.0 && self.offset.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid domain shift {self:?}")));
        }
        if !(self.gain.is_finite() && self.gamma.is_finite() && self.noise_std.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid domain shift {self:?}")));
        }
        Ok(())
    }
}

/// One axis-aligned ellipse in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
}

impl Ellipse {
    /// Inclusion test at the center of pixel `(y, x)`.
    pub fn contains_pixel(&self, y: usize, x: usize) -> bool {
        let dx = (x as f64 + 0.5 - self.cx) / self.a;
        let dy = (y as f64 + 0.5 - self.cy) / self.b;
        dx * dx + dy * dy <= 1.0
    }
}

/// The ellipses of one scene, each lying fully inside the image.
pub fn scene_ellipses(seed: u64, spec: &SceneSpec) -> Vec<Ellipse> {
    let mut r = rng::stream(seed, "scene-geometry", 0, 0);
    let n = r.random_range(spec.min_blobs..=spec.max_blobs);
    (0..n)
        .map(|_| {
            let a = r.random_range(spec.min_axis..=spec.max_axis);
            let b = r.random_range(spec.min_axis..=spec.max_axis);
            let cx = r.random_range(a..=spec.width as f64 - a);
            let cy = r.random_range(b..=spec.height as f64 - b);
            Ellipse { cx, cy, a, b }
        })
        .collect()
}

/// A scene image and its exact ground truth.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<(Image, LabelField)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let ellipses = scene_ellipses(seed, spec);
    let labels: Vec<u32> = (0..h * w)
        .map(|i| u32::from(ellipses.iter().any(|e| e.contains_pixel(i / w, i % w))))
        .collect();
    let mut r = rng::stream(seed, "scene-noise", 0, 0);
    let values = labels
        .iter()
        .map(|&l| {
            let base = if l == 1 { spec.foreground } else { spec.background };
            let z: f64 = StandardNormal.sample(&mut r);
            base + spec.noise_std * z
        })
        .collect();
    Ok((Image::new(h, w, 1, values)?, LabelField::new(h, w, 2, labels)?))
}

/// `clip(gain · in^gamma + offset + noise, 0, 1)`, noise drawn only when its
/// std is positive.
pub fn apply_domain_shift(img: &Image, d: &DomainSpec, seed: u64) -> Result<Image> {
    d.validate()?;
    let mut r = rng::stream(seed, "domain-noise", 0, 0);
    img.map(|_, v| {
        let noise = if d.noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut r);
            d.noise_std * z
        } else {
            0.0
        };
        d.gain * v.powf(d.gamma) + d.offset + noise
    })
}

/// Which split a dataset plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    SourceTrain,
    TargetTrain,
    TargetTest,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::SourceTrain, Role::TargetTrain, Role::TargetTest];

    pub fn name(self) -> &'static str {
        match self {
            Role::SourceTrain => "source-train",
            Role::TargetTrain => "target-train",
            Role::TargetTest => "target-test",
        }
    }
}

/// An image and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: LabelField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub role: Role,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(role: Role, samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset"))?;
        let dims = first.image.dims();
        let channels = first.image.channels();
        for s in &samples {
            if s.image.dims() != dims || s.label.dims() != dims || s.image.channels() != channels {
                return Err(Error::ShapeMismatch("dataset samples differ in size".into()));
            }
        }
        Ok(Self { role, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn images(&self) -> Vec<Image> {
        self.samples.iter().map(|s| s.image.clone()).collect()
    }

    pub fn channels(&self) -> usize {
        self.samples[0].image.channels()
    }

    /// Rounds every intensity onto the 16-bit grid used on disk, so that a
    /// save/load round trip is exact.
    pub fn quantized(&self) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let image = s.image.map(|_, v| quantize(v) as f64 / 65535.0)?;
                Ok(Sample { image, label: s.label.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.role, samples)
    }
}

pub(crate) fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Seed of scene `i` in a dataset seeded with `seed`.
pub fn scene_seed(seed: u64, i: usize) -> u64 {
    rng::derive(seed, "scene", i as u64, 0)
}

/// Seed of the shift noise of scene `i`.
pub fn shift_seed(seed: u64, i: usize) -> u64 {
    rng::derive(seed, "shift", i as u64, 0)
}

/// `n` seeded scenes, shifted when `domain` is given.
pub fn generate_dataset(
    seed: u64,
    n: usize,
    spec: &SceneSpec,
    domain: Option<&DomainSpec>,
    role: Role,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    let samples = (0..n)
        .map(|i| {
            let (mut image, label) = generate_scene(scene_seed(seed, i), spec)?;
            if let Some(d) = domain {
                image = apply_domain_shift(&image, d, shift_seed(seed, i))?;
            }
            Ok(Sample { image, label })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(role, samples)
}

/// Flips each pixel whose 4-connected distance to the ground-truth boundary
/// is below `band` with probability `flip_rate`.
///
/// Boundary pixels (distance 0) have a 4-neighbour of another class. A field
/// with a single class has no boundary and is returned unchanged.
pub fn corrupt_labels(gt: &LabelField, seed: u64, band: usize, flip_rate: f64) -> Result<LabelField> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::InvalidParameter(format!("flip_rate = {flip_rate} outside [0, 1]")));
    }
    if gt.classes() != 2 {
        return Err(Error::InvalidParameter("label corruption needs a binary field".into()));
    }
    let dist = boundary_distance(gt);
    let mut r = rng::stream(seed, "corrupt", 0, 0);
    let values = gt
        .values()
        .iter()
        .zip(&dist)
        .map(|(&v, d)| {
            // one draw per pixel keeps the stream aligned across bands
            let u: f64 = r.random();
            match d {
                Some(d) if *d < band && u < flip_rate => 1 - v,
                _ => v,
            }
        })
        .collect();
    LabelField::new(gt.height(), gt.width(), 2, values)
}

/// 4-connected distance of every pixel to the nearest boundary pixel.
pub fn boundary_distance(gt: &LabelField) -> Vec<Option<usize>> {
    let (h, w) = gt.dims();
    let mut dist = vec![None; h * w];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let v = gt.get(y, x);
            let differs = neighbours(y, x, h, w).any(|(ny, nx)| gt.get(ny, nx) != v);
            if differs {
                dist[y * w + x] = Some(0);
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        let d = dist[y * w + x].expect("queued pixels have a distance");
        for (ny, nx) in neighbours(y, x, h, w) {
            if dist[ny * w + nx].is_none() {
                dist[ny * w + nx] = Some(d + 1);
                queue.push_back((ny, nx));
            }
        }
    }
    dist
}

fn neighbours(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let up = (y > 0).then(|| (y - 1, x));
    let down = (y + 1 < h).then_some((y + 1, x));
    let left = (x > 0).then(|| (y, x - 1));
    let right = (x + 1 < w).then_some((y, x + 1));
    [up, down, left, right].into_iter().flatten()
}

/// Sizes and generators of the three benchmark splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub scene: SceneSpec,
    pub domain: DomainSpec,
    pub n_source_train: usize,
    pub n_target_train: usize,
    pub n_target_test: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            domain: DomainSpec::default(),
            n_source_train: 100,
            n_target_train: 60,
            n_target_test: 40,
        }
    }
}

impl BenchmarkSpec {
    pub fn size(&self, role: Role) -> usize {
        match role {
            Role::SourceTrain => self.n_source_train,
            Role::TargetTrain => self.n_target_train,
            Role::TargetTest => self.n_target_test,
        }
    }
}

/// Source-train, target-train and target-test splits, quantized to 16 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub seed: u64,
    pub spec: BenchmarkSpec,
    pub source_train: Dataset,
    pub target_train: Dataset,
    pub target_test: Dataset,
}

impl Benchmark {
    /// Seed of one split.
    pub fn split_seed(seed: u64, role: Role) -> u64 {
        rng::derive(seed, role.name(), 0, 0)
    }

    pub fn generate(seed: u64, spec: &BenchmarkSpec) -> Result<Self> {
        let split = |role: Role| {
            let domain = (role != Role::SourceTrain).then_some(&spec.domain);
            generate_dataset(Self::split_seed(seed, role), spec.size(role), &spec.scene, domain, role)?.quantized()
        };
        Ok(Self {
            seed,
            spec: *spec,
            source_train: split(Role::SourceTrain)?,
            target_train: split(Role::TargetTrain)?,
            target_test: split(Role::TargetTest)?,
        })
    }

    pub fn get(&self, role: Role) -> &Dataset {
        match role {
            Role::SourceTrain => &self.source_train,
            Role::TargetTrain => &self.target_train,
            Role::TargetTest => &self.target_test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneSpec {
        SceneSpec { height: 20, width: 24, max_axis: 6.0, ..SceneSpec::default() }
    }

    #[test]
    fn scenes_are_seeded() {
        let a = generate_scene(3, &small()).unwrap();
        assert_eq!(a, generate_scene(3, &small()).unwrap());
        assert_ne!(a, generate_scene(4, &small()).unwrap());
    }

    #[test]
    fn ellipse_centres_are_foreground_and_inside() {
        let spec = SceneSpec::default();
        for seed in 0..200 {
            let (_, gt) = generate_scene(seed, &spec).unwrap();
            for e in scene_ellipses(seed, &spec) {
                assert!(e.cx - e.a >= 0.0 && e.cx + e.a <= spec.width as f64);
                assert!(e.cy - e.b >= 0.0 && e.cy + e.b <= spec.height as f64);
                assert_eq!(gt.get(e.cy as usize, e.cx as usize), 1);
            }
        }
    }

    #[test]
    fn label_is_exact_ellipse_union() {
        let spec = small();
        let (_, gt) = generate_scene(9, &spec).unwrap();
        let es = scene_ellipses(9, &spec);
        for y in 0..spec.height {
            for x in 0..spec.width {
                let inside = es.iter().any(|e| {
                    let px = x as f64 + 0.5;
                    let py = y as f64 + 0.5;
                    ((px - e.cx) / e.a).powi(2) + ((py - e.cy) / e.b).powi(2) <= 1.0
                });
                assert_eq!(gt.get(y, x), u32::from(inside));
            }
        }
    }

    #[test]
    fn noiseless_scene_has_two_intensities() {
        let spec = SceneSpec { noise_std: 0.0, ..SceneSpec::default() };
        let (img, gt) = generate_scene(1, &spec).unwrap();
        for (v, l) in img.values().iter().zip(gt.values()) {
            assert_eq!(*v, if *l == 1 { spec.foreground } else { spec.background });
        }
    }

    #[test]
    fn foreground_fraction_within_area_bounds() {
        // union area lies between the largest ellipse and the sum of all,
        // in expectation E[ab] = ((min + max) / 2)^2 per ellipse
        let spec = SceneSpec::default();
        let n = 1000;
        let mut frac = 0.0;
        let mut lo = 0.0;
        let mut hi = 0.0;
        for seed in 0..n {
            let (_, gt) = generate_scene(seed, &spec).unwrap();
            frac += gt.values().iter().filter(|&&v| v == 1).count() as f64;
            let areas: Vec<f64> =
                scene_ellipses(seed, &spec).iter().map(|e| std::f64::consts::PI * e.a * e.b).collect();
            lo += areas.iter().cloned().fold(0.0, f64::max);
            hi += areas.iter().sum::<f64>();
        }
        let px = (n as f64) * (spec.height * spec.width) as f64;
        let (frac, lo, hi) = (frac / px, lo / px, hi / px);
        let mean_blobs = (spec.min_blobs + spec.max_blobs) as f64 / 2.0;
        let e_ab = ((spec.min_axis + spec.max_axis) / 2.0).powi(2);
        let analytic_hi = mean_blobs * std::f64::consts::PI * e_ab / (spec.height * spec.width) as f64;
        assert!(frac >= 0.97 * lo && frac <= 1.03 * hi, "{lo} <= {frac} <= {hi}");
        assert!((hi - analytic_hi).abs() <= 0.1 * analytic_hi, "{hi} vs {analytic_hi}");
    }

    #[test]
    fn shift_examples() {
        let img = Image::new(1, 3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(apply_domain_shift(&img, &DomainSpec::identity(), 0).unwrap(), img);
        let off = DomainSpec { offset: 0.1, ..DomainSpec::identity() };
        let out = apply_domain_shift(&img, &off, 0).unwrap();
        assert!((out.values()[1] - 0.6).abs() <= 1e-12);
        let big = DomainSpec { offset: 2.0, ..DomainSpec::identity() };
        assert!(apply_domain_shift(&img, &big, 0).unwrap().values().iter().all(|&v| v == 1.0));
        assert!(DomainSpec { gain: 0.0, ..DomainSpec::identity() }.validate().is_err());
    }

    #[test]
    fn source_and_target_differ_only_by_shift() {
        let spec = small();
        let d = DomainSpec::default();
        let src = generate_dataset(5, 6, &spec, None, Role::SourceTrain).unwrap();
        let tgt = generate_dataset(5, 6, &spec, Some(&d), Role::TargetTrain).unwrap();
        for (i, (s, t)) in src.samples.iter().zip(&tgt.samples).enumerate() {
            assert_eq!(s.label, t.label);
            assert_eq!(apply_domain_shift(&s.image, &d, shift_seed(5, i)).unwrap(), t.image);
        }
        assert_eq!(generate_dataset(5, 1, &spec, None, Role::SourceTrain).unwrap().len(), 1);
        assert!(generate_dataset(5, 0, &spec, None, Role::SourceTrain).is_err());
    }

    #[test]
    fn corruption_examples() {
        let (_, gt) = generate_scene(2, &SceneSpec::default()).unwrap();
        assert_eq!(corrupt_labels(&gt, 1, 3, 0.0).unwrap(), gt);
        let all = corrupt_labels(&gt, 1, 1000, 1.0).unwrap();
        assert!(all.values().iter().zip(gt.values()).all(|(a, b)| a != b));
        assert!(corrupt_labels(&gt, 1, 3, 1.5).is_err());
    }

    #[test]
    fn corruption_stays_in_band_with_binomial_rate() {
        let spec = SceneSpec::default();
        let (band, rate) = (2, 0.3);
        let (mut in_band, mut flipped) = (0usize, 0usize);
        for seed in 0..40 {
            let (_, gt) = generate_scene(seed, &spec).unwrap();
            let noisy = corrupt_labels(&gt, seed + 100, band, rate).unwrap();
            let dist = boundary_distance(&gt);
            for ((a, b), d) in gt.values().iter().zip(noisy.values()).zip(&dist) {
                let inside = matches!(d, Some(d) if *d < band);
                if inside {
                    in_band += 1;
                    flipped += usize::from(a != b);
                } else {
                    assert_eq!(a, b);
                }
            }
        }
        let n = in_band as f64;
        let sd = (n * rate * (1.0 - rate)).sqrt();
        assert!((flipped as f64 - n * rate).abs() <= 3.0 * sd, "{flipped} of {in_band}");
    }

    #[test]
    fn boundary_distance_on_a_stripe() {
        // columns: 0 0 1 1 1 1
        let gt = LabelField::new(1, 6, 2, vec![0, 0, 1, 1, 1, 1]).unwrap();
        let d: Vec<_> = boundary_distance(&gt).into_iter().map(Option::unwrap).collect();
        assert_eq!(d, vec![1, 0, 0, 1, 2, 3]);
        let flat = LabelField::new(2, 2, 2, vec![1; 4]).unwrap();
        assert!(boundary_distance(&flat).iter().all(Option::is_none));
    }

    #[test]
    fn benchmark_splits_and_quantization() {
        let spec = BenchmarkSpec { n_source_train: 3, n_target_train: 2, n_target_test: 2, ..BenchmarkSpec::default() };
        let b = Benchmark::generate(1, &spec).unwrap();
        assert_eq!(b, Benchmark::generate(1, &spec).unwrap());
        assert_eq!((b.source_train.len(), b.target_train.len(), b.target_test.len()), (3, 2, 2));
        for s in &b.target_test.samples {
            for &v in s.image.values() {
                assert_eq!(quantize(v) as f64 / 65535.0, v);
            }
        }
        assert_ne!(b.target_train.samples[0].label, b.target_test.samples[0].label);
    }
}
