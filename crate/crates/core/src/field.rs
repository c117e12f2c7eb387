//! Dense 2-D fields.
//!
//! Every field stores its pixels row-major (y outer, x inner). Multi-channel
//! fields ([`FeatureField`], [`Image`]) interleave channels per pixel, so the
//! value of channel `c` at `(y, x)` lives at `(y * width + x) * depth + c`.
//! Fields are immutable once constructed.

use crate::{Error, Result};

fn check_dims(height: usize, width: usize, len: usize, per_pixel: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::ShapeMismatch(format!(
            "degenerate field {height}x{width}"
        )));
    }
    if height * width * per_pixel != len {
        return Err(Error::ShapeMismatch(format!(
            "{height}x{width}x{per_pixel} field needs {} values, got {len}",
            height * width * per_pixel
        )));
    }
    Ok(())
}

macro_rules! real_field {
    ($(#[$doc:meta])* $name:ident, $what:literal, $valid:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            height: usize,
            width: usize,
            values: Vec<f64>,
        }

        impl $name {
            pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
                check_dims(height, width, values.len(), 1)?;
                let valid: fn(f64) -> bool = $valid;
                if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !valid(**v)) {
                    return Err(Error::InvalidValue(format!(
                        concat!($what, " at pixel {} is {}"),
                        i, v
                    )));
                }
                Ok(Self { height, width, values })
            }

            pub fn from_fn(
                height: usize,
                width: usize,
                mut f: impl FnMut(usize, usize) -> f64,
            ) -> Result<Self> {
                let mut values = Vec::with_capacity(height * width);
                for y in 0..height {
                    for x in 0..width {
                        values.push(f(y, x));
                    }
                }
                Self::new(height, width, values)
            }

            pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
                Self::new(height, width, vec![value; height * width])
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn dims(&self) -> (usize, usize) {
                (self.height, self.width)
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn get(&self, y: usize, x: usize) -> f64 {
                self.values[y * self.width + x]
            }

            pub fn into_values(self) -> Vec<f64> {
                self.values
            }
        }
    };
}

real_field!(
    /// Per-pixel probability in `[0, 1]`.
    ProbField,
    "probability",
    |v| v.is_finite() && (0.0..=1.0).contains(&v)
);

real_field!(
    /// Per-pixel dropout standard deviation, non-negative.
    UncertField,
    "uncertainty",
    |v| v.is_finite() && v >= 0.0
);

real_field!(
    /// Per-pixel confidence bound in `[0, 1]`.
    ConfidenceField,
    "confidence",
    |v| v.is_finite() && (0.0..=1.0).contains(&v)
);

/// Per-pixel class index in `0..classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelField {
    height: usize,
    width: usize,
    classes: usize,
    values: Vec<u32>,
}

impl LabelField {
    pub fn new(height: usize, width: usize, classes: usize, values: Vec<u32>) -> Result<Self> {
        check_dims(height, width, values.len(), 1)?;
        if classes == 0 {
            return Err(Error::InvalidParameter("label field needs at least one class".into()));
        }
        if let Some(v) = values.iter().find(|v| **v as usize >= classes) {
            return Err(Error::InvalidValue(format!("label {v} not below {classes} classes")));
        }
        Ok(Self { height, width, classes, values })
    }

    /// Binary label field from a mask (`true` becomes class 1).
    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            height: mask.height,
            width: mask.width,
            classes: 2,
            values: mask.values.iter().map(|&b| u32::from(b)).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.values[y * self.width + x]
    }

    /// Pixels equal to `class`.
    pub fn class_mask(&self, class: u32) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| v == class).collect(),
        }
    }
}

/// Per-pixel keep bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        check_dims(height, width, values.len(), 1)?;
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }

    /// Fraction of set pixels.
    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.len() as f64
    }

    pub fn not(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|b| !b).collect(),
        }
    }
}

/// Per-pixel feature vectors of dimension `depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    height: usize,
    width: usize,
    depth: usize,
    values: Vec<f64>,
}

impl FeatureField {
    pub fn new(height: usize, width: usize, depth: usize, values: Vec<f64>) -> Result<Self> {
        if depth == 0 {
            return Err(Error::ShapeMismatch("feature depth must be positive".into()));
        }
        check_dims(height, width, values.len(), depth)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite feature".into()));
        }
        Ok(Self { height, width, depth, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Feature vector of pixel index `i` (row-major).
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.depth..(i + 1) * self.depth]
    }

    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        self.pixel(y * self.width + x)
    }
}

/// Multi-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Image {
    /// Builds an image, clipping every value into `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, mut values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::ShapeMismatch("image needs at least one channel".into()));
        }
        check_dims(height, width, values.len(), channels)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite image value".into()));
        }
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    /// Applies `f` to every value and re-clips.
    pub fn map(&self, mut f: impl FnMut(usize, f64) -> f64) -> Result<Image> {
        let values = self.values.iter().enumerate().map(|(i, &v)| f(i, v)).collect();
        Image::new(self.height, self.width, self.channels, values)
    }
}

/// Hard labels `1[p >= threshold]`.
pub fn binarize(p: &ProbField, threshold: f64) -> LabelField {
    LabelField {
        height: p.height,
        width: p.width,
        classes: 2,
        values: p.values.iter().map(|&v| u32::from(v >= threshold)).collect(),
    }
}

/// Align-corners bilinear resampling to `height x width`.
pub fn interpolate_bilinear(f: &FeatureField, height: usize, width: usize) -> Result<FeatureField> {
    if f.height == 0 || f.width == 0 {
        return Err(Error::ShapeMismatch("cannot resample an empty field".into()));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter(format!("target size {height}x{width}")));
    }
    if (height, width) == (f.height, f.width) {
        return Ok(f.clone());
    }
    let src = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let d = f.depth;
    let mut values = Vec::with_capacity(height * width * d);
    for y in 0..height {
        let (y0, y1, ty) = src(y, height, f.height);
        for x in 0..width {
            let (x0, x1, tx) = src(x, width, f.width);
            let (a, b, c, e) = (f.at(y0, x0), f.at(y0, x1), f.at(y1, x0), f.at(y1, x1));
            for k in 0..d {
                let top = a[k] + (b[k] - a[k]) * tx;
                let bottom = c[k] + (e[k] - c[k]) * tx;
                values.push(top + (bottom - top) * ty);
            }
        }
    }
    FeatureField::new(height, width, d, values)
}
