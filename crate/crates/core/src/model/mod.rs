//! The toy segmentation network.
//!
//! `conv3x3(C_in -> 16) -> ReLU -> dropout -> conv3x3(16 -> 16) -> ReLU ->
//! dropout -> conv1x1(16 -> K_out) -> sigmoid`, same padding, stride 1. All
//! maps stay at full resolution, so the post-conv2 activations serve directly
//! as per-pixel features.
//!
//! Convolution weights are stored `[out, kh, kw, in]`; head weights
//! `[out, in]`.

mod checkpoint;
mod forward;
mod optim;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use forward::{backprop, forward, mc_forward, ForwardMode, ForwardTrace};
pub use optim::{adam_step, ema_update, AdamConfig, AdamState};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// Channels of both hidden layers, and the feature depth.
pub const HIDDEN: usize = 16;

/// Architecture descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub c_in: usize,
    pub k_out: usize,
}

impl Arch {
    pub fn new(c_in: usize, k_out: usize) -> Result<Self> {
        if c_in == 0 || k_out == 0 {
            return Err(Error::InvalidParameter(format!(
                "architecture needs c_in, k_out >= 1 (got {c_in}, {k_out})"
            )));
        }
        Ok(Self { c_in, k_out })
    }

    /// Binary segmentation on single-channel images.
    pub fn binary() -> Self {
        Self { c_in: 1, k_out: 1 }
    }

    /// `(name, shape)` of every tensor, in canonical order.
    pub fn tensor_shapes(&self) -> [(&'static str, Vec<usize>); 6] {
        [
            ("conv1.weight", vec![HIDDEN, 3, 3, self.c_in]),
            ("conv1.bias", vec![HIDDEN]),
            ("conv2.weight", vec![HIDDEN, 3, 3, HIDDEN]),
            ("conv2.bias", vec![HIDDEN]),
            ("head.weight", vec![self.k_out, HIDDEN]),
            ("head.bias", vec![self.k_out]),
        ]
    }
}

/// Parameters (or gradients, or optimizer moments) of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(arch: Arch) -> Self {
        let n = |shape: &[usize]| shape.iter().product::<usize>();
        let s = arch.tensor_shapes();
        Self {
            arch,
            conv1_w: vec![0.0; n(&s[0].1)],
            conv1_b: vec![0.0; n(&s[1].1)],
            conv2_w: vec![0.0; n(&s[2].1)],
            conv2_b: vec![0.0; n(&s[3].1)],
            head_w: vec![0.0; n(&s[4].1)],
            head_b: vec![0.0; n(&s[5].1)],
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b, &self.head_w, &self.head_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    /// Builds from tensors in canonical order, checking shapes and finiteness.
    pub fn from_tensors(arch: Arch, tensors: Vec<Vec<f64>>) -> Result<Self> {
        let mut out = Self::zeros(arch);
        if tensors.len() != 6 {
            return Err(Error::ShapeMismatch(format!("expected 6 tensors, got {}", tensors.len())));
        }
        for ((slot, t), (name, _)) in out.tensors_mut().into_iter().zip(tensors).zip(arch.tensor_shapes()) {
            if slot.len() != t.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {} values, got {}",
                    slot.len(),
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!("{name} has non-finite values")));
            }
            *slot = t;
        }
        Ok(out)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    /// Mutable reference to the `i`-th value of the flattened view.
    pub fn flat_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if i < t.len() {
                return &mut t[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range");
    }

    pub(crate) fn check_same_arch(&self, other: &ModelParams) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.arch, other.arch)));
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        self.check_same_arch(other)?;
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }
}

/// He-normal weights (variance `2 / fan_in`) and zero biases.
pub fn init_params(seed: u64, c_in: usize, k_out: usize) -> Result<ModelParams> {
    let arch = Arch::new(c_in, k_out)?;
    let mut p = ModelParams::zeros(arch);
    let fans = [9 * c_in, 9 * HIDDEN, HIDDEN];
    let weights = [&mut p.conv1_w, &mut p.conv2_w, &mut p.head_w];
    for (idx, (w, fan_in)) in weights.into_iter().zip(fans).enumerate() {
        let std = (2.0 / fan_in as f64).sqrt();
        let mut r = rng::stream(seed, "init", idx as u64, 0);
        for v in w.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut r);
            *v = z * std;
        }
    }
    Ok(p)
}
