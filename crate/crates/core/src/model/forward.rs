use rand::Rng;

use super::{Arch, Gradients, ModelParams, HIDDEN};
use crate::confidence::McSamples;
use crate::field::{FeatureField, Image, ProbField};
use crate::{rng, Error, Result};

/// Dropout behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardMode {
    /// Dropout is the identity.
    Deterministic,
    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// `1 / (1 - rate)`. Masks are drawn from streams keyed by `seed`.
    Stochastic { seed: u64, rate: f64 },
}

/// Everything the backward pass needs, plus the outputs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub arch: Arch,
    pub height: usize,
    pub width: usize,
    pub input: Vec<f64>,
    /// conv1 pre-activation.
    pub a1: Vec<f64>,
    /// Post-ReLU, post-dropout layer-1 output.
    pub d1: Vec<f64>,
    /// Layer-1 dropout scale per unit; `None` in deterministic mode.
    pub mask1: Option<Vec<f64>>,
    /// conv2 pre-activation.
    pub a2: Vec<f64>,
    /// Post-ReLU layer-2 output (the features).
    pub h2: Vec<f64>,
    /// Post-dropout layer-2 output fed to the head.
    pub d2: Vec<f64>,
    pub mask2: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    /// Foreground probability map; only defined for a single output channel.
    pub fn prob_field(&self) -> Result<ProbField> {
        if self.arch.k_out != 1 {
            return Err(Error::ShapeMismatch(format!(
                "probability field needs k_out = 1, model has {}",
                self.arch.k_out
            )));
        }
        ProbField::new(self.height, self.width, self.probs.clone())
    }

    /// Post-conv2 activations as a depth-16 feature field.
    pub fn features(&self) -> Result<FeatureField> {
        FeatureField::new(self.height, self.width, HIDDEN, self.h2.clone())
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// 3x3 same-padded convolution, weights `[out, 3, 3, in]`, layout HWC.
fn conv3x3(input: &[f64], h: usize, w: usize, cin: usize, weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let cout = bias.len();
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
            o.copy_from_slice(bias);
            for ky in 0..3 {
                let yy = y + ky;
                if yy < 1 || yy > h {
                    continue;
                }
                let yy = yy - 1;
                for kx in 0..3 {
                    let xx = x + kx;
                    if xx < 1 || xx > w {
                        continue;
                    }
                    let xx = xx - 1;
                    let inp = &input[(yy * w + xx) * cin..(yy * w + xx + 1) * cin];
                    for (co, acc) in o.iter_mut().enumerate() {
                        let base = ((co * 3 + ky) * 3 + kx) * cin;
                        let row = &weight[base..base + cin];
                        *acc += row.iter().zip(inp).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients of [`conv3x3`] and, when `d_input` is
/// given, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    weight: &[f64],
    d_out: &[f64],
    cout: usize,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    for y in 0..h {
        for x in 0..w {
            let g = &d_out[(y * w + x) * cout..(y * w + x + 1) * cout];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (db, gv) in d_bias.iter_mut().zip(g) {
                *db += gv;
            }
            for ky in 0..3 {
                let yy = y + ky;
                if yy < 1 || yy > h {
                    continue;
                }
                let yy = yy - 1;
                for kx in 0..3 {
                    let xx = x + kx;
                    if xx < 1 || xx > w {
                        continue;
                    }
                    let xx = xx - 1;
                    let pix = (yy * w + xx) * cin;
                    let inp = &input[pix..pix + cin];
                    for (co, &gv) in g.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let base = ((co * 3 + ky) * 3 + kx) * cin;
                        for (dw, iv) in d_weight[base..base + cin].iter_mut().zip(inp) {
                            *dw += gv * iv;
                        }
                        if let Some(di) = d_input.as_deref_mut() {
                            for (d, wv) in di[pix..pix + cin].iter_mut().zip(&weight[base..base + cin]) {
                                *d += gv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn dropout_mask(seed: u64, layer: u64, len: usize, rate: f64) -> Vec<f64> {
    let mut r = rng::stream(seed, "dropout", layer, 0);
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if r.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

fn check_rate(mode: ForwardMode) -> Result<()> {
    if let ForwardMode::Stochastic { rate, .. } = mode {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter(format!("dropout rate {rate} outside [0, 1)")));
        }
    }
    Ok(())
}

pub fn forward(params: &ModelParams, img: &Image, mode: ForwardMode) -> Result<ForwardTrace> {
    let arch = params.arch();
    if img.channels() != arch.c_in {
        return Err(Error::ShapeMismatch(format!(
            "image has {} channels, model expects {}",
            img.channels(),
            arch.c_in
        )));
    }
    check_rate(mode)?;
    let (h, w) = img.dims();
    let n = h * w;
    let input = img.values().to_vec();

    let mut a1 = vec![0.0; n * HIDDEN];
    conv3x3(&input, h, w, arch.c_in, &params.conv1_w, &params.conv1_b, &mut a1);
    let mut d1: Vec<f64> = a1.iter().map(|&v| v.max(0.0)).collect();
    let mask1 = match mode {
        ForwardMode::Deterministic => None,
        ForwardMode::Stochastic { seed, rate } => {
            let m = dropout_mask(seed, 1, d1.len(), rate);
            d1.iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
            Some(m)
        }
    };

    let mut a2 = vec![0.0; n * HIDDEN];
    conv3x3(&d1, h, w, HIDDEN, &params.conv2_w, &params.conv2_b, &mut a2);
    let h2: Vec<f64> = a2.iter().map(|&v| v.max(0.0)).collect();
    let (d2, mask2) = match mode {
        ForwardMode::Deterministic => (h2.clone(), None),
        ForwardMode::Stochastic { seed, rate } => {
            let m = dropout_mask(seed, 2, h2.len(), rate);
            (h2.iter().zip(&m).map(|(v, s)| v * s).collect(), Some(m))
        }
    };

    let k = arch.k_out;
    let mut logits = vec![0.0; n * k];
    for i in 0..n {
        let feat = &d2[i * HIDDEN..(i + 1) * HIDDEN];
        for c in 0..k {
            let row = &params.head_w[c * HIDDEN..(c + 1) * HIDDEN];
            logits[i * k + c] = params.head_b[c] + row.iter().zip(feat).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let probs = logits.iter().map(|&z| sigmoid(z)).collect();

    Ok(ForwardTrace {
        arch,
        height: h,
        width: w,
        input,
        a1,
        d1,
        mask1,
        a2,
        h2,
        d2,
        mask2,
        logits,
        probs,
    })
}

/// `n` stochastic passes; pass `i` uses the seed derived from `(seed, i)`.
pub fn mc_forward(params: &ModelParams, img: &Image, n: usize, seed: u64, rate: f64) -> Result<McSamples> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 MC passes, got {n}")));
    }
    let samples = (0..n)
        .map(|i| {
            let mode = ForwardMode::Stochastic { seed: rng::derive(seed, "mc-pass", i as u64, 0), rate };
            forward(params, img, mode)?.prob_field()
        })
        .collect::<Result<Vec<_>>>()?;
    McSamples::new(samples)
}

/// Gradients of `sum(logits * d_logits)` with respect to every parameter,
/// reusing the dropout masks recorded in `trace`.
pub fn backprop(params: &ModelParams, trace: &ForwardTrace, d_logits: &[f64]) -> Result<Gradients> {
    let arch = params.arch();
    if arch != trace.arch {
        return Err(Error::ShapeMismatch("trace produced by a different architecture".into()));
    }
    let (h, w) = (trace.height, trace.width);
    let n = h * w;
    let k = arch.k_out;
    if d_logits.len() != n * k {
        return Err(Error::ShapeMismatch(format!(
            "d_logits has {} values, logits have {}",
            d_logits.len(),
            n * k
        )));
    }
    let mut g = Gradients::zeros(arch);

    let mut d_a2 = vec![0.0; n * HIDDEN];
    for i in 0..n {
        let gl = &d_logits[i * k..(i + 1) * k];
        let feat = &trace.d2[i * HIDDEN..(i + 1) * HIDDEN];
        let da = &mut d_a2[i * HIDDEN..(i + 1) * HIDDEN];
        for (c, &gv) in gl.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            g.head_b[c] += gv;
            let row = &params.head_w[c * HIDDEN..(c + 1) * HIDDEN];
            for j in 0..HIDDEN {
                g.head_w[c * HIDDEN + j] += gv * feat[j];
                da[j] += gv * row[j];
            }
        }
    }
    // through dropout 2 and ReLU 2
    for (idx, v) in d_a2.iter_mut().enumerate() {
        if let Some(m) = &trace.mask2 {
            *v *= m[idx];
        }
        if trace.a2[idx] <= 0.0 {
            *v = 0.0;
        }
    }

    let mut d_d1 = vec![0.0; n * HIDDEN];
    conv3x3_backward(
        &trace.d1,
        h,
        w,
        HIDDEN,
        &params.conv2_w,
        &d_a2,
        HIDDEN,
        &mut g.conv2_w,
        &mut g.conv2_b,
        Some(&mut d_d1),
    );
    for (idx, v) in d_d1.iter_mut().enumerate() {
        if let Some(m) = &trace.mask1 {
            *v *= m[idx];
        }
        if trace.a1[idx] <= 0.0 {
            *v = 0.0;
        }
    }
    conv3x3_backward(
        &trace.input,
        h,
        w,
        arch.c_in,
        &params.conv1_w,
        &d_d1,
        HIDDEN,
        &mut g.conv1_w,
        &mut g.conv1_b,
        None,
    );
    Ok(g)
}
