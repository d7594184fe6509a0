//! Parameter layout, forward pass and hand-written backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::NnError;
use crate::codec::{InputTensor, PreprocessConfig};
use crate::dataset::Label;

/// Probabilities are kept this far away from 0 and 1.
const PROB_FLOOR: f64 = 1e-12;

/// Clamp applied inside [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// A named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Layout of the flat parameter vector:
///
/// | group              | shape                          |
/// |--------------------|--------------------------------|
/// | `stem.{i}.weight`  | `[out, in, kernel, kernel]`    |
/// | `stem.{i}.bias`    | `[out]`                        |
/// | `head.dense.weight`| `[hidden, last_stem_channels]` |
/// | `head.dense.bias`  | `[hidden]`                     |
/// | `head.out.weight`  | `[1, hidden]`                  |
/// | `head.out.bias`    | `[1]`                          |
///
/// Groups are stored back to back in this order, row-major within a group.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<ParamGroup> {
    let mut groups = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let g = ParamGroup { name, shape, offset };
        offset += g.len();
        groups.push(g);
    };
    let mut in_ch = cfg.input_channels;
    for (i, c) in cfg.stem.iter().enumerate() {
        push(
            format!("stem.{i}.weight"),
            vec![c.out_channels, in_ch, c.kernel, c.kernel],
        );
        push(format!("stem.{i}.bias"), vec![c.out_channels]);
        in_ch = c.out_channels;
    }
    push("head.dense.weight".into(), vec![cfg.hidden_units, in_ch]);
    push("head.dense.bias".into(), vec![cfg.hidden_units]);
    push("head.out.weight".into(), vec![1, cfg.hidden_units]);
    push("head.out.bias".into(), vec![1]);
    groups
}

pub fn parameter_count(cfg: &ModelConfig) -> usize {
    parameter_layout(cfg).iter().map(ParamGroup::len).sum()
}

/// Dropout handling for one forward/backward call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// No dropout; deterministic and seed-independent.
    Eval,
    /// Inverted dropout with masks drawn from this seed, one mask per batch position.
    Train { seed: u64 },
}

/// Classifier parameters plus training bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub parameters: Vec<f64>,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    /// Preprocessing the model was trained with, when known.
    pub preprocess: Option<PreprocessConfig>,
    /// Frozen per-channel standardization applied before the first convolution.
    pub input_norm: InputNorm,
}

/// Per-channel `(x − mean) / std`, fitted once on the training inputs and
/// never updated by the optimizer. Zero padding therefore pads with the
/// channel mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Mean and population standard deviation of every channel over all
    /// pixels of `inputs`. Constant channels get a unit std.
    pub fn fit(inputs: &[InputTensor]) -> Result<Self, NnError> {
        let first = inputs
            .first()
            .ok_or(NnError::EmptySplit(crate::dataset::Split::Train))?;
        let c = first.channels();
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for x in inputs {
            if x.channels() != c {
                return Err(NnError::LengthMismatch {
                    expected: c,
                    got: x.channels(),
                });
            }
            for px in x.data().chunks_exact(c) {
                sum.iter_mut().zip(px).for_each(|(s, v)| *s += v);
            }
            count += x.width() * x.height();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; c];
        for x in inputs {
            for px in x.data().chunks_exact(c) {
                for ((s, v), m) in sq.iter_mut().zip(px).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn validate(&self, channels: usize) -> Result<(), NnError> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(NnError::InvalidConfig(format!(
                "input normalization has {} means and {} stds for {channels} channels",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) || self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(NnError::InvalidConfig(
                "input normalization must be finite with positive stds".into(),
            ));
        }
        Ok(())
    }
}

/// Dense matrix product `c = alpha * a·b + beta * c` on row-major buffers,
/// with optional transposes given through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_trans: bool, b: &[f64], b_trans: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one convolution.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    in_ch: usize,
    in_size: usize,
    out_ch: usize,
    out_size: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_size * self.out_size
    }

    /// Unfolds a CHW input into a `(in_ch·k·k) × (out_pixels)` matrix.
    fn im2col(&self, input: &[f64], col: &mut [f64]) {
        let (k, s, p, n) = (self.kernel, self.stride, self.pad as isize, self.in_size as isize);
        let op = self.out_pixels();
        for c in 0..self.in_ch {
            let plane = &input[c * self.in_size * self.in_size..(c + 1) * self.in_size * self.in_size];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * op..((c * k + ky) * k + kx + 1) * op];
                    for oy in 0..self.out_size {
                        let iy = (oy * s + ky) as isize - p;
                        for ox in 0..self.out_size {
                            let ix = (ox * s + kx) as isize - p;
                            row[oy * self.out_size + ox] = if iy >= 0 && iy < n && ix >= 0 && ix < n {
                                plane[(iy * n + ix) as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters column gradients back onto the input.
    fn col2im(&self, col: &[f64], grad_input: &mut [f64]) {
        grad_input.iter_mut().for_each(|v| *v = 0.0);
        let (k, s, p, n) = (self.kernel, self.stride, self.pad as isize, self.in_size as isize);
        let op = self.out_pixels();
        for c in 0..self.in_ch {
            let plane = &mut grad_input[c * self.in_size * self.in_size..(c + 1) * self.in_size * self.in_size];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * op..((c * k + ky) * k + kx + 1) * op];
                    for oy in 0..self.out_size {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= n {
                            continue;
                        }
                        for ox in 0..self.out_size {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < n {
                                plane[(iy * n + ix) as usize] += row[oy * self.out_size + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Intermediate values kept for the backward pass of one sample.
struct Trace {
    cols: Vec<Vec<f64>>,
    /// Post-ReLU activations of every stem block (CHW).
    acts: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    hidden_pre: Vec<f64>,
    /// Hidden activations after ReLU and dropout scaling.
    hidden: Vec<f64>,
    /// Per-unit dropout multiplier (0 or 1/keep; 1 in eval mode).
    mask: Vec<f64>,
    logit: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1 − ε]`.
pub fn bce_loss(probs: &[f64], labels: &[Label]) -> Result<f64, NnError> {
    if probs.len() != labels.len() {
        return Err(NnError::LengthMismatch {
            expected: probs.len(),
            got: labels.len(),
        });
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            let y = y.as_f64();
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / probs.len() as f64)
}

impl TrainedModel {
    /// He-uniform weights (`U(±sqrt(6 / fan_in))`), zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let layout = parameter_layout(&config);
        let mut parameters = vec![0.0; layout.iter().map(ParamGroup::len).sum()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in layout.iter().filter(|g| g.name.ends_with(".weight")) {
            let fan_in: usize = g.shape[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            for p in &mut parameters[g.range()] {
                *p = rng.random_range(-limit..limit);
            }
        }
        let input_norm = InputNorm::identity(config.input_channels);
        Ok(Self {
            config,
            parameters,
            epochs_run: 0,
            best_val_loss: f64::INFINITY,
            preprocess: None,
            input_norm,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let n = parameter_count(&config);
        let input_norm = InputNorm::identity(config.input_channels);
        Ok(Self {
            config,
            parameters: vec![0.0; n],
            epochs_run: 0,
            best_val_loss: f64::INFINITY,
            preprocess: None,
            input_norm,
        })
    }

    pub fn from_parameters(config: ModelConfig, parameters: Vec<f64>) -> Result<Self, NnError> {
        config.validate()?;
        let expected = parameter_count(&config);
        if parameters.len() != expected {
            return Err(NnError::LengthMismatch {
                expected,
                got: parameters.len(),
            });
        }
        let input_norm = InputNorm::identity(config.input_channels);
        Ok(Self {
            config,
            parameters,
            epochs_run: 0,
            best_val_loss: f64::INFINITY,
            preprocess: None,
            input_norm,
        })
    }

    pub fn layout(&self) -> Vec<ParamGroup> {
        parameter_layout(&self.config)
    }

    fn geometries(&self) -> Vec<ConvGeom> {
        let sizes = self.config.spatial_sizes();
        let mut in_ch = self.config.input_channels;
        self.config
            .stem
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let g = ConvGeom {
                    in_ch,
                    in_size: sizes[i],
                    out_ch: c.out_channels,
                    out_size: sizes[i + 1],
                    kernel: c.kernel,
                    stride: c.stride,
                    pad: c.padding(),
                };
                in_ch = c.out_channels;
                g
            })
            .collect()
    }

    fn check_input(&self, x: &InputTensor) -> Result<(), NnError> {
        let c = &self.config;
        if x.width() != c.input_size || x.height() != c.input_size || x.channels() != c.input_channels {
            return Err(NnError::ShapeMismatch {
                expected: (c.input_size, c.input_size, c.input_channels),
                got: (x.width(), x.height(), x.channels()),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[InputTensor]) -> Result<(), NnError> {
        batch.iter().try_for_each(|x| self.check_input(x))
    }

    /// HWC interleaved → standardized CHW planar.
    fn to_planar(&self, x: &InputTensor) -> Vec<f64> {
        let (w, h, c) = (x.width(), x.height(), x.channels());
        let data = x.data();
        let norm = &self.input_norm;
        let mut out = vec![0.0; w * h * c];
        for p in 0..w * h {
            for ch in 0..c {
                out[ch * w * h + p] = (data[p * c + ch] - norm.mean[ch]) / norm.std[ch];
            }
        }
        out
    }

    /// Per-position dropout masks for a batch.
    fn masks(&self, mode: Mode, batch_len: usize) -> Vec<Vec<f64>> {
        let hidden = self.config.hidden_units;
        match mode {
            Mode::Eval => vec![vec![1.0; hidden]; batch_len],
            Mode::Train { seed } => {
                let keep = self.config.keep_probability();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..batch_len)
                    .map(|_| {
                        (0..hidden)
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                    .collect()
            }
        }
    }

    fn forward_one(&self, geoms: &[ConvGeom], x: &InputTensor, mask: Vec<f64>) -> Trace {
        let layout = self.layout();
        let p = &self.parameters;
        let mut act = self.to_planar(x);
        let mut cols = Vec::with_capacity(geoms.len());
        let mut acts = Vec::with_capacity(geoms.len());
        for (i, g) in geoms.iter().enumerate() {
            let w = &p[layout[2 * i].range()];
            let b = &p[layout[2 * i + 1].range()];
            let op = g.out_pixels();
            let mut col = vec![0.0; g.patch_len() * op];
            g.im2col(&act, &mut col);
            let mut out = vec![0.0; g.out_ch * op];
            for (o, bias) in b.iter().enumerate() {
                out[o * op..(o + 1) * op].iter_mut().for_each(|v| *v = *bias);
            }
            gemm(g.out_ch, g.patch_len(), op, w, false, &col, false, 1.0, &mut out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            cols.push(col);
            acts.push(out.clone());
            act = out;
        }

        let last = geoms.last().expect("non-empty stem");
        let op = last.out_pixels();
        let pooled: Vec<f64> = act.chunks(op).map(|ch| ch.iter().sum::<f64>() / op as f64).collect();

        let n = self.stem_len();
        let wd = &p[layout[2 * n].range()];
        let bd = &p[layout[2 * n + 1].range()];
        let wo = &p[layout[2 * n + 2].range()];
        let bo = p[layout[2 * n + 3].offset];
        let hidden_units = self.config.hidden_units;
        let mut hidden_pre = bd.to_vec();
        gemm(
            hidden_units,
            pooled.len(),
            1,
            wd,
            false,
            &pooled,
            false,
            1.0,
            &mut hidden_pre,
        );
        let hidden: Vec<f64> = hidden_pre.iter().zip(&mask).map(|(&h, &m)| h.max(0.0) * m).collect();
        let logit = bo + wo.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
        Trace {
            cols,
            acts,
            pooled,
            hidden_pre,
            hidden,
            mask,
            logit,
        }
    }

    fn stem_len(&self) -> usize {
        self.config.stem.len()
    }

    /// Pre-sigmoid outputs for a batch.
    pub fn forward_logits(&self, batch: &[InputTensor], mode: Mode) -> Result<Vec<f64>, NnError> {
        self.check_batch(batch)?;
        let geoms = self.geometries();
        let masks = self.masks(mode, batch.len());
        Ok(batch
            .iter()
            .zip(masks)
            .map(|(x, m)| self.forward_one(&geoms, x, m).logit)
            .collect())
    }

    /// On/off state of every ReLU unit (stem then head) for every sample.
    /// Comparing patterns before and after a perturbation tells whether the
    /// loss stayed on one smooth piece.
    pub fn relu_pattern(&self, batch: &[InputTensor], mode: Mode) -> Result<Vec<bool>, NnError> {
        self.check_batch(batch)?;
        let geoms = self.geometries();
        let masks = self.masks(mode, batch.len());
        let mut out = Vec::new();
        for (x, m) in batch.iter().zip(masks) {
            let t = self.forward_one(&geoms, x, m);
            out.extend(t.acts.iter().flatten().map(|&a| a > 0.0));
            out.extend(t.hidden_pre.iter().map(|&h| h > 0.0));
        }
        Ok(out)
    }

    /// Tampered-class probabilities for a batch.
    pub fn forward(&self, batch: &[InputTensor], mode: Mode) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_logits(batch, mode)?.into_iter().map(probability).collect())
    }

    /// Mean BCE of a batch under `mode`.
    pub fn loss(&self, batch: &[InputTensor], labels: &[Label], mode: Mode) -> Result<f64, NnError> {
        if batch.len() != labels.len() {
            return Err(NnError::LengthMismatch {
                expected: batch.len(),
                got: labels.len(),
            });
        }
        bce_loss(&self.forward(batch, mode)?, labels)
    }

    /// Loss and its exact gradient with respect to every parameter, with the
    /// dropout masks fixed by `mode`. Gradient layout matches [`parameter_layout`].
    pub fn backward(&self, batch: &[InputTensor], labels: &[Label], mode: Mode) -> Result<(f64, Vec<f64>), NnError> {
        if batch.len() != labels.len() {
            return Err(NnError::LengthMismatch {
                expected: batch.len(),
                got: labels.len(),
            });
        }
        self.check_batch(batch)?;
        let mut grad = vec![0.0; self.parameters.len()];
        if batch.is_empty() {
            return Ok((0.0, grad));
        }
        let geoms = self.geometries();
        let layout = self.layout();
        let masks = self.masks(mode, batch.len());
        let scale = 1.0 / batch.len() as f64;
        let mut probs = Vec::with_capacity(batch.len());
        for ((x, &y), mask) in batch.iter().zip(labels).zip(masks) {
            let trace = self.forward_one(&geoms, x, mask);
            let p = probability(trace.logit);
            probs.push(p);
            self.accumulate(&geoms, &layout, &trace, (p - y.as_f64()) * scale, &mut grad);
        }
        Ok((bce_loss(&probs, labels)?, grad))
    }

    fn accumulate(&self, geoms: &[ConvGeom], layout: &[ParamGroup], t: &Trace, d_logit: f64, grad: &mut [f64]) {
        let p = &self.parameters;
        let n = self.stem_len();
        let hidden_units = self.config.hidden_units;
        let (gd_w, gd_b, go_w, go_b) = (
            &layout[2 * n],
            &layout[2 * n + 1],
            &layout[2 * n + 2],
            &layout[2 * n + 3],
        );

        grad[go_b.offset] += d_logit;
        for (g, h) in grad[go_w.range()].iter_mut().zip(&t.hidden) {
            *g += d_logit * h;
        }
        let wo = &p[go_w.range()];
        let d_hidden_pre: Vec<f64> = (0..hidden_units)
            .map(|j| {
                if t.hidden_pre[j] > 0.0 {
                    d_logit * wo[j] * t.mask[j]
                } else {
                    0.0
                }
            })
            .collect();
        for (g, d) in grad[gd_b.range()].iter_mut().zip(&d_hidden_pre) {
            *g += d;
        }
        let pooled_len = t.pooled.len();
        gemm(
            hidden_units,
            1,
            pooled_len,
            &d_hidden_pre,
            false,
            &t.pooled,
            false,
            1.0,
            &mut grad[gd_w.range()],
        );
        let mut d_pooled = vec![0.0; pooled_len];
        gemm(
            pooled_len,
            hidden_units,
            1,
            &p[gd_w.range()],
            true,
            &d_hidden_pre,
            false,
            0.0,
            &mut d_pooled,
        );

        let last = geoms.last().expect("non-empty stem");
        let op = last.out_pixels();
        let mut d_act: Vec<f64> = d_pooled
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d / op as f64, op))
            .collect();

        for i in (0..n).rev() {
            let g = &geoms[i];
            let op = g.out_pixels();
            // Through ReLU.
            for (d, a) in d_act.iter_mut().zip(&t.acts[i]) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let (w_group, b_group) = (&layout[2 * i], &layout[2 * i + 1]);
            for (o, gb) in grad[b_group.range()].iter_mut().enumerate() {
                *gb += d_act[o * op..(o + 1) * op].iter().sum::<f64>();
            }
            gemm(
                g.out_ch,
                op,
                g.patch_len(),
                &d_act,
                false,
                &t.cols[i],
                true,
                1.0,
                &mut grad[w_group.range()],
            );
            if i > 0 {
                let mut d_col = vec![0.0; g.patch_len() * op];
                gemm(
                    g.patch_len(),
                    g.out_ch,
                    op,
                    &p[w_group.range()],
                    true,
                    &d_act,
                    false,
                    0.0,
                    &mut d_col,
                );
                let mut d_in = vec![0.0; g.in_ch * g.in_size * g.in_size];
                g.col2im(&d_col, &mut d_in);
                d_act = d_in;
            }
        }
    }
}
