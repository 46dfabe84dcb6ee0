//! Tape-based reverse-mode autodiff over [`Tensor`] values.
//!
//! A forward pass records one [`Op`] per produced value; [`Tape::backward`]
//! walks the records in reverse and accumulates gradients. All primitives the
//! architecture needs live here: conv2d, maxpool, nearest upsampling, channel
//! concat, channel layer norm, batch norm, relu/gelu, 2-D dropout, residual
//! add, and the Huber loss head.

pub mod conv;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Handle to a value on the tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

/// Per-channel running statistics for batch norm; owned by the model, fed to
/// the tape on each forward.
#[derive(Clone, Debug)]
pub struct RunningStats<E: Element> {
    pub mean: Vec<E>,
    pub var: Vec<E>,
}

impl<E: Element> RunningStats<E> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![E::zero(); channels],
            var: vec![E::one(); channels],
        }
    }
}

enum Op<E: Element> {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        padding: usize,
        groups: usize,
    },
    MaxPool {
        input: usize,
        argmax: Vec<u32>,
    },
    Upsample {
        input: usize,
        factor: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    LayerNorm {
        input: usize,
        scale: usize,
        shift: usize,
        eps: E,
    },
    BatchNorm {
        input: usize,
        scale: usize,
        shift: usize,
        mean: Vec<E>,
        invstd: Vec<E>,
        train: bool,
    },
    Activation {
        input: usize,
        kind: Activation,
    },
    Dropout {
        input: usize,
        keep: Vec<E>,
    },
    Add {
        a: usize,
        b: usize,
    },
    Huber {
        pred: usize,
        target: Tensor<E>,
        delta: E,
    },
}

pub struct Tape<E: Element> {
    values: Vec<Tensor<E>>,
    ops: Vec<Op<E>>,
    macs: u64,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, var: Var) -> Option<&Tensor<E>> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<E>> {
        self.grads[var.0].take()
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            macs: 0,
        }
    }

    /// Multiply-add count accumulated by all forward ops so far, from the
    /// dimensions each kernel actually ran with.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, var: Var) -> &Tensor<E> {
        &self.values[var.0]
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<E>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let [_, c_in, h, w] = self.value(input).shape();
        let [c_out, cg, k, kw] = self.value(weight).shape();
        if stride < 1 || k < 1 {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                detail: format!("kernel {k} and stride {stride} must be >= 1"),
            });
        }
        if k != kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel must be square, got {k}x{kw}"),
            });
        }
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("channels in={c_in} out={c_out} not divisible by groups={groups}"),
            });
        }
        if cg != c_in / groups {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "weight expects {cg} input channels per group, input supplies {}",
                    c_in / groups
                ),
            });
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("spatial extent {h}x{w} (padding {padding}) smaller than kernel {k}"),
            });
        }
        if let Some(b) = bias {
            let blen = self.value(b).len();
            if blen != c_out {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("bias length {blen} != out channels {c_out}"),
                });
            }
        }
        let out = {
            let b = bias.map(|b| &self.values[b.0]);
            conv::forward(
                &self.values[input.0],
                &self.values[weight.0],
                b,
                stride,
                padding,
                groups,
            )
        };
        let [batch, _, ho, wo] = out.shape();
        let p = (ho * wo) as u64;
        self.macs += batch as u64 * groups as u64 * (c_out / groups) as u64 * (cg * k * k) as u64 * p;
        Ok(self.push(
            out,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
                stride,
                padding,
                groups,
            },
        ))
    }

    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let [batch, c, h, w] = self.value(input).shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::ShapeMismatch {
                op: "maxpool2d",
                detail: format!("spatial extents {h}x{w} must be even"),
            });
        }
        let x = &self.values[input.0];
        assert!(x.len() < u32::MAX as usize);
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Tensor::zeros([batch, c, ho, wo]);
        let mut argmax = vec![0u32; out.len()];
        let mut oi = 0;
        for n in 0..batch {
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = E::neg_infinity();
                        let mut best_idx = 0u32;
                        // first-in-scan-order tie break: strict improvement only
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                                let idx = ((n * c + ch) * h + iy) * w + ix;
                                let v = x.data()[idx];
                                if v > best {
                                    best = v;
                                    best_idx = idx as u32;
                                }
                            }
                        }
                        out.data_mut()[oi] = best;
                        argmax[oi] = best_idx;
                        oi += 1;
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::MaxPool {
                input: input.0,
                argmax,
            },
        ))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::InvalidArgument {
                op: "upsample_nearest",
                detail: "factor must be >= 1".into(),
            });
        }
        if factor == 1 {
            return Ok(input);
        }
        let [batch, c, h, w] = self.value(input).shape();
        let x = &self.values[input.0];
        let mut out = Tensor::zeros([batch, c, h * factor, w * factor]);
        let (ho, wo) = (h * factor, w * factor);
        for n in 0..batch {
            for ch in 0..c {
                for oy in 0..ho {
                    let src = &x.data()[((n * c + ch) * h + oy / factor) * w..][..w];
                    let dst = &mut out.data_mut()[((n * c + ch) * ho + oy) * wo..][..wo];
                    for ox in 0..wo {
                        dst[ox] = src[ox / factor];
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::Upsample {
                input: input.0,
                factor,
            },
        ))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.value(a).shape();
        let [nb, cb, hb, wb] = self.value(b).shape();
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                detail: format!(
                    "batch/spatial extents differ: {:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let mut out = Tensor::zeros([na, ca + cb, ha, wa]);
        let plane = ha * wa;
        for n in 0..na {
            let dst = &mut out.data_mut()[n * (ca + cb) * plane..];
            dst[..ca * plane]
                .copy_from_slice(&self.values[a.0].data()[n * ca * plane..(n + 1) * ca * plane]);
            dst[ca * plane..(ca + cb) * plane]
                .copy_from_slice(&self.values[b.0].data()[n * cb * plane..(n + 1) * cb * plane]);
        }
        Ok(self.push(out, Op::Concat { a: a.0, b: b.0 }))
    }

    pub fn layernorm_channels(&mut self, input: Var, scale: Var, shift: Var, eps: E) -> Result<Var> {
        if eps <= E::zero() {
            return Err(Error::InvalidArgument {
                op: "layernorm_channels",
                detail: "eps must be positive".into(),
            });
        }
        let [batch, c, h, w] = self.value(input).shape();
        for (name, v) in [("scale", scale), ("shift", shift)] {
            if self.value(v).len() != c {
                return Err(Error::ShapeMismatch {
                    op: "layernorm_channels",
                    detail: format!("{name} length {} != channels {c}", self.value(v).len()),
                });
            }
        }
        let x = &self.values[input.0];
        let sc = self.values[scale.0].data();
        let sh = self.values[shift.0].data();
        let mut out = Tensor::zeros([batch, c, h, w]);
        let plane = h * w;
        let cn = E::from_f64(c as f64);
        for n in 0..batch {
            for pos in 0..plane {
                let mut mean = E::zero();
                for ch in 0..c {
                    mean += x.data()[(n * c + ch) * plane + pos];
                }
                mean = mean / cn;
                let mut var = E::zero();
                for ch in 0..c {
                    let d = x.data()[(n * c + ch) * plane + pos] - mean;
                    var += d * d;
                }
                var = var / cn;
                let inv = (var + eps).sqrt().recip();
                for ch in 0..c {
                    let xh = (x.data()[(n * c + ch) * plane + pos] - mean) * inv;
                    out.data_mut()[(n * c + ch) * plane + pos] = sc[ch] * xh + sh[ch];
                }
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                input: input.0,
                scale: scale.0,
                shift: shift.0,
                eps,
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        running: &mut RunningStats<E>,
        mode: Mode,
        eps: E,
        momentum: E,
    ) -> Result<Var> {
        let [batch, c, h, w] = self.value(input).shape();
        if running.mean.len() != c || self.value(scale).len() != c || self.value(shift).len() != c {
            return Err(Error::ShapeMismatch {
                op: "batchnorm2d",
                detail: format!("channel count {c} does not match scale/shift/running stats"),
            });
        }
        let m = batch * h * w;
        if mode == Mode::Train && m < 2 {
            return Err(Error::InvalidArgument {
                op: "batchnorm2d",
                detail: format!("train mode needs N*H*W >= 2, got {m}"),
            });
        }
        let plane = h * w;
        let x = &self.values[input.0];
        let (mean, invstd) = match mode {
            Mode::Train => {
                let mn = E::from_f64(m as f64);
                let mut mean = vec![E::zero(); c];
                let mut var = vec![E::zero(); c];
                for ch in 0..c {
                    let mut acc = E::zero();
                    for n in 0..batch {
                        for v in &x.data()[(n * c + ch) * plane..(n * c + ch + 1) * plane] {
                            acc += *v;
                        }
                    }
                    mean[ch] = acc / mn;
                    let mut vacc = E::zero();
                    for n in 0..batch {
                        for v in &x.data()[(n * c + ch) * plane..(n * c + ch + 1) * plane] {
                            let d = *v - mean[ch];
                            vacc += d * d;
                        }
                    }
                    var[ch] = vacc / mn;
                    running.mean[ch] =
                        (E::one() - momentum) * running.mean[ch] + momentum * mean[ch];
                    running.var[ch] = (E::one() - momentum) * running.var[ch] + momentum * var[ch];
                }
                let invstd: Vec<E> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
                (mean, invstd)
            }
            Mode::Eval => (
                running.mean.clone(),
                running
                    .var
                    .iter()
                    .map(|&v| (v + eps).sqrt().recip())
                    .collect(),
            ),
        };
        let sc = self.values[scale.0].data();
        let sh = self.values[shift.0].data();
        let mut out = Tensor::zeros([batch, c, h, w]);
        for n in 0..batch {
            for ch in 0..c {
                let (mu, inv) = (mean[ch], invstd[ch]);
                let (a, b) = (sc[ch] * inv, sh[ch] - sc[ch] * inv * mu);
                let src = &x.data()[(n * c + ch) * plane..(n * c + ch + 1) * plane];
                let dst = &mut out.data_mut()[(n * c + ch) * plane..(n * c + ch + 1) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = a * *s + b;
                }
            }
        }
        Ok(self.push(
            out,
            Op::BatchNorm {
                input: input.0,
                scale: scale.0,
                shift: shift.0,
                mean,
                invstd,
                train: mode == Mode::Train,
            },
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let out = match kind {
            Activation::Relu => self.values[input.0].map(|v| if v > E::zero() { v } else { E::zero() }),
            Activation::Gelu => self.values[input.0].map(|v| v * v.norm_cdf()),
        };
        self.push(
            out,
            Op::Activation {
                input: input.0,
                kind,
            },
        )
    }

    /// Channelwise dropout: whole (sample, channel) planes are zeroed with
    /// probability `rate` and survivors scaled by 1/(1-rate).
    pub fn dropout2d(
        &mut self,
        input: Var,
        rate: f64,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument {
                op: "dropout2d",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let [batch, c, h, w] = self.value(input).shape();
        let survive = E::from_f64(1.0 / (1.0 - rate));
        let keep: Vec<E> = (0..batch * c)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    E::zero()
                } else {
                    survive
                }
            })
            .collect();
        let plane = h * w;
        let x = &self.values[input.0];
        let mut out = Tensor::zeros([batch, c, h, w]);
        for (nc, &factor) in keep.iter().enumerate() {
            if factor == E::zero() {
                continue;
            }
            let src = &x.data()[nc * plane..(nc + 1) * plane];
            let dst = &mut out.data_mut()[nc * plane..(nc + 1) * plane];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = factor * *s;
            }
        }
        Ok(self.push(
            out,
            Op::Dropout {
                input: input.0,
                keep,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                detail: format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let mut out = self.values[a.0].clone();
        out.add_assign(&self.values[b.0]);
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }))
    }

    /// Mean Huber loss against a constant target; returns a scalar value.
    pub fn huber_loss(&mut self, pred: Var, target: &Tensor<E>, delta: E) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "huber_loss",
                detail: format!(
                    "prediction {:?} vs target {:?}",
                    self.value(pred).shape(),
                    target.shape()
                ),
            });
        }
        let half = E::from_f64(0.5);
        let mut acc = E::zero();
        for (&p, &t) in self.values[pred.0].data().iter().zip(target.data()) {
            let e = (p - t).abs();
            acc += if e <= delta {
                half * e * e
            } else {
                delta * (e - half * delta)
            };
        }
        let mean = acc / E::from_f64(target.len() as f64);
        let out = Tensor::from_vec([1, 1, 1, 1], vec![mean]).unwrap();
        Ok(self.push(
            out,
            Op::Huber {
                pred: pred.0,
                target: target.clone(),
                delta,
            },
        ))
    }

    /// Reverse pass from `root`, seeded with a ones gradient.
    pub fn backward(&self, root: Var) -> Gradients<E> {
        self.backward_seeded(root, Tensor::full(self.values[root.0].shape(), E::one()))
    }

    /// Reverse pass with an explicit gradient seed at `root`.
    pub fn backward_seeded(&self, root: Var, seed: Tensor<E>) -> Gradients<E> {
        assert_eq!(seed.shape(), self.values[root.0].shape());
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.values.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_op(i, &g, &mut grads);
            // keep the gradient available for callers
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backward_op(&self, i: usize, g: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) {
        fn acc<E: Element>(grads: &mut [Option<Tensor<E>>], idx: usize, t: Tensor<E>) {
            match &mut grads[idx] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        }

        match &self.ops[i] {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
                groups,
            } => {
                let got = conv::backward(
                    &self.values[*input],
                    &self.values[*weight],
                    bias.is_some(),
                    *stride,
                    *padding,
                    *groups,
                    g,
                );
                acc(grads, *input, got.input);
                acc(grads, *weight, got.weight);
                if let (Some(b), Some(gb)) = (bias, got.bias) {
                    acc(grads, *b, gb);
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut gi = Tensor::zeros(self.values[*input].shape());
                for (o, &src) in argmax.iter().enumerate() {
                    gi.data_mut()[src as usize] += g.data()[o];
                }
                acc(grads, *input, gi);
            }
            Op::Upsample { input, factor } => {
                let [batch, c, h, w] = self.values[*input].shape();
                let f = *factor;
                let (ho, wo) = (h * f, w * f);
                let mut gi = Tensor::zeros([batch, c, h, w]);
                for n in 0..batch {
                    for ch in 0..c {
                        for oy in 0..ho {
                            let src = &g.data()[((n * c + ch) * ho + oy) * wo..][..wo];
                            let dst = &mut gi.data_mut()[((n * c + ch) * h + oy / f) * w..][..w];
                            for ox in 0..wo {
                                dst[ox / f] += src[ox];
                            }
                        }
                    }
                }
                acc(grads, *input, gi);
            }
            Op::Concat { a, b } => {
                let [n_, ca, h, w] = self.values[*a].shape();
                let [_, cb, _, _] = self.values[*b].shape();
                let plane = h * w;
                let mut ga = Tensor::zeros(self.values[*a].shape());
                let mut gb = Tensor::zeros(self.values[*b].shape());
                for n in 0..n_ {
                    let src = &g.data()[n * (ca + cb) * plane..];
                    ga.data_mut()[n * ca * plane..(n + 1) * ca * plane]
                        .copy_from_slice(&src[..ca * plane]);
                    gb.data_mut()[n * cb * plane..(n + 1) * cb * plane]
                        .copy_from_slice(&src[ca * plane..(ca + cb) * plane]);
                }
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::LayerNorm {
                input,
                scale,
                shift,
                eps,
            } => {
                let x = &self.values[*input];
                let sc = self.values[*scale].data();
                let [batch, c, h, w] = x.shape();
                let plane = h * w;
                let cn = E::from_f64(c as f64);
                let mut gi = Tensor::zeros(x.shape());
                let mut gsc = vec![E::zero(); c];
                let mut gsh = vec![E::zero(); c];
                for n in 0..batch {
                    for pos in 0..plane {
                        let mut mean = E::zero();
                        for ch in 0..c {
                            mean += x.data()[(n * c + ch) * plane + pos];
                        }
                        mean = mean / cn;
                        let mut var = E::zero();
                        for ch in 0..c {
                            let d = x.data()[(n * c + ch) * plane + pos] - mean;
                            var += d * d;
                        }
                        var = var / cn;
                        let inv = (var + *eps).sqrt().recip();
                        let mut sum_dxh = E::zero();
                        let mut sum_dxh_xh = E::zero();
                        for ch in 0..c {
                            let idx = (n * c + ch) * plane + pos;
                            let xh = (x.data()[idx] - mean) * inv;
                            let dy = g.data()[idx];
                            let dxh = dy * sc[ch];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                            gsc[ch] += dy * xh;
                            gsh[ch] += dy;
                        }
                        for ch in 0..c {
                            let idx = (n * c + ch) * plane + pos;
                            let xh = (x.data()[idx] - mean) * inv;
                            let dxh = g.data()[idx] * sc[ch];
                            gi.data_mut()[idx] =
                                inv * (dxh - sum_dxh / cn - xh * (sum_dxh_xh / cn));
                        }
                    }
                }
                acc(grads, *input, gi);
                acc(grads, *scale, Tensor::vector(gsc));
                acc(grads, *shift, Tensor::vector(gsh));
            }
            Op::BatchNorm {
                input,
                scale,
                shift,
                mean,
                invstd,
                train,
            } => {
                let x = &self.values[*input];
                let sc = self.values[*scale].data();
                let [batch, c, h, w] = x.shape();
                let plane = h * w;
                let m = E::from_f64((batch * plane) as f64);
                let mut gi = Tensor::zeros(x.shape());
                let mut gsc = vec![E::zero(); c];
                let mut gsh = vec![E::zero(); c];
                for ch in 0..c {
                    let (mu, inv) = (mean[ch], invstd[ch]);
                    let mut sum_dy = E::zero();
                    let mut sum_dy_xh = E::zero();
                    for n in 0..batch {
                        for pos in 0..plane {
                            let idx = (n * c + ch) * plane + pos;
                            let dy = g.data()[idx];
                            let xh = (x.data()[idx] - mu) * inv;
                            sum_dy += dy;
                            sum_dy_xh += dy * xh;
                        }
                    }
                    gsc[ch] = sum_dy_xh;
                    gsh[ch] = sum_dy;
                    for n in 0..batch {
                        for pos in 0..plane {
                            let idx = (n * c + ch) * plane + pos;
                            let dy = g.data()[idx];
                            gi.data_mut()[idx] = if *train {
                                let xh = (x.data()[idx] - mu) * inv;
                                sc[ch] * inv * (dy - sum_dy / m - xh * (sum_dy_xh / m))
                            } else {
                                sc[ch] * inv * dy
                            };
                        }
                    }
                }
                acc(grads, *input, gi);
                acc(grads, *scale, Tensor::vector(gsc));
                acc(grads, *shift, Tensor::vector(gsh));
            }
            Op::Activation { input, kind } => {
                let x = &self.values[*input];
                let mut gi = Tensor::zeros(x.shape());
                match kind {
                    Activation::Relu => {
                        for (d, (&xv, &gv)) in gi
                            .data_mut()
                            .iter_mut()
                            .zip(x.data().iter().zip(g.data()))
                        {
                            *d = if xv > E::zero() { gv } else { E::zero() };
                        }
                    }
                    Activation::Gelu => {
                        // d/dx x*Phi(x) = Phi(x) + x*phi(x)
                        for (d, (&xv, &gv)) in gi
                            .data_mut()
                            .iter_mut()
                            .zip(x.data().iter().zip(g.data()))
                        {
                            *d = gv * (xv.norm_cdf() + xv * xv.norm_pdf());
                        }
                    }
                }
                acc(grads, *input, gi);
            }
            Op::Dropout { input, keep } => {
                let x = &self.values[*input];
                let [_, _, h, w] = x.shape();
                let plane = h * w;
                let mut gi = Tensor::zeros(x.shape());
                for (nc, &factor) in keep.iter().enumerate() {
                    if factor == E::zero() {
                        continue;
                    }
                    let src = &g.data()[nc * plane..(nc + 1) * plane];
                    let dst = &mut gi.data_mut()[nc * plane..(nc + 1) * plane];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = factor * *s;
                    }
                }
                acc(grads, *input, gi);
            }
            Op::Add { a, b } => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let gscalar = g.data()[0];
                let x = &self.values[*pred];
                let scale = gscalar / E::from_f64(target.len() as f64);
                let mut gp = Tensor::zeros(x.shape());
                for (d, (&p, &t)) in gp
                    .data_mut()
                    .iter_mut()
                    .zip(x.data().iter().zip(target.data()))
                {
                    let e = p - t;
                    let clamped = if e > *delta {
                        *delta
                    } else if e < -*delta {
                        -*delta
                    } else {
                        e
                    };
                    *d = scale * clamped;
                }
                acc(grads, *pred, gp);
            }
        }
    }
}
