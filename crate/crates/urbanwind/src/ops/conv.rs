//! Direct conv2d kernels: im2col + GEMM forward, and the three backward
//! products (input, weight, bias). Zero padding, arbitrary stride and groups.

use crate::tensor::{Element, Tensor};

/// c(m×n) += a(m×k) · b(k×n); four output rows at a time so each loaded b
/// element feeds four independent fused streams the compiler can vectorize
fn gemm<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    let mut blocks = c.chunks_exact_mut(4 * n);
    let mut i = 0;
    for block in &mut blocks {
        let (r0, rest) = block.split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, r3) = rest.split_at_mut(n);
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            for j in 0..n {
                let bv = b_row[j];
                r0[j] += a0 * bv;
                r1[j] += a1 * bv;
                r2[j] += a2 * bv;
                r3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    for (r, c_row) in blocks.into_remainder().chunks_exact_mut(n).enumerate() {
        for p in 0..k {
            let coeff = a[(i + r) * k + p];
            if coeff == E::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += coeff * b_row[j];
            }
        }
    }
}

/// c(k×n) += a(m×k)ᵀ · b(m×n); four b rows at a time per c-row pass
fn gemm_tn<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let b0 = &b[i * n..(i + 1) * n];
        let b1 = &b[(i + 1) * n..(i + 2) * n];
        let b2 = &b[(i + 2) * n..(i + 3) * n];
        let b3 = &b[(i + 3) * n..(i + 4) * n];
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            let c_row = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
        }
        i += 4;
    }
    for ii in i..m {
        let b_row = &b[ii * n..(ii + 1) * n];
        for p in 0..k {
            let coeff = a[ii * k + p];
            if coeff == E::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += coeff * b_row[j];
            }
        }
    }
}

/// c(m×k) += a(m×n) · b(k×n)ᵀ; lane-split accumulators keep the dot product
/// free of a serial dependence so it vectorizes
fn gemm_nt<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    const L: usize = 8;
    let chunks = n / L * L;
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut lanes = [E::zero(); L];
            let mut j = 0;
            while j < chunks {
                for l in 0..L {
                    lanes[l] += a_row[j + l] * b_row[j + l];
                }
                j += L;
            }
            let mut acc = E::zero();
            for l in lanes {
                acc += l;
            }
            for jj in chunks..n {
                acc += a_row[jj] * b_row[jj];
            }
            c[i * k + p] += acc;
        }
    }
}

pub fn out_extent(extent: usize, k: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - k) / stride + 1
}

/// Unrolls the `cg` channels starting at `c0` of item `n` into a
/// (cg·k·k) × (ho·wo) matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    input: &Tensor<E>,
    n: usize,
    c0: usize,
    cg: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
    cols: &mut [E],
) {
    let [_, c_in, h, w] = input.shape();
    let data = input.data();
    let p = ho * wo;
    for cl in 0..cg {
        let plane = &data[((n * c_in + c0 + cl) * h) * w..((n * c_in + c0 + cl) * h + h) * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((cl * k + ky) * k + kx) * p..((cl * k + ky) * k + kx + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let out_row = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        for v in out_row.iter_mut() {
                            *v = E::zero();
                        }
                        continue;
                    }
                    let in_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        out_row[ox] = if ix < 0 || ix >= w as isize {
                            E::zero()
                        } else {
                            in_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of an im2col-layout gradient back onto the input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im_add<E: Element>(
    cols: &[E],
    grad_input: &mut Tensor<E>,
    n: usize,
    c0: usize,
    cg: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) {
    let [_, c_in, h, w] = grad_input.shape();
    let data = grad_input.data_mut();
    let p = ho * wo;
    for cl in 0..cg {
        let plane =
            &mut data[((n * c_in + c0 + cl) * h) * w..((n * c_in + c0 + cl) * h + h) * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((cl * k + ky) * k + kx) * p..((cl * k + ky) * k + kx + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            in_row[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn forward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor<E> {
    let [batch, _, h, w] = input.shape();
    let [c_out, cg, k, _] = weight.shape();
    let mg = c_out / groups;
    let ho = out_extent(h, k, stride, padding);
    let wo = out_extent(w, k, stride, padding);
    let p = ho * wo;
    let kk = cg * k * k;

    let mut out = Tensor::zeros([batch, c_out, ho, wo]);
    if let Some(b) = bias {
        let od = out.data_mut();
        for n in 0..batch {
            for oc in 0..c_out {
                let v = b.data()[oc];
                for x in &mut od[(n * c_out + oc) * p..(n * c_out + oc + 1) * p] {
                    *x = v;
                }
            }
        }
    }

    let mut cols = vec![E::zero(); kk * p];
    for n in 0..batch {
        for g in 0..groups {
            im2col(input, n, g * cg, cg, k, stride, padding, ho, wo, &mut cols);
            let w_block = &weight.data()[g * mg * kk..(g + 1) * mg * kk];
            let out_block = &mut out.data_mut()[(n * c_out + g * mg) * p..(n * c_out + (g + 1) * mg) * p];
            gemm(w_block, &cols, out_block, mg, kk, p);
        }
    }
    out
}

pub struct ConvGrads<E: Element> {
    pub input: Tensor<E>,
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
}

pub fn backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    has_bias: bool,
    stride: usize,
    padding: usize,
    groups: usize,
    grad_out: &Tensor<E>,
) -> ConvGrads<E> {
    let [batch, _c_in, h, w] = input.shape();
    let [c_out, cg, k, _] = weight.shape();
    let mg = c_out / groups;
    let ho = out_extent(h, k, stride, padding);
    let wo = out_extent(w, k, stride, padding);
    let p = ho * wo;
    let kk = cg * k * k;

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weight = Tensor::zeros(weight.shape());
    let mut grad_bias = has_bias.then(|| vec![E::zero(); c_out]);

    let mut cols = vec![E::zero(); kk * p];
    let mut grad_cols = vec![E::zero(); kk * p];
    for n in 0..batch {
        for g in 0..groups {
            let go_block = &grad_out.data()[(n * c_out + g * mg) * p..(n * c_out + (g + 1) * mg) * p];
            let w_block = &weight.data()[g * mg * kk..(g + 1) * mg * kk];

            // d/dinput
            grad_cols.iter_mut().for_each(|v| *v = E::zero());
            gemm_tn(w_block, go_block, &mut grad_cols, mg, kk, p);
            col2im_add(
                &grad_cols,
                &mut grad_input,
                n,
                g * cg,
                cg,
                k,
                stride,
                padding,
                ho,
                wo,
            );

            // d/dweight
            im2col(input, n, g * cg, cg, k, stride, padding, ho, wo, &mut cols);
            let gw_block = &mut grad_weight.data_mut()[g * mg * kk..(g + 1) * mg * kk];
            gemm_nt(go_block, &cols, gw_block, mg, kk, p);
        }
        if let Some(gb) = grad_bias.as_mut() {
            for oc in 0..c_out {
                let mut acc = E::zero();
                for v in &grad_out.data()[(n * c_out + oc) * p..(n * c_out + oc + 1) * p] {
                    acc += *v;
                }
                gb[oc] += acc;
            }
        }
    }

    ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias.map(Tensor::vector),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force sliding-window convolution, the independent oracle.
    pub fn conv_naive(
        input: &Tensor<f64>,
        weight: &Tensor<f64>,
        bias: Option<&Tensor<f64>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Tensor<f64> {
        let [batch, c_in, h, w] = input.shape();
        let [c_out, cg, k, _] = weight.shape();
        let mg = c_out / groups;
        let ho = out_extent(h, k, stride, padding);
        let wo = out_extent(w, k, stride, padding);
        let mut out = Tensor::zeros([batch, c_out, ho, wo]);
        for n in 0..batch {
            for oc in 0..c_out {
                let g = oc / mg;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.map_or(0.0, |b| b.data()[oc]);
                        for cl in 0..cg {
                            let ic = g * cg + cl;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                        acc += input.at(n, ic, iy as usize, ix as usize)
                                            * weight.at(oc, cl, ky, kx);
                                    }
                                }
                            }
                        }
                        let _ = c_in;
                        *out.at_mut(n, oc, oy, ox) = acc;
                    }
                }
            }
        }
        out
    }

    fn rand_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "conv-test", 0);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matches_naive_oracle() {
        for (groups, stride, padding, k) in [(1, 1, 1, 3), (2, 2, 0, 2), (4, 1, 3, 7), (1, 4, 0, 4)]
        {
            let input = rand_tensor([2, 4, 8, 8], 1);
            let weight = rand_tensor([4, 4 / groups, k, k], 2);
            let bias = rand_tensor([1, 4, 1, 1], 3);
            let fast = forward(&input, &weight, Some(&bias), stride, padding, groups);
            let slow = conv_naive(&input, &weight, Some(&bias), stride, padding, groups);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "groups={groups} k={k}");
            }
        }
    }

    #[test]
    fn all_ones_3x3_padded() {
        // 3×3 all-ones kernel on a 3×3 all-ones input with padding 1:
        // center sees 9 taps, edge-centers 6, corners 4.
        let input = Tensor::full([1, 1, 3, 3], 1.0f64);
        let weight = Tensor::full([1, 1, 3, 3], 1.0f64);
        let out = forward(&input, &weight, None, 1, 1, 1);
        let expect = [4., 6., 4., 6., 9., 6., 4., 6., 4.];
        assert_eq!(out.data(), &expect);
    }
}
