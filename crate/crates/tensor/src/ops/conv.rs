//! 2-D cross-correlation with zero padding, stride and dilation, lowered to
//! im2col + GEMM.

use crate::array::Array4;
use crate::error::{Result, TensorError};
use crate::graph::{needs_grad, Tensor4};
use crate::shape::{ConvGeometry, Shape4};

/// Row-major `c = a·b + beta·c`, where `a` is m×k and `b` is k×n after the
/// optional transposes of their stored layouts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices cover m×k, k×n and m×n elements under the strides
    // above, as asserted; `c` does not alias `a` or `b`.
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

#[derive(Clone, Copy)]
struct Plan {
    input: Shape4,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeometry,
}

impl Plan {
    fn patch_len(&self) -> usize {
        self.input.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1×1 stride-1 unpadded convolution reads its input as the column matrix directly.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom.stride == 1 && self.geom.padding == 0
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let Shape4 { c, h, w, .. } = self.input;
        let (s, d, p) = (self.geom.stride, self.geom.dilation, self.geom.padding);
        let plane = self.out_plane();
        let mut row = 0;
        for ci in 0..c {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oh in 0..self.ho {
                        let ih = (oh * s + ki * d) as isize - p as isize;
                        let out_row = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        if ih < 0 || ih >= h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src_row = &src[ih as usize * w..(ih as usize + 1) * w];
                        for (ow, slot) in out_row.iter_mut().enumerate() {
                            let iw = (ow * s + kj * d) as isize - p as isize;
                            *slot = if iw < 0 || iw >= w as isize {
                                0.0
                            } else {
                                src_row[iw as usize]
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let Shape4 { c, h, w, .. } = self.input;
        let (s, d, p) = (self.geom.stride, self.geom.dilation, self.geom.padding);
        let plane = self.out_plane();
        let mut row = 0;
        for ci in 0..c {
            let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oh in 0..self.ho {
                        let ih = (oh * s + ki * d) as isize - p as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[ih as usize * w..(ih as usize + 1) * w];
                        for ow in 0..self.wo {
                            let iw = (ow * s + kj * d) as isize - p as isize;
                            if iw >= 0 && iw < w as isize {
                                dst_row[iw as usize] += src[oh * self.wo + ow];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Convolution output shape, or an error naming both operand shapes.
pub fn conv2d_output_shape(input: Shape4, weight: Shape4, geom: ConvGeometry) -> Result<Shape4> {
    if weight.c != input.c {
        return Err(TensorError::mismatch("conv2d", input, weight));
    }
    let ho = geom.output_len(input.h, weight.h);
    let wo = geom.output_len(input.w, weight.w);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok(Shape4::new(input.n, weight.n, ho, wo)),
        _ => Err(TensorError::invalid(
            "conv2d",
            format!(
                "kernel {}x{} with {geom:?} does not fit input {input}",
                weight.h, weight.w
            ),
        )),
    }
}

/// Cross-correlation of `x` (n, c_in, h, w) with `weight` (c_out, c_in, kh, kw).
pub fn conv2d(
    x: &Tensor4,
    weight: &Tensor4,
    bias: Option<&Tensor4>,
    geom: ConvGeometry,
) -> Result<Tensor4> {
    let in_shape = x.shape();
    let w_shape = weight.shape();
    let out_shape = conv2d_output_shape(in_shape, w_shape, geom)?;
    if let Some(b) = bias {
        let bs = b.shape();
        if bs.numel() != w_shape.n || bs.c != w_shape.n {
            return Err(TensorError::mismatch("conv2d bias", w_shape, bs));
        }
    }
    let plan = Plan {
        input: in_shape,
        c_out: w_shape.n,
        kh: w_shape.h,
        kw: w_shape.w,
        ho: out_shape.h,
        wo: out_shape.w,
        geom,
    };
    let k = plan.patch_len();
    let plane = plan.out_plane();

    let mut inputs = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    let refs: Vec<&Tensor4> = inputs.iter().collect();
    let keep_cols = needs_grad(&refs) && weight.requires_grad() && !plan.is_pointwise();

    let mut out = Array4::zeros(out_shape);
    let mut saved_cols: Vec<Vec<f64>> = Vec::new();
    {
        let xv = x.value();
        let wv = weight.value();
        let bv = bias.map(|b| b.value());
        let mut cols = vec![0.0; if plan.is_pointwise() { 0 } else { k * plane }];
        for n in 0..in_shape.n {
            let dst = out.item_mut(n);
            if let Some(bv) = &bv {
                for (co, &b) in bv.data().iter().enumerate() {
                    dst[co * plane..(co + 1) * plane].fill(b);
                }
            }
            let beta = if bv.is_some() { 1.0 } else { 0.0 };
            if plan.is_pointwise() {
                gemm(
                    plan.c_out,
                    k,
                    plane,
                    wv.data(),
                    false,
                    xv.item(n),
                    false,
                    beta,
                    dst,
                );
            } else {
                plan.im2col(xv.item(n), &mut cols);
                gemm(
                    plan.c_out,
                    k,
                    plane,
                    wv.data(),
                    false,
                    &cols,
                    false,
                    beta,
                    dst,
                );
                if keep_cols {
                    saved_cols.push(cols.clone());
                }
            }
        }
    }

    Ok(Tensor4::from_op(
        out,
        inputs,
        Box::new(move |g, inputs| {
            let (x, weight) = (&inputs[0], &inputs[1]);
            let mut grads = Vec::with_capacity(inputs.len());
            let n_items = plan.input.n;

            let gx = x.requires_grad().then(|| {
                let wv = weight.value();
                let mut gx = Array4::zeros(plan.input);
                let mut dcols = vec![0.0; k * plane];
                for n in 0..n_items {
                    if plan.is_pointwise() {
                        gemm(
                            k,
                            plan.c_out,
                            plane,
                            wv.data(),
                            true,
                            g.item(n),
                            false,
                            0.0,
                            gx.item_mut(n),
                        );
                    } else {
                        gemm(
                            k,
                            plan.c_out,
                            plane,
                            wv.data(),
                            true,
                            g.item(n),
                            false,
                            0.0,
                            &mut dcols,
                        );
                        plan.col2im(&dcols, gx.item_mut(n));
                    }
                }
                gx
            });
            grads.push(gx);

            let gw = weight.requires_grad().then(|| {
                let mut gw = Array4::zeros(weight.shape());
                if plan.is_pointwise() {
                    let xv = x.value();
                    for n in 0..n_items {
                        gemm(
                            plan.c_out,
                            plane,
                            k,
                            g.item(n),
                            false,
                            xv.item(n),
                            true,
                            1.0,
                            gw.data_mut(),
                        );
                    }
                } else {
                    for (n, cols) in saved_cols.iter().enumerate() {
                        gemm(
                            plan.c_out,
                            plane,
                            k,
                            g.item(n),
                            false,
                            cols,
                            true,
                            1.0,
                            gw.data_mut(),
                        );
                    }
                }
                gw
            });
            grads.push(gw);

            if let Some(b) = inputs.get(2) {
                let gb = b.requires_grad().then(|| {
                    let mut gb = Array4::zeros(b.shape());
                    for n in 0..n_items {
                        let item = g.item(n);
                        for (co, slot) in gb.data_mut().iter_mut().enumerate() {
                            *slot += item[co * plane..(co + 1) * plane].iter().sum::<f64>();
                        }
                    }
                    gb
                });
                grads.push(gb);
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pointwise_kernel() {
        let x = Tensor4::constant(Array4::from_fn([2, 3, 4, 5], |n, c, h, w| {
            (n as f64 - 0.5) * (c * 7 + h * 3 + w) as f64
        }));
        let eye = Tensor4::constant(Array4::from_fn([3, 3, 1, 1], |o, i, _, _| {
            if o == i {
                1.0
            } else {
                0.0
            }
        }));
        let y = conv2d(&x, &eye, None, ConvGeometry::default()).unwrap();
        assert_eq!(*y.value(), *x.value());
    }

    #[test]
    fn same_padding_keeps_size_at_large_rate() {
        let x = Tensor4::constant(Array4::zeros([1, 2, 28, 28]));
        let w = Tensor4::constant(Array4::zeros([4, 2, 3, 3]));
        let y = conv2d(&x, &w, None, ConvGeometry::new(1, 18, 18)).unwrap();
        assert_eq!(y.shape().dims(), [1, 4, 28, 28]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor4::constant(Array4::zeros([1, 2, 5, 5]));
        let w = Tensor4::constant(Array4::zeros([4, 3, 3, 3]));
        let msg = conv2d(&x, &w, None, ConvGeometry::default())
            .unwrap_err()
            .to_string();
        assert!(
            msg.contains("(1, 2, 5, 5)") && msg.contains("(4, 3, 3, 3)"),
            "{msg}"
        );
    }

    #[test]
    fn kernel_larger_than_input_rejected() {
        let x = Tensor4::constant(Array4::zeros([1, 1, 2, 2]));
        let w = Tensor4::constant(Array4::zeros([1, 1, 3, 3]));
        assert!(conv2d(&x, &w, None, ConvGeometry::default()).is_err());
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor4::constant(Array4::zeros([1, 1, 3, 3]));
        let w = Tensor4::constant(Array4::ones([2, 1, 3, 3]));
        let b = Tensor4::constant(Array4::from_vec([1, 2, 1, 1], vec![0.5, -1.5]).unwrap());
        let y = conv2d(&x, &w, Some(&b), ConvGeometry::same(3, 1)).unwrap();
        assert!(y.value().plane(0, 0).iter().all(|&v| v == 0.5));
        assert!(y.value().plane(0, 1).iter().all(|&v| v == -1.5));
    }
}
