use crate::array::Array4;
use crate::error::{Result, TensorError};
use crate::graph::Tensor4;
use crate::layers::BatchNormParams;

/// Per-channel batch normalization.
///
/// In training mode the batch mean and biased variance normalize the input and
/// the running statistics move toward them (running variance uses the unbiased
/// estimate). In eval mode the running statistics are used and the op is a
/// per-channel affine map.
pub fn batch_norm(x: &Tensor4, p: &BatchNormParams, training: bool) -> Result<Tensor4> {
    let shape = x.shape();
    let channels = p.channels();
    if shape.c != channels {
        return Err(TensorError::mismatch("batch_norm", shape, p.gamma.shape()));
    }
    let plane = shape.plane();
    let count = shape.n * plane;
    let eps = p.eps;

    let mut mean = vec![0.0; channels];
    let mut inv_std = vec![0.0; channels];
    {
        let xv = x.value();
        if training {
            if count == 0 {
                return Err(TensorError::invalid("batch_norm", "empty batch"));
            }
            let mut var = vec![0.0; channels];
            for c in 0..channels {
                let mut s = 0.0;
                for n in 0..shape.n {
                    s += xv.plane(n, c).iter().sum::<f64>();
                }
                let m = s / count as f64;
                let mut ss = 0.0;
                for n in 0..shape.n {
                    ss += xv
                        .plane(n, c)
                        .iter()
                        .map(|v| (v - m) * (v - m))
                        .sum::<f64>();
                }
                mean[c] = m;
                var[c] = ss / count as f64;
                inv_std[c] = 1.0 / (var[c] + eps).sqrt();
            }
            let mom = p.momentum;
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            let mut rm = p.running_mean.value_mut();
            let mut rv = p.running_var.value_mut();
            for c in 0..channels {
                let m = &mut rm.data_mut()[c];
                *m = (1.0 - mom) * *m + mom * mean[c];
                let v = &mut rv.data_mut()[c];
                *v = (1.0 - mom) * *v + mom * var[c] * unbias;
            }
        } else {
            let rm = p.running_mean.value();
            let rv = p.running_var.value();
            for c in 0..channels {
                mean[c] = rm.data()[c];
                inv_std[c] = 1.0 / (rv.data()[c] + eps).sqrt();
            }
        }
    }

    let mut xhat = Array4::zeros(shape);
    let mut out = Array4::zeros(shape);
    {
        let xv = x.value();
        let gamma = p.gamma.value();
        let beta = p.beta.value();
        for n in 0..shape.n {
            for c in 0..channels {
                let (m, is, g, b) = (mean[c], inv_std[c], gamma.data()[c], beta.data()[c]);
                let src = xv.plane(n, c);
                let xh = xhat.plane_mut(n, c);
                for (d, &v) in xh.iter_mut().zip(src) {
                    *d = (v - m) * is;
                }
                let dst = out.plane_mut(n, c);
                for (d, &h) in dst.iter_mut().zip(xhat.plane(n, c)) {
                    *d = g * h + b;
                }
            }
        }
    }

    Ok(Tensor4::from_op(
        out,
        vec![x.clone(), p.gamma.clone(), p.beta.clone()],
        Box::new(move |g, inputs| {
            let (x, gamma) = (&inputs[0], &inputs[1]);
            let mut sum_dy = vec![0.0; channels];
            let mut sum_dy_xhat = vec![0.0; channels];
            for n in 0..shape.n {
                for c in 0..channels {
                    for (&dy, &h) in g.plane(n, c).iter().zip(xhat.plane(n, c)) {
                        sum_dy[c] += dy;
                        sum_dy_xhat[c] += dy * h;
                    }
                }
            }
            let gx = x.requires_grad().then(|| {
                let gv = gamma.value();
                let mut gx = Array4::zeros(shape);
                let m = count as f64;
                for n in 0..shape.n {
                    for c in 0..channels {
                        let k = gv.data()[c] * inv_std[c];
                        let dst = gx.plane_mut(n, c);
                        let up = g.plane(n, c);
                        let xh = xhat.plane(n, c);
                        for i in 0..plane {
                            dst[i] = if training {
                                k * (up[i] - sum_dy[c] / m - xh[i] * sum_dy_xhat[c] / m)
                            } else {
                                k * up[i]
                            };
                        }
                    }
                }
                gx
            });
            let param_shape = inputs[1].shape();
            let ggamma = Array4::from_vec(param_shape, sum_dy_xhat).expect("one entry per channel");
            let gbeta = Array4::from_vec(param_shape, sum_dy).expect("one entry per channel");
            vec![gx, Some(ggamma), Some(gbeta)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input() -> Tensor4 {
        Tensor4::parameter(Array4::from_fn([2, 3, 3, 2], |n, c, h, w| {
            ((n * 17 + c * 5 + h * 3 + w) as f64 * 0.37).sin() * (1.0 + c as f64)
        }))
    }

    #[test]
    fn training_output_is_standardized() {
        let p = BatchNormParams::new(3);
        let y = batch_norm(&input(), &p, true).unwrap();
        let v = y.value();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|n| v.plane(n, c).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_move_with_momentum() {
        let p = BatchNormParams::new(3);
        let x = Tensor4::constant(Array4::from_fn([1, 3, 1, 2], |_, c, _, w| {
            c as f64 + w as f64
        }));
        batch_norm(&x, &p, true).unwrap();
        let rm = p.running_mean.to_array();
        let rv = p.running_var.to_array();
        assert!((rm.data()[2] - 0.1 * 2.5).abs() < 1e-15);
        // unbiased variance of {c, c+1} is 0.5
        assert!((rv.data()[0] - (0.9 + 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn eval_mode_is_affine() {
        let p = BatchNormParams::new(3);
        p.running_mean
            .value_mut()
            .data_mut()
            .copy_from_slice(&[0.5, -1.0, 2.0]);
        p.running_var
            .value_mut()
            .data_mut()
            .copy_from_slice(&[4.0, 0.25, 1.0]);
        p.gamma
            .value_mut()
            .data_mut()
            .copy_from_slice(&[2.0, -1.0, 0.5]);
        p.beta
            .value_mut()
            .data_mut()
            .copy_from_slice(&[0.0, 1.0, -3.0]);
        let x = input();
        let y = batch_norm(&x, &p, false).unwrap();
        let (xv, yv) = (x.value(), y.value());
        for c in 0..3 {
            let rm = p.running_mean.value().data()[c];
            let rv = p.running_var.value().data()[c];
            let a = p.gamma.value().data()[c] / (rv + p.eps).sqrt();
            let b = p.beta.value().data()[c] - a * rm;
            for (&xi, &yi) in xv.plane(1, c).iter().zip(yv.plane(1, c)) {
                assert!((yi - (a * xi + b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch() {
        let p = BatchNormParams::new(2);
        assert!(batch_norm(&input(), &p, true).is_err());
    }
}
