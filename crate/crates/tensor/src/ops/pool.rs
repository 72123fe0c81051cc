use crate::array::Array4;
use crate::error::{Result, TensorError};
use crate::graph::Tensor4;
use crate::shape::ConvGeometry;

/// Spatial mean of every channel; output is (n, c, 1, 1).
pub fn global_avg_pool(x: &Tensor4) -> Tensor4 {
    let shape = x.shape();
    let plane = shape.plane();
    let out_shape = shape.with_hw(1, 1);
    let mut out = Array4::zeros(out_shape);
    {
        let xv = x.value();
        for n in 0..shape.n {
            for c in 0..shape.c {
                out.set(
                    n,
                    c,
                    0,
                    0,
                    xv.plane(n, c).iter().sum::<f64>() / plane as f64,
                );
            }
        }
    }
    Tensor4::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = Array4::zeros(shape);
            for n in 0..shape.n {
                for c in 0..shape.c {
                    let v = g.at(n, c, 0, 0) / plane as f64;
                    gx.plane_mut(n, c).fill(v);
                }
            }
            vec![Some(gx)]
        }),
    )
}

/// Replicates a (n, c, 1, 1) map over an h×w grid.
pub fn broadcast_spatial(x: &Tensor4, h: usize, w: usize) -> Result<Tensor4> {
    let shape = x.shape();
    if shape.h != 1 || shape.w != 1 || h == 0 || w == 0 {
        return Err(TensorError::invalid(
            "broadcast_spatial",
            format!("expected a (n, c, 1, 1) input and a nonempty grid, got {shape} -> {h}x{w}"),
        ));
    }
    let mut out = Array4::zeros(shape.with_hw(h, w));
    {
        let xv = x.value();
        for n in 0..shape.n {
            for c in 0..shape.c {
                out.plane_mut(n, c).fill(xv.at(n, c, 0, 0));
            }
        }
    }
    Ok(Tensor4::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = Array4::zeros(shape);
            for n in 0..shape.n {
                for c in 0..shape.c {
                    gx.set(n, c, 0, 0, g.plane(n, c).iter().sum());
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// k×k max pooling; padded positions never win.
pub fn max_pool(x: &Tensor4, kernel: usize, stride: usize, padding: usize) -> Result<Tensor4> {
    let shape = x.shape();
    let geom = ConvGeometry::new(stride, 1, padding);
    let (ho, wo) = match (
        geom.output_len(shape.h, kernel),
        geom.output_len(shape.w, kernel),
    ) {
        (Some(ho), Some(wo)) if padding < kernel => (ho, wo),
        _ => {
            return Err(TensorError::invalid(
                "max_pool",
                format!(
                    "window {kernel} / stride {stride} / padding {padding} does not fit {shape}"
                ),
            ))
        }
    };
    let out_shape = shape.with_hw(ho, wo);
    let mut out = Array4::zeros(out_shape);
    let mut argmax = vec![0usize; out_shape.numel()];
    {
        let xv = x.value();
        let mut idx = 0;
        for n in 0..shape.n {
            for c in 0..shape.c {
                let src = xv.plane(n, c);
                let base = xv.offset(n, c, 0, 0);
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = usize::MAX;
                        for ki in 0..kernel {
                            let ih = (oh * stride + ki) as isize - padding as isize;
                            if ih < 0 || ih >= shape.h as isize {
                                continue;
                            }
                            for kj in 0..kernel {
                                let iw = (ow * stride + kj) as isize - padding as isize;
                                if iw < 0 || iw >= shape.w as isize {
                                    continue;
                                }
                                let at = ih as usize * shape.w + iw as usize;
                                if src[at] > best {
                                    best = src[at];
                                    best_at = at;
                                }
                            }
                        }
                        out.data_mut()[idx] = best;
                        argmax[idx] = base + best_at;
                        idx += 1;
                    }
                }
            }
        }
    }
    Ok(Tensor4::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = Array4::zeros(shape);
            let data = gx.data_mut();
            for (&src, &gv) in argmax.iter().zip(g.data()) {
                data[src] += gv;
            }
            vec![Some(gx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_of_constant_map() {
        let x = Tensor4::constant(Array4::full([2, 3, 5, 4], 1.25));
        let y = global_avg_pool(&x);
        assert_eq!(y.shape().dims(), [2, 3, 1, 1]);
        assert!(y.value().data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn max_pool_picks_window_max() {
        let x = Tensor4::constant(Array4::from_fn([1, 1, 4, 4], |_, _, h, w| {
            (h * 4 + w) as f64
        }));
        let y = max_pool(&x, 2, 2, 0).unwrap();
        assert_eq!(y.value().data(), &[5.0, 7.0, 13.0, 15.0]);
        let y = max_pool(&x, 3, 1, 1).unwrap();
        assert_eq!(y.shape().dims(), [1, 1, 4, 4]);
        assert_eq!(y.value().at(0, 0, 0, 0), 5.0);
    }

    #[test]
    fn max_pool_window_too_large() {
        let x = Tensor4::constant(Array4::zeros([1, 1, 2, 2]));
        assert!(max_pool(&x, 3, 1, 0).is_err());
        assert!(max_pool(&x, 2, 0, 0).is_err());
    }

    #[test]
    fn broadcast_requires_unit_map() {
        let x = Tensor4::constant(Array4::zeros([1, 1, 2, 1]));
        assert!(broadcast_spatial(&x, 3, 3).is_err());
    }
}
