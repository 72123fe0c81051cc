use crate::array::Array4;
use crate::error::{Result, TensorError};
use crate::graph::Tensor4;

/// Interpolation taps of one output coordinate: `out = w0·in[i0] + w1·in[i1]`.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

/// Half-pixel-center source taps (`align_corners = false`), clamped at the borders.
fn taps(input: usize, output: usize) -> Vec<Tap> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - frac,
                w1: frac,
            }
        })
        .collect()
}

fn resize_planes(src: &Array4, rows: &[Tap], cols: &[Tap]) -> Array4 {
    let s = src.shape();
    let (ho, wo) = (rows.len(), cols.len());
    let mut out = Array4::zeros(s.with_hw(ho, wo));
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = src.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oh, r) in rows.iter().enumerate() {
                let top = &plane[r.i0 * s.w..(r.i0 + 1) * s.w];
                let bottom = &plane[r.i1 * s.w..(r.i1 + 1) * s.w];
                for (ow, t) in cols.iter().enumerate() {
                    let upper = t.w0 * top[t.i0] + t.w1 * top[t.i1];
                    let lower = t.w0 * bottom[t.i0] + t.w1 * bottom[t.i1];
                    dst[oh * wo + ow] = r.w0 * upper + r.w1 * lower;
                }
            }
        }
    }
    out
}

fn check_target(h: usize, w: usize, shape: crate::Shape4) -> Result<()> {
    if h == 0 || w == 0 || shape.h == 0 || shape.w == 0 {
        return Err(TensorError::invalid(
            "bilinear_resize",
            format!("cannot resize {shape} to {h}x{w}"),
        ));
    }
    Ok(())
}

/// Bilinear resize of plain data, outside any graph.
pub fn resize_bilinear_array(x: &Array4, h: usize, w: usize) -> Result<Array4> {
    let s = x.shape();
    check_target(h, w, s)?;
    if (s.h, s.w) == (h, w) {
        return Ok(x.clone());
    }
    Ok(resize_planes(x, &taps(s.h, h), &taps(s.w, w)))
}

/// Bilinear resize to `h × w` with half-pixel centers.
pub fn bilinear_resize(x: &Tensor4, h: usize, w: usize) -> Result<Tensor4> {
    let shape = x.shape();
    check_target(h, w, shape)?;
    let rows = taps(shape.h, h);
    let cols = taps(shape.w, w);
    let out = resize_planes(&x.value(), &rows, &cols);
    Ok(Tensor4::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = Array4::zeros(shape);
            let wo = cols.len();
            for n in 0..shape.n {
                for c in 0..shape.c {
                    let up = g.plane(n, c);
                    let dst = gx.plane_mut(n, c);
                    for (oh, r) in rows.iter().enumerate() {
                        for (ow, t) in cols.iter().enumerate() {
                            let gv = up[oh * wo + ow];
                            dst[r.i0 * shape.w + t.i0] += r.w0 * t.w0 * gv;
                            dst[r.i0 * shape.w + t.i1] += r.w0 * t.w1 * gv;
                            dst[r.i1 * shape.w + t.i0] += r.w1 * t.w0 * gv;
                            dst[r.i1 * shape.w + t.i1] += r.w1 * t.w1 * gv;
                        }
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_exact_identity() {
        let a = Array4::from_fn([1, 2, 5, 7], |_, c, h, w| {
            ((c * 31 + h * 7 + w) as f64).sin()
        });
        let t = Tensor4::constant(a.clone());
        assert_eq!(*bilinear_resize(&t, 5, 7).unwrap().value(), a);
        assert_eq!(resize_bilinear_array(&a, 5, 7).unwrap(), a);
    }

    #[test]
    fn half_pixel_upsample_by_two() {
        // 2 -> 4: sources at -0.25 (clamped to 0), 0.25, 0.75, 1.25.
        let a = Array4::from_vec([1, 1, 1, 2], vec![0.0, 4.0]).unwrap();
        let up = resize_bilinear_array(&a, 1, 4).unwrap();
        assert_eq!(up.data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let a = Array4::from_vec([1, 1, 1, 4], vec![1.0, 3.0, 5.0, 9.0]).unwrap();
        let down = resize_bilinear_array(&a, 1, 2).unwrap();
        assert_eq!(down.data(), &[2.0, 7.0]);
    }

    #[test]
    fn flip_equivariance() {
        let a = Array4::from_fn([1, 1, 3, 5], |_, _, h, w| (h * 5 + w * w) as f64);
        let lhs = resize_bilinear_array(&a.flip_w(), 7, 9).unwrap();
        let rhs = resize_bilinear_array(&a, 7, 9).unwrap().flip_w();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn zero_target_rejected() {
        let t = Tensor4::constant(Array4::zeros([1, 1, 2, 2]));
        assert!(bilinear_resize(&t, 0, 2).is_err());
    }
}
