use crate::array::Array4;
use crate::error::{Result, TensorError};
use crate::graph::Tensor4;

/// Stacks inputs along the channel axis, blocks in argument order.
pub fn concat_channels(xs: &[Tensor4]) -> Result<Tensor4> {
    let first = xs
        .first()
        .ok_or_else(|| TensorError::invalid("concat_channels", "no inputs"))?
        .shape();
    let mut widths = Vec::with_capacity(xs.len());
    for x in xs {
        let s = x.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(TensorError::mismatch("concat_channels", first, s));
        }
        widths.push(s.c);
    }
    let total: usize = widths.iter().sum();
    let out_shape = first.with_c(total);

    let mut out = Array4::zeros(out_shape);
    for n in 0..first.n {
        let dst = out.item_mut(n);
        let mut at = 0;
        for x in xs {
            let v = x.value();
            let src = v.item(n);
            dst[at..at + src.len()].copy_from_slice(src);
            at += src.len();
        }
    }

    Ok(Tensor4::from_op(
        out,
        xs.to_vec(),
        Box::new(move |g, inputs| {
            let mut start = 0;
            widths
                .iter()
                .zip(inputs)
                .map(|(&c, input)| {
                    let slice = input.requires_grad().then(|| {
                        g.channel_slice(start, c)
                            .expect("widths recorded at forward")
                    });
                    start += c;
                    slice
                })
                .collect()
        }),
    ))
}

/// Channel block `[start, start + len)`.
pub fn slice_channels(x: &Tensor4, start: usize, len: usize) -> Result<Tensor4> {
    let shape = x.shape();
    let value = x.value().channel_slice(start, len)?;
    Ok(Tensor4::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = Array4::zeros(shape);
            let p = shape.plane();
            for n in 0..shape.n {
                let dst = &mut gx.item_mut(n)[start * p..(start + len) * p];
                dst.copy_from_slice(g.item(n));
            }
            vec![Some(gx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 4], offset: f64) -> Tensor4 {
        Tensor4::parameter(Array4::from_fn(shape, |n, c, h, w| {
            offset + (n * 1000 + c * 100 + h * 10 + w) as f64
        }))
    }

    #[test]
    fn single_input_is_identity() {
        let x = ramp([2, 3, 2, 2], 0.0);
        assert_eq!(
            *concat_channels(std::slice::from_ref(&x)).unwrap().value(),
            *x.value()
        );
    }

    #[test]
    fn block_order_preserved() {
        let a = ramp([1, 2, 4, 4], 0.0);
        let b = ramp([1, 3, 4, 4], 0.5);
        let y = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(y.shape().dims(), [1, 5, 4, 4]);
        assert_eq!(y.value().channel_slice(0, 2).unwrap(), *a.value());
        assert_eq!(y.value().channel_slice(2, 3).unwrap(), *b.value());
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = ramp([1, 2, 4, 4], 0.0);
        let b = ramp([1, 2, 4, 3], 0.0);
        assert!(matches!(
            concat_channels(&[a, b]),
            Err(TensorError::ShapeMismatch { .. })
        ));
        assert!(concat_channels(&[]).is_err());
    }

    #[test]
    fn slice_out_of_range() {
        let a = ramp([1, 2, 1, 1], 0.0);
        assert!(slice_channels(&a, 1, 2).is_err());
    }
}
