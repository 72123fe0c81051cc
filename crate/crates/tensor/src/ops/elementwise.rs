use crate::array::Array4;
use crate::error::{Result, TensorError};
use crate::graph::Tensor4;

fn check_same(op: &'static str, a: &Tensor4, b: &Tensor4) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(TensorError::mismatch(op, sa, sb));
    }
    Ok(())
}

pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    check_same("add", a, b)?;
    let value = a.value().zip_map(&b.value(), |x, y| x + y)?;
    Ok(Tensor4::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
    ))
}

/// Hadamard product.
pub fn mul(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    check_same("eltwise_mul", a, b)?;
    let value = a.value().zip_map(&b.value(), |x, y| x * y)?;
    Ok(Tensor4::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, inputs| {
            let (a, b) = (&inputs[0], &inputs[1]);
            let ga = a
                .requires_grad()
                .then(|| g.zip_map(&b.value(), |g, y| g * y).expect("shapes checked"));
            let gb = b
                .requires_grad()
                .then(|| g.zip_map(&a.value(), |g, x| g * x).expect("shapes checked"));
            vec![ga, gb]
        }),
    ))
}

/// Product of all `factors`, folded left to right.
pub fn mul_all(factors: &[Tensor4]) -> Result<Tensor4> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| TensorError::invalid("eltwise_mul", "no factors given"))?;
    rest.iter().try_fold(first.clone(), |acc, f| mul(&acc, f))
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    let value = x.value().map(|v| v.max(0.0));
    Tensor4::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, inputs| {
            let gx = g
                .zip_map(&inputs[0].value(), |g, v| if v > 0.0 { g } else { 0.0 })
                .expect("shapes checked");
            vec![Some(gx)]
        }),
    )
}

pub fn scale(x: &Tensor4, k: f64) -> Tensor4 {
    let value = x.value().map(|v| v * k);
    Tensor4::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(g.map(|v| v * k))]),
    )
}

/// Sum of all entries as a (1, 1, 1, 1) tensor.
pub fn sum(x: &Tensor4) -> Tensor4 {
    let shape = x.shape();
    let value = Array4::scalar(x.value().sum());
    Tensor4::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(Array4::full(shape, g.data()[0]))]),
    )
}

pub fn mean(x: &Tensor4) -> Tensor4 {
    let n = x.shape().numel() as f64;
    scale(&sum(x), 1.0 / n)
}

/// Mirror along the width axis.
pub fn flip_w(x: &Tensor4) -> Tensor4 {
    let value = x.value().flip_w();
    Tensor4::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, _| vec![Some(g.flip_w())]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], f: impl FnMut(usize, usize, usize, usize) -> f64) -> Tensor4 {
        Tensor4::parameter(Array4::from_fn(shape, f))
    }

    #[test]
    fn relu_values() {
        let x = Tensor4::constant(Array4::from_vec([1, 1, 1, 3], vec![0.0, -1.0, 2.0]).unwrap());
        assert_eq!(relu(&x).value().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn mul_identity_and_zero() {
        let a = t([1, 3, 2, 2], |_, c, h, w| {
            c as f64 - 0.5 * h as f64 + 0.25 * w as f64
        });
        let ones = Tensor4::constant(Array4::ones([1, 3, 2, 2]));
        let zeros = Tensor4::constant(Array4::zeros([1, 3, 2, 2]));
        assert_eq!(*mul(&a, &ones).unwrap().value(), *a.value());
        assert_eq!(
            *mul(&a, &zeros).unwrap().value(),
            Array4::zeros([1, 3, 2, 2])
        );
    }

    #[test]
    fn mul_shape_mismatch() {
        let a = t([1, 3, 2, 2], |_, _, _, _| 1.0);
        let b = t([1, 2, 2, 2], |_, _, _, _| 1.0);
        let err = mul(&a, &b).unwrap_err().to_string();
        assert!(
            err.contains("(1, 3, 2, 2)") && err.contains("(1, 2, 2, 2)"),
            "{err}"
        );
    }

    #[test]
    fn mul_gradient_is_other_factor() {
        let a = t([1, 2, 1, 2], |_, c, _, w| 1.0 + c as f64 + w as f64);
        let b = t([1, 2, 1, 2], |_, c, _, w| -2.0 + 0.5 * c as f64 * w as f64);
        sum(&mul(&a, &b).unwrap()).backward().unwrap();
        assert_eq!(*a.grad().unwrap(), *b.value());
        assert_eq!(*b.grad().unwrap(), *a.value());
    }

    #[test]
    fn mul_all_needs_factors() {
        assert!(mul_all(&[]).is_err());
    }
}
