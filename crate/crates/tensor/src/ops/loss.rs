use crate::array::Array4;
use crate::error::{Result, TensorError};
use crate::graph::Tensor4;

/// Mean pixel-wise softmax cross-entropy over the pixels whose label is not
/// `ignore_label`.
///
/// `labels` holds one class index per (n, h, w) location in row-major order.
pub fn cross_entropy(logits: &Tensor4, labels: &[u8], ignore_label: u8) -> Result<Tensor4> {
    let shape = logits.shape();
    let plane = shape.plane();
    let k = shape.c;
    if labels.len() != shape.n * plane {
        return Err(TensorError::invalid(
            "cross_entropy",
            format!(
                "{} labels for logits of shape {shape} (expected {})",
                labels.len(),
                shape.n * plane
            ),
        ));
    }
    if let Some(&bad) = labels
        .iter()
        .find(|&&l| l != ignore_label && l as usize >= k)
    {
        return Err(TensorError::invalid(
            "cross_entropy",
            format!("label {bad} outside 0..{k} and not the ignore label {ignore_label}"),
        ));
    }
    let valid = labels.iter().filter(|&&l| l != ignore_label).count();
    if valid == 0 {
        return Err(TensorError::DegenerateBatch);
    }

    // softmax probabilities are kept for the backward pass
    let mut probs = Array4::zeros(shape);
    let mut total = 0.0;
    {
        let lv = logits.value();
        for n in 0..shape.n {
            let src = lv.item(n);
            let dst = probs.item_mut(n);
            for i in 0..plane {
                let mut max = f64::NEG_INFINITY;
                for c in 0..k {
                    max = max.max(src[c * plane + i]);
                }
                let mut z = 0.0;
                for c in 0..k {
                    let e = (src[c * plane + i] - max).exp();
                    dst[c * plane + i] = e;
                    z += e;
                }
                for c in 0..k {
                    dst[c * plane + i] /= z;
                }
                let label = labels[n * plane + i];
                if label != ignore_label {
                    total += max + z.ln() - src[label as usize * plane + i];
                }
            }
        }
    }
    let value = Array4::scalar(total / valid as f64);
    let labels = labels.to_vec();

    Ok(Tensor4::from_op(
        value,
        vec![logits.clone()],
        Box::new(move |g, _| {
            let scale = g.data()[0] / valid as f64;
            let mut gx = probs.clone();
            for n in 0..shape.n {
                let dst = gx.item_mut(n);
                for i in 0..plane {
                    let label = labels[n * plane + i];
                    if label == ignore_label {
                        for c in 0..k {
                            dst[c * plane + i] = 0.0;
                        }
                    } else {
                        dst[label as usize * plane + i] -= 1.0;
                        for c in 0..k {
                            dst[c * plane + i] *= scale;
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
    fn uniform_logits_give_ln_k() {
        let logits = Tensor4::constant(Array4::full([2, 5, 3, 3], 0.7));
        let labels: Vec<u8> = (0..18).map(|i| (i % 5) as u8).collect();
        let loss = cross_entropy(&logits, &labels, 255)
            .unwrap()
            .item()
            .unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn two_class_hand_case() {
        let logits = Tensor4::constant(Array4::from_vec([1, 2, 1, 1], vec![1.0, 0.0]).unwrap());
        let loss = cross_entropy(&logits, &[0], 255).unwrap().item().unwrap();
        let expected = (1.0 + (-1f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn margin_lowers_loss_below_ln_k() {
        let logits = Tensor4::constant(Array4::from_fn([1, 3, 2, 2], |_, c, _, _| {
            if c == 1 {
                2.0
            } else {
                0.0
            }
        }));
        let loss = cross_entropy(&logits, &[1, 1, 1, 1], 255)
            .unwrap()
            .item()
            .unwrap();
        assert!(loss < 3f64.ln());
    }

    #[test]
    fn ignored_pixels_are_excluded() {
        let logits =
            Tensor4::parameter(Array4::from_vec([1, 2, 1, 2], vec![1.0, 5.0, 0.0, -3.0]).unwrap());
        let loss = cross_entropy(&logits, &[0, 255], 255).unwrap();
        assert!((loss.item().unwrap() - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        loss.backward().unwrap();
        let g = logits.grad().unwrap();
        assert_eq!(g.at(0, 0, 0, 1), 0.0);
        assert_eq!(g.at(0, 1, 0, 1), 0.0);
    }

    #[test]
    fn all_ignored_is_degenerate() {
        let logits = Tensor4::constant(Array4::zeros([1, 2, 1, 2]));
        assert!(matches!(
            cross_entropy(&logits, &[255, 255], 255),
            Err(TensorError::DegenerateBatch)
        ));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor4::constant(Array4::zeros([1, 2, 1, 1]));
        assert!(cross_entropy(&logits, &[2], 255).is_err());
        assert!(cross_entropy(&logits, &[0, 1], 255).is_err());
    }
}
