//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is independent
//! of every backward closure it checks.

use rand::Rng;

use crate::error::Result;
use crate::graph::Tensor4;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively:
/// with an O(1) loss and a 1e-5 step, central differences carry roughly 1e-10
/// of roundoff, so a 1e-4 relative bound is only meaningful above this floor.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tol: f64) -> bool {
        !self.probes.is_empty() && self.probes.iter().all(|p| p.rel_error < tol)
    }

    /// True when some probed entry has a clearly nonzero gradient.
    pub fn any_nonzero(&self) -> bool {
        self.probes
            .iter()
            .any(|p| p.numeric.abs() > MAGNITUDE_FLOOR)
    }
}

fn eval<F: FnMut() -> Result<Tensor4>>(loss: &mut F) -> Result<f64> {
    loss()?.item()
}

/// Compares backprop gradients of `loss` with respect to the given leaves
/// against central differences at the listed `(param, element)` coordinates.
pub fn check_entries<F>(
    params: &[Tensor4],
    entries: &[(usize, usize)],
    step: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor4>,
{
    for p in params {
        p.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Option<crate::Array4>> =
        params.iter().map(|p| p.grad().map(|g| g.clone())).collect();

    let mut report = GradCheckReport::default();
    for &(pi, idx) in entries {
        let p = &params[pi];
        let original = p.value().data()[idx];
        p.value_mut().data_mut()[idx] = original + step;
        let up = eval(&mut loss)?;
        p.value_mut().data_mut()[idx] = original - step;
        let down = eval(&mut loss)?;
        p.value_mut().data_mut()[idx] = original;

        let numeric = (up - down) / (2.0 * step);
        let a = analytic[pi].as_ref().map_or(0.0, |g| g.data()[idx]);
        report.probes.push(Probe {
            param: pi,
            index: idx,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    for p in params {
        p.zero_grad();
    }
    Ok(report)
}

/// Draws `samples` random `(param, element)` coordinates, weighting each
/// leaf by its element count.
pub fn sample_entries<R: Rng + ?Sized>(
    params: &[Tensor4],
    samples: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let sizes: Vec<usize> = params.iter().map(|p| p.shape().numel()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    (0..samples)
        .map(|_| {
            let mut k = rng.gen_range(0..total);
            let mut pi = 0;
            while k >= sizes[pi] {
                k -= sizes[pi];
                pi += 1;
            }
            (pi, k)
        })
        .collect()
}

/// Checks every element of every leaf.
pub fn check_all<F>(params: &[Tensor4], step: f64, loss: F) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor4>,
{
    let entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.shape().numel()).map(move |i| (pi, i)))
        .collect();
    check_entries(params, &entries, step, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ops, Array4};

    #[test]
    fn cubic_gradient_checks_out() {
        let x = Tensor4::parameter(Array4::from_vec([1, 1, 1, 3], vec![0.5, -1.2, 2.0]).unwrap());
        let report = check_all(std::slice::from_ref(&x), DEFAULT_STEP, || {
            let sq = ops::mul(&x, &x)?;
            Ok(ops::sum(&ops::mul(&sq, &x)?))
        })
        .unwrap();
        assert_eq!(report.probes.len(), 3);
        assert!(report.passes(1e-8), "{:?}", report.worst());
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // relu's derivative is misreported by a detached branch
        let x = Tensor4::parameter(Array4::from_vec([1, 1, 1, 1], vec![0.7]).unwrap());
        let report = check_all(std::slice::from_ref(&x), DEFAULT_STEP, || {
            let frozen = x.detach();
            Ok(ops::sum(&ops::mul(&x, &frozen)?))
        })
        .unwrap();
        assert!(!report.passes(1e-4));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-4).abs() < 1e-15);
    }
}
