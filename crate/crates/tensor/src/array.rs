use crate::error::{Result, TensorError};
use crate::shape::Shape4;

/// Dense row-major storage for a rank-4 array (w innermost, n outermost).
#[derive(Debug, Clone, PartialEq)]
pub struct Array4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Array4 {
    pub fn zeros(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Shape4>, value: f64) -> Self {
        let shape = shape.into();
        Array4 {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape4::scalar(), value)
    }

    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(TensorError::invalid(
                "from_vec",
                format!(
                    "shape {shape} needs {} elements, got {}",
                    shape.numel(),
                    data.len()
                ),
            ));
        }
        Ok(Array4 { shape, data })
    }

    pub fn from_fn(
        shape: impl Into<Shape4>,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Array4 { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        debug_assert!(n < s.n && c < s.c && h < s.h && w < s.w);
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f64) {
        let i = self.offset(n, c, h, w);
        self.data[i] = value;
    }

    /// The contiguous (h, w) plane of channel `c` in batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of batch item `n`, contiguous.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.c * self.shape.plane();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Array4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Array4, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(TensorError::mismatch("zip_map", self.shape, other.shape));
        }
        Ok(Array4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &Array4) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::mismatch("add_assign", self.shape, other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &Array4) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Channel block `[start, start + len)` copied into a new array.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Array4> {
        let s = self.shape;
        if start + len > s.c || len == 0 {
            return Err(TensorError::invalid(
                "channel_slice",
                format!("range {start}..{} out of {} channels", start + len, s.c),
            ));
        }
        let out_shape = s.with_c(len);
        let p = s.plane();
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Array4 {
            shape: out_shape,
            data,
        })
    }

    /// Mirror along the width axis.
    pub fn flip_w(&self) -> Array4 {
        let s = self.shape;
        let mut out = self.clone();
        for row in out.data.chunks_mut(s.w) {
            row.reverse();
        }
        debug_assert_eq!(out.data.len(), s.numel());
        out
    }

    /// Softmax across the channel axis at each (n, h, w) location.
    pub fn softmax_channels(&self) -> Array4 {
        let s = self.shape;
        let p = s.plane();
        let mut out = self.clone();
        for n in 0..s.n {
            let item = out.item_mut(n);
            for i in 0..p {
                let mut max = f64::NEG_INFINITY;
                for c in 0..s.c {
                    max = max.max(item[c * p + i]);
                }
                let mut total = 0.0;
                for c in 0..s.c {
                    let e = (item[c * p + i] - max).exp();
                    item[c * p + i] = e;
                    total += e;
                }
                for c in 0..s.c {
                    item[c * p + i] /= total;
                }
            }
        }
        out
    }

    /// Index of the largest channel at each (n, h, w), laid out as n·h·w.
    pub fn argmax_channels(&self) -> Vec<usize> {
        let s = self.shape;
        let p = s.plane();
        let mut out = Vec::with_capacity(s.n * p);
        for n in 0..s.n {
            let item = self.item(n);
            for i in 0..p {
                let mut best = 0;
                for c in 1..s.c {
                    if item[c * p + i] > item[best * p + i] {
                        best = c;
                    }
                }
                out.push(best);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Array4::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        let a = Array4::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.at(0, 1, 0, 0), 3.0);
    }

    #[test]
    fn flip_twice_is_identity() {
        let a = Array4::from_fn([2, 2, 3, 5], |n, c, h, w| {
            (n * 100 + c * 10 + h) as f64 + w as f64 * 0.1
        });
        assert_eq!(a.flip_w().flip_w(), a);
        assert_eq!(a.flip_w().at(1, 1, 2, 0), a.at(1, 1, 2, 4));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let a = Array4::from_fn([2, 3, 2, 2], |n, c, h, w| {
            (n + 2 * c + h * w) as f64 * 0.7 - 1.0
        });
        let p = a.softmax_channels();
        for n in 0..2 {
            for h in 0..2 {
                for w in 0..2 {
                    let s: f64 = (0..3).map(|c| p.at(n, c, h, w)).sum();
                    assert!((s - 1.0).abs() < 1e-15);
                }
            }
        }
        assert_eq!(a.argmax_channels(), vec![2; 8]);
    }
}
