//! Row-major dense arrays, feature maps and the handful of kernels the rest
//! of the crate needs (matrix product, softmax, element-wise arithmetic).

use std::ops::Range;

use crate::error::{Error, Result};

/// Contiguous row-major array of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    /// Wraps `data` with the given `shape`.
    ///
    /// Fails if the element count does not match or any value is non-finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::arg(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Builds an array by evaluating `f` at every flat index.
    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(f).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(vec![n, n]);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &extent) in index.iter().zip(&self.shape) {
            if i >= extent {
                return None;
            }
            off = off * extent + i;
        }
        Some(off)
    }

    /// Value at a multi-dimensional index. Panics when out of bounds.
    pub fn at(&self, index: &[usize]) -> f64 {
        let off = self
            .offset(index)
            .unwrap_or_else(|| panic!("index {index:?} out of bounds for {:?}", self.shape));
        self.data[off]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self
            .offset(index)
            .unwrap_or_else(|| panic!("index {index:?} out of bounds for {:?}", self.shape));
        self.data[off] = value;
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::arg(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    fn require_matrix(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::arg(format!(
                "{what} must be 2-D, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Row count of a 2-D array. Panics for other ranks.
    pub fn rows(&self) -> usize {
        assert_eq!(self.ndim(), 2, "rows() on non-matrix");
        self.shape[0]
    }

    /// Column count of a 2-D array. Panics for other ranks.
    pub fn cols(&self) -> usize {
        assert_eq!(self.ndim(), 2, "cols() on non-matrix");
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Copies a contiguous column range of a matrix.
    pub fn columns(&self, range: Range<usize>) -> Result<Self> {
        let (r, c) = self.require_matrix("columns()")?;
        if range.start > range.end || range.end > c {
            return Err(Error::arg(format!("column range {range:?} outside 0..{c}")));
        }
        let width = range.len();
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + range.start..i * c + range.end]);
        }
        Ok(Self {
            shape: vec![r, width],
            data,
        })
    }

    /// Copies a subset of rows, in the order given.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let (r, c) = self.require_matrix("select_rows()")?;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::arg(format!("row {i} outside 0..{r}")));
            }
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Ok(Self {
            shape: vec![rows.len(), c],
            data,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.require_matrix("transpose()")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data,
        })
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &DenseArray) -> Result<Self> {
        let (m, k) = self.require_matrix("matmul lhs")?;
        let (k2, n) = other.require_matrix("matmul rhs")?;
        if k != k2 {
            return Err(Error::arg(format!(
                "matmul inner dimensions differ: {m}x{k} · {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        // i-k-j order keeps the inner loop contiguous in both `other` and `out`.
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    fn zip_with(&self, other: &DenseArray, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::arg(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &DenseArray) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseArray) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &DenseArray) -> Result<f64> {
        let diff = self.sub(other)?;
        Ok(diff.data.iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (r, _) = self.require_matrix("softmax_rows()")?;
        let mut out = self.clone();
        for i in 0..r {
            let probs = softmax(self.row(i))?;
            out.row_mut(i).copy_from_slice(&probs);
        }
        Ok(out)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("softmax input contains non-finite values"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log Σ exp(v)`, computed with max-subtraction.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One level of a feature pyramid: a `(B, C, H, W)` array.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    array: DenseArray,
}

impl FeatureMap {
    pub fn new(array: DenseArray) -> Result<Self> {
        if array.ndim() != 4 {
            return Err(Error::arg(format!(
                "feature map must be (B, C, H, W), got shape {:?}",
                array.shape()
            )));
        }
        Ok(Self { array })
    }

    pub fn from_vec(b: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(DenseArray::new(vec![b, c, h, w], data)?)
    }

    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            array: DenseArray::zeros(vec![b, c, h, w]),
        }
    }

    pub fn batch(&self) -> usize {
        self.array.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.array.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.array.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.array.shape()[3]
    }

    pub fn spatial_len(&self) -> usize {
        self.height() * self.width()
    }

    /// The `H·W` plane of sample `b`, channel `c`.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let hw = self.spatial_len();
        let start = (b * self.channels() + c) * hw;
        &self.array.data()[start..start + hw]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let hw = self.spatial_len();
        let start = (b * self.channels() + c) * hw;
        &mut self.array.data_mut()[start..start + hw]
    }

    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.array.at(&[b, c, h, w])
    }

    pub fn as_array(&self) -> &DenseArray {
        &self.array
    }

    pub fn into_array(self) -> DenseArray {
        self.array
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            array: self.array.scale(k),
        }
    }

    /// Tokens of sample `b` as an `(H·W) × C` matrix, row index `h·W + w`.
    pub fn tokens(&self, b: usize) -> Result<DenseArray> {
        if b >= self.batch() {
            return Err(Error::arg(format!("sample {b} outside batch {}", self.batch())));
        }
        let (c, hw) = (self.channels(), self.spatial_len());
        let mut data = vec![0.0; hw * c];
        for ch in 0..c {
            for (pos, &v) in self.plane(b, ch).iter().enumerate() {
                data[pos * c + ch] = v;
            }
        }
        DenseArray::new(vec![hw, c], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DenseArray {
        DenseArray::from_fn(vec![r, c], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn softmax_uniform_and_singleton() {
        let p = softmax(&[0.0; 4]).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(softmax(&[-123.4]).unwrap(), vec![1.0]);
        assert_eq!(softmax(&[1e300]).unwrap(), vec![1.0]);
    }

    #[test]
    fn softmax_log_ratio() {
        let p = softmax(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(matches!(softmax(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 3, 3);
        let out = DenseArray::identity(3).matmul(&a).unwrap();
        assert_eq!(out, a);
        let two = DenseArray::new(vec![1, 1], vec![2.0]).unwrap();
        let three = DenseArray::new(vec![1, 1], vec![3.0]).unwrap();
        assert_eq!(two.matmul(&three).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 2);
        let got = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.at(&[i, k]) * b.at(&[k, j]);
                }
                assert!((got.at(&[i, j]) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = DenseArray::zeros(vec![2, 3]);
        assert!(a.matmul(&DenseArray::zeros(vec![2, 3])).is_err());
    }

    #[test]
    fn new_rejects_bad_inputs() {
        assert!(DenseArray::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseArray::new(vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn tokens_layout() {
        let f = FeatureMap::from_vec(1, 2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = f.tokens(0).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 1..12), c in -100.0f64..100.0) {
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_order_preserving(v in prop::collection::vec(-20.0f64..20.0, 2..10)) {
            let p = softmax(&v).unwrap();
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] > v[j] {
                        prop_assert!(p[i] > p[j]);
                    }
                }
            }
        }

        #[test]
        fn matmul_associative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 3, 4);
            let b = random_matrix(&mut rng, 4, 5);
            let c = random_matrix(&mut rng, 5, 2);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-9);
        }
    }
}
