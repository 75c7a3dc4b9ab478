//! Dense row-major tensors and the float kernels shared by the training
//! (f64) and inference (f32) paths.
//!
//! Matrix products go through `matrixmultiply`; everything else is plain
//! loops. Kernels are pure functions, safe to call from multiple threads.

use crate::error::{Error, Result};

/// Element type for tensors: f32 on the inference path, f64 on the
/// training path. Bundles the few float ops the kernels need plus a
/// gemm dispatch so generic code stays free of per-type branches.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::iter::Sum
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// c = alpha * op(a) * op(b) + beta * c, row-major, with optional
    /// transposition of either operand. `m`, `k`, `n` are the logical
    /// product dimensions after transposition.
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn gemm(
                trans_a: bool,
                trans_b: bool,
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "gemm: lhs length");
                assert_eq!(b.len(), k * n, "gemm: rhs length");
                assert_eq!(c.len(), m * n, "gemm: out length");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for v in c.iter_mut() {
                        *v = *v * beta;
                    }
                    return;
                }
                // Row strides for a stored m×k (or k×m when transposed).
                let (rsa, csa) = if trans_a {
                    (1, m as isize)
                } else {
                    (k as isize, 1)
                };
                let (rsb, csb) = if trans_b {
                    (1, k as isize)
                } else {
                    (n as isize, 1)
                };
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
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
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense n-dimensional array, contiguous row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::ZERO; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must equal the product of the shape"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Rows of a two-dimensional tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() requires a 2-d tensor");
        self.shape[0]
    }

    /// Columns of a two-dimensional tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() requires a 2-d tensor");
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossy element-wise conversion between scalar types.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Standard matrix product of two 2-d tensors.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "matmul expects 2-d operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents differ: {m}x{k} by {k2}x{n}"
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    S::gemm(
        false,
        false,
        m,
        k,
        n,
        S::ONE,
        a.data(),
        b.data(),
        S::ZERO,
        out.data_mut(),
    );
    Ok(out)
}

/// Row-wise softmax with max subtraction. Rejects non-finite input.
pub fn softmax_rows<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    if !x.all_finite() {
        return Err(Error::Numeric("softmax input contains non-finite values".into()));
    }
    let mut out = x.clone();
    let cols = if x.shape().len() == 1 {
        x.len()
    } else {
        *x.shape().last().unwrap()
    };
    for row in out.data_mut().chunks_mut(cols) {
        softmax_slice(row);
    }
    Ok(out)
}

/// In-place stable softmax over one slice.
pub fn softmax_slice<S: Scalar>(row: &mut [S]) {
    let mut max = row[0];
    for &v in row.iter() {
        max = max.maximum(v);
    }
    let mut sum = S::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Layer normalization over the trailing dimension with population
/// statistics, then affine scale-shift.
pub fn layer_norm<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: f64,
) -> Tensor<S> {
    let d = *x.shape().last().expect("layer_norm input must be non-empty");
    assert_eq!(gamma.len(), d, "layer_norm gamma length");
    assert_eq!(beta.len(), d, "layer_norm beta length");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        layer_norm_slice(row, gamma.data(), beta.data(), eps);
    }
    out
}

/// In-place layer norm of one vector.
pub fn layer_norm_slice<S: Scalar>(row: &mut [S], gamma: &[S], beta: &[S], eps: f64) {
    let d = row.len();
    let inv_d = S::from_f64(1.0 / d as f64);
    let mean = row.iter().copied().sum::<S>() * inv_d;
    let mut var = S::ZERO;
    for &v in row.iter() {
        let c = v - mean;
        var = var + c * c;
    }
    var = var * inv_d;
    let inv_std = S::ONE / (var + S::from_f64(eps)).sqrt();
    for (i, v) in row.iter_mut().enumerate() {
        *v = (*v - mean) * inv_std * gamma[i] + beta[i];
    }
}

/// GELU in the tanh approximation, applied element-wise.
pub fn gelu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(gelu_scalar)
}

pub fn gelu_scalar<S: Scalar>(v: S) -> S {
    let half = S::from_f64(0.5);
    let c = S::from_f64(SQRT_2_OVER_PI);
    let a = S::from_f64(GELU_CUBIC);
    let inner = c * (v + a * v * v * v);
    half * v * (S::ONE + inner.tanh())
}

pub(crate) const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
pub(crate) const GELU_CUBIC: f64 = 0.044715;

/// d gelu / dx for the tanh approximation.
pub fn gelu_grad_scalar(v: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (v + GELU_CUBIC * v * v * v);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * v * sech2 * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * v * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out.data_mut()[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let m = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let out = matmul(&eye, &m).unwrap();
        assert_eq!(out.data(), m.data());
    }

    #[test]
    fn matmul_projector() {
        let p = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        let m = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let out = matmul(&p, &m).unwrap();
        assert_eq!(out.data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = crate::rng::Rng::seeded(7);
        let a = Tensor::from_vec(&[3, 4], (0..12).map(|_| rng.uniform(-2.0, 2.0)).collect());
        let b = Tensor::from_vec(&[4, 2], (0..8).map(|_| rng.uniform(-2.0, 2.0)).collect());
        let got = matmul(&a, &b).unwrap();
        let want = naive_matmul(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-12, "matmul deviates from oracle: {g} vs {w}");
        }
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn gemm_transpose_flags_match_explicit_transpose() {
        let mut rng = crate::rng::Rng::seeded(3);
        let a = Tensor::from_vec(&[4, 3], (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let b = Tensor::from_vec(&[4, 2], (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect());
        // aT: 3x4, times b 4x2 -> 3x2
        let mut c = vec![0.0; 6];
        f64::gemm(true, false, 3, 4, 2, 1.0, a.data(), b.data(), 0.0, &mut c);
        let mut at = Tensor::zeros(&[3, 4]);
        for i in 0..4 {
            for j in 0..3 {
                at.data_mut()[j * 4 + i] = a.data()[i * 3 + j];
            }
        }
        let want = naive_matmul(&at, &b);
        for (g, w) in c.iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_symmetry() {
        let x = Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 0.0]);
        let out = softmax_rows(&x).unwrap();
        for &v in out.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_inputs_do_not_overflow() {
        let x = Tensor::from_vec(&[1, 2], vec![1000.0, 1000.0]);
        let out = softmax_rows(&x).unwrap();
        assert!((out.data()[0] - 0.5).abs() < 1e-15);
        assert!((out.data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_direct_oracle() {
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]);
        let out = softmax_rows(&x).unwrap();
        let want = [0.09003057, 0.24472847, 0.66524096];
        for (g, w) in out.data().iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-7, "{g} vs {w}");
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = Tensor::from_vec(&[1, 2], vec![f64::NAN, 0.0]);
        assert!(matches!(softmax_rows(&x), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_shift_invariance_and_row_sums() {
        let mut rng = crate::rng::Rng::seeded(11);
        let x = Tensor::from_vec(&[4, 5], (0..20).map(|_| rng.uniform(-2.0, 2.0)).collect());
        let shifted = Tensor::from_vec(
            &[4, 5],
            x.data().iter().map(|v| v + 13.5).collect::<Vec<_>>(),
        );
        let a = softmax_rows(&x).unwrap();
        let b = softmax_rows(&shifted).unwrap();
        for i in 0..4 {
            let sum: f64 = a.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
        }
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_vector() {
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 1.0, 1.0]);
        let g = Tensor::from_vec(&[3], vec![1.0; 3]);
        let b = Tensor::from_vec(&[3], vec![0.0; 3]);
        let out = layer_norm(&x, &g, &b, 1e-5);
        for &v in out.data() {
            assert!(v.abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_already_normalized() {
        let x = Tensor::from_vec(&[1, 2], vec![-1.0, 1.0]);
        let g = Tensor::from_vec(&[2], vec![1.0; 2]);
        let b = Tensor::from_vec(&[2], vec![0.0; 2]);
        let out = layer_norm(&x, &g, &b, 1e-12);
        assert!((out.data()[0] + 1.0).abs() < 1e-6);
        assert!((out.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_hand_oracle() {
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]);
        let g = Tensor::from_vec(&[3], vec![1.0; 3]);
        let b = Tensor::from_vec(&[3], vec![0.0; 3]);
        let out = layer_norm(&x, &g, &b, 1e-5);
        let want = [-1.22474, 0.0, 1.22474];
        for (got, w) in out.data().iter().zip(want.iter()) {
            assert!((got - w).abs() < 1e-4, "{got} vs {w}");
        }
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = crate::rng::Rng::seeded(5);
        let x = Tensor::from_vec(&[6, 8], (0..48).map(|_| rng.uniform(-2.0, 2.0)).collect());
        let g = Tensor::from_vec(&[8], vec![1.0; 8]);
        let b = Tensor::from_vec(&[8], vec![0.0; 8]);
        let out = layer_norm(&x, &g, &b, 1e-5);
        for i in 0..6 {
            let row = out.row(i);
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() <= 1e-10, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-4, "var {var}");
        }
    }
}
