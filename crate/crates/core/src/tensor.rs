//! Dense row-major n-dimensional arrays.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of the network engine.
///
/// Training and checkpoints use `f32`; the gradient checker instantiates the
/// same layers with `f64` so finite differences are not swamped by rounding.
pub trait Scalar:
    Float + Debug + Default + Sum + Send + Sync + 'static + std::ops::AddAssign + std::ops::MulAssign
{
    fn from_f64(x: f64) -> Self;

    /// `c = alpha * a(m×k) · b(k×n) + beta * c`, all row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                // matrix-vector and outer-product shapes are faster as plain loops
                if n == 1 {
                    return gemv_impl(m, k, alpha, a, a_trans, b, beta, c);
                }
                if k == 1 {
                    for i in 0..m {
                        let ai = alpha * a[i];
                        let row = &mut c[i * n..(i + 1) * n];
                        for (cv, &bv) in row.iter_mut().zip(&b[..n]) {
                            *cv = if beta == 0.0 { ai * bv } else { beta * *cv + ai * bv };
                        }
                    }
                    return;
                }
                // row/column strides for the (possibly transposed) operands
                let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: bounds asserted above; strides describe dense row-major buffers.
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

/// `c = alpha * op(a) · b + beta * c` for a single column `b` of length `k`.
#[allow(clippy::too_many_arguments)]
fn gemv_impl<T: Scalar>(m: usize, k: usize, alpha: T, a: &[T], a_trans: bool, b: &[T], beta: T, c: &mut [T]) {
    let b = &b[..k];
    if a_trans {
        // a is stored k×m: accumulate scaled rows
        for cv in c[..m].iter_mut() {
            *cv = if beta == T::zero() { T::zero() } else { beta * *cv };
        }
        for (p, &bp) in b.iter().enumerate() {
            let s = alpha * bp;
            for (cv, &av) in c[..m].iter_mut().zip(&a[p * m..(p + 1) * m]) {
                *cv += s * av;
            }
        }
    } else {
        for (i, cv) in c[..m].iter_mut().enumerate() {
            let row = &a[i * k..(i + 1) * k];
            let mut acc = [T::zero(); 8];
            let chunks = k / 8;
            for ch in 0..chunks {
                for l in 0..8 {
                    acc[l] += row[ch * 8 + l] * b[ch * 8 + l];
                }
            }
            let mut dot = acc.iter().fold(T::zero(), |x, &y| x + y);
            for p in chunks * 8..k {
                dot += row[p] * b[p];
            }
            *cv = if beta == T::zero() { alpha * dot } else { alpha * dot + beta * *cv };
        }
    }
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Config(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                expected: shape.to_vec(),
                actual: self.shape,
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Shape {
                expected: shape.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(what.to_string()))
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        other.expect_shape(&self.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Converts element type, e.g. an `f32` network to `f64` for gradient checks.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().to_f64().unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }
}

/// Output size of a sliding window, or `None` if it is not a positive integer.
pub fn window_output(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}
