use std::borrow::Cow;
use std::fmt::Debug;

use num_traits::Float;

/// Floating-point element type of a graph.
///
/// Training runs in `f32`; gradient checks run the same graph in `f64`.
pub trait Real: Float + Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32_slice(v: &[f32]) -> Cow<'_, [Self]>;

    /// Subnormals become zero; they slow arithmetic by orders of magnitude.
    #[inline]
    fn flush(self) -> Self {
        if self.classify() == std::num::FpCategory::Subnormal {
            Self::zero()
        } else {
            self
        }
    }

    /// `c = a * b (+ c)` on row-major buffers with optional transposes.
    #[allow(clippy::too_many_arguments)]
    fn matmul(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        c: &mut [Self],
        accumulate: bool,
    );
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // logical (rows x cols); stored transposed means storage is (cols x rows)
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path, $cast:expr) => {
        impl Real for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn from_f32_slice(v: &[f32]) -> Cow<'_, [Self]> {
                $cast(v)
            }
            fn matmul(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, a_trans);
                let (rsb, csb) = strides(k, n, b_trans);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: bounds asserted above; strides describe in-bounds
                // row-major (or transposed) layouts of those buffers.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
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

fn borrow_f32(v: &[f32]) -> Cow<'_, [f32]> {
    Cow::Borrowed(v)
}

fn widen_f32(v: &[f32]) -> Cow<'_, [f64]> {
    Cow::Owned(v.iter().map(|&x| x as f64).collect())
}

impl_real!(f32, matrixmultiply::sgemm, borrow_f32);
impl_real!(f64, matrixmultiply::dgemm, widen_f32);

/// Dense row-major matrix. Batches are rows, features are columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![R::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<R>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::from_vec(rows, cols, data.iter().map(|&v| R::from_f64(v)).collect())
    }

    pub fn from_rows<const D: usize>(rows: &[[f64; D]]) -> Self {
        let data = rows.iter().flatten().map(|&v| R::from_f64(v)).collect();
        Self::from_vec(rows.len(), D, data)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![R::from_f64(v)])
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> R {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[R] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<R>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub(crate) fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}
