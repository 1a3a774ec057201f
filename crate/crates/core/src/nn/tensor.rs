use std::cell::RefCell;
use std::fmt::Debug;
use std::thread::LocalKey;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::{Error, Result};

/// Floating point element type of the network (f32 for training and
/// inference, f64 for gradient checking).
pub trait Real:
    Copy
    + Default
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn is_finite(self) -> bool;
    #[doc(hidden)]
    fn pool() -> &'static LocalKey<RefCell<Vec<Vec<Self>>>>;

    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the dimensions and strides must be in
    /// bounds of the corresponding buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn pool() -> &'static LocalKey<RefCell<Vec<Vec<Self>>>> {
        &F32_POOL
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn pool() -> &'static LocalKey<RefCell<Vec<Vec<Self>>>> {
        &F64_POOL
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

thread_local! {
    static F32_POOL: RefCell<Vec<Vec<f32>>> = const { RefCell::new(Vec::new()) };
    static F64_POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

const POOL_SLOTS: usize = 48;

/// A buffer of `len` elements from the per-thread pool. Contents are stale
/// unless `zeroed`.
pub(crate) fn take_buf<T: Real>(len: usize, zeroed: bool) -> Vec<T> {
    let reused = T::pool().with(|p| {
        let mut p = p.borrow_mut();
        let best = p
            .iter()
            .enumerate()
            .filter(|(_, v)| v.capacity() >= len)
            .min_by_key(|(_, v)| v.capacity())
            .map(|(i, _)| i);
        best.map(|i| p.swap_remove(i))
    });
    match reused {
        Some(mut v) => {
            if zeroed {
                v.clear();
                v.resize(len, T::ZERO);
            } else if v.len() >= len {
                v.truncate(len);
            } else {
                v.resize(len, T::ZERO);
            }
            v
        }
        None => vec![T::ZERO; len],
    }
}

/// Returns a buffer to the per-thread pool.
pub(crate) fn give_buf<T: Real>(v: Vec<T>) {
    if v.capacity() < 1024 {
        return;
    }
    T::pool().with(|p| {
        let mut p = p.borrow_mut();
        if p.len() < POOL_SLOTS {
            p.push(v);
        }
    });
}

/// `c = a * b + beta * c` for row-major buffers; `ta`/`tb` read `a`/`b`
/// as transposed (`a` stored `k x m`, `b` stored `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool, beta: T, c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "matmul operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every strided access.
    unsafe {
        T::gemm_raw(m, k, n, T::ONE, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Dense row-major tensor of rank at most 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: [usize; 4],
    rank: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![T::ZERO; n]).expect("consistent by construction")
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.len() > 4 {
            return Err(Error::invalid("tensor rank above 4"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                layer: "tensor".into(),
                expected: format!("{n} elements for {shape:?}"),
                got: data.len().to_string(),
            });
        }
        let mut dims = [1; 4];
        dims[..shape.len()].copy_from_slice(shape);
        Ok(Self {
            dims,
            rank: shape.len(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.dims[..self.rank]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Maps an 8-bit channel value linearly onto `[-1, 1]`.
#[inline]
pub fn normalize_value(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Normalizes a 66 x 200 RGB region into `[-1, 1]`.
pub fn normalize(roi: &[u8], h: usize, w: usize) -> Result<Tensor<f32>> {
    if (h, w) != (66, 200) || roi.len() != h * w * 3 {
        return Err(Error::Shape {
            layer: "normalize".into(),
            expected: "66x200x3 bytes".into(),
            got: format!("{h}x{w} with {} bytes", roi.len()),
        });
    }
    let mut data = Vec::with_capacity(roi.len());
    data.extend(roi.iter().map(|&v| normalize_value(v)));
    Tensor::from_vec(&[h, w, 3], data)
}

/// Writes normalized values of `roi` into `out` without allocating.
pub fn normalize_into(roi: &[u8], out: &mut [f32]) {
    for (o, &v) in out.iter_mut().zip(roi) {
        *o = normalize_value(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints_and_midpoint() {
        assert_eq!(normalize_value(0), -1.0);
        assert!((normalize_value(255) - 1.0).abs() <= f32::EPSILON);
        assert!((normalize_value(127) - (-0.003_921_569)).abs() < 1e-7);
    }

    #[test]
    fn normalize_is_affine() {
        for a in (0..=255u16).step_by(7) {
            for b in (a % 2..=255).step_by(22) {
                let (a8, b8) = (a as u8, b as u8);
                let mid = ((a + b) / 2) as u8;
                let lhs = normalize_value(a8) + normalize_value(b8);
                let rhs = 2.0 * normalize_value(mid);
                assert!((lhs - rhs).abs() < 1e-6, "{a} {b}");
            }
        }
    }

    #[test]
    fn normalize_rejects_wrong_dims() {
        assert!(normalize(&[0; 66 * 199 * 3], 66, 199).is_err());
        assert!(normalize(&[0; 10], 66, 200).is_err());
        let t = normalize(&vec![255; 66 * 200 * 3], 66, 200).unwrap();
        assert_eq!(t.shape(), &[66, 200, 3]);
    }

    #[test]
    fn matmul_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        matmul(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        matmul(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        matmul(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
