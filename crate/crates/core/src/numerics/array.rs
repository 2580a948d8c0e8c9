use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{ensure, Result};

/// Element type of [`NdArray`]. Implemented for `f32` (training) and `f64`
/// (gradient verification).
pub trait Scalar:
    Float + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense row-major array.
#[derive(Clone, PartialEq)]
pub struct NdArray<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for NdArray<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NdArray")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> NdArray<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        ensure!(
            n == data.len(),
            Dimension,
            "shape {:?} holds {} values, got {}",
            shape,
            n,
            data.len()
        );
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut a = Self::zeros(&[n, n]);
        for i in 0..n {
            a.data[i * n + i] = T::one();
        }
        a
    }

    /// Build from nested rows; handy in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        ensure!(
            rows.iter().all(|row| row.len() == c),
            Dimension,
            "ragged rows"
        );
        let data = rows.iter().flat_map(|row| row.iter().map(|&v| T::lit(v))).collect();
        Self::from_vec(&[r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Value of a rank-0 (or single element) array.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        ensure!(
            n == self.data.len(),
            Dimension,
            "cannot reshape {:?} into {:?}",
            self.shape,
            shape
        );
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> NdArray<U> {
        NdArray {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sequential row-major sum.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale_assign(&mut self, c: T) {
        for a in &mut self.data {
            *a = *a * c;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn transpose2(&self) -> Result<Self> {
        ensure!(self.rank() == 2, Dimension, "transpose of rank-{} array", self.rank());
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_vec(&[c, r], out)
    }
}

fn check_mat(a: &[usize], what: &str) -> Result<(usize, usize)> {
    ensure!(a.len() == 2, Dimension, "{what}: expected a matrix, got shape {:?}", a);
    Ok((a[0], a[1]))
}

/// `out += a · b` for row-major `a` (m×k) and `b` (k×n).
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` for `a` (m×k) and `b` (n×k).
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

/// `out += aᵀ · b` for `a` (k×m) and `b` (k×n).
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// Matrix product of two rank-2 arrays.
pub fn matmul<T: Scalar>(a: &NdArray<T>, b: &NdArray<T>) -> Result<NdArray<T>> {
    let (m, k) = check_mat(a.shape(), "matmul lhs")?;
    let (k2, n) = check_mat(b.shape(), "matmul rhs")?;
    ensure!(
        k == k2,
        Dimension,
        "matmul inner extents differ: {:?} x {:?}",
        a.shape(),
        b.shape()
    );
    let mut out = vec![T::zero(); m * n];
    gemm_nn(a.data(), b.data(), &mut out, m, k, n);
    NdArray::from_vec(&[m, n], out)
}

/// Split a shape around `axis` into (outer, axis extent, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    ensure!(
        axis < shape.len(),
        Index,
        "axis {axis} out of range for rank {}",
        shape.len()
    );
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Max-subtracted softmax along `axis`.
pub fn softmax<T: Scalar>(x: &NdArray<T>, axis: usize) -> Result<NdArray<T>> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let mut out = x.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = T::neg_infinity();
            for j in 0..len {
                mx = mx.max(out[base + j * inner]);
            }
            let mut total = T::zero();
            for j in 0..len {
                let e = (out[base + j * inner] - mx).exp();
                out[base + j * inner] = e;
                total = total + e;
            }
            for j in 0..len {
                out[base + j * inner] = out[base + j * inner] / total;
            }
        }
    }
    NdArray::from_vec(x.shape(), out)
}

/// Layer normalization over the last axis. Returns the normalized output and
/// the per-vector reciprocal standard deviations (used by the backward pass).
pub(crate) fn layer_norm_raw<T: Scalar>(
    x: &[T],
    width: usize,
    gain: &[T],
    bias: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / width;
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    let w = T::from_usize(width).unwrap();
    for r in 0..rows {
        let v = &x[r * width..(r + 1) * width];
        let mean = v.iter().fold(T::zero(), |a, &b| a + b) / w;
        let var = v.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / w;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        for j in 0..width {
            let h = (v[j] - mean) * rs;
            xhat[r * width + j] = h;
            out[r * width + j] = h * gain[j] + bias[j];
        }
    }
    (out, xhat, rstd)
}

pub fn layer_norm<T: Scalar>(
    x: &NdArray<T>,
    gain: &NdArray<T>,
    bias: &NdArray<T>,
    eps: T,
) -> Result<NdArray<T>> {
    let width = *x.shape().last().unwrap_or(&0);
    ensure!(width > 0, Dimension, "layer_norm over an empty last axis");
    ensure!(
        gain.len() == width && bias.len() == width,
        Dimension,
        "layer_norm gain/bias {:?}/{:?} do not match width {width}",
        gain.shape(),
        bias.shape()
    );
    let (out, _, _) = layer_norm_raw(x.data(), width, gain.data(), bias.data(), eps);
    NdArray::from_vec(x.shape(), out)
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh approximation.
pub(crate) fn gelu_scalar<T: Scalar>(x: T) -> T {
    let inner = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_CUBIC) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

pub(crate) fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let a = T::lit(GELU_CUBIC);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * sech2 * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub fn gelu<T: Scalar>(x: &NdArray<T>) -> NdArray<T> {
    x.map(gelu_scalar)
}
