//! Dense row-major `f64` tensors and the primitives the layers are built from.

pub(crate) mod gemm;

use std::fmt;

use crate::error::{Error, Result};

/// Extents of a 4-D activation in N, C, H, W order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "extents must be positive, got {n}x{c}x{h}x{w}"
            )));
        }
        Ok(Shape4 { n, c, h, w })
    }

    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one sample (C·H·W).
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn to_vec(self) -> Vec<usize> {
        vec![self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// Dense tensor. The element count always equals the product of the shape.
///
/// Extents are positive, except that the leading (batch) extent may be zero
/// so an empty batch can still carry its per-sample shape.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

fn check_extents(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::ShapeMismatch("rank-0 shape".into()));
    }
    if shape[1..].iter().any(|&e| e == 0) {
        return Err(Error::ShapeMismatch(format!(
            "non-leading extents must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_extents(&shape)?;
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {count} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Panics on an invalid shape; for shapes known valid by construction.
    pub fn full(shape: &[usize], value: f64) -> Self {
        check_extents(shape).expect("invalid tensor shape");
        let count = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; count],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn from_shape4(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        Self::new(shape.to_vec(), data)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Interprets the tensor as N×C×H×W.
    pub fn shape4(&self) -> Result<Shape4> {
        match self.shape[..] {
            [n, c, h, w] => Shape4::new(n, c, h, w),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a 4-D tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a 2-D tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        check_extents(shape)?;
        let count: usize = shape.iter().product();
        if count != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        let [_, cs, hs, ws] = self.shape[..] else {
            panic!("at4 on non 4-D tensor {:?}", self.shape)
        };
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(self, other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(self, other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(self, other, BinaryOp::Mul)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err("add_assign", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Index of the first maximal element in row-major order.
    pub fn argmax(&self) -> usize {
        first_argmax(&self.data)
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }
}

pub(crate) fn first_argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{op}: {a:?} vs {b:?}"))
}

pub fn elementwise(a: &Tensor, b: &Tensor, op: BinaryOp) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(shape_err("elementwise", &a.shape, &b.shape));
    }
    let f = match op {
        BinaryOp::Add => |x: f64, y: f64| x + y,
        BinaryOp::Sub => |x: f64, y: f64| x - y,
        BinaryOp::Mul => |x: f64, y: f64| x * y,
    };
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    let out = Tensor {
        shape: a.shape.clone(),
        data,
    };
    out.ensure_finite("elementwise")?;
    Ok(out)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(shape_err("matmul", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    gemm::gemm_nn(m, k, n, &a.data, &b.data, &mut out, false);
    let out = Tensor::new(vec![m, n], out)?;
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// Concatenates N×Cᵢ×H×W tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(Error::EmptyInput)?;
    let s0 = first.shape4()?;
    let mut total_c = 0;
    for p in parts {
        let s = p.shape4()?;
        if s.n != s0.n || s.h != s0.h || s.w != s0.w {
            return Err(shape_err("concat_channels", &first.shape, &p.shape));
        }
        total_c += s.c;
    }
    let plane = s0.plane();
    let mut data = Vec::with_capacity(s0.n * total_c * plane);
    for n in 0..s0.n {
        for p in parts {
            let c = p.shape[1];
            data.extend_from_slice(&p.data[n * c * plane..(n + 1) * c * plane]);
        }
    }
    Tensor::new(vec![s0.n, total_c, s0.h, s0.w], data)
}

/// Channels `[start, start + len)` of an N×C×H×W tensor.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let s = x.shape4()?;
    if len == 0 || start + len > s.c {
        return Err(Error::ShapeMismatch(format!(
            "channel slice {start}..{} out of range for {} channels",
            start + len,
            s.c
        )));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * len * plane);
    for n in 0..s.n {
        let base = (n * s.c + start) * plane;
        data.extend_from_slice(&x.data[base..base + len * plane]);
    }
    Tensor::new(vec![s.n, len, s.h, s.w], data)
}

/// Output shape of a reduction plus, for every input element, its output slot.
fn reduction_plan(shape: &[usize], axes: &[usize], keep_dims: bool) -> Result<(Vec<usize>, Vec<usize>)> {
    let rank = shape.len();
    let mut reduced = vec![false; rank];
    for &ax in axes {
        if ax >= rank {
            return Err(Error::InvalidAxis { axis: ax, rank });
        }
        reduced[ax] = true;
    }
    let kept: Vec<usize> = (0..rank)
        .map(|d| if reduced[d] { 1 } else { shape[d] })
        .collect();
    let out_shape = if keep_dims {
        kept.clone()
    } else {
        let s: Vec<usize> = (0..rank).filter(|&d| !reduced[d]).map(|d| shape[d]).collect();
        if s.is_empty() {
            vec![1]
        } else {
            s
        }
    };
    let count: usize = shape.iter().product();
    let mut slots = Vec::with_capacity(count);
    let mut idx = vec![0usize; rank];
    for _ in 0..count {
        let mut slot = 0;
        for d in 0..rank {
            slot = slot * kept[d] + if reduced[d] { 0 } else { idx[d] };
        }
        slots.push(slot);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok((out_shape, slots))
}

/// Reduces over `axes`. Reduced extents are dropped, or kept as 1 when `keep_dims`.
pub fn reduce(a: &Tensor, axes: &[usize], op: ReduceOp, keep_dims: bool) -> Result<Tensor> {
    if op == ReduceOp::Max {
        return reduce_max(a, axes, keep_dims).map(|(t, _)| t);
    }
    let (out_shape, slots) = reduction_plan(&a.shape, axes, keep_dims)?;
    let out_len: usize = out_shape.iter().product();
    let mut out = vec![0.0; out_len];
    for (&slot, &v) in slots.iter().zip(&a.data) {
        out[slot] += v;
    }
    if op == ReduceOp::Mean {
        let per = (a.data.len() / out_len.max(1)) as f64;
        for v in &mut out {
            *v /= per;
        }
    }
    Tensor::new(out_shape, out)
}

/// Max reduction returning, per output element, the flat input index of the
/// first maximizer in row-major order.
pub fn reduce_max(a: &Tensor, axes: &[usize], keep_dims: bool) -> Result<(Tensor, Vec<usize>)> {
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (out_shape, slots) = reduction_plan(&a.shape, axes, keep_dims)?;
    let out_len: usize = out_shape.iter().product();
    let mut best = vec![f64::NEG_INFINITY; out_len];
    let mut arg = vec![usize::MAX; out_len];
    for (i, (&slot, &v)) in slots.iter().zip(&a.data).enumerate() {
        if arg[slot] == usize::MAX || v > best[slot] {
            best[slot] = v;
            arg[slot] = i;
        }
    }
    Ok((Tensor::new(out_shape, best)?, arg))
}
