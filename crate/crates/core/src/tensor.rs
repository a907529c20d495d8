//! Dense tensors with reverse-mode differentiation.
//!
//! A [`Tape`] records primitive operations as they execute; [`Tape::backward`]
//! replays them in reverse to accumulate gradients. The primitive set is
//! exactly what the model layers need: matmul, elementwise maps, softmax,
//! reductions, concatenation and row access. No implicit broadcasting — the
//! only scalar-tensor ops are `scale` and `add_const`, and row-bias addition
//! is its own explicit primitive.
//!
//! Precision is a build-time choice: 64-bit by default (gradient checks need
//! the headroom), 32-bit behind the `real32` feature for training speed. The
//! semantics are identical.

use crate::error::Error;

#[cfg(feature = "real32")]
pub type Real = f32;
#[cfg(not(feature = "real32"))]
pub type Real = f64;

/// Slack for assertions that are exact up to accumulated rounding, scaled
/// to the build precision.
#[cfg(feature = "real32")]
pub const ROUND_TOL: Real = 1e-4;
#[cfg(not(feature = "real32"))]
pub const ROUND_TOL: Real = 1e-12;

/// Dense row-major tensor. Rank 0 (scalar) through rank N storage; the tape
/// primitives operate on ranks 1 and 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: Real) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: Real) -> Tensor {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<Real>) -> Result<Tensor, Error> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// 2-D tensor from row slices. Rows must have equal length.
    pub fn from_rows(rows: &[Vec<Real>]) -> Result<Tensor, Error> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Shape(format!(
                    "ragged rows: expected {c} columns, got {}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            shape: vec![r, c],
            data,
        })
    }

    pub fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> Real {
        self.data[r * self.shape[1] + c]
    }

    /// The single element of a scalar or one-element tensor.
    pub fn item(&self) -> Real {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Real {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max)
    }
}

/// Standard normal CDF, computed in f64 regardless of build precision.
pub fn normal_cdf(x: Real) -> Real {
    (0.5 * (1.0 + libm::erf(x as f64 / std::f64::consts::SQRT_2))) as Real
}

/// Standard normal density.
pub fn normal_pdf(x: Real) -> Real {
    let x = x as f64;
    ((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()) as Real
}

fn gelu_scalar(x: Real) -> Real {
    x * normal_cdf(x)
}

fn gelu_derivative(x: Real) -> Real {
    normal_cdf(x) + x * normal_pdf(x)
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    AddConst(Var),
    AddRowBias(Var, Var),
    Tanh(Var),
    Gelu(Var),
    Exp(Var),
    Ln(Var),
    Softmax(Var, usize),
    MeanAxis(Var, usize),
    SumAxis(Var, usize),
    MeanAll(Var),
    SumAll(Var),
    Concat(usize, Vec<Var>),
    Row(Var, usize),
    Reshape(Var),
    Pick(Var, usize),
    LayerNorm(Var, Real),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of primitive operations. Replaying it backward visits the
/// operations in exact reverse order of the forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Axis iteration layout for reductions/softmax on rank-1/2 tensors.
fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize), Error> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// With recording off, operations compute values through the same code
    /// paths but the tape stores no dependencies; backward yields zeros.
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0 as usize].value
    }

    fn push(&mut self, value: Tensor, op: Op, opname: &str) -> Result<Var, Error> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{opname} produced NaN/Inf")));
        }
        let op = if self.recording { op } else { Op::Leaf };
        let id = self.nodes.len();
        self.nodes.push(Node { value, op });
        Ok(Var(id as u32))
    }

    /// Leaf tensor (parameter or input).
    pub fn var(&mut self, value: Tensor) -> Result<Var, Error> {
        self.push(value, Op::Leaf, "var")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(Error::Shape(format!(
                "matmul: incompatible shapes {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        self.push(Tensor::from_vec(&[m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, Error> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::Shape(format!(
                "transpose: need rank 2, got {:?}",
                ta.shape()
            )));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ta.data()[i * c + j];
            }
        }
        self.push(
            Tensor::from_vec(&[c, r], out)?,
            Op::Transpose(a),
            "transpose",
        )
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(Real, Real) -> Real,
        op: Op,
        name: &str,
    ) -> Result<Var, Error> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "{name}: shape mismatch {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<Real> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_vec(&shape, data)?, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    fn unary_elementwise(
        &mut self,
        a: Var,
        f: impl Fn(Real) -> Real,
        op: Op,
        name: &str,
    ) -> Result<Var, Error> {
        let ta = self.value(a);
        let data: Vec<Real> = ta.data().iter().map(|&x| f(x)).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_vec(&shape, data)?, op, name)
    }

    /// Multiply every element by a constant scalar.
    pub fn scale(&mut self, a: Var, c: Real) -> Result<Var, Error> {
        self.unary_elementwise(a, |x| x * c, Op::Scale(a, c), "scale")
    }

    /// Add a constant scalar to every element. The constant does not
    /// participate in gradients.
    pub fn add_const(&mut self, a: Var, c: Real) -> Result<Var, Error> {
        self.unary_elementwise(a, |x| x + c, Op::AddConst(a), "add_const")
    }

    /// out[r][c] = mat[r][c] + bias[c]. The one deliberate row-wise op;
    /// there is no general broadcasting.
    pub fn add_row_bias(&mut self, mat: Var, bias: Var) -> Result<Var, Error> {
        let (tm, tb) = (self.value(mat), self.value(bias));
        if tm.rank() != 2 || tb.rank() != 1 || tm.cols() != tb.numel() {
            return Err(Error::Shape(format!(
                "add_row_bias: matrix {:?} vs bias {:?}",
                tm.shape(),
                tb.shape()
            )));
        }
        let (r, c) = (tm.rows(), tm.cols());
        let mut data = tm.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += tb.data()[j];
            }
        }
        self.push(
            Tensor::from_vec(&[r, c], data)?,
            Op::AddRowBias(mat, bias),
            "add_row_bias",
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, Error> {
        self.unary_elementwise(a, |x| x.tanh(), Op::Tanh(a), "tanh")
    }

    /// GELU with the exact Gaussian CDF: x * Phi(x).
    pub fn gelu(&mut self, a: Var) -> Result<Var, Error> {
        self.unary_elementwise(a, gelu_scalar, Op::Gelu(a), "gelu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, Error> {
        self.unary_elementwise(a, |x| x.exp(), Op::Exp(a), "exp")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, Error> {
        self.unary_elementwise(a, |x| x.ln(), Op::Ln(a), "ln")
    }

    /// Stable softmax (max subtraction) along `axis` of a rank-1/2 tensor.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, Error> {
        let ta = self.value(a);
        if ta.rank() == 0 || ta.rank() > 2 {
            return Err(Error::Shape(format!(
                "softmax: need rank 1 or 2, got {:?}",
                ta.shape()
            )));
        }
        let (outer, len, inner) = axis_layout(ta.shape(), axis)?;
        if len == 0 {
            return Err(Error::Shape("softmax over empty axis".into()));
        }
        let mut out = vec![0.0; ta.numel()];
        let src = ta.data();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * len * inner + j * inner + i;
                let mut max = Real::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(src[idx(j)]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[idx(j)] /= sum;
                }
            }
        }
        let shape = ta.shape().to_vec();
        self.push(
            Tensor::from_vec(&shape, out)?,
            Op::Softmax(a, axis),
            "softmax",
        )
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var, Error> {
        let ta = self.value(a);
        if ta.rank() == 0 || ta.rank() > 2 {
            return Err(Error::Shape(format!(
                "reduce: need rank 1 or 2, got {:?}",
                ta.shape()
            )));
        }
        let (outer, len, inner) = axis_layout(ta.shape(), axis)?;
        if len == 0 {
            return Err(Error::Shape("reduce over empty axis".into()));
        }
        let mut out_shape = ta.shape().to_vec();
        out_shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        let src = ta.data();
        for o in 0..outer {
            for i in 0..inner {
                let mut s = 0.0;
                for j in 0..len {
                    s += src[o * len * inner + j * inner + i];
                }
                out[o * inner + i] = if mean { s / len as Real } else { s };
            }
        }
        let op = if mean {
            Op::MeanAxis(a, axis)
        } else {
            Op::SumAxis(a, axis)
        };
        self.push(Tensor::from_vec(&out_shape, out)?, op, "reduce")
    }

    /// Arithmetic mean along an axis; the axis is collapsed.
    pub fn reduce_mean(&mut self, a: Var, axis: usize) -> Result<Var, Error> {
        self.reduce_axis(a, axis, true)
    }

    pub fn reduce_sum(&mut self, a: Var, axis: usize) -> Result<Var, Error> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, Error> {
        let ta = self.value(a);
        if ta.numel() == 0 {
            return Err(Error::Shape("mean_all of empty tensor".into()));
        }
        let s: Real = ta.data().iter().sum::<Real>() / ta.numel() as Real;
        self.push(Tensor::scalar(s), Op::MeanAll(a), "mean_all")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, Error> {
        let s: Real = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), "sum_all")
    }

    /// Concatenate two tensors along `axis` (rank 1 or 2; shapes must agree
    /// on every other axis).
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var, Error> {
        self.concat_many(&[a, b], axis)
    }

    /// N-ary concatenation along `axis`.
    pub fn concat_many(&mut self, parts: &[Var], axis: usize) -> Result<Var, Error> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let rank = self.value(parts[0]).rank();
        if rank == 0 || rank > 2 || axis >= rank {
            return Err(Error::Shape(format!(
                "concat: axis {axis} invalid for rank {rank}"
            )));
        }
        for &p in parts {
            let tp = self.value(p);
            if tp.rank() != rank {
                return Err(Error::Shape(format!(
                    "concat: rank mismatch {:?} vs {:?}",
                    self.value(parts[0]).shape(),
                    tp.shape()
                )));
            }
            for d in 0..rank {
                if d != axis && tp.shape()[d] != self.value(parts[0]).shape()[d] {
                    return Err(Error::Shape(format!(
                        "concat: incompatible shapes {:?} vs {:?} on axis {d}",
                        self.value(parts[0]).shape(),
                        tp.shape()
                    )));
                }
            }
        }
        let mut out_shape = self.value(parts[0]).shape().to_vec();
        out_shape[axis] = parts.iter().map(|&p| self.value(p).shape()[axis]).sum();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(self.value(p).data());
            }
        } else {
            // axis == 1, rank 2: interleave rows
            let rows = out_shape[0];
            for r in 0..rows {
                for &p in parts {
                    let tp = self.value(p);
                    let c = tp.cols();
                    out.extend_from_slice(&tp.data()[r * c..(r + 1) * c]);
                }
            }
        }
        self.push(
            Tensor::from_vec(&out_shape, out)?,
            Op::Concat(axis, parts.to_vec()),
            "concat",
        )
    }

    /// Row `i` of a rank-2 tensor, as 1 x cols.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var, Error> {
        let ta = self.value(a);
        if ta.rank() != 2 || i >= ta.rows() {
            return Err(Error::Shape(format!(
                "row {i} out of range for shape {:?}",
                ta.shape()
            )));
        }
        let c = ta.cols();
        let data = ta.data()[i * c..(i + 1) * c].to_vec();
        self.push(Tensor::from_vec(&[1, c], data)?, Op::Row(a, i), "row")
    }

    /// View with a new shape (same element count, same order).
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, Error> {
        let ta = self.value(a);
        let n: usize = shape.iter().product();
        if n != ta.numel() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {shape:?}: element count mismatch",
                ta.shape()
            )));
        }
        let data = ta.data().to_vec();
        self.push(Tensor::from_vec(shape, data)?, Op::Reshape(a), "reshape")
    }

    /// Scalar element at flat index `i`.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var, Error> {
        let ta = self.value(a);
        if i >= ta.numel() {
            return Err(Error::Shape(format!(
                "pick index {i} out of range for shape {:?}",
                ta.shape()
            )));
        }
        let v = ta.data()[i];
        self.push(Tensor::scalar(v), Op::Pick(a, i), "pick")
    }

    /// Row-wise standardization (x - mean) / sqrt(var + eps). No learned
    /// scale/shift.
    pub fn layer_norm(&mut self, a: Var, eps: Real) -> Result<Var, Error> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::Shape(format!(
                "layer_norm: need rank 2, got {:?}",
                ta.shape()
            )));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &ta.data()[i * c..(i + 1) * c];
            let mean: Real = row.iter().sum::<Real>() / c as Real;
            let var: Real = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<Real>() / c as Real;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv;
            }
        }
        self.push(
            Tensor::from_vec(&[r, c], out)?,
            Op::LayerNorm(a, eps),
            "layer_norm",
        )
    }

    /// Accumulated gradient of `v` after [`Tape::backward`]. Shape matches
    /// the node's value.
    pub fn grad(&self, grads: &Gradients, v: Var) -> Tensor {
        let node = &self.nodes[v.0 as usize];
        Tensor {
            shape: node.value.shape().to_vec(),
            data: grads.0[v.0 as usize].clone(),
        }
    }

    /// Reverse pass from a scalar output. Returns per-node gradients.
    pub fn backward(&self, output: Var) -> Result<Gradients, Error> {
        if self.value(output).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Vec<Real>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.numel()])
            .collect();
        grads[output.0 as usize][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.iter().all(|&x| x == 0.0) {
                grads[i] = g;
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    // dA += G . B^T (row-dot of contiguous slices)
                    {
                        let da = &mut grads[a.0 as usize];
                        let bd = tb.data();
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            let darow = &mut da[r * k..(r + 1) * k];
                            for (p, dap) in darow.iter_mut().enumerate() {
                                let brow = &bd[p * n..(p + 1) * n];
                                let s: Real = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                                *dap += s;
                            }
                        }
                    }
                    // dB += A^T . G (axpy along contiguous rows)
                    {
                        let db = &mut grads[b.0 as usize];
                        let ad = ta.data();
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            let arow = &ad[r * k..(r + 1) * k];
                            for (p, &arp) in arow.iter().enumerate() {
                                if arp == 0.0 {
                                    continue;
                                }
                                let dbrow = &mut db[p * n..(p + 1) * n];
                                for (d, s) in dbrow.iter_mut().zip(grow) {
                                    *d += arp * s;
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (c, r) = {
                        let t = &self.nodes[i].value;
                        (t.rows(), t.cols())
                    };
                    let da = &mut grads[a.0 as usize];
                    for x in 0..c {
                        for y in 0..r {
                            da[y * c + x] += g[x * r + y];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (d, s) in grads[a.0 as usize].iter_mut().zip(&g) {
                        *d += s;
                    }
                    for (d, s) in grads[b.0 as usize].iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::Sub(a, b) => {
                    for (d, s) in grads[a.0 as usize].iter_mut().zip(&g) {
                        *d += s;
                    }
                    for (d, s) in grads[b.0 as usize].iter_mut().zip(&g) {
                        *d -= s;
                    }
                }
                Op::Mul(a, b) => {
                    let tb = self.value(*b).data().to_vec();
                    let ta = self.value(*a).data().to_vec();
                    for ((d, s), y) in grads[a.0 as usize].iter_mut().zip(&g).zip(&tb) {
                        *d += s * y;
                    }
                    for ((d, s), x) in grads[b.0 as usize].iter_mut().zip(&g).zip(&ta) {
                        *d += s * x;
                    }
                }
                Op::Scale(a, c) => {
                    for (d, s) in grads[a.0 as usize].iter_mut().zip(&g) {
                        *d += s * c;
                    }
                }
                Op::AddConst(a) => {
                    for (d, s) in grads[a.0 as usize].iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::AddRowBias(mat, bias) => {
                    let c = self.value(*bias).numel();
                    for (d, s) in grads[mat.0 as usize].iter_mut().zip(&g) {
                        *d += s;
                    }
                    let db = &mut grads[bias.0 as usize];
                    for (idx, s) in g.iter().enumerate() {
                        db[idx % c] += s;
                    }
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.data();
                    for ((d, s), t) in grads[a.0 as usize].iter_mut().zip(&g).zip(y) {
                        *d += s * (1.0 - t * t);
                    }
                }
                Op::Gelu(a) => {
                    let x = self.value(*a).data().to_vec();
                    for ((d, s), xv) in grads[a.0 as usize].iter_mut().zip(&g).zip(&x) {
                        *d += s * gelu_derivative(*xv);
                    }
                }
                Op::Exp(a) => {
                    let y = self.nodes[i].value.data();
                    for ((d, s), e) in grads[a.0 as usize].iter_mut().zip(&g).zip(y) {
                        *d += s * e;
                    }
                }
                Op::Ln(a) => {
                    let x = self.value(*a).data().to_vec();
                    for ((d, s), xv) in grads[a.0 as usize].iter_mut().zip(&g).zip(&x) {
                        *d += s / xv;
                    }
                }
                Op::Softmax(a, axis) => {
                    let y = self.nodes[i].value.data();
                    let (outer, len, inner) =
                        axis_layout(self.nodes[i].value.shape(), *axis).expect("checked forward");
                    let da = &mut grads[a.0 as usize];
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |j: usize| o * len * inner + j * inner + ii;
                            let mut dot = 0.0;
                            for j in 0..len {
                                dot += g[idx(j)] * y[idx(j)];
                            }
                            for j in 0..len {
                                da[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                }
                Op::MeanAxis(a, axis) | Op::SumAxis(a, axis) => {
                    let mean = matches!(self.nodes[i].op, Op::MeanAxis(..));
                    let in_shape = self.value(*a).shape().to_vec();
                    let (outer, len, inner) = axis_layout(&in_shape, *axis).expect("checked");
                    let w = if mean { 1.0 / len as Real } else { 1.0 };
                    let da = &mut grads[a.0 as usize];
                    for o in 0..outer {
                        for j in 0..len {
                            for ii in 0..inner {
                                da[o * len * inner + j * inner + ii] += g[o * inner + ii] * w;
                            }
                        }
                    }
                }
                Op::MeanAll(a) | Op::SumAll(a) => {
                    let n = self.value(*a).numel();
                    let w = if matches!(self.nodes[i].op, Op::MeanAll(_)) {
                        g[0] / n as Real
                    } else {
                        g[0]
                    };
                    for d in grads[a.0 as usize].iter_mut() {
                        *d += w;
                    }
                }
                Op::Concat(axis, parts) => {
                    if *axis == 0 {
                        let mut offset = 0;
                        for &p in parts {
                            let n = self.value(p).numel();
                            for (d, s) in grads[p.0 as usize].iter_mut().zip(&g[offset..offset + n])
                            {
                                *d += s;
                            }
                            offset += n;
                        }
                    } else {
                        let rows = self.nodes[i].value.rows();
                        let total_cols = self.nodes[i].value.cols();
                        let mut col_offset = 0;
                        for &p in parts {
                            let c = self.value(p).cols();
                            let dp = &mut grads[p.0 as usize];
                            for r in 0..rows {
                                for j in 0..c {
                                    dp[r * c + j] += g[r * total_cols + col_offset + j];
                                }
                            }
                            col_offset += c;
                        }
                    }
                }
                Op::Row(a, r) => {
                    let c = self.nodes[i].value.cols();
                    let da = &mut grads[a.0 as usize];
                    for j in 0..c {
                        da[r * c + j] += g[j];
                    }
                }
                Op::Reshape(a) => {
                    for (d, s) in grads[a.0 as usize].iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::Pick(a, idx) => {
                    grads[a.0 as usize][*idx] += g[0];
                }
                Op::LayerNorm(a, eps) => {
                    let x = self.value(*a);
                    let (r, c) = (x.rows(), x.cols());
                    let da = &mut grads[a.0 as usize];
                    for row_i in 0..r {
                        let row = &x.data()[row_i * c..(row_i + 1) * c];
                        let grow = &g[row_i * c..(row_i + 1) * c];
                        let mean: Real = row.iter().sum::<Real>() / c as Real;
                        let var: Real =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<Real>() / c as Real;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<Real> = row.iter().map(|&v| (v - mean) * inv).collect();
                        let g_sum: Real = grow.iter().sum();
                        let gx_sum: Real = grow.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let cf = c as Real;
                        for j in 0..c {
                            da[row_i * c + j] +=
                                inv / cf * (cf * grow[j] - g_sum - xhat[j] * gx_sum);
                        }
                    }
                }
            }
            grads[i] = g;
        }
        Ok(Gradients(grads))
    }
}

/// Per-node gradient buffers produced by one reverse pass.
pub struct Gradients(Vec<Vec<Real>>);

/// Max relative error between analytic gradients and central finite
/// differences, over every entry of every parameter.
///
/// `build` must construct a scalar from leaf vars created in the order of
/// `params`. `epsilon` must lie in (0, 1e-2].
pub fn grad_check<F>(build: F, params: &[Tensor], epsilon: Real) -> Result<Real, Error>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, Error>,
{
    let per_param = grad_check_per_param(build, params, epsilon)?;
    Ok(per_param.into_iter().fold(0.0, Real::max))
}

/// Per-parameter max relative error of analytic gradients against central
/// finite differences.
pub fn grad_check_per_param<F>(
    build: F,
    params: &[Tensor],
    epsilon: Real,
) -> Result<Vec<Real>, Error>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, Error>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Invalid(format!(
            "grad_check epsilon {epsilon} outside (0, 1e-2]"
        )));
    }
    let eval = |values: &[Tensor]| -> Result<(Real, Option<Gradients>, Vec<Var>), Error> {
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(values.len());
        for v in values {
            vars.push(tape.var(v.clone())?);
        }
        let out = build(&mut tape, &vars)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::Shape("grad_check function must be scalar".into()));
        }
        let y = tape.value(out).item();
        if !y.is_finite() {
            return Err(Error::NonFinite(
                "grad_check objective is not finite".into(),
            ));
        }
        let grads = tape.backward(out)?;
        Ok((y, Some(grads), vars))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let (_, grads, vars) = eval(&work)?;
    let grads = grads.unwrap();
    let analytic: Vec<Vec<Real>> = vars
        .iter()
        .map(|&v| grads.0[v.0 as usize].clone())
        .collect();

    let mut errors = vec![0.0 as Real; params.len()];
    for p in 0..params.len() {
        for i in 0..params[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + epsilon;
            let (f_plus, _, _) = eval(&work)?;
            work[p].data_mut()[i] = orig - epsilon;
            let (f_minus, _, _) = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let a = analytic[p][i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let err = (a - numeric).abs() / denom;
            if err > errors[p] {
                errors[p] = err;
            }
        }
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(rng: &mut Rng, shape: &[usize], scale: Real) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<Real> = (0..n).map(|_| rng.normal() * scale).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Independent normal-CDF oracle: Simpson quadrature of the density.
    fn cdf_oracle(x: f64) -> f64 {
        let a = -12.0f64;
        let n = 20_000;
        let h = (x - a) / n as f64;
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(a) + pdf(x);
        for i in 1..n {
            let t = a + i as f64 * h;
            s += pdf(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape
            .var(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap())
            .unwrap();
        let i = tape.var(Tensor::identity(2)).unwrap();
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_computed() {
        // [[1,2]] x [[3],[4]] = [[11]]
        let mut tape = Tape::new();
        let a = tape
            .var(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap())
            .unwrap();
        let b = tape
            .var(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap())
            .unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let mut tape = Tape::new();
        let z = tape.var(Tensor::zeros(&[2, 3])).unwrap();
        let mut rng = Rng::new(1);
        let b = tape.var(random_tensor(&mut rng, &[3, 4], 1.0)).unwrap();
        let c = tape.matmul(z, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 4]);
        assert!(tape.value(c).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_dimension_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.var(Tensor::zeros(&[4, 2])).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_identity_associativity_exact() {
        // (A . I) . B == A . B exactly for exactly representable inputs.
        let mut rng = Rng::new(9);
        for _ in 0..20 {
            let a_t = Tensor::from_vec(
                &[3, 3],
                (0..9).map(|_| (rng.below(17) as Real) - 8.0).collect(),
            )
            .unwrap();
            let b_t = Tensor::from_vec(
                &[3, 2],
                (0..6).map(|_| (rng.below(17) as Real) - 8.0).collect(),
            )
            .unwrap();
            let mut tape = Tape::new();
            let a = tape.var(a_t.clone()).unwrap();
            let b = tape.var(b_t.clone()).unwrap();
            let i = tape.var(Tensor::identity(3)).unwrap();
            let ai = tape.matmul(a, i).unwrap();
            let left = tape.matmul(ai, b).unwrap();
            let right = tape.matmul(a, b).unwrap();
            assert_eq!(tape.value(left).data(), tape.value(right).data());
        }
    }

    #[test]
    fn gelu_values() {
        let mut tape = Tape::new();
        let x = tape
            .var(Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap())
            .unwrap();
        let y = tape.gelu(x).unwrap();
        assert_eq!(tape.value(y).data()[0], 0.0);
        let expected = 1.0 * cdf_oracle(1.0);
        assert!(
            (tape.value(y).data()[1] as f64 - expected).abs() < 1e-5,
            "gelu(1) = {}, oracle {}",
            tape.value(y).data()[1],
            expected
        );
        // published value from the oracle
        assert!((tape.value(y).data()[1] as f64 - 0.841345).abs() < 1e-5);
    }

    #[test]
    fn tanh_of_zero_matrix_is_zero() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[3, 3])).unwrap();
        let y = tape.tanh(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2, 2])).unwrap();
        let b = tape.var(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_symmetry_and_derived_value() {
        let mut tape = Tape::new();
        let x = tape
            .var(Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap())
            .unwrap();
        let s = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        let ln2 = (2.0 as Real).ln();
        let x2 = tape
            .var(Tensor::from_vec(&[2], vec![ln2, 0.0]).unwrap())
            .unwrap();
        let s2 = tape.softmax(x2, 0).unwrap();
        let d = tape.value(s2).data();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_shift_invariance_and_normalization() {
        let mut rng = Rng::new(3);
        for seed in 0..100 {
            let mut r = Rng::new(seed);
            let x = random_tensor(&mut r, &[4, 5], 2.0);
            let mut shifted = x.clone();
            let c = rng.range(-5.0, 5.0);
            for v in shifted.data_mut() {
                *v += c;
            }
            let mut tape = Tape::new();
            let a = tape.var(x).unwrap();
            let b = tape.var(shifted).unwrap();
            let sa = tape.softmax(a, 1).unwrap();
            let sb = tape.softmax(b, 1).unwrap();
            assert!(tape.value(sa).max_abs_diff(tape.value(sb)) < ROUND_TOL);
            for r_i in 0..4 {
                let sum: Real = (0..5).map(|j| tape.value(sa).at(r_i, j)).sum();
                assert!((sum - 1.0).abs() < 1e-6);
                for j in 0..5 {
                    assert!(tape.value(sa).at(r_i, j) > 0.0);
                }
            }
        }
    }

    #[test]
    fn reduce_mean_cases() {
        let mut tape = Tape::new();
        // mean of two identical rows is that row
        let x = tape
            .var(Tensor::from_rows(&[vec![1.0, 7.0], vec![1.0, 7.0]]).unwrap())
            .unwrap();
        let m = tape.reduce_mean(x, 0).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 7.0]);

        let v = tape
            .var(Tensor::from_vec(&[2], vec![2.0, 4.0]).unwrap())
            .unwrap();
        let mv = tape.reduce_mean(v, 0).unwrap();
        assert_eq!(tape.value(mv).item(), 3.0);

        let y = tape
            .var(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap())
            .unwrap();
        let my = tape.reduce_mean(y, 0).unwrap();
        assert_eq!(tape.value(my).data(), &[2.0, 4.0]);
    }

    #[test]
    fn reduce_mean_axis_out_of_range() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(tape.reduce_mean(x, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn concat_shapes_and_empty() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[50, 3])).unwrap();
        let b = tape.var(Tensor::zeros(&[50, 5])).unwrap();
        let c = tape.concat(a, b, 1).unwrap();
        assert_eq!(tape.value(c).shape(), &[50, 8]);

        let x = tape
            .var(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap())
            .unwrap();
        let empty = tape.var(Tensor::zeros(&[2, 0])).unwrap();
        let xe = tape.concat(x, empty, 1).unwrap();
        assert_eq!(tape.value(xe).data(), &[1.0, 2.0, 3.0, 4.0]);

        let e0 = tape.var(Tensor::zeros(&[0, 2])).unwrap();
        let xr = tape.concat(e0, x, 0).unwrap();
        assert_eq!(tape.value(xr).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_incompatible_shapes() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.var(Tensor::zeros(&[3, 3])).unwrap();
        assert!(tape.concat(a, b, 1).is_err());
    }

    #[cfg(not(feature = "real32"))]
    #[test]
    fn concat_backward_routes_slices() {
        // finite-difference check through a concat of two parts
        let mut rng = Rng::new(17);
        let a = random_tensor(&mut rng, &[2, 3], 1.0);
        let b = random_tensor(&mut rng, &[2, 2], 1.0);
        let err = grad_check(
            |tape, vars| {
                let c = tape.concat(vars[0], vars[1], 1)?;
                let t = tape.tanh(c)?;
                tape.sum_all(t)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "concat grad err {err}");
    }

    #[cfg(not(feature = "real32"))]
    #[test]
    fn grad_check_tanh_sum() {
        let mut rng = Rng::new(4);
        let x = random_tensor(&mut rng, &[3, 4], 1.0);
        let err = grad_check(
            |tape, vars| {
                let t = tape.tanh(vars[0])?;
                tape.sum_all(t)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "tanh grad err {err}");
    }

    #[test]
    fn grad_check_constant_parameter_is_zero() {
        // objective ignores the second parameter -> exact zero gradient
        let mut rng = Rng::new(8);
        let x = random_tensor(&mut rng, &[2, 2], 1.0);
        let unused = random_tensor(&mut rng, &[3], 1.0);
        let mut tape = Tape::new();
        let vx = tape.var(x).unwrap();
        let vu = tape.var(unused).unwrap();
        let t = tape.tanh(vx).unwrap();
        let y = tape.sum_all(t).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(tape.grad(&grads, vu).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grad_check_epsilon_validation() {
        let x = Tensor::scalar(1.0);
        let r = grad_check(|tape, vars| tape.sum_all(vars[0]), &[x], 0.1);
        assert!(matches!(r, Err(Error::Invalid(_))));
    }

    #[cfg(not(feature = "real32"))]
    #[test]
    fn grad_check_every_primitive_100_seeds() {
        type Build = fn(&mut Tape, &[Var]) -> Result<Var, Error>;
        let primitives: &[(&str, Build)] = &[
            ("matmul", |t, v| {
                let p = t.matmul(v[0], v[1])?;
                t.sum_all(p)
            }),
            ("transpose", |t, v| {
                let tr = t.transpose(v[0])?;
                let x = t.tanh(tr)?;
                t.sum_all(x)
            }),
            ("add", |t, v| {
                let s = t.add(v[0], v[2])?;
                let x = t.tanh(s)?;
                t.sum_all(x)
            }),
            ("sub", |t, v| {
                let s = t.sub(v[0], v[2])?;
                let x = t.tanh(s)?;
                t.sum_all(x)
            }),
            ("mul", |t, v| {
                let s = t.mul(v[0], v[2])?;
                t.sum_all(s)
            }),
            ("scale", |t, v| {
                let s = t.scale(v[0], 0.7)?;
                let x = t.tanh(s)?;
                t.sum_all(x)
            }),
            ("add_const", |t, v| {
                let s = t.add_const(v[0], 0.3)?;
                let x = t.tanh(s)?;
                t.sum_all(x)
            }),
            ("add_row_bias", |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let b = t.add_row_bias(p, v[3])?;
                let x = t.tanh(b)?;
                t.sum_all(x)
            }),
            ("tanh", |t, v| {
                let x = t.tanh(v[0])?;
                t.sum_all(x)
            }),
            ("gelu", |t, v| {
                let x = t.gelu(v[0])?;
                t.sum_all(x)
            }),
            ("exp", |t, v| {
                let x = t.exp(v[0])?;
                t.sum_all(x)
            }),
            ("ln", |t, v| {
                let e = t.exp(v[0])?;
                let shifted = t.add_const(e, 0.5)?;
                let x = t.ln(shifted)?;
                t.sum_all(x)
            }),
            ("softmax", |t, v| {
                let s = t.softmax(v[0], 1)?;
                let sq = t.mul(s, s)?;
                t.sum_all(sq)
            }),
            ("reduce_mean", |t, v| {
                let m = t.reduce_mean(v[0], 0)?;
                let x = t.tanh(m)?;
                t.sum_all(x)
            }),
            ("reduce_sum", |t, v| {
                let m = t.reduce_sum(v[0], 1)?;
                let x = t.tanh(m)?;
                t.sum_all(x)
            }),
            ("mean_all", |t, v| {
                let m = t.mean_all(v[0])?;
                t.tanh(m)
            }),
            ("concat", |t, v| {
                let cat = t.concat(v[0], v[2], 1)?;
                let x = t.tanh(cat)?;
                t.sum_all(x)
            }),
            ("row", |t, v| {
                let r = t.row(v[0], 1)?;
                let x = t.tanh(r)?;
                t.sum_all(x)
            }),
            ("reshape", |t, v| {
                let r = t.reshape(v[0], &[4, 3])?;
                let x = t.tanh(r)?;
                t.sum_all(x)
            }),
            ("pick", |t, v| {
                let x = t.tanh(v[0])?;
                t.pick(x, 2)
            }),
            ("layer_norm", |t, v| {
                let n = t.layer_norm(v[0], 1e-5)?;
                let x = t.tanh(n)?;
                t.sum_all(x)
            }),
        ];
        for seed in 0..100 {
            let mut rng = Rng::new(seed);
            let a = random_tensor(&mut rng, &[3, 4], 0.8);
            let b = random_tensor(&mut rng, &[4, 2], 0.8);
            let c = random_tensor(&mut rng, &[3, 4], 0.8);
            let bias = random_tensor(&mut rng, &[2], 0.5);
            let params = [a, b, c, bias];
            for (name, build) in primitives {
                let err = grad_check(build, &params, 1e-5).unwrap();
                assert!(err < 1e-6, "seed {seed}: {name} grad err {err}");
            }
        }
    }

    #[cfg(not(feature = "real32"))]
    #[test]
    fn grad_check_layer_norm_and_row() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed + 1000);
            let x = random_tensor(&mut rng, &[4, 6], 1.0);
            let err = grad_check(
                |tape, vars| {
                    let n = tape.layer_norm(vars[0], 1e-5)?;
                    let r = tape.row(n, 2)?;
                    let t = tape.tanh(r)?;
                    tape.sum_all(t)
                },
                &[x],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "seed {seed}: layer_norm grad err {err}");
        }
    }

    #[test]
    fn forward_identical_with_recording_disabled() {
        let mut rng = Rng::new(21);
        let x = random_tensor(&mut rng, &[3, 3], 1.0);
        let w = random_tensor(&mut rng, &[3, 3], 1.0);

        let run = |recording: bool| -> Vec<Real> {
            let mut tape = Tape::new();
            tape.set_recording(recording);
            let vx = tape.var(x.clone()).unwrap();
            let vw = tape.var(w.clone()).unwrap();
            let p = tape.matmul(vx, vw).unwrap();
            let t = tape.tanh(p).unwrap();
            let s = tape.softmax(t, 1).unwrap();
            tape.value(s).data().to_vec()
        };
        let on = run(true);
        let off = run(false);
        assert_eq!(on, off, "recording flag changed forward values");
    }

    #[test]
    fn non_finite_detection() {
        let mut tape = Tape::new();
        let x = tape
            .var(Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap())
            .unwrap();
        // ln(0) = -inf must be reported
        assert!(matches!(tape.ln(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[2, 2])).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn gradient_shapes_match_parameters() {
        let mut rng = Rng::new(2);
        let w = random_tensor(&mut rng, &[3, 5], 1.0);
        let mut tape = Tape::new();
        let vw = tape.var(w.clone()).unwrap();
        let t = tape.tanh(vw).unwrap();
        let y = tape.sum_all(t).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(tape.grad(&grads, vw).shape(), w.shape());
    }
}
