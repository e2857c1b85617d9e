//! Small differentiable building blocks with hand-written backward passes.
//!
//! Everything is `f64` and row-major. Layers cache what their backward pass
//! needs during `forward`; `infer` runs the same computation without touching
//! the cache.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Shape(format!(
                "row {bad} has {} columns, expected {cols}",
                rows[bad].len()
            )));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn random_uniform(rows: usize, cols: usize, bound: f64, rng: &mut SplitMix64) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same(other, "add")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn add_scaled_in_place(&mut self, other: &Matrix, k: f64) -> Result<()> {
        self.check_same(other, "add")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    fn check_same(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// `self * other^T`, i.e. `(N x k) * (M x k)^T -> N x M`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_t: {}x{} by ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `self * other`, i.e. `(N x k) * (k x M) -> N x M`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul: {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, b) in o.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other`, i.e. `(N x a)^T * (N x b) -> a x b`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "t_matmul: ({}x{})^T by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for n in 0..self.rows {
            let b = other.row(n);
            for (i, &a) in self.row(n).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in o.iter_mut().zip(b) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hconcat(parts: &[Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::Shape(format!(
                "hconcat: {} rows vs {rows}",
                bad.rows
            )));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c = 0;
            for m in parts {
                out.data[r * cols + c..r * cols + c + m.cols].copy_from_slice(m.row(r));
                c += m.cols;
            }
        }
        Ok(out)
    }

    /// Inverse of [`Matrix::hconcat`]: splits columns into blocks of the given widths.
    pub fn hsplit(&self, widths: &[usize]) -> Result<Vec<Matrix>> {
        if widths.iter().sum::<usize>() != self.cols {
            return Err(Error::Shape(format!(
                "hsplit: widths sum to {}, matrix has {} columns",
                widths.iter().sum::<usize>(),
                self.cols
            )));
        }
        let mut out: Vec<Matrix> = widths
            .iter()
            .map(|&w| Matrix::zeros(self.rows, w))
            .collect();
        for r in 0..self.rows {
            let mut c = 0;
            for m in out.iter_mut() {
                let w = m.cols;
                m.row_mut(r).copy_from_slice(&self.row(r)[c..c + w]);
                c += w;
            }
        }
        Ok(out)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fully connected layer `Y = X W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    input: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Matrix,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Weights uniform in `[-1/sqrt(in), 1/sqrt(in)]`, biases zero.
    pub fn new(inputs: usize, outputs: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Matrix::random_uniform(outputs, inputs, bound, rng),
            bias: vec![0.0; outputs],
            input: None,
        }
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias has {} entries for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self {
            weight,
            bias,
            input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(Error::Shape(format!(
                "dense expects {} input columns, got {}",
                self.inputs(),
                x.cols()
            )));
        }
        let mut y = x.matmul_t(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&self, dy: &Matrix) -> Result<DenseGrads> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Shape("dense backward before forward".into()))?;
        if dy.shape() != (x.rows(), self.outputs()) {
            return Err(Error::Shape(format!(
                "dense backward: upstream {}x{}, expected {}x{}",
                dy.rows(),
                dy.cols(),
                x.rows(),
                self.outputs()
            )));
        }
        Ok(DenseGrads {
            input: dy.matmul(&self.weight)?,
            weight: dy.t_matmul(x)?,
            bias: dy.column_sums(),
        })
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given its pre-activation input.
pub fn relu_backward(pre: &Matrix, dy: &Matrix) -> Result<Matrix> {
    pre.check_same(dy, "relu_backward")?;
    let mut out = dy.clone();
    for (o, &p) in out.data.iter_mut().zip(&pre.data) {
        if p <= 0.0 {
            *o = 0.0;
        }
    }
    Ok(out)
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let s = softmax(logits.row(r));
        out.row_mut(r).copy_from_slice(&s);
    }
    out
}

/// Mean cross-entropy over rows and its gradient `(softmax - onehot) / N`.
pub fn softmax_xent(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    if targets.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} targets for {} rows",
            targets.len(),
            logits.rows()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::Shape(format!(
            "target {t} out of range for {} classes",
            logits.cols()
        )));
    }
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let (arg, max) =
            row.iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, x)| if x > acc.1 { (i, x) } else { acc },
                );
        // log-sum-exp as max + ln(1 + sum of the others), exact for tiny tails
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .map(|(_, x)| (x - max).exp())
            .sum();
        let log_z = max + rest.ln_1p();
        loss += (max - row[t]) + rest.ln_1p();
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = (row[c] - log_z).exp();
            *g = (p - if c == t { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Identity on the way forward, `-lambda * dY` on the way back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReversal {
    lambda: f64,
}

impl GradientReversal {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!(
                "gradient reversal strength must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        *self = Self::new(lambda)?;
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        x.clone()
    }

    pub fn backward(&self, dy: &Matrix) -> Matrix {
        dy.scale(-self.lambda)
    }
}

/// Softmax-weighted sum of K equally shaped views.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewAggregator {
    pub logits: Vec<f64>,
    views: Option<Vec<Matrix>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorGrads {
    pub views: Vec<Matrix>,
    pub logits: Vec<f64>,
}

impl ViewAggregator {
    /// Equal weights.
    pub fn new(k: usize) -> Self {
        Self::from_logits(vec![0.0; k])
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        Self {
            logits,
            views: None,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn infer(&self, views: &[Matrix]) -> Result<Matrix> {
        if views.len() != self.logits.len() {
            return Err(Error::Shape(format!(
                "aggregator has {} weights, got {} views",
                self.logits.len(),
                views.len()
            )));
        }
        let first = views
            .first()
            .ok_or_else(|| Error::Shape("no views to aggregate".into()))?;
        let mut out = Matrix::zeros(first.rows(), first.cols());
        for (w, v) in self.weights().into_iter().zip(views) {
            out.add_scaled_in_place(v, w).map_err(|_| {
                Error::Shape(format!(
                    "views differ in shape: {}x{} vs {}x{}",
                    first.rows(),
                    first.cols(),
                    v.rows(),
                    v.cols()
                ))
            })?;
        }
        Ok(out)
    }

    pub fn forward(&mut self, views: &[Matrix]) -> Result<Matrix> {
        let out = self.infer(views)?;
        self.views = Some(views.to_vec());
        Ok(out)
    }

    pub fn backward(&self, dy: &Matrix) -> Result<AggregatorGrads> {
        let views = self
            .views
            .as_ref()
            .ok_or_else(|| Error::Shape("aggregator backward before forward".into()))?;
        let w = self.weights();
        let g: Vec<f64> = views
            .iter()
            .map(|v| dot(v.as_slice(), dy.as_slice()))
            .collect();
        let mean_g: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
        Ok(AggregatorGrads {
            views: w.iter().map(|&wk| dy.scale(wk)).collect(),
            logits: w
                .iter()
                .zip(&g)
                .map(|(wk, gk)| wk * (gk - mean_g))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `p <- p - lr * g`. Nothing is updated if any gradient entry is non-finite.
pub fn sgd_step(name: &str, param: &mut [f64], grad: &[f64], learning_rate: f64) -> Result<()> {
    if param.len() != grad.len() {
        return Err(Error::Shape(format!(
            "{name}: {} parameters, {} gradients",
            param.len(),
            grad.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite gradient for parameter {name} at index {i}"
        )));
    }
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= learning_rate * g;
    }
    Ok(())
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NNC1";

/// A named parameter tensor as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Matrix,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }

    pub fn vector(name: impl Into<String>, v: &[f64]) -> Self {
        Self::new(name, Matrix::from_vec(1, v.len(), v.to_vec()).unwrap())
    }
}

/// Magic `NNC1`, then per tensor: u32 name length, name, u32 rows, u32 cols,
/// rows*cols f64 values, all little-endian.
pub fn encode_checkpoint(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.value.cols() as u32).to_le_bytes());
        for v in t.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor>> {
    if bytes.get(..4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::parse(path, 0, "bad magic, expected NNC1"));
    }
    let mut pos = 4;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
        match end {
            Some(end) => {
                let s = &bytes[*pos..end];
                *pos = end;
                Ok(s)
            }
            None => Err(Error::parse(path, *pos, "unexpected end of checkpoint")),
        }
    };
    let u32_at = |pos: &mut usize| -> Result<usize> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize)
    };
    let mut out = Vec::new();
    while pos < bytes.len() {
        let at = pos;
        let len = u32_at(&mut pos)?;
        let name = std::str::from_utf8(take(&mut pos, len)?)
            .map_err(|_| Error::parse(path, at, "tensor name is not UTF-8"))?
            .to_owned();
        let rows = u32_at(&mut pos)?;
        let cols = u32_at(&mut pos)?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::parse(path, at, "tensor size overflow"))?;
        let values: Vec<f64> = take(&mut pos, n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(NamedTensor::new(
            name,
            Matrix::from_vec(rows, cols, values)?,
        ));
    }
    Ok(out)
}

pub fn write_checkpoint(tensors: &[NamedTensor], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
