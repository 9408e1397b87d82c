use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Rng};

/// Row-major dense tensor of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count of a matrix (or the length of a vector).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Column count of a matrix; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let cols = self.cols();
        self.data[row * cols + col] = value;
    }

    /// Copy of column `j` of a matrix. This is `M · onehot(j)`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let cols = self.cols();
        (0..self.rows()).map(|r| self.data[r * cols + j]).collect()
    }

    /// Adds `v` into column `j`.
    pub fn add_to_column(&mut self, j: usize, v: &[f64]) {
        let cols = self.cols();
        for (r, x) in v.iter().enumerate() {
            self.data[r * cols + j] += x;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

/// `W · x + b` for a matrix `W` of shape `[m, n]`, `x` of length `n` and `b` of length `m`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 || x.shape().len() != 1 || w.cols() != x.len() {
        return Err(Error::Shape {
            op: "affine (W·x)",
            left: w.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    if b.shape() != [w.rows()] {
        return Err(Error::Shape {
            op: "affine (+b)",
            left: w.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = b.data().to_vec();
    matvec_add_into(w, x.data(), &mut out);
    Ok(Tensor::vector(out))
}

/// `out += W · x`.
#[inline]
pub fn matvec_add_into(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let cols = w.cols();
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(w.rows(), out.len());
    for (row, o) in w.data().chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ · dy`.
#[inline]
pub fn matvec_t_add_into(w: &Tensor, dy: &[f64], out: &mut [f64]) {
    let cols = w.cols();
    debug_assert_eq!(cols, out.len());
    debug_assert_eq!(w.rows(), dy.len());
    for (row, &g) in w.data().chunks_exact(cols).zip(dy) {
        if g == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += g * a;
        }
    }
}

/// `grad += dy ⊗ x` for a gradient buffer of shape `[dy.len(), x.len()]`.
#[inline]
pub fn outer_add_into(grad: &mut Tensor, dy: &[f64], x: &[f64]) {
    let cols = grad.cols();
    debug_assert_eq!(cols, x.len());
    for (row, &g) in grad.data_mut().chunks_exact_mut(cols).zip(dy) {
        if g == 0.0 {
            continue;
        }
        for (o, a) in row.iter_mut().zip(x) {
            *o += g * a;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the sigmoid expressed through its output `y = σ(x)`.
#[inline]
pub fn dsigmoid_from_output(y: f64) -> f64 {
    y * (1.0 - y)
}

/// Derivative of tanh expressed through its output `y = tanh(x)`.
#[inline]
pub fn dtanh_from_output(y: f64) -> f64 {
    1.0 - y * y
}

/// Max-shifted softmax of `logits / temperature`.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::invalid("softmax over an empty vector"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Log-softmax computed from max-shifted logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&l| l - log_z).collect()
}

/// Rescales every gradient in `store` so the global L2 norm is at most
/// `threshold`. Returns the factor applied (1 when no clipping happened).
pub fn clip_global_norm(store: &mut ParamStore, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    for (name, grad) in store.names().iter().zip(store.grads()) {
        grad.ensure_finite(&format!("gradient of {name}"))?;
    }
    let norm = store.grad_norm();
    if norm > threshold {
        let factor = threshold / norm;
        for g in store.grads_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
        Ok(factor)
    } else {
        Ok(1.0)
    }
}

/// Draws an index from `p` by inverting the CDF at one uniform draw.
pub fn sample_categorical(p: &[f64], rng: &mut Rng) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::invalid("empty probability vector"));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid("probabilities must be finite and non-negative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
    }
    let u = rng.uniform();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (j, &pj) in p.iter().enumerate() {
        if pj > 0.0 {
            last_positive = j;
        }
        cum += pj;
        if u < cum {
            return Ok(j);
        }
    }
    // u landed in the rounding slack above the accumulated sum.
    Ok(last_positive)
}
