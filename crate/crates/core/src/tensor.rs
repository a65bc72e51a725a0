//! Dense 2-D matrices, 4-D image batches, activation functions, weight
//! initializers and quasi-identity resize matrices.
//!
//! All arithmetic is in `f64`; gradient checking needs the precision.

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major matrix.
///
/// Convention used throughout the crate: data that flows between layers is
/// stored feature-major, i.e. a batch of `n` samples with `d` features is a
/// `d x n` matrix whose columns are samples. Weight matrices are stored
/// `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be >= 1");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be >= 1");
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `self * other`.
    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "shape mismatch in mul");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `self^T * other`; avoids materializing the transpose.
    pub fn tmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "shape mismatch in tmul");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = &self.data[k * self.cols..(k + 1) * self.cols];
            let brow = &other.data[k * other.cols..(k + 1) * other.cols];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(brow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn mul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "shape mismatch in mul_t");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..other.rows {
                let brow = &other.data[j * other.cols..(j + 1) * other.cols];
                let mut acc = 0.0;
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    /// Adds a column vector to every column of `self`.
    pub fn add_col(&mut self, col: &Matrix) {
        assert_eq!(col.rows, self.rows, "bias/matrix row mismatch");
        assert_eq!(col.cols, 1, "expected a column vector");
        for r in 0..self.rows {
            let b = col.data[r];
            for v in &mut self.data[r * self.cols..(r + 1) * self.cols] {
                *v += b;
            }
        }
    }

    /// Sums each row into a column vector.
    pub fn row_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, 1);
        for r in 0..self.rows {
            out.data[r] = self.data[r * self.cols..(r + 1) * self.cols].iter().sum();
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self -= s * other`; the SGD update kernel.
    pub fn sub_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= s * b;
        }
    }

    /// Index of the largest entry in each column, first index on ties.
    pub fn argmax_columns(&self) -> Vec<usize> {
        (0..self.cols)
            .map(|c| {
                let mut best = self.data[c];
                let mut best_i = 0;
                for r in 1..self.rows {
                    let v = self.data[r * self.cols + c];
                    if v > best {
                        best = v;
                        best_i = r;
                    }
                }
                best_i
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A batch of multi-channel images, stored `[batch][channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageBatch {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> ImageBatch {
        ImageBatch {
            batch,
            channels,
            height,
            width,
            data: vec![0.0; batch * channels * height * width],
        }
    }

    pub fn from_vec(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> ImageBatch {
        assert_eq!(
            data.len(),
            batch * channels * height * width,
            "data length must be batch*channels*height*width"
        );
        ImageBatch {
            batch,
            channels,
            height,
            width,
            data,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((b * self.channels + c) * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f64) {
        self.data[((b * self.channels + c) * self.height + y) * self.width + x] = v;
    }

    /// Row-major flatten into a feature-major matrix: column `b` holds the
    /// `[channel][row][col]` unrolling of sample `b`.
    pub fn flatten(&self) -> Matrix {
        let feat = self.channels * self.height * self.width;
        let mut m = Matrix::zeros(feat, self.batch);
        for b in 0..self.batch {
            for f in 0..feat {
                m.set(f, b, self.data[b * feat + f]);
            }
        }
        m
    }

    /// Inverse of [`flatten`]: reads column `b` of `m` as sample `b`.
    pub fn from_flat(m: &Matrix, channels: usize, height: usize, width: usize) -> ImageBatch {
        let feat = channels * height * width;
        assert_eq!(m.rows(), feat, "flat matrix rows must equal c*h*w");
        let batch = m.cols();
        let mut img = ImageBatch::zeros(batch, channels, height, width);
        for b in 0..batch {
            for f in 0..feat {
                img.data[b * feat + f] = m.get(f, b);
            }
        }
        img
    }
}

/// Activation functions used by layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Softmax,
    Linear,
}

/// Weight initialization schemes for new layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum InitScheme {
    RandomScaled,
    Zero,
    Identity,
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitScheme::RandomScaled => write!(f, "random"),
            InitScheme::Zero => write!(f, "zero"),
            InitScheme::Identity => write!(f, "identity"),
        }
    }
}

/// Builds the 0/1 projection matrix that resizes a length-`rows` vector to
/// length `cols`: `Q[i][j] = 1` exactly when `i = floor(j*rows/cols)`.
///
/// Right-multiplying a row vector by `Q` replicates entries when upsizing and
/// samples them with a stride when downsizing; `rows == cols` gives the
/// identity, so resizing a signal to its own width is a no-op.
pub fn quasi_identity(rows: usize, cols: usize) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "quasi_identity dimensions must be >= 1, got {rows}x{cols}"
        )));
    }
    let mut q = Matrix::zeros(rows, cols);
    for j in 0..cols {
        q.set(j * rows / cols, j, 1.0);
    }
    Ok(q)
}

/// Resizes the feature dimension of a feature-major signal: `Q^T * m` where
/// `Q = quasi_identity(m.rows, target)`. Output row `j` is input row
/// `floor(j*rows/target)`, so the batch columns are untouched.
pub fn project_rows(m: &Matrix, target: usize) -> Matrix {
    if m.rows() == target {
        return m.clone();
    }
    let rows = m.rows();
    let mut out = Matrix::zeros(target, m.cols());
    for j in 0..target {
        let src = j * rows / target;
        let src_row = &m.data()[src * m.cols()..(src + 1) * m.cols()];
        out.data_mut()[j * m.cols()..(j + 1) * m.cols()].copy_from_slice(src_row);
    }
    out
}

/// Adjoint of [`project_rows`]: scatter-adds gradient rows back to their
/// source rows (`Q * g`).
pub fn project_rows_backward(grad: &Matrix, source_rows: usize) -> Matrix {
    if grad.rows() == source_rows {
        return grad.clone();
    }
    let target = grad.rows();
    let mut out = Matrix::zeros(source_rows, grad.cols());
    for j in 0..target {
        let src = j * source_rows / target;
        for c in 0..grad.cols() {
            let v = out.get(src, c) + grad.get(j, c);
            out.set(src, c, v);
        }
    }
    out
}

/// Resizes the channel dimension of an image batch with the same index rule
/// as [`project_rows`].
pub fn project_channels(img: &ImageBatch, target: usize) -> ImageBatch {
    if img.channels() == target {
        return img.clone();
    }
    let mut out = ImageBatch::zeros(img.batch(), target, img.height(), img.width());
    let plane = img.height() * img.width();
    for b in 0..img.batch() {
        for j in 0..target {
            let src = j * img.channels() / target;
            for p in 0..plane {
                out.data_mut()[(b * target + j) * plane + p] =
                    img.data()[(b * img.channels() + src) * plane + p];
            }
        }
    }
    out
}

/// Adjoint of [`project_channels`].
pub fn project_channels_backward(grad: &ImageBatch, source_channels: usize) -> ImageBatch {
    if grad.channels() == source_channels {
        return grad.clone();
    }
    let target = grad.channels();
    let mut out = ImageBatch::zeros(grad.batch(), source_channels, grad.height(), grad.width());
    let plane = grad.height() * grad.width();
    for b in 0..grad.batch() {
        for j in 0..target {
            let src = j * source_channels / target;
            for p in 0..plane {
                out.data_mut()[(b * source_channels + src) * plane + p] +=
                    grad.data()[(b * target + j) * plane + p];
            }
        }
    }
    out
}

/// Applies an activation function elementwise (Softmax per column).
pub fn apply_activation(kind: Activation, z: &Matrix) -> Result<Matrix> {
    if !z.is_finite() {
        return Err(Error::Numeric(
            "activation input contains non-finite values".into(),
        ));
    }
    Ok(activate(kind, z))
}

/// Unchecked activation used on the training hot path; non-finite values are
/// allowed to propagate so that divergence shows up in the loss.
pub(crate) fn activate(kind: Activation, z: &Matrix) -> Matrix {
    match kind {
        Activation::Linear => z.clone(),
        Activation::ReLU => {
            let mut a = z.clone();
            for v in a.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            a
        }
        Activation::Softmax => softmax_columns(z),
    }
}

/// Derivative mask for the pre-activation. ReLU uses subgradient 1 at zero so
/// that zero-initialized layers receive a nonzero first gradient.
pub(crate) fn activation_grad_mask(kind: Activation, z: &Matrix, upstream: &Matrix) -> Matrix {
    match kind {
        Activation::Linear => upstream.clone(),
        Activation::ReLU => {
            let mut g = upstream.clone();
            for (gv, zv) in g.data_mut().iter_mut().zip(z.data()) {
                if *zv < 0.0 {
                    *gv = 0.0;
                }
            }
            g
        }
        Activation::Softmax => panic!("softmax gradient is fused with the loss"),
    }
}

fn softmax_columns(z: &Matrix) -> Matrix {
    let mut a = Matrix::zeros(z.rows(), z.cols());
    for c in 0..z.cols() {
        let mut max = f64::NEG_INFINITY;
        for r in 0..z.rows() {
            max = max.max(z.get(r, c));
        }
        let mut sum = 0.0;
        for r in 0..z.rows() {
            let e = (z.get(r, c) - max).exp();
            a.set(r, c, e);
            sum += e;
        }
        for r in 0..z.rows() {
            a.set(r, c, a.get(r, c) / sum);
        }
    }
    a
}

/// Initializes a `rows x cols` weight matrix. `rows` is the fan-in;
/// `RandomScaled` draws i.i.d. values with zero mean and scale `sqrt(2/rows)`.
pub fn init_weights<R: Rng>(
    scheme: InitScheme,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "weight dimensions must be >= 1, got {rows}x{cols}"
        )));
    }
    match scheme {
        InitScheme::Zero => Ok(Matrix::zeros(rows, cols)),
        InitScheme::Identity => {
            if rows != cols {
                Err(Error::InvalidArgument(format!(
                    "identity init requires a square matrix, got {rows}x{cols}"
                )))
            } else {
                Ok(Matrix::identity(rows))
            }
        }
        InitScheme::RandomScaled => {
            let scale = (2.0 / rows as f64).sqrt();
            let mut m = Matrix::zeros(rows, cols);
            for v in m.data_mut() {
                *v = (rng.gen::<f64>() * 2.0 - 1.0) * scale;
            }
            Ok(m)
        }
    }
}
