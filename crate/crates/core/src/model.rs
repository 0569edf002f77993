//! Fully-connected hash head: feature vector in, relaxed code in `(-1, 1)^q` out.
//!
//! Hidden layers use `tanh`; the output layer uses the hash activation
//! `x / (|x| + 1)`. Gradients are derived by hand, layer by layer.

use std::io::{Read, Write};
use std::ops::Deref;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `x / (|x| + 1)`.
pub fn hash_activation<T: Scalar>(x: T) -> T {
    x / (x.abs() + T::one())
}

/// Derivative of [`hash_activation`], `1 / (|x| + 1)^2`.
pub fn hash_activation_derivative<T: Scalar>(x: T) -> T {
    let d = x.abs() + T::one();
    T::one() / (d * d)
}

/// Network output before binarization; every entry lies strictly inside `(-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedCode<T>(Vec<T>);

impl<T: Scalar> RelaxedCode<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("relaxed code"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("relaxed code"));
        }
        if values.iter().any(|v| v.abs() >= T::one()) {
            return Err(Error::InvalidParameter(
                "relaxed code entries must lie strictly inside (-1, 1)".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for RelaxedCode<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Layer sizes of a hash head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub code_bits: usize,
}

impl Architecture {
    /// One hidden layer of width 512.
    pub fn with_default_hidden(input_dim: usize, code_bits: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![512],
            code_bits,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.code_bits);
        w
    }
}

/// Affine layer, `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &HashModel<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    /// Layer-major flattening matching [`HashModel::flat_parameters`].
    pub fn to_flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn max_abs(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Per-layer pre-activations and activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub input: Vec<T>,
    pub pre: Vec<Vec<T>>,
    pub post: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn output(&self) -> &[T] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Row-per-item trace of a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchTrace<T> {
    pub input: Array2<T>,
    pub pre: Vec<Array2<T>>,
    pub post: Vec<Array2<T>>,
}

impl<T: Scalar> BatchTrace<T> {
    /// `batch x q` relaxed codes.
    pub fn output(&self) -> ArrayView2<'_, T> {
        self.post.last().expect("model has at least one layer").view()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashModel<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> HashModel<T> {
    /// Wraps explicit layers after checking that their widths chain.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("model layers"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer bias",
                    expected: l.out_dim(),
                    actual: l.bias.len(),
                });
            }
            if l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(Error::InvalidParameter(format!("layer {k} has a zero dimension")));
            }
            if k > 0 && layers[k - 1].out_dim() != l.in_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: layers[k - 1].out_dim(),
                    actual: l.in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Uniform Glorot initialization with zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let widths = arch.widths();
        if widths.contains(&0) {
            return Err(Error::InvalidParameter(
                "architecture widths must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    T::of(rng.random_range(-r..=r))
                });
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn code_bits(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer: row-major weights then bias.
    pub fn flat_parameters(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Copy of this model with parameters replaced from a flat vector.
    pub fn with_flat_parameters(&self, values: &[T]) -> Result<Self> {
        if values.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch {
                context: "flat parameters",
                expected: self.num_parameters(),
                actual: values.len(),
            });
        }
        let mut out = self.clone();
        let mut it = values.iter().copied();
        for l in &mut out.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(out)
    }

    fn is_output(&self, k: usize) -> bool {
        k + 1 == self.layers.len()
    }

    fn activate(&self, k: usize, x: T) -> T {
        if self.is_output(k) {
            hash_activation(x)
        } else {
            x.tanh()
        }
    }

    /// Derivative of layer `k`'s activation given its pre-activation and output.
    fn activation_slope(&self, k: usize, pre: T, post: T) -> T {
        if self.is_output(k) {
            hash_activation_derivative(pre)
        } else {
            T::one() - post * post
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<(RelaxedCode<T>, ForwardTrace<T>)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "model input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let prev = ArrayView1::from(post.last().map(Vec::as_slice).unwrap_or(x));
            let z = layer.weights.dot(&prev) + &layer.bias;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("layer pre-activation"));
            }
            let a: Vec<T> = z.iter().map(|&v| self.activate(k, v)).collect();
            pre.push(z.to_vec());
            post.push(a);
        }
        let code = RelaxedCode(post.last().cloned().unwrap_or_default());
        Ok((
            code,
            ForwardTrace {
                input: x.to_vec(),
                pre,
                post,
            },
        ))
    }

    /// Parameter gradients and input gradient for a single traced item.
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_u: &[T]) -> Result<(Gradients<T>, Vec<T>)> {
        if grad_u.len() != self.code_bits() {
            return Err(Error::DimensionMismatch {
                context: "output gradient",
                expected: self.code_bits(),
                actual: grad_u.len(),
            });
        }
        if trace.pre.len() != self.layers.len() || trace.input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "forward trace layers",
                expected: self.layers.len(),
                actual: trace.pre.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = Array1::from(grad_u.to_vec());
        for k in (0..self.layers.len()).rev() {
            let pre = &trace.pre[k];
            let post = &trace.post[k];
            if pre.len() != self.layers[k].out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "forward trace width",
                    expected: self.layers[k].out_dim(),
                    actual: pre.len(),
                });
            }
            let delta: Array1<T> = upstream
                .iter()
                .zip(pre.iter().zip(post))
                .map(|(&g, (&z, &a))| g * self.activation_slope(k, z, a))
                .collect();
            let prev = ArrayView1::from(if k == 0 { &trace.input } else { &trace.post[k - 1] });
            let d2 = delta.view().insert_axis(Axis(1));
            let p2 = prev.insert_axis(Axis(0));
            grads.layers[k].weights = d2.dot(&p2);
            grads.layers[k].bias = delta.clone();
            upstream = self.layers[k].weights.t().dot(&delta);
        }
        Ok((grads, upstream.to_vec()))
    }

    /// Forward pass over a `batch x d` input matrix, one item per row.
    pub fn forward_batch(&self, x: ArrayView2<'_, T>) -> Result<BatchTrace<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "model input",
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<T>> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let prev = post.last().map(|a| a.view()).unwrap_or(x);
            let z = prev.dot(&layer.weights.t()) + &layer.bias;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("layer pre-activation"));
            }
            let a = z.mapv(|v| self.activate(k, v));
            pre.push(z);
            post.push(a);
        }
        Ok(BatchTrace {
            input: x.to_owned(),
            pre,
            post,
        })
    }

    /// Gradients summed over every row of a batched trace.
    pub fn backward_batch(&self, trace: &BatchTrace<T>, grad_u: ArrayView2<'_, T>) -> Result<Gradients<T>> {
        let rows = trace.input.nrows();
        if grad_u.dim() != (rows, self.code_bits()) {
            return Err(Error::DimensionMismatch {
                context: "batched output gradient",
                expected: rows * self.code_bits(),
                actual: grad_u.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = grad_u.to_owned();
        for k in (0..self.layers.len()).rev() {
            let mut delta = upstream;
            ndarray::Zip::from(&mut delta)
                .and(&trace.pre[k])
                .and(&trace.post[k])
                .for_each(|g, &z, &a| *g *= self.activation_slope(k, z, a));
            let prev = if k == 0 { trace.input.view() } else { trace.post[k - 1].view() };
            grads.layers[k].weights = delta.t().dot(&prev);
            grads.layers[k].bias = delta.sum_axis(Axis(0));
            upstream = delta.dot(&self.layers[k].weights);
        }
        Ok(grads)
    }

    /// Relaxed codes for every row, without retaining a trace.
    pub fn encode_batch(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        Ok(self.forward_batch(x)?.post.pop().expect("non-empty model"))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.out_dim() as u32).to_le_bytes())?;
            w.write_all(&(l.in_dim() as u32).to_le_bytes())?;
            for v in l.weights.iter().chain(l.bias.iter()) {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_checkpoint<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, path)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(fmt(format!("bad magic {magic:?}, expected SHMD")));
        }
        let version = read_u32(&mut r, path)?;
        if version != CHECKPOINT_VERSION {
            return Err(fmt(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r, path)? as usize;
        if count == 0 {
            return Err(fmt("checkpoint has no layers".into()));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = read_u32(&mut r, path)? as usize;
            let cols = read_u32(&mut r, path)? as usize;
            let mut values = Vec::with_capacity(rows * (cols + 1));
            let mut buf = [0u8; 8];
            for _ in 0..rows * (cols + 1) {
                read_exact(&mut r, &mut buf, path)?;
                values.push(T::of(f64::from_le_bytes(buf)));
            }
            let bias = Array1::from(values.split_off(rows * cols));
            let weights = Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| fmt(e.to_string()))?;
            layers.push(Layer { weights, bias });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
            return Err(fmt("trailing bytes after last layer".into()));
        }
        Self::from_layers(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_checkpoint(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(file), path)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SHMD";
const CHECKPOINT_VERSION: u32 = 1;

pub(crate) fn read_exact<R: Read + ?Sized>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format {
                path: path.to_path_buf(),
                reason: "truncated file".into(),
            }
        } else {
            Error::io(path, e)
        }
    })
}

pub(crate) fn read_u32<R: Read + ?Sized>(r: &mut R, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}
