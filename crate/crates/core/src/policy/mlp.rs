//! Dense tanh network over a flat parameter vector, with hand-written
//! reverse-mode (backprop) and forward-mode (JVP) passes.
//!
//! Parameters are stored layer by layer: the row-major `[in x out]` weight
//! matrix followed by the `out` biases. A policy layout appends one trailing
//! scalar, the state-independent log standard deviation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    /// Layer widths from input to output, e.g. `[4, 64, 64, 1]`.
    pub sizes: Vec<usize>,
    /// Whether a trailing log-std scalar follows the network weights.
    pub log_std: bool,
}

impl Layout {
    pub fn new(sizes: Vec<usize>, log_std: bool) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) || *sizes.last().unwrap() != 1 {
            return Err(Error::Parameter(format!(
                "layout needs >= 2 positive widths ending in 1, got {sizes:?}"
            )));
        }
        Ok(Self { sizes, log_std })
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_network_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_params(&self) -> usize {
        self.n_network_params() + usize::from(self.log_std)
    }

    /// `(weight offset, bias offset, fan_in, fan_out)` for each layer.
    pub fn layer_offsets(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let entry = (off, off + w[0] * w[1], w[0], w[1]);
                off += w[0] * w[1] + w[1];
                entry
            })
            .collect()
    }
}

/// A network's parameters as one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layout: Layout,
    pub flat: Vec<f64>,
}

/// Activations retained by [`MlpParams::forward`] for the backward and
/// tangent passes. `acts[0]` is the input, `acts[l]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> ArrayView1<'_, f64> {
        self.acts.last().unwrap().column(0)
    }

    pub fn batch_len(&self) -> usize {
        self.acts[0].nrows()
    }
}

impl MlpParams {
    pub fn zeros(layout: Layout) -> Self {
        let n = layout.n_params();
        Self { layout, flat: vec![0.0; n] }
    }

    pub fn from_flat(layout: Layout, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != layout.n_params() {
            return Err(Error::Shape { expected: layout.n_params(), got: flat.len() });
        }
        Ok(Self { layout, flat })
    }

    /// Orthogonal initialization scaled by `hidden_gain` on hidden layers and
    /// `output_gain` on the output layer; biases start at zero.
    pub fn orthogonal<R: Rng + ?Sized>(
        layout: Layout,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut params = Self::zeros(layout);
        let offsets = params.layout.layer_offsets();
        let last = offsets.len() - 1;
        for (l, &(w_off, _, fan_in, fan_out)) in offsets.iter().enumerate() {
            let gain = if l == last { output_gain } else { hidden_gain };
            let w = orthogonal_matrix(fan_in, fan_out, rng);
            for (dst, src) in params.flat[w_off..w_off + fan_in * fan_out].iter_mut().zip(w.iter()) {
                *dst = gain * src;
            }
        }
        params
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (w, _, i, o) = self.layout.layer_offsets()[layer];
        ArrayView2::from_shape((i, o), &self.flat[w..w + i * o]).unwrap()
    }

    pub fn biases(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (_, b, _, o) = self.layout.layer_offsets()[layer];
        ArrayView1::from(&self.flat[b..b + o])
    }

    fn check_inputs(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.layout.n_inputs() {
            return Err(Error::Shape { expected: self.layout.n_inputs(), got: x.ncols() });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_inputs(&x)?;
        let n_layers = self.layout.n_layers();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_owned());
        for l in 0..n_layers {
            let mut z = acts[l].dot(&self.weights(l));
            z += &self.biases(l);
            if l + 1 < n_layers {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        Ok(ForwardCache { acts })
    }

    pub fn outputs(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x)?.output().to_owned())
    }

    /// Vector-Jacobian product: gradient of `sum_i g_i f(x_i)` with respect to
    /// the network parameters. The log-std slot (if any) is left at zero.
    pub fn backward(&self, cache: &ForwardCache, g: ArrayView1<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.layout.n_params()];
        let offsets = self.layout.layer_offsets();
        let mut delta = g.to_owned().insert_axis(Axis(1));
        for l in (0..self.layout.n_layers()).rev() {
            let (w_off, b_off, fan_in, fan_out) = offsets[l];
            let a_in = &cache.acts[l];
            let dw = a_in.t().dot(&delta);
            grad[w_off..w_off + fan_in * fan_out]
                .iter_mut()
                .zip(dw.iter())
                .for_each(|(d, s)| *d = *s);
            let db = delta.sum_axis(Axis(0));
            grad[b_off..b_off + fan_out].copy_from_slice(db.as_slice().unwrap());
            if l > 0 {
                let mut prev = delta.dot(&self.weights(l).t());
                prev.zip_mut_with(a_in, |d, &a| *d *= 1.0 - a * a);
                delta = prev;
            }
        }
        grad
    }

    /// Jacobian-vector product: directional derivative of every output along
    /// the parameter direction `v` (log-std slot ignored).
    pub fn jvp(&self, cache: &ForwardCache, v: &[f64]) -> Array1<f64> {
        let offsets = self.layout.layer_offsets();
        let n_layers = self.layout.n_layers();
        let n = cache.batch_len();
        let mut tangent: Option<Array2<f64>> = None;
        for (l, &(w_off, b_off, fan_in, fan_out)) in offsets.iter().enumerate() {
            let dw = ArrayView2::from_shape((fan_in, fan_out), &v[w_off..w_off + fan_in * fan_out]).unwrap();
            let db = ArrayView1::from(&v[b_off..b_off + fan_out]);
            let mut dz = cache.acts[l].dot(&dw);
            if let Some(t) = &tangent {
                dz += &t.dot(&self.weights(l));
            }
            dz += &db;
            if l + 1 < n_layers {
                dz.zip_mut_with(&cache.acts[l + 1], |d, &a| *d *= 1.0 - a * a);
            }
            tangent = Some(dz);
        }
        let out = tangent.unwrap_or_else(|| Array2::zeros((n, 1)));
        out.column(0).to_owned()
    }
}

fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    // Orthonormalize the shorter dimension of a Gaussian matrix.
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut q = Array2::<f64>::from_shape_fn((long, short), |_| rng.sample(StandardNormal));
    for j in 0..short {
        for k in 0..j {
            let proj = q.column(j).dot(&q.column(k));
            let qk = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-proj, &qk);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm > 0.0 {
            q.column_mut(j).mapv_inplace(|x| x / norm);
        }
    }
    if rows >= cols {
        q
    } else {
        q.reversed_axes().as_standard_layout().to_owned()
    }
}
