//! Single-layer LSTM with a linear readout of the final hidden state.
//!
//! Gate pre-activations are stacked in the order input, forget, cell, output:
//!
//! ```text
//! z_t = W_x x_t + W_h h_{t-1} + b          (4H)
//! i = σ(z_i)  f = σ(z_f)  g = tanh(z_g)  o = σ(z_o)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! y   = W_out h_w + b_out                   (D)
//! ```
//!
//! The state starts at zero for every window. All batched operations keep the
//! batch along rows, so each step is a pair of dense matrix products.

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::series::Window;

/// Trainable tensors. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `(4H, D)`
    pub w_x: Array2<f64>,
    /// `(4H, H)`
    pub w_h: Array2<f64>,
    /// `(4H)`
    pub b: Array1<f64>,
    /// `(D, H)`
    pub w_out: Array2<f64>,
    /// `(D)`
    pub b_out: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w_x: Array2::zeros((4 * hidden, dim)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
            w_out: Array2::zeros((dim, hidden)),
            b_out: Array1::zeros(dim),
        }
    }

    pub const NAMES: [&'static str; 5] = ["w_x", "w_h", "b", "w_out", "b_out"];

    pub fn slices(&self) -> [&[f64]; 5] {
        [
            self.w_x.as_slice().expect("standard layout"),
            self.w_h.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
            self.w_out.as_slice().expect("standard layout"),
            self.b_out.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w_x.as_slice_mut().expect("standard layout"),
            self.w_h.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
            self.w_out.as_slice_mut().expect("standard layout"),
            self.b_out.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn sizes(&self) -> [usize; 5] {
        self.slices().map(<[f64]>::len)
    }

    pub fn count(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    window: Window,
    dim: usize,
    hidden: usize,
    pub params: LstmParams,
}

/// Activations saved by [`LstmModel::forward`] for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmCache {
    inputs: ndarray::Array3<f64>,
    /// Per step, activated gates `(N, 4H)` in i, f, g, o order.
    gates: Vec<Array2<f64>>,
    /// Per step, cell state `(N, H)`.
    cells: Vec<Array2<f64>>,
    /// Per step, `tanh(c_t)`.
    cell_tanh: Vec<Array2<f64>>,
    /// Per step, hidden state `(N, H)`.
    hidden: Vec<Array2<f64>>,
}

/// `z += a · wᵀ`. A handful of rows (recursive rollouts) is cheaper as row
/// dot products than as a packed matrix product.
fn add_product_t(z: &mut Array2<f64>, a: ArrayView2<'_, f64>, w: &Array2<f64>) {
    if a.nrows() > 2 {
        general_mat_mul(1.0, &a, &w.t(), 1.0, z);
        return;
    }
    for (a_row, mut z_row) in a.rows().into_iter().zip(z.rows_mut()) {
        for (zv, w_row) in z_row.iter_mut().zip(w.rows()) {
            *zv += a_row.dot(&w_row);
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmModel {
    pub fn zeros(window: Window, dim: usize, hidden: usize) -> Self {
        Self {
            window,
            dim,
            hidden,
            params: LstmParams::zeros(dim, hidden),
        }
    }

    /// Uniform(−1/√H, 1/√H) weights, forget-gate bias 1.
    pub fn init<R: Rng>(window: Window, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self::init_with_forget_bias(window, dim, hidden, 1.0, rng)
    }

    /// As [`LstmModel::init`] with a chosen forget-gate bias. Larger values
    /// start the cell closer to a pure memory, which helps long windows.
    pub fn init_with_forget_bias<R: Rng>(window: Window, dim: usize, hidden: usize, forget_bias: f64, rng: &mut R) -> Self {
        let mut model = Self::zeros(window, dim, hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        for tensor in model.params.slices_mut() {
            for v in tensor.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        model.params.b.slice_mut(s![hidden..2 * hidden]).fill(forget_bias);
        model
    }

    pub fn from_params(window: Window, params: LstmParams) -> Result<Self> {
        let hidden = params.w_h.ncols();
        let dim = params.w_x.ncols();
        let expected = LstmParams::zeros(dim, hidden);
        if params.sizes() != expected.sizes()
            || params.w_x.dim() != expected.w_x.dim()
            || params.w_out.dim() != expected.w_out.dim()
        {
            return Err(Error::Shape {
                expected: format!("LSTM tensors for D={dim}, H={hidden}"),
                actual: format!("{:?}", params.sizes()),
            });
        }
        Ok(Self {
            window,
            dim,
            hidden,
            params,
        })
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_inputs(&self, inputs: &ArrayView3<'_, f64>) -> Result<()> {
        let (_, w, d) = inputs.dim();
        if w != self.window.size() || d != self.dim {
            return Err(Error::Shape {
                expected: format!("(N, {}, {})", self.window.size(), self.dim),
                actual: format!("{:?}", inputs.shape()),
            });
        }
        Ok(())
    }

    /// Runs a batch `(N, w, D)` and returns predictions `(N, D)` with the cache.
    pub fn forward(&self, inputs: ArrayView3<'_, f64>) -> Result<(Array2<f64>, LstmCache)> {
        self.check_inputs(&inputs)?;
        let (n, w, _) = inputs.dim();
        let h = self.hidden;
        let p = &self.params;

        let mut cache = LstmCache {
            inputs: inputs.to_owned(),
            gates: Vec::with_capacity(w),
            cells: Vec::with_capacity(w),
            cell_tanh: Vec::with_capacity(w),
            hidden: Vec::with_capacity(w),
        };
        let mut h_prev = Array2::<f64>::zeros((n, h));
        let mut c_prev = Array2::<f64>::zeros((n, h));

        for t in 0..w {
            let x_t = inputs.slice(s![.., t, ..]);
            let mut z = Array2::zeros((n, 4 * h));
            add_product_t(&mut z, x_t, &p.w_x);
            if t > 0 {
                add_product_t(&mut z, h_prev.view(), &p.w_h);
            }
            z += &p.b;

            let mut c = Array2::zeros((n, h));
            let mut tc = Array2::zeros((n, h));
            let mut hn = Array2::zeros((n, h));
            {
                let zs = z.as_slice_mut().expect("standard layout");
                let cp = c_prev.as_slice().expect("standard layout");
                let cs = c.as_slice_mut().expect("standard layout");
                let ts = tc.as_slice_mut().expect("standard layout");
                let hs = hn.as_slice_mut().expect("standard layout");
                for r in 0..n {
                    let zr = &mut zs[r * 4 * h..(r + 1) * 4 * h];
                    for k in 0..h {
                        let i = sigmoid(zr[k]);
                        let f = sigmoid(zr[h + k]);
                        let g = zr[2 * h + k].tanh();
                        let o = sigmoid(zr[3 * h + k]);
                        zr[k] = i;
                        zr[h + k] = f;
                        zr[2 * h + k] = g;
                        zr[3 * h + k] = o;
                        let idx = r * h + k;
                        let cv = f * cp[idx] + i * g;
                        let tv = cv.tanh();
                        cs[idx] = cv;
                        ts[idx] = tv;
                        hs[idx] = o * tv;
                    }
                }
            }
            cache.gates.push(z);
            cache.cells.push(c.clone());
            cache.cell_tanh.push(tc);
            cache.hidden.push(hn.clone());
            h_prev = hn;
            c_prev = c;
        }

        let mut out = Array2::zeros((n, self.dim));
        general_mat_mul(1.0, &h_prev, &p.w_out.t(), 0.0, &mut out);
        out += &p.b_out;
        Ok((out, cache))
    }

    /// Predictions only, processed in chunks to bound cache memory.
    pub fn predict(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        const CHUNK: usize = 1024;
        self.check_inputs(&inputs)?;
        let n = inputs.dim().0;
        if n <= CHUNK {
            return Ok(self.forward(inputs)?.0);
        }
        let mut out = Array2::zeros((n, self.dim));
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let (y, _) = self.forward(inputs.slice(s![start..end, .., ..]))?;
            out.slice_mut(s![start..end, ..]).assign(&y);
        }
        Ok(out)
    }

    /// Backpropagation through time. `d_out` is the loss gradient with
    /// respect to the predictions `(N, D)`; returns gradients for every tensor.
    pub fn backward(&self, cache: &LstmCache, d_out: ArrayView2<'_, f64>) -> Result<LstmParams> {
        let (n, w, _) = cache.inputs.dim();
        if d_out.dim() != (n, self.dim) {
            return Err(Error::Shape {
                expected: format!("({n}, {})", self.dim),
                actual: format!("{:?}", d_out.shape()),
            });
        }
        let h = self.hidden;
        let p = &self.params;
        let mut grads = LstmParams::zeros(self.dim, h);

        let h_last = &cache.hidden[w - 1];
        general_mat_mul(1.0, &d_out.t(), h_last, 0.0, &mut grads.w_out);
        grads.b_out = d_out.sum_axis(Axis(0));

        let mut dh = d_out.dot(&p.w_out);
        let mut dc = Array2::<f64>::zeros((n, h));
        let zeros = Array2::<f64>::zeros((n, h));
        let mut dz = Array2::<f64>::zeros((n, 4 * h));

        for t in (0..w).rev() {
            let gates = cache.gates[t].as_slice().expect("standard layout");
            let tc = cache.cell_tanh[t].as_slice().expect("standard layout");
            let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zeros };
            let cp = c_prev.as_slice().expect("standard layout");
            {
                let dhs = dh.as_slice().expect("standard layout");
                let dcs = dc.as_slice_mut().expect("standard layout");
                let dzs = dz.as_slice_mut().expect("standard layout");
                for r in 0..n {
                    let gr = &gates[r * 4 * h..(r + 1) * 4 * h];
                    let dzr = &mut dzs[r * 4 * h..(r + 1) * 4 * h];
                    for k in 0..h {
                        let idx = r * h + k;
                        let (i, f, g, o) = (gr[k], gr[h + k], gr[2 * h + k], gr[3 * h + k]);
                        let tv = tc[idx];
                        let dc_total = dcs[idx] + dhs[idx] * o * (1.0 - tv * tv);
                        dzr[k] = dc_total * g * i * (1.0 - i);
                        dzr[h + k] = dc_total * cp[idx] * f * (1.0 - f);
                        dzr[2 * h + k] = dc_total * i * (1.0 - g * g);
                        dzr[3 * h + k] = dhs[idx] * tv * o * (1.0 - o);
                        dcs[idx] = dc_total * f;
                    }
                }
            }
            let x_t = cache.inputs.slice(s![.., t, ..]);
            general_mat_mul(1.0, &dz.t(), &x_t, 1.0, &mut grads.w_x);
            grads.b += &dz.sum_axis(Axis(0));
            if t > 0 {
                general_mat_mul(1.0, &dz.t(), &cache.hidden[t - 1], 1.0, &mut grads.w_h);
                general_mat_mul(1.0, &dz, &p.w_h, 0.0, &mut dh);
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::stream_rng;
    use ndarray::{Array3, Array};
    use rand::Rng;

    fn random_model(seed: u64, dim: usize, hidden: usize, w: usize) -> LstmModel {
        let mut rng = stream_rng(seed, 9);
        let mut m = LstmModel::zeros(Window::new(w).unwrap(), dim, hidden);
        for tensor in m.params.slices_mut() {
            for v in tensor.iter_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
        m
    }

    fn random_block(seed: u64, n: usize, w: usize, d: usize) -> Array3<f64> {
        let mut rng = stream_rng(seed, 10);
        Array::from_shape_fn((n, w, d), |_| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn parameter_count_formula() {
        for (d, h) in [(1, 64), (2, 128), (3, 5)] {
            let m = LstmModel::zeros(Window::new(4).unwrap(), d, h);
            assert_eq!(m.param_count(), 4 * h * (d + h + 1) + h * d + d);
        }
    }

    #[test]
    fn zero_network_outputs_readout_bias() {
        let mut m = LstmModel::zeros(Window::new(3).unwrap(), 2, 4);
        m.params.b_out = ndarray::array![0.25, -1.5];
        let x = random_block(1, 5, 3, 2);
        let (y, _) = m.forward(x.view()).unwrap();
        let (y2, _) = m.forward((&x * 2.0).view()).unwrap();
        for row in y.rows() {
            assert_eq!(row.to_vec(), vec![0.25, -1.5]);
        }
        assert_eq!(y, y2);
    }

    /// Step-by-step scalar recomputation for H=2, D=1, w=2.
    #[test]
    fn matches_scalar_oracle() {
        let m = random_model(3, 1, 2, 2);
        let x = [0.7, -0.4];
        let p = &m.params;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut hs, mut cs) = ([0.0f64; 2], [0.0f64; 2]);
        for &xt in &x {
            let mut nh = [0.0; 2];
            let mut nc = [0.0; 2];
            for k in 0..2 {
                let pre = |gate: usize| {
                    let row = gate * 2 + k;
                    p.w_x[[row, 0]] * xt + p.w_h[[row, 0]] * hs[0] + p.w_h[[row, 1]] * hs[1] + p.b[row]
                };
                let (i, f, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
                nc[k] = f * cs[k] + i * g;
                nh[k] = o * nc[k].tanh();
            }
            hs = nh;
            cs = nc;
        }
        let expected = p.w_out[[0, 0]] * hs[0] + p.w_out[[0, 1]] * hs[1] + p.b_out[0];
        let input = Array3::from_shape_vec((1, 2, 1), x.to_vec()).unwrap();
        let (y, _) = m.forward(input.view()).unwrap();
        assert!((y[[0, 0]] - expected).abs() < 1e-12, "{} vs {expected}", y[[0, 0]]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let m = LstmModel::zeros(Window::new(3).unwrap(), 2, 4);
        assert!(m.forward(Array3::zeros((1, 4, 2)).view()).is_err());
        assert!(m.forward(Array3::zeros((1, 3, 1)).view()).is_err());
        let (_, cache) = m.forward(Array3::zeros((2, 3, 2)).view()).unwrap();
        assert!(m.backward(&cache, Array2::zeros((2, 1)).view()).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let m = random_model(4, 2, 3, 4);
        let x = random_block(4, 3, 4, 2);
        let (_, cache) = m.forward(x.view()).unwrap();
        let g = m.backward(&cache, Array2::zeros((3, 2)).view()).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn readout_bias_gradient_is_output_gradient() {
        let m = random_model(5, 2, 3, 4);
        let x = random_block(5, 1, 4, 2);
        let (_, cache) = m.forward(x.view()).unwrap();
        let d = ndarray::array![[0.3, -1.1]];
        let g = m.backward(&cache, d.view()).unwrap();
        assert_eq!(g.b_out.to_vec(), vec![0.3, -1.1]);
    }

    /// Central finite differences (h = 1e-5) on H=4, D=2, w=5.
    #[test]
    fn gradients_match_finite_differences() {
        let mut m = random_model(6, 2, 4, 5);
        let x = random_block(6, 3, 5, 2);
        let target = random_block(7, 3, 1, 2).into_shape_with_order((3, 2)).unwrap();
        let loss = |m: &LstmModel| {
            let (y, _) = m.forward(x.view()).unwrap();
            0.5 * (&y - &target).mapv(|v| v * v).sum()
        };
        let (y, cache) = m.forward(x.view()).unwrap();
        let grads = m.backward(&cache, (&y - &target).view()).unwrap();
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let step = 1e-5;
        for (ti, tensor) in analytic.iter().enumerate() {
            for (k, &a) in tensor.iter().enumerate() {
                let orig = m.params.slices()[ti][k];
                m.params.slices_mut()[ti][k] = orig + step;
                let up = loss(&m);
                m.params.slices_mut()[ti][k] = orig - step;
                let down = loss(&m);
                m.params.slices_mut()[ti][k] = orig;
                let numeric = (up - down) / (2.0 * step);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "{}[{k}]: {a} vs {numeric}", LstmParams::NAMES[ti]);
            }
        }
    }
}
