//! Windowed ridge autoregression solved in closed form.

use ndarray::{s, Array1, Array2, ArrayView3};

use crate::error::{Error, Result};
use crate::series::{Window, WindowedPairs};

/// Linear one-step predictor on the flattened window plus an intercept.
///
/// Row layout of `weights`: `w * D` lag rows (oldest step first, dimensions
/// interleaved) followed by one intercept row. The intercept is not penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeArModel {
    window: Window,
    dim: usize,
    pub lambda: f64,
    pub weights: Array2<f64>,
}

fn design(inputs: ArrayView3<'_, f64>) -> Array2<f64> {
    let (n, w, d) = inputs.dim();
    let mut x = Array2::ones((n, w * d + 1));
    for i in 0..n {
        for t in 0..w {
            for j in 0..d {
                x[[i, t * d + j]] = inputs[[i, t, j]];
            }
        }
    }
    x
}

/// In-place Cholesky factorization `a = L L^T`, lower triangle. Fails on a
/// pivot that is not clearly positive relative to the diagonal scale.
fn cholesky(a: &mut Array2<f64>) -> Result<()> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if d.is_nan() || d <= scale * 1e-13 {
            return Err(Error::Singular);
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &Array2<f64>, b: &mut Array1<f64>) {
    let n = l.nrows();
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[[i, k]] * b[k];
        }
        b[i] = v / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= l[[k, i]] * b[k];
        }
        b[i] = v / l[[i, i]];
    }
}

/// Minimizes `Σ‖y − Wᵀ[x; 1]‖² + λ‖W_lags‖²` exactly.
pub fn fit_ridge(pairs: &WindowedPairs, lambda: f64) -> Result<RidgeArModel> {
    if pairs.is_empty() {
        return Err(Error::TooShort { needed: 1, actual: 0 });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let x = design(pairs.inputs.view());
    let p = x.ncols();
    let mut gram = x.t().dot(&x);
    for i in 0..p - 1 {
        gram[[i, i]] += lambda;
    }
    let rhs = x.t().dot(&pairs.targets);
    cholesky(&mut gram).map_err(|e| {
        if lambda > 0.0 {
            Error::Numerical("ridge normal matrix is not positive definite".into())
        } else {
            e
        }
    })?;
    let mut weights = Array2::zeros((p, pairs.dim()));
    for j in 0..pairs.dim() {
        let mut col = rhs.column(j).to_owned();
        cholesky_solve(&gram, &mut col);
        weights.column_mut(j).assign(&col);
    }
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite ridge weights".into()));
    }
    Ok(RidgeArModel {
        window: Window::new(pairs.window())?,
        dim: pairs.dim(),
        lambda,
        weights,
    })
}

impl RidgeArModel {
    pub fn from_weights(window: Window, dim: usize, lambda: f64, weights: Array2<f64>) -> Result<Self> {
        if weights.dim() != (window.size() * dim + 1, dim) {
            return Err(Error::Shape {
                expected: format!("({}, {dim})", window.size() * dim + 1),
                actual: format!("{:?}", weights.shape()),
            });
        }
        Ok(Self {
            window,
            dim,
            lambda,
            weights,
        })
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bias(&self) -> ndarray::ArrayView1<'_, f64> {
        self.weights.row(self.weights.nrows() - 1)
    }

    pub fn lag_weights(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weights.slice(s![..-1, ..])
    }

    pub fn predict(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        let (_, w, d) = inputs.dim();
        if w != self.window.size() || d != self.dim {
            return Err(Error::Shape {
                expected: format!("(N, {}, {})", self.window.size(), self.dim),
                actual: format!("{:?}", inputs.shape()),
            });
        }
        Ok(design(inputs).dot(&self.weights))
    }
}
