//! Empirical joint measures and the linear-Gaussian mixture inverse problem.
//!
//! [`EmpiricalJoint`] is the workhorse data type: `n` weighted pairs
//! `(y_i, x_i)` standing for a discrete joint measure. The condition part may
//! be empty (`dy = 0`), which turns the type into a plain weighted point
//! cloud; solvers accept both uniformly.
//!
//! [`GaussianMixture`] and [`LinearGaussianProblem`] describe the inverse
//! problem `y = A x + noise` with a mixture prior and diagonal `A`, for which
//! the posterior is again a Gaussian mixture in closed form
//! ([`gmm_posterior`]).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const WEIGHT_SUM_TOL: f64 = 1e-9;

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} contains NaN or infinity")));
    }
    Ok(())
}

/// Validates nonnegativity and unit sum, then rescales so the stored weights
/// sum to 1 up to floating point rounding.
fn normalize_weights(mut weights: Array1<f64>) -> Result<Array1<f64>> {
    check_finite("weights", weights.as_slice().unwrap())?;
    if weights.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidWeights("negative entry".into()));
    }
    let sum: f64 = weights.sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidWeights(format!(
            "sum is {sum:.12}, expected 1 within {WEIGHT_SUM_TOL:.0e}"
        )));
    }
    weights.mapv_inplace(|w| w / sum);
    Ok(weights)
}

/// Weighted empirical measure on pairs `(y, x)`.
///
/// `ys` has shape `(n, dy)` and `xs` shape `(n, dx)`; `dy = 0` is allowed and
/// denotes a measure on `x` alone.
#[derive(Debug, Clone)]
pub struct EmpiricalJoint {
    ys: Array2<f64>,
    xs: Array2<f64>,
    weights: Array1<f64>,
}

impl EmpiricalJoint {
    /// Builds a joint measure, validating shapes, finiteness, and weights.
    pub fn new(ys: Array2<f64>, xs: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let n = ys.nrows();
        if n == 0 {
            return Err(Error::EmptyMeasure("no support points".into()));
        }
        if xs.nrows() != n || weights.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "ys has {} rows, xs {}, weights {}",
                n,
                xs.nrows(),
                weights.len()
            )));
        }
        check_finite("ys", ys.as_slice().unwrap())?;
        check_finite("xs", xs.as_slice().unwrap())?;
        let weights = normalize_weights(weights)?;
        Ok(EmpiricalJoint { ys, xs, weights })
    }

    /// Uniformly weighted joint measure.
    pub fn uniform(ys: Array2<f64>, xs: Array2<f64>) -> Result<Self> {
        let n = ys.nrows();
        if n == 0 {
            return Err(Error::EmptyMeasure("no support points".into()));
        }
        Self::new(ys, xs, Array1::from_elem(n, 1.0 / n as f64))
    }

    /// Measure on `x` alone (`dy = 0`).
    pub fn from_xs(xs: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let n = xs.nrows();
        Self::new(Array2::zeros((n, 0)), xs, weights)
    }

    /// Uniformly weighted measure on `x` alone.
    pub fn uniform_xs(xs: Array2<f64>) -> Result<Self> {
        let n = xs.nrows();
        if n == 0 {
            return Err(Error::EmptyMeasure("no support points".into()));
        }
        Self::from_xs(xs, Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn n(&self) -> usize {
        self.ys.nrows()
    }

    pub fn dy(&self) -> usize {
        self.ys.ncols()
    }

    pub fn dx(&self) -> usize {
        self.xs.ncols()
    }

    pub fn ys(&self) -> ArrayView2<'_, f64> {
        self.ys.view()
    }

    pub fn xs(&self) -> ArrayView2<'_, f64> {
        self.xs.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    /// Rows `(y_i, x_i)` concatenated into shape `(n, dy + dx)`.
    pub fn joined(&self) -> Array2<f64> {
        let n = self.n();
        let mut out = Array2::zeros((n, self.dy() + self.dx()));
        for i in 0..n {
            let mut row = out.row_mut(i);
            for (j, v) in self.ys.row(i).iter().enumerate() {
                row[j] = *v;
            }
            for (j, v) in self.xs.row(i).iter().enumerate() {
                row[self.dy() + j] = *v;
            }
        }
        out
    }

    /// Sub-measure on the given row indices with weights rescaled to sum to 1.
    ///
    /// The total weight of the selected rows must be positive.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyMeasure("empty index set".into()));
        }
        let mass: f64 = indices.iter().map(|&i| self.weights[i]).sum();
        if mass <= 0.0 {
            return Err(Error::InvalidWeights("selected rows carry no mass".into()));
        }
        let ys = self.ys.select(Axis(0), indices);
        let xs = self.xs.select(Axis(0), indices);
        let weights = Array1::from_iter(indices.iter().map(|&i| self.weights[i] / mass));
        Ok(EmpiricalJoint { ys, xs, weights })
    }
}

#[derive(Serialize, Deserialize)]
struct GmmJson {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Array1<f64>,
    means: Array2<f64>,
    variances: Array2<f64>,
}

impl GaussianMixture {
    /// Builds a mixture; `means` and `variances` have shape `(K, d)` and every
    /// variance must be strictly positive.
    pub fn new(weights: Array1<f64>, means: Array2<f64>, variances: Array2<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::EmptyMeasure("mixture has no components".into()));
        }
        if means.nrows() != k || variances.nrows() != k || means.ncols() != variances.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "weights {}, means {}x{}, variances {}x{}",
                k,
                means.nrows(),
                means.ncols(),
                variances.nrows(),
                variances.ncols()
            )));
        }
        check_finite("means", means.as_slice().unwrap())?;
        if variances.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidWeights(
                "variances must be finite and strictly positive".into(),
            ));
        }
        let weights = normalize_weights(weights)?;
        Ok(GaussianMixture {
            weights,
            means,
            variances,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn means(&self) -> ArrayView2<'_, f64> {
        self.means.view()
    }

    pub fn variances(&self) -> ArrayView2<'_, f64> {
        self.variances.view()
    }

    /// Log density of the mixture at `x`, evaluated with max-subtraction so
    /// far tails do not underflow to `-inf` prematurely.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "dimension mismatch in log_density");
        let mut terms = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let mut lp = self.weights[k].ln();
            for i in 0..self.dim() {
                let v = self.variances[[k, i]];
                let d = x[i] - self.means[[k, i]];
                lp += -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + d * d / v);
            }
            terms.push(lp);
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    /// JSON document of the form `{"weights": [...], "means": [[...]],
    /// "variances": [[...]]}`.
    pub fn to_json(&self) -> String {
        let doc = GmmJson {
            weights: self.weights.to_vec(),
            means: self.means.outer_iter().map(|r| r.to_vec()).collect(),
            variances: self.variances.outer_iter().map(|r| r.to_vec()).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("gmm serialization cannot fail")
    }

    /// Parses and validates the JSON layout produced by [`Self::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GmmJson = serde_json::from_str(text)?;
        let k = doc.weights.len();
        if k == 0 || doc.means.len() != k || doc.variances.len() != k {
            return Err(Error::ShapeMismatch(
                "weights, means, variances must have equal length".into(),
            ));
        }
        let d = doc.means[0].len();
        if doc.means.iter().any(|m| m.len() != d) || doc.variances.iter().any(|v| v.len() != d) {
            return Err(Error::ShapeMismatch("ragged means or variances".into()));
        }
        let means = Array2::from_shape_vec((k, d), doc.means.concat())
            .expect("shape checked above");
        let variances = Array2::from_shape_vec((k, d), doc.variances.concat())
            .expect("shape checked above");
        GaussianMixture::new(Array1::from_vec(doc.weights), means, variances)
    }
}

/// Diagonal linear forward operator with additive Gaussian noise:
/// `y = diag(a) x + noise_std * eta`.
#[derive(Debug, Clone)]
pub struct LinearGaussianProblem {
    diag: Vec<f64>,
    noise_std: f64,
}

impl LinearGaussianProblem {
    pub fn new(diag: Vec<f64>, noise_std: f64) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::ShapeMismatch("empty forward diagonal".into()));
        }
        check_finite("diag", &diag)?;
        if diag.iter().any(|a| *a == 0.0) {
            return Err(Error::InvalidConfig(
                "forward diagonal entries must be nonzero".into(),
            ));
        }
        if !(noise_std > 0.0) || !noise_std.is_finite() {
            return Err(Error::InvalidConfig(
                "noise_std must be finite and positive".into(),
            ));
        }
        Ok(LinearGaussianProblem { diag, noise_std })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Noiseless forward map `diag(a) x`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "dimension mismatch in forward");
        self.diag.iter().zip(x).map(|(a, xi)| a * xi).collect()
    }
}

/// Draws `n` samples from the mixture; each row of the result is one sample.
///
/// Components are chosen categorically by weight, then coordinates drawn
/// independently. Deterministic given the generator state.
pub fn gmm_sample(gmm: &GaussianMixture, n: usize, rng: &mut Rng) -> Array2<f64> {
    assert!(n >= 1, "need at least one sample");
    let d = gmm.dim();
    let weights = gmm.weights.as_slice().unwrap();
    let mut out = Array2::zeros((n, d));
    for s in 0..n {
        let k = rng.choose_weighted(weights);
        for i in 0..d {
            out[[s, i]] = gmm.means[[k, i]] + gmm.variances[[k, i]].sqrt() * rng.normal();
        }
    }
    out
}

/// Noisy forward observation `diag(a) x + noise_std * eta`.
pub fn forward_apply(problem: &LinearGaussianProblem, x: &[f64], rng: &mut Rng) -> Vec<f64> {
    problem
        .forward(x)
        .into_iter()
        .map(|v| v + problem.noise_std * rng.normal())
        .collect()
}

/// Closed-form posterior of a diagonal linear-Gaussian model with a mixture
/// prior.
///
/// Per component `k` and coordinate `i` the conjugate update is
/// `var' = (1/v + a^2/sigma^2)^{-1}` and `mean' = var' (mu/v + a y/sigma^2)`;
/// the component weight is multiplied by the evidence
/// `N(y; a mu, a^2 v + sigma^2)` and renormalized. Evidence terms are
/// combined in log-domain with max-subtraction so that an outlying `y`
/// cannot underflow every weight to zero.
pub fn gmm_posterior(
    problem: &LinearGaussianProblem,
    prior: &GaussianMixture,
    y: &[f64],
) -> Result<GaussianMixture> {
    let d = prior.dim();
    if problem.dim() != d || y.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "prior dim {}, problem dim {}, y dim {}",
            d,
            problem.dim(),
            y.len()
        )));
    }
    check_finite("y", y)?;

    let sigma2 = problem.noise_std * problem.noise_std;
    let k_comp = prior.k();
    let mut means = Array2::zeros((k_comp, d));
    let mut variances = Array2::zeros((k_comp, d));
    let mut log_w = Vec::with_capacity(k_comp);

    for k in 0..k_comp {
        let mut lw = prior.weights[k].ln();
        for i in 0..d {
            let a = problem.diag[i];
            let v = prior.variances[[k, i]];
            let mu = prior.means[[k, i]];

            let post_var = 1.0 / (1.0 / v + a * a / sigma2);
            variances[[k, i]] = post_var;
            means[[k, i]] = post_var * (mu / v + a * y[i] / sigma2);

            let s = a * a * v + sigma2;
            let r = y[i] - a * mu;
            lw += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + r * r / s);
        }
        log_w.push(lw);
    }

    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights = Array1::from_iter(log_w.iter().map(|lw| (lw - m).exp()));
    let total: f64 = weights.sum();
    weights.mapv_inplace(|w| w / total);

    GaussianMixture::new(weights, means, variances)
}
