//! Conditional generator `G(y, z)`: a small dense network, hand-rolled
//! backprop, Adam, the three training objectives, and the evaluation
//! metrics used by the experiments.
//!
//! The network maps the concatenated `(y, z)` through hidden layers with a
//! `tanh` nonlinearity and a linear output. Three losses train it against
//! paired data `(y_i, x_i)`:
//!
//! * **joint** — Sinkhorn divergence between `{(y_i, x_i)}` and
//!   `{(y_i, G(y_i, z_i))}` under the plain squared joint cost;
//! * **beta** — the same divergence under `‖Δx‖² + β‖Δy‖²`, penalizing
//!   condition transport;
//! * **diagonal** — the paired mean squared error
//!   `(1/n) Σ ‖G(y_i, z_i) − x_i‖²`, which equals the squared conditional
//!   distance between the two joints whenever the `y_i` are distinct.
//!
//! Divergence gradients reach the parameters only through the generated
//! x-block; the conditions are data. Training is sequential and
//! bit-reproducible from `(seed, config)`; evaluations fan out over
//! condition values with an ordered reduction.

use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cost::CostSpec;
use crate::error::{Error, Result};
use crate::measures::{
    forward_apply, gmm_posterior, gmm_sample, EmpiricalJoint, GaussianMixture,
    LinearGaussianProblem,
};
use crate::par;
use crate::rng::Rng;
use crate::sinkhorn::{sinkhorn_fit_grad, SinkhornConfig};
use crate::vecmath;

/// The fixed hidden nonlinearity; recorded in checkpoints.
pub const ACTIVATION: &str = "tanh";

const CHECKPOINT_MAGIC: [u8; 4] = *b"CGEN";

/// Dense feedforward conditional generator.
#[derive(Debug, Clone)]
pub struct GeneratorNet {
    dy: usize,
    dz: usize,
    dx: usize,
    /// Layer `l` maps width `w_l` to `w_{l+1}`; matrices are `(w_l, w_{l+1})`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl GeneratorNet {
    /// Fresh network with Xavier-uniform weights and zero biases.
    pub fn new(dy: usize, dz: usize, dx: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        if dx == 0 || dy + dz == 0 {
            return Err(Error::InvalidParameter(format!(
                "degenerate generator dims: dy {dy}, dz {dz}, dx {dx}"
            )));
        }
        if hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("zero-width hidden layer".into()));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(dy + dz);
        widths.extend_from_slice(hidden);
        widths.push(dx);

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.uniform_in(-scale, scale));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(GeneratorNet {
            dy,
            dz,
            dx,
            weights,
            biases,
        })
    }

    pub fn dy(&self) -> usize {
        self.dy
    }

    pub fn dz(&self) -> usize {
        self.dz
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    /// Layer widths, input through output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.weights.iter().map(|m| m.nrows()).collect();
        w.push(self.dx);
        w
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Forward pass on a batch of concatenated `(y, z)` rows.
    pub fn forward(&self, inputs: &ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(mlp_forward(self, inputs)?.0)
    }

    /// Generate one x per condition row, drawing fresh latents.
    pub fn generate(&self, ys: &ArrayView2<f64>, rng: &mut Rng) -> Result<Array2<f64>> {
        if ys.ncols() != self.dy {
            return Err(Error::ShapeMismatch(format!(
                "condition dim {} vs network dy {}",
                ys.ncols(),
                self.dy
            )));
        }
        let n = ys.nrows();
        let mut inputs = Array2::zeros((n, self.dy + self.dz));
        for i in 0..n {
            for d in 0..self.dy {
                inputs[[i, d]] = ys[[i, d]];
            }
            for (d, v) in rng.normal_vec(self.dz).into_iter().enumerate() {
                inputs[[i, self.dy + d]] = v;
            }
        }
        self.forward(&inputs.view())
    }

    /// Generate `n` samples for a single condition value.
    pub fn sample_given(&self, y: &[f64], n: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        let ys = Array2::from_shape_fn((n, y.len()), |(_, d)| y[d]);
        self.generate(&ys.view(), rng)
    }
}

/// Activations cached by the forward pass: `layers[0]` is the input batch,
/// `layers[l]` the post-`tanh` output of hidden layer `l`.
pub struct MlpCache {
    layers: Vec<Array2<f64>>,
}

/// Parameter gradients matching the network's layer shapes.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Dense forward pass returning the output batch and cached activations.
pub fn mlp_forward(net: &GeneratorNet, inputs: &ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
    let expected = net.dy + net.dz;
    if inputs.ncols() != expected {
        return Err(Error::ShapeMismatch(format!(
            "input dim {} vs network input {}",
            inputs.ncols(),
            expected
        )));
    }
    let n_layers = net.weights.len();
    let mut layers = Vec::with_capacity(n_layers);
    layers.push(inputs.to_owned());
    let mut current = inputs.to_owned();
    for (l, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
        let mut z = current.dot(w);
        z += b;
        if l + 1 < n_layers {
            z.mapv_inplace(f64::tanh);
            layers.push(z.clone());
        }
        current = z;
    }
    Ok((current, MlpCache { layers }))
}

/// Backpropagate an output gradient through cached activations.
///
/// `grad_out` is `∂L/∂output`, one row per batch element; the result stacks
/// `∂L/∂W_l` and `∂L/∂b_l` for every layer.
pub fn mlp_backward(net: &GeneratorNet, cache: &MlpCache, grad_out: &ArrayView2<f64>) -> MlpGrads {
    let n_layers = net.weights.len();
    let mut d_weights = vec![Array2::zeros((0, 0)); n_layers];
    let mut d_biases = vec![Array1::zeros(0); n_layers];

    let mut dz = grad_out.to_owned();
    for l in (0..n_layers).rev() {
        let a_prev = &cache.layers[l];
        d_weights[l] = a_prev.t().dot(&dz);
        d_biases[l] = dz.sum_axis(Axis(0));
        if l > 0 {
            // tanh'(z) = 1 - tanh(z)^2, reconstructed from the cached output.
            let da = dz.dot(&net.weights[l].t());
            dz = da * &cache.layers[l].mapv(|a| 1.0 - a * a);
        }
    }
    MlpGrads {
        weights: d_weights,
        biases: d_biases,
    }
}

/// Adam accumulators for a [`GeneratorNet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub step: usize,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl AdamState {
    pub fn new(net: &GeneratorNet, lr: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and positive, got {lr}"
            )));
        }
        Ok(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            step: 0,
            m_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        })
    }

    /// One bias-corrected Adam update in place.
    pub fn update(&mut self, net: &mut GeneratorNet, grads: &MlpGrads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for l in 0..net.weights.len() {
            self.m_w[l].zip_mut_with(&grads.weights[l], |m, g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g
            });
            self.v_w[l].zip_mut_with(&grads.weights[l], |v, g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g
            });
            let (m, v) = (&self.m_w[l], &self.v_w[l]);
            net.weights[l].zip_mut_with(
                &ndarray::Zip::from(m).and(v).map_collect(|m, v| {
                    self.lr * (m / c1) / ((v / c2).sqrt() + self.eps_adam)
                }),
                |p, d| *p -= d,
            );
            self.m_b[l].zip_mut_with(&grads.biases[l], |m, g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g
            });
            self.v_b[l].zip_mut_with(&grads.biases[l], |v, g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g
            });
            let (m, v) = (&self.m_b[l], &self.v_b[l]);
            net.biases[l].zip_mut_with(
                &ndarray::Zip::from(m).and(v).map_collect(|m, v| {
                    self.lr * (m / c1) / ((v / c2).sqrt() + self.eps_adam)
                }),
                |p, d| *p -= d,
            );
        }
    }
}

/// Which objective a training run minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Joint,
    Beta,
    Diagonal,
}

impl LossVariant {
    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::Joint => "joint",
            LossVariant::Beta => "beta",
            LossVariant::Diagonal => "diagonal",
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_variant: LossVariant,
    /// Condition-transport penalty for the beta variant.
    pub beta: f64,
    /// Entropic solver settings for the divergence losses.
    pub sinkhorn: SinkhornConfig,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    pub lr: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sinkhorn.validate()?;
        if self.iters == 0 {
            return Err(Error::InvalidConfig("iters must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and positive, got {}",
                self.lr
            )));
        }
        match self.loss_variant {
            LossVariant::Joint | LossVariant::Beta => {
                if self.batch < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "divergence losses need batch >= 2, got {}",
                        self.batch
                    )));
                }
                if self.loss_variant == LossVariant::Beta
                    && (!(self.beta > 0.0) || !self.beta.is_finite())
                {
                    return Err(Error::InvalidConfig(format!(
                        "beta variant needs finite beta > 0, got {}",
                        self.beta
                    )));
                }
            }
            LossVariant::Diagonal => {
                if self.batch == 0 {
                    return Err(Error::InvalidConfig("batch must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Outcome of one training step.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// Training loss. For the divergence losses this is the fit part
    /// `OT_ε(data, gen) − ½ OT_ε(gen, gen)`: the data-self term is constant
    /// in the generator and its solve is skipped.
    pub loss: f64,
    /// False when any entropic solve in the step hit its iteration cap.
    pub sinkhorn_converged: bool,
}

fn check_batch(
    net: &GeneratorNet,
    ys: &ArrayView2<f64>,
    xs: &ArrayView2<f64>,
    zs: &ArrayView2<f64>,
) -> Result<()> {
    if ys.nrows() != xs.nrows() || ys.nrows() != zs.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "batch rows disagree: {} conditions, {} values, {} latents",
            ys.nrows(),
            xs.nrows(),
            zs.nrows()
        )));
    }
    if ys.ncols() != net.dy || xs.ncols() != net.dx || zs.ncols() != net.dz {
        return Err(Error::ShapeMismatch(format!(
            "batch dims ({}, {}, {}) vs network ({}, {}, {})",
            ys.ncols(),
            xs.ncols(),
            zs.ncols(),
            net.dy,
            net.dx,
            net.dz
        )));
    }
    Ok(())
}

fn concat_inputs(ys: &ArrayView2<f64>, zs: &ArrayView2<f64>) -> Array2<f64> {
    let n = ys.nrows();
    let (dy, dz) = (ys.ncols(), zs.ncols());
    Array2::from_shape_fn((n, dy + dz), |(i, d)| {
        if d < dy {
            ys[[i, d]]
        } else {
            zs[[i, d - dy]]
        }
    })
}

fn divergence_step(
    net: &mut GeneratorNet,
    adam: &mut AdamState,
    ys: &ArrayView2<f64>,
    xs: &ArrayView2<f64>,
    zs: &ArrayView2<f64>,
    spec: &CostSpec,
    sinkhorn: &SinkhornConfig,
) -> Result<StepReport> {
    check_batch(net, ys, xs, zs)?;
    if ys.nrows() < 2 {
        return Err(Error::InvalidParameter(
            "divergence losses need batch >= 2".into(),
        ));
    }
    let inputs = concat_inputs(ys, zs);
    let (xhat, cache) = mlp_forward(net, &inputs.view())?;
    let real = EmpiricalJoint::uniform(ys.to_owned(), xs.to_owned())?;
    let fake = EmpiricalJoint::uniform(ys.to_owned(), xhat)?;
    let dg = sinkhorn_fit_grad(&real, &fake, spec, sinkhorn)?;
    let grads = mlp_backward(net, &cache, &dg.grads.xs.view());
    adam.update(net, &grads);
    Ok(StepReport {
        loss: dg.value,
        sinkhorn_converged: dg.converged,
    })
}

/// One step on the joint objective: Sinkhorn divergence between the data
/// cloud `{(y_i, x_i)}` and the generated cloud `{(y_i, G(y_i, z_i))}` under
/// the plain squared joint cost.
pub fn train_step_joint(
    net: &mut GeneratorNet,
    adam: &mut AdamState,
    ys: &ArrayView2<f64>,
    xs: &ArrayView2<f64>,
    zs: &ArrayView2<f64>,
    sinkhorn: &SinkhornConfig,
) -> Result<StepReport> {
    let spec = CostSpec::euclidean(2)?;
    divergence_step(net, adam, ys, xs, zs, &spec, sinkhorn)
}

/// One step on the beta objective: the same divergence under
/// `‖Δx‖² + β‖Δy‖²`.
pub fn train_step_beta(
    net: &mut GeneratorNet,
    adam: &mut AdamState,
    ys: &ArrayView2<f64>,
    xs: &ArrayView2<f64>,
    zs: &ArrayView2<f64>,
    beta: f64,
    sinkhorn: &SinkhornConfig,
) -> Result<StepReport> {
    let spec = CostSpec::beta_sum(2, beta)?;
    divergence_step(net, adam, ys, xs, zs, &spec, sinkhorn)
}

/// One step on the paired objective `(1/n) Σ ‖G(y_i, z_i) − x_i‖²`.
///
/// With distinct conditions this loss is exactly the squared conditional
/// distance between the generated and real joints, so minimizing it needs no
/// transport solve at all.
pub fn train_step_diagonal(
    net: &mut GeneratorNet,
    adam: &mut AdamState,
    ys: &ArrayView2<f64>,
    xs: &ArrayView2<f64>,
    zs: &ArrayView2<f64>,
) -> Result<StepReport> {
    check_batch(net, ys, xs, zs)?;
    let n = ys.nrows() as f64;
    let inputs = concat_inputs(ys, zs);
    let (xhat, cache) = mlp_forward(net, &inputs.view())?;
    let diff = &xhat - xs;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad_out = diff.mapv(|d| 2.0 * d / n);
    let grads = mlp_backward(net, &cache, &grad_out.view());
    adam.update(net, &grads);
    Ok(StepReport {
        loss,
        sinkhorn_converged: true,
    })
}

/// Summary of a full training run. Losses follow the [`StepReport`]
/// convention for the active variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_loss: f64,
    /// Mean loss over the final tenth of the run (at least one step).
    pub tail_loss: f64,
    pub unconverged_steps: usize,
}

/// Drive a full run: each iteration draws a fresh batch of `(y, x)` pairs
/// and latents, then applies the configured step. Deterministic given the
/// batch sampler and the `rng` state.
pub fn train_loop<S>(
    net: &mut GeneratorNet,
    cfg: &TrainConfig,
    mut sample_batch: S,
    rng: &mut Rng,
) -> Result<TrainReport>
where
    S: FnMut(&mut Rng, usize) -> Result<(Array2<f64>, Array2<f64>)>,
{
    cfg.validate()?;
    let mut adam = AdamState::new(net, cfg.lr)?;
    let mut losses = Vec::with_capacity(cfg.iters);
    let mut unconverged = 0;
    for _ in 0..cfg.iters {
        let (ys, xs) = sample_batch(rng, cfg.batch)?;
        let zs = Array2::from_shape_fn((ys.nrows(), net.dz), |_| rng.normal());
        let report = match cfg.loss_variant {
            LossVariant::Joint => train_step_joint(
                net,
                &mut adam,
                &ys.view(),
                &xs.view(),
                &zs.view(),
                &cfg.sinkhorn,
            )?,
            LossVariant::Beta => train_step_beta(
                net,
                &mut adam,
                &ys.view(),
                &xs.view(),
                &zs.view(),
                cfg.beta,
                &cfg.sinkhorn,
            )?,
            LossVariant::Diagonal => {
                train_step_diagonal(net, &mut adam, &ys.view(), &xs.view(), &zs.view())?
            }
        };
        if !report.sinkhorn_converged {
            unconverged += 1;
        }
        losses.push(report.loss);
    }
    let tail = (cfg.iters / 10).max(1);
    let tail_loss = losses[cfg.iters - tail..].iter().sum::<f64>() / tail as f64;
    Ok(TrainReport {
        final_loss: *losses.last().unwrap(),
        tail_loss,
        unconverged_steps: unconverged,
    })
}

/// Average posterior divergence
/// `E_y[S_ε(P_{X|Y=y}, G(y, ·)_# P_Z)]` over `n_y` fresh observations.
///
/// Each condition draws `y` through the noisy forward model, samples the
/// exact mixture posterior, and compares it against `n_samples` generated
/// points. `gen(y, n, rng)` abstracts the generator so an exact posterior
/// sampler can stand in as the floor oracle.
pub fn eval_expected_posterior_error<G>(
    gen: &G,
    problem: &LinearGaussianProblem,
    prior: &GaussianMixture,
    n_y: usize,
    n_samples: usize,
    eval_cfg: &SinkhornConfig,
    rng: &Rng,
) -> Result<f64>
where
    G: Fn(&[f64], usize, &mut Rng) -> Result<Array2<f64>> + Sync,
{
    if n_y == 0 || n_samples == 0 {
        return Err(Error::InvalidParameter(
            "posterior evaluation needs n_y >= 1 and n_samples >= 1".into(),
        ));
    }
    let spec = CostSpec::euclidean(2)?;
    let values = par::map_range(n_y, |i| -> Result<f64> {
        let mut rng_i = rng.derive(i as u64);
        let x = gmm_sample(prior, 1, &mut rng_i);
        let y = forward_apply(problem, x.row(0).as_slice().unwrap(), &mut rng_i);
        let posterior = gmm_posterior(problem, prior, &y)?;
        let real = gmm_sample(&posterior, n_samples, &mut rng_i);
        let fake = gen(&y, n_samples, &mut rng_i)?;
        let a = EmpiricalJoint::uniform_xs(real)?;
        let b = EmpiricalJoint::uniform_xs(fake)?;
        crate::sinkhorn::sinkhorn_divergence(&a, &b, &spec, eval_cfg)
    });
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(total / n_y as f64)
}

/// Joint divergence between a data cloud `{(y_i, x_i)}` and the generated
/// cloud `{(y_i, G(y_i, z_i))}` on the same conditions, under the squared
/// joint cost.
pub fn eval_joint_error<S, G>(
    sample_pairs: &S,
    gen: &G,
    n: usize,
    eval_cfg: &SinkhornConfig,
    rng: &Rng,
) -> Result<f64>
where
    S: Fn(&mut Rng, usize) -> Result<(Array2<f64>, Array2<f64>)>,
    G: Fn(&ArrayView2<f64>, &mut Rng) -> Result<Array2<f64>>,
{
    if n < 2 {
        return Err(Error::InvalidParameter(
            "joint evaluation needs n >= 2".into(),
        ));
    }
    let spec = CostSpec::euclidean(2)?;
    let mut rng_real = rng.derive(1);
    let mut rng_gen = rng.derive(2);
    let (ys, xs) = sample_pairs(&mut rng_real, n)?;
    let xhat = gen(&ys.view(), &mut rng_gen)?;
    let a = EmpiricalJoint::uniform(ys.clone(), xs)?;
    let b = EmpiricalJoint::uniform(ys, xhat)?;
    crate::sinkhorn::sinkhorn_divergence(&a, &b, &spec, eval_cfg)
}

/// Resimulation error `E_y[(1/K) Σ_k ‖F(G(y, z_k)) − y‖²]`, pushing each
/// generated sample back through the noiseless forward map `F`.
pub fn eval_resimulation<G, F, Y>(
    gen: &G,
    forward: &F,
    sample_y: &Y,
    n_y: usize,
    k: usize,
    rng: &Rng,
) -> Result<f64>
where
    G: Fn(&[f64], usize, &mut Rng) -> Result<Array2<f64>> + Sync,
    F: Fn(&[f64]) -> Vec<f64> + Sync,
    Y: Fn(&mut Rng) -> Vec<f64> + Sync,
{
    if n_y == 0 || k == 0 {
        return Err(Error::InvalidParameter(
            "resimulation needs n_y >= 1 and k >= 1".into(),
        ));
    }
    let values = par::map_range(n_y, |i| -> Result<f64> {
        let mut rng_i = rng.derive(i as u64);
        let y = sample_y(&mut rng_i);
        let samples = gen(&y, k, &mut rng_i)?;
        let mut total = 0.0;
        for row in samples.rows() {
            let mapped = forward(row.as_slice().unwrap());
            if mapped.len() != y.len() {
                return Err(Error::ShapeMismatch(format!(
                    "forward map produced dim {}, condition dim {}",
                    mapped.len(),
                    y.len()
                )));
            }
            total += vecmath::sq_dist(&mapped, &y);
        }
        Ok(total / k as f64)
    });
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(total / n_y as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    dy: usize,
    dz: usize,
    dx: usize,
    widths: Vec<usize>,
    activation: String,
    seed: u64,
    config: Option<TrainConfig>,
}

/// Serialize the network to `path`: a 4-byte magic, a little-endian header
/// length, a JSON header (dims, widths, activation, seed, config), then all
/// parameters as little-endian `f64` — each layer's weight matrix row-major,
/// followed by its bias.
pub fn save_checkpoint(
    net: &GeneratorNet,
    seed: u64,
    config: Option<&TrainConfig>,
    path: &Path,
) -> Result<()> {
    let header = CheckpointHeader {
        dy: net.dy,
        dz: net.dz,
        dx: net.dx,
        widths: net.widths(),
        activation: ACTIVATION.to_string(),
        seed,
        config: config.cloned(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&CHECKPOINT_MAGIC)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    for (w, b) in net.weights.iter().zip(&net.biases) {
        for v in w.iter() {
            file.write_all(&v.to_le_bytes())?;
        }
        for v in b.iter() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`], restoring the network
/// and the recorded training seed and config.
pub fn load_checkpoint(path: &Path) -> Result<(GeneratorNet, u64, Option<TrainConfig>)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::InvalidCheckpoint("file shorter than magic".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::InvalidCheckpoint(format!(
            "bad magic {magic:02x?}"
        )));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::InvalidCheckpoint("missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| Error::InvalidCheckpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)?;
    if header.activation != ACTIVATION {
        return Err(Error::InvalidCheckpoint(format!(
            "unsupported activation {:?}",
            header.activation
        )));
    }
    let w = &header.widths;
    if w.len() < 2 || w[0] != header.dy + header.dz || *w.last().unwrap() != header.dx {
        return Err(Error::InvalidCheckpoint(format!(
            "inconsistent widths {w:?} for dims ({}, {}, {})",
            header.dy, header.dz, header.dx
        )));
    }

    let mut blob = Vec::new();
    file.read_to_end(&mut blob)?;
    let expected: usize = (0..w.len() - 1).map(|l| w[l] * w[l + 1] + w[l + 1]).sum();
    if blob.len() != expected * 8 {
        return Err(Error::InvalidCheckpoint(format!(
            "parameter blob holds {} bytes, expected {}",
            blob.len(),
            expected * 8
        )));
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..w.len() - 1 {
        let mat = Array2::from_shape_fn((w[l], w[l + 1]), |_| values.next().unwrap());
        let bias = Array1::from_shape_fn(w[l + 1], |_| values.next().unwrap());
        weights.push(mat);
        biases.push(bias);
    }
    let net = GeneratorNet {
        dy: header.dy,
        dz: header.dz,
        dx: header.dx,
        weights,
        biases,
    };
    if net
        .weights
        .iter()
        .any(|m| m.iter().any(|v| !v.is_finite()))
        || net.biases.iter().any(|b| b.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidCheckpoint(
            "non-finite parameter in blob".into(),
        ));
    }
    Ok((net, header.seed, header.config))
}
