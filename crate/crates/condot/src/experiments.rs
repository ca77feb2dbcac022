//! Experiment harness shared by the command-line tool and the acceptance
//! suite: the two-point counterexample table, the β sweep on a noisy linear
//! model, digit-deblurring couplings, the self-check battery, and the two
//! generator benchmarks (Gaussian-mixture deblurring and random images).
//!
//! Every routine is deterministic from an explicit seed: sub-streams are
//! derived per run, per variant, and per evaluation, so multi-run statistics
//! are reproducible byte for byte.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::conditional::{
    adm_lift, conditional_wasserstein, counterexample, diagonal_diagnostic, dual_check,
    independence_check,
};
use crate::cost::{cost_matrix, CostSpec};
use crate::error::{Error, Result};
use crate::exact::{solve_exact, Coupling};
use crate::generator::{
    eval_expected_posterior_error, eval_joint_error, eval_resimulation, train_loop, GeneratorNet,
    LossVariant, TrainConfig,
};
use crate::idx::load_idx;
use crate::measures::{
    forward_apply, gmm_sample, EmpiricalJoint, GaussianMixture, LinearGaussianProblem,
};
use crate::rng::Rng;
use crate::sinkhorn::{sinkhorn_divergence, SinkhornConfig};
use crate::vecmath;

/// Seed fixing the mixture prior's mode centers. The benchmark instance is
/// one fixed problem; run seeds only vary initialization, batches, and
/// evaluation draws. Chosen (by scanning seeds) so the modes' forward
/// images are comparatively well separated: the weakly observed
/// coordinates make some posterior multimodality unavoidable, and a draw
/// that minimizes it keeps the mean-collapse penalty of the diagonal
/// baseline near the instance's structural floor instead of an artifact of
/// an unlucky mode placement.
pub const MIXTURE_MEANS_SEED: u64 = 1992;

/// One row of the counterexample table.
#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleRow {
    pub n: f64,
    pub joint_w1: f64,
    pub conditional_w1: f64,
}

/// Joint and conditional distances for the two-point family: the joint value
/// stays at 1 while the conditional value is n.
pub fn counterexample_rows(ns: &[f64]) -> Result<Vec<CounterexampleRow>> {
    ns.iter()
        .map(|&n| {
            let (joint_w1, conditional_w1) = counterexample(n)?;
            Ok(CounterexampleRow {
                n,
                joint_w1,
                conditional_w1,
            })
        })
        .collect()
}

/// One β value of the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct BetaSweepRow {
    pub beta: f64,
    pub offdiag_mass: f64,
    pub offdiag_ycost: f64,
    /// The proven ceiling `W_{2,Y}^2 / β`.
    pub bound: f64,
    pub pass: bool,
}

/// Full sweep output.
#[derive(Debug, Clone, Serialize)]
pub struct BetaSweep {
    pub rows: Vec<BetaSweepRow>,
    /// Conditional value `W_{2,Y}^2` of the instance.
    pub conditional_value_p: f64,
    pub pass: bool,
}

/// Off-diagonal decay of the optimal `‖Δx‖² + β‖Δy‖²` plan on a noisy linear
/// instance: `X ~ N(0, I₂)`, `Z ~ U([0,1]²)`, `Y = X + 0.02 Z + 0.05 η`.
///
/// For every β the off-diagonal condition cost must stay below
/// `W_{2,Y}^2 / β`, and the off-diagonal mass at the largest β must drop
/// below its value at the smallest.
pub fn beta_sweep(n: usize, betas: &[f64], seed: u64) -> Result<BetaSweep> {
    if n < 2 || betas.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs n >= 2 and at least one beta".into(),
        ));
    }
    let mut rng = Rng::from_seed(seed);
    let mut ys = Array2::zeros((n, 2));
    let mut xs = Array2::zeros((n, 2));
    let mut zs = Array2::zeros((n, 2));
    for i in 0..n {
        for d in 0..2 {
            let x = rng.normal();
            let z = rng.uniform();
            let eta = rng.normal();
            xs[[i, d]] = x;
            zs[[i, d]] = z;
            ys[[i, d]] = x + 0.02 * z + 0.05 * eta;
        }
    }
    let a = EmpiricalJoint::uniform(ys.clone(), xs)?;
    let b = EmpiricalJoint::uniform(ys, zs)?;

    let spec2 = CostSpec::euclidean(2)?;
    let (cond, _) = conditional_wasserstein(&a, &b, &spec2, 0.0)?;
    let cond_p = cond * cond;

    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let spec = CostSpec::beta_sum(2, beta)?;
        let cost = cost_matrix(&a, &b, &spec)?;
        let (coupling, _) = solve_exact(cost.view(), a.weights(), b.weights())?;
        let (offdiag_mass, offdiag_ycost) = diagonal_diagnostic(&coupling, a.ys(), b.ys(), 2);
        let bound = cond_p / beta;
        rows.push(BetaSweepRow {
            beta,
            offdiag_mass,
            offdiag_ycost,
            bound,
            pass: offdiag_ycost <= bound + 1e-12,
        });
    }
    let trend = rows.last().unwrap().offdiag_mass < rows.first().unwrap().offdiag_mass
        || rows.first().unwrap().offdiag_mass == 0.0;
    let pass = trend && rows.iter().all(|r| r.pass);
    Ok(BetaSweep {
        rows,
        conditional_value_p: cond_p,
        pass,
    })
}

/// Seven-segment digit rendered into a 28×28 image, shifted by `(dr, dc)`.
fn render_digit(digit: usize, dr: i64, dc: i64) -> Array1<f64> {
    // Segment truth table: top, top-right, bottom-right, bottom, bottom-left,
    // top-left, middle.
    const SEGMENTS: [[bool; 7]; 10] = [
        [true, true, true, true, true, true, false],
        [false, true, true, false, false, false, false],
        [true, true, false, true, true, false, true],
        [true, true, true, true, false, false, true],
        [false, true, true, false, false, true, true],
        [true, false, true, true, false, true, true],
        [true, false, true, true, true, true, true],
        [true, true, true, false, false, false, false],
        [true, true, true, true, true, true, true],
        [true, true, true, true, false, true, true],
    ];
    let seg = SEGMENTS[digit % 10];
    let mut img = Array1::zeros(28 * 28);
    let mut fill = |r0: i64, r1: i64, c0: i64, c1: i64| {
        for r in r0 + dr..r1 + dr {
            for c in c0 + dc..c1 + dc {
                if (0..28).contains(&r) && (0..28).contains(&c) {
                    img[(r * 28 + c) as usize] = 1.0;
                }
            }
        }
    };
    if seg[0] {
        fill(4, 6, 7, 21);
    }
    if seg[1] {
        fill(4, 14, 19, 21);
    }
    if seg[2] {
        fill(14, 24, 19, 21);
    }
    if seg[3] {
        fill(22, 24, 7, 21);
    }
    if seg[4] {
        fill(14, 24, 7, 9);
    }
    if seg[5] {
        fill(4, 14, 7, 9);
    }
    if seg[6] {
        fill(13, 15, 7, 21);
    }
    img
}

/// Digit-deblurring coupling report.
#[derive(Debug, Clone)]
pub struct MnistCouplingReport {
    pub n: usize,
    /// "idx" when a real dataset file was used, "synthetic" otherwise.
    pub source: String,
    /// Off-(index-)diagonal mass of the optimal paired coupling.
    pub offdiag_mass: f64,
    /// Same after breaking the pairing by rotating the conditions.
    pub shuffled_offdiag_mass: f64,
    pub coupling: Coupling,
    pub shuffled_coupling: Coupling,
}

fn index_offdiag_mass(coupling: &Coupling) -> f64 {
    let m = coupling.matrix();
    let mut off = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                off += m[[i, j]];
            }
        }
    }
    off
}

/// Exact joint coupling between noisy digit observations paired with their
/// clean images and the same observations paired with uniform noise.
///
/// With `y_i = x_i + σ·η_i` the squared-joint-cost coupling keeps every `y_i`
/// with its own row — off-diagonal mass 0 — while rotating the conditions of
/// the second cloud forces all mass off the index diagonal.
pub fn mnist_coupling(
    idx_path: Option<&Path>,
    n: usize,
    noise_std: f64,
    seed: u64,
) -> Result<MnistCouplingReport> {
    if n < 2 {
        return Err(Error::InvalidParameter("coupling needs n >= 2".into()));
    }
    let mut rng = Rng::from_seed(seed);
    let d = 28 * 28;
    let (xs, source) = match idx_path {
        Some(path) => {
            let data = load_idx(path)?;
            if data.images.nrows() < n {
                return Err(Error::InvalidParameter(format!(
                    "dataset holds {} images, need {n}",
                    data.images.nrows()
                )));
            }
            if data.images.ncols() != d {
                return Err(Error::ShapeMismatch(format!(
                    "expected 28x28 images, got {} pixels",
                    data.images.ncols()
                )));
            }
            let mut order: Vec<usize> = (0..data.images.nrows()).collect();
            rng.shuffle(&mut order);
            let mut xs = Array2::zeros((n, d));
            for (row, &src) in order.iter().take(n).enumerate() {
                xs.row_mut(row).assign(&data.images.row(src));
            }
            (xs, "idx".to_string())
        }
        None => {
            let mut xs = Array2::zeros((n, d));
            for i in 0..n {
                let dr = rng.below(5) as i64 - 2;
                let dc = rng.below(5) as i64 - 2;
                xs.row_mut(i).assign(&render_digit(i % 10, dr, dc));
            }
            (xs, "synthetic".to_string())
        }
    };

    let ys = Array2::from_shape_fn((n, d), |(i, j)| xs[[i, j]] + noise_std * rng.normal());
    let zs = Array2::from_shape_fn((n, d), |_| rng.uniform());

    let spec = CostSpec::euclidean(2)?;
    let a = EmpiricalJoint::uniform(ys.clone(), xs)?;
    let b = EmpiricalJoint::uniform(ys.clone(), zs.clone())?;
    let cost = cost_matrix(&a, &b, &spec)?;
    let (coupling, _) = solve_exact(cost.view(), a.weights(), b.weights())?;
    let offdiag_mass = index_offdiag_mass(&coupling);

    // Control: rotate the conditions so index pairing and condition pairing
    // disagree by construction.
    let ys_rot = Array2::from_shape_fn((n, d), |(i, j)| ys[[(i + 1) % n, j]]);
    let b_rot = EmpiricalJoint::uniform(ys_rot, zs)?;
    let cost_rot = cost_matrix(&a, &b_rot, &spec)?;
    let (shuffled_coupling, _) = solve_exact(cost_rot.view(), a.weights(), b_rot.weights())?;
    let shuffled_offdiag_mass = index_offdiag_mass(&shuffled_coupling);

    Ok(MnistCouplingReport {
        n,
        source,
        offdiag_mass,
        shuffled_offdiag_mass,
        coupling,
        shuffled_coupling,
    })
}

/// One self-check outcome: `value` must not exceed `bound`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    pub details: String,
}

fn check(name: &str, value: f64, bound: f64, details: String) -> CheckReport {
    CheckReport {
        name: name.to_string(),
        value,
        bound,
        pass: value <= bound,
        details,
    }
}

/// Shared-condition random instance: three atoms per condition value, so
/// restricted couplings exist between any pair.
fn grouped_instance(rng: &mut Rng, dx: usize) -> Result<EmpiricalJoint> {
    let conditions = [0.0, 1.0, 2.0];
    let per = 3;
    let n = conditions.len() * per;
    let mut ys = Array2::zeros((n, 1));
    let mut xs = Array2::zeros((n, dx));
    for (g, &c) in conditions.iter().enumerate() {
        for k in 0..per {
            let row = g * per + k;
            ys[[row, 0]] = c;
            for d in 0..dx {
                xs[[row, d]] = rng.normal();
            }
        }
    }
    EmpiricalJoint::uniform(ys, xs)
}

/// Deterministic battery of the library's analytic guarantees; any failing
/// row means the build is wrong.
pub fn prop_checks(seed: u64) -> Result<Vec<CheckReport>> {
    let base = Rng::from_seed(seed);
    let mut reports = Vec::new();

    // Two-point family: joint stays 1, conditional grows like n.
    let (joint, cond) = counterexample(5.0)?;
    reports.push(check(
        "counterexample_values",
        (joint - 1.0).abs().max((cond - 5.0).abs()),
        1e-12,
        format!("joint {joint}, conditional {cond} at n = 5"),
    ));

    // Triangle inequality on a shared-condition triple.
    {
        let mut rng = base.derive(1);
        let a = grouped_instance(&mut rng, 2)?;
        let b = grouped_instance(&mut rng, 2)?;
        let c = grouped_instance(&mut rng, 2)?;
        let spec = CostSpec::euclidean(2)?;
        let (ab, _) = conditional_wasserstein(&a, &b, &spec, 0.0)?;
        let (bc, _) = conditional_wasserstein(&b, &c, &spec, 0.0)?;
        let (ac, _) = conditional_wasserstein(&a, &c, &spec, 0.0)?;
        reports.push(check(
            "metric_triangle",
            ac - ab - bc,
            1e-9,
            format!("W(a,c) = {ac}, W(a,b) + W(b,c) = {}", ab + bc),
        ));
    }

    // Projection/lift round trip preserves atoms and the transport cost.
    {
        let mut rng = base.derive(2);
        let a = grouped_instance(&mut rng, 2)?;
        let b = grouped_instance(&mut rng, 2)?;
        let spec = CostSpec::euclidean(2)?;
        let (_, plan) = conditional_wasserstein(&a, &b, &spec, 0.0)?;
        let projected = plan.project();
        let lifted = adm_lift(&projected, 2)?;
        let reproject = lifted.project();
        let cost_gap = (projected.x_cost(2) - plan.value_p_total()).abs();
        let atoms_equal = projected.measure_eq(&reproject, 0.0);
        reports.push(check(
            "bijection_roundtrip",
            if atoms_equal { cost_gap } else { f64::INFINITY },
            1e-12,
            format!("cost gap {cost_gap}, atoms equal: {atoms_equal}"),
        ));
    }

    // Dual certificate: gap and Lipschitz feasibility.
    {
        let mut rng = base.derive(3);
        let a = grouped_instance(&mut rng, 2)?;
        let b = grouped_instance(&mut rng, 2)?;
        let outcome = dual_check(&a, &b, 0.0);
        let (value, details) = match outcome {
            Ok(dc) => ((dc.primal - dc.dual).abs(), format!(
                "primal {}, dual {}",
                dc.primal, dc.dual
            )),
            Err(e) => (f64::INFINITY, format!("dual check failed: {e}")),
        };
        reports.push(check("dual_certificate", value, 1e-8, details));
    }

    // Independent conditions collapse the three distances into one.
    {
        let mut rng = base.derive(4);
        let nx = 4;
        let ny = 3;
        let xs = Array2::from_shape_fn((nx, 2), |_| rng.normal());
        let zs = Array2::from_shape_fn((nx, 2), |_| rng.normal());
        let ys = Array2::from_shape_fn((ny, 1), |(i, _)| i as f64);
        let wx = Array1::from_elem(nx, 1.0 / nx as f64);
        let wy = Array1::from_elem(ny, 1.0 / ny as f64);
        let (w_joint, w_cond, w_marg) = independence_check(
            xs.view(),
            wx.view(),
            zs.view(),
            wx.view(),
            ys.view(),
            wy.view(),
            2,
        )?;
        reports.push(check(
            "independence_triple",
            (w_joint - w_cond).abs().max((w_joint - w_marg).abs()),
            1e-9,
            format!("joint {w_joint}, conditional {w_cond}, marginal {w_marg}"),
        ));
    }

    // Off-diagonal condition cost obeys the 1/β ceiling.
    {
        let sweep = beta_sweep(40, &[100.0], base.derive(5).seed())?;
        let row = &sweep.rows[0];
        reports.push(check(
            "beta_offdiag_bound",
            row.offdiag_ycost - row.bound,
            1e-12,
            format!(
                "offdiag_ycost {} vs bound {} at beta {}",
                row.offdiag_ycost, row.bound, row.beta
            ),
        ));
    }

    // Debiased divergence vanishes on identical clouds.
    {
        let mut rng = base.derive(6);
        let xs = Array2::from_shape_fn((30, 2), |_| rng.normal());
        let cloud = EmpiricalJoint::uniform_xs(xs)?;
        let spec = CostSpec::euclidean(2)?;
        let cfg = SinkhornConfig::new(0.1, 10_000, 1e-10, Some(0.5))?;
        let s = sinkhorn_divergence(&cloud, &cloud, &spec, &cfg)?;
        reports.push(check(
            "sinkhorn_self_divergence",
            s.abs(),
            1e-9,
            format!("S(a,a) = {s}"),
        ));
    }

    // Point masses recover the squared distance at any blur.
    {
        let a = EmpiricalJoint::uniform_xs(ndarray::arr2(&[[0.0, 0.0]]))?;
        let b = EmpiricalJoint::uniform_xs(ndarray::arr2(&[[3.0, 4.0]]))?;
        let spec = CostSpec::euclidean(2)?;
        let cfg = SinkhornConfig::new(5.0, 10_000, 1e-12, None)?;
        let s = sinkhorn_divergence(&a, &b, &spec, &cfg)?;
        reports.push(check(
            "sinkhorn_dirac_distance",
            (s - 25.0).abs(),
            1e-9,
            format!("S = {s}, squared distance 25"),
        ));
    }

    Ok(reports)
}

/// Which generator benchmark to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Mixture,
    RandomImages,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Mixture => "mixture",
            ExperimentKind::RandomImages => "random_images",
        }
    }
}

/// Sizes and solver settings for a generator benchmark. `*_rel` quantities
/// are scaled by squared diameters probed from the data before use, so one
/// profile works across problems with different natural scales.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSettings {
    pub runs: usize,
    pub batch: usize,
    pub iters: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Condition-transport weight, in units of `diam²_x / diam²_y`.
    pub beta: f64,
    pub train_epsilon_rel: f64,
    pub train_scaling: Option<f64>,
    pub train_max_iter: usize,
    pub train_stop_tol_rel: f64,
    pub eval_epsilon_rel: f64,
    pub eval_scaling: Option<f64>,
    pub eval_max_iter: usize,
    pub eval_stop_tol_rel: f64,
    pub posterior_ny: usize,
    pub posterior_samples: usize,
    pub joint_n: usize,
    pub resim_ny: usize,
    pub resim_k: usize,
    pub seed: u64,
}

impl RunSettings {
    fn base() -> Self {
        RunSettings {
            runs: 3,
            batch: 256,
            iters: 2000,
            lr: 1e-3,
            hidden: vec![128, 128, 128],
            beta: 100.0,
            train_epsilon_rel: 0.05,
            train_scaling: Some(0.5),
            train_max_iter: 30,
            train_stop_tol_rel: 0.05,
            eval_epsilon_rel: 1e-3,
            eval_scaling: Some(0.5),
            eval_max_iter: 80,
            eval_stop_tol_rel: 1e-3,
            posterior_ny: 25,
            posterior_samples: 250,
            joint_n: 1000,
            resim_ny: 50,
            resim_k: 200,
            seed: 0,
        }
    }

    /// Compact profile for the mixture benchmark: ordering-faithful within a
    /// minutes-scale single-core budget.
    pub fn mixture_desk() -> Self {
        RunSettings::base()
    }

    /// Compact profile for the random-images benchmark.
    ///
    /// The condition is a scalar mean, so batch atoms carry many nearly-tied
    /// conditions: the β matching needs a much stiffer penalty to pin
    /// conditions (its mean deviation settles near `sqrt(ε/β_eff)`), and its
    /// solves never reach the potential-change tolerance — the annealed
    /// value is accurate anyway, so the sweep cap is kept short.
    pub fn images_desk() -> Self {
        RunSettings {
            iters: 1600,
            beta: 400.0,
            train_max_iter: 20,
            ..RunSettings::base()
        }
    }

    /// Full-scale mixture profile: larger net, bigger batches, ten runs.
    pub fn mixture_full() -> Self {
        RunSettings {
            runs: 10,
            batch: 1024,
            iters: 5000,
            lr: 1e-4,
            hidden: vec![256, 256, 256],
            train_epsilon_rel: 0.05,
            train_max_iter: 100,
            train_stop_tol_rel: 1e-3,
            eval_epsilon_rel: 1e-3,
            eval_max_iter: 1000,
            eval_stop_tol_rel: 1e-4,
            posterior_ny: 100,
            posterior_samples: 1000,
            joint_n: 5000,
            ..RunSettings::base()
        }
    }

    /// Full-scale random-images profile.
    pub fn images_full() -> Self {
        RunSettings {
            runs: 10,
            batch: 1024,
            iters: 5000,
            lr: 1e-4,
            hidden: vec![256, 256, 256],
            train_epsilon_rel: 0.05,
            train_max_iter: 100,
            train_stop_tol_rel: 1e-3,
            eval_epsilon_rel: 1e-3,
            eval_max_iter: 1000,
            eval_stop_tol_rel: 1e-4,
            joint_n: 5000,
            resim_ny: 100,
            resim_k: 2000,
            ..RunSettings::base()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.iters == 0 || self.batch < 2 {
            return Err(Error::InvalidConfig(
                "runs >= 1, iters >= 1, batch >= 2 required".into(),
            ));
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidConfig("at least one hidden layer".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig("beta must be positive".into()));
        }
        Ok(())
    }
}

/// One per-run metric value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub variant: String,
    pub metric: String,
    pub run: usize,
    pub value: f64,
}

/// Mean and sample standard deviation of a metric across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub variant: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// Full benchmark output.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub rows: Vec<MetricRow>,
    pub summaries: Vec<MetricSummary>,
    /// Training steps whose entropic solve hit the iteration cap.
    pub unconverged_steps: usize,
}

impl ExperimentOutput {
    /// Mean of one (variant, metric) cell.
    pub fn mean(&self, variant: LossVariant, metric: &str) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.variant == variant.name() && s.metric == metric)
            .map(|s| s.mean)
    }

    /// Sample standard deviation of one (variant, metric) cell.
    pub fn std(&self, variant: LossVariant, metric: &str) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.variant == variant.name() && s.metric == metric)
            .map(|s| s.std)
    }
}

/// The fixed mixture instance: 8 modes in `[-1,1]^5` with variance 0.01,
/// observed through `diag(0.2/(i+1))` plus `N(0, 0.03²)` noise.
pub fn mixture_instance() -> Result<(GaussianMixture, LinearGaussianProblem)> {
    let mut rng = Rng::from_seed(MIXTURE_MEANS_SEED);
    let k = 8;
    let d = 5;
    let means = Array2::from_shape_fn((k, d), |_| rng.uniform_in(-1.0, 1.0));
    let prior = GaussianMixture::new(
        Array1::from_elem(k, 1.0 / k as f64),
        means,
        Array2::from_elem((k, d), 0.01),
    )?;
    let diag: Vec<f64> = (1..=d).map(|i| 0.2 / (i as f64 + 1.0)).collect();
    let problem = LinearGaussianProblem::new(diag, 0.03)?;
    Ok((prior, problem))
}

/// Squared diameters (max pairwise squared distance) of the condition and
/// value blocks of a probe cloud.
fn probe_diameters(ys: &Array2<f64>, xs: &Array2<f64>) -> (f64, f64) {
    let n = ys.nrows();
    let mut dy2 = 0.0f64;
    let mut dx2 = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            dy2 = dy2.max(vecmath::sq_dist(
                ys.row(i).as_slice().unwrap(),
                ys.row(j).as_slice().unwrap(),
            ));
            dx2 = dx2.max(vecmath::sq_dist(
                xs.row(i).as_slice().unwrap(),
                xs.row(j).as_slice().unwrap(),
            ));
        }
    }
    (dy2, dx2)
}

fn sinkhorn_for(
    epsilon_rel: f64,
    scale2: f64,
    scaling: Option<f64>,
    max_iter: usize,
    stop_tol_rel: f64,
) -> Result<SinkhornConfig> {
    let epsilon = (epsilon_rel * scale2).max(1e-12);
    SinkhornConfig::new(epsilon, max_iter, (stop_tol_rel * epsilon).max(1e-14), scaling)
}

struct Bench<'a> {
    dy: usize,
    dx: usize,
    sample: Box<dyn Fn(&mut Rng, usize) -> Result<(Array2<f64>, Array2<f64>)> + 'a>,
    /// Posterior-error ingredients; absent when the posterior has no closed
    /// form.
    posterior: Option<(&'a GaussianMixture, &'a LinearGaussianProblem)>,
    /// Resimulation ingredients: noiseless forward map and condition sampler.
    resim: Option<(
        Box<dyn Fn(&[f64]) -> Vec<f64> + Sync + 'a>,
        Box<dyn Fn(&mut Rng) -> Vec<f64> + Sync + 'a>,
    )>,
}

/// Train every variant `runs` times and evaluate the benchmark's metrics.
pub fn run_experiment(
    kind: ExperimentKind,
    variants: &[LossVariant],
    settings: &RunSettings,
) -> Result<ExperimentOutput> {
    settings.validate()?;
    let (prior, problem);
    let bench: Bench = match kind {
        ExperimentKind::Mixture => {
            let built = mixture_instance()?;
            prior = built.0;
            problem = built.1;
            let prior_ref = &prior;
            let problem_ref = &problem;
            Bench {
                dy: 5,
                dx: 5,
                sample: Box::new(move |rng, n| {
                    let xs = gmm_sample(prior_ref, n, rng);
                    let mut ys = Array2::zeros((n, 5));
                    for i in 0..n {
                        let y = forward_apply(problem_ref, xs.row(i).as_slice().unwrap(), rng);
                        for (d, v) in y.into_iter().enumerate() {
                            ys[[i, d]] = v;
                        }
                    }
                    Ok((ys, xs))
                }),
                posterior: Some((&prior, &problem)),
                resim: None,
            }
        }
        ExperimentKind::RandomImages => {
            let d = 16;
            Bench {
                dy: 1,
                dx: d,
                sample: Box::new(move |rng, n| {
                    let xs = Array2::from_shape_fn((n, d), |_| rng.uniform());
                    let ys = Array2::from_shape_fn((n, 1), |(i, _)| {
                        vecmath::mean(xs.row(i).as_slice().unwrap())
                    });
                    Ok((ys, xs))
                }),
                posterior: None,
                resim: Some((
                    Box::new(|x: &[f64]| vec![vecmath::mean(x)]),
                    Box::new(move |rng: &mut Rng| {
                        let x: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
                        vec![vecmath::mean(&x)]
                    }),
                )),
            }
        }
    };

    let base = Rng::from_seed(settings.seed);
    let mut probe_rng = base.derive(0xD1A);
    let (probe_ys, probe_xs) = (bench.sample)(&mut probe_rng, settings.batch.max(64))?;
    let (dy2, dx2) = probe_diameters(&probe_ys, &probe_xs);
    if dx2 == 0.0 {
        return Err(Error::InvalidParameter(
            "degenerate probe: zero value-block diameter".into(),
        ));
    }
    // Condition-transport weight scaled so the β term dominates the x term
    // by the configured factor.
    let beta_eff = if dy2 > 0.0 {
        settings.beta * dx2 / dy2
    } else {
        settings.beta
    };
    let joint2 = dy2 + dx2;

    let eval_joint_cfg = sinkhorn_for(
        settings.eval_epsilon_rel,
        joint2,
        settings.eval_scaling,
        settings.eval_max_iter,
        settings.eval_stop_tol_rel,
    )?;
    let eval_x_cfg = sinkhorn_for(
        settings.eval_epsilon_rel,
        dx2,
        settings.eval_scaling,
        settings.eval_max_iter,
        settings.eval_stop_tol_rel,
    )?;

    let mut rows = Vec::new();
    let mut unconverged_steps = 0;
    for &variant in variants {
        // Streams are keyed by variant identity, not list position, so a
        // single-variant run reproduces that variant's rows from a full run.
        let v_idx = match variant {
            LossVariant::Joint => 0,
            LossVariant::Beta => 1,
            LossVariant::Diagonal => 2,
        };
        // Blur relative to the block whose geometry the gradients must
        // resolve: the β cost's condition term is a penalty, not signal, so
        // its scale (β_eff·dy²) must not inflate the blur or the value
        // block's structure washes out entirely.
        let train_scale2 = match variant {
            LossVariant::Beta => dx2,
            _ => joint2,
        };
        let train_cfg = sinkhorn_for(
            settings.train_epsilon_rel,
            train_scale2,
            settings.train_scaling,
            settings.train_max_iter,
            settings.train_stop_tol_rel,
        )?;
        for run in 0..settings.runs {
            let rng_run = base.derive(0x1000 + (v_idx * 0x100 + run) as u64);
            let mut init_rng = rng_run.derive(0);
            let mut net = GeneratorNet::new(
                bench.dy,
                bench.dx,
                bench.dx,
                &settings.hidden,
                &mut init_rng,
            )?;
            let cfg = TrainConfig {
                loss_variant: variant,
                beta: beta_eff,
                sinkhorn: train_cfg,
                batch: settings.batch,
                iters: settings.iters,
                seed: rng_run.seed(),
                lr: settings.lr,
            };
            let sampler = |rng: &mut Rng, n: usize| (bench.sample)(rng, n);
            let mut train_rng = rng_run.derive(1);
            let report = train_loop(&mut net, &cfg, &sampler, &mut train_rng)?;
            unconverged_steps += report.unconverged_steps;

            if let Some((prior, problem)) = bench.posterior {
                let gen = |y: &[f64], n: usize, rng: &mut Rng| net.sample_given(y, n, rng);
                let value = eval_expected_posterior_error(
                    &gen,
                    problem,
                    prior,
                    settings.posterior_ny,
                    settings.posterior_samples,
                    &eval_x_cfg,
                    &rng_run.derive(2),
                )?;
                rows.push(MetricRow {
                    variant: variant.name().to_string(),
                    metric: "expected_posterior_error".to_string(),
                    run,
                    value,
                });
            }

            let gen_batch = |ys: &ndarray::ArrayView2<f64>, rng: &mut Rng| net.generate(ys, rng);
            let value = eval_joint_error(
                &sampler,
                &gen_batch,
                settings.joint_n,
                &eval_joint_cfg,
                &rng_run.derive(3),
            )?;
            rows.push(MetricRow {
                variant: variant.name().to_string(),
                metric: "joint_error".to_string(),
                run,
                value,
            });

            if let Some((forward, sample_y)) = bench.resim.as_ref() {
                let gen = |y: &[f64], n: usize, rng: &mut Rng| net.sample_given(y, n, rng);
                let value = eval_resimulation(
                    &gen,
                    forward,
                    sample_y,
                    settings.resim_ny,
                    settings.resim_k,
                    &rng_run.derive(4),
                )?;
                rows.push(MetricRow {
                    variant: variant.name().to_string(),
                    metric: "resimulation".to_string(),
                    run,
                    value,
                });
            }
        }
    }

    let summaries = summarize(&rows);
    Ok(ExperimentOutput {
        kind,
        rows,
        summaries,
        unconverged_steps,
    })
}

/// Collapse per-run rows into per-(variant, metric) mean and std, in first
/// appearance order.
pub fn summarize(rows: &[MetricRow]) -> Vec<MetricSummary> {
    let mut order: Vec<(String, String)> = Vec::new();
    for row in rows {
        let key = (row.variant.clone(), row.metric.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(variant, metric)| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == variant && r.metric == metric)
                .map(|r| r.value)
                .collect();
            MetricSummary {
                variant,
                metric,
                mean: vecmath::mean(&values),
                std: vecmath::sample_std(&values),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn counterexample_table_matches_formula() {
        let rows = counterexample_rows(&[1.0, 5.0, 100.0]).unwrap();
        for row in &rows {
            assert_abs_diff_eq!(row.joint_w1, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row.conditional_w1, row.n, epsilon = 1e-12);
        }
    }

    #[test]
    fn beta_sweep_bound_holds_and_mass_decays() {
        let sweep = beta_sweep(40, &[1.0, 10.0, 100.0, 1000.0], 7).unwrap();
        assert!(sweep.pass, "rows: {:?}", sweep.rows);
        for row in &sweep.rows {
            assert!(
                row.offdiag_ycost <= row.bound + 1e-12,
                "beta {}: {} > {}",
                row.beta,
                row.offdiag_ycost,
                row.bound
            );
        }
    }

    #[test]
    fn synthetic_digit_coupling_is_diagonal_until_shuffled() {
        let report = mnist_coupling(None, 30, 0.1, 11).unwrap();
        assert_eq!(report.source, "synthetic");
        assert_abs_diff_eq!(report.offdiag_mass, 0.0, epsilon = 1e-12);
        assert!(
            report.shuffled_offdiag_mass > 0.5,
            "shuffled control stayed diagonal: {}",
            report.shuffled_offdiag_mass
        );
    }

    #[test]
    fn digit_renderer_produces_distinct_glyphs() {
        for a in 0..10 {
            for b in a + 1..10 {
                let ga = render_digit(a, 0, 0);
                let gb = render_digit(b, 0, 0);
                assert!(
                    ga.iter().zip(gb.iter()).any(|(x, y)| x != y),
                    "digits {a} and {b} render identically"
                );
            }
        }
    }

    #[test]
    fn prop_check_battery_is_green() {
        let reports = prop_checks(123).unwrap();
        assert_eq!(reports.len(), 8);
        for report in &reports {
            assert!(
                report.pass,
                "{} failed: value {} > bound {} ({})",
                report.name, report.value, report.bound, report.details
            );
        }
    }

    fn tiny_settings() -> RunSettings {
        RunSettings {
            runs: 1,
            batch: 8,
            iters: 2,
            lr: 1e-3,
            hidden: vec![8],
            beta: 100.0,
            train_epsilon_rel: 0.1,
            train_scaling: Some(0.5),
            train_max_iter: 30,
            train_stop_tol_rel: 1e-2,
            eval_epsilon_rel: 0.05,
            eval_scaling: Some(0.5),
            eval_max_iter: 200,
            eval_stop_tol_rel: 1e-3,
            posterior_ny: 2,
            posterior_samples: 16,
            joint_n: 16,
            resim_ny: 3,
            resim_k: 8,
            seed: 99,
        }
    }

    #[test]
    fn mixture_smoke_run_emits_all_metrics() {
        let out = run_experiment(
            ExperimentKind::Mixture,
            &[LossVariant::Joint, LossVariant::Beta, LossVariant::Diagonal],
            &tiny_settings(),
        )
        .unwrap();
        // Three variants, two metrics each, one run.
        assert_eq!(out.rows.len(), 6);
        assert_eq!(out.summaries.len(), 6);
        assert!(out.rows.iter().all(|r| r.value.is_finite()));
        assert!(out.mean(LossVariant::Joint, "joint_error").is_some());
        assert!(out
            .mean(LossVariant::Diagonal, "expected_posterior_error")
            .is_some());
    }

    #[test]
    fn images_smoke_run_emits_all_metrics() {
        let out = run_experiment(
            ExperimentKind::RandomImages,
            &[LossVariant::Joint, LossVariant::Diagonal],
            &tiny_settings(),
        )
        .unwrap();
        // Two variants x (joint_error, resimulation).
        assert_eq!(out.rows.len(), 4);
        assert!(out.rows.iter().all(|r| r.value.is_finite()));
        assert!(out.mean(LossVariant::Joint, "resimulation").is_some());
    }

    #[test]
    fn experiment_rows_are_bit_reproducible() {
        let run = || {
            run_experiment(ExperimentKind::Mixture, &[LossVariant::Diagonal], &tiny_settings())
                .unwrap()
                .rows
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.value.to_bits(), rb.value.to_bits(), "{}", ra.metric);
        }
    }

    #[test]
    fn summaries_aggregate_mean_and_std() {
        let rows = vec![
            MetricRow {
                variant: "joint".into(),
                metric: "m".into(),
                run: 0,
                value: 1.0,
            },
            MetricRow {
                variant: "joint".into(),
                metric: "m".into(),
                run: 1,
                value: 3.0,
            },
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_abs_diff_eq!(s[0].mean, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0].std, std::f64::consts::SQRT_2, epsilon = 1e-12);
    }
}
