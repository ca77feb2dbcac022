//! Cross-checks the analytic Gaussian-mixture posterior against a
//! self-normalized importance-sampling oracle that knows nothing about
//! conjugacy: draw a large cloud from the prior, weight each draw by the
//! observation likelihood, and compare the reweighted per-coordinate
//! histograms with the analytic posterior's bin masses in total variation.

use condot::experiments::mixture_instance;
use condot::measures::{gmm_posterior, gmm_sample, GaussianMixture, LinearGaussianProblem};
use condot::rng::Rng;

/// Abramowitz–Stegun 7.1.26 rational approximation; absolute error < 1.5e-7,
/// far below the 2% tolerance used here.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    0.5 * (1.0 + erf((x - mean) / (2.0 * var).sqrt()))
}

/// Analytic mass of `[lo, hi)` under coordinate `j` of the mixture.
fn mixture_bin_mass(gmm: &GaussianMixture, j: usize, lo: f64, hi: f64) -> f64 {
    let weights = gmm.weights();
    let means = gmm.means();
    let vars = gmm.variances();
    (0..weights.len())
        .map(|k| {
            weights[k]
                * (normal_cdf(hi, means[[k, j]], vars[[k, j]])
                    - normal_cdf(lo, means[[k, j]], vars[[k, j]]))
        })
        .sum()
}

fn log_likelihood(problem: &LinearGaussianProblem, y: &[f64], x: &[f64]) -> f64 {
    let sigma2 = problem.noise_std() * problem.noise_std();
    let fx = problem.forward(x);
    let sq: f64 = y
        .iter()
        .zip(&fx)
        .map(|(yi, fi)| (yi - fi) * (yi - fi))
        .sum();
    -0.5 * sq / sigma2
}

#[test]
fn posterior_marginals_match_importance_sampling_oracle() {
    let (prior, problem) = mixture_instance().unwrap();
    let d = prior.dim();
    let mut rng = Rng::from_seed(0x9057_0e11);

    // Observation drawn from the model itself so the posterior is typical.
    let x_star = gmm_sample(&prior, 1, &mut rng);
    let x_star: Vec<f64> = x_star.row(0).to_vec();
    let mut y = problem.forward(&x_star);
    for yi in &mut y {
        *yi += problem.noise_std() * rng.normal();
    }

    let posterior = gmm_posterior(&problem, &prior, &y).unwrap();

    // Self-normalized importance sampling with the prior as proposal.
    let n = 1_000_000;
    let draws = gmm_sample(&prior, n, &mut rng);
    let mut log_w = Vec::with_capacity(n);
    let mut max_lw = f64::NEG_INFINITY;
    for i in 0..n {
        let lw = log_likelihood(&problem, &y, draws.row(i).as_slice().unwrap());
        max_lw = max_lw.max(lw);
        log_w.push(lw);
    }
    let weights: Vec<f64> = log_w.iter().map(|lw| (lw - max_lw).exp()).collect();
    let total: f64 = weights.iter().sum();
    let ess = total * total / weights.iter().map(|w| w * w).sum::<f64>();
    assert!(
        ess > 10_000.0,
        "importance sample too degenerate for a 2% check: ESS = {ess:.0}"
    );

    // Fixed grid: 60 bins spanning the prior's support per coordinate, with
    // open-ended tail bins so masses sum to one on both sides.
    let bins = 60;
    let (lo, hi) = (-1.6, 1.6);
    let step = (hi - lo) / bins as f64;
    for j in 0..d {
        let mut is_mass = vec![0.0; bins + 2];
        for i in 0..n {
            let x = draws[[i, j]];
            let idx = if x < lo {
                0
            } else if x >= hi {
                bins + 1
            } else {
                1 + ((x - lo) / step) as usize
            };
            is_mass[idx.min(bins + 1)] += weights[i];
        }
        for m in &mut is_mass {
            *m /= total;
        }

        let mut tv = 0.0;
        for b in 0..bins + 2 {
            let (blo, bhi) = if b == 0 {
                (f64::NEG_INFINITY, lo)
            } else if b == bins + 1 {
                (hi, f64::INFINITY)
            } else {
                (lo + (b - 1) as f64 * step, lo + b as f64 * step)
            };
            let analytic = mixture_bin_mass(&posterior, j, blo, bhi);
            tv += (analytic - is_mass[b]).abs();
        }
        tv *= 0.5;
        assert!(
            tv <= 0.02,
            "coordinate {j}: total variation {tv:.4} exceeds 2% (ESS {ess:.0})"
        );
    }
}

#[test]
fn posterior_mean_matches_importance_sampling_oracle() {
    let (prior, problem) = mixture_instance().unwrap();
    let d = prior.dim();
    let mut rng = Rng::from_seed(0xA21C);

    let x_star = gmm_sample(&prior, 1, &mut rng);
    let mut y = problem.forward(x_star.row(0).as_slice().unwrap());
    for yi in &mut y {
        *yi += problem.noise_std() * rng.normal();
    }
    let posterior = gmm_posterior(&problem, &prior, &y).unwrap();

    let n = 400_000;
    let draws = gmm_sample(&prior, n, &mut rng);
    let log_w: Vec<f64> = (0..n)
        .map(|i| log_likelihood(&problem, &y, draws.row(i).as_slice().unwrap()))
        .collect();
    let max_lw = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|lw| (lw - max_lw).exp()).collect();
    let total: f64 = weights.iter().sum();

    // Analytic mixture mean: Σ_k w_k μ_k.
    for j in 0..d {
        let analytic: f64 = (0..posterior.weights().len())
            .map(|k| posterior.weights()[k] * posterior.means()[[k, j]])
            .sum();
        let sampled: f64 =
            (0..n).map(|i| weights[i] * draws[[i, j]]).sum::<f64>() / total;
        assert!(
            (analytic - sampled).abs() < 0.01,
            "posterior mean coordinate {j}: analytic {analytic:.5} vs IS {sampled:.5}"
        );
    }
}
