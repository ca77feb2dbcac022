//! Searches mode-means seeds for the mixture benchmark whose posteriors are
//! typically unimodal (well-separated forward images), measured by the
//! analytic expected posterior variance E_y[tr Cov(X|Y=y)].

use condot::measures::{gmm_posterior, gmm_sample, GaussianMixture, LinearGaussianProblem};
use condot::rng::Rng;
use ndarray::{Array1, Array2};

fn expected_posterior_variance(seed: u64, n_y: usize) -> f64 {
    let mut rng = Rng::from_seed(seed);
    let k = 8;
    let d = 5;
    let means = Array2::from_shape_fn((k, d), |_| rng.uniform_in(-1.0, 1.0));
    let prior = GaussianMixture::new(
        Array1::from_elem(k, 1.0 / k as f64),
        means,
        Array2::from_elem((k, d), 0.01),
    )
    .unwrap();
    let diag: Vec<f64> = (1..=d).map(|i| 0.2 / (i as f64 + 1.0)).collect();
    let problem = LinearGaussianProblem::new(diag, 0.03).unwrap();

    let mut yrng = Rng::from_seed(0xEEE);
    let mut acc = 0.0;
    for _ in 0..n_y {
        let x = gmm_sample(&prior, 1, &mut yrng);
        let mut y = problem.forward(x.row(0).as_slice().unwrap());
        for yi in &mut y {
            *yi += problem.noise_std() * yrng.normal();
        }
        let post = gmm_posterior(&problem, &prior, &y).unwrap();
        // tr Cov = Σ_k w_k (tr Σ_k + ‖μ_k − μ̄‖²)
        let kk = post.weights().len();
        let mut mean = vec![0.0; d];
        for c in 0..kk {
            for j in 0..d {
                mean[j] += post.weights()[c] * post.means()[[c, j]];
            }
        }
        let mut tr = 0.0;
        for c in 0..kk {
            let w = post.weights()[c];
            for j in 0..d {
                let dm = post.means()[[c, j]] - mean[j];
                tr += w * (post.variances()[[c, j]] + dm * dm);
            }
        }
        acc += tr;
    }
    acc / n_y as f64
}

fn main() {
    let mut scored: Vec<(f64, u64)> = Vec::new();
    // Include the current constant for reference.
    let current = 0x434f_4e44u64;
    println!(
        "current seed {:#x}: E[tr Cov] = {:.4}",
        current,
        expected_posterior_variance(current, 400)
    );
    for seed in 0..3000u64 {
        let v = expected_posterior_variance(seed, 120);
        scored.push((v, seed));
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    println!("best 10 of 3000 (120 y-draws):");
    for (v, seed) in scored.iter().take(10) {
        println!("  seed {seed:6}: {v:.4}  (refined: {:.4})", expected_posterior_variance(*seed, 600));
    }
    println!("worst: {:.4}", scored.last().unwrap().0);
}
