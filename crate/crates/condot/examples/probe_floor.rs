//! Probes the mixture benchmark's posterior-error floor: Monte-Carlo
//! self-distance of the true posterior, the score of a mean-collapsed
//! oracle, and the score of an untrained prior sampler, at candidate eval
//! blur settings.

use condot::experiments::mixture_instance;
use condot::measures::{gmm_posterior, gmm_sample, EmpiricalJoint};
use condot::rng::Rng;
use condot::sinkhorn::{sinkhorn_divergence, SinkhornConfig};
use condot::cost::CostSpec;
use ndarray::{Array1, Array2};

fn x_only(xs: Array2<f64>) -> EmpiricalJoint {
    let n = xs.nrows();
    EmpiricalJoint::new(Array2::zeros((n, 0)), xs, Array1::from_elem(n, 1.0 / n as f64)).unwrap()
}

fn main() {
    let (prior, problem) = mixture_instance().unwrap();
    let spec = CostSpec::euclidean(2).unwrap();
    let n_samples = 250;
    let n_y = 15;

    // Probe the x diameter as the experiment harness does.
    let mut prng = Rng::from_seed(77);
    let probe = gmm_sample(&prior, 256, &mut prng);
    let mut dx2: f64 = 0.0;
    for i in 0..probe.nrows() {
        for j in (i + 1)..probe.nrows() {
            let d2: f64 = (0..probe.ncols())
                .map(|k| (probe[[i, k]] - probe[[j, k]]).powi(2))
                .sum();
            dx2 = dx2.max(d2);
        }
    }
    println!("probed x diameter^2 = {dx2:.3}");

    for &(eps_rel, max_iter) in &[(5e-3, 100usize), (1e-3, 80), (5e-4, 120)] {
        let eps = eps_rel * dx2;
        let cfg = SinkhornConfig {
            epsilon: eps,
            max_iter,
            stop_tol: 1e-3 * eps,
            scaling: Some(0.5),
        };
        let mut rng = Rng::from_seed(42);
        let (mut floor_acc, mut collapse_acc, mut prior_acc) = (0.0, 0.0, 0.0);
        let t = std::time::Instant::now();
        for i in 0..n_y {
            let mut yrng = rng.derive(1000 + i as u64);
            let x_star = gmm_sample(&prior, 1, &mut yrng);
            let mut y = problem.forward(x_star.row(0).as_slice().unwrap());
            for yi in &mut y {
                *yi += problem.noise_std() * yrng.normal();
            }
            let post = gmm_posterior(&problem, &prior, &y).unwrap();
            let p1 = x_only(gmm_sample(&post, n_samples, &mut yrng));
            let p2 = x_only(gmm_sample(&post, n_samples, &mut yrng));
            // Mean-collapsed oracle: every sample at the posterior mixture mean.
            let mean: Vec<f64> = (0..post.means().ncols())
                .map(|j| {
                    (0..post.weights().len())
                        .map(|k| post.weights()[k] * post.means()[[k, j]])
                        .sum()
                })
                .collect();
            let collapsed = x_only(Array2::from_shape_fn((n_samples, mean.len()), |(_, j)| mean[j]));
            let prior_cloud = x_only(gmm_sample(&prior, n_samples, &mut yrng));

            floor_acc += sinkhorn_divergence(&p1, &p2, &spec, &cfg).unwrap();
            collapse_acc += sinkhorn_divergence(&collapsed, &p1, &spec, &cfg).unwrap();
            prior_acc += sinkhorn_divergence(&prior_cloud, &p1, &spec, &cfg).unwrap();
        }
        let dt = t.elapsed().as_secs_f64();
        println!(
            "eps_rel={eps_rel:<6} (eps={:.4}) max={max_iter:<4}: floor={:.4}  collapse={:.4}  prior={:.4}   [{dt:.1}s for {} divs]",
            eps,
            floor_acc / n_y as f64,
            collapse_acc / n_y as f64,
            prior_acc / n_y as f64,
            3 * n_y
        );
    }
}
