//! Scratch scan for a mixture means draw whose posterior ambiguity sits in a
//! band: enough mean-collapse penalty to separate the diagonal variant on the
//! joint error, while the naive-joint-to-baseline posterior ratio stays well
//! above the 5x bar. Pass 1 ranks seeds by the analytic collapse floor; pass
//! 2 measures the sinkhorn floors for a shortlist.

use condot::cost::CostSpec;
use condot::measures::{
    forward_apply, gmm_posterior, gmm_sample, EmpiricalJoint, GaussianMixture,
    LinearGaussianProblem,
};
use condot::rng::Rng;
use condot::sinkhorn::{sinkhorn_divergence, SinkhornConfig};
use ndarray::{Array1, Array2};

fn instance(seed: u64) -> (GaussianMixture, LinearGaussianProblem) {
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
    (prior, problem)
}

/// Analytic collapse floor: E_y[tr Cov(X | Y=y)] over sampled conditions.
fn collapse_floor(prior: &GaussianMixture, problem: &LinearGaussianProblem, m: usize) -> f64 {
    let mut rng = Rng::from_seed(7_777);
    let d = prior.dim();
    let mut total = 0.0;
    for _ in 0..m {
        let x = gmm_sample(prior, 1, &mut rng);
        let y = forward_apply(problem, x.row(0).as_slice().unwrap(), &mut rng);
        let post = gmm_posterior(problem, prior, &y).unwrap();
        let w = post.weights();
        let mu = post.means();
        let var = post.variances();
        let mut mean = vec![0.0; d];
        for k in 0..post.k() {
            for c in 0..d {
                mean[c] += w[k] * mu[[k, c]];
            }
        }
        let mut tc = 0.0;
        for k in 0..post.k() {
            let mut dev2 = 0.0;
            for c in 0..d {
                let dv = mu[[k, c]] - mean[c];
                dev2 += dv * dv + var[[k, c]];
            }
            tc += w[k] * dev2;
        }
        total += tc;
    }
    total / m as f64
}

fn joint_cloud(
    prior: &GaussianMixture,
    problem: &LinearGaussianProblem,
    n: usize,
    rng: &mut Rng,
) -> (Array2<f64>, Array2<f64>) {
    let d = prior.dim();
    let xs = gmm_sample(prior, n, rng);
    let mut ys = Array2::zeros((n, d));
    for i in 0..n {
        let y = forward_apply(problem, xs.row(i).as_slice().unwrap(), rng);
        for (c, v) in y.into_iter().enumerate() {
            ys[[i, c]] = v;
        }
    }
    (ys, xs)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let max_seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let lo: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.34);
    let hi: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.46);

    // Pass 1: analytic floors.
    let mut band = Vec::new();
    for seed in 0..max_seed {
        let (prior, problem) = instance(seed);
        let cf = collapse_floor(&prior, &problem, 160);
        if seed == 1992 || (cf >= lo && cf <= hi) {
            band.push((seed, cf));
        }
    }
    band.sort_by(|a, b| a.1.total_cmp(&b.1));
    println!("pass 1: {} seeds in [{lo}, {hi}]", band.len());

    // Pass 2: sinkhorn floors for a spread of candidates across the band.
    let take = 8.min(band.len());
    let stride = band.len().max(1) / take.max(1);
    let spec = CostSpec::euclidean(2).unwrap();
    for idx in 0..take {
        let (seed, cf) = band[(idx * stride).min(band.len() - 1)];
        let (prior, problem) = instance(seed);
        let mut rng = Rng::from_seed(4_242);
        let n = 1000;
        let (ys1, xs1) = joint_cloud(&prior, &problem, n, &mut rng);
        let (ys2, xs2) = joint_cloud(&prior, &problem, n, &mut rng);
        let (ys3, _) = joint_cloud(&prior, &problem, n, &mut rng);

        // Collapse cloud: posterior means at the third draw's conditions.
        let d = prior.dim();
        let mut cxs = Array2::zeros((n, d));
        for i in 0..n {
            let y: Vec<f64> = (0..d).map(|c| ys3[[i, c]]).collect();
            let post = gmm_posterior(&problem, &prior, &y).unwrap();
            let w = post.weights();
            let mu = post.means();
            for c in 0..d {
                cxs[[i, c]] = (0..post.k()).map(|k| w[k] * mu[[k, c]]).sum();
            }
        }

        let mut joint2 = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut d2 = 0.0;
                for c in 0..d {
                    let dy = ys1[[i, c]] - ys1[[j, c]];
                    let dx = xs1[[i, c]] - xs1[[j, c]];
                    d2 += dy * dy + dx * dx;
                }
                joint2 = joint2.max(d2);
            }
        }
        let eps = 1e-3 * joint2;
        let cfg = SinkhornConfig::new(eps, 80, 1e-3 * eps, Some(0.5)).unwrap();
        let a = EmpiricalJoint::uniform(ys1, xs1).unwrap();
        let b = EmpiricalJoint::uniform(ys2, xs2).unwrap();
        let c = EmpiricalJoint::uniform(ys3, cxs).unwrap();
        let floor = sinkhorn_divergence(&a, &b, &spec, &cfg).unwrap();
        let coll = sinkhorn_divergence(&a, &c, &spec, &cfg).unwrap();

        // Naive-joint posterior proxy: prior cloud vs posterior cloud.
        let mut prior_err = 0.0;
        let trials = 10;
        for _ in 0..trials {
            let x = gmm_sample(&prior, 1, &mut rng);
            let y = forward_apply(&problem, x.row(0).as_slice().unwrap(), &mut rng);
            let post = gmm_posterior(&problem, &prior, &y).unwrap();
            let pc = gmm_sample(&prior, 250, &mut rng);
            let qc = gmm_sample(&post, 250, &mut rng);
            let pa = EmpiricalJoint::uniform_xs(pc).unwrap();
            let qa = EmpiricalJoint::uniform_xs(qc).unwrap();
            let mut dx2 = 0.0f64;
            // Blur from the prior cloud's own squared diameter.
            for i in 0..250 {
                for j in (i + 1)..250 {
                    let mut s = 0.0;
                    for cc in 0..d {
                        let dv = pa.xs()[[i, cc]] - pa.xs()[[j, cc]];
                        s += dv * dv;
                    }
                    dx2 = dx2.max(s);
                }
            }
            let ecfg = SinkhornConfig::new(1e-3 * dx2, 80, 1e-6 * dx2, Some(0.5)).unwrap();
            prior_err += sinkhorn_divergence(&pa, &qa, &spec, &ecfg).unwrap();
        }
        prior_err /= trials as f64;

        println!(
            "seed {seed}: cf {cf:.4}, two-sample {floor:.4}, collapse {coll:.4}, signal {:.4}, prior-err {prior_err:.3}, ratio {:.1}",
            coll - floor,
            prior_err / cf
        );
    }
}
