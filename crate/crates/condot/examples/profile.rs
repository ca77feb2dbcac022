//! Scratch profiling harness for tuning desk-scale experiment settings.

use std::time::Instant;

use condot::cost::CostSpec;
use condot::generator::{mlp_backward, mlp_forward, AdamState, GeneratorNet};
use condot::measures::EmpiricalJoint;
use condot::rng::Rng;
use condot::sinkhorn::{
    entropic_ot, sinkhorn_divergence, sinkhorn_divergence_grad, SinkhornConfig,
};
use ndarray::{Array1, Array2};

fn cloud(rng: &mut Rng, n: usize, dy: usize, dx: usize, shift: f64) -> EmpiricalJoint {
    let ys = Array2::from_shape_fn((n, dy), |_| rng.normal() + shift);
    let xs = Array2::from_shape_fn((n, dx), |_| rng.normal() + 0.5 * shift);
    let w = Array1::from_elem(n, 1.0 / n as f64);
    EmpiricalJoint::new(ys, xs, w).unwrap()
}

fn main() {
    let mut rng = Rng::from_seed(9);
    let diam2 = 4.0 * 10.0; // rough squared diameter for standard normal clouds

    for &n in &[256usize, 250, 1000] {
        let a = cloud(&mut rng, n, 5, 5, 0.0);
        let b = cloud(&mut rng, n, 5, 5, 0.4);
        for &eps_rel in &[0.05, 0.1, 0.2, 0.005, 0.001] {
            for &(max_iter, stop_rel) in &[(60usize, 1e-3), (400, 1e-4), (3000, 1e-6)] {
                let eps = eps_rel * diam2;
                let cfg = SinkhornConfig {
                    epsilon: eps,
                    max_iter,
                    stop_tol: stop_rel * eps,
                    scaling: Some(0.5),
                };
                let spec = CostSpec::euclidean(2).unwrap();
                let t = Instant::now();
                let (v, pot) = entropic_ot(&a, &b, &spec, &cfg).unwrap();
                let dt = t.elapsed().as_secs_f64();
                println!(
                    "ot    n={n:4} eps_rel={eps_rel:<6} max={max_iter:<5} stop={stop_rel:.0e} -> {dt:8.3}s  iters={:4} conv={} v={v:.6}",
                    pot.iterations, pot.converged
                );
            }
        }
        // Divergence (3 solves) at eval-ish settings.
        for &(eps_rel, max_iter, stop_rel) in &[
            (0.001, 3000usize, 1e-6),
            (0.005, 400, 1e-4),
            (0.01, 300, 1e-4),
        ] {
            let eps = eps_rel * diam2;
            let cfg = SinkhornConfig {
                epsilon: eps,
                max_iter,
                stop_tol: stop_rel * eps,
                scaling: Some(0.5),
            };
            let spec = CostSpec::euclidean(2).unwrap();
            let t = Instant::now();
            let v = sinkhorn_divergence(&a, &b, &spec, &cfg).unwrap();
            let dt = t.elapsed().as_secs_f64();
            println!(
                "div   n={n:4} eps_rel={eps_rel:<6} max={max_iter:<5} stop={stop_rel:.0e} -> {dt:8.3}s  S={v:.6}"
            );
        }
        // Gradient step (3 solves + stats) at train-ish settings.
        if n == 256 {
            for &(eps_rel, max_iter, stop_rel) in &[
                (0.05, 60usize, 1e-3),
                (0.1, 60, 1e-3),
                (0.1, 20, 0.05),
                (0.2, 20, 0.05),
            ] {
                let eps = eps_rel * diam2;
                let cfg = SinkhornConfig {
                    epsilon: eps,
                    max_iter,
                    stop_tol: stop_rel * eps,
                    scaling: Some(0.5),
                };
                let spec = CostSpec::euclidean(2).unwrap();
                let t = Instant::now();
                let dg = sinkhorn_divergence_grad(&a, &b, &spec, &cfg).unwrap();
                let dt = t.elapsed().as_secs_f64();
                println!(
                    "grad  n={n:4} eps_rel={eps_rel:<6} max={max_iter:<5} stop={stop_rel:.0e} -> {dt:8.3}s  conv={} S={:.6}",
                    dg.converged, dg.value
                );
            }
        }
    }

    // MLP cost per training step (forward + backward + adam), batch 256.
    for &hidden in &[256usize, 128] {
        let mut net = GeneratorNet::new(5, 5, 5, &[hidden, hidden, hidden], &mut rng).unwrap();
        let mut adam = AdamState::new(&net, 1e-3).unwrap();
        let input = Array2::from_shape_fn((256, 10), |_| rng.normal());
        let t = Instant::now();
        let reps = 50;
        for _ in 0..reps {
            let (out, cache) = mlp_forward(&net, &input.view()).unwrap();
            let dout = Array2::from_elem(out.dim(), 1e-3);
            let grads = mlp_backward(&net, &cache, &dout.view());
            adam.update(&mut net, &grads);
        }
        let dt = t.elapsed().as_secs_f64() / reps as f64;
        println!("mlp   hidden={hidden} -> {:8.4}s per step", dt);
    }
}
