//! Scratch probe: one-seed metrics for the random-images benchmark across
//! variants and β values.

use condot::experiments::{run_experiment, ExperimentKind, RunSettings};
use condot::generator::LossVariant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let beta: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100.0);
    let eps_rel: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let only: Option<String> = args.get(3).cloned();
    let iters: Option<usize> = args.get(4).and_then(|s| s.parse().ok());

    for variant in [LossVariant::Diagonal, LossVariant::Beta, LossVariant::Joint] {
        if let Some(name) = &only {
            if !format!("{variant:?}").eq_ignore_ascii_case(name) {
                continue;
            }
        }
        let mut settings = RunSettings::images_desk();
        settings.runs = 1;
        settings.beta = beta;
        settings.train_epsilon_rel = eps_rel;
        if let Some(it) = iters {
            settings.iters = it;
        }
        let t = std::time::Instant::now();
        let out = run_experiment(ExperimentKind::RandomImages, &[variant], &settings).unwrap();
        println!(
            "{:?} beta {beta} eps {eps_rel}: joint_error {:.4}, resim {:.6}, unconverged {}, {:.0}s",
            variant,
            out.mean(variant, "joint_error").unwrap(),
            out.mean(variant, "resimulation").unwrap(),
            out.unconverged_steps,
            t.elapsed().as_secs_f64()
        );
    }
}
