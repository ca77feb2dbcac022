//! Scratch probe: one-seed mixture metrics for a single variant under
//! overridden training knobs (variant, lr, iters, train eps_rel).

use condot::experiments::{run_experiment, ExperimentKind, RunSettings};
use condot::generator::LossVariant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = match args.get(1).map(String::as_str) {
        Some("beta") => LossVariant::Beta,
        Some("diagonal") => LossVariant::Diagonal,
        _ => LossVariant::Joint,
    };
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let eps_rel: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let width: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(128);

    let mut settings = RunSettings::mixture_desk();
    settings.runs = 1;
    settings.lr = lr;
    settings.iters = iters;
    settings.train_epsilon_rel = eps_rel;
    settings.hidden = vec![width; 3];
    let t = std::time::Instant::now();
    let out = run_experiment(ExperimentKind::Mixture, &[variant], &settings).unwrap();
    println!(
        "{:?} lr {lr} iters {iters} eps {eps_rel}: joint_error {:.4}, posterior {:.4}, unconverged {}, {:.0}s",
        variant,
        out.mean(variant, "joint_error").unwrap(),
        out.mean(variant, "expected_posterior_error").unwrap(),
        out.unconverged_steps,
        t.elapsed().as_secs_f64()
    );
}
