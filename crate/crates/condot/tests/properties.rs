//! Randomized property tests: metric axioms of the conditional distance,
//! its relation to the unrestricted distance, glued-plan round trips, the
//! β-weighted off-diagonal bound, and exact-solver certificates.

use condot::conditional::{
    adm_lift, conditional_wasserstein, diagonal_diagnostic, restricted_brute_force,
};
use condot::cost::{cost_matrix, CostSpec};
use condot::exact::{dual_from_primal, solve_exact};
use condot::measures::{gmm_posterior, GaussianMixture, LinearGaussianProblem};
use condot::rng::Rng;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

/// Point clouds over shared condition keys. Every group carries equal mass
/// on both sides (atoms within a group split it uniformly), which is exactly
/// the feasibility requirement of the restricted problem.
#[derive(Debug, Clone)]
struct GroupedPair {
    ys_a: Vec<f64>,
    xs_a: Vec<[f64; 2]>,
    wa: Vec<f64>,
    ys_b: Vec<f64>,
    xs_b: Vec<[f64; 2]>,
    wb: Vec<f64>,
}

impl GroupedPair {
    fn measures(&self) -> (condot::measures::EmpiricalJoint, condot::measures::EmpiricalJoint) {
        let a = build(&self.ys_a, &self.xs_a, &self.wa);
        let b = build(&self.ys_b, &self.xs_b, &self.wb);
        (a, b)
    }
}

fn build(ys: &[f64], xs: &[[f64; 2]], w: &[f64]) -> condot::measures::EmpiricalJoint {
    let n = ys.len();
    let ys = Array2::from_shape_fn((n, 1), |(i, _)| ys[i]);
    let xs_arr = Array2::from_shape_fn((n, 2), |(i, j)| xs[i][j]);
    let weights = Array1::from_vec(w.to_vec());
    condot::measures::EmpiricalJoint::new(ys, xs_arr, weights).unwrap()
}

fn side(groups: &[(Vec<[f64; 2]>, Vec<[f64; 2]>, Vec<[f64; 2]>)], pick: usize) -> (Vec<f64>, Vec<[f64; 2]>, Vec<f64>) {
    let g_total = groups.len() as f64;
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    let mut w = Vec::new();
    for (g, atoms) in groups.iter().enumerate() {
        let pts = match pick {
            0 => &atoms.0,
            1 => &atoms.1,
            _ => &atoms.2,
        };
        let share = 1.0 / (g_total * pts.len() as f64);
        for p in pts {
            ys.push(g as f64);
            xs.push(*p);
            w.push(share);
        }
    }
    // Remove the tiny normalization drift so weights sum to one exactly.
    let total: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= total;
    }
    (ys, xs, w)
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    [(-1.0..1.0f64), (-1.0..1.0f64)].prop_map(|[a, b]| [a, b])
}

fn atoms() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(point(), 1..4)
}

/// One to three groups; each group holds atom sets for three measures over
/// the same condition key.
fn grouped_triple() -> impl Strategy<Value = Vec<(Vec<[f64; 2]>, Vec<[f64; 2]>, Vec<[f64; 2]>)>> {
    prop::collection::vec((atoms(), atoms(), atoms()), 1..4)
}

/// Groups whose two sides hold the same number of atoms, as the brute-force
/// reference requires.
fn balanced_groups() -> impl Strategy<Value = Vec<(Vec<[f64; 2]>, Vec<[f64; 2]>)>> {
    let balanced = (1usize..4).prop_flat_map(|k| {
        (
            prop::collection::vec(point(), k),
            prop::collection::vec(point(), k),
        )
    });
    prop::collection::vec(balanced, 1..4)
}

fn pair_from(groups: &[(Vec<[f64; 2]>, Vec<[f64; 2]>, Vec<[f64; 2]>)], i: usize, j: usize) -> GroupedPair {
    let (ys_a, xs_a, wa) = side(groups, i);
    let (ys_b, xs_b, wb) = side(groups, j);
    GroupedPair {
        ys_a,
        xs_a,
        wa,
        ys_b,
        xs_b,
        wb,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Swapping the arguments leaves the restricted distance unchanged.
    #[test]
    fn conditional_distance_is_symmetric(groups in grouped_triple()) {
        let spec = CostSpec::euclidean(2).unwrap();
        let (a, b) = pair_from(&groups, 0, 1).measures();
        let (ab, _) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        let (ba, _) = conditional_wasserstein(&b, &a, &spec, 0.0).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab.abs()));
    }

    /// The distance from a measure to an atom-reordered copy of itself is 0.
    #[test]
    fn conditional_distance_vanishes_on_reordered_copy(groups in grouped_triple(), seed in 0u64..1000) {
        let spec = CostSpec::euclidean(2).unwrap();
        let (ys, xs, w) = side(&groups, 0);
        let a = build(&ys, &xs, &w);
        let mut order: Vec<usize> = (0..ys.len()).collect();
        Rng::from_seed(seed).shuffle(&mut order);
        let ys_p: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
        let xs_p: Vec<[f64; 2]> = order.iter().map(|&i| xs[i]).collect();
        let w_p: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        let b = build(&ys_p, &xs_p, &w_p);
        let (value, _) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        prop_assert!(value <= 1e-9, "distance to a reordering was {value}");
    }

    /// Moving one atom produces a strictly positive distance.
    #[test]
    fn conditional_distance_detects_a_moved_atom(groups in grouped_triple()) {
        let spec = CostSpec::euclidean(2).unwrap();
        let (ys, xs, w) = side(&groups, 0);
        let mut moved = xs.clone();
        moved[0][0] += 10.0; // far outside the sampling box
        let a = build(&ys, &xs, &w);
        let b = build(&ys, &moved, &w);
        let (value, _) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        prop_assert!(value > 1e-3, "moved atom went unnoticed: {value}");
    }

    /// Triangle inequality on feasible triples sharing a condition marginal.
    #[test]
    fn conditional_distance_triangle_inequality(groups in grouped_triple()) {
        let spec = CostSpec::euclidean(2).unwrap();
        let (a, b) = pair_from(&groups, 0, 1).measures();
        let (_, c) = pair_from(&groups, 0, 2).measures();
        let (ab, _) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        let (bc, _) = conditional_wasserstein(&b, &c, &spec, 0.0).unwrap();
        let (ac, _) = conditional_wasserstein(&a, &c, &spec, 0.0).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9, "triangle violated: {ac} > {ab} + {bc}");
    }

    /// The restricted infimum can never beat the unrestricted one.
    #[test]
    fn conditional_dominates_joint_distance(groups in grouped_triple()) {
        let spec = CostSpec::euclidean(2).unwrap();
        let (a, b) = pair_from(&groups, 0, 1).measures();
        let (_, plan) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        let joint_spec = CostSpec::euclidean(2).unwrap();
        let cost = cost_matrix(&a, &b, &joint_spec).unwrap();
        let (_, joint_p) = solve_exact(cost.view(), a.weights(), b.weights()).unwrap();
        prop_assert!(plan.value_p_total() >= joint_p - 1e-9,
            "restricted {} beat unrestricted {joint_p}", plan.value_p_total());
    }

    /// Group-wise solves agree with brute-force enumeration over restricted
    /// couplings.
    #[test]
    fn conditional_matches_restricted_brute_force(groups in balanced_groups()) {
        let spec = CostSpec::euclidean(2).unwrap();
        let g = groups.len() as f64;
        let mut ya = Vec::new();
        let mut xa = Vec::new();
        let mut wa = Vec::new();
        let mut yb = Vec::new();
        let mut xb = Vec::new();
        let mut wb = Vec::new();
        for (gi, (pa, pb)) in groups.iter().enumerate() {
            let share = 1.0 / (g * pa.len() as f64);
            for p in pa {
                ya.push(gi as f64);
                xa.push(*p);
                wa.push(share);
            }
            for p in pb {
                yb.push(gi as f64);
                xb.push(*p);
                wb.push(share);
            }
        }
        let renorm = |w: &mut Vec<f64>| {
            let total: f64 = w.iter().sum();
            for wi in w.iter_mut() { *wi /= total; }
        };
        renorm(&mut wa);
        renorm(&mut wb);
        let a = build(&ya, &xa, &wa);
        let b = build(&yb, &xb, &wb);
        let (value, plan) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        let brute = restricted_brute_force(&a, &b, &spec, 0.0).unwrap();
        prop_assert!((plan.value_p_total() - brute).abs() <= 1e-10,
            "solver {} vs brute force {brute}", plan.value_p_total());
        prop_assert!((value - brute.powf(0.5)).abs() <= 1e-9);
    }

    /// Project → lift → project preserves atoms, masses, and the transport
    /// cost functional.
    #[test]
    fn glued_plan_round_trip(groups in grouped_triple()) {
        let spec = CostSpec::euclidean(2).unwrap();
        let (a, b) = pair_from(&groups, 0, 1).measures();
        let (_, plan) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        let projected = plan.project();
        let lifted = adm_lift(&projected, 2).unwrap();
        let reprojected = lifted.project();
        prop_assert!(projected.measure_eq(&reprojected, 0.0));
        prop_assert!((projected.x_cost(2) - plan.value_p_total()).abs() <= 1e-12);
        prop_assert!((reprojected.x_cost(2) - lifted.value_p_total()).abs() <= 1e-12);
    }

    /// For any β, the optimal plan under `‖Δx‖² + β‖Δy‖²` spends at most
    /// (restricted value)/β on condition transport.
    #[test]
    fn beta_plan_offdiag_cost_is_bounded(groups in grouped_triple(), beta_exp in 0i32..5) {
        let beta = 10f64.powi(beta_exp);
        let (a, b) = pair_from(&groups, 0, 1).measures();
        let spec2 = CostSpec::euclidean(2).unwrap();
        let (cond, _) = conditional_wasserstein(&a, &b, &spec2, 0.0).unwrap();
        let beta_spec = CostSpec::beta_sum(2, beta).unwrap();
        let cost = cost_matrix(&a, &b, &beta_spec).unwrap();
        let (coupling, _) = solve_exact(cost.view(), a.weights(), b.weights()).unwrap();
        let (_, offdiag_ycost) = diagonal_diagnostic(&coupling, a.ys(), b.ys(), 2);
        prop_assert!(offdiag_ycost <= cond * cond / beta + 1e-12,
            "y-cost {offdiag_ycost} above bound {} at beta {beta}", cond * cond / beta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// The exact solver returns a feasible coupling and a matching dual
    /// certificate on random dense instances.
    #[test]
    fn exact_solver_primal_dual_certificates(
        n in 2usize..7,
        m in 2usize..7,
        seed in 0u64..10_000,
    ) {
        let mut rng = Rng::from_seed(seed);
        let cost = Array2::from_shape_fn((n, m), |_| rng.uniform_in(0.0, 4.0));
        let row = Array1::from_elem(n, 1.0 / n as f64);
        let col = Array1::from_elem(m, 1.0 / m as f64);
        let (coupling, value) = solve_exact(cost.view(), row.view(), col.view()).unwrap();

        let matrix = coupling.matrix();
        for i in 0..n {
            let sum: f64 = matrix.row(i).sum();
            prop_assert!((sum - row[i]).abs() <= 1e-9);
        }
        for j in 0..m {
            let sum: f64 = matrix.column(j).sum();
            prop_assert!((sum - col[j]).abs() <= 1e-9);
        }
        prop_assert!(matrix.iter().all(|v| *v >= 0.0));

        let dual = dual_from_primal(cost.view(), &coupling).unwrap();
        prop_assert!(dual.max_violation(cost.view()) <= 1e-9);
        let dual_value = dual.dual_value(row.view(), col.view());
        prop_assert!((value - dual_value).abs() <= 1e-8,
            "duality gap {} at n={n} m={m}", (value - dual_value).abs());
    }

    /// Transposing a square cost transposes the problem without changing the
    /// value.
    #[test]
    fn exact_value_is_symmetric_under_transposition(
        n in 2usize..6,
        seed in 0u64..10_000,
    ) {
        let mut rng = Rng::from_seed(seed);
        let cost = Array2::from_shape_fn((n, n), |_| rng.uniform_in(0.0, 3.0));
        let w = Array1::from_elem(n, 1.0 / n as f64);
        let (_, fwd) = solve_exact(cost.view(), w.view(), w.view()).unwrap();
        let cost_t = cost.t().as_standard_layout().to_owned();
        let (_, bwd) = solve_exact(cost_t.view(), w.view(), w.view()).unwrap();
        prop_assert!((fwd - bwd).abs() <= 1e-12 * (1.0 + fwd.abs()));
    }

    /// Posterior component weights renormalize for any finite observation,
    /// however unlikely.
    #[test]
    fn posterior_weights_always_renormalize(
        y0 in -50.0..50.0f64,
        y1 in -50.0..50.0f64,
        seed in 0u64..1000,
    ) {
        let mut rng = Rng::from_seed(seed);
        let k = 4;
        let means = Array2::from_shape_fn((k, 2), |_| rng.uniform_in(-1.0, 1.0));
        let vars = Array2::from_elem((k, 2), 0.01);
        let weights = Array1::from_elem(k, 1.0 / k as f64);
        let prior = GaussianMixture::new(weights, means, vars).unwrap();
        let problem = LinearGaussianProblem::new(vec![0.2, 0.1], 0.03).unwrap();
        let posterior = gmm_posterior(&problem, &prior, &[y0, y1]).unwrap();
        let total: f64 = posterior.weights().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(posterior.weights().iter().all(|w| *w >= 0.0));
    }

    /// Identical seeds give identical streams; derived streams do not depend
    /// on the order in which they are split off.
    #[test]
    fn rng_streams_are_reproducible(seed in 0u64..1_000_000) {
        let mut r1 = Rng::from_seed(seed);
        let mut r2 = Rng::from_seed(seed);
        for _ in 0..32 {
            prop_assert_eq!(r1.uniform().to_bits(), r2.uniform().to_bits());
        }
        let base = Rng::from_seed(seed);
        let mut d5_first = base.derive(5);
        let mut d9_then = base.derive(9);
        let mut d9_first = base.derive(9);
        let mut d5_then = base.derive(5);
        prop_assert_eq!(d5_first.uniform().to_bits(), d5_then.uniform().to_bits());
        prop_assert_eq!(d9_first.uniform().to_bits(), d9_then.uniform().to_bits());
    }
}
