//! The conditional Wasserstein distance and its proposition checks.
//!
//! Transport is restricted to couplings that never move mass across distinct
//! conditions: the admissible plans glue one optimal transport problem per
//! condition value. For finite supports this makes the distance computable
//! exactly: group the samples by `y`, solve an `x`-only problem inside every
//! group, and average the group values by the condition marginal,
//!
//! `value^p = Σ_y P_Y(y) · W_p^p(P_{X|Y=y}, P_{Z|Y=y})`.
//!
//! The module also houses the diagnostics used to validate the surrounding
//! theory numerically: the two-atom counterexample separating the joint and
//! conditional distances, the projection/lifting bijection between glued
//! plans and three-marginal plans, a constructive dual certificate for p = 1,
//! the independence degeneracy, and a Monte Carlo comparison of diagonal
//! versus mixing couplings under quadratic cost.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::cost::{cost_matrix, CostSpec};
use crate::error::{Error, Result};
use crate::exact::{brute_force_oracle, dual_from_primal, solve_exact, Coupling};
use crate::measures::EmpiricalJoint;
use crate::par;
use crate::rng::Rng;
use crate::vecmath::{dist, inf_dist, mean, sample_std, sq_dist};

/// Tolerance on the agreement of per-condition masses between the two sides.
pub const GROUP_MASS_TOL: f64 = 1e-9;

/// Samples of both measures partitioned by condition value.
///
/// Groups are sorted by key (lexicographic on coordinates) so that every
/// consumer reduces over them in the same order.
#[derive(Debug, Clone)]
pub struct ConditionGroups {
    keys: Vec<Vec<f64>>,
    a_indices: Vec<Vec<usize>>,
    b_indices: Vec<Vec<usize>>,
    masses: Vec<f64>,
}

impl ConditionGroups {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, g: usize) -> &[f64] {
        &self.keys[g]
    }

    pub fn a_indices(&self, g: usize) -> &[usize] {
        &self.a_indices[g]
    }

    pub fn b_indices(&self, g: usize) -> &[usize] {
        &self.b_indices[g]
    }

    /// Shared condition mass of group `g` (the two sides agree within
    /// [`GROUP_MASS_TOL`]; the `a` side's mass is stored).
    pub fn mass(&self, g: usize) -> f64 {
        self.masses[g]
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    a.len() < b.len()
}

/// Partitions the supports of `a` and `b` by condition value.
///
/// With `tol = 0` two conditions belong to the same group iff their
/// coordinates are bitwise equal. With `tol > 0`, conditions within `tol` in
/// the supremum norm are merged transitively (union-find on the tolerance
/// graph); note that merging coarsens the conditioning and therefore changes
/// the metric being computed.
///
/// Errors with [`Error::InfeasibleRestrictedCoupling`] when a group's mass
/// under `a` and under `b` differ by more than [`GROUP_MASS_TOL`]: no
/// restricted coupling exists and the conditional distance is undefined.
pub fn group_by_condition(
    a: &EmpiricalJoint,
    b: &EmpiricalJoint,
    tol: f64,
) -> Result<ConditionGroups> {
    if a.dy() != b.dy() {
        return Err(Error::ShapeMismatch(format!(
            "condition dims differ: {} vs {}",
            a.dy(),
            b.dy()
        )));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grouping tolerance must be nonnegative, got {tol}"
        )));
    }

    let na = a.n();
    let nb = b.n();
    let row = |node: usize| -> Vec<f64> {
        if node < na {
            a.ys().row(node).to_vec()
        } else {
            b.ys().row(node - na).to_vec()
        }
    };

    // group id per node (a side: 0..na, b side: na..na+nb)
    let group_of: Vec<usize> = if tol == 0.0 {
        let mut map: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut next = 0;
        (0..na + nb)
            .map(|node| {
                let bits: Vec<u64> = row(node).iter().map(|v| v.to_bits()).collect();
                *map.entry(bits).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                })
            })
            .collect()
    } else {
        let total = na + nb;
        let mut parent: Vec<usize> = (0..total).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let rows: Vec<Vec<f64>> = (0..total).map(row).collect();
        for i in 0..total {
            for j in i + 1..total {
                if inf_dist(&rows[i], &rows[j]) <= tol {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri] = rj;
                    }
                }
            }
        }
        let mut map: HashMap<usize, usize> = HashMap::new();
        let mut next = 0;
        (0..total)
            .map(|node| {
                let root = find(&mut parent, node);
                *map.entry(root).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                })
            })
            .collect()
    };

    let num_groups = group_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut keys: Vec<Vec<f64>> = vec![Vec::new(); num_groups];
    let mut key_set = vec![false; num_groups];
    let mut a_indices: Vec<Vec<usize>> = vec![Vec::new(); num_groups];
    let mut b_indices: Vec<Vec<usize>> = vec![Vec::new(); num_groups];
    for node in 0..na + nb {
        let g = group_of[node];
        let y = row(node);
        // Representative key: lexicographically smallest member.
        if !key_set[g] || lex_less(&y, &keys[g]) {
            keys[g] = y.clone();
            key_set[g] = true;
        }
        if node < na {
            a_indices[g].push(node);
        } else {
            b_indices[g].push(node - na);
        }
    }

    let mut order: Vec<usize> = (0..num_groups).collect();
    order.sort_by(|&x, &y| {
        if lex_less(&keys[x], &keys[y]) {
            std::cmp::Ordering::Less
        } else if lex_less(&keys[y], &keys[x]) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });

    let mut groups = ConditionGroups {
        keys: Vec::with_capacity(num_groups),
        a_indices: Vec::with_capacity(num_groups),
        b_indices: Vec::with_capacity(num_groups),
        masses: Vec::with_capacity(num_groups),
    };
    for &g in &order {
        let mass_a: f64 = a_indices[g].iter().map(|&i| a.weights()[i]).sum();
        let mass_b: f64 = b_indices[g].iter().map(|&j| b.weights()[j]).sum();
        if (mass_a - mass_b).abs() > GROUP_MASS_TOL {
            return Err(Error::InfeasibleRestrictedCoupling(format!(
                "condition {:?} has mass {mass_a:.12} on one side and {mass_b:.12} on the other",
                keys[g]
            )));
        }
        if mass_a == 0.0 {
            continue; // zero-mass conditions carry no transport problem
        }
        groups.keys.push(keys[g].clone());
        groups.a_indices.push(a_indices[g].clone());
        groups.b_indices.push(b_indices[g].clone());
        groups.masses.push(mass_a);
    }
    Ok(groups)
}

/// One condition's share of a glued plan: the local coupling of the posterior
/// measures, its transport cost, and the support coordinates it refers to.
#[derive(Debug, Clone)]
pub struct GluedGroup {
    pub key: Vec<f64>,
    pub mass: f64,
    /// Row indices into the `a` measure (empty on lifted plans).
    pub a_indices: Vec<usize>,
    /// Column indices into the `b` measure (empty on lifted plans).
    pub b_indices: Vec<usize>,
    /// Group support coordinates, one row per local index.
    pub xa: Array2<f64>,
    pub xb: Array2<f64>,
    /// Coupling of the renormalized within-group measures.
    pub coupling: Coupling,
    /// Transport cost of `coupling` under the x-only cost, i.e. the group's
    /// `W_p^p`.
    pub value_p: f64,
}

/// Optimal restricted plan: one coupling per condition, glued by the
/// condition marginal. Off-diagonal condition mass is zero by construction.
#[derive(Debug, Clone)]
pub struct GluedPlan {
    pub groups: Vec<GluedGroup>,
    p: u32,
}

impl GluedPlan {
    pub fn p(&self) -> u32 {
        self.p
    }

    /// `Σ_y P_Y(y) · W_p^p`, the p-th power of the conditional distance.
    pub fn value_p_total(&self) -> f64 {
        self.groups.iter().map(|g| g.mass * g.value_p).sum()
    }

    /// The conditional distance itself.
    pub fn value(&self) -> f64 {
        match self.p {
            1 => self.value_p_total(),
            2 => self.value_p_total().sqrt(),
            _ => unreachable!("validated in CostSpec"),
        }
    }

    /// Assembles the glued plan into one global coupling between the two
    /// original supports. Requires index provenance (not available on lifted
    /// plans).
    pub fn assemble_coupling(&self, a: &EmpiricalJoint, b: &EmpiricalJoint) -> Result<Coupling> {
        let mut matrix = Array2::zeros((a.n(), b.n()));
        for group in &self.groups {
            if group.a_indices.len() != group.xa.nrows()
                || group.b_indices.len() != group.xb.nrows()
            {
                return Err(Error::InvalidConfig(
                    "plan lacks index provenance; cannot assemble a global coupling".into(),
                ));
            }
            let local = group.coupling.matrix();
            for (ii, &i) in group.a_indices.iter().enumerate() {
                for (jj, &j) in group.b_indices.iter().enumerate() {
                    matrix[[i, j]] += group.mass * local[[ii, jj]];
                }
            }
        }
        Coupling::new(matrix, a.weights().to_owned(), b.weights().to_owned())
    }

    /// Drops the duplicated condition coordinate, turning the plan into a
    /// measure on `(y, x1, x2)` atoms.
    pub fn project(&self) -> ProjectedPlan {
        let mut atoms = Vec::new();
        for group in &self.groups {
            let local = group.coupling.matrix();
            for ii in 0..group.xa.nrows() {
                for jj in 0..group.xb.nrows() {
                    let mass = group.mass * local[[ii, jj]];
                    if mass > 0.0 {
                        atoms.push(ProjectedAtom {
                            y: group.key.clone(),
                            x1: group.xa.row(ii).to_vec(),
                            x2: group.xb.row(jj).to_vec(),
                            mass,
                        });
                    }
                }
            }
        }
        ProjectedPlan { atoms }
    }
}

/// One support atom of a projected plan.
#[derive(Debug, Clone)]
pub struct ProjectedAtom {
    pub y: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub mass: f64,
}

/// Measure on `(y, x1, x2)` obtained by projecting a glued plan; the second
/// copy of the condition is redundant and can be re-inserted losslessly.
#[derive(Debug, Clone)]
pub struct ProjectedPlan {
    pub atoms: Vec<ProjectedAtom>,
}

impl ProjectedPlan {
    /// `Σ mass · ‖x1 - x2‖^p` over the atoms, the cost functional that the
    /// projection preserves.
    pub fn x_cost(&self, p: u32) -> f64 {
        self.atoms
            .iter()
            .map(|atom| {
                atom.mass
                    * match p {
                        1 => dist(&atom.x1, &atom.x2),
                        2 => sq_dist(&atom.x1, &atom.x2),
                        _ => unreachable!("validated in CostSpec"),
                    }
            })
            .sum()
    }

    /// Aggregates atom masses by bitwise-identical `(y, x1, x2)` coordinates.
    fn aggregated(&self) -> HashMap<Vec<u64>, f64> {
        let mut map: HashMap<Vec<u64>, f64> = HashMap::new();
        for atom in &self.atoms {
            let key: Vec<u64> = atom
                .y
                .iter()
                .chain(&atom.x1)
                .chain(&atom.x2)
                .map(|v| v.to_bits())
                .collect();
            *map.entry(key).or_insert(0.0) += atom.mass;
        }
        map
    }

    /// True when both plans describe the same measure on `(y, x1, x2)` up to
    /// `tol` on every atom's mass.
    pub fn measure_eq(&self, other: &ProjectedPlan, tol: f64) -> bool {
        let lhs = self.aggregated();
        let rhs = other.aggregated();
        let keys: std::collections::HashSet<_> = lhs.keys().chain(rhs.keys()).collect();
        keys.into_iter().all(|k| {
            let l = lhs.get(k).copied().unwrap_or(0.0);
            let r = rhs.get(k).copied().unwrap_or(0.0);
            (l - r).abs() <= tol
        })
    }
}

/// Re-inserts the duplicated condition coordinate into a projected plan.
///
/// The inverse of [`GluedPlan::project`]: atoms are grouped by condition,
/// each group's `(x1, x2)` pairs become a local coupling, and the group mass
/// is the atoms' total. Lifted plans carry support coordinates but no index
/// provenance.
pub fn adm_lift(projected: &ProjectedPlan, p: u32) -> Result<GluedPlan> {
    if p != 1 && p != 2 {
        return Err(Error::InvalidConfig(format!("order p must be 1 or 2, got {p}")));
    }
    if projected.atoms.is_empty() {
        return Err(Error::EmptyMeasure("projected plan has no atoms".into()));
    }
    let total: f64 = projected.atoms.iter().map(|a| a.mass).sum();
    if (total - 1.0).abs() > GROUP_MASS_TOL {
        return Err(Error::InvalidWeights(format!(
            "projected plan mass {total:.12}, expected 1"
        )));
    }

    let mut order: Vec<Vec<u64>> = Vec::new();
    let mut by_key: HashMap<Vec<u64>, Vec<&ProjectedAtom>> = HashMap::new();
    for atom in &projected.atoms {
        let key: Vec<u64> = atom.y.iter().map(|v| v.to_bits()).collect();
        by_key
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key.clone());
                Vec::new()
            })
            .push(atom);
    }
    order.sort_by(|a, b| {
        let fa: Vec<f64> = a.iter().map(|b| f64::from_bits(*b)).collect();
        let fb: Vec<f64> = b.iter().map(|b| f64::from_bits(*b)).collect();
        if lex_less(&fa, &fb) {
            std::cmp::Ordering::Less
        } else if lex_less(&fb, &fa) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });

    let mut groups = Vec::with_capacity(order.len());
    for key_bits in order {
        let atoms = &by_key[&key_bits];
        let mass: f64 = atoms.iter().map(|a| a.mass).sum();
        // Deduplicate support points bitwise, preserving first appearance.
        let mut x1_index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut x2_index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut x1_rows: Vec<Vec<f64>> = Vec::new();
        let mut x2_rows: Vec<Vec<f64>> = Vec::new();
        for atom in atoms {
            let k1: Vec<u64> = atom.x1.iter().map(|v| v.to_bits()).collect();
            x1_index.entry(k1).or_insert_with(|| {
                x1_rows.push(atom.x1.clone());
                x1_rows.len() - 1
            });
            let k2: Vec<u64> = atom.x2.iter().map(|v| v.to_bits()).collect();
            x2_index.entry(k2).or_insert_with(|| {
                x2_rows.push(atom.x2.clone());
                x2_rows.len() - 1
            });
        }
        let mut local = Array2::zeros((x1_rows.len(), x2_rows.len()));
        for atom in atoms {
            let k1: Vec<u64> = atom.x1.iter().map(|v| v.to_bits()).collect();
            let k2: Vec<u64> = atom.x2.iter().map(|v| v.to_bits()).collect();
            local[[x1_index[&k1], x2_index[&k2]]] += atom.mass / mass;
        }
        let row_w = Array1::from_iter((0..x1_rows.len()).map(|i| local.row(i).sum()));
        let col_w = Array1::from_iter((0..x2_rows.len()).map(|j| local.column(j).sum()));
        let coupling = Coupling::new(local, row_w, col_w)?;

        let dx1 = x1_rows[0].len();
        let dx2 = x2_rows[0].len();
        let xa = Array2::from_shape_vec((x1_rows.len(), dx1), x1_rows.concat())
            .expect("rows have equal length");
        let xb = Array2::from_shape_vec((x2_rows.len(), dx2), x2_rows.concat())
            .expect("rows have equal length");

        let mut value_p = 0.0;
        for ii in 0..xa.nrows() {
            for jj in 0..xb.nrows() {
                let m = coupling.matrix()[[ii, jj]];
                if m > 0.0 {
                    let c = match p {
                        1 => dist(xa.row(ii).as_slice().unwrap(), xb.row(jj).as_slice().unwrap()),
                        _ => sq_dist(xa.row(ii).as_slice().unwrap(), xb.row(jj).as_slice().unwrap()),
                    };
                    value_p += m * c;
                }
            }
        }

        groups.push(GluedGroup {
            key: key_bits.iter().map(|b| f64::from_bits(*b)).collect(),
            mass,
            a_indices: Vec::new(),
            b_indices: Vec::new(),
            xa,
            xb,
            coupling,
            value_p,
        });
    }
    Ok(GluedPlan { groups, p })
}

fn group_cost_matrix(
    a: &EmpiricalJoint,
    b: &EmpiricalJoint,
    a_idx: &[usize],
    b_idx: &[usize],
    spec: &CostSpec,
) -> Array2<f64> {
    Array2::from_shape_fn((a_idx.len(), b_idx.len()), |(ii, jj)| {
        spec.x_cost(
            a.xs().row(a_idx[ii]).as_slice().unwrap(),
            b.xs().row(b_idx[jj]).as_slice().unwrap(),
        )
    })
}

/// The conditional Wasserstein distance between two empirical joints, with
/// the optimal glued plan attaining it.
///
/// The restricted infimum decomposes over conditions, so each group is solved
/// independently (in parallel) and reduced in group-key order:
/// `value^p = Σ_y P_Y(y) · W_p^p(P_{X|Y=y}, P_{Z|Y=y})`.
pub fn conditional_wasserstein(
    a: &EmpiricalJoint,
    b: &EmpiricalJoint,
    spec: &CostSpec,
    tol: f64,
) -> Result<(f64, GluedPlan)> {
    if a.dx() != b.dx() {
        return Err(Error::ShapeMismatch(format!(
            "value dims differ: {} vs {}",
            a.dx(),
            b.dx()
        )));
    }
    let groups = group_by_condition(a, b, tol)?;

    let solved: Vec<Result<(Coupling, f64)>> = par::map_range(groups.len(), |g| {
        let a_idx = groups.a_indices(g);
        let b_idx = groups.b_indices(g);
        let cost = group_cost_matrix(a, b, a_idx, b_idx, spec);
        let wa = Array1::from_iter(a_idx.iter().map(|&i| a.weights()[i] / groups.mass(g)));
        let wb = Array1::from_iter(b_idx.iter().map(|&j| b.weights()[j] / groups.mass(g)));
        solve_exact(cost.view(), wa.view(), wb.view())
    });

    let mut glued = Vec::with_capacity(groups.len());
    for (g, result) in solved.into_iter().enumerate() {
        let (coupling, value_p) = result?;
        let a_idx = groups.a_indices(g).to_vec();
        let b_idx = groups.b_indices(g).to_vec();
        glued.push(GluedGroup {
            key: groups.key(g).to_vec(),
            mass: groups.mass(g),
            xa: a.xs().select(ndarray::Axis(0), &a_idx),
            xb: b.xs().select(ndarray::Axis(0), &b_idx),
            a_indices: a_idx,
            b_indices: b_idx,
            coupling,
            value_p,
        });
    }
    let plan = GluedPlan {
        groups: glued,
        p: spec.p(),
    };
    Ok((plan.value(), plan))
}

/// Direct enumeration of the restricted infimum: the minimum of
/// `Σ_y P_Y(y) · (1/k_y) Σ_i c(x_i, z_{σ_y(i)})` over the product of
/// per-group permutation sets. Returns the p-th power objective (no root).
///
/// Requires uniform weights and per-group supports of equal size at most 6.
pub fn restricted_brute_force(
    a: &EmpiricalJoint,
    b: &EmpiricalJoint,
    spec: &CostSpec,
    tol: f64,
) -> Result<f64> {
    let groups = group_by_condition(a, b, tol)?;
    let mut total = 0.0;
    for g in 0..groups.len() {
        let a_idx = groups.a_indices(g);
        let b_idx = groups.b_indices(g);
        if a_idx.len() != b_idx.len() || a_idx.len() > 6 {
            return Err(Error::InvalidConfig(format!(
                "brute force needs equal group sizes <= 6, got {}x{}",
                a_idx.len(),
                b_idx.len()
            )));
        }
        let w0 = a.weights()[a_idx[0]];
        let all_uniform = a_idx.iter().all(|&i| (a.weights()[i] - w0).abs() <= 1e-12)
            && b_idx.iter().all(|&j| (b.weights()[j] - w0).abs() <= 1e-12);
        if !all_uniform {
            return Err(Error::InvalidConfig(
                "brute force requires uniform weights".into(),
            ));
        }
        let cost = group_cost_matrix(a, b, a_idx, b_idx, spec);
        // The oracle's mean assigned cost is exactly the group's W_p^p for
        // uniform within-group weights.
        total += groups.mass(g) * brute_force_oracle(cost.view())?;
    }
    Ok(total)
}

/// Off-diagonal condition mass and condition transport cost of a coupling:
/// `(Σ_{y_i != y'_j} π_ij, Σ_ij π_ij ‖y_i - y'_j‖^p)`. Conditions compare
/// bitwise.
pub fn diagonal_diagnostic(
    coupling: &Coupling,
    ys_a: ArrayView2<f64>,
    ys_b: ArrayView2<f64>,
    p: u32,
) -> (f64, f64) {
    let matrix = coupling.matrix();
    let mut offdiag_mass = 0.0;
    let mut offdiag_ycost = 0.0;
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            let mass = matrix[[i, j]];
            if mass == 0.0 {
                continue;
            }
            let ya = ys_a.row(i);
            let yb = ys_b.row(j);
            let same = ya.iter().zip(yb.iter()).all(|(u, v)| u.to_bits() == v.to_bits());
            if !same {
                offdiag_mass += mass;
            }
            let yc = match p {
                1 => dist(ya.as_slice().unwrap(), yb.as_slice().unwrap()),
                _ => sq_dist(ya.as_slice().unwrap(), yb.as_slice().unwrap()),
            };
            offdiag_ycost += mass * yc;
        }
    }
    (offdiag_mass, offdiag_ycost)
}

/// The two-atom family separating the joint and conditional distances.
///
/// `P_{Y,X} = (δ_(0,0) + δ_(1,n))/2` and `P_{Y,Z} = (δ_(0,n) + δ_(1,0))/2`:
/// the joint W1 may swap the conditions for cost 1, whereas the restricted
/// plan must move `x` the full distance `n` inside each condition. Returns
/// `(joint_w1, conditional_w1)`, computed by the two solvers; the pair is
/// `(1, n)` whenever `n >= 1`.
pub fn counterexample(n: f64) -> Result<(f64, f64)> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidConfig(format!("n must be positive, got {n}")));
    }
    let ys = ndarray::arr2(&[[0.0], [1.0]]);
    let a = EmpiricalJoint::uniform(ys.clone(), ndarray::arr2(&[[0.0], [n]]))?;
    let b = EmpiricalJoint::uniform(ys, ndarray::arr2(&[[n], [0.0]]))?;

    let spec = CostSpec::euclidean(1)?;
    let cost = cost_matrix(&a, &b, &spec)?;
    let (_, joint) = solve_exact(cost.view(), a.weights(), b.weights())?;
    let (cond, _) = conditional_wasserstein(&a, &b, &spec, 0.0)?;
    Ok((joint, cond))
}

/// Per-group dual potential values on the two supports.
#[derive(Debug, Clone)]
pub struct GroupPotential {
    pub key: Vec<f64>,
    /// `h(y, x_i)` on the `a`-side support.
    pub h_a: Vec<f64>,
    /// `h(y, z_j)` on the `b`-side support.
    pub h_b: Vec<f64>,
}

/// Outcome of the constructive dual verification for `p = 1`.
#[derive(Debug, Clone)]
pub struct DualCheck {
    pub primal: f64,
    pub dual: f64,
    pub potentials: Vec<GroupPotential>,
}

/// Verifies the dual representation of the conditional W1 constructively.
///
/// Per condition group, LP duals of the exact solve are turned into a
/// 1-Lipschitz potential by the c-transform `φ(x) = min_j (‖x - z_j‖ - g_j)`,
/// and `h(y, ·) := φ_y` is evaluated on both supports. The dual value
/// `Σ_y P_Y(y) (E_a[h] - E_b[h])` must match the primal within 1e-8, and
/// `|h(y,x1) - h(y,x2)| <= ‖x1 - x2‖` must hold on every within-group support
/// pair; violations are reported with the offending pair.
pub fn dual_check(a: &EmpiricalJoint, b: &EmpiricalJoint, tol: f64) -> Result<DualCheck> {
    let spec = CostSpec::euclidean(1)?;
    let (primal, plan) = conditional_wasserstein(a, b, &spec, tol)?;

    let mut dual = 0.0;
    let mut potentials = Vec::with_capacity(plan.groups.len());
    for group in &plan.groups {
        let cost = Array2::from_shape_fn(
            (group.xa.nrows(), group.xb.nrows()),
            |(ii, jj)| {
                dist(
                    group.xa.row(ii).as_slice().unwrap(),
                    group.xb.row(jj).as_slice().unwrap(),
                )
            },
        );
        let duals = dual_from_primal(cost.view(), &group.coupling)?;

        // c-transform of g: 1-Lipschitz by construction, and exact on both
        // supports for optimal LP duals.
        let phi = |x: &[f64]| -> f64 {
            (0..group.xb.nrows())
                .map(|j| dist(x, group.xb.row(j).as_slice().unwrap()) - duals.g[j])
                .fold(f64::INFINITY, f64::min)
        };
        let h_a: Vec<f64> = (0..group.xa.nrows())
            .map(|i| phi(group.xa.row(i).as_slice().unwrap()))
            .collect();
        let h_b: Vec<f64> = (0..group.xb.nrows())
            .map(|j| phi(group.xb.row(j).as_slice().unwrap()))
            .collect();

        // Lipschitz feasibility over all within-group support pairs.
        let all_points: Vec<(&[f64], f64)> = group
            .xa
            .rows()
            .into_iter()
            .zip(&h_a)
            .map(|(r, h)| (r.to_slice().unwrap(), *h))
            .chain(
                group
                    .xb
                    .rows()
                    .into_iter()
                    .zip(&h_b)
                    .map(|(r, h)| (r.to_slice().unwrap(), *h)),
            )
            .collect();
        for (idx1, (p1, h1)) in all_points.iter().enumerate() {
            for (p2, h2) in all_points.iter().skip(idx1 + 1) {
                let bound = dist(p1, p2) + 1e-9;
                if (h1 - h2).abs() > bound {
                    return Err(Error::DualCheckFailed(format!(
                        "|h| gap {:.12} exceeds distance {:.12} at condition {:?}",
                        (h1 - h2).abs(),
                        bound,
                        group.key
                    )));
                }
            }
        }

        let ea: f64 = group
            .a_indices
            .iter()
            .zip(&h_a)
            .map(|(&i, h)| a.weights()[i] / group.mass * h)
            .sum();
        let eb: f64 = group
            .b_indices
            .iter()
            .zip(&h_b)
            .map(|(&j, h)| b.weights()[j] / group.mass * h)
            .sum();
        dual += group.mass * (ea - eb);

        potentials.push(GroupPotential {
            key: group.key.clone(),
            h_a,
            h_b,
        });
    }

    if (primal - dual).abs() > 1e-8 {
        return Err(Error::DualCheckFailed(format!(
            "duality gap {:.3e} exceeds 1e-8",
            (primal - dual).abs()
        )));
    }
    Ok(DualCheck {
        primal,
        dual,
        potentials,
    })
}

/// Upper bound on product-measure support sizes in [`independence_check`].
pub const PRODUCT_SIZE_CAP: usize = 2500;

/// Verifies the independence degeneracy: when `Y` is independent of both
/// values, the joint, conditional, and marginal distances coincide.
///
/// Builds the product measures `P_Y ⊗ P_X` and `P_Y ⊗ P_Z` explicitly (every
/// condition paired with every value, product weights) and returns
/// `(w_joint, w_cond, w_marg)`, which agree within 1e-9.
pub fn independence_check(
    xs: ArrayView2<f64>,
    x_weights: ArrayView1<f64>,
    zs: ArrayView2<f64>,
    z_weights: ArrayView1<f64>,
    ys: ArrayView2<f64>,
    y_weights: ArrayView1<f64>,
    p: u32,
) -> Result<(f64, f64, f64)> {
    let spec = CostSpec::euclidean(p)?;
    let ny = ys.nrows();
    if ny * xs.nrows() > PRODUCT_SIZE_CAP || ny * zs.nrows() > PRODUCT_SIZE_CAP {
        return Err(Error::InvalidConfig(format!(
            "product support exceeds {PRODUCT_SIZE_CAP} atoms"
        )));
    }

    let product = |vals: ArrayView2<f64>, val_w: ArrayView1<f64>| -> Result<EmpiricalJoint> {
        let n = ny * vals.nrows();
        let mut ys_out = Array2::zeros((n, ys.ncols()));
        let mut xs_out = Array2::zeros((n, vals.ncols()));
        let mut w_out = Array1::zeros(n);
        let mut r = 0;
        for yi in 0..ny {
            for vi in 0..vals.nrows() {
                ys_out.row_mut(r).assign(&ys.row(yi));
                xs_out.row_mut(r).assign(&vals.row(vi));
                w_out[r] = y_weights[yi] * val_w[vi];
                r += 1;
            }
        }
        EmpiricalJoint::new(ys_out, xs_out, w_out)
    };

    let pa = product(xs, x_weights)?;
    let pb = product(zs, z_weights)?;

    let root = |value_p: f64| -> f64 {
        match p {
            1 => value_p,
            _ => value_p.sqrt(),
        }
    };

    let joint_cost = cost_matrix(&pa, &pb, &spec)?;
    let (_, joint_p) = solve_exact(joint_cost.view(), pa.weights(), pb.weights())?;
    let w_joint = root(joint_p);

    let (w_cond, _) = conditional_wasserstein(&pa, &pb, &spec, 0.0)?;

    let ma = EmpiricalJoint::new(
        Array2::zeros((xs.nrows(), 0)),
        xs.to_owned(),
        x_weights.to_owned(),
    )?;
    let mb = EmpiricalJoint::new(
        Array2::zeros((zs.nrows(), 0)),
        zs.to_owned(),
        z_weights.to_owned(),
    )?;
    let marg_cost = cost_matrix(&ma, &mb, &spec)?;
    let (_, marg_p) = solve_exact(marg_cost.view(), ma.weights(), mb.weights())?;
    let w_marg = root(marg_p);

    Ok((w_joint, w_cond, w_marg))
}

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

fn estimate(samples: &[f64]) -> McEstimate {
    McEstimate {
        mean: mean(samples),
        stderr: sample_std(samples) / (samples.len() as f64).sqrt(),
    }
}

/// Report of the diagonal-coupling expectation comparison.
#[derive(Debug, Clone)]
pub struct DiagonalMcReport {
    /// Expected quadratic cost of the diagonal plan.
    pub diagonal_cost: McEstimate,
    /// Expected quadratic cost of each candidate plan.
    pub plan_costs: Vec<McEstimate>,
    /// Paired differences `c(plan) - c(diagonal)` (common random numbers).
    pub gaps: Vec<McEstimate>,
    /// `Σ_{i≠j} π_ij` per plan, the factor multiplying `E‖y - ȳ‖²`.
    pub offdiag_masses: Vec<f64>,
    /// Paired residuals `gap - offdiag_mass · Ê‖y - ȳ‖²` per plan.
    pub identity_residuals: Vec<McEstimate>,
    /// True when the sampler produced a single condition value throughout.
    pub constant_y: bool,
}

/// Monte Carlo comparison of the diagonal coupling against candidate plans
/// under quadratic cost on `(y, x)` pairs.
///
/// Each trial draws `k` triples `(y_i, x_i, z_i)` — `x` and `z` must be
/// sampled independently of each other — and evaluates
/// `c(π) = Σ_ij π_ij (‖y_i - y_j‖² + ‖x_i - z_j‖²)` for every plan with
/// common random numbers. Plans are `k×k` matrices with all row and column
/// sums equal to `1/k`.
///
/// When the condition is non-constant, every plan with off-diagonal mass must
/// cost strictly more than the diagonal (margin 2 standard errors), and the
/// paired gap must match `Σ_{i≠j} π_ij · Ê‖y - ȳ‖²` within 3 standard errors
/// of the residual; violations are errors. A constant-condition sampler is
/// flagged in the report and the gap is instead checked to vanish.
pub fn diagonal_expectation_mc<F>(
    mut sampler: F,
    k: usize,
    plans: &[Array2<f64>],
    trials: usize,
    rng: &mut Rng,
) -> Result<DiagonalMcReport>
where
    F: FnMut(&mut Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>),
{
    if k < 2 {
        return Err(Error::InvalidConfig("need k >= 2 particles".into()));
    }
    if trials < 2 {
        return Err(Error::InvalidConfig("need at least 2 trials".into()));
    }
    let unit = 1.0 / k as f64;
    for (idx, plan) in plans.iter().enumerate() {
        if plan.dim() != (k, k) {
            return Err(Error::ShapeMismatch(format!(
                "plan {idx} has shape {:?}, expected {k}x{k}",
                plan.dim()
            )));
        }
        Coupling::new(
            plan.clone(),
            Array1::from_elem(k, unit),
            Array1::from_elem(k, unit),
        )?;
    }

    let offdiag_masses: Vec<f64> = plans
        .iter()
        .map(|plan| {
            let mut acc = 0.0;
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        acc += plan[[i, j]];
                    }
                }
            }
            acc
        })
        .collect();

    let mut diag_samples = Vec::with_capacity(trials);
    let mut plan_samples: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); plans.len()];
    let mut gap_samples: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); plans.len()];
    let mut residual_samples: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); plans.len()];
    let mut constant_y = true;
    let mut first_y: Option<Vec<f64>> = None;

    for _ in 0..trials {
        let triples: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> =
            (0..k).map(|_| sampler(rng)).collect();
        for (y, _, _) in &triples {
            match &first_y {
                None => first_y = Some(y.clone()),
                Some(f) => {
                    if constant_y && y.iter().zip(f).any(|(a, b)| a.to_bits() != b.to_bits()) {
                        constant_y = false;
                    }
                }
            }
        }

        // Pairwise pieces, shared by all plans in this trial.
        let mut ycost = Array2::zeros((k, k));
        let mut xcost = Array2::zeros((k, k));
        for i in 0..k {
            for j in 0..k {
                ycost[[i, j]] = sq_dist(&triples[i].0, &triples[j].0);
                xcost[[i, j]] = sq_dist(&triples[i].1, &triples[j].2);
            }
        }

        let diag_cost: f64 = (0..k).map(|i| unit * xcost[[i, i]]).sum();
        diag_samples.push(diag_cost);

        // Unbiased within-trial estimate of E‖y - ȳ‖² over independent pairs.
        let mut m2 = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    m2 += ycost[[i, j]];
                }
            }
        }
        m2 /= (k * (k - 1)) as f64;

        for (idx, plan) in plans.iter().enumerate() {
            let mut cost = 0.0;
            for i in 0..k {
                for j in 0..k {
                    let mass = plan[[i, j]];
                    if mass != 0.0 {
                        cost += mass * (ycost[[i, j]] + xcost[[i, j]]);
                    }
                }
            }
            plan_samples[idx].push(cost);
            let gap = cost - diag_cost;
            gap_samples[idx].push(gap);
            residual_samples[idx].push(gap - offdiag_masses[idx] * m2);
        }
    }

    let report = DiagonalMcReport {
        diagonal_cost: estimate(&diag_samples),
        plan_costs: plan_samples.iter().map(|s| estimate(s)).collect(),
        gaps: gap_samples.iter().map(|s| estimate(s)).collect(),
        offdiag_masses,
        identity_residuals: residual_samples.iter().map(|s| estimate(s)).collect(),
        constant_y,
    };

    for (idx, gap) in report.gaps.iter().enumerate() {
        if report.constant_y {
            if gap.mean.abs() > 2.0 * gap.stderr.max(f64::EPSILON) {
                return Err(Error::McCheckFailed(format!(
                    "constant condition but plan {idx} gap {:.6} ± {:.6} is nonzero",
                    gap.mean, gap.stderr
                )));
            }
            continue;
        }
        if report.offdiag_masses[idx] > 0.0 && gap.mean <= 2.0 * gap.stderr {
            return Err(Error::McCheckFailed(format!(
                "diagonal not dominant: plan {idx} gap {:.6} ± {:.6}",
                gap.mean, gap.stderr
            )));
        }
        let res = &report.identity_residuals[idx];
        if res.mean.abs() > 3.0 * res.stderr.max(f64::EPSILON) {
            return Err(Error::McCheckFailed(format!(
                "gap identity violated for plan {idx}: residual {:.6} ± {:.6}",
                res.mean, res.stderr
            )));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn paired(ys: Array2<f64>, xs: Array2<f64>, zs: Array2<f64>) -> (EmpiricalJoint, EmpiricalJoint) {
        (
            EmpiricalJoint::uniform(ys.clone(), xs).unwrap(),
            EmpiricalJoint::uniform(ys, zs).unwrap(),
        )
    }

    fn counterexample_measures(n: f64) -> (EmpiricalJoint, EmpiricalJoint) {
        paired(
            array![[0.0], [1.0]],
            array![[0.0], [n]],
            array![[n], [0.0]],
        )
    }

    #[test]
    fn paired_data_yields_one_group_per_condition() {
        let (a, b) = paired(
            array![[0.0], [1.0], [2.0]],
            array![[0.0], [0.0], [0.0]],
            array![[1.0], [1.0], [1.0]],
        );
        let groups = group_by_condition(&a, &b, 0.0).unwrap();
        assert_eq!(groups.len(), 3);
        for g in 0..3 {
            assert_eq!(groups.a_indices(g).len(), 1);
            assert_eq!(groups.b_indices(g).len(), 1);
            assert_abs_diff_eq!(groups.mass(g), 1.0 / 3.0, epsilon = 1e-15);
        }
        // Sorted by key.
        assert_eq!(groups.key(0), &[0.0]);
        assert_eq!(groups.key(2), &[2.0]);
    }

    #[test]
    fn counterexample_groups_have_half_mass() {
        let (a, b) = counterexample_measures(5.0);
        let groups = group_by_condition(&a, &b, 0.0).unwrap();
        assert_eq!(groups.len(), 2);
        assert_abs_diff_eq!(groups.mass(0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(groups.mass(1), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn missing_condition_is_infeasible() {
        let a = EmpiricalJoint::uniform(array![[0.0], [1.0]], array![[0.0], [0.0]]).unwrap();
        let b = EmpiricalJoint::uniform(array![[0.0], [2.0]], array![[0.0], [0.0]]).unwrap();
        assert!(matches!(
            group_by_condition(&a, &b, 0.0),
            Err(Error::InfeasibleRestrictedCoupling(_))
        ));
    }

    #[test]
    fn tolerance_merges_nearby_conditions() {
        let a = EmpiricalJoint::uniform(array![[0.0], [1e-7]], array![[0.0], [1.0]]).unwrap();
        let b = EmpiricalJoint::uniform(array![[5e-8], [1.0e-7]], array![[0.0], [1.0]]).unwrap();
        assert!(group_by_condition(&a, &b, 0.0).is_err());
        let groups = group_by_condition(&a, &b, 1e-6).unwrap();
        assert_eq!(groups.len(), 1);
        assert_abs_diff_eq!(groups.mass(0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_measures_have_zero_distance_and_identity_plans() {
        let m = EmpiricalJoint::uniform(
            array![[0.0], [0.0], [1.0]],
            array![[0.3, 0.5], [-0.2, 0.1], [0.9, -0.4]],
        )
        .unwrap();
        let spec = CostSpec::euclidean(2).unwrap();
        let (value, plan) = conditional_wasserstein(&m, &m, &spec, 0.0).unwrap();
        assert_eq!(value, 0.0);
        for group in &plan.groups {
            let local = group.coupling.matrix();
            let k = local.nrows();
            for i in 0..k {
                assert_abs_diff_eq!(local[[i, i]], 1.0 / k as f64, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn counterexample_values() {
        for n in [1.0, 5.0, 100.0] {
            let (joint, cond) = counterexample(n).unwrap();
            assert_abs_diff_eq!(joint, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(cond, n, epsilon = 1e-12);
        }
    }

    #[test]
    fn distinct_conditions_reduce_to_paired_distances() {
        let mut rng = Rng::from_seed(77);
        let n = 6;
        let ys = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let xs = Array2::from_shape_fn((n, 3), |_| rng.normal());
        let zs = Array2::from_shape_fn((n, 3), |_| rng.normal());
        let (a, b) = paired(ys, xs.clone(), zs.clone());
        let spec = CostSpec::euclidean(2).unwrap();
        let (value, _) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        let direct: f64 = (0..n)
            .map(|i| {
                sq_dist(
                    xs.row(i).as_slice().unwrap(),
                    zs.row(i).as_slice().unwrap(),
                ) / n as f64
            })
            .sum();
        assert_abs_diff_eq!(value * value, direct, epsilon = 1e-12);
    }

    #[test]
    fn brute_force_agrees_with_solver() {
        let mut rng = Rng::from_seed(13);
        for trial in 0..10 {
            // Three groups of sizes 2, 3, 1 with shared conditions.
            let sizes = [2usize, 3, 1];
            let n: usize = sizes.iter().sum();
            let mut yrows = Vec::new();
            for (g, &s) in sizes.iter().enumerate() {
                for _ in 0..s {
                    yrows.push(g as f64);
                }
            }
            let ys = Array2::from_shape_vec((n, 1), yrows).unwrap();
            let xs = Array2::from_shape_fn((n, 2), |_| rng.uniform_in(-2.0, 2.0));
            let zs = Array2::from_shape_fn((n, 2), |_| rng.uniform_in(-2.0, 2.0));
            let (a, b) = paired(ys, xs, zs);
            for p in [1, 2] {
                let spec = CostSpec::euclidean(p).unwrap();
                let (value, _) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
                let oracle = restricted_brute_force(&a, &b, &spec, 0.0).unwrap();
                let value_p = if p == 1 { value } else { value * value };
                assert!(
                    (value_p - oracle).abs() <= 1e-10,
                    "trial {trial} p {p}: {value_p} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn brute_force_single_group_is_assignment_oracle() {
        let mut rng = Rng::from_seed(2);
        let ys = Array2::zeros((4, 1));
        let xs = Array2::from_shape_fn((4, 2), |_| rng.normal());
        let zs = Array2::from_shape_fn((4, 2), |_| rng.normal());
        let (a, b) = paired(ys, xs.clone(), zs.clone());
        let spec = CostSpec::euclidean(1).unwrap();
        let value = restricted_brute_force(&a, &b, &spec, 0.0).unwrap();
        let cost = Array2::from_shape_fn((4, 4), |(i, j)| {
            dist(xs.row(i).as_slice().unwrap(), zs.row(j).as_slice().unwrap())
        });
        assert_abs_diff_eq!(
            value,
            brute_force_oracle(cost.view()).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn counterexample_brute_force_value() {
        let (a, b) = counterexample_measures(5.0);
        let spec = CostSpec::euclidean(1).unwrap();
        assert_abs_diff_eq!(
            restricted_brute_force(&a, &b, &spec, 0.0).unwrap(),
            5.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn projection_round_trip_single_atom() {
        let (a, b) = paired(array![[0.5]], array![[1.0, 2.0]], array![[3.0, 4.0]]);
        let spec = CostSpec::euclidean(2).unwrap();
        let (_, plan) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        let projected = plan.project();
        assert_eq!(projected.atoms.len(), 1);
        let lifted = adm_lift(&projected, 2).unwrap();
        assert!(projected.measure_eq(&lifted.project(), 1e-15));
        assert_abs_diff_eq!(
            lifted.value_p_total(),
            plan.value_p_total(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn projection_round_trip_random_plan_and_cost_identity() {
        let mut rng = Rng::from_seed(101);
        let sizes = [3usize, 2, 4];
        let n: usize = sizes.iter().sum();
        let mut yrows = Vec::new();
        for (g, &s) in sizes.iter().enumerate() {
            for _ in 0..s {
                yrows.push(0.25 * g as f64);
            }
        }
        let ys = Array2::from_shape_vec((n, 1), yrows).unwrap();
        let xs = Array2::from_shape_fn((n, 2), |_| rng.normal());
        let zs = Array2::from_shape_fn((n, 2), |_| rng.normal());
        let (a, b) = paired(ys, xs, zs);
        for p in [1, 2] {
            let spec = CostSpec::euclidean(p).unwrap();
            let (_, plan) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
            let projected = plan.project();
            // Cost identity: the x-cost of the projection equals the plan's
            // glued objective.
            assert_abs_diff_eq!(
                projected.x_cost(p),
                plan.value_p_total(),
                epsilon = 1e-12
            );
            let lifted = adm_lift(&projected, p).unwrap();
            assert!(projected.measure_eq(&lifted.project(), 1e-12));
            assert_abs_diff_eq!(
                lifted.value_p_total(),
                plan.value_p_total(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn counterexample_projection_cost() {
        let n = 5.0;
        let (a, b) = counterexample_measures(n);
        let spec = CostSpec::euclidean(1).unwrap();
        let (_, plan) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        assert_abs_diff_eq!(plan.project().x_cost(1), n, epsilon = 1e-12);
    }

    #[test]
    fn glued_plan_coupling_is_condition_diagonal() {
        let (a, b) = counterexample_measures(3.0);
        let spec = CostSpec::euclidean(1).unwrap();
        let (_, plan) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
        let coupling = plan.assemble_coupling(&a, &b).unwrap();
        let (mass, ycost) = diagonal_diagnostic(&coupling, a.ys(), b.ys(), 1);
        assert_eq!(mass, 0.0);
        assert_eq!(ycost, 0.0);
    }

    #[test]
    fn joint_plan_on_counterexample_moves_all_mass_across() {
        let (a, b) = counterexample_measures(5.0);
        let spec = CostSpec::euclidean(1).unwrap();
        let cost = cost_matrix(&a, &b, &spec).unwrap();
        let (coupling, value) = solve_exact(cost.view(), a.weights(), b.weights()).unwrap();
        assert_abs_diff_eq!(value, 1.0, epsilon = 1e-12);
        let (mass, ycost) = diagonal_diagnostic(&coupling, a.ys(), b.ys(), 1);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ycost, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dual_check_identical_measures() {
        let m = EmpiricalJoint::uniform(array![[0.0], [1.0]], array![[0.5], [0.25]]).unwrap();
        let check = dual_check(&m, &m, 0.0).unwrap();
        assert_eq!(check.primal, 0.0);
        assert_abs_diff_eq!(check.dual, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dual_check_counterexample() {
        let n = 5.0;
        let (a, b) = counterexample_measures(n);
        let check = dual_check(&a, &b, 0.0).unwrap();
        assert_abs_diff_eq!(check.primal, n, epsilon = 1e-12);
        assert_abs_diff_eq!(check.dual, n, epsilon = 1e-12);
    }

    #[test]
    fn dual_check_random_groups() {
        let mut rng = Rng::from_seed(555);
        for trial in 0..5 {
            let sizes = [2usize, 4, 3, 2];
            let n: usize = sizes.iter().sum();
            let mut yrows = Vec::new();
            for (g, &s) in sizes.iter().enumerate() {
                for _ in 0..s {
                    yrows.push(g as f64 * 0.5 - 1.0);
                }
            }
            let ys = Array2::from_shape_vec((n, 1), yrows).unwrap();
            let xs = Array2::from_shape_fn((n, 3), |_| rng.uniform_in(-1.0, 1.0));
            let zs = Array2::from_shape_fn((n, 3), |_| rng.uniform_in(-1.0, 1.0));
            let (a, b) = paired(ys, xs, zs);
            let check = dual_check(&a, &b, 0.0).unwrap();
            assert!(
                (check.primal - check.dual).abs() <= 1e-8,
                "trial {trial}: primal {} dual {}",
                check.primal,
                check.dual
            );
        }
    }

    #[test]
    fn independence_triple_equality() {
        let mut rng = Rng::from_seed(31);
        for p in [1, 2] {
            let xs = Array2::from_shape_fn((3, 2), |_| rng.normal());
            let zs = Array2::from_shape_fn((3, 2), |_| rng.normal());
            let ys = Array2::from_shape_fn((3, 1), |_| rng.normal());
            let wx = Array1::from_elem(3, 1.0 / 3.0);
            let (wj, wc, wm) = independence_check(
                xs.view(),
                wx.view(),
                zs.view(),
                wx.view(),
                ys.view(),
                wx.view(),
                p,
            )
            .unwrap();
            assert_abs_diff_eq!(wj, wm, epsilon = 1e-9);
            assert_abs_diff_eq!(wc, wm, epsilon = 1e-9);
        }
    }

    #[test]
    fn independence_identical_values_all_zero() {
        let xs = array![[0.0], [1.0]];
        let ys = array![[0.5], [1.5]];
        let w = array![0.5, 0.5];
        let (wj, wc, wm) = independence_check(
            xs.view(),
            w.view(),
            xs.view(),
            w.view(),
            ys.view(),
            w.view(),
            2,
        )
        .unwrap();
        assert_eq!(wj, 0.0);
        assert_eq!(wc, 0.0);
        assert_eq!(wm, 0.0);
    }

    #[test]
    fn independence_single_condition_is_marginal() {
        let mut rng = Rng::from_seed(4);
        let xs = Array2::from_shape_fn((4, 2), |_| rng.normal());
        let zs = Array2::from_shape_fn((4, 2), |_| rng.normal());
        let ys = array![[0.7]];
        let w4 = Array1::from_elem(4, 0.25);
        let w1 = array![1.0];
        let (wj, wc, wm) = independence_check(
            xs.view(),
            w4.view(),
            zs.view(),
            w4.view(),
            ys.view(),
            w1.view(),
            2,
        )
        .unwrap();
        assert_abs_diff_eq!(wj, wm, epsilon = 1e-9);
        assert_abs_diff_eq!(wc, wm, epsilon = 1e-9);
    }

    #[test]
    fn conditional_dominates_joint_distance() {
        let mut rng = Rng::from_seed(888);
        for _ in 0..10 {
            let n = 6;
            let ys = Array2::from_shape_fn((n, 1), |(i, _)| (i % 3) as f64);
            let xs = Array2::from_shape_fn((n, 2), |_| rng.normal());
            let zs = Array2::from_shape_fn((n, 2), |_| rng.normal());
            let (a, b) = paired(ys, xs, zs);
            let spec = CostSpec::euclidean(1).unwrap();
            let cost = cost_matrix(&a, &b, &spec).unwrap();
            let (_, joint) = solve_exact(cost.view(), a.weights(), b.weights()).unwrap();
            let (cond, _) = conditional_wasserstein(&a, &b, &spec, 0.0).unwrap();
            assert!(cond >= joint - 1e-12, "cond {cond} < joint {joint}");
        }
    }

    fn transposition_plan(k: usize) -> Array2<f64> {
        let unit = 1.0 / k as f64;
        let mut plan = Array2::zeros((k, k));
        for i in 2..k {
            plan[[i, i]] = unit;
        }
        plan[[0, 1]] = unit;
        plan[[1, 0]] = unit;
        plan
    }

    #[test]
    fn rademacher_transposition_gap_matches_closed_form() {
        // y = ±1, so E‖y - ȳ‖² = 2 and the transposition's predicted gap is
        // (2/k) · 2 = 4/k.
        let k = 10;
        let mut rng = Rng::from_seed(2024);
        let report = diagonal_expectation_mc(
            |rng: &mut Rng| {
                let y = vec![rng.rademacher()];
                let x = vec![rng.normal()];
                let z = vec![rng.normal()];
                (y, x, z)
            },
            k,
            &[transposition_plan(k)],
            4000,
            &mut rng,
        )
        .unwrap();
        assert!(!report.constant_y);
        let gap = &report.gaps[0];
        let predicted = 4.0 / k as f64;
        assert!(
            (gap.mean - predicted).abs() <= 3.0 * gap.stderr,
            "gap {} ± {} vs predicted {predicted}",
            gap.mean,
            gap.stderr
        );
    }

    #[test]
    fn constant_condition_is_flagged_with_zero_gap() {
        let k = 6;
        let mut rng = Rng::from_seed(99);
        let report = diagonal_expectation_mc(
            |rng: &mut Rng| (vec![1.5], vec![rng.normal()], vec![rng.normal()]),
            k,
            &[transposition_plan(k)],
            2000,
            &mut rng,
        )
        .unwrap();
        assert!(report.constant_y);
        let gap = &report.gaps[0];
        assert!(gap.mean.abs() <= 2.0 * gap.stderr);
    }

    #[test]
    fn mc_rejects_bad_plan_shape() {
        let mut rng = Rng::from_seed(1);
        let bad = Array2::zeros((3, 4));
        assert!(diagonal_expectation_mc(
            |rng: &mut Rng| (vec![rng.normal()], vec![0.0], vec![0.0]),
            3,
            &[bad],
            10,
            &mut rng,
        )
        .is_err());
    }
}
