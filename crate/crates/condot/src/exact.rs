//! Exact discrete optimal transport.
//!
//! The solver reduces every instance to a square assignment problem. Uniform
//! equal-size instances go straight to a shortest-augmenting-path assignment
//! solver; general weights are first split into equal-mass particles over a
//! common denominator (capped at [`SPLIT_DENOMINATOR_CAP`]). Ties among
//! optimal assignments are broken toward the lexicographically smallest
//! permutation so that every run and platform returns the same coupling.
//!
//! Dual potentials are recovered from an optimal coupling by propagating the
//! equality `f_i + g_j = c_ij` over the support graph and aligning the free
//! additive constants of disconnected components through a difference
//! constraint system.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Largest common denominator tried when splitting non-uniform weights into
/// equal-mass particles.
pub const SPLIT_DENOMINATOR_CAP: u64 = 1000;

/// Tolerance on marginal sums of a coupling.
pub const MARGINAL_TOL: f64 = 1e-9;

/// Transport plan between two weighted supports.
///
/// Invariants: all entries nonnegative, row sums equal `row_weights` and
/// column sums equal `col_weights` within [`MARGINAL_TOL`].
#[derive(Debug, Clone)]
pub struct Coupling {
    matrix: Array2<f64>,
    row_weights: Array1<f64>,
    col_weights: Array1<f64>,
}

impl Coupling {
    pub fn new(
        matrix: Array2<f64>,
        row_weights: Array1<f64>,
        col_weights: Array1<f64>,
    ) -> Result<Self> {
        let c = Coupling {
            matrix,
            row_weights,
            col_weights,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn row_weights(&self) -> ArrayView1<'_, f64> {
        self.row_weights.view()
    }

    pub fn col_weights(&self) -> ArrayView1<'_, f64> {
        self.col_weights.view()
    }

    /// Checks nonnegativity and both marginal constraints.
    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.matrix.dim();
        if self.row_weights.len() != n || self.col_weights.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "coupling {n}x{m} with {} row weights, {} col weights",
                self.row_weights.len(),
                self.col_weights.len()
            )));
        }
        if self.matrix.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidWeights(
                "coupling entries must be finite and nonnegative".into(),
            ));
        }
        for i in 0..n {
            let sum: f64 = self.matrix.row(i).sum();
            if (sum - self.row_weights[i]).abs() > MARGINAL_TOL {
                return Err(Error::InvalidWeights(format!(
                    "row {i} sums to {sum:.12}, expected {:.12}",
                    self.row_weights[i]
                )));
            }
        }
        for j in 0..m {
            let sum: f64 = self.matrix.column(j).sum();
            if (sum - self.col_weights[j]).abs() > MARGINAL_TOL {
                return Err(Error::InvalidWeights(format!(
                    "column {j} sums to {sum:.12}, expected {:.12}",
                    self.col_weights[j]
                )));
            }
        }
        Ok(())
    }

    /// Transport cost `Σ_ij π_ij c_ij`, summed in fixed row-major order.
    pub fn transport_cost(&self, cost: ArrayView2<f64>) -> f64 {
        let (n, m) = self.matrix.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..m {
                let mass = self.matrix[[i, j]];
                if mass != 0.0 {
                    acc += mass * cost[[i, j]];
                }
            }
        }
        acc
    }

    /// Dense CSV dump with header `row,col,mass`, one line per matrix entry.
    pub fn to_csv(&self) -> String {
        let (n, m) = self.matrix.dim();
        let mut out = String::from("row,col,mass\n");
        for i in 0..n {
            for j in 0..m {
                out.push_str(&format!("{},{},{}\n", i, j, self.matrix[[i, j]]));
            }
        }
        out
    }
}

/// Kantorovich dual variables for a discrete transport problem.
///
/// Invariant: `f_i + g_j <= c_ij + 1e-9` for every pair.
#[derive(Debug, Clone)]
pub struct DualPotentials {
    pub f: Array1<f64>,
    pub g: Array1<f64>,
}

impl DualPotentials {
    /// Dual objective `f · row_weights + g · col_weights`.
    pub fn dual_value(&self, row_weights: ArrayView1<f64>, col_weights: ArrayView1<f64>) -> f64 {
        let mut acc = 0.0;
        for (fi, wi) in self.f.iter().zip(row_weights.iter()) {
            acc += fi * wi;
        }
        for (gj, wj) in self.g.iter().zip(col_weights.iter()) {
            acc += gj * wj;
        }
        acc
    }

    /// Largest feasibility violation `max_ij (f_i + g_j - c_ij)`.
    pub fn max_violation(&self, cost: ArrayView2<f64>) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, fi) in self.f.iter().enumerate() {
            for (j, gj) in self.g.iter().enumerate() {
                worst = worst.max(fi + gj - cost[[i, j]]);
            }
        }
        worst
    }
}

/// Shortest-augmenting-path assignment on a square cost matrix.
///
/// Returns the optimal row-to-column map together with dual variables
/// `(u, v)` satisfying `u_i + v_j <= c_ij` up to rounding, with equality on
/// assigned pairs.
fn jv_assignment(cost: &Array2<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.nrows();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col4row = vec![usize::MAX; n];
    let mut row4col = vec![usize::MAX; n];
    let mut path = vec![usize::MAX; n];
    let mut shortest = vec![0.0f64; n];
    let mut scanned_rows = vec![false; n];
    let mut scanned_cols = vec![false; n];
    let mut remaining = vec![0usize; n];

    for cur_row in 0..n {
        for j in 0..n {
            scanned_cols[j] = false;
            remaining[j] = n - j - 1;
            shortest[j] = f64::INFINITY;
        }
        scanned_rows.iter_mut().for_each(|s| *s = false);

        let mut num_remaining = n;
        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink;
        loop {
            scanned_rows[i] = true;
            let mut lowest = f64::INFINITY;
            let mut index = usize::MAX;
            for it in 0..num_remaining {
                let j = remaining[it];
                let r = min_val + cost[[i, j]] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == usize::MAX) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            debug_assert!(min_val.is_finite(), "augmenting path stalled");
            let j = remaining[index];
            scanned_cols[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
            if row4col[j] == usize::MAX {
                sink = j;
                break;
            }
            i = row4col[j];
        }

        u[cur_row] += min_val;
        for i2 in 0..n {
            if scanned_rows[i2] && i2 != cur_row {
                u[i2] += min_val - shortest[col4row[i2]];
            }
        }
        for j in 0..n {
            if scanned_cols[j] {
                v[j] -= min_val - shortest[j];
            }
        }

        let mut j = sink;
        loop {
            let i2 = path[j];
            row4col[j] = i2;
            std::mem::swap(&mut col4row[i2], &mut j);
            if i2 == cur_row {
                break;
            }
        }
    }

    (col4row, u, v)
}

/// Perfect-matching feasibility of the unfixed rows inside the tight graph,
/// used by the lexicographic tie-break. Kuhn's augmenting-path algorithm.
fn can_complete_matching(
    tight: &[Vec<bool>],
    rows: &[usize],
    col_taken: &[bool],
) -> bool {
    let n = tight.len();
    let mut match_col = vec![usize::MAX; n];

    fn try_row(
        r: usize,
        tight: &[Vec<bool>],
        col_taken: &[bool],
        visited: &mut [bool],
        match_col: &mut [usize],
    ) -> bool {
        for j in 0..tight.len() {
            if tight[r][j] && !col_taken[j] && !visited[j] {
                visited[j] = true;
                if match_col[j] == usize::MAX
                    || try_row(match_col[j], tight, col_taken, visited, match_col)
                {
                    match_col[j] = r;
                    return true;
                }
            }
        }
        false
    }

    for &r in rows {
        let mut visited = vec![false; n];
        if !try_row(r, tight, col_taken, &mut visited, &mut match_col) {
            return false;
        }
    }
    true
}

/// Replaces an optimal assignment by the lexicographically smallest optimal
/// one, using the dual variables to identify tight (optimal-support) edges.
///
/// Float ties are identified up to a tolerance scaled by the cost magnitude;
/// if the refined permutation's cost drifts from the solver's optimum (a sign
/// that near-ties were spuriously merged), the original assignment is kept.
fn lexicographic_refine(
    cost: &Array2<f64>,
    perm: Vec<usize>,
    u: &[f64],
    v: &[f64],
) -> Vec<usize> {
    let n = cost.nrows();
    let max_abs = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let tol = 1e-11 * (1.0 + max_abs);

    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| cost[[i, j]] - u[i] - v[j] <= tol).collect())
        .collect();

    let mut refined = vec![usize::MAX; n];
    let mut col_taken = vec![false; n];
    let mut jv_intact = true;
    for i in 0..n {
        let mut chosen = usize::MAX;
        for j in 0..n {
            if !tight[i][j] || col_taken[j] {
                continue;
            }
            if jv_intact && j == perm[i] {
                chosen = j;
                break;
            }
            col_taken[j] = true;
            let rest: Vec<usize> = (i + 1..n).collect();
            let ok = can_complete_matching(&tight, &rest, &col_taken);
            col_taken[j] = false;
            if ok {
                chosen = j;
                break;
            }
        }
        if chosen == usize::MAX {
            // Tight graph too sparse under this tolerance; keep the solver's
            // assignment.
            return perm;
        }
        jv_intact = jv_intact && chosen == perm[i];
        refined[i] = chosen;
        col_taken[chosen] = true;
    }

    let original: f64 = (0..n).map(|i| cost[[i, perm[i]]]).sum();
    let new: f64 = (0..n).map(|i| cost[[i, refined[i]]]).sum();
    if (new - original).abs() > 1e-9 * (1.0 + original.abs()) {
        return perm;
    }
    refined
}

fn check_cost_finite(cost: ArrayView2<f64>) -> Result<()> {
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    Ok(())
}

fn is_uniform(weights: ArrayView1<f64>, n: usize) -> bool {
    let target = 1.0 / n as f64;
    weights.iter().all(|w| (w - target).abs() <= 1e-12)
}

/// Finds the smallest denominator `D <= cap` such that every weight in both
/// margins is an integer multiple of `1/D`, with counts summing to `D`.
fn common_denominator(rows: ArrayView1<f64>, cols: ArrayView1<f64>, cap: u64) -> Option<u64> {
    // Total particle count for one margin at denominator d, if every weight
    // is an integer multiple of 1/d.
    fn count(weights: &ArrayView1<f64>, d: u64) -> Option<u64> {
        let df = d as f64;
        let mut sum = 0;
        for w in weights.iter() {
            let scaled = w * df;
            let k = scaled.round();
            if (scaled - k).abs() > 1e-6 || k < 0.0 {
                return None;
            }
            sum += k as u64;
        }
        Some(sum)
    }

    (1..=cap).find(|&d| count(&rows, d) == Some(d) && count(&cols, d) == Some(d))
}

/// Exact optimal transport between two weighted supports.
///
/// Equal-size uniform instances are solved as an assignment problem; other
/// weight vectors are split into equal-mass particles over a common
/// denominator (error if none exists up to [`SPLIT_DENOMINATOR_CAP`]).
/// Returns the optimal coupling with ties broken toward the
/// lexicographically smallest assignment, and the optimal value
/// `Σ π_ij c_ij`.
pub fn solve_exact(
    cost: ArrayView2<f64>,
    row_weights: ArrayView1<f64>,
    col_weights: ArrayView1<f64>,
) -> Result<(Coupling, f64)> {
    let (n, m) = cost.dim();
    if row_weights.len() != n || col_weights.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "cost {n}x{m} with {} row weights, {} col weights",
            row_weights.len(),
            col_weights.len()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::EmptyMeasure("transport between empty supports".into()));
    }
    check_cost_finite(cost)?;
    if row_weights.iter().chain(col_weights.iter()).any(|w| *w < 0.0) {
        return Err(Error::InvalidWeights("negative weight".into()));
    }
    let rsum: f64 = row_weights.sum();
    let csum: f64 = col_weights.sum();
    if (rsum - csum).abs() > MARGINAL_TOL {
        return Err(Error::InvalidWeights(format!(
            "marginal sums differ: {rsum:.12} vs {csum:.12}"
        )));
    }

    // Assignment fast path: equal-size uniform margins.
    if n == m && is_uniform(row_weights, n) && is_uniform(col_weights, n) {
        let owned = cost.to_owned();
        let (perm, u, v) = jv_assignment(&owned);
        let perm = lexicographic_refine(&owned, perm, &u, &v);
        let mut matrix = Array2::zeros((n, n));
        let mass = 1.0 / n as f64;
        for (i, &j) in perm.iter().enumerate() {
            matrix[[i, j]] = mass;
        }
        let coupling = Coupling::new(matrix, row_weights.to_owned(), col_weights.to_owned())?;
        let value = coupling.transport_cost(cost);
        return Ok((coupling, value));
    }

    // General weights: split into equal-mass particles.
    let d = common_denominator(row_weights, col_weights, SPLIT_DENOMINATOR_CAP).ok_or_else(
        || Error::IrrationalWeights {
            cap: SPLIT_DENOMINATOR_CAP,
            detail: format!("margins {:?} and {:?}", row_weights, col_weights),
        },
    )?;
    let df = d as f64;
    let mut row_of_particle = Vec::with_capacity(d as usize);
    for (i, w) in row_weights.iter().enumerate() {
        let k = (w * df).round() as usize;
        row_of_particle.extend(std::iter::repeat(i).take(k));
    }
    let mut col_of_particle = Vec::with_capacity(d as usize);
    for (j, w) in col_weights.iter().enumerate() {
        let k = (w * df).round() as usize;
        col_of_particle.extend(std::iter::repeat(j).take(k));
    }
    debug_assert_eq!(row_of_particle.len(), d as usize);
    debug_assert_eq!(col_of_particle.len(), d as usize);

    let split = Array2::from_shape_fn((d as usize, d as usize), |(si, sj)| {
        cost[[row_of_particle[si], col_of_particle[sj]]]
    });
    let (perm, u, v) = jv_assignment(&split);
    let perm = lexicographic_refine(&split, perm, &u, &v);

    let mut counts = Array2::<u64>::zeros((n, m));
    for (si, &sj) in perm.iter().enumerate() {
        counts[[row_of_particle[si], col_of_particle[sj]]] += 1;
    }
    let matrix = counts.mapv(|k| k as f64 / df);
    let coupling = Coupling::new(matrix, row_weights.to_owned(), col_weights.to_owned())?;
    let value = coupling.transport_cost(cost);
    Ok((coupling, value))
}

/// Minimum over all permutations of the mean assigned cost, `(1/n) Σ
/// c_{i,σ(i)}`. Only for square instances with `n <= 8`.
pub fn brute_force_oracle(cost: ArrayView2<f64>) -> Result<f64> {
    brute_force_assignment(cost).map(|(_, value)| value)
}

/// Brute-force optimal permutation (lexicographically smallest among optima)
/// and its mean assigned cost. Only for square instances with `n <= 8`.
pub fn brute_force_assignment(cost: ArrayView2<f64>) -> Result<(Vec<usize>, f64)> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::ShapeMismatch(format!("square matrix required, got {n}x{m}")));
    }
    if n == 0 || n > 8 {
        return Err(Error::InvalidConfig(format!(
            "brute force supports 1 <= n <= 8, got {n}"
        )));
    }
    check_cost_finite(cost)?;

    // Depth-first search in lexicographic order; strict improvement keeps the
    // first (and therefore smallest) permutation among ties.
    fn dfs(
        row: usize,
        acc: f64,
        cost: &ArrayView2<f64>,
        used: &mut [bool],
        current: &mut Vec<usize>,
        best: &mut (Vec<usize>, f64),
    ) {
        let n = cost.nrows();
        if row == n {
            if acc < best.1 {
                best.0 = current.clone();
                best.1 = acc;
            }
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                current.push(j);
                dfs(row + 1, acc + cost[[row, j]], cost, used, current, best);
                current.pop();
                used[j] = false;
            }
        }
    }

    let mut best = (Vec::new(), f64::INFINITY);
    let mut used = vec![false; n];
    let mut current = Vec::with_capacity(n);
    dfs(0, 0.0, &cost, &mut used, &mut current, &mut best);
    Ok((best.0, best.1 / n as f64))
}

/// Recovers feasible dual potentials from an optimal coupling.
///
/// The equality `f_i + g_j = c_ij` is propagated over the support graph of an
/// optimal plan; disconnected components keep one additive degree of freedom
/// each, fixed by solving the difference constraints
/// `t_a - t_b <= min_{i in a, j in b} (c_ij - f_i - g_j)` with Bellman-Ford.
/// The result satisfies `f_i + g_j <= c_ij` everywhere and its dual value
/// matches the primal within `1e-8`.
///
/// Errors with [`Error::NonOptimalCoupling`] if the input plan's cost exceeds
/// the optimum by more than `1e-6`.
pub fn dual_from_primal(cost: ArrayView2<f64>, coupling: &Coupling) -> Result<DualPotentials> {
    coupling.validate()?;
    let (n, m) = cost.dim();
    if coupling.matrix().dim() != (n, m) {
        return Err(Error::ShapeMismatch(format!(
            "coupling {:?} vs cost {n}x{m}",
            coupling.matrix().dim()
        )));
    }
    check_cost_finite(cost)?;

    let primal = coupling.transport_cost(cost);
    let (opt, optimum) = solve_exact(cost, coupling.row_weights(), coupling.col_weights())?;
    if primal - optimum > 1e-6 {
        return Err(Error::NonOptimalCoupling {
            found: primal,
            optimum,
            tol: 1e-6,
        });
    }

    // Support graph of the solver's optimal plan: rows 0..n, cols n..n+m.
    const SUPPORT_TOL: f64 = 1e-12;
    let support = |i: usize, j: usize| opt.matrix()[[i, j]] > SUPPORT_TOL;
    let positive_row: Vec<bool> = coupling.row_weights().iter().map(|w| *w > 0.0).collect();

    let mut f = vec![f64::NAN; n];
    let mut g = vec![f64::NAN; m];
    let mut comp_of_row = vec![usize::MAX; n];
    let mut comp_of_col = vec![usize::MAX; m];
    let mut num_comps = 0;

    for root in 0..n {
        if !positive_row[root] || comp_of_row[root] != usize::MAX {
            continue;
        }
        let comp = num_comps;
        num_comps += 1;
        f[root] = 0.0;
        comp_of_row[root] = comp;
        let mut queue = std::collections::VecDeque::from([(root, true)]);
        while let Some((node, is_row)) = queue.pop_front() {
            if is_row {
                for j in 0..m {
                    if support(node, j) && comp_of_col[j] == usize::MAX {
                        comp_of_col[j] = comp;
                        g[j] = cost[[node, j]] - f[node];
                        queue.push_back((j, false));
                    }
                }
            } else {
                for i in 0..n {
                    if support(i, node) && comp_of_row[i] == usize::MAX {
                        comp_of_row[i] = comp;
                        f[i] = cost[[i, node]] - g[node];
                        queue.push_back((i, true));
                    }
                }
            }
        }
    }

    // Align components: t_a - t_b <= slack(a, b).
    if num_comps > 1 {
        let mut slack = vec![vec![f64::INFINITY; num_comps]; num_comps];
        for i in 0..n {
            let a = comp_of_row[i];
            if a == usize::MAX {
                continue;
            }
            for j in 0..m {
                let b = comp_of_col[j];
                if b == usize::MAX || a == b {
                    continue;
                }
                let s = cost[[i, j]] - f[i] - g[j];
                if s < slack[a][b] {
                    slack[a][b] = s;
                }
            }
        }
        let mut t = vec![0.0; num_comps];
        for _ in 0..num_comps {
            let mut changed = false;
            for a in 0..num_comps {
                for b in 0..num_comps {
                    if slack[a][b].is_finite() && t[a] > t[b] + slack[a][b] {
                        t[a] = t[b] + slack[a][b];
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        // One extra sweep detects a negative cycle (cannot happen for a truly
        // optimal plan; guards against borderline inputs).
        for a in 0..num_comps {
            for b in 0..num_comps {
                if slack[a][b].is_finite() && t[a] > t[b] + slack[a][b] + 1e-12 {
                    return Err(Error::NonOptimalCoupling {
                        found: primal,
                        optimum,
                        tol: 1e-6,
                    });
                }
            }
        }
        for i in 0..n {
            if comp_of_row[i] != usize::MAX {
                f[i] += t[comp_of_row[i]];
            }
        }
        for j in 0..m {
            if comp_of_col[j] != usize::MAX {
                g[j] -= t[comp_of_col[j]];
            }
        }
    }

    // Zero-weight rows and columns sit outside the support graph; give them
    // the largest feasible value (it does not affect the dual objective).
    for i in 0..n {
        if f[i].is_nan() {
            let mut best = f64::INFINITY;
            for j in 0..m {
                if !g[j].is_nan() {
                    best = best.min(cost[[i, j]] - g[j]);
                }
            }
            f[i] = if best.is_finite() { best } else { 0.0 };
        }
    }
    for j in 0..m {
        if g[j].is_nan() {
            let mut best = f64::INFINITY;
            for i in 0..n {
                best = best.min(cost[[i, j]] - f[i]);
            }
            g[j] = if best.is_finite() { best } else { 0.0 };
        }
    }

    let mut potentials = DualPotentials {
        f: Array1::from_vec(f),
        g: Array1::from_vec(g),
    };

    // Remove any residual float infeasibility by a uniform shift of g; the
    // shift is at rounding scale, so the value identity below still holds.
    let viol = potentials.max_violation(cost);
    if viol > 0.0 {
        potentials.g.mapv_inplace(|x| x - viol);
    }

    let dual = potentials.dual_value(coupling.row_weights(), coupling.col_weights());
    if (dual - primal).abs() > 1e-8 {
        return Err(Error::NonOptimalCoupling {
            found: primal,
            optimum,
            tol: 1e-6,
        });
    }
    Ok(potentials)
}
