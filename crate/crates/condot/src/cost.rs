//! Ground-cost construction on joint points `(y, x)`.
//!
//! Two combine rules are supported. `EuclideanJoint` treats `(y, x)` as one
//! concatenated vector and costs `‖(y1,x1)-(y2,x2)‖^p`. `BetaSum` splits the
//! two blocks and costs `‖x1-x2‖^p + beta · ‖y1-y2‖^p`, the weighted metric
//! that makes mass movement in the `y` direction expensive as `beta` grows.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measures::EmpiricalJoint;
use crate::par;
use crate::vecmath::{dist, sq_dist};

/// How the `y` and `x` blocks combine into one ground cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    /// `‖(y1,x1)-(y2,x2)‖^p` on the concatenated vector; ignores beta.
    EuclideanJoint,
    /// `‖x1-x2‖^p + beta·‖y1-y2‖^p`.
    BetaSum,
}

/// Ground cost of order `p` (1 or 2) with an optional `y` penalty weight.
#[derive(Debug, Clone, Copy)]
pub struct CostSpec {
    p: u32,
    beta: f64,
    combine: Combine,
}

impl CostSpec {
    pub fn new(p: u32, beta: f64, combine: Combine) -> Result<Self> {
        if p != 1 && p != 2 {
            return Err(Error::InvalidConfig(format!("order p must be 1 or 2, got {p}")));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "beta must be finite and nonnegative, got {beta}"
            )));
        }
        Ok(CostSpec { p, beta, combine })
    }

    /// Plain `‖(y1,x1)-(y2,x2)‖^p`.
    pub fn euclidean(p: u32) -> Result<Self> {
        Self::new(p, 0.0, Combine::EuclideanJoint)
    }

    /// `‖x1-x2‖^p + beta·‖y1-y2‖^p`.
    pub fn beta_sum(p: u32, beta: f64) -> Result<Self> {
        Self::new(p, beta, Combine::BetaSum)
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn combine(&self) -> Combine {
        self.combine
    }

    /// Cost between two joint points given as `(y, x)` slices.
    pub fn pair_cost(&self, ya: &[f64], xa: &[f64], yb: &[f64], xb: &[f64]) -> f64 {
        match (self.combine, self.p) {
            (Combine::EuclideanJoint, 1) => (sq_dist(ya, yb) + sq_dist(xa, xb)).sqrt(),
            (Combine::EuclideanJoint, 2) => sq_dist(ya, yb) + sq_dist(xa, xb),
            (Combine::BetaSum, 1) => dist(xa, xb) + self.beta * dist(ya, yb),
            (Combine::BetaSum, 2) => sq_dist(xa, xb) + self.beta * sq_dist(ya, yb),
            _ => unreachable!("validated in constructor"),
        }
    }

    /// Cost restricted to the `x` block, as seen inside one condition group
    /// where `y1 = y2`. Identical for both combine rules.
    pub fn x_cost(&self, xa: &[f64], xb: &[f64]) -> f64 {
        match self.p {
            1 => dist(xa, xb),
            2 => sq_dist(xa, xb),
            _ => unreachable!("validated in constructor"),
        }
    }
}

/// Dense cost matrix between the supports of two joint measures.
///
/// Rows index `a`, columns index `b`. Row construction is data parallel;
/// every entry is computed independently, so the result is bitwise identical
/// with and without threads.
pub fn cost_matrix(a: &EmpiricalJoint, b: &EmpiricalJoint, spec: &CostSpec) -> Result<Array2<f64>> {
    if a.dy() != b.dy() || a.dx() != b.dx() {
        return Err(Error::ShapeMismatch(format!(
            "joint dims (dy={}, dx={}) vs (dy={}, dx={})",
            a.dy(),
            a.dx(),
            b.dy(),
            b.dx()
        )));
    }
    let n = a.n();
    let m = b.n();
    let rows = par::map_range(n, |i| {
        let ya = a.ys().row(i).to_owned();
        let xa = a.xs().row(i).to_owned();
        let mut row = Vec::with_capacity(m);
        for j in 0..m {
            row.push(spec.pair_cost(
                ya.as_slice().unwrap(),
                xa.as_slice().unwrap(),
                b.ys().row(j).as_slice().unwrap(),
                b.xs().row(j).as_slice().unwrap(),
            ));
        }
        row
    });
    let mut out = Array2::zeros((n, m));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_points_cost_zero_on_diagonal() {
        let m = EmpiricalJoint::uniform(array![[0.5], [1.5]], array![[2.0], [3.0]]).unwrap();
        let spec = CostSpec::euclidean(2).unwrap();
        let c = cost_matrix(&m, &m, &spec).unwrap();
        assert_eq!(c[[0, 0]], 0.0);
        assert_eq!(c[[1, 1]], 0.0);
        assert_eq!(c[[0, 1]], c[[1, 0]]);
    }

    #[test]
    fn joint_w1_costs_on_dirac_pairs() {
        // Points (y, x) in R^2: c((0,0),(1,0)) = 1 and c((0,0),(0,n)) = n.
        let n = 5.0;
        let spec = CostSpec::euclidean(1).unwrap();
        assert_eq!(spec.pair_cost(&[0.0], &[0.0], &[1.0], &[0.0]), 1.0);
        assert_eq!(spec.pair_cost(&[0.0], &[0.0], &[0.0], &[n]), n);
    }

    #[test]
    fn beta_sum_plugs_in() {
        let spec = CostSpec::beta_sum(2, 10.0).unwrap();
        // Unit moves in both blocks: 1 + 10*1 = 11.
        assert_eq!(spec.pair_cost(&[0.0], &[0.0], &[1.0], &[1.0]), 11.0);
    }

    #[test]
    fn invalid_order_and_beta_are_rejected() {
        assert!(CostSpec::euclidean(3).is_err());
        assert!(CostSpec::beta_sum(1, -1.0).is_err());
        assert!(CostSpec::beta_sum(2, f64::NAN).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = EmpiricalJoint::uniform(array![[0.0]], array![[0.0]]).unwrap();
        let b = EmpiricalJoint::uniform(array![[0.0, 0.0]], array![[0.0]]).unwrap();
        let spec = CostSpec::euclidean(1).unwrap();
        assert!(matches!(
            cost_matrix(&a, &b, &spec),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn x_cost_matches_pair_cost_with_equal_y() {
        let spec = CostSpec::beta_sum(2, 100.0).unwrap();
        let xa = [0.3, -0.7];
        let xb = [1.1, 0.4];
        let y = [0.9];
        assert_eq!(spec.x_cost(&xa, &xb), spec.pair_cost(&y, &xa, &y, &xb));
    }
}
