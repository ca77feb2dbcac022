//! Small dense vector helpers shared across solvers.

/// Squared Euclidean distance between two equal-length slices.
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (ai, bi) in a.iter().zip(b) {
        let d = ai - bi;
        acc += d * d;
    }
    acc
}

/// Euclidean distance between two equal-length slices.
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Supremum norm distance between two equal-length slices.
pub(crate) fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(ai, bi)| (ai - bi).abs())
        .fold(0.0, f64::max)
}

/// Mean of a slice. Zero for empty input.
pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator). Zero when fewer than two
/// samples.
pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances_agree_on_axis_pair() {
        let a = [0.0, 0.0];
        let b = [3.0, 4.0];
        assert_eq!(sq_dist(&a, &b), 25.0);
        assert_eq!(dist(&a, &b), 5.0);
        assert_eq!(inf_dist(&a, &b), 4.0);
    }

    #[test]
    fn std_of_constant_is_zero() {
        assert_eq!(sample_std(&[2.0, 2.0, 2.0]), 0.0);
    }
}
