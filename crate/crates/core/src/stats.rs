//! Small order-independent reductions shared by aggregation and estimators.

/// Mean and `n - 1`-divisor sample variance.
///
/// Values are reduced in sorted order, so the result is bit-identical for
/// any permutation of the input. Returns `None` for fewer than two values.
pub(crate) fn mean_and_sample_variance(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[n - 1] {
        return Some((sorted[0], 0.0));
    }
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let ss: f64 = sorted.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((mean, ss / (n - 1) as f64))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_values() {
        let (m, v) = mean_and_sample_variance(&[0.0, 1.0]).unwrap();
        assert_eq!(m, 0.5);
        assert_eq!(v, 0.5);
    }

    #[test]
    fn needs_two() {
        assert!(mean_and_sample_variance(&[1.0]).is_none());
        assert!(mean_and_sample_variance(&[]).is_none());
    }
}
