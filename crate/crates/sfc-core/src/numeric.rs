//! Order-invariant float summation.

/// Sum after sorting by total order. Any permutation of `terms` yields the
/// bit-identical result, which is what makes featurization and encoder
/// aggregation exactly permutation-equivariant.
pub(crate) fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}
