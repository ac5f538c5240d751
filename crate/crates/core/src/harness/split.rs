//! Train/test splits stratified by response slice.

use rand::seq::SliceRandom;

use crate::error::{invalid, Result};
use crate::krr::Dataset;
use crate::partition::SliceSpec;
use crate::rng::rng_from_seed;

/// Test rows drawn from a stratum of `count` observations.
pub fn stratum_test_size(count: usize, test_fraction: f64) -> usize {
    if count < 2 {
        return 0;
    }
    // the tiny relative bump keeps e.g. 0.1 * 30 from flooring to 2
    let t = (test_fraction * count as f64 * (1.0 + 1e-12)).floor() as usize;
    t.clamp(1, count)
}

/// Splits `data` into `(train, test)`.
///
/// From every response slice of `strata` with at least two members,
/// `floor(test_fraction * count)` rows (at least one) are drawn without
/// replacement into the test set. Both parts keep the original row order.
pub fn stratified_split(data: &Dataset, test_fraction: f64, strata: &SliceSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return invalid(format!("test fraction must lie in (0, 1), got {test_fraction}"));
    }
    let mut rng = rng_from_seed(seed);
    let mut in_test = vec![false; data.n()];
    for mut members in strata.members(data.y_slice()) {
        let t = stratum_test_size(members.len(), test_fraction);
        members.shuffle(&mut rng);
        for &i in &members[..t] {
            in_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..data.n()).partition(|&i| in_test[i]);
    if train.is_empty() {
        return invalid(format!("test fraction {test_fraction} leaves no training rows"));
    }
    if test.is_empty() {
        return invalid(format!("no stratum has two or more rows, so test fraction {test_fraction} selects nothing"));
    }
    Ok((data.subset(&train)?, data.subset(&test)?))
}
