//! Response slicing and node assignment plans.
//!
//! A classical plan deals a random permutation of the sample into `k`
//! contiguous blocks. An oversampling plan first cuts the response range
//! into `l` equally spaced slices, replicates every member of slice `j`
//! `floor(tau * |Y_1| / |Y_j|)` times (`Y_1` being the fullest slice),
//! shuffles each slice's multiset and deals it round-robin over the nodes,
//! then collapses repeated copies of the same observation inside a node.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from_seed;

/// How the number of response slices is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SlicingRule {
    Fixed(usize),
    Scott,
    Sturges,
    FreedmanDiaconis,
}

impl fmt::Display for SlicingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlicingRule::Fixed(l) => write!(f, "fixed:{l}"),
            SlicingRule::Scott => write!(f, "scott"),
            SlicingRule::Sturges => write!(f, "sturges"),
            SlicingRule::FreedmanDiaconis => write!(f, "fd"),
        }
    }
}

impl FromStr for SlicingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "scott" => Ok(SlicingRule::Scott),
            "sturges" => Ok(SlicingRule::Sturges),
            "fd" | "freedman_diaconis" | "freedman-diaconis" => Ok(SlicingRule::FreedmanDiaconis),
            _ => match s.strip_prefix("fixed:") {
                Some(l) => match l.parse::<usize>() {
                    Ok(l) if l >= 1 => Ok(SlicingRule::Fixed(l)),
                    _ => invalid(format!("fixed slice count must be a positive integer, got '{l}'")),
                },
                None => invalid(format!("unknown slicing rule '{s}' (expected fixed:L, scott, sturges or fd)")),
            },
        }
    }
}

impl From<SlicingRule> for String {
    fn from(rule: SlicingRule) -> String {
        rule.to_string()
    }
}

impl TryFrom<String> for SlicingRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

fn sample_sd(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn range_of(y: &[f64]) -> (f64, f64) {
    y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Number of slices `l` under `rule`, clamped to `[1, n]`.
///
/// Data-driven rules return 1 on a constant response.
pub fn slice_count(y: &[f64], rule: SlicingRule) -> Result<usize> {
    let n = y.len();
    if n == 0 {
        return invalid("cannot slice an empty response");
    }
    if y.iter().any(|v| !v.is_finite()) {
        return invalid("response contains non-finite values");
    }
    let (lo, hi) = range_of(y);
    let range = hi - lo;
    let nf = n as f64;
    let scott = || {
        let width = 3.49 * sample_sd(y) * nf.powf(-1.0 / 3.0);
        (range / width).ceil()
    };
    let raw = match rule {
        SlicingRule::Fixed(0) => return invalid("fixed slice count must be at least 1"),
        SlicingRule::Fixed(l) => return Ok(l),
        _ if n < 2 || range <= 0.0 => return Ok(1),
        SlicingRule::Sturges => nf.log2().ceil() + 1.0,
        SlicingRule::Scott => scott(),
        SlicingRule::FreedmanDiaconis => {
            let mut sorted = y.to_vec();
            sorted.sort_by(f64::total_cmp);
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            if iqr > 0.0 {
                (range / (2.0 * iqr * nf.powf(-1.0 / 3.0))).ceil()
            } else {
                scott()
            }
        }
    };
    Ok((raw as usize).clamp(1, n))
}

/// Equally spaced response slices with their occupancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    /// `l + 1` ascending edges from `min y` to `max y`. A constant response
    /// yields the single degenerate slice `[c, c]`.
    pub boundaries: Vec<f64>,
    pub rule: SlicingRule,
    pub counts: Vec<usize>,
}

impl SliceSpec {
    pub fn len(&self) -> usize {
        self.boundaries.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slice holding `v`: intervals are right-open except the last, which
    /// is closed. Values outside the range clamp to the end slices.
    pub fn slice_of(&self, v: f64) -> usize {
        let interior = &self.boundaries[1..self.boundaries.len() - 1];
        interior.partition_point(|&b| b <= v)
    }

    /// Row indices of `y` grouped by slice, ascending within each slice.
    pub fn members(&self, y: &[f64]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.len()];
        for (i, &v) in y.iter().enumerate() {
            out[self.slice_of(v)].push(i);
        }
        out
    }
}

/// Cuts `[min y, max y]` into `slice_count(y, rule)` equal slices.
pub fn make_slices(y: &[f64], rule: SlicingRule) -> Result<SliceSpec> {
    let l = slice_count(y, rule)?;
    let (lo, hi) = range_of(y);
    let boundaries = if hi > lo {
        let width = (hi - lo) / l as f64;
        let mut b: Vec<f64> = (0..l).map(|i| lo + width * i as f64).collect();
        b.push(hi);
        b
    } else {
        vec![lo, hi]
    };
    let mut spec = SliceSpec { boundaries, rule, counts: Vec::new() };
    spec.counts = spec.members(y).iter().map(Vec::len).collect();
    Ok(spec)
}

/// Total copies of each member of a slice holding `count_j` observations
/// when the fullest slice holds `count_max`: `max(1, floor(tau * count_max / count_j))`.
pub fn copy_count(count_max: usize, count_j: usize, tau: f64) -> Result<usize> {
    if count_j == 0 {
        return invalid("empty slices have nothing to copy");
    }
    if count_j > count_max {
        return invalid(format!("slice count {count_j} exceeds the largest slice count {count_max}"));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return invalid(format!("tau must lie in (0, 1], got {tau}"));
    }
    let ratio = tau * count_max as f64 / count_j as f64;
    // absorb representation error, e.g. (1/3) * 90 / 30 = 0.999...
    let copies = (ratio * (1.0 + 1e-12)).floor() as usize;
    Ok(copies.max(1))
}

/// Node subsamples as original-row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub k: usize,
    pub seed: u64,
    /// Sorted, distinct row indices per node.
    #[serde(rename = "nodes")]
    pub node_assignments: Vec<Vec<usize>>,
    /// Observations dealt to nodes before in-node de-duplication.
    pub pre_dedup_total: usize,
    /// Sum of node sizes after de-duplication.
    pub post_dedup_total: usize,
}

impl PartitionPlan {
    pub fn node_sizes(&self) -> Vec<usize> {
        self.node_assignments.iter().map(Vec::len).collect()
    }

    /// Checks the structural invariants against a sample of size `n`:
    /// in-range distinct indices per node, full coverage, and consistent
    /// totals.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.node_assignments.len() != self.k {
            return Err(Error::Plan(format!("plan lists {} nodes but k = {}", self.node_assignments.len(), self.k)));
        }
        let mut seen = vec![false; n];
        for (i, node) in self.node_assignments.iter().enumerate() {
            if node.is_empty() {
                return Err(Error::Plan(format!("node {i} is empty")));
            }
            if node.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Plan(format!("node {i} indices are not sorted and distinct")));
            }
            for &idx in node {
                if idx >= n {
                    return Err(Error::Plan(format!("node {i} references row {idx} of {n}")));
                }
                seen[idx] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Plan(format!("row {missing} is not assigned to any node")));
        }
        let post: usize = self.node_assignments.iter().map(Vec::len).sum();
        if post != self.post_dedup_total || post > self.pre_dedup_total {
            return Err(Error::Plan(format!(
                "inconsistent totals: post {} (recorded {}), pre {}",
                post, self.post_dedup_total, self.pre_dedup_total
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Random even split of `0..n` into `k` blocks, larger blocks first.
pub fn classical_plan(n: usize, k: usize, seed: u64) -> Result<PartitionPlan> {
    if k == 0 {
        return Err(Error::Plan("node count must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Plan(format!("{k} nodes requested for {n} observations")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let (base, extra) = (n / k, n % k);
    let mut node_assignments = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let mut node = perm[start..start + size].to_vec();
        node.sort_unstable();
        node_assignments.push(node);
        start += size;
    }
    Ok(PartitionPlan { k, seed, node_assignments, pre_dedup_total: n, post_dedup_total: n })
}

/// Oversampling plan over `y` with the given slices.
///
/// Nonempty slices are ranked by count (descending; ties by position) and
/// each slice's shuffled multiset is dealt round-robin. The dealing cursor
/// carries over from one slice to the next, so node loads before
/// de-duplication differ by at most one and no node is empty once
/// `k <= pre_dedup_total`. One RNG stream seeded by `seed` is consumed slice
/// by slice in rank order.
pub fn oversample_plan(y: &[f64], slices: &SliceSpec, tau: f64, k: usize, seed: u64) -> Result<PartitionPlan> {
    if k == 0 {
        return Err(Error::Plan("node count must be at least 1".into()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return invalid(format!("tau must lie in (0, 1], got {tau}"));
    }
    let members = slices.members(y);
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    if counts != slices.counts {
        return invalid("slice counts do not match the response");
    }
    let mut ranked: Vec<usize> = (0..members.len()).filter(|&j| !members[j].is_empty()).collect();
    ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let Some(&fullest) = ranked.first() else {
        return invalid("cannot plan an empty sample");
    };
    let count_max = counts[fullest];

    let copies: Vec<usize> = ranked
        .iter()
        .map(|&j| copy_count(count_max, counts[j], tau))
        .collect::<Result<_>>()?;
    let pre_dedup_total: usize = ranked.iter().zip(&copies).map(|(&j, c)| c * counts[j]).sum();
    if k > pre_dedup_total {
        return Err(Error::Plan(format!(
            "{k} nodes requested but oversampling yields only {pre_dedup_total} observations"
        )));
    }

    let mut rng = rng_from_seed(seed);
    let mut nodes: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut cursor = 0;
    for (&j, &c) in ranked.iter().zip(&copies) {
        let mut multiset: Vec<usize> = Vec::with_capacity(c * counts[j]);
        for _ in 0..c {
            multiset.extend_from_slice(&members[j]);
        }
        multiset.shuffle(&mut rng);
        for idx in multiset {
            nodes[cursor].push(idx);
            cursor = (cursor + 1) % k;
        }
    }
    for node in &mut nodes {
        node.sort_unstable();
        node.dedup();
    }
    let post_dedup_total = nodes.iter().map(Vec::len).sum();
    Ok(PartitionPlan { k, seed, node_assignments: nodes, pre_dedup_total, post_dedup_total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rule_parsing_roundtrip() {
        for rule in [SlicingRule::Fixed(7), SlicingRule::Scott, SlicingRule::Sturges, SlicingRule::FreedmanDiaconis] {
            assert_eq!(rule.to_string().parse::<SlicingRule>().unwrap(), rule);
        }
        assert!("fixed:0".parse::<SlicingRule>().is_err());
        assert!("doane".parse::<SlicingRule>().is_err());
    }

    #[test]
    fn slice_count_formulas() {
        assert_eq!(slice_count(&[0.0, 1.0], SlicingRule::Fixed(3)).unwrap(), 3);
        let y: Vec<f64> = (0..1024).map(|i| i as f64).collect();
        assert_eq!(slice_count(&y, SlicingRule::Sturges).unwrap(), 11);
        let y: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        assert!((sample_sd(&y) - 0.28897).abs() < 1e-3);
        assert_eq!(slice_count(&y, SlicingRule::Scott).unwrap(), 10);
        // uniform data: IQR = 0.5, width = 2 * 0.5 * 0.1 = 0.1
        assert_eq!(slice_count(&y, SlicingRule::FreedmanDiaconis).unwrap(), 10);
    }

    #[test]
    fn degenerate_responses() {
        for rule in [SlicingRule::Scott, SlicingRule::Sturges, SlicingRule::FreedmanDiaconis] {
            assert_eq!(slice_count(&[2.0; 10], rule).unwrap(), 1);
        }
        let s = make_slices(&[2.0; 10], SlicingRule::Fixed(4)).unwrap();
        assert_eq!(s.counts, vec![10]);
        // IQR = 0 with spread outside the quartiles falls back to Scott
        let mut y = vec![0.0; 20];
        y[19] = 1.0;
        assert_eq!(
            slice_count(&y, SlicingRule::FreedmanDiaconis).unwrap(),
            slice_count(&y, SlicingRule::Scott).unwrap()
        );
        assert!(slice_count(&[], SlicingRule::Scott).is_err());
    }

    #[test]
    fn hand_binning() {
        let s = make_slices(&[0.0, 1.0, 2.0, 3.0], SlicingRule::Fixed(2)).unwrap();
        assert_eq!(s.boundaries, vec![0.0, 1.5, 3.0]);
        assert_eq!(s.counts, vec![2, 2]);
        // interior edges are right-open, the last slice is closed
        let s = make_slices(&[0.0, 1.0, 2.0], SlicingRule::Fixed(2)).unwrap();
        assert_eq!(s.counts, vec![1, 2]);
        let s = make_slices(&[0.0, 0.1, 0.2, 10.0], SlicingRule::Fixed(4)).unwrap();
        assert_eq!(s.counts, vec![3, 0, 0, 1]);
    }

    #[test]
    fn copy_counts() {
        assert_eq!(copy_count(100, 30, 1.0).unwrap(), 3);
        assert_eq!(copy_count(100, 30, 0.5).unwrap(), 1);
        assert_eq!(copy_count(57, 57, 0.2).unwrap(), 1);
        assert_eq!(copy_count(90, 30, 1.0 / 3.0).unwrap(), 1);
        assert_eq!(copy_count(90, 10, 1.0 / 3.0).unwrap(), 3);
        assert!(copy_count(100, 0, 1.0).is_err());
        assert!(copy_count(10, 30, 1.0).is_err());
        assert!(copy_count(100, 30, 0.0).is_err());
        assert!(copy_count(100, 30, 1.5).is_err());
    }

    #[test]
    fn classical_sizes() {
        let p = classical_plan(10, 3, 1).unwrap();
        assert_eq!(p.node_sizes(), vec![4, 3, 3]);
        p.validate(10).unwrap();
        let p = classical_plan(10, 1, 1).unwrap();
        assert_eq!(p.node_assignments, vec![(0..10).collect::<Vec<_>>()]);
        assert!(classical_plan(3, 4, 1).is_err());
        assert!(classical_plan(3, 0, 1).is_err());
    }

    fn two_slice_response(big: usize, small: usize) -> Vec<f64> {
        let mut y = vec![0.0; big];
        y.extend(std::iter::repeat_n(1.0, small));
        y
    }

    #[test]
    fn single_node_collapses_copies() {
        let y = two_slice_response(100, 30);
        let s = make_slices(&y, SlicingRule::Fixed(2)).unwrap();
        assert_eq!(s.counts, vec![100, 30]);
        let p = oversample_plan(&y, &s, 1.0, 1, 3).unwrap();
        assert_eq!(p.pre_dedup_total, 190);
        assert_eq!(p.post_dedup_total, 130);
        p.validate(130).unwrap();
    }

    #[test]
    fn three_node_deal_exhaustive() {
        let y = two_slice_response(90, 30);
        let s = make_slices(&y, SlicingRule::Fixed(2)).unwrap();
        for seed in 0..200 {
            let p = oversample_plan(&y, &s, 1.0, 3, seed).unwrap();
            p.validate(120).unwrap();
            assert_eq!(p.pre_dedup_total, 180);
            for node in &p.node_assignments {
                let majority = node.iter().filter(|&&i| i < 90).count();
                let minority = node.len() - majority;
                assert_eq!(majority, 30);
                assert!((10..=30).contains(&minority), "{minority}");
            }
        }
    }

    #[test]
    fn single_slice_matches_classical_shape() {
        let y: Vec<f64> = (0..23).map(|i| i as f64).collect();
        let s = make_slices(&y, SlicingRule::Fixed(1)).unwrap();
        let p = oversample_plan(&y, &s, 1.0, 5, 9).unwrap();
        assert_eq!(p.node_sizes(), vec![5, 5, 5, 4, 4]);
        assert_eq!(p.pre_dedup_total, 23);
        assert_eq!(p.post_dedup_total, 23);
        p.validate(23).unwrap();
        let mut all: Vec<usize> = p.node_assignments.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn no_empty_node_when_copies_suffice() {
        // counts (2, 1) with two copies of the minority row: 4 dealt entries
        let y = vec![0.0, 0.0, 1.0];
        let s = make_slices(&y, SlicingRule::Fixed(2)).unwrap();
        let p = oversample_plan(&y, &s, 1.0, 4, 1).unwrap();
        assert_eq!(p.pre_dedup_total, 4);
        assert!(p.node_sizes().iter().all(|&sz| sz == 1));
    }

    #[test]
    fn too_many_nodes() {
        let y = two_slice_response(10, 2);
        let s = make_slices(&y, SlicingRule::Fixed(2)).unwrap();
        assert!(matches!(oversample_plan(&y, &s, 1.0, 21, 0), Err(Error::Plan(_))));
        assert!(oversample_plan(&y, &s, 1.0, 20, 0).is_ok());
    }

    #[test]
    fn plan_json_shape() {
        let p = classical_plan(5, 2, 4).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        for key in ["k", "seed", "nodes", "pre_dedup_total", "post_dedup_total"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(PartitionPlan::from_json(&p.to_json().unwrap()).unwrap(), p);
    }

    fn rule_strategy() -> impl Strategy<Value = SlicingRule> {
        prop_oneof![
            (1usize..12).prop_map(SlicingRule::Fixed),
            Just(SlicingRule::Scott),
            Just(SlicingRule::Sturges),
            Just(SlicingRule::FreedmanDiaconis),
        ]
    }

    /// Skewed responses: most mass near zero with a thin upper tail.
    fn response_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..300).prop_map(|u| u.into_iter().map(|v| v.powi(6) * 10.0).collect())
    }

    proptest! {
        #[test]
        fn slices_partition_the_sample(y in response_strategy(), rule in rule_strategy()) {
            let s = make_slices(&y, rule).unwrap();
            prop_assert_eq!(s.counts.iter().sum::<usize>(), y.len());
            prop_assert!(s.boundaries.windows(2).all(|w| w[0] < w[1]) || s.len() == 1);
        }

        #[test]
        fn oversampled_plan_invariants(
            y in response_strategy(),
            rule in rule_strategy(),
            tau_idx in 0usize..5,
            k in 1usize..12,
            seed in any::<u64>(),
        ) {
            let tau = [1.0, 0.5, 1.0 / 3.0, 0.25, 0.2][tau_idx];
            let s = make_slices(&y, rule).unwrap();
            let n = y.len();
            match oversample_plan(&y, &s, tau, k, seed) {
                Ok(p) => {
                    p.validate(n).unwrap();
                    prop_assert!(p.post_dedup_total <= p.pre_dedup_total);
                    prop_assert!(p.pre_dedup_total <= s.len() * n);
                    prop_assert_eq!(&p, &oversample_plan(&y, &s, tau, k, seed).unwrap());
                    let sizes = p.node_sizes();
                    prop_assert!(sizes.iter().all(|&sz| sz >= 1));
                    prop_assert!(p.post_dedup_total >= n);
                }
                Err(Error::Plan(_)) => prop_assert!(k > n),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn tau_monotone_pre_total(y in response_strategy(), k in 1usize..4, seed in any::<u64>()) {
            let s = make_slices(&y, SlicingRule::Scott).unwrap();
            let mut last = 0;
            for tau in [0.2, 0.25, 1.0 / 3.0, 0.5, 1.0] {
                let p = oversample_plan(&y, &s, tau, k.min(y.len()), seed).unwrap();
                prop_assert!(p.pre_dedup_total >= last);
                last = p.pre_dedup_total;
            }
        }

        #[test]
        fn full_tau_balances_slices(y in response_strategy()) {
            let s = make_slices(&y, SlicingRule::Scott).unwrap();
            let max = *s.counts.iter().max().unwrap();
            for &c in s.counts.iter().filter(|&&c| c > 0) {
                let total = copy_count(max, c, 1.0).unwrap() * c;
                prop_assert!(total > max - c && total <= max);
            }
        }

        #[test]
        fn classical_is_exact_partition(n in 1usize..200, k in 1usize..20, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let p = classical_plan(n, k, seed).unwrap();
            p.validate(n).unwrap();
            let mut all = p.node_assignments.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes = p.node_sizes();
            prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1] && w[0] - w[1] <= 1));
        }
    }
}
