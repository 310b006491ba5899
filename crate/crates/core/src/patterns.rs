//! Missing-pattern groups and the index sets that drive imputation and
//! estimation.
//!
//! Rows are grouped by their source-level observation signature. For each
//! group `r` we record the observed columns `a(r)`, the missing columns
//! `m(r)`, its members `H(r)`, its donor groups `G(r)` and for every donor
//! `k` the overlap `J(r,k) = a(r) ∩ a(k)`.

use std::collections::HashMap;

use crate::data::DataSet;
use crate::error::{MbiError, Result};

/// One missing-pattern group. Column and row indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    /// Observed flag per source.
    pub signature: Vec<bool>,
    /// Rows belonging to the group, `H(r)`, in data order.
    pub members: Vec<usize>,
    /// Observed columns `a(r)`, sorted.
    pub observed: Vec<usize>,
    /// Missing columns `m(r)`, sorted.
    pub missing: Vec<usize>,
    /// Donor groups `G(r)` (group indices, increasing).
    pub donors: Vec<usize>,
    /// `J(r,k)` for each donor, aligned with `donors`.
    pub overlaps: Vec<Vec<usize>>,
}

impl Group {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    /// `M_r = |G(r)|`.
    pub fn n_donors(&self) -> usize {
        self.donors.len()
    }
}

/// All groups plus the row-to-group labels `ξ_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternIndex {
    pub groups: Vec<Group>,
    pub group_of: Vec<usize>,
    pub n_cols: usize,
}

impl PatternIndex {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_rows(&self) -> usize {
        self.group_of.len()
    }

    /// Index of the complete-case group, if any. It is always group 0.
    pub fn complete_group(&self) -> Option<usize> {
        self.groups
            .first()
            .filter(|g| g.is_complete())
            .map(|_| 0)
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Group::size).collect()
    }

    /// Groups whose observed set contains every column in `cols`.
    pub fn groups_observing(&self, cols: &[usize]) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| cols.iter().all(|c| g.observed.binary_search(c).is_ok()))
            .map(|(r, _)| r)
            .collect()
    }

    /// Rows (sorted) in which every column of `cols` is observed.
    pub fn rows_observing(&self, cols: &[usize]) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .groups_observing(cols)
            .into_iter()
            .flat_map(|r| self.groups[r].members.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }

    /// Number of rows observing `target` together with all of `predictors`.
    pub fn pooled_size(&self, target: usize, predictors: &[usize]) -> usize {
        let mut cols = predictors.to_vec();
        cols.push(target);
        self.groups_observing(&cols)
            .into_iter()
            .map(|r| self.groups[r].size())
            .sum()
    }

    /// Moment dimension `Σ_{k∈G(r)} |a(k)|` of group `r`.
    pub fn moment_dim(&self, r: usize) -> usize {
        self.groups[r]
            .donors
            .iter()
            .map(|&k| self.groups[k].observed.len())
            .sum()
    }
}

/// Groups rows by source signature and builds all index sets.
///
/// Groups are ordered with the complete-case group first, then by decreasing
/// `|a(r)|`, ties broken by first occurrence in the data.
pub fn detect_patterns(data: &DataSet) -> Result<PatternIndex> {
    let n = data.n_rows();
    let p = data.n_cols();
    let spans = data.source_spans();

    let mut by_signature: HashMap<Vec<bool>, usize> = HashMap::new();
    let mut signatures: Vec<Vec<bool>> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let sig = data.source_signature(i);
        // DataSet already rejects partial sources; re-check cheaply since the
        // index sets below rely on it.
        for (s, span) in spans.iter().enumerate() {
            if span.clone().any(|j| data.is_observed(i, j) != sig[s]) {
                return Err(MbiError::NonBlockRow {
                    row: i,
                    source_index: s,
                });
            }
        }
        let slot = *by_signature.entry(sig.clone()).or_insert_with(|| {
            signatures.push(sig);
            members.push(Vec::new());
            signatures.len() - 1
        });
        members[slot].push(i);
    }

    let observed_cols = |sig: &[bool]| -> Vec<usize> {
        spans
            .iter()
            .zip(sig)
            .filter(|(_, &o)| o)
            .flat_map(|(span, _)| span.clone())
            .collect()
    };

    // Discovery order is first occurrence; sort stably on (not complete, -|a|).
    let mut order: Vec<usize> = (0..signatures.len()).collect();
    order.sort_by_key(|&s| {
        let n_obs = observed_cols(&signatures[s]).len();
        (n_obs != p, std::cmp::Reverse(n_obs))
    });

    let mut groups: Vec<Group> = order
        .iter()
        .map(|&s| {
            let observed = observed_cols(&signatures[s]);
            let missing = (0..p).filter(|j| observed.binary_search(j).is_err()).collect();
            Group {
                signature: signatures[s].clone(),
                members: members[s].clone(),
                observed,
                missing,
                donors: Vec::new(),
                overlaps: Vec::new(),
            }
        })
        .collect();

    let mut seen = vec![false; p];
    for g in &groups {
        for &j in &g.observed {
            seen[j] = true;
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(MbiError::UnobservedColumn { column: j });
    }

    let observed_sets: Vec<Vec<usize>> = groups.iter().map(|g| g.observed.clone()).collect();
    for (r, g) in groups.iter_mut().enumerate() {
        if g.missing.is_empty() {
            g.donors = vec![r];
            g.overlaps = vec![g.observed.clone()];
            continue;
        }
        for (k, a_k) in observed_sets.iter().enumerate() {
            if k == r || !g.missing.iter().all(|j| a_k.binary_search(j).is_ok()) {
                continue;
            }
            let overlap: Vec<usize> = g
                .observed
                .iter()
                .copied()
                .filter(|j| a_k.binary_search(j).is_ok())
                .collect();
            if !overlap.is_empty() {
                g.donors.push(k);
                g.overlaps.push(overlap);
            }
        }
        if g.donors.is_empty() {
            return Err(MbiError::EmptyDonor { group: r });
        }
    }

    let mut group_of = vec![0; n];
    for (r, g) in groups.iter().enumerate() {
        for &i in &g.members {
            group_of[i] = r;
        }
    }

    Ok(PatternIndex {
        groups,
        group_of,
        n_cols: p,
    })
}

/// Which fitting route an imputation model will take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Unregularized GLM: the pooled sample exceeds the predictor count.
    Glm,
    /// L1-regularized GLM.
    L1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    pub group: usize,
    pub donor: usize,
    pub target: usize,
    pub pooled_rows: usize,
    pub predictors: usize,
    pub route: Route,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: usize,
    pub size: usize,
    pub moment_dim: usize,
    /// Below the configured floor: no moment block of its own.
    pub below_floor: bool,
    /// Fewer rows than moments, so its weight block is necessarily singular.
    pub small_relative_to_dim: bool,
}

/// Advisory feasibility report produced before fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub min_group_size: usize,
    pub groups: Vec<GroupCheck>,
    pub routes: Vec<RouteEntry>,
}

impl FeasibilityReport {
    pub fn all_clear(&self) -> bool {
        self.groups
            .iter()
            .all(|g| !g.below_floor && !g.small_relative_to_dim)
            && self.routes.iter().all(|e| e.route == Route::Glm)
    }

    pub fn flagged_groups(&self) -> Vec<usize> {
        self.groups
            .iter()
            .filter(|g| g.below_floor || g.small_relative_to_dim)
            .map(|g| g.group)
            .collect()
    }
}

/// Default minimum group size for a group to contribute its own moments.
pub const DEFAULT_MIN_GROUP_SIZE: usize = 5;

/// Per-group and per-imputation-model feasibility checks.
pub fn validate_for_fit(idx: &PatternIndex, min_group_size: usize) -> FeasibilityReport {
    let groups = idx
        .groups
        .iter()
        .enumerate()
        .map(|(r, g)| {
            let moment_dim = idx.moment_dim(r);
            GroupCheck {
                group: r,
                size: g.size(),
                moment_dim,
                below_floor: g.size() < min_group_size,
                small_relative_to_dim: g.size() <= moment_dim,
            }
        })
        .collect();
    let mut routes = Vec::new();
    for (r, g) in idx.groups.iter().enumerate() {
        if g.is_complete() {
            continue;
        }
        for (&k, overlap) in g.donors.iter().zip(&g.overlaps) {
            for &j in &g.missing {
                let pooled = idx.pooled_size(j, overlap);
                routes.push(RouteEntry {
                    group: r,
                    donor: k,
                    target: j,
                    pooled_rows: pooled,
                    predictors: overlap.len(),
                    route: if pooled > overlap.len() {
                        Route::Glm
                    } else {
                        Route::L1
                    },
                });
            }
        }
    }
    FeasibilityReport {
        min_group_size,
        groups,
        routes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    /// Three sources of two columns each. Rows per group follow the layout
    /// (1: all, 2: S1+S2, 3: S1+S3, 4: S2+S3, 5: S1 only).
    pub(crate) fn four_group_layout(rows_per_group: usize) -> DataSet {
        let sigs = [
            [true, true, true],
            [true, true, false],
            [true, false, true],
            [false, true, true],
            [true, false, false],
        ];
        layout(&sigs, rows_per_group)
    }

    fn layout(sigs: &[[bool; 3]], rows_per_group: usize) -> DataSet {
        let n = sigs.len() * rows_per_group;
        let p = 6;
        let mut values = DMatrix::zeros(n, p);
        let mut mask = DMatrix::from_element(n, p, false);
        for (g, sig) in sigs.iter().enumerate() {
            for t in 0..rows_per_group {
                let i = g * rows_per_group + t;
                for (s, &o) in sig.iter().enumerate() {
                    for j in 2 * s..2 * s + 2 {
                        mask[(i, j)] = o;
                        values[(i, j)] = (i * 7 + j) as f64;
                    }
                }
            }
        }
        DataSet::new(values, mask, DVector::zeros(n), vec![0..2, 2..4, 4..6]).unwrap()
    }

    #[test]
    fn four_group_layout_donors() {
        let idx = detect_patterns(&four_group_layout(3)).unwrap();
        assert_eq!(idx.n_groups(), 5);
        assert_eq!(idx.complete_group(), Some(0));
        // Group 2 of the layout is index 1 here.
        let g2 = &idx.groups[1];
        assert_eq!(g2.missing, vec![4, 5]);
        assert_eq!(g2.donors, vec![0, 2, 3]);
        assert_eq!(g2.n_donors(), 3);
        assert_eq!(g2.overlaps, vec![vec![0, 1, 2, 3], vec![0, 1], vec![2, 3]]);
        // S1-only group can be imputed from the complete group alone.
        assert_eq!(idx.groups[4].donors, vec![0]);
    }

    #[test]
    fn donors_survive_without_complete_group() {
        let sigs = [
            [true, true, false],
            [true, false, true],
            [false, true, true],
        ];
        let idx = detect_patterns(&layout(&sigs, 2)).unwrap();
        assert_eq!(idx.complete_group(), None);
        for g in &idx.groups {
            assert_eq!(g.n_donors(), 2);
        }
    }

    #[test]
    fn fully_observed() {
        let data = DataSet::complete(DMatrix::from_element(4, 3, 1.0), DVector::zeros(4)).unwrap();
        let idx = detect_patterns(&data).unwrap();
        assert_eq!(idx.n_groups(), 1);
        assert_eq!(idx.groups[0].donors, vec![0]);
        assert!(idx.groups[0].missing.is_empty());
    }

    #[test]
    fn empty_donor_is_an_error() {
        // S1+S2 and S3-only: nobody observes S3 together with anything else.
        let sigs = [[true, true, false], [false, false, true]];
        let err = detect_patterns(&layout(&sigs, 2)).unwrap_err();
        assert!(matches!(err, MbiError::EmptyDonor { .. }));
    }

    #[test]
    fn ordering_complete_first_then_by_observed_count() {
        let sigs = [
            [true, false, false],
            [true, true, false],
            [true, true, true],
        ];
        let idx = detect_patterns(&layout(&sigs, 1)).unwrap();
        let sizes: Vec<usize> = idx.groups.iter().map(|g| g.observed.len()).collect();
        assert_eq!(sizes, vec![6, 4, 2]);
    }

    #[test]
    fn pooled_route_marks_l1() {
        let idx = detect_patterns(&four_group_layout(2)).unwrap();
        let report = validate_for_fit(&idx, 1);
        // Group 2, donor 1: predictors J = 4 columns, pooled rows = 2 (complete group).
        let e = report
            .routes
            .iter()
            .find(|e| e.group == 1 && e.donor == 0)
            .unwrap();
        assert_eq!(e.pooled_rows, 2);
        assert_eq!(e.route, Route::L1);
        // Brute-force count of rows observing target and predictors.
        let data = four_group_layout(2);
        let mut cols = idx.groups[1].overlaps[0].clone();
        cols.push(e.target);
        let brute = (0..data.n_rows())
            .filter(|&i| cols.iter().all(|&c| data.is_observed(i, c)))
            .count();
        assert_eq!(brute, e.pooled_rows);
    }

    #[test]
    fn flags_small_groups() {
        let idx = detect_patterns(&four_group_layout(3)).unwrap();
        let report = validate_for_fit(&idx, 5);
        assert!(report.groups.iter().all(|g| g.below_floor));
        assert!(!report.all_clear());
    }
}
