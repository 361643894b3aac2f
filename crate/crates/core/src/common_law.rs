//! Reusing one feedback law on several polytopes.
//!
//! The rows `1..q_stage` of the constraint matrix involve only `u(0)`. When
//! the active rows among them, `Ã = A ∩ {1..q_stage}`, number exactly `m` and
//! `G_A` has full row rank, they pin `u(0)` by themselves:
//! `u(0) = (G¹¹_Ã)⁻¹ (w¹_Ã + E¹_Ã x)`. Every active set sandwiched between `Ã`
//! and `A` then carries the same feedback law on its polytope.

use nalgebra::{DMatrix, DVector};

use crate::active_set::ActiveSet;
use crate::condense::CondensedQp;
use crate::linalg;
use crate::polytope::HPolytope;
use crate::regional::{self, FeedbackLaw, RegionalError};

/// Default cap on `|A \ Ã|`; `2^16` candidates at most.
pub const DEFAULT_FAMILY_CAP: usize = 16;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CommonLawError {
    #[error("candidate family too large: {free} free indices exceed the cap of {cap}")]
    FamilyTooLarge { free: usize, cap: usize },
    #[error("stage block of {0} is singular")]
    Singular(ActiveSet),
    #[error(transparent)]
    Regional(#[from] RegionalError),
}

/// `A ∩ {1..q_stage}`
pub fn stage_subset(active: &ActiveSet, q_stage: usize) -> ActiveSet {
    active.below(q_stage)
}

/// Full row rank of `G_A` and `|Ã| = m`.
pub fn criterion_applies(qp: &CondensedQp, active: &ActiveSet) -> bool {
    stage_subset(active, qp.dims.q_stage).len() == qp.dims.m
        && regional::has_full_row_rank(qp, active)
}

/// `K = (G¹¹_Ã)⁻¹ E¹_Ã`, `b = (G¹¹_Ã)⁻¹ w¹_Ã`.
pub fn simplified_feedback(
    qp: &CondensedQp,
    stage_active: &ActiveSet,
) -> Result<FeedbackLaw, CommonLawError> {
    let m = qp.dims.m;
    let idx = stage_active.indices();
    if idx.len() != m || idx.iter().any(|&i| i >= qp.dims.q_stage) {
        return Err(CommonLawError::Singular(stage_active.clone()));
    }
    let g11 = DMatrix::from_fn(m, m, |r, c| qp.g[(idx[r], c)]);
    if linalg::rank(&g11, regional::RANK_TOL) < m {
        return Err(CommonLawError::Singular(stage_active.clone()));
    }
    let lu = g11.lu();
    let e1 = linalg::select_rows(&qp.e, idx);
    let w1 = linalg::select_entries(&qp.w, idx);
    let k = lu
        .solve(&e1)
        .ok_or_else(|| CommonLawError::Singular(stage_active.clone()))?;
    let b = lu
        .solve(&w1)
        .ok_or_else(|| CommonLawError::Singular(stage_active.clone()))?;
    Ok(FeedbackLaw { k, b })
}

/// Sorts by descending binary value `Σ_{i∈A} 2^{i-1}`.
pub fn sort_descending_value(sets: &mut [ActiveSet]) {
    sets.sort_by(|a, b| b.cmp_binary_value(a));
}

/// All sets `Ã ∪ s` with `s ⊆ A \ Ã`, in descending binary order.
pub fn candidate_family(
    active: &ActiveSet,
    q_stage: usize,
    cap: usize,
) -> Result<Vec<ActiveSet>, CommonLawError> {
    let stage = stage_subset(active, q_stage);
    let free = active.difference(&stage);
    if free.len() > cap {
        return Err(CommonLawError::FamilyTooLarge {
            free: free.len(),
            cap,
        });
    }
    let free = free.indices();
    let mut family: Vec<ActiveSet> = (0u64..(1u64 << free.len()))
        .map(|mask| {
            let mut idx = stage.indices().to_vec();
            idx.extend((0..free.len()).filter(|b| mask >> b & 1 == 1).map(|b| free[b]));
            ActiveSet::from_indices(idx)
        })
        .collect();
    sort_descending_value(&mut family);
    Ok(family)
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub set: ActiveSet,
    pub region: HPolytope,
}

/// One feedback law plus the candidate polytopes it is known to be optimal on.
#[derive(Debug, Clone)]
pub struct ReuseRegion {
    pub stage_active: ActiveSet,
    pub law: FeedbackLaw,
    /// Descending binary order; first hit wins in [`reuse_query`].
    pub candidates: Vec<Candidate>,
    pub origin_set: ActiveSet,
}

impl ReuseRegion {
    pub fn query(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        reuse_query(self, x)
    }
}

/// Options for assembling a [`ReuseRegion`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyOptions {
    /// Drop candidates whose polytope is empty.
    pub prune_empty: bool,
    /// Keep only the first `l` sets in descending binary order.
    pub max_sets: Option<usize>,
    pub cap: usize,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            prune_empty: true,
            max_sets: None,
            cap: DEFAULT_FAMILY_CAP,
        }
    }
}

/// Builds the reuse structure for an active set that satisfies [`criterion_applies`].
pub fn build_reuse_region(
    qp: &CondensedQp,
    active: &ActiveSet,
    prune_empty: bool,
) -> Result<ReuseRegion, CommonLawError> {
    build_reuse_region_with(
        qp,
        active,
        &FamilyOptions {
            prune_empty,
            ..FamilyOptions::default()
        },
    )
}

pub fn build_reuse_region_with(
    qp: &CondensedQp,
    active: &ActiveSet,
    opts: &FamilyOptions,
) -> Result<ReuseRegion, CommonLawError> {
    let mut family = candidate_family(active, qp.dims.q_stage, opts.cap)?;
    if let Some(l) = opts.max_sets {
        family.truncate(l.max(1));
    }
    reuse_region_from_sets(qp, active, &family, opts.prune_empty)
}

/// Assembles a reuse region from an explicit list of candidate sets sharing
/// one stage subset, keeping their order. Rank-deficient candidates are dropped.
pub fn reuse_region_from_sets(
    qp: &CondensedQp,
    origin: &ActiveSet,
    sets: &[ActiveSet],
    prune_empty: bool,
) -> Result<ReuseRegion, CommonLawError> {
    let stage = stage_subset(origin, qp.dims.q_stage);
    let law = simplified_feedback(qp, &stage)?;
    let mut candidates = Vec::with_capacity(sets.len());
    for set in sets {
        debug_assert_eq!(stage_subset(set, qp.dims.q_stage), stage);
        match regional::polytope_from_active_set(qp, set) {
            Ok(region) => {
                if prune_empty && region.is_empty() {
                    continue;
                }
                candidates.push(Candidate {
                    set: set.clone(),
                    region,
                });
            }
            Err(RegionalError::RankDeficient(_)) => continue,
        }
    }
    Ok(ReuseRegion {
        stage_active: stage,
        law,
        candidates,
        origin_set: origin.clone(),
    })
}

/// `K x + b` if some candidate polytope contains `x`, scanning in stored order.
pub fn reuse_query(rr: &ReuseRegion, x: &DVector<f64>) -> Option<DVector<f64>> {
    rr.candidates
        .iter()
        .any(|c| c.region.contains(x))
        .then(|| rr.law.eval(x))
}
