//! Offline enumeration of the active sets that occur in a state region, grouped
//! by their stage subset. Only used to measure the best reuse achievable when
//! every polytope sharing a feedback law is known in advance.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::active_set::ActiveSet;
use crate::common_law::stage_subset;
use crate::condense::CondensedQp;
use crate::polytope::{HPolytope, LpOutcome};
use crate::qp::solve_qp;
use crate::regional;

/// Upper bound on the number of grid points.
pub const MAX_GRID_POINTS: usize = 10_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AtlasError {
    #[error("grid of {0} points exceeds the limit of {MAX_GRID_POINTS}")]
    GridTooLarge(u128),
    #[error("sampling box is empty or unbounded")]
    BadBox,
}

#[derive(Debug, Clone, Default)]
pub struct ActiveSetAtlas {
    q_stage: usize,
    /// `None` for rank-deficient sets, which have no polytope.
    entries: BTreeMap<ActiveSet, Option<HPolytope>>,
    groups: BTreeMap<ActiveSet, Vec<ActiveSet>>,
}

impl ActiveSetAtlas {
    pub fn new(q_stage: usize) -> Self {
        ActiveSetAtlas {
            q_stage,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, set: &ActiveSet) -> bool {
        self.entries.contains_key(set)
    }

    pub fn sets(&self) -> impl Iterator<Item = &ActiveSet> {
        self.entries.keys()
    }

    pub fn region(&self, set: &ActiveSet) -> Option<&HPolytope> {
        self.entries.get(set).and_then(|r| r.as_ref())
    }

    /// Stage subsets present in the atlas with their member sets.
    pub fn groups(&self) -> &BTreeMap<ActiveSet, Vec<ActiveSet>> {
        &self.groups
    }

    /// Members sharing the stage subset `stage`.
    pub fn group(&self, stage: &ActiveSet) -> &[ActiveSet] {
        self.groups.get(stage).map_or(&[], |v| v.as_slice())
    }

    /// Adds a set observed in a QP solution. Returns `false` if already known.
    pub fn insert(&mut self, qp: &CondensedQp, set: ActiveSet) -> bool {
        if self.entries.contains_key(&set) {
            return false;
        }
        let region = regional::polytope_from_active_set(qp, &set).ok();
        let stage = stage_subset(&set, self.q_stage);
        let members = self.groups.entry(stage).or_default();
        let pos = members.binary_search(&set).unwrap_or_else(|p| p);
        members.insert(pos, set.clone());
        self.entries.insert(set, region);
        true
    }

    /// Solves the QP at every state and records the resulting active sets.
    /// Infeasible states are skipped. Returns the number of new sets.
    pub fn absorb_states(&mut self, qp: &CondensedQp, states: &[DVector<f64>]) -> usize {
        let found: BTreeSet<ActiveSet> = states
            .par_iter()
            .filter_map(|x| solve_qp(qp, x).ok().map(|s| s.active))
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        found
            .into_iter()
            .filter(|s| self.insert(qp, s.clone()))
            .count()
    }

    /// Polytopes of every member whose stage subset equals that of `set`.
    pub fn gamma_of(&self, set: &ActiveSet) -> Vec<&HPolytope> {
        self.group(&stage_subset(set, self.q_stage))
            .iter()
            .filter_map(|s| self.region(s))
            .collect()
    }

    pub fn export(&self) -> AtlasExport<'_> {
        AtlasExport {
            q_stage: self.q_stage,
            entries: self
                .entries
                .iter()
                .map(|(set, region)| AtlasExportEntry {
                    set,
                    stage: stage_subset(set, self.q_stage),
                    polytope: region.as_ref(),
                })
                .collect(),
        }
    }
}

/// JSON shape of an atlas: one-based index arrays and `{C, c}` polytopes.
#[derive(Debug, Serialize)]
pub struct AtlasExport<'a> {
    pub q_stage: usize,
    pub entries: Vec<AtlasExportEntry<'a>>,
}

#[derive(Debug, Serialize)]
pub struct AtlasExportEntry<'a> {
    pub set: &'a ActiveSet,
    pub stage: ActiveSet,
    pub polytope: Option<&'a HPolytope>,
}

/// Axis-aligned bounding box of a polytope, by LP.
pub fn bounding_box(poly: &HPolytope) -> Option<(Vec<f64>, Vec<f64>)> {
    let d = poly.dim();
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        match poly.maximize(&e) {
            LpOutcome::Optimal { value, .. } => hi[i] = value,
            _ => return None,
        }
        match poly.maximize(&(-e)) {
            LpOutcome::Optimal { value, .. } => lo[i] = -value,
            _ => return None,
        }
    }
    Some((lo, hi))
}

/// Regular grid with `pts_per_dim` points per axis over the bounding box of
/// `region`, endpoints included; points outside `region` are discarded.
pub fn grid_points(
    region: &HPolytope,
    pts_per_dim: usize,
) -> Result<Vec<DVector<f64>>, AtlasError> {
    let d = region.dim();
    let total = (pts_per_dim as u128).pow(d as u32);
    if total > MAX_GRID_POINTS as u128 {
        return Err(AtlasError::GridTooLarge(total));
    }
    let (lo, hi) = bounding_box(region).ok_or(AtlasError::BadBox)?;
    let coord = |axis: usize, k: usize| {
        if pts_per_dim == 1 {
            0.5 * (lo[axis] + hi[axis])
        } else {
            lo[axis] + (hi[axis] - lo[axis]) * k as f64 / (pts_per_dim - 1) as f64
        }
    };
    let mut out = Vec::new();
    for flat in 0..total as usize {
        let mut rem = flat;
        let x = DVector::from_fn(d, |axis, _| {
            let k = rem % pts_per_dim;
            rem /= pts_per_dim;
            coord(axis, k)
        });
        if region.contains(&x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Solves the QP on a regular grid over `region` and collects every active set.
pub fn enumerate_by_grid(
    qp: &CondensedQp,
    region: &HPolytope,
    pts_per_dim: usize,
) -> Result<ActiveSetAtlas, AtlasError> {
    let pts = grid_points(region, pts_per_dim)?;
    let mut atlas = ActiveSetAtlas::new(qp.dims.q_stage);
    atlas.absorb_states(qp, &pts);
    Ok(atlas)
}
