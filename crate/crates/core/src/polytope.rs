//! Halfspace polytopes `{z | C z <= c}` and the LP-backed queries on them:
//! emptiness, containment, redundancy, Chebyshev centers and 2-D vertex lists.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::linalg;

/// Containment tolerance applied row-wise.
pub const CONTAIN_TOL: f64 = 1e-9;
/// Phase-1 threshold below which a polytope counts as non-empty.
pub const EMPTY_TOL: f64 = 1e-9;
/// Ties at this distance from a bound count as redundant.
pub const REDUNDANCY_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolytopeError {
    #[error("polytope is empty")]
    Empty,
    #[error("polytope is unbounded")]
    Unbounded,
    #[error("operation needs dimension {expected}, polytope has {found}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolytope", into = "RawPolytope")]
pub struct HPolytope {
    lhs: DMatrix<f64>,
    rhs: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPolytope {
    #[serde(rename = "C")]
    lhs: Vec<Vec<f64>>,
    #[serde(rename = "c")]
    rhs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

impl TryFrom<RawPolytope> for HPolytope {
    type Error = String;

    fn try_from(raw: RawPolytope) -> Result<Self, String> {
        let ncols = match (raw.lhs.first(), raw.dim) {
            (Some(row), _) => row.len(),
            (None, Some(d)) => d,
            (None, None) => return Err("empty polytope needs an explicit `dim`".into()),
        };
        if raw.lhs.iter().any(|r| r.len() != ncols) {
            return Err("ragged rows in `C`".into());
        }
        if raw.lhs.len() != raw.rhs.len() {
            return Err(format!(
                "`C` has {} rows but `c` has {} entries",
                raw.lhs.len(),
                raw.rhs.len()
            ));
        }
        Ok(HPolytope::new(
            linalg::mat_from_rows(&raw.lhs, ncols),
            DVector::from_vec(raw.rhs),
        ))
    }
}

impl From<HPolytope> for RawPolytope {
    fn from(p: HPolytope) -> Self {
        RawPolytope {
            lhs: linalg::rows_of(&p.lhs),
            rhs: p.rhs.iter().cloned().collect(),
            dim: (p.lhs.nrows() == 0).then_some(p.lhs.ncols()),
        }
    }
}

/// Result of maximizing a linear objective over a polytope.
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: DVector<f64> },
    Infeasible,
    Unbounded,
}

impl HPolytope {
    pub fn new(lhs: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        assert_eq!(lhs.nrows(), rhs.len(), "row count mismatch");
        HPolytope { lhs, rhs }
    }

    /// `lo <= z <= hi`, listed as upper bound then lower bound per coordinate.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Self {
        assert_eq!(lo.len(), hi.len());
        let d = lo.len();
        let mut lhs = DMatrix::zeros(2 * d, d);
        let mut rhs = DVector::zeros(2 * d);
        for i in 0..d {
            lhs[(2 * i, i)] = 1.0;
            rhs[2 * i] = hi[i];
            lhs[(2 * i + 1, i)] = -1.0;
            rhs[2 * i + 1] = -lo[i];
        }
        HPolytope { lhs, rhs }
    }

    /// The whole space `R^d` (no rows).
    pub fn universe(d: usize) -> Self {
        HPolytope {
            lhs: DMatrix::zeros(0, d),
            rhs: DVector::zeros(0),
        }
    }

    pub fn lhs(&self) -> &DMatrix<f64> {
        &self.lhs
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn dim(&self) -> usize {
        self.lhs.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.lhs.nrows()
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        self.contains_tol(z, CONTAIN_TOL)
    }

    pub fn contains_tol(&self, z: &DVector<f64>, tol: f64) -> bool {
        debug_assert_eq!(z.len(), self.dim());
        (0..self.n_rows()).all(|i| self.lhs.row(i).dot(&z.transpose()) <= self.rhs[i] + tol)
    }

    /// Largest row violation `max_i (C_i z - c_i)`; negative means strictly inside.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        (0..self.n_rows())
            .map(|i| self.lhs.row(i).dot(&z.transpose()) - self.rhs[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Scales every non-zero row to unit Euclidean norm. All-zero rows are kept as is.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for i in 0..out.n_rows() {
            let nrm = out.lhs.row(i).norm();
            if nrm > 0.0 {
                out.lhs.row_mut(i).scale_mut(1.0 / nrm);
                out.rhs[i] /= nrm;
            }
        }
        out
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        HPolytope {
            lhs: linalg::select_rows(&self.lhs, rows),
            rhs: linalg::select_entries(&self.rhs, rows),
        }
    }

    /// Intersection, rows of `self` first.
    pub fn intersect(&self, other: &HPolytope) -> Self {
        assert_eq!(self.dim(), other.dim());
        HPolytope {
            lhs: linalg::vstack(&[&self.lhs, &other.lhs]),
            rhs: linalg::vconcat(&[&self.rhs, &other.rhs]),
        }
    }

    /// `max objective' z` over the polytope.
    pub fn maximize(&self, objective: &DVector<f64>) -> LpOutcome {
        let d = self.dim();
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = (0..d)
            .map(|j| lp.add_var(objective[j], (f64::NEG_INFINITY, f64::INFINITY)))
            .collect();
        for i in 0..self.n_rows() {
            let terms: Vec<_> = (0..d)
                .filter(|&j| self.lhs[(i, j)] != 0.0)
                .map(|j| (vars[j], self.lhs[(i, j)]))
                .collect();
            if terms.is_empty() {
                if self.rhs[i] < -EMPTY_TOL {
                    return LpOutcome::Infeasible;
                }
                continue;
            }
            lp.add_constraint(&terms[..], ComparisonOp::Le, self.rhs[i]);
        }
        match lp.solve() {
            Ok(sol) => LpOutcome::Optimal {
                value: sol.objective(),
                point: DVector::from_iterator(d, vars.iter().map(|v| sol[*v])),
            },
            Err(minilp::Error::Infeasible) => LpOutcome::Infeasible,
            Err(minilp::Error::Unbounded) => LpOutcome::Unbounded,
        }
    }

    /// Phase-1 emptiness test on the row-normalized system:
    /// `min t s.t. C z - t <= c`; empty iff the optimum exceeds [`EMPTY_TOL`].
    pub fn is_empty(&self) -> bool {
        let p = self.normalized();
        let d = p.dim();
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = (0..d)
            .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
            .collect();
        let t = lp.add_var(1.0, (-1.0, f64::INFINITY));
        for i in 0..p.n_rows() {
            let mut terms: Vec<_> = (0..d)
                .filter(|&j| p.lhs[(i, j)] != 0.0)
                .map(|j| (vars[j], p.lhs[(i, j)]))
                .collect();
            if terms.is_empty() {
                if p.rhs[i] < -EMPTY_TOL {
                    return true;
                }
                continue;
            }
            terms.push((t, -1.0));
            lp.add_constraint(&terms[..], ComparisonOp::Le, p.rhs[i]);
        }
        match lp.solve() {
            Ok(sol) => sol[t] > EMPTY_TOL,
            Err(_) => true,
        }
    }

    /// Center and radius of the largest inscribed ball, radius capped at `r_cap`.
    /// `None` when the polytope has no interior.
    pub fn chebyshev_center(&self, r_cap: f64) -> Option<(DVector<f64>, f64)> {
        let d = self.dim();
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = (0..d)
            .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
            .collect();
        let r = lp.add_var(1.0, (0.0, r_cap));
        for i in 0..self.n_rows() {
            let nrm = self.lhs.row(i).norm();
            if nrm == 0.0 {
                if self.rhs[i] < 0.0 {
                    return None;
                }
                continue;
            }
            let mut terms: Vec<_> = (0..d)
                .filter(|&j| self.lhs[(i, j)] != 0.0)
                .map(|j| (vars[j], self.lhs[(i, j)] / nrm))
                .collect();
            terms.push((r, 1.0));
            lp.add_constraint(&terms[..], ComparisonOp::Le, self.rhs[i] / nrm);
        }
        let sol = lp.solve().ok()?;
        let radius = sol[r];
        if radius <= EMPTY_TOL {
            return None;
        }
        Some((
            DVector::from_iterator(d, vars.iter().map(|v| sol[*v])),
            radius,
        ))
    }

    /// Removes rows implied by the others. Rows are examined in order, and a
    /// row is dropped when its LP maximum over the remaining rows stays within
    /// [`REDUNDANCY_TOL`] of its bound. Duplicate rows keep their first copy.
    pub fn remove_redundant(&self) -> Self {
        let p = self.normalized();
        let mut keep: Vec<usize> = (0..p.n_rows()).collect();
        let mut i = 0;
        while i < keep.len() {
            let row = keep[i];
            let others: Vec<usize> = keep.iter().cloned().filter(|&r| r != row).collect();
            let objective = p.lhs.row(row).transpose();
            if objective.norm() == 0.0 && p.rhs[row] >= 0.0 {
                keep.remove(i);
                continue;
            }
            let redundant = match p.select(&others).maximize(&objective) {
                LpOutcome::Optimal { value, .. } => value <= p.rhs[row] + REDUNDANCY_TOL,
                LpOutcome::Infeasible => true,
                LpOutcome::Unbounded => false,
            };
            if redundant {
                keep.remove(i);
            } else {
                i += 1;
            }
        }
        self.select(&keep)
    }

    /// Counter-clockwise vertex list of a bounded, non-empty polygon.
    pub fn vertices_2d(&self) -> Result<Vec<DVector<f64>>, PolytopeError> {
        if self.dim() != 2 {
            return Err(PolytopeError::Dimension {
                expected: 2,
                found: self.dim(),
            });
        }
        if self.is_empty() {
            return Err(PolytopeError::Empty);
        }
        for dir in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
            if let LpOutcome::Unbounded = self.maximize(&DVector::from_row_slice(&dir)) {
                return Err(PolytopeError::Unbounded);
            }
        }
        let p = self.normalized();
        let mut pts: Vec<DVector<f64>> = Vec::new();
        for i in 0..p.n_rows() {
            for j in (i + 1)..p.n_rows() {
                let m = nalgebra::Matrix2::new(
                    p.lhs[(i, 0)],
                    p.lhs[(i, 1)],
                    p.lhs[(j, 0)],
                    p.lhs[(j, 1)],
                );
                if m.determinant().abs() < 1e-12 {
                    continue;
                }
                let Some(inv) = m.try_inverse() else { continue };
                let v = inv * nalgebra::Vector2::new(p.rhs[i], p.rhs[j]);
                let v = DVector::from_row_slice(&[v[0], v[1]]);
                if p.contains_tol(&v, 1e-8) && !pts.iter().any(|q| (q - &v).norm() < 1e-8) {
                    pts.push(v);
                }
            }
        }
        let n = pts.len() as f64;
        let cx = pts.iter().map(|v| v[0]).sum::<f64>() / n;
        let cy = pts.iter().map(|v| v[1]).sum::<f64>() / n;
        pts.sort_by(|a, b| {
            let ta = (a[1] - cy).atan2(a[0] - cx);
            let tb = (b[1] - cy).atan2(b[0] - cx);
            ta.total_cmp(&tb)
        });
        Ok(pts)
    }

    /// Uniform-ish interior samples: random rays from the Chebyshev center,
    /// each point placed at a random fraction of the distance to the boundary.
    pub fn interior_samples<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
        let Some((center, _)) = self.chebyshev_center(1e3) else {
            return Vec::new();
        };
        let p = self.normalized();
        let d = self.dim();
        let slack = &p.rhs - &p.lhs * &center;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let dir = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let dir = if dir.norm() > 0.0 { dir.normalize() } else { continue };
            let rate = &p.lhs * &dir;
            let reach = (0..p.n_rows())
                .filter(|&i| rate[i] > 1e-14)
                .map(|i| slack[i] / rate[i])
                .fold(1e3, f64::min);
            let frac: f64 = rng.random_range(0.0..0.95);
            out.push(&center + dir * (reach * frac));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_box() -> HPolytope {
        HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0])
    }

    #[test]
    fn emptiness_of_contradictory_interval() {
        let p = HPolytope::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_row_slice(&[-1.0, -1.0]),
        );
        assert!(p.is_empty());
        let q = HPolytope::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_row_slice(&[1.0, 1.0]),
        );
        assert!(!q.is_empty());
    }

    #[test]
    fn box_membership() {
        let b = unit_box();
        assert!(b.contains(&DVector::from_row_slice(&[0.0, 0.0])));
        assert!(!b.contains(&DVector::from_row_slice(&[2.0, 0.0])));
    }

    #[test]
    fn box_vertices_ccw() {
        let v = unit_box().vertices_2d().unwrap();
        assert_eq!(v.len(), 4);
        let mut area = 0.0;
        for i in 0..4 {
            let (a, b) = (&v[i], &v[(i + 1) % 4]);
            area += a[0] * b[1] - a[1] * b[0];
            assert!((a[0].abs() - 1.0).abs() < 1e-12 && (a[1].abs() - 1.0).abs() < 1e-12);
        }
        assert!((area / 2.0 - 4.0).abs() < 1e-12, "signed area {area}");
    }

    #[test]
    fn triangle_vertices() {
        let t = HPolytope::new(
            DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            DVector::from_row_slice(&[0.0, 0.0, 1.0]),
        );
        let v = t.vertices_2d().unwrap();
        let expect = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(v.len(), 3);
        for e in expect {
            assert!(v.iter().any(|p| (p[0] - e[0]).abs() < 1e-12 && (p[1] - e[1]).abs() < 1e-12));
        }
        // every vertex sits on two rows
        for p in &v {
            let tight = (0..3)
                .filter(|&i| (t.lhs.row(i).dot(&p.transpose()) - t.rhs[i]).abs() < 1e-8)
                .count();
            assert!(tight >= 2);
        }
    }

    #[test]
    fn vertices_reject_unbounded_and_empty() {
        let half = HPolytope::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_row_slice(&[1.0]),
        );
        assert_eq!(half.vertices_2d(), Err(PolytopeError::Unbounded));
        let empty = HPolytope::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            DVector::from_row_slice(&[-1.0, -1.0]),
        );
        assert_eq!(empty.vertices_2d(), Err(PolytopeError::Empty));
    }

    #[test]
    fn redundancy_removal_drops_implied_rows() {
        let mut rows = vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0];
        rows.extend_from_slice(&[1.0, 1.0, 1.0, 0.0]);
        let p = HPolytope::new(
            DMatrix::from_row_slice(6, 2, &rows),
            DVector::from_row_slice(&[1.0, 1.0, 1.0, 1.0, 5.0, 1.0]),
        );
        let r = p.remove_redundant();
        assert_eq!(r.n_rows(), 4);
    }

    #[test]
    fn chebyshev_of_box() {
        let (c, r) = unit_box().chebyshev_center(10.0).unwrap();
        assert!(c.norm() < 1e-9);
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn samples_are_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = HPolytope::new(
            DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            DVector::from_row_slice(&[0.0, 0.0, 1.0]),
        );
        for s in t.interior_samples(200, &mut rng) {
            assert!(t.max_violation(&s) < 0.0);
        }
    }

    #[test]
    fn serde_shape() {
        let b = unit_box();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.starts_with("{\"C\":[[1.0,0.0]"));
        let back: HPolytope = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }

    proptest::proptest! {
        #[test]
        fn normalization_preserves_membership(
            rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.1f64..5.0), 1..8),
            pts in proptest::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 1000),
        ) {
            let lhs = DMatrix::from_fn(rows.len(), 2, |r, c| if c == 0 { rows[r].0 } else { rows[r].1 });
            let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
            let p = HPolytope::new(lhs, rhs);
            let n = p.normalized();
            for (x, y) in pts {
                let z = DVector::from_row_slice(&[x, y]);
                // skip points within round-off of a face
                let margin = p.normalized().max_violation(&z).abs();
                if margin > 1e-9 {
                    proptest::prop_assert_eq!(p.contains_tol(&z, 0.0), n.contains_tol(&z, 0.0));
                }
            }
        }
    }
}
