//! Centralized maximum-likelihood estimator and Cramér–Rao lower bound.
//!
//! Stacking the pairwise-sum observations gives the linear model
//! `r = [a1 A] [f1; f] + n` with one row per edge and exactly two unit
//! entries per row (the edge's endpoints). The ML estimate and the CRLB both
//! come from the weighted normal equations; this module is the accuracy
//! reference the distributed engines are tested against, not a performance
//! artifact, so everything is dense.

use crate::error::{Error, Result};
use crate::scenario::{Edge, MeasurementSet, Topology};
use crate::NodeId;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

/// Relative pivot tolerance below which the normal matrix is reported as
/// singular instead of being solved.
const SINGULARITY_TOL: f64 = 1e-12;

/// The stacked linear model over the anchored component.
///
/// Row order is ascending lexicographic on the edge endpoints; columns are
/// non-anchor nodes ascending. Nodes with no path to the anchor cannot be
/// estimated and are listed in `excluded` instead of producing a singular
/// solve.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    /// Anchor indicator column (1 where the row's edge touches the anchor).
    pub anchor_column: DVector<f64>,
    /// 0/1 design over non-anchor nodes; one row per edge.
    pub design: DMatrix<f64>,
    /// Diagonal of the noise covariance, one variance per row.
    pub noise_diag: DVector<f64>,
    /// Stacked observations in row order.
    pub observations: DVector<f64>,
    /// Edge per row.
    pub row_edges: Vec<Edge>,
    /// Node per column.
    pub col_nodes: Vec<NodeId>,
    /// Nodes outside the anchored component, ascending.
    pub excluded: Vec<NodeId>,
}

/// Builds the stacked system from a topology and its measurements.
pub fn build_system(topology: &Topology, measurements: &MeasurementSet) -> Result<LinearSystem> {
    let component = topology.anchored_component();
    let anchor = topology.anchor();
    let col_nodes: Vec<NodeId> =
        component.iter().copied().filter(|&n| n != anchor).collect();
    let col_of: BTreeMap<NodeId, usize> =
        col_nodes.iter().enumerate().map(|(c, &n)| (n, c)).collect();
    let row_edges: Vec<Edge> = topology
        .edges()
        .keys()
        .copied()
        .filter(|e| component.contains(&e.a()))
        .collect();

    let rows = row_edges.len();
    let cols = col_nodes.len();
    let mut anchor_column = DVector::zeros(rows);
    let mut design = DMatrix::zeros(rows, cols);
    let mut noise_diag = DVector::zeros(rows);
    let mut observations = DVector::zeros(rows);
    for (row, edge) in row_edges.iter().enumerate() {
        for end in [edge.a(), edge.b()] {
            if end == anchor {
                anchor_column[row] = 1.0;
            } else {
                design[(row, col_of[&end])] = 1.0;
            }
        }
        noise_diag[row] = topology.noise_var(*edge);
        observations[row] = measurements
            .get(*edge)
            .ok_or(Error::MissingMeasurement(edge.a(), edge.b()))?;
    }

    Ok(LinearSystem {
        anchor_column,
        design,
        noise_diag,
        observations,
        row_edges,
        col_nodes,
        excluded: topology.unanchored_nodes(),
    })
}

/// Weighted normal matrix `A^T R^-1 A` and its Cholesky factor.
fn factor_normal_matrix(system: &LinearSystem) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let rows = system.design.nrows();
    let mut weighted = system.design.clone();
    for r in 0..rows {
        let w = 1.0 / system.noise_diag[r];
        weighted.row_mut(r).scale_mut(w);
    }
    let normal = system.design.transpose() * weighted;
    let chol = normal.cholesky().ok_or(Error::SingularSystem)?;
    let diag = chol.l_dirty();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..diag.nrows() {
        lo = lo.min(diag[(i, i)]);
        hi = hi.max(diag[(i, i)]);
    }
    // Cholesky pivots are sqrt-scaled, hence the sqrt on the tolerance.
    if diag.nrows() > 0 && lo <= SINGULARITY_TOL.sqrt() * hi {
        return Err(Error::SingularSystem);
    }
    Ok(chol)
}

/// Maximum-likelihood estimates for all non-anchor nodes in the anchored
/// component: `(A^T R^-1 A)^-1 A^T R^-1 (r - f1 * a1)`.
pub fn ml_estimate(system: &LinearSystem, anchor_value: f64) -> Result<BTreeMap<NodeId, f64>> {
    if system.col_nodes.is_empty() {
        return Ok(BTreeMap::new());
    }
    let chol = factor_normal_matrix(system)?;
    let adjusted = &system.observations - anchor_value * &system.anchor_column;
    let mut weighted = adjusted;
    for r in 0..weighted.nrows() {
        weighted[r] /= system.noise_diag[r];
    }
    let rhs = system.design.transpose() * weighted;
    let solution = chol.solve(&rhs);
    Ok(system.col_nodes.iter().copied().zip(solution.iter().copied()).collect())
}

/// Per-node CRLB: the diagonal of `(A^T R^-1 A)^-1`.
pub fn crlb(system: &LinearSystem) -> Result<BTreeMap<NodeId, f64>> {
    if system.col_nodes.is_empty() {
        return Ok(BTreeMap::new());
    }
    let chol = factor_normal_matrix(system)?;
    let inverse = chol.inverse();
    Ok(system
        .col_nodes
        .iter()
        .enumerate()
        .map(|(c, &n)| (n, inverse[(c, c)]))
        .collect())
}

/// Mean CRLB over non-anchor nodes of the anchored component; NaN when the
/// component is the anchor alone.
pub fn crlb_average(topology: &Topology, measurements: &MeasurementSet) -> Result<f64> {
    let system = build_system(topology, measurements)?;
    let bounds = crlb(&system)?;
    if bounds.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(bounds.values().sum::<f64>() / bounds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis;
    use crate::scenario::sample_measurements;
    use crate::testutil::{noiseless_path3, noiseless_triangle, topology_with_edges, truth_of};
    use approx::assert_relative_eq;

    #[test]
    fn triangle_design_matrix_rows_and_columns_are_ordered() {
        let s = noiseless_triangle();
        let sys = build_system(&s.topology, &s.measurements).unwrap();
        assert_eq!(sys.col_nodes, vec![2, 3]);
        assert_eq!(
            sys.row_edges,
            vec![Edge::new(1, 2), Edge::new(1, 3), Edge::new(2, 3)]
        );
        // [a1 A] = [[1,1,0],[1,0,1],[0,1,1]]
        assert_eq!(sys.anchor_column.as_slice(), &[1.0, 1.0, 0.0]);
        assert_eq!(sys.design.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_eq!(sys.design.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert_eq!(sys.design.row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        // Exactly two ones per row counting the anchor column.
        for r in 0..3 {
            let ones = sys.anchor_column[r] + sys.design.row(r).sum();
            assert_eq!(ones, 2.0);
        }
    }

    #[test]
    fn single_edge_system_is_scalar() {
        let topo = topology_with_edges(1, &[(1, 2)], 4.0);
        let truth = truth_of(1, &[(1, 1.0), (2, 2.0)]);
        let m = sample_measurements(&topo, &truth, 0, true).unwrap();
        let sys = build_system(&topo, &m).unwrap();
        assert_eq!(sys.anchor_column.as_slice(), &[1.0]);
        assert_eq!(sys.design.as_slice(), &[1.0]);
        let est = ml_estimate(&sys, 1.0).unwrap();
        assert_relative_eq!(est[&2], 2.0, epsilon = 1e-12);
        let bound = crlb(&sys).unwrap();
        assert_relative_eq!(bound[&2], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn path_design_matrix_matches_hand_construction() {
        let s = noiseless_path3();
        let sys = build_system(&s.topology, &s.measurements).unwrap();
        assert_eq!(sys.row_edges, vec![Edge::new(1, 2), Edge::new(2, 3)]);
        // A = [[1,0],[1,1]]
        assert_eq!(sys.design.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_eq!(sys.design.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
    }

    #[test]
    fn ml_recovers_truth_on_noiseless_triangle() {
        let s = noiseless_triangle();
        let sys = build_system(&s.topology, &s.measurements).unwrap();
        let est = ml_estimate(&sys, 100.0).unwrap();
        assert_relative_eq!(est[&2], 200.0, epsilon = 1e-10);
        assert_relative_eq!(est[&3], 300.0, epsilon = 1e-10);
    }

    #[test]
    fn ml_recovers_truth_on_noiseless_path() {
        let s = noiseless_path3();
        let sys = build_system(&s.topology, &s.measurements).unwrap();
        let est = ml_estimate(&sys, 1.0).unwrap();
        assert_relative_eq!(est[&2], 2.0, epsilon = 1e-10);
        assert_relative_eq!(est[&3], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn crlb_matches_hand_inverted_normal_matrices() {
        // Triangle, R = I: normal matrix [[2,1],[1,2]], inverse diag 2/3.
        let s = noiseless_triangle();
        let sys = build_system(&s.topology, &s.measurements).unwrap();
        let bound = crlb(&sys).unwrap();
        assert_relative_eq!(bound[&2], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(bound[&3], 2.0 / 3.0, epsilon = 1e-12);
        // Path, R = I: normal matrix [[2,1],[1,1]], inverse diag (1, 2).
        let p = noiseless_path3();
        let sys = build_system(&p.topology, &p.measurements).unwrap();
        let bound = crlb(&sys).unwrap();
        assert_relative_eq!(bound[&2], 1.0, epsilon = 1e-12);
        assert_relative_eq!(bound[&3], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn disconnected_nodes_are_excluded_not_singular() {
        // Node 4 floats free: reported, not solved.
        let mut topo = topology_with_edges(1, &[(1, 2), (2, 3)], 1.0);
        {
            use crate::scenario::{EdgeParams, Topology};
            use std::collections::BTreeMap;
            let mut nodes = topo.nodes().clone();
            nodes.insert(4);
            nodes.insert(5);
            let mut edges: BTreeMap<Edge, EdgeParams> = topo.edges().clone();
            edges.insert(Edge::new(4, 5), EdgeParams { noise_var: 1.0, reliability: 1.0 });
            topo = Topology::new(1, nodes, edges).unwrap();
        }
        let truth = truth_of(1, &[(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0), (5, 5.0)]);
        let m = sample_measurements(&topo, &truth, 0, true).unwrap();
        let sys = build_system(&topo, &m).unwrap();
        assert_eq!(sys.excluded, vec![4, 5]);
        assert_eq!(sys.col_nodes, vec![2, 3]);
        let est = ml_estimate(&sys, 1.0).unwrap();
        assert_eq!(est.len(), 2);
    }

    #[test]
    fn ml_is_unbiased_and_efficient_on_redraws() {
        // 10^4 seeded redraws on the unit-noise triangle: per-node mean error
        // within 3 sigma of zero, empirical MSE within 10% of the CRLB.
        let s = noiseless_triangle();
        let trials = 10_000u64;
        let sys0 = build_system(&s.topology, &s.measurements).unwrap();
        let bound = crlb(&sys0).unwrap();
        let mut sums: std::collections::BTreeMap<u32, f64> = Default::default();
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for seed in 0..trials {
            let m = sample_measurements(&s.topology, &s.truth, seed, false).unwrap();
            let sys = build_system(&s.topology, &m).unwrap();
            let est = ml_estimate(&sys, 100.0).unwrap();
            for (&node, &value) in &est {
                *sums.entry(node).or_default() += value - s.truth.get(node).unwrap();
                pairs.push((value, s.truth.get(node).unwrap()));
            }
        }
        for (node, sum) in sums {
            let mean_error = sum / trials as f64;
            let limit = 3.0 * (bound[&node] / trials as f64).sqrt();
            assert!(mean_error.abs() < limit, "node {node}: bias {mean_error} vs {limit}");
        }
        // Same MSE kernel the run metrics use.
        let mse = analysis::mse_over(pairs.into_iter(), 1.0).unwrap();
        let crlb_avg = (bound[&2] + bound[&3]) / 2.0;
        assert!((mse - crlb_avg).abs() / crlb_avg < 0.10, "mse {mse} vs crlb {crlb_avg}");
    }

    #[test]
    fn crlb_scales_linearly_with_noise_scale() {
        let topo = topology_with_edges(1, &[(1, 2), (1, 3), (2, 3), (2, 4), (3, 4)], 1.5);
        let scaled = topology_with_edges(1, &[(1, 2), (1, 3), (2, 3), (2, 4), (3, 4)], 1.5 * 4.0);
        let truth = truth_of(1, &[(1, 0.0), (2, 1.0), (3, 2.0), (4, 3.0)]);
        let m = sample_measurements(&topo, &truth, 0, true).unwrap();
        let ms = sample_measurements(&scaled, &truth, 0, true).unwrap();
        let b = crlb(&build_system(&topo, &m).unwrap()).unwrap();
        let bs = crlb(&build_system(&scaled, &ms).unwrap()).unwrap();
        for (node, value) in b {
            assert_relative_eq!(bs[&node], 4.0 * value, epsilon = 1e-12);
        }
    }
}
