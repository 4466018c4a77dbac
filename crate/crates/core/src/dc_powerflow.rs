//! DC power flow on a possibly islanded network.
//!
//! The nodal admittance matrix `Y_b = Aᵀ diag(Y_p) A` is singular (and, once
//! branches trip, block-singular). Angles are obtained through an
//! island-aware generalized inverse: every island keeps its lowest-id bus as
//! reference, that bus's row and column are deleted, the remaining block is
//! inverted, and the per-island results are summed back into an
//! `n_buses x n_buses` matrix. Reference buses therefore get angle zero and
//! absorb whatever injection imbalance their island carries.

use nalgebra::{DMatrix, DVector};
use petgraph::unionfind::UnionFind;
use serde::Serialize;

use crate::error::SolveError;
use crate::grid_model::{IncidenceMatrix, Network};

/// Reduced blocks whose smallest LU pivot falls below this are rejected.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Default fraction of base admittance below which a branch counts as dead.
pub const DEFAULT_LIVE_THRESHOLD: f64 = 0.01;

/// Connected components over live branches. Bus indices are 0-based; each
/// island is sorted ascending and its first entry is the reference bus.
/// Islands are ordered by reference bus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IslandPartition {
    islands: Vec<Vec<usize>>,
    island_of: Vec<usize>,
}

impl IslandPartition {
    /// Builds a partition from explicit islands (0-based bus indices).
    /// Panics if the islands are not a disjoint cover of `0..n_buses`.
    pub fn from_islands(n_buses: usize, mut islands: Vec<Vec<usize>>) -> Self {
        for island in &mut islands {
            island.sort_unstable();
        }
        islands.retain(|i| !i.is_empty());
        islands.sort_by_key(|i| i[0]);
        let mut island_of = vec![usize::MAX; n_buses];
        for (q, island) in islands.iter().enumerate() {
            for &bus in island {
                assert_eq!(island_of[bus], usize::MAX, "bus {bus} appears in two islands");
                island_of[bus] = q;
            }
        }
        assert!(island_of.iter().all(|&q| q != usize::MAX), "islands do not cover all buses");
        Self { islands, island_of }
    }

    /// Single island containing every bus.
    pub fn connected(n_buses: usize) -> Self {
        Self::from_islands(n_buses, vec![(0..n_buses).collect()])
    }

    pub fn islands(&self) -> &[Vec<usize>] {
        &self.islands
    }

    pub fn count(&self) -> usize {
        self.islands.len()
    }

    pub fn island_of(&self, bus: usize) -> usize {
        self.island_of[bus]
    }

    pub fn reference_buses(&self) -> Vec<usize> {
        self.islands.iter().map(|i| i[0]).collect()
    }

    pub fn is_reference(&self, bus: usize) -> bool {
        self.islands[self.island_of[bus]][0] == bus
    }

    /// Islands as 1-based bus ids, the form used in reports.
    pub fn to_bus_ids(&self) -> Vec<Vec<usize>> {
        self.islands.iter().map(|i| i.iter().map(|b| b + 1).collect()).collect()
    }
}

/// Bus angles and branch flows for one injection vector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowSolution {
    pub theta: DVector<f64>,
    pub flows: DVector<f64>,
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), SolveError> {
    if got == expected {
        Ok(())
    } else {
        Err(SolveError::Dimension { what, got, expected })
    }
}

/// `Y_b = Aᵀ diag(Y_p) A`.
pub fn nodal_admittance(a: &IncidenceMatrix, y_p: &DVector<f64>) -> Result<DMatrix<f64>, SolveError> {
    check_len("admittance vector", y_p.len(), a.n_branches())?;
    let a = a.matrix();
    let mut weighted = a.clone();
    for (mut row, &y) in weighted.row_iter_mut().zip(y_p.iter()) {
        row *= y;
    }
    Ok(a.transpose() * weighted)
}

/// Branch `r` is live iff `y_p[r] >= live_threshold * base_admittance[r]`.
pub fn is_live(net: &Network, y_p: &DVector<f64>, live_threshold: f64, r: usize) -> bool {
    y_p[r] >= live_threshold * net.branches()[r].admittance_pu
}

pub fn find_islands(net: &Network, y_p: &DVector<f64>, live_threshold: f64) -> IslandPartition {
    let n = net.n_buses();
    let mut uf = UnionFind::<usize>::new(n);
    for r in 0..net.n_branches() {
        if is_live(net, y_p, live_threshold, r) {
            let (from, to) = net.endpoints(r);
            uf.union(from, to);
        }
    }
    let labels = uf.into_labeling();
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (bus, &root) in labels.iter().enumerate() {
        by_root[root].push(bus);
    }
    IslandPartition::from_islands(n, by_root)
}

/// Island-aware generalized inverse of a nodal admittance matrix.
///
/// Single-bus islands contribute nothing. A reduced block whose smallest LU
/// pivot is below [`PIVOT_TOLERANCE`] is reported as singular.
pub fn pseudo_inverse(y_b: &DMatrix<f64>, partition: &IslandPartition) -> Result<DMatrix<f64>, SolveError> {
    let n = y_b.nrows();
    check_len("nodal admittance columns", y_b.ncols(), n)?;
    check_len("partition buses", partition.island_of.len(), n)?;
    let mut out = DMatrix::zeros(n, n);
    for island in partition.islands() {
        let rest = &island[1..];
        if rest.is_empty() {
            continue;
        }
        let reduced = y_b.select_rows(rest).select_columns(rest);
        let lu = reduced.lu();
        let pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, p| m.min(p.abs()));
        if pivot.is_nan() || pivot < PIVOT_TOLERANCE {
            return Err(SolveError::SingularIsland { reference_bus: island[0] + 1, pivot });
        }
        let inv = lu.try_inverse().ok_or(SolveError::SingularIsland { reference_bus: island[0] + 1, pivot })?;
        for (i, &bi) in rest.iter().enumerate() {
            for (j, &bj) in rest.iter().enumerate() {
                out[(bi, bj)] = inv[(i, j)];
            }
        }
    }
    Ok(out)
}

/// `theta = Y_b^{-1*} P_inj`, `P = diag(Y_p) A theta`.
pub fn solve_flow(
    net: &Network,
    y_p: &DVector<f64>,
    injections: &DVector<f64>,
    partition: &IslandPartition,
) -> Result<FlowSolution, SolveError> {
    check_len("injection vector", injections.len(), net.n_buses())?;
    let a = crate::grid_model::incidence(net);
    let y_b = nodal_admittance(&a, y_p)?;
    let pinv = pseudo_inverse(&y_b, partition)?;
    let theta = pinv * injections;
    let flows = branch_flows(net, y_p, &theta);
    Ok(FlowSolution { theta, flows })
}

/// `diag(Y_p) A theta` without forming `A`.
pub fn branch_flows(net: &Network, y_p: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        net.n_branches(),
        (0..net.n_branches()).map(|r| {
            let (from, to) = net.endpoints(r);
            y_p[r] * (theta[from] - theta[to])
        }),
    )
}
