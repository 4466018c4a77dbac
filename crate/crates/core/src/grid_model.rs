//! Network data model, JSON case ingestion and the structural matrices
//! (branch-to-bus incidence, bus selection) shared by the other modules.
//!
//! Bus ids are 1-based in case files and 0-based everywhere inside the
//! crate. Branch order is file order and is part of the external contract:
//! every per-branch vector (flows, thresholds, admittances) follows it.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CaseError;

fn default_base_mva() -> f64 {
    100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Load,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub injection_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub admittance_pu: f64,
    pub threshold_pu: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseDocument {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    #[serde(default = "default_base_mva")]
    base_mva: f64,
}

/// Immutable grid description.
///
/// Buses are stored sorted by id, so bus `id` lives at index `id - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    base_mva: f64,
}

impl Network {
    /// Builds and validates a network. Buses may be given in any order but
    /// their ids must be exactly `1..=n_buses`.
    pub fn new(mut buses: Vec<Bus>, branches: Vec<Branch>, base_mva: f64) -> Result<Self, CaseError> {
        if buses.is_empty() {
            return Err(CaseError::Validation("case has no buses".into()));
        }
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(CaseError::Validation(format!("base_mva must be positive, got {base_mva}")));
        }
        buses.sort_by_key(|b| b.id);
        for (idx, bus) in buses.iter().enumerate() {
            if bus.id != idx + 1 {
                return Err(CaseError::Validation(format!(
                    "bus ids must be unique and cover 1..={} (found id {} at sorted position {})",
                    buses.len(),
                    bus.id,
                    idx + 1
                )));
            }
            if !bus.injection_pu.is_finite() {
                return Err(CaseError::Validation(format!("bus {} has a non-finite injection", bus.id)));
            }
        }
        let n_buses = buses.len();
        for (r, br) in branches.iter().enumerate() {
            let branch_id = r + 1;
            for end in [br.from, br.to] {
                if end == 0 || end > n_buses {
                    return Err(CaseError::Validation(format!(
                        "branch {branch_id} references bus {end}, but the case has buses 1..={n_buses}"
                    )));
                }
            }
            if br.from == br.to {
                return Err(CaseError::Validation(format!("branch {branch_id} is a self-loop on bus {}", br.from)));
            }
            if !(br.admittance_pu.is_finite() && br.admittance_pu > 0.0) {
                return Err(CaseError::Validation(format!(
                    "branch {branch_id} admittance must be positive, got {}",
                    br.admittance_pu
                )));
            }
            if !(br.threshold_pu.is_finite() && br.threshold_pu > 0.0) {
                return Err(CaseError::Validation(format!(
                    "branch {branch_id} threshold must be positive, got {}",
                    br.threshold_pu
                )));
            }
        }
        Ok(Self { buses, branches, base_mva })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    /// 0-based (from, to) bus indices of branch `r`.
    pub fn endpoints(&self, r: usize) -> (usize, usize) {
        let br = &self.branches[r];
        (br.from - 1, br.to - 1)
    }

    pub fn base_admittances(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_branches(), self.branches.iter().map(|b| b.admittance_pu))
    }

    pub fn thresholds(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_branches(), self.branches.iter().map(|b| b.threshold_pu))
    }

    pub fn injections(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_buses(), self.buses.iter().map(|b| b.injection_pu))
    }

    pub fn bus_kind(&self, idx: usize) -> BusKind {
        self.buses[idx].kind
    }

    /// Serializes back to the JSON case schema.
    pub fn to_json(&self) -> String {
        let doc = CaseDocument { buses: self.buses.clone(), branches: self.branches.clone(), base_mva: self.base_mva };
        serde_json::to_string_pretty(&doc).expect("case document serializes")
    }
}

/// Parses and validates a JSON case document.
pub fn parse_case(text: &str) -> Result<Network, CaseError> {
    let doc: CaseDocument = serde_json::from_str(text)?;
    Network::new(doc.buses, doc.branches, doc.base_mva)
}

/// Branch-to-bus incidence matrix, `n_branches x n_buses`, +1 at the
/// from-bus and -1 at the to-bus of every row.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceMatrix(DMatrix<f64>);

impl IncidenceMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n_branches(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_buses(&self) -> usize {
        self.0.ncols()
    }
}

pub fn incidence(net: &Network) -> IncidenceMatrix {
    let mut a = DMatrix::zeros(net.n_branches(), net.n_buses());
    for r in 0..net.n_branches() {
        let (from, to) = net.endpoints(r);
        a[(r, from)] = 1.0;
        a[(r, to)] = -1.0;
    }
    IncidenceMatrix(a)
}

/// Diagonal 0/1 bus-selection matrix, stored as a mask over bus indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMatrix {
    mask: Vec<bool>,
}

impl SelectionMatrix {
    pub fn empty(n_buses: usize) -> Self {
        Self { mask: vec![false; n_buses] }
    }

    pub fn n_buses(&self) -> usize {
        self.mask.len()
    }

    pub fn is_selected(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&s| s)
    }

    /// Selected 0-based bus indices, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter_map(|(i, &s)| s.then_some(i)).collect()
    }

    /// Selected 1-based bus ids, ascending.
    pub fn bus_ids(&self) -> Vec<usize> {
        self.indices().into_iter().map(|i| i + 1).collect()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.mask.len(),
            self.mask.iter().map(|&s| if s { 1.0 } else { 0.0 }),
        ))
    }

    /// `Λ·u`: zeroes the entries of unselected buses.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(u.len(), u.iter().zip(&self.mask).map(|(&v, &s)| if s { v } else { 0.0 }))
    }
}

/// Builds `Λ` from 1-based bus ids.
pub fn selection(net: &Network, bus_ids: &[usize]) -> Result<SelectionMatrix, CaseError> {
    let mut sel = SelectionMatrix::empty(net.n_buses());
    let ids: BTreeSet<usize> = bus_ids.iter().copied().collect();
    for id in ids {
        if id == 0 || id > net.n_buses() {
            return Err(CaseError::UnknownBus(id));
        }
        sel.mask[id - 1] = true;
    }
    Ok(sel)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{
        "buses": [
            {"id": 1, "kind": "generator", "injection_pu": 1.0},
            {"id": 2, "kind": "load", "injection_pu": -1.0}
        ],
        "branches": [{"from": 1, "to": 2, "admittance_pu": 1.0, "threshold_pu": 1.5}]
    }"#;

    fn triangle() -> Network {
        let buses = (1..=3).map(|id| Bus { id, kind: BusKind::Load, injection_pu: 0.0 }).collect();
        let br = |from, to| Branch { from, to, admittance_pu: 1.0, threshold_pu: 1.0 };
        Network::new(buses, vec![br(1, 2), br(2, 3), br(1, 3)], 100.0).unwrap()
    }

    #[test]
    fn two_bus_case_parses() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.n_branches(), 1);
        assert_eq!(net.base_mva(), 100.0);
        assert_eq!(net.injections().as_slice(), &[1.0, -1.0]);
        assert_eq!(net.bus_kind(0), BusKind::Generator);
    }

    #[test]
    fn out_of_range_bus_is_rejected() {
        let text = TWO_BUS.replace(r#""to": 2"#, r#""to": 99"#);
        let err = parse_case(&text).unwrap_err();
        assert!(matches!(err, CaseError::Validation(ref m) if m.contains("branch 1") && m.contains("99")));
    }

    #[test]
    fn self_loop_and_nonpositive_values_are_rejected() {
        let looped = TWO_BUS.replace(r#""to": 2"#, r#""to": 1"#);
        assert!(matches!(parse_case(&looped), Err(CaseError::Validation(_))));
        let zero_y = TWO_BUS.replace(r#""admittance_pu": 1.0"#, r#""admittance_pu": 0.0"#);
        assert!(matches!(parse_case(&zero_y), Err(CaseError::Validation(_))));
        let neg_c = TWO_BUS.replace(r#""threshold_pu": 1.5"#, r#""threshold_pu": -1"#);
        assert!(matches!(parse_case(&neg_c), Err(CaseError::Validation(_))));
    }

    #[test]
    fn duplicate_bus_ids_are_rejected() {
        let text = TWO_BUS.replace(r#""id": 2"#, r#""id": 1"#);
        assert!(matches!(parse_case(&text), Err(CaseError::Validation(_))));
    }

    #[test]
    fn unknown_keys_and_syntax_errors_carry_position() {
        let extra = TWO_BUS.replacen('{', r#"{"extra": 1,"#, 1);
        assert!(matches!(parse_case(&extra), Err(CaseError::Parse { .. })));
        let broken = "{\n  \"buses\": [\n    {\"id\": 1,, }\n  ]\n}";
        match parse_case(broken) {
            Err(CaseError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn incidence_two_bus() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(incidence(&net).matrix(), &DMatrix::from_row_slice(1, 2, &[1.0, -1.0]));
    }

    #[test]
    fn incidence_triangle() {
        let a = incidence(&triangle());
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0, -1.0]);
        assert_eq!(a.matrix(), &expected);
    }

    #[test]
    fn selection_from_ids() {
        let net = triangle();
        let sel = selection(&net, &[1, 3]).unwrap();
        assert_eq!(sel.indices(), vec![0, 2]);
        assert_eq!(sel.matrix(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0])));
        assert!(selection(&net, &[]).unwrap().is_empty());
        assert!(matches!(selection(&net, &[4]), Err(CaseError::UnknownBus(4))));
        assert!(matches!(selection(&net, &[0]), Err(CaseError::UnknownBus(0))));
    }

    #[test]
    fn selection_apply_masks_unselected() {
        let sel = selection(&triangle(), &[2]).unwrap();
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(sel.apply(&u).as_slice(), &[0.0, 2.0, 0.0]);
    }
}
