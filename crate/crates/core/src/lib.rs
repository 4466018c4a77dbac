//! Cascading branch-outage simulation for DC-approximated transmission
//! networks, and identification of the worst-case injection fluctuation
//! schedule on selected buses.
//!
//! Module layout follows the data flow:
//! [`grid_model`] → [`dc_powerflow`] → [`cascade_sim`] → [`worst_case_id`],
//! with [`cli`] on top.

pub mod cascade_sim;
pub mod cli;
pub mod dc_powerflow;
pub mod error;
pub mod grid_model;
pub mod newton;
pub mod worst_case_id;

pub use cascade_sim::{
    cascade_step, simulate, trip_factor, CascadeReport, CascadeState, ControlSchedule, Epsilon, ScheduleFile,
    StepOutcome, StepReport, TripConfig, TripMode,
};
pub use dc_powerflow::{find_islands, nodal_admittance, pseudo_inverse, solve_flow, FlowSolution, IslandPartition};
pub use error::{CaseError, SolveError};
pub use grid_model::{
    incidence, parse_case, selection, Branch, Bus, BusKind, IncidenceMatrix, Network, SelectionMatrix,
};
pub use worst_case_id::{
    control_from_state, costates, dg_dp, dy_du, dy_dy, dym_dyk1, identify, identify_from, residual, CostateSequence,
    DerivativeMode, IdentificationConfig, IdentifiedSolution, Trajectory,
};
