//! Cascading branch-outage dynamics.
//!
//! One cascading step solves the DC flow under the perturbed injections
//! `P_b + Λ Uᵏ`, evaluates the trip factor of every branch and scales the
//! branch admittances by it: `Yᵏ⁺¹ = G(Pᵏ) ∘ Yᵏ`. All overloaded branches of a
//! step are severed simultaneously.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dc_powerflow::{find_islands, is_live, solve_flow, IslandPartition, DEFAULT_LIVE_THRESHOLD};
use crate::error::{CaseError, SolveError};
use crate::grid_model::{selection, Network, SelectionMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripMode {
    /// Differentiable logistic surrogate of the breaker.
    Smooth,
    /// Breaker opens iff `|P| > c`.
    Hard,
}

impl std::str::FromStr for TripMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smooth" => Ok(TripMode::Smooth),
            "hard" => Ok(TripMode::Hard),
            other => Err(format!("unknown trip mode '{other}' (expected smooth or hard)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripConfig {
    pub sigma: f64,
    pub mode: TripMode,
    /// Islanding cutoff, as a fraction of each branch's base admittance.
    pub live_threshold: f64,
}

impl TripConfig {
    pub fn smooth(sigma: f64) -> Self {
        Self { sigma, mode: TripMode::Smooth, live_threshold: DEFAULT_LIVE_THRESHOLD }
    }

    pub fn hard() -> Self {
        Self { sigma: 1.0, mode: TripMode::Hard, live_threshold: DEFAULT_LIVE_THRESHOLD }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(SolveError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.live_threshold > 0.0 && self.live_threshold < 1.0) {
            return Err(SolveError::Config(format!("live threshold must lie in (0, 1), got {}", self.live_threshold)));
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Returns `(g, 1 - g)` for `g = 1 / (1 + exp(σ(P² - c²)))`, each computed
/// without cancellation.
fn smooth_factor_pair(p: f64, c: f64, sigma: f64) -> (f64, f64) {
    let z = sigma * (p * p - c * c);
    (logistic(-z), logistic(z))
}

/// Fraction of admittance a branch keeps after carrying flow `p` against
/// threshold `c`.
pub fn trip_factor(p: f64, c: f64, cfg: &TripConfig) -> f64 {
    match cfg.mode {
        TripMode::Smooth => smooth_factor_pair(p, c, cfg.sigma).0,
        TripMode::Hard => {
            if p.abs() <= c {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// `∂g/∂P = -2σP·g(1-g)` for the smooth trip factor.
pub fn trip_factor_slope(p: f64, c: f64, sigma: f64) -> f64 {
    let (g, h) = smooth_factor_pair(p, c, sigma);
    -2.0 * sigma * p * g * h
}

/// `∂²g/∂P²` for the smooth trip factor.
pub fn trip_factor_curvature(p: f64, c: f64, sigma: f64) -> f64 {
    let (g, h) = smooth_factor_pair(p, c, sigma);
    let gh = g * h;
    // d/dP [g(1-g)] = g'(1 - 2g)
    let slope = -2.0 * sigma * p * gh;
    -2.0 * sigma * gh - 2.0 * sigma * p * slope * (h - g)
}

/// Control-penalty weight: one value for all steps, or one per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Scalar(f64),
    PerStep(Vec<f64>),
}

impl Epsilon {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            Epsilon::Scalar(e) => *e,
            Epsilon::PerStep(v) => v[k],
        }
    }

    pub fn validate(&self, m: usize) -> Result<(), SolveError> {
        let values: Vec<f64> = match self {
            Epsilon::Scalar(e) => vec![*e],
            Epsilon::PerStep(v) => {
                if v.len() != m {
                    return Err(SolveError::Dimension { what: "per-step epsilon", got: v.len(), expected: m });
                }
                v.clone()
            }
        };
        match values.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            Some(bad) => Err(SolveError::Config(format!("epsilon must be positive, got {bad}"))),
            None => Ok(()),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            Epsilon::Scalar(e) => Epsilon::Scalar(e * factor),
            Epsilon::PerStep(v) => Epsilon::PerStep(v.iter().map(|e| e * factor).collect()),
        }
    }
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::Scalar(10.0)
    }
}

/// Fluctuation vectors `U⁰ … U^{m-1}` (full bus length, zero off the
/// selection) together with the selection `Λ` they act through.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSchedule {
    selection: SelectionMatrix,
    controls: Vec<DVector<f64>>,
}

impl ControlSchedule {
    pub fn zeros(selection: SelectionMatrix, m: usize) -> Self {
        let n = selection.n_buses();
        Self { selection, controls: vec![DVector::zeros(n); m] }
    }

    /// Builds a schedule from full-length vectors; entries at unselected
    /// buses are discarded.
    pub fn from_vectors(selection: SelectionMatrix, controls: Vec<DVector<f64>>) -> Result<Self, SolveError> {
        for u in &controls {
            if u.len() != selection.n_buses() {
                return Err(SolveError::Dimension {
                    what: "control vector",
                    got: u.len(),
                    expected: selection.n_buses(),
                });
            }
        }
        let controls = controls.iter().map(|u| selection.apply(u)).collect();
        Ok(Self { selection, controls })
    }

    /// Builds a schedule from per-step values listed for the selected buses
    /// in ascending bus order.
    pub fn from_selected_values(selection: SelectionMatrix, values: &[Vec<f64>]) -> Result<Self, SolveError> {
        let idx = selection.indices();
        let mut controls = Vec::with_capacity(values.len());
        for row in values {
            if row.len() != idx.len() {
                return Err(SolveError::Dimension {
                    what: "per-step selected controls",
                    got: row.len(),
                    expected: idx.len(),
                });
            }
            let mut u = DVector::zeros(selection.n_buses());
            for (&i, &v) in idx.iter().zip(row) {
                u[i] = v;
            }
            controls.push(u);
        }
        Ok(Self { selection, controls })
    }

    pub fn selection(&self) -> &SelectionMatrix {
        &self.selection
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn control(&self, k: usize) -> &DVector<f64> {
        &self.controls[k]
    }

    pub fn controls(&self) -> &[DVector<f64>] {
        &self.controls
    }

    pub fn selected_values(&self) -> Vec<Vec<f64>> {
        let idx = self.selection.indices();
        self.controls.iter().map(|u| idx.iter().map(|&i| u[i]).collect()).collect()
    }

    /// `Σ_k ε_k ‖Uᵏ‖²` over the first `m` steps.
    pub fn penalty(&self, epsilon: &Epsilon, m: usize) -> f64 {
        self.controls[..m].iter().enumerate().map(|(k, u)| epsilon.at(k) * u.norm_squared()).sum()
    }
}

/// On-disk schedule: selected bus ids and, per step, one value per selected
/// bus in ascending id order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub select_bus: Vec<usize>,
    pub controls: Vec<Vec<f64>>,
}

impl ScheduleFile {
    pub fn into_schedule(self, net: &Network) -> anyhow::Result<ControlSchedule> {
        let sel = selection(net, &self.select_bus).map_err(|e: CaseError| anyhow::anyhow!(e))?;
        Ok(ControlSchedule::from_selected_values(sel, &self.controls)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeState {
    pub step: usize,
    pub y_p: DVector<f64>,
}

impl CascadeState {
    pub fn initial(net: &Network) -> Self {
        Self { step: 0, y_p: net.base_admittances() }
    }
}

/// Result of advancing one cascading step from state `k`.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next: CascadeState,
    /// `Pᵏ`, computed with the true admittances `Yᵏ`.
    pub flows: DVector<f64>,
    /// Partition of `Yᵏ` used for the flow solve.
    pub partition: IslandPartition,
    /// 0-based branches live under `Yᵏ` and dead under `Yᵏ⁺¹`.
    pub tripped: Vec<usize>,
}

/// Flows under `Y` and injections `inj`, followed by the admittance update.
pub(crate) fn advance(
    net: &Network,
    y_p: &DVector<f64>,
    injections: &DVector<f64>,
    cfg: &TripConfig,
) -> Result<(DVector<f64>, DVector<f64>, IslandPartition), SolveError> {
    let partition = find_islands(net, y_p, cfg.live_threshold);
    let flows = solve_flow(net, y_p, injections, &partition)?.flows;
    let thresholds = net.thresholds();
    let y_next =
        DVector::from_iterator(y_p.len(), (0..y_p.len()).map(|r| trip_factor(flows[r], thresholds[r], cfg) * y_p[r]));
    Ok((y_next, flows, partition))
}

pub fn cascade_step(
    net: &Network,
    state: &CascadeState,
    u_k: &DVector<f64>,
    selection: &SelectionMatrix,
    cfg: &TripConfig,
) -> Result<StepOutcome, SolveError> {
    if u_k.len() != net.n_buses() {
        return Err(SolveError::Dimension { what: "control vector", got: u_k.len(), expected: net.n_buses() });
    }
    let injections = net.injections() + selection.apply(u_k);
    let (y_next, flows, partition) = advance(net, &state.y_p, &injections, cfg).map_err(|e| e.at_step(state.step))?;
    let tripped = (0..net.n_branches())
        .filter(|&r| is_live(net, &state.y_p, cfg.live_threshold, r) && !is_live(net, &y_next, cfg.live_threshold, r))
        .collect();
    Ok(StepOutcome { next: CascadeState { step: state.step + 1, y_p: y_next }, flows, partition, tripped })
}

/// Runs the cascade from `y_start` through `controls` (full-length vectors)
/// and returns the final admittances.
pub(crate) fn propagate(
    net: &Network,
    y_start: &DVector<f64>,
    controls: &[DVector<f64>],
    selection: &SelectionMatrix,
    cfg: &TripConfig,
) -> Result<DVector<f64>, SolveError> {
    let base = net.injections();
    let mut y = y_start.clone();
    for u in controls {
        y = advance(net, &y, &(&base + selection.apply(u)), cfg)?.0;
    }
    Ok(y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub k: usize,
    /// 1-based ids of branches severed by this step.
    pub tripped: Vec<usize>,
    /// `Pᵏ`, reported as exactly zero on branches already dead under `Yᵏ`.
    pub flows: Vec<f64>,
    /// `Yᵏ⁺¹`.
    pub y_p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub steps: Vec<StepReport>,
    /// Terminal islands as 1-based bus ids; the first id of each is its
    /// reference bus.
    pub islands: Vec<Vec<usize>>,
    pub island_count: usize,
    pub terminal_norm_sq: f64,
    #[serde(rename = "cost_J")]
    pub cost_j: f64,
}

impl CascadeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per (step, branch): `step,branch_id,flow,y_p,tripped`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,branch_id,flow,y_p,tripped\n");
        for step in &self.steps {
            for (r, (flow, y)) in step.flows.iter().zip(&step.y_p).enumerate() {
                let tripped = step.tripped.contains(&(r + 1)) as u8;
                out.push_str(&format!("{},{},{},{},{}\n", step.k, r + 1, flow, y, tripped));
            }
        }
        out
    }

    /// Bus ids that share an island with `bus_id`.
    pub fn island_containing(&self, bus_id: usize) -> Option<&[usize]> {
        self.islands.iter().find(|i| i.contains(&bus_id)).map(Vec::as_slice)
    }
}

/// Runs `m` cascading steps from the base admittances under `schedule`.
pub fn simulate(
    net: &Network,
    schedule: &ControlSchedule,
    m: usize,
    cfg: &TripConfig,
    epsilon: &Epsilon,
) -> Result<CascadeReport, SolveError> {
    cfg.validate()?;
    if schedule.len() < m {
        return Err(SolveError::Dimension { what: "control schedule", got: schedule.len(), expected: m });
    }
    if m > 0 {
        epsilon.validate(m)?;
    }
    let mut state = CascadeState::initial(net);
    let mut steps = Vec::with_capacity(m);
    for k in 0..m {
        let outcome = cascade_step(net, &state, schedule.control(k), schedule.selection(), cfg)?;
        let flows = (0..net.n_branches())
            .map(|r| if is_live(net, &state.y_p, cfg.live_threshold, r) { outcome.flows[r] } else { 0.0 })
            .collect();
        steps.push(StepReport {
            k,
            tripped: outcome.tripped.iter().map(|r| r + 1).collect(),
            flows,
            y_p: outcome.next.y_p.iter().copied().collect(),
        });
        state = outcome.next;
    }
    let partition = find_islands(net, &state.y_p, cfg.live_threshold);
    let terminal_norm_sq = state.y_p.norm_squared();
    Ok(CascadeReport {
        steps,
        islands: partition.to_bus_ids(),
        island_count: partition.count(),
        terminal_norm_sq,
        cost_j: terminal_norm_sq + schedule.penalty(epsilon, m),
    })
}
