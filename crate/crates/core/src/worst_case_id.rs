//! Worst-case fluctuation identification.
//!
//! The fluctuation schedule `Uᵏ` on the selected buses is treated as the
//! control input of the smooth cascade and chosen to minimise
//! `J = ‖Yᵐ‖² + Σ_k ε_k ‖Uᵏ‖²`. Stationarity gives, for every step,
//!
//! ```text
//! Uᵏ = -(1/ε_k) (∂Yᵏ⁺¹/∂Uᵏ)ᵀ (∂Yᵐ/∂Yᵏ⁺¹)ᵀ Yᵐ
//! ∂Yᵏ⁺¹/∂Uᵏ = diag(Yᵏ) ∂G/∂P diag(Yᵏ) A (Aᵀ diag(Yᵏ) A)^{-1*} Λ
//! ```
//!
//! and substituting it into the state equation leaves an algebraic system in
//! the stacked admittances `Y¹ … Yᵐ`, solved here by damped Newton.
//!
//! `∂G/∂P` is evaluated at `Pᵏ`, which depends on `Uᵏ` itself, so the
//! selected-bus entries of the controls are carried as extra unknowns next
//! to the admittances and the control law enters as its own residual block;
//! see [`residual`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cascade_sim::{propagate, simulate, trip_factor, trip_factor_slope, ControlSchedule, Epsilon, TripConfig};
use crate::dc_powerflow::{find_islands, nodal_admittance, pseudo_inverse, IslandPartition, DEFAULT_LIVE_THRESHOLD};
use crate::error::SolveError;
use crate::grid_model::{incidence, Network, SelectionMatrix};
use crate::newton::{self, NewtonOptions};

/// How `∂G/∂P` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Diagonal of the closed-form slope of the trip factor.
    Analytic,
    /// Column-wise forward differences with step `delta`.
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentificationConfig {
    pub epsilon: Epsilon,
    /// Number of cascading steps `m`.
    pub steps: usize,
    pub sigma: f64,
    /// Finite-difference step for `∂Yᵐ/∂Yᵏ⁺¹`, the Newton Jacobian and, in
    /// finite-difference mode, `∂G/∂P`.
    pub delta: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub max_backtracks: usize,
    pub live_threshold: f64,
    pub derivative: DerivativeMode,
    pub threads: usize,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::Scalar(10.0),
            steps: 4,
            sigma: 1.0,
            delta: 0.01,
            newton_tol: 1e-9,
            newton_max_iter: 100,
            max_backtracks: 30,
            live_threshold: DEFAULT_LIVE_THRESHOLD,
            derivative: DerivativeMode::Analytic,
            threads: 1,
        }
    }
}

impl IdentificationConfig {
    pub fn trip_config(&self) -> TripConfig {
        TripConfig { live_threshold: self.live_threshold, ..TripConfig::smooth(self.sigma) }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if self.steps == 0 {
            return Err(SolveError::Config("at least one cascading step is required".into()));
        }
        self.epsilon.validate(self.steps)?;
        self.trip_config().validate()?;
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(SolveError::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.newton_tol.is_finite() && self.newton_tol > 0.0) {
            return Err(SolveError::Config(format!("Newton tolerance must be positive, got {}", self.newton_tol)));
        }
        Ok(())
    }
}

/// A smooth-cascade trajectory: `y[0..=m]`, and per step the flows and the
/// control that produced `y[k+1]` from `y[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub y: Vec<DVector<f64>>,
    pub flows: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn terminal(&self) -> &DVector<f64> {
        &self.y[self.steps()]
    }

    /// Forward smooth simulation from the base admittances.
    pub fn simulate(
        net: &Network,
        sel: &SelectionMatrix,
        controls: &[DVector<f64>],
        cfg: &IdentificationConfig,
    ) -> Result<Self, SolveError> {
        let trip = cfg.trip_config();
        let mut y = vec![net.base_admittances()];
        let mut flows = Vec::with_capacity(controls.len());
        for (k, u) in controls.iter().enumerate() {
            let inj = net.injections() + sel.apply(u);
            let (next, p, _) = crate::cascade_sim::advance(net, &y[k], &inj, &trip).map_err(|e| e.at_step(k))?;
            y.push(next);
            flows.push(p);
        }
        Ok(Self { y, flows, controls: controls.iter().map(|u| sel.apply(u)).collect() })
    }
}

/// Per-step linearisation data at a fixed admittance vector.
struct StepLinearization {
    partition: IslandPartition,
    /// `(Aᵀ diag(Y) A)^{-1*}`
    pinv: DMatrix<f64>,
}

impl StepLinearization {
    fn at(net: &Network, y: &DVector<f64>, live_threshold: f64) -> Result<Self, SolveError> {
        let partition = find_islands(net, y, live_threshold);
        let y_b = nodal_admittance(&incidence(net), y)?;
        let pinv = pseudo_inverse(&y_b, &partition)?;
        Ok(Self { partition, pinv })
    }

    /// Row `r` of `A · pinv`, i.e. `pinv[from] - pinv[to]`.
    fn a_pinv(&self, net: &Network) -> DMatrix<f64> {
        let nb = net.n_buses();
        DMatrix::from_fn(net.n_branches(), nb, |r, j| {
            let (f, t) = net.endpoints(r);
            self.pinv[(f, j)] - self.pinv[(t, j)]
        })
    }
}

/// Diagonal of `∂G/∂P` (exact for the elementwise trip factor).
fn trip_slopes(flows: &DVector<f64>, net: &Network, cfg: &IdentificationConfig) -> DVector<f64> {
    let c = net.thresholds();
    let trip = cfg.trip_config();
    DVector::from_iterator(
        flows.len(),
        (0..flows.len()).map(|i| match cfg.derivative {
            DerivativeMode::Analytic => trip_factor_slope(flows[i], c[i], cfg.sigma),
            DerivativeMode::FiniteDifference => {
                (trip_factor(flows[i] + cfg.delta, c[i], &trip) - trip_factor(flows[i], c[i], &trip)) / cfg.delta
            }
        }),
    )
}

/// `∂G(P)/∂P`, `n_branches x n_branches`.
///
/// In finite-difference mode column `i` is `[G(P + δeᵢ) - G(P)] / δ`; in
/// analytic mode the matrix is `diag(∂g/∂Pᵢ)`.
pub fn dg_dp(flows: &DVector<f64>, net: &Network, cfg: &IdentificationConfig) -> DMatrix<f64> {
    let n = flows.len();
    match cfg.derivative {
        DerivativeMode::Analytic => DMatrix::from_diagonal(&trip_slopes(flows, net, cfg)),
        DerivativeMode::FiniteDifference => {
            let c = net.thresholds();
            let trip = cfg.trip_config();
            let g = |p: &DVector<f64>| DVector::from_iterator(n, (0..n).map(|r| trip_factor(p[r], c[r], &trip)));
            let base = g(flows);
            let cols: Vec<DVector<f64>> = (0..n)
                .map(|i| {
                    let mut p = flows.clone();
                    p[i] += cfg.delta;
                    (g(&p) - &base) / cfg.delta
                })
                .collect();
            DMatrix::from_columns(&cols)
        }
    }
}

fn control_jacobian_at(
    net: &Network,
    sel: &SelectionMatrix,
    y: &DVector<f64>,
    flows: &DVector<f64>,
    cfg: &IdentificationConfig,
) -> Result<DMatrix<f64>, SolveError> {
    let lin = StepLinearization::at(net, y, cfg.live_threshold)?;
    let dg = dg_dp(flows, net, cfg);
    let mut a_pinv = lin.a_pinv(net);
    for j in 0..net.n_buses() {
        if !sel.is_selected(j) {
            a_pinv.column_mut(j).fill(0.0);
        }
    }
    let left = DMatrix::from_diagonal(y) * dg * DMatrix::from_diagonal(y);
    Ok(left * a_pinv)
}

/// `∂Yᵏ⁺¹/∂Uᵏ = diag(Yᵏ) ∂G/∂P diag(Yᵏ) A (Aᵀ diag(Yᵏ) A)^{-1*} Λ`,
/// `n_branches x n_buses`, evaluated at `traj.y[k]`, `traj.flows[k]`.
pub fn dy_du(
    k: usize,
    traj: &Trajectory,
    net: &Network,
    sel: &SelectionMatrix,
    cfg: &IdentificationConfig,
) -> Result<DMatrix<f64>, SolveError> {
    control_jacobian_at(net, sel, &traj.y[k], &traj.flows[k], cfg)
}

/// Closed-form one-step state Jacobian `∂Yᵏ⁺¹/∂Yᵏ` with the island
/// partition of `Yᵏ` held fixed.
///
/// With `θ = pinv·inj` and `Δθ_r = θ_from - θ_to`, perturbing `Y_r` changes
/// the reduced blocks by the intra-island part of `a_r a_rᵀ`, so
/// `∂θ/∂Y_r = -pinv·v_r` with `v_r = a_r Δθ_r` for a branch inside one
/// island and `v_r = e_from θ_from + e_to θ_to` for a branch between two.
pub fn dy_dy(
    k: usize,
    traj: &Trajectory,
    net: &Network,
    sel: &SelectionMatrix,
    cfg: &IdentificationConfig,
) -> Result<DMatrix<f64>, SolveError> {
    let y = &traj.y[k];
    let n = net.n_branches();
    let lin = StepLinearization::at(net, y, cfg.live_threshold)?;
    let inj = net.injections() + sel.apply(&traj.controls[k]);
    let theta = &lin.pinv * inj;
    let flows = crate::dc_powerflow::branch_flows(net, y, &theta);
    let c = net.thresholds();
    let trip = cfg.trip_config();
    let slopes = trip_slopes(&flows, net, cfg);
    let a_pinv = lin.a_pinv(net);
    let mut jac = DMatrix::zeros(n, n);
    for r in 0..n {
        let (f, t) = net.endpoints(r);
        let same_island = lin.partition.island_of(f) == lin.partition.island_of(t);
        // column r of -A·pinv·v_r, i.e. ∂(Aθ)/∂Y_r
        let d_atheta: DVector<f64> = if same_island {
            let dtheta_r = theta[f] - theta[t];
            -(a_pinv.column(f) - a_pinv.column(t)) * dtheta_r
        } else {
            -(a_pinv.column(f) * theta[f] + a_pinv.column(t) * theta[t])
        };
        for s in 0..n {
            let (sf, st) = net.endpoints(s);
            let mut dp = y[s] * d_atheta[s];
            if s == r {
                dp += theta[sf] - theta[st];
            }
            let mut v = y[s] * slopes[s] * dp;
            if s == r {
                v += trip_factor(flows[s], c[s], &trip);
            }
            jac[(s, r)] = v;
        }
    }
    Ok(jac)
}

/// `∂Yᵐ/∂Yᵏ⁺¹` by forward differences: column `i` is
/// `[Yᵐ(Yᵏ⁺¹ + δeᵢ) - Yᵐ(Yᵏ⁺¹)] / δ`, re-running the smooth cascade from
/// step `k + 1` with `traj.controls[k+1..]` held fixed. For `k = m - 1` the
/// product is empty and the identity is returned.
pub fn dym_dyk1(
    k: usize,
    traj: &Trajectory,
    net: &Network,
    sel: &SelectionMatrix,
    cfg: &IdentificationConfig,
) -> Result<DMatrix<f64>, SolveError> {
    let m = traj.steps();
    let n = net.n_branches();
    if k + 1 >= m {
        return Ok(DMatrix::identity(n, n));
    }
    let trip = cfg.trip_config();
    let later = &traj.controls[k + 1..m];
    let start = &traj.y[k + 1];
    let base = propagate(net, start, later, sel, &trip)?;
    let cols: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut y = start.clone();
            y[i] += cfg.delta;
            Ok((propagate(net, &y, later, sel, &trip)? - &base) / cfg.delta)
        })
        .collect::<Result<_, SolveError>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// `Uᵏ = -(1/ε_k) (∂Yᵏ⁺¹/∂Uᵏ)ᵀ (∂Yᵐ/∂Yᵏ⁺¹)ᵀ Yᵐ` on a complete trajectory.
pub fn control_from_state(
    k: usize,
    traj: &Trajectory,
    net: &Network,
    sel: &SelectionMatrix,
    cfg: &IdentificationConfig,
) -> Result<DVector<f64>, SolveError> {
    let mu = dym_dyk1(k, traj, net, sel, cfg)?.transpose() * traj.terminal();
    let d = dy_du(k, traj, net, sel, cfg)?;
    Ok(d.transpose() * mu * (-1.0 / cfg.epsilon.at(k)))
}

/// Adjoint vectors `λ_1 … λ_m`, `lambdas[k-1] = λ_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostateSequence {
    pub lambdas: Vec<DVector<f64>>,
}

impl CostateSequence {
    pub fn lambda(&self, k: usize) -> &DVector<f64> {
        &self.lambdas[k - 1]
    }
}

/// `λ_m = 2Yᵐ` and `λ_{k+1} = 2 (∂Yᵐ/∂Yᵏ⁺¹)ᵀ Yᵐ` for `k + 1 < m`.
pub fn costates(
    traj: &Trajectory,
    net: &Network,
    sel: &SelectionMatrix,
    cfg: &IdentificationConfig,
) -> Result<CostateSequence, SolveError> {
    let m = traj.steps();
    let terminal = traj.terminal();
    let lambdas = (0..m)
        .map(|k| {
            if k + 1 == m {
                Ok(terminal * 2.0)
            } else {
                Ok(dym_dyk1(k, traj, net, sel, cfg)?.transpose() * terminal * 2.0)
            }
        })
        .collect::<Result<_, SolveError>>()?;
    Ok(CostateSequence { lambdas })
}

/// Layout of the Newton unknowns: `Y¹ … Yᵐ` stacked, followed by the
/// selected-bus entries of `U⁰ … U^{m-1}` (ascending bus order per step).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnknownLayout {
    pub steps: usize,
    pub n_branches: usize,
    pub n_selected: usize,
}

impl UnknownLayout {
    pub fn new(net: &Network, sel: &SelectionMatrix, cfg: &IdentificationConfig) -> Self {
        Self { steps: cfg.steps, n_branches: net.n_branches(), n_selected: sel.indices().len() }
    }

    pub fn len(&self) -> usize {
        self.steps * (self.n_branches + self.n_selected)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn control_offset(&self, k: usize) -> usize {
        self.steps * self.n_branches + k * self.n_selected
    }

    /// Packs `Y¹ … Yᵐ` and full-length controls into an unknown vector.
    pub fn pack(&self, sel: &SelectionMatrix, y: &[DVector<f64>], controls: &[DVector<f64>]) -> DVector<f64> {
        let idx = sel.indices();
        let mut z = DVector::zeros(self.len());
        for (k, yk) in y.iter().enumerate().take(self.steps) {
            z.rows_mut(k * self.n_branches, self.n_branches).copy_from(yk);
        }
        for (k, u) in controls.iter().enumerate().take(self.steps) {
            for (j, &i) in idx.iter().enumerate() {
                z[self.control_offset(k) + j] = u[i];
            }
        }
        z
    }
}

/// Residual of the necessary-condition system plus the trajectory it implies.
#[derive(Clone, Debug)]
pub struct ResidualEval {
    pub residual: DVector<f64>,
    /// `y` holds `Y⁰` and the guessed `Y¹ … Yᵐ`; `controls` the guessed
    /// controls and `flows` the flows they produce on the guessed states.
    pub trajectory: Trajectory,
}

/// Residual of the necessary-condition system at the unknowns `z` (see
/// [`UnknownLayout`]).
///
/// The first `m·n` entries stack `G(Pᵏ) ∘ Yᵏ - Yᵏ⁺¹` for `k = 0..m-1`, with
/// `Pᵏ` the flow on the guessed `Yᵏ` under `P_b + Λ Uᵏ`. The remaining
/// entries stack `Uᵏ - control_from_state(k)` on the selected buses, the
/// control law evaluated at that same `Pᵏ`. `Y⁰` is the base admittance
/// vector. The guess is not clamped to `[0, Y_base]`.
pub fn residual(
    z: &DVector<f64>,
    net: &Network,
    sel: &SelectionMatrix,
    cfg: &IdentificationConfig,
) -> Result<ResidualEval, SolveError> {
    let layout = UnknownLayout::new(net, sel, cfg);
    if z.len() != layout.len() {
        return Err(SolveError::Dimension { what: "stacked unknowns", got: z.len(), expected: layout.len() });
    }
    let m = cfg.steps;
    let n = net.n_branches();
    let idx = sel.indices();
    let mut y = Vec::with_capacity(m + 1);
    y.push(net.base_admittances());
    let mut controls = Vec::with_capacity(m);
    for k in 0..m {
        y.push(z.rows(k * n, n).into_owned());
        let mut u = DVector::zeros(net.n_buses());
        for (j, &i) in idx.iter().enumerate() {
            u[i] = z[layout.control_offset(k) + j];
        }
        controls.push(u);
    }
    let mut flows = Vec::with_capacity(m);
    for k in 0..m {
        let partition = find_islands(net, &y[k], cfg.live_threshold);
        let inj = net.injections() + sel.apply(&controls[k]);
        flows.push(crate::dc_powerflow::solve_flow(net, &y[k], &inj, &partition).map_err(|e| e.at_step(k))?.flows);
    }
    let traj = Trajectory { y, flows, controls };

    let c = net.thresholds();
    let trip = cfg.trip_config();
    let mut res = DVector::zeros(layout.len());
    for k in 0..m {
        for r in 0..n {
            res[k * n + r] = trip_factor(traj.flows[k][r], c[r], &trip) * traj.y[k][r] - traj.y[k + 1][r];
        }
        let law = control_from_state(k, &traj, net, sel, cfg).map_err(|e| e.at_step(k))?;
        for (j, &i) in idx.iter().enumerate() {
            res[layout.control_offset(k) + j] = traj.controls[k][i] - law[i];
        }
    }
    Ok(ResidualEval { residual: res, trajectory: traj })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedSolution {
    /// `U⁰ … U^{m-1}`, full bus length.
    pub controls: Vec<Vec<f64>>,
    /// `Y⁰ … Yᵐ`.
    pub trajectory: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl IdentifiedSolution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    pub fn schedule(&self, sel: &SelectionMatrix) -> ControlSchedule {
        let controls = self.controls.iter().map(|u| DVector::from_column_slice(u)).collect();
        ControlSchedule::from_vectors(sel.clone(), controls).expect("stored controls have bus length")
    }
}

/// Unknowns of the smooth trajectory driven by `controls`.
pub fn guess_from_controls(
    net: &Network,
    sel: &SelectionMatrix,
    cfg: &IdentificationConfig,
    controls: &[DVector<f64>],
) -> Result<DVector<f64>, SolveError> {
    let traj = Trajectory::simulate(net, sel, controls, cfg)?;
    Ok(UnknownLayout::new(net, sel, cfg).pack(sel, &traj.y[1..], &traj.controls))
}

/// Identifies the worst-case schedule starting Newton from the zero-control
/// smooth trajectory.
pub fn identify(
    net: &Network,
    sel: &SelectionMatrix,
    cfg: &IdentificationConfig,
) -> Result<IdentifiedSolution, SolveError> {
    cfg.validate()?;
    let zeros = vec![DVector::zeros(net.n_buses()); cfg.steps];
    let guess = guess_from_controls(net, sel, cfg, &zeros)?;
    identify_from(net, sel, cfg, guess)
}

/// Same as [`identify`] from caller-supplied unknowns (see [`UnknownLayout`]).
pub fn identify_from(
    net: &Network,
    sel: &SelectionMatrix,
    cfg: &IdentificationConfig,
    guess: DVector<f64>,
) -> Result<IdentifiedSolution, SolveError> {
    cfg.validate()?;
    if sel.is_empty() {
        return Err(SolveError::Config("no bus is selected for fluctuation".into()));
    }
    let opts = NewtonOptions {
        tol: cfg.newton_tol,
        max_iter: cfg.newton_max_iter,
        fd_step: cfg.delta,
        max_backtracks: cfg.max_backtracks,
        threads: cfg.threads.max(1),
    };
    let outcome = newton::solve(|x| Ok(residual(x, net, sel, cfg)?.residual), guess, &opts)?;
    let eval = residual(&outcome.x, net, sel, cfg)?;
    let traj = eval.trajectory;
    let schedule = ControlSchedule::from_vectors(sel.clone(), traj.controls.clone())?;
    let cost = simulate(net, &schedule, cfg.steps, &cfg.trip_config(), &cfg.epsilon)?.cost_j;
    Ok(IdentifiedSolution {
        controls: traj.controls.iter().map(|u| u.iter().copied().collect()).collect(),
        trajectory: traj.y.iter().map(|y| y.iter().copied().collect()).collect(),
        residual_norm: outcome.residual_norm,
        cost,
        converged: outcome.converged,
        iterations: outcome.iterations,
    })
}

/// `J` of the smooth cascade under `schedule`.
pub fn smooth_cost(net: &Network, schedule: &ControlSchedule, cfg: &IdentificationConfig) -> Result<f64, SolveError> {
    Ok(simulate(net, schedule, cfg.steps, &cfg.trip_config(), &cfg.epsilon)?.cost_j)
}
