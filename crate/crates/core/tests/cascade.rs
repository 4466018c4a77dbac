mod common;

use common::*;
use gridrisk_core::*;
use nalgebra::DVector;
use proptest::prelude::*;

fn bus2_schedule(net: &Network, values: &[f64]) -> ControlSchedule {
    let sel = selection(net, &[2]).unwrap();
    ControlSchedule::from_selected_values(sel, &values.iter().map(|v| vec![*v]).collect::<Vec<_>>()).unwrap()
}

fn terminal(net: &Network, schedule: &ControlSchedule, cfg: &TripConfig) -> DVector<f64> {
    let mut state = CascadeState::initial(net);
    for u in schedule.controls() {
        state = cascade_step(net, &state, u, schedule.selection(), cfg).unwrap().next;
    }
    state.y_p
}

#[test]
fn zero_schedule_keeps_the_nine_bus_case_whole() {
    let net = parse_case(IEEE9).unwrap();
    let report = simulate(&net, &bus2_schedule(&net, &[0.0; 4]), 4, &TripConfig::hard(), &Epsilon::default()).unwrap();
    assert_eq!(report.island_count, 1);
    assert!(report.steps.iter().all(|s| s.tripped.is_empty()));
    assert!((report.terminal_norm_sq - net.base_admittances().norm_squared()).abs() < 1e-9);
}

#[test]
fn reference_schedule_splits_nine_bus_case_into_seven_islands() {
    let net = parse_case(IEEE9).unwrap();
    let report =
        simulate(&net, &bus2_schedule(&net, &[-1.18, -1.24, 1.46, 0.0]), 4, &TripConfig::hard(), &Epsilon::default())
            .unwrap();
    assert_eq!(report.island_count, 7);
    assert!(!report.steps[0].tripped.is_empty());
    let multi: Vec<_> = report.islands.iter().filter(|i| i.len() > 1).collect();
    assert_eq!(multi, vec![&vec![6, 8, 9]]);
}

/// Smallest `| |P| - c |` over all live branches of the hard trajectory.
fn hard_margin(net: &Network, schedule: &ControlSchedule) -> f64 {
    let cfg = TripConfig::hard();
    let c = net.thresholds();
    let mut state = CascadeState::initial(net);
    let mut margin = f64::INFINITY;
    for u in schedule.controls() {
        let out = cascade_step(net, &state, u, schedule.selection(), &cfg).unwrap();
        for r in 0..net.n_branches() {
            if state.y_p[r] > 0.0 {
                margin = margin.min((out.flows[r].abs() - c[r]).abs());
            }
        }
        state = out.next;
    }
    margin
}

#[test]
fn smooth_cascade_approaches_hard_cascade_as_sigma_grows() {
    let net = parse_case(IEEE9).unwrap();
    for values in [[0.0, 0.0, -0.8, 0.0], [0.0, 0.0, -1.2, 0.0], [0.0, 0.0, -1.6, 0.0]] {
        let schedule = bus2_schedule(&net, &values);
        assert!(hard_margin(&net, &schedule) > 0.04, "{values:?} puts a flow near its threshold");
        let hard = terminal(&net, &schedule, &TripConfig::hard());
        let gaps: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&s| (terminal(&net, &schedule, &TripConfig::smooth(s)) - &hard).amax())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{values:?}: {gaps:?}");
        assert!(gaps[3] < 1e-6, "{values:?}: {gaps:?}");
    }
}

#[test]
fn flow_exactly_at_threshold_survives_hard_tripping() {
    // Under the reference schedule bus 8 is left hanging off branch 9 with a
    // 1.0 pu load against a 1.0 pu limit.
    let net = parse_case(IEEE9).unwrap();
    let schedule = bus2_schedule(&net, &[-1.18, -1.24, 1.46, 0.0]);
    assert!(hard_margin(&net, &schedule) < 1e-9);
    let hard = terminal(&net, &schedule, &TripConfig::hard());
    assert_eq!(hard[8], net.base_admittances()[8]);
}

#[test]
fn csv_report_has_one_row_per_step_and_branch() {
    let net = parse_case(IEEE9).unwrap();
    let report =
        simulate(&net, &bus2_schedule(&net, &[-1.18, -1.24, 1.46, 0.0]), 4, &TripConfig::hard(), &Epsilon::default())
            .unwrap();
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,branch_id,flow,y_p,tripped"));
    assert_eq!(lines.count(), 4 * 9);
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    for key in ["steps", "islands", "island_count", "terminal_norm_sq", "cost_J"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

proptest! {
    #[test]
    fn hard_islands_never_merge(values in proptest::collection::vec(-2.5f64..2.5, 4)) {
        let net = parse_case(IEEE9).unwrap();
        let schedule = bus2_schedule(&net, &values);
        let cfg = TripConfig::hard();
        let mut state = CascadeState::initial(&net);
        let mut count = 1;
        for u in schedule.controls() {
            let out = cascade_step(&net, &state, u, schedule.selection(), &cfg).unwrap();
            for r in 0..9 {
                prop_assert!(out.next.y_p[r] == state.y_p[r] || out.next.y_p[r] == 0.0);
            }
            let now = find_islands(&net, &out.next.y_p, cfg.live_threshold).count();
            prop_assert!(now >= count);
            count = now;
            state = out.next;
        }
    }

    #[test]
    fn smooth_admittances_shrink_and_stay_in_range(values in proptest::collection::vec(-2.0f64..2.0, 4), sigma in 0.5f64..5.0) {
        let net = parse_case(IEEE9).unwrap();
        let schedule = bus2_schedule(&net, &values);
        let cfg = TripConfig::smooth(sigma);
        let base = net.base_admittances();
        let mut state = CascadeState::initial(&net);
        for u in schedule.controls() {
            let next = cascade_step(&net, &state, u, schedule.selection(), &cfg).unwrap().next;
            for r in 0..9 {
                prop_assert!(next.y_p[r] < state.y_p[r] || state.y_p[r] == 0.0);
                prop_assert!(next.y_p[r] >= 0.0 && next.y_p[r] <= base[r]);
            }
            state = next;
        }
    }
}
