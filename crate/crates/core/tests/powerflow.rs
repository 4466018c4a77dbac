mod common;

use common::*;
use gridrisk_core::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn nine_bus_nodal_admittance_matches_triple_product() {
    let net = parse_case(IEEE9).unwrap();
    let y = net.base_admittances();
    let a = incidence(&net).matrix().clone();
    let mut brute = DMatrix::zeros(9, 9);
    for i in 0..9 {
        for j in 0..9 {
            for r in 0..9 {
                brute[(i, j)] += a[(r, i)] * y[r] * a[(r, j)];
            }
        }
    }
    let y_b = nodal_admittance(&incidence(&net), &y).unwrap();
    assert!((y_b - brute).amax() < 1e-12);
}

#[test]
fn nine_bus_base_flows_match_dense_solve() {
    let net = parse_case(IEEE9).unwrap();
    let y = net.base_admittances();
    let sol = solve_flow(&net, &y, &net.injections(), &find_islands(&net, &y, 0.01)).unwrap();
    let theta = dense_angles(&net, &y, &net.injections());
    assert!((sol.theta - theta).amax() < 1e-10);
    let expected = [0.67, 1.63, 0.85, 0.3803, 0.2897, -0.8697, -0.6103, 0.7603, -0.2397];
    for (p, e) in sol.flows.iter().zip(expected) {
        assert!((p - e).abs() < 1e-4, "{p} vs {e}");
    }
}

proptest! {
    #[test]
    fn reference_angles_vanish_and_flows_follow_angles(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<usize> = (0..k).map(|i| 1 + ((seed >> (8 * i)) % 5) as usize).collect();
        let (net, _) = random_grouped_network(&mut rng, &sizes);
        let y = net.base_admittances();
        let partition = find_islands(&net, &y, 0.01);
        prop_assert_eq!(partition.count(), k);
        let sol = solve_flow(&net, &y, &net.injections(), &partition).unwrap();
        for r in partition.reference_buses() {
            prop_assert_eq!(sol.theta[r], 0.0);
        }
        for r in 0..net.n_branches() {
            let (f, t) = net.endpoints(r);
            prop_assert!((sol.flows[r] - y[r] * (sol.theta[f] - sol.theta[t])).abs() < 1e-12);
        }
        // Injections are balanced per group, so they are reconstructed everywhere.
        let y_b = nodal_admittance(&incidence(&net), &y).unwrap();
        prop_assert!((y_b * &sol.theta - net.injections()).amax() < 1e-9);
    }

    #[test]
    fn unbalanced_injection_is_absorbed_at_references(seed in any::<u64>(), extra in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, _) = random_grouped_network(&mut rng, &[4, 3]);
        let y = net.base_admittances();
        let partition = find_islands(&net, &y, 0.01);
        let mut inj = net.injections();
        let target = (seed % 7) as usize;
        inj[target] += extra;
        let sol = solve_flow(&net, &y, &inj, &partition).unwrap();
        let recon: DVector<f64> = nodal_admittance(&incidence(&net), &y).unwrap() * &sol.theta;
        for b in 0..7 {
            if !partition.is_reference(b) {
                prop_assert!((recon[b] - inj[b]).abs() < 1e-9);
            }
        }
    }
}
