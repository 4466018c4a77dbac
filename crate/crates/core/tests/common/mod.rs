#![allow(dead_code)]

use gridrisk_core::{Branch, Bus, BusKind, Network};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

pub const IEEE9: &str = include_str!("../../fixtures/ieee9.json");

pub fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Random network whose buses split into `sizes.len()` groups, each group
/// internally connected (spanning tree plus a few chords). Bus ids are
/// shuffled across groups. Returns the network and each group's 0-based
/// bus indices.
pub fn random_grouped_network<R: Rng>(rng: &mut R, sizes: &[usize]) -> (Network, Vec<Vec<usize>>) {
    let n: usize = sizes.iter().sum();
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut groups = Vec::new();
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut offset = 0;
    for &size in sizes {
        let members: Vec<usize> = ids[offset..offset + size].to_vec();
        offset += size;
        for i in 1..size {
            let j = rng.random_range(0..i);
            branches.push((members[j], members[i]));
        }
        for _ in 0..size / 2 {
            let a = members[rng.random_range(0..size)];
            let b = members[rng.random_range(0..size)];
            if a != b && !branches.contains(&(a, b)) && !branches.contains(&(b, a)) {
                branches.push((a, b));
            }
        }
        groups.push(members);
    }
    let mut injections: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    for g in &groups {
        let mean = g.iter().map(|&b| injections[b]).sum::<f64>() / g.len() as f64;
        for &b in g {
            injections[b] -= mean;
        }
    }
    let buses = (0..n)
        .map(|i| Bus {
            id: i + 1,
            kind: if injections[i] >= 0.0 { BusKind::Generator } else { BusKind::Load },
            injection_pu: injections[i],
        })
        .collect();
    let branches = branches
        .into_iter()
        .map(|(a, b)| Branch { from: a + 1, to: b + 1, admittance_pu: rng.random_range(0.5..20.0), threshold_pu: 1.0 })
        .collect();
    (Network::new(buses, branches, 100.0).unwrap(), groups)
}

/// Laplacian assembled branch by branch from the case data.
pub fn laplacian(net: &Network, y: &DVector<f64>) -> DMatrix<f64> {
    let n = net.n_buses();
    let mut l = DMatrix::zeros(n, n);
    for (r, b) in net.branches().iter().enumerate() {
        let (f, t) = (b.from - 1, b.to - 1);
        l[(f, f)] += y[r];
        l[(t, t)] += y[r];
        l[(f, t)] -= y[r];
        l[(t, f)] -= y[r];
    }
    l
}

/// Angles on a connected network by grounding the last bus, solving the
/// reduced system with Cholesky and shifting so bus 0 sits at zero.
pub fn dense_angles(net: &Network, y: &DVector<f64>, injections: &DVector<f64>) -> DVector<f64> {
    let n = net.n_buses();
    let l = laplacian(net, y);
    let reduced = l.view((0, 0), (n - 1, n - 1)).into_owned();
    let rhs = injections.rows(0, n - 1).into_owned();
    let theta_r = reduced.cholesky().expect("reduced Laplacian is positive definite").solve(&rhs);
    let mut theta = DVector::zeros(n);
    theta.rows_mut(0, n - 1).copy_from(&theta_r);
    let shift = theta[0];
    theta.map(|v| v - shift)
}
