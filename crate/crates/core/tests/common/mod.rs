#![allow(dead_code)]

use pnfluid::petri_model::{self, StoichiometricInvariant};
use pnfluid::rational::{int, ratio, Rational};
use pnfluid::{NetBuilder, PetriNet};
use rand::Rng;

/// Random priority-free net with at most eight transitions and a positive
/// stoichiometric invariant. Places form a ring so every transition has an
/// upstream place; extra transitions, possibly synchronizing two places,
/// are kept only when the invariant survives.
pub fn random_priority_free_net(rng: &mut impl Rng) -> (PetriNet, StoichiometricInvariant) {
    loop {
        if let Some(found) = try_net(rng) {
            return found;
        }
    }
}

fn try_net(rng: &mut impl Rng) -> Option<(PetriNet, StoichiometricInvariant)> {
    let k = rng.gen_range(1..=4);
    let n = rng.gen_range(k..=8);
    let taus = [ratio(1, 2), int(1), int(2), int(3)];
    let mut b = NetBuilder::new();
    for p in 0..k {
        b = b.place(format!("p{p}"), taus[rng.gen_range(0..taus.len())].clone(), int(rng.gen_range(0..=6)));
    }
    let mut downstream: Vec<Vec<String>> = vec![Vec::new(); k];
    for q in 0..n {
        let id = format!("q{q}");
        b = b.transition(id.clone());
        let w = int(rng.gen_range(1..=2));
        let (from, to) = if q < k { (q, (q + 1) % k) } else { (rng.gen_range(0..k), rng.gen_range(0..k)) };
        b = b.arc(format!("p{from}"), id.clone(), w.clone()).arc(id.clone(), format!("p{to}"), w.clone());
        downstream[from].push(id.clone());
        if q >= k && k > 1 && rng.gen_bool(0.3) {
            let extra = (from + rng.gen_range(1..k)) % k;
            let to2 = rng.gen_range(0..k);
            b = b.arc(format!("p{extra}"), id.clone(), w.clone()).arc(id.clone(), format!("p{to2}"), w);
            downstream[extra].push(id);
        }
    }
    for (p, ds) in downstream.iter().enumerate() {
        if ds.len() > 1 {
            let w: Vec<i64> = ds.iter().map(|_| rng.gen_range(1..=4)).collect();
            let s: i64 = w.iter().sum();
            b = b.preselection(format!("p{p}"), ds.iter().zip(&w).map(|(q, &x)| (q.as_str(), ratio(x, s))).collect());
        }
    }
    let net = b.build().ok()?;
    if !petri_model::validate_net(&net).ok() {
        return None;
    }
    let inv = petri_model::stoichiometric_invariant(&net).ok()??;
    Some((net, inv))
}

pub fn random_markings(rng: &mut impl Rng, n: usize) -> Vec<Rational> {
    (0..n).map(|_| ratio(rng.gen_range(0..=24), rng.gen_range(1..=2))).collect()
}

/// Nondecreasing history of `steps + 1` samples per transition.
pub fn random_history(rng: &mut impl Rng, transitions: usize, steps: usize, integer: bool) -> Vec<Vec<f64>> {
    (0..transitions)
        .map(|_| {
            let mut v = if integer { rng.gen_range(0..=5) as f64 } else { rng.gen_range(0.0..5.0) };
            (0..=steps)
                .map(|_| {
                    v += if integer { rng.gen_range(0..=2) as f64 } else { rng.gen_range(0.0..2.0) };
                    v
                })
                .collect()
        })
        .collect()
}
