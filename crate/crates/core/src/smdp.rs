//! Semi-Markov decision processes built from priority-free nets, and the
//! multichain average-cost problem: policy evaluation, brute-force
//! enumeration, Denardo–Fox policy iteration and the linear program.

use crate::graph;
use crate::linalg::{self, Matrix};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::markov::{self, MarkovError, StochasticMatrix};
use crate::petri_model::PetriNet;
use crate::rational::{self, Rational};
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SmdpError {
    #[error("priority routing on place `{0}` has no SMDP counterpart")]
    Priority(String),
    #[error("place `{0}` has no upstream transition")]
    NoSource(String),
    #[error("state `{0}` has no action")]
    NoActions(String),
    #[error("action {action} of state `{state}` is not a probability row")]
    BadRow { state: String, action: String },
    #[error("action {action} of state `{state}` has a negative holding time")]
    NegativeTime { state: String, action: String },
    #[error("zero-time moves form a cycle: {0:?}")]
    Zeno(Vec<String>),
    #[error("vector of length {got} does not match {expected} transitions")]
    Length { got: usize, expected: usize },
    #[error("supplied weights are not a stoichiometric invariant (row of `{0}` does not sum to one)")]
    NotInvariant(String),
    #[error("average-cost analysis needs an undiscounted model")]
    Discounted,
    #[error("a final class of the policy is travelled through in zero time")]
    ZeroTimeClass,
    #[error("{0} policies exceed the enumeration cap")]
    TooManyPolicies(u128),
    #[error("policy iteration exceeded {0} iterations")]
    NonTermination(u128),
    #[error("no enumerated policy satisfies the optimality equations")]
    NoOptimalPolicy,
    #[error("linear program is {0}")]
    Lp(&'static str),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub label: String,
    pub cost: Rational,
    pub time: Rational,
    pub discount: Rational,
    /// Dense probability row over states.
    pub row: Vec<Rational>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmdpModel {
    pub states: Vec<String>,
    pub actions: Vec<Vec<Action>>,
    /// Objective weights of the linear program; the stoichiometric
    /// invariant when built from a net.
    pub weights: Option<Vec<Rational>>,
}

/// Action index per state.
pub type Policy = Vec<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    pub g: Vec<Rational>,
    pub h: Vec<Rational>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageCostSolution {
    pub g: Vec<Rational>,
    pub h: Vec<Rational>,
    pub policy: Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Enumerate,
    PolicyIteration,
}

pub const ENUMERATION_CAP: u128 = 1 << 20;

impl SmdpModel {
    pub fn new(states: Vec<String>, actions: Vec<Vec<Action>>) -> Result<Self, SmdpError> {
        let m = SmdpModel { states, actions, weights: None };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<(), SmdpError> {
        let n = self.states.len();
        for (i, acts) in self.actions.iter().enumerate() {
            if acts.is_empty() {
                return Err(SmdpError::NoActions(self.states[i].clone()));
            }
            for a in acts {
                let bad = || SmdpError::BadRow { state: self.states[i].clone(), action: a.label.clone() };
                if a.row.len() != n || a.row.iter().any(|x| x.is_negative()) {
                    return Err(bad());
                }
                if !a.row.iter().cloned().sum::<Rational>().is_one() {
                    return Err(bad());
                }
                if a.time.is_negative() {
                    return Err(SmdpError::NegativeTime { state: self.states[i].clone(), action: a.label.clone() });
                }
            }
        }
        if let Some(c) = self.zero_time_cycle() {
            return Err(SmdpError::Zeno(c.into_iter().map(|i| self.states[i].clone()).collect()));
        }
        Ok(())
    }

    /// Cycle of the graph with an arc `i -> j` whenever some action of `i`
    /// has zero holding time and positive probability of reaching `j`.
    pub fn zero_time_cycle(&self) -> Option<Vec<usize>> {
        let adj: Vec<Vec<usize>> = self
            .actions
            .iter()
            .map(|acts| {
                let mut v: Vec<usize> = acts
                    .iter()
                    .filter(|a| a.time.is_zero())
                    .flat_map(|a| a.row.iter().enumerate().filter(|(_, p)| p.is_positive()).map(|(j, _)| j))
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        graph::find_cycle(&adj)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_undiscounted(&self) -> bool {
        self.actions.iter().flatten().all(|a| a.discount.is_one())
    }

    pub fn num_policies(&self) -> u128 {
        self.actions.iter().fold(1u128, |acc, a| acc.saturating_mul(a.len() as u128))
    }

    /// Policy number `k` in odometer order, last state fastest.
    pub fn policy_at(&self, mut k: u128) -> Policy {
        let mut pol = vec![0; self.len()];
        for i in (0..self.len()).rev() {
            let n = self.actions[i].len() as u128;
            pol[i] = (k % n) as usize;
            k /= n;
        }
        pol
    }

    pub fn transition_matrix(&self, policy: &[usize]) -> Matrix<Rational> {
        policy.iter().enumerate().map(|(i, &a)| self.actions[i][a].row.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct ActionDump<'a> {
            state: &'a str,
            label: &'a str,
            cost: String,
            time: String,
            discount: String,
            row: std::collections::BTreeMap<&'a str, String>,
        }
        #[derive(Serialize)]
        struct Dump<'a> {
            states: &'a [String],
            actions: Vec<ActionDump<'a>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            weights: Option<Vec<String>>,
        }
        let actions = self
            .actions
            .iter()
            .enumerate()
            .flat_map(|(i, acts)| {
                acts.iter().map(move |a| ActionDump {
                    state: &self.states[i],
                    label: &a.label,
                    cost: rational::fmt(&a.cost),
                    time: rational::fmt(&a.time),
                    discount: rational::fmt(&a.discount),
                    row: a
                        .row
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| !p.is_zero())
                        .map(|(j, p)| (self.states[j].as_str(), rational::fmt(p)))
                        .collect(),
                })
            })
            .collect();
        let dump = Dump {
            states: &self.states,
            actions,
            weights: self.weights.as_ref().map(|w| w.iter().map(rational::fmt).collect()),
        };
        serde_json::to_string_pretty(&dump).expect("serializable")
    }
}

/// SMDP of a priority-free net: states are transitions and the actions of
/// `q` are its upstream places. Without `e` the model is discounted; with a
/// stoichiometric invariant `e` it is the undiscounted rescaled model.
pub fn petri_to_smdp(net: &PetriNet, e: Option<&[Rational]>) -> Result<SmdpModel, SmdpError> {
    if let Some(p) = net.first_priority_place() {
        return Err(SmdpError::Priority(net.places()[p].id.clone()));
    }
    let nq = net.num_transitions();
    if let Some(e) = e {
        if e.len() != nq {
            return Err(SmdpError::Length { got: e.len(), expected: nq });
        }
    }
    let mut actions = Vec::with_capacity(nq);
    for q in 0..nq {
        let mut acts = Vec::new();
        for (p, a) in net.q_in(q) {
            let place = &net.places()[*p];
            if net.p_in(*p).is_empty() {
                return Err(SmdpError::NoSource(place.id.clone()));
            }
            let f = net.pi(q, *p) / a;
            let cost = &f * &place.marking;
            let kappa: Rational = net.p_in(*p).iter().map(|(_, w)| &f * w).sum();
            let action = match e {
                None => {
                    let mut row = vec![Rational::zero(); nq];
                    for (q2, w) in net.p_in(*p) {
                        row[*q2] += &f * w / &kappa;
                    }
                    Action { label: place.id.clone(), cost, time: place.tau.clone(), discount: kappa, row }
                }
                Some(e) => {
                    let mut row = vec![Rational::zero(); nq];
                    for (q2, w) in net.p_in(*p) {
                        row[*q2] += &f * w * &e[*q2] / &e[q];
                    }
                    if !row.iter().cloned().sum::<Rational>().is_one() {
                        return Err(SmdpError::NotInvariant(net.transitions()[q].clone()));
                    }
                    Action {
                        label: place.id.clone(),
                        cost: cost / &e[q],
                        time: place.tau.clone(),
                        discount: Rational::one(),
                        row,
                    }
                }
            };
            acts.push(action);
        }
        actions.push(acts);
    }
    let mut m = SmdpModel::new(net.transitions().to_vec(), actions)?;
    m.weights = e.map(<[Rational]>::to_vec);
    Ok(m)
}

/// Gain from the final-class formula and bias gauged to zero at the least
/// state of each final class.
pub fn evaluate_policy(m: &SmdpModel, policy: &[usize]) -> Result<PolicyValue, SmdpError> {
    let n = m.len();
    let acts: Vec<&Action> = policy.iter().enumerate().map(|(i, &a)| &m.actions[i][a]).collect();
    if acts.iter().any(|a| !a.discount.is_one()) {
        return Err(SmdpError::Discounted);
    }
    let p = StochasticMatrix::new(m.transition_matrix(policy))?;
    let s = markov::classify(&p)?;
    let mut g = vec![Rational::zero(); n];
    let mut anchors = Vec::new();
    for f in 0..s.final_classes.len() {
        let cls = s.final_class(f);
        let (mut num, mut den) = (Rational::zero(), Rational::zero());
        for &j in cls {
            num += &s.mu[f][j] * &acts[j].cost;
            den += &s.mu[f][j] * &acts[j].time;
        }
        if den.is_zero() {
            return Err(SmdpError::ZeroTimeClass);
        }
        let gf = num / den;
        for (i, gi) in g.iter_mut().enumerate() {
            if !s.phi[f][i].is_zero() {
                *gi += &s.phi[f][i] * &gf;
            }
        }
        anchors.push(cls[0]);
    }
    let mut a = vec![vec![Rational::zero(); n]; n];
    let mut b = vec![Rational::zero(); n];
    for i in 0..n {
        if anchors.contains(&i) {
            a[i][i] = Rational::one();
            continue;
        }
        for j in 0..n {
            a[i][j] = -p.get(i, j).clone();
        }
        a[i][i] += Rational::one();
        b[i] = &acts[i].cost - &acts[i].time * &g[i];
    }
    let h = linalg::solve(&a, &b).ok_or(MarkovError::Singular { what: "bias" })?;
    Ok(PolicyValue { g, h })
}

fn expect(row: &[Rational], v: &[Rational]) -> Rational {
    linalg::dot(row, v)
}

/// A policy attaining both optimality equations at `(g, h)`, if they hold.
pub fn optimality_witness(m: &SmdpModel, g: &[Rational], h: &[Rational]) -> Option<Policy> {
    let mut pol = Vec::with_capacity(m.len());
    for (i, acts) in m.actions.iter().enumerate() {
        let pg: Vec<Rational> = acts.iter().map(|a| expect(&a.row, g)).collect();
        let gmin = pg.iter().min().expect("nonempty").clone();
        if gmin != g[i] {
            return None;
        }
        let mut best: Option<(usize, Rational)> = None;
        for (k, a) in acts.iter().enumerate() {
            if pg[k] != gmin {
                continue;
            }
            let v = &a.cost - &a.time * &g[i] + expect(&a.row, h);
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((k, v));
            }
        }
        let (k, v) = best.expect("argmin set nonempty");
        if v != h[i] {
            return None;
        }
        pol.push(k);
    }
    Some(pol)
}

pub fn solve_average_cost(m: &SmdpModel, method: Method) -> Result<AverageCostSolution, SmdpError> {
    if !m.is_undiscounted() {
        return Err(SmdpError::Discounted);
    }
    match method {
        Method::Enumerate => enumerate(m),
        Method::PolicyIteration => policy_iteration(m),
    }
}

fn enumerate(m: &SmdpModel) -> Result<AverageCostSolution, SmdpError> {
    let count = m.num_policies();
    if count > ENUMERATION_CAP {
        return Err(SmdpError::TooManyPolicies(count));
    }
    let eval = |k: u128| -> Result<(Policy, PolicyValue), SmdpError> {
        let pol = m.policy_at(k);
        let v = evaluate_policy(m, &pol)?;
        Ok((pol, v))
    };
    let values: Vec<(Policy, PolicyValue)> = if count > 64 {
        (0..count).into_par_iter().map(eval).collect::<Result<_, _>>()?
    } else {
        (0..count).map(eval).collect::<Result<_, _>>()?
    };
    let mut gstar = values[0].1.g.clone();
    for (_, v) in &values[1..] {
        for (a, b) in gstar.iter_mut().zip(&v.g) {
            if b < a {
                *a = b.clone();
            }
        }
    }
    for (pol, v) in values {
        if v.g == gstar && optimality_witness(m, &v.g, &v.h).is_some() {
            return Ok(AverageCostSolution { g: v.g, h: v.h, policy: pol });
        }
    }
    Err(SmdpError::NoOptimalPolicy)
}

fn policy_iteration(m: &SmdpModel) -> Result<AverageCostSolution, SmdpError> {
    let guard = m.num_policies();
    let mut pol: Policy = vec![0; m.len()];
    let mut iterations: u128 = 0;
    loop {
        iterations += 1;
        if iterations > guard.saturating_add(1) {
            return Err(SmdpError::NonTermination(guard));
        }
        let v = evaluate_policy(m, &pol)?;
        // Gain improvement.
        let mut changed = false;
        let mut pg_all = Vec::with_capacity(m.len());
        for (i, acts) in m.actions.iter().enumerate() {
            let pg: Vec<Rational> = acts.iter().map(|a| expect(&a.row, &v.g)).collect();
            let cur = pg[pol[i]].clone();
            let (k, best) = pg.iter().enumerate().min_by(|a, b| a.1.cmp(b.1)).map(|(k, x)| (k, x.clone())).expect("nonempty");
            if best < cur {
                pol[i] = k;
                changed = true;
            }
            pg_all.push(pg);
        }
        if changed {
            continue;
        }
        // Bias improvement over the gain-minimizing actions.
        for (i, acts) in m.actions.iter().enumerate() {
            let gmin = pg_all[i].iter().min().expect("nonempty").clone();
            let val = |a: &Action| &a.cost - &a.time * &v.g[i] + expect(&a.row, &v.h);
            let cur = val(&acts[pol[i]]);
            let mut best: Option<(usize, Rational)> = None;
            for (k, a) in acts.iter().enumerate() {
                if pg_all[i][k] != gmin {
                    continue;
                }
                let x = val(a);
                if best.as_ref().is_none_or(|(_, b)| x < *b) {
                    best = Some((k, x));
                }
            }
            let (k, x) = best.expect("argmin set nonempty");
            if x < cur {
                pol[i] = k;
                changed = true;
            }
        }
        if !changed {
            return Ok(AverageCostSolution { g: v.g, h: v.h, policy: pol });
        }
    }
}

/// The linear program characterizing the optimal gain: maximize
/// `sum nu_i g_i` subject to `g_i <= P g` and `h_i <= r - t g_i + P h` for
/// every action, with all variables free.
pub fn throughput_lp(m: &SmdpModel) -> LinearProgram {
    let n = m.len();
    let mut lp = LinearProgram::new(2 * n);
    lp.all_free();
    let nu: Vec<Rational> = match &m.weights {
        Some(w) => w.clone(),
        None => vec![Rational::one(); n],
    };
    let mut obj = nu;
    obj.extend(std::iter::repeat_n(Rational::zero(), n));
    lp.maximize(obj);
    for (i, acts) in m.actions.iter().enumerate() {
        for a in acts {
            let mut row = vec![Rational::zero(); 2 * n];
            row[i] += Rational::one();
            for j in 0..n {
                row[j] -= &a.discount * &a.row[j];
            }
            lp.add(row, Cmp::Le, Rational::zero());
            let mut row = vec![Rational::zero(); 2 * n];
            row[n + i] += Rational::one();
            row[i] += &a.time;
            for j in 0..n {
                row[n + j] -= &a.discount * &a.row[j];
            }
            lp.add(row, Cmp::Le, a.cost.clone());
        }
    }
    lp
}

pub fn lp_variable_names(m: &SmdpModel) -> Vec<String> {
    m.states.iter().map(|s| format!("g_{s}")).chain(m.states.iter().map(|s| format!("h_{s}"))).collect()
}

/// Optimal gain from the linear program.
pub fn lp_throughput(m: &SmdpModel) -> Result<Vec<Rational>, SmdpError> {
    if !m.is_undiscounted() {
        return Err(SmdpError::Discounted);
    }
    match throughput_lp(m).solve() {
        LpOutcome::Optimal { x, .. } => Ok(x[..m.len()].to_vec()),
        LpOutcome::Infeasible => Err(SmdpError::Lp("infeasible")),
        LpOutcome::Unbounded => Err(SmdpError::Lp("unbounded")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    fn act(label: &str, cost: Rational, time: Rational, row: Vec<Rational>) -> Action {
        Action { label: label.into(), cost, time, discount: Rational::one(), row }
    }

    #[test]
    fn single_loop_cost_per_time() {
        let m = SmdpModel::new(vec!["s".into()], vec![vec![act("a", int(3), int(2), vec![int(1)])]]).unwrap();
        let v = evaluate_policy(&m, &[0]).unwrap();
        assert_eq!(v.g, vec![ratio(3, 2)]);
        assert_eq!(v.h, vec![int(0)]);
        assert_eq!(lp_throughput(&m).unwrap(), vec![ratio(3, 2)]);
    }

    #[test]
    fn two_cycle_averages_costs() {
        let m = SmdpModel::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![act("x", int(1), int(1), vec![int(0), int(1)])],
                vec![act("y", int(0), int(1), vec![int(1), int(0)])],
            ],
        )
        .unwrap();
        let v = evaluate_policy(&m, &[0, 0]).unwrap();
        assert_eq!(v.g, vec![ratio(1, 2), ratio(1, 2)]);
        // h_a = 0, h_b = 0 - 1/2 + h_a
        assert_eq!(v.h, vec![int(0), ratio(-1, 2)]);
    }

    #[test]
    fn zero_time_cycles_are_rejected() {
        let e = SmdpModel::new(vec!["s".into()], vec![vec![act("a", int(1), int(0), vec![int(1)])]]);
        assert!(matches!(e, Err(SmdpError::Zeno(_))));
    }

    #[test]
    fn policy_iteration_picks_cheaper_loop() {
        // State 0 may stay (cost 2 per unit) or move to 1 (absorbing, cost 1 per unit).
        let m = SmdpModel::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![act("stay", int(2), int(1), vec![int(1), int(0)]), act("go", int(5), int(1), vec![int(0), int(1)])],
                vec![act("loop", int(1), int(1), vec![int(0), int(1)])],
            ],
        )
        .unwrap();
        for method in [Method::Enumerate, Method::PolicyIteration] {
            let s = solve_average_cost(&m, method).unwrap();
            assert_eq!(s.g, vec![int(1), int(1)]);
            assert_eq!(s.policy, vec![1, 0]);
        }
        assert_eq!(lp_throughput(&m).unwrap(), vec![int(1), int(1)]);
    }

    #[test]
    fn lp_dump_names_variables() {
        let m = SmdpModel::new(vec!["s".into()], vec![vec![act("a", int(3), int(2), vec![int(1)])]]).unwrap();
        let text = throughput_lp(&m).dump(&lp_variable_names(&m));
        assert!(text.starts_with("max 1 g_s\n"));
        assert!(text.contains("free g_s h_s"));
    }
}
