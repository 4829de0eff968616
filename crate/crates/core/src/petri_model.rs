//! Timed Petri nets with synchronization, preselection and priority routing:
//! construction, JSON form, structural validation, preselection
//! normalization and stoichiometric invariants.

use crate::graph;
use crate::linalg;
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::rational::{self, serde_rational, Rational};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("arc {from} -> {to} must join a place and a transition")]
    ArcKinds { from: String, to: String },
    #[error("duplicate arc {from} -> {to}")]
    DuplicateArc { from: String, to: String },
    #[error("arc {from} -> {to} has non-positive weight")]
    BadWeight { from: String, to: String },
    #[error("place `{0}` has a negative holding time")]
    NegativeTau(String),
    #[error("place `{0}` has a negative marking")]
    NegativeMarking(String),
    #[error("place `{0}` has more than one routing rule")]
    RoutingConflict(String),
    #[error("routing of place `{place}` mentions `{transition}`, which is not downstream of it")]
    RoutingTarget { place: String, transition: String },
    #[error("priority order of place `{0}` must list every downstream transition exactly once")]
    PriorityOrder(String),
    #[error("bad periodic schedule on place `{0}`")]
    Schedule(String),
    #[error("unknown routing kind `{0}`")]
    RoutingKind(String),
    #[error("operation requires a priority-free net; place `{0}` uses priority routing")]
    PriorityPresent(String),
    #[error("normalization would create a zero-time circuit: {0:?}")]
    ZenoAfterNormalization(Vec<String>),
    #[error("invalid net JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Place {
    pub id: String,
    pub tau: Rational,
    pub marking: Rational,
}

/// Proportional periodic routing: token `n` (1-based) goes to the class
/// whose set contains `((n - 1) mod period) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSchedule {
    pub period: u64,
    /// (downstream transition, its residues in `1..=period`)
    pub classes: Vec<(usize, Vec<u64>)>,
}

impl PeriodicSchedule {
    /// Number of the first `n` tokens reserved for the class of `q`.
    pub fn count(&self, q: usize, n: u64) -> u64 {
        let Some((_, set)) = self.classes.iter().find(|(t, _)| *t == q) else {
            return 0;
        };
        let full = n / self.period;
        let rem = n % self.period;
        full * set.len() as u64 + set.iter().filter(|&&j| j <= rem).count() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Routing {
    Sync,
    Preselection { pi: Vec<(usize, Rational)>, schedule: Option<PeriodicSchedule> },
    /// Highest priority first.
    Priority { order: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionKind {
    Sync,
    Preselection,
    Priority,
}

/// Immutable timed Petri net. Arc lists are kept sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct PetriNet {
    places: Vec<Place>,
    transitions: Vec<String>,
    routing: Vec<Routing>,
    p_in: Vec<Vec<(usize, Rational)>>,
    p_out: Vec<Vec<(usize, Rational)>>,
    q_in: Vec<Vec<(usize, Rational)>>,
    q_out: Vec<Vec<(usize, Rational)>>,
}

impl PetriNet {
    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn transitions(&self) -> &[String] {
        &self.transitions
    }

    pub fn num_places(&self) -> usize {
        self.places.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn routing(&self, p: usize) -> &Routing {
        &self.routing[p]
    }

    pub fn place_index(&self, id: &str) -> Option<usize> {
        self.places.iter().position(|p| p.id == id)
    }

    pub fn transition_index(&self, id: &str) -> Option<usize> {
        self.transitions.iter().position(|q| q == id)
    }

    /// Upstream transitions of place `p` with weights `alpha_pq`.
    pub fn p_in(&self, p: usize) -> &[(usize, Rational)] {
        &self.p_in[p]
    }

    /// Downstream transitions of place `p` with weights `alpha_qp`.
    pub fn p_out(&self, p: usize) -> &[(usize, Rational)] {
        &self.p_out[p]
    }

    /// Upstream places of transition `q` with weights `alpha_qp`.
    pub fn q_in(&self, q: usize) -> &[(usize, Rational)] {
        &self.q_in[q]
    }

    /// Downstream places of transition `q` with weights `alpha_pq`.
    pub fn q_out(&self, q: usize) -> &[(usize, Rational)] {
        &self.q_out[q]
    }

    /// Routing proportion of the `p -> q` arc; one unless `p` is a
    /// preselection place.
    pub fn pi(&self, q: usize, p: usize) -> Rational {
        match &self.routing[p] {
            Routing::Preselection { pi, .. } => pi
                .iter()
                .find(|(t, _)| *t == q)
                .map(|(_, v)| v.clone())
                .unwrap_or_else(Rational::zero),
            _ => Rational::one(),
        }
    }

    /// Priority order of `p` if it is a priority place.
    pub fn priority_order(&self, p: usize) -> Option<&[usize]> {
        match &self.routing[p] {
            Routing::Priority { order } => Some(order),
            _ => None,
        }
    }

    pub fn has_priority(&self) -> bool {
        self.routing.iter().any(|r| matches!(r, Routing::Priority { .. }))
    }

    pub fn first_priority_place(&self) -> Option<usize> {
        self.routing.iter().position(|r| matches!(r, Routing::Priority { .. }))
    }

    pub fn transition_kind(&self, q: usize) -> TransitionKind {
        let kinds: Vec<&Routing> = self.q_in[q].iter().map(|(p, _)| &self.routing[*p]).collect();
        if kinds.iter().any(|r| matches!(r, Routing::Priority { .. })) {
            TransitionKind::Priority
        } else if kinds.iter().any(|r| matches!(r, Routing::Preselection { .. })) {
            TransitionKind::Preselection
        } else {
            TransitionKind::Sync
        }
    }

    pub fn max_tau(&self) -> Rational {
        self.places.iter().map(|p| p.tau.clone()).max().unwrap_or_else(Rational::zero)
    }

    pub fn markings(&self) -> Vec<Rational> {
        self.places.iter().map(|p| p.marking.clone()).collect()
    }

    /// Copy with some markings replaced.
    pub fn with_markings(&self, updates: &[(usize, Rational)]) -> PetriNet {
        let mut net = self.clone();
        for (p, m) in updates {
            net.places[*p].marking = m.clone();
        }
        net
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetFile::from_net(self)).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<PetriNet, NetError> {
        let file: NetFile = serde_json::from_str(s).map_err(|e| NetError::Json(e.to_string()))?;
        file.into_net()
    }

    /// Counter dynamics in readable form, one line per transition; used to
    /// compare generated nets with hand-written systems.
    pub fn describe_dynamics(&self) -> Vec<String> {
        (0..self.num_transitions())
            .map(|q| {
                let terms: Vec<String> = self.q_in[q]
                    .iter()
                    .map(|(p, a)| {
                        let place = &self.places[*p];
                        let mut parts = vec![rational::fmt(&place.marking)];
                        for (q2, w) in &self.p_in[*p] {
                            parts.push(format!("{}*{}(t-{})", rational::fmt(w), self.transitions[*q2], rational::fmt(&place.tau)));
                        }
                        if let Some(order) = self.priority_order(*p) {
                            let pos = order.iter().position(|t| *t == q).expect("in order");
                            for (k, q2) in order.iter().enumerate() {
                                if *q2 == q {
                                    continue;
                                }
                                let w = self.p_out[*p].iter().find(|(t, _)| t == q2).expect("out").1.clone();
                                let at = if k < pos { "t" } else { "t-" };
                                parts.push(format!("-{}*{}({at})", rational::fmt(&w), self.transitions[*q2]));
                            }
                        }
                        let factor = self.pi(q, *p) / a;
                        format!("{}*[{}]", rational::fmt(&factor), parts.join(" + "))
                    })
                    .collect();
                format!("{} = min({})", self.transitions[q], terms.join(", "))
            })
            .collect()
    }
}

/// Incremental constructor addressing nodes by id.
#[derive(Debug, Clone, Default)]
pub struct NetBuilder {
    places: Vec<Place>,
    transitions: Vec<String>,
    arcs: Vec<(String, String, Rational)>,
    routing: Vec<(String, RoutingSpec)>,
}

#[derive(Debug, Clone)]
enum RoutingSpec {
    Sync,
    Preselection(Vec<(String, Rational)>, Option<(u64, Vec<(String, Vec<u64>)>)>),
    Priority(Vec<String>),
}

impl NetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn place(mut self, id: impl Into<String>, tau: Rational, marking: Rational) -> Self {
        self.places.push(Place { id: id.into(), tau, marking });
        self
    }

    pub fn transition(mut self, id: impl Into<String>) -> Self {
        self.transitions.push(id.into());
        self
    }

    /// Arc in either direction; the direction follows from the id kinds.
    pub fn arc(mut self, from: impl Into<String>, to: impl Into<String>, weight: Rational) -> Self {
        self.arcs.push((from.into(), to.into(), weight));
        self
    }

    pub fn sync(mut self, place: impl Into<String>) -> Self {
        self.routing.push((place.into(), RoutingSpec::Sync));
        self
    }

    pub fn preselection(mut self, place: impl Into<String>, pi: Vec<(&str, Rational)>) -> Self {
        let pi = pi.into_iter().map(|(q, v)| (q.to_string(), v)).collect();
        self.routing.push((place.into(), RoutingSpec::Preselection(pi, None)));
        self
    }

    /// Preselection driven by a periodic schedule; proportions are the
    /// class frequencies.
    pub fn periodic_preselection(mut self, place: impl Into<String>, period: u64, classes: Vec<(&str, Vec<u64>)>) -> Self {
        let pi = classes
            .iter()
            .map(|(q, set)| (q.to_string(), rational::ratio(set.len() as i64, period as i64)))
            .collect();
        let classes = classes.into_iter().map(|(q, s)| (q.to_string(), s)).collect();
        self.routing.push((place.into(), RoutingSpec::Preselection(pi, Some((period, classes)))));
        self
    }

    pub fn priority(mut self, place: impl Into<String>, order: Vec<&str>) -> Self {
        let order = order.into_iter().map(str::to_string).collect();
        self.routing.push((place.into(), RoutingSpec::Priority(order)));
        self
    }

    pub fn build(self) -> Result<PetriNet, NetError> {
        let mut seen = HashSet::new();
        for id in self.places.iter().map(|p| &p.id).chain(self.transitions.iter()) {
            if !seen.insert(id.clone()) {
                return Err(NetError::DuplicateId(id.clone()));
            }
        }
        for p in &self.places {
            if p.tau.is_negative() {
                return Err(NetError::NegativeTau(p.id.clone()));
            }
            if p.marking.is_negative() {
                return Err(NetError::NegativeMarking(p.id.clone()));
            }
        }
        let pidx: HashMap<&str, usize> = self.places.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        let qidx: HashMap<&str, usize> =
            self.transitions.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();
        let np = self.places.len();
        let nq = self.transitions.len();
        let mut p_in = vec![Vec::new(); np];
        let mut p_out = vec![Vec::new(); np];
        let mut q_in = vec![Vec::new(); nq];
        let mut q_out = vec![Vec::new(); nq];
        let mut arcs_seen = HashSet::new();
        for (from, to, w) in &self.arcs {
            if !w.is_positive() {
                return Err(NetError::BadWeight { from: from.clone(), to: to.clone() });
            }
            if !arcs_seen.insert((from.clone(), to.clone())) {
                return Err(NetError::DuplicateArc { from: from.clone(), to: to.clone() });
            }
            match (pidx.get(from.as_str()), qidx.get(from.as_str()), pidx.get(to.as_str()), qidx.get(to.as_str())) {
                (Some(&p), _, _, Some(&q)) => {
                    p_out[p].push((q, w.clone()));
                    q_in[q].push((p, w.clone()));
                }
                (_, Some(&q), Some(&p), _) => {
                    q_out[q].push((p, w.clone()));
                    p_in[p].push((q, w.clone()));
                }
                (None, None, _, _) => return Err(NetError::UnknownId(from.clone())),
                (_, _, None, None) => return Err(NetError::UnknownId(to.clone())),
                _ => return Err(NetError::ArcKinds { from: from.clone(), to: to.clone() }),
            }
        }
        for v in p_in.iter_mut().chain(p_out.iter_mut()).chain(q_in.iter_mut()).chain(q_out.iter_mut()) {
            v.sort_by_key(|(i, _)| *i);
        }

        let mut routing = vec![Routing::Sync; np];
        let mut routed = HashSet::new();
        for (place, spec) in self.routing {
            let &p = pidx.get(place.as_str()).ok_or_else(|| NetError::UnknownId(place.clone()))?;
            if !routed.insert(p) {
                return Err(NetError::RoutingConflict(place));
            }
            let resolve = |q: &str| -> Result<usize, NetError> {
                let &t = qidx.get(q).ok_or_else(|| NetError::UnknownId(q.to_string()))?;
                if !p_out[p].iter().any(|(x, _)| *x == t) {
                    return Err(NetError::RoutingTarget { place: place.clone(), transition: q.to_string() });
                }
                Ok(t)
            };
            routing[p] = match spec {
                RoutingSpec::Sync => Routing::Sync,
                RoutingSpec::Preselection(pi, schedule) => {
                    let mut v = Vec::new();
                    for (q, x) in pi {
                        v.push((resolve(&q)?, x));
                    }
                    v.sort_by_key(|(i, _)| *i);
                    let schedule = match schedule {
                        None => None,
                        Some((period, classes)) => {
                            let mut cls = Vec::new();
                            for (q, set) in classes {
                                cls.push((resolve(&q)?, set));
                            }
                            cls.sort_by_key(|(i, _)| *i);
                            Some(PeriodicSchedule { period, classes: cls })
                        }
                    };
                    Routing::Preselection { pi: v, schedule }
                }
                RoutingSpec::Priority(order) => {
                    let mut v = Vec::new();
                    for q in &order {
                        v.push(resolve(q)?);
                    }
                    let uniq: HashSet<usize> = v.iter().copied().collect();
                    if uniq.len() != v.len() || uniq.len() != p_out[p].len() {
                        return Err(NetError::PriorityOrder(place));
                    }
                    Routing::Priority { order: v }
                }
            };
        }
        Ok(PetriNet { places: self.places, transitions: self.transitions, routing, p_in, p_out, q_in, q_out })
    }
}

// ---------------------------------------------------------------- JSON form

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetFile {
    places: Vec<PlaceEntry>,
    transitions: Vec<TransitionEntry>,
    arcs: Vec<ArcEntry>,
    #[serde(default)]
    routing: Vec<RoutingEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlaceEntry {
    id: String,
    #[serde(with = "serde_rational", default = "Rational::zero")]
    tau: Rational,
    #[serde(with = "serde_rational", default = "Rational::zero")]
    marking: Rational,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum TransitionEntry {
    Id(String),
    Object { id: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArcEntry {
    from: String,
    to: String,
    #[serde(with = "serde_rational", default = "Rational::one")]
    weight: Rational,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RationalValue(#[serde(with = "serde_rational")] Rational);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScheduleEntry {
    period: u64,
    classes: BTreeMap<String, Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RoutingEntry {
    place: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pi: Option<BTreeMap<String, RationalValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<ScheduleEntry>,
}

impl NetFile {
    fn from_net(net: &PetriNet) -> NetFile {
        let places = net
            .places
            .iter()
            .map(|p| PlaceEntry { id: p.id.clone(), tau: p.tau.clone(), marking: p.marking.clone() })
            .collect();
        let transitions = net.transitions.iter().cloned().map(TransitionEntry::Id).collect();
        let mut arcs = Vec::new();
        for (p, outs) in net.p_out.iter().enumerate() {
            for (q, w) in outs {
                arcs.push(ArcEntry { from: net.places[p].id.clone(), to: net.transitions[*q].clone(), weight: w.clone() });
            }
        }
        for (q, outs) in net.q_out.iter().enumerate() {
            for (p, w) in outs {
                arcs.push(ArcEntry { from: net.transitions[q].clone(), to: net.places[*p].id.clone(), weight: w.clone() });
            }
        }
        let routing = net
            .routing
            .iter()
            .enumerate()
            .filter_map(|(p, r)| {
                let place = net.places[p].id.clone();
                match r {
                    Routing::Sync => None,
                    Routing::Preselection { pi, schedule } => Some(RoutingEntry {
                        place,
                        kind: "preselection".into(),
                        pi: Some(pi.iter().map(|(q, v)| (net.transitions[*q].clone(), RationalValue(v.clone()))).collect()),
                        order: None,
                        schedule: schedule.as_ref().map(|s| ScheduleEntry {
                            period: s.period,
                            classes: s.classes.iter().map(|(q, j)| (net.transitions[*q].clone(), j.clone())).collect(),
                        }),
                    }),
                    Routing::Priority { order } => Some(RoutingEntry {
                        place,
                        kind: "priority".into(),
                        pi: None,
                        order: Some(order.iter().map(|q| net.transitions[*q].clone()).collect()),
                        schedule: None,
                    }),
                }
            })
            .collect();
        NetFile { places, transitions, arcs, routing }
    }

    fn into_net(self) -> Result<PetriNet, NetError> {
        let mut b = NetBuilder::new();
        for p in self.places {
            b = b.place(p.id, p.tau, p.marking);
        }
        for t in self.transitions {
            b = b.transition(match t {
                TransitionEntry::Id(id) | TransitionEntry::Object { id } => id,
            });
        }
        for a in self.arcs {
            b = b.arc(a.from, a.to, a.weight);
        }
        for r in self.routing {
            b = match r.kind.as_str() {
                "sync" => b.sync(r.place),
                "preselection" => {
                    let pi: Vec<(String, Rational)> =
                        r.pi.unwrap_or_default().into_iter().map(|(q, v)| (q, v.0)).collect();
                    let pi_ref: Vec<(&str, Rational)> = pi.iter().map(|(q, v)| (q.as_str(), v.clone())).collect();
                    match r.schedule {
                        None => b.preselection(r.place, pi_ref),
                        Some(s) => {
                            let classes: Vec<(String, Vec<u64>)> = s.classes.into_iter().collect();
                            let cls: Vec<(&str, Vec<u64>)> = classes.iter().map(|(q, j)| (q.as_str(), j.clone())).collect();
                            let mut b = b.periodic_preselection(r.place.clone(), s.period, cls);
                            // Explicit proportions win over schedule frequencies.
                            if !pi_ref.is_empty() {
                                if let Some((_, RoutingSpec::Preselection(v, _))) = b.routing.last_mut() {
                                    *v = pi;
                                }
                            }
                            b
                        }
                    }
                }
                "priority" => {
                    let order = r.order.unwrap_or_default();
                    b.priority(r.place, order.iter().map(String::as_str).collect())
                }
                other => return Err(NetError::RoutingKind(other.to_string())),
            };
        }
        b.build()
    }
}

// --------------------------------------------------------------- validation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Advisory checks do not make the report fail.
    pub advisory: bool,
    pub detail: String,
    pub witness: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.advisory)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = match (c.passed, c.advisory) {
                (true, _) => "pass",
                (false, true) => "note",
                (false, false) => "FAIL",
            };
            write!(f, "{status:4} {}: {}", c.name, c.detail)?;
            if !c.witness.is_empty() {
                write!(f, " [{}]", c.witness.join(" -> "))?;
            }
            writeln!(f)?;
        }
        write!(f, "{}", if self.ok() { "valid" } else { "invalid" })
    }
}

fn check(name: &'static str, advisory: bool, failure: Option<(String, Vec<String>)>, ok_detail: &str) -> Check {
    match failure {
        None => Check { name, passed: true, advisory, detail: ok_detail.to_string(), witness: Vec::new() },
        Some((detail, witness)) => Check { name, passed: false, advisory, detail, witness },
    }
}

/// Circuit of the bipartite graph through zero-holding-time places only.
pub fn zero_time_circuit(net: &PetriNet) -> Option<Vec<String>> {
    let np = net.num_places();
    let n = np + net.num_transitions();
    let mut adj = vec![Vec::new(); n];
    for p in 0..np {
        if !net.places[p].tau.is_zero() {
            continue;
        }
        for (q, _) in &net.p_out[p] {
            adj[p].push(np + q);
        }
        for (q, _) in &net.p_in[p] {
            adj[np + q].push(p);
        }
    }
    graph::find_cycle(&adj).map(|c| {
        c.into_iter()
            .map(|v| if v < np { net.places[v].id.clone() } else { net.transitions[v - np].clone() })
            .collect()
    })
}

/// Dependency graph of the within-step resolution: zero-delay reads and
/// higher-before-lower priority.
pub fn step_dependencies(net: &PetriNet) -> Vec<Vec<usize>> {
    let nq = net.num_transitions();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nq];
    for q in 0..nq {
        for (p, _) in &net.q_in[q] {
            if net.places[*p].tau.is_zero() {
                for (q2, _) in &net.p_in[*p] {
                    adj[*q2].push(q);
                }
            }
            if let Some(order) = net.priority_order(*p) {
                for &hi in order.iter().take_while(|&&x| x != q) {
                    adj[hi].push(q);
                }
            }
        }
    }
    for v in adj.iter_mut() {
        v.sort_unstable();
        v.dedup();
    }
    adj
}

fn priority_union(net: &PetriNet) -> Vec<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); net.num_transitions()];
    for p in 0..net.num_places() {
        if let Some(order) = net.priority_order(p) {
            for w in order.windows(2) {
                adj[w[0]].push(w[1]);
            }
        }
    }
    for v in adj.iter_mut() {
        v.sort_unstable();
        v.dedup();
    }
    adj
}

pub fn validate_net(net: &PetriNet) -> ValidationReport {
    let tname = |q: usize| net.transitions[q].clone();
    let mut checks = Vec::new();

    checks.push(check(
        "non_zeno",
        false,
        zero_time_circuit(net).map(|c| ("circuit of zero-holding-time places".to_string(), c)),
        "no circuit through zero-holding-time places only",
    ));

    let sourceless: Vec<String> = (0..net.num_transitions()).filter(|&q| net.q_in[q].is_empty()).map(tname).collect();
    checks.push(check(
        "transition_inputs",
        false,
        (!sourceless.is_empty()).then(|| ("transitions without upstream place fire unboundedly".to_string(), sourceless)),
        "every transition has an upstream place",
    ));

    let conflicts: Vec<String> = (0..net.num_places())
        .filter(|&p| matches!(net.routing[p], Routing::Sync) && net.p_out[p].len() > 1)
        .map(|p| net.places[p].id.clone())
        .collect();
    checks.push(check(
        "routing_defined",
        false,
        (!conflicts.is_empty()).then(|| ("places with several downstream transitions need a routing rule".to_string(), conflicts)),
        "every place with several downstream transitions has a routing rule",
    ));

    let mut bad_pi = Vec::new();
    for p in 0..net.num_places() {
        if let Routing::Preselection { pi, schedule } = &net.routing[p] {
            let keys: Vec<usize> = pi.iter().map(|(q, _)| *q).collect();
            let outs: Vec<usize> = net.p_out[p].iter().map(|(q, _)| *q).collect();
            let sum: Rational = pi.iter().map(|(_, v)| v.clone()).sum();
            let mut ok = keys == outs && pi.iter().all(|(_, v)| !v.is_negative()) && sum.is_one();
            if let Some(s) = schedule {
                let mut all: Vec<u64> = s.classes.iter().flat_map(|(_, j)| j.iter().copied()).collect();
                all.sort_unstable();
                let cls: Vec<usize> = s.classes.iter().map(|(q, _)| *q).collect();
                ok &= s.period > 0 && all == (1..=s.period).collect::<Vec<_>>() && cls == outs;
            }
            if !ok {
                bad_pi.push(net.places[p].id.clone());
            }
        }
    }
    checks.push(check(
        "preselection_stochastic",
        false,
        (!bad_pi.is_empty()).then(|| ("preselection vector is not stochastic over the downstream transitions".to_string(), bad_pi)),
        "preselection vectors are stochastic",
    ));

    checks.push(check(
        "priority_compatibility",
        false,
        graph::find_cycle(&priority_union(net))
            .map(|c| ("union of priority orders has a cycle".to_string(), c.into_iter().map(tname).collect())),
        "union of priority orders is acyclic",
    ));

    checks.push(check(
        "step_order",
        false,
        graph::topo_sort(&step_dependencies(net)).err().map(|c| {
            ("zero-delay and priority dependencies are cyclic".to_string(), c.into_iter().map(tname).collect())
        }),
        "zero-delay and priority dependencies admit a resolution order",
    ));

    let not_normal: Vec<String> = non_normal_pairs(net)
        .into_iter()
        .map(|(p, q)| format!("{}->{}", net.places[p].id, net.transitions[q]))
        .collect();
    checks.push(check(
        "preselection_normal_form",
        true,
        (!not_normal.is_empty()).then(|| {
            ("preselected transitions with other upstream places (read through an implicit zero-time place)".to_string(), not_normal)
        }),
        "preselected transitions have a single upstream place",
    ));

    ValidationReport { checks }
}

fn non_normal_pairs(net: &PetriNet) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for p in 0..net.num_places() {
        if matches!(net.routing[p], Routing::Preselection { .. }) {
            for (q, _) in &net.p_out[p] {
                if net.q_in[*q].len() > 1 {
                    out.push((p, *q));
                }
            }
        }
    }
    out
}

fn fresh_id(taken: &HashSet<String>, base: String) -> String {
    let mut id = base;
    while taken.contains(&id) {
        id.push('*');
    }
    id
}

/// Inserts a zero-time place and a copy transition between each preselection
/// place and each of its downstream transitions that has other upstream
/// places. Counter functions of the original transitions are unchanged.
pub fn normalize_preselection(net: &PetriNet) -> Result<PetriNet, NetError> {
    let pairs = non_normal_pairs(net);
    if pairs.is_empty() {
        return Ok(net.clone());
    }
    let mut taken: HashSet<String> = net.places.iter().map(|p| p.id.clone()).chain(net.transitions.iter().cloned()).collect();
    let mut out = net.clone();
    for (p, q) in pairs {
        let qname = net.transitions[q].clone();
        let pname = net.places[p].id.clone();
        let star_q = fresh_id(&taken, format!("{qname}*{pname}"));
        taken.insert(star_q.clone());
        let star_p = fresh_id(&taken, format!("{pname}*{qname}"));
        taken.insert(star_p.clone());

        let nq = out.transitions.len();
        let np = out.places.len();
        out.transitions.push(star_q);
        out.places.push(Place { id: star_p, tau: Rational::zero(), marking: Rational::zero() });
        out.routing.push(Routing::Sync);

        // p -> q becomes p -> q*
        let w = out.p_out[p].iter().find(|(t, _)| *t == q).expect("arc").1.clone();
        out.p_out[p].retain(|(t, _)| *t != q);
        out.p_out[p].push((nq, w.clone()));
        out.q_in[q].retain(|(s, _)| *s != p);
        out.q_in.push(vec![(p, w)]);
        // q* -> p* -> q
        out.q_out.push(vec![(np, Rational::one())]);
        out.p_in.push(vec![(nq, Rational::one())]);
        out.p_out.push(vec![(q, Rational::one())]);
        out.q_in[q].push((np, Rational::one()));
        out.q_in[q].sort_by_key(|(i, _)| *i);

        if let Routing::Preselection { pi, schedule } = &mut out.routing[p] {
            for (t, _) in pi.iter_mut() {
                if *t == q {
                    *t = nq;
                }
            }
            pi.sort_by_key(|(i, _)| *i);
            if let Some(s) = schedule {
                for (t, _) in s.classes.iter_mut() {
                    if *t == q {
                        *t = nq;
                    }
                }
                s.classes.sort_by_key(|(i, _)| *i);
            }
        }
    }
    if let Some(c) = zero_time_circuit(&out) {
        return Err(NetError::ZenoAfterNormalization(c));
    }
    Ok(out)
}

// ------------------------------------------------------ stoichiometric invariant

/// Strictly positive transition weights balancing routed flows.
#[derive(Debug, Clone, PartialEq)]
pub struct StoichiometricInvariant {
    /// Normalized so that the smallest entry is one.
    pub e: Vec<Rational>,
    /// Dimension of the solution space of the defining equations.
    pub cone_dimension: usize,
}

/// Coefficient rows of the defining equations, one per `(q, p in q_in)`:
/// `e_q - pi_qp / alpha_qp * sum_{q' in p_in} alpha_pq' e_q' = 0`.
pub fn invariant_equations(net: &PetriNet) -> Vec<Vec<Rational>> {
    let nq = net.num_transitions();
    let mut rows = Vec::new();
    for q in 0..nq {
        for (p, a) in &net.q_in[q] {
            let mut row = vec![Rational::zero(); nq];
            row[q] += Rational::one();
            let f = net.pi(q, *p) / a;
            for (q2, w) in &net.p_in[*p] {
                row[*q2] -= &f * w;
            }
            rows.push(row);
        }
    }
    rows
}

/// Exact check of the defining identity for every `(q, p in q_in)` pair.
pub fn is_invariant(net: &PetriNet, e: &[Rational]) -> bool {
    e.len() == net.num_transitions()
        && e.iter().all(|x| x.is_positive())
        && invariant_equations(net).iter().all(|row| linalg::dot(row, e).is_zero())
}

/// Positive solution of the defining equations with smallest entry one, or
/// `None` when the solution cone has no strictly positive vector.
pub fn stoichiometric_invariant(net: &PetriNet) -> Result<Option<StoichiometricInvariant>, NetError> {
    if let Some(p) = net.first_priority_place() {
        return Err(NetError::PriorityPresent(net.places[p].id.clone()));
    }
    let nq = net.num_transitions();
    let rows = invariant_equations(net);
    let cone_dimension = linalg::null_space(&rows, nq).len();
    if cone_dimension == 0 {
        return Ok(None);
    }
    let mut lp = LinearProgram::new(nq);
    lp.minimize(vec![Rational::one(); nq]);
    for row in rows {
        lp.add(row, Cmp::Eq, Rational::zero());
    }
    for q in 0..nq {
        let mut unit = vec![Rational::zero(); nq];
        unit[q] = Rational::one();
        lp.add(unit, Cmp::Ge, Rational::one());
    }
    match lp.solve() {
        LpOutcome::Optimal { x, .. } => Ok(Some(StoichiometricInvariant { e: x, cone_dimension })),
        _ => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    fn loop_net(tau: i64) -> PetriNet {
        NetBuilder::new()
            .place("p", int(tau), int(1))
            .transition("q")
            .arc("p", "q", int(1))
            .arc("q", "p", int(1))
            .build()
            .unwrap()
    }

    #[test]
    fn builder_resolves_directions() {
        let net = loop_net(1);
        assert_eq!(net.q_in(0), &[(0, int(1))]);
        assert_eq!(net.p_in(0), &[(0, int(1))]);
        assert_eq!(net.transition_kind(0), TransitionKind::Sync);
    }

    #[test]
    fn builder_rejects_bad_input() {
        let e = NetBuilder::new().place("p", int(0), int(0)).transition("p").build();
        assert_eq!(e, Err(NetError::DuplicateId("p".into())));
        let e = NetBuilder::new().place("p", int(0), int(0)).transition("q").arc("p", "q", int(0)).build();
        assert!(matches!(e, Err(NetError::BadWeight { .. })));
        let e = NetBuilder::new().place("p", int(0), int(0)).place("r", int(0), int(0)).arc("p", "r", int(1)).build();
        assert!(matches!(e, Err(NetError::ArcKinds { .. })));
        let e = NetBuilder::new()
            .place("p", int(0), int(0))
            .transition("a")
            .transition("b")
            .arc("p", "a", int(1))
            .arc("p", "b", int(1))
            .priority("p", vec!["a", "b"])
            .preselection("p", vec![("a", ratio(1, 2)), ("b", ratio(1, 2))])
            .build();
        assert_eq!(e, Err(NetError::RoutingConflict("p".into())));
    }

    #[test]
    fn zero_time_self_loop_is_zeno() {
        let report = validate_net(&loop_net(0));
        assert!(!report.ok());
        let c = report.check("non_zeno").unwrap();
        assert!(!c.passed);
        assert_eq!(c.witness, vec!["p".to_string(), "q".to_string()]);
        assert!(validate_net(&loop_net(2)).ok());
    }

    #[test]
    fn incompatible_priorities_are_reported() {
        let net = NetBuilder::new()
            .place("p1", int(1), int(1))
            .place("p2", int(1), int(1))
            .transition("a")
            .transition("b")
            .arc("p1", "a", int(1))
            .arc("p1", "b", int(1))
            .arc("p2", "a", int(1))
            .arc("p2", "b", int(1))
            .arc("a", "p1", int(1))
            .arc("b", "p2", int(1))
            .priority("p1", vec!["a", "b"])
            .priority("p2", vec!["b", "a"])
            .build()
            .unwrap();
        let r = validate_net(&net);
        assert!(!r.check("priority_compatibility").unwrap().passed);
        assert!(!r.ok());
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{
          "places": [{"id": "p1", "tau": 2.0, "marking": 3}, {"id": "p2", "tau": "1/2", "marking": 0}],
          "transitions": ["q1", "q2"],
          "arcs": [{"from": "p1", "to": "q1", "weight": 1}, {"from": "p1", "to": "q2"},
                   {"from": "q1", "to": "p2", "weight": "3/2"}, {"from": "p2", "to": "q1"},
                   {"from": "q2", "to": "p1"}, {"from": "q1", "to": "p1"}],
          "routing": [{"place": "p1", "kind": "preselection", "pi": {"q1": 0.3, "q2": "7/10"}}]
        }"#;
        let net = PetriNet::from_json(text).unwrap();
        assert_eq!(net.pi(0, 0), ratio(3, 10));
        assert_eq!(net.places()[1].tau, ratio(1, 2));
        let again = PetriNet::from_json(&net.to_json()).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn two_transition_invariant_by_hand() {
        // q1 emits 2 tokens per firing into p, q2 consumes 1: e1 = 2 e2 from
        // p; a unit self-loop on q1 keeps e1 free.
        let net = NetBuilder::new()
            .place("s", int(1), int(1))
            .place("p", int(1), int(0))
            .place("back", int(1), int(0))
            .transition("q1")
            .transition("q2")
            .arc("s", "q1", int(1))
            .arc("q1", "s", int(1))
            .arc("q1", "p", int(1))
            .arc("p", "q2", int(1))
            .arc("q2", "back", int(1))
            .arc("back", "q1", int(2))
            .build()
            .unwrap();
        // e_q1 = e_q1 (s), e_q2 = e_q1 (p), e_q1 = e_q2 / 2 (back) -> only 0.
        assert_eq!(stoichiometric_invariant(&net).unwrap(), None);

        let net = NetBuilder::new()
            .place("p", int(1), int(0))
            .place("r", int(1), int(1))
            .transition("q1")
            .transition("q2")
            .arc("q1", "p", int(2))
            .arc("p", "q2", int(1))
            .arc("q2", "r", int(1))
            .arc("r", "q1", int(2))
            .build()
            .unwrap();
        // p: e2 = 2 e1 ; r: e1 = e2 / 2
        let inv = stoichiometric_invariant(&net).unwrap().unwrap();
        assert_eq!(inv.e, vec![int(1), int(2)]);
        assert_eq!(inv.cone_dimension, 1);
        assert!(is_invariant(&net, &inv.e));
    }

    #[test]
    fn self_loop_invariant_is_one() {
        let inv = stoichiometric_invariant(&loop_net(1)).unwrap().unwrap();
        assert_eq!(inv.e, vec![int(1)]);
    }

    #[test]
    fn periodic_schedule_counts() {
        let s = PeriodicSchedule { period: 3, classes: vec![(0, vec![1, 3]), (1, vec![2])] };
        assert_eq!((0..=7).map(|n| s.count(0, n)).collect::<Vec<_>>(), vec![0, 1, 1, 2, 3, 3, 4, 5]);
        assert_eq!(s.count(0, 7) + s.count(1, 7), 7);
    }
}
