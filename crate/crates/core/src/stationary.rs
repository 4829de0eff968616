//! Germs of affine functions, stationary regimes of the counter dynamics and
//! the throughput complex over parametric initial markings.
//!
//! A stationary regime `z(t) = rho t + u` is described per transition by the
//! branch (upstream place) attaining the lexicographic minimum. Fixing one
//! branch per transition turns the germ equations into a linear system in
//! `(rho, u)`; the other branches contribute inequalities.

use crate::linalg;
use crate::petri_model::{self, NetError, PetriNet};
use crate::polyhedron::{Affine, Halfspace, HalfspaceJson, Polyhedron};
use crate::rational::{self, Rational};
use crate::smdp::{self, Method, SmdpError};
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StationaryError {
    #[error("germ scale factor must be positive, got {0}")]
    NonPositiveScale(String),
    #[error("net fails validation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Smdp(#[from] SmdpError),
    #[error("net has no positive stoichiometric invariant")]
    MissingInvariant,
    #[error("{0} branch selections exceed the enumeration cap")]
    TooManySelections(u128),
    #[error("no stationary solution found")]
    NoSolution,
    #[error("stationary solution fails the germ equations: {0}")]
    Check(String),
    #[error("parameter: {0}")]
    Param(String),
}

pub const SELECTION_CAP: u128 = 1 << 20;

// ------------------------------------------------------------------- germs

/// Germ at infinity of `t -> rho t + u`, or the top element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Germ {
    Affine { rho: Rational, u: Rational },
    Top,
}

impl Ord for Germ {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Germ::Top, Germ::Top) => Ordering::Equal,
            (Germ::Top, _) => Ordering::Greater,
            (_, Germ::Top) => Ordering::Less,
            (Germ::Affine { rho: r1, u: u1 }, Germ::Affine { rho: r2, u: u2 }) => r1.cmp(r2).then_with(|| u1.cmp(u2)),
        }
    }
}

impl PartialOrd for Germ {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Germ {
    pub fn new(rho: Rational, u: Rational) -> Self {
        Germ::Affine { rho, u }
    }

    pub fn add(&self, other: &Germ) -> Germ {
        match (self, other) {
            (Germ::Affine { rho: r1, u: u1 }, Germ::Affine { rho: r2, u: u2 }) => Germ::new(r1 + r2, u1 + u2),
            _ => Germ::Top,
        }
    }

    pub fn scale(&self, a: &Rational) -> Result<Germ, StationaryError> {
        if !a.is_positive() {
            return Err(StationaryError::NonPositiveScale(rational::fmt(a)));
        }
        Ok(match self {
            Germ::Affine { rho, u } => Germ::new(a * rho, a * u),
            Germ::Top => Germ::Top,
        })
    }

    /// Germ of `t -> f(t - tau)`.
    pub fn shift(&self, tau: &Rational) -> Germ {
        match self {
            Germ::Affine { rho, u } => Germ::new(rho.clone(), u - rho * tau),
            Germ::Top => Germ::Top,
        }
    }

    /// Lexicographic minimum; `Top` for an empty list.
    pub fn lexmin(gs: &[Germ]) -> Germ {
        gs.iter().min().cloned().unwrap_or(Germ::Top)
    }
}

// --------------------------------------------------------- branch algebra

/// Transitions of `p` with lower priority than `q`; empty unless `p` is a
/// priority place.
fn lower(net: &PetriNet, q: usize, p: usize) -> &[usize] {
    match net.priority_order(p) {
        Some(order) => {
            let pos = order.iter().position(|&t| t == q).expect("downstream transition is ranked");
            &order[pos + 1..]
        }
        None => &[],
    }
}

/// Germ of the term of branch `p` of transition `q`, as affine forms in
/// whatever variables `rho`, `u` and `marks` are expressed in.
fn branch_forms(
    net: &PetriNet,
    q: usize,
    p: usize,
    alpha: &Rational,
    rho: &[Affine],
    u: &[Affine],
    mark: &Affine,
) -> (Affine, Affine) {
    let c = net.pi(q, p) / alpha;
    let tau = &net.places()[p].tau;
    let k = mark.dim();
    let mut r = Affine::zero(k);
    let mut v = mark.clone();
    for (q2, w) in net.p_in(p) {
        r = r.add_scaled(w, &rho[*q2]);
        v = v.add_scaled(w, &u[*q2]).add_scaled(&-(w * tau), &rho[*q2]);
    }
    if net.priority_order(p).is_some() {
        for (q2, w) in net.p_out(p) {
            if *q2 != q {
                r = r.add_scaled(&-w.clone(), &rho[*q2]);
                v = v.add_scaled(&-w.clone(), &u[*q2]);
            }
        }
    }
    (r.scale(&c), v.scale(&c))
}

fn constants(xs: &[Rational]) -> Vec<Affine> {
    xs.iter().map(|x| Affine::constant(x.clone(), 0)).collect()
}

/// Per transition and upstream place, the branch germ at `(rho, u)`, or
/// `None` when a lower-priority transition of that place has positive rate.
pub fn branch_germs(net: &PetriNet, rho: &[Rational], u: &[Rational]) -> Vec<Vec<(usize, Option<Germ>)>> {
    let (rf, uf) = (constants(rho), constants(u));
    (0..net.num_transitions())
        .map(|q| {
            net.q_in(q)
                .iter()
                .map(|(p, a)| {
                    if lower(net, q, *p).iter().any(|&t| !rho[t].is_zero()) {
                        return (*p, None);
                    }
                    let mark = Affine::constant(net.places()[*p].marking.clone(), 0);
                    let (r, v) = branch_forms(net, q, *p, a, &rf, &uf, &mark);
                    (*p, Some(Germ::new(r.constant, v.constant)))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GermSystemSolution {
    pub rho: Vec<Rational>,
    pub u: Vec<Rational>,
    /// Per transition, the upstream places whose germ attains the minimum.
    pub witness: Vec<Vec<usize>>,
    /// Time shift already folded into `u`: every branch that is not minimal
    /// at infinity stays above the minimal one on `t >= 0`.
    pub t0: Rational,
}

impl GermSystemSolution {
    pub fn witness_label(&self, net: &PetriNet) -> String {
        let parts: Vec<String> = (0..net.num_transitions())
            .filter(|&q| net.q_in(q).len() > 1)
            .map(|q| {
                let ps: Vec<&str> = self.witness[q].iter().map(|&p| net.places()[p].id.as_str()).collect();
                format!("{}={}", net.transitions()[q], ps.join("|"))
            })
            .collect();
        parts.join(";")
    }

    pub fn to_json(&self, net: &PetriNet) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (q, id) in net.transitions().iter().enumerate() {
            obj.insert(
                id.clone(),
                serde_json::json!({
                    "rho": rational::fmt(&self.rho[q]),
                    "u": rational::fmt(&self.u[q]),
                    "witness": self.witness[q].iter().map(|&p| net.places()[p].id.clone()).collect::<Vec<_>>(),
                }),
            );
        }
        serde_json::json!({ "t0": rational::fmt(&self.t0), "transitions": obj })
    }
}

/// Minimizing places per transition at `(rho, u)`, or a description of the
/// first violated germ equation.
pub fn germ_witness(net: &PetriNet, rho: &[Rational], u: &[Rational]) -> Result<Vec<Vec<usize>>, String> {
    if let Some(q) = rho.iter().position(|r| r.is_negative()) {
        return Err(format!("negative rate on `{}`", net.transitions()[q]));
    }
    let germs = branch_germs(net, rho, u);
    let mut witness = Vec::with_capacity(rho.len());
    for (q, branches) in germs.iter().enumerate() {
        let own = Germ::new(rho[q].clone(), u[q].clone());
        let admissible: Vec<(usize, &Germ)> = branches.iter().filter_map(|(p, g)| g.as_ref().map(|g| (*p, g))).collect();
        let min = Germ::lexmin(&admissible.iter().map(|(_, g)| (*g).clone()).collect::<Vec<_>>());
        if min != own {
            return Err(format!("transition `{}`: {:?} != {:?}", net.transitions()[q], own, min));
        }
        witness.push(admissible.iter().filter(|(_, g)| **g == own).map(|(p, _)| *p).collect());
    }
    Ok(witness)
}

/// Smallest `t0 >= 0` such that every branch with a larger rate dominates
/// the regime on `[t0, inf)`.
fn shift_time(net: &PetriNet, rho: &[Rational], u: &[Rational]) -> Rational {
    let (rf, uf) = (constants(rho), constants(u));
    let mut t0 = Rational::zero();
    for q in 0..net.num_transitions() {
        for (p, a) in net.q_in(q) {
            let mark = Affine::constant(net.places()[*p].marking.clone(), 0);
            let (r, v) = branch_forms(net, q, *p, a, &rf, &uf, &mark);
            if r.constant > rho[q] && v.constant < u[q] {
                let t = (&u[q] - &v.constant) / (&r.constant - &rho[q]);
                if t > t0 {
                    t0 = t;
                }
            }
        }
    }
    t0
}

fn finish(net: &PetriNet, rho: Vec<Rational>, u: Vec<Rational>) -> Result<GermSystemSolution, StationaryError> {
    let t0 = shift_time(net, &rho, &u);
    let u: Vec<Rational> = u.iter().zip(&rho).map(|(u, r)| u + r * &t0).collect();
    let witness = germ_witness(net, &rho, &u).map_err(StationaryError::Check)?;
    Ok(GermSystemSolution { rho, u, witness, t0 })
}

fn require_valid(net: &PetriNet) -> Result<(), StationaryError> {
    let report = petri_model::validate_net(net);
    if report.ok() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed && !c.advisory).map(|c| c.name).collect();
        Err(StationaryError::Invalid(failed.join(", ")))
    }
}

// ------------------------------------------------------- priority-free path

/// Stationary regime of a priority-free net from the optimal average cost
/// and bias of its undiscounted SMDP.
pub fn solve_lex_priority_free(net: &PetriNet) -> Result<GermSystemSolution, StationaryError> {
    require_valid(net)?;
    let inv = petri_model::stoichiometric_invariant(net)?.ok_or(StationaryError::MissingInvariant)?;
    let model = smdp::petri_to_smdp(net, Some(&inv.e))?;
    let sol = smdp::solve_average_cost(&model, Method::PolicyIteration)?;
    let rho = inv.e.iter().zip(&sol.g).map(|(e, g)| e * g).collect();
    let u = inv.e.iter().zip(&sol.h).map(|(e, h)| e * h).collect();
    finish(net, rho, u)
}

// -------------------------------------------------------- selection solver

struct Selected {
    /// Over the `k` parameters.
    rho: Vec<Affine>,
    /// Over the parameters followed by the free directions of `u`.
    u: Vec<Affine>,
    /// Consistency constraints over the same variables as `u`.
    region: Polyhedron,
}

fn extend(a: &Affine, dim: usize) -> Affine {
    let mut coeffs = a.coeffs.clone();
    coeffs.resize(dim, Rational::zero());
    Affine { coeffs, constant: a.constant.clone() }
}

fn selection_sizes(net: &PetriNet) -> Vec<usize> {
    (0..net.num_transitions()).map(|q| net.q_in(q).len()).collect()
}

fn count_selections(sizes: &[usize]) -> u128 {
    sizes.iter().fold(1u128, |acc, &s| acc.saturating_mul(s as u128))
}

/// Selection number `k` in odometer order, last transition fastest.
fn selection_at(sizes: &[usize], mut k: u128) -> Vec<usize> {
    let mut sel = vec![0; sizes.len()];
    for i in (0..sizes.len()).rev() {
        let n = sizes[i] as u128;
        sel[i] = (k % n) as usize;
        k /= n;
    }
    sel
}

pub fn selection_label(net: &PetriNet, sel: &[usize]) -> String {
    let parts: Vec<String> = (0..net.num_transitions())
        .filter(|&q| net.q_in(q).len() > 1)
        .map(|q| format!("{}={}", net.transitions()[q], net.places()[net.q_in(q)[sel[q]].0].id))
        .collect();
    parts.join(";")
}

/// Solves the germ equations of one branch selection, together with the
/// support pattern it implies, with markings given as affine forms in `k`
/// parameters. `Ok(None)` means the selection is
/// inconsistent on every full-dimensional parameter region.
fn solve_selection(net: &PetriNet, marks: &[Affine], k: usize, sel: &[usize], base: &[Halfspace]) -> Result<Option<Selected>, String> {
    let n = net.num_transitions();
    let width = 2 * n + 1 + k;
    let mut aug = vec![vec![Rational::zero(); width]; 2 * n];
    for q in 0..n {
        let (p, a) = &net.q_in(q)[sel[q]];
        let c = net.pi(q, *p) / a;
        let tau = &net.places()[*p].tau;
        let (rr, ur) = (q, n + q);
        aug[rr][q] += Rational::one();
        aug[ur][n + q] += Rational::one();
        for (q2, w) in net.p_in(*p) {
            let cw = &c * w;
            aug[rr][*q2] -= &cw;
            aug[ur][n + *q2] -= &cw;
            aug[ur][*q2] += &cw * tau;
        }
        if net.priority_order(*p).is_some() {
            for (q2, w) in net.p_out(*p) {
                if *q2 != q {
                    let cw = &c * w;
                    aug[rr][*q2] += &cw;
                    aug[ur][n + *q2] += &cw;
                }
            }
        }
        let m = &marks[*p];
        aug[ur][2 * n] = &c * &m.constant;
        for j in 0..k {
            aug[ur][2 * n + 1 + j] = &c * &m.coeffs[j];
        }
    }
    // Support pattern: a selected priority branch forces every lower-priority
    // rate of its place to vanish.
    let mut forced = vec![false; n];
    for q in 0..n {
        for &t in lower(net, q, net.q_in(q)[sel[q]].0) {
            forced[t] = true;
        }
    }
    for t in (0..n).filter(|&t| forced[t]) {
        let mut row = vec![Rational::zero(); width];
        row[t] = Rational::one();
        aug.push(row);
    }
    let pivots = linalg::rref(&mut aug, 2 * n);
    if aug[pivots.len()..].iter().any(|row| row[2 * n..].iter().any(|x| !x.is_zero())) {
        return Ok(None);
    }
    let mut pivot_row = vec![None; 2 * n];
    for (r, &c) in pivots.iter().enumerate() {
        pivot_row[c] = Some(r);
    }
    let free: Vec<usize> = (0..2 * n).filter(|&c| pivot_row[c].is_none()).collect();
    if free.iter().any(|&f| f < n) || free.iter().any(|&f| pivots.iter().enumerate().any(|(r, &c)| c < n && !aug[r][f].is_zero())) {
        return Err(format!("rates not determined by selection {}", selection_label(net, sel)));
    }
    let ns = free.len();
    let dim = k + ns;
    let form = |r: usize| Affine { coeffs: aug[r][2 * n + 1..].to_vec(), constant: aug[r][2 * n].clone() };
    let rho: Vec<Affine> = (0..n).map(|q| form(pivot_row[q].expect("rates are pivots"))).collect();
    let u: Vec<Affine> = (0..n)
        .map(|q| match pivot_row[n + q] {
            Some(r) => {
                let mut f = extend(&form(r), dim);
                for (i, &fc) in free.iter().enumerate() {
                    f.coeffs[k + i] = -aug[r][fc].clone();
                }
                f
            }
            None => Affine::var(k + free.iter().position(|&f| f == n + q).expect("free"), dim),
        })
        .collect();
    let rho_ext: Vec<Affine> = rho.iter().map(|r| extend(r, dim)).collect();
    let marks_ext: Vec<Affine> = marks.iter().map(|m| extend(m, dim)).collect();
    let zero: Vec<bool> = rho.iter().map(Affine::is_zero).collect();

    let mut rows: Vec<Halfspace> = base.iter().map(|h| {
        let mut c = h.coeffs.clone();
        c.resize(dim, Rational::zero());
        Halfspace { coeffs: c, rhs: h.rhs.clone() }
    }).collect();
    let origin = Affine::zero(dim);
    for q in 0..n {
        if !zero[q] {
            rows.push(Halfspace::ge(&rho_ext[q], &origin));
        }
        for (b, (p, a)) in net.q_in(q).iter().enumerate() {
            if b == sel[q] || lower(net, q, *p).iter().any(|&t| !zero[t]) {
                continue;
            }
            let (r, v) = branch_forms(net, q, *p, a, &rho_ext, &u, &marks_ext[*p]);
            if r.sub(&rho_ext[q]).is_zero() {
                rows.push(Halfspace::le(&u[q], &v));
            } else {
                rows.push(Halfspace::le(&rho_ext[q], &r));
            }
        }
    }
    if rows.iter().any(|h| h.is_trivial() && h.rhs.is_negative()) {
        return Ok(None);
    }
    Ok(Some(Selected { rho, u, region: Polyhedron::new(dim, rows) }))
}

fn enumerate_selections<T: Send>(
    net: &PetriNet,
    f: impl Fn(&[usize]) -> Option<T> + Sync + Send,
) -> Result<Vec<T>, StationaryError> {
    let sizes = selection_sizes(net);
    let count = count_selections(&sizes);
    if count > SELECTION_CAP {
        return Err(StationaryError::TooManySelections(count));
    }
    let run = |i: u128| f(&selection_at(&sizes, i));
    Ok(if count > 8 {
        (0..count).into_par_iter().filter_map(run).collect()
    } else {
        (0..count).filter_map(run).collect()
    })
}

/// All stationary regimes found by branch enumeration, one per distinct rate
/// vector, in enumeration order.
pub fn solve_germ_priority(net: &PetriNet) -> Result<Vec<GermSystemSolution>, StationaryError> {
    require_valid(net)?;
    let marks = constants(&net.markings());
    let found = enumerate_selections(net, |sel| match solve_selection(net, &marks, 0, sel, &[]) {
        Ok(Some(s)) => {
            let point = s.region.interior_point().or_else(|| s.region.point())?;
            let rho: Vec<Rational> = s.rho.iter().map(|r| r.constant.clone()).collect();
            let u: Vec<Rational> = s.u.iter().map(|f| f.eval(&point)).collect();
            Some((rho, u))
        }
        Ok(None) => None,
        Err(why) => {
            log::debug!("{why}");
            None
        }
    })?;
    let mut out: Vec<GermSystemSolution> = Vec::new();
    for (rho, u) in found {
        if out.iter().any(|s| s.rho == rho) {
            continue;
        }
        out.push(finish(net, rho, u)?);
    }
    if out.is_empty() {
        return Err(StationaryError::NoSolution);
    }
    Ok(out)
}

/// Priority-free nets with an invariant go through the SMDP; everything
/// else through branch enumeration.
pub fn solve_stationary(net: &PetriNet) -> Result<Vec<GermSystemSolution>, StationaryError> {
    if !net.has_priority() && petri_model::stoichiometric_invariant(net)?.is_some() {
        return Ok(vec![solve_lex_priority_free(net)?]);
    }
    solve_germ_priority(net)
}

// ------------------------------------------------------- throughput complex

/// Initial marking of `place` treated as a parameter ranging over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub place: usize,
    pub lo: Rational,
    pub hi: Option<Rational>,
}

impl ParamSpec {
    /// Parses `NA,NP=0:20`: place ids with optional `lo:hi` ranges.
    pub fn parse_list(net: &PetriNet, s: &str) -> Result<Vec<ParamSpec>, StationaryError> {
        let mut out: Vec<ParamSpec> = Vec::new();
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let (name, range) = match item.split_once('=') {
                Some((n, r)) => (n.trim(), Some(r)),
                None => (item, None),
            };
            let place = net.place_index(name).ok_or_else(|| StationaryError::Param(format!("unknown place `{name}`")))?;
            if out.iter().any(|p| p.place == place) {
                return Err(StationaryError::Param(format!("`{name}` listed twice")));
            }
            let parse = |x: &str| rational::parse(x.trim()).map_err(|e| StationaryError::Param(format!("`{item}`: {e}")));
            let (lo, hi) = match range {
                None => (Rational::zero(), None),
                Some(r) => {
                    let (a, b) = r.split_once(':').ok_or_else(|| StationaryError::Param(format!("`{item}`: expected lo:hi")))?;
                    (parse(a)?, Some(parse(b)?))
                }
            };
            if lo.is_negative() || hi.as_ref().is_some_and(|h| *h <= lo) {
                return Err(StationaryError::Param(format!("`{item}`: need 0 <= lo < hi")));
            }
            out.push(ParamSpec { name: name.to_string(), place, lo, hi });
        }
        if out.is_empty() {
            return Err(StationaryError::Param("no parameters".into()));
        }
        Ok(out)
    }
}

fn param_marks(net: &PetriNet, params: &[ParamSpec]) -> Vec<Affine> {
    let k = params.len();
    net.places()
        .iter()
        .enumerate()
        .map(|(p, place)| match params.iter().position(|s| s.place == p) {
            Some(j) => Affine::var(j, k),
            None => Affine::constant(place.marking.clone(), k),
        })
        .collect()
}

fn box_rows(params: &[ParamSpec]) -> Vec<Halfspace> {
    let k = params.len();
    let mut rows = Vec::new();
    for (j, s) in params.iter().enumerate() {
        rows.push(Halfspace::ge(&Affine::var(j, k), &Affine::constant(s.lo.clone(), k)));
        if let Some(hi) = &s.hi {
            rows.push(Halfspace::le(&Affine::var(j, k), &Affine::constant(hi.clone(), k)));
        }
    }
    rows
}

/// Congestion phase: a full-dimensional region of parameter space on which
/// every throughput is one affine function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCell {
    pub label: String,
    /// Normalized: no redundant rows, canonical scaling, sorted.
    pub region: Polyhedron,
    pub throughput: Vec<Affine>,
}

impl PhaseCell {
    pub fn throughput_at(&self, x: &[Rational]) -> Vec<Rational> {
        self.throughput.iter().map(|f| f.eval(x)).collect()
    }
}

/// Throughput at `x` read off the first cell containing it.
pub fn evaluate_complex(cells: &[PhaseCell], x: &[Rational]) -> Option<Vec<Rational>> {
    cells.iter().find(|c| c.region.contains(x)).map(|c| c.throughput_at(x))
}

fn sort_cells(mut cells: Vec<PhaseCell>) -> Vec<PhaseCell> {
    cells.sort_by(|a, b| a.label.cmp(&b.label));
    cells
}

pub fn throughput_complex(net: &PetriNet, params: &[ParamSpec]) -> Result<Vec<PhaseCell>, StationaryError> {
    require_valid(net)?;
    if !net.has_priority() {
        if let Some(inv) = petri_model::stoichiometric_invariant(net)? {
            return complex_by_policies(net, params, &inv.e);
        }
        log::info!("no positive stoichiometric invariant; enumerating germ branches instead of policies");
    }
    complex_by_germs(net, params)
}

/// Cells from the branch selections of the germ system.
pub fn complex_by_germs(net: &PetriNet, params: &[ParamSpec]) -> Result<Vec<PhaseCell>, StationaryError> {
    require_valid(net)?;
    let k = params.len();
    let marks = param_marks(net, params);
    let base = box_rows(params);
    let found = enumerate_selections(net, |sel| match solve_selection(net, &marks, k, sel, &base) {
        Ok(Some(s)) => {
            let region = s.region.project(k);
            region.interior_point()?;
            Some(PhaseCell { label: selection_label(net, sel), region: region.normalized(), throughput: s.rho })
        }
        Ok(None) => None,
        Err(why) => {
            log::debug!("discarded: {why}");
            None
        }
    })?;
    Ok(sort_cells(merge_cells(found)))
}

/// Keeps one cell per region and throughput map. Cells sharing a map over
/// different regions are kept apart and logged.
fn merge_cells(cells: Vec<PhaseCell>) -> Vec<PhaseCell> {
    let mut out: Vec<PhaseCell> = Vec::new();
    for c in cells {
        if out.iter().any(|o| o.throughput == c.throughput && o.region == c.region) {
            continue;
        }
        if let Some(o) = out.iter().find(|o| o.throughput == c.throughput) {
            log::info!("cells {} and {} share a throughput map", o.label, c.label);
        }
        out.push(c);
    }
    out
}

/// Cells from policy enumeration on the undiscounted SMDP: the map of each
/// policy is `m -> e_q sum_F phi_Fq <mu_F, r(m)> / <mu_F, t>`, and its cell is
/// where it is componentwise minimal.
pub fn complex_by_policies(net: &PetriNet, params: &[ParamSpec], e: &[Rational]) -> Result<Vec<PhaseCell>, StationaryError> {
    let k = params.len();
    let marks = param_marks(net, params);
    let model = smdp::petri_to_smdp(net, Some(e))?;
    let count = model.num_policies();
    if count > smdp::ENUMERATION_CAP {
        return Err(SmdpError::TooManyPolicies(count).into());
    }
    let n = model.len();
    let map_of = |i: u128| -> Result<(String, Vec<Affine>), StationaryError> {
        let pol = model.policy_at(i);
        let p = crate::markov::StochasticMatrix::new(model.transition_matrix(&pol)).map_err(SmdpError::from)?;
        let s = crate::markov::classify(&p).map_err(SmdpError::from)?;
        let cost: Vec<Affine> = (0..n)
            .map(|q| {
                let (pl, a) = &net.q_in(q)[pol[q]];
                marks[*pl].scale(&(net.pi(q, *pl) / a / &e[q]))
            })
            .collect();
        let mut g = vec![Affine::zero(k); n];
        for f in 0..s.final_classes.len() {
            let cls = s.final_class(f);
            let mut num = Affine::zero(k);
            let mut den = Rational::zero();
            for &j in cls {
                num = num.add_scaled(&s.mu[f][j], &cost[j]);
                den += &s.mu[f][j] * &model.actions[j][pol[j]].time;
            }
            if den.is_zero() {
                return Err(SmdpError::ZeroTimeClass.into());
            }
            let gf = num.scale(&den.recip());
            for (i, gi) in g.iter_mut().enumerate() {
                if !s.phi[f][i].is_zero() {
                    *gi = gi.add_scaled(&s.phi[f][i], &gf);
                }
            }
        }
        let rho = g.iter().zip(e).map(|(gi, ei)| gi.scale(ei)).collect();
        let label = pol
            .iter()
            .enumerate()
            .filter(|(q, _)| net.q_in(*q).len() > 1)
            .map(|(q, &a)| format!("{}={}", net.transitions()[q], net.places()[net.q_in(q)[a].0].id))
            .collect::<Vec<_>>()
            .join(";");
        Ok((label, rho))
    };
    let maps: Vec<(String, Vec<Affine>)> = if count > 8 {
        (0..count).into_par_iter().map(map_of).collect::<Result<_, _>>()?
    } else {
        (0..count).map(map_of).collect::<Result<_, _>>()?
    };
    let mut distinct: Vec<(String, Vec<Affine>)> = Vec::new();
    for (label, rho) in maps {
        if !distinct.iter().any(|(_, r)| *r == rho) {
            distinct.push((label, rho));
        }
    }
    let base = box_rows(params);
    let cells: Vec<Option<PhaseCell>> = distinct
        .par_iter()
        .map(|(label, rho)| {
            let mut region = Polyhedron::new(k, base.clone());
            for (_, other) in &distinct {
                if std::ptr::eq(other, rho) {
                    continue;
                }
                for q in 0..n {
                    region.push(Halfspace::le(&rho[q], &other[q]));
                }
            }
            region.interior_point()?;
            Some(PhaseCell { label: label.clone(), region: region.normalized(), throughput: rho.clone() })
        })
        .collect();
    Ok(sort_cells(cells.into_iter().flatten().collect()))
}

#[derive(Serialize)]
struct AffineJson {
    coeffs: Vec<String>,
    #[serde(rename = "const")]
    constant: String,
}

#[derive(Serialize)]
struct CellJson {
    label: String,
    params: Vec<String>,
    inequalities: Vec<HalfspaceJson>,
    throughput: BTreeMap<String, AffineJson>,
}

pub fn phases_json(net: &PetriNet, params: &[ParamSpec], cells: &[PhaseCell]) -> String {
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    let out: Vec<CellJson> = cells
        .iter()
        .map(|c| CellJson {
            label: c.label.clone(),
            params: names.clone(),
            inequalities: c.region.rows.iter().map(HalfspaceJson::from).collect(),
            throughput: net
                .transitions()
                .iter()
                .zip(&c.throughput)
                .map(|(q, f)| {
                    (q.clone(), AffineJson { coeffs: f.coeffs.iter().map(rational::fmt).collect(), constant: rational::fmt(&f.constant) })
                })
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&out).expect("serializable")
}

/// Human-readable listing of the cells.
pub fn phases_text(net: &PetriNet, params: &[ParamSpec], cells: &[PhaseCell]) -> String {
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    let mut s = String::new();
    for c in cells {
        s += &format!("cell {}\n", c.label);
        for h in &c.region.rows {
            s += &format!("  {}\n", h.display(&names));
        }
        for (q, f) in net.transitions().iter().zip(&c.throughput) {
            s += &format!("  rho_{q} = {}\n", f.display(&names));
        }
    }
    s
}

// ------------------------------------------------------------- sampling

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub values: Vec<Rational>,
    /// Minimizing branches of the first solution, or `none`.
    pub label: String,
    pub rho: Option<Vec<Rational>>,
}

/// Grid of `grid[j]` evenly spaced values per parameter (one value means the
/// lower bound), first parameter slowest.
pub fn sample_phase_diagram(net: &PetriNet, params: &[ParamSpec], grid: &[usize]) -> Result<Vec<SamplePoint>, StationaryError> {
    if grid.len() != params.len() || grid.contains(&0) {
        return Err(StationaryError::Param("one positive resolution per parameter".into()));
    }
    let axes: Vec<Vec<Rational>> = params
        .iter()
        .zip(grid)
        .map(|(s, &n)| {
            let hi = s.hi.clone().ok_or_else(|| StationaryError::Param(format!("`{}` needs a range", s.name)))?;
            Ok(if n == 1 {
                vec![s.lo.clone()]
            } else {
                (0..n).map(|i| &s.lo + (&hi - &s.lo) * Rational::new(i.into(), (n - 1).into())).collect()
            })
        })
        .collect::<Result<_, StationaryError>>()?;
    let total: usize = grid.iter().product();
    let points: Vec<Vec<Rational>> = (0..total)
        .map(|mut i| {
            let mut v = vec![Rational::zero(); axes.len()];
            for j in (0..axes.len()).rev() {
                v[j] = axes[j][i % grid[j]].clone();
                i /= grid[j];
            }
            v
        })
        .collect();
    Ok(points
        .into_par_iter()
        .map(|values| {
            let updates: Vec<(usize, Rational)> = params.iter().zip(&values).map(|(s, v)| (s.place, v.clone())).collect();
            let at = net.with_markings(&updates);
            match solve_stationary(&at) {
                Ok(sols) => SamplePoint { label: sols[0].witness_label(&at), rho: Some(sols[0].rho.clone()), values },
                Err(_) => SamplePoint { values, label: "none".into(), rho: None },
            }
        })
        .collect())
}

pub fn samples_csv(net: &PetriNet, params: &[ParamSpec], points: &[SamplePoint]) -> String {
    let mut s: String = params.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(",");
    s += ",label";
    for q in net.transitions() {
        s += &format!(",rho_{q}");
    }
    s.push('\n');
    for pt in points {
        let vals: Vec<String> = pt.values.iter().map(|v| rational::to_f64(v).to_string()).collect();
        s += &vals.join(",");
        s += &format!(",{}", pt.label);
        match &pt.rho {
            Some(r) => r.iter().for_each(|x| s += &format!(",{}", rational::to_f64(x))),
            None => (0..net.num_transitions()).for_each(|_| s += ","),
        }
        s.push('\n');
    }
    s
}
