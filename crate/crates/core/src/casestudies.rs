//! The two emergency call center models: builders, closed-form throughput
//! of the basic model and the nine congestion phases of the reservoir model.
//!
//! Transitions are `z0..z5` for EMS-A; EMS-B adds `z5p, z6, z6p, z7, z7p`
//! (the primed transitions serve less urgent calls).

use crate::petri_model::{NetBuilder, PetriNet};
use crate::polyhedron::{Affine, Halfspace, Polyhedron};
use crate::rational::{self, int, Rational};
use crate::stationary::{self, StationaryError};
use num_traits::{One, Signed};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CaseError {
    #[error("parameter: {0}")]
    Param(String),
    #[error("no phase of the table contains the point (transcription bug)")]
    NoPhase,
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error("at N_P = {np}: germ solver gives rho5 = {germ}, phase table gives {table}")]
    Mismatch { np: String, germ: String, table: String },
    #[error("sweep leaves the phase sequence 6, 6a, 3: {0}")]
    PhaseSequence(String),
    #[error("precondition: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmsAParams {
    pub lambda: Rational,
    pub pi: Rational,
    pub tau1: Rational,
    pub tau2: Rational,
    pub tau3: Rational,
    pub na: Rational,
    pub np: Rational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmsBParams {
    pub a: EmsAParams,
    pub nr: Rational,
    pub alpha: Rational,
}

impl Default for EmsAParams {
    fn default() -> Self {
        EmsAParams { lambda: int(1), pi: Rational::new(1.into(), 2.into()), tau1: int(1), tau2: int(2), tau3: int(4), na: int(10), np: int(10) }
    }
}

impl Default for EmsBParams {
    fn default() -> Self {
        EmsBParams { a: EmsAParams::default(), nr: int(10), alpha: Rational::new(1.into(), 2.into()) }
    }
}

fn open_unit(name: &str, x: &Rational) -> Result<(), CaseError> {
    if x.is_positive() && *x < Rational::one() {
        Ok(())
    } else {
        Err(CaseError::Param(format!("{name} must lie strictly between 0 and 1")))
    }
}

impl EmsAParams {
    pub fn validate(&self) -> Result<(), CaseError> {
        for (name, v) in [("lambda", &self.lambda), ("tau1", &self.tau1), ("tau2", &self.tau2), ("tau3", &self.tau3), ("NA", &self.na), ("NP", &self.np)] {
            if v.is_negative() {
                return Err(CaseError::Param(format!("{name} must be nonnegative")));
            }
        }
        open_unit("pi", &self.pi)
    }

    fn set(&mut self, name: &str, v: Rational) -> bool {
        let slot = match name {
            "lambda" => &mut self.lambda,
            "pi" => &mut self.pi,
            "tau1" => &mut self.tau1,
            "tau2" | "taus" => &mut self.tau2,
            "tau3" => &mut self.tau3,
            "NA" => &mut self.na,
            "NP" => &mut self.np,
            _ => return false,
        };
        *slot = v;
        true
    }

    pub fn from_pairs(pairs: &[(String, Rational)]) -> Result<Self, CaseError> {
        let mut p = EmsAParams::default();
        for (k, v) in pairs {
            if !p.set(k, v.clone()) {
                return Err(CaseError::Param(format!("unknown EMS-A parameter `{k}`")));
            }
        }
        p.validate()?;
        Ok(p)
    }

    /// `N_A* = lambda (tau1 + pi tau2)`.
    pub fn na_star(&self) -> Rational {
        &self.lambda * (&self.tau1 + &self.pi * &self.tau2)
    }

    /// `N_P* = pi lambda (tau2 + tau3)`.
    pub fn np_star(&self) -> Rational {
        &self.pi * &self.lambda * (&self.tau2 + &self.tau3)
    }
}

impl EmsBParams {
    pub fn validate(&self) -> Result<(), CaseError> {
        self.a.validate()?;
        if self.nr.is_negative() {
            return Err(CaseError::Param("NR must be nonnegative".into()));
        }
        open_unit("alpha", &self.alpha)
    }

    pub fn from_pairs(pairs: &[(String, Rational)]) -> Result<Self, CaseError> {
        let mut p = EmsBParams::default();
        for (k, v) in pairs {
            match k.as_str() {
                "NR" => p.nr = v.clone(),
                "alpha" => p.alpha = v.clone(),
                _ => {
                    if !p.a.set(k, v.clone()) {
                        return Err(CaseError::Param(format!("unknown EMS-B parameter `{k}`")));
                    }
                }
            }
        }
        p.validate()?;
        Ok(p)
    }

    /// `N_R* = 2 pi lambda tau_s`.
    pub fn nr_star(&self) -> Rational {
        int(2) * &self.a.pi * &self.a.lambda * &self.a.tau2
    }
}

fn front_end(b: NetBuilder, p: &EmsAParams) -> NetBuilder {
    let one = Rational::one();
    b.place("lambda", int(1), p.lambda.clone())
        .place("calls", int(0), int(0))
        .place("NA", int(0), p.na.clone())
        .place("triage", p.tau1.clone(), int(0))
        .place("brief", p.tau2.clone(), int(0))
        .transition("z0")
        .transition("z1")
        .transition("z2")
        .transition("z3")
        .transition("z4")
        .arc("lambda", "z0", one.clone())
        .arc("z0", "lambda", one.clone())
        .arc("z0", "calls", one.clone())
        .arc("calls", "z1", one.clone())
        .arc("NA", "z1", one.clone())
        .arc("z2", "NA", one.clone())
        .arc("z4", "NA", one.clone())
        .arc("z1", "triage", one.clone())
        .arc("triage", "z2", one.clone())
        .arc("triage", "z3", one.clone())
        .preselection("triage", vec![("z2", &one - &p.pi), ("z3", p.pi.clone())])
        .arc("z3", "brief", one.clone())
        .arc("brief", "z4", one)
}

pub fn build_ems_a(p: &EmsAParams) -> Result<PetriNet, CaseError> {
    p.validate()?;
    let one = Rational::one();
    front_end(NetBuilder::new(), p)
        .place("consult", p.tau3.clone(), int(0))
        .place("NP", int(0), p.np.clone())
        .transition("z5")
        .arc("z4", "consult", one.clone())
        .arc("consult", "z5", one.clone())
        .arc("NP", "z3", one.clone())
        .arc("z5", "NP", one)
        .build()
        .map_err(|e| CaseError::Param(e.to_string()))
}

pub fn build_ems_b(p: &EmsBParams) -> Result<PetriNet, CaseError> {
    p.validate()?;
    let a = &p.a;
    let one = Rational::one();
    front_end(NetBuilder::new(), a)
        .place("NR", int(0), p.nr.clone())
        .place("waiting", int(0), int(0))
        .place("NP", int(0), a.np.clone())
        .place("brief5", a.tau2.clone(), int(0))
        .place("brief5p", a.tau2.clone(), int(0))
        .place("consult5", a.tau3.clone(), int(0))
        .place("consult5p", a.tau3.clone(), int(0))
        .transition("z5")
        .transition("z5p")
        .transition("z6")
        .transition("z6p")
        .transition("z7")
        .transition("z7p")
        .arc("NR", "z3", one.clone())
        .arc("NR", "z5", one.clone())
        .arc("NR", "z5p", one.clone())
        .arc("z4", "NR", one.clone())
        .arc("z6", "NR", one.clone())
        .arc("z6p", "NR", one.clone())
        .priority("NR", vec!["z5", "z5p", "z3"])
        .arc("z4", "waiting", one.clone())
        .arc("waiting", "z5", one.clone())
        .arc("waiting", "z5p", one.clone())
        .preselection("waiting", vec![("z5", p.alpha.clone()), ("z5p", &one - &p.alpha)])
        .arc("NP", "z5", one.clone())
        .arc("NP", "z5p", one.clone())
        .arc("z7", "NP", one.clone())
        .arc("z7p", "NP", one.clone())
        .priority("NP", vec!["z5", "z5p"])
        .arc("z5", "brief5", one.clone())
        .arc("brief5", "z6", one.clone())
        .arc("z5p", "brief5p", one.clone())
        .arc("brief5p", "z6p", one.clone())
        .arc("z6", "consult5", one.clone())
        .arc("consult5", "z7", one.clone())
        .arc("z6p", "consult5p", one.clone())
        .arc("consult5p", "z7p", one)
        .build()
        .map_err(|e| CaseError::Param(e.to_string()))
}

/// Built-in model by name with `name=value` overrides.
pub fn builtin(model: &str, pairs: &[(String, Rational)]) -> Result<PetriNet, CaseError> {
    match model {
        "ems-a" => build_ems_a(&EmsAParams::from_pairs(pairs)?),
        "ems-b" => build_ems_b(&EmsBParams::from_pairs(pairs)?),
        other => Err(CaseError::Param(format!("unknown model `{other}` (expected ems-a or ems-b)"))),
    }
}

fn rand_ratio(rng: &mut impl rand::Rng, num: std::ops::RangeInclusive<i64>, den: std::ops::RangeInclusive<i64>) -> Rational {
    Rational::new(rng.gen_range(num).into(), rng.gen_range(den).into())
}

impl EmsAParams {
    /// Small random rationals with integer holding times.
    pub fn random(rng: &mut impl rand::Rng) -> Self {
        EmsAParams {
            lambda: rand_ratio(rng, 1..=6, 1..=3),
            pi: rand_ratio(rng, 1..=9, 10..=10),
            tau1: int(rng.gen_range(1..=4)),
            tau2: int(rng.gen_range(1..=4)),
            tau3: int(rng.gen_range(1..=6)),
            na: rand_ratio(rng, 0..=40, 1..=2),
            np: rand_ratio(rng, 0..=40, 1..=2),
        }
    }
}

impl EmsBParams {
    pub fn random(rng: &mut impl rand::Rng) -> Self {
        EmsBParams { a: EmsAParams::random(rng), nr: rand_ratio(rng, 0..=40, 1..=2), alpha: rand_ratio(rng, 1..=9, 10..=10) }
    }
}

/// `rho* = min(lambda, N_A/(tau1 + pi tau2), N_P/(pi (tau2 + tau3)))`.
pub fn ems_a_rho_star(p: &EmsAParams) -> Rational {
    let ma = &p.na / (&p.tau1 + &p.pi * &p.tau2);
    let mp = &p.np / (&p.pi * (&p.tau2 + &p.tau3));
    rational::min(&rational::min(&p.lambda, &ma), &mp)
}

/// Throughputs of `z0..z5`.
pub fn ems_a_closed_form(p: &EmsAParams) -> Vec<Rational> {
    let r = ems_a_rho_star(p);
    let pr = &p.pi * &r;
    vec![p.lambda.clone(), r.clone(), (Rational::one() - &p.pi) * &r, pr.clone(), pr.clone(), pr]
}

/// One row of the EMS-B phase table over `(N_A, N_R, N_P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRow {
    pub label: &'static str,
    /// Strict inequalities of the table are closed.
    pub region: Polyhedron,
    pub rho1: Affine,
    pub rho5: Affine,
    pub rho5p: Affine,
}

pub const EMS_B_PARAMS: &str = "NA,NR,NP";

/// The nine phases, transcribed with `tau_s = tau2`.
pub fn ems_b_phase_rows(p: &EmsBParams) -> Vec<PhaseRow> {
    let a = &p.a;
    let (lam, pi, al) = (&a.lambda, &a.pi, &p.alpha);
    let ts = &a.tau2;
    let big_a = &a.tau1 + pi * ts;
    let big_s = ts + &a.tau3;
    let c = |x: Rational| Affine::constant(x, 3);
    let v = |j: usize| Affine::var(j, 3);
    // Normalized throughput capacities.
    let fa = v(0).scale(&big_a.recip());
    let fr = v(1).scale(&ts.recip());
    let fp = v(2).scale(&big_s.recip());
    let half_r = v(1).scale(&(int(2) * ts).recip());
    let pl = c(pi * lam);
    let pal = c(pi * al * lam);
    let lamc = c(lam.clone());
    let one = Rational::one();
    let zero = Affine::zero(3);
    let ge = Halfspace::ge;
    let le = Halfspace::le;
    let row = |label, rows: Vec<Halfspace>, rho1: Affine, rho5: Affine, rho5p: Affine| PhaseRow {
        label,
        region: Polyhedron::new(3, rows),
        rho1,
        rho5,
        rho5p,
    };
    let pfa = fa.scale(pi);
    let r_minus_p = fr.sub(&fp);
    let six_split = v(1).scale(&(al / ((&one + al) * ts)));
    vec![
        row("1", vec![ge(&fa, &lamc), ge(&half_r, &pl), ge(&fp, &pl)], lamc.clone(), pal.clone(), c(pi * (&one - al) * lam)),
        row(
            "4a",
            vec![ge(&fa, &lamc), ge(&fr, &pl.add(&fp)), le(&pal, &fp), le(&fp, &pl)],
            lamc.clone(),
            pal.clone(),
            fp.sub(&pal),
        ),
        row("4", vec![ge(&fa, &lamc), ge(&fr, &pl.add(&fp)), le(&fp, &pal)], lamc.clone(), fp.clone(), zero.clone()),
        row(
            "2",
            vec![le(&fa, &lamc), ge(&half_r, &pfa), ge(&fp, &pfa)],
            fa.clone(),
            fa.scale(&(pi * al)),
            fa.scale(&(pi * (&one - al))),
        ),
        row(
            "5a",
            vec![le(&fa, &lamc), ge(&fr, &pfa.add(&fp)), le(&fa.scale(&(pi * al)), &fp), le(&fp, &pfa)],
            fa.clone(),
            fa.scale(&(pi * al)),
            fp.sub(&fa.scale(&(pi * al))),
        ),
        row("5", vec![le(&fa, &lamc), ge(&fr, &pfa.add(&fp)), le(&fp, &fa.scale(&(pi * al)))], fa.clone(), fp.clone(), zero.clone()),
        row(
            "3",
            vec![le(&half_r, &pl), le(&half_r, &pfa), ge(&fp, &half_r)],
            v(1).scale(&(int(2) * pi * ts).recip()),
            half_r.scale(al),
            half_r.scale(&(&one - al)),
        ),
        row(
            "6a",
            vec![le(&r_minus_p, &pl), ge(&pfa, &r_minus_p), le(&six_split, &fp), le(&fp, &half_r)],
            r_minus_p.scale(&pi.recip()),
            r_minus_p.scale(al),
            fp.scale(&(&one + al)).sub(&fr.scale(al)),
        ),
        row("6", vec![le(&r_minus_p, &pl), ge(&pfa, &r_minus_p), le(&fp, &six_split)], r_minus_p.scale(&pi.recip()), fp.clone(), zero),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMatch {
    /// Every phase whose closed region contains the point, in table order.
    pub phases: Vec<&'static str>,
    pub rho1: Rational,
    pub rho5: Rational,
    pub rho5p: Rational,
}

pub fn ems_b_phase_table(p: &EmsBParams) -> Result<PhaseMatch, CaseError> {
    p.validate()?;
    let x = [p.a.na.clone(), p.nr.clone(), p.a.np.clone()];
    let rows = ems_b_phase_rows(p);
    let hits: Vec<&PhaseRow> = rows.iter().filter(|r| r.region.contains(&x)).collect();
    let first = hits.first().ok_or(CaseError::NoPhase)?;
    Ok(PhaseMatch {
        phases: hits.iter().map(|r| r.label).collect(),
        rho1: first.rho1.eval(&x),
        rho5: first.rho5.eval(&x),
        rho5p: first.rho5p.eval(&x),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParadoxSample {
    pub np: Rational,
    pub rho5: Rational,
    pub phases: Vec<&'static str>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParadoxReport {
    pub samples: Vec<ParadoxSample>,
    /// Closed `N_P` interval over which consecutive samples strictly decrease.
    pub decreasing: Option<(Rational, Rational)>,
}

const PARADOX_SEQUENCE: [&str; 3] = ["6", "6a", "3"];

/// Sweeps `N_P` over `steps` evenly spaced values of `[lo, hi]`, computing
/// `rho5` both by germ enumeration and from the phase table.
pub fn paradox_check(p: &EmsBParams, lo: &Rational, hi: &Rational, steps: usize) -> Result<ParadoxReport, CaseError> {
    p.validate()?;
    let a = &p.a;
    if !(a.lambda.is_positive() && a.na.is_positive() && p.nr.is_positive()) {
        return Err(CaseError::Precondition("lambda, N_A and N_R must be positive".into()));
    }
    if a.na < a.na_star() {
        return Err(CaseError::Precondition("N_A must be at least N_A*".into()));
    }
    if p.nr >= &a.pi * &a.lambda * &a.tau2 {
        return Err(CaseError::Precondition("N_R must be below pi lambda tau_s".into()));
    }
    if steps < 2 || lo.is_negative() || hi <= lo {
        return Err(CaseError::Param("need steps >= 2 and 0 <= lo < hi".into()));
    }
    let mut samples = Vec::with_capacity(steps);
    let mut stage = 0;
    for i in 0..steps {
        let np = lo + (hi - lo) * Rational::new(i.into(), (steps - 1).into());
        let mut q = p.clone();
        q.a.np = np.clone();
        let table = ems_b_phase_table(&q)?;
        let net = build_ems_b(&q)?;
        let z5 = net.transition_index("z5").expect("z5");
        for sol in stationary::solve_germ_priority(&net)? {
            if sol.rho[z5] != table.rho5 {
                return Err(CaseError::Mismatch {
                    np: rational::fmt(&np),
                    germ: rational::fmt(&sol.rho[z5]),
                    table: rational::fmt(&table.rho5),
                });
            }
        }
        // Phases must be visited in order; boundary points may carry two.
        match (stage..PARADOX_SEQUENCE.len()).find(|&s| table.phases.contains(&PARADOX_SEQUENCE[s])) {
            Some(s) => stage = s,
            None => return Err(CaseError::PhaseSequence(format!("N_P = {} lies in {:?}", rational::fmt(&np), table.phases))),
        }
        samples.push(ParadoxSample { np, rho5: table.rho5, phases: table.phases });
    }
    let mut decreasing: Option<(Rational, Rational)> = None;
    for w in samples.windows(2) {
        if w[1].rho5 < w[0].rho5 {
            decreasing = Some(match decreasing {
                None => (w[0].np.clone(), w[1].np.clone()),
                Some((s, _)) => (s, w[1].np.clone()),
            });
        }
    }
    Ok(ParadoxReport { samples, decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    #[test]
    fn closed_form_examples() {
        let mut p = EmsAParams::default();
        assert_eq!(ems_a_rho_star(&p), int(1));
        p.na = int(1);
        assert_eq!(ems_a_rho_star(&p), ratio(1, 2));
        p.na = int(0);
        assert_eq!(ems_a_rho_star(&p), int(0));
    }

    #[test]
    fn ems_a_structure() {
        let net = build_ems_a(&EmsAParams::default()).unwrap();
        assert_eq!(net.num_transitions(), 6);
        let t = net.place_index("triage").unwrap();
        assert_eq!(net.pi(2, t), ratio(1, 2));
        assert!(!net.has_priority());
    }

    #[test]
    fn ems_b_priorities() {
        let net = build_ems_b(&EmsBParams::default()).unwrap();
        let ids = |p: &str| -> Vec<&str> {
            net.priority_order(net.place_index(p).unwrap()).unwrap().iter().map(|&q| net.transitions()[q].as_str()).collect()
        };
        assert_eq!(ids("NR"), vec!["z5", "z5p", "z3"]);
        assert_eq!(ids("NP"), vec!["z5", "z5p"]);
        assert!(crate::petri_model::validate_net(&net).ok());
    }

    #[test]
    fn degenerate_alpha_rejected() {
        for alpha in [int(0), int(1)] {
            let p = EmsBParams { alpha, ..EmsBParams::default() };
            assert!(build_ems_b(&p).is_err());
        }
    }

    #[test]
    fn unknown_parameters_rejected() {
        assert!(builtin("ems-a", &[("NR".into(), int(1))]).is_err());
        assert!(builtin("ems-c", &[]).is_err());
        assert!(builtin("ems-b", &[("taus".into(), int(3))]).is_ok());
    }
}
