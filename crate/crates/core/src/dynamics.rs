//! Grid simulation of counter functions, slope estimation and detection of
//! asymptotic periodicity.
//!
//! Time is sampled on `k * dt`. The left limit `z(t^-)` is read as
//! `z(t - dt)`, and every holding time must be an integer number of steps.

use crate::graph;
use crate::petri_model::{self, PeriodicSchedule, PetriNet, Routing};
use crate::rational::{self, Rational};
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("step {dt} does not divide holding time {tau} of place `{place}`")]
    Step { dt: String, tau: String, place: String },
    #[error("step must be positive")]
    NonPositiveStep,
    #[error("horizon must be positive")]
    Horizon,
    #[error("discrete mode needs integer data: {0}")]
    NonInteger(String),
    #[error("discrete mode needs a periodic schedule on preselection place `{0}`")]
    MissingSchedule(String),
    #[error("net fails validation: {0}")]
    Invalid(String),
    #[error("initial condition: {0}")]
    BadInit(String),
    #[error("trajectory too short: horizon {horizon} < 10 x max holding time {tmax}")]
    TooShort { horizon: f64, tmax: f64 },
    #[error("tail fraction must lie in (0, 1/2]")]
    TailFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Fluid relaxation with proportional preselection.
    Fluid,
    /// Integer counters with floors and periodic preselection schedules.
    Discrete,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `z = 0` on `[-T, 0]`.
    Zero,
    /// `z(t) = rho t + u` on `[-T, 0]`.
    Affine { rho: Vec<f64>, u: Vec<f64> },
    /// Per transition, the values at grid points `-T, -T + dt, .., 0`.
    Sampled(Vec<Vec<f64>>),
}

impl InitialCondition {
    pub fn affine(rho: &[Rational], u: &[Rational]) -> Self {
        InitialCondition::Affine {
            rho: rho.iter().map(rational::to_f64).collect(),
            u: u.iter().map(rational::to_f64).collect(),
        }
    }
}

/// Sampled counters on the grid `-T..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterTrajectory {
    pub dt: f64,
    /// Number of grid steps in the history window `[-T, 0]`.
    pub history_steps: usize,
    pub times: Vec<f64>,
    /// `z[q][k]` at `times[k]`.
    pub z: Vec<Vec<f64>>,
    /// `x[p][k]` at `times[k]`.
    pub x: Vec<Vec<f64>>,
    pub transition_ids: Vec<String>,
    pub place_ids: Vec<String>,
    pub max_tau: f64,
}

impl CounterTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Counter values at grid index `k` (index 0 is time `-T`).
    pub fn z_at(&self, k: usize) -> Vec<f64> {
        self.z.iter().map(|row| row[k]).collect()
    }

    /// CSV with header `t,z_<q>...,x_<p>...`, keeping every `every`-th row.
    pub fn to_csv(&self, every: usize) -> String {
        let every = every.max(1);
        let mut s = String::from("t");
        for q in &self.transition_ids {
            s.push_str(&format!(",z_{q}"));
        }
        for p in &self.place_ids {
            s.push_str(&format!(",x_{p}"));
        }
        s.push('\n');
        for k in (0..self.len()).step_by(every) {
            s.push_str(&fmt_num(self.times[k]));
            for row in self.z.iter().chain(self.x.iter()) {
                s.push(',');
                s.push_str(&fmt_num(row[k]));
            }
            s.push('\n');
        }
        s
    }
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

struct Term {
    delay: usize,
    marking: f64,
    inputs: Vec<(usize, f64)>,
    higher: Vec<(usize, f64)>,
    lower: Vec<(usize, f64)>,
    factor: f64,
    alpha: f64,
    schedule: Option<PeriodicSchedule>,
}

fn steps_of(tau: &Rational, dt: &Rational, place: &str) -> Result<usize, SimError> {
    let q = tau / dt;
    if !q.is_integer() {
        return Err(SimError::Step { dt: rational::fmt(dt), tau: rational::fmt(tau), place: place.to_string() });
    }
    Ok(q.to_integer().to_usize().expect("step count fits"))
}

fn check_discrete(net: &PetriNet) -> Result<(), SimError> {
    for p in 0..net.num_places() {
        let place = &net.places()[p];
        if !place.marking.is_integer() {
            return Err(SimError::NonInteger(format!("marking of `{}`", place.id)));
        }
        for (_, w) in net.p_in(p).iter().chain(net.p_out(p)) {
            if !w.is_integer() {
                return Err(SimError::NonInteger(format!("arc weight at `{}`", place.id)));
            }
        }
        if let Routing::Preselection { schedule: None, .. } = net.routing(p) {
            return Err(SimError::MissingSchedule(place.id.clone()));
        }
    }
    Ok(())
}

/// Runs the counter dynamics forward from the history on `[-T, 0]` up to
/// the first grid point at or beyond `horizon`.
pub fn simulate(
    net: &PetriNet,
    init: &InitialCondition,
    horizon: &Rational,
    dt: &Rational,
    mode: Mode,
) -> Result<CounterTrajectory, SimError> {
    if !dt.is_positive() {
        return Err(SimError::NonPositiveStep);
    }
    if !horizon.is_positive() {
        return Err(SimError::Horizon);
    }
    let report = petri_model::validate_net(net);
    if !report.ok() {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed && !c.advisory).map(|c| c.name).collect();
        return Err(SimError::Invalid(failed.join(", ")));
    }
    if mode == Mode::Discrete {
        check_discrete(net)?;
    }
    let nq = net.num_transitions();
    let np = net.num_places();
    let delays: Vec<usize> = net
        .places()
        .iter()
        .map(|p| steps_of(&p.tau, dt, &p.id))
        .collect::<Result<_, _>>()?;
    let hn = delays.iter().copied().max().unwrap_or(0).max(1);
    let steps = (horizon / dt).ceil().to_integer().to_usize().expect("step count fits");
    let len = hn + steps + 1;
    let dtf = rational::to_f64(dt);

    let order = graph::topo_sort(&petri_model::step_dependencies(net)).expect("validated net has a step order");
    let terms: Vec<Vec<Term>> = (0..nq)
        .map(|q| {
            net.q_in(q)
                .iter()
                .map(|(p, a)| {
                    let (higher, lower) = match net.priority_order(*p) {
                        Some(order) => {
                            let pos = order.iter().position(|t| *t == q).expect("listed");
                            let w = |t: usize| rational::to_f64(&net.p_out(*p).iter().find(|(x, _)| *x == t).expect("out").1);
                            (
                                order[..pos].iter().map(|&t| (t, w(t))).collect(),
                                order[pos + 1..].iter().map(|&t| (t, w(t))).collect(),
                            )
                        }
                        None => (Vec::new(), Vec::new()),
                    };
                    let schedule = match (mode, net.routing(*p)) {
                        (Mode::Discrete, Routing::Preselection { schedule, .. }) => schedule.clone(),
                        _ => None,
                    };
                    Term {
                        delay: delays[*p],
                        marking: rational::to_f64(&net.places()[*p].marking),
                        inputs: net.p_in(*p).iter().map(|(t, w)| (*t, rational::to_f64(w))).collect(),
                        higher,
                        lower,
                        factor: rational::to_f64(&(net.pi(q, *p) / a)),
                        alpha: rational::to_f64(a),
                        schedule,
                    }
                })
                .collect()
        })
        .collect();

    let mut z = vec![vec![0.0f64; len]; nq];
    match init {
        InitialCondition::Zero => {}
        InitialCondition::Affine { rho, u } => {
            if rho.len() != nq || u.len() != nq {
                return Err(SimError::BadInit("affine vectors have the wrong length".into()));
            }
            if rho.iter().any(|r| *r < 0.0) {
                return Err(SimError::BadInit("affine slope must be nonnegative".into()));
            }
            for q in 0..nq {
                for k in 0..=hn {
                    z[q][k] = rho[q] * ((k as f64) - hn as f64) * dtf + u[q];
                }
            }
        }
        InitialCondition::Sampled(vals) => {
            if vals.len() != nq || vals.iter().any(|v| v.len() != hn + 1) {
                return Err(SimError::BadInit(format!("expected {nq} rows of {} samples", hn + 1)));
            }
            for q in 0..nq {
                if vals[q].windows(2).any(|w| w[1] < w[0]) {
                    return Err(SimError::BadInit(format!("samples of `{}` decrease", net.transitions()[q])));
                }
                z[q][..=hn].copy_from_slice(&vals[q]);
            }
        }
    }
    if mode == Mode::Discrete && z.iter().any(|row| row[..=hn].iter().any(|v| v.fract() != 0.0)) {
        return Err(SimError::NonInteger("initial condition".into()));
    }

    for k in hn + 1..len {
        for &q in &order {
            let mut best = f64::INFINITY;
            for t in &terms[q] {
                let mut s = t.marking;
                for &(q2, w) in &t.inputs {
                    s += w * z[q2][k - t.delay];
                }
                for &(q2, w) in &t.higher {
                    s -= w * z[q2][k];
                }
                for &(q2, w) in &t.lower {
                    s -= w * z[q2][k - 1];
                }
                let v = match mode {
                    Mode::Fluid => t.factor * s,
                    Mode::Discrete => match &t.schedule {
                        Some(sch) => {
                            let n = s.floor().max(0.0) as u64;
                            (sch.count(q, n) as f64 / t.alpha).floor()
                        }
                        None => (s / t.alpha).floor(),
                    },
                };
                best = best.min(v);
            }
            z[q][k] = best;
        }
    }

    let markings: Vec<f64> = net.places().iter().map(|p| rational::to_f64(&p.marking)).collect();
    let mut x = vec![vec![0.0f64; len]; np];
    for p in 0..np {
        for k in 0..len {
            let mut s = markings[p];
            for (q, w) in net.p_in(p) {
                s += rational::to_f64(w) * z[*q][k];
            }
            x[p][k] = s;
        }
    }
    let times = (0..len).map(|k| (k as f64 - hn as f64) * dtf).collect();
    Ok(CounterTrajectory {
        dt: dtf,
        history_steps: hn,
        times,
        z,
        x,
        transition_ids: net.transitions().to_vec(),
        place_ids: net.places().iter().map(|p| p.id.clone()).collect(),
        max_tau: rational::to_f64(&net.max_tau()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeEstimate {
    pub rho: Vec<f64>,
    /// Largest deviation of the (period-averaged) tail from its fitted line.
    pub residual: f64,
    /// Largest deviation of the raw tail from the fitted line.
    pub amplitude: f64,
    /// Period of the increments, in grid steps, if one was found.
    pub period_steps: Option<usize>,
}

fn tail_start(traj: &CounterTrajectory, tail_fraction: f64) -> Result<usize, SimError> {
    if !(tail_fraction > 0.0 && tail_fraction <= 0.5) {
        return Err(SimError::TailFraction);
    }
    let horizon = traj.horizon();
    if horizon < 10.0 * traj.max_tau {
        return Err(SimError::TooShort { horizon, tmax: traj.max_tau });
    }
    let forward = traj.len() - traj.history_steps;
    let w = ((forward as f64) * tail_fraction).ceil().max(2.0) as usize;
    Ok(traj.len() - w.min(forward))
}

fn increments_period(z: &[Vec<f64>], start: usize, max_c: usize) -> Option<usize> {
    let end = z.first().map_or(0, Vec::len);
    'c: for c in 1..=max_c {
        for row in z {
            let scale = 1.0 + row[end - 1].abs() * 1e-3;
            for k in (start + 1 + c..end).rev() {
                let a = row[k] - row[k - 1];
                let b = row[k - c] - row[k - c - 1];
                if (a - b).abs() > 1e-9 * scale {
                    continue 'c;
                }
            }
        }
        return Some(c);
    }
    None
}

fn least_squares(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in t.iter().zip(y) {
        sxy += (a - tm) * (b - ym);
        sxx += (a - tm) * (a - tm);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, ym - slope * tm)
}

/// Least-squares slope of each counter over the last `tail_fraction` of the
/// forward samples. When the tail increments are periodic, the fit runs on
/// the moving average over one period, which removes the periodic part.
pub fn estimate_slope(traj: &CounterTrajectory, tail_fraction: f64) -> Result<SlopeEstimate, SimError> {
    let start = tail_start(traj, tail_fraction)?;
    let w = traj.len() - start;
    let period = increments_period(&traj.z, start, (w / 4).min(4096));
    let mut rho = Vec::with_capacity(traj.z.len());
    let mut residual: f64 = 0.0;
    let mut amplitude: f64 = 0.0;
    for row in &traj.z {
        let (t, y): (Vec<f64>, Vec<f64>) = match period {
            Some(c) if c > 1 => (start + c - 1..traj.len())
                .map(|k| {
                    let avg = row[k + 1 - c..=k].iter().sum::<f64>() / c as f64;
                    let tm = (traj.times[k + 1 - c] + traj.times[k]) / 2.0;
                    (tm, avg)
                })
                .unzip(),
            _ => (traj.times[start..].to_vec(), row[start..].to_vec()),
        };
        let (slope, icpt) = least_squares(&t, &y);
        for (a, b) in t.iter().zip(&y) {
            residual = residual.max((b - (slope * a + icpt)).abs());
        }
        for k in start..traj.len() {
            amplitude = amplitude.max((row[k] - (slope * traj.times[k] + icpt)).abs());
        }
        rho.push(slope);
    }
    Ok(SlopeEstimate { rho, residual, amplitude, period_steps: period })
}

#[derive(Debug, Clone, PartialEq)]
pub enum PeriodResult {
    /// Smallest period in grid steps, with the observed residual.
    Found { c: usize, residual: f64 },
    NotConverged { best_residual: f64 },
}

pub const DEFAULT_MAX_PERIOD: usize = 64;

/// Smallest `c <= max_c` with `|d(t + c) - d(t)| <= 1e-6` on the last quarter
/// of the trajectory, where `d(t) = z(t) - rho t`.
pub fn detect_period(traj: &CounterTrajectory, rho: &[f64], max_c: usize) -> PeriodResult {
    let forward = traj.len() - traj.history_steps;
    let start = traj.len() - (forward / 4).max(2);
    let d: Vec<Vec<f64>> = traj
        .z
        .iter()
        .zip(rho)
        .map(|(row, r)| (0..traj.len()).map(|k| row[k] - r * traj.times[k]).collect())
        .collect();
    let mut best = f64::INFINITY;
    for c in 1..=max_c.min(traj.len() - start - 1) {
        let mut worst: f64 = 0.0;
        for row in &d {
            for k in start..traj.len() - c {
                worst = worst.max((row[k + c] - row[k]).abs());
            }
        }
        if worst <= 1e-6 {
            return PeriodResult::Found { c, residual: worst };
        }
        best = best.min(worst);
    }
    PeriodResult::NotConverged { best_residual: best }
}

/// `dt` that divides every positive holding time, as the gcd of the
/// holding times viewed as fractions.
pub fn natural_step(net: &PetriNet) -> Rational {
    let mut num = num_bigint::BigInt::zero();
    let mut den = num_bigint::BigInt::from(1);
    for p in net.places() {
        if p.tau.is_zero() {
            continue;
        }
        num = num.gcd(p.tau.numer());
        den = den.lcm(p.tau.denom());
    }
    if num.is_zero() {
        return rational::one();
    }
    Rational::new(num, den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::petri_model::NetBuilder;
    use crate::rational::{int, ratio};

    fn line(rho: f64, u: f64) -> CounterTrajectory {
        let n = 401;
        let times: Vec<f64> = (0..n).map(|k| k as f64 * 0.5 - 2.0).collect();
        CounterTrajectory {
            dt: 0.5,
            history_steps: 4,
            z: vec![times.iter().map(|t| rho * t + u).collect()],
            x: vec![],
            times,
            transition_ids: vec!["q".into()],
            place_ids: vec![],
            max_tau: 2.0,
        }
    }

    #[test]
    fn affine_trajectory_has_exact_slope() {
        let est = estimate_slope(&line(1.5, 3.0), 0.25).unwrap();
        assert!((est.rho[0] - 1.5).abs() < 1e-12);
        assert!(est.residual < 1e-9);
        assert_eq!(detect_period(&line(1.5, 3.0), &[1.5], 64), PeriodResult::Found { c: 1, residual: 0.0 });
    }

    #[test]
    fn periodic_plus_linear_slope() {
        let mut traj = line(2.0, 0.0);
        let wave = [0.0, 0.7, -0.2, 0.4, 0.1];
        for (k, v) in traj.z[0].iter_mut().enumerate() {
            *v += wave[k % wave.len()];
        }
        let est = estimate_slope(&traj, 0.5).unwrap();
        assert!((est.rho[0] - 2.0).abs() < 1e-9, "{est:?}");
        assert_eq!(est.period_steps, Some(5));
    }

    #[test]
    fn alternating_deviation_has_period_two() {
        let mut traj = line(1.0, 0.0);
        for (k, v) in traj.z[0].iter_mut().enumerate() {
            if k % 2 == 1 {
                *v += 0.5;
            }
        }
        assert!(matches!(detect_period(&traj, &[1.0], 64), PeriodResult::Found { c: 2, .. }));
        assert!(matches!(detect_period(&traj, &[1.0], 1), PeriodResult::NotConverged { .. }));
    }

    #[test]
    fn short_trajectories_are_rejected() {
        let mut traj = line(1.0, 0.0);
        traj.max_tau = 100.0;
        assert!(matches!(estimate_slope(&traj, 0.25), Err(SimError::TooShort { .. })));
        assert!(matches!(estimate_slope(&line(1.0, 0.0), 0.75), Err(SimError::TailFraction)));
    }

    fn cycle(tau: Rational, marking: Rational) -> PetriNet {
        NetBuilder::new()
            .place("p", tau, marking)
            .transition("q")
            .arc("p", "q", int(1))
            .arc("q", "p", int(1))
            .build()
            .unwrap()
    }

    #[test]
    fn empty_cycle_never_fires() {
        let traj = simulate(&cycle(int(1), int(0)), &InitialCondition::Zero, &int(10), &ratio(1, 2), Mode::Fluid).unwrap();
        assert!(traj.z[0].iter().all(|v| *v == 0.0));
        assert_eq!(traj.times.first(), Some(&-1.0));
        assert_eq!(traj.times.last(), Some(&10.0));
    }

    #[test]
    fn single_cycle_fires_marking_per_holding_time() {
        let traj = simulate(&cycle(int(2), int(3)), &InitialCondition::Zero, &int(40), &int(1), Mode::Discrete).unwrap();
        // z(t) = 3 + z(t - 2): 3 tokens every 2 time units.
        let k0 = traj.history_steps;
        assert_eq!(traj.z[0][k0 + 1], 3.0);
        assert_eq!(traj.z[0][k0 + 2], 3.0);
        assert_eq!(traj.z[0][k0 + 3], 6.0);
        let est = estimate_slope(&traj, 0.5).unwrap();
        assert!((est.rho[0] - 1.5).abs() < 1e-12);
        for k in 0..traj.len() {
            assert_eq!(traj.x[0][k], 3.0 + traj.z[0][k]);
        }
    }

    #[test]
    fn step_must_divide_holding_times() {
        let e = simulate(&cycle(int(1), int(1)), &InitialCondition::Zero, &int(10), &ratio(2, 3), Mode::Fluid);
        assert!(matches!(e, Err(SimError::Step { .. })));
        let e = simulate(&cycle(int(1), int(1)), &InitialCondition::Zero, &int(0), &int(1), Mode::Fluid);
        assert_eq!(e, Err(SimError::Horizon));
        let e = simulate(&cycle(int(1), ratio(1, 2)), &InitialCondition::Zero, &int(5), &int(1), Mode::Discrete);
        assert!(matches!(e, Err(SimError::NonInteger(_))));
    }

    #[test]
    fn natural_step_is_gcd() {
        let net = NetBuilder::new()
            .place("a", ratio(3, 2), int(0))
            .place("b", int(2), int(0))
            .place("c", int(0), int(0))
            .build()
            .unwrap();
        assert_eq!(natural_step(&net), ratio(1, 2));
    }
}
