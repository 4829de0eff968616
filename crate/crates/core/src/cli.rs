//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation failure, 3 analysis
//! failure.

use crate::casestudies::{self, EmsAParams, EmsBParams};
use crate::dynamics::{self, InitialCondition, Mode, PeriodResult};
use crate::linalg;
use crate::markov::{self, StochasticMatrix};
use crate::petri_model::{self, PetriNet};
use crate::rational::{self, Rational};
use crate::smdp::{self, Method};
use crate::stationary::{self, ParamSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_ANALYSIS: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "pnfluid", version, about = "Throughput and congestion phases of timed Petri nets")]
pub struct Cli {
    /// Worker threads for enumerations.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check structural conditions of a net.
    Validate {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Simulate the counter dynamics and print the trajectory as CSV.
    Simulate {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        sim: SimArgs,
        /// Keep every N-th sample.
        #[arg(long, default_value_t = 1)]
        every: usize,
        /// Also look for asymptotic periodicity, up to this many steps.
        #[arg(long, num_args = 0..=1, default_missing_value = "64")]
        period: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Asymptotic throughput of every transition.
    Throughput {
        #[command(flatten)]
        input: Input,
        /// Defaults to lp for priority-free nets and germ otherwise.
        #[arg(long, value_enum)]
        method: Option<ThroughputMethod>,
        /// Cross-check all applicable exact methods.
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Write the SMDP as JSON.
        #[arg(long)]
        dump_smdp: Option<PathBuf>,
        /// Write the linear program as text.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Congestion phases over parametric initial markings.
    Phases {
        #[command(flatten)]
        input: Input,
        /// Comma-separated place ids, each optionally `=lo:hi`.
        #[arg(long)]
        params: String,
        /// Sample a grid instead (one resolution per parameter, e.g. `100,100`).
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized consistency checks of the analyses.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
}

#[derive(Args, Debug)]
pub struct Input {
    /// Net description in JSON.
    pub net: Option<PathBuf>,
    /// Built-in model: ems-a or ems-b.
    #[arg(long)]
    pub model: Option<String>,
    /// Model parameter `name=value`; values may be fractions `p/q`.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    /// Defaults to 2000 times the largest holding time.
    #[arg(long)]
    pub horizon: Option<String>,
    /// Defaults to the gcd of the holding times.
    #[arg(long)]
    pub dt: Option<String>,
    #[arg(long, value_enum, default_value_t = SimMode::Fluid)]
    pub mode: SimMode,
    /// Fraction of the trajectory used for slope estimation.
    #[arg(long, default_value_t = 0.25)]
    pub tail: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimMode {
    Fluid,
    Discrete,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThroughputMethod {
    Lp,
    PolicyIteration,
    Enumerate,
    Germ,
    Simulate,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(m: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_USAGE, message: m.to_string() }
}

fn invalid(m: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_INVALID, message: m.to_string() }
}

fn analysis(m: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_ANALYSIS, message: m.to_string() }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(cli.command, out, err)) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn load(input: &Input) -> Result<PetriNet, Failure> {
    let pairs = input
        .set
        .iter()
        .map(|s| {
            let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects name=value, got `{s}`")))?;
            let v = rational::parse(v.trim()).map_err(|e| usage(format!("--set {s}: {e}")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    match (&input.net, &input.model) {
        (Some(_), Some(_)) | (None, None) => Err(usage("give exactly one of a net file or --model")),
        (Some(path), None) => {
            if !pairs.is_empty() {
                return Err(usage("--set applies to built-in models only"));
            }
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            PetriNet::from_json(&text).map_err(invalid)
        }
        (None, Some(m)) => casestudies::builtin(m, &pairs).map_err(usage),
    }
}

fn emit(out: &mut dyn Write, path: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(|e| analysis(e.to_string())),
    }
}

fn require_valid(net: &PetriNet) -> Result<(), Failure> {
    let report = petri_model::validate_net(net);
    if report.ok() {
        Ok(())
    } else {
        Err(invalid(format!("net fails validation\n{report}")))
    }
}

fn dispatch(cmd: Command, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<i32, Failure> {
    match cmd {
        Command::Validate { input, format } => {
            let net = load(&input)?;
            let report = petri_model::validate_net(&net);
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&report).expect("serializable") + "\n",
                _ => format!("{report}\n"),
            };
            emit(out, &None, &text)?;
            Ok(if report.ok() { EXIT_OK } else { EXIT_INVALID })
        }
        Command::Simulate { input, sim, every, period, out: path } => {
            let net = load(&input)?;
            require_valid(&net)?;
            let traj = run_sim(&net, &sim)?;
            emit(out, &path, &traj.to_csv(every))?;
            match dynamics::estimate_slope(&traj, sim.tail) {
                Ok(est) => {
                    for (q, r) in net.transitions().iter().zip(&est.rho) {
                        let _ = writeln!(err, "slope {q} {r:.9}");
                    }
                    let _ = writeln!(err, "residual {:.3e}", est.residual);
                    if let Some(max_c) = period {
                        match dynamics::detect_period(&traj, &est.rho, max_c) {
                            PeriodResult::Found { c, residual } => {
                                let _ = writeln!(err, "period {c} steps (residual {residual:.3e})");
                            }
                            PeriodResult::NotConverged { best_residual } => {
                                let _ = writeln!(err, "no period up to {max_c} steps (best residual {best_residual:.3e})");
                            }
                        }
                    }
                }
                Err(e) => {
                    let _ = writeln!(err, "slope estimate skipped: {e}");
                }
            }
            Ok(EXIT_OK)
        }
        Command::Throughput { input, method, check, sim, format, dump_smdp, dump_lp, out: path } => {
            let net = load(&input)?;
            require_valid(&net)?;
            if dump_smdp.is_some() || dump_lp.is_some() {
                let model = priority_free_model(&net)?;
                if let Some(p) = &dump_smdp {
                    emit(out, &Some(p.clone()), &(model.to_json() + "\n"))?;
                }
                if let Some(p) = &dump_lp {
                    let lp = smdp::throughput_lp(&model);
                    emit(out, &Some(p.clone()), &lp.dump(&smdp::lp_variable_names(&model)))?;
                }
            }
            let method = method.unwrap_or(if net.has_priority() { ThroughputMethod::Germ } else { ThroughputMethod::Lp });
            let result = throughput(&net, method, &sim)?;
            if check {
                cross_check(&net, &result, &sim)?;
            }
            emit(out, &path, &render_throughput(&net, method, &result, format))?;
            Ok(EXIT_OK)
        }
        Command::Phases { input, params, grid, format, out: path } => {
            let net = load(&input)?;
            require_valid(&net)?;
            let specs = ParamSpec::parse_list(&net, &params).map_err(usage)?;
            let text = match grid {
                Some(g) => {
                    let pts = stationary::sample_phase_diagram(&net, &specs, &g).map_err(usage)?;
                    stationary::samples_csv(&net, &specs, &pts)
                }
                None => {
                    let cells = stationary::throughput_complex(&net, &specs).map_err(analysis)?;
                    if cells.is_empty() {
                        return Err(analysis("no full-dimensional cell"));
                    }
                    match format {
                        Format::Text => stationary::phases_text(&net, &specs, &cells),
                        _ => stationary::phases_json(&net, &specs, &cells) + "\n",
                    }
                }
            };
            emit(out, &path, &text)?;
            Ok(EXIT_OK)
        }
        Command::Selftest { seed, cases } => selftest(seed, cases, out),
    }
}

fn run_sim(net: &PetriNet, sim: &SimArgs) -> Result<dynamics::CounterTrajectory, Failure> {
    let parse = |s: &Option<String>, what: &str| -> Result<Option<Rational>, Failure> {
        s.as_ref().map(|v| rational::parse(v).map_err(|e| usage(format!("--{what}: {e}")))).transpose()
    };
    let dt = parse(&sim.dt, "dt")?.unwrap_or_else(|| dynamics::natural_step(net));
    let horizon = parse(&sim.horizon, "horizon")?
        .unwrap_or_else(|| rational::max(&(net.max_tau() * rational::int(2000)), &rational::int(2000)));
    let mode = match sim.mode {
        SimMode::Fluid => Mode::Fluid,
        SimMode::Discrete => Mode::Discrete,
    };
    dynamics::simulate(net, &InitialCondition::Zero, &horizon, &dt, mode).map_err(usage)
}

fn priority_free_model(net: &PetriNet) -> Result<smdp::SmdpModel, Failure> {
    let inv = petri_model::stoichiometric_invariant(net)
        .map_err(analysis)?
        .ok_or_else(|| analysis("net has no positive stoichiometric invariant"))?;
    smdp::petri_to_smdp(net, Some(&inv.e)).map_err(analysis)
}

/// Exact rates (with biases where the method yields them) or estimated slopes.
enum Rates {
    Exact { rho: Vec<Rational>, u: Option<Vec<Rational>> },
    Estimated(Vec<f64>),
}

fn throughput(net: &PetriNet, method: ThroughputMethod, sim: &SimArgs) -> Result<Rates, Failure> {
    let scale = |g: &[Rational], e: &[Rational]| g.iter().zip(e).map(|(a, b)| a * b).collect::<Vec<_>>();
    match method {
        ThroughputMethod::Lp => {
            let model = priority_free_model(net)?;
            let g = smdp::lp_throughput(&model).map_err(analysis)?;
            Ok(Rates::Exact { rho: scale(&g, model.weights.as_ref().expect("weights")), u: None })
        }
        ThroughputMethod::PolicyIteration => {
            let sol = stationary::solve_lex_priority_free(net).map_err(analysis)?;
            Ok(Rates::Exact { rho: sol.rho, u: Some(sol.u) })
        }
        ThroughputMethod::Enumerate => {
            let model = priority_free_model(net)?;
            let s = smdp::solve_average_cost(&model, Method::Enumerate).map_err(analysis)?;
            Ok(Rates::Exact { rho: scale(&s.g, model.weights.as_ref().expect("weights")), u: None })
        }
        ThroughputMethod::Germ => {
            let sols = stationary::solve_germ_priority(net).map_err(analysis)?;
            if sols.len() > 1 {
                log::warn!("{} stationary regimes; reporting the first", sols.len());
            }
            let s = sols.into_iter().next().expect("nonempty");
            Ok(Rates::Exact { rho: s.rho, u: Some(s.u) })
        }
        ThroughputMethod::Simulate => {
            let traj = run_sim(net, sim)?;
            let est = dynamics::estimate_slope(&traj, sim.tail).map_err(analysis)?;
            Ok(Rates::Estimated(est.rho))
        }
    }
}

fn cross_check(net: &PetriNet, result: &Rates, sim: &SimArgs) -> Result<(), Failure> {
    let methods: &[ThroughputMethod] = if net.has_priority() {
        &[ThroughputMethod::Germ]
    } else {
        &[ThroughputMethod::Lp, ThroughputMethod::PolicyIteration, ThroughputMethod::Enumerate, ThroughputMethod::Germ]
    };
    let mut exact: Vec<(ThroughputMethod, Vec<Rational>)> = Vec::new();
    for &m in methods {
        if let Rates::Exact { rho, .. } = throughput(net, m, sim)? {
            exact.push((m, rho));
        }
    }
    let reference = &exact[0].1;
    for (m, rho) in &exact[1..] {
        if rho != reference {
            return Err(analysis(format!("{m:?} disagrees with {:?}", exact[0].0)));
        }
    }
    if let Rates::Estimated(est) = result {
        for (q, (a, b)) in est.iter().zip(reference).enumerate() {
            let b = rational::to_f64(b);
            if (a - b).abs() > 1e-3 * b.abs().max(1e-3) {
                return Err(analysis(format!("simulated slope of `{}` is {a}, exact {b}", net.transitions()[q])));
            }
        }
    }
    Ok(())
}

fn render_throughput(net: &PetriNet, method: ThroughputMethod, r: &Rates, format: Format) -> String {
    let method = format!("{method:?}");
    match format {
        Format::Csv => {
            let mut s = String::from("transition,rho,u\n");
            for (q, id) in net.transitions().iter().enumerate() {
                let (rho, u) = match r {
                    Rates::Exact { rho, u } => (rational::fmt(&rho[q]), u.as_ref().map(|u| rational::fmt(&u[q])).unwrap_or_default()),
                    Rates::Estimated(e) => (e[q].to_string(), String::new()),
                };
                s += &format!("{id},{rho},{u}\n");
            }
            s
        }
        _ => {
            let rows: Vec<serde_json::Value> = net
                .transitions()
                .iter()
                .enumerate()
                .map(|(q, id)| match r {
                    Rates::Exact { rho, u } => {
                        let mut v = serde_json::json!({ "transition": id, "rho": rational::fmt(&rho[q]) });
                        if let Some(u) = u {
                            v["u"] = serde_json::Value::String(rational::fmt(&u[q]));
                        }
                        v
                    }
                    Rates::Estimated(e) => serde_json::json!({ "transition": id, "rho": e[q] }),
                })
                .collect();
            serde_json::to_string_pretty(&serde_json::json!({ "method": method, "transitions": rows })).expect("serializable") + "\n"
        }
    }
}

// --------------------------------------------------------------- selftest

fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> StochasticMatrix {
    let rows = (0..n)
        .map(|_| {
            let w: Vec<i64> = (0..n).map(|_| if rng.gen_bool(0.4) { 0 } else { rng.gen_range(1..=5) }).collect();
            let w = if w.iter().all(|&x| x == 0) { (0..n).map(|j| i64::from(j == 0)).collect() } else { w };
            let s: i64 = w.iter().sum();
            w.iter().map(|&x| rational::ratio(x, s)).collect()
        })
        .collect();
    StochasticMatrix::new(rows).expect("rows sum to one")
}

fn selftest(seed: u64, cases: usize, out: &mut dyn Write) -> Result<i32, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut report = |name: &str, bad: Vec<String>| {
        let _ = writeln!(out, "{} {name}", if bad.is_empty() { "pass" } else { "FAIL" });
        for b in &bad {
            let _ = writeln!(out, "  {b}");
        }
        failures += bad.len();
    };

    let mut bad = Vec::new();
    for _ in 0..cases {
        let p = EmsAParams::random(&mut rng);
        let net = casestudies::build_ems_a(&p).map_err(analysis)?;
        let closed = casestudies::ems_a_closed_form(&p);
        let mut got = Vec::new();
        for m in [ThroughputMethod::Lp, ThroughputMethod::PolicyIteration, ThroughputMethod::Enumerate, ThroughputMethod::Germ] {
            match throughput(&net, m, &no_sim()) {
                Ok(Rates::Exact { rho, .. }) => got.push(rho),
                Ok(Rates::Estimated(_)) => unreachable!("exact method"),
                Err(f) => bad.push(format!("{p:?}: {m:?} failed: {}", f.message)),
            }
        }
        if got.iter().any(|r| *r != closed) {
            bad.push(format!("{p:?}: methods disagree with the closed form"));
        }
    }
    report("ems-a closed form = lp = policy iteration = enumeration = germ", bad);

    let mut bad = Vec::new();
    for _ in 0..cases {
        let p = EmsBParams::random(&mut rng);
        let Ok(table) = casestudies::ems_b_phase_table(&p) else {
            bad.push(format!("{p:?}: no phase"));
            continue;
        };
        if table.phases.len() > 1 {
            continue;
        }
        let net = casestudies::build_ems_b(&p).map_err(analysis)?;
        let idx = |id: &str| net.transition_index(id).expect("transition");
        match stationary::solve_germ_priority(&net) {
            Ok(sols) => {
                for s in sols {
                    if (&s.rho[idx("z1")], &s.rho[idx("z5")], &s.rho[idx("z5p")]) != (&table.rho1, &table.rho5, &table.rho5p) {
                        bad.push(format!("{p:?}: germ solution disagrees with phase {}", table.phases[0]));
                    }
                }
            }
            Err(e) => bad.push(format!("{p:?}: {e}")),
        }
    }
    report("ems-b phase table = germ solutions", bad);

    let mut bad = Vec::new();
    for _ in 0..cases {
        let n = rng.gen_range(1..=6);
        let p = random_stochastic(&mut rng, n);
        let ps = markov::spectral_projector(&p).map_err(analysis)?;
        if linalg::mat_mul(&ps, &ps) != ps || linalg::mat_mul(p.rows(), &ps) != ps {
            bad.push(format!("{:?}", p.rows()));
        }
    }
    report("spectral projector idempotent and P-invariant", bad);

    Ok(if failures == 0 { EXIT_OK } else { EXIT_ANALYSIS })
}

fn no_sim() -> SimArgs {
    SimArgs { horizon: None, dt: None, mode: SimMode::Fluid, tail: 0.25 }
}

