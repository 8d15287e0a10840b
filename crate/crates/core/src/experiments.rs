//! Studies behind the `iwcheck` subcommands and their CSV/JSON reports.
//!
//! Paths are processed in parallel on a dedicated rayon pool, collected in
//! path order and reduced sequentially, so a report depends only on the
//! config and seed, never on the worker count.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::feps::{ms_convergence_study, FepsParams, FepsRow};
use crate::field::{check_excursion, evolve_field, BasisFunction, FieldSpec};
use crate::itowentzell::{
    accumulate_rhs, chain_rule_ledger, classical_ito_increment, reduction_check, residual, FrozenField, RhsLedger,
};
use crate::mollifier::{holder_error_bound, HolderWitness, Mollifier, MollifierParams};
use crate::noise::{coarsen_wiener, path_noise, sample_jumps, sample_wiener, JumpStream, TimeGrid};
use crate::scenario::{
    derive_path_seed, validate_scenario, MarkMap, Piece, ScenarioConfig, Schedule, StateCoefficients, StreamTag,
};
use crate::state::evolve_state;
use crate::stats::{loglog_fit, rms_ci, strictly_decreasing, SlopeFit};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Lower bound on the residual slope (after subtracting two standard errors).
pub const RESIDUAL_SLOPE_MIN: f64 = 0.4;
/// Relative per-event jump deviation allowed.
pub const JUMP_TOL: f64 = 1e-12;
/// RMS residuals at or below this count as exact at every level.
pub const EXACT_TOL: f64 = 1e-12;
pub const ITEMWISE_TOL: f64 = 1e-14;
pub const ITO_MATCH_TOL: f64 = 1e-12;
pub const CHAIN_SLOPE_TOL: f64 = 0.2;
pub const FEPS_SLOPE_MIN: f64 = 1.5;
pub const TRANSFER_TOL: f64 = 1e-6;
pub const REDUCTION_CASES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

pub trait Report: Serialize {
    fn passed(&self) -> bool;
    fn to_csv(&self) -> String;

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports contain only plain data") + "\n"
    }

    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

/// Runs `f` on a fresh pool of `workers` threads (0 picks rayon's default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, Error> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Study(e.to_string()))?;
    Ok(pool.install(f))
}

fn header(out: &mut String, fingerprint: &str, seed: u64) {
    let _ = writeln!(out, "# itowentzell {VERSION} fingerprint {fingerprint} seed {seed}");
}

fn fmt_slope(s: &Option<SlopeFit>) -> String {
    match s {
        Some(s) => format!("slope {} stderr {}", s.slope, s.stderr),
        None => "slope none".into(),
    }
}

// ---------------------------------------------------------------- residuals

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: usize,
    pub steps: usize,
    pub dt: f64,
    pub n_paths: usize,
    pub rms_residual: f64,
    pub max_abs_residual: f64,
    pub jump_residual_max: f64,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub version: String,
    pub fingerprint: String,
    pub seed: u64,
    /// Ordered by decreasing dt.
    pub rows: Vec<LevelRow>,
    /// Fit of log2(rms) on log2(dt).
    pub slope: Option<SlopeFit>,
    pub slope_threshold: f64,
    pub exact: bool,
    pub monotone: bool,
    pub jumps_exact: bool,
    pub passed: bool,
}

impl Report for ConvergenceReport {
    fn passed(&self) -> bool {
        self.passed
    }

    fn to_csv(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.fingerprint, self.seed);
        out.push_str("level,steps,dt,n_paths,rms_residual,max_abs_residual,jump_residual_max,ci_halfwidth\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.level, r.steps, r.dt, r.n_paths, r.rms_residual, r.max_abs_residual, r.jump_residual_max, r.ci_halfwidth
            );
        }
        let _ = writeln!(
            out,
            "# {} threshold {} exact {} monotone {} jumps_exact {} pass {}",
            fmt_slope(&self.slope),
            self.slope_threshold,
            self.exact,
            self.monotone,
            self.jumps_exact,
            self.passed
        );
        out
    }
}

/// Terminal residual and largest relative jump deviation per level.
fn path_residuals(cfg: &ScenarioConfig, index: u64) -> Result<Vec<(f64, f64)>, Error> {
    let (fine, jumps) = path_noise(cfg, index);
    (0..cfg.refinement_levels)
        .map(|l| {
            let wiener = coarsen_wiener(&fine, cfg.finest_steps() / cfg.steps_at(l))?;
            let x = evolve_state(&cfg.state, &cfg.x0, &wiener, &jumps)?;
            check_excursion(&cfg.field, &x)?;
            let c = evolve_field(&cfg.field, &wiener, &jumps)?;
            let r = residual(&cfg.state, &cfg.field, &x, &c, &wiener, &jumps)?;
            Ok((r.terminal(), r.max_relative_jump_deviation()))
        })
        .collect()
}

/// Residual of the formula at T for every refinement level, common noise
/// across levels.
pub fn run_residual_study(cfg: &ScenarioConfig, workers: usize) -> Result<ConvergenceReport, Error> {
    let cfg = validate_scenario(cfg.clone())?;
    let per_path: Vec<Vec<(f64, f64)>> = with_workers(workers, || {
        (0..cfg.n_paths as u64)
            .into_par_iter()
            .map(|i| path_residuals(&cfg, i))
            .collect::<Result<_, Error>>()
    })??;

    let rows: Vec<LevelRow> = (0..cfg.refinement_levels)
        .map(|l| {
            let res: Vec<f64> = per_path.iter().map(|p| p[l].0).collect();
            let (rms, ci) = rms_ci(&res);
            let steps = cfg.steps_at(l);
            LevelRow {
                level: l,
                steps,
                dt: cfg.horizon / steps as f64,
                n_paths: cfg.n_paths,
                rms_residual: rms,
                max_abs_residual: res.iter().fold(0.0, |m, r| m.max(r.abs())),
                jump_residual_max: per_path.iter().fold(0.0, |m, p| m.max(p[l].1)),
                ci_halfwidth: ci,
            }
        })
        .collect();

    let rms: Vec<f64> = rows.iter().map(|r| r.rms_residual).collect();
    let dts: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let slope = if rms.iter().all(|r| *r > 0.0) { loglog_fit(&dts, &rms) } else { None };
    let exact = rms.iter().all(|r| *r <= EXACT_TOL);
    let monotone = strictly_decreasing(&rms);
    let jumps_exact = rows.iter().all(|r| r.jump_residual_max <= JUMP_TOL);
    let slope_ok = slope.is_some_and(|s| s.lower() >= RESIDUAL_SLOPE_MIN);
    Ok(ConvergenceReport {
        version: VERSION.into(),
        fingerprint: cfg.fingerprint(),
        seed: cfg.master_seed,
        rows,
        slope,
        slope_threshold: RESIDUAL_SLOPE_MIN,
        exact,
        monotone,
        jumps_exact,
        passed: jumps_exact && (exact || (monotone && slope_ok)),
    })
}

// --------------------------------------------------------------- reductions

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionRow {
    pub check: String,
    pub case: usize,
    pub measured: f64,
    pub stderr: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub version: String,
    pub fingerprint: String,
    pub seed: u64,
    pub rows: Vec<ReductionRow>,
    pub passed: bool,
}

impl ReductionReport {
    /// (passing, total) rows for one check.
    pub fn tally(&self, check: &str) -> (usize, usize) {
        let rows = self.rows.iter().filter(|r| r.check == check);
        rows.fold((0, 0), |(p, t), r| (p + r.pass as usize, t + 1))
    }

    pub fn worst(&self, check: &str) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.check == check)
            .fold(0.0, |m, r| m.max(r.measured))
    }

    pub fn row(&self, check: &str) -> Option<&ReductionRow> {
        self.rows.iter().find(|r| r.check == check)
    }
}

impl Report for ReductionReport {
    fn passed(&self) -> bool {
        self.passed
    }

    fn to_csv(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.fingerprint, self.seed);
        out.push_str("check,case,measured,stderr,threshold,pass\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.check, r.case, r.measured, r.stderr, r.threshold, r.pass);
        }
        let _ = writeln!(out, "# pass {}", self.passed);
        out
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Two pieces switching at mid-horizon (one when the grid has a single step).
fn two_pieces<T>(cfg: &ScenarioConfig, mut gen: impl FnMut() -> T) -> Schedule<T> {
    let half = cfg.base_steps / 2;
    let mut pieces = vec![Piece { start: 0.0, value: gen() }];
    if half > 0 {
        pieces.push(Piece {
            start: cfg.horizon * half as f64 / cfg.base_steps as f64,
            value: gen(),
        });
    }
    Schedule(pieces)
}

struct Case {
    state: StateCoefficients,
    field: FieldSpec,
    x0: Vec<f64>,
}

const CASE_SALT: u64 = 0x7265_6475_6374_696f;

/// Random jump-free case on the config's dimensions and basis.
fn random_case(cfg: &ScenarioConfig, index: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_path_seed(cfg.master_seed ^ CASE_SALT, index as u64, StreamTag::Wiener));
    let (n, m, k, p) = (cfg.state_dim, cfg.wiener_dim, cfg.mark_dim, cfg.field.len());
    let mut state = StateCoefficients::zero(n, m, k);
    state.drift = two_pieces(cfg, || uniform_vec(&mut rng, n, 1.0));
    state.diffusion = two_pieces(cfg, || (0..n).map(|_| uniform_vec(&mut rng, m, 0.5)).collect());
    let c0 = uniform_vec(&mut rng, p, 1.0);
    let mut field = FieldSpec::frozen(cfg.field.basis.clone(), c0, m, k);
    field.excursion_box = cfg.field.excursion_box;
    field.drift = two_pieces(cfg, || uniform_vec(&mut rng, p, 1.0));
    field.diffusion = two_pieces(cfg, || (0..p).map(|_| uniform_vec(&mut rng, m, 0.5)).collect());
    let x0 = uniform_vec(&mut rng, n, 0.5);
    Case { state, field, x0 }
}

fn itemwise_gap(a: &RhsLedger, b: &RhsLedger) -> f64 {
    if a.entries.len() != b.entries.len() {
        return f64::INFINITY;
    }
    a.entries
        .iter()
        .zip(&b.entries)
        .fold(a.totals.max_abs_diff(&b.totals), |m, (x, y)| m.max(x.items.max_abs_diff(&y.items)))
}

fn base_grid(cfg: &ScenarioConfig) -> TimeGrid {
    TimeGrid::uniform(cfg.horizon, cfg.base_steps)
}

/// Generalized ledger vs the classical Itô–Wentzell ledger.
fn classical_iw_case(cfg: &ScenarioConfig, i: usize) -> Result<f64, Error> {
    let case = random_case(cfg, i);
    let w = sample_wiener(base_grid(cfg), cfg.wiener_dim, derive_path_seed(cfg.master_seed, i as u64, StreamTag::Wiener));
    let j = JumpStream::empty(0.0, cfg.horizon);
    let x = evolve_state(&case.state, &case.x0, &w, &j)?;
    let c = evolve_field(&case.field, &w, &j)?;
    reduction_check(&case.state, &case.field, &x, &c, &w, &j)
}

/// Generalized ledger vs the deterministic chain rule (B = D = 0).
fn chain_rule_case(cfg: &ScenarioConfig, i: usize) -> Result<f64, Error> {
    let mut case = random_case(cfg, i);
    case.state.diffusion = Schedule::constant(vec![vec![0.0; cfg.wiener_dim]; cfg.state_dim]);
    case.field.diffusion = Schedule::constant(vec![vec![0.0; cfg.wiener_dim]; cfg.field.len()]);
    let w = sample_wiener(base_grid(cfg), cfg.wiener_dim, derive_path_seed(cfg.master_seed, i as u64, StreamTag::Wiener));
    let j = JumpStream::empty(0.0, cfg.horizon);
    let x = evolve_state(&case.state, &case.x0, &w, &j)?;
    let c = evolve_field(&case.field, &w, &j)?;
    let general = accumulate_rhs(&case.state, &case.field, &x, &c, &w, &j)?;
    let chain = chain_rule_ledger(&case.state, &case.field, &x, &c)?;
    Ok(itemwise_gap(&general, &chain))
}

/// Frozen field (Q = D = G = 0) vs the generalized Itô formula, with the
/// config's jump law and a random jump map.
fn generalized_ito_case(cfg: &ScenarioConfig, i: usize) -> Result<f64, Error> {
    let mut case = random_case(cfg, i);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_path_seed(cfg.master_seed ^ CASE_SALT, i as u64, StreamTag::Jumps));
    let (n, k) = (cfg.state_dim, cfg.mark_dim);
    case.state.jump = two_pieces(cfg, || MarkMap::Affine {
        offset: uniform_vec(&mut rng, n, 0.3),
        matrix: (0..n).map(|_| uniform_vec(&mut rng, k, 0.3)).collect(),
    });
    case.state.jump_bound = f64::MAX;
    let field = FieldSpec::frozen(cfg.field.basis.clone(), case.field.c0.clone(), cfg.wiener_dim, k);
    let seed = |tag| derive_path_seed(cfg.master_seed, i as u64, tag);
    let w = sample_wiener(base_grid(cfg), cfg.wiener_dim, seed(StreamTag::Wiener));
    let j = sample_jumps(cfg.horizon, &cfg.jump_law, seed(StreamTag::Jumps), seed(StreamTag::Marks));
    let x = evolve_state(&case.state, &case.x0, &w, &j)?;
    let c = evolve_field(&field, &w, &j)?;
    let general = accumulate_rhs(&case.state, &field, &x, &c, &w, &j)?;
    let frozen = FrozenField {
        spec: &field,
        coeffs: &field.c0,
    };
    let ito = classical_ito_increment(&frozen, &case.state, &x, &w, &j)?;
    Ok(itemwise_gap(&general, &ito))
}

fn square_field(excursion: f64) -> FieldSpec {
    let mut f = FieldSpec::frozen(vec![BasisFunction::Polynomial { powers: vec![2] }], vec![1.0], 1, 1);
    f.excursion_box = Some(excursion);
    f
}

/// Levels used by the order rows: the config's count, at least three.
fn order_levels(cfg: &ScenarioConfig) -> Vec<usize> {
    (0..cfg.refinement_levels.max(3)).map(|l| cfg.base_steps << l).collect()
}

/// |residual| at T of F = x², a = 1, B = D = 0, per level (one path).
fn chain_rule_order(cfg: &ScenarioConfig) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let mut state = StateCoefficients::zero(1, 1, 1);
    state.drift = Schedule::constant(vec![1.0]);
    let field = square_field(f64::MAX);
    let mut dts = Vec::new();
    let mut res = Vec::new();
    for steps in order_levels(cfg) {
        let grid = TimeGrid::uniform(cfg.horizon, steps);
        let w = crate::noise::WienerPath::zero(grid, 1);
        let j = JumpStream::empty(0.0, cfg.horizon);
        let x = evolve_state(&state, &[0.0], &w, &j)?;
        let c = evolve_field(&field, &w, &j)?;
        let ledger = chain_rule_ledger(&state, &field, &x, &c)?;
        let lhs = crate::itowentzell::lhs_increment(&c, &field, &x, x.checkpoints.len() - 1);
        dts.push(grid.dt());
        res.push((lhs - ledger.total()).abs());
    }
    Ok((dts, res))
}

/// RMS residual at T of the generalized Itô formula for F = x² with b ≠ 0.
fn ito_order(cfg: &ScenarioConfig) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let mut state = StateCoefficients::zero(1, 1, 1);
    state.drift = Schedule::constant(vec![0.3]);
    state.diffusion = Schedule::constant(vec![vec![0.8]]);
    let field = square_field(f64::MAX);
    let f = FrozenField {
        spec: &field,
        coeffs: &field.c0,
    };
    let levels = order_levels(cfg);
    let finest = *levels.last().expect("at least three levels");
    let per_path: Vec<Vec<f64>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let fine = sample_wiener(
                TimeGrid::uniform(cfg.horizon, finest),
                1,
                derive_path_seed(cfg.master_seed, i, StreamTag::Wiener),
            );
            let j = JumpStream::empty(0.0, cfg.horizon);
            levels
                .iter()
                .map(|&steps| {
                    let w = coarsen_wiener(&fine, finest / steps)?;
                    let x = evolve_state(&state, &[0.5], &w, &j)?;
                    let ledger = classical_ito_increment(&f, &state, &x, &w, &j)?;
                    let lhs = x.terminal()[0].powi(2) - 0.25;
                    Ok(lhs - ledger.total())
                })
                .collect::<Result<Vec<f64>, Error>>()
        })
        .collect::<Result<_, _>>()?;
    let dts = levels.iter().map(|s| cfg.horizon / *s as f64).collect();
    let rms = (0..levels.len())
        .map(|l| rms_ci(&per_path.iter().map(|p| p[l]).collect::<Vec<_>>()).0)
        .collect();
    Ok((dts, rms))
}

fn slope_row(check: &str, fit: Option<SlopeFit>, threshold: f64, pass: impl Fn(&SlopeFit) -> bool) -> ReductionRow {
    ReductionRow {
        check: check.into(),
        case: 0,
        measured: fit.map_or(f64::NAN, |s| s.slope),
        stderr: fit.map_or(f64::NAN, |s| s.stderr),
        threshold,
        pass: fit.as_ref().is_some_and(pass),
    }
}

/// The three reductions of the generalized formula over a fixed matrix of
/// random scenarios, plus the chain-rule and Itô order rows.
pub fn run_reduction_suite(cfg: &ScenarioConfig, workers: usize) -> Result<ReductionReport, Error> {
    let cfg = validate_scenario(cfg.clone())?;
    let rows = with_workers(workers, || -> Result<Vec<ReductionRow>, Error> {
        let mut rows = Vec::new();
        type CaseFn = fn(&ScenarioConfig, usize) -> Result<f64, Error>;
        let matrix: [(&str, CaseFn, f64); 3] = [
            ("classical-iw", classical_iw_case, ITEMWISE_TOL),
            ("chain-rule", chain_rule_case, ITEMWISE_TOL),
            ("generalized-ito", generalized_ito_case, ITO_MATCH_TOL),
        ];
        for (check, run, tol) in matrix {
            let gaps: Vec<f64> = (0..REDUCTION_CASES)
                .into_par_iter()
                .map(|i| run(&cfg, i))
                .collect::<Result<_, _>>()?;
            rows.extend(gaps.into_iter().enumerate().map(|(case, g)| ReductionRow {
                check: check.into(),
                case,
                measured: g,
                stderr: 0.0,
                threshold: tol,
                pass: g <= tol,
            }));
        }
        let (dts, res) = chain_rule_order(&cfg)?;
        rows.push(slope_row("chain-rule-order", loglog_fit(&dts, &res), CHAIN_SLOPE_TOL, |s| {
            (s.slope - 1.0).abs() <= CHAIN_SLOPE_TOL + 2.0 * s.stderr
        }));
        let (dts, rms) = ito_order(&cfg)?;
        let monotone = strictly_decreasing(&rms);
        rows.push(slope_row("ito-order", loglog_fit(&dts, &rms), RESIDUAL_SLOPE_MIN, |s| {
            monotone && s.lower() >= RESIDUAL_SLOPE_MIN
        }));
        Ok(rows)
    })??;
    Ok(ReductionReport {
        version: VERSION.into(),
        fingerprint: cfg.fingerprint(),
        seed: cfg.master_seed,
        passed: rows.iter().all(|r| r.pass),
        rows,
    })
}

// ---------------------------------------------------------------- mollifier

pub const DEFAULT_MOLLIFIER_EPS: [f64; 3] = [0.5, 0.1, 0.02];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MollifierRow {
    pub check: String,
    pub epsilon: f64,
    pub dim: usize,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MollifierReport {
    pub version: String,
    pub fingerprint: String,
    pub rows: Vec<MollifierRow>,
    pub passed: bool,
}

impl MollifierReport {
    pub fn rows_for<'a>(&'a self, check: &'a str) -> impl Iterator<Item = &'a MollifierRow> + 'a {
        self.rows.iter().filter(move |r| r.check == check)
    }
}

impl Report for MollifierReport {
    fn passed(&self) -> bool {
        self.passed
    }

    fn to_csv(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.fingerprint, 0);
        out.push_str("check,epsilon,dim,measured,bound,pass\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.check, r.epsilon, r.dim, r.measured, r.bound, r.pass);
        }
        let _ = writeln!(out, "# pass {}", self.passed);
        out
    }
}

type Scalar = fn(&[f64]) -> f64;
type Vector = fn(&[f64]) -> Vec<f64>;

/// Smooth functions with closed-form first and pure second derivatives.
fn transfer_suite() -> Vec<(&'static str, Scalar, Vector, Vector, Vec<f64>)> {
    vec![
        ("x^2", |y| y[0] * y[0], |y| vec![2.0 * y[0]], |_| vec![2.0], vec![1.0]),
        ("x^3", |y| y[0].powi(3), |y| vec![3.0 * y[0] * y[0]], |y| vec![6.0 * y[0]], vec![0.0]),
        ("sin", |y| y[0].sin(), |y| vec![y[0].cos()], |y| vec![-y[0].sin()], vec![0.3]),
        (
            "gauss",
            |y| (-y[0] * y[0]).exp(),
            |y| vec![-2.0 * y[0] * (-y[0] * y[0]).exp()],
            |y| vec![(4.0 * y[0] * y[0] - 2.0) * (-y[0] * y[0]).exp()],
            vec![0.5],
        ),
        (
            "sin-cos",
            |y| y[0].sin() * y[1].cos(),
            |y| vec![y[0].cos() * y[1].cos(), -y[0].sin() * y[1].sin()],
            |y| vec![-y[0].sin() * y[1].cos(), -y[0].sin() * y[1].cos()],
            vec![0.2, 0.4],
        ),
        (
            "bump-3d",
            |y| (-0.5 * y.iter().map(|v| v * v).sum::<f64>()).exp(),
            |y| {
                let e = (-0.5 * y.iter().map(|v| v * v).sum::<f64>()).exp();
                y.iter().map(|v| -v * e).collect()
            },
            |y| {
                let e = (-0.5 * y.iter().map(|v| v * v).sum::<f64>()).exp();
                y.iter().map(|v| (v * v - 1.0) * e).collect()
            },
            vec![0.1, -0.2, 0.3],
        ),
    ]
}

fn eps_fingerprint(eps: &[f64]) -> String {
    let mut h = Sha256::new();
    for e in eps {
        h.update(e.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Bound and identity checks for the mollifier over an ε grid.
pub fn run_mollifier_suite(eps_grid: &[f64]) -> Result<MollifierReport, Error> {
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(crate::error::QuadratureError::InvalidParams("epsilon grid must be non-empty and positive".into()).into());
    }
    let mut rows = Vec::new();
    let mut push = |check: &str, epsilon: f64, dim: usize, measured: f64, bound: f64, pass: bool| {
        rows.push(MollifierRow {
            check: check.into(),
            epsilon,
            dim,
            measured,
            bound,
            pass,
        })
    };
    let mut abs_err = Vec::new();
    let mut sqrt_err = Vec::new();
    for &eps in eps_grid {
        let rule = |dim| Mollifier::new(MollifierParams::new(eps, dim));
        let r1 = rule(1)?;

        let lipschitz = HolderWitness {
            constant: 1.0,
            exponent: 1.0,
        };
        let m = r1.mollify(|y| y[0].abs(), &[0.0])?;
        let bound = holder_error_bound(r1.params(), &lipschitz);
        let closed = eps * (2.0 / PI).sqrt();
        push("holder-abs", eps, 1, m, bound, m <= bound && (m - closed).abs() <= 1e-6);
        abs_err.push(m);

        let half = HolderWitness {
            constant: 1.0,
            exponent: 0.5,
        };
        let m = r1.mollify(|y| y[0].abs().sqrt(), &[0.0])?;
        let bound = holder_error_bound(r1.params(), &half);
        push("holder-sqrt", eps, 1, m, bound, m <= bound);
        sqrt_err.push(m);

        for dim in 1..=3 {
            let d = (rule(dim)?.delta_integral() - 1.0).abs();
            push("normalization", eps, dim, d, 1e-10, d <= 1e-10);
        }
        let d = (r1.mollify(|_| 5.0, &[0.7])? - 5.0).abs();
        push("constant", eps, 1, d, 1e-10, d <= 1e-10);
        let d = (r1.mollify(|y| y[0], &[2.0])? - 2.0).abs();
        push("linear", eps, 1, d, 1e-10, d <= 1e-10);
        let d = (r1.mollify(|y| y[0] * y[0], &[0.0])? - eps * eps).abs();
        push("quadratic", eps, 1, d, 1e-8, d <= 1e-8);

        for (name, f, grad, second, x) in transfer_suite() {
            let r = rule(x.len())?;
            let g = r.grad_transfer(f, grad, &x)?;
            let s = r.second_transfer(f, second, &x)?;
            let gap = |v: &[(f64, f64)]| v.iter().fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let (dg, ds) = (gap(&g), gap(&s));
            push(&format!("grad-transfer-{name}"), eps, x.len(), dg, TRANSFER_TOL, dg <= TRANSFER_TOL);
            push(&format!("second-transfer-{name}"), eps, x.len(), ds, TRANSFER_TOL, ds <= TRANSFER_TOL);
        }
    }
    if eps_grid.len() >= 2 {
        for (check, errs, exponent) in [("order-abs", &abs_err, 1.0), ("order-sqrt", &sqrt_err, 0.5)] {
            let slope = loglog_fit(eps_grid, errs).map_or(f64::NAN, |s| s.slope);
            push(check, f64::NAN, 1, slope, exponent - 0.05, slope >= exponent - 0.05);
        }
    }
    Ok(MollifierReport {
        version: VERSION.into(),
        fingerprint: eps_fingerprint(eps_grid),
        passed: rows.iter().all(|r| r.pass),
        rows,
    })
}

// ---------------------------------------------------------------------- F_ε

pub const DEFAULT_FEPS_EPS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FepsReport {
    pub version: String,
    pub fingerprint: String,
    pub seed: u64,
    pub rows: Vec<FepsRow>,
    /// Fit of log2(mse) on log2(ε). The threshold is a conservative choice
    /// made here, not a rate taken from theory.
    pub slope: Option<SlopeFit>,
    pub slope_threshold: f64,
    pub monotone: bool,
    pub bound_holds: bool,
    pub passed: bool,
}

impl Report for FepsReport {
    fn passed(&self) -> bool {
        self.passed
    }

    fn to_csv(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.fingerprint, self.seed);
        out.push_str("epsilon,mse,ci_halfwidth,n_paths,seed\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.epsilon, r.mse, r.ci_halfwidth, r.n_paths, r.seed);
        }
        let worst = self.rows.iter().fold(0.0f64, |m, r| m.max(r.max_bound_ratio));
        let _ = writeln!(
            out,
            "# {} threshold {} (empirical) monotone {} bound_ratio_max {} pass {}",
            fmt_slope(&self.slope),
            self.slope_threshold,
            self.monotone,
            worst,
            self.passed
        );
        out
    }
}

pub fn run_feps_study(cfg: &ScenarioConfig, params: &FepsParams, workers: usize) -> Result<FepsReport, Error> {
    let cfg = validate_scenario(cfg.clone())?;
    let table = with_workers(workers, || ms_convergence_study(&cfg, params))??;
    let monotone = table.mse_decreasing();
    let bound_holds = table.bound_holds();
    let slope_ok = table.slope.is_some_and(|s| s.lower() >= FEPS_SLOPE_MIN);
    Ok(FepsReport {
        version: VERSION.into(),
        fingerprint: cfg.fingerprint(),
        seed: cfg.master_seed,
        slope: table.slope,
        slope_threshold: FEPS_SLOPE_MIN,
        monotone,
        bound_holds,
        passed: monotone && bound_holds && slope_ok,
        rows: table.rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{MarkDistribution, MarkSampler};

    fn zero_cfg() -> ScenarioConfig {
        ScenarioConfig {
            state_dim: 1,
            wiener_dim: 1,
            mark_dim: 1,
            horizon: 1.0,
            base_steps: 8,
            refinement_levels: 3,
            n_paths: 16,
            master_seed: 5,
            x0: vec![0.0],
            state: StateCoefficients::zero(1, 1, 1),
            jump_law: MarkDistribution {
                intensity: 0.0,
                marks: MarkSampler::UniformBox {
                    low: vec![0.0],
                    high: vec![1.0],
                },
            },
            field: FieldSpec::frozen(
                vec![BasisFunction::GaussianBump {
                    center: vec![0.0],
                    width: 1.0,
                }],
                vec![1.0],
                1,
                1,
            ),
        }
    }

    #[test]
    fn zero_scenario_is_exact() {
        let rep = run_residual_study(&zero_cfg(), 2).unwrap();
        assert!(rep.rows.iter().all(|r| r.rms_residual == 0.0));
        assert!(rep.exact && rep.passed);
        assert!(rep.slope.is_none());
    }

    #[test]
    fn jump_only_scenario_books_jumps_exactly() {
        let mut cfg = zero_cfg();
        cfg.jump_law.intensity = 4.0;
        cfg.state.jump = Schedule::constant(MarkMap::Affine {
            offset: vec![0.1],
            matrix: vec![vec![0.5]],
        });
        cfg.state.jump_bound = 1.0;
        cfg.field.jump = Schedule::constant(MarkMap::Affine {
            offset: vec![0.2],
            matrix: vec![vec![-0.3]],
        });
        cfg.field.jump_bound = 1.0;
        let rep = run_residual_study(&cfg, 1).unwrap();
        assert!(rep.rows.iter().all(|r| r.jump_residual_max <= JUMP_TOL));
        assert!(rep.rows.iter().all(|r| r.max_abs_residual <= 1e-12));
        assert!(rep.passed);
    }

    #[test]
    fn rows_are_ordered_by_decreasing_dt() {
        let rep = run_residual_study(&zero_cfg(), 1).unwrap();
        assert!(rep.rows.windows(2).all(|w| w[1].dt < w[0].dt));
        assert_eq!(rep.rows[0].steps, 8);
        assert_eq!(rep.rows[2].steps, 32);
    }

    #[test]
    fn csv_carries_version_and_fingerprint() {
        let cfg = zero_cfg();
        let rep = run_residual_study(&cfg, 1).unwrap();
        let csv = rep.to_csv();
        let first = csv.lines().next().unwrap();
        assert!(first.contains(VERSION) && first.contains(&cfg.fingerprint()));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + cfg.refinement_levels);
        let json: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 3);
        assert_eq!(json["fingerprint"], cfg.fingerprint());
    }

    #[test]
    fn mollifier_suite_reference_row() {
        let rep = run_mollifier_suite(&[0.1]).unwrap();
        let row = rep.rows_for("holder-abs").next().unwrap();
        assert!((row.measured - 0.079788).abs() < 1e-6);
        assert!((row.bound - 0.159577).abs() < 1e-6);
        assert!(row.pass);
        assert!(rep.passed, "{}", rep.to_csv());
    }

    #[test]
    fn mollifier_suite_rejects_bad_grid() {
        assert!(run_mollifier_suite(&[]).is_err());
        assert!(run_mollifier_suite(&[0.1, -0.2]).is_err());
    }

    #[test]
    fn worker_count_does_not_change_reports() {
        let mut cfg = zero_cfg();
        cfg.state.drift = Schedule::constant(vec![0.4]);
        cfg.state.diffusion = Schedule::constant(vec![vec![0.7]]);
        cfg.field.diffusion = Schedule::constant(vec![vec![0.3]]);
        let a = run_residual_study(&cfg, 1).unwrap().to_csv();
        let b = run_residual_study(&cfg, 3).unwrap().to_csv();
        assert_eq!(a, b);
    }
}
