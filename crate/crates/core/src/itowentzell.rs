//! Term-by-term right-hand side of the Itô–Wentzell formula with jumps,
//! evaluated along one realized path, and the residual against the exact
//! left-hand side `F(t, x(t)) − F(0, x(0))`.
//!
//! All dt- and dw-integrands use left-point (Itô) evaluation at the
//! checkpoint opening each segment. Jump terms are booked at the event with
//! the pre-jump state `x⁻` and pre-jump coefficients `c(τ⁻)`:
//!
//! ```text
//! [F(τ⁻, x⁻ + g(τ; γ)) − F(τ⁻, x⁻)] + G(τ, x⁻ + g(τ; γ); γ)
//! ```
//!
//! Because the field is separable, this equals the left-hand jump
//! `F(τ, x⁺) − F(τ⁻, x⁻)` identically, so every residual comes from the
//! continuous part.

use crate::error::{Error, SimulationError};
use crate::field::{combine, combine_grad, combine_hess, d_from_values, d_grad_from_jets, FieldPath, FieldSpec};
use crate::noise::{noise_id, JumpStream, WienerPath};
use crate::scenario::StateCoefficients;
use crate::state::StateTrajectory;
use crate::timeline::{segment, step_time, Checkpoint, Segment, Trajectory};

/// Itemized contributions; one field per term group of the formula.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LedgerItems {
    /// ∂F/∂t dt (generalized Itô formula only).
    pub time_derivative: f64,
    /// Q dt
    pub field_drift: f64,
    /// Σ_k D_k dw_k
    pub field_noise: f64,
    /// Σ_i a_i ∂F/∂x_i dt
    pub state_drift: f64,
    /// ½ Σ_{i,j,k} b_{ik} b_{jk} ∂²F/∂x_i∂x_j dt
    pub ito_correction: f64,
    /// Σ_{i,k} b_{ik} ∂D_k/∂x_i dt
    pub cross_variation: f64,
    /// Σ_{i,k} b_{ik} ∂F/∂x_i dw_k
    pub gradient_noise: f64,
    /// F(τ⁻, x⁻ + g) − F(τ⁻, x⁻)
    pub jump_state: f64,
    /// G(τ, x⁻ + g; γ)
    pub jump_field: f64,
}

impl LedgerItems {
    pub const NAMES: [&'static str; 9] = [
        "time_derivative",
        "field_drift",
        "field_noise",
        "state_drift",
        "ito_correction",
        "cross_variation",
        "gradient_noise",
        "jump_state",
        "jump_field",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.time_derivative,
            self.field_drift,
            self.field_noise,
            self.state_drift,
            self.ito_correction,
            self.cross_variation,
            self.gradient_noise,
            self.jump_state,
            self.jump_field,
        ]
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }

    pub fn add(&mut self, o: &LedgerItems) {
        self.time_derivative += o.time_derivative;
        self.field_drift += o.field_drift;
        self.field_noise += o.field_noise;
        self.state_drift += o.state_drift;
        self.ito_correction += o.ito_correction;
        self.cross_variation += o.cross_variation;
        self.gradient_noise += o.gradient_noise;
        self.jump_state += o.jump_state;
        self.jump_field += o.jump_field;
    }

    pub fn max_abs_diff(&self, o: &LedgerItems) -> f64 {
        self.values()
            .iter()
            .zip(o.values())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryKind {
    Continuous,
    Jump { event: usize },
}

/// Contribution of the segment ending at checkpoint `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub time: f64,
    pub to: usize,
    pub kind: EntryKind,
    pub items: LedgerItems,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhsLedger {
    pub entries: Vec<LedgerEntry>,
    /// Running total at every checkpoint; `running[0] == 0`.
    pub running: Vec<f64>,
    /// Per-item sums over all entries.
    pub totals: LedgerItems,
}

impl RhsLedger {
    fn from_entries(entries: Vec<LedgerEntry>) -> Self {
        let mut running = Vec::with_capacity(entries.len() + 1);
        running.push(0.0);
        let mut totals = LedgerItems::default();
        let mut acc = 0.0;
        for e in &entries {
            acc += e.items.total();
            running.push(acc);
            totals.add(&e.items);
        }
        RhsLedger {
            entries,
            running,
            totals,
        }
    }

    pub fn total(&self) -> f64 {
        *self.running.last().unwrap_or(&0.0)
    }
}

/// Continuous-segment items at a left point, shared by the generalized
/// accumulator and the classical (jump-free) ledger.
#[allow(clippy::too_many_arguments)]
fn continuous_items(
    coeffs: &StateCoefficients,
    spec: &FieldSpec,
    t_sched: f64,
    x: &[f64],
    c: &[f64],
    dt: f64,
    dw: Option<&[f64]>,
) -> LedgerItems {
    let n = x.len();
    let a = coeffs.drift.value_at(t_sched);
    let b = coeffs.diffusion.value_at(t_sched);
    let q = spec.drift.value_at(t_sched);
    let d = spec.diffusion.value_at(t_sched);
    let m = b.first().map_or(0, Vec::len);

    let jets = spec.jets(x);
    let phi: Vec<f64> = jets.iter().map(|j| j.value).collect();
    let grad = combine_grad(c, &jets, n);
    let hess = combine_hess(c, &jets, n);
    let d_val = d_from_values(d, &phi);
    let d_grad = d_grad_from_jets(d, &jets, n);

    let mut items = LedgerItems {
        field_drift: combine(q, &phi) * dt,
        state_drift: a.iter().zip(&grad).map(|(ai, gi)| ai * gi).sum::<f64>() * dt,
        ..Default::default()
    };
    let mut ito = 0.0;
    let mut cross = 0.0;
    for k in 0..m {
        for i in 0..n {
            cross += b[i][k] * d_grad[k * n + i];
            for j in 0..n {
                ito += b[i][k] * b[j][k] * hess[i * n + j];
            }
        }
    }
    items.ito_correction = 0.5 * ito * dt;
    items.cross_variation = cross * dt;
    if let Some(dw) = dw {
        items.field_noise = d_val.iter().zip(dw).map(|(dk, w)| dk * w).sum();
        items.gradient_noise = (0..m)
            .map(|k| (0..n).map(|i| b[i][k] * grad[i]).sum::<f64>() * dw[k])
            .sum();
    }
    items
}

fn check_same_noise(
    traj: &StateTrajectory,
    field: &FieldPath,
    wiener: &WienerPath,
    jumps: &JumpStream,
) -> Result<(), SimulationError> {
    let id = noise_id(wiener, jumps);
    if traj.noise != id || field.noise != id {
        return Err(SimulationError::NoiseMismatch(
            "trajectory, field path and noise objects carry different noise ids".into(),
        ));
    }
    let same_times = traj.checkpoints.len() == field.checkpoints.len()
        && traj
            .checkpoints
            .iter()
            .zip(&field.checkpoints)
            .all(|(a, b)| a.time == b.time && a.kind == b.kind);
    if !same_times {
        return Err(SimulationError::NoiseMismatch("checkpoint structures differ".into()));
    }
    Ok(())
}

/// Walks consecutive checkpoints, calling `f` with (grid, prev, segment).
fn walk<F>(traj: &Trajectory, mut f: F) -> Vec<LedgerEntry>
where
    F: FnMut(usize, &Checkpoint, Segment) -> LedgerItems,
{
    traj.checkpoints
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let seg = segment(&traj.grid, &w[0], &w[1]);
            let kind = match seg {
                Segment::Continuous { .. } => EntryKind::Continuous,
                Segment::Jump { event } => EntryKind::Jump { event },
            };
            LedgerEntry {
                time: w[1].time,
                to: j + 1,
                kind,
                items: f(j, &w[0], seg),
            }
        })
        .collect()
}

/// Left-point accumulation of every term of the formula along one path.
pub fn accumulate_rhs(
    coeffs: &StateCoefficients,
    spec: &FieldSpec,
    traj: &StateTrajectory,
    field: &FieldPath,
    wiener: &WienerPath,
    jumps: &JumpStream,
) -> Result<RhsLedger, SimulationError> {
    check_same_noise(traj, field, wiener, jumps)?;
    let grid = traj.grid;
    let entries = walk(traj, |j, prev, seg| {
        let c = &field.checkpoints[j].value;
        let x = &prev.value;
        let st = step_time(&grid, prev.step);
        match seg {
            Segment::Continuous { dt, dw_step } => {
                if dt == 0.0 && dw_step.is_none() {
                    return LedgerItems::default();
                }
                continuous_items(coeffs, spec, st, x, c, dt, dw_step.map(|s| wiener.increment(s)))
            }
            Segment::Jump { event } => {
                let mark = &jumps.events[event].mark;
                let g = coeffs.jump.value_at(st).apply(mark);
                let shifted: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
                let phi_pre = spec.values(x);
                let phi_post = spec.values(&shifted);
                let big_g = spec.jump.value_at(st).apply(mark);
                LedgerItems {
                    jump_state: combine(c, &phi_post) - combine(c, &phi_pre),
                    jump_field: combine(&big_g, &phi_post),
                    ..Default::default()
                }
            }
        }
    });
    Ok(RhsLedger::from_entries(entries))
}

/// `F(t_j, x(t_j)) − F(0, x(0))` at checkpoint `j`.
pub fn lhs_increment(field: &FieldPath, spec: &FieldSpec, traj: &StateTrajectory, j: usize) -> f64 {
    let f = |k: usize| combine(&field.checkpoints[k].value, &spec.values(&traj.checkpoints[k].value));
    f(j) - f(0)
}

/// Per-checkpoint residual and per-event jump bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    /// `lhs_increment − running RHS total` at every checkpoint.
    pub per_checkpoint: Vec<f64>,
    /// Per event: left-hand jump minus right-hand jump contribution.
    pub jump_deviation: Vec<f64>,
    /// Per event: `max(1, |F(τ⁻, x⁻)|, |F(τ, x⁺)|)`, the scale for relative checks.
    pub jump_scale: Vec<f64>,
    pub ledger: RhsLedger,
}

impl ResidualTrace {
    pub fn terminal(&self) -> f64 {
        *self.per_checkpoint.last().unwrap_or(&0.0)
    }

    pub fn max_relative_jump_deviation(&self) -> f64 {
        self.jump_deviation
            .iter()
            .zip(&self.jump_scale)
            .fold(0.0, |m, (d, s)| m.max(d.abs() / s))
    }
}

pub fn residual(
    coeffs: &StateCoefficients,
    spec: &FieldSpec,
    traj: &StateTrajectory,
    field: &FieldPath,
    wiener: &WienerPath,
    jumps: &JumpStream,
) -> Result<ResidualTrace, SimulationError> {
    let ledger = accumulate_rhs(coeffs, spec, traj, field, wiener, jumps)?;
    let f_at = |k: usize| combine(&field.checkpoints[k].value, &spec.values(&traj.checkpoints[k].value));
    let f0 = f_at(0);
    let per_checkpoint = (0..traj.checkpoints.len())
        .map(|j| (f_at(j) - f0) - ledger.running[j])
        .collect();
    let mut jump_deviation = Vec::new();
    let mut jump_scale = Vec::new();
    for e in &ledger.entries {
        if let EntryKind::Jump { .. } = e.kind {
            let (pre, post) = (f_at(e.to - 1), f_at(e.to));
            let rhs = e.items.jump_state + e.items.jump_field;
            jump_deviation.push((post - pre) - rhs);
            jump_scale.push(1.0f64.max(pre.abs()).max(post.abs()));
        }
    }
    Ok(ResidualTrace {
        per_checkpoint,
        jump_deviation,
        jump_scale,
        ledger,
    })
}

/// Deterministic function `F(t, x)` with closed-form derivatives.
pub trait SmoothFunction {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64;
    fn grad(&self, t: f64, x: &[f64]) -> Vec<f64>;
    /// Row-major n×n.
    fn hess(&self, t: f64, x: &[f64]) -> Vec<f64>;
}

/// The separable field with its coefficients held fixed.
pub struct FrozenField<'a> {
    pub spec: &'a FieldSpec,
    pub coeffs: &'a [f64],
}

impl SmoothFunction for FrozenField<'_> {
    fn value(&self, _t: f64, x: &[f64]) -> f64 {
        combine(self.coeffs, &self.spec.values(x))
    }
    fn time_derivative(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn grad(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        combine_grad(self.coeffs, &self.spec.jets(x), x.len())
    }
    fn hess(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        combine_hess(self.coeffs, &self.spec.jets(x), x.len())
    }
}

/// Left-point accumulation of the generalized Itô formula for a
/// deterministic `F`, including `∂F/∂t dt` and `∫ [F(t, x + g) − F(t, x)] ν`.
pub fn classical_ito_increment(
    f: &impl SmoothFunction,
    coeffs: &StateCoefficients,
    traj: &StateTrajectory,
    wiener: &WienerPath,
    jumps: &JumpStream,
) -> Result<RhsLedger, SimulationError> {
    if traj.noise != noise_id(wiener, jumps) {
        return Err(SimulationError::NoiseMismatch("trajectory built from different noise".into()));
    }
    let grid = traj.grid;
    let entries = walk(traj, |_, prev, seg| {
        let (t, x) = (prev.time, &prev.value);
        let n = x.len();
        let st = step_time(&grid, prev.step);
        match seg {
            Segment::Continuous { dt, dw_step } => {
                if dt == 0.0 && dw_step.is_none() {
                    return LedgerItems::default();
                }
                let a = coeffs.drift.value_at(st);
                let b = coeffs.diffusion.value_at(st);
                let m = b.first().map_or(0, Vec::len);
                let grad = f.grad(t, x);
                let hess = f.hess(t, x);
                let mut ito = 0.0;
                for k in 0..m {
                    for i in 0..n {
                        for j in 0..n {
                            ito += b[i][k] * b[j][k] * hess[i * n + j];
                        }
                    }
                }
                let mut items = LedgerItems {
                    time_derivative: f.time_derivative(t, x) * dt,
                    state_drift: a.iter().zip(&grad).map(|(ai, gi)| ai * gi).sum::<f64>() * dt,
                    ito_correction: 0.5 * ito * dt,
                    ..Default::default()
                };
                if let Some(s) = dw_step {
                    let dw = wiener.increment(s);
                    items.gradient_noise = (0..m)
                        .map(|k| (0..n).map(|i| b[i][k] * grad[i]).sum::<f64>() * dw[k])
                        .sum();
                }
                items
            }
            Segment::Jump { event } => {
                let g = coeffs.jump.value_at(st).apply(&jumps.events[event].mark);
                let shifted: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
                LedgerItems {
                    jump_state: f.value(t, &shifted) - f.value(t, x),
                    ..Default::default()
                }
            }
        }
    });
    Ok(RhsLedger::from_entries(entries))
}

/// Ledger of the jump-free Itô–Wentzell formula, stepping over grid nodes
/// only. Requires a trajectory without jump checkpoints.
pub fn classical_iw_ledger(
    coeffs: &StateCoefficients,
    spec: &FieldSpec,
    traj: &StateTrajectory,
    field: &FieldPath,
    wiener: &WienerPath,
) -> Result<RhsLedger, Error> {
    if traj.checkpoints.len() != traj.grid.steps() + 1 {
        return Err(Error::Study("classical Itô–Wentzell ledger needs a jump-free path".into()));
    }
    let grid = traj.grid;
    let entries = (0..grid.steps())
        .map(|i| {
            let prev = &traj.checkpoints[i];
            let items = continuous_items(
                coeffs,
                spec,
                step_time(&grid, i),
                &prev.value,
                &field.checkpoints[i].value,
                grid.dt(),
                Some(wiener.increment(i)),
            );
            LedgerEntry {
                time: grid.node(i + 1),
                to: i + 1,
                kind: EntryKind::Continuous,
                items,
            }
        })
        .collect();
    Ok(RhsLedger::from_entries(entries))
}

/// Deterministic chain rule `dF/dt = Q + Σ a_j ∂F/∂x_j` summed at left
/// points. Requires B = D = 0 and no jumps.
pub fn chain_rule_ledger(
    coeffs: &StateCoefficients,
    spec: &FieldSpec,
    traj: &StateTrajectory,
    field: &FieldPath,
) -> Result<RhsLedger, Error> {
    let deterministic = coeffs.diffusion.pieces().iter().all(|p| p.value.iter().flatten().all(|v| *v == 0.0))
        && spec.diffusion.pieces().iter().all(|p| p.value.iter().flatten().all(|v| *v == 0.0));
    if !deterministic || traj.checkpoints.len() != traj.grid.steps() + 1 {
        return Err(Error::Study("chain rule needs B = D = 0 and a jump-free path".into()));
    }
    let grid = traj.grid;
    let n = traj.initial().len();
    let entries = (0..grid.steps())
        .map(|i| {
            let st = step_time(&grid, i);
            let x = &traj.checkpoints[i].value;
            let c = &field.checkpoints[i].value;
            let jets = spec.jets(x);
            let phi: Vec<f64> = jets.iter().map(|j| j.value).collect();
            let grad = combine_grad(c, &jets, n);
            let a = coeffs.drift.value_at(st);
            LedgerEntry {
                time: grid.node(i + 1),
                to: i + 1,
                kind: EntryKind::Continuous,
                items: LedgerItems {
                    field_drift: combine(spec.drift.value_at(st), &phi) * grid.dt(),
                    state_drift: a.iter().zip(&grad).map(|(ai, gi)| ai * gi).sum::<f64>() * grid.dt(),
                    ..Default::default()
                },
            }
        })
        .collect();
    Ok(RhsLedger::from_entries(entries))
}

/// Largest itemwise difference between the generalized ledger and the
/// classical Itô–Wentzell ledger on a jump-free path with G ≡ 0.
pub fn reduction_check(
    coeffs: &StateCoefficients,
    spec: &FieldSpec,
    traj: &StateTrajectory,
    field: &FieldPath,
    wiener: &WienerPath,
    jumps: &JumpStream,
) -> Result<f64, Error> {
    if jumps.count() > 0 || spec.jump.pieces().iter().any(|p| !p.value.is_zero()) {
        return Err(Error::Study("reduction check needs Λ = 0 and G ≡ 0".into()));
    }
    let general = accumulate_rhs(coeffs, spec, traj, field, wiener, jumps)?;
    let classical = classical_iw_ledger(coeffs, spec, traj, field, wiener)?;
    let per_entry = general
        .entries
        .iter()
        .zip(&classical.entries)
        .fold(0.0f64, |m, (a, b)| m.max(a.items.max_abs_diff(&b.items)));
    Ok(per_entry.max(general.totals.max_abs_diff(&classical.totals)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{evolve_field, BasisFunction};
    use crate::noise::{sample_wiener, JumpEvent, TimeGrid};
    use crate::scenario::{MarkMap, Schedule};
    use crate::state::evolve_state;

    struct Path {
        w: WienerPath,
        j: JumpStream,
        x: StateTrajectory,
        c: FieldPath,
    }

    fn run(coeffs: &StateCoefficients, spec: &FieldSpec, x0: &[f64], w: WienerPath, j: JumpStream) -> Path {
        let x = evolve_state(coeffs, x0, &w, &j).unwrap();
        let c = evolve_field(spec, &w, &j).unwrap();
        Path { w, j, x, c }
    }

    fn poly(powers: Vec<u32>) -> BasisFunction {
        BasisFunction::Polynomial { powers }
    }

    #[test]
    fn zero_scenario_has_zero_ledger() {
        let grid = TimeGrid::uniform(1.0, 16);
        let coeffs = StateCoefficients::zero(2, 2, 1);
        let spec = FieldSpec::frozen(
            vec![poly(vec![1, 1]), BasisFunction::GaussianBump { center: vec![0.0, 0.0], width: 1.0 }],
            vec![1.0, 2.0],
            2,
            1,
        );
        let p = run(&coeffs, &spec, &[0.5, 0.5], sample_wiener(grid, 2, 1), JumpStream::empty(0.0, 1.0));
        let r = residual(&coeffs, &spec, &p.x, &p.c, &p.w, &p.j).unwrap();
        assert_eq!(r.ledger.total(), 0.0);
        assert!(r.per_checkpoint.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_field_drift_integrates_q_exactly() {
        let grid = TimeGrid::uniform(1.0, 8);
        let coeffs = StateCoefficients::zero(1, 1, 1);
        let mut spec = FieldSpec::frozen(vec![BasisFunction::constant(1)], vec![0.0], 1, 1);
        spec.drift = Schedule::constant(vec![3.0]);
        let p = run(&coeffs, &spec, &[0.2], sample_wiener(grid, 1, 1), JumpStream::empty(0.0, 1.0));
        assert!((lhs_increment(&p.c, &spec, &p.x, p.x.checkpoints.len() - 1) - 3.0).abs() < 1e-14);
        let ledger = accumulate_rhs(&coeffs, &spec, &p.x, &p.c, &p.w, &p.j).unwrap();
        assert!((ledger.total() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn frozen_linear_field_with_pure_drift() {
        let grid = TimeGrid::uniform(2.0, 8);
        let mut coeffs = StateCoefficients::zero(1, 1, 1);
        coeffs.drift = Schedule::constant(vec![1.0]);
        let mut spec = FieldSpec::frozen(vec![poly(vec![1])], vec![1.0], 1, 1);
        spec.excursion_box = Some(10.0);
        let p = run(&coeffs, &spec, &[0.0], sample_wiener(grid, 1, 1), JumpStream::empty(0.0, 2.0));
        assert!((lhs_increment(&p.c, &spec, &p.x, p.x.checkpoints.len() - 1) - 2.0).abs() < 1e-14);
        assert_eq!(lhs_increment(&p.c, &spec, &p.x, 0), 0.0);
    }

    #[test]
    fn single_jump_only_fires_jump_terms() {
        let grid = TimeGrid::uniform(1.0, 8);
        let mut coeffs = StateCoefficients::zero(1, 1, 1);
        coeffs.jump = Schedule::constant(MarkMap::Affine {
            offset: vec![0.5],
            matrix: vec![vec![1.0]],
        });
        coeffs.jump_bound = 2.0;
        let mut spec = FieldSpec::frozen(
            vec![BasisFunction::GaussianBump { center: vec![0.3], width: 0.8 }, BasisFunction::Sinusoid { frequency: vec![2.0], phase: 0.1 }],
            vec![1.5, -0.7],
            1,
            1,
        );
        spec.jump = Schedule::constant(MarkMap::Affine {
            offset: vec![0.2, -0.1],
            matrix: vec![vec![0.3], vec![0.4]],
        });
        spec.jump_bound = 1.0;
        let jumps = JumpStream {
            start: 0.0,
            end: 1.0,
            events: vec![JumpEvent { time: 0.61, mark: vec![0.4] }],
        };
        let p = run(&coeffs, &spec, &[0.1], sample_wiener(grid, 1, 3), jumps);
        let r = residual(&coeffs, &spec, &p.x, &p.c, &p.w, &p.j).unwrap();

        let x_minus = 0.1;
        let x_plus = x_minus + 0.5 + 0.4;
        let c = &spec.c0;
        let f = |c: &[f64], x: f64| combine(c, &spec.values(&[x]));
        let g_coeffs = [0.2 + 0.3 * 0.4, -0.1 + 0.4 * 0.4];
        let expected = (f(c, x_plus) - f(c, x_minus)) + f(&g_coeffs, x_plus);
        assert!((r.ledger.total() - expected).abs() < 1e-14);
        assert!(r.terminal().abs() < 1e-12);
        assert!(r.max_relative_jump_deviation() < 1e-12);
    }

    #[test]
    fn running_total_matches_itemized_sum() {
        let grid = TimeGrid::uniform(1.0, 64);
        let mut coeffs = StateCoefficients::zero(2, 2, 1);
        coeffs.drift = Schedule::constant(vec![0.3, -0.2]);
        coeffs.diffusion = Schedule::constant(vec![vec![0.5, 0.1], vec![0.0, 0.4]]);
        let mut spec = FieldSpec::frozen(
            vec![BasisFunction::GaussianBump { center: vec![0.0, 0.0], width: 1.0 }, BasisFunction::Sinusoid { frequency: vec![1.0, -1.0], phase: 0.0 }],
            vec![1.0, 0.5],
            2,
            1,
        );
        spec.drift = Schedule::constant(vec![0.2, 0.1]);
        spec.diffusion = Schedule::constant(vec![vec![0.3, 0.0], vec![0.1, 0.2]]);
        let p = run(&coeffs, &spec, &[0.1, 0.2], sample_wiener(grid, 2, 9), JumpStream::empty(0.0, 1.0));
        let ledger = accumulate_rhs(&coeffs, &spec, &p.x, &p.c, &p.w, &p.j).unwrap();
        let itemized = ledger.totals.total();
        assert!((ledger.total() - itemized).abs() <= 1e-13 * itemized.abs().max(1.0));
    }

    #[test]
    fn mismatched_noise_is_rejected() {
        let grid = TimeGrid::uniform(1.0, 16);
        let coeffs = StateCoefficients::zero(1, 1, 1);
        let spec = FieldSpec::frozen(vec![BasisFunction::constant(1)], vec![1.0], 1, 1);
        let p = run(&coeffs, &spec, &[0.0], sample_wiener(grid, 1, 1), JumpStream::empty(0.0, 1.0));
        let other = sample_wiener(grid, 1, 2);
        assert!(matches!(
            accumulate_rhs(&coeffs, &spec, &p.x, &p.c, &other, &p.j),
            Err(SimulationError::NoiseMismatch(_))
        ));
    }

    struct TimeOnly;
    impl SmoothFunction for TimeOnly {
        fn value(&self, t: f64, _x: &[f64]) -> f64 {
            t
        }
        fn time_derivative(&self, _t: f64, _x: &[f64]) -> f64 {
            1.0
        }
        fn grad(&self, _t: f64, x: &[f64]) -> Vec<f64> {
            vec![0.0; x.len()]
        }
        fn hess(&self, _t: f64, x: &[f64]) -> Vec<f64> {
            vec![0.0; x.len() * x.len()]
        }
    }

    #[test]
    fn generalized_ito_of_time_sums_to_horizon() {
        let grid = TimeGrid::uniform(1.5, 30);
        let mut coeffs = StateCoefficients::zero(1, 1, 1);
        coeffs.diffusion = Schedule::constant(vec![vec![1.0]]);
        coeffs.jump = Schedule::constant(MarkMap::constant(vec![1.0], 1));
        coeffs.jump_bound = 1.0;
        let jumps = JumpStream {
            start: 0.0,
            end: 1.5,
            events: vec![JumpEvent { time: 0.33, mark: vec![0.0] }, JumpEvent { time: 1.0, mark: vec![0.0] }],
        };
        let w = sample_wiener(grid, 1, 4);
        let x = evolve_state(&coeffs, &[0.0], &w, &jumps).unwrap();
        let ledger = classical_ito_increment(&TimeOnly, &coeffs, &x, &w, &jumps).unwrap();
        assert!((ledger.total() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn generalized_ito_of_identity_under_drift() {
        let grid = TimeGrid::uniform(1.0, 10);
        let mut coeffs = StateCoefficients::zero(1, 1, 1);
        coeffs.drift = Schedule::constant(vec![0.7]);
        let spec = FieldSpec::frozen(vec![poly(vec![1])], vec![1.0], 1, 1);
        let w = sample_wiener(grid, 1, 4);
        let j = JumpStream::empty(0.0, 1.0);
        let x = evolve_state(&coeffs, &[0.0], &w, &j).unwrap();
        let f = FrozenField { spec: &spec, coeffs: &spec.c0 };
        let ledger = classical_ito_increment(&f, &coeffs, &x, &w, &j).unwrap();
        assert!((ledger.total() - 0.7).abs() < 1e-14);
        assert!((ledger.totals.state_drift - 0.7).abs() < 1e-14);
    }

    #[test]
    fn reduction_rejects_jumps() {
        let grid = TimeGrid::uniform(1.0, 4);
        let coeffs = StateCoefficients::zero(1, 1, 1);
        let spec = FieldSpec::frozen(vec![BasisFunction::constant(1)], vec![1.0], 1, 1);
        let jumps = JumpStream {
            start: 0.0,
            end: 1.0,
            events: vec![JumpEvent { time: 0.5, mark: vec![0.0] }],
        };
        let p = run(&coeffs, &spec, &[0.0], sample_wiener(grid, 1, 1), jumps);
        assert!(reduction_check(&coeffs, &spec, &p.x, &p.c, &p.w, &p.j).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        fn rv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
            (0..n).map(|_| rng.random_range(0.1..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
        }

        /// Every family active; `off` names one family to zero:
        /// 0 A, 1 B, 2 Q, 3 D, 4 g, 5 G.
        fn scenario(seed: u64, off: Option<usize>) -> (StateCoefficients, FieldSpec, Path) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, m) = (2, 2);
            let mut coeffs = StateCoefficients::zero(n, m, 1);
            let mut spec = FieldSpec::frozen(
                vec![
                    BasisFunction::GaussianBump { center: rv(&mut rng, 2), width: 0.9 },
                    BasisFunction::Sinusoid { frequency: rv(&mut rng, 2), phase: 0.2 },
                ],
                rv(&mut rng, 2),
                m,
                1,
            );
            let affine = |rng: &mut ChaCha8Rng, k: usize| MarkMap::Affine {
                offset: rv(rng, k),
                matrix: (0..k).map(|_| rv(rng, 1)).collect(),
            };
            let mat = |rng: &mut ChaCha8Rng, rows: usize| (0..rows).map(|_| rv(rng, m)).collect::<Vec<_>>();
            if off != Some(0) {
                coeffs.drift = Schedule::constant(rv(&mut rng, n));
            }
            if off != Some(1) {
                coeffs.diffusion = Schedule::constant(mat(&mut rng, n));
            }
            if off != Some(2) {
                spec.drift = Schedule::constant(rv(&mut rng, 2));
            }
            if off != Some(3) {
                spec.diffusion = Schedule::constant(mat(&mut rng, 2));
            }
            if off != Some(4) {
                coeffs.jump = Schedule::constant(affine(&mut rng, n));
            }
            if off != Some(5) {
                spec.jump = Schedule::constant(affine(&mut rng, 2));
            }
            coeffs.jump_bound = 10.0;
            spec.jump_bound = 10.0;
            let grid = TimeGrid::uniform(1.0, 16);
            let jumps = JumpStream {
                start: 0.0,
                end: 1.0,
                events: vec![
                    JumpEvent { time: 0.3, mark: vec![0.7] },
                    JumpEvent { time: 0.8125, mark: vec![-0.4] },
                ],
            };
            let p = run(&coeffs, &spec, &[0.1, -0.2], sample_wiener(grid, m, seed ^ 1), jumps);
            (coeffs, spec, p)
        }

        fn zeroed_by(family: usize) -> &'static [&'static str] {
            match family {
                0 => &["state_drift"],
                1 => &["ito_correction", "cross_variation", "gradient_noise"],
                2 => &["field_drift"],
                3 => &["field_noise", "cross_variation"],
                4 => &["jump_state"],
                _ => &["jump_field"],
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn zeroing_a_family_zeroes_exactly_its_items(seed in any::<u64>(), family in 0usize..6) {
                let (coeffs, spec, p) = scenario(seed, Some(family));
                let ledger = accumulate_rhs(&coeffs, &spec, &p.x, &p.c, &p.w, &p.j).unwrap();
                let zeroed = zeroed_by(family);
                for (name, v) in LedgerItems::NAMES.iter().zip(ledger.totals.values()) {
                    if *name == "time_derivative" || zeroed.contains(name) {
                        prop_assert_eq!(v, 0.0, "{} should vanish", name);
                    } else {
                        prop_assert!(v != 0.0, "{} vanished unexpectedly", name);
                    }
                }
            }

            #[test]
            fn running_total_is_sum_of_items(seed in any::<u64>()) {
                let (coeffs, spec, p) = scenario(seed, None);
                let ledger = accumulate_rhs(&coeffs, &spec, &p.x, &p.c, &p.w, &p.j).unwrap();
                let itemized = ledger.totals.total();
                let scale = ledger.entries.iter().flat_map(|e| e.items.values()).map(f64::abs).sum::<f64>();
                prop_assert!((ledger.total() - itemized).abs() <= 1e-13 * scale.max(1e-300));
                prop_assert_eq!(ledger.running.len(), p.x.checkpoints.len());
            }

            #[test]
            fn jumps_are_booked_exactly(seed in any::<u64>()) {
                let (coeffs, spec, p) = scenario(seed, None);
                let r = residual(&coeffs, &spec, &p.x, &p.c, &p.w, &p.j).unwrap();
                prop_assert_eq!(r.jump_deviation.len(), 2);
                prop_assert!(r.max_relative_jump_deviation() <= 1e-12);
            }

            #[test]
            fn jump_free_paths_reduce_to_classical_ledger(seed in any::<u64>()) {
                let (coeffs, mut spec, _) = scenario(seed, Some(5));
                spec.jump = Schedule::constant(MarkMap::zero(2, 1));
                let grid = TimeGrid::uniform(1.0, 16);
                let p = run(&coeffs, &spec, &[0.1, -0.2], sample_wiener(grid, 2, seed), JumpStream::empty(0.0, 1.0));
                let gap = reduction_check(&coeffs, &spec, &p.x, &p.c, &p.w, &p.j).unwrap();
                prop_assert!(gap <= 1e-14);
            }
        }
    }
}
