//! Separable random field `F(t, x) = Σ_p c_p(t) φ_p(x)`.
//!
//! The coefficient vector obeys
//! `dc_p = q_p(t) dt + Σ_k d_{p,k}(t) dw_k + ∫ G_p(t; γ) ν(dt, dγ)`
//! driven by the same noise as the state, so that
//! `Q = Σ q_p φ_p`, `D_k = Σ d_{p,k} φ_p` and `G = Σ G_p φ_p`, and every
//! spatial derivative needed by the ledger is available in closed form.

use serde::{Deserialize, Serialize};

use crate::error::SimulationError;
use crate::noise::{JumpStream, WienerPath};
use crate::scenario::{MarkMap, ScenarioConfig, ScenarioError, Schedule};
use crate::timeline::{Checkpoint, Driver, Trajectory};

/// Coefficient vector of the field at one checkpoint.
pub type FieldState = Checkpoint;
/// Field coefficients at every checkpoint of the shared timeline.
pub type FieldPath = Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisFunction {
    /// `Π_i x_i^{powers_i}`
    Polynomial { powers: Vec<u32> },
    /// `exp(-|x - center|² / (2 width²))`
    GaussianBump { center: Vec<f64>, width: f64 },
    /// `sin(frequency · x + phase)`
    Sinusoid { frequency: Vec<f64>, phase: f64 },
}

/// Value, gradient and Hessian (row-major) of a function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl Jet {
    fn zeros(n: usize) -> Self {
        Jet {
            value: 0.0,
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
        }
    }
}

impl BasisFunction {
    /// Constant basis function `1` in dimension `n`.
    pub fn constant(n: usize) -> Self {
        BasisFunction::Polynomial { powers: vec![0; n] }
    }

    pub fn dim(&self) -> usize {
        match self {
            BasisFunction::Polynomial { powers } => powers.len(),
            BasisFunction::GaussianBump { center, .. } => center.len(),
            BasisFunction::Sinusoid { frequency, .. } => frequency.len(),
        }
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self, BasisFunction::Polynomial { powers } if powers.iter().any(|p| *p > 0))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            BasisFunction::Polynomial { powers } => x.iter().zip(powers).map(|(xi, p)| xi.powi(*p as i32)).product(),
            BasisFunction::GaussianBump { center, width } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                (-r2 / (2.0 * width * width)).exp()
            }
            BasisFunction::Sinusoid { frequency, phase } => {
                (x.iter().zip(frequency).map(|(a, k)| a * k).sum::<f64>() + phase).sin()
            }
        }
    }

    /// Closed-form value, gradient and Hessian. The Hessian is filled on
    /// the upper triangle and mirrored, so it is exactly symmetric.
    pub fn jet(&self, x: &[f64]) -> Jet {
        let n = x.len();
        let mut jet = Jet::zeros(n);
        match self {
            BasisFunction::Polynomial { powers } => {
                let mono = |skip: &[usize], lower: &[i32]| -> f64 {
                    let mut prod = 1.0;
                    for (k, (xk, pk)) in x.iter().zip(powers).enumerate() {
                        let mut e = *pk as i32;
                        for (s, l) in skip.iter().zip(lower) {
                            if *s == k {
                                e -= l;
                            }
                        }
                        if e < 0 {
                            return 0.0;
                        }
                        prod *= xk.powi(e);
                    }
                    prod
                };
                jet.value = mono(&[], &[]);
                for i in 0..n {
                    let pi = powers[i] as f64;
                    jet.grad[i] = pi * mono(&[i], &[1]);
                    for j in i..n {
                        let h = if i == j {
                            pi * (pi - 1.0) * mono(&[i], &[2])
                        } else {
                            pi * powers[j] as f64 * mono(&[i, j], &[1, 1])
                        };
                        jet.hess[i * n + j] = h;
                        jet.hess[j * n + i] = h;
                    }
                }
            }
            BasisFunction::GaussianBump { center, width } => {
                let w2 = width * width;
                let r: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let r2: f64 = r.iter().map(|v| v * v).sum();
                let phi = (-r2 / (2.0 * w2)).exp();
                jet.value = phi;
                for i in 0..n {
                    jet.grad[i] = -r[i] / w2 * phi;
                    for j in i..n {
                        let delta = if i == j { 1.0 / w2 } else { 0.0 };
                        let h = (r[i] * r[j] / (w2 * w2) - delta) * phi;
                        jet.hess[i * n + j] = h;
                        jet.hess[j * n + i] = h;
                    }
                }
            }
            BasisFunction::Sinusoid { frequency, phase } => {
                let s = x.iter().zip(frequency).map(|(a, k)| a * k).sum::<f64>() + phase;
                let (sin, cos) = s.sin_cos();
                jet.value = sin;
                for i in 0..n {
                    jet.grad[i] = frequency[i] * cos;
                    for j in i..n {
                        let h = -frequency[i] * frequency[j] * sin;
                        jet.hess[i * n + j] = h;
                        jet.hess[j * n + i] = h;
                    }
                }
            }
        }
        jet
    }

    /// Upper bound on `sup |∇φ|` over the box `|x_i| <= half_width`.
    pub fn lipschitz_bound(&self, half_width: f64) -> f64 {
        match self {
            BasisFunction::Polynomial { powers } => {
                let deg: u32 = powers.iter().sum();
                if deg == 0 {
                    return 0.0;
                }
                let r = half_width.max(1.0).powi(deg as i32 - 1);
                powers.iter().map(|p| (*p as f64 * r).powi(2)).sum::<f64>().sqrt()
            }
            BasisFunction::GaussianBump { width, .. } => (-0.5f64).exp() / width,
            BasisFunction::Sinusoid { frequency, .. } => frequency.iter().map(|k| k * k).sum::<f64>().sqrt(),
        }
    }
}

/// Basis, initial coefficients and coefficient drivers of the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub basis: Vec<BasisFunction>,
    /// c_p(0).
    pub c0: Vec<f64>,
    /// q_p(t), one entry per basis function.
    pub drift: Schedule<Vec<f64>>,
    /// d_{p,k}(t), P rows of m entries.
    pub diffusion: Schedule<Vec<Vec<f64>>>,
    /// G_p(t; γ), output dimension P.
    pub jump: Schedule<MarkMap>,
    /// Declared bound on max_p |G_p(t; γ)|.
    pub jump_bound: f64,
    /// Required when a non-constant polynomial basis is present: the state
    /// must stay inside `|x_i| <= excursion_box`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excursion_box: Option<f64>,
}

impl FieldSpec {
    /// Field with constant coefficients (q = d = G = 0).
    pub fn frozen(basis: Vec<BasisFunction>, c0: Vec<f64>, wiener_dim: usize, mark_dim: usize) -> Self {
        let p = basis.len();
        FieldSpec {
            basis,
            c0,
            drift: Schedule::constant(vec![0.0; p]),
            diffusion: Schedule::constant(vec![vec![0.0; wiener_dim]; p]),
            jump: Schedule::constant(MarkMap::zero(p, mark_dim)),
            jump_bound: 0.0,
            excursion_box: None,
        }
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn has_polynomial(&self) -> bool {
        self.basis.iter().any(BasisFunction::is_polynomial)
    }

    pub(crate) fn violations(&self, cfg: &ScenarioConfig) -> Vec<ScenarioError> {
        let mut out = Vec::new();
        let (n, m, nm) = (cfg.state_dim, cfg.wiener_dim, cfg.mark_dim);
        let p = self.basis.len();
        if p == 0 {
            out.push(ScenarioError::field("basis", "basis list is empty"));
        }
        for (i, b) in self.basis.iter().enumerate() {
            if b.dim() != n {
                out.push(ScenarioError::field("basis", format!("element {i} has dimension {} != {n}", b.dim())));
            }
            let ok = match b {
                BasisFunction::Polynomial { .. } => true,
                BasisFunction::GaussianBump { center, width } => {
                    width.is_finite() && *width > 0.0 && center.iter().all(|c| c.is_finite())
                }
                BasisFunction::Sinusoid { frequency, phase } => {
                    phase.is_finite() && frequency.iter().all(|k| k.is_finite())
                }
            };
            if !ok {
                out.push(ScenarioError::field("basis", format!("element {i} has invalid parameters")));
            }
        }
        if self.c0.len() != p || self.c0.iter().any(|c| !c.is_finite()) {
            out.push(ScenarioError::field("c0", format!("need {p} finite initial coefficients")));
        }
        for e in self.drift.structure_violations("field.drift", cfg.horizon, cfg.base_steps)
            .into_iter()
            .chain(self.diffusion.structure_violations("field.diffusion", cfg.horizon, cfg.base_steps))
            .chain(self.jump.structure_violations("field.jump", cfg.horizon, cfg.base_steps))
        {
            out.push(e);
        }
        if self.drift.pieces().iter().any(|q| q.value.len() != p || q.value.iter().any(|v| !v.is_finite())) {
            out.push(ScenarioError::field("drift", format!("every piece needs {p} finite entries")));
        }
        if self
            .diffusion
            .pieces()
            .iter()
            .any(|d| d.value.len() != p || d.value.iter().any(|r| r.len() != m || r.iter().any(|v| !v.is_finite())))
        {
            out.push(ScenarioError::field("diffusion", format!("every piece needs a finite {p}x{m} matrix")));
        }
        for piece in self.jump.pieces() {
            for d in piece.value.violations(p, nm) {
                out.push(ScenarioError::field("jump", d));
            }
        }
        if !(self.jump_bound.is_finite() && self.jump_bound >= 0.0) {
            out.push(ScenarioError::field("jump_bound", "must be finite and >= 0"));
        }
        if self.has_polynomial() && !matches!(self.excursion_box, Some(b) if b.is_finite() && b > 0.0) {
            out.push(ScenarioError::field(
                "excursion_box",
                "polynomial bases are unbounded and need a positive excursion_box",
            ));
        }
        out
    }

    /// Jets of every basis function at `x`.
    pub fn jets(&self, x: &[f64]) -> Vec<Jet> {
        self.basis.iter().map(|b| b.jet(x)).collect()
    }

    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|b| b.value(x)).collect()
    }

    /// `sup |∇F|` bound on the box for coefficients `c`.
    pub fn lipschitz_bound(&self, c: &[f64], half_width: f64) -> f64 {
        c.iter().zip(&self.basis).map(|(ci, b)| ci.abs() * b.lipschitz_bound(half_width)).sum()
    }

    fn driver(&self) -> Driver<'_> {
        Driver {
            name: "field",
            drift: &self.drift,
            diffusion: &self.diffusion,
            jump: &self.jump,
            jump_bound: self.jump_bound,
        }
    }
}

/// Accumulates the coefficient vector along the noise, producing a value at
/// every grid node and on both sides of every jump.
pub fn evolve_field(spec: &FieldSpec, wiener: &WienerPath, jumps: &JumpStream) -> Result<FieldPath, SimulationError> {
    spec.driver().accumulate(&spec.c0, wiener, jumps)
}

/// Rejects trajectories leaving the excursion box when the basis contains
/// unbounded polynomials.
pub fn check_excursion(spec: &FieldSpec, traj: &Trajectory) -> Result<(), SimulationError> {
    let Some(bound) = spec.excursion_box.filter(|_| spec.has_polynomial()) else {
        return Ok(());
    };
    for cp in &traj.checkpoints {
        if let Some((i, v)) = cp.value.iter().enumerate().find(|(_, v)| v.abs() > bound) {
            return Err(SimulationError::StateExcursion {
                component: i,
                value: *v,
                bound,
            });
        }
    }
    Ok(())
}

/// `Σ c_p a_p`
pub fn combine(c: &[f64], a: &[f64]) -> f64 {
    c.iter().zip(a).map(|(x, y)| x * y).sum()
}

pub fn combine_grad(c: &[f64], jets: &[Jet], n: usize) -> Vec<f64> {
    let mut g = vec![0.0; n];
    for (cp, j) in c.iter().zip(jets) {
        g.iter_mut().zip(&j.grad).for_each(|(o, v)| *o += cp * v);
    }
    g
}

pub fn combine_hess(c: &[f64], jets: &[Jet], n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for (cp, j) in c.iter().zip(jets) {
        h.iter_mut().zip(&j.hess).for_each(|(o, v)| *o += cp * v);
    }
    h
}

/// F(t, x) for the coefficients held by `state`.
pub fn eval_field(state: &FieldState, spec: &FieldSpec, x: &[f64]) -> f64 {
    combine(&state.value, &spec.values(x))
}

pub fn eval_grad(state: &FieldState, spec: &FieldSpec, x: &[f64]) -> Vec<f64> {
    combine_grad(&state.value, &spec.jets(x), x.len())
}

/// Row-major n×n Hessian.
pub fn eval_hess(state: &FieldState, spec: &FieldSpec, x: &[f64]) -> Vec<f64> {
    combine_hess(&state.value, &spec.jets(x), x.len())
}

/// Q(t, x) = Σ q_p(t) φ_p(x).
pub fn eval_q(spec: &FieldSpec, t: f64, x: &[f64]) -> f64 {
    combine(spec.drift.value_at(t), &spec.values(x))
}

/// D_k(t, x) for k = 1..m.
pub fn eval_d(spec: &FieldSpec, t: f64, x: &[f64]) -> Vec<f64> {
    let phi = spec.values(x);
    d_from_values(spec.diffusion.value_at(t), &phi)
}

/// ∂D_k/∂x_i, row-major m×n.
pub fn eval_d_grad(spec: &FieldSpec, t: f64, x: &[f64]) -> Vec<f64> {
    d_grad_from_jets(spec.diffusion.value_at(t), &spec.jets(x), x.len())
}

/// G(t, x; γ) = Σ G_p(t; γ) φ_p(x).
pub fn eval_g(spec: &FieldSpec, t: f64, x: &[f64], mark: &[f64]) -> f64 {
    combine(&spec.jump.value_at(t).apply(mark), &spec.values(x))
}

pub(crate) fn d_from_values(d: &[Vec<f64>], phi: &[f64]) -> Vec<f64> {
    let m = d.first().map_or(0, Vec::len);
    (0..m).map(|k| d.iter().zip(phi).map(|(row, f)| row[k] * f).sum()).collect()
}

pub(crate) fn d_grad_from_jets(d: &[Vec<f64>], jets: &[Jet], n: usize) -> Vec<f64> {
    let m = d.first().map_or(0, Vec::len);
    let mut out = vec![0.0; m * n];
    for (row, jet) in d.iter().zip(jets) {
        for k in 0..m {
            for i in 0..n {
                out[k * n + i] += row[k] * jet.grad[i];
            }
        }
    }
    out
}
