//! Experiment configuration: dimensions, coefficient schedules, jump law,
//! field basis and seeds.
//!
//! A [`ScenarioConfig`] is read from a TOML document whose keys mirror the
//! struct fields one-to-one. Unknown keys are rejected at parse time. The
//! schema is documented in `scenarios/SCHEMA.md`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::field::FieldSpec;

/// Relative slack used when checking that breakpoints sit on grid nodes.
const ALIGN_TOL: f64 = 1e-9;

/// One piece of a piecewise-constant schedule, active from `start` until the
/// next piece starts (or the horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece<T> {
    pub start: f64,
    pub value: T,
}

/// Right-continuous piecewise-constant function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule<T>(pub Vec<Piece<T>>);

impl<T> Schedule<T> {
    pub fn constant(value: T) -> Self {
        Schedule(vec![Piece { start: 0.0, value }])
    }

    pub fn pieces(&self) -> &[Piece<T>] {
        &self.0
    }

    /// Value of the last piece whose start is `<= t`.
    ///
    /// Times before the first piece fall back to the first piece.
    pub fn value_at(&self, t: f64) -> &T {
        let idx = self.0.partition_point(|p| p.start <= t);
        &self.0[idx.saturating_sub(1)].value
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Schedule<U> {
        Schedule(
            self.0
                .iter()
                .map(|p| Piece {
                    start: p.start,
                    value: f(&p.value),
                })
                .collect(),
        )
    }

    /// Checks that every breakpoint lies on a node of the uniform grid
    /// `t0 + k * dt`.
    pub fn aligned_with(&self, t0: f64, dt: f64) -> Result<(), String> {
        for p in &self.0 {
            if p.start <= t0 {
                continue;
            }
            let k = (p.start - t0) / dt;
            if (k - k.round()).abs() > ALIGN_TOL * k.abs().max(1.0) {
                return Err(format!(
                    "breakpoint {} is not a multiple of dt = {} from {}",
                    p.start, dt, t0
                ));
            }
        }
        Ok(())
    }

    /// Structural checks shared by all schedules: non-empty, starts at 0,
    /// strictly increasing, inside `[0, horizon)`, aligned with the coarsest grid.
    pub(crate) fn structure_violations(&self, name: &str, horizon: f64, base_steps: usize) -> Vec<ScenarioError> {
        let mut out = Vec::new();
        let bad = |detail: String| ScenarioError::InvalidSchedule {
            schedule: name.to_string(),
            detail,
        };
        if self.0.is_empty() {
            out.push(bad("schedule has no pieces".into()));
            return out;
        }
        if self.0[0].start != 0.0 {
            out.push(bad(format!("first piece starts at {}, expected 0", self.0[0].start)));
        }
        for w in self.0.windows(2) {
            if w[1].start <= w[0].start {
                out.push(bad(format!(
                    "breakpoints not strictly increasing ({} then {})",
                    w[0].start, w[1].start
                )));
            }
        }
        for p in &self.0 {
            if !p.start.is_finite() || p.start < 0.0 || (horizon > 0.0 && p.start >= horizon) {
                out.push(bad(format!("breakpoint {} outside [0, {})", p.start, horizon)));
            }
        }
        if horizon > 0.0 && horizon.is_finite() && base_steps > 0 {
            if let Err(detail) = self.aligned_with(0.0, horizon / base_steps as f64) {
                out.push(bad(detail));
            }
        }
        out
    }
}

/// Closed-form map of a jump mark γ ∈ ℝ^{n′} to an output vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarkMap {
    /// `offset + matrix · γ`
    Affine {
        offset: Vec<f64>,
        matrix: Vec<Vec<f64>>,
    },
    /// `scale_i · tanh((matrix · γ)_i)`, bounded by `|scale_i|`.
    Saturating {
        scale: Vec<f64>,
        matrix: Vec<Vec<f64>>,
    },
}

impl MarkMap {
    /// Map sending every mark to zero.
    pub fn zero(out_dim: usize, mark_dim: usize) -> Self {
        MarkMap::constant(vec![0.0; out_dim], mark_dim)
    }

    /// Map sending every mark to `value`.
    pub fn constant(value: Vec<f64>, mark_dim: usize) -> Self {
        let rows = value.len();
        MarkMap::Affine {
            offset: value,
            matrix: vec![vec![0.0; mark_dim]; rows],
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            MarkMap::Affine { offset, .. } => offset.len(),
            MarkMap::Saturating { scale, .. } => scale.len(),
        }
    }

    fn matrix(&self) -> &[Vec<f64>] {
        match self {
            MarkMap::Affine { matrix, .. } | MarkMap::Saturating { matrix, .. } => matrix,
        }
    }

    pub fn apply(&self, mark: &[f64]) -> Vec<f64> {
        let lin = |row: &Vec<f64>| row.iter().zip(mark).map(|(a, g)| a * g).sum::<f64>();
        match self {
            MarkMap::Affine { offset, matrix } => {
                offset.iter().zip(matrix).map(|(o, row)| o + lin(row)).collect()
            }
            MarkMap::Saturating { scale, matrix } => scale
                .iter()
                .zip(matrix)
                .map(|(s, row)| s * lin(row).tanh())
                .collect(),
        }
    }

    /// True when the map returns zero for every mark.
    pub fn is_zero(&self) -> bool {
        match self {
            MarkMap::Affine { offset, matrix } => {
                offset.iter().all(|v| *v == 0.0) && matrix.iter().flatten().all(|v| *v == 0.0)
            }
            MarkMap::Saturating { scale, matrix } => {
                scale.iter().all(|v| *v == 0.0) || matrix.iter().flatten().all(|v| *v == 0.0)
            }
        }
    }

    pub(crate) fn violations(&self, out_dim: usize, mark_dim: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.out_dim() != out_dim {
            out.push(format!("output dimension {} != {}", self.out_dim(), out_dim));
        }
        if self.matrix().len() != self.out_dim() {
            out.push(format!(
                "matrix has {} rows, expected {}",
                self.matrix().len(),
                self.out_dim()
            ));
        }
        if self.matrix().iter().any(|r| r.len() != mark_dim) {
            out.push(format!("matrix rows must have mark_dim = {} columns", mark_dim));
        }
        let finite = match self {
            MarkMap::Affine { offset, matrix } => offset.iter().chain(matrix.iter().flatten()).all(|v| v.is_finite()),
            MarkMap::Saturating { scale, matrix } => scale.iter().chain(matrix.iter().flatten()).all(|v| v.is_finite()),
        };
        if !finite {
            out.push("non-finite coefficient".into());
        }
        out
    }
}

/// Law of a single jump mark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarkSampler {
    UniformBox { low: Vec<f64>, high: Vec<f64> },
    IsotropicGaussian { mean: Vec<f64>, std: f64 },
    DiscreteAtoms { atoms: Vec<Vec<f64>>, weights: Vec<f64> },
}

impl MarkSampler {
    pub fn dim(&self) -> usize {
        match self {
            MarkSampler::UniformBox { low, .. } => low.len(),
            MarkSampler::IsotropicGaussian { mean, .. } => mean.len(),
            MarkSampler::DiscreteAtoms { atoms, .. } => atoms.first().map_or(0, Vec::len),
        }
    }
}

/// Finite intensity measure Π = Λ · (mark law).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkDistribution {
    /// Total intensity Λ, the expected number of jumps per unit time.
    pub intensity: f64,
    pub marks: MarkSampler,
}

/// Coefficients of the state equation `dx = A dt + B dw + ∫ g ν(dt, dγ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateCoefficients {
    /// A(t) ∈ ℝⁿ.
    pub drift: Schedule<Vec<f64>>,
    /// B(t), n rows of m entries.
    pub diffusion: Schedule<Vec<Vec<f64>>>,
    /// g(t; γ) ∈ ℝⁿ.
    pub jump: Schedule<MarkMap>,
    /// Declared bound on max_i |g_i(t; γ)|, enforced for every sampled mark.
    pub jump_bound: f64,
}

impl StateCoefficients {
    /// A ≡ 0, B ≡ 0, g ≡ 0.
    pub fn zero(state_dim: usize, wiener_dim: usize, mark_dim: usize) -> Self {
        StateCoefficients {
            drift: Schedule::constant(vec![0.0; state_dim]),
            diffusion: Schedule::constant(vec![vec![0.0; wiener_dim]; state_dim]),
            jump: Schedule::constant(MarkMap::zero(state_dim, mark_dim)),
            jump_bound: 0.0,
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub state_dim: usize,
    pub wiener_dim: usize,
    pub mark_dim: usize,
    pub horizon: f64,
    /// Steps at the coarsest level.
    pub base_steps: usize,
    /// Number of levels; level `l` uses `base_steps * 2^l` steps.
    pub refinement_levels: usize,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Initial state x(0).
    pub x0: Vec<f64>,
    pub state: StateCoefficients,
    pub jump_law: MarkDistribution,
    pub field: FieldSpec,
}

/// A single invariant violation found by [`validate_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    InvalidDimension { what: String, detail: String },
    InvalidSchedule { schedule: String, detail: String },
    InvalidIntensity { what: String, detail: String },
    InvalidFieldSpec { what: String, detail: String },
}

impl ScenarioError {
    pub(crate) fn dim(what: &str, detail: impl Into<String>) -> Self {
        ScenarioError::InvalidDimension {
            what: what.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn intensity(what: &str, detail: impl Into<String>) -> Self {
        ScenarioError::InvalidIntensity {
            what: what.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn field(what: &str, detail: impl Into<String>) -> Self {
        ScenarioError::InvalidFieldSpec {
            what: what.into(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::InvalidDimension { what, detail } => write!(f, "InvalidDimension({what}): {detail}"),
            ScenarioError::InvalidSchedule { schedule, detail } => write!(f, "InvalidSchedule({schedule}): {detail}"),
            ScenarioError::InvalidIntensity { what, detail } => write!(f, "InvalidIntensity({what}): {detail}"),
            ScenarioError::InvalidFieldSpec { what, detail } => write!(f, "InvalidFieldSpec({what}): {detail}"),
        }
    }
}

/// Every violation found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<ScenarioError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} scenario violation(s)", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

/// Returns the config unchanged when every invariant holds, otherwise the
/// complete list of violations.
pub fn validate_scenario(cfg: ScenarioConfig) -> Result<ScenarioConfig, ValidationErrors> {
    let violations = cfg.violations();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ValidationErrors(violations))
    }
}

impl ScenarioConfig {
    /// Collects all invariant violations.
    pub fn violations(&self) -> Vec<ScenarioError> {
        let mut out = Vec::new();
        let (n, m, nm) = (self.state_dim, self.wiener_dim, self.mark_dim);
        let t_end = self.horizon;

        for (name, v) in [
            ("state_dim", n),
            ("wiener_dim", m),
            ("mark_dim", nm),
            ("base_steps", self.base_steps),
            ("refinement_levels", self.refinement_levels),
            ("n_paths", self.n_paths),
        ] {
            if v == 0 {
                out.push(ScenarioError::dim(name, "must be positive"));
            }
        }
        if !(t_end.is_finite() && t_end > 0.0) {
            out.push(ScenarioError::dim("horizon", format!("T = {t_end} must be finite and > 0")));
        }
        if self.refinement_levels > 24 {
            out.push(ScenarioError::dim("refinement_levels", "at most 24 levels are supported"));
        }
        if self.x0.len() != n {
            out.push(ScenarioError::dim("x0", format!("length {} != state_dim {}", self.x0.len(), n)));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            out.push(ScenarioError::dim("x0", "non-finite entry"));
        }

        let st = &self.state;
        out.extend(st.drift.structure_violations("state.drift", t_end, self.base_steps));
        out.extend(st.diffusion.structure_violations("state.diffusion", t_end, self.base_steps));
        out.extend(st.jump.structure_violations("state.jump", t_end, self.base_steps));
        for p in st.drift.pieces() {
            if p.value.len() != n {
                out.push(ScenarioError::dim("state.drift", format!("vector length {} != {}", p.value.len(), n)));
            }
            if p.value.iter().any(|v| !v.is_finite()) {
                out.push(ScenarioError::InvalidSchedule {
                    schedule: "state.drift".into(),
                    detail: "non-finite value".into(),
                });
            }
        }
        for p in st.diffusion.pieces() {
            if p.value.len() != n || p.value.iter().any(|r| r.len() != m) {
                out.push(ScenarioError::dim("state.diffusion", format!("matrix must be {n}x{m}")));
            }
            if p.value.iter().flatten().any(|v| !v.is_finite()) {
                out.push(ScenarioError::InvalidSchedule {
                    schedule: "state.diffusion".into(),
                    detail: "non-finite value".into(),
                });
            }
        }
        for p in st.jump.pieces() {
            for d in p.value.violations(n, nm) {
                out.push(ScenarioError::dim("state.jump", d));
            }
        }
        if !(st.jump_bound.is_finite() && st.jump_bound >= 0.0) {
            out.push(ScenarioError::intensity("state.jump_bound", format!("{} must be finite and >= 0", st.jump_bound)));
        }

        out.extend(self.jump_law_violations());
        out.extend(self.field.violations(self));
        out
    }

    fn jump_law_violations(&self) -> Vec<ScenarioError> {
        let mut out = Vec::new();
        let law = &self.jump_law;
        if !(law.intensity.is_finite() && law.intensity >= 0.0) {
            out.push(ScenarioError::intensity("intensity", format!("Λ = {} must be finite and >= 0", law.intensity)));
        }
        if law.marks.dim() != self.mark_dim {
            out.push(ScenarioError::dim(
                "jump_law.marks",
                format!("mark dimension {} != mark_dim {}", law.marks.dim(), self.mark_dim),
            ));
        }
        match &law.marks {
            MarkSampler::UniformBox { low, high } => {
                if low.len() != high.len() {
                    out.push(ScenarioError::dim("jump_law.marks", "low/high length differ"));
                }
                if low.iter().zip(high).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
                    out.push(ScenarioError::intensity("uniform-box", "bounds must be finite with low <= high"));
                }
            }
            MarkSampler::IsotropicGaussian { mean, std } => {
                if !(std.is_finite() && *std > 0.0) || mean.iter().any(|v| !v.is_finite()) {
                    out.push(ScenarioError::intensity("isotropic-gaussian", "std must be > 0 and mean finite"));
                }
            }
            MarkSampler::DiscreteAtoms { atoms, weights } => {
                if atoms.is_empty() || atoms.len() != weights.len() {
                    out.push(ScenarioError::intensity(
                        "discrete-atoms",
                        format!("{} atoms but {} weights", atoms.len(), weights.len()),
                    ));
                }
                if atoms.iter().any(|a| a.len() != self.mark_dim) {
                    out.push(ScenarioError::dim("discrete-atoms", "atom length != mark_dim"));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    out.push(ScenarioError::intensity("weights", "weights must be finite and >= 0"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    out.push(ScenarioError::intensity("weights", format!("weights sum {total}")));
                }
            }
        }
        out
    }

    /// Steps at refinement level `level` (0 is the coarsest).
    pub fn steps_at(&self, level: usize) -> usize {
        self.base_steps << level
    }

    pub fn finest_steps(&self) -> usize {
        self.steps_at(self.refinement_levels.saturating_sub(1))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Serialize(e.to_string()))
    }

    /// Reads, parses and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::from_toml_str(&text)?;
        Ok(validate_scenario(cfg)?)
    }

    /// Stable hash of the serialized config and master seed (16 hex digits).
    pub fn fingerprint(&self) -> String {
        let text = self.to_toml_string().unwrap_or_default();
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.update(self.master_seed.to_le_bytes());
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Random stream selector for [`derive_path_seed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    Wiener = 0,
    Jumps = 1,
    Marks = 2,
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-path, per-stream seed.
///
/// The counter `3 * index + tag` is spread by an odd multiplier and passed
/// through the SplitMix64 finalizer; both steps are bijections on u64, so
/// distinct `(index, tag)` pairs below 2^62 never collide for a fixed master.
pub fn derive_path_seed(master_seed: u64, path_index: u64, tag: StreamTag) -> u64 {
    let counter = path_index.wrapping_mul(3).wrapping_add(tag as u64);
    mix64(mix64(master_seed).wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}
