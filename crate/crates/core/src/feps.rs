//! The mollified field `F_ε(t, x) = ∫ Π_i δ_ε(y_i − x_i) F(t, y) dy` and
//! the mean-square study of `F_ε(T, x(T)) → F(T, x(T))` as ε → 0.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, QuadratureError};
use crate::field::{check_excursion, combine, evolve_field, FieldSpec, FieldState};
use crate::mollifier::{holder_error_bound, HolderWitness, Mollifier, MollifierParams};
use crate::noise::{coarsen_wiener, path_noise};
use crate::scenario::ScenarioConfig;
use crate::state::evolve_state;
use crate::stats::{loglog_fit, mean_ci, strictly_decreasing, SlopeFit};

#[derive(Debug, Clone, PartialEq)]
pub struct FepsParams {
    /// Strictly decreasing, positive.
    pub epsilons: Vec<f64>,
    pub nodes: usize,
    pub cutoff: f64,
    pub n_paths: usize,
}

impl FepsParams {
    pub fn new(epsilons: Vec<f64>, n_paths: usize) -> Self {
        FepsParams {
            epsilons,
            nodes: 64,
            cutoff: 8.0,
            n_paths,
        }
    }

    pub fn validate(&self) -> Result<(), QuadratureError> {
        let bad = |s: &str| Err(QuadratureError::InvalidParams(s.into()));
        if self.epsilons.is_empty() {
            return bad("empty epsilon grid");
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("epsilon values must be positive and finite");
        }
        if !strictly_decreasing(&self.epsilons) {
            return bad("epsilon grid must be strictly decreasing");
        }
        if self.n_paths == 0 {
            return bad("n_paths must be positive");
        }
        self.quadrature(self.epsilons[0], 1)
            .validate()
            .map_err(QuadratureError::InvalidParams)
    }

    fn quadrature(&self, epsilon: f64, dim: usize) -> MollifierParams {
        MollifierParams {
            epsilon,
            dim,
            nodes: self.nodes,
            cutoff: self.cutoff,
        }
    }
}

/// `F_ε` at `x` for the coefficients held by `state`; ε and the rule come
/// from `mollifier`.
pub fn f_eps(state: &FieldState, spec: &FieldSpec, x: &[f64], mollifier: &Mollifier) -> Result<f64, QuadratureError> {
    mollifier.mollify(|y| combine(&state.value, &spec.values(y)), x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FepsRow {
    pub epsilon: f64,
    /// Monte Carlo estimate of `E|F_ε − F|²`.
    pub mse: f64,
    pub ci_halfwidth: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Largest `|F_ε − F| / bound` over paths, bound from the field's
    /// Lipschitz constant on the quadrature box.
    pub max_bound_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FepsTable {
    pub rows: Vec<FepsRow>,
    /// Fit of log2(mse) on log2(ε); absent when some mse is zero.
    pub slope: Option<SlopeFit>,
}

impl FepsTable {
    pub fn bound_holds(&self) -> bool {
        self.rows.iter().all(|r| r.max_bound_ratio <= 1.0)
    }

    pub fn mse_decreasing(&self) -> bool {
        strictly_decreasing(&self.rows.iter().map(|r| r.mse).collect::<Vec<_>>())
    }
}

/// Per-path squared errors and bound ratios, one entry per ε.
fn path_errors(cfg: &ScenarioConfig, rules: &[Mollifier], index: u64) -> Result<Vec<(f64, f64)>, Error> {
    let (wiener, jumps) = path_noise(cfg, index);
    let factor = cfg.finest_steps() / cfg.base_steps;
    let wiener = coarsen_wiener(&wiener, factor)?;
    let traj = evolve_state(&cfg.state, &cfg.x0, &wiener, &jumps)?;
    check_excursion(&cfg.field, &traj)?;
    let field = evolve_field(&cfg.field, &wiener, &jumps)?;
    let x = traj.terminal();
    let state = &field.checkpoints[field.checkpoints.len() - 1];
    let exact = combine(&state.value, &cfg.field.values(x));
    let reach = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    rules
        .iter()
        .map(|rule| {
            let p = rule.params();
            let approx = f_eps(state, &cfg.field, x, rule)?;
            let err = (approx - exact).abs();
            let witness = HolderWitness {
                constant: cfg.field.lipschitz_bound(&state.value, reach + p.cutoff * p.epsilon),
                exponent: 1.0,
            };
            let bound = holder_error_bound(p, &witness);
            let ratio = if bound > 0.0 {
                err / bound
            } else if err <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            Ok((err * err, ratio))
        })
        .collect()
}

/// Monte Carlo estimate of `E|F_ε(T, x(T)) − F(T, x(T))|²` on the base
/// grid for every ε. Paths run on the current rayon pool; aggregation is in
/// path order.
pub fn ms_convergence_study(cfg: &ScenarioConfig, params: &FepsParams) -> Result<FepsTable, Error> {
    params.validate()?;
    let rules = params
        .epsilons
        .iter()
        .map(|e| Mollifier::new(params.quadrature(*e, cfg.state_dim)))
        .collect::<Result<Vec<_>, _>>()?;
    let per_path: Vec<Vec<(f64, f64)>> = (0..params.n_paths as u64)
        .into_par_iter()
        .map(|i| path_errors(cfg, &rules, i))
        .collect::<Result<_, _>>()?;

    let rows: Vec<FepsRow> = params
        .epsilons
        .iter()
        .enumerate()
        .map(|(k, eps)| {
            let sq: Vec<f64> = per_path.iter().map(|p| p[k].0).collect();
            let (mse, ci_halfwidth) = mean_ci(&sq);
            FepsRow {
                epsilon: *eps,
                mse,
                ci_halfwidth,
                n_paths: params.n_paths,
                seed: cfg.master_seed,
                max_bound_ratio: per_path.iter().fold(0.0, |m, p| m.max(p[k].1)),
            }
        })
        .collect();
    let slope = if rows.iter().all(|r| r.mse > 0.0) {
        let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
        let mse: Vec<f64> = rows.iter().map(|r| r.mse).collect();
        loglog_fit(&eps, &mse)
    } else {
        None
    };
    Ok(FepsTable { rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BasisFunction;
    use crate::scenario::{MarkDistribution, MarkSampler, StateCoefficients};
    use crate::timeline::{Checkpoint, CheckpointKind};

    fn at(c: Vec<f64>) -> FieldState {
        Checkpoint {
            time: 0.0,
            step: 0,
            kind: CheckpointKind::Grid(0),
            value: c,
        }
    }

    fn rule(eps: f64, dim: usize) -> Mollifier {
        Mollifier::new(MollifierParams::new(eps, dim)).unwrap()
    }

    #[test]
    fn constant_field_is_reproduced() {
        let spec = FieldSpec::frozen(vec![BasisFunction::constant(2)], vec![4.5], 1, 1);
        for eps in [0.5, 0.1, 0.01] {
            let v = f_eps(&at(vec![4.5]), &spec, &[0.3, -1.0], &rule(eps, 2)).unwrap();
            assert!((v - 4.5).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_and_quadratic_moments() {
        let lin = FieldSpec::frozen(vec![BasisFunction::Polynomial { powers: vec![1] }], vec![1.0], 1, 1);
        assert!((f_eps(&at(vec![1.0]), &lin, &[2.0], &rule(0.3, 1)).unwrap() - 2.0).abs() < 1e-10);
        let sq = FieldSpec::frozen(vec![BasisFunction::Polynomial { powers: vec![2] }], vec![1.0], 1, 1);
        assert!((f_eps(&at(vec![1.0]), &sq, &[0.0], &rule(0.1, 1)).unwrap() - 0.01).abs() < 1e-8);
    }

    #[test]
    fn params_validation() {
        assert!(FepsParams::new(vec![0.4, 0.2, 0.1], 10).validate().is_ok());
        assert!(FepsParams::new(vec![0.2, 0.4], 10).validate().is_err());
        assert!(FepsParams::new(vec![0.2, 0.2], 10).validate().is_err());
        assert!(FepsParams::new(vec![0.2, -0.1], 10).validate().is_err());
        assert!(FepsParams::new(vec![], 10).validate().is_err());
        assert!(FepsParams::new(vec![0.1], 0).validate().is_err());
    }

    fn small_cfg(field: FieldSpec) -> ScenarioConfig {
        let mut state = StateCoefficients::zero(1, 1, 1);
        state.drift = crate::scenario::Schedule::constant(vec![0.2]);
        state.diffusion = crate::scenario::Schedule::constant(vec![vec![0.5]]);
        ScenarioConfig {
            state_dim: 1,
            wiener_dim: 1,
            mark_dim: 1,
            horizon: 1.0,
            base_steps: 8,
            refinement_levels: 1,
            n_paths: 20,
            master_seed: 3,
            x0: vec![0.0],
            state,
            jump_law: MarkDistribution {
                intensity: 0.0,
                marks: MarkSampler::UniformBox {
                    low: vec![0.0],
                    high: vec![1.0],
                },
            },
            field,
        }
    }

    #[test]
    fn frozen_constant_field_has_zero_mse() {
        let cfg = small_cfg(FieldSpec::frozen(vec![BasisFunction::constant(1)], vec![2.0], 1, 1));
        let table = ms_convergence_study(&cfg, &FepsParams::new(vec![0.4, 0.2, 0.1], 20)).unwrap();
        assert!(table.rows.iter().all(|r| r.mse.abs() <= 1e-18));
        assert!(table.bound_holds());
    }

    #[test]
    fn bump_field_mse_shrinks_and_respects_bound() {
        let spec = FieldSpec::frozen(
            vec![BasisFunction::GaussianBump {
                center: vec![0.1],
                width: 0.7,
            }],
            vec![1.0],
            1,
            1,
        );
        let cfg = small_cfg(spec);
        let table = ms_convergence_study(&cfg, &FepsParams::new(vec![0.4, 0.2, 0.1, 0.05], 40)).unwrap();
        assert!(table.mse_decreasing());
        assert!(table.bound_holds());
        assert!(table.slope.unwrap().slope > 1.5);
    }
}
