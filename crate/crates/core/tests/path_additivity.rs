//! Evolving over [0, T] equals evolving over [0, T/2] and then [T/2, T]
//! from the midpoint value with the corresponding noise slices.

use itowentzell::noise::{sample_jumps, sample_wiener, TimeGrid};
use itowentzell::scenario::{
    derive_path_seed, MarkDistribution, MarkMap, MarkSampler, Piece, Schedule, StateCoefficients, StreamTag,
};
use itowentzell::state::evolve_state;
use proptest::prelude::*;

fn coefficients() -> StateCoefficients {
    let mut c = StateCoefficients::zero(2, 1, 1);
    c.drift = Schedule(vec![
        Piece { start: 0.0, value: vec![0.4, -0.2] },
        Piece { start: 0.75, value: vec![-0.1, 0.3] },
    ]);
    c.diffusion = Schedule::constant(vec![vec![0.5], vec![-0.25]]);
    c.jump = Schedule::constant(MarkMap::Saturating {
        scale: vec![0.3, 0.2],
        matrix: vec![vec![1.0], vec![-2.0]],
    });
    c.jump_bound = 0.3;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn halves_compose(seed in any::<u64>()) {
        let coeffs = coefficients();
        let grid = TimeGrid::uniform(2.0, 32);
        let w = sample_wiener(grid, 1, derive_path_seed(seed, 0, StreamTag::Wiener));
        let law = MarkDistribution {
            intensity: 3.0,
            marks: MarkSampler::IsotropicGaussian { mean: vec![0.0], std: 1.0 },
        };
        let j = sample_jumps(2.0, &law, derive_path_seed(seed, 0, StreamTag::Jumps), derive_path_seed(seed, 0, StreamTag::Marks));
        let x0 = [0.1, 0.2];

        let full = evolve_state(&coeffs, &x0, &w, &j).unwrap();
        let mid = grid.node(16);
        let first = evolve_state(&coeffs, &x0, &w.slice(0, 16), &j.window(0.0, mid)).unwrap();
        let second = evolve_state(&coeffs, first.terminal(), &w.slice(16, 32), &j.window(mid, 2.0)).unwrap();

        let idx = full.index_at(mid);
        for (a, b) in full.checkpoints[idx].value.iter().zip(first.terminal()) {
            prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
        for (a, b) in full.terminal().iter().zip(second.terminal()) {
            prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0), "{} vs {}", a, b);
        }
        prop_assert_eq!(full.checkpoints.len(), first.checkpoints.len() + second.checkpoints.len() - 1);
    }
}
