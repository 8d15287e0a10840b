//! Exact evolution of the state `dx = A(t) dt + B(t) dw + ∫ g(t; γ) ν(dt, dγ)`.
//!
//! Because A, B and g are piecewise constant on the coarsest grid, the state
//! at every grid node and on both sides of every jump is obtained exactly
//! from the realized noise. The trajectory is càdlàg: the post-jump
//! checkpoint carries the value used from the event time onward.

use std::io::Write;

use crate::error::SimulationError;
use crate::noise::{JumpStream, WienerPath};
use crate::scenario::StateCoefficients;
use crate::timeline::{CheckpointKind, Driver, Trajectory};

pub type StateTrajectory = Trajectory;

pub fn evolve_state(
    coeffs: &StateCoefficients,
    x0: &[f64],
    wiener: &WienerPath,
    jumps: &JumpStream,
) -> Result<StateTrajectory, SimulationError> {
    Driver {
        name: "state",
        drift: &coeffs.drift,
        diffusion: &coeffs.diffusion,
        jump: &coeffs.jump,
        jump_bound: coeffs.jump_bound,
    }
    .accumulate(x0, wiener, jumps)
}

/// CSV dump with columns `time,kind,x1..xn`.
pub fn write_trajectory_csv<W: Write>(out: &mut W, traj: &StateTrajectory) -> std::io::Result<()> {
    let n = traj.initial().len();
    let cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    writeln!(out, "time,kind,{}", cols.join(","))?;
    for c in &traj.checkpoints {
        let kind = match c.kind {
            CheckpointKind::Grid(_) => "grid",
            CheckpointKind::PreJump(_) => "pre_jump",
            CheckpointKind::PostJump(_) => "post_jump",
        };
        let xs: Vec<String> = c.value.iter().map(f64::to_string).collect();
        writeln!(out, "{},{},{}", c.time, kind, xs.join(","))?;
    }
    Ok(())
}
