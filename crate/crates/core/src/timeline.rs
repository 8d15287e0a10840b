//! Event-driven accumulation shared by the state and the field coefficients.
//!
//! Both processes have the form `dv = a(t) dt + b(t) dw + ∫ h(t; γ) ν(dt, dγ)`
//! with piecewise-constant `a`, `b`, `h`, so given the noise they are
//! accumulated exactly. A step `[t_i, t_{i+1}]` containing jumps is split:
//! the drift advances to each event time, the jump is applied, and the full
//! Wiener increment is booked at the end of the step. A jump landing exactly
//! on a grid node is processed after that node's Wiener booking.

use crate::error::SimulationError;
use crate::noise::{noise_id, JumpStream, TimeGrid, WienerPath};
use crate::scenario::{MarkMap, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    /// Grid node `i`.
    Grid(usize),
    /// Left limit at jump event `e`.
    PreJump(usize),
    /// Value right after jump event `e`.
    PostJump(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub time: f64,
    /// Grid step whose schedule pieces govern the interval that starts here.
    pub step: usize,
    pub kind: CheckpointKind,
    pub value: Vec<f64>,
}

/// Values of an exactly-accumulated process at every grid node and on both
/// sides of every jump.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// [`noise_id`] of the noise the trajectory was built from.
    pub noise: u64,
    pub checkpoints: Vec<Checkpoint>,
}

impl Trajectory {
    pub fn initial(&self) -> &[f64] {
        &self.checkpoints[0].value
    }

    pub fn terminal(&self) -> &[f64] {
        &self.checkpoints[self.checkpoints.len() - 1].value
    }

    /// Index of the last checkpoint at time `<= t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.checkpoints.partition_point(|c| c.time <= t).saturating_sub(1)
    }

    /// Index of the checkpoint for grid node `i`.
    pub fn grid_index(&self, i: usize) -> Option<usize> {
        self.checkpoints.iter().position(|c| c.kind == CheckpointKind::Grid(i))
    }

    /// Checkpoint pairs (pre, post) for every jump event.
    pub fn jump_pairs(&self) -> impl Iterator<Item = (usize, &Checkpoint, &Checkpoint)> + '_ {
        self.checkpoints.windows(2).filter_map(|w| match (w[0].kind, w[1].kind) {
            (CheckpointKind::PreJump(a), CheckpointKind::PostJump(b)) if a == b => Some((a, &w[0], &w[1])),
            _ => None,
        })
    }
}

/// What happens between two consecutive checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    /// Continuous evolution over `dt`, with the Wiener increment of grid
    /// step `dw_step` booked at its end when present.
    Continuous { dt: f64, dw_step: Option<usize> },
    Jump { event: usize },
}

/// Classifies the interval between `prev` and `next`, reproducing exactly
/// the lengths the accumulator used.
pub fn segment(grid: &TimeGrid, prev: &Checkpoint, next: &Checkpoint) -> Segment {
    match next.kind {
        CheckpointKind::PreJump(_) => Segment::Continuous {
            dt: next.time - prev.time,
            dw_step: None,
        },
        CheckpointKind::PostJump(e) => Segment::Jump { event: e },
        CheckpointKind::Grid(i) => {
            let step = i - 1;
            let dt = if prev.time == grid.node(step) {
                grid.dt()
            } else {
                next.time - prev.time
            };
            Segment::Continuous {
                dt,
                dw_step: Some(step),
            }
        }
    }
}

/// Midpoint of step `i` (clamped to the last step); schedule lookups go
/// through it so rounding at breakpoints cannot select the wrong piece.
pub(crate) fn step_time(grid: &TimeGrid, i: usize) -> f64 {
    let i = i.min(grid.steps() - 1);
    grid.node(i) + 0.5 * grid.dt()
}

/// Coefficients of one exactly-integrable process.
pub(crate) struct Driver<'a> {
    pub name: &'a str,
    pub drift: &'a Schedule<Vec<f64>>,
    pub diffusion: &'a Schedule<Vec<Vec<f64>>>,
    pub jump: &'a Schedule<MarkMap>,
    pub jump_bound: f64,
}

impl Driver<'_> {
    fn check(&self, v0: &[f64], wiener: &WienerPath, jumps: &JumpStream) -> Result<(), SimulationError> {
        let g = wiener.grid();
        for (what, res) in [
            ("drift", self.drift.aligned_with(0.0, g.dt())),
            ("diffusion", self.diffusion.aligned_with(0.0, g.dt())),
            ("jump", self.jump.aligned_with(0.0, g.dt())),
        ] {
            res.map_err(|detail| SimulationError::ScheduleMismatch {
                schedule: format!("{}.{what}", self.name),
                detail,
            })?;
        }
        let dim = v0.len();
        let drift_ok = self.drift.pieces().iter().all(|p| p.value.len() == dim);
        let diff_ok = self
            .diffusion
            .pieces()
            .iter()
            .all(|p| p.value.len() == dim && p.value.iter().all(|r| r.len() == wiener.dim()));
        let jump_ok = self.jump.pieces().iter().all(|p| p.value.out_dim() == dim);
        if !(drift_ok && diff_ok && jump_ok) {
            return Err(SimulationError::Dimension(format!(
                "{} coefficients do not match dimension {} / wiener dimension {}",
                self.name,
                dim,
                wiener.dim()
            )));
        }
        if !jumps.is_well_formed() || jumps.events.iter().any(|e| e.time <= g.start() || e.time > g.end()) {
            return Err(SimulationError::NoiseMismatch(format!(
                "jump times must be increasing inside ({}, {}]",
                g.start(),
                g.end()
            )));
        }
        Ok(())
    }

    fn apply_jump(&self, step_t: f64, mark: &[f64], v: &mut [f64]) -> Result<(), SimulationError> {
        let jump = self.jump.value_at(step_t).apply(mark);
        let size = jump.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !(size <= self.jump_bound) {
            return Err(SimulationError::JumpBoundExceeded {
                map: format!("{}.jump", self.name),
                value: size,
                bound: self.jump_bound,
            });
        }
        v.iter_mut().zip(&jump).for_each(|(a, j)| *a += j);
        Ok(())
    }

    /// Accumulates the process from `v0` along the given noise.
    pub fn accumulate(&self, v0: &[f64], wiener: &WienerPath, jumps: &JumpStream) -> Result<Trajectory, SimulationError> {
        self.check(v0, wiener, jumps)?;
        let grid = *wiener.grid();
        let steps = grid.steps();
        let events = &jumps.events;
        let mut v = v0.to_vec();
        let mut out = Vec::with_capacity(steps + 1 + 2 * events.len());
        out.push(Checkpoint {
            time: grid.node(0),
            step: 0,
            kind: CheckpointKind::Grid(0),
            value: v.clone(),
        });
        let mut ev = 0;
        for i in 0..steps {
            let st = step_time(&grid, i);
            let a = self.drift.value_at(st);
            let b = self.diffusion.value_at(st);
            let t_left = grid.node(i);
            let t_right = grid.node(i + 1);
            let mut s = t_left;

            while ev < events.len() && events[ev].time < t_right {
                let tau = events[ev].time;
                let h = tau - s;
                v.iter_mut().zip(a).for_each(|(x, ai)| *x += ai * h);
                out.push(Checkpoint {
                    time: tau,
                    step: i,
                    kind: CheckpointKind::PreJump(ev),
                    value: v.clone(),
                });
                self.apply_jump(st, &events[ev].mark, &mut v)?;
                out.push(Checkpoint {
                    time: tau,
                    step: i,
                    kind: CheckpointKind::PostJump(ev),
                    value: v.clone(),
                });
                s = tau;
                ev += 1;
            }

            let h = if s == t_left { grid.dt() } else { t_right - s };
            let dw = wiener.increment(i);
            for (x, (ai, row)) in v.iter_mut().zip(a.iter().zip(b)) {
                *x += ai * h + row.iter().zip(dw).map(|(bk, w)| bk * w).sum::<f64>();
            }
            let next_step = (i + 1).min(steps - 1);
            out.push(Checkpoint {
                time: t_right,
                step: next_step,
                kind: CheckpointKind::Grid(i + 1),
                value: v.clone(),
            });

            // Jumps sitting exactly on the node come after the node's booking.
            while ev < events.len() && events[ev].time <= t_right {
                let nt = step_time(&grid, next_step);
                out.push(Checkpoint {
                    time: t_right,
                    step: next_step,
                    kind: CheckpointKind::PreJump(ev),
                    value: v.clone(),
                });
                self.apply_jump(nt, &events[ev].mark, &mut v)?;
                out.push(Checkpoint {
                    time: t_right,
                    step: next_step,
                    kind: CheckpointKind::PostJump(ev),
                    value: v.clone(),
                });
                ev += 1;
            }
        }
        Ok(Trajectory {
            grid,
            noise: noise_id(wiener, jumps),
            checkpoints: out,
        })
    }
}
