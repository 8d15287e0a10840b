//! Reproducible Wiener increments and Poisson-measure samples.
//!
//! Refinement studies draw the Wiener path once on the finest grid and
//! obtain every coarser level with [`coarsen_wiener`], so all levels share
//! the same underlying Brownian motion. Jump streams live in continuous time
//! and are shared by all levels unchanged.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{ConfigError, FactorMismatch};
use crate::scenario::{derive_path_seed, MarkDistribution, MarkSampler, ScenarioConfig, StreamTag};

/// Uniform grid `t0 < t0 + dt < … < end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    end: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    /// `steps` uniform steps over `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Self {
        assert!(steps > 0 && horizon > 0.0, "grid needs steps > 0 and horizon > 0");
        TimeGrid {
            t0: 0.0,
            end: horizon,
            dt: horizon / steps as f64,
            steps,
        }
    }

    pub fn start(&self) -> f64 {
        self.t0
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Node `i`; the last node is exactly `end`.
    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.end
        } else {
            self.t0 + i as f64 * self.dt
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }

    /// Sub-grid covering steps `from..to`.
    pub fn slice(&self, from: usize, to: usize) -> TimeGrid {
        assert!(from < to && to <= self.steps);
        TimeGrid {
            t0: self.node(from),
            end: self.node(to),
            dt: self.dt,
            steps: to - from,
        }
    }

    fn coarsened(&self, factor: usize) -> TimeGrid {
        TimeGrid {
            t0: self.t0,
            end: self.end,
            dt: self.dt * factor as f64,
            steps: self.steps / factor,
        }
    }
}

/// Wiener increments on a grid: row `i` holds Δw over `[t_i, t_{i+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    grid: TimeGrid,
    dim: usize,
    increments: Vec<f64>,
}

impl WienerPath {
    /// Builds a path from explicit row-major increments.
    pub fn from_increments(grid: TimeGrid, dim: usize, increments: Vec<f64>) -> Self {
        assert_eq!(increments.len(), grid.steps * dim, "increment count must be steps * dim");
        WienerPath { grid, dim, increments }
    }

    /// All-zero increments.
    pub fn zero(grid: TimeGrid, dim: usize) -> Self {
        WienerPath::from_increments(grid, dim, vec![0.0; grid.steps * dim])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.dim..(step + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// w(end) − w(start) per component.
    pub fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.increments.chunks_exact(self.dim) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Increments of steps `from..to`, on the matching sub-grid.
    pub fn slice(&self, from: usize, to: usize) -> WienerPath {
        WienerPath {
            grid: self.grid.slice(from, to),
            dim: self.dim,
            increments: self.increments[from * self.dim..to * self.dim].to_vec(),
        }
    }
}

/// Draws i.i.d. N(0, dt) increments for each of `dim` components.
pub fn sample_wiener(grid: TimeGrid, dim: usize, seed: u64) -> WienerPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = grid.dt.sqrt();
    let increments = (0..grid.steps * dim)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * sd
        })
        .collect();
    WienerPath { grid, dim, increments }
}

/// Sums consecutive blocks of `factor` increments.
pub fn coarsen_wiener(path: &WienerPath, factor: usize) -> Result<WienerPath, FactorMismatch> {
    let steps = path.grid.steps;
    if factor == 0 || !steps.is_multiple_of(factor) {
        return Err(FactorMismatch { factor, steps });
    }
    let dim = path.dim;
    let mut increments = vec![0.0; steps / factor * dim];
    for (j, out) in increments.chunks_exact_mut(dim).enumerate() {
        for row in path.increments[j * factor * dim..(j + 1) * factor * dim].chunks_exact(dim) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    Ok(WienerPath {
        grid: path.grid.coarsened(factor),
        dim,
        increments,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: Vec<f64>,
}

/// Ordered jump events on `(start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpStream {
    pub start: f64,
    pub end: f64,
    pub events: Vec<JumpEvent>,
}

impl JumpStream {
    pub fn empty(start: f64, end: f64) -> Self {
        JumpStream {
            start,
            end,
            events: Vec::new(),
        }
    }

    /// Checks ordering and the `(start, end]` window.
    pub fn is_well_formed(&self) -> bool {
        self.events.windows(2).all(|w| w[0].time < w[1].time)
            && self.events.iter().all(|e| e.time > self.start && e.time <= self.end)
    }

    pub fn count(&self) -> usize {
        self.events.len()
    }

    /// Number of events with time in `(a, b]`.
    pub fn count_in(&self, a: f64, b: f64) -> usize {
        self.events.iter().filter(|e| e.time > a && e.time <= b).count()
    }

    /// Events inside `(a, b]`.
    pub fn window(&self, a: f64, b: f64) -> JumpStream {
        JumpStream {
            start: a,
            end: b,
            events: self.events.iter().filter(|e| e.time > a && e.time <= b).cloned().collect(),
        }
    }
}

impl MarkSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            MarkSampler::UniformBox { low, high } => low
                .iter()
                .zip(high)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect(),
            MarkSampler::IsotropicGaussian { mean, std } => mean
                .iter()
                .map(|mu| {
                    let z: f64 = rng.sample(StandardNormal);
                    mu + std * z
                })
                .collect(),
            MarkSampler::DiscreteAtoms { atoms, weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (atom, w) in atoms.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return atom.clone();
                    }
                }
                atoms.last().cloned().unwrap_or_default()
            }
        }
    }
}

/// Samples the Poisson measure on `(0, horizon]`: the count is drawn from
/// Poisson(ΛT), times are sorted i.i.d. Uniform(0, T], marks are i.i.d.
pub fn sample_jumps(horizon: f64, law: &MarkDistribution, seed_time: u64, seed_mark: u64) -> JumpStream {
    let mean = law.intensity * horizon;
    if !(mean > 0.0) {
        return JumpStream::empty(0.0, horizon);
    }
    let mut rng_t = ChaCha8Rng::seed_from_u64(seed_time);
    let count = Poisson::new(mean).expect("positive finite mean").sample(&mut rng_t) as usize;
    // 1 - u maps [0, 1) onto (0, 1]
    let mut times: Vec<f64> = (0..count)
        .map(|_| horizon * (1.0 - rng_t.random::<f64>()))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut rng_m = ChaCha8Rng::seed_from_u64(seed_mark);
    let events = times
        .into_iter()
        .map(|time| JumpEvent {
            time,
            mark: law.marks.sample(&mut rng_m),
        })
        .collect();
    JumpStream {
        start: 0.0,
        end: horizon,
        events,
    }
}

/// Finest-level Wiener path and jump stream for path `index` of a study.
/// Coarser levels are obtained with [`coarsen_wiener`].
pub fn path_noise(cfg: &ScenarioConfig, index: u64) -> (WienerPath, JumpStream) {
    let seed = |tag| derive_path_seed(cfg.master_seed, index, tag);
    let grid = TimeGrid::uniform(cfg.horizon, cfg.finest_steps());
    let wiener = sample_wiener(grid, cfg.wiener_dim, seed(StreamTag::Wiener));
    let jumps = sample_jumps(cfg.horizon, &cfg.jump_law, seed(StreamTag::Jumps), seed(StreamTag::Marks));
    (wiener, jumps)
}

/// FNV-1a digest of the grid, increments and events; used to check that
/// objects handed to the ledger were built from the same noise.
pub fn noise_id(wiener: &WienerPath, jumps: &JumpStream) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bits: u64| {
        for b in bits.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    let g = wiener.grid;
    eat(g.t0.to_bits());
    eat(g.end.to_bits());
    eat(g.steps as u64);
    eat(wiener.dim as u64);
    wiener.increments.iter().for_each(|v| eat(v.to_bits()));
    for e in &jumps.events {
        eat(e.time.to_bits());
        e.mark.iter().for_each(|v| eat(v.to_bits()));
    }
    h
}

/// Writes a text dump of one noise realization.
///
/// Layout: a `noise-path v1` line, a header line
/// `t0 <t0> end <end> steps <M> wiener_dim <m> mark_dim <n'> events <N>`,
/// then `M` lines of `m` increments, then `N` lines of `time mark_1 … mark_n'`.
/// Floats use the shortest representation that reads back bit-exactly.
pub fn write_noise_dump<W: Write>(out: &mut W, wiener: &WienerPath, jumps: &JumpStream) -> std::io::Result<()> {
    let g = wiener.grid;
    let mark_dim = jumps.events.first().map_or(0, |e| e.mark.len());
    writeln!(out, "noise-path v1")?;
    writeln!(
        out,
        "t0 {} end {} steps {} wiener_dim {} mark_dim {} events {}",
        g.t0,
        g.end,
        g.steps,
        wiener.dim,
        mark_dim,
        jumps.events.len()
    )?;
    for row in wiener.increments.chunks_exact(wiener.dim.max(1)) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    for e in &jumps.events {
        let mut line = vec![e.time.to_string()];
        line.extend(e.mark.iter().map(f64::to_string));
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Reads a dump produced by [`write_noise_dump`].
pub fn read_noise_dump<R: BufRead>(input: R) -> Result<(WienerPath, JumpStream), ConfigError> {
    let bad = |msg: &str| ConfigError::Parse(format!("noise dump: {msg}"));
    let mut lines = input.lines();
    let mut next = || -> Result<String, ConfigError> {
        lines
            .next()
            .ok_or_else(|| bad("unexpected end of file"))?
            .map_err(|e| bad(&e.to_string()))
    };
    if next()?.trim() != "noise-path v1" {
        return Err(bad("missing `noise-path v1` magic line"));
    }
    let header = next()?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 12 {
        return Err(bad("malformed header"));
    }
    let field = |key: &str| -> Result<&str, ConfigError> {
        tok.chunks(2)
            .find(|kv| kv[0] == key)
            .map(|kv| kv[1])
            .ok_or_else(|| bad(&format!("header lacks `{key}`")))
    };
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad integer `{s}`")));
    let t0 = num(field("t0")?)?;
    let end = num(field("end")?)?;
    let steps = int(field("steps")?)?;
    let dim = int(field("wiener_dim")?)?;
    let mark_dim = int(field("mark_dim")?)?;
    let n_events = int(field("events")?)?;
    if steps == 0 || !(end > t0) {
        return Err(bad("empty grid"));
    }

    let mut increments = Vec::with_capacity(steps * dim);
    for _ in 0..steps {
        let row = next()?;
        let vals: Vec<f64> = row.split_whitespace().map(num).collect::<Result<_, _>>()?;
        if vals.len() != dim {
            return Err(bad("increment row has wrong length"));
        }
        increments.extend(vals);
    }
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        let row = next()?;
        let vals: Vec<f64> = row.split_whitespace().map(num).collect::<Result<_, _>>()?;
        if vals.len() != mark_dim + 1 {
            return Err(bad("event row has wrong length"));
        }
        events.push(JumpEvent {
            time: vals[0],
            mark: vals[1..].to_vec(),
        });
    }
    let grid = TimeGrid {
        t0,
        end,
        dt: (end - t0) / steps as f64,
        steps,
    };
    Ok((
        WienerPath { grid, dim, increments },
        JumpStream { start: t0, end, events },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn law(intensity: f64) -> MarkDistribution {
        MarkDistribution {
            intensity,
            marks: MarkSampler::UniformBox {
                low: vec![-1.0, 0.0],
                high: vec![1.0, 2.0],
            },
        }
    }

    #[test]
    fn wiener_is_deterministic_in_seed() {
        let g = TimeGrid::uniform(1.0, 128);
        let a = sample_wiener(g, 2, 99);
        let b = sample_wiener(g, 2, 99);
        assert!(a.increments.iter().zip(&b.increments).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, sample_wiener(g, 2, 100));
    }

    #[test]
    fn full_coarsening_gives_total_increment() {
        let g = TimeGrid::uniform(2.0, 64);
        let p = sample_wiener(g, 3, 5);
        let c = coarsen_wiener(&p, 64).unwrap();
        assert_eq!(c.grid.steps(), 1);
        for (a, b) in c.increment(0).iter().zip(p.total()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn coarsening_rejects_non_divisors() {
        let p = sample_wiener(TimeGrid::uniform(1.0, 12), 1, 1);
        assert_eq!(coarsen_wiener(&p, 5).unwrap_err(), FactorMismatch { factor: 5, steps: 12 });
        assert!(coarsen_wiener(&p, 0).is_err());
    }

    #[test]
    fn zero_intensity_gives_no_events() {
        assert!(sample_jumps(3.0, &law(0.0), 1, 2).events.is_empty());
    }

    #[test]
    fn jump_streams_are_well_formed_and_deterministic() {
        let a = sample_jumps(3.0, &law(5.0), 11, 12);
        assert!(a.is_well_formed());
        assert_eq!(a, sample_jumps(3.0, &law(5.0), 11, 12));
        assert!(a.events.iter().all(|e| e.mark[1] >= 0.0 && e.mark[1] <= 2.0));
    }

    #[test]
    fn discrete_atoms_follow_weights() {
        let sampler = MarkSampler::DiscreteAtoms {
            atoms: vec![vec![-1.0], vec![2.0]],
            weights: vec![0.25, 0.75],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40_000;
        let hits = (0..n).filter(|_| sampler.sample(&mut rng)[0] == 2.0).count() as f64;
        let p = hits / n as f64;
        // 4 sigma band around 0.75
        assert!((p - 0.75).abs() < 4.0 * (0.75f64 * 0.25 / n as f64).sqrt(), "{p}");
    }

    #[test]
    fn dump_round_trips_bit_exactly() {
        let g = TimeGrid::uniform(1.0, 16);
        let w = sample_wiener(g, 2, 8);
        let j = sample_jumps(1.0, &law(4.0), 1, 2);
        let mut buf = Vec::new();
        write_noise_dump(&mut buf, &w, &j).unwrap();
        let (w2, j2) = read_noise_dump(buf.as_slice()).unwrap();
        assert_eq!(w, w2);
        assert_eq!(j, j2);
        assert_eq!(noise_id(&w, &j), noise_id(&w2, &j2));
    }

    #[test]
    fn dump_rejects_garbage() {
        assert!(read_noise_dump("hello\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn coarsening_telescopes(seed in any::<u64>(), dim in 1usize..4, e1 in 0u32..4, e2 in 0u32..4) {
            let steps = 1usize << 6;
            let p = sample_wiener(TimeGrid::uniform(1.0, steps), dim, seed);
            let f1 = 1usize << e1;
            let f2 = 1usize << e2;
            let chained = coarsen_wiener(&coarsen_wiener(&p, f1).unwrap(), f2).unwrap();
            let direct = coarsen_wiener(&p, f1 * f2).unwrap();
            prop_assert_eq!(chained.grid.steps(), direct.grid.steps());
            let scale: f64 = p.increments.iter().map(|v| v.abs()).sum::<f64>();
            for (a, b) in chained.increments.iter().zip(&direct.increments) {
                prop_assert!((a - b).abs() <= 1e-15 * scale);
            }
            for (a, b) in chained.total().iter().zip(p.total()) {
                prop_assert!((a - b).abs() <= 1e-15 * scale);
            }
        }
    }
}
