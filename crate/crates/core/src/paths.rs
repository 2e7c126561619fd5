//! Exact-in-law simulation of finite-activity Lévy paths on a time grid.
//!
//! Jump epochs are drawn in continuous time (exponential interarrivals per
//! component) and inserted into the grid, so every jump is recorded at its
//! true epoch. Between grid points only the Gaussian-plus-drift increment is
//! sampled; its law is exact.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{input, Error, Result};
use crate::exponents::LevyModel;

/// Two times closer than this are considered the same grid point.
pub const TIME_TOLERANCE: f64 = 1e-12;

/// Strictly increasing list of times from 0 to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// `0, dt, 2dt, ...` up to `horizon`; the last step is shortened if
    /// `horizon` is not a multiple of `dt`.
    pub fn uniform(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return input(format!("horizon must be > 0, got {horizon}"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return input(format!("dt must be > 0, got {dt}"));
        }
        let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
        let mut times: Vec<f64> = (0..steps).map(|i| i as f64 * dt).collect();
        times.push(horizon);
        Ok(Self { times })
    }

    /// Builds a grid from explicit points, which must start at 0 and increase strictly.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return input("grid needs at least two points and must start at 0");
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return input("grid times must be finite and strictly increasing");
        }
        Ok(Self { times })
    }

    /// Merges `extra` (sorted or not) into the grid. Points within
    /// [`TIME_TOLERANCE`] of an existing point are dropped.
    pub fn refine(&self, extra: &[f64]) -> Result<Self> {
        let horizon = self.horizon();
        if let Some(t) = extra
            .iter()
            .find(|&&t| !(t.is_finite() && t >= -TIME_TOLERANCE && t <= horizon + TIME_TOLERANCE))
        {
            return input(format!("time {t} lies outside [0, {horizon}]"));
        }
        if extra.is_empty() {
            return Ok(self.clone());
        }
        let mut extra = extra.to_vec();
        extra.sort_by(f64::total_cmp);
        let mut out = Vec::with_capacity(self.times.len() + extra.len());
        let (mut i, mut j) = (0, 0);
        let push = |out: &mut Vec<f64>, t: f64| match out.last() {
            Some(&last) if t - last <= TIME_TOLERANCE => {}
            _ => out.push(t),
        };
        while i < self.times.len() || j < extra.len() {
            let take_grid = j >= extra.len()
                || (i < self.times.len() && self.times[i] <= extra[j] + TIME_TOLERANCE);
            if take_grid {
                // grid points win ties, so existing points never move
                if let Some(&last) = out.last() {
                    if self.times[i] - last <= TIME_TOLERANCE {
                        out.pop();
                    }
                }
                out.push(self.times[i]);
                i += 1;
            } else {
                push(&mut out, extra[j].clamp(0.0, horizon));
                j += 1;
            }
        }
        Ok(Self { times: out })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    /// Index of the grid point equal to `t` (within tolerance).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t - TIME_TOLERANCE);
        (i < self.times.len() && (self.times[i] - t).abs() <= TIME_TOLERANCE).then_some(i)
    }

    /// Index of the last grid point `<= t`.
    pub fn index_at_or_before(&self, t: f64) -> usize {
        self.times
            .partition_point(|&s| s <= t + TIME_TOLERANCE)
            .saturating_sub(1)
    }
}

/// Deterministic derivation of independent RNG streams.
///
/// The seed of a stream is the SHA-256 digest of `(base_seed, replication,
/// label)`, so streams with different labels are independent and adding a
/// new consumer never perturbs existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPolicy {
    pub base_seed: u64,
    pub replication: u64,
}

impl SeedPolicy {
    pub fn new(base_seed: u64, replication: u64) -> Self {
        Self {
            base_seed,
            replication,
        }
    }

    pub fn stream_seed(&self, label: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.base_seed.to_le_bytes());
        h.update(self.replication.to_le_bytes());
        h.update(label.as_bytes());
        h.finalize().into()
    }

    pub fn rng(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.stream_seed(label))
    }
}

/// A recorded jump of a path at grid index `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub index: usize,
    pub time: f64,
    pub delta: Vec<f64>,
    /// Jump component that produced it (the first one on a float collision).
    pub component: usize,
}

/// Simulated càdlàg path `X` observed on a grid, with its jumps.
#[derive(Debug, Clone)]
pub struct SamplePath {
    grid: Arc<TimeGrid>,
    dim: usize,
    /// Row-major `n x K`, post-jump values.
    values: Vec<f64>,
    jumps: Vec<JumpRecord>,
    /// Row-major `K x K` covariance of the Gaussian part.
    covariance: Vec<f64>,
}

impl SamplePath {
    /// Assembles a path from explicit values, e.g. a hand-built test path.
    /// `values` is row-major `n x dim`; jumps must sit on grid points.
    pub fn from_parts(
        grid: Arc<TimeGrid>,
        dim: usize,
        values: Vec<f64>,
        jumps: Vec<JumpRecord>,
        covariance: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != grid.len() * dim || covariance.len() != dim * dim {
            return input("path values/covariance do not match grid and dimension");
        }
        if values[..dim].iter().any(|&v| v != 0.0) {
            return input("path must start at 0");
        }
        for j in &jumps {
            if j.index == 0 || j.index >= grid.len() || j.delta.len() != dim {
                return input(format!("jump at index {} is malformed", j.index));
            }
            if (grid.times()[j.index] - j.time).abs() > TIME_TOLERANCE {
                return input(format!("jump time {} is not the grid point at its index", j.time));
            }
        }
        if jumps.windows(2).any(|w| w[1].index <= w[0].index) {
            return input("jumps must be sorted by index without repeats");
        }
        Ok(Self {
            grid,
            dim,
            values,
            jumps,
            covariance,
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `X(t_i)`.
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn jumps(&self) -> &[JumpRecord] {
        &self.jumps
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn jump_at(&self, i: usize) -> Option<&JumpRecord> {
        self.jumps
            .binary_search_by_key(&i, |j| j.index)
            .ok()
            .map(|k| &self.jumps[k])
    }

    /// `X(t_i-)`: the post-jump value minus the jump recorded there.
    pub fn left_limit(&self, i: usize) -> Vec<f64> {
        let mut v = self.value(i).to_vec();
        if let Some(j) = self.jump_at(i) {
            for (x, d) in v.iter_mut().zip(&j.delta) {
                *x -= d;
            }
        }
        v
    }

    /// Sum of all recorded jumps per coordinate.
    pub fn jump_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for j in &self.jumps {
            for (a, d) in s.iter_mut().zip(&j.delta) {
                *a += d;
            }
        }
        s
    }

    /// CSV with columns `t, X_1..X_K, is_jump, dX_1..dX_K`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.dim;
        let mut header = vec!["t".to_string()];
        header.extend((1..=k).map(|i| format!("X_{i}")));
        header.push("is_jump".into());
        header.extend((1..=k).map(|i| format!("dX_{i}")));
        writeln!(w, "{}", header.join(","))?;
        let mut cursor = 0;
        for (i, &t) in self.grid.times().iter().enumerate() {
            let jump = match self.jumps.get(cursor) {
                Some(j) if j.index == i => {
                    cursor += 1;
                    Some(j)
                }
                _ => None,
            };
            let mut row = vec![fmt_f64(t)];
            row.extend(self.value(i).iter().map(|&v| fmt_f64(v)));
            row.push(if jump.is_some() { "1" } else { "0" }.into());
            match jump {
                Some(j) => row.extend(j.delta.iter().map(|&v| fmt_f64(v))),
                None => row.extend(std::iter::repeat_n("0".to_string(), k)),
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Float formatting used in every CSV: 17 significant digits, `.` decimal.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.16e}")
    }
}

/// Raw jump epochs of all components on `[0, horizon]`, sorted, with exact
/// float collisions merged.
pub fn simulate_jump_epochs(
    model: &LevyModel,
    horizon: f64,
    seed: &SeedPolicy,
) -> Result<Vec<(f64, Vec<f64>, usize)>> {
    let k = model.dim();
    let mut events: Vec<(f64, Vec<f64>, usize)> = Vec::new();
    for (c, comp) in model.jumps().iter().enumerate() {
        let mut rng = seed.rng(&format!("jumps/{c}"));
        let wait = Exp::new(comp.rate).map_err(|e| Error::Model(e.to_string()))?;
        let mut t = 0.0;
        loop {
            t += wait.sample(&mut rng);
            if t > horizon {
                break;
            }
            let mut delta = vec![0.0; k];
            comp.law.sample_into(&mut rng, &mut delta);
            events.push((t, delta, c));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    let mut merged: Vec<(f64, Vec<f64>, usize)> = Vec::with_capacity(events.len());
    for e in events {
        match merged.last_mut() {
            Some(last) if e.0 - last.0 <= TIME_TOLERANCE => {
                for (a, d) in last.1.iter_mut().zip(&e.1) {
                    *a += d;
                }
            }
            _ => merged.push(e),
        }
    }
    Ok(merged)
}

/// Simulates `X` on `grid` refined with its own jump epochs.
pub fn simulate_levy(model: &LevyModel, grid: &TimeGrid, seed: &SeedPolicy) -> Result<SamplePath> {
    let k = model.dim();
    let horizon = grid.horizon();
    let events = simulate_jump_epochs(model, horizon, seed)?;
    let epochs: Vec<f64> = events.iter().map(|e| e.0).collect();
    let grid = Arc::new(grid.refine(&epochs)?);
    let times = grid.times();
    let n = times.len();

    let mut jumps = Vec::with_capacity(events.len());
    for (t, delta, component) in events {
        let index = grid
            .index_of(t)
            .ok_or_else(|| Error::Internal(format!("jump epoch {t} missing from refined grid")))?;
        // a collision with an already-recorded index can only come from tolerance merging
        match jumps.last_mut() {
            Some(JumpRecord { index: last, delta: d, .. }) if *last == index => {
                for (a, b) in d.iter_mut().zip(&delta) {
                    *a += b;
                }
            }
            _ => jumps.push(JumpRecord {
                index,
                time: times[index],
                delta,
                component,
            }),
        }
    }

    let factor = model.covariance_factor();
    let gaussian = model.has_gaussian_part();
    let drift = model.drift();
    let mut rng = seed.rng("brownian");
    let mut values = vec![0.0; n * k];
    let mut normals = vec![0.0; k];
    let mut cursor = 0;
    for i in 0..n - 1 {
        let dt = times[i + 1] - times[i];
        let (prev, next) = values.split_at_mut((i + 1) * k);
        let prev = &prev[i * k..];
        let next = &mut next[..k];
        for c in 0..k {
            next[c] = prev[c] + drift[c] * dt;
        }
        if gaussian {
            let sd = dt.sqrt();
            for z in normals.iter_mut() {
                *z = StandardNormal.sample(&mut rng);
            }
            for r in 0..k {
                let mut s = 0.0;
                for c in 0..k {
                    s += factor[r * k + c] * normals[c];
                }
                next[r] += s * sd;
            }
        }
        if let Some(j) = jumps.get(cursor) {
            if j.index == i + 1 {
                for c in 0..k {
                    next[c] += j.delta[c];
                }
                cursor += 1;
            }
        }
    }

    Ok(SamplePath {
        grid,
        dim: k,
        values,
        jumps,
        covariance: model.covariance().to_vec(),
    })
}
