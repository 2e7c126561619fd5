//! Bounded adapted integrands `I(t)` and the pathwise stochastic integral
//! `X̃(t) = Σ_k ∫_(0,t] I_k(s-) dX_k(s)`.
//!
//! All supported integrands are piecewise constant with finitely many switch
//! epochs. Once those epochs are grid points, the integral over a grid step
//! is `I(t_i)' (X(t_{i+1}) - X(t_i))`, with the pre-switch level multiplying a
//! jump that coincides with a switch.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::exponents::LevyModel;
use crate::paths::{SamplePath, SeedPolicy, TimeGrid, TIME_TOLERANCE};

/// Validated generator matrix of a finite continuous-time Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    rows: Vec<Vec<f64>>,
}

impl Generator {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return input("generator needs at least one state");
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return input(format!("generator row {i} has length {}, expected {n}", r.len()));
            }
            if r.iter().any(|q| !q.is_finite()) {
                return input(format!("generator row {i} is not finite"));
            }
            for (j, &q) in r.iter().enumerate() {
                if i != j && q < 0.0 {
                    return input(format!("generator entry ({i}, {j}) is negative"));
                }
            }
            let s: f64 = r.iter().sum();
            let scale = r.iter().map(|q| q.abs()).fold(1.0, f64::max);
            if s.abs() > 1e-9 * scale {
                return input(format!("generator row {i} sums to {s}, not 0"));
            }
        }
        Ok(Self { rows })
    }

    pub fn states(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Total exit rate of state `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        self.rows[i]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| q)
            .sum()
    }

    /// True iff every state can reach every other one.
    pub fn is_irreducible(&self) -> bool {
        let n = self.states();
        (0..n).all(|start| {
            let mut seen = vec![false; n];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    if !seen[j] && self.rows[i][j] > 0.0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.iter().all(|&s| s)
        })
    }

    /// Solves `pi Q = 0`, `Σ pi = 1`. Requires an irreducible generator.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        if !self.is_irreducible() {
            return Err(Error::Config("generator is not irreducible (nonergodic chain)".into()));
        }
        let n = self.states();
        if n == 1 {
            return Ok(vec![1.0]);
        }
        // Q^T pi = 0 with the last equation replaced by normalization.
        let mut a = DMatrix::from_fn(n, n, |i, j| self.rows[j][i]);
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::zeros(n);
        b[n - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Internal("singular stationary system".into()))?;
        Ok(pi.iter().map(|p| p.max(0.0)).collect())
    }
}

/// Right-continuous piecewise-constant state path of a CTMC.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcPath {
    /// `epochs[0] = 0`; state `states[m]` holds on `[epochs[m], epochs[m+1])`.
    pub epochs: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl CtmcPath {
    pub fn state_at(&self, t: f64) -> usize {
        let m = self.epochs.partition_point(|&e| e <= t).saturating_sub(1);
        self.states[m]
    }

    /// Time spent in each state on `[0, horizon]`.
    pub fn occupation(&self, n_states: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n_states];
        for (m, &s) in self.states.iter().enumerate() {
            let end = self.epochs.get(m + 1).copied().unwrap_or(self.horizon);
            occ[s] += end - self.epochs[m];
        }
        occ
    }
}

/// Jump-chain / holding-time simulation on `[0, horizon]`.
pub fn simulate_ctmc<R: Rng + ?Sized>(
    generator: &Generator,
    initial: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<CtmcPath> {
    if initial >= generator.states() {
        return input(format!("initial state {initial} out of range"));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return input(format!("horizon must be > 0, got {horizon}"));
    }
    let mut epochs = vec![0.0];
    let mut states = vec![initial];
    let mut t = 0.0;
    let mut state = initial;
    loop {
        let rate = generator.exit_rate(state);
        if rate <= 0.0 {
            break;
        }
        t += Exp::new(rate).expect("positive rate").sample(rng);
        if t > horizon {
            break;
        }
        let mut u = rng.random::<f64>() * rate;
        let row = &generator.rows[state];
        let mut next = state;
        for (j, &q) in row.iter().enumerate() {
            if j == state || q <= 0.0 {
                continue;
            }
            next = j;
            if u < q {
                break;
            }
            u -= q;
        }
        state = next;
        epochs.push(t);
        states.push(state);
    }
    Ok(CtmcPath {
        epochs,
        states,
        horizon,
    })
}

/// A bounded piecewise-constant integrand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegrandSpec {
    Constant {
        levels: Vec<f64>,
    },
    /// `levels[m]` holds on `[breakpoints[m-1], breakpoints[m])`; there is one
    /// more level than breakpoints.
    Piecewise {
        breakpoints: Vec<f64>,
        levels: Vec<Vec<f64>>,
    },
    /// `I(t) = levels[J(t)]` for a CTMC `J` with the given generator.
    MarkovModulated {
        generator: Vec<Vec<f64>>,
        initial_state: usize,
        levels: Vec<Vec<f64>>,
    },
}

impl IntegrandSpec {
    pub fn constant(levels: Vec<f64>) -> Self {
        IntegrandSpec::Constant { levels }
    }

    /// Distinct level vectors, indexed as in the realized [`IntegrandPath`].
    pub fn level_set(&self) -> Vec<Vec<f64>> {
        match self {
            IntegrandSpec::Constant { levels } => vec![levels.clone()],
            IntegrandSpec::Piecewise { levels, .. } | IntegrandSpec::MarkovModulated { levels, .. } => {
                levels.clone()
            }
        }
    }

    /// `sup_t ||I(t)||`.
    pub fn bound(&self) -> f64 {
        self.level_set()
            .iter()
            .map(|l| l.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.level_set().iter().flatten().all(|&x| x >= 0.0)
    }

    pub fn generator(&self) -> Result<Option<Generator>> {
        match self {
            IntegrandSpec::MarkovModulated { generator, .. } => Ok(Some(Generator::new(generator.clone())?)),
            _ => Ok(None),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let levels = self.level_set();
        if levels.is_empty() {
            return input("integrand needs at least one level");
        }
        for (i, l) in levels.iter().enumerate() {
            if l.len() != dim {
                return input(format!("levels[{i}] has length {}, expected {dim}", l.len()));
            }
            if l.iter().any(|x| !x.is_finite()) {
                return input(format!("levels[{i}] must be finite"));
            }
        }
        match self {
            IntegrandSpec::Constant { .. } => {}
            IntegrandSpec::Piecewise { breakpoints, levels } => {
                if levels.len() != breakpoints.len() + 1 {
                    return input("piecewise integrand needs one more level than breakpoints");
                }
                if breakpoints.iter().any(|b| !(b.is_finite() && *b > 0.0))
                    || breakpoints.windows(2).any(|w| w[1] <= w[0])
                {
                    return input("breakpoints must be positive and strictly increasing");
                }
            }
            IntegrandSpec::MarkovModulated {
                generator,
                initial_state,
                levels,
            } => {
                let g = Generator::new(generator.clone())?;
                if g.states() != levels.len() {
                    return input(format!(
                        "generator has {} states but {} levels are given",
                        g.states(),
                        levels.len()
                    ));
                }
                if *initial_state >= g.states() {
                    return input(format!("initial_state {initial_state} out of range"));
                }
            }
        }
        Ok(())
    }

    /// Long-run time average of `I`, i.e. the vector `beta` with
    /// `(1/t) ∫ I(s) ds -> beta`.
    pub fn time_average(&self) -> Result<Vec<f64>> {
        match self {
            IntegrandSpec::Constant { levels } => Ok(levels.clone()),
            IntegrandSpec::Piecewise { levels, .. } => Ok(levels.last().cloned().unwrap_or_default()),
            IntegrandSpec::MarkovModulated { generator, levels, .. } => {
                let pi = Generator::new(generator.clone())?.stationary_distribution()?;
                let k = levels[0].len();
                let mut beta = vec![0.0; k];
                for (p, l) in pi.iter().zip(levels) {
                    for (b, x) in beta.iter_mut().zip(l) {
                        *b += p * x;
                    }
                }
                Ok(beta)
            }
        }
    }

    /// Draws the modulating process (if any) and returns the realized path.
    /// Uses the `"ctmc"` stream of `seed`, independent of the path streams.
    pub fn realize(&self, horizon: f64, seed: &SeedPolicy) -> Result<IntegrandPath> {
        let levels = self.level_set();
        match self {
            IntegrandSpec::Constant { .. } => Ok(IntegrandPath::new(levels, vec![0.0], vec![0], horizon)),
            IntegrandSpec::Piecewise { breakpoints, .. } => {
                let mut starts = vec![0.0];
                let mut idx = vec![0];
                for (m, &b) in breakpoints.iter().enumerate() {
                    if b < horizon {
                        starts.push(b);
                        idx.push(m + 1);
                    }
                }
                Ok(IntegrandPath::new(levels, starts, idx, horizon))
            }
            IntegrandSpec::MarkovModulated {
                generator,
                initial_state,
                ..
            } => {
                let g = Generator::new(generator.clone())?;
                let path = simulate_ctmc(&g, *initial_state, horizon, &mut seed.rng("ctmc"))?;
                Ok(IntegrandPath::new(levels, path.epochs, path.states, horizon))
            }
        }
    }
}

/// `α' L` for each row `L` of a stack of `L x K` level matrices: the
/// one-dimensional reduction of a matrix-valued integrand.
pub fn project_levels(alpha: &[f64], matrices: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    matrices
        .iter()
        .map(|rows| {
            let k = rows.first().map_or(0, Vec::len);
            (0..k)
                .map(|c| alpha.iter().zip(rows).map(|(a, r)| a * r[c]).sum())
                .collect()
        })
        .collect()
}

/// A realized integrand: piecewise constant, right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandPath {
    levels: Vec<Vec<f64>>,
    /// Start time of each segment, `starts[0] = 0`.
    starts: Vec<f64>,
    /// Level index of each segment.
    segment_level: Vec<usize>,
    horizon: f64,
}

impl IntegrandPath {
    pub fn new(levels: Vec<Vec<f64>>, starts: Vec<f64>, segment_level: Vec<usize>, horizon: f64) -> Self {
        Self {
            levels,
            starts,
            segment_level,
            horizon,
        }
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Switch epochs in `(0, horizon]`.
    pub fn switch_epochs(&self) -> &[f64] {
        &self.starts[1..]
    }

    fn segment(&self, t: f64, left_limit: bool) -> usize {
        let m = if left_limit {
            self.starts.partition_point(|&s| s < t - TIME_TOLERANCE)
        } else {
            self.starts.partition_point(|&s| s <= t + TIME_TOLERANCE)
        };
        m.saturating_sub(1)
    }

    /// Level index of `I(t)` (or `I(t-)` when `left_limit`).
    pub fn level_index(&self, t: f64, left_limit: bool) -> usize {
        self.segment_level[self.segment(t, left_limit)]
    }

    /// `I(t)`, or `I(t-)` when `left_limit`.
    pub fn evaluate(&self, t: f64, left_limit: bool) -> Result<&[f64]> {
        if !(t >= -TIME_TOLERANCE && t <= self.horizon + TIME_TOLERANCE) {
            return input(format!("time {t} outside [0, {}]", self.horizon));
        }
        Ok(&self.levels[self.level_index(t, left_limit)])
    }
}

/// A recorded jump `ΔX̃(τ) = I(τ-)' ΔX(τ)` of the integrated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratedJump {
    pub index: usize,
    pub delta: f64,
}

/// `X̃` on the grid of the driving path.
#[derive(Debug, Clone)]
pub struct IntegratedPath {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
    jumps: Vec<IntegratedJump>,
    /// Level index of `I(t_i)`, the level in force on `(t_i, t_{i+1}]`.
    level_at: Vec<u32>,
    levels: Vec<Vec<f64>>,
    /// `I' Σ I` per level: rate of `[X̃, X̃]^c`.
    qv_rates: Vec<f64>,
}

impl IntegratedPath {
    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn jumps(&self) -> &[IntegratedJump] {
        &self.jumps
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    /// Level index in force on step `(t_i, t_{i+1}]`.
    pub fn level_index(&self, i: usize) -> usize {
        self.level_at[i] as usize
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[self.level_at[i] as usize]
    }

    /// Rate of the continuous quadratic variation on step `(t_i, t_{i+1}]`.
    pub fn qv_rate(&self, i: usize) -> f64 {
        self.qv_rates[self.level_at[i] as usize]
    }

    pub fn qv_rates(&self) -> &[f64] {
        &self.qv_rates
    }

    pub fn jump_at(&self, i: usize) -> Option<f64> {
        self.jumps
            .binary_search_by_key(&i, |j| j.index)
            .ok()
            .map(|k| self.jumps[k].delta)
    }

    /// `X̃(t_i-)`.
    pub fn left_limit(&self, i: usize) -> f64 {
        self.values[i] - self.jump_at(i).unwrap_or(0.0)
    }
}

/// Pathwise `Σ_k ∫_(0,t] I_k(s-) dX_k(s)` on the grid of `x`.
///
/// Every switch epoch of `integrand` must already be a grid point of `x`;
/// refine the grid before simulating `x`.
pub fn stochastic_integral(integrand: &IntegrandPath, x: &SamplePath) -> Result<IntegratedPath> {
    let grid = x.grid().clone();
    let k = x.dim();
    if integrand.levels.iter().any(|l| l.len() != k) {
        return Err(Error::Internal("integrand levels do not match path dimension".into()));
    }
    if (integrand.horizon - grid.horizon()).abs() > TIME_TOLERANCE {
        return Err(Error::Internal("integrand and path horizons differ".into()));
    }
    for &s in integrand.switch_epochs() {
        if grid.index_of(s).is_none() {
            return Err(Error::Internal(format!("switch epoch {s} is not a grid point")));
        }
    }
    let n = grid.len();
    let times = grid.times();
    let mut level_at = Vec::with_capacity(n);
    let mut seg = 0;
    for &t in times {
        while seg + 1 < integrand.starts.len() && integrand.starts[seg + 1] <= t + TIME_TOLERANCE {
            seg += 1;
        }
        level_at.push(integrand.segment_level[seg] as u32);
    }

    let mut values = vec![0.0; n];
    for i in 0..n - 1 {
        let lvl = &integrand.levels[level_at[i] as usize];
        let (a, b) = (x.value(i), x.value(i + 1));
        let mut inc = 0.0;
        for c in 0..k {
            if lvl[c] != 0.0 {
                inc += lvl[c] * (b[c] - a[c]);
            }
        }
        values[i + 1] = values[i] + inc;
    }
    let jumps = x
        .jumps()
        .iter()
        .map(|j| {
            let lvl = &integrand.levels[level_at[j.index - 1] as usize];
            IntegratedJump {
                index: j.index,
                delta: lvl.iter().zip(&j.delta).map(|(a, d)| a * d).sum(),
            }
        })
        .collect();

    let cov = x.covariance();
    let qv_rates = integrand
        .levels
        .iter()
        .map(|l| {
            let mut s = 0.0;
            for r in 0..k {
                for c in 0..k {
                    s += l[r] * cov[r * k + c] * l[c];
                }
            }
            s
        })
        .collect();

    Ok(IntegratedPath {
        grid,
        values,
        jumps,
        level_at,
        levels: integrand.levels.clone(),
        qv_rates,
    })
}

/// Convenience: grid refined with the integrand's switch epochs and any
/// extra times (checkpoints, FV jump times).
pub fn prepare_grid(base: &TimeGrid, integrand: &IntegrandPath, extra: &[f64]) -> Result<TimeGrid> {
    let mut times = integrand.switch_epochs().to_vec();
    times.extend_from_slice(extra);
    base.refine(&times)
}

/// Checks a model/integrand pair before simulation.
pub fn check_compatible(model: &LevyModel, spec: &IntegrandSpec) -> Result<()> {
    spec.validate(model.dim())
}
