//! Pathwise evaluation of the Kella-Whitt martingale
//!
//! `M(t) = ∫φ(I)e^{-Z}ds + e^{-Z(0)} - e^{-Z(t)} - ∫e^{-Z}dY^c + Σ e^{-Z(s)}(1 - e^{ΔY(s)})`
//!
//! for `Z = X̃ + Y`, its complex counterpart, its quadratic variation and
//! the predictable compensator `∫ e^{-2Z} A ds`.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{input, precondition, Error, Result};
use crate::exponents::{compensator_rate, phi, phi_marginal, psi_complex, LevyModel};
use crate::integrands::{IntegrandPath, IntegratedPath};
use crate::paths::{fmt_f64, TimeGrid};
use crate::reflection::ReflectedPath;

/// A finite-variation term `Y(t) = Y(0) + drift * t + Σ_{τ <= t} ΔY(τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteVariationSpec {
    #[serde(default)]
    pub initial: f64,
    /// Slope of the continuous part `Y^c`.
    #[serde(default)]
    pub drift: f64,
    /// `(time, ΔY)` pairs.
    #[serde(default)]
    pub jumps: Vec<(f64, f64)>,
}

impl FiniteVariationSpec {
    pub fn constant(initial: f64) -> Self {
        Self {
            initial,
            drift: 0.0,
            jumps: Vec::new(),
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(self.initial.is_finite() && self.drift.is_finite()) {
            return input("finite-variation term must have finite initial value and drift");
        }
        for (k, &(t, d)) in self.jumps.iter().enumerate() {
            if !(t > 0.0 && t <= horizon && d.is_finite()) {
                return input(format!("y.jumps[{k}] must have time in (0, {horizon}] and finite size"));
            }
        }
        Ok(())
    }

    /// The same term multiplied by `beta`.
    pub fn scaled(&self, beta: f64) -> Self {
        Self {
            initial: beta * self.initial,
            drift: beta * self.drift,
            jumps: self.jumps.iter().map(|&(t, d)| (t, beta * d)).collect(),
        }
    }

    pub fn jump_times(&self) -> Vec<f64> {
        self.jumps.iter().map(|j| j.0).collect()
    }
}

#[derive(Debug, Clone)]
enum ContinuousPart {
    /// `Y^c` at the grid points; `∫e^{-Z}dY^c` by left-endpoint sums.
    Explicit(Vec<f64>),
    /// `Y^c = L^c` of a reflection: it increases only while `Z = 0`, so
    /// `∫ e^{-Z} dL^c = L^c`.
    Regulator(Vec<f64>),
}

/// `Z = X̃ + Y` together with the decomposition of `Y`.
#[derive(Debug, Clone)]
pub struct StoragePath {
    grid: Arc<TimeGrid>,
    z: Vec<f64>,
    yc: ContinuousPart,
    /// `(grid index, ΔY)`, sorted by index.
    y_jumps: Vec<(usize, f64)>,
}

impl StoragePath {
    /// `Y = z0 + L` from a reflection of `xt`.
    pub fn from_reflection(xt: &IntegratedPath, r: &ReflectedPath) -> Result<Self> {
        if !Arc::ptr_eq(xt.grid(), r.grid()) && xt.grid().times() != r.grid().times() {
            return Err(Error::Internal("reflection and integral grids differ".into()));
        }
        Ok(Self {
            grid: xt.grid().clone(),
            z: r.z().to_vec(),
            yc: ContinuousPart::Regulator(r.l_continuous()),
            y_jumps: r.regulator_jumps().to_vec(),
        })
    }

    /// `Z = X̃ + Y` with an explicit finite-variation term whose jump times
    /// are grid points.
    pub fn from_finite_variation(xt: &IntegratedPath, y: &FiniteVariationSpec) -> Result<Self> {
        let grid = xt.grid().clone();
        y.validate(grid.horizon())?;
        let mut y_jumps: Vec<(usize, f64)> = Vec::with_capacity(y.jumps.len());
        for &(t, d) in &y.jumps {
            let i = grid
                .index_of(t)
                .ok_or_else(|| Error::Internal(format!("jump time {t} of Y is not a grid point")))?;
            y_jumps.push((i, d));
        }
        y_jumps.sort_by_key(|j| j.0);
        y_jumps.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        let times = grid.times();
        let yc: Vec<f64> = times.iter().map(|t| y.drift * t).collect();
        let mut z = Vec::with_capacity(times.len());
        let mut jumps = y_jumps.iter().peekable();
        let mut yd = 0.0;
        for (i, &c) in yc.iter().enumerate() {
            while let Some(&&(j, d)) = jumps.peek() {
                if j > i {
                    break;
                }
                yd += d;
                jumps.next();
            }
            z.push(xt.value(i) + y.initial + c + yd);
        }
        Ok(Self {
            grid,
            z,
            yc: ContinuousPart::Explicit(yc),
            y_jumps,
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn y_jumps(&self) -> &[(usize, f64)] {
        &self.y_jumps
    }

    pub fn is_regulated(&self) -> bool {
        matches!(self.yc, ContinuousPart::Regulator(_))
    }

    fn y_jump_at(&self, i: usize) -> f64 {
        self.y_jumps
            .binary_search_by_key(&i, |j| j.0)
            .map(|k| self.y_jumps[k].1)
            .unwrap_or(0.0)
    }

    /// `Z(t_i-)`.
    pub fn left_limit(&self, xt: &IntegratedPath, i: usize) -> f64 {
        self.z[i] - xt.jump_at(i).unwrap_or(0.0) - self.y_jump_at(i)
    }
}

/// The four terms of `M` and their sum at each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleDecomposition {
    pub times: Vec<f64>,
    pub term_phi: Vec<f64>,
    pub term_boundary: Vec<f64>,
    pub term_yc: Vec<f64>,
    pub term_jumps: Vec<f64>,
    pub total: Vec<f64>,
}

/// Complex counterpart of [`MartingaleDecomposition`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexMartingaleDecomposition {
    pub times: Vec<f64>,
    pub term_psi: Vec<Complex64>,
    pub term_boundary: Vec<Complex64>,
    pub term_yc: Vec<Complex64>,
    pub term_jumps: Vec<Complex64>,
    pub total: Vec<Complex64>,
}

/// `[M, M]` split into its continuous and jump parts, and the compensator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QVDecomposition {
    pub times: Vec<f64>,
    pub cont: Vec<f64>,
    pub jump: Vec<f64>,
    pub compensator: Vec<f64>,
}

impl QVDecomposition {
    pub fn total(&self, k: usize) -> f64 {
        self.cont[k] + self.jump[k]
    }
}

fn checkpoint_indices(grid: &TimeGrid, checkpoints: &[f64]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let i = grid
            .index_of(t)
            .ok_or_else(|| Error::Internal(format!("checkpoint {t} is not a grid point")))?;
        if out.last().is_some_and(|&p| p > i) {
            return input("checkpoints must be increasing");
        }
        out.push(i);
    }
    Ok(out)
}

fn check_inputs(xt: &IntegratedPath, storage: &StoragePath) -> Result<()> {
    if xt.grid().times() != storage.grid.times() {
        return Err(Error::Internal("storage and integral grids differ".into()));
    }
    Ok(())
}

fn check_real_preconditions(model: &LevyModel, xt: &IntegratedPath) -> Result<()> {
    if !model.spectrally_positive() {
        return precondition("the real form needs a model without negative jumps");
    }
    if xt.levels().iter().flatten().any(|&x| x < 0.0) {
        return precondition("the real form needs a nonnegative integrand");
    }
    Ok(())
}

/// Accumulates `Σ_{i < c} w(i) dt_i` and `Σ_{jump index <= c} j(i)` at each
/// checkpoint index `c`.
fn accumulate<S, V>(
    grid: &TimeGrid,
    cps: &[usize],
    zero: V,
    mut step: S,
) -> Vec<V>
where
    S: FnMut(usize, f64) -> V,
    V: Copy + std::ops::AddAssign,
{
    let times = grid.times();
    let mut out = Vec::with_capacity(cps.len());
    let mut acc = zero;
    let mut i = 0;
    for &c in cps {
        while i < c {
            acc += step(i, times[i + 1] - times[i]);
            i += 1;
        }
        out.push(acc);
    }
    out
}

fn jump_sums<V, F>(jumps: &[(usize, f64)], cps: &[usize], zero: V, mut f: F) -> Vec<V>
where
    F: FnMut(usize, f64) -> V,
    V: Copy + std::ops::AddAssign,
{
    let mut out = Vec::with_capacity(cps.len());
    let mut acc = zero;
    let mut k = 0;
    for &c in cps {
        while k < jumps.len() && jumps[k].0 <= c {
            acc += f(jumps[k].0, jumps[k].1);
            k += 1;
        }
        out.push(acc);
    }
    out
}

fn term_yc_real(storage: &StoragePath, cps: &[usize]) -> Vec<f64> {
    match &storage.yc {
        ContinuousPart::Regulator(lc) => cps.iter().map(|&c| -lc[c]).collect(),
        ContinuousPart::Explicit(yc) => {
            accumulate(&storage.grid, cps, 0.0, |i, _| -(-storage.z[i]).exp() * (yc[i + 1] - yc[i]))
        }
    }
}

fn assemble(
    times: Vec<f64>,
    term_phi: Vec<f64>,
    storage: &StoragePath,
    cps: &[usize],
    term_yc: Vec<f64>,
    term_jumps: Vec<f64>,
) -> MartingaleDecomposition {
    let e0 = (-storage.z[0]).exp();
    let term_boundary: Vec<f64> = cps.iter().map(|&c| e0 - (-storage.z[c]).exp()).collect();
    let total = (0..cps.len())
        .map(|k| term_phi[k] + term_boundary[k] + term_yc[k] + term_jumps[k])
        .collect();
    MartingaleDecomposition {
        times,
        term_phi,
        term_boundary,
        term_yc,
        term_jumps,
        total,
    }
}

/// Real (Laplace) form of the martingale at each checkpoint.
pub fn kw_martingale_real(
    model: &LevyModel,
    xt: &IntegratedPath,
    storage: &StoragePath,
    checkpoints: &[f64],
) -> Result<MartingaleDecomposition> {
    check_real_preconditions(model, xt)?;
    check_inputs(xt, storage)?;
    let cps = checkpoint_indices(&storage.grid, checkpoints)?;
    let phis = xt
        .levels()
        .iter()
        .map(|l| phi(model, l))
        .collect::<Result<Vec<f64>>>()?;
    let term_phi = accumulate(&storage.grid, &cps, 0.0, |i, dt| {
        phis[xt.level_index(i)] * (-storage.z[i]).exp() * dt
    });
    let term_yc = term_yc_real(storage, &cps);
    let term_jumps = jump_sums(&storage.y_jumps, &cps, 0.0, |i, d| {
        (-storage.z[i]).exp() * -d.exp_m1()
    });
    Ok(assemble(checkpoints.to_vec(), term_phi, storage, &cps, term_yc, term_jumps))
}

/// Complex form with weights `ψ(α I(s))`, boundary terms `e^{iαZ}`,
/// `+iα∫e^{iαZ}dY^c` and jump terms `e^{iαZ(s)}(1 - e^{-iαΔY(s)})`.
pub fn kw_martingale_complex(
    model: &LevyModel,
    xt: &IntegratedPath,
    storage: &StoragePath,
    alpha: Complex64,
    checkpoints: &[f64],
) -> Result<ComplexMartingaleDecomposition> {
    if !(alpha.re.is_finite() && alpha.im.is_finite()) {
        return input(format!("alpha must be finite, got {alpha}"));
    }
    check_inputs(xt, storage)?;
    let cps = checkpoint_indices(&storage.grid, checkpoints)?;
    let i = Complex64::i();
    let zero = Complex64::new(0.0, 0.0);
    let psis = xt
        .levels()
        .iter()
        .map(|l| {
            let a: Vec<Complex64> = l.iter().map(|x| alpha * x).collect();
            psi_complex(model, &a)
        })
        .collect::<Result<Vec<Complex64>>>()?;
    let e = |z: f64| (i * alpha * z).exp();
    let z = &storage.z;
    let term_psi = accumulate(&storage.grid, &cps, zero, |k, dt| psis[xt.level_index(k)] * e(z[k]) * dt);
    let term_yc: Vec<Complex64> = match &storage.yc {
        ContinuousPart::Regulator(lc) => cps.iter().map(|&c| i * alpha * lc[c]).collect(),
        ContinuousPart::Explicit(yc) => {
            accumulate(&storage.grid, &cps, zero, |k, _| i * alpha * e(z[k]) * (yc[k + 1] - yc[k]))
        }
    };
    let term_jumps = jump_sums(&storage.y_jumps, &cps, zero, |k, d| e(z[k]) * (1.0 - (-i * alpha * d).exp()));
    let e0 = e(z[0]);
    let term_boundary: Vec<Complex64> = cps.iter().map(|&c| e0 - e(z[c])).collect();
    let total = (0..cps.len())
        .map(|k| term_psi[k] + term_boundary[k] + term_yc[k] + term_jumps[k])
        .collect();
    Ok(ComplexMartingaleDecomposition {
        times: checkpoints.to_vec(),
        term_psi,
        term_boundary,
        term_yc,
        term_jumps,
        total,
    })
}

/// Markov-modulated form: `I_k = α_k 1{J = k}`, `Z = X̃ + βY`, with
/// `∫φ(I)e^{-Z}ds = Σ_k φ_k(α_k) ∫ e^{-Z} 1{J = k} ds`.
#[allow(clippy::too_many_arguments)]
pub fn markov_modulated_martingale(
    model: &LevyModel,
    alphas: &[f64],
    j_path: &IntegrandPath,
    xt: &IntegratedPath,
    y: &FiniteVariationSpec,
    beta: f64,
    checkpoints: &[f64],
) -> Result<MartingaleDecomposition> {
    let k_states = model.dim();
    if alphas.len() != k_states || j_path.levels().len() != k_states {
        return input(format!(
            "{} states expected, got {} alphas and {} levels",
            k_states,
            alphas.len(),
            j_path.levels().len()
        ));
    }
    for (k, l) in j_path.levels().iter().enumerate() {
        let ok = l.iter().enumerate().all(|(c, &x)| x == if c == k { alphas[k] } else { 0.0 });
        if !ok {
            return input(format!("level {k} is not alpha_k times the k-th unit vector"));
        }
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return input(format!("beta must be >= 0, got {beta}"));
    }
    check_real_preconditions(model, xt)?;
    let storage = StoragePath::from_finite_variation(xt, &y.scaled(beta))?;
    let cps = checkpoint_indices(&storage.grid, checkpoints)?;
    let phis = (0..k_states)
        .map(|k| phi_marginal(model, k, alphas[k]))
        .collect::<Result<Vec<f64>>>()?;

    // occupation integrals ∫ e^{-Z} 1{J = k} ds per state
    let times = storage.grid.times();
    let mut occ = vec![0.0; k_states];
    let mut term_phi = Vec::with_capacity(cps.len());
    let mut i = 0;
    for &c in &cps {
        while i < c {
            occ[xt.level_index(i)] += (-storage.z[i]).exp() * (times[i + 1] - times[i]);
            i += 1;
        }
        term_phi.push(phis.iter().zip(&occ).map(|(p, o)| p * o).sum());
    }
    let term_yc = term_yc_real(&storage, &cps);
    let term_jumps = jump_sums(&storage.y_jumps, &cps, 0.0, |i, d| (-storage.z[i]).exp() * -d.exp_m1());
    Ok(assemble(checkpoints.to_vec(), term_phi, &storage, &cps, term_yc, term_jumps))
}

/// Quadratic variation of `M` and its compensator at each checkpoint.
pub fn quadratic_variation(
    model: &LevyModel,
    xt: &IntegratedPath,
    storage: &StoragePath,
    checkpoints: &[f64],
) -> Result<QVDecomposition> {
    check_real_preconditions(model, xt)?;
    check_inputs(xt, storage)?;
    let cps = checkpoint_indices(&storage.grid, checkpoints)?;
    let rates = xt
        .levels()
        .iter()
        .map(|l| compensator_rate(model, l))
        .collect::<Result<Vec<f64>>>()?;
    let z = &storage.z;
    let cont = accumulate(&storage.grid, &cps, 0.0, |i, dt| (-2.0 * z[i]).exp() * xt.qv_rate(i) * dt);
    let compensator = accumulate(&storage.grid, &cps, 0.0, |i, dt| {
        (-2.0 * z[i]).exp() * rates[xt.level_index(i)] * dt
    });
    let x_jumps: Vec<(usize, f64)> = xt.jumps().iter().map(|j| (j.index, j.delta)).collect();
    let jump = jump_sums(&x_jumps, &cps, 0.0, |i, d| {
        let zl = storage.left_limit(xt, i);
        (-2.0 * zl).exp() * (-d).exp_m1().powi(2)
    });
    Ok(QVDecomposition {
        times: checkpoints.to_vec(),
        cont,
        jump,
        compensator,
    })
}

/// Decomposition CSV: `t, term_phi, term_boundary, term_yc, term_jumps, M,
/// qv_cont, qv_jump, compensator`.
pub fn write_decomposition_csv<W: Write>(m: &MartingaleDecomposition, qv: &QVDecomposition, mut w: W) -> Result<()> {
    writeln!(w, "t,term_phi,term_boundary,term_yc,term_jumps,M,qv_cont,qv_jump,compensator")?;
    for k in 0..m.times.len() {
        let row = [
            m.times[k],
            m.term_phi[k],
            m.term_boundary[k],
            m.term_yc[k],
            m.term_jumps[k],
            m.total[k],
            qv.cont[k],
            qv.jump[k],
            qv.compensator[k],
        ];
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::{JumpComponent, JumpLaw};
    use crate::integrands::{prepare_grid, stochastic_integral, IntegrandSpec};
    use crate::paths::{simulate_levy, JumpRecord, SamplePath, SeedPolicy};
    use crate::reflection::skorokhod_reflect_bridged;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn poisson_model() -> LevyModel {
        LevyModel::scalar(0.0, 0.0, vec![JumpComponent::new(1.0, JumpLaw::PointMass { jump: vec![1.0] })]).unwrap()
    }

    fn single_jump_path(dt: f64) -> IntegratedPath {
        let grid = Arc::new(TimeGrid::uniform(1.0, dt).unwrap().refine(&[0.5]).unwrap());
        let j = grid.index_of(0.5).unwrap();
        let values: Vec<f64> = grid.times().iter().map(|&t| if t >= 0.5 - 1e-12 { 1.0 } else { 0.0 }).collect();
        let recs = vec![JumpRecord { index: j, time: 0.5, delta: vec![1.0], component: 0 }];
        let x = SamplePath::from_parts(grid, 1, values, recs, vec![0.0]).unwrap();
        let one = IntegrandSpec::constant(vec![1.0]).realize(1.0, &SeedPolicy::new(0, 0)).unwrap();
        stochastic_integral(&one, &x).unwrap()
    }

    fn drift_path(c: f64, horizon: f64, dt: f64, alpha: f64) -> IntegratedPath {
        let grid = Arc::new(TimeGrid::uniform(horizon, dt).unwrap());
        let values: Vec<f64> = grid.times().iter().map(|t| c * t).collect();
        let x = SamplePath::from_parts(grid, 1, values, vec![], vec![0.0]).unwrap();
        let lvl = IntegrandSpec::constant(vec![alpha]).realize(horizon, &SeedPolicy::new(0, 0)).unwrap();
        stochastic_integral(&lvl, &x).unwrap()
    }

    #[test]
    fn single_jump_hand_values() {
        let m = poisson_model();
        let xt = single_jump_path(0.01);
        let st = StoragePath::from_finite_variation(&xt, &FiniteVariationSpec::constant(0.0)).unwrap();
        let d = kw_martingale_real(&m, &xt, &st, &[1.0]).unwrap();
        let e1 = (-1.0f64).exp();
        assert_relative_eq!(d.term_phi[0], (e1 - 1.0) * (0.5 + 0.5 * e1), epsilon = 1e-12);
        assert_relative_eq!(d.term_boundary[0], 1.0 - e1, epsilon = 1e-15);
        assert_relative_eq!(d.total[0], 0.199_788_5, epsilon = 1e-6);
        assert_eq!(d.term_jumps[0], 0.0);
        let qv = quadratic_variation(&m, &xt, &st, &[0.25, 1.0]).unwrap();
        assert_eq!(qv.jump[0], 0.0);
        assert_relative_eq!(qv.jump[1], (1.0 - e1).powi(2), epsilon = 1e-15);
        assert_eq!(qv.cont[1], 0.0);
    }

    #[test]
    fn pure_drift_telescopes_at_first_order() {
        let m = LevyModel::scalar(-0.8, 0.0, vec![]).unwrap();
        let resid = |dt: f64| {
            let xt = drift_path(-0.8, 2.0, dt, 0.5);
            let st = StoragePath::from_finite_variation(&xt, &FiniteVariationSpec::constant(3.0)).unwrap();
            kw_martingale_real(&m, &xt, &st, &[2.0]).unwrap().total[0]
        };
        let (r1, r2, r3) = (resid(0.01), resid(0.005), resid(0.0025));
        assert!(r1.abs() < 1e-2);
        assert_relative_eq!(r1 / r2, 2.0, epsilon = 0.05);
        assert_relative_eq!(r2 / r3, 2.0, epsilon = 0.05);
    }

    #[test]
    fn zero_alpha_and_preconditions() {
        let m = poisson_model();
        let xt = single_jump_path(0.1);
        let st = StoragePath::from_finite_variation(&xt, &FiniteVariationSpec::constant(0.0)).unwrap();
        let d = kw_martingale_complex(&m, &xt, &st, Complex64::new(0.0, 0.0), &[0.5, 1.0]).unwrap();
        assert!(d.total.iter().all(|z| z.norm() == 0.0));
        assert!(kw_martingale_complex(&m, &xt, &st, Complex64::new(f64::NAN, 0.0), &[1.0]).is_err());
        assert!(kw_martingale_real(&m, &xt, &st, &[0.55]).is_err());

        let neg = LevyModel::scalar(0.0, 0.0, vec![JumpComponent::new(1.0, JumpLaw::PointMass { jump: vec![-1.0] })]).unwrap();
        assert!(matches!(kw_martingale_real(&neg, &xt, &st, &[1.0]), Err(Error::Precondition(_))));
        let xt_neg = drift_path(1.0, 1.0, 0.1, -1.0);
        let st_neg = StoragePath::from_finite_variation(&xt_neg, &FiniteVariationSpec::constant(0.0)).unwrap();
        assert!(matches!(
            kw_martingale_real(&LevyModel::zero(1), &xt_neg, &st_neg, &[1.0]),
            Err(Error::Precondition(_))
        ));
    }

    fn reflected_run(model: &LevyModel, seed: u64, horizon: f64) -> (IntegratedPath, StoragePath, ReflectedPath) {
        let seed = SeedPolicy::new(seed, 0);
        let one = IntegrandSpec::constant(vec![1.0]).realize(horizon, &seed).unwrap();
        let x = simulate_levy(model, &TimeGrid::uniform(horizon, 0.01).unwrap(), &seed).unwrap();
        let xt = stochastic_integral(&one, &x).unwrap();
        let r = skorokhod_reflect_bridged(0.0, &xt, &mut seed.rng("bridge")).unwrap();
        let st = StoragePath::from_reflection(&xt, &r).unwrap();
        (xt, st, r)
    }

    #[test]
    fn reflected_spectrally_positive_has_no_jump_term() {
        let m = LevyModel::scalar(-1.0, 0.0, vec![JumpComponent::new(0.5, JumpLaw::Exponential { coordinate: 0, rate: 1.0 })]).unwrap();
        let (xt, st, r) = reflected_run(&m, 3, 20.0);
        let d = kw_martingale_real(&m, &xt, &st, &[5.0, 20.0]).unwrap();
        assert!(d.term_jumps.iter().all(|&j| j == 0.0));
        assert_relative_eq!(d.term_yc[1], -r.l()[r.l().len() - 1], epsilon = 0.0);
    }

    #[test]
    fn complex_form_at_imaginary_unit_matches_real_form() {
        let m = LevyModel::scalar(-0.4, 0.6, vec![JumpComponent::new(0.8, JumpLaw::Exponential { coordinate: 0, rate: 2.0 })]).unwrap();
        let (xt, st, _) = reflected_run(&m, 9, 10.0);
        let cps = [1.0, 5.0, 10.0];
        let real = kw_martingale_real(&m, &xt, &st, &cps).unwrap();
        let cplx = kw_martingale_complex(&m, &xt, &st, Complex64::new(0.0, 1.0), &cps).unwrap();
        for k in 0..cps.len() {
            assert!((cplx.total[k].re - real.total[k]).abs() < 1e-10);
            assert!(cplx.total[k].im.abs() < 1e-10);
            assert!((cplx.term_psi[k].re - real.term_phi[k]).abs() < 1e-10);
            assert!((cplx.term_yc[k].re - real.term_yc[k]).abs() < 1e-10);
        }
        // same check on an explicit finite-variation term with jumps
        let y = FiniteVariationSpec { initial: 0.5, drift: 0.3, jumps: vec![(2.0, 0.7), (6.0, 1.1)] };
        let seed = SeedPolicy::new(9, 1);
        let one = IntegrandSpec::constant(vec![1.0]).realize(10.0, &seed).unwrap();
        let grid = prepare_grid(&TimeGrid::uniform(10.0, 0.01).unwrap(), &one, &y.jump_times()).unwrap();
        let x = simulate_levy(&m, &grid, &seed).unwrap();
        let xt = stochastic_integral(&one, &x).unwrap();
        let st = StoragePath::from_finite_variation(&xt, &y).unwrap();
        let real = kw_martingale_real(&m, &xt, &st, &cps).unwrap();
        let cplx = kw_martingale_complex(&m, &xt, &st, Complex64::new(0.0, 1.0), &cps).unwrap();
        assert!(real.term_jumps[2] != 0.0);
        for k in 0..cps.len() {
            assert!((cplx.total[k] - real.total[k]).norm() < 1e-10);
            assert!((cplx.term_jumps[k].re - real.term_jumps[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn brownian_qv_equals_compensator() {
        let m = LevyModel::scalar(-1.0, 1.0, vec![]).unwrap();
        let (xt, st, _) = reflected_run(&m, 4, 10.0);
        let qv = quadratic_variation(&m, &xt, &st, &[2.0, 10.0]).unwrap();
        assert_eq!(qv.cont, qv.compensator);
        assert!(qv.jump.iter().all(|&j| j == 0.0));

        let xt = drift_path(-1.0, 1.0, 0.1, 1.0);
        let st = StoragePath::from_finite_variation(&xt, &FiniteVariationSpec::constant(0.0)).unwrap();
        let qv = quadratic_variation(&LevyModel::scalar(-1.0, 0.0, vec![]).unwrap(), &xt, &st, &[1.0]).unwrap();
        assert_eq!((qv.cont[0], qv.jump[0], qv.compensator[0]), (0.0, 0.0, 0.0));
    }

    fn modulated_setup(seed: u64, alphas: [f64; 2]) -> (LevyModel, IntegrandPath, IntegratedPath) {
        let m = LevyModel::new(
            vec![-0.9, 0.0],
            vec![0.5, 0.0, 0.0, 0.0],
            vec![JumpComponent::new(1.2, JumpLaw::Exponential { coordinate: 1, rate: 1.0 })],
        )
        .unwrap();
        let spec = IntegrandSpec::MarkovModulated {
            generator: vec![vec![-1.0, 1.0], vec![2.0, -2.0]],
            initial_state: 0,
            levels: vec![vec![alphas[0], 0.0], vec![0.0, alphas[1]]],
        };
        let seed = SeedPolicy::new(seed, 0);
        let j = spec.realize(20.0, &seed).unwrap();
        let grid = prepare_grid(&TimeGrid::uniform(20.0, 0.01).unwrap(), &j, &[3.0, 10.0, 20.0]).unwrap();
        let x = simulate_levy(&m, &grid, &seed).unwrap();
        let xt = stochastic_integral(&j, &x).unwrap();
        (m, j, xt)
    }

    #[test]
    fn markov_modulated_form_is_a_refactoring() {
        let y = FiniteVariationSpec { initial: 2.0, drift: 0.9, jumps: vec![(3.0, 0.4), (10.0, 1.0)] };
        let (m, _, _) = modulated_setup(17, [1.0, 1.0]);
        let spec = IntegrandSpec::MarkovModulated {
            generator: vec![vec![-1.0, 1.0], vec![2.0, -2.0]],
            initial_state: 0,
            levels: vec![vec![0.7, 0.0], vec![0.0, 1.3]],
        };
        for beta in [0.0, 0.5, 1.0] {
            let seed = SeedPolicy::new(17, 0);
            let j = spec.realize(20.0, &seed).unwrap();
            let grid = prepare_grid(&TimeGrid::uniform(20.0, 0.01).unwrap(), &j, &[3.0, 10.0, 20.0]).unwrap();
            let x = simulate_levy(&m, &grid, &seed).unwrap();
            let xt = stochastic_integral(&j, &x).unwrap();
            let cps = [3.0, 10.0, 20.0];
            let mm = markov_modulated_martingale(&m, &[0.7, 1.3], &j, &xt, &y, beta, &cps).unwrap();
            let st = StoragePath::from_finite_variation(&xt, &y.scaled(beta)).unwrap();
            let generic = kw_martingale_real(&m, &xt, &st, &cps).unwrap();
            for k in 0..cps.len() {
                assert!((mm.total[k] - generic.total[k]).abs() < 1e-10, "{} {}", mm.total[k], generic.total[k]);
            }
        }
    }

    #[test]
    fn markov_modulated_state_two_off() {
        let (m, j, xt) = modulated_setup(5, [1.0, 0.0]);
        let y = FiniteVariationSpec::constant(1.0);
        let d = markov_modulated_martingale(&m, &[1.0, 0.0], &j, &xt, &y, 1.0, &[20.0]).unwrap();
        // phi_2(0) = 0: only the state-1 occupation contributes
        let phi1 = phi_marginal(&m, 0, 1.0).unwrap();
        let st = StoragePath::from_finite_variation(&xt, &y).unwrap();
        let times = xt.grid().times();
        let occ1: f64 = (0..times.len() - 1)
            .filter(|&i| xt.level_index(i) == 0)
            .map(|i| (-st.z()[i]).exp() * (times[i + 1] - times[i]))
            .sum();
        assert_relative_eq!(d.term_phi[0], phi1 * occ1, epsilon = 1e-12);
        assert!(markov_modulated_martingale(&m, &[1.0], &j, &xt, &y, 1.0, &[20.0]).is_err());
        assert!(markov_modulated_martingale(&m, &[1.0, 0.5], &j, &xt, &y, 1.0, &[20.0]).is_err());
    }

    #[test]
    fn decomposition_csv_columns() {
        let m = poisson_model();
        let xt = single_jump_path(0.25);
        let st = StoragePath::from_finite_variation(&xt, &FiniteVariationSpec::constant(0.0)).unwrap();
        let d = kw_martingale_real(&m, &xt, &st, &[0.5, 1.0]).unwrap();
        let qv = quadratic_variation(&m, &xt, &st, &[0.5, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_decomposition_csv(&d, &qv, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 3);
        assert_eq!(s.lines().nth(1).unwrap().split(',').count(), 9);
    }

    proptest! {
        #[test]
        fn total_is_sum_of_terms_and_qv_monotone(seed in 0u64..500, drift in -1.5..0.0f64, sigma2 in 0.0..1.0f64) {
            let m = LevyModel::scalar(drift, sigma2, vec![
                JumpComponent::new(0.6, JumpLaw::Exponential { coordinate: 0, rate: 1.5 }),
            ]).unwrap();
            let (xt, st, _) = reflected_run(&m, seed, 10.0);
            let cps = [1.0, 2.0, 5.0, 10.0];
            let d = kw_martingale_real(&m, &xt, &st, &cps).unwrap();
            for k in 0..cps.len() {
                prop_assert_eq!(d.total[k], d.term_phi[k] + d.term_boundary[k] + d.term_yc[k] + d.term_jumps[k]);
            }
            let qv = quadratic_variation(&m, &xt, &st, &cps).unwrap();
            let bound = compensator_rate(&m, &[1.0]).unwrap();
            for k in 0..cps.len() {
                prop_assert!(qv.cont[k] >= 0.0 && qv.jump[k] >= 0.0 && qv.compensator[k] >= 0.0);
                prop_assert!(qv.compensator[k] <= bound * cps[k] + 1e-12);
                if k > 0 {
                    prop_assert!(qv.cont[k] >= qv.cont[k - 1] && qv.jump[k] >= qv.jump[k - 1]);
                    prop_assert!(qv.compensator[k] >= qv.compensator[k - 1]);
                }
            }
        }
    }
}
