//! One-sided Skorokhod reflection at zero:
//! `L(t) = max(0, -inf_{s<=t} (z0 + X̃(s)))`, `Z = z0 + X̃ + L`.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::integrands::IntegratedPath;
use crate::paths::{fmt_f64, TimeGrid};

/// How the infimum of `X̃` between grid points is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimumScheme {
    /// Grid values and jump left limits only.
    GridOnly,
    /// Additionally samples the exact minimum of the Brownian bridge on
    /// each step with a Gaussian part.
    #[default]
    BrownianBridge,
}

/// Storage level and regulator on the grid of the reflected path.
#[derive(Debug, Clone)]
pub struct ReflectedPath {
    grid: Arc<TimeGrid>,
    z0: f64,
    z: Vec<f64>,
    l: Vec<f64>,
    /// `(grid index, ΔL)` for every upward jump of the regulator.
    regulator_jumps: Vec<(usize, f64)>,
}

impl ReflectedPath {
    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn regulator_jumps(&self) -> &[(usize, f64)] {
        &self.regulator_jumps
    }

    /// Continuous part `L^c(t_i) = L(t_i) - Σ_{t_j <= t_i} ΔL(t_j)`.
    pub fn l_continuous(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.l.len());
        let mut jumps = self.regulator_jumps.iter().peekable();
        let mut acc = 0.0;
        for (i, &l) in self.l.iter().enumerate() {
            while let Some(&&(j, d)) = jumps.peek() {
                if j > i {
                    break;
                }
                acc += d;
                jumps.next();
            }
            out.push(l - acc);
        }
        out
    }

    pub fn max_regulator_jump(&self) -> f64 {
        self.regulator_jumps.iter().map(|j| j.1).fold(0.0, f64::max)
    }

    /// `Σ_i Z(t_i) (L(t_i) - L(t_{i-1}))`: zero for an exact reflection.
    pub fn complementarity_residual(&self) -> f64 {
        self.l
            .windows(2)
            .zip(&self.z[1..])
            .map(|(w, z)| z * (w[1] - w[0]))
            .sum()
    }

    /// CSV with columns `t, xt, z, l`.
    pub fn write_csv<W: Write>(&self, xt: &IntegratedPath, mut w: W) -> Result<()> {
        writeln!(w, "t,xt,z,l")?;
        for (i, &t) in self.grid.times().iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(t),
                fmt_f64(xt.value(i)),
                fmt_f64(self.z[i]),
                fmt_f64(self.l[i])
            )?;
        }
        Ok(())
    }
}

fn reflect_with<F>(z0: f64, xt: &IntegratedPath, mut step_min: F) -> Result<ReflectedPath>
where
    F: FnMut(usize, f64, f64) -> f64,
{
    if !(z0.is_finite() && z0 >= 0.0) {
        return input(format!("z0 must be >= 0, got {z0}"));
    }
    let n = xt.values().len();
    let mut z = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    let mut regulator_jumps = Vec::new();
    let mut cur_l: f64 = 0.0;
    z.push(z0 + xt.value(0));
    l.push(0.0);
    if z[0] < 0.0 {
        return input("z0 + X̃(0) must be >= 0");
    }
    for i in 1..n {
        let before = xt.left_limit(i);
        // infimum over (t_{i-1}, t_i) and the left limit at t_i
        let m = step_min(i - 1, xt.value(i - 1), before).min(before);
        cur_l = cur_l.max(-(z0 + m));
        let l_minus = cur_l;
        cur_l = cur_l.max(-(z0 + xt.value(i)));
        if cur_l > l_minus {
            regulator_jumps.push((i, cur_l - l_minus));
        }
        l.push(cur_l);
        z.push((z0 + xt.value(i) + cur_l).max(0.0));
    }
    Ok(ReflectedPath {
        grid: xt.grid().clone(),
        z0,
        z,
        l,
        regulator_jumps,
    })
}

/// Reflection using the recorded grid values and jump left limits.
pub fn skorokhod_reflect(z0: f64, xt: &IntegratedPath) -> Result<ReflectedPath> {
    reflect_with(z0, xt, |_, a, _| a)
}

/// Reflection that also samples the minimum of the Brownian bridge between
/// consecutive grid points, given the endpoints `a = X̃(t_i)` and
/// `b = X̃(t_{i+1}-)` and the step variance `I' Σ I dt`.
pub fn skorokhod_reflect_bridged<R: Rng + ?Sized>(z0: f64, xt: &IntegratedPath, rng: &mut R) -> Result<ReflectedPath> {
    let times = xt.grid().times().to_vec();
    reflect_with(z0, xt, |i, a, b| {
        let var = xt.qv_rate(i) * (times[i + 1] - times[i]);
        if var <= 0.0 {
            return a.min(b);
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        let d = b - a;
        0.5 * (a + b - (d * d - 2.0 * var * u.ln()).sqrt())
    })
}

pub fn reflect(z0: f64, xt: &IntegratedPath, scheme: MinimumScheme, rng: &mut impl Rng) -> Result<ReflectedPath> {
    match scheme {
        MinimumScheme::GridOnly => skorokhod_reflect(z0, xt),
        MinimumScheme::BrownianBridge => skorokhod_reflect_bridged(z0, xt, rng),
    }
}

/// `(X̃(t)/t, Z(t)/t, L(t)/t)` at the grid point at or before `t`.
pub fn rate_triple(xt: &IntegratedPath, reflected: &ReflectedPath, t: f64) -> Result<(f64, f64, f64)> {
    if !(t > 0.0) {
        return input(format!("t must be > 0, got {t}"));
    }
    let i = reflected.grid.index_at_or_before(t);
    Ok((xt.value(i) / t, reflected.z[i] / t, reflected.l[i] / t))
}
