//! The statistical tests: what each replication records, and how the
//! ensemble of recordings is judged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{ReportRow, TestOutcome, Verdict};
use super::stats::{median, ols_slope, Accumulator};
use super::Experiment;
use crate::error::{input, precondition, Error, Result};
use crate::exponents::{mean_vector, phi, LevyModel};
use crate::integrands::{IntegrandSpec, IntegratedPath};
use crate::martingale::{MartingaleDecomposition, QVDecomposition, StoragePath};
use crate::paths::SamplePath;
use crate::reflection::ReflectedPath;

fn default_abs_tol() -> f64 {
    1e-12
}
fn default_min_pass_fraction() -> f64 {
    0.95
}
fn default_l2_rel_tol() -> f64 {
    0.10
}
fn default_max_slope() -> f64 {
    -0.35
}
fn default_alpha() -> f64 {
    1.0
}
fn default_pk_rel_tol() -> f64 {
    0.02
}
fn default_reflected_rel_tol() -> f64 {
    0.03
}
fn default_weight() -> Weight {
    Weight::ExpNegStorage
}

/// Bounded adapted process `A` used by the compensation and PASTA tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Weight {
    Constant { value: f64 },
    /// `A(t) = e^{-Z(t)}` for the experiment's storage level.
    ExpNegStorage,
    /// `A(t) = amplitude * sin(frequency * t)`.
    Sinusoid { amplitude: f64, frequency: f64 },
}

/// A selected test with its thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestSpec {
    /// `E M(t) = 0` at each checkpoint. Setting `corrupt_term_phi` scales the
    /// `∫φ(I)e^{-Z}ds` term and turns the test into a negative control.
    ZeroMean {
        #[serde(default = "default_abs_tol")]
        abs_tol: f64,
        #[serde(default = "default_min_pass_fraction")]
        min_pass_fraction: f64,
        #[serde(default)]
        corrupt_term_phi: Option<f64>,
    },
    /// `E M(t)^2 = E ∫ e^{-2Z} A ds`, and `E([M,M](t) - ∫ e^{-2Z} A ds) = 0`.
    L2Identity {
        #[serde(default = "default_l2_rel_tol")]
        rel_tol: f64,
        #[serde(default = "default_abs_tol")]
        abs_tol: f64,
    },
    /// Log-log slope of the median of `|M(t)|/t` over the checkpoints.
    RateDecay {
        #[serde(default = "default_max_slope")]
        max_slope: f64,
        #[serde(default)]
        min_slope: Option<f64>,
    },
    /// `(1/t) ∫ e^{-αZ} ds` against `α φ'(0)/φ(α)` for the integrated process.
    PkLimit {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_pk_rel_tol")]
        rel_tol: f64,
        #[serde(default = "default_abs_tol")]
        abs_tol: f64,
    },
    /// `(∫A(s-)dX_k(s) - E X_k(1) ∫A(s)ds)/t -> 0`.
    Compensation {
        coordinate: usize,
        weight: Weight,
        #[serde(default = "default_abs_tol")]
        abs_tol: f64,
    },
    /// Average of `A` just before the arrivals of jump component `observer`
    /// against the time average of `A`. With `anticipating` the value at the
    /// arrival instant is used instead (negative control).
    Pasta {
        observer: usize,
        #[serde(default = "default_weight")]
        weight: Weight,
        #[serde(default)]
        anticipating: bool,
        #[serde(default = "default_abs_tol")]
        abs_tol: f64,
    },
    /// `X̃(t)/t` against `Σ_k β_k E X_k(1)` at the last checkpoint.
    StrongLaw {
        #[serde(default = "default_abs_tol")]
        abs_tol: f64,
    },
    /// `(1/t) ∫ φ(I)e^{-Z} ds` against `-ξ^-` at the last checkpoint, with
    /// `L(t)/t` reported alongside.
    ReflectedLimit {
        #[serde(default = "default_reflected_rel_tol")]
        rel_tol: f64,
        #[serde(default = "default_abs_tol")]
        abs_tol: f64,
    },
}

impl TestSpec {
    pub fn name(&self) -> String {
        match self {
            TestSpec::ZeroMean { corrupt_term_phi: Some(_), .. } => "zero_mean_corrupted".into(),
            TestSpec::ZeroMean { .. } => "zero_mean".into(),
            TestSpec::L2Identity { .. } => "l2_identity".into(),
            TestSpec::RateDecay { .. } => "rate_decay".into(),
            TestSpec::PkLimit { .. } => "pk_limit".into(),
            TestSpec::Compensation { .. } => "compensation".into(),
            TestSpec::Pasta { anticipating: true, .. } => "pasta_anticipating".into(),
            TestSpec::Pasta { .. } => "pasta".into(),
            TestSpec::StrongLaw { .. } => "strong_law".into(),
            TestSpec::ReflectedLimit { .. } => "reflected_limit".into(),
        }
    }

    pub fn is_negative_control(&self) -> bool {
        matches!(
            self,
            TestSpec::ZeroMean { corrupt_term_phi: Some(_), .. } | TestSpec::Pasta { anticipating: true, .. }
        )
    }

    pub(crate) fn needs_martingale(&self) -> bool {
        matches!(
            self,
            TestSpec::ZeroMean { .. }
                | TestSpec::L2Identity { .. }
                | TestSpec::RateDecay { .. }
                | TestSpec::ReflectedLimit { .. }
        )
    }

    pub(crate) fn needs_qv(&self) -> bool {
        matches!(self, TestSpec::L2Identity { .. })
    }

    /// Config-time checks; returns the analytic target where one exists.
    pub(crate) fn prepare(&self, exp: &Experiment) -> Result<Option<f64>> {
        let model = &exp.model;
        match self {
            TestSpec::ZeroMean { min_pass_fraction, corrupt_term_phi, .. } => {
                if !(0.0..=1.0).contains(min_pass_fraction) {
                    return Err(Error::Config("min_pass_fraction must lie in [0, 1]".into()));
                }
                if corrupt_term_phi.is_some_and(|f| !f.is_finite()) {
                    return Err(Error::Config("corrupt_term_phi must be finite".into()));
                }
                Ok(None)
            }
            TestSpec::L2Identity { .. } => Ok(None),
            TestSpec::RateDecay { .. } => {
                if exp.checkpoints.len() < 3 {
                    return Err(Error::Config("rate_decay needs at least 3 checkpoints".into()));
                }
                Ok(None)
            }
            TestSpec::PkLimit { alpha, .. } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return input(format!("pk_limit alpha must be > 0, got {alpha}"));
                }
                let IntegrandSpec::Constant { levels } = &exp.integrand else {
                    return Err(Error::Config("pk_limit needs a constant integrand".into()));
                };
                if !exp.storage.is_reflected() {
                    return Err(Error::Config("pk_limit needs a reflected storage process".into()));
                }
                Ok(Some(pk_target(model, levels, *alpha)?))
            }
            TestSpec::Compensation { coordinate, weight, .. } => {
                if *coordinate >= model.dim() {
                    return input(format!("compensation coordinate {coordinate} out of range"));
                }
                check_weight(weight)?;
                let m = mean_vector(model)?;
                if !m[*coordinate].is_finite() {
                    return precondition("E|X(1)| must be finite");
                }
                Ok(None)
            }
            TestSpec::Pasta { observer, weight, .. } => {
                if *observer >= model.jumps().len() {
                    return input(format!("pasta observer {observer} is not a jump component"));
                }
                check_weight(weight)?;
                Ok(None)
            }
            TestSpec::StrongLaw { .. } => Ok(Some(strong_law_target(model, &exp.integrand)?)),
            TestSpec::ReflectedLimit { .. } => {
                if !exp.storage.is_reflected() {
                    return Err(Error::Config("reflected_limit needs a reflected storage process".into()));
                }
                if !exp.integrand.is_nonnegative() {
                    return precondition("reflected_limit needs nonnegative integrand levels");
                }
                let xi = strong_law_target(model, &exp.integrand)?;
                Ok(Some((-xi).max(0.0)))
            }
        }
    }
}

fn check_weight(w: &Weight) -> Result<()> {
    let ok = match w {
        Weight::Constant { value } => value.is_finite(),
        Weight::ExpNegStorage => true,
        Weight::Sinusoid { amplitude, frequency } => amplitude.is_finite() && frequency.is_finite(),
    };
    if ok {
        Ok(())
    } else {
        input("weight parameters must be finite")
    }
}

/// `α φ̃'(0)/φ̃(α)` for `φ̃(θ) = φ(θ c)`, or 0 when `φ̃'(0) <= 0`.
pub fn pk_target(model: &LevyModel, levels: &[f64], alpha: f64) -> Result<f64> {
    if levels.iter().any(|&c| c < 0.0) || levels.iter().all(|&c| c == 0.0) {
        return precondition("pk_limit needs a nonzero nonnegative constant integrand");
    }
    let m = mean_vector(model)?;
    let slope: f64 = -levels.iter().zip(&m).map(|(c, mu)| c * mu).sum::<f64>();
    if slope <= 0.0 {
        return Ok(0.0);
    }
    let a: Vec<f64> = levels.iter().map(|c| alpha * c).collect();
    Ok(alpha * slope / phi(model, &a)?)
}

/// `ξ = β' E X(1)` with `β` the long-run time average of the integrand.
pub fn strong_law_target(model: &LevyModel, integrand: &IntegrandSpec) -> Result<f64> {
    let beta = integrand.time_average()?;
    let m = mean_vector(model)?;
    Ok(beta.iter().zip(&m).map(|(b, mu)| b * mu).sum())
}

/// Everything a replication exposes to the probes.
pub(crate) struct Context<'a> {
    pub times: &'a [f64],
    pub cps: &'a [usize],
    pub x: &'a SamplePath,
    pub xt: &'a IntegratedPath,
    pub storage: &'a StoragePath,
    pub reflected: Option<&'a ReflectedPath>,
    pub mart: Option<&'a MartingaleDecomposition>,
    pub qv: Option<&'a QVDecomposition>,
    pub model_mean: &'a [f64],
}

impl Context<'_> {
    /// Left-endpoint integral `Σ_{i < c} f(i) dt_i` at each checkpoint.
    fn integral(&self, mut f: impl FnMut(usize) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cps.len());
        let mut acc = 0.0;
        let mut i = 0;
        for &c in self.cps {
            while i < c {
                acc += f(i) * (self.times[i + 1] - self.times[i]);
                i += 1;
            }
            out.push(acc);
        }
        out
    }

    fn weight(&self, w: &Weight, i: usize) -> f64 {
        match w {
            Weight::Constant { value } => *value,
            Weight::ExpNegStorage => (-self.storage.z()[i]).exp(),
            Weight::Sinusoid { amplitude, frequency } => amplitude * (frequency * self.times[i]).sin(),
        }
    }

    fn weight_left(&self, w: &Weight, i: usize) -> f64 {
        match w {
            Weight::ExpNegStorage => (-self.storage.left_limit(self.xt, i)).exp(),
            _ => self.weight(w, i),
        }
    }

    fn mart(&self) -> &MartingaleDecomposition {
        self.mart.expect("martingale evaluated for this test")
    }

    fn t(&self, k: usize) -> f64 {
        self.times[self.cps[k]]
    }
}

/// Per-replication recording: `series x checkpoint`, `None` for excluded
/// paths.
pub(crate) type Probe = Vec<Vec<Option<f64>>>;

fn one_series(v: Vec<f64>) -> Probe {
    vec![v.into_iter().map(Some).collect()]
}

impl TestSpec {
    pub(crate) fn probe(&self, ctx: &Context<'_>) -> Result<Probe> {
        let n = ctx.cps.len();
        Ok(match self {
            TestSpec::ZeroMean { corrupt_term_phi, .. } => {
                let m = ctx.mart();
                let f = corrupt_term_phi.unwrap_or(1.0);
                one_series((0..n).map(|k| m.total[k] + (f - 1.0) * m.term_phi[k]).collect())
            }
            TestSpec::L2Identity { .. } => {
                let m = ctx.mart();
                let qv = ctx.qv.expect("quadratic variation evaluated for this test");
                let m2: Vec<f64> = m.total.iter().map(|x| x * x).collect();
                let comp = qv.compensator.clone();
                let diff = (0..n).map(|k| m2[k] - comp[k]).collect();
                let qdiff = (0..n).map(|k| qv.total(k) - comp[k]).collect();
                vec![m2, comp, diff, qdiff]
                    .into_iter()
                    .map(|s: Vec<f64>| s.into_iter().map(Some).collect())
                    .collect()
            }
            TestSpec::RateDecay { .. } => {
                let m = ctx.mart();
                one_series((0..n).map(|k| m.total[k].abs() / ctx.t(k)).collect())
            }
            TestSpec::PkLimit { alpha, .. } => {
                let z = ctx.storage.z();
                let ints = ctx.integral(|i| (-alpha * z[i]).exp());
                one_series((0..n).map(|k| ints[k] / ctx.t(k)).collect())
            }
            TestSpec::Compensation { coordinate, weight, .. } => {
                let c = *coordinate;
                let mu = ctx.model_mean[c];
                let x = ctx.x;
                // continuous part by Itô sums, jumps with the left limit of A
                let mut out = Vec::with_capacity(n);
                let mut stoch = 0.0;
                let mut time_int = 0.0;
                let mut i = 0;
                for k in 0..n {
                    let cp = ctx.cps[k];
                    while i < cp {
                        let a = ctx.weight(weight, i);
                        let jump = x.jump_at(i + 1).map_or(0.0, |j| j.delta[c]);
                        stoch += a * (x.value(i + 1)[c] - x.value(i)[c] - jump);
                        if jump != 0.0 {
                            stoch += ctx.weight_left(weight, i + 1) * jump;
                        }
                        time_int += a * (ctx.times[i + 1] - ctx.times[i]);
                        i += 1;
                    }
                    out.push((stoch - mu * time_int) / ctx.t(k));
                }
                one_series(out)
            }
            TestSpec::Pasta { observer, weight, anticipating, .. } => {
                let time_int = ctx.integral(|i| ctx.weight(weight, i));
                let arrivals: Vec<usize> = ctx
                    .x
                    .jumps()
                    .iter()
                    .filter(|j| j.component == *observer)
                    .map(|j| j.index)
                    .collect();
                let mut out = Vec::with_capacity(n);
                let mut count = 0usize;
                let mut sum = 0.0;
                let mut a = 0;
                for k in 0..n {
                    while a < arrivals.len() && arrivals[a] <= ctx.cps[k] {
                        let idx = arrivals[a];
                        sum += if *anticipating { ctx.weight(weight, idx) } else { ctx.weight_left(weight, idx) };
                        count += 1;
                        a += 1;
                    }
                    out.push((count > 0).then(|| sum / count as f64 - time_int[k] / ctx.t(k)));
                }
                vec![out]
            }
            TestSpec::StrongLaw { .. } => one_series((0..n).map(|k| ctx.xt.value(ctx.cps[k]) / ctx.t(k)).collect()),
            TestSpec::ReflectedLimit { .. } => {
                let m = ctx.mart();
                let r = ctx.reflected.expect("reflected storage");
                let a = (0..n).map(|k| m.term_phi[k] / ctx.t(k)).collect();
                let l = (0..n).map(|k| r.l()[ctx.cps[k]] / ctx.t(k)).collect();
                vec![a, l].into_iter().map(|s: Vec<f64>| s.into_iter().map(Some).collect()).collect()
            }
        })
    }
}

/// Recordings of one test across all replications, in replication order.
pub(crate) struct Cells<'a> {
    pub reps: &'a [Vec<Probe>],
    pub test: usize,
    /// Sequential reduction in replication order instead of a parallel tree.
    pub deterministic: bool,
}

impl Cells<'_> {
    fn cell(&self, r: usize, s: usize, k: usize) -> Option<f64> {
        self.reps[r][self.test][s][k]
    }

    pub fn replications(&self) -> usize {
        self.reps.len()
    }

    pub fn acc(&self, s: usize, k: usize) -> Accumulator {
        if self.deterministic {
            (0..self.reps.len()).filter_map(|r| self.cell(r, s, k)).collect()
        } else {
            (0..self.reps.len())
                .into_par_iter()
                .fold(Accumulator::default, |mut a, r| {
                    if let Some(v) = self.cell(r, s, k) {
                        a.push(v);
                    }
                    a
                })
                .reduce(Accumulator::default, Accumulator::merge)
        }
    }

    pub fn values(&self, s: usize, k: usize) -> Vec<f64> {
        (0..self.reps.len()).filter_map(|r| self.cell(r, s, k)).collect()
    }
}

impl TestSpec {
    /// Rows and outcome for this test.
    pub(crate) fn judge(
        &self,
        checkpoints: &[f64],
        z: f64,
        target: Option<f64>,
        cells: &Cells<'_>,
    ) -> (Vec<ReportRow>, TestOutcome) {
        let name = self.name();
        let n = checkpoints.len();
        let last = n - 1;
        let acc = |s: usize, k: usize| cells.acc(s, k);
        let mut rows = Vec::new();
        let (held, note) = match self {
            TestSpec::ZeroMean { abs_tol, min_pass_fraction, corrupt_term_phi } => {
                let mut passed = 0;
                let mut degenerate = false;
                for (k, &t) in checkpoints.iter().enumerate() {
                    let a = acc(0, k);
                    let se = if a.se().is_nan() { 0.0 } else { a.se() };
                    degenerate |= se == 0.0 && a.mean.abs() > *abs_tol;
                    let row = ReportRow::judged(&name, t, a.mean, se, 0.0, z, *abs_tol);
                    passed += usize::from(row.verdict == Verdict::Pass);
                    rows.push(row);
                }
                let frac = passed as f64 / n as f64;
                let mut note = format!("{passed}/{n} checkpoints with 0 inside mean ± {z}·SE (need ≥ {min_pass_fraction})");
                if let Some(f) = corrupt_term_phi {
                    note.push_str(&format!("; term_phi scaled by {f}"));
                }
                if degenerate {
                    note.push_str("; zero variance with nonzero mean");
                }
                (frac >= *min_pass_fraction, note)
            }
            TestSpec::L2Identity { rel_tol, abs_tol } => {
                let mut ok = true;
                for (k, &t) in checkpoints.iter().enumerate() {
                    let (m2, comp, diff, qdiff) = (acc(0, k), acc(1, k), acc(2, k), acc(3, k));
                    let tol = (rel_tol * comp.mean.abs()).max(*abs_tol);
                    let row = ReportRow::judged(&name, t, m2.mean, zero_if_nan(diff.se()), comp.mean, z, tol);
                    ok &= row.verdict == Verdict::Pass;
                    rows.push(row);
                    let row = ReportRow::judged("qv_minus_compensator", t, qdiff.mean, zero_if_nan(qdiff.se()), 0.0, z, *abs_tol);
                    ok &= row.verdict == Verdict::Pass;
                    rows.push(row);
                }
                (ok, format!("E M² vs E∫e^(-2Z)A ds within {rel_tol} relative or {z}·SE; [M,M] minus compensator centred"))
            }
            TestSpec::RateDecay { max_slope, min_slope } => {
                let mut lt = Vec::new();
                let mut lm = Vec::new();
                let mut all_zero = true;
                for (k, &t) in checkpoints.iter().enumerate() {
                    let mut v = cells.values(0, k);
                    let med = median(&mut v);
                    all_zero &= med == 0.0;
                    rows.push(ReportRow::info("rate_decay_median", t, med, f64::NAN, f64::NAN, z));
                    if med > 0.0 {
                        lt.push(t.ln());
                        lm.push(med.ln());
                    }
                }
                let lo = min_slope.unwrap_or(f64::NEG_INFINITY);
                let band = format!("[{}, {}]", min_slope.map_or("-inf".to_string(), |s| s.to_string()), max_slope);
                if all_zero {
                    rows.push(ReportRow::info("rate_decay_slope", checkpoints[last], f64::NAN, f64::NAN, -0.5, z));
                    (true, "M vanishes identically; slope undefined".into())
                } else if lt.len() < 2 {
                    rows.push(ReportRow::info("rate_decay_slope", checkpoints[last], f64::NAN, f64::NAN, -0.5, z));
                    (false, "too few checkpoints with a positive median".into())
                } else {
                    let slope = ols_slope(&lt, &lm);
                    let ok = slope <= *max_slope && slope >= lo;
                    let mut row = ReportRow::info("rate_decay_slope", checkpoints[last], slope, f64::NAN, -0.5, z);
                    row.verdict = Verdict::from_bool(ok);
                    rows.push(row);
                    (ok, format!("log-log slope {slope:.3} of median |M(t)|/t, band {band} (harness choice)"))
                }
            }
            TestSpec::PkLimit { alpha, rel_tol, abs_tol } => {
                let target = target.expect("pk target");
                let a = acc(0, last);
                let tol = (rel_tol * target.abs()).max(*abs_tol);
                let row = ReportRow::judged(&name, checkpoints[last], a.mean, zero_if_nan(a.se()), target, z, tol);
                let ok = row.verdict == Verdict::Pass;
                rows.push(row);
                (ok, format!("(1/t)∫e^(-{alpha}Z)ds against {target:.6}"))
            }
            TestSpec::Compensation { abs_tol, .. } | TestSpec::Pasta { abs_tol, .. } => {
                let mut ok = true;
                for (k, &t) in checkpoints.iter().enumerate() {
                    let a = acc(0, k);
                    let row = ReportRow::judged(&name, t, a.mean, zero_if_nan(a.se()), 0.0, z, *abs_tol);
                    ok &= row.verdict == Verdict::Pass;
                    rows.push(row);
                }
                let centred = rows.iter().rev().take(checkpoints.len()).filter(|r| r.verdict == Verdict::Pass).count();
                let mut note = format!("gap centred at 0 at {centred}/{} checkpoints", checkpoints.len());
                if matches!(self, TestSpec::Pasta { .. }) {
                    let included = acc(0, last).n;
                    let total = cells.replications() as u64;
                    let excluded = total - included;
                    rows.push(ReportRow::info(format!("{name}_excluded"), checkpoints[last], excluded as f64, f64::NAN, f64::NAN, z));
                    note.push_str(&format!("; {excluded} paths without arrivals excluded"));
                }
                (ok, note)
            }
            TestSpec::StrongLaw { abs_tol } => {
                let target = target.expect("strong law target");
                let a = acc(0, last);
                let row = ReportRow::judged(&name, checkpoints[last], a.mean, zero_if_nan(a.se()), target, z, *abs_tol);
                let ok = row.verdict == Verdict::Pass;
                rows.push(row);
                (ok, format!("X̃(t)/t against ξ = {target:.6}"))
            }
            TestSpec::ReflectedLimit { rel_tol, abs_tol } => {
                let target = target.expect("reflected limit target");
                let tol = (rel_tol * target.abs()).max(*abs_tol);
                let a = acc(0, last);
                let row = ReportRow::judged(&name, checkpoints[last], a.mean, zero_if_nan(a.se()), target, z, tol);
                let ok = row.verdict == Verdict::Pass;
                rows.push(row);
                let l = acc(1, last);
                rows.push(ReportRow::info("reflected_limit_l", checkpoints[last], l.mean, l.se(), target, z));
                (ok, format!("(1/t)∫φ(I)e^(-Z)ds against -ξ^- = {target:.6}"))
            }
        };
        let outcome = TestOutcome {
            name,
            criterion_held: held,
            negative_control: self.is_negative_control(),
            note,
        };
        (rows, outcome)
    }
}

fn zero_if_nan(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x
    }
}
