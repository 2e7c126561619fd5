//! Lévy models with finitely many compound-Poisson jump components and
//! closed-form evaluation of their exponents.
//!
//! A [`LevyModel`] is the triplet (drift, Gaussian covariance, jump measure)
//! of a `K`-dimensional Lévy process `X`, where the jump measure is a finite
//! sum `Σ rate_j · law_j`. Because the jump measure is finite, the
//! small-jump compensator of the general Lévy-Khintchine formula is absorbed
//! into the drift, and
//!
//! ```text
//! psi(a) = log E exp(i a'X(1)) = i c'a - a'Σa/2 + Σ_j rate_j (E exp(i a'J_j) - 1)
//! phi(a) = log E exp(-a'X(1)) = -c'a + a'Σa/2 + Σ_j rate_j (E exp(-a'J_j) - 1)
//! ```
//!
//! `phi` is only defined for spectrally positive models (no jump law charges
//! negative coordinates) and nonnegative arguments.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{input, precondition, Error, Result};

/// Smallest eigenvalue of the covariance still treated as numerically PSD.
pub const PSD_TOLERANCE: f64 = 1e-10;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// One atom of a [`JumpLaw::Mixture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub weight: f64,
    pub jump: Vec<f64>,
}

/// Distribution of a single jump vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpLaw {
    /// Deterministic jump vector.
    PointMass { jump: Vec<f64> },
    /// Exponential(rate) size on a single coordinate.
    Exponential { coordinate: usize, rate: f64 },
    /// Uniform(low, high) size on a single coordinate.
    Uniform {
        coordinate: usize,
        low: f64,
        high: f64,
    },
    /// Finite mixture of point masses; weights need not be normalized.
    Mixture { atoms: Vec<Atom> },
    /// Density proportional to `x^-1 exp(-rate x)` on `(cutoff, ∞)`: the
    /// large-jump part of a gamma subordinator. Only produced by
    /// [`LevyModel::gamma_subordinator_approx`].
    GammaTail {
        coordinate: usize,
        rate: f64,
        cutoff: f64,
    },
}

impl JumpLaw {
    fn validate(&self, dim: usize, key: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Model(format!("{key}: {msg}")));
        let check_coord = |c: usize| {
            if c >= dim {
                Err(Error::Model(format!(
                    "{key}.coordinate: {c} out of range for dimension {dim}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            JumpLaw::PointMass { jump } => {
                if jump.len() != dim {
                    return bad(format!("jump has length {}, expected {dim}", jump.len()));
                }
                if jump.iter().any(|x| !x.is_finite()) {
                    return bad("jump must be finite".into());
                }
            }
            JumpLaw::Exponential { coordinate, rate } => {
                check_coord(*coordinate)?;
                if !(rate.is_finite() && *rate > 0.0) {
                    return bad(format!("rate must be > 0, got {rate}"));
                }
            }
            JumpLaw::Uniform {
                coordinate,
                low,
                high,
            } => {
                check_coord(*coordinate)?;
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return bad(format!("need finite low < high, got [{low}, {high}]"));
                }
            }
            JumpLaw::Mixture { atoms } => {
                if atoms.is_empty() {
                    return bad("mixture needs at least one atom".into());
                }
                for (i, a) in atoms.iter().enumerate() {
                    if !(a.weight.is_finite() && a.weight > 0.0) {
                        return bad(format!("atoms[{i}].weight must be > 0, got {}", a.weight));
                    }
                    if a.jump.len() != dim || a.jump.iter().any(|x| !x.is_finite()) {
                        return bad(format!("atoms[{i}].jump must be a finite vector of length {dim}"));
                    }
                }
            }
            JumpLaw::GammaTail {
                coordinate,
                rate,
                cutoff,
            } => {
                check_coord(*coordinate)?;
                if !(rate.is_finite() && *rate > 0.0 && cutoff.is_finite() && *cutoff > 0.0) {
                    return bad("gamma tail needs rate > 0 and cutoff > 0".into());
                }
            }
        }
        Ok(())
    }

    /// True iff the law is supported in the nonnegative orthant.
    pub fn spectrally_positive(&self) -> bool {
        match self {
            JumpLaw::PointMass { jump } => jump.iter().all(|&x| x >= 0.0),
            JumpLaw::Exponential { .. } | JumpLaw::GammaTail { .. } => true,
            JumpLaw::Uniform { low, .. } => *low >= 0.0,
            JumpLaw::Mixture { atoms } => atoms.iter().all(|a| a.jump.iter().all(|&x| x >= 0.0)),
        }
    }

    fn total_weight(atoms: &[Atom]) -> f64 {
        atoms.iter().map(|a| a.weight).sum()
    }

    /// Mean jump vector.
    pub fn mean(&self, dim: usize) -> Vec<f64> {
        let mut m = vec![0.0; dim];
        match self {
            JumpLaw::PointMass { jump } => m.copy_from_slice(jump),
            JumpLaw::Exponential { coordinate, rate } => m[*coordinate] = 1.0 / rate,
            JumpLaw::Uniform {
                coordinate,
                low,
                high,
            } => m[*coordinate] = 0.5 * (low + high),
            JumpLaw::Mixture { atoms } => {
                let w = Self::total_weight(atoms);
                for a in atoms {
                    for (mk, xk) in m.iter_mut().zip(&a.jump) {
                        *mk += a.weight / w * xk;
                    }
                }
            }
            JumpLaw::GammaTail {
                coordinate,
                rate,
                cutoff,
            } => {
                let norm = expint_e1(Complex64::new(rate * cutoff, 0.0)).re;
                m[*coordinate] = (-rate * cutoff).exp() / (rate * norm);
            }
        }
        m
    }

    /// Row-major `E[J J^T]`.
    pub fn second_moment(&self, dim: usize) -> Vec<f64> {
        let mut s = vec![0.0; dim * dim];
        let mut outer = |x: &[f64], w: f64| {
            for i in 0..dim {
                for j in 0..dim {
                    s[i * dim + j] += w * x[i] * x[j];
                }
            }
        };
        match self {
            JumpLaw::PointMass { jump } => outer(jump, 1.0),
            JumpLaw::Mixture { atoms } => {
                let w = Self::total_weight(atoms);
                for a in atoms {
                    outer(&a.jump, a.weight / w);
                }
            }
            JumpLaw::Exponential { coordinate, rate } => {
                s[coordinate * dim + coordinate] = 2.0 / (rate * rate);
            }
            JumpLaw::Uniform {
                coordinate,
                low,
                high,
            } => {
                s[coordinate * dim + coordinate] =
                    (high * high + high * low + low * low) / 3.0;
            }
            JumpLaw::GammaTail {
                coordinate,
                rate,
                cutoff,
            } => {
                let norm = expint_e1(Complex64::new(rate * cutoff, 0.0)).re;
                s[coordinate * dim + coordinate] =
                    (-rate * cutoff).exp() * (cutoff / rate + 1.0 / (rate * rate)) / norm;
            }
        }
        s
    }

    /// `E exp(i a'J) - 1`, analytically continued to complex `a`.
    pub fn char_fn_minus_one(&self, alpha: &[Complex64]) -> Complex64 {
        let i = Complex64::i();
        let dot = |x: &[f64]| -> Complex64 { alpha.iter().zip(x).map(|(a, &b)| a * b).sum() };
        match self {
            JumpLaw::PointMass { jump } => cexpm1(i * dot(jump)),
            JumpLaw::Mixture { atoms } => {
                let w = Self::total_weight(atoms);
                atoms
                    .iter()
                    .map(|a| cexpm1(i * dot(&a.jump)) * (a.weight / w))
                    .sum()
            }
            JumpLaw::Exponential { coordinate, rate } => {
                let a = alpha[*coordinate];
                i * a / (rate - i * a)
            }
            JumpLaw::Uniform {
                coordinate,
                low,
                high,
            } => {
                let a = alpha[*coordinate];
                if a == Complex64::new(0.0, 0.0) {
                    return Complex64::new(0.0, 0.0);
                }
                let z = i * a * (high - low);
                (i * a * low).exp() * cexpm1(z) / z - 1.0
            }
            JumpLaw::GammaTail {
                coordinate,
                rate,
                cutoff,
            } => {
                let a = alpha[*coordinate];
                if a == Complex64::new(0.0, 0.0) {
                    return Complex64::new(0.0, 0.0);
                }
                let norm = expint_e1(Complex64::new(rate * cutoff, 0.0));
                expint_e1((rate - i * a) * cutoff) / norm - 1.0
            }
        }
    }

    /// `E exp(-a'J) - 1` for real `a` (finite whenever `a >= 0` and the law
    /// is spectrally positive).
    pub fn laplace_minus_one(&self, alpha: &[f64]) -> f64 {
        let dot = |x: &[f64]| -> f64 { alpha.iter().zip(x).map(|(a, b)| a * b).sum() };
        match self {
            JumpLaw::PointMass { jump } => (-dot(jump)).exp_m1(),
            JumpLaw::Mixture { atoms } => {
                let w = Self::total_weight(atoms);
                atoms
                    .iter()
                    .map(|a| a.weight / w * (-dot(&a.jump)).exp_m1())
                    .sum()
            }
            JumpLaw::Exponential { coordinate, rate } => {
                let a = alpha[*coordinate];
                -a / (rate + a)
            }
            JumpLaw::Uniform {
                coordinate,
                low,
                high,
            } => {
                let a = alpha[*coordinate];
                if a == 0.0 {
                    return 0.0;
                }
                let x = a * (high - low);
                (-a * low).exp() * (-(-x).exp_m1() / x) - 1.0
            }
            JumpLaw::GammaTail {
                coordinate,
                rate,
                cutoff,
            } => {
                let a = alpha[*coordinate];
                if a == 0.0 {
                    return 0.0;
                }
                let norm = expint_e1(Complex64::new(rate * cutoff, 0.0)).re;
                expint_e1(Complex64::new((rate + a) * cutoff, 0.0)).re / norm - 1.0
            }
        }
    }

    /// `E (1 - exp(-a'J))^2`, computed so that it is never negative.
    pub fn squared_loss(&self, alpha: &[f64]) -> f64 {
        let dot = |x: &[f64]| -> f64 { alpha.iter().zip(x).map(|(a, b)| a * b).sum() };
        match self {
            JumpLaw::PointMass { jump } => (-dot(jump)).exp_m1().powi(2),
            JumpLaw::Mixture { atoms } => {
                let w = Self::total_weight(atoms);
                atoms
                    .iter()
                    .map(|a| a.weight / w * (-dot(&a.jump)).exp_m1().powi(2))
                    .sum()
            }
            JumpLaw::Exponential { coordinate, rate } => {
                let a = alpha[*coordinate];
                2.0 * a * a / ((rate + a) * (rate + 2.0 * a))
            }
            _ => {
                let two: Vec<f64> = alpha.iter().map(|a| 2.0 * a).collect();
                let v = self.laplace_minus_one(&two) - 2.0 * self.laplace_minus_one(alpha);
                v.max(0.0)
            }
        }
    }

    /// Adds one sampled jump to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            JumpLaw::PointMass { jump } => {
                for (o, x) in out.iter_mut().zip(jump) {
                    *o += x;
                }
            }
            JumpLaw::Exponential { coordinate, rate } => {
                out[*coordinate] += Exp::new(*rate).expect("validated rate").sample(rng);
            }
            JumpLaw::Uniform {
                coordinate,
                low,
                high,
            } => {
                let u: f64 = rng.random();
                out[*coordinate] += low + (high - low) * u;
            }
            JumpLaw::Mixture { atoms } => {
                let w = Self::total_weight(atoms);
                let mut u = rng.random::<f64>() * w;
                let mut chosen = &atoms[atoms.len() - 1];
                for a in atoms {
                    if u < a.weight {
                        chosen = a;
                        break;
                    }
                    u -= a.weight;
                }
                for (o, x) in out.iter_mut().zip(&chosen.jump) {
                    *o += x;
                }
            }
            JumpLaw::GammaTail {
                coordinate,
                rate,
                cutoff,
            } => {
                // Exponential proposal shifted to the cutoff, accepted with prob cutoff / x.
                let proposal = Exp::new(*rate).expect("validated rate");
                loop {
                    let x = cutoff + proposal.sample(rng);
                    let u: f64 = rng.random();
                    if u * x <= *cutoff {
                        out[*coordinate] += x;
                        break;
                    }
                }
            }
        }
    }
}

/// A compound-Poisson component of the jump measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpComponent {
    /// Jumps per unit time.
    pub rate: f64,
    pub law: JumpLaw,
}

impl JumpComponent {
    pub fn new(rate: f64, law: JumpLaw) -> Self {
        Self { rate, law }
    }

    pub fn spectrally_positive(&self) -> bool {
        self.law.spectrally_positive()
    }
}

/// Marks a model built by truncating an infinite-activity jump measure.
/// Simulation of such a model is not exact in law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Approximation {
    pub description: String,
    pub cutoff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLevyModel {
    dim: usize,
    drift: Vec<f64>,
    #[serde(default)]
    covariance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    jumps: Vec<JumpComponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    approximation: Option<Approximation>,
}

/// Validated finite-activity Lévy triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLevyModel", into = "RawLevyModel")]
pub struct LevyModel {
    dim: usize,
    drift: Vec<f64>,
    /// Row-major, symmetric, eigenvalues clipped at zero.
    covariance: Vec<f64>,
    /// Row-major `F` with `F F^T = covariance`.
    factor: Vec<f64>,
    jumps: Vec<JumpComponent>,
    approximation: Option<Approximation>,
}

impl TryFrom<RawLevyModel> for LevyModel {
    type Error = Error;

    fn try_from(raw: RawLevyModel) -> Result<Self> {
        if raw.dim == 0 {
            return Err(Error::Model("dim must be positive".into()));
        }
        let covariance = match raw.covariance {
            None => vec![0.0; raw.dim * raw.dim],
            Some(rows) => {
                if rows.len() != raw.dim || rows.iter().any(|r| r.len() != raw.dim) {
                    return Err(Error::Model(format!(
                        "covariance must be {0}x{0}",
                        raw.dim
                    )));
                }
                rows.into_iter().flatten().collect()
            }
        };
        let mut model = LevyModel::new(raw.drift, covariance, raw.jumps)?;
        model.approximation = raw.approximation;
        if raw.dim != model.dim {
            return Err(Error::Model(format!(
                "dim is {} but drift has length {}",
                raw.dim, model.dim
            )));
        }
        Ok(model)
    }
}

impl From<LevyModel> for RawLevyModel {
    fn from(m: LevyModel) -> Self {
        let k = m.dim;
        RawLevyModel {
            dim: k,
            covariance: Some(m.covariance.chunks(k).map(<[f64]>::to_vec).collect()),
            drift: m.drift,
            jumps: m.jumps,
            approximation: m.approximation,
        }
    }
}

impl LevyModel {
    /// Builds and validates a model. `covariance` is row-major `K x K`.
    pub fn new(drift: Vec<f64>, covariance: Vec<f64>, jumps: Vec<JumpComponent>) -> Result<Self> {
        let dim = drift.len();
        if dim == 0 {
            return Err(Error::Model("drift must have at least one coordinate".into()));
        }
        if drift.iter().any(|c| !c.is_finite()) {
            return Err(Error::Model("drift must be finite".into()));
        }
        if covariance.len() != dim * dim {
            return Err(Error::Model(format!("covariance must be {dim}x{dim}")));
        }
        for (i, c) in jumps.iter().enumerate() {
            if !(c.rate.is_finite() && c.rate > 0.0) {
                return Err(Error::Model(format!(
                    "jumps[{i}].rate must be > 0, got {}",
                    c.rate
                )));
            }
            c.law.validate(dim, &format!("jumps[{i}].law"))?;
        }
        let (covariance, factor) = psd_factor(dim, &covariance)?;
        Ok(Self {
            dim,
            drift,
            covariance,
            factor,
            jumps,
            approximation: None,
        })
    }

    /// The identically-zero process in `dim` dimensions.
    pub fn zero(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![0.0; dim * dim], Vec::new()).expect("zero model is valid")
    }

    /// One-dimensional jump diffusion.
    pub fn scalar(drift: f64, variance: f64, jumps: Vec<JumpComponent>) -> Result<Self> {
        Self::new(vec![drift], vec![variance], jumps)
    }

    /// Truncation of the gamma subordinator with Lévy density
    /// `shape x^-1 exp(-rate x)`: jumps above `cutoff` are kept as a compound
    /// Poisson component, jumps below are replaced by their mean (drift) and
    /// a Brownian term with their variance.
    pub fn gamma_subordinator_approx(shape: f64, rate: f64, cutoff: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && cutoff > 0.0) {
            return input("gamma subordinator needs shape, rate and cutoff > 0");
        }
        let bc = rate * cutoff;
        let tail_rate = shape * expint_e1(Complex64::new(bc, 0.0)).re;
        let small_mean = shape * -(-bc).exp_m1() / rate;
        let small_var = shape * (1.0 - (-bc).exp() * (1.0 + bc)) / (rate * rate);
        let mut m = Self::new(
            vec![small_mean],
            vec![small_var.max(0.0)],
            vec![JumpComponent::new(
                tail_rate,
                JumpLaw::GammaTail {
                    coordinate: 0,
                    rate,
                    cutoff,
                },
            )],
        )?;
        m.approximation = Some(Approximation {
            description: format!("gamma subordinator (shape {shape}, rate {rate}) truncated below {cutoff}"),
            cutoff,
        });
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    /// Row-major covariance after PSD clipping.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// Row-major square-root factor of the covariance.
    pub fn covariance_factor(&self) -> &[f64] {
        &self.factor
    }

    pub fn jumps(&self) -> &[JumpComponent] {
        &self.jumps
    }

    pub fn approximation(&self) -> Option<&Approximation> {
        self.approximation.as_ref()
    }

    pub fn is_exact(&self) -> bool {
        self.approximation.is_none()
    }

    pub fn has_gaussian_part(&self) -> bool {
        self.covariance.iter().any(|&v| v != 0.0)
    }

    /// True iff no jump component can produce a negative coordinate.
    pub fn spectrally_positive(&self) -> bool {
        self.jumps.iter().all(JumpComponent::spectrally_positive)
    }

    /// Same model with a different drift vector.
    pub fn with_drift(&self, drift: Vec<f64>) -> Result<Self> {
        if drift.len() != self.dim || drift.iter().any(|c| !c.is_finite()) {
            return input(format!("drift must be a finite vector of length {}", self.dim));
        }
        Ok(Self {
            drift,
            ..self.clone()
        })
    }

    /// `a' Σ b` for real vectors.
    pub fn quadratic_form(&self, a: &[f64], b: &[f64]) -> f64 {
        let k = self.dim;
        let mut s = 0.0;
        for i in 0..k {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..k {
                s += a[i] * self.covariance[i * k + j] * b[j];
            }
        }
        s
    }

    fn check_alpha(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.dim {
            return input(format!(
                "argument has length {}, model dimension is {}",
                alpha.len(),
                self.dim
            ));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return input("argument must be finite");
        }
        Ok(())
    }

    fn check_laplace_domain(&self, alpha: &[f64]) -> Result<()> {
        self.check_alpha(alpha)?;
        if let Some(a) = alpha.iter().find(|&&a| a < 0.0) {
            return input(format!("Laplace argument must be >= 0 coordinate-wise, got {a}"));
        }
        if !self.spectrally_positive() {
            return precondition("Laplace exponent requires a model without negative jumps");
        }
        Ok(())
    }
}

/// Characteristic exponent `psi(alpha) = log E exp(i alpha'X(1))`.
pub fn psi(model: &LevyModel, alpha: &[f64]) -> Result<Complex64> {
    model.check_alpha(alpha)?;
    let z: Vec<Complex64> = alpha.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    Ok(psi_unchecked(model, &z))
}

/// `psi` continued to complex arguments; `psi_complex(model, i·a) == phi(model, a)`
/// wherever the latter is defined.
pub fn psi_complex(model: &LevyModel, alpha: &[Complex64]) -> Result<Complex64> {
    if alpha.len() != model.dim {
        return input(format!(
            "argument has length {}, model dimension is {}",
            alpha.len(),
            model.dim
        ));
    }
    if alpha.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
        return input("argument must be finite");
    }
    Ok(psi_unchecked(model, alpha))
}

fn psi_unchecked(model: &LevyModel, alpha: &[Complex64]) -> Complex64 {
    let k = model.dim;
    let i = Complex64::i();
    let mut linear = Complex64::new(0.0, 0.0);
    for (c, a) in model.drift.iter().zip(alpha) {
        linear += a * c;
    }
    let mut quad = Complex64::new(0.0, 0.0);
    for r in 0..k {
        for c in 0..k {
            let s = model.covariance[r * k + c];
            if s != 0.0 {
                quad += alpha[r] * alpha[c] * s;
            }
        }
    }
    let mut jumps = Complex64::new(0.0, 0.0);
    for comp in &model.jumps {
        jumps += comp.law.char_fn_minus_one(alpha) * comp.rate;
    }
    i * linear - quad * 0.5 + jumps
}

/// Laplace-Stieltjes exponent `phi(alpha) = log E exp(-alpha'X(1))`.
pub fn phi(model: &LevyModel, alpha: &[f64]) -> Result<f64> {
    model.check_laplace_domain(alpha)?;
    Ok(phi_unchecked(model, alpha))
}

pub(crate) fn phi_unchecked(model: &LevyModel, alpha: &[f64]) -> f64 {
    let linear: f64 = model.drift.iter().zip(alpha).map(|(c, a)| c * a).sum();
    let quad = model.quadratic_form(alpha, alpha);
    let jumps: f64 = model
        .jumps
        .iter()
        .map(|c| c.rate * c.law.laplace_minus_one(alpha))
        .sum();
    0.0 - linear + 0.5 * quad + jumps
}

/// `E X(1)`, from the closed-form jump means.
pub fn mean_vector(model: &LevyModel) -> Result<Vec<f64>> {
    let mut m = model.drift.clone();
    for c in &model.jumps {
        let jm = c.law.mean(model.dim);
        if jm.iter().any(|x| !x.is_finite()) {
            return Err(Error::UnsupportedModel("jump law without finite mean".into()));
        }
        for (mk, j) in m.iter_mut().zip(jm) {
            *mk += c.rate * j;
        }
    }
    Ok(m)
}

/// Row-major `Cov X(1) = Σ + Σ_j rate_j E[J_j J_j^T]`.
pub fn unit_time_covariance(model: &LevyModel) -> Vec<f64> {
    let mut s = model.covariance.clone();
    for c in &model.jumps {
        for (sk, m) in s.iter_mut().zip(c.law.second_moment(model.dim)) {
            *sk += c.rate * m;
        }
    }
    s
}

/// `∂phi/∂alpha_k (0+) = -E X_k(1)`.
pub fn phi_gradient_at_zero(model: &LevyModel) -> Result<Vec<f64>> {
    if !model.spectrally_positive() {
        return precondition("Laplace exponent requires a model without negative jumps");
    }
    Ok(mean_vector(model)?.into_iter().map(|m| -m).collect())
}

/// `phi` value bundled with its gradient at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentValue {
    pub value: f64,
    pub gradient_at_zero: Option<Vec<f64>>,
}

pub fn laplace_exponent(model: &LevyModel, alpha: &[f64]) -> Result<ExponentValue> {
    Ok(ExponentValue {
        value: phi(model, alpha)?,
        gradient_at_zero: Some(phi_gradient_at_zero(model)?),
    })
}

fn unit_vector(dim: usize, k: usize, a: f64) -> Result<Vec<f64>> {
    if k >= dim {
        return input(format!("coordinate {k} out of range for dimension {dim}"));
    }
    let mut v = vec![0.0; dim];
    v[k] = a;
    Ok(v)
}

/// `phi_k(a) = phi(0, .., a, .., 0)`.
pub fn phi_marginal(model: &LevyModel, k: usize, a: f64) -> Result<f64> {
    phi(model, &unit_vector(model.dim, k, a)?)
}

/// `psi_k(a) = psi(0, .., a, .., 0)`.
pub fn psi_marginal(model: &LevyModel, k: usize, a: f64) -> Result<Complex64> {
    psi(model, &unit_vector(model.dim, k, a)?)
}

/// `A = phi(2i) - 2 phi(i)`, the rate of the compensator of `[M, M]`.
///
/// Evaluated as `i'Σi + Σ_j rate_j E(1 - exp(-i'J_j))^2`, which is the same
/// quantity with the drift cancelled symbolically, so it is exactly
/// drift-invariant and never negative.
pub fn compensator_rate(model: &LevyModel, i_vec: &[f64]) -> Result<f64> {
    model.check_laplace_domain(i_vec)?;
    Ok(compensator_rate_unchecked(model, i_vec))
}

pub(crate) fn compensator_rate_unchecked(model: &LevyModel, i_vec: &[f64]) -> f64 {
    let quad = model.quadratic_form(i_vec, i_vec);
    let jumps: f64 = model
        .jumps
        .iter()
        .map(|c| c.rate * c.law.squared_loss(i_vec))
        .sum();
    quad + jumps
}

fn psd_factor(dim: usize, cov: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("covariance must be finite".into()));
    }
    for i in 0..dim {
        for j in 0..i {
            let (a, b) = (cov[i * dim + j], cov[j * dim + i]);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::Model(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if cov.iter().all(|&v| v == 0.0) {
        return Ok((cov.to_vec(), cov.to_vec()));
    }
    let m = DMatrix::from_fn(dim, dim, |i, j| 0.5 * (cov[i * dim + j] + cov[j * dim + i]));
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE {
        return Err(Error::Model(format!(
            "covariance is not positive semidefinite (smallest eigenvalue {min:e})"
        )));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let factor = DMatrix::from_fn(dim, dim, |i, j| v[(i, j)] * clipped[j].sqrt());
    let rebuilt = &factor * factor.transpose();
    if rebuilt.iter().any(|x| !x.is_finite()) {
        return Err(Error::Model("covariance factorization failed".into()));
    }
    // Diagonal matrices keep their exact entries; only coupled ones are rebuilt.
    let diagonal = (0..dim).all(|i| (0..dim).all(|j| i == j || cov[i * dim + j] == 0.0));
    let (cov_out, fac_out) = if diagonal {
        let c: Vec<f64> = cov.iter().map(|x| x.max(0.0)).collect();
        let f = (0..dim * dim)
            .map(|idx| if idx % (dim + 1) == 0 { c[idx].sqrt() } else { 0.0 })
            .collect();
        (c, f)
    } else {
        let c = (0..dim * dim).map(|idx| rebuilt[(idx / dim, idx % dim)]).collect();
        let f = (0..dim * dim).map(|idx| factor[(idx / dim, idx % dim)]).collect();
        (c, f)
    };
    Ok((cov_out, fac_out))
}

/// `exp(z) - 1` without cancellation near zero.
pub(crate) fn cexpm1(z: Complex64) -> Complex64 {
    let (u, v) = (z.re, z.im);
    let half_sin = (0.5 * v).sin();
    let cos_m1 = -2.0 * half_sin * half_sin;
    let em1 = u.exp_m1();
    Complex64::new(em1 * v.cos() + cos_m1, u.exp() * v.sin())
}

/// Exponential integral `E1(z)` for `Re z > 0`.
pub(crate) fn expint_e1(z: Complex64) -> Complex64 {
    if z.norm() <= 1.0 {
        let mut sum = Complex64::new(0.0, 0.0);
        let mut term = Complex64::new(1.0, 0.0);
        for k in 1..200 {
            term *= -z / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.norm() < 1e-17 * sum.norm().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - z.ln() + sum
    } else {
        // Modified Lentz evaluation of the continued fraction.
        let tiny = 1e-300;
        let mut b = z + 1.0;
        let mut c = Complex64::new(1.0 / tiny, 0.0);
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (d * an + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).norm() < 1e-16 {
                break;
            }
        }
        h * (-z).exp()
    }
}
