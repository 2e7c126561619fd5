//! Monte Carlo harness: simulate independent replications of a storage
//! process and turn the martingale identities and limit theorems into
//! pass/fail tests.

mod checks;
mod report;
mod stats;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checks::{pk_target, strong_law_target, TestSpec, Weight};
pub use report::{MCReport, ReportRow, TestOutcome, Verdict};
pub use stats::{median, ols_slope, Accumulator};

use crate::error::{input, Error, Result};
use crate::exponents::{mean_vector, LevyModel};
use crate::integrands::{prepare_grid, stochastic_integral, IntegrandSpec, IntegratedPath};
use crate::martingale::{
    kw_martingale_real, quadratic_variation, write_decomposition_csv, FiniteVariationSpec, MartingaleDecomposition,
    QVDecomposition, StoragePath,
};
use crate::paths::{simulate_levy, SamplePath, SeedPolicy, TimeGrid, TIME_TOLERANCE};
use crate::reflection::{reflect, MinimumScheme, ReflectedPath};

/// How `Y` in `Z = X̃ + Y` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StorageSpec {
    /// `Y = z0 + L` with `L` the regulator of the reflection at 0.
    Reflected { z0: f64, scheme: MinimumScheme },
    /// A given finite-variation term.
    Explicit(FiniteVariationSpec),
}

impl StorageSpec {
    pub fn is_reflected(&self) -> bool {
        matches!(self, StorageSpec::Reflected { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: LevyModel,
    pub integrand: IntegrandSpec,
    pub storage: StorageSpec,
    pub horizon: f64,
    pub dt: f64,
    pub checkpoints: Vec<f64>,
    pub replications: usize,
    pub base_seed: u64,
    /// Width of the pass band in standard errors.
    pub z: f64,
    pub tests: Vec<TestSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
    /// Reduce in replication order on one thread for bit-exact results.
    pub deterministic_reduce: bool,
}

impl Experiment {
    /// Checks the invariants and returns the analytic target of each test.
    pub fn validate(&self) -> Result<Vec<Option<f64>>> {
        if self.replications < 2 {
            return Err(Error::Config(format!("replications must be >= 2, got {}", self.replications)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return input(format!("horizon must be > 0, got {}", self.horizon));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return input(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.z.is_finite() && self.z > 0.0) {
            return Err(Error::Config(format!("z must be > 0, got {}", self.z)));
        }
        if self.checkpoints.is_empty() {
            return Err(Error::Config("at least one checkpoint is required".into()));
        }
        for (k, &t) in self.checkpoints.iter().enumerate() {
            if !(t > 0.0 && t <= self.horizon + TIME_TOLERANCE) {
                return Err(Error::Config(format!("checkpoints[{k}] = {t} is outside (0, {}]", self.horizon)));
            }
            if k > 0 && t <= self.checkpoints[k - 1] {
                return Err(Error::Config("checkpoints must be strictly increasing".into()));
            }
        }
        self.integrand.validate(self.model.dim())?;
        match &self.storage {
            StorageSpec::Reflected { z0, .. } => {
                if !(z0.is_finite() && *z0 >= 0.0) {
                    return input(format!("reflection.z0 must be >= 0, got {z0}"));
                }
            }
            StorageSpec::Explicit(y) => y.validate(self.horizon)?,
        }
        self.tests.iter().map(|t| t.prepare(self)).collect()
    }

    fn needs_martingale(&self) -> bool {
        self.tests.iter().any(TestSpec::needs_martingale)
    }

    fn needs_qv(&self) -> bool {
        self.tests.iter().any(TestSpec::needs_qv)
    }
}

/// All paths of one replication.
pub struct Replication {
    pub x: SamplePath,
    pub xt: IntegratedPath,
    pub storage: StoragePath,
    pub reflected: Option<ReflectedPath>,
    pub checkpoint_indices: Vec<usize>,
}

/// Simulates replication `rep`; it depends only on `(base_seed, rep)`.
pub fn simulate_replication(exp: &Experiment, rep: u64) -> Result<Replication> {
    let seed = SeedPolicy::new(exp.base_seed, rep);
    let ipath = exp.integrand.realize(exp.horizon, &seed)?;
    let mut extra = exp.checkpoints.clone();
    if let StorageSpec::Explicit(y) = &exp.storage {
        extra.extend(y.jump_times());
    }
    let grid = prepare_grid(&TimeGrid::uniform(exp.horizon, exp.dt)?, &ipath, &extra)?;
    let x = simulate_levy(&exp.model, &grid, &seed)?;
    let xt = stochastic_integral(&ipath, &x)?;
    let (storage, reflected) = match &exp.storage {
        StorageSpec::Reflected { z0, scheme } => {
            let r = reflect(*z0, &xt, *scheme, &mut seed.rng("bridge"))?;
            (StoragePath::from_reflection(&xt, &r)?, Some(r))
        }
        StorageSpec::Explicit(y) => (StoragePath::from_finite_variation(&xt, y)?, None),
    };
    let checkpoint_indices = exp
        .checkpoints
        .iter()
        .map(|&t| {
            x.grid()
                .index_of(t)
                .ok_or_else(|| Error::Internal(format!("checkpoint {t} missing from grid")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Replication {
        x,
        xt,
        storage,
        reflected,
        checkpoint_indices,
    })
}

fn evaluate(exp: &Experiment, rep: &Replication) -> Result<(Option<MartingaleDecomposition>, Option<QVDecomposition>)> {
    let mart = if exp.needs_martingale() {
        Some(kw_martingale_real(&exp.model, &rep.xt, &rep.storage, &exp.checkpoints)?)
    } else {
        None
    };
    let qv = if exp.needs_qv() {
        Some(quadratic_variation(&exp.model, &rep.xt, &rep.storage, &exp.checkpoints)?)
    } else {
        None
    };
    Ok((mart, qv))
}

fn record(exp: &Experiment, rep: u64, model_mean: &[f64]) -> Result<Vec<checks::Probe>> {
    let r = simulate_replication(exp, rep)?;
    let (mart, qv) = evaluate(exp, &r)?;
    let ctx = checks::Context {
        times: r.x.grid().times(),
        cps: &r.checkpoint_indices,
        x: &r.x,
        xt: &r.xt,
        storage: &r.storage,
        reflected: r.reflected.as_ref(),
        mart: mart.as_ref(),
        qv: qv.as_ref(),
        model_mean,
    };
    exp.tests.iter().map(|t| t.probe(&ctx)).collect()
}

/// Runs all replications and all selected tests.
pub fn run_experiment(exp: &Experiment, opts: &RunOptions) -> Result<MCReport> {
    let targets = exp.validate()?;
    let start = Instant::now();
    let model_mean = mean_vector(&exp.model)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Internal(e.to_string()))?;
    let (rows, outcomes) = pool.install(|| -> Result<_> {
        let reps = (0..exp.replications as u64)
            .into_par_iter()
            .map(|r| record(exp, r, &model_mean))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        let mut outcomes = Vec::new();
        for (j, test) in exp.tests.iter().enumerate() {
            let cells = checks::Cells {
                reps: &reps,
                test: j,
                deterministic: opts.deterministic_reduce,
            };
            let (r, o) = test.judge(&exp.checkpoints, exp.z, targets[j], &cells);
            rows.extend(r);
            outcomes.push(o);
        }
        Ok((rows, outcomes))
    })?;
    Ok(MCReport {
        rows,
        outcomes,
        base_seed: exp.base_seed,
        replications: exp.replications,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Writes the paths of replication `rep` to `dir`: `paths_rep{rep}.csv`
/// (the Lévy path), `storage_rep{rep}.csv` (t, xt, z, l; reflected runs) and
/// `decomposition_rep{rep}.csv` (the martingale terms at the checkpoints).
pub fn dump_replication(exp: &Experiment, rep: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let r = simulate_replication(exp, rep)?;
    r.x.write_csv(BufWriter::new(File::create(dir.join(format!("paths_rep{rep}.csv")))?))?;
    if let Some(refl) = &r.reflected {
        refl.write_csv(&r.xt, BufWriter::new(File::create(dir.join(format!("storage_rep{rep}.csv")))?))?;
    }
    let real_ok = exp.model.spectrally_positive() && exp.integrand.is_nonnegative();
    if real_ok {
        let m = kw_martingale_real(&exp.model, &r.xt, &r.storage, &exp.checkpoints)?;
        let qv = quadratic_variation(&exp.model, &r.xt, &r.storage, &exp.checkpoints)?;
        write_decomposition_csv(&m, &qv, BufWriter::new(File::create(dir.join(format!("decomposition_rep{rep}.csv")))?))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::{JumpComponent, JumpLaw};

    fn mm1_experiment(tests: Vec<TestSpec>, reps: usize) -> Experiment {
        Experiment {
            model: LevyModel::scalar(-1.0, 0.0, vec![JumpComponent::new(0.5, JumpLaw::Exponential { coordinate: 0, rate: 1.0 })])
                .unwrap(),
            integrand: IntegrandSpec::constant(vec![1.0]),
            storage: StorageSpec::Reflected { z0: 0.0, scheme: MinimumScheme::BrownianBridge },
            horizon: 20.0,
            dt: 0.01,
            checkpoints: vec![5.0, 10.0, 20.0],
            replications: reps,
            base_seed: 11,
            z: 4.0,
            tests,
        }
    }

    #[test]
    fn zero_model_passes_trivially() {
        let exp = Experiment {
            model: LevyModel::zero(1),
            storage: StorageSpec::Explicit(FiniteVariationSpec::constant(0.0)),
            tests: vec![
                TestSpec::ZeroMean { abs_tol: 1e-12, min_pass_fraction: 0.95, corrupt_term_phi: None },
                TestSpec::L2Identity { rel_tol: 0.1, abs_tol: 1e-12 },
                TestSpec::RateDecay { max_slope: -0.35, min_slope: None },
            ],
            ..mm1_experiment(vec![], 4)
        };
        let rep = run_experiment(&exp, &RunOptions::default()).unwrap();
        assert!(rep.passed(), "{}", rep.summary());
        assert!(rep.rows_for("zero_mean").all(|r| r.estimate == 0.0));
    }

    #[test]
    fn validation_errors() {
        let mut exp = mm1_experiment(vec![TestSpec::RateDecay { max_slope: -0.35, min_slope: None }], 1);
        assert!(matches!(exp.validate(), Err(Error::Config(_))));
        exp.replications = 2;
        exp.checkpoints = vec![5.0, 20.0];
        assert!(matches!(exp.validate(), Err(Error::Config(_))));
        exp.checkpoints = vec![5.0, 25.0, 30.0];
        assert!(exp.validate().is_err());
        exp.checkpoints = vec![5.0, 10.0, 20.0];
        assert!(exp.validate().is_ok());
        exp.tests = vec![TestSpec::PkLimit { alpha: -1.0, rel_tol: 0.02, abs_tol: 0.0 }];
        assert!(matches!(exp.validate(), Err(Error::Input(_))));
    }

    #[test]
    fn reproducible_across_threads_and_reductions() {
        let tests = vec![
            TestSpec::ZeroMean { abs_tol: 1e-12, min_pass_fraction: 0.95, corrupt_term_phi: None },
            TestSpec::PkLimit { alpha: 1.0, rel_tol: 0.02, abs_tol: 1e-12 },
            TestSpec::Pasta { observer: 0, weight: Weight::ExpNegStorage, anticipating: false, abs_tol: 1e-12 },
        ];
        let exp = mm1_experiment(tests, 8);
        let det = |threads| {
            let r = run_experiment(&exp, &RunOptions { threads: Some(threads), deterministic_reduce: true }).unwrap();
            let mut buf = Vec::new();
            r.write_csv(&mut buf, None).unwrap();
            buf
        };
        assert_eq!(det(1), det(3));
        let par = run_experiment(&exp, &RunOptions { threads: Some(3), deterministic_reduce: false }).unwrap();
        let seq = run_experiment(&exp, &RunOptions { threads: Some(1), deterministic_reduce: true }).unwrap();
        for (a, b) in par.rows.iter().zip(&seq.rows) {
            assert!((a.estimate - b.estimate).abs() <= 1e-12 * (1.0 + b.estimate.abs()));
        }
    }

    #[test]
    fn standard_error_scales_with_replications() {
        let tests = vec![TestSpec::PkLimit { alpha: 1.0, rel_tol: 0.02, abs_tol: 1e-12 }];
        let se = |reps| {
            let mut exp = mm1_experiment(tests.clone(), reps);
            exp.checkpoints = vec![20.0];
            run_experiment(&exp, &RunOptions::default()).unwrap().rows[0].se
        };
        let ratio = se(400) / se(200);
        assert!((ratio * 2f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn corrupted_term_is_detected() {
        let tests = vec![
            TestSpec::ZeroMean { abs_tol: 1e-12, min_pass_fraction: 0.95, corrupt_term_phi: None },
            TestSpec::ZeroMean { abs_tol: 1e-12, min_pass_fraction: 0.95, corrupt_term_phi: Some(1.1) },
        ];
        let rep = run_experiment(&mm1_experiment(tests, 200), &RunOptions::default()).unwrap();
        let ok = rep.outcome("zero_mean").unwrap();
        let bad = rep.outcome("zero_mean_corrupted").unwrap();
        assert!(ok.criterion_held, "{}", rep.summary());
        assert!(!bad.criterion_held && bad.ok());
        assert!(rep.passed());
    }

    #[test]
    fn dumps_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let exp = mm1_experiment(vec![], 2);
        dump_replication(&exp, 0, dir.path()).unwrap();
        for f in ["paths_rep0.csv", "storage_rep0.csv", "decomposition_rep0.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
