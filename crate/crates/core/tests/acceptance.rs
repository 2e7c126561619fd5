//! Acceptance suite. Runs every criterion at its stated scale and tolerance
//! and prints one line per criterion. Built with `harness = false` so the
//! lines are shown under a plain `cargo test`.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use levy_storage::config::{fixture, Overrides};
use levy_storage::exponents::phi;
use levy_storage::integrands::{stochastic_integral, IntegrandSpec, IntegratedPath};
use levy_storage::martingale::{kw_martingale_real, quadratic_variation, FiniteVariationSpec, StoragePath};
use levy_storage::paths::{JumpRecord, SamplePath, SeedPolicy, TimeGrid};
use levy_storage::verify::{pk_target, run_experiment, Experiment, MCReport, RunOptions, TestSpec};
use levy_storage::{JumpComponent, JumpLaw, LevyModel};

type Check = Result<String, String>;

fn experiment(name: &str) -> Experiment {
    fixture(name)
        .and_then(|f| f.config())
        .and_then(|c| c.to_experiment(&Overrides::default()))
        .unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

fn run(exp: &Experiment) -> Result<MCReport, String> {
    run_experiment(exp, &RunOptions::default()).map_err(|e| e.to_string())
}

fn last_row(rep: &MCReport, test: &str) -> Result<(f64, f64, f64), String> {
    rep.rows_for(test)
        .last()
        .map(|r| (r.estimate, r.se, r.target))
        .ok_or_else(|| format!("no {test} row"))
}

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pk_run(name: &str, alpha: f64) -> Result<(f64, f64, f64, f64), String> {
    let mut exp = experiment(name);
    exp.tests = vec![TestSpec::PkLimit { alpha, rel_tol: 0.03, abs_tol: 0.0 }];
    let rep = run(&exp)?;
    let (est, se, target) = last_row(&rep, "pk_limit")?;
    Ok((est, se, target, rep.runtime_secs))
}

fn criterion_1() -> Check {
    let (est, se, target, secs) = pk_run("mm1_pk", 1.0)?;
    let rel = (est - 2.0 / 3.0).abs() / (2.0 / 3.0);
    verdict(
        rel <= 0.03 && (target - 2.0 / 3.0).abs() < 1e-12 && secs <= 120.0,
        format!("M/M/1 est {est:.5} (se {se:.1e}) vs 2/3, rel err {:.2}%, {secs:.1}s", rel * 100.0),
    )
}

fn criterion_2() -> Check {
    let (est, se, _, secs) = pk_run("reflected_brownian", 1.0)?;
    let rel = (est - 2.0 / 3.0).abs() / (2.0 / 3.0);
    // Stationary law Exp(2): E e^{-aZ} = 2/(2+a).
    let model = experiment("reflected_brownian").model;
    let mut transform_gap: f64 = 0.0;
    for a in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let t = pk_target(&model, &[1.0], a).map_err(|e| e.to_string())?;
        transform_gap = transform_gap.max((t - 2.0 / (2.0 + a)).abs());
    }
    let (est2, _, _, _) = pk_run("reflected_brownian", 2.0)?;
    let rel2 = (est2 - 0.5).abs() / 0.5;
    verdict(
        rel <= 0.03 && rel2 <= 0.03 && transform_gap < 1e-12,
        format!(
            "RBM est {est:.5} (se {se:.1e}) vs 2/3, rel err {:.2}%; at a=2 est {est2:.5} vs Exp(2) transform 0.5, rel err {:.2}%; {secs:.1}s",
            rel * 100.0,
            rel2 * 100.0
        ),
    )
}

fn criterion_3() -> Check {
    let (est, se, _, _) = pk_run("transient", 1.0)?;
    verdict(est <= 0.02, format!("transient est {est:.5} (se {se:.1e}) <= 0.02"))
}

fn short_martingale_run(name: &str, l2: bool) -> Result<MCReport, String> {
    let mut exp = experiment(name);
    exp.horizon = 100.0;
    exp.checkpoints = vec![10.0, 50.0, 100.0];
    exp.replications = 2000;
    exp.z = 4.0;
    exp.tests = vec![
        TestSpec::ZeroMean { abs_tol: 0.0, min_pass_fraction: 0.95, corrupt_term_phi: None },
        TestSpec::ZeroMean { abs_tol: 0.0, min_pass_fraction: 0.95, corrupt_term_phi: Some(1.1) },
    ];
    if l2 {
        exp.tests.push(TestSpec::L2Identity { rel_tol: 0.1, abs_tol: 0.0 });
    }
    run(&exp)
}

fn criterion_4_and_5() -> (Check, Check) {
    let mut c4 = (true, Vec::new());
    let mut c5 = (true, Vec::new());
    for (name, l2) in [("mm1_pk", true), ("reflected_brownian", true), ("transient", false)] {
        let rep = match short_martingale_run(name, l2) {
            Ok(r) => r,
            Err(e) => return (Err(e.clone()), Err(e)),
        };
        let held = rep.outcome("zero_mean").is_some_and(|o| o.criterion_held);
        let control = rep.outcome("zero_mean_corrupted").is_some_and(|o| !o.criterion_held);
        let worst = rep
            .rows_for("zero_mean")
            .map(|r| (r.estimate / r.se).abs())
            .fold(0.0, f64::max);
        c4.0 &= held && control;
        c4.1.push(format!("{name}: max |mean|/se {worst:.2}, control rejected {control}"));
        if l2 {
            match rep.rows_for("l2_identity").find(|r| r.t == 100.0) {
                Some(r) => {
                    let rel = (r.estimate - r.target).abs() / r.target;
                    c5.0 &= rel <= 0.1;
                    c5.1.push(format!("{name}: E M^2 {:.4} vs {:.4}, rel {:.1}%", r.estimate, r.target, rel * 100.0));
                }
                None => {
                    c5.0 = false;
                    c5.1.push(format!("{name}: no l2_identity row at t=100"));
                }
            }
        }
    }
    (verdict(c4.0, c4.1.join("; ")), verdict(c5.0, c5.1.join("; ")))
}

fn criterion_6() -> Check {
    let mut exp = experiment("mm1_rate_decay");
    exp.checkpoints = vec![10.0, 30.0, 100.0, 300.0, 1000.0];
    exp.horizon = 1000.0;
    exp.replications = 500;
    exp.tests = vec![TestSpec::RateDecay { max_slope: -0.35, min_slope: Some(-0.65) }];
    let rep = run(&exp)?;
    let (slope, _, _) = last_row(&rep, "rate_decay_slope")?;
    verdict((-0.65..=-0.35).contains(&slope), format!("slope {slope:.3} in [-0.65, -0.35]"))
}

fn criterion_7() -> Check {
    let mut exp = experiment("modulated_strong_law");
    exp.horizon = 5000.0;
    exp.checkpoints = vec![5000.0];
    exp.replications = 50;
    exp.tests = vec![
        TestSpec::StrongLaw { abs_tol: 0.0 },
        TestSpec::ReflectedLimit { rel_tol: 0.03, abs_tol: 0.0 },
    ];
    let rep = run(&exp)?;
    let (x, xse, xt) = last_row(&rep, "strong_law")?;
    let (r, rse, rt) = last_row(&rep, "reflected_limit")?;
    let ok_x = (xt + 0.2).abs() < 1e-12 && (x - xt).abs() <= 4.0 * xse;
    let ok_r = (rt - 0.2).abs() < 1e-12 && (r - rt).abs() <= (0.03 * rt).max(4.0 * rse);
    verdict(
        ok_x && ok_r,
        format!("X(T)/T {x:.4} (se {xse:.1e}) vs -0.2; reflected limit {r:.4} (se {rse:.1e}) vs 0.2"),
    )
}

fn criterion_8() -> Check {
    let mut exp = experiment("pasta");
    exp.tests.retain(|t| matches!(t, TestSpec::Pasta { .. }));
    for t in &mut exp.tests {
        if let TestSpec::Pasta { abs_tol, .. } = t {
            *abs_tol = 0.0;
        }
    }
    let rep = run(&exp)?;
    let (gap, se, _) = last_row(&rep, "pasta")?;
    let (agap, ase, _) = last_row(&rep, "pasta_anticipating")?;
    let ok = gap.abs() <= 4.0 * se
        && rep.outcome("pasta").is_some_and(|o| o.criterion_held)
        && rep.outcome("pasta_anticipating").is_some_and(|o| !o.criterion_held);
    verdict(
        ok,
        format!("gap {gap:.2e} (se {se:.1e}); anticipating control gap {agap:.3} (se {ase:.1e}) rejected"),
    )
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

fn drift_residual(dt: f64) -> f64 {
    let (c, horizon, alpha) = (-0.8, 2.0, 0.5);
    let model = LevyModel::scalar(c, 0.0, vec![]).unwrap();
    let grid = Arc::new(TimeGrid::uniform(horizon, dt).unwrap());
    let values: Vec<f64> = grid.times().iter().map(|t| c * t).collect();
    let x = SamplePath::from_parts(grid, 1, values, vec![], vec![0.0]).unwrap();
    let lvl = IntegrandSpec::constant(vec![alpha]).realize(horizon, &SeedPolicy::new(0, 0)).unwrap();
    let xt = stochastic_integral(&lvl, &x).unwrap();
    let st = StoragePath::from_finite_variation(&xt, &FiniteVariationSpec::constant(3.0)).unwrap();
    kw_martingale_real(&model, &xt, &st, &[horizon]).unwrap().total[0]
}

fn criterion_9() -> Check {
    let model = LevyModel::scalar(0.0, 0.0, vec![JumpComponent::new(1.0, JumpLaw::PointMass { jump: vec![1.0] })])
        .map_err(|e| e.to_string())?;
    let e1 = (-1.0f64).exp();
    let phi1 = phi(&model, &[1.0]).map_err(|e| e.to_string())?;
    let m_hand = phi1 * (0.5 + 0.5 * e1) + (1.0 - e1);
    let qv_hand = (1.0 - e1).powi(2);
    let xt = single_jump_path(1e-4);
    let st = StoragePath::from_finite_variation(&xt, &FiniteVariationSpec::constant(0.0)).map_err(|e| e.to_string())?;
    let m = kw_martingale_real(&model, &xt, &st, &[1.0]).map_err(|e| e.to_string())?.total[0];
    let qv = quadratic_variation(&model, &xt, &st, &[1.0]).map_err(|e| e.to_string())?.jump[0];
    let (r1, r2, r3) = (drift_residual(0.01), drift_residual(0.005), drift_residual(0.0025));
    let ok = (m - 0.199_788_5).abs() <= 1e-6
        && (m - m_hand).abs() <= 1e-6
        && (qv - 0.399_576_4).abs() <= 1e-6
        && (qv - qv_hand).abs() <= 1e-6
        && (r1 / r2 - 2.0).abs() <= 0.1
        && (r2 / r3 - 2.0).abs() <= 0.1;
    verdict(
        ok,
        format!("M(1) {m:.7}, jump QV {qv:.7}; drift residual ratios {:.3}, {:.3}", r1 / r2, r2 / r3),
    )
}

fn cli_report(dir: &Path, threads: &str) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_levy-storage"))
        .args(["run", "--fixture", "mm1_martingale", "--reps", "64", "--horizon", "20", "--seed", "7"])
        .args(["--threads", threads, "--deterministic-reduce", "--no-timestamp", "--out-dir"])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    // 2 means the run completed with a failing verdict, which is fine here.
    if !matches!(out.status.code(), Some(0 | 2)) {
        return Err(format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    std::fs::read(dir.join("report.csv")).map_err(|e| e.to_string())
}

fn criterion_10() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = cli_report(&tmp.path().join("a"), "1")?;
    let b = cli_report(&tmp.path().join("b"), "4")?;
    let c = cli_report(&tmp.path().join("c"), "4")?;
    verdict(
        a == b && b == c && !a.is_empty(),
        format!("report.csv of {} bytes identical across 1, 4, 4 threads", a.len()),
    )
}

fn main() {
    let start = Instant::now();
    let (c4, c5) = criterion_4_and_5();
    let results: Vec<(u32, &str, Check)> = vec![
        (1, "PK limit, M/M/1", criterion_1()),
        (2, "PK limit, reflected Brownian motion", criterion_2()),
        (3, "transient case", criterion_3()),
        (4, "zero mean and corrupted control", c4),
        (5, "L2 identity", c5),
        (6, "rate decay", criterion_6()),
        (7, "strong law, Markov-modulated", criterion_7()),
        (8, "PASTA and anticipating control", criterion_8()),
        (9, "deterministic oracles", criterion_9()),
        (10, "reproducibility", criterion_10()),
    ];
    let mut failed = 0;
    for (k, title, res) in &results {
        match res {
            Ok(d) => println!("criterion {k:>2} PASS  {title}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {k:>2} FAIL  {title}: {d}");
            }
        }
    }
    println!("acceptance: {}/{} passed in {:.1}s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
