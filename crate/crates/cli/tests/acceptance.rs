//! Acceptance suite. Every criterion prints one `ACn PASS|FAIL` line to
//! stderr (bypassing the test harness capture) and then asserts.
//!
//! Criteria run one at a time so the wall-clock budgets are not distorted
//! by the other criteria competing for cores.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use dyncal::design::random_lhd;
use dyncal::emulator::FitOptions;
use dyncal::gp::BASE_JITTER;
use dyncal::inverse::discrepancy;
use dyncal::rng::stream;
use dyncal::saei::{exact_ei_rank1, saei, solve_saddlepoint, CgfContext};
use dyncal::simulators::{make_target, Simulator, SimulatorKind, SimulatorSpec, DEFAULT_NOISE_RATIO};
use dyncal::{maximin_lhd, Design, DesignSet, Extraction, PriorConfig, SvdGpModel};
use dyncal_cli::{study, Resolved, StudyConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: &str, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "\n{id} {verdict} {title}: {detail}");
    drop(err);
    assert!(pass, "{id} {title}: {detail}");
}

fn resolve(toml: &str, out: &Path) -> Resolved {
    let mut config = StudyConfig::from_toml(toml).expect("valid test config");
    config.out_dir = out.to_path_buf();
    config.resolve().expect("resolvable test config")
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

/// Random CGF context with an orthonormal basis, together with the dense
/// covariance and mean it stands for.
fn random_context(seed: u64, l: usize, p: usize) -> (CgfContext, DMatrix<f64>, DVector<f64>) {
    let mut r = stream(seed, "acceptance-cgf", 0);
    let raw = DMatrix::from_fn(l, p, |_, _| r.random_range(-1.0..1.0));
    let u = raw.qr().q();
    let d: Vec<f64> = (0..p).map(|_| r.random_range(0.3..4.0)).collect();
    let b = DMatrix::from_fn(l, p, |t, i| u[(t, i)] * d[i]);
    let s2 = DVector::from_fn(p, |_, _| r.random_range(0.01..1.0));
    let sigma2 = r.random_range(0.05..1.0);
    let mu = DVector::from_fn(l, |_, _| r.random_range(-2.0..2.0));
    let mu_b = b.transpose() * &mu;
    let cov = &b * DMatrix::from_diagonal(&s2) * b.transpose() + DMatrix::identity(l, l) * sigma2;
    (CgfContext::new(mu.clone(), mu_b, &d, s2, sigma2), cov, mu)
}

/// `-1/2 log det(I - 2s Sigma) + s mu' (I - 2s Sigma)^{-1} mu` by Cholesky.
fn dense_cgf(cov: &DMatrix<f64>, mu: &DVector<f64>, s: f64) -> f64 {
    let l = mu.len();
    let m = DMatrix::identity(l, l) - cov * (2.0 * s);
    let chol = m.cholesky().expect("admissible s keeps I - 2s Sigma positive definite");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * log_det + s * mu.dot(&chol.solve(mu))
}

/// Admissible arguments spread over `[-3 s_max, 0.95 s_max]`.
fn admissible(ctx: &CgfContext, r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| ctx.s_max * r.random_range(-3.0..0.95)).collect()
}

#[test]
fn ac1_cgf_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let mut r = stream(0, "ac1", 0);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for inst in 0..100u64 {
        let l = r.random_range(5..=12);
        let p = r.random_range(1..=4usize.min(l));
        let (ctx, cov, mu) = random_context(inst, l, p);
        for s in admissible(&ctx, &mut r, 20) {
            let fast = ctx.cgf(s).unwrap();
            let dense = dense_cgf(&cov, &mu, s);
            worst = worst.max((fast - dense).abs() / dense.abs().max(1e-300));
            count += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "AC1",
        "cgf equivalence",
        worst <= 1e-10 && secs < 5.0,
        &format!("{count} evaluations, max relative error {worst:.2e} (limit 1e-10), {secs:.2} s (limit 5 s)"),
    );
}

#[test]
fn ac2_cumulant_identities() {
    let _g = serial();
    let start = Instant::now();
    let mut r = stream(0, "ac2", 0);
    let (mut zero_ok, mut w1, mut w2, mut wfd) = (true, 0.0f64, 0.0f64, 0.0f64);
    for inst in 0..100u64 {
        let l = r.random_range(5..=12);
        let p = r.random_range(1..=4usize.min(l));
        let (ctx, cov, mu) = random_context(1000 + inst, l, p);
        zero_ok &= ctx.cgf(0.0).unwrap() == 0.0;
        let (k1, k2, _) = ctx.derivatives(0.0).unwrap();
        w1 = w1.max(rel_err(k1, ctx.mean()));
        w1 = w1.max(rel_err(k1, mu.norm_squared() + cov.trace()));
        let var = 2.0 * (&cov * &cov).trace() + 4.0 * (mu.transpose() * &cov * &mu)[0];
        w2 = w2.max(rel_err(k2, var));
        for s in admissible(&ctx, &mut r, 5) {
            // Central differences of kappa itself, with a step small against
            // the distance to the singularity at s_max.
            let h = 2e-3 * (ctx.s_max - s).min(ctx.s_max);
            let k = |t: f64| ctx.cgf(t).unwrap();
            let (d1, d2, d3) = ctx.derivatives(s).unwrap();
            let fd1 = (k(s + h) - k(s - h)) / (2.0 * h);
            let fd2 = (k(s + h) - 2.0 * k(s) + k(s - h)) / (h * h);
            let fd3 = (k(s + 2.0 * h) - 2.0 * k(s + h) + 2.0 * k(s - h) - k(s - 2.0 * h)) / (2.0 * h * h * h);
            wfd = wfd.max(rel_err(fd1, d1)).max(rel_err(fd2, d2)).max(rel_err(fd3, d3));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "AC2",
        "cumulant identities",
        zero_ok && w1 <= 1e-8 && w2 <= 1e-8 && wfd <= 1e-4 && secs < 10.0,
        &format!(
            "kappa(0)=0 exact: {zero_ok}; kappa'(0) rel err {w1:.2e}; kappa''(0) rel err {w2:.2e}; \
             finite differences rel err {wfd:.2e}; {secs:.2} s"
        ),
    );
}

#[test]
fn ac3_saddlepoint_solver() {
    let _g = serial();
    let mut r = stream(0, "ac3", 0);
    let (mut worst, mut sign_ok) = (0.0f64, true);
    for inst in 0..100u64 {
        let l = r.random_range(5..=12);
        let p = r.random_range(1..=4usize.min(l));
        let (ctx, _, _) = random_context(2000 + inst, l, p);
        let mu_delta = ctx.mean();
        let delta_min = mu_delta * 10f64.powf(r.random_range(-2.0..2.0));
        let sol = solve_saddlepoint(&ctx, delta_min, 1e-10).unwrap();
        let (k1, _, _) = ctx.derivatives(sol.s0).unwrap();
        worst = worst.max((k1 - delta_min).abs() / delta_min.max(1.0));
        sign_ok &= sol.s0.signum() == (delta_min - mu_delta).signum();
    }
    report(
        "AC3",
        "saddlepoint solver",
        worst <= 1e-8 && sign_ok,
        &format!("100 contexts, max |kappa'(s0) - delta_min| / max(1, delta_min) = {worst:.2e} (limit 1e-8), signs agree: {sign_ok}"),
    );
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

/// saEI and exact EI over a 200-point grid for the rank-one emulator fitted
/// on a 5-point random Latin hypercube drawn from `seed`.
fn rank_one_curves(seed: u64) -> (usize, Vec<f64>, Vec<f64>) {
    let spec = SimulatorSpec::new(SimulatorKind::GfunSeparable);
    let x = Design::from_flat(1, random_lhd(5, 1, &mut stream(seed, "ac4-design", 0))).unwrap();
    let cols: Vec<Vec<f64>> = x.points().map(|p| spec.evaluate(p).unwrap()).collect();
    let target = make_target(&spec, &[0.75], DEFAULT_NOISE_RATIO, seed).unwrap();
    let delta_min = cols.iter().map(|c| discrepancy(&target.xi, c)).fold(f64::INFINITY, f64::min);
    let data = DesignSet::from_columns(x, &cols, spec.times.clone()).unwrap();
    // A vanishing residual-variance prior makes the coefficient law the whole
    // predictive law, which is the setting of the closed-form rank-one EI.
    let priors = PriorConfig { beta: 1e-12, ..PriorConfig::default() };
    let model = SvdGpModel::fit_with(&data, &FitOptions { priors, seed, ..FitOptions::default() }, None).unwrap();
    let xi = DVector::from_vec(target.xi);
    let grid: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
    let sa = grid.iter().map(|&g| saei(&model, &[g], &xi, delta_min).unwrap_or(0.0)).collect();
    let ex = if model.p == 1 {
        grid.iter().map(|&g| exact_ei_rank1(&model, &[g], &xi, delta_min).unwrap()).collect()
    } else {
        Vec::new()
    };
    (model.p, sa, ex)
}

#[test]
fn ac4_saei_vs_exact_rank_one() {
    let _g = serial();
    let start = Instant::now();
    let (p, sa, ex) = rank_one_curves(0);
    let secs = start.elapsed().as_secs_f64();
    let (r, same) = if p == 1 { (pearson(&sa, &ex), argmax(&sa) == argmax(&ex)) } else { (f64::NAN, false) };
    let survey: Vec<(f64, bool)> = (1..12)
        .map(|s| {
            let (p, a, e) = rank_one_curves(s);
            if p == 1 {
                (pearson(&a, &e), argmax(&a) == argmax(&e))
            } else {
                (f64::NAN, false)
            }
        })
        .collect();
    let strong = survey.iter().filter(|(r, _)| *r > 0.999).count();
    let agree = survey.iter().filter(|(_, a)| *a).count();
    let low = survey.iter().map(|(r, _)| *r).fold(f64::INFINITY, f64::min);
    report(
        "AC4",
        "saEI vs exact rank-one EI",
        p == 1 && r > 0.999 && same && secs < 10.0,
        &format!(
            "p = {p}, Pearson r = {r:.6} (limit > 0.999), argmax coincide: {same}, {secs:.2} s; \
             designs 1..11: r > 0.999 in {strong}/11, argmax agree in {agree}/11, lowest r {low:.5}"
        ),
    );
}

#[test]
fn ac5_saei_vs_monte_carlo() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let res = resolve(
        "seed = 0\nn0 = 6\nx_star = [0.7861]\ngrid_size = 200\nmc_samples = 50000\n[simulator]\nname = \"example1\"\n",
        dir.path(),
    );
    let start = Instant::now();
    let map = study::ei_map(&res).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let within = |r: &study::EiRow| (r.saei - r.mc).abs() <= (3.0 * r.mc_se).max(0.02 * r.mc.abs());
    let ok = map.rows.iter().filter(|r| within(r)).count();
    let n = map.rows.len();
    let frac = ok as f64 / n as f64;
    let silent: Vec<&study::EiRow> = map.rows.iter().filter(|r| r.mc == 0.0 && r.mc_se == 0.0).collect();
    let silent_max = silent.iter().map(|r| r.saei).fold(0.0, f64::max);
    let sampled: Vec<&study::EiRow> = map.rows.iter().filter(|r| r.mc_se > 0.0).collect();
    let sampled_ok = sampled.iter().filter(|r| within(r)).count();
    let ratio = map.saei_secs / map.mc_secs;
    // The same study under other master seeds, for the record: where MC does
    // sample improvement the remaining gap is the saddlepoint approximation's.
    let others: Vec<String> = (1..=3u64)
        .map(|seed| {
            let d = tempfile::tempdir().unwrap();
            let mut r = resolve(
                "n0 = 6\nx_star = [0.7861]\ngrid_size = 200\nmc_samples = 50000\n[simulator]\nname = \"example1\"\n",
                d.path(),
            );
            r.config.seed = seed;
            let m = study::ei_map(&r).unwrap();
            let sampled: Vec<&study::EiRow> = m.rows.iter().filter(|r| r.mc_se > 0.0).collect();
            format!(
                "seed {seed}: {}/200 overall, {}/{} with sampled improvement",
                m.rows.iter().filter(|r| within(r)).count(),
                sampled.iter().filter(|r| within(r)).count(),
                sampled.len()
            )
        })
        .collect();
    report(
        "AC5",
        "saEI vs Monte-Carlo EI",
        frac >= 0.95 && ratio <= 0.01 && secs < 600.0,
        &format!(
            "{ok}/{n} grid points within max(3 SE, 2% of MC) (need 95%); saEI/MC time ratio {ratio:.2e} (limit 1e-2); {secs:.1} s; \
             p = {}, delta_min = {:.4e}; {} points had no improving MC draw (SE = 0, tolerance 0) with saEI up to {silent_max:.2e}; \
             points with sampled improvement: {sampled_ok}/{} within tolerance; other seeds: {}",
            map.p,
            map.delta_min,
            silent.len(),
            sampled.len(),
            others.join("; "),
        ),
    );
}

#[test]
fn ac6_interpolation_and_variance_contracts() {
    let _g = serial();
    let cases = [
        (SimulatorKind::Example1, 6usize),
        (SimulatorKind::Example1, 12),
        (SimulatorKind::GfunSeparable, 5),
        (SimulatorKind::Harari, 30),
        (SimulatorKind::Environmental, 30),
    ];
    let (mut mean_err, mut var_err, mut min_eig) = (0.0f64, 0.0f64, f64::INFINITY);
    let (mut checked, mut skipped) = (0, 0);
    for (k, (kind, n)) in cases.into_iter().enumerate() {
        for seed in 0..3u64 {
            let spec = SimulatorSpec::new(kind);
            let x = maximin_lhd(n, spec.input_dim(), seed + 10 * k as u64, 10);
            let cols: Vec<Vec<f64>> = x.points().map(|p| spec.evaluate(p).unwrap()).collect();
            let data = DesignSet::from_columns(x, &cols, spec.times.clone()).unwrap();
            let model = SvdGpModel::fit(&data, 0.95, PriorConfig::default(), seed).unwrap();
            if model.gps.iter().any(|g| g.jitter != BASE_JITTER) {
                skipped += 1;
                continue;
            }
            checked += 1;
            for j in 0..model.n_train() {
                let pred = model.predict(model.x.point(j));
                for i in 0..model.p {
                    mean_err = mean_err.max((pred.c_hat[i] - model.v_star[(i, j)]).abs());
                    var_err = var_err.max(pred.s2[i].abs());
                }
                let eig = model.predictive_covariance(&pred).symmetric_eigenvalues();
                min_eig = min_eig.min(eig.min());
            }
        }
    }
    report(
        "AC6",
        "interpolation and variance contracts",
        checked > 0 && mean_err <= 1e-6 && var_err <= 1e-6 && min_eig >= -1e-8,
        &format!(
            "{checked} models at base jitter ({skipped} escalated, not covered); max mean error {mean_err:.2e}, \
             max variance {var_err:.2e} (limits 1e-6), smallest covariance eigenvalue {min_eig:.2e} (limit -1e-8)"
        ),
    );
}

#[test]
fn ac7_esl2d_vs_naive() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let res = resolve(
        "seed = 0\nreplications = 20\nn_design = 30\ntarget_mode = \"redraw_x_star\"\n[simulator]\nname = \"harari\"\n",
        dir.path(),
    );
    let start = Instant::now();
    let rows = study::extract_compare(&res).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let esl2d = median(&rows.iter().map(|r| r.log_d_xi_esl2d).collect::<Vec<_>>());
    let naive = median(&rows.iter().map(|r| r.log_d_xi_naive).collect::<Vec<_>>());
    let wins = rows.iter().filter(|r| r.log_d_xi_esl2d <= r.log_d_xi_naive).count();
    report(
        "AC7",
        "ESL2D vs naive extraction",
        rows.len() == 20 && esl2d <= naive && secs < 600.0,
        &format!("median log D_xi esl2d {esl2d:.4} vs naive {naive:.4}; esl2d no worse in {wins}/20; {secs:.1} s"),
    );
}

#[test]
fn ac8_end_to_end_calibration() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let res = resolve(
        "seed = 0\nreplications = 10\nn0 = 6\nn_new = 12\nx_star = [0.7861]\nextraction = \"esl2d\"\n[simulator]\nname = \"example1\"\n",
        dir.path(),
    );
    let start = Instant::now();
    let summary = study::calibrate(&res).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let initial = median(&summary.initial_d_xi());
    let finals = median(&summary.final_d_xi(Extraction::Esl2d));
    let monotone = summary.replications.iter().all(|o| {
        let mut prev = o.trace.initial_delta_min;
        o.trace.records.iter().all(|r| {
            let ok = r.delta_min <= prev;
            prev = r.delta_min;
            ok
        })
    });
    report(
        "AC8",
        "end-to-end calibration",
        summary.replications.len() == 10 && finals < initial && monotone && secs < 900.0,
        &format!("median D_xi initial design {initial:.4e} -> final {finals:.4e}; delta_min non-increasing in every replication: {monotone}; {secs:.1} s"),
    );
}

#[test]
fn ac9_design_size_consistency() {
    let _g = serial();
    let start = Instant::now();
    let mut medians = Vec::new();
    for n in [12, 30, 60] {
        let dir = tempfile::tempdir().unwrap();
        let res = resolve(
            &format!("seed = 0\nreplications = 20\nn_design = {n}\nx_star = [0.7861]\n[simulator]\nname = \"example1\"\n"),
            dir.path(),
        );
        let rows = study::extract_compare(&res).unwrap();
        medians.push(median(&rows.iter().map(|r| r.log_d_xi_esl2d.exp()).collect::<Vec<_>>()));
    }
    let secs = start.elapsed().as_secs_f64();
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    report(
        "AC9",
        "median D_xi non-increasing in design size",
        monotone && secs < 900.0,
        &format!("median ESL2D D_xi at N = 12, 30, 60: {:.4e}, {:.4e}, {:.4e}; {secs:.1} s", medians[0], medians[1], medians[2]),
    );
}

fn dyncal(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_dyncal")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "dyncal {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// Every CSV and model file under `dir`, sorted by name.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "svdgp"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn ac10_determinism() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = |name: &str, body: &str| {
        let path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, body).unwrap();
        path.to_string_lossy().into_owned()
    };
    let calib = cfg(
        "calibrate",
        "seed = 7\nreplications = 3\nn0 = 6\nn_new = 4\nm1 = 300\nm2 = 300\nx_star = [0.7861]\nextraction = \"both\"\n[simulator]\nname = \"example1\"\n",
    );
    let eimap = cfg("ei_map", "seed = 7\nn0 = 6\nx_star = [0.7861]\ngrid_size = 25\nmc_samples = 2000\n[simulator]\nname = \"example1\"\n");
    let compare = cfg(
        "compare",
        "seed = 7\nreplications = 4\nn_design = 12\nm2 = 500\ntarget_mode = \"redraw_x_star\"\n[simulator]\nname = \"harari\"\n",
    );
    let fit = cfg("fit", "seed = 7\nn0 = 8\nx_star = [0.5, 0.5, 0.5]\n[simulator]\nname = \"harari\"\n");

    let run_all = |tag: &str, workers: Option<&str>| -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        for (sub, config) in [("calibrate", &calib), ("ei-map", &eimap), ("extract-compare", &compare), ("fit", &fit)] {
            let out = dir.path().join(format!("{tag}-{sub}"));
            let out_s = out.to_string_lossy().into_owned();
            let mut args = vec![sub, "--config", config.as_str(), "--out", out_s.as_str()];
            if let Some(w) = workers {
                args.extend(["--workers", w]);
            }
            dyncal(&args);
            if sub == "fit" {
                let model = out.join("model.svdgp").to_string_lossy().into_owned();
                let mut args = vec!["predict", "--config", fit.as_str(), "--out", out_s.as_str(), "--model", model.as_str(), "--x", "0.2,0.4,0.9"];
                if let Some(w) = workers {
                    args.extend(["--workers", w]);
                }
                dyncal(&args);
            }
            files.extend(artifacts(&out).into_iter().map(|(n, b)| (format!("{sub}/{n}"), b)));
        }
        files
    };
    let first = run_all("a", None);
    let second = run_all("b", None);
    let single = run_all("c", Some("1"));
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .zip(&single)
        .filter(|((a, b), c)| a != b || a != c)
        .map(|((a, _), _)| a.0.as_str())
        .collect();
    let same_set = first.len() == second.len() && first.len() == single.len();
    report(
        "AC10",
        "determinism",
        same_set && differing.is_empty() && first.len() >= 10,
        &format!(
            "{} files from calibrate, ei-map, extract-compare, fit, predict compared across two runs and a single-worker run; differing: {:?}",
            first.len(),
            differing
        ),
    );
}
