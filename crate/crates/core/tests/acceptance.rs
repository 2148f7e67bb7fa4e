//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Tolerances are fixed here.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use chrono::NaiveDate;
use loadcast::data::{synth_generate, synth_generate_with_signal, LevelShift, LoadSeries, SynthConfig};
use loadcast::eval::{backtest, ideal_forecast_metrics, metrics, run_ablation, seasonal_naive_metrics, Variant};
use loadcast::features::{kmeans_fit, KMeansOptions, WindowSample};
use loadcast::model::{init_params, Batch, ModelDims, ModelParameters, ParamGroup};
use loadcast::numcore::{check_gradients, ParamId, Tensor};
use loadcast::train::{fit_model, loss_and_grads, perturbed_loss, Checkpoint, CorrectionPolicy, FitOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRADCHECK_H: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_SECONDS: f64 = 10.0;
const FIRST_ORDER_LAMBDA: f64 = 0.01;
const FIRST_ORDER_REL_TOL: f64 = 0.10;
const KMEANS_CENTER_TOL: f64 = 1e-9;
const FLOOR_FACTOR: f64 = 1.5;
/// Hidden width for the twelve ablation fits (see the README).
const ABLATION_N_H: usize = 32;
const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tiny_dims() -> ModelDims {
    // n_c = 3 gives q_dim = 9 + 3 + 3
    ModelDims {
        seq_len: 6,
        in_dim: 34,
        d: 4,
        n_h: 5,
        q_dim: 15,
        out_len: 4,
    }
}

fn tiny_batch(dims: &ModelDims, n: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| WindowSample {
            x: Tensor::matrix(
                dims.seq_len,
                dims.in_dim,
                (0..dims.seq_len * dims.in_dim).map(|_| rng.random()).collect(),
            )
            .unwrap(),
            q: (0..dims.q_dim).map(|_| rng.random()).collect(),
            y: (0..dims.out_len).map(|_| rng.random()).collect(),
            target_date: NaiveDate::MIN,
        })
        .collect()
}

/// Tiny model with every parameter, biases included, drawn at random.
fn tiny_params(dims: ModelDims, seed: u64) -> ModelParameters {
    let mut p = init_params(dims, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    p
}

fn criterion_1() -> Outcome {
    let dims = tiny_dims();
    let samples = tiny_batch(&dims, 3, 11);
    let refs: Vec<&WindowSample> = samples.iter().collect();
    let batch = Batch::new(&refs, &dims).unwrap();
    let params = tiny_params(dims, 7);
    let names = params.names().to_vec();
    let start = Instant::now();
    let report = check_gradients(
        |tensors| {
            let p = ModelParameters::from_named(dims, names.iter().copied().zip(tensors.iter().cloned()).collect())?;
            let (loss, grads) = loss_and_grads(&batch, &p, |_| true)?;
            let g = (0..tensors.len())
                .map(|i| grads.get(ParamId(i)).unwrap().clone())
                .collect();
            Ok((loss, g))
        },
        params.tensors(),
        GRADCHECK_H,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    check(
        report.max_rel_error <= GRADCHECK_TOL && secs < GRADCHECK_SECONDS,
        format!(
            "max rel error {:.3e} over {} entries (tol {GRADCHECK_TOL:e}) in {secs:.2}s (limit {GRADCHECK_SECONDS}s)",
            report.max_rel_error, report.entries_checked
        ),
    )
}

fn criterion_2() -> Outcome {
    let dims = tiny_dims();
    let samples = tiny_batch(&dims, 3, 12);
    let refs: Vec<&WindowSample> = samples.iter().collect();
    let params = tiny_params(dims, 8);
    let batch = Batch::new(&refs, &dims).unwrap();

    let (gamma1, grads) = loss_and_grads(&batch, &params, |n| n.group() == ParamGroup::Embedding).unwrap();
    let gamma0 = perturbed_loss(&refs, &params, 0.0).unwrap();
    let identity = gamma0.to_bits() == gamma1.to_bits();

    let grad_sq: f64 = params
        .names()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.group() == ParamGroup::Embedding)
        .map(|(i, _)| grads.get(ParamId(i)).unwrap().data().iter().map(|g| g * g).sum::<f64>())
        .sum();
    let predicted = FIRST_ORDER_LAMBDA * grad_sq;
    let actual = perturbed_loss(&refs, &params, FIRST_ORDER_LAMBDA).unwrap() - gamma1;
    let rel = (actual - predicted).abs() / predicted.abs();
    check(
        identity && rel <= FIRST_ORDER_REL_TOL,
        format!(
            "lambda=0 bit-exact: {identity}; lambda={FIRST_ORDER_LAMBDA}: Γ−Γ1 = {actual:.6e} vs λ‖∇Γ1‖² = {predicted:.6e} \
             (rel {rel:.3e}, tol {FIRST_ORDER_REL_TOL})"
        ),
    )
}

fn brute_force_nearest(w: &[f64], centers: &[Vec<f64>]) -> usize {
    let dist = |c: &Vec<f64>| w.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let mut best = 0;
    for k in 1..centers.len() {
        if dist(&centers[k]) < dist(&centers[best]) {
            best = k;
        }
    }
    best
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // random level, daily amplitude and phase plus noise, like normalized load
    let windows: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            let (level, amp, phase) = (
                rng.random::<f64>(),
                rng.random::<f64>() * 0.5,
                rng.random::<f64>() * 24.0,
            );
            (0..168)
                .map(|h| {
                    level + amp * ((h as f64 + phase) * std::f64::consts::PI / 12.0).sin() + 0.05 * rng.random::<f64>()
                })
                .collect()
        })
        .collect();
    let model = kmeans_fit(&windows, KMeansOptions::new(5, 3)).unwrap();
    let history = &model.objective_history;
    let monotone = history.windows(2).all(|w| w[1] <= w[0]);
    let assignment_ok = windows
        .iter()
        .all(|w| model.assign(w) == brute_force_nearest(w, &model.centers));

    let a: Vec<f64> = (0..168).map(|h| 0.2 + 0.1 * (h as f64 / 24.0).sin()).collect();
    let b: Vec<f64> = (0..168).map(|h| 0.8 - 0.1 * (h as f64 / 12.0).cos()).collect();
    let two: Vec<Vec<f64>> = (0..20)
        .map(|i| if i % 2 == 0 { a.clone() } else { b.clone() })
        .collect();
    let m2 = kmeans_fit(&two, KMeansOptions::new(2, 9)).unwrap();
    let err_to = |c: &Vec<f64>, g: &Vec<f64>| c.iter().zip(g).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let (c0, c1) = (&m2.centers[0], &m2.centers[1]);
    let recovery = err_to(c0, &a)
        .max(err_to(c1, &b))
        .min(err_to(c0, &b).max(err_to(c1, &a)));

    check(
        monotone && assignment_ok && recovery <= KMEANS_CENTER_TOL,
        format!(
            "J non-increasing over {} iterations: {monotone}; assignments match brute force: {assignment_ok}; \
             two-group center error {recovery:.3e} (tol {KMEANS_CENTER_TOL:e})",
            history.len()
        ),
    )
}

fn criterion_4() -> Outcome {
    let m = metrics(&[100.0, 100.0], &[90.0, 110.0]).unwrap();
    let exact = m.mae == 10.0 && m.mape == Some(10.0) && m.rmse == 10.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..50);
        let actual: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..2000.0)).collect();
        let forecast: Vec<f64> = actual.iter().map(|a| a + rng.random_range(-300.0..300.0)).collect();
        let m = metrics(&actual, &forecast).unwrap();
        if m.rmse < m.mae {
            violations += 1;
        }
    }
    check(
        exact && violations == 0,
        format!(
            "worked example (mae, mape, rmse) = ({}, {:?}, {}); RMSE < MAE in {violations}/1000 random vectors",
            m.mae, m.mape, m.rmse
        ),
    )
}

fn default_synth() -> SynthConfig {
    SynthConfig::default()
}

fn test_days(series: &LoadSeries) -> usize {
    series.num_days() - 365
}

/// Criterion 5. Returns the trained checkpoint for reuse by criterion 7.
fn criterion_5() -> (Outcome, Option<Checkpoint>) {
    let start = Instant::now();
    let (series, signal) = synth_generate_with_signal(&default_synth()).unwrap();
    let train_days = test_days(&series);
    let days = train_days..series.num_days();
    let naive = seasonal_naive_metrics(&series, days.clone()).unwrap().mape_or_nan();
    let floor = ideal_forecast_metrics(&series, &signal, days.clone())
        .unwrap()
        .mape_or_nan();
    let fit = fit_model(&series, train_days, &FitOptions::default()).unwrap();
    let report = backtest(&fit.checkpoint, &series, days, &CorrectionPolicy::default(), "proposed")
        .unwrap()
        .report;
    let mape = report.aggregate.mape_or_nan();
    let outcome = check(
        mape <= naive && mape < FLOOR_FACTOR * floor,
        format!(
            "proposed MAPE {mape:.4}% vs seasonal naive {naive:.4}% and {FLOOR_FACTOR}×floor {:.4}% (floor {floor:.4}%); \
             {} epochs, {:.0}s",
            FLOOR_FACTOR * floor,
            fit.epochs_run,
            start.elapsed().as_secs_f64()
        ),
    );
    (outcome, Some(fit.checkpoint))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let series = synth_generate(&default_synth()).unwrap();
    let base = FitOptions {
        n_h: ABLATION_N_H,
        ..FitOptions::default()
    };
    let table = run_ablation(
        &series,
        test_days(&series),
        &Variant::ALL,
        &ABLATION_SEEDS,
        &base,
        &CorrectionPolicy::default(),
    )
    .unwrap();
    let mean = table.mean_mape();
    let p = mean[&Variant::Proposed];
    let (m1, m2, m3) = (mean[&Variant::Model1], mean[&Variant::Model2], mean[&Variant::Model3]);
    check(
        p <= m2 && p <= m3 && p <= m1 && m1 >= m2 && m1 >= m3,
        format!(
            "mean MAPE over seeds {ABLATION_SEEDS:?} at n_h={ABLATION_N_H}: proposed {p:.4}%, model1 {m1:.4}%, \
             model2 {m2:.4}%, model3 {m3:.4}%; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_7(ckpt: &Checkpoint) -> Outcome {
    let plain = synth_generate(&default_synth()).unwrap();
    let train_days = test_days(&plain);
    let shift_date = plain.day_date(train_days) + chrono::Months::new(3);
    let shifted_cfg = SynthConfig {
        level_shift: Some(LevelShift {
            date: shift_date,
            mw: 0.10 * default_synth().base_load,
        }),
        ..default_synth()
    };
    let series = synth_generate(&shifted_cfg).unwrap();
    // the shift lies in the test year, so the trained checkpoint applies unchanged
    let train_hours = train_days * 24;
    if plain.values()[..train_hours] != series.values()[..train_hours] {
        return Err("training span differs between the plain and shifted series".into());
    }
    let days = train_days..series.num_days();
    let none = backtest(ckpt, &series, days.clone(), &CorrectionPolicy::none(), "none").unwrap();
    let tuned = backtest(ckpt, &series, days, &CorrectionPolicy::default(), "fine-tune-output").unwrap();
    let frozen = [ParamGroup::Embedding, ParamGroup::Rest]
        .iter()
        .all(|&g| tuned.final_checkpoint.params.group_bytes(g) == ckpt.params.group_bytes(g));
    let output_moved =
        tuned.final_checkpoint.params.group_bytes(ParamGroup::Output) != ckpt.params.group_bytes(ParamGroup::Output);
    let (m_none, m_tuned) = (
        none.report.aggregate.mape_or_nan(),
        tuned.report.aggregate.mape_or_nan(),
    );
    check(
        m_tuned < m_none && frozen && output_moved,
        format!(
            "+10% shift on {shift_date}: MAPE fine-tune-output {m_tuned:.4}% vs none {m_none:.4}%; \
             non-output bytes identical: {frozen}; output changed: {output_moved}"
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_loadcast"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "loadcast {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let small = [
        "--set",
        "model.n_h=8",
        "--set",
        "model.d=4",
        "--set",
        "model.n_clusters=3",
        "--seed",
        "5",
    ];
    run_cli(&["synth", "--out", &d("data")])?;
    let data = ["--data", &d("data/load.csv"), "--holidays", &d("data/holidays.txt")];
    for run in ["a", "b"] {
        let ckpt = d(&format!("{run}.json"));
        let mut train = vec!["train", "--max-epochs", "3", "--out", &ckpt];
        train.extend(small);
        train.extend(data);
        run_cli(&train)?;
        let report = d(&format!("report_{run}"));
        let mut bt = vec!["backtest", "--checkpoint", &ckpt, "--out", &report];
        bt.extend(small);
        bt.extend(data);
        run_cli(&bt)?;
    }
    let same = |a: &str, b: &str| fs::read(dir.path().join(a)).ok() == fs::read(dir.path().join(b)).ok();
    let ckpt_same = same("a.json", "b.json");
    let reports: Vec<String> = fs::read_dir(dir.path().join("report_a"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let report_same = reports
        .iter()
        .all(|f| same(&format!("report_a/{f}"), &format!("report_b/{f}")));
    check(
        ckpt_same && report_same && Path::new(&d("report_a/report.json")).exists(),
        format!(
            "checkpoints byte-identical: {ckpt_same}; {} report files byte-identical: {report_same}",
            reports.len()
        ),
    )
}

fn main() {
    // run under the libtest protocol's listing probe without doing any work
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failures = 0;
    let mut report = |id: &str, title: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS criterion {id} ({title}): {detail}"),
        Err(detail) => {
            failures += 1;
            println!("FAIL criterion {id} ({title}): {detail}");
        }
    };
    report("1", "gradient correctness", criterion_1());
    report("2", "perturbed-loss identity", criterion_2());
    report("3", "k-means properties", criterion_3());
    report("4", "metric oracle", criterion_4());
    let (c5, ckpt) = criterion_5();
    report("5", "end-to-end synthetic accuracy", c5);
    report("6", "feature-ablation ordering", criterion_6());
    match ckpt {
        Some(c) => report("7", "correction ordering", criterion_7(&c)),
        None => report("7", "correction ordering", Err("no checkpoint from criterion 5".into())),
    }
    report("8", "determinism", criterion_8());
    println!("SKIP criterion 9 (national datasets): needs user-supplied Belgium/Denmark/Norway CSVs");
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
