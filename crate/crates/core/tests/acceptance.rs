//! Exit criteria. Prints one PASS/FAIL line per criterion and exits non-zero
//! when any fails.
//!
//! `IIS_FULL_EPOCHS=1` trains the forecaster for 200 epochs instead of 40.

mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::{qp_fixtures, rbf_matrix, solve_dual};
use iis_core::classifier::{ActionClassifier, BinaryProblem, KernelData, SvmParams};
use iis_core::forecaster::{gradient_check, Architecture, CellKind, ForecastModel, Forecaster};
use iis_core::frames::ActionLabel;
use iis_core::metrics::{report, SVM_REFERENCE, TIMING_REFERENCE};
use iis_core::pipeline::{aggregate_votes, run_recording, Alignment, Mode, Models, PipelineState};
use iis_core::serve::{
    frame_message, log_line_from_message, serve_listener, start_message, PayloadFormat, END_MESSAGE,
};
use iis_core::workflow::{load_models, load_split};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, what: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what)
    }
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    check(
        (got - want).abs() <= tol,
        format!("{name} = {got:.5}, expected {want} ± {tol}"),
    )
}

fn in_time(start: Instant, budget: Duration) -> Result<(), String> {
    check(
        start.elapsed() < budget,
        format!("took {:.1?}, budget {budget:?}", start.elapsed()),
    )
}

fn metric_tables() -> Outcome {
    let start = Instant::now();
    let svm = report(&SVM_REFERENCE);
    let timing = report(&TIMING_REFERENCE);
    let mut failures = Vec::new();
    let mut record = |r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(e);
        }
    };
    record(within(
        "SVM reference accuracy %",
        100.0 * svm.accuracy,
        75.3,
        0.05,
    ));
    record(within(
        "timing reference accuracy %",
        100.0 * timing.accuracy,
        73.6,
        0.05,
    ));
    for (name, v) in [
        ("macro precision %", timing.macro_avg.precision),
        ("macro recall %", timing.macro_avg.recall),
        ("macro F1 %", timing.macro_avg.f1),
    ] {
        record(within(name, 100.0 * v, 69.0, 0.5));
    }
    for (name, v) in [
        ("weighted precision %", timing.weighted_avg.precision),
        ("weighted recall %", timing.weighted_avg.recall),
        ("weighted F1 %", timing.weighted_avg.f1),
    ] {
        record(within(name, 100.0 * v, 74.0, 0.5));
    }
    record(in_time(start, Duration::from_secs(1)));
    if failures.is_empty() {
        Ok(format!(
            "accuracy {:.2}% / {:.2}%, macro F1 {:.4}, weighted P/R/F1 {:.4}/{:.4}/{:.4}",
            100.0 * svm.accuracy,
            100.0 * timing.accuracy,
            timing.macro_avg.f1,
            timing.weighted_avg.precision,
            timing.weighted_avg.recall,
            timing.weighted_avg.f1
        ))
    } else {
        Err(failures.join("; "))
    }
}

fn timing_per_class() -> Outcome {
    let start = Instant::now();
    let r = report(&TIMING_REFERENCE);
    // By hand from the matrix (rows predicted, columns correct):
    // wait precision 1182/1212, wait recall 1182/1304,
    // listen P 318/632, R 318/713; speak P 634/1056, R 634/883.
    let f1 = |p: f64, r: f64| 2.0 * p * r / (p + r);
    let hand = [
        (
            "wait precision",
            1182.0 / 1212.0,
            r.class(ActionLabel::Wait).precision,
            0.9752,
        ),
        (
            "wait recall",
            1182.0 / 1304.0,
            r.class(ActionLabel::Wait).recall,
            0.9064,
        ),
        (
            "listen F1",
            f1(318.0 / 632.0, 318.0 / 713.0),
            r.class(ActionLabel::Listen).f1,
            0.4729,
        ),
        (
            "speak F1",
            f1(634.0 / 1056.0, 634.0 / 883.0),
            r.class(ActionLabel::Speak).f1,
            0.6540,
        ),
    ];
    let mut parts = Vec::new();
    for (name, by_hand, got, quoted) in hand {
        within(name, got, by_hand, 1e-3)?;
        within(name, got, quoted, 1e-3)?;
        parts.push(format!("{name} {got:.4}"));
    }
    in_time(start, Duration::from_secs(1))?;
    Ok(parts.join(", "))
}

fn svm_vs_qp_oracle() -> Outcome {
    let start = Instant::now();
    let fixtures = qp_fixtures();
    check(
        fixtures.len() >= 5,
        format!("only {} fixtures", fixtures.len()),
    )?;
    let params = SvmParams::default();
    let (mut worst_gap, mut worst_kkt) = (0.0f64, 0.0f64);
    for fx in &fixtures {
        check(
            fx.x.nrows() <= 20,
            format!("{} has {} points", fx.name, fx.x.nrows()),
        )?;
        let data = KernelData::new(fx.x.view(), params.precompute_bytes);
        let problem = BinaryProblem {
            data: &data,
            members: (0..fx.x.nrows()).collect(),
            y: fx.y.clone(),
            cap: fx.cap.clone(),
            gamma: fx.gamma,
        };
        let smo = problem
            .solve(params.tol, params.max_iter, params.cache_bytes)
            .map_err(|e| e.to_string())?;
        let oracle = solve_dual(&rbf_matrix(fx.x.view(), fx.gamma), &fx.y, &fx.cap);
        let gap = (smo.objective - oracle.objective).abs();
        let kkt = problem
            .kkt_residuals(&smo.alpha, smo.rho)
            .into_iter()
            .fold(0.0, f64::max);
        check(gap <= 1e-3, format!("{}: objective gap {gap:.2e}", fx.name))?;
        check(kkt <= 1e-3, format!("{}: KKT residual {kkt:.2e}", fx.name))?;
        worst_gap = worst_gap.max(gap);
        worst_kkt = worst_kkt.max(kkt);
    }
    in_time(start, Duration::from_secs(30))?;
    Ok(format!(
        "{} fixtures, max objective gap {worst_gap:.1e}, max KKT residual {worst_kkt:.1e}",
        fixtures.len()
    ))
}

fn forecaster_gradient() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for (cell, layers) in [
        (CellKind::Tanh, 1),
        (CellKind::Tanh, 2),
        (CellKind::Gru, 1),
        (CellKind::Gru, 2),
    ] {
        let arch = Architecture {
            dim: 6,
            hidden: 5,
            layers,
            cell,
            input_len: 10,
            output_len: 5,
        };
        let model = ForecastModel::init(arch, 3).map_err(|e| e.to_string())?;
        let input = Array2::from_shape_fn((10, 6), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((5, 6), |_| rng.random_range(-1.0..1.0));
        let err =
            gradient_check(&model, input.view(), target.view(), 1e-6).map_err(|e| e.to_string())?;
        check(
            err < 1e-4,
            format!("{cell:?} x{layers}: relative error {err:.2e}"),
        )?;
        worst = worst.max(err);
    }
    in_time(start, Duration::from_secs(30))?;
    Ok(format!(
        "tanh and GRU, 1 and 2 layers, max relative error {worst:.1e}"
    ))
}

struct Pattern;

impl Forecaster for Pattern {
    fn dim(&self) -> usize {
        5
    }
    fn input_len(&self) -> usize {
        10
    }
    fn forecast(&self, history: ArrayView2<'_, f64>) -> iis_core::Result<Array2<f64>> {
        let last = history.row(9);
        Ok(Array2::from_shape_fn((5, 5), |(j, _)| last[j]))
    }
}

impl ActionClassifier for Pattern {
    fn dim(&self) -> usize {
        5
    }
    fn classify(&self, x: &[f64]) -> iis_core::Result<ActionLabel> {
        Ok(ActionLabel::from_index(x[0] as usize).unwrap_or(ActionLabel::Wait))
    }
}

fn pipeline_semantics() -> Outcome {
    let start = Instant::now();
    let mut patterns = 0;
    for code in 0..243usize {
        let votes: Vec<ActionLabel> = (0..5)
            .map(|k| ActionLabel::from_index(code / 3usize.pow(k) % 3).unwrap())
            .collect();
        let got = aggregate_votes(&votes).ok_or("no label for a full vote")?;
        let count = |l: ActionLabel| votes.iter().filter(|&&v| v == l).count();
        let top = ActionLabel::ALL.iter().map(|&l| count(l)).max().unwrap();
        check(
            count(got) == top,
            format!("{votes:?} -> {got} is not a majority"),
        )?;
        // listen > speak > wait among tied labels.
        let first_tied = ActionLabel::ALL
            .into_iter()
            .find(|&l| count(l) == top)
            .unwrap();
        check(
            got == first_tied,
            format!("{votes:?} -> {got}, priority wants {first_tied}"),
        )?;
        patterns += 1;
    }

    let models = Models::new(Arc::new(Pattern), Arc::new(Pattern)).map_err(|e| e.to_string())?;
    let mut state = PipelineState::new("p15", models);
    let label_of = |i: u64| ActionLabel::from_index(i as usize % 3).unwrap();
    let run = (0..15u64)
        .map(|i| state.step_features(i, vec![(i % 3) as f64; 5]))
        .collect::<iis_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let warm = run.iter().filter(|d| d.mode == Mode::Warmup).count();
    let fore = run.iter().filter(|d| d.mode == Mode::Forecast).count();
    check(
        (warm, fore) == (10, 5),
        format!("{warm} warmup + {fore} forecast decisions"),
    )?;
    for d in &run {
        // Warmup classifies frame i itself; forecasts come from the buffer
        // ending at frame i - 1, which the stub repeats five times.
        let (mode, source) = if d.i < 10 {
            (Mode::Warmup, d.i)
        } else {
            (Mode::Forecast, d.i - 1)
        };
        check(
            d.mode == mode,
            format!("frame {} in {:?} mode", d.i, d.mode),
        )?;
        check(
            d.action == label_of(source),
            format!("frame {}: {} from the wrong frame", d.i, d.action),
        )?;
    }
    in_time(start, Duration::from_secs(1))?;
    Ok(format!(
        "{patterns} vote patterns, 15 frames -> {warm} warmup + {fore} forecast"
    ))
}

fn iis(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_iis"))
        .args(args)
        .env_remove("IIS_MODEL_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "iis {} failed: {}",
            args[0],
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn end_to_end_run(root: &Path, epochs: usize) -> Result<String, String> {
    let data = root.join("data");
    let models = root.join("models");
    let summary = root.join("summary.json");
    let (d, m) = (data.to_str().unwrap(), models.to_str().unwrap());
    iis(&["simulate", "--n", "200", "--seed", "42", "--out", d])?;
    iis(&["split", "--data", d, "--seed", "42"])?;
    let epochs = epochs.to_string();
    iis(&[
        "train-forecaster",
        "--data",
        d,
        "--models",
        m,
        "--epochs",
        &epochs,
        "--stride",
        "2",
        "--seed",
        "42",
    ])?;
    iis(&[
        "train-classifier",
        "--data",
        d,
        "--models",
        m,
        "--kind",
        "svm",
    ])?;
    iis(&[
        "evaluate",
        "--data",
        d,
        "--models",
        m,
        "--json",
        summary.to_str().unwrap(),
    ])?;
    std::fs::read_to_string(&summary).map_err(|e| e.to_string())
}

fn end_to_end(root: &Path, epochs: usize) -> Outcome {
    let start = Instant::now();
    let json = end_to_end_run(root, epochs)?;
    let elapsed = start.elapsed();
    let v: serde_json::Value = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    let f1 = v["classification"]["macro_avg"]["f1"]
        .as_f64()
        .ok_or("no macro F1")?;
    let rmse = v["forecast_rmse"].as_f64().ok_or("no forecast RMSE")?;
    check(f1 >= 0.69, format!("macro F1 {f1:.4} < 0.69"))?;
    check(rmse <= 0.06, format!("forecast RMSE {rmse:.4} > 0.06"))?;
    check(
        elapsed < Duration::from_secs(15 * 60),
        format!("took {elapsed:.0?}, budget 15 min"),
    )?;
    Ok(format!(
        "macro F1 {f1:.4}, forecast RMSE {rmse:.4}, {epochs} epochs, {:.0}s",
        elapsed.as_secs_f64()
    ))
}

fn wire_equivalence(root: &Path) -> Outcome {
    let start = Instant::now();
    let (_, _, models) = load_models(root.join("models")).map_err(|e| e.to_string())?;
    let (_, _, test) = load_split(root.join("data")).map_err(|e| e.to_string())?;
    let recording = test.first().ok_or("empty test split")?;

    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let server_models = models.clone();
    thread::spawn(move || serve_listener(listener, server_models));

    let offline = run_recording(&models, recording, Alignment::Current)
        .map_err(|e| e.to_string())?
        .decisions;
    let stream = TcpStream::connect(addr).map_err(|e| e.to_string())?;
    stream.set_nodelay(true).map_err(|e| e.to_string())?;
    let mut reader = BufReader::new(stream.try_clone().map_err(|e| e.to_string())?);
    let mut writer = stream;
    let io = |e: std::io::Error| e.to_string();
    writeln!(
        writer,
        "{}",
        start_message(&recording.session_id, PayloadFormat::Frame)
    )
    .map_err(io)?;
    let mut worst = Duration::ZERO;
    let mut line = String::new();
    for (frame, expected) in recording.frames.iter().zip(&offline) {
        let msg = frame_message(frame);
        let sent = Instant::now();
        writeln!(writer, "{msg}").map_err(io)?;
        line.clear();
        reader.read_line(&mut line).map_err(io)?;
        worst = worst.max(sent.elapsed());
        let got = log_line_from_message(line.trim_end())
            .ok_or_else(|| format!("not a decision: {line}"))?;
        check(
            got == expected.log_line(),
            format!(
                "frame {}: {got} != {}",
                frame.frame_index,
                expected.log_line()
            ),
        )?;
    }
    writeln!(writer, "{END_MESSAGE}").map_err(io)?;
    check(
        worst < Duration::from_millis(100),
        format!("max round trip {worst:?}"),
    )?;
    in_time(start, Duration::from_secs(60))?;
    Ok(format!(
        "{} decisions identical, max round trip {:.1} ms",
        offline.len(),
        worst.as_secs_f64() * 1e3
    ))
}

fn determinism(root: &Path, first: &str, epochs: usize) -> Outcome {
    let again = end_to_end_run(root, epochs)?;
    check(first == again, "metrics JSON differs between runs".into())?;
    Ok(format!("{} bytes of metrics JSON identical", first.len()))
}

fn main() {
    // `cargo test -- --list` and filters should not trigger the long run.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let epochs = if std::env::var("IIS_FULL_EPOCHS").is_ok_and(|v| v == "1") {
        200
    } else {
        40
    };
    let first = tempfile::tempdir().expect("temp dir");
    let second = tempfile::tempdir().expect("temp dir");

    let mut results: Vec<(&str, Outcome)> = vec![
        ("metric oracle reproduction", metric_tables()),
        ("timing classifier per-class values", timing_per_class()),
        ("SVM vs quadratic-program oracle", svm_vs_qp_oracle()),
        ("forecaster gradient check", forecaster_gradient()),
    ];
    let e2e = end_to_end(first.path(), epochs);
    results.push(("end-to-end synthetic run", e2e));
    results.push(("pipeline semantics", pipeline_semantics()));
    results.push(("wire/offline equivalence", wire_equivalence(first.path())));
    let first_json = std::fs::read_to_string(first.path().join("summary.json")).unwrap_or_default();
    results.push((
        "determinism",
        determinism(second.path(), &first_json, epochs),
    ));

    let mut failed = 0;
    for (k, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", k + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
