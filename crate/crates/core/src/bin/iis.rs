use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use iis_core::classifier::{
    default_grid, grid_search, ActionModel, ClassWeight, ForestParams, Gamma, MaxFeatures,
    SvmParams,
};
use iis_core::forecaster::{CellKind, TrainConfig};
use iis_core::frames::{merge_labels, read_label_sidecar, read_recordings, write_recordings};
use iis_core::metrics::{report, RunSummary, ORIENTATION, SVM_REFERENCE, TIMING_REFERENCE};
use iis_core::model_io::{save_action_model, save_forecaster, CLASSIFIER_FILE, FORECASTER_FILE};
use iis_core::pipeline::{run_recording, write_decision_log, Alignment};
use iis_core::synthgen::Generator;
use iis_core::workflow::{self, ClassifierSpec};
use iis_core::{Error, Result};

#[derive(Parser)]
#[command(name = "iis", version, about = "Conversation-opening timing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Svm,
    Forest,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset directory.
    Simulate {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Assign recordings to train/test in the dataset manifest.
    Split {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value_t = 0.109)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the pose forecaster on the train split.
    TrainForecaster {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, env = "IIS_MODEL_DIR", default_value = "models")]
        models: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 30)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        /// Recurrent cell: tanh or gru.
        #[arg(long, default_value = "tanh")]
        cell: CellKind,
        /// Window stride over each recording.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split mini-batches across threads (not bit-reproducible).
        #[arg(long)]
        parallel: bool,
    },
    /// Train the action classifier on the train split.
    TrainClassifier {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, env = "IIS_MODEL_DIR", default_value = "models")]
        models: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Svm)]
        kind: Kind,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// "scale" or a positive number.
        #[arg(long, default_value = "scale")]
        gamma: Gamma,
        /// balanced or uniform.
        #[arg(long, default_value = "balanced")]
        class_weight: ClassWeight,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        n_estimators: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cross-validated SVM hyperparameter search on the train split.
    GridSearch {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, env = "IIS_MODEL_DIR", default_value = "models")]
        models: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the per-candidate table here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Use every k-th train frame only.
        #[arg(long, default_value_t = 1)]
        every: usize,
        /// Save the refit best model as the classifier.
        #[arg(long)]
        save: bool,
    },
    /// Run the timing classifier over the test split and report metrics.
    Evaluate {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, env = "IIS_MODEL_DIR", default_value = "models")]
        models: PathBuf,
        /// Score decisions against the current label or the forecast target.
        #[arg(long, default_value = "current")]
        alignment: Alignment,
        /// Write the run summary JSON here as well.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write every decision log into this directory.
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Recompute metrics from the embedded reference confusion matrices.
    OracleTables,
    /// Stream decisions over TCP or stdin/stdout.
    Serve {
        #[arg(long, env = "IIS_MODEL_DIR", default_value = "models")]
        models: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878", conflicts_with = "stdio")]
        listen: String,
        #[arg(long)]
        stdio: bool,
    },
    /// Decision log for a single recording file.
    Predict {
        #[arg(long)]
        recording: PathBuf,
        #[arg(long, env = "IIS_MODEL_DIR", default_value = "models")]
        models: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attach sidecar labels to recording files.
    MergeLabels {
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn print_summary(summary: &RunSummary) -> Result<()> {
    println!("confusion matrix ({ORIENTATION}):\n{}", summary.confusion);
    println!("{}", summary.classification);
    if let Some(rmse) = summary.forecast_rmse {
        println!("forecast RMSE {rmse:.4}");
    }
    println!("{}", serde_json::to_string_pretty(summary)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { n, seed, out } => {
            let manifest = Generator::default().dataset(&out, n, seed)?;
            println!(
                "wrote {} recordings to {}",
                manifest.sessions.len(),
                out.display()
            );
        }
        Command::Split {
            data,
            test_fraction,
            seed,
        } => {
            let split = workflow::split_dataset_dir(&data, test_fraction, seed)?;
            print!("{split}");
        }
        Command::TrainForecaster {
            data,
            models,
            epochs,
            batch_size,
            learning_rate,
            hidden,
            layers,
            cell,
            stride,
            seed,
            parallel,
        } => {
            let (_, train, _) = workflow::load_split(&data)?;
            let config = TrainConfig {
                epochs,
                batch_size,
                learning_rate,
                seed,
                hidden,
                layers,
                cell,
                deterministic: !parallel,
                ..TrainConfig::default()
            };
            let model = workflow::fit_forecaster(&train, stride, &config)?;
            fs::create_dir_all(&models)?;
            let path = models.join(FORECASTER_FILE);
            save_forecaster(&path, &model)?;
            let loss = model.log.final_full_loss.unwrap_or(f64::NAN);
            println!(
                "saved {} (final training RMSE {:.4})",
                path.display(),
                loss.sqrt()
            );
        }
        Command::TrainClassifier {
            data,
            models,
            kind,
            c,
            gamma,
            class_weight,
            tol,
            n_estimators,
            seed,
        } => {
            let (_, train, _) = workflow::load_split(&data)?;
            let spec = match kind {
                Kind::Svm => ClassifierSpec::Svm(SvmParams {
                    c,
                    gamma,
                    class_weight,
                    tol,
                    ..SvmParams::default()
                }),
                Kind::Forest => ClassifierSpec::Forest(ForestParams {
                    n_estimators,
                    max_features: MaxFeatures::Sqrt,
                    bootstrap: true,
                    class_weight,
                    seed,
                }),
            };
            let model = workflow::fit_classifier(&train, &spec)?;
            fs::create_dir_all(&models)?;
            let path = models.join(CLASSIFIER_FILE);
            save_action_model(&path, &model)?;
            match &model {
                ActionModel::Svm(m) => println!(
                    "saved {} (svm, {} support vectors, gamma {:.6})",
                    path.display(),
                    m.n_support(),
                    m.gamma
                ),
                ActionModel::Forest(m) => {
                    println!("saved {} (forest, {} trees)", path.display(), m.trees.len())
                }
            }
        }
        Command::GridSearch {
            data,
            models,
            folds,
            seed,
            csv,
            every,
            save,
        } => {
            let (_, train, _) = workflow::load_split(&data)?;
            let (x, y) = workflow::labeled_matrix(&train)?;
            let rows: Vec<usize> = (0..y.len()).step_by(every.max(1)).collect();
            let x = x.select(ndarray::Axis(0), &rows);
            let y: Vec<_> = rows.iter().map(|&i| y[i]).collect();
            let grid = grid_search(x.view(), &y, &default_grid(), folds, seed)?;
            let table = grid.to_csv();
            print!("{table}");
            if let Some(path) = csv {
                fs::write(path, &table)?;
            }
            let best = grid.best_params();
            println!(
                "best: C={} gamma={} class_weight={} (mean accuracy {:.4})",
                best.c, best.gamma, best.class_weight, grid.candidates[grid.best].mean
            );
            if save {
                fs::create_dir_all(&models)?;
                save_action_model(models.join(CLASSIFIER_FILE), &ActionModel::Svm(grid.model))?;
            }
        }
        Command::Evaluate {
            data,
            models,
            alignment,
            json,
            decisions,
        } => {
            let (_, _, test) = workflow::load_split(&data)?;
            let (forecaster, _, models) = workflow::load_models(&models)?;
            let (summary, logs) = workflow::evaluate(&models, Some(&forecaster), &test, alignment)?;
            print_summary(&summary)?;
            if let Some(path) = json {
                fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")?;
            }
            if let Some(dir) = decisions {
                fs::create_dir_all(&dir)?;
                for (r, log) in test.iter().zip(&logs) {
                    let file = File::create(dir.join(format!("{}.decisions.jsonl", r.session_id)))?;
                    write_decision_log(BufWriter::new(file), log)?;
                }
            }
        }
        Command::OracleTables => {
            for (name, cm) in [
                ("SVM reference", SVM_REFERENCE),
                ("timing classifier reference", TIMING_REFERENCE),
            ] {
                let r = report(&cm);
                println!("{name}\nconfusion matrix ({ORIENTATION}):\n{cm}\n{r}");
            }
        }
        Command::Serve {
            models,
            listen,
            stdio,
        } => {
            let (_, _, models) = workflow::load_models(&models)?;
            if stdio {
                let stats = iis_core::serve::serve_stream(
                    &models,
                    io::stdin().lock(),
                    io::stdout().lock(),
                )?;
                log::info!("stdio session done: {} decisions", stats.decisions);
            } else {
                iis_core::serve::serve_tcp(listen, models)?;
            }
        }
        Command::Predict {
            recording,
            models,
            out,
        } => {
            let recs = read_recordings(&recording)?;
            let (_, _, models) = workflow::load_models(&models)?;
            let mut w = open_out(out.as_deref())?;
            for r in &recs {
                let run = run_recording(&models, r, Alignment::Current)?;
                write_decision_log(&mut w, &run.decisions)?;
            }
            w.flush()?;
        }
        Command::MergeLabels {
            recording,
            labels,
            out,
        } => {
            let recs = read_recordings(&recording)?;
            let labels = read_label_sidecar(&labels)?;
            let merged = merge_labels(recs, &labels)?;
            write_recordings(&merged, &out)?;
            let labeled = merged.iter().filter(|r| r.labels.is_some()).count();
            println!(
                "labeled {labeled} of {} recordings into {}",
                merged.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            if let Error::Diverged { .. } = e {
                eprintln!("hint: lower --learning-rate");
            }
            ExitCode::from(1)
        }
    }
}
