// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emgevm::arburg::{self, ar_psd, burg, psd_grid, reflection_to_ar};
use emgevm::dataio::{self, Side, TrialSplit};
use emgevm::evalkit::{per_class_csv, render_report, ReportFormat};
use emgevm::evm::Metric;
use emgevm::pipeline::{
    evaluate, extract, sweep, sweep_csv, train, Bundle, ClassifierKind, FeatureTable, RunConfig,
    SweepParam,
};
use emgevm::preprocess;
use emgevm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "emgevm",
    version,
    about = "Burg reflection features and EVM gesture classification"
)]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, window and extract per-window reflection coefficients.
    Extract {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Feature CSV to write.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fit the scaler and classifier on the training trials.
    Train {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Model bundle to write.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Score a model bundle on the test trials.
    Eval {
        /// Model bundle from `train`.
        #[arg(long, short)]
        model: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        /// Score the training trials instead.
        #[arg(long)]
        on_train: bool,
        /// Majority vote over the windows of each trial.
        #[arg(long)]
        vote_per_trial: bool,
        /// JSON report with the effective config.
        #[arg(long)]
        json: Option<PathBuf>,
        /// label,accuracy CSV.
        #[arg(long)]
        per_class_csv: Option<PathBuf>,
    },
    /// One train + test run per value of a single parameter.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// p, k, tau or cover.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// CSV to write; stdout if omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Burg AR power spectrum of one frame.
    Psd {
        /// CSV holding the frame in one column.
        #[arg(long)]
        frame: PathBuf,
        /// Zero-based column of the frame.
        #[arg(long, default_value_t = 0)]
        column: usize,
        /// The first row is a header.
        #[arg(long)]
        header: bool,
        #[arg(long, short = 'p', default_value_t = arburg::DEFAULT_ORDER)]
        order: usize,
        /// Frequency points from 0 to fs/2.
        #[arg(long, default_value_t = arburg::DEFAULT_PSD_POINTS)]
        points: usize,
        #[arg(long, default_value_t = dataio::DATASET_SAMPLE_RATE)]
        sample_rate: f64,
        /// CSV to write; stdout if omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset with the expected layout.
    Synth {
        /// Directory to create.
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        subjects: u32,
        #[arg(long, default_value_t = 6)]
        trials: u32,
        #[arg(long, default_value_t = 8000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root directory.
    #[arg(long, short)]
    data: PathBuf,
    /// Manifest JSON; defaults to <data>/manifest.json, else a directory scan.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    /// Feature CSV from `extract`.
    #[arg(long, conflicts_with = "data")]
    features: Option<PathBuf>,
    /// Dataset root; features are extracted on the fly.
    #[arg(long, short)]
    data: Option<PathBuf>,
    /// Manifest JSON; defaults to <data>/manifest.json, else a directory scan.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// Flags overriding fields of the JSON run config.
#[derive(Args, Default)]
struct RunArgs {
    /// JSON run config; flags below override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Window length in samples.
    #[arg(long)]
    win_len: Option<usize>,
    /// Hop between window starts in samples.
    #[arg(long)]
    step: Option<usize>,
    /// Fraction dropped from each end of a recording.
    #[arg(long)]
    trim: Option<f64>,
    /// AR order per channel.
    #[arg(long, short = 'p')]
    order: Option<usize>,
    /// Append the Burg noise variance to each channel's features.
    #[arg(long)]
    noise_var: bool,
    /// Rebuild the default filter chain for this sample rate.
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Skip the notch and band-pass filters.
    #[arg(long)]
    no_filters: bool,
    /// evm or knn.
    #[arg(long)]
    classifier: Option<ClassifierKind>,
    /// Distance for the chosen classifier.
    #[arg(long)]
    metric: Option<Metric>,
    /// Rival distances per Weibull fit.
    #[arg(long)]
    tail_size: Option<usize>,
    /// Set-cover probability threshold.
    #[arg(long, conflicts_with = "no_reduce")]
    cover: Option<f64>,
    /// Keep every extreme vector.
    #[arg(long)]
    no_reduce: bool,
    /// Minimum winning probability; below it the prediction is unknown.
    #[arg(long)]
    reject: Option<f64>,
    /// Neighbours for KNN.
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated training trial numbers.
    #[arg(long, value_delimiter = ',')]
    train_trials: Option<Vec<u32>>,
    /// Comma-separated test trial numbers.
    #[arg(long, value_delimiter = ',')]
    test_trials: Option<Vec<u32>>,
    /// Majority vote over the windows of each trial.
    #[arg(long)]
    vote_per_trial: bool,
    /// One model per subject; report the mean accuracy.
    #[arg(long)]
    per_subject: bool,
    /// Seed recorded with the run.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.win_len {
            cfg.window.win_len = v;
        }
        if let Some(v) = self.step {
            cfg.window.step = v;
        }
        if let Some(v) = self.trim {
            cfg.window.trim = v;
        }
        if let Some(v) = self.order {
            cfg.order = v;
        }
        cfg.include_noise_var |= self.noise_var;
        if let Some(fs) = self.sample_rate {
            cfg.filters = preprocess::default_chain(fs);
        }
        if self.no_filters {
            cfg.filters.clear();
        }
        if let Some(v) = self.classifier {
            cfg.classifier = v;
        }
        if let Some(m) = self.metric {
            match cfg.classifier {
                ClassifierKind::Evm => cfg.evm.metric = m,
                ClassifierKind::Knn => cfg.knn.metric = m,
            }
        }
        if let Some(v) = self.tail_size {
            cfg.evm.tail_size = v;
        }
        if let Some(v) = self.cover {
            cfg.evm.cover_threshold = Some(v);
        }
        if self.no_reduce {
            cfg.evm.cover_threshold = None;
        }
        if let Some(v) = self.reject {
            cfg.evm.reject_threshold = v;
        }
        if let Some(v) = self.k {
            cfg.knn.k = v;
        }
        if self.train_trials.is_some() || self.test_trials.is_some() {
            let train: BTreeSet<u32> = match &self.train_trials {
                Some(t) => t.iter().copied().collect(),
                None => cfg.split.train.clone(),
            };
            let test: BTreeSet<u32> = match &self.test_trials {
                Some(t) => t.iter().copied().collect(),
                None => cfg.split.test.clone(),
            };
            cfg.split = TrialSplit::new(train, test).map_err(|e| Error::Config(e.to_string()))?;
        }
        cfg.vote_per_trial |= self.vote_per_trial;
        cfg.per_subject |= self.per_subject;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Provenance for outputs that have no room for the config themselves.
fn write_config_sidecar(path: &Path, cfg: &RunConfig) -> Result<()> {
    let mut side = path.as_os_str().to_owned();
    side.push(".config.json");
    write_out(Path::new(&side), &cfg.to_json())
}

fn features_for(input: &InputArgs, cfg: &RunConfig) -> Result<FeatureTable> {
    match (&input.features, &input.data) {
        (Some(f), _) => FeatureTable::read_csv(f),
        (None, Some(root)) => extract(&dataio::open_dataset(root, input.manifest.as_deref())?, cfg),
        (None, None) => Err(Error::Config("pass --features or --data".into())),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract { data, run, out } => {
            let cfg = run.resolve()?;
            let recs = dataio::open_dataset(&data.data, data.manifest.as_deref())?;
            let table = extract(&recs, &cfg)?;
            write_out(&out, &table.to_csv())?;
            write_config_sidecar(&out, &cfg)?;
            println!(
                "{} windows x {} features from {} recordings -> {}",
                table.rows.len(),
                table.dim(),
                recs.len(),
                out.display()
            );
        }
        Command::Train { input, run, out } => {
            let cfg = run.resolve()?;
            let table = features_for(&input, &cfg)?;
            let (bundle, summary) = train(&table, &cfg)?;
            write_out(&out, &bundle.to_json()?)?;
            println!("classifier {}", bundle.classifier_name());
            for (label, n) in &summary.class_counts {
                println!("  {label:<3} {n} training windows");
            }
            match cfg.classifier {
                ClassifierKind::Evm => println!(
                    "extreme vectors: {} before reduction, {} after",
                    summary.candidates, summary.kept
                ),
                ClassifierKind::Knn => println!("stored points: {}", summary.kept),
            }
        }
        Command::Eval {
            model,
            input,
            on_train,
            vote_per_trial,
            json,
            per_class_csv: class_csv,
        } => {
            let mut bundle = Bundle::load(&model)?;
            bundle.config.vote_per_trial |= vote_per_trial;
            let table = features_for(&input, &bundle.config)?;
            let side = if on_train { Side::Train } else { Side::Test };
            let ev = evaluate(&bundle, &table, side)?;
            let name = bundle.classifier_name().to_string();
            print!(
                "{}",
                render_report(&[(name.clone(), ev.report.clone())], ReportFormat::Text)
            );
            if ev.report.unknown_count > 0 {
                println!(
                    "rejected: {} of {}",
                    ev.report.unknown_count, ev.report.total
                );
            }
            if !on_train {
                // sanity ordering only; overlapping classes can violate it
                if let Ok(seen) = evaluate(&bundle, &table, Side::Train) {
                    eprintln!("train-split accuracy {:.1}", seen.report.accuracy);
                    if seen.report.accuracy < ev.report.accuracy {
                        log::warn!("train-split accuracy is below test-split accuracy");
                    }
                }
            }
            if let Some(path) = json {
                let doc = serde_json::json!({
                    "config": bundle.config,
                    "split": if on_train { "train" } else { "test" },
                    "reports": serde_json::from_str::<serde_json::Value>(
                        &render_report(&[(name, ev.report.clone())], ReportFormat::Json),
                    ).expect("report is JSON"),
                    "confusion": ev.confusion,
                });
                write_out(
                    &path,
                    &serde_json::to_string_pretty(&doc).expect("serialises"),
                )?;
            }
            if let Some(path) = class_csv {
                write_out(&path, &per_class_csv(&ev.report))?;
            }
        }
        Command::Sweep {
            data,
            run,
            param,
            values,
            out,
        } => {
            let cfg = run.resolve()?;
            let param: SweepParam = param.parse()?;
            let recs = dataio::open_dataset(&data.data, data.manifest.as_deref())?;
            let rows = sweep(&recs, &cfg, param, &values)?;
            let csv = sweep_csv(param, &rows);
            match out {
                Some(path) => {
                    write_out(&path, &csv)?;
                    write_config_sidecar(&path, &cfg)?;
                }
                None => print!("{csv}"),
            }
        }
        Command::Psd {
            frame,
            column,
            header,
            order,
            points,
            sample_rate,
            out,
        } => {
            if !(sample_rate > 0.0) {
                return Err(Error::Config("sample rate must be positive".into()));
            }
            let signal = dataio::read_channels(&frame, &[column], header)?.remove(0);
            let model = reflection_to_ar(&burg(&signal, order)?);
            let grid = psd_grid(points);
            let power = ar_psd(&model, &grid)?;
            let mut csv = String::from("frequency_hz,power\n");
            for (f, p) in grid.iter().zip(&power) {
                csv.push_str(&format!("{},{}\n", f * sample_rate, p));
            }
            match out {
                Some(path) => write_out(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Synth {
            out,
            subjects,
            trials,
            samples,
            seed,
        } => {
            let cfg = dataio::SynthConfig {
                subjects,
                trials,
                samples,
                seed,
                ..Default::default()
            };
            let manifest = dataio::write_synthetic_dataset(&out, &cfg)?;
            println!("{} recordings -> {}", manifest.entries.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error[config]: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            // one line, so callers can parse `error[<kind>]: <message>`
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", kind.as_str());
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}
