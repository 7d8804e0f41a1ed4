//! `rfs`: data generation, transform fitting, training, attacks and the full
//! experiment from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rfs_core::attacks::{self, AttackKind};
use rfs_core::config::{DataSource, ExperimentConfig};
use rfs_core::corpus::{
    self, harvest_transformations, Dataset, DatasetFormat, Label, TransformationLibrary,
};
use rfs_core::evaluation::{self, ProbeOutcome};
use rfs_core::rng::derive_seed;
use rfs_core::{Error, ErrorKind, Pipeline, Result, RobustTransform, Variant};

#[derive(Parser)]
#[command(
    name = "rfs",
    version,
    about = "Robust feature space for malware detection"
)]
struct Cli {
    /// Worker threads; defaults to RFS_THREADS, then to the number of cores.
    #[arg(long, global = true, env = "RFS_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory; created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DataIn {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,

    /// sparse-text | jsonl
    #[arg(long, default_value = "sparse-text")]
    format: DatasetFormat,

    /// Feature dimension (needed for jsonl).
    #[arg(long)]
    n_features: Option<usize>,
}

impl DataIn {
    fn load(&self) -> Result<Dataset> {
        Dataset::load(&self.data, self.format, self.n_features)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the default experiment config.
    DefaultConfig {
        #[command(flatten)]
        common: Common,
    },

    /// Generate a synthetic corpus and its stratified train/test split.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Benign rows.
        #[arg(long)]
        n_benign: Option<usize>,
        /// Malware rows.
        #[arg(long)]
        n_malware: Option<usize>,
        /// Feature dimension.
        #[arg(long)]
        d: Option<usize>,
        /// Share of each class placed in the training split.
        #[arg(long)]
        train_fraction: Option<f64>,
        /// sparse-text | jsonl
        #[arg(long, default_value = "sparse-text")]
        format: DatasetFormat,
    },

    /// Fit the robust transform on a training set.
    FitTransform {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: DataIn,
        /// Number of clusters.
        #[arg(long)]
        m: Option<usize>,
        /// Activation threshold in (0.5, 1).
        #[arg(long)]
        theta: Option<f64>,
    },

    /// Train one detector.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: DataIn,
        /// original | sec-svm | feature-select | robust
        #[arg(long)]
        variant: Variant,
        /// Fitted transform for the robust variant; fitted on the data when absent.
        #[arg(long)]
        transform: Option<PathBuf>,
        /// Number of clusters when fitting.
        #[arg(long)]
        m: Option<usize>,
        /// Activation threshold in (0.5, 1) when fitting.
        #[arg(long)]
        theta: Option<f64>,
        /// SVM regularization constant.
        #[arg(long)]
        c: Option<f64>,
        /// Passes over the training set.
        #[arg(long)]
        epochs: Option<usize>,
        /// Weight bound for sec-svm.
        #[arg(long = "box")]
        box_bound: Option<f64>,
        /// Kept features for feature-select.
        #[arg(long)]
        k: Option<usize>,
    },

    /// Attack the malware rows of a dataset that the pipeline detects.
    Attack {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: DataIn,
        /// Target pipeline JSON.
        #[arg(long)]
        pipeline: PathBuf,
        /// Craft on this pipeline and replay on the target instead.
        #[arg(long)]
        surrogate: Option<PathBuf>,
        /// greedy | pk-greedy | evadedroid
        #[arg(long)]
        kind: String,
        /// Feature budget (greedy) or bundle budget (pk-greedy).
        #[arg(long)]
        budget: Option<usize>,
        /// Query budget (evadedroid).
        #[arg(long = "Q", alias = "q")]
        q: Option<usize>,
        /// Allowed relative growth of the active feature count (evadedroid).
        #[arg(long)]
        alpha: Option<f64>,
        /// Bundles scored per round (evadedroid).
        #[arg(long)]
        n_candidates: Option<usize>,
        /// Transformation library JSON; harvested from the donors when absent.
        #[arg(long)]
        library: Option<PathBuf>,
        /// Benign donor dataset for harvesting; defaults to --data.
        #[arg(long)]
        donors: Option<PathBuf>,
        /// Bundles to harvest.
        #[arg(long)]
        library_size: Option<usize>,
        /// Cap on attacked samples; 0 means all.
        #[arg(long)]
        max_samples: Option<usize>,
    },

    /// Run the full experiment and write the report bundle.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Number of clusters.
        #[arg(long)]
        m: Option<usize>,
        /// Activation threshold in (0.5, 1).
        #[arg(long)]
        theta: Option<f64>,
        /// Cap on attacked samples; 0 means all eligible.
        #[arg(long)]
        max_samples: Option<usize>,
    },

    /// Biased-feature probe: inject the most benign-looking feature into the
    /// test malware and compare detection before and after.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Training set the prevalences come from.
        #[arg(long)]
        train: PathBuf,
        /// Test set whose malware rows are modified.
        #[arg(long)]
        test: PathBuf,
        /// sparse-text | jsonl
        #[arg(long, default_value = "sparse-text")]
        format: DatasetFormat,
        /// Feature dimension (needed for jsonl).
        #[arg(long)]
        n_features: Option<usize>,
        /// Pipelines to compare; the first must be a raw-space linear model.
        #[arg(long, num_args = 1.., required = true)]
        pipelines: Vec<PathBuf>,
    },
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out).map_err(|e| Error::Config {
        field: "out".into(),
        reason: format!("{}: {e}", common.out.display()),
    })?;
    Ok(&common.out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Config {
        field: "out".into(),
        reason: format!("{}: {e}", path.display()),
    })
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::DefaultConfig { common } => {
            let cfg = base_config(&common)?;
            write(&out_dir(&common)?.join("config.toml"), &cfg.to_toml())
        }

        Command::GenData {
            common,
            n_benign,
            n_malware,
            d,
            train_fraction,
            format,
        } => {
            let cfg = base_config(&common)?;
            let DataSource::Synthetic(mut spec) = cfg.data else {
                return Err(Error::config(
                    "data",
                    "gen-data needs a synthetic data source",
                ));
            };
            set(&mut spec.seed, common.seed);
            set(&mut spec.n_benign, n_benign);
            set(&mut spec.n_malware, n_malware);
            set(&mut spec.d, d);
            let fraction = train_fraction.unwrap_or(cfg.split.train_fraction);
            let (ds, truth) = corpus::generate_synthetic(&spec)?;
            let (train, test) =
                corpus::split(&ds, fraction, common.seed.unwrap_or(cfg.split.seed))?;
            let dir = out_dir(&common)?;
            let ext = match format {
                DatasetFormat::SparseText => "txt",
                DatasetFormat::Jsonl => "jsonl",
            };
            let save =
                |name: &str, ds: &Dataset| ds.save(&dir.join(format!("{name}.{ext}")), format);
            save("data", &ds)?;
            save("train", &train)?;
            save("test", &test)?;
            write(&dir.join("ground_truth.json"), &json(&truth)?)
        }

        Command::FitTransform {
            common,
            input,
            m,
            theta,
        } => {
            let cfg = base_config(&common)?;
            let theta = theta.unwrap_or(cfg.transform.theta);
            let m = m.unwrap_or(cfg.transform.m);
            // parameters are checked before any data is read
            if !(theta > 0.5 && theta < 1.0) {
                return Err(Error::config(
                    "theta",
                    format!("threshold must lie in the open interval (0.5, 1), got {theta}"),
                ));
            }
            let train = input.load()?;
            let t = RobustTransform::fit(&train, m, theta)?;
            t.save(&out_dir(&common)?.join("transform.json"))
        }

        Command::Train {
            common,
            input,
            variant,
            transform,
            m,
            theta,
            c,
            epochs,
            box_bound,
            k,
        } => {
            let mut cfg = base_config(&common)?;
            let cl = &mut cfg.classifier;
            set(&mut cl.c, c);
            set(&mut cl.epochs, epochs);
            set(&mut cl.sec_svm_box, box_bound);
            set(&mut cl.feature_select_k, k);
            let hp = cfg.classifier.hyperparams(derive_seed(cfg.master_seed, 1));
            let train = input.load()?;
            let p = match variant {
                Variant::Original => Pipeline::original(&train, &hp)?,
                Variant::SecSvm => Pipeline::sec_svm(&train, &hp, cfg.classifier.sec_svm_box)?,
                Variant::FeatureSelect => {
                    Pipeline::feature_select(&train, cfg.classifier.feature_select_k, &hp)?
                }
                Variant::Robust => {
                    let t = match transform {
                        Some(path) => RobustTransform::load(&path)?,
                        None => RobustTransform::fit(
                            &train,
                            m.unwrap_or(cfg.transform.m),
                            theta.unwrap_or(cfg.transform.theta),
                        )?,
                    };
                    Pipeline::robust(&train, t, &hp)?
                }
            };
            p.save(&out_dir(&common)?.join(format!("pipeline_{variant}.json")))
        }

        Command::Attack {
            common,
            input,
            pipeline,
            surrogate,
            kind,
            budget,
            q,
            alpha,
            n_candidates,
            library,
            donors,
            library_size,
            max_samples,
        } => {
            let cfg = base_config(&common)?;
            let a = &cfg.attacks;
            let kind =
                match kind.as_str() {
                    "greedy" => AttackKind::Greedy {
                        budget: budget.unwrap_or(a.greedy_budget),
                    },
                    "pk-greedy" | "pk_greedy" => AttackKind::PkGreedy {
                        budget: budget.unwrap_or(a.pk_bundle_budget),
                    },
                    "evadedroid" => AttackKind::EvadeDroid {
                        q: q.unwrap_or(a.q),
                        alpha: alpha.unwrap_or(a.alpha),
                        n_candidates: n_candidates.unwrap_or(a.n_candidates),
                    },
                    other => return Err(Error::config(
                        "kind",
                        format!(
                            "unknown attack {other:?}; expected greedy, pk-greedy or evadedroid"
                        ),
                    )),
                };
            let target = Pipeline::load(&pipeline)?;
            let surrogate = surrogate.map(|p| Pipeline::load(&p)).transpose()?;
            let ds = input.load()?;
            let lib = if !kind.needs_library() {
                None
            } else if let Some(path) = library {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::Config {
                    field: "library".into(),
                    reason: format!("{}: {e}", path.display()),
                })?;
                Some(serde_json::from_str::<TransformationLibrary>(&text)?)
            } else {
                let donors = match donors {
                    Some(path) => Dataset::load(&path, input.format, input.n_features)?,
                    None => ds.clone(),
                };
                Some(harvest_transformations(
                    &donors,
                    library_size.unwrap_or(a.library_size),
                    a.bundle_size_range,
                    derive_seed(cfg.master_seed, 10),
                )?)
            };

            let crafter = surrogate.as_ref().unwrap_or(&target);
            let mut samples = Vec::new();
            for i in ds.indices_of(Label::Malware) {
                let row = ds.row(i);
                if target.predict(row)? == Label::Malware && crafter.predict(row)? == Label::Malware
                {
                    samples.push((i, row.to_vec()));
                }
            }
            let cap = max_samples.unwrap_or(a.max_samples);
            if cap > 0 {
                samples.truncate(cap);
            }
            if samples.is_empty() {
                return Err(Error::Precondition(
                    "no malware sample is detected by the attacked pipeline".into(),
                ));
            }
            let seed = derive_seed(cfg.master_seed, 20);
            let dir = out_dir(&common)?;
            let results = match &surrogate {
                None => attacks::attack_all(&target, &samples, &kind, lib.as_ref(), seed)?,
                Some(s) => {
                    let out = attacks::transfer_attack(
                        s,
                        &[&target],
                        &samples,
                        &kind,
                        lib.as_ref(),
                        seed,
                    )?;
                    write(
                        &dir.join("surrogate_results.jsonl"),
                        &evaluation::results_jsonl(&out.surrogate_results)?,
                    )?;
                    out.per_target.into_iter().next().unwrap_or_default()
                }
            };
            write(
                &dir.join("results.jsonl"),
                &evaluation::results_jsonl(&results)?,
            )?;
            if let Some(lib) = &lib {
                write(&dir.join("library.json"), &json(lib)?)?;
            }
            let summary = evaluation::robust_accuracy(&results);
            write(&dir.join("summary.json"), &json(&summary)?)
        }

        Command::Evaluate {
            common,
            m,
            theta,
            max_samples,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.transform.m, m);
            set(&mut cfg.transform.theta, theta);
            set(&mut cfg.attacks.max_samples, max_samples);
            let out = evaluation::run_experiment_to(&cfg, out_dir(&common)?)?;
            let c = &out.checks;
            for m in &out.metrics {
                let g = &m.direct["greedy"];
                println!(
                    "{:<15} clean acc {:6.2}  greedy robust acc {:6.2}  mean NoF {}",
                    m.pipeline,
                    m.clean.accuracy,
                    g.robust_accuracy,
                    g.mean_nof.map_or("-".into(), |v| format!("{v:.2}")),
                );
            }
            println!(
                "robust gain {:.2} pp, clean gap {:.2} pp, curve below original: {}",
                c.robust_gain_pp, c.clean_gap_pp, c.curve_below_original
            );
            let opt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.2}"));
            println!(
                "probe drop original {} robust {}; sec-svm uniformity {:.2} vs original {:.2}",
                opt(c.probe_drop_original),
                opt(c.probe_drop_robust),
                c.uniformity_sec_svm,
                c.uniformity_original
            );
            Ok(())
        }

        Command::Probe {
            common,
            train,
            test,
            format,
            n_features,
            pipelines,
        } => {
            let train = Dataset::load(&train, format, n_features)?;
            let test = Dataset::load(&test, format, n_features)?;
            let loaded = pipelines
                .iter()
                .map(|p| Pipeline::load(p))
                .collect::<Result<Vec<_>>>()?;
            let named: Vec<(String, &Pipeline)> = loaded
                .iter()
                .map(|p| (p.variant().name().to_string(), p))
                .collect();
            let malware: Vec<Vec<usize>> = test
                .indices_of(Label::Malware)
                .into_iter()
                .map(|i| test.row(i).to_vec())
                .collect();
            let outcome = evaluation::bias_probe(&loaded[0], &named, &train, &malware)?;
            if let ProbeOutcome::Inapplicable { reason } = &outcome {
                eprintln!("probe inapplicable: {reason}");
            }
            write(&out_dir(&common)?.join("probe.json"), &json(&outcome)?)
        }
    }
}

fn stage_name(command: &Command) -> &'static str {
    match command {
        Command::DefaultConfig { .. } => "default-config",
        Command::GenData { .. } => "gen-data",
        Command::FitTransform { .. } => "fit-transform",
        Command::Train { .. } => "train",
        Command::Attack { .. } => "attack",
        Command::Evaluate { .. } => "evaluate",
        Command::Probe { .. } => "probe",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: threads: {e}");
            return ExitCode::from(4);
        }
    }
    let stage = stage_name(&cli.command);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Runtime => 4,
            };
            eprintln!("error: {stage}: {e}");
            ExitCode::from(code)
        }
    }
}
