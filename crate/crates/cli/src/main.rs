//! `keylab`: simulate rooms, calibrate, attack, evaluate, train the byte-level
//! classifiers and run whole experiment batteries.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use keylab::attack::{evaluate, run_attack, GroundTruth, KeystrokeReport, Metrics, TOP_K};
use keylab::calibration::{isolation_capture, run_calibration, CalibrationReport, CalibrationSetup};
use keylab::experiment::{
    rerun_manifest, run_experiment, seeded_profiles, simulate, validate_config, ExperimentConfig,
    ExperimentError, ExperimentPlan, Manifest, Scenario,
};
use keylab::ml::{build_dataset, top_k_accuracy, Classifier, ClickFields, DatasetSplit, ModelKind};
use keylab::trace::TraceFile;
use keylab::victim::KeyboardModel;

#[derive(Parser)]
#[command(name = "keylab", version, about = "Remote VR keystroke-inference laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML experiment config; omitted keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate victims typing in a room and capture the attacker's trace.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth labels (default: `<out>.truth.json`).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Victims in the room (default: from the config).
        #[arg(long)]
        victims: Option<usize>,
        /// Add one more user who joins but never types.
        #[arg(long)]
        idle_attacker: bool,
    },
    /// Calibrate against the configured application and write the report.
    Calibrate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Also keep the isolation replay script and its captured trace here.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Infer keystrokes from a captured trace.
    Attack {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// Keyboard layout file replacing the calibrated keyboard.
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a keystroke report against ground truth.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Per-group top-k table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a byte-level classifier on click packets.
    MlTrain(MlTrain),
    /// Evaluate a classifier checkpoint on click packets.
    MlEval(MlEval),
    /// Run a scenario over seeds, or re-run a manifest and compare outputs.
    RunExperiment(RunExperiment),
    /// Check a config file and print it with every default filled in.
    ValidateConfig { file: PathBuf },
}

#[derive(Args)]
struct MlData {
    #[command(flatten)]
    config: ConfigArg,
    /// Trace files; each pairs with the `--truth` at the same position.
    #[arg(long = "trace", required = true)]
    traces: Vec<PathBuf>,
    #[arg(long = "truth", required = true)]
    truths: Vec<PathBuf>,
    /// Calibration report locating the click fields.
    #[arg(long)]
    calib: PathBuf,
}

#[derive(Args)]
struct MlTrain {
    #[command(flatten)]
    data: MlData,
    #[arg(long, value_parser = parse_model, default_value = "mlp")]
    model: ModelKind,
    #[arg(long)]
    out: PathBuf,
    /// Seeds the split and the initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Per-epoch training loss and validation top-1.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct MlEval {
    #[command(flatten)]
    data: MlData,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct RunExperiment {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_parser = parse_scenario, conflicts_with_all = ["plan", "rerun"])]
    scenario: Option<Scenario>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// TOML plan: `scenario`, `seeds` and an optional `[overrides]` table.
    #[arg(long, conflicts_with = "rerun")]
    plan: Option<PathBuf>,
    /// Manifest to reproduce; exits non-zero if any output differs.
    #[arg(long)]
    rerun: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::parse(s).ok_or_else(|| {
        format!("unknown scenario {s:?}; one of {}", Scenario::ALL.map(|x| x.as_str()).join(", "))
    })
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown model {s:?}; one of nearest-centroid, multinomial-logistic, mlp"))
}

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig> {
    let text = match &arg.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = validate_config(&text).map_err(explain)?;
    cfg.apply_env().map_err(explain)?;
    Ok(cfg)
}

/// Config problems, one per line.
fn explain(e: ExperimentError) -> anyhow::Error {
    match e {
        ExperimentError::Invalid(problems) => anyhow::anyhow!("invalid config:\n  {}", problems.join("\n  ")),
        other => other.into(),
    }
}

fn print_metrics(m: &Metrics) {
    let all = m.group("all").expect("every metrics table has an `all` group");
    println!("clicks {}  undetected {}", m.total, m.undetected);
    for (k, (acc, base)) in TOP_K.iter().zip(all.top.iter().zip(m.random_baseline)) {
        println!("top-{k} {:6.2}%  (random {:5.2}%)", 100.0 * acc, 100.0 * base);
    }
}

fn ml_samples(d: &MlData, cfg: &ExperimentConfig) -> Result<Vec<keylab::ml::ByteSample>> {
    ensure!(d.traces.len() == d.truths.len(), "{} traces but {} truth files", d.traces.len(), d.truths.len());
    let runs = d
        .traces
        .iter()
        .zip(&d.truths)
        .map(|(t, g)| Ok((TraceFile::read(t)?, GroundTruth::from_json(&read(g)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let calib = CalibrationReport::read(&d.calib)?;
    let fields = ClickFields::from_semantics(&calib.semantics)?;
    let data = build_dataset(&runs, &fields, &KeyboardModel::default_layout(), &cfg.click, cfg.ml.features)?;
    ensure!(!data.is_empty(), "no labeled clicks found");
    Ok(data)
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn write(p: &Path, text: &str) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, out, truth, seed, victims, idle_attacker } => {
            let cfg = load_config(&config)?;
            let n = victims.unwrap_or(cfg.victims);
            ensure!(n >= 1, "need at least one victim");
            let corpus = simulate(&cfg, seed, &seeded_profiles(n, seed), idle_attacker)?;
            let truth = truth.unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".truth.json");
                s.into()
            });
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            corpus.trace.write(&out)?;
            write(&truth, &corpus.truth.to_json())?;
            println!(
                "{} datagrams, {} labeled clicks -> {} (truth {})",
                corpus.trace.records.len(),
                corpus.truth.click_count(),
                out.display(),
                truth.display()
            );
        }
        Command::Calibrate { config, out, trace_dir } => {
            let cfg = load_config(&config)?;
            let setup = CalibrationSetup { room: cfg.room.clone(), ..CalibrationSetup::default() };
            if let Some(dir) = &trace_dir {
                let (script, trace) = isolation_capture(&setup)?;
                std::fs::create_dir_all(dir)?;
                trace.write(&dir.join("isolation.trace"))?;
                write(&dir.join("isolation.script.json"), &serde_json::to_string(&script)?)?;
            }
            let report = run_calibration(&setup)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            report.write(&out)?;
            println!(
                "{} channels mapped; cursor search rounds {:?}; rule rms {:.2e} m; holdout error {:.2e} m -> {}",
                report.semantics.channels.len(),
                report.cursor.rounds,
                report.rule_fit.rms_residual,
                report.holdout_error,
                out.display()
            );
        }
        Command::Attack { config, trace, calib, layout, out } => {
            let cfg = load_config(&config)?;
            let trace = TraceFile::read(&trace)?;
            let mut calib = CalibrationReport::read(&calib)?;
            if let Some(p) = layout {
                let rule = calib.keyboard.pose_rule();
                calib.keyboard = KeyboardModel::parse(&read(&p)?)?.with_pose_rule(rule);
            }
            let report = run_attack(&trace, &calib, &cfg.click)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            report.write(&out)?;
            for u in &report.users {
                println!("user {}: {} packets, {} clicks: {}", u.user_id, u.packets, u.clicks.len(), u.text());
            }
        }
        Command::Evaluate { report, truth, csv } => {
            let report = KeystrokeReport::read(&report)?;
            let truth = GroundTruth::from_json(&read(&truth)?)?;
            let m = evaluate(&report, &truth)?;
            print_metrics(&m);
            if let Some(p) = csv {
                write(&p, &m.to_csv())?;
            }
        }
        Command::MlTrain(a) => {
            let mut cfg = load_config(&a.data.config)?;
            cfg.ml.train.seed = a.seed;
            if let Some(e) = a.epochs {
                cfg.ml.train.epochs = e;
            }
            let data = ml_samples(&a.data, &cfg)?;
            let split = DatasetSplit::stratified(&data.iter().map(|s| s.label).collect::<Vec<_>>(), a.seed);
            let outcome = Classifier::train(a.model, &data, &split, &cfg.ml.train)?;
            outcome.classifier.write(&a.out)?;
            let acc = top_k_accuracy(&outcome.classifier, &data, &split.test);
            println!(
                "{} samples ({}/{}/{}); kept epoch {}; test top-1 {:.2}%, top-3 {:.2}%, top-5 {:.2}% -> {}",
                data.len(),
                split.train.len(),
                split.val.len(),
                split.test.len(),
                outcome.best_epoch,
                100.0 * acc[0],
                100.0 * acc[1],
                100.0 * acc[2],
                a.out.display()
            );
            if let Some(p) = a.curve {
                let mut text = String::from("epoch,train_loss,val_top1\n");
                for e in &outcome.curve {
                    text.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_top1));
                }
                write(&p, &text)?;
            }
        }
        Command::MlEval(a) => {
            let cfg = load_config(&a.data.config)?;
            let classifier = Classifier::read(&a.checkpoint)?;
            let data = ml_samples(&a.data, &cfg)?;
            let all: Vec<usize> = (0..data.len()).collect();
            let acc = top_k_accuracy(&classifier, &data, &all);
            println!(
                "{} samples; top-1 {:.2}%, top-3 {:.2}%, top-5 {:.2}%",
                data.len(),
                100.0 * acc[0],
                100.0 * acc[1],
                100.0 * acc[2]
            );
        }
        Command::RunExperiment(a) => {
            if let Some(path) = &a.rerun {
                let manifest = Manifest::read(path)?;
                let out = a.out_dir.clone().unwrap_or_else(|| PathBuf::from("rerun"));
                let differing = rerun_manifest(&manifest, &out)?;
                if differing.is_empty() {
                    println!("{} outputs reproduced exactly", manifest.outputs.len());
                } else {
                    println!("differing outputs: {}", differing.join(", "));
                    return Ok(ExitCode::FAILURE);
                }
                return Ok(ExitCode::SUCCESS);
            }
            let mut cfg = load_config(&a.config)?;
            if let Some(d) = a.out_dir {
                cfg.out_dir = d;
            }
            if let Some(j) = a.jobs {
                cfg.jobs = j;
            }
            let plan = match (&a.plan, a.scenario) {
                (Some(p), _) => ExperimentPlan::parse(&read(p)?).map_err(explain)?,
                (None, Some(s)) => ExperimentPlan::new(s, a.seeds.clone()),
                (None, None) => bail!("give --scenario, --plan or --rerun"),
            };
            ensure!(!plan.seeds.is_empty(), "seeds must not be empty");
            let manifest = run_experiment(&plan, &cfg).map_err(explain)?;
            let dir = cfg.out_dir.join(plan.scenario.as_str());
            for (name, digest) in &manifest.outputs {
                println!("{}  {}", &digest[..16], dir.join(name).display());
            }
        }
        Command::ValidateConfig { file } => match validate_config(&read(&file)?) {
            Ok(cfg) => print!("{}", cfg.to_toml()),
            Err(ExperimentError::Invalid(problems)) => {
                for p in problems {
                    eprintln!("{}: {p}", file.display());
                }
                return Ok(ExitCode::from(2));
            }
            Err(e) => return Err(e.into()),
        },
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
