//! Whole studies: configuration, scenario plans, a seeded worker pool, CSV
//! output and a manifest that reproduces every file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attack::{run_attack, score, AttackError, ClickRule, GroundTruth, Metrics, ScoredClick, UserTruth, TOP_K};
use crate::calibration::{run_calibration, CalibrationError, CalibrationReport, CalibrationSetup};
use crate::ml::{
    build_dataset, top_k_accuracy, Classifier, ClickFields, DatasetSplit, FeatureMode, MlError, ModelKind,
    TrainConfig,
};
use crate::room::{degrade_trace, run_session, BackgroundSource, RoomConfig, RoomError};
use crate::trace::TraceFile;
use crate::victim::{
    default_cursor_offset, generate_prompt_battery, synthesize_session, KeyboardModel, MotionScript, TypistProfile,
    VictimError, VictimRig,
};

pub const OUT_DIR_ENV: &str = "KEYLAB_OUT_DIR";
pub const JOBS_ENV: &str = "KEYLAB_JOBS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("{scenario} seed {seed}: {message}")]
    Scenario { scenario: &'static str, seed: u64, message: String },
    #[error(transparent)]
    Room(#[from] RoomError),
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlStudyConfig {
    pub train: TrainConfig,
    pub features: FeatureMode,
    pub models: Vec<ModelKind>,
    /// Victims per seed whose clicks form the dataset.
    pub victims: usize,
}

impl Default for MlStudyConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            features: FeatureMode::Bytes,
            models: vec![ModelKind::NearestCentroid, ModelKind::MultinomialLogistic, ModelKind::Mlp],
            victims: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub room: RoomConfig,
    pub click: ClickRule,
    /// Victims per room (multi-victim-4 always uses four plus an idle
    /// attacker).
    pub victims: usize,
    /// Prompts per victim, taken from the front of the 65-prompt battery.
    pub prompts: usize,
    /// Measure offsets and keyboard through calibration; otherwise use the
    /// simulator's own values.
    pub calibrate: bool,
    pub drop_rates: Vec<f64>,
    pub ml: MlStudyConfig,
    pub out_dir: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            room: RoomConfig::default(),
            click: ClickRule::default(),
            victims: 1,
            prompts: 65,
            calibrate: true,
            drop_rates: vec![0.0, 0.05, 0.10, 0.15, 0.20],
            ml: MlStudyConfig::default(),
            out_dir: PathBuf::from("out"),
            jobs: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p: Vec<String> = self.room.problems().into_iter().map(|e| format!("room: {e}")).collect();
        let c = &self.click;
        if !(c.threshold > 0.0 && c.threshold <= 1.0) {
            p.push(format!("click.threshold must be in (0,1], got {}", c.threshold));
        }
        if !(c.rearm_below < c.threshold && c.rearm_below >= 0.0) {
            p.push(format!("click.rearm_below must be in [0, threshold), got {}", c.rearm_below));
        }
        if c.ranking_depth < TOP_K[2] {
            p.push(format!("click.ranking_depth must be at least {}, got {}", TOP_K[2], c.ranking_depth));
        }
        if self.victims == 0 {
            p.push("victims must be at least 1".into());
        }
        if !(1..=65).contains(&self.prompts) {
            p.push(format!("prompts must be in 1..=65, got {}", self.prompts));
        }
        for r in &self.drop_rates {
            if !(0.0..=1.0).contains(r) {
                p.push(format!("drop_rates entry {r} not in [0,1]"));
            }
        }
        let t = &self.ml.train;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            p.push(format!("ml.train.learning_rate must be positive, got {}", t.learning_rate));
        }
        if t.epochs == 0 || t.batch_size == 0 {
            p.push("ml.train.epochs and ml.train.batch_size must be at least 1".into());
        }
        if self.ml.victims == 0 {
            p.push("ml.victims must be at least 1".into());
        }
        p
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything that affects results (output location and worker
    /// count excluded).
    pub fn digest(&self) -> String {
        let c = ExperimentConfig { out_dir: PathBuf::new(), jobs: 0, ..self.clone() };
        hex::encode(Sha256::digest(c.to_toml()))
    }

    /// Applies output-directory and worker-count overrides from `get`.
    pub fn apply_env_with(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ExperimentError> {
        if let Some(dir) = get(OUT_DIR_ENV) {
            self.out_dir = PathBuf::from(dir);
        }
        if let Some(j) = get(JOBS_ENV) {
            self.jobs =
                j.trim().parse().map_err(|_| ExperimentError::Invalid(vec![format!("{JOBS_ENV}={j:?} is not a count")]))?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<(), ExperimentError> {
        self.apply_env_with(|k| std::env::var(k).ok())
    }
}

/// Removes keys of `given` absent from `known`, reporting each as a dotted
/// path.
fn take_unknown_keys(given: &mut toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    given.retain(|k, v| {
        let path = if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match (known.get(k), v) {
            (None, _) => {
                out.push(format!("{path}: unknown key"));
                false
            }
            (Some(toml::Value::Table(kt)), toml::Value::Table(gt)) => {
                take_unknown_keys(gt, kt, &path, out);
                true
            }
            _ => true,
        }
    });
}

fn from_table(mut table: toml::Table) -> Result<ExperimentConfig, ExperimentError> {
    let known = toml::Table::try_from(ExperimentConfig::default()).expect("defaults serialize");
    let mut errs = Vec::new();
    take_unknown_keys(&mut table, &known, "", &mut errs);
    let cfg = match table.try_into::<ExperimentConfig>() {
        Ok(cfg) => cfg,
        Err(e) => {
            errs.push(e.message().to_string());
            return Err(ExperimentError::Invalid(errs));
        }
    };
    errs.extend(cfg.problems());
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ExperimentError::Invalid(errs))
    }
}

/// Parses a TOML config, filling defaults. Every unknown key or out-of-range
/// value is reported, not just the first.
pub fn validate_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ExperimentError::Invalid(vec![e.to_string()]))?;
    from_table(table)
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "single-victim")]
    SingleVictim,
    #[serde(rename = "multi-victim-4")]
    MultiVictim4,
    #[serde(rename = "drop-sweep")]
    DropSweep,
    #[serde(rename = "row-study")]
    RowStudy,
    #[serde(rename = "speed-study")]
    SpeedStudy,
    #[serde(rename = "ml-study")]
    MlStudy,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::SingleVictim,
        Scenario::MultiVictim4,
        Scenario::DropSweep,
        Scenario::RowStudy,
        Scenario::SpeedStudy,
        Scenario::MlStudy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SingleVictim => "single-victim",
            Scenario::MultiVictim4 => "multi-victim-4",
            Scenario::DropSweep => "drop-sweep",
            Scenario::RowStudy => "row-study",
            Scenario::SpeedStudy => "speed-study",
            Scenario::MlStudy => "ml-study",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

/// A scenario, its seeds and config deltas (same shape as the config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub overrides: toml::Table,
}

impl ExperimentPlan {
    pub fn new(scenario: Scenario, seeds: Vec<u64>) -> Self {
        Self { scenario, seeds, overrides: toml::Table::new() }
    }

    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let plan: Self = toml::from_str(text).map_err(|e| ExperimentError::Invalid(vec![e.message().to_string()]))?;
        if plan.seeds.is_empty() {
            return Err(ExperimentError::Invalid(vec!["seeds must not be empty".into()]));
        }
        Ok(plan)
    }

    /// `base` with the overrides applied, revalidated.
    pub fn resolve(&self, base: &ExperimentConfig) -> Result<ExperimentConfig, ExperimentError> {
        let mut t = toml::Table::try_from(base).expect("config serializes");
        merge(&mut t, &self.overrides);
        from_table(t)
    }
}

/// One simulated room with its labels.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub room: RoomConfig,
    pub scripts: Vec<MotionScript>,
    pub trace: TraceFile,
    pub truth: GroundTruth,
}

/// `n` seeded typists. A lone typist gets a seeded speed percentile rather
/// than the cohort midpoint, so single-victim seeds cover all speeds.
pub fn seeded_profiles(n: usize, seed: u64) -> Vec<TypistProfile> {
    let mut p = TypistProfile::cohort(n, seed);
    if n == 1 {
        p[0].speed_percentile = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1e995).random();
    }
    p
}

/// Victims `1..=n` type their batteries in one room; with `idle_attacker`
/// one more user (the attacker) stands idle.
pub fn simulate(
    cfg: &ExperimentConfig,
    seed: u64,
    profiles: &[TypistProfile],
    idle_attacker: bool,
) -> Result<Corpus, ExperimentError> {
    let kb = KeyboardModel::default_layout();
    let n = profiles.len() as u32;
    let users: Vec<u32> = (1..=n + idle_attacker as u32).collect();
    let room = RoomConfig { users, seed, ..cfg.room.clone() };
    let scripts = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let i = i as u64;
            let battery = generate_prompt_battery(seed.wrapping_mul(1_000_003).wrapping_add(i));
            synthesize_session(&battery[..cfg.prompts], &kb, p, &VictimRig::default(), seed.wrapping_mul(7919) ^ i)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let trace = run_session(&room, &scripts, &BackgroundSource::defaults())?;
    let truth = GroundTruth {
        tick_rate: room.tick_rate,
        device_rate: room.device_rate,
        users: (1..=n).zip(&scripts).map(|(user_id, s)| UserTruth { user_id, labels: s.labels.clone() }).collect(),
    };
    Ok(Corpus { room, scripts, trace, truth })
}

/// Calibration for `cfg`'s application, cached under `out_dir/cache` by
/// config hash (`None` disables the cache).
pub fn calibration_for(cfg: &ExperimentConfig, cache: Option<&Path>) -> Result<CalibrationReport, ExperimentError> {
    if !cfg.calibrate {
        return Ok(CalibrationReport::ground_truth(&cfg.room, default_cursor_offset(), KeyboardModel::default_layout()));
    }
    let setup = CalibrationSetup { room: cfg.room.clone(), ..CalibrationSetup::default() };
    let key = hex::encode(Sha256::digest(serde_json::to_vec(&setup).expect("setup serializes")));
    let path = cache.map(|d| d.join(format!("calibration-{}.json", &key[..16])));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        return Ok(CalibrationReport::read(p)?);
    }
    let report = run_calibration(&setup)?;
    if let Some(p) = path {
        std::fs::create_dir_all(p.parent().expect("cache dir"))?;
        report.write(&p)?;
    }
    Ok(report)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    std::fs::write(path, w.into_inner().expect("flush"))?;
    Ok(())
}

fn acc_cols(top: [f64; 3]) -> impl Iterator<Item = String> {
    top.into_iter().map(|v| format!("{v:.6}"))
}

fn row(first: impl IntoIterator<Item = String>, n: usize, top: [f64; 3]) -> Vec<String> {
    first.into_iter().chain([n.to_string()]).chain(acc_cols(top)).collect()
}

/// What one seed produced, before merging.
enum SeedOutput {
    /// Scored clicks per variant (drop rate, or a single "all").
    Scored(Vec<(String, Vec<ScoredClick>)>),
    /// (model, train size, test size, accuracy).
    Ml(Vec<(ModelKind, usize, usize, [f64; 3])>),
}

fn run_seed(
    plan: &ExperimentPlan,
    cfg: &ExperimentConfig,
    calib: &CalibrationReport,
    seed: u64,
    dir: &Path,
) -> Result<SeedOutput, ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let (victims, idle) = match plan.scenario {
        Scenario::MultiVictim4 => (4, true),
        Scenario::MlStudy => (cfg.ml.victims, false),
        _ => (cfg.victims, false),
    };
    let corpus = simulate(cfg, seed, &seeded_profiles(victims, seed), idle)?;
    if plan.scenario == Scenario::MlStudy {
        let fields = ClickFields::from_semantics(&calib.semantics)?;
        let data = build_dataset(
            &[(corpus.trace, corpus.truth)],
            &fields,
            &KeyboardModel::default_layout(),
            &cfg.click,
            cfg.ml.features,
        )?;
        let split = DatasetSplit::stratified(&data.iter().map(|s| s.label).collect::<Vec<_>>(), seed);
        let train = TrainConfig { seed, ..cfg.ml.train.clone() };
        let mut out = Vec::new();
        for &kind in &cfg.ml.models {
            let t = Classifier::train(kind, &data, &split, &train)?;
            t.classifier.write(&dir.join(format!("{}.json", kind_name(kind))))?;
            out.push((kind, split.train.len(), split.test.len(), top_k_accuracy(&t.classifier, &data, &split.test)));
        }
        return Ok(SeedOutput::Ml(out));
    }
    let rates: Vec<f64> = if plan.scenario == Scenario::DropSweep { cfg.drop_rates.clone() } else { vec![0.0] };
    let mut out = Vec::new();
    for (i, &rate) in rates.iter().enumerate() {
        let trace = if rate > 0.0 { degrade_trace(&corpus.trace, rate, seed ^ (i as u64) << 32) } else { corpus.trace.clone() };
        let report = run_attack(&trace, calib, &cfg.click)?;
        let scored = score(&report, &corpus.truth)?;
        let tag = if plan.scenario == Scenario::DropSweep { format!("{rate}") } else { "all".into() };
        if rates.len() == 1 {
            report.write(&dir.join("report.json"))?;
            std::fs::write(dir.join("metrics.csv"), Metrics::from_scored(&scored).to_csv())?;
        }
        out.push((tag, scored));
    }
    Ok(SeedOutput::Scored(out))
}

fn kind_name(k: ModelKind) -> &'static str {
    match k {
        ModelKind::NearestCentroid => "nearest-centroid",
        ModelKind::MultinomialLogistic => "multinomial-logistic",
        ModelKind::Mlp => "mlp",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub code_version: String,
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    /// Resolved config, TOML.
    pub config: String,
    /// Output path (relative to the scenario directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, ExperimentError> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| ExperimentError::Manifest(e.to_string()))
    }

    pub fn plan(&self) -> ExperimentPlan {
        ExperimentPlan::new(self.scenario, self.seeds.clone())
    }

    pub fn config(&self) -> Result<ExperimentConfig, ExperimentError> {
        validate_config(&self.config)
    }
}

/// Runs every seed of `plan` (in a pool of `cfg.jobs` workers, each writing
/// its own `seed-N/` directory), then merges the per-seed results into the
/// scenario CSVs and writes `manifest.json`.
pub fn run_experiment(plan: &ExperimentPlan, base: &ExperimentConfig) -> Result<Manifest, ExperimentError> {
    if plan.seeds.is_empty() {
        return Err(ExperimentError::Invalid(vec!["seeds must not be empty".into()]));
    }
    let cfg = plan.resolve(base)?;
    let dir = cfg.out_dir.join(plan.scenario.as_str());
    std::fs::create_dir_all(&dir)?;
    let calib = calibration_for(&cfg, Some(&cfg.out_dir.join("cache")))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().expect("thread pool");
    let results = pool.install(|| {
        plan.seeds
            .par_iter()
            .map(|&seed| {
                run_seed(plan, &cfg, &calib, seed, &dir.join(format!("seed-{seed}"))).map_err(|e| {
                    ExperimentError::Scenario { scenario: plan.scenario.as_str(), seed, message: e.to_string() }
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut files = Vec::new();
    let mut csv_out = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<(), ExperimentError> {
        write_csv(&dir.join(name), header, &rows)?;
        files.push(name.to_string());
        Ok(())
    };
    let mut pooled: BTreeMap<usize, (String, Vec<ScoredClick>)> = BTreeMap::new();
    let mut per_seed = Vec::new();
    let mut ml_rows = Vec::new();
    for (&seed, r) in plan.seeds.iter().zip(results) {
        match r {
            SeedOutput::Scored(variants) => {
                for (i, (tag, scored)) in variants.into_iter().enumerate() {
                    per_seed.push((seed, tag.clone(), scored.clone()));
                    pooled.entry(i).or_insert_with(|| (tag, vec![])).1.extend(scored);
                }
            }
            SeedOutput::Ml(rows) => {
                for (kind, n_train, n_test, acc) in rows {
                    ml_rows.push(
                        [kind_name(kind).to_string(), seed.to_string(), n_train.to_string()]
                            .into_iter()
                            .chain([n_test.to_string()])
                            .chain(acc_cols(acc))
                            .collect(),
                    );
                }
            }
        }
    }
    let all: Vec<ScoredClick> = pooled.values().flat_map(|(_, s)| s.iter().cloned()).collect();
    let header = |first: &'static str| [first, "n", "top1", "top3", "top5"];
    match plan.scenario {
        Scenario::SingleVictim | Scenario::MultiVictim4 => {
            let mut rows = Vec::new();
            for (seed, _, scored) in &per_seed {
                let mut users: BTreeMap<u32, Vec<ScoredClick>> = BTreeMap::new();
                for s in scored {
                    users.entry(s.user_id).or_default().push(s.clone());
                }
                for (u, s) in users {
                    let m = Metrics::from_scored(&s);
                    rows.push(row([seed.to_string(), u.to_string()], m.total, m.group("all").expect("all").top));
                }
            }
            csv_out("users.csv", &["seed", "user", "n", "top1", "top3", "top5"], rows)?;
            std::fs::write(dir.join("metrics.csv"), Metrics::from_scored(&all).to_csv())?;
            files.push("metrics.csv".into());
        }
        Scenario::DropSweep => {
            let rows = pooled
                .values()
                .map(|(tag, s)| {
                    let m = Metrics::from_scored(s);
                    row([tag.clone()], m.total, m.group("all").expect("all").top)
                })
                .collect();
            csv_out("drop_sweep.csv", &header("drop_rate"), rows)?;
        }
        Scenario::RowStudy => {
            let m = Metrics::from_scored(&all);
            let rows = (1..=4)
                .filter_map(|r| m.group(&format!("row:{r}")).map(|g| row([r.to_string()], g.n, g.top)))
                .collect();
            csv_out("rows.csv", &header("row"), rows)?;
        }
        Scenario::SpeedStudy => {
            let m = Metrics::from_scored(&all);
            let mut d: Vec<f64> = all.iter().map(|s| s.duration).collect();
            d.sort_by(f64::total_cmp);
            let rows = crate::attack::SPEED_GROUPS
                .iter()
                .enumerate()
                .map(|(q, name)| {
                    let g = m.group(name).expect("speed group");
                    let (lo, hi) = (q * d.len() / 5, (q + 1) * d.len() / 5);
                    let span = if lo < hi { [d[lo], d[hi - 1]] } else { [f64::NAN; 2] };
                    [name.trim_start_matches("speed:").to_string(), g.n.to_string()]
                        .into_iter()
                        .chain(span.map(|v| format!("{v:.4}")))
                        .chain(acc_cols(g.top))
                        .collect()
                })
                .collect();
            csv_out("speed.csv", &["percentile", "n", "min_duration", "max_duration", "top1", "top3", "top5"], rows)?;
        }
        Scenario::MlStudy => {
            csv_out("ml.csv", &["model", "seed", "n_train", "n_test", "top1", "top3", "top5"], ml_rows)?;
        }
    }

    let outputs = files
        .into_iter()
        .map(|f| Ok((f.clone(), hex::encode(Sha256::digest(std::fs::read(dir.join(&f))?)))))
        .collect::<Result<BTreeMap<_, _>, ExperimentError>>()?;
    let manifest = Manifest {
        format_version: 1,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: plan.scenario,
        seeds: plan.seeds.clone(),
        config_hash: cfg.digest(),
        config: ExperimentConfig { out_dir: PathBuf::new(), jobs: 0, ..cfg.clone() }.to_toml(),
        outputs,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

/// Reruns a manifest into `out_dir` and lists outputs whose hash differs.
pub fn rerun_manifest(manifest: &Manifest, out_dir: &Path) -> Result<Vec<String>, ExperimentError> {
    let mut cfg = manifest.config()?;
    cfg.out_dir = out_dir.to_path_buf();
    let fresh = run_experiment(&manifest.plan(), &cfg)?;
    Ok(manifest
        .outputs
        .iter()
        .filter(|(f, h)| fresh.outputs.get(*f) != Some(h))
        .map(|(f, _)| f.clone())
        .collect())
}
