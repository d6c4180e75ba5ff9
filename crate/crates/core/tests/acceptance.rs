//! Acceptance gate: one PASS/FAIL line per criterion, with runtime against
//! its budget. Exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use keylab::attack::{run_attack, score, ClickRule, Metrics, ScoredClick};
use keylab::calibration::{run_calibration, CalibrationReport, CalibrationSetup, FieldSemanticsMap};
use keylab::experiment::{rerun_manifest, run_experiment, simulate, Corpus, ExperimentConfig, ExperimentPlan, Scenario};
use keylab::ml::{
    build_dataset, gradient_check, top_k_accuracy, Classifier, ClickFields, DatasetSplit, FeatureMode, ModelKind,
    Network, TrainConfig, CLASS_COUNT,
};
use keylab::room::{degrade_trace, RoomConfig};
use keylab::victim::{default_cursor_offset, KeyboardModel, TypistProfile};
use keylab::wire::{default_registry, parse_packet, QuantizedTransformCodec, WireError};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const PROFILES: usize = 20;
const SEEDS: u64 = 10;
const DROP_RATES: [f64; 5] = [0.0, 0.05, 0.10, 0.15, 0.20];

/// Twenty seeded typists, each typing the full battery in its own room.
fn corpus(cfg: &ExperimentConfig, seed: u64) -> Vec<Corpus> {
    let profiles = TypistProfile::cohort(PROFILES, 2024 + seed);
    profiles
        .par_iter()
        .enumerate()
        .map(|(i, p)| simulate(cfg, seed * 1000 + i as u64, std::slice::from_ref(p), false).expect("simulate"))
        .collect()
}

fn attack_all(corpora: &[Corpus], calib: &CalibrationReport, drop: f64, drop_seed: u64) -> Vec<ScoredClick> {
    corpora
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, c)| {
            let trace =
                if drop > 0.0 { degrade_trace(&c.trace, drop, drop_seed * 7_777 + i as u64) } else { c.trace.clone() };
            let report = run_attack(&trace, calib, &ClickRule::default()).expect("attack");
            score(&report, &c.truth).expect("score")
        })
        .collect()
}

fn clicks(corpora: &[Corpus]) -> usize {
    corpora.iter().map(|c| c.truth.click_count()).sum()
}

fn criterion_1() -> Outcome {
    let room = RoomConfig { codec: QuantizedTransformCodec::lossless(), ..RoomConfig::default() };
    let calib = run_calibration(&CalibrationSetup { room: room.clone(), ..CalibrationSetup::default() }).expect("calibrate");
    let cfg = ExperimentConfig { room, ..ExperimentConfig::default() };
    let c = simulate(&cfg, 1, &[TypistProfile::default()], false).expect("simulate");
    let report = run_attack(&c.trace, &calib, &ClickRule::default()).expect("attack");
    let m = Metrics::from_scored(&score(&report, &c.truth).expect("score"));
    outcome(m.top1() == 1.0, format!("top-1 {:.4} over {} clicks, {} undetected", m.top1(), m.total, m.undetected))
}

struct Shared {
    calib: CalibrationReport,
    corpora: Vec<Vec<Corpus>>,
}

fn criterion_2(s: &Shared) -> Outcome {
    let m = Metrics::from_scored(&attack_all(&s.corpora[0], &s.calib, 0.0, 0));
    let g = m.group("all").expect("all");
    outcome(
        g.top[0] >= 0.95 && g.top[2] >= g.top[0],
        format!("top-1 {:.4}, top-5 {:.4} over {} clicks ({PROFILES} profiles x 65 prompts)", g.top[0], g.top[2], m.total),
    )
}

fn criterion_3(s: &Shared) -> Outcome {
    let acc: Vec<f64> = DROP_RATES
        .iter()
        .map(|&rate| {
            let per_seed: Vec<f64> = (0..SEEDS as usize)
                .map(|k| Metrics::from_scored(&attack_all(&s.corpora[k], &s.calib, rate, k as u64)).top1())
                .collect();
            per_seed.iter().sum::<f64>() / per_seed.len() as f64
        })
        .collect();
    let degradation = acc[0] - acc[4];
    let monotone = acc.windows(2).all(|w| w[1] <= w[0] + 0.005);
    outcome(
        degradation <= 0.04 && monotone,
        format!(
            "mean top-1 by drop {}: degradation {:.2} points at 20%",
            acc.iter().map(|a| format!("{:.4}", a)).collect::<Vec<_>>().join("/"),
            degradation * 100.0
        ),
    )
}

fn criterion_4(s: &Shared) -> Outcome {
    let (mut r1, mut r4) = (0.0, 0.0);
    for k in 0..SEEDS as usize {
        let m = Metrics::from_scored(&attack_all(&s.corpora[k], &s.calib, 0.0, 0));
        r1 += m.group("row:1").expect("row 1").top[0] / SEEDS as f64;
        r4 += m.group("row:4").expect("row 4").top[0] / SEEDS as f64;
    }
    outcome(r1 >= r4, format!("mean top-1 row 1 {r1:.4}, row 4 {r4:.4} over {SEEDS} corpora"))
}

fn criterion_5(setup: &CalibrationSetup, calib: &CalibrationReport) -> Outcome {
    let (dp, da) = calib.cursor.hand_to_cursor.distance_to(&default_cursor_offset());
    let mut worst: f64 = 0.0;
    let mut corners = 0;
    for head in setup.poses.iter().chain([&setup.holdout]) {
        let (fit, truth) = (calib.keyboard.placement(head), setup.true_keyboard.placement(head));
        for k in calib.keyboard.keys() {
            let t = &setup.true_keyboard.keys()[setup.true_keyboard.key_by_label(&k.label).expect("key")];
            for (a, b) in k.quad.corners().iter().zip(t.quad.corners()) {
                worst = worst.max(fit.apply_point(*a).distance(truth.apply_point(*b)));
                corners += 1;
            }
        }
    }
    let per_pose = corners / (setup.poses.len() + 1);
    let layout_ok = calib.semantics.same_locations(&FieldSemanticsMap::ground_truth(&setup.room.layout));
    outcome(
        da.to_degrees() < 0.1 && dp < 1e-3 && worst < 1e-3 && per_pose == 188 && layout_ok,
        format!(
            "cursor {:.2e} m / {:.2e} deg, worst of {per_pose} corners {:.2e} m, field map exact: {layout_ok}",
            dp,
            da.to_degrees(),
            worst
        ),
    )
}

fn criterion_6(calib: &CalibrationReport) -> Outcome {
    let cfg = ExperimentConfig::default();
    let c = simulate(&cfg, 606, &TypistProfile::cohort(4, 606), true).expect("simulate");
    let report = run_attack(&c.trace, calib, &ClickRule::default()).expect("attack");
    let scored = score(&report, &c.truth).expect("score");
    let mut parts = Vec::new();
    let mut pass = report.users.len() == 5;
    for u in 1..=4 {
        let mine: Vec<ScoredClick> = scored.iter().filter(|s| s.user_id == u).cloned().collect();
        let g = Metrics::from_scored(&mine).group("all").expect("all").clone();
        pass &= g.top[0] >= 0.95 && g.top[2] >= g.top[0];
        parts.push(format!("user {u} {:.4}", g.top[0]));
    }
    outcome(pass, format!("{} reports from one 5-user trace; {}", report.users.len(), parts.join(", ")))
}

fn criterion_7(calib: &CalibrationReport) -> Outcome {
    let cfg = ExperimentConfig::default();
    let c = simulate(&cfg, 11, &TypistProfile::cohort(2, 11), false).expect("simulate");
    let fields = ClickFields::from_semantics(&calib.semantics).expect("fields");
    let data = build_dataset(
        &[(c.trace, c.truth)],
        &fields,
        &KeyboardModel::default_layout(),
        &ClickRule::default(),
        FeatureMode::Bytes,
    )
    .expect("dataset");
    let split = DatasetSplit::stratified(&data.iter().map(|s| s.label).collect::<Vec<_>>(), 0);
    let train = TrainConfig::default();
    let centroid = Classifier::train(ModelKind::NearestCentroid, &data, &split, &train).expect("train");
    let mlp = Classifier::train(ModelKind::Mlp, &data, &split, &train).expect("train");
    let (ca, ma) = (top_k_accuracy(&centroid.classifier, &data, &split.test), top_k_accuracy(&mlp.classifier, &data, &split.test));
    let d = data[0].features.len();
    let idx: Vec<usize> = split.train.iter().take(64).copied().collect();
    let x = DMatrix::from_fn(idx.len(), d, |r, col| data[idx[r]].features[col]);
    let y: Vec<usize> = idx.iter().map(|&i| data[i].label).collect();
    let grad = gradient_check(&Network::new(d, &train.hidden, CLASS_COUNT, 1), &x, &y, 10, 2);
    outcome(
        ma[0] >= 10.0 / 47.0 && ma[0] >= ca[0] && grad < 1e-4,
        format!(
            "{} samples ({}/{}/{}): MLP top-1 {:.4}, centroid {:.4}, gradient check rel err {:.1e}",
            data.len(),
            split.train.len(),
            split.val.len(),
            split.test.len(),
            ma[0],
            ca[0],
            grad
        ),
    )
}

fn criterion_8(valid: &[Vec<u8>]) -> Outcome {
    let registry = default_registry(&QuantizedTransformCodec::default(), &Default::default());
    const N: u64 = 1_000_000;
    let (ok, bad, crashes) = (0..N)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let datagram: Vec<u8> = if i % 3 == 0 {
                let n = rng.random_range(0..1300);
                (0..n).map(|_| rng.random()).collect()
            } else {
                let mut d = valid[rng.random_range(0..valid.len())].clone();
                for _ in 0..rng.random_range(1..8) {
                    match rng.random_range(0..4) {
                        0 if !d.is_empty() => {
                            let j = rng.random_range(0..d.len());
                            d[j] = rng.random();
                        }
                        1 if !d.is_empty() => d.truncate(rng.random_range(0..d.len())),
                        2 => d.push(rng.random()),
                        _ if !d.is_empty() => {
                            let j = rng.random_range(0..d.len());
                            d[j] ^= 1 << rng.random_range(0..8);
                        }
                        _ => {}
                    }
                }
                d
            };
            let reg = if i % 2 == 0 { Some(&registry) } else { None };
            match catch_unwind(AssertUnwindSafe(|| parse_packet(&datagram, reg))) {
                Ok(Ok(_)) => (1u64, 0u64, 0u64),
                Ok(Err(WireError::Malformed(_))) => (0, 1, 0),
                _ => (0, 0, 1),
            }
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    outcome(crashes == 0 && ok + bad == N, format!("{N} datagrams: {ok} valid, {bad} malformed, {crashes} other"))
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut base = ExperimentConfig { prompts: 10, ..ExperimentConfig::default() };
    base.ml.train.epochs = 20;
    let mut diffs = Vec::new();
    for scenario in Scenario::ALL {
        let plan = ExperimentPlan::new(scenario, vec![1, 2, 3]);
        let cfg = ExperimentConfig { out_dir: tmp.path().join("first"), jobs: 4, ..base.clone() };
        let m = run_experiment(&plan, &cfg).expect("experiment");
        let again = rerun_manifest(&m, &tmp.path().join(format!("rerun-{}", scenario.as_str()))).expect("rerun");
        diffs.extend(again.into_iter().map(|f| format!("{}/{f}", scenario.as_str())));
    }
    outcome(diffs.is_empty(), format!("6 scenarios x 3 seeds rerun from manifests; differing files: {diffs:?}"))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome, Duration, Duration)> = Vec::new();
    let mut run = |n: u32, name: &'static str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let el = t.elapsed();
        let pass = o.pass && el <= budget;
        println!(
            "criterion {n} {}: {name}: {} [{:.1}s of {:.0}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            el.as_secs_f64(),
            budget.as_secs_f64()
        );
        results.push((n, name, Outcome { pass, detail: o.detail }, el, budget));
    };
    let mins = |m: u64| Duration::from_secs(60 * m);

    run(1, "oracle equivalence", Duration::from_secs(30), &mut criterion_1);

    let setup = CalibrationSetup::default();
    let mut calib = None;
    run(5, "calibration recovery", Duration::from_secs(60), &mut || {
        let c = run_calibration(&setup).expect("calibrate");
        let o = criterion_5(&setup, &c);
        calib = Some(c);
        o
    });
    let calib = calib.unwrap_or_else(|| {
        CalibrationReport::ground_truth(&setup.room, default_cursor_offset(), KeyboardModel::default_layout())
    });

    let cfg = ExperimentConfig::default();
    let mut shared = None;
    run(2, "default-fidelity regime", mins(10), &mut || {
        let corpora = vec![corpus(&cfg, 0)];
        let s = Shared { calib: calib.clone(), corpora };
        let o = criterion_2(&s);
        shared = Some(s);
        o
    });
    let mut shared = shared.expect("criterion 2 corpus");
    shared.corpora.extend((1..SEEDS).map(|k| corpus(&cfg, k)));
    let total: usize = shared.corpora.iter().map(|c| clicks(c)).sum();
    println!("   ({} corpora, {total} labeled clicks for criteria 3-4)", shared.corpora.len());
    run(3, "drop robustness", mins(20), &mut || criterion_3(&shared));
    run(4, "row effect", mins(10), &mut || criterion_4(&shared));
    run(6, "multi-victim stealth", mins(5), &mut || criterion_6(&calib));
    run(7, "ML fallback", mins(15), &mut || criterion_7(&calib));
    let valid: Vec<Vec<u8>> = shared.corpora[0][0].trace.records.iter().take(2000).map(|r| r.raw.clone()).collect();
    drop(shared);
    run(8, "parser robustness", mins(2), &mut || criterion_8(&valid));
    run(9, "determinism", mins(10), &mut criterion_9);

    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
