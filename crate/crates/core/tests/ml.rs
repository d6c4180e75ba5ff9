use keylab::attack::{ClickRule, GroundTruth, UserTruth};
use keylab::calibration::FieldSemanticsMap;
use keylab::ml::{build_dataset, top_k_accuracy, ByteSample, Classifier, ClickFields, DatasetSplit, FeatureMode, ModelKind, TrainConfig};
use keylab::room::{run_session, BackgroundSource, RoomConfig};
use keylab::trace::TraceFile;
use keylab::victim::{generate_prompt_battery, synthesize_session, KeyboardModel, PromptKind, TypistProfile, VictimRig};

fn corpus(users: &[u32], seed: u64) -> (TraceFile, GroundTruth) {
    let room = RoomConfig { users: users.to_vec(), seed, ..RoomConfig::default() };
    let kb = KeyboardModel::default_layout();
    let profiles = TypistProfile::cohort(users.len(), seed);
    let scripts: Vec<_> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            synthesize_session(&generate_prompt_battery(seed + i as u64), &kb, p, &VictimRig::default(), seed * 31 + i as u64)
                .unwrap()
        })
        .collect();
    let trace = run_session(&room, &scripts, &BackgroundSource::defaults()).unwrap();
    let truth = GroundTruth {
        tick_rate: room.tick_rate,
        device_rate: room.device_rate,
        users: users.iter().zip(&scripts).map(|(&user_id, s)| UserTruth { user_id, labels: s.labels.clone() }).collect(),
    };
    (trace, truth)
}

fn dataset(users: &[u32], seed: u64, mode: FeatureMode) -> (Vec<ByteSample>, usize) {
    let run = corpus(users, seed);
    let fields = ClickFields::from_semantics(&FieldSemanticsMap::ground_truth(&RoomConfig::default().layout)).unwrap();
    let data = build_dataset(std::slice::from_ref(&run), &fields, &KeyboardModel::default_layout(), &ClickRule::default(), mode)
        .unwrap();
    (data, run.1.click_count())
}

#[test]
fn one_sample_per_typed_character() {
    let (data, clicks) = dataset(&[1], 4, FeatureMode::Bytes);
    assert_eq!(data.len(), clicks);
    let digits: Vec<usize> = "0123456789".chars().map(|c| KeyboardModel::default_layout().key_for_char(c).unwrap()).collect();
    assert!(data.iter().filter(|s| s.prompt_kind == PromptKind::Numbers).all(|s| digits.contains(&s.label)));
}

#[test]
fn two_victims_give_per_user_samples() {
    let (data, clicks) = dataset(&[1, 2], 5, FeatureMode::Bytes);
    assert_eq!(data.len(), clicks);
    assert!(data.iter().any(|s| s.user_id == 1) && data.iter().any(|s| s.user_id == 2));
}

#[test]
fn mlp_beats_chance_and_centroid() {
    let (data, _) = dataset(&[1, 2], 11, FeatureMode::Bytes);
    let split = DatasetSplit::stratified(&data.iter().map(|s| s.label).collect::<Vec<_>>(), 0);
    let cfg = TrainConfig::default();
    let centroid = Classifier::train(ModelKind::NearestCentroid, &data, &split, &cfg).unwrap();
    let mlp = Classifier::train(ModelKind::Mlp, &data, &split, &cfg).unwrap();
    let c = top_k_accuracy(&centroid.classifier, &data, &split.test);
    let m = top_k_accuracy(&mlp.classifier, &data, &split.test);
    assert!(m[0] >= 10.0 / 47.0 && m[0] >= c[0], "mlp {m:?} centroid {c:?}");
    assert!(m[0] <= m[1] && m[1] <= m[2]);
    assert!(mlp.curve.windows(2).all(|w| w[1].train_loss <= w[0].train_loss + 1e-3));
}

#[test]
fn more_training_data_does_not_hurt() {
    let (data, _) = dataset(&[1, 2], 12, FeatureMode::Bytes);
    let split = DatasetSplit::stratified(&data.iter().map(|s| s.label).collect::<Vec<_>>(), 1);
    let acc: Vec<f64> = [0.2, 0.4, 0.6, 0.8]
        .iter()
        .map(|&f| {
            let sub = split.subsample_train(f, 2);
            let out = Classifier::train(ModelKind::Mlp, &data, &sub, &TrainConfig::default()).unwrap();
            top_k_accuracy(&out.classifier, &data, &sub.test)[0]
        })
        .collect();
    assert!(acc.windows(2).all(|w| w[1] >= w[0] - 0.02), "{acc:?}");
}

#[test]
fn centroid_ignores_byte_order() {
    let (data, _) = dataset(&[1], 13, FeatureMode::Bytes);
    let split = DatasetSplit::stratified(&data.iter().map(|s| s.label).collect::<Vec<_>>(), 3);
    let d = data[0].features.len();
    let perm: Vec<usize> = (0..d).map(|i| (i * 7 + 3) % d).collect();
    let permuted: Vec<ByteSample> = data
        .iter()
        .map(|s| ByteSample { features: perm.iter().map(|&j| s.features[j]).collect(), ..s.clone() })
        .collect();
    let cfg = TrainConfig::default();
    let a = Classifier::train(ModelKind::NearestCentroid, &data, &split, &cfg).unwrap();
    let b = Classifier::train(ModelKind::NearestCentroid, &permuted, &split, &cfg).unwrap();
    assert_eq!(top_k_accuracy(&a.classifier, &data, &split.test), top_k_accuracy(&b.classifier, &permuted, &split.test));
}
