use keylab::attack::{evaluate, run_attack, ClickRule, GroundTruth, UserTruth};
use keylab::calibration::{run_calibration, CalibrationReport, CalibrationSetup, FieldSemanticsMap};
use keylab::room::{run_session, BackgroundSource, RoomConfig};
use keylab::victim::{
    default_cursor_offset, generate_prompt_battery, synthesize_session, KeyboardModel, MotionScript, TypistProfile,
    VictimRig,
};
use keylab::wire::QuantizedTransformCodec;

fn session(count: usize, seed: u64) -> MotionScript {
    let prompts = &generate_prompt_battery(seed)[..count];
    synthesize_session(prompts, &KeyboardModel::default_layout(), &TypistProfile::default(), &VictimRig::default(), seed)
        .unwrap()
}

fn truth(room: &RoomConfig, scripts: &[MotionScript]) -> GroundTruth {
    GroundTruth {
        tick_rate: room.tick_rate,
        device_rate: room.device_rate,
        users: room
            .users
            .iter()
            .zip(scripts)
            .map(|(&user_id, s)| UserTruth { user_id, labels: s.labels.clone() })
            .collect(),
    }
}

#[test]
fn lossless_ground_truth_is_exact() {
    let room = RoomConfig { codec: QuantizedTransformCodec::lossless(), ..RoomConfig::default() };
    let scripts = vec![session(12, 3)];
    let trace = run_session(&room, &scripts, &BackgroundSource::defaults()).unwrap();
    let calib = CalibrationReport::ground_truth(&room, default_cursor_offset(), KeyboardModel::default_layout());
    let report = run_attack(&trace, &calib, &ClickRule::default()).unwrap();
    let m = evaluate(&report, &truth(&room, &scripts)).unwrap();
    assert_eq!(m.undetected, 0);
    assert_eq!(m.top1(), 1.0);
    let typed: String = scripts[0].labels.iter().map(|l| if l.key == "space" { " ".into() } else { l.key.clone() }).collect();
    assert_eq!(report.users[0].text(), typed);
}

#[test]
fn calibrated_matches_ground_truth() {
    let setup = CalibrationSetup::default();
    let calib = run_calibration(&setup).unwrap();
    eprintln!(
        "cursor rounds {:?} disp {:?} rule rms {:.3e} holdout {:.3e} plane {:.3e}",
        calib.cursor.rounds, calib.cursor.final_displacement, calib.rule_fit.rms_residual, calib.holdout_error,
        calib.max_plane_residual
    );
    let exact = FieldSemanticsMap::ground_truth(&setup.room.layout);
    assert!(calib.semantics.same_locations(&exact));
    for c in &calib.semantics.channels {
        let want = exact.channels.iter().find(|e| e.dim == c.dim).unwrap().conversion;
        let rel = (c.conversion.scale / want.scale - 1.0).abs();
        assert!(rel < 1e-3 && (c.conversion.bias - want.bias).abs() < 1e-3, "{:?}: {:?}", c.dim, c.conversion);
    }
    let (dp, da) = calib.cursor.hand_to_cursor.distance_to(&default_cursor_offset());
    assert!(dp < 1e-3 && da.to_degrees() < 0.1, "{dp} {da}");
    assert!(calib.holdout_error < 1e-3);

    let room = RoomConfig::default();
    let scripts = vec![session(20, 9)];
    let trace = run_session(&room, &scripts, &BackgroundSource::defaults()).unwrap();
    let truth_report = CalibrationReport::ground_truth(&room, default_cursor_offset(), KeyboardModel::default_layout());
    let a = run_attack(&trace, &calib, &ClickRule::default()).unwrap();
    let b = run_attack(&trace, &truth_report, &ClickRule::default()).unwrap();
    let (pa, pb) = (&a.users[0].predicted, &b.users[0].predicted);
    assert_eq!(pa.len(), pb.len());
    let agree = pa.iter().zip(pb).filter(|(x, y)| x == y).count() as f64 / pa.len() as f64;
    let m = evaluate(&a, &truth(&room, &scripts)).unwrap();
    eprintln!("agree {agree} top1 {} clicks {}", m.top1(), pa.len());
    assert!(agree >= 0.999);
}

#[test]
fn field_map_survives_loss_and_jitter() {
    let mut setup = CalibrationSetup::default();
    setup.room.drop_rate = 0.1;
    setup.room.jitter_ms = 5.0;
    setup.room.seed = 3;
    let calib = run_calibration(&setup).unwrap();
    let exact = FieldSemanticsMap::ground_truth(&setup.room.layout);
    assert!(calib.semantics.same_locations(&exact));
    for c in &calib.semantics.channels {
        let want = exact.channels.iter().find(|e| e.dim == c.dim).unwrap().conversion;
        assert!((c.conversion.scale / want.scale - 1.0).abs() < 1e-3, "{:?}: {:?}", c.dim, c.conversion);
    }
}
