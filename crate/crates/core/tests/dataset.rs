use std::fs;
use std::path::PathBuf;

use fsd_core::dataset::*;
use fsd_core::render::{CameraConfig, Weather};
use fsd_core::sim::{generate_track, SimConfig, TrackSpec, TrackStyle};

fn straight(seed: u64) -> TrackSpec {
    generate_track(seed, TrackStyle::Straight, 600.0, [3.5, 5.0]).unwrap()
}

fn curvy(seed: u64) -> TrackSpec {
    generate_track(seed, TrackStyle::Curvy, 600.0, [3.5, 5.0]).unwrap()
}

fn record(track: &TrackSpec, driver: Driver, minutes: f64, dir: &std::path::Path) -> Manifest {
    record_session(track, driver, minutes, LightingSchedule::default(), 10.0, dir, &RecordOptions::default()).unwrap()
}

#[test]
fn one_minute_session_has_600_samples_near_centre() {
    let tmp = tempfile::tempdir().unwrap();
    let m = record(&straight(1), Driver::ExpertNormative, 1.0, tmp.path());
    assert!(m.info.complete);
    assert_eq!(m.len(), 600);
    for (i, s) in m.samples.iter().enumerate() {
        assert_eq!(s.seq, i as u64);
        assert!((s.t - i as f64 / 10.0).abs() < 1e-9);
    }
    let mean_dev: f64 = m.samples.iter().map(|s| (s.y_label as f64 - 0.5).abs()).sum::<f64>() / 600.0;
    assert!(mean_dev < 0.05, "{mean_dev}");
    // Every frame exists and parses at the declared size.
    for s in m.samples.iter().step_by(97) {
        let img = m.read_image(s).unwrap();
        assert_eq!((img.w, img.h), (320, 180));
    }
}

#[test]
fn write_read_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let track = straight(2);
    let mut w = SessionWriter::create(
        tmp.path(),
        &track,
        SessionInfo {
            schema_version: SCHEMA_VERSION,
            complete: false,
            samples: 0,
            hz: 10.0,
            v_max: 6.94,
            track_id: Some(track.id.clone()),
            driver: Some(Driver::Teleop),
            scene_seed: 0,
            note: None,
        },
    )
    .unwrap();
    let img = fsd_core::render::Image::from_raw(320, 180, (0..320 * 180 * 3).map(|i| (i * 7 % 256) as u8).collect()).unwrap();
    let meta = SampleMeta {
        seq: 0,
        image: String::new(),
        y_label: 0.123_456_78,
        speed: 2.718_281_9,
        throttle: 0.3,
        brake: 1e-7,
        prev_y: 0.999_999_9,
        t_day: 17.25,
        shift_d: -1.234_567_9,
        tags: Vec::new(),
        track_id: track.id.clone(),
        track_style: track.style,
        driver: Driver::Teleop,
        t: 0.1,
        pose: Pose {
            x: 1.0 / 3.0,
            y: -2.5,
            heading: 0.7,
        },
        source: None,
    };
    let written = w.append(&img, meta.clone()).unwrap();
    let m = w.finish(true, None).unwrap();
    assert_eq!(m.samples, vec![written.clone()]);
    assert_eq!(m.samples[0].y_label.to_bits(), meta.y_label.to_bits());
    assert_eq!(m.read_image(&m.samples[0]).unwrap(), img);
    assert_eq!(m.track().unwrap(), track);
}

#[test]
fn truncated_manifest_keeps_earlier_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let m = record(&straight(3), Driver::ExpertNormative, 0.1, tmp.path());
    let path = tmp.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let cut = text.len() - 40;
    fs::write(&path, &text[..cut]).unwrap();
    let stats = dataset_stats(&path).unwrap();
    assert_eq!(stats.samples, m.len() - 1);
    assert_eq!(stats.corrupt_rows.len(), 1);
    assert_eq!(stats.corrupt_rows[0].0, m.len());
    let err = Manifest::load(tmp.path()).unwrap_err().to_string();
    assert!(err.contains(&format!("line {}", m.len())), "{err}");
}

#[test]
fn cyclelight_sweep_spans_the_day() {
    let tmp = tempfile::tempdir().unwrap();
    let schedule = LightingSchedule::Sweep {
        from: 0.0,
        to: 24.0,
        weather: Weather::CLEAR,
    };
    let m = record_session(&straight(4), Driver::ExpertNormative, 0.5, schedule, 10.0, tmp.path(), &RecordOptions::default()).unwrap();
    let lo = m.samples.iter().map(|s| s.t_day).fold(f32::MAX, f32::min);
    let hi = m.samples.iter().map(|s| s.t_day).fold(f32::MIN, f32::max);
    assert!(hi - lo >= 20.0, "{lo}..{hi}");
}

#[test]
fn swerved_labels_are_bimodal() {
    let tmp = tempfile::tempdir().unwrap();
    let m = record(&straight(5), Driver::ExpertSwerved, 1.0, tmp.path());
    assert!(m.info.complete, "{:?}", m.info.note);
    let left = m.samples.iter().filter(|s| s.y_label > 0.55).count();
    let right = m.samples.iter().filter(|s| s.y_label < 0.45).count();
    let centre = m.samples.iter().filter(|s| (s.y_label - 0.5).abs() < 0.02).count();
    assert!(left > 100 && right > 100, "left {left} right {right}");
    assert!(centre < left.min(right), "centre {centre}");
}

#[test]
fn expert_leaving_the_track_flags_session_incomplete() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = RecordOptions {
        sim: SimConfig {
            actuation_delay: 1.0,
            v_max: 12.0,
            accel_limit: 6.0,
            ..SimConfig::default()
        },
        ..RecordOptions::default()
    };
    let m = record_session(&curvy(6), Driver::ExpertNormative, 1.0, LightingSchedule::default(), 10.0, tmp.path(), &opts).unwrap();
    assert!(!m.info.complete);
    assert!(m.len() < 600);
    let reread = Manifest::load(tmp.path()).unwrap();
    assert_eq!(reread.len(), m.len());
}

#[test]
fn bad_rate_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let r = record_session(&straight(1), Driver::ExpertNormative, 1.0, LightingSchedule::default(), 31.0, tmp.path(), &RecordOptions::default());
    assert!(r.is_err());
}

fn sources(root: &std::path::Path) -> Vec<PathBuf> {
    let mut dirs = Vec::new();
    for (i, (track, driver)) in [
        (straight(10), Driver::ExpertNormative),
        (curvy(11), Driver::ExpertNormative),
        (straight(12), Driver::ExpertSwerved),
        (curvy(13), Driver::ExpertSwerved),
    ]
    .into_iter()
    .enumerate()
    {
        let dir = root.join(format!("s{i}"));
        let minutes = if driver == Driver::ExpertSwerved { 0.2 } else { 0.6 };
        let m = record(&track, driver, minutes, &dir);
        assert!(m.info.complete, "{:?}", m.info.note);
        dirs.push(dir);
    }
    dirs
}

#[test]
fn mix_composition_determinism_and_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = sources(tmp.path());
    let cfg = MixConfig {
        samples: 400,
        plan_seed: 9,
        ..MixConfig::default()
    };
    let cam = CameraConfig::default();
    let a = build_training_mix(&dirs, &cfg, &cam, tmp.path().join("mix_a")).unwrap();
    let b = build_training_mix(&dirs, &cfg, &cam, tmp.path().join("mix_b")).unwrap();
    assert_eq!(a.len(), 400);
    let read = |p: &str| fs::read(tmp.path().join(p).join(MANIFEST_FILE)).unwrap();
    assert_eq!(read("mix_a"), read("mix_b"));
    assert_eq!(fs::read(a.image_path(&a.samples[17])).unwrap(), fs::read(b.image_path(&b.samples[17])).unwrap());

    let straight_n = a.samples.iter().filter(|s| s.track_style == TrackStyle::Straight).count();
    let swerved_n = a.samples.iter().filter(|s| s.driver == Driver::ExpertSwerved).count();
    assert!((straight_n as f64 / 400.0 - 0.539).abs() < 0.005);
    assert!((swerved_n as f64 / 400.0 - 0.075).abs() < 0.005);

    let stats = dataset_stats(tmp.path().join("mix_a")).unwrap();
    assert_eq!(stats.samples, 400);
    assert_eq!(stats.style_counts["straight"], straight_n);
    assert_eq!(stats.driver_counts.get("expert_swerved").copied().unwrap_or(0), swerved_n);
    let shifted = a.samples.iter().filter(|s| s.tags.iter().any(|t| t.name == "shifted")).count();
    assert_eq!(stats.technique_counts.get("shifted").copied().unwrap_or(0), shifted);
    assert!((stats.label_histogram.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let no_shift = MixConfig {
        shifted: false,
        swerved_fraction: 0.0,
        ..cfg.clone()
    };
    let c = build_training_mix(&dirs, &no_shift, &cam, tmp.path().join("mix_c")).unwrap();
    assert!(c.samples.iter().all(|s| s.shift_d == 0.0 && s.driver != Driver::ExpertSwerved));

    let greedy = MixConfig {
        samples: 5000,
        ..cfg
    };
    let err = build_training_mix(&dirs, &greedy, &cam, tmp.path().join("mix_d")).unwrap_err();
    assert!(err.to_string().contains("need"), "{err}");
}

#[test]
fn stats_of_trivial_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let s = dataset_stats(&empty).unwrap();
    assert_eq!(s.samples, 0);
    assert!(s.label_histogram.iter().all(|&v| v == 0.0));
    assert!(s.technique_counts.is_empty());

    let m = record(&straight(7), Driver::ExpertNormative, 0.1, &tmp.path().join("one"));
    let mut first = m.samples[0].clone();
    first.y_label = 0.5;
    let one = tmp.path().join("one.jsonl");
    fs::write(&one, serde_json::to_string(&first).unwrap() + "\n").unwrap();
    let s = dataset_stats(&one).unwrap();
    assert_eq!(s.label_histogram[5], 1.0);
}
