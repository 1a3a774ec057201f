use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fsd_core::dataset::{
    build_training_mix, dataset_stats, record_corpus, record_session, Driver, Manifest, MixConfig, RecordOptions, SESSION_FILE,
};
use fsd_core::eval::{
    closed_loop, default_yaw_grid, delay_robustness, fov_sweep, live_state_input, recovery_test, run_ablation, start_state,
    AblationConfig, AblationSpec, DataKey,
};
use fsd_core::nn::{save_weights, train, ModelSpec, TrainConfig};
use fsd_core::pipeline::{bench, bench_pair, infer_frame, load_train_set, overlay_steering, Policy, Variant};
use fsd_core::render::{Image, Scene};
use fsd_core::sim::{generate_circuit, generate_track, speed_command, step, straight_line, throttle_policy, TrackSpec, TrackStyle};
use fsd_core::wire::{encode, SteeringFrame};
use serde::Serialize;
use serde_json::json;

use crate::config::{resolve, RunConfig};
use crate::{ArchArgs, BenchVariant, Cli, CliError, Command, EvalCommand, ModelTrack, Style, TrackCommand};

type Result<T> = std::result::Result<T, CliError>;

/// Prints a report together with the config that produced it.
fn emit(cfg: &RunConfig, report: impl Serialize) -> Result<()> {
    let out = json!({ "config": cfg, "report": report });
    let text = serde_json::to_string_pretty(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load_track(path: &Path) -> Result<TrackSpec> {
    Ok(TrackSpec::load(path)?)
}

fn ladder_spec(name: &str) -> Result<ModelSpec> {
    AblationSpec::ladder()
        .into_iter()
        .find(|v| v.name == name)
        .map(|v| v.model_spec())
        .ok_or_else(|| CliError::Usage(format!("unknown architecture {name:?}")))
}

/// Training report written next to the weights.
fn sidecar(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn model_spec(model: &Path, arch: &ArchArgs) -> Result<ModelSpec> {
    if let Some(name) = &arch.arch {
        return ladder_spec(name);
    }
    let side = sidecar(model);
    if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| data_err(&side, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| data_err(&side, e))?;
        return serde_json::from_value(v["model"].clone()).map_err(|e| data_err(&side, e));
    }
    ladder_spec("shifted_driving")
}

fn load_policy(model: &Path, arch: &ArchArgs) -> Result<Policy> {
    Ok(Policy::load(model, model_spec(model, arch)?)?)
}

fn load_target(t: &ModelTrack) -> Result<(Policy, TrackSpec)> {
    Ok((load_policy(&t.model, &t.arch)?, load_track(&t.track)?))
}

/// Session directories under each path: the path itself when it holds a
/// session, otherwise its immediate subdirectories that do.
fn expand_sessions(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(SESSION_FILE).exists() {
            out.push(p.clone());
            continue;
        }
        let entries = fs::read_dir(p).map_err(|e| data_err(p, e))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join(SESSION_FILE).exists())
            .collect();
        if found.is_empty() {
            return Err(data_err(p, "no recorded sessions found"));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn record_options(cfg: &RunConfig) -> RecordOptions {
    RecordOptions {
        sim: cfg.sim.clone(),
        cam: cfg.cam.clone(),
        expert: cfg.expert.clone(),
        scene_seed: cfg.seed,
        start_station: 0.0,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.command {
        Command::Track {
            command: TrackCommand::Gen {
                style,
                length,
                width_min,
                width_max,
                out,
            },
        } => {
            let range = [width_min, width_max];
            let track = match style {
                Style::Straight => generate_track(cfg.seed, TrackStyle::Straight, length, range)?,
                Style::Curvy => generate_track(cfg.seed, TrackStyle::Curvy, length, range)?,
                Style::Circuit => generate_circuit(cfg.seed, length, range)?,
                Style::Line => straight_line(length, width_max)?,
            };
            track.save(&out)?;
            emit(
                &cfg,
                json!({
                    "out": out,
                    "id": track.id,
                    "length_m": track.length(),
                    "closed": track.closed,
                    "gates": track.gates.len(),
                }),
            )
        }
        Command::Record(a) => {
            let opts = record_options(&cfg);
            match &a.track {
                Some(path) => {
                    let track = load_track(path)?;
                    let driver: Driver = a.driver.parse()?;
                    let m = record_session(&track, driver, a.minutes, cfg.corpus.schedule, a.hz, &a.out, &opts)?;
                    emit(&cfg, json!({ "out": a.out, "session": m.info }))
                }
                None => {
                    let dirs = record_corpus(&cfg.corpus, &opts, &a.out)?;
                    emit(&cfg, json!({ "out": a.out, "sessions": dirs }))
                }
            }
        }
        Command::Mix(a) => {
            let sessions = expand_sessions(&a.sessions)?;
            let mut mix = MixConfig {
                plan_seed: cfg.seed,
                ..cfg.mix.clone()
            };
            if let Some(n) = a.samples {
                mix.samples = n;
            }
            if a.no_shifted {
                mix.shifted = false;
            }
            if a.no_swerved {
                mix.swerved_fraction = 0.0;
            }
            build_training_mix(&sessions, &mix, &cfg.cam, &a.out)?;
            emit(&cfg, json!({ "out": a.out, "mix": mix, "stats": dataset_stats(&a.out)? }))
        }
        Command::Train(a) => {
            let spec = ladder_spec(a.arch.arch.as_deref().unwrap_or("shifted_driving"))?;
            let set = load_train_set(&a.data)?;
            let tc = TrainConfig {
                seed: cfg.seed,
                epochs: a.epochs.unwrap_or(cfg.train.epochs),
                checkpoint_dir: a.checkpoints.clone(),
                ..cfg.train.clone()
            };
            if let Some(dir) = &tc.checkpoint_dir {
                fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
            }
            let (weights, report) = train(&spec, &set, &tc)?;
            save_weights(&weights, &a.out)?;
            let side = sidecar(&a.out);
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
            fs::write(&side, text).map_err(|e| data_err(&side, e))?;
            emit(&cfg, json!({ "out": a.out, "training": report }))
        }
        Command::Eval { command } => eval(&cfg, command, cli.jobs),
        Command::Bench(a) => {
            let policy = load_policy(&a.model, &a.arch)?;
            let frames = sample_frames(&cfg, 40)?;
            let mut reports = BTreeMap::new();
            let mut put = |r: fsd_core::pipeline::BenchReport| {
                let name = if r.variant == Variant::Naive { "naive" } else { "optimized" };
                reports.insert(name, json!({ "fps": r.fps(), "timing": r }));
            };
            match a.variant {
                BenchVariant::Naive => put(bench(&policy, &frames, Variant::Naive, a.n)?),
                BenchVariant::Optimized => put(bench(&policy, &frames, Variant::Optimized, a.n)?),
                BenchVariant::Both => {
                    let (naive, opt) = bench_pair(&policy, &frames, a.n)?;
                    put(naive);
                    put(opt);
                }
            }
            emit(&cfg, reports)
        }
        Command::Overlay(a) => {
            let policy = load_policy(&a.model, &a.arch)?;
            let m = Manifest::load(&a.session)?;
            fs::create_dir_all(&a.out).map_err(|e| data_err(&a.out, e))?;
            let n = a.limit.unwrap_or(usize::MAX).min(m.samples.len());
            let mut abs_err = 0.0;
            for (i, meta) in m.samples.iter().take(n).enumerate() {
                let frame = Image::read_ppm(m.image_path(meta))?;
                let y = infer_frame(&policy, &frame, Some(meta.state_input(m.info.v_max)))?;
                abs_err += (y - meta.y_label as f64).abs();
                overlay_steering(&frame, y).write_ppm(a.out.join(format!("frame_{i:05}.ppm")))?;
            }
            emit(
                &cfg,
                json!({
                    "out": a.out,
                    "frames": n,
                    "mean_abs_error": if n > 0 { abs_err / n as f64 } else { 0.0 },
                }),
            )
        }
        Command::Serve(a) => {
            let track = load_track(&a.track)?;
            let scfg = fsd_teleop::SessionConfig {
                sim: cfg.sim.clone(),
                cam: cfg.cam.clone(),
                schedule: cfg.corpus.schedule,
                scene_seed: cfg.seed,
                record_dir: a.record_dir.clone(),
                ..fsd_teleop::SessionConfig::default()
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
            let manifest = rt.block_on(fsd_teleop::serve(a.port, &track, scfg))?;
            emit(&cfg, json!({ "recording": manifest.map(|m| m.info) }))
        }
        Command::Stream(a) => stream(&cfg, &a),
    }
}

/// Frames along a generated curvy track, for timing.
fn sample_frames(cfg: &RunConfig, n: usize) -> Result<Vec<Image>> {
    let track = generate_track(cfg.seed, TrackStyle::Curvy, 600.0, [3.0, 5.0])?;
    let scene = Scene::new(&track, cfg.seed);
    let light = cfg.eval_config().light();
    Ok((0..n)
        .map(|i| scene.render(&start_state(&scene, 10.0 * i as f64, 0.0), &cfg.cam, &light))
        .collect())
}

fn done(dir: &Path) -> bool {
    dir.join(".done").exists()
}

fn mark_done(dir: &Path) -> Result<()> {
    let p = dir.join(".done");
    fs::write(&p, b"").map_err(|e| data_err(&p, e))
}

fn eval(cfg: &RunConfig, command: EvalCommand, jobs: usize) -> Result<()> {
    let ec = cfg.eval_config();
    match command {
        EvalCommand::Loop { target, cap, csv } => {
            let (policy, track) = load_target(&target)?;
            let r = closed_loop(&policy, &track, &ec, cap)?;
            if let Some(path) = &csv {
                r.write_csv(path)?;
            }
            emit(cfg, r)
        }
        EvalCommand::Fov { target, fovs, station } => {
            let (policy, track) = load_target(&target)?;
            emit(cfg, fov_sweep(&policy, &track, &ec, station, &fovs, &default_yaw_grid())?)
        }
        EvalCommand::Recovery { target, offsets } => {
            let (policy, track) = load_target(&target)?;
            emit(cfg, recovery_test(&policy, &track, &ec, &offsets)?)
        }
        EvalCommand::Delay { target, taus, cap } => {
            let (policy, track) = load_target(&target)?;
            emit(cfg, delay_robustness(&policy, &track, &ec, &taus, cap)?)
        }
        EvalCommand::Ablation { work } => {
            let corpus = work.join("corpus");
            if !done(&corpus) {
                record_corpus(&cfg.corpus, &record_options(cfg), &corpus)?;
                mark_done(&corpus)?;
            }
            let sessions = expand_sessions(std::slice::from_ref(&corpus))?;
            let ladder = AblationSpec::ladder();
            let mut data = BTreeMap::new();
            for key in ladder.iter().map(|v| v.data_key()) {
                if data.contains_key(&key) {
                    continue;
                }
                let DataKey { swerved, shifted } = key;
                let dir = work.join(format!("mix-swerved{}-shifted{}", swerved as u8, shifted as u8));
                if !done(&dir) {
                    let mix = MixConfig {
                        samples: cfg.ablation.samples,
                        plan_seed: cfg.seed,
                        swerved_fraction: if swerved { cfg.mix.swerved_fraction } else { 0.0 },
                        shifted,
                        ..cfg.mix.clone()
                    };
                    build_training_mix(&sessions, &mix, &cfg.cam, &dir)?;
                    mark_done(&dir)?;
                }
                data.insert(key, load_train_set(&dir)?);
            }
            let tracks = cfg
                .ablation
                .circuits
                .iter()
                .map(|&s| generate_circuit(s, cfg.ablation.circuit_length, cfg.corpus.width_range))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let ac = AblationConfig {
                seeds: cfg.ablation.seeds.clone(),
                cap_s: cfg.ablation.cap_s,
                train: cfg.train.clone(),
                eval: ec,
                jobs,
                model_dir: Some(work.join("models")),
            };
            let report = run_ablation(&ladder, &data, &tracks, &ac)?;
            let path = work.join("ablation.json");
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
            fs::write(&path, text).map_err(|e| data_err(&path, e))?;
            emit(cfg, report)
        }
    }
}

#[derive(Serialize)]
struct StreamReport {
    frames: u64,
    duration_s: f64,
    off_track: bool,
}

/// Closed loop that emits one steering frame per inference.
fn stream(cfg: &RunConfig, a: &crate::StreamArgs) -> Result<()> {
    let (policy, track) = load_target(&a.target)?;
    let ec = cfg.eval_config();
    let to_stdout = a.out.as_os_str() == "-";
    let mut sink: Box<dyn Write> = if to_stdout {
        Box::new(std::io::stdout().lock())
    } else {
        Box::new(fs::OpenOptions::new().write(true).create(true).truncate(true).open(&a.out).map_err(|e| data_err(&a.out, e))?)
    };
    let scene = Scene::new(&track, ec.scene_seed);
    let light = ec.light();
    let mut state = start_state(&scene, 0.0, 0.0);
    let ticks = (a.cap / ec.sim.dt).floor().max(0.0) as u64;
    let period = Duration::from_secs_f64(ec.sim.dt);
    let t0 = Instant::now();
    let (mut hint, mut off_track, mut frames) = (0, false, 0u64);
    for k in 0..ticks {
        match scene.geometry().frame_near(state.position, hint).frame() {
            Some(f) if f.lateral.abs() <= f.width / 2.0 => hint = f.segment,
            _ => {
                off_track = true;
                break;
            }
        }
        let frame = scene.render(&state, &ec.cam, &light);
        let y = infer_frame(&policy, &frame, Some(live_state_input(&state, &ec.sim)))?;
        let bytes = encode(&SteeringFrame::new(k as u8, y, throttle_policy(y, &ec.sim)));
        sink.write_all(&bytes).and_then(|_| sink.flush()).map_err(|e| data_err(&a.out, e))?;
        frames += 1;
        state = step(&state, speed_command(y, state.speed, &ec.sim), &ec.sim);
        if a.realtime {
            let due = t0 + period * (k as u32 + 1);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
    }
    drop(sink);
    let report = StreamReport {
        frames,
        duration_s: frames as f64 * ec.sim.dt,
        off_track,
    };
    if to_stdout {
        // Stdout carries the binary frames.
        log::info!("{}", serde_json::to_string(&json!({ "config": cfg, "report": report })).unwrap_or_default());
        Ok(())
    } else {
        emit(cfg, report)
    }
}
