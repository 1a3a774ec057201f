//! Closed-loop evaluation of a trained policy and the experiments built on
//! it: the cumulative ablation ladder, camera field-of-view mismatch,
//! recovery from lateral offsets and actuation-delay robustness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::nn::{load_weights, save_weights, train, Activation, Head, ModelSpec, TrainConfig, TrainSet, Weights};
use crate::pipeline::{infer_frame, Policy};
use crate::render::{cyclelight, CameraConfig, LightingState, Scene, Weather};
use crate::sim::{speed_command, step, CarState, SimConfig, TrackSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub sim: SimConfig,
    pub cam: CameraConfig,
    pub t_day: f64,
    pub weather: Weather,
    pub scene_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            cam: CameraConfig::default(),
            t_day: 12.0,
            weather: Weather::CLEAR,
            scene_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn light(&self) -> LightingState {
        cyclelight(self.t_day, self.weather)
    }
}

/// One logged tick: time, station, lateral offset, last steering command
/// and speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajRow {
    pub t: f64,
    pub s: f64,
    pub d: f64,
    pub y: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub duration_s: f64,
    pub distance_m: f64,
    pub off_track: bool,
    pub cap_s: f64,
    #[serde(skip)]
    pub trajectory: Vec<TrajRow>,
}

impl EvalResult {
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("t,s,d,y,v\n");
        for r in &self.trajectory {
            let _ = writeln!(out, "{},{},{},{},{}", r.t, r.s, r.d, r.y, r.v);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.trajectory_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Car-state input visible to the policy at inference time.
pub fn live_state_input(state: &CarState, sim: &SimConfig) -> [f32; 4] {
    [
        (state.speed / sim.v_max) as f32,
        state.prev_steering_norm as f32,
        state.throttle as f32,
        state.brake as f32,
    ]
}

enum Stop {
    Continue,
    Halt,
}

/// Drives from `state` until `cap_s` elapses, the car leaves the track or
/// `watch` halts the run. States at times before the cap are checked for
/// leaving the track; the state reached exactly at the cap is logged but
/// counts as survived.
fn drive(
    policy: &Policy,
    scene: &Scene,
    mut state: CarState,
    cfg: &EvalConfig,
    cap_s: f64,
    mut watch: impl FnMut(&TrajRow, f64) -> Stop,
) -> Result<EvalResult> {
    if !(cap_s >= 0.0 && cap_s.is_finite()) {
        return Err(Error::invalid(format!("cap must be non-negative, got {cap_s}")));
    }
    cfg.sim.validate()?;
    cfg.cam.validate()?;
    let light = cfg.light();
    let geo = scene.geometry();
    let ticks = (cap_s / cfg.sim.dt + 1e-9).floor() as usize;
    let mut trajectory = Vec::with_capacity(ticks + 1);
    let mut distance = 0.0;
    let mut hint = 0;
    let mut off_track = false;
    let mut duration = cap_s;
    for k in 0..=ticks {
        let t = k as f64 * cfg.sim.dt;
        let (s, d, off) = match geo.frame_near(state.position, hint).frame() {
            Some(f) => {
                hint = f.segment;
                (f.station, f.lateral, f.lateral.abs() > f.width / 2.0)
            }
            None => (f64::NAN, f64::INFINITY, true),
        };
        let row = TrajRow {
            t,
            s,
            d,
            y: state.steering_norm,
            v: state.speed,
        };
        trajectory.push(row);
        if k == ticks {
            break;
        }
        if off {
            off_track = true;
            duration = t;
            break;
        }
        if let Stop::Halt = watch(&row, distance) {
            duration = t;
            break;
        }
        let frame = scene.render(&state, &cfg.cam, &light);
        let y = infer_frame(policy, &frame, Some(live_state_input(&state, &cfg.sim)))?;
        let next = step(&state, speed_command(y, state.speed, &cfg.sim), &cfg.sim);
        distance += 0.5 * (state.speed + next.speed) * cfg.sim.dt;
        state = next;
    }
    Ok(EvalResult {
        duration_s: duration,
        distance_m: distance,
        off_track,
        cap_s,
        trajectory,
    })
}

/// Centered, aligned and at rest at station `s`, shifted `offset` meters to
/// the left.
pub fn start_state(scene: &Scene, s: f64, offset: f64) -> CarState {
    let mut state = crate::dataset::start_state(scene.geometry(), s);
    state.position = state.position + state.left_normal() * offset;
    state
}

/// Time until off-track from station 0, capped at `cap_s`.
pub fn closed_loop(policy: &Policy, track: &TrackSpec, cfg: &EvalConfig, cap_s: f64) -> Result<EvalResult> {
    let scene = Scene::new(track, cfg.scene_seed);
    drive(policy, &scene, start_state(&scene, 0.0, 0.0), cfg, cap_s, |_, _| Stop::Continue)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayPoint {
    pub tau_s: f64,
    pub result: EvalResult,
}

/// Closed loop under each actuation delay.
pub fn delay_robustness(
    policy: &Policy,
    track: &TrackSpec,
    cfg: &EvalConfig,
    taus: &[f64],
    cap_s: f64,
) -> Result<Vec<DelayPoint>> {
    taus.iter()
        .map(|&tau_s| {
            let mut c = cfg.clone();
            c.sim.actuation_delay = tau_s;
            Ok(DelayPoint {
                tau_s,
                result: closed_loop(policy, track, &c, cap_s)?,
            })
        })
        .collect()
}

pub const RECOVERY_TOLERANCE: f64 = 0.3;
pub const RECOVERY_DISTANCE: f64 = 30.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryCase {
    pub offset_m: f64,
    pub success: bool,
    /// Distance travelled when `|d|` first dropped below the tolerance.
    pub converged_at_m: Option<f64>,
    pub off_track: bool,
    pub final_d: f64,
}

/// Starts at each lateral offset and checks that the car returns to within
/// [`RECOVERY_TOLERANCE`] of the centerline inside [`RECOVERY_DISTANCE`].
pub fn recovery_test(policy: &Policy, track: &TrackSpec, cfg: &EvalConfig, offsets: &[f64]) -> Result<Vec<RecoveryCase>> {
    let scene = Scene::new(track, cfg.scene_seed);
    let mut out = Vec::with_capacity(offsets.len());
    for &offset in offsets {
        let mut converged = None;
        let mut last_d = offset;
        let r = drive(policy, &scene, start_state(&scene, 0.0, offset), cfg, 120.0, |row, dist| {
            last_d = row.d;
            if row.d.abs() < RECOVERY_TOLERANCE {
                converged = Some(dist);
                Stop::Halt
            } else if dist > RECOVERY_DISTANCE {
                Stop::Halt
            } else {
                Stop::Continue
            }
        })?;
        if r.off_track {
            last_d = r.trajectory.last().map_or(last_d, |row| row.d);
        }
        out.push(RecoveryCase {
            offset_m: offset,
            success: converged.is_some() && !r.off_track,
            converged_at_m: converged,
            off_track: r.off_track,
            final_d: last_d,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FovCurve {
    pub fov_deg: f64,
    /// `(yaw_deg, y)` with strictly increasing yaw.
    pub points: Vec<(f64, f64)>,
    pub spikiness: f64,
}

/// Total absolute second difference.
pub fn spikiness(ys: &[f64]) -> f64 {
    ys.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()).sum()
}

/// Yaw offsets from `-20` to `20` degrees in steps of 2.
pub fn default_yaw_grid() -> Vec<f64> {
    (-10..=10).map(|i| 2.0 * i as f64).collect()
}

/// Predicted steering for a parked car at `station` as the camera is
/// rotated, once per field of view.
pub fn fov_sweep(
    policy: &Policy,
    track: &TrackSpec,
    cfg: &EvalConfig,
    station: f64,
    fovs: &[f64],
    yaws: &[f64],
) -> Result<Vec<FovCurve>> {
    if yaws.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("yaw grid must be strictly increasing"));
    }
    let scene = Scene::new(track, cfg.scene_seed);
    let mut state = start_state(&scene, station, 0.0);
    state.speed = cfg.sim.v_max;
    state.steering_norm = 0.5;
    state.prev_steering_norm = 0.5;
    let light = cfg.light();
    let mut curves = Vec::with_capacity(fovs.len());
    for &fov_deg in fovs {
        let mut points = Vec::with_capacity(yaws.len());
        for &yaw in yaws {
            let cam = CameraConfig {
                fov_deg,
                yaw_offset_deg: yaw,
                ..cfg.cam.clone()
            };
            cam.validate()?;
            let frame = scene.render(&state, &cam, &light);
            points.push((yaw, infer_frame(policy, &frame, Some(live_state_input(&state, &cfg.sim)))?));
        }
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        curves.push(FovCurve {
            fov_deg,
            spikiness: spikiness(&ys),
            points,
        });
    }
    Ok(curves)
}

/// One row of the cumulative ablation ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub name: String,
    pub dropout: bool,
    pub activation: Activation,
    pub head: Head,
    pub swerved_data: bool,
    pub use_car_state: bool,
    pub shifted_aug: bool,
}

impl AblationSpec {
    /// The five cumulative rows, from the unmodified network to shifted
    /// driving.
    pub fn ladder() -> Vec<AblationSpec> {
        let original = AblationSpec {
            name: "original".into(),
            dropout: false,
            activation: Activation::Relu,
            head: Head::LinearClamped,
            swerved_data: false,
            use_car_state: true,
            shifted_aug: false,
        };
        let modified = AblationSpec {
            name: "dropout_activation".into(),
            dropout: true,
            activation: Activation::LeakyRelu,
            head: Head::Sigmoid,
            ..original.clone()
        };
        let swerved = AblationSpec {
            name: "swerved_data".into(),
            swerved_data: true,
            ..modified.clone()
        };
        let no_state = AblationSpec {
            name: "no_car_state".into(),
            use_car_state: false,
            ..swerved.clone()
        };
        let shifted = AblationSpec {
            name: "shifted_driving".into(),
            shifted_aug: true,
            ..no_state.clone()
        };
        vec![original, modified, swerved, no_state, shifted]
    }

    pub fn model_spec(&self) -> ModelSpec {
        let base = ModelSpec::pilotnet();
        ModelSpec {
            dropout: if self.dropout { base.dropout } else { None },
            activation: self.activation,
            head: self.head,
            use_car_state: self.use_car_state,
            ..base
        }
    }

    pub fn data_key(&self) -> DataKey {
        DataKey {
            swerved: self.swerved_data,
            shifted: self.shifted_aug,
        }
    }
}

/// Which training mix a variant draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataKey {
    pub swerved: bool,
    pub shifted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub cap_s: f64,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Concurrent training and evaluation jobs.
    pub jobs: usize,
    /// Trained weights are saved here and reused when already present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_dir: Option<PathBuf>,
}

impl AblationConfig {
    /// Where the weights of `variant` trained with `seed` are kept.
    pub fn model_path(&self, variant: &AblationSpec, seed: u64) -> Option<PathBuf> {
        self.model_dir.as_ref().map(|d| d.join(format!("{}-seed{seed}.pnet", variant.name)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub track_id: String,
    pub duration_s: f64,
    pub off_track: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub spec: AblationSpec,
    pub runs: Vec<AblationRun>,
    pub median_s: Option<f64>,
    /// Last-epoch training loss per freshly trained seed.
    pub final_loss: Vec<f64>,
    pub errors: Vec<String>,
    /// Trained weights per seed.
    #[serde(skip)]
    pub models: Vec<(u64, Weights<f32>)>,
}

impl AblationRow {
    /// Median duration per track over seeds.
    pub fn track_medians(&self) -> BTreeMap<String, f64> {
        let mut per: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &self.runs {
            per.entry(r.track_id.clone()).or_default().push(r.duration_s);
        }
        per.into_iter().map(|(k, v)| (k, median(v))).collect()
    }

    pub fn policy(&self, seed: u64) -> Option<Policy> {
        let (_, w) = self.models.iter().find(|(s, _)| *s == seed)?;
        Some(Policy {
            spec: self.spec.model_spec(),
            weights: w.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn medians(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.median_s).collect()
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `work` over `items` on up to `jobs` threads, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, work: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(work).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = work(&items[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every item ran")).collect()
}

/// Trains every variant once per seed on its data mix and evaluates each
/// model on every track. A variant whose data or training fails is
/// reported with its errors and the run continues.
pub fn run_ablation(
    variants: &[AblationSpec],
    data: &BTreeMap<DataKey, TrainSet>,
    tracks: &[TrackSpec],
    cfg: &AblationConfig,
) -> Result<AblationReport> {
    if cfg.seeds.is_empty() || tracks.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed and one track"));
    }
    cfg.train.validate()?;
    let jobs: Vec<(usize, u64)> = (0..variants.len()).flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let trained = parallel_map(&jobs, cfg.jobs, |&(v, seed)| {
        let spec = &variants[v];
        let path = cfg.model_path(spec, seed);
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            log::info!("reusing {}", p.display());
            let w = load_weights(p, &spec.model_spec())?;
            return Ok::<_, Error>((w, None));
        }
        let set = data
            .get(&spec.data_key())
            .ok_or_else(|| Error::invalid(format!("no training data for {:?}", spec.data_key())))?;
        let tc = TrainConfig {
            seed,
            checkpoint_dir: None,
            ..cfg.train.clone()
        };
        log::info!("training {} seed {seed} on {} samples", spec.name, set.len());
        let (w, report) = train(&spec.model_spec(), set, &tc)?;
        if let Some(p) = &path {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            save_weights(&w, p)?;
        }
        Ok((w, Some(report)))
    });
    let evals: Vec<(usize, u64, usize)> = jobs
        .iter()
        .zip(&trained)
        .filter(|(_, t)| t.is_ok())
        .flat_map(|(&(v, s), _)| (0..tracks.len()).map(move |k| (v, s, k)))
        .collect();
    let results = parallel_map(&evals, cfg.jobs, |&(v, seed, k)| {
        let i = jobs.iter().position(|&j| j == (v, seed)).expect("job exists");
        let (weights, _) = trained[i].as_ref().expect("filtered to trained models");
        let policy = Policy {
            spec: variants[v].model_spec(),
            weights: weights.clone(),
        };
        let r = closed_loop(&policy, &tracks[k], &cfg.eval, cfg.cap_s);
        if let Ok(r) = &r {
            log::info!("{} seed {seed} on {}: {:.1} s", variants[v].name, tracks[k].id, r.duration_s);
        }
        r
    });

    let mut rows: Vec<AblationRow> = variants
        .iter()
        .map(|spec| AblationRow {
            spec: spec.clone(),
            runs: Vec::new(),
            median_s: None,
            final_loss: Vec::new(),
            errors: Vec::new(),
            models: Vec::new(),
        })
        .collect();
    for (&(v, seed), t) in jobs.iter().zip(trained) {
        match t {
            Ok((w, report)) => {
                if let Some(report) = report {
                    rows[v].final_loss.push(report.epoch_loss.last().copied().unwrap_or(f64::NAN));
                }
                rows[v].models.push((seed, w));
            }
            Err(e) => rows[v].errors.push(format!("seed {seed}: {e}")),
        }
    }
    for (&(v, seed, k), r) in evals.iter().zip(results) {
        match r {
            Ok(r) => rows[v].runs.push(AblationRun {
                seed,
                track_id: tracks[k].id.clone(),
                duration_s: r.duration_s,
                off_track: r.off_track,
            }),
            Err(e) => rows[v].errors.push(format!("seed {seed}, track {}: {e}", tracks[k].id)),
        }
    }
    for row in &mut rows {
        if !row.runs.is_empty() {
            row.median_s = Some(median(row.runs.iter().map(|r| r.duration_s).collect()));
        }
    }
    Ok(AblationReport {
        config: cfg.clone(),
        rows,
    })
}
