//! Recorded driving sessions on disk, the stratified training mix and
//! manifest statistics.
//!
//! A session directory holds `manifest.jsonl` (one [`SampleMeta`] per line),
//! `frames/%06d.ppm`, `session.json` and `track.json`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_plan, sample_plan, AugmentTag};
use crate::render::{cyclelight, CameraConfig, Image, LightingState, Scene, Weather};
use crate::sim::{expert_steer, generate_track, step, CarState, DriveMode, ExpertConfig, SimConfig, TrackGeometry, TrackSpec, TrackStyle};
use crate::{Error, Point2, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SESSION_FILE: &str = "session.json";
pub const TRACK_FILE: &str = "track.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Driver {
    ExpertNormative,
    ExpertSwerved,
    Teleop,
}

impl Driver {
    pub fn as_str(self) -> &'static str {
        match self {
            Driver::ExpertNormative => "expert_normative",
            Driver::ExpertSwerved => "expert_swerved",
            Driver::Teleop => "teleop",
        }
    }
}

impl fmt::Display for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Driver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expert_normative" | "normative" => Ok(Driver::ExpertNormative),
            "expert_swerved" | "swerved" => Ok(Driver::ExpertSwerved),
            "teleop" => Ok(Driver::Teleop),
            other => Err(Error::invalid(format!("unknown driver {other:?}"))),
        }
    }
}

/// Camera-rig pose of a sample, enough to re-render it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seq: u64,
    /// Frame path relative to the session directory.
    pub image: String,
    pub y_label: f32,
    pub speed: f32,
    pub throttle: f32,
    pub brake: f32,
    pub prev_y: f32,
    pub t_day: f32,
    pub shift_d: f32,
    #[serde(default)]
    pub tags: Vec<AugmentTag>,
    pub track_id: String,
    pub track_style: TrackStyle,
    pub driver: Driver,
    /// Seconds since the session started.
    pub t: f64,
    pub pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl SampleMeta {
    /// Car-state network input: speed over `v_max`, previous steering,
    /// throttle and brake.
    pub fn state_input(&self, v_max: f64) -> [f32; 4] {
        [(self.speed as f64 / v_max) as f32, self.prev_y, self.throttle, self.brake]
    }

    pub fn car_state(&self) -> CarState {
        let mut s = CarState::new(Point2::new(self.pose.x, self.pose.y), self.pose.heading);
        s.speed = self.speed as f64;
        s.prev_steering_norm = self.prev_y as f64;
        s
    }
}

/// Per-directory record describing a session or a mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub schema_version: u32,
    pub complete: bool,
    pub samples: usize,
    pub hz: f64,
    pub v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<Driver>,
    #[serde(default)]
    pub scene_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Lighting over the course of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LightingSchedule {
    Fixed { t_day: f64, weather: Weather },
    /// Time of day moves linearly from `from` to `to` across the session.
    Sweep { from: f64, to: f64, weather: Weather },
}

impl Default for LightingSchedule {
    fn default() -> Self {
        LightingSchedule::Fixed {
            t_day: 12.0,
            weather: Weather::CLEAR,
        }
    }
}

impl LightingSchedule {
    /// Lighting at fraction `progress` in `[0, 1]` of the session.
    pub fn at(&self, progress: f64) -> LightingState {
        match *self {
            LightingSchedule::Fixed { t_day, weather } => cyclelight(t_day, weather),
            LightingSchedule::Sweep { from, to, weather } => {
                let t = from + (to - from) * progress.clamp(0.0, 1.0);
                // Keep the end point of a full-day sweep at 24 rather than 0.
                let t = if t >= 24.0 { 24.0 - 1e-9 } else { t };
                cyclelight(t, weather)
            }
        }
    }
}

/// Loaded session or mix.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub dir: PathBuf,
    pub info: SessionInfo,
    pub samples: Vec<SampleMeta>,
}

impl Manifest {
    /// Reads `session.json` and every manifest line; a malformed line is an
    /// error naming its line number.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let info_path = dir.join(SESSION_FILE);
        let info: SessionInfo = serde_json::from_slice(&fs::read(&info_path).map_err(|e| Error::io(&info_path, e))?)?;
        if info.schema_version != SCHEMA_VERSION {
            return Err(Error::Dataset(format!(
                "{}: schema version {} (expected {SCHEMA_VERSION})",
                dir.display(),
                info.schema_version
            )));
        }
        let mut samples = Vec::new();
        for row in read_rows(&dir.join(MANIFEST_FILE))? {
            match row {
                (_, Ok(meta)) => samples.push(meta),
                (line, Err(msg)) => return Err(Error::Dataset(format!("{}: line {line}: {msg}", dir.display()))),
            }
        }
        Ok(Self { dir, info, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_path(&self, meta: &SampleMeta) -> PathBuf {
        self.dir.join(&meta.image)
    }

    pub fn read_image(&self, meta: &SampleMeta) -> Result<Image> {
        Image::read_ppm(self.image_path(meta))
    }

    pub fn track(&self) -> Result<TrackSpec> {
        TrackSpec::load(self.dir.join(TRACK_FILE))
    }
}

type Row = (usize, std::result::Result<SampleMeta, String>);

fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<SampleMeta>(&line).map_err(|e| e.to_string()).and_then(|m| {
            if (0.0..=1.0).contains(&m.y_label) {
                Ok(m)
            } else {
                Err(format!("y_label {} outside [0, 1]", m.y_label))
            }
        });
        rows.push((i + 1, parsed));
    }
    Ok(rows)
}

/// Appends frames and manifest lines to a session directory.
pub struct SessionWriter {
    dir: PathBuf,
    manifest: BufWriter<File>,
    info: SessionInfo,
    next_seq: u64,
}

impl SessionWriter {
    /// Creates `dir` (which must not already hold a manifest) and writes the
    /// track alongside.
    pub fn create(dir: impl AsRef<Path>, track: &TrackSpec, mut info: SessionInfo) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let frames = dir.join("frames");
        fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            return Err(Error::Dataset(format!("{} already exists", manifest_path.display())));
        }
        track.save(dir.join(TRACK_FILE))?;
        let manifest = BufWriter::new(File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
        info.schema_version = SCHEMA_VERSION;
        info.complete = false;
        info.samples = 0;
        let w = Self {
            dir,
            manifest,
            info,
            next_seq: 0,
        };
        w.write_info()?;
        Ok(w)
    }

    /// Directory for mixes whose samples come from several tracks.
    pub fn create_mix(dir: impl AsRef<Path>, mut info: SessionInfo) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let frames = dir.join("frames");
        fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = BufWriter::new(File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
        info.schema_version = SCHEMA_VERSION;
        info.complete = false;
        info.samples = 0;
        let w = Self {
            dir,
            manifest,
            info,
            next_seq: 0,
        };
        w.write_info()?;
        Ok(w)
    }

    fn write_info(&self) -> Result<()> {
        let path = self.dir.join(SESSION_FILE);
        let mut text = serde_json::to_string_pretty(&self.info)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }

    /// Writes the frame and its metadata; `seq` and `image` are assigned.
    pub fn append(&mut self, image: &Image, mut meta: SampleMeta) -> Result<SampleMeta> {
        meta.seq = self.next_seq;
        meta.image = format!("frames/{:06}.ppm", meta.seq);
        image.write_ppm(self.dir.join(&meta.image))?;
        let line = serde_json::to_string(&meta)?;
        let path = self.dir.join(MANIFEST_FILE);
        writeln!(self.manifest, "{line}").map_err(|e| Error::io(&path, e))?;
        self.manifest.flush().map_err(|e| Error::io(&path, e))?;
        self.next_seq += 1;
        Ok(meta)
    }

    pub fn finish(mut self, complete: bool, note: Option<String>) -> Result<Manifest> {
        let path = self.dir.join(MANIFEST_FILE);
        self.manifest.flush().map_err(|e| Error::io(&path, e))?;
        self.info.complete = complete;
        self.info.samples = self.next_seq as usize;
        self.info.note = note;
        self.write_info()?;
        Manifest::load(&self.dir)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordOptions {
    pub sim: SimConfig,
    pub cam: CameraConfig,
    pub expert: ExpertConfig,
    pub scene_seed: u64,
    /// Station at which recording starts.
    pub start_station: f64,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            cam: CameraConfig::default(),
            expert: ExpertConfig::default(),
            scene_seed: 0,
            start_station: 0.0,
        }
    }
}

/// Centered, aligned state at station `s`.
pub fn start_state(geo: &TrackGeometry, s: f64) -> CarState {
    let (p, heading, _) = geo.at_station(s);
    CarState::new(p, heading)
}

/// Drives the scripted expert on `track` and writes `hz` samples per
/// second. When the expert leaves the track the partial session is kept and
/// flagged incomplete; reaching the end of an open track ends the session.
pub fn record_session(
    track: &TrackSpec,
    driver: Driver,
    minutes: f64,
    schedule: LightingSchedule,
    hz: f64,
    out_dir: impl AsRef<Path>,
    opts: &RecordOptions,
) -> Result<Manifest> {
    if !(1.0..=30.0).contains(&hz) {
        return Err(Error::invalid(format!("hz {hz} not in [1, 30]")));
    }
    if !(minutes >= 0.0 && minutes.is_finite()) {
        return Err(Error::invalid("minutes must be non-negative"));
    }
    opts.sim.validate()?;
    opts.cam.validate()?;
    let expert = match driver {
        Driver::ExpertNormative => ExpertConfig {
            mode: DriveMode::Normative,
            ..opts.expert.clone()
        },
        Driver::ExpertSwerved => ExpertConfig {
            mode: DriveMode::Swerved,
            ..opts.expert.clone()
        },
        Driver::Teleop => return Err(Error::invalid("teleop sessions are recorded by the session server")),
    };
    expert.validate()?;

    let scene = Scene::new(track, opts.scene_seed);
    let geo = scene.geometry();
    let count = (minutes * 60.0 * hz).round() as u64;
    let mut writer = SessionWriter::create(
        out_dir,
        track,
        SessionInfo {
            schema_version: SCHEMA_VERSION,
            complete: false,
            samples: 0,
            hz,
            v_max: opts.sim.v_max,
            track_id: Some(track.id.clone()),
            driver: Some(driver),
            scene_seed: opts.scene_seed,
            note: None,
        },
    )?;
    let mut state = start_state(geo, opts.start_station);
    let end_guard = if track.closed { f64::INFINITY } else { geo.length() - 12.0 };
    for i in 0..count {
        let due = i as f64 / hz;
        let mut cmd = expert_steer(geo, &state, &expert, &opts.sim);
        while state.sim_time < due - 1e-9 {
            let c = match cmd {
                Ok(c) => c,
                Err(e) => return writer.finish(false, Some(e.to_string())),
            };
            state = step(&state, c, &opts.sim);
            cmd = expert_steer(geo, &state, &expert, &opts.sim);
        }
        let cmd = match cmd {
            Ok(c) => c,
            Err(e) => return writer.finish(false, Some(e.to_string())),
        };
        if let Some(f) = geo.frame(state.position).frame() {
            if f.station > end_guard {
                return writer.finish(true, Some("reached the end of the track".into()));
            }
        }
        let light = schedule.at(if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 });
        let image = scene.render(&state, &opts.cam, &light);
        writer.append(
            &image,
            SampleMeta {
                seq: 0,
                image: String::new(),
                y_label: cmd.y as f32,
                speed: state.speed as f32,
                throttle: cmd.throttle as f32,
                brake: cmd.brake as f32,
                prev_y: state.prev_steering_norm as f32,
                t_day: light.t_day as f32,
                shift_d: 0.0,
                tags: Vec::new(),
                track_id: track.id.clone(),
                track_style: track.style,
                driver,
                t: due,
                pose: Pose {
                    x: state.position.x,
                    y: state.position.y,
                    heading: state.heading,
                },
                source: None,
            },
        )?;
    }
    writer.finish(true, None)
}

/// Tracks and drivers for a batch of scripted recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Track seeds per (style, driver) pool.
    pub normative_straight: Vec<u64>,
    pub normative_curvy: Vec<u64>,
    pub swerved_straight: Vec<u64>,
    pub swerved_curvy: Vec<u64>,
    pub track_length: f64,
    pub width_range: [f64; 2],
    /// Upper bound per session; open tracks usually end first.
    pub minutes: f64,
    pub hz: f64,
    pub schedule: LightingSchedule,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            normative_straight: vec![101, 102, 103, 104],
            normative_curvy: vec![201, 202, 203, 204],
            swerved_straight: vec![301],
            swerved_curvy: vec![401],
            track_length: 600.0,
            width_range: [3.0, 5.0],
            minutes: 3.0,
            hz: 10.0,
            schedule: LightingSchedule::Sweep {
                from: 7.0,
                to: 19.0,
                weather: Weather::CLEAR,
            },
        }
    }
}

/// Records one session per configured track into `out_dir` and returns the
/// session directories. Each scene is seeded with its track seed.
pub fn record_corpus(cfg: &CorpusConfig, opts: &RecordOptions, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let pools = [
        (&cfg.normative_straight, TrackStyle::Straight, Driver::ExpertNormative),
        (&cfg.normative_curvy, TrackStyle::Curvy, Driver::ExpertNormative),
        (&cfg.swerved_straight, TrackStyle::Straight, Driver::ExpertSwerved),
        (&cfg.swerved_curvy, TrackStyle::Curvy, Driver::ExpertSwerved),
    ];
    let mut dirs = Vec::new();
    for (seeds, style, driver) in pools {
        for &seed in seeds {
            let track = generate_track(seed, style, cfg.track_length, cfg.width_range)?;
            let dir = out_dir.join(format!("{driver}-{}", track.id));
            let opts = RecordOptions {
                scene_seed: seed,
                ..opts.clone()
            };
            let m = record_session(&track, driver, cfg.minutes, cfg.schedule, cfg.hz, &dir, &opts)?;
            if !m.info.complete {
                log::warn!("{}: {}", dir.display(), m.info.note.as_deref().unwrap_or("incomplete"));
            }
            dirs.push(dir);
        }
    }
    Ok(dirs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    pub samples: usize,
    pub plan_seed: u64,
    pub straight_fraction: f64,
    /// Fraction of swerved-driver samples; 0 disables them.
    pub swerved_fraction: f64,
    /// Allows shifted re-rendering.
    pub shifted: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            samples: 5000,
            plan_seed: 0,
            straight_fraction: 0.539,
            swerved_fraction: 0.075,
            shifted: true,
        }
    }
}

fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Exact sample counts per `(track style, swerved)` stratum of a mix.
pub fn mix_counts(cfg: &MixConfig) -> Vec<((TrackStyle, bool), usize)> {
    let n = cfg.samples;
    let n_straight = (n as f64 * cfg.straight_fraction).round() as usize;
    let mut wanted = Vec::with_capacity(4);
    for (style, count) in [(TrackStyle::Straight, n_straight), (TrackStyle::Curvy, n - n_straight)] {
        let swerved = (count as f64 * cfg.swerved_fraction).round() as usize;
        wanted.push(((style, false), count - swerved));
        wanted.push(((style, true), swerved));
    }
    wanted
}

/// Draws a stratified, augmented training set from recorded sessions.
///
/// Straight and curvy tracks and normative and swerved drivers are mixed
/// at exact counts; every emitted frame is re-rendered from its source pose
/// under a freshly sampled augmentation plan.
pub fn build_training_mix(sessions: &[PathBuf], cfg: &MixConfig, cam: &CameraConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&cfg.straight_fraction) || !(0.0..1.0).contains(&cfg.swerved_fraction) {
        return Err(Error::invalid("mix fractions out of range"));
    }
    let mut sources = Vec::new();
    for dir in sessions {
        let m = Manifest::load(dir)?;
        let track = m.track()?;
        sources.push((m, track));
    }
    // Pools keyed by (style, swerved).
    let mut pools: BTreeMap<(TrackStyle, bool), Vec<(usize, usize)>> = BTreeMap::new();
    for (si, (m, _)) in sources.iter().enumerate() {
        for (k, s) in m.samples.iter().enumerate() {
            if s.driver == Driver::Teleop {
                continue;
            }
            pools.entry((s.track_style, s.driver == Driver::ExpertSwerved)).or_default().push((si, k));
        }
    }
    let n = cfg.samples;
    let wanted = mix_counts(cfg);
    let mut shortfalls = Vec::new();
    let mut picked = Vec::with_capacity(n);
    for (key_i, (key, count)) in wanted.iter().enumerate() {
        let mut pool = pools.get(key).cloned().unwrap_or_default();
        if pool.len() < *count {
            shortfalls.push(format!(
                "{} {}: need {count}, have {}",
                key.0,
                if key.1 { "swerved" } else { "normative" },
                pool.len()
            ));
            continue;
        }
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.plan_seed, 1000 + key_i as u64)));
        picked.extend_from_slice(&pool[..*count]);
    }
    if !shortfalls.is_empty() {
        return Err(Error::Shortfall(shortfalls.join("; ")));
    }
    picked.sort_unstable();

    let v_max = sources.first().map(|(m, _)| m.info.v_max).unwrap_or(SimConfig::default().v_max);
    let mut writer = SessionWriter::create_mix(
        out_dir,
        SessionInfo {
            schema_version: SCHEMA_VERSION,
            complete: false,
            samples: 0,
            hz: 0.0,
            v_max,
            track_id: None,
            driver: None,
            scene_seed: 0,
            note: Some(format!("training mix, plan seed {}", cfg.plan_seed)),
        },
    )?;
    let mut scenes: HashMap<usize, Scene> = HashMap::new();
    for (out_i, &(si, k)) in picked.iter().enumerate() {
        let (m, track) = &sources[si];
        let scene = scenes.entry(si).or_insert_with(|| Scene::new(track, m.info.scene_seed));
        let src = &m.samples[k];
        let mut plan = sample_plan(mix_seed(cfg.plan_seed, out_i as u64));
        if !cfg.shifted {
            plan.shifted = false;
            plan.shift_d = 0.0;
        }
        let base_light = cyclelight(src.t_day as f64, Weather::CLEAR);
        let aug = apply_plan(scene, &src.car_state(), src.y_label as f64, cam, &base_light, &plan)?;
        let meta = SampleMeta {
            y_label: aug.y as f32,
            t_day: aug.light.t_day as f32,
            shift_d: plan.shift_d as f32,
            tags: aug.tags,
            source: Some(format!("{}#{}", m.dir.file_name().and_then(|s| s.to_str()).unwrap_or("session"), src.seq)),
            ..src.clone()
        };
        writer.append(&aug.image, meta)?;
    }
    writer.finish(true, None)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub samples: usize,
    /// Share of samples carrying each augmentation tag.
    pub technique_freq: BTreeMap<String, f64>,
    pub technique_counts: BTreeMap<String, usize>,
    /// Eleven bins centred on 0.0, 0.1, ..., 1.0.
    pub label_histogram: [f64; 11],
    pub driver_counts: BTreeMap<String, usize>,
    pub style_counts: BTreeMap<String, usize>,
    pub corrupt_rows: Vec<(usize, String)>,
}

/// Frequencies and counts over a manifest file; malformed lines are listed
/// with their line numbers instead of aborting.
pub fn dataset_stats(manifest: impl AsRef<Path>) -> Result<DatasetStats> {
    let path = manifest.as_ref();
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let mut stats = DatasetStats::default();
    let mut hist = [0usize; 11];
    for (line, row) in read_rows(&path)? {
        let meta = match row {
            Ok(m) => m,
            Err(msg) => {
                stats.corrupt_rows.push((line, msg));
                continue;
            }
        };
        stats.samples += 1;
        hist[(meta.y_label as f64 * 10.0).round().clamp(0.0, 10.0) as usize] += 1;
        let mut seen: Vec<&str> = meta.tags.iter().map(|t| t.name.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        for name in seen {
            *stats.technique_counts.entry(name.to_owned()).or_default() += 1;
        }
        *stats.driver_counts.entry(meta.driver.to_string()).or_default() += 1;
        *stats.style_counts.entry(meta.track_style.to_string()).or_default() += 1;
    }
    if stats.samples > 0 {
        let n = stats.samples as f64;
        for (b, c) in stats.label_histogram.iter_mut().zip(hist) {
            *b = c as f64 / n;
        }
        stats.technique_freq = stats.technique_counts.iter().map(|(k, &c)| (k.clone(), c as f64 / n)).collect();
    }
    Ok(stats)
}
