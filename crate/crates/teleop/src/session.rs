//! The authoritative simulation of one teleoperated session, independent of
//! any transport. The server drives [`Session::tick`] from a wall clock;
//! tests may drive it with synthetic time.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fsd_core::dataset::{
    start_state, Driver, LightingSchedule, Manifest, Pose, SampleMeta, SessionInfo, SessionWriter, SCHEMA_VERSION,
};
use fsd_core::render::{CameraConfig, Image, LightingState, Scene};
use fsd_core::sim::{step, CarState, Command, SimConfig, TrackSpec};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const TICK_HZ: u64 = 30;
pub const FRAME_HZ: u64 = 20;
pub const STATE_HZ: u64 = 10;
pub const RECORD_HZ: u64 = 10;
pub const STALE_MS: u64 = 500;
pub const CONTROL_LOG: &str = "controls.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlMsg {
    pub steering: f64,
    pub throttle: f64,
    pub brake: f64,
    #[serde(default)]
    pub timestamp_ms: Option<u64>,
}

impl ControlMsg {
    /// Rejects values outside `[0, 1]`.
    pub fn validate(&self) -> Result<Command> {
        for (name, v) in [("steering", self.steering), ("throttle", self.throttle), ("brake", self.brake)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Protocol(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(Command {
            y: self.steering,
            throttle: self.throttle,
            brake: self.brake,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    pub tick: u64,
    pub speed: f64,
    pub y: f64,
    pub d: f64,
    pub off_track: bool,
    pub recording: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub sim: SimConfig,
    pub cam: CameraConfig,
    pub schedule: LightingSchedule,
    pub scene_seed: u64,
    /// Where a recording is written once switched on.
    pub record_dir: PathBuf,
    pub stale_ms: u64,
    /// Period over which a lighting sweep repeats.
    pub cycle_s: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            cam: CameraConfig::default(),
            schedule: LightingSchedule::default(),
            scene_seed: 0,
            record_dir: PathBuf::from("teleop-session"),
            stale_ms: STALE_MS,
            cycle_s: 120.0,
        }
    }
}

/// Outputs due after one tick.
#[derive(Debug, Default)]
pub struct TickOutput {
    pub frame: Option<(u32, Image)>,
    pub state: Option<StateMsg>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogHeader {
    start: CarState,
    sim: SimConfig,
    first_tick: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogLine {
    tick: u64,
    y: f64,
    throttle: f64,
    brake: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample: Option<u64>,
}

struct Recorder {
    writer: SessionWriter,
    log: BufWriter<File>,
    log_path: PathBuf,
}

pub struct Session {
    cfg: SessionConfig,
    track: TrackSpec,
    scene: Scene,
    state: CarState,
    tick: u64,
    control: Option<(Command, u64)>,
    recording: bool,
    recorder: Option<Recorder>,
    frame_seq: u32,
    last_lateral: (f64, bool),
    hint: usize,
}

impl Session {
    pub fn new(track: &TrackSpec, cfg: SessionConfig) -> Result<Self> {
        track.validate()?;
        cfg.sim.validate()?;
        cfg.cam.validate()?;
        let scene = Scene::new(track, cfg.scene_seed);
        let state = start_state(scene.geometry(), 0.0);
        Ok(Self {
            cfg,
            track: track.clone(),
            scene,
            state,
            tick: 0,
            control: None,
            recording: false,
            recorder: None,
            frame_seq: 0,
            last_lateral: (0.0, false),
            hint: 0,
        })
    }

    pub fn state(&self) -> &CarState {
        &self.state
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    pub fn samples(&self) -> u64 {
        self.recorder.as_ref().map_or(0, |r| r.writer.len())
    }

    /// Latest control wins; `now_ms` is its arrival time.
    pub fn set_control(&mut self, cmd: Command, now_ms: u64) {
        self.control = Some((cmd, now_ms));
    }

    /// Drops the current control so the car coasts.
    pub fn clear_control(&mut self) {
        self.control = None;
    }

    /// Takes effect at the next tick. The first switch-on creates the
    /// session directory; later toggles append to the same manifest.
    pub fn set_recording(&mut self, on: bool) -> Result<()> {
        if on && self.recorder.is_none() {
            let dir = &self.cfg.record_dir;
            let writer = SessionWriter::create(
                dir,
                &self.track,
                SessionInfo {
                    schema_version: SCHEMA_VERSION,
                    complete: false,
                    samples: 0,
                    hz: RECORD_HZ as f64,
                    v_max: self.cfg.sim.v_max,
                    track_id: Some(self.track.id.clone()),
                    driver: Some(Driver::Teleop),
                    scene_seed: self.cfg.scene_seed,
                    note: None,
                },
            )?;
            let log_path = dir.join(CONTROL_LOG);
            let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            let mut log = BufWriter::new(file);
            let header = LogHeader {
                start: self.state.clone(),
                sim: self.cfg.sim.clone(),
                first_tick: self.tick,
            };
            writeln!(log, "{}", serde_json::to_string(&header)?).map_err(|e| Error::io(&log_path, e))?;
            self.recorder = Some(Recorder { writer, log, log_path });
        }
        self.recording = on;
        Ok(())
    }

    fn light(&self) -> LightingState {
        let t = self.tick as f64 * self.cfg.sim.dt;
        let progress = if self.cfg.cycle_s > 0.0 { (t / self.cfg.cycle_s).fract() } else { 0.0 };
        self.cfg.schedule.at(progress)
    }

    fn command(&self, now_ms: u64) -> Command {
        match self.control {
            Some((cmd, at)) if now_ms.saturating_sub(at) <= self.cfg.stale_ms => cmd,
            _ => Command::NEUTRAL,
        }
    }

    fn lateral(&mut self) -> (f64, bool) {
        match self.scene.geometry().frame_near(self.state.position, self.hint).frame() {
            Some(f) => {
                self.hint = f.segment;
                (f.lateral, f.lateral.abs() > f.width / 2.0)
            }
            None => (f64::NAN, true),
        }
    }

    /// Advances the simulation by one step at wall time `now_ms`.
    pub fn tick(&mut self, now_ms: u64) -> Result<TickOutput> {
        let cmd = self.command(now_ms);
        let k = self.tick;
        let dt = self.cfg.sim.dt;
        let mut sample = None;
        if self.recording && k % (TICK_HZ / RECORD_HZ) == 0 {
            let light = self.light();
            let rec = self.recorder.as_mut().expect("recorder exists while recording");
            let image = self.scene.render(&self.state, &self.cfg.cam, &light);
            let meta = rec.writer.append(
                &image,
                SampleMeta {
                    seq: 0,
                    image: String::new(),
                    y_label: cmd.y as f32,
                    speed: self.state.speed as f32,
                    throttle: cmd.throttle as f32,
                    brake: cmd.brake as f32,
                    prev_y: self.state.prev_steering_norm as f32,
                    t_day: light.t_day as f32,
                    shift_d: 0.0,
                    tags: Vec::new(),
                    track_id: self.track.id.clone(),
                    track_style: self.track.style,
                    driver: Driver::Teleop,
                    t: k as f64 * dt,
                    pose: Pose {
                        x: self.state.position.x,
                        y: self.state.position.y,
                        heading: self.state.heading,
                    },
                    source: None,
                },
            )?;
            sample = Some(meta.seq);
        }
        if let Some(rec) = self.recorder.as_mut() {
            let line = LogLine {
                tick: k,
                y: cmd.y,
                throttle: cmd.throttle,
                brake: cmd.brake,
                sample,
            };
            writeln!(rec.log, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(&rec.log_path, e))?;
        }
        self.state = step(&self.state, cmd, &self.cfg.sim);
        self.tick += 1;
        self.last_lateral = self.lateral();

        let mut out = TickOutput::default();
        let frames_before = k * FRAME_HZ / TICK_HZ;
        let frames_after = self.tick * FRAME_HZ / TICK_HZ;
        if frames_after > frames_before {
            let light = self.light();
            let image = self.scene.render(&self.state, &self.cfg.cam, &light);
            out.frame = Some((self.frame_seq, image));
            self.frame_seq = self.frame_seq.wrapping_add(1);
        }
        if self.tick % (TICK_HZ / STATE_HZ) == 0 {
            out.state = Some(self.state_msg());
        }
        Ok(out)
    }

    pub fn state_msg(&self) -> StateMsg {
        StateMsg {
            tick: self.tick,
            speed: self.state.speed,
            y: self.state.steering_norm,
            d: self.last_lateral.0,
            off_track: self.last_lateral.1,
            recording: self.recording,
        }
    }

    /// Flushes and closes the recording, if any.
    pub fn finish(mut self) -> Result<Option<Manifest>> {
        let Some(mut rec) = self.recorder.take() else {
            return Ok(None);
        };
        rec.log.flush().map_err(|e| Error::io(&rec.log_path, e))?;
        Ok(Some(rec.writer.finish(true, None)?))
    }
}

/// Re-simulates a recorded session from its control log and returns the
/// pose at every recorded sample, keyed by sequence number.
pub fn replay(dir: impl AsRef<Path>) -> Result<Vec<(u64, Pose)>> {
    let path = dir.as_ref().join(CONTROL_LOG);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header: LogHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line.map_err(|e| Error::io(&path, e))?)?,
        None => return Err(Error::Protocol(format!("{}: empty control log", path.display()))),
    };
    let mut state = header.start;
    let mut out = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: LogLine = serde_json::from_str(&line)?;
        if let Some(seq) = l.sample {
            out.push((
                seq,
                Pose {
                    x: state.position.x,
                    y: state.position.y,
                    heading: state.heading,
                },
            ));
        }
        let cmd = Command {
            y: l.y,
            throttle: l.throttle,
            brake: l.brake,
        };
        state = step(&state, cmd, &header.sim);
    }
    Ok(out)
}
