//! Training-time augmentation: shifted re-rendering with label correction,
//! day-light and weather variation, and photometric distortions.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::render::{cyclelight, sun_pixel, CameraConfig, Image, LightingState, Scene, Weather};
use crate::sim::{CarState, FrameQuery, DELTA_MAX};
use crate::{Error, Result};

pub const P_CYCLELIGHT: f64 = 0.772;
pub const P_SHIFTED: f64 = 0.222;
pub const P_HLINES: f64 = 0.100;
pub const P_HDISTORT: f64 = 0.114;
pub const P_FLARE: f64 = 0.099;

pub const MAX_SHIFT: f64 = 1.75;
pub const SHIFT_SIGMA: f64 = 0.875;
/// Distance ahead at which a shifted camera rejoins its original line.
pub const RECOVERY_LOOKAHEAD: f64 = 10.0;
pub const MAX_CLOUD_OPACITY: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub cyclelight: bool,
    pub t_day: f64,
    pub cloud_opacity: f64,
    pub cloud_prevalence: f64,
    pub shifted: bool,
    pub shift_d: f64,
    pub h_lines: bool,
    pub h_distort: bool,
    pub flare: bool,
    pub brightness_factor: f64,
    /// Seeds the randomized image operations.
    pub op_seed: u64,
}

impl AugmentPlan {
    /// No augmentation beyond the identity brightness.
    pub fn identity() -> Self {
        Self {
            cyclelight: false,
            t_day: 12.0,
            cloud_opacity: 0.0,
            cloud_prevalence: 0.0,
            shifted: false,
            shift_d: 0.0,
            h_lines: false,
            h_distort: false,
            flare: false,
            brightness_factor: 1.0,
            op_seed: 0,
        }
    }

    fn op_seed(&self, k: u64) -> u64 {
        self.op_seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }

    /// Lighting for this plan: the drawn time of day when day-light cycling
    /// fired, otherwise `base`.
    pub fn lighting(&self, base: &LightingState) -> LightingState {
        if self.cyclelight {
            cyclelight(
                self.t_day,
                Weather {
                    cloud_opacity: self.cloud_opacity,
                    cloud_prevalence: self.cloud_prevalence,
                },
            )
        } else {
            *base
        }
    }
}

/// Independent technique draws at the published mixing rates.
pub fn sample_plan(seed: u64) -> AugmentPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cyclelight = rng.random_bool(P_CYCLELIGHT);
    let shifted = rng.random_bool(P_SHIFTED);
    let h_lines = rng.random_bool(P_HLINES);
    let h_distort = rng.random_bool(P_HDISTORT);
    let flare = rng.random_bool(P_FLARE);
    let shift_draw = truncated_normal(&mut rng, SHIFT_SIGMA, MAX_SHIFT);
    let brightness_factor = rng.random_range(0.6..=1.4);
    let t_day = rng.random_range(0.0..24.0);
    let cloud_opacity = rng.random_range(0.0..=MAX_CLOUD_OPACITY);
    let cloud_prevalence = rng.random_range(0.0..=1.0);
    let op_seed = rng.random();
    AugmentPlan {
        cyclelight,
        t_day: if cyclelight { t_day } else { 12.0 },
        cloud_opacity: if cyclelight { cloud_opacity } else { 0.0 },
        cloud_prevalence: if cyclelight { cloud_prevalence } else { 0.0 },
        shifted,
        shift_d: if shifted { shift_draw } else { 0.0 },
        h_lines,
        h_distort,
        flare,
        brightness_factor,
        op_seed,
    }
}

fn truncated_normal(rng: &mut impl Rng, sigma: f64, bound: f64) -> f64 {
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= bound {
            return v;
        }
    }
}

/// Steering label for a camera displaced `d` meters to the left of the
/// recorded pose.
pub fn correct_steering(y: f64, d: f64) -> f64 {
    let delta = (2.0 * y.clamp(0.0, 1.0) - 1.0) * DELTA_MAX;
    let corrected = (delta - (d / RECOVERY_LOOKAHEAD).atan()).clamp(-DELTA_MAX, DELTA_MAX);
    (corrected / DELTA_MAX + 1.0) / 2.0
}

/// Renders the frame from a camera moved `d` meters along the car's left
/// normal and returns it with the corrected label.
pub fn shifted_rerender(scene: &Scene, state: &CarState, y: f64, d: f64, cam: &CameraConfig, light: &LightingState) -> Result<(Image, f64)> {
    if !(d.abs() <= MAX_SHIFT) {
        return Err(Error::invalid(format!("shift {d} outside [-{MAX_SHIFT}, {MAX_SHIFT}]")));
    }
    let mut pose = cam.pose_for(state);
    let offset = state.left_normal() * d;
    pose.position.x += offset.x;
    pose.position.y += offset.y;
    if let FrameQuery::OffWorld { distance } = scene.geometry().frame(pose.position.xy()) {
        return Err(Error::OffWorld { distance });
    }
    Ok((scene.render_pose(&pose, cam, light), correct_steering(y, d)))
}

pub fn brightness(img: &Image, factor: f64) -> Image {
    if factor == 1.0 {
        return img.clone();
    }
    img.map_channels(|v| (v as f64 * factor).round().clamp(0.0, 255.0) as u8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HLine {
    pub row: usize,
    pub thickness: usize,
    pub add: u8,
}

pub fn hline_params(h: usize, seed: u64) -> Vec<HLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=3);
    (0..count)
        .map(|_| HLine {
            row: rng.random_range(0..h.max(1)),
            thickness: rng.random_range(1..=2),
            add: rng.random_range(40..=90),
        })
        .collect()
}

pub fn apply_hlines(img: &Image, lines: &[HLine]) -> Image {
    let mut out = img.clone();
    let stride = 3 * img.w;
    for l in lines {
        for row in l.row..(l.row + l.thickness).min(img.h) {
            for v in &mut out.pixels[row * stride..(row + 1) * stride] {
                *v = v.saturating_add(l.add);
            }
        }
    }
    out
}

/// One to three full-width bright lines at seeded rows.
pub fn add_horizontal_lines(img: &Image, seed: u64) -> Image {
    apply_hlines(img, &hline_params(img.h, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortParams {
    pub amplitude: f64,
    pub wavelength: f64,
    pub phase: f64,
}

impl DistortParams {
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            amplitude: rng.random_range(1.0..=6.0),
            wavelength: rng.random_range(20.0..=60.0),
            phase: rng.random_range(0.0..TAU),
        }
    }

    pub fn row_shift(&self, v: usize) -> i64 {
        (self.amplitude * (TAU * v as f64 / self.wavelength + self.phase).sin()).round() as i64
    }
}

/// Shifts every row sideways by a sinusoid of its index; vacated pixels
/// repeat the edge.
pub fn apply_distort(img: &Image, p: &DistortParams) -> Image {
    let mut out = img.clone();
    let w = img.w as i64;
    for v in 0..img.h {
        let dx = p.row_shift(v);
        if dx == 0 {
            continue;
        }
        let src = img.row(v);
        let dst = &mut out.pixels[v * 3 * img.w..(v + 1) * 3 * img.w];
        for x in 0..w {
            let sx = (x - dx).clamp(0, w - 1) as usize;
            dst[x as usize * 3..x as usize * 3 + 3].copy_from_slice(&src[sx * 3..sx * 3 + 3]);
        }
    }
    out
}

pub fn horizontal_distort(img: &Image, seed: u64) -> Image {
    apply_distort(img, &DistortParams::sample(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ghost {
    pub center: (f64, f64),
    pub radius: f64,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlareParams {
    pub sun: (f64, f64),
    pub sigma: f64,
    pub bloom: f64,
    pub ghosts: Vec<Ghost>,
}

/// Bloom size and ghost placement for a sun at `sun` in a `w x h` frame.
pub fn flare_params(sun: (f64, f64), w: usize, h: usize, seed: u64) -> FlareParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = (w as f64 / 2.0, h as f64 / 2.0);
    let n = rng.random_range(2..=4);
    let ghosts = (0..n)
        .map(|k| {
            // Spread along the sun -> centre -> beyond line.
            let t = 0.35 + 0.45 * k as f64 + rng.random_range(0.0..0.25);
            Ghost {
                center: (sun.0 + t * (center.0 - sun.0), sun.1 + t * (center.1 - sun.1)),
                radius: rng.random_range(3.0..10.0),
                strength: rng.random_range(20.0..55.0),
            }
        })
        .collect();
    FlareParams {
        sun,
        sigma: rng.random_range(10.0..=30.0),
        bloom: rng.random_range(120.0..200.0),
        ghosts,
    }
}

pub fn apply_flare(img: &Image, p: &FlareParams) -> Image {
    let mut out = img.clone();
    let inv = 1.0 / (2.0 * p.sigma * p.sigma);
    let tint = [1.0, 0.92, 0.75];
    for y in 0..img.h {
        for x in 0..img.w {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let r2 = (fx - p.sun.0).powi(2) + (fy - p.sun.1).powi(2);
            let mut add = p.bloom * (-r2 * inv).exp();
            for g in &p.ghosts {
                if (fx - g.center.0).powi(2) + (fy - g.center.1).powi(2) <= g.radius * g.radius {
                    add += g.strength;
                }
            }
            if add < 0.5 {
                continue;
            }
            let i = 3 * (y * img.w + x);
            for (c, t) in tint.iter().enumerate() {
                out.pixels[i + c] = (out.pixels[i + c] as f64 + add * t).round().min(255.0) as u8;
            }
        }
    }
    out
}

/// Bloom and ghost discs for a visible sun; identity otherwise.
pub fn lens_flare(img: &Image, sun_px: Option<(f64, f64)>, seed: u64) -> Image {
    match sun_px {
        Some(sun) => apply_flare(img, &flare_params(sun, img.w, img.h, seed)),
        None => img.clone(),
    }
}

pub const TAG_NAMES: [&str; 6] = ["cyclelight", "shifted", "hlines", "hdistort", "flare", "brightness"];

/// Record of one applied technique and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentTag {
    pub name: String,
    pub params: BTreeMap<String, Value>,
}

impl AugmentTag {
    fn new(name: &str, params: &[(&str, Value)]) -> Self {
        Self {
            name: name.to_owned(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.params
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Dataset(format!("tag {} lacks numeric {key}", self.name)))
    }
}

/// Tags describing `plan`; enough to rebuild it with [`plan_from_tags`].
pub fn plan_tags(plan: &AugmentPlan) -> Vec<AugmentTag> {
    let mut tags = Vec::new();
    if plan.cyclelight {
        tags.push(AugmentTag::new(
            "cyclelight",
            &[
                ("t_day", plan.t_day.into()),
                ("cloud_opacity", plan.cloud_opacity.into()),
                ("cloud_prevalence", plan.cloud_prevalence.into()),
            ],
        ));
    }
    if plan.shifted {
        tags.push(AugmentTag::new("shifted", &[("d", plan.shift_d.into())]));
    }
    let seed = |k| Value::from(plan.op_seed(k));
    if plan.h_lines {
        tags.push(AugmentTag::new("hlines", &[("seed", seed(1))]));
    }
    if plan.h_distort {
        tags.push(AugmentTag::new("hdistort", &[("seed", seed(2))]));
    }
    if plan.flare {
        tags.push(AugmentTag::new("flare", &[("seed", seed(3))]));
    }
    tags.push(AugmentTag::new(
        "brightness",
        &[("factor", plan.brightness_factor.into()), ("op_seed", plan.op_seed.into())],
    ));
    tags
}

pub fn plan_from_tags(tags: &[AugmentTag]) -> Result<AugmentPlan> {
    let mut plan = AugmentPlan::identity();
    for tag in tags {
        match tag.name.as_str() {
            "cyclelight" => {
                plan.cyclelight = true;
                plan.t_day = tag.f64("t_day")?;
                plan.cloud_opacity = tag.f64("cloud_opacity")?;
                plan.cloud_prevalence = tag.f64("cloud_prevalence")?;
            }
            "shifted" => {
                plan.shifted = true;
                plan.shift_d = tag.f64("d")?;
            }
            "hlines" => plan.h_lines = true,
            "hdistort" => plan.h_distort = true,
            "flare" => plan.flare = true,
            "brightness" => {
                plan.brightness_factor = tag.f64("factor")?;
                plan.op_seed = tag
                    .params
                    .get("op_seed")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| Error::Dataset("brightness tag lacks op_seed".into()))?;
            }
            other => return Err(Error::Dataset(format!("unknown augmentation tag {other:?}"))),
        }
    }
    Ok(plan)
}

/// An augmented frame and its label.
#[derive(Debug, Clone)]
pub struct Augmented {
    pub image: Image,
    pub y: f64,
    pub light: LightingState,
    pub tags: Vec<AugmentTag>,
}

/// Renders `state` under `plan` and applies the image operations in a fixed
/// order: brightness, lines, distortion, flare.
pub fn apply_plan(
    scene: &Scene,
    state: &CarState,
    y: f64,
    cam: &CameraConfig,
    base_light: &LightingState,
    plan: &AugmentPlan,
) -> Result<Augmented> {
    let light = plan.lighting(base_light);
    let (mut image, y) = shifted_rerender(scene, state, y, plan.shift_d, cam, &light)?;
    image = brightness(&image, plan.brightness_factor);
    if plan.h_lines {
        image = add_horizontal_lines(&image, plan.op_seed(1));
    }
    if plan.h_distort {
        image = horizontal_distort(&image, plan.op_seed(2));
    }
    if plan.flare {
        let mut pose = cam.pose_for(state);
        let offset = state.left_normal() * plan.shift_d;
        pose.position.x += offset.x;
        pose.position.y += offset.y;
        image = lens_flare(&image, sun_pixel(&pose, cam, &light), plan.op_seed(3));
    }
    Ok(Augmented {
        image,
        y,
        light,
        tags: plan_tags(plan),
    })
}
