//! Frame-to-steering inference: ROI crop, normalization, forward pass,
//! benchmarking and the steering overlay.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Manifest;
use crate::nn::{forward, normalize_into, Batch, Mode, ModelSpec, Tensor, TrainSet, Weights};
use crate::render::Image;
use crate::{Error, Result};

pub const FRAME_W: usize = 320;
pub const FRAME_H: usize = 180;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl RoiSpec {
    pub const DEFAULT: RoiSpec = RoiSpec { x0: 60, y0: 90, w: 200, h: 66 };
}

impl Default for RoiSpec {
    fn default() -> Self {
        Self::DEFAULT
    }
}

const ROI: RoiSpec = RoiSpec::DEFAULT;
const ROI_LEN: usize = ROI.w * ROI.h * 3;

fn check_frame(frame: &Image) -> Result<()> {
    if frame.w != FRAME_W || frame.h != FRAME_H || frame.pixels.len() != FRAME_W * FRAME_H * 3 {
        return Err(Error::Shape {
            layer: "frame".into(),
            expected: format!("{FRAME_W}x{FRAME_H}"),
            got: format!("{}x{}", frame.w, frame.h),
        });
    }
    Ok(())
}

/// Copies the ROI bytes of a frame, row by row.
pub fn crop_roi(frame: &Image) -> Result<Vec<u8>> {
    check_frame(frame)?;
    let mut out = Vec::with_capacity(ROI_LEN);
    for y in ROI.y0..ROI.y0 + ROI.h {
        out.extend_from_slice(&frame.row(y)[ROI.x0 * 3..(ROI.x0 + ROI.w) * 3]);
    }
    Ok(out)
}

/// Reference path: converts the whole frame to floats, then crops.
pub fn preprocess_naive(frame: &Image) -> Result<Tensor<f32>> {
    check_frame(frame)?;
    let full: Vec<f32> = frame.pixels.iter().map(|&v| v as f32 / 127.5 - 1.0).collect();
    let mut out = Vec::new();
    for y in ROI.y0..ROI.y0 + ROI.h {
        let start = (y * FRAME_W + ROI.x0) * 3;
        out.extend_from_slice(&full[start..start + ROI.w * 3]);
    }
    Tensor::from_vec(&[ROI.h, ROI.w, 3], out)
}

/// Crops first and normalizes only the ROI, into a single allocation.
pub fn preprocess_optimized(frame: &Image) -> Result<Tensor<f32>> {
    check_frame(frame)?;
    let mut out = vec![0.0f32; ROI_LEN];
    preprocess_into(frame, &mut out);
    Tensor::from_vec(&[ROI.h, ROI.w, 3], out)
}

fn preprocess_into(frame: &Image, out: &mut [f32]) {
    let row_len = ROI.w * 3;
    for (r, chunk) in out.chunks_exact_mut(row_len).enumerate() {
        let src = &frame.row(ROI.y0 + r)[ROI.x0 * 3..ROI.x0 * 3 + row_len];
        normalize_into(src, chunk);
    }
}

/// Model architecture and eval-mode weights.
#[derive(Debug, Clone)]
pub struct Policy {
    pub spec: ModelSpec,
    pub weights: Weights<f32>,
}

impl Policy {
    pub fn new(spec: ModelSpec, weights: Weights<f32>) -> Result<Self> {
        weights.check(&spec)?;
        Ok(Self { spec, weights })
    }

    pub fn load(path: impl AsRef<Path>, spec: ModelSpec) -> Result<Self> {
        let weights = crate::nn::load_weights(path.as_ref(), &spec)?;
        Ok(Self { spec, weights })
    }
}

fn predict(policy: &Policy, input: &[f32], state: Option<[f32; 4]>) -> Result<f64> {
    let state = if policy.spec.use_car_state {
        Some(state.ok_or_else(|| Error::invalid("model expects car-state input"))?)
    } else {
        None
    };
    let batch = Batch::new(input, state.as_ref().map(|s| &s[..]), 1);
    let out = forward(&policy.spec, &policy.weights, &batch, Mode::Eval)?;
    Ok(out[0] as f64)
}

/// Steering for one camera frame. `state` is required by car-state models
/// and ignored otherwise.
pub fn infer_frame(policy: &Policy, frame: &Image, state: Option<[f32; 4]>) -> Result<f64> {
    let input = preprocess_optimized(frame)?;
    predict(policy, &input.data, state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Naive,
    Optimized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub variant: Variant,
    pub n_iterations: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p99_s: f64,
}

impl BenchReport {
    pub fn fps(&self) -> f64 {
        1.0 / self.mean_s
    }
}

const WARMUP: usize = 10;

fn check_bench_args(frames: &[Image], n: usize) -> Result<()> {
    if n < 10 {
        return Err(Error::invalid(format!("bench needs n >= 10, got {n}")));
    }
    if frames.is_empty() {
        return Err(Error::invalid("bench needs at least one frame"));
    }
    Ok(())
}

fn run_variant(policy: &Policy, frame: &Image, variant: Variant) -> Result<f64> {
    let state = policy.spec.use_car_state.then_some([0.5, 0.5, 0.0, 0.0]);
    let input = match variant {
        Variant::Naive => preprocess_naive(frame)?,
        Variant::Optimized => preprocess_optimized(frame)?,
    };
    predict(policy, &input.data, state)
}

fn timed(policy: &Policy, frame: &Image, variant: Variant) -> Result<f64> {
    let t0 = Instant::now();
    std::hint::black_box(run_variant(policy, frame, variant)?);
    Ok(t0.elapsed().as_secs_f64().max(1e-9))
}

fn summarize(variant: Variant, mut times: Vec<f64>) -> BenchReport {
    let n = times.len();
    let mean_s = times.iter().sum::<f64>() / n as f64;
    times.sort_by(f64::total_cmp);
    let median_s = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    let p99_s = times[((0.99 * n as f64).ceil() as usize).clamp(1, n) - 1];
    BenchReport {
        variant,
        n_iterations: n,
        mean_s,
        median_s,
        p99_s,
    }
}

/// Times preprocessing plus the forward pass per frame, cycling through
/// `frames`.
pub fn bench(policy: &Policy, frames: &[Image], variant: Variant, n: usize) -> Result<BenchReport> {
    check_bench_args(frames, n)?;
    for i in 0..WARMUP {
        run_variant(policy, &frames[i % frames.len()], variant)?;
    }
    let mut times = Vec::with_capacity(n);
    for i in 0..n {
        times.push(timed(policy, &frames[i % frames.len()], variant)?);
    }
    Ok(summarize(variant, times))
}

/// Benchmarks both variants with alternating iterations, so clock drift and
/// background load fall on both equally. Returns (naive, optimized).
pub fn bench_pair(policy: &Policy, frames: &[Image], n: usize) -> Result<(BenchReport, BenchReport)> {
    check_bench_args(frames, n)?;
    for i in 0..WARMUP {
        run_variant(policy, &frames[i % frames.len()], Variant::Naive)?;
        run_variant(policy, &frames[i % frames.len()], Variant::Optimized)?;
    }
    let mut naive = Vec::with_capacity(n);
    let mut opt = Vec::with_capacity(n);
    for i in 0..n {
        let frame = &frames[i % frames.len()];
        // swap the order each iteration so neither variant always runs on a warm cache
        if i % 2 == 0 {
            naive.push(timed(policy, frame, Variant::Naive)?);
            opt.push(timed(policy, frame, Variant::Optimized)?);
        } else {
            opt.push(timed(policy, frame, Variant::Optimized)?);
            naive.push(timed(policy, frame, Variant::Naive)?);
        }
    }
    Ok((summarize(Variant::Naive, naive), summarize(Variant::Optimized, opt)))
}

pub const OVERLAY_ORIGIN: (f64, f64) = (160.0, 179.5);
pub const OVERLAY_LENGTH: f64 = 60.0;
pub const OVERLAY_HALF_WIDTH: f64 = 1.0;
const BLUE: [u8; 3] = [0, 0, 255];

/// End point of the overlay line for steering `y`; larger `y` leans left.
pub fn overlay_end(y: f64) -> (f64, f64) {
    let angle = (2.0 * y.clamp(0.0, 1.0) - 1.0) * std::f64::consts::FRAC_PI_4;
    let (x0, y0) = OVERLAY_ORIGIN;
    (x0 - OVERLAY_LENGTH * angle.sin(), y0 - OVERLAY_LENGTH * angle.cos())
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Draws the predicted steering as a blue line rising from the bottom
/// center of the frame. Pixels are painted when their center lies within
/// one pixel of the segment.
pub fn overlay_steering(frame: &Image, y: f64) -> Image {
    let mut out = frame.clone();
    let a = OVERLAY_ORIGIN;
    let b = overlay_end(y);
    let pad = OVERLAY_HALF_WIDTH + 1.0;
    let xs = (a.0.min(b.0) - pad).max(0.0) as usize..((a.0.max(b.0) + pad).ceil() as usize).min(frame.w);
    let ys = (a.1.min(b.1) - pad).max(0.0) as usize..((a.1.max(b.1) + pad).ceil() as usize).min(frame.h);
    for py in ys {
        for px in xs.clone() {
            if segment_distance((px as f64 + 0.5, py as f64 + 0.5), a, b) <= OVERLAY_HALF_WIDTH {
                out.put(px, py, BLUE);
            }
        }
    }
    out
}

/// Loads a recorded session or mix as training data.
pub fn load_train_set(manifest_dir: impl AsRef<Path>) -> Result<TrainSet> {
    let manifest = Manifest::load(manifest_dir)?;
    let mut set = TrainSet::new();
    for meta in &manifest.samples {
        let frame = manifest.read_image(meta)?;
        let roi = crop_roi(&frame)?;
        set.push(&roi, meta.state_input(manifest.info.v_max), meta.y_label)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roi_is_inside_the_frame() {
        assert!(ROI.x0 + ROI.w <= FRAME_W && ROI.y0 + ROI.h <= FRAME_H);
        assert_eq!((ROI.w, ROI.h), (200, 66));
    }

    #[test]
    fn wrong_frame_size_is_rejected() {
        let small = Image::new(200, 66);
        assert!(preprocess_naive(&small).is_err());
        assert!(preprocess_optimized(&small).is_err());
        assert!(crop_roi(&small).is_err());
    }
}
