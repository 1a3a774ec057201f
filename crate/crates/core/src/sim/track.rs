use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{segments_cross, wrap_angle, Point2};
use crate::{Error, Result};

/// Distance between consecutive centerline stations.
pub const STATION_SPACING: f64 = 0.5;
/// Longitudinal distance between cones along each edge.
pub const CONE_SPACING: f64 = 4.0;

const MAX_ATTEMPTS: u32 = 100;
const MAX_HEADING_RATE: f64 = 15.0 * PI / 180.0;
/// Points farther than this from every centerline segment are off-world.
const WORLD_RADIUS: f64 = 50.0;
/// Minimum separation between non-neighbouring parts of the centerline.
const MIN_CLEARANCE: f64 = 14.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStyle {
    Straight,
    Curvy,
}

impl std::fmt::Display for TrackStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrackStyle::Straight => "straight",
            TrackStyle::Curvy => "curvy",
        })
    }
}

impl std::str::FromStr for TrackStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(TrackStyle::Straight),
            "curvy" => Ok(TrackStyle::Curvy),
            other => Err(Error::invalid(format!("unknown track style {other:?}"))),
        }
    }
}

/// A blue (left) / yellow (right) cone pair. Serialized as
/// `[[lx, ly], [rx, ry], station_index]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(Point2, Point2, usize)", into = "(Point2, Point2, usize)")]
pub struct Gate {
    pub left: Point2,
    pub right: Point2,
    pub station: usize,
}

impl Gate {
    pub fn width(&self) -> f64 {
        self.left.dist(self.right)
    }
}

impl From<(Point2, Point2, usize)> for Gate {
    fn from((left, right, station): (Point2, Point2, usize)) -> Self {
        Self { left, right, station }
    }
}

impl From<Gate> for (Point2, Point2, usize) {
    fn from(g: Gate) -> Self {
        (g.left, g.right, g.station)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub id: String,
    pub centerline: Vec<Point2>,
    /// Track width in meters at each station.
    pub width: Vec<f64>,
    pub gates: Vec<Gate>,
    pub style: TrackStyle,
    pub closed: bool,
    pub seed: u64,
}

impl TrackSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let track: TrackSpec = serde_json::from_str(&text)?;
        track.validate()?;
        Ok(track)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Number of centerline segments (wrapping segment included when closed).
    pub fn segment_count(&self) -> usize {
        if self.closed {
            self.centerline.len()
        } else {
            self.centerline.len().saturating_sub(1)
        }
    }

    pub fn segment(&self, i: usize) -> (Point2, Point2) {
        let n = self.centerline.len();
        (self.centerline[i], self.centerline[(i + 1) % n])
    }

    pub fn length(&self) -> f64 {
        (0..self.segment_count())
            .map(|i| {
                let (a, b) = self.segment(i);
                a.dist(b)
            })
            .sum()
    }

    /// Unit tangent at station `i`.
    pub fn tangent(&self, i: usize) -> Point2 {
        let n = self.centerline.len();
        let (a, b) = if self.closed {
            (self.centerline[(i + n - 1) % n], self.centerline[(i + 1) % n])
        } else {
            (self.centerline[i.saturating_sub(1)], self.centerline[(i + 1).min(n - 1)])
        };
        (b - a).normalized()
    }

    /// Checks every structural invariant of a track.
    pub fn validate(&self) -> Result<()> {
        let n = self.centerline.len();
        if n < 3 || self.width.len() != n {
            return Err(Error::invalid("track needs >= 3 stations and one width per station"));
        }
        if self.centerline.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite centerline point"));
        }
        for i in 0..self.segment_count() {
            let (a, b) = self.segment(i);
            if a.dist(b) > 1.0 + 1e-9 {
                return Err(Error::invalid(format!("station spacing exceeds 1 m at {i}")));
            }
        }
        for (k, g) in self.gates.iter().enumerate() {
            let w = g.width();
            if !(3.0 - 1e-9..=5.0 + 1e-9).contains(&w) {
                return Err(Error::invalid(format!("gate {k} width {w:.3} outside [3, 5] m")));
            }
            let c = self.centerline[g.station];
            let t = self.tangent(g.station);
            if t.cross(g.left - c) <= 0.0 || t.cross(g.right - c) >= 0.0 {
                return Err(Error::invalid(format!("gate {k} cones on the wrong side")));
            }
        }
        if let Some(i) = max_heading_rate_violation(self) {
            return Err(Error::invalid(format!("heading changes too fast at station {i}")));
        }
        if self_intersects(self) {
            return Err(Error::invalid("centerline self-intersects"));
        }
        Ok(())
    }
}

/// Generates an open course.
///
/// `straight` tracks are long straights joined by gentle bends (curvature at
/// most 0.02 1/m); `curvy` tracks alternate straights with tighter arcs. In
/// both styles left and right arcs are balanced.
pub fn generate_track(seed: u64, style: TrackStyle, length: f64, width_range: [f64; 2]) -> Result<TrackSpec> {
    check_args(length, width_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_reason = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let curvature = open_curvature_profile(&mut rng, style, length);
        let centerline = integrate_curvature(&curvature);
        let width = width_profile(&mut rng, centerline.len(), width_range);
        let track = assemble(format!("{style}-{seed}"), centerline, width, style, false, seed);
        match check_generated(&track) {
            Ok(()) => return Ok(track),
            Err(reason) => last_reason = reason,
        }
    }
    Err(Error::TrackGeneration {
        attempts: MAX_ATTEMPTS,
        reason: last_reason,
    })
}

/// Exactly straight open track of constant width along +x.
pub fn straight_line(length: f64, width: f64) -> Result<TrackSpec> {
    check_args(length, [width, width])?;
    let n = (length / STATION_SPACING).round() as usize + 1;
    let centerline = (0..n).map(|i| Point2::new(i as f64 * STATION_SPACING, 0.0)).collect();
    let track = assemble(format!("line-{length}-{width}"), centerline, vec![width; n], TrackStyle::Straight, false, 0);
    track.validate()?;
    Ok(track)
}

/// Generates a closed curvy circuit: a star-shaped loop whose radius is a
/// random sum of harmonics, so the car can lap it indefinitely.
pub fn generate_circuit(seed: u64, length: f64, width_range: [f64; 2]) -> Result<TrackSpec> {
    check_args(length, width_range)?;
    if length < 200.0 {
        return Err(Error::invalid("circuits need at least 200 m"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1c0);
    let mut last_reason = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let harmonics: Vec<(f64, f64, f64)> = (3..=9)
            .map(|k| (k as f64, rng.random_range(0.0..0.09), rng.random_range(0.0..TAU)))
            .collect();
        let radius = |theta: f64| 1.0 + harmonics.iter().map(|&(k, a, ph)| a * (k * theta + ph).cos()).sum::<f64>();
        let dense = 4096;
        let raw: Vec<Point2> = (0..dense)
            .map(|i| {
                let th = TAU * i as f64 / dense as f64;
                Point2::from_angle(th) * radius(th)
            })
            .collect();
        let raw_len: f64 = (0..dense).map(|i| raw[i].dist(raw[(i + 1) % dense])).sum();
        let scale = length / raw_len;
        let scaled: Vec<Point2> = raw.iter().map(|&p| p * scale).collect();
        let n = (length / STATION_SPACING).round() as usize;
        let centerline = resample_closed(&scaled, n);
        let width = width_profile_closed(&mut rng, n, width_range);
        let track = assemble(format!("circuit-{seed}"), centerline, width, TrackStyle::Curvy, true, seed);
        let max_kappa = curvature_estimate(&track).into_iter().fold(0.0f64, |m, k| m.max(k.abs()));
        if max_kappa > 1.0 / 12.0 {
            last_reason = format!("curvature {max_kappa:.3} too tight");
            continue;
        }
        match check_generated(&track) {
            Ok(()) => return Ok(track),
            Err(reason) => last_reason = reason,
        }
    }
    Err(Error::TrackGeneration {
        attempts: MAX_ATTEMPTS,
        reason: last_reason,
    })
}

fn check_args(length: f64, width_range: [f64; 2]) -> Result<()> {
    if !(50.0..=2000.0).contains(&length) {
        return Err(Error::invalid(format!("track length {length} outside [50, 2000] m")));
    }
    let [lo, hi] = width_range;
    if !(lo.is_finite() && hi.is_finite()) || lo < 3.0 || hi > 5.0 || lo > hi {
        return Err(Error::invalid(format!("width range [{lo}, {hi}] not within [3, 5] m")));
    }
    Ok(())
}

fn check_generated(track: &TrackSpec) -> std::result::Result<(), String> {
    track.validate().map_err(|e| e.to_string())?;
    if let Some((i, j)) = clearance_violation(track) {
        return Err(format!("stations {i} and {j} closer than {MIN_CLEARANCE} m"));
    }
    Ok(())
}

/// Per-station curvature for an open track built from straights and arcs.
fn open_curvature_profile(rng: &mut ChaCha8Rng, style: TrackStyle, length: f64) -> Vec<f64> {
    let (straight_len, radius, angle) = match style {
        TrackStyle::Straight => ((30.0, 80.0), (60.0, 150.0), (5.0f64.to_radians(), 25.0f64.to_radians())),
        TrackStyle::Curvy => ((8.0, 35.0), (12.0, 30.0), (40.0f64.to_radians(), 110.0f64.to_radians())),
    };
    // Lead-in straight so every run starts aligned.
    let lead = 15.0;
    let mut pieces: Vec<(f64, f64)> = vec![(lead, 0.0)];
    let mut total = lead;
    let mut arcs: Vec<(f64, f64)> = Vec::new();
    loop {
        let s = rng.random_range(straight_len.0..straight_len.1);
        let r: f64 = rng.random_range(radius.0..radius.1);
        let a: f64 = rng.random_range(angle.0..angle.1);
        let arc_len = r * a;
        if total + s + arc_len + 10.0 > length {
            break;
        }
        total += s + arc_len;
        pieces.push((s, 0.0));
        pieces.push((arc_len, 1.0 / r));
        arcs.push((arc_len, 1.0 / r));
    }
    // Balanced turn directions, shuffled.
    let mut signs: Vec<f64> = (0..arcs.len()).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    if signs.len() % 2 == 1 && rng.random_bool(0.5) {
        signs.iter_mut().for_each(|s| *s = -*s);
    }
    signs.shuffle(rng);
    let mut k = 0;
    for piece in pieces.iter_mut() {
        if piece.1 != 0.0 {
            piece.1 *= signs[k];
            k += 1;
        }
    }
    pieces.push((length - total, 0.0));

    let n = (length / STATION_SPACING).round() as usize + 1;
    let mut kappa = Vec::with_capacity(n);
    let mut piece = 0;
    let mut piece_end = pieces[0].0;
    for i in 0..n {
        let s = i as f64 * STATION_SPACING;
        while s >= piece_end && piece + 1 < pieces.len() {
            piece += 1;
            piece_end += pieces[piece].0;
        }
        kappa.push(pieces[piece].1);
    }
    smooth(&kappa, 10)
}

/// Centered moving average; keeps total turning and softens arc entries.
fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn integrate_curvature(kappa: &[f64]) -> Vec<Point2> {
    let mut pts = Vec::with_capacity(kappa.len());
    let mut p = Point2::new(0.0, 0.0);
    let mut heading = 0.0f64;
    pts.push(p);
    for &k in &kappa[..kappa.len() - 1] {
        let mid_heading = heading + 0.5 * STATION_SPACING * k;
        p = p + Point2::from_angle(mid_heading) * STATION_SPACING;
        heading += STATION_SPACING * k;
        pts.push(p);
    }
    pts
}

/// Width knots every 40 m, linearly interpolated.
fn width_profile(rng: &mut ChaCha8Rng, n: usize, [lo, hi]: [f64; 2]) -> Vec<f64> {
    let knot_every = (40.0 / STATION_SPACING) as usize;
    let knots: Vec<f64> = (0..n / knot_every + 2).map(|_| draw_width(rng, lo, hi)).collect();
    (0..n)
        .map(|i| {
            let k = i / knot_every;
            let t = (i % knot_every) as f64 / knot_every as f64;
            knots[k] * (1.0 - t) + knots[k + 1] * t
        })
        .collect()
}

fn width_profile_closed(rng: &mut ChaCha8Rng, n: usize, [lo, hi]: [f64; 2]) -> Vec<f64> {
    let knots_n = (n as f64 * STATION_SPACING / 40.0).round().max(1.0) as usize;
    let knots: Vec<f64> = (0..knots_n).map(|_| draw_width(rng, lo, hi)).collect();
    (0..n)
        .map(|i| {
            let pos = i as f64 * knots_n as f64 / n as f64;
            let k = pos.floor() as usize % knots_n;
            let t = pos.fract();
            knots[k] * (1.0 - t) + knots[(k + 1) % knots_n] * t
        })
        .collect()
}

fn draw_width(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn resample_closed(pts: &[Point2], n: usize) -> Vec<Point2> {
    let m = pts.len();
    let mut cum = vec![0.0; m + 1];
    for i in 0..m {
        cum[i + 1] = cum[i] + pts[i].dist(pts[(i + 1) % m]);
    }
    let total = cum[m];
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let s = total * i as f64 / n as f64;
        while cum[j + 1] < s {
            j += 1;
        }
        let t = (s - cum[j]) / (cum[j + 1] - cum[j]);
        out.push(pts[j] + (pts[(j + 1) % m] - pts[j]) * t);
    }
    out
}

fn assemble(id: String, centerline: Vec<Point2>, width: Vec<f64>, style: TrackStyle, closed: bool, seed: u64) -> TrackSpec {
    let mut track = TrackSpec {
        id,
        centerline,
        width,
        gates: Vec::new(),
        style,
        closed,
        seed,
    };
    let every = (CONE_SPACING / STATION_SPACING).round() as usize;
    let n = track.centerline.len();
    let last = if closed { n - n % every } else { n };
    track.gates = (0..last)
        .step_by(every)
        .map(|i| {
            let c = track.centerline[i];
            let normal = track.tangent(i).perp();
            let half = track.width[i] / 2.0;
            Gate {
                left: c + normal * half,
                right: c - normal * half,
                station: i,
            }
        })
        .collect();
    track
}

/// Signed curvature per station from discrete heading changes.
fn curvature_estimate(track: &TrackSpec) -> Vec<f64> {
    let n = track.centerline.len();
    let seg = track.segment_count();
    let headings: Vec<f64> = (0..seg)
        .map(|i| {
            let (a, b) = track.segment(i);
            (b.y - a.y).atan2(b.x - a.x)
        })
        .collect();
    let mut out = vec![0.0; n];
    let pairs = if track.closed { seg } else { seg.saturating_sub(1) };
    for i in 0..pairs {
        let j = (i + 1) % seg;
        let (a, b) = track.segment(i);
        let ds = 0.5 * (a.dist(b) + {
            let (c, d) = track.segment(j);
            c.dist(d)
        });
        out[j] = wrap_angle(headings[j] - headings[i]) / ds;
    }
    out
}

fn max_heading_rate_violation(track: &TrackSpec) -> Option<usize> {
    curvature_estimate(track)
        .iter()
        .position(|k| k.abs() > MAX_HEADING_RATE + 1e-9)
}

/// Counts left and right turn arcs: maximal runs of same-signed curvature
/// above 0.015 1/m that last at least 2 m.
pub fn turn_counts(track: &TrackSpec) -> (usize, usize) {
    let kappa = curvature_estimate(track);
    let min_run = (2.0 / STATION_SPACING) as usize;
    let (mut left, mut right) = (0, 0);
    let mut run_sign = 0i8;
    let mut run_len = 0usize;
    let mut flush = |sign: i8, len: usize| {
        if len >= min_run {
            if sign > 0 {
                left += 1;
            } else if sign < 0 {
                right += 1;
            }
        }
    };
    for k in kappa {
        let sign = if k > 0.015 {
            1
        } else if k < -0.015 {
            -1
        } else {
            0
        };
        if sign == run_sign {
            run_len += 1;
        } else {
            flush(run_sign, run_len);
            run_sign = sign;
            run_len = 1;
        }
    }
    flush(run_sign, run_len);
    (left, right)
}

fn self_intersects(track: &TrackSpec) -> bool {
    let segs = track.segment_count();
    let grid = SegmentGrid::build(track, 5.0);
    for i in 0..segs {
        let (a0, a1) = track.segment(i);
        for j in grid.near(a0, 0.0).chain(grid.near(a1, 0.0)) {
            if j <= i + 1 || (track.closed && i == 0 && j == segs - 1) {
                continue;
            }
            let (b0, b1) = track.segment(j);
            if segments_cross(a0, a1, b0, b1) {
                return true;
            }
        }
    }
    false
}

fn clearance_violation(track: &TrackSpec) -> Option<(usize, usize)> {
    let n = track.centerline.len();
    let neighbourhood = (3.0 * MIN_CLEARANCE / STATION_SPACING) as usize;
    let grid = SegmentGrid::build(track, MIN_CLEARANCE);
    for i in 0..n {
        let p = track.centerline[i];
        for j in grid.near(p, MIN_CLEARANCE) {
            let gap = if track.closed {
                let d = i.abs_diff(j);
                d.min(n - d)
            } else {
                i.abs_diff(j)
            };
            if gap > neighbourhood && j < n && p.dist(track.centerline[j]) < MIN_CLEARANCE {
                return Some((i, j));
            }
        }
    }
    None
}

/// Uniform grid over segment bounding boxes.
#[derive(Debug, Clone)]
struct SegmentGrid {
    cell: f64,
    origin: Point2,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

impl SegmentGrid {
    fn build(track: &TrackSpec, cell: f64) -> Self {
        let (mut lo, mut hi) = (track.centerline[0], track.centerline[0]);
        for p in &track.centerline {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let origin = lo - Point2::new(cell, cell);
        let cols = ((hi.x - origin.x) / cell).ceil() as usize + 2;
        let rows = ((hi.y - origin.y) / cell).ceil() as usize + 2;
        let mut cells = vec![Vec::new(); cols * rows];
        for i in 0..track.segment_count() {
            let (a, b) = track.segment(i);
            let (c0, r0) = Self::cell_of(origin, cell, Point2::new(a.x.min(b.x), a.y.min(b.y)));
            let (c1, r1) = Self::cell_of(origin, cell, Point2::new(a.x.max(b.x), a.y.max(b.y)));
            for r in r0..=r1.min(rows - 1) {
                for c in c0..=c1.min(cols - 1) {
                    cells[r * cols + c].push(i as u32);
                }
            }
        }
        Self {
            cell,
            origin,
            cols,
            rows,
            cells,
        }
    }

    fn cell_of(origin: Point2, cell: f64, p: Point2) -> (usize, usize) {
        (
            ((p.x - origin.x) / cell).floor().max(0.0) as usize,
            ((p.y - origin.y) / cell).floor().max(0.0) as usize,
        )
    }

    /// Segment ids whose cells intersect the square of half-size `radius`
    /// around `p` (may contain duplicates).
    fn near(&self, p: Point2, radius: f64) -> impl Iterator<Item = usize> + '_ {
        let lo = p - Point2::new(radius, radius);
        let hi = p + Point2::new(radius, radius);
        let (c0, r0) = Self::cell_of(self.origin, self.cell, lo);
        let (c1, r1) = Self::cell_of(self.origin, self.cell, hi);
        let (c1, r1) = (c1.min(self.cols - 1), r1.min(self.rows - 1));
        (r0.min(r1 + 1)..=r1)
            .flat_map(move |r| (c0.min(c1 + 1)..=c1).map(move |c| r * self.cols + c))
            .flat_map(move |idx| self.cells[idx].iter().map(|&s| s as usize))
    }
}

/// Track-relative coordinates of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackFrame {
    /// Arc length along the centerline.
    pub station: f64,
    /// Signed lateral offset, positive to the left of the tangent.
    pub lateral: f64,
    pub local_heading: f64,
    /// Track width at the projection.
    pub width: f64,
    pub segment: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameQuery {
    OnWorld(TrackFrame),
    OffWorld { distance: f64 },
}

impl FrameQuery {
    pub fn frame(self) -> Option<TrackFrame> {
        match self {
            FrameQuery::OnWorld(f) => Some(f),
            FrameQuery::OffWorld { .. } => None,
        }
    }
}

/// Nearest-segment projection by linear scan over every segment.
pub fn track_frame(track: &TrackSpec, p: Point2) -> FrameQuery {
    let mut best = (f64::INFINITY, 0usize, 0.0f64);
    for i in 0..track.segment_count() {
        let (a, b) = track.segment(i);
        let (d2, t) = project_on_segment(a, b, p);
        if d2 < best.0 {
            best = (d2, i, t);
        }
    }
    let station_s = cumulative_stations(track);
    finish_frame(track, &station_s, p, best)
}

fn cumulative_stations(track: &TrackSpec) -> Vec<f64> {
    let mut s = Vec::with_capacity(track.segment_count() + 1);
    s.push(0.0);
    for i in 0..track.segment_count() {
        let (a, b) = track.segment(i);
        s.push(s[i] + a.dist(b));
    }
    s
}

fn project_on_segment(a: Point2, b: Point2, p: Point2) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = a + ab * t;
    let d = p - q;
    (d.dot(d), t)
}

fn finish_frame(track: &TrackSpec, station_s: &[f64], p: Point2, (d2, i, t): (f64, usize, f64)) -> FrameQuery {
    let distance = d2.sqrt();
    if !distance.is_finite() || distance > WORLD_RADIUS {
        return FrameQuery::OffWorld { distance };
    }
    let (a, b) = track.segment(i);
    let dir = (b - a).normalized();
    let q = a + (b - a) * t;
    let n = track.centerline.len();
    let width = track.width[i] * (1.0 - t) + track.width[(i + 1) % n] * t;
    FrameQuery::OnWorld(TrackFrame {
        station: station_s[i] + t * (station_s[i + 1] - station_s[i]),
        lateral: dir.cross(p - q),
        local_heading: dir.y.atan2(dir.x),
        width,
        segment: i,
    })
}

/// Precomputed track geometry for repeated queries.
#[derive(Debug, Clone)]
pub struct TrackGeometry {
    track: TrackSpec,
    station_s: Vec<f64>,
    grid: SegmentGrid,
}

impl TrackGeometry {
    pub fn new(track: &TrackSpec) -> Self {
        Self {
            track: track.clone(),
            station_s: cumulative_stations(track),
            grid: SegmentGrid::build(track, 8.0),
        }
    }

    pub fn track(&self) -> &TrackSpec {
        &self.track
    }

    pub fn length(&self) -> f64 {
        *self.station_s.last().unwrap_or(&0.0)
    }

    pub fn station_s(&self, i: usize) -> f64 {
        self.station_s[i]
    }

    /// Same result as [`track_frame`], using the spatial grid first and
    /// falling back to a full scan when nothing is nearby.
    pub fn frame(&self, p: Point2) -> FrameQuery {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        let mut radius = self.grid.cell;
        while radius <= 2.0 * self.grid.cell {
            for i in self.grid.near(p, radius) {
                let (a, b) = self.track.segment(i);
                let (d2, t) = project_on_segment(a, b, p);
                if d2 < best.0 || (d2 == best.0 && i < best.1) {
                    best = (d2, i, t);
                }
            }
            // A hit inside the searched square is provably the nearest.
            if best.0.sqrt() <= radius {
                return finish_frame(&self.track, &self.station_s, p, best);
            }
            radius *= 2.0;
        }
        track_frame(&self.track, p)
    }

    /// Nearest-segment query that hill-climbs from segment `hint`; meant for
    /// spatially coherent queries such as neighbouring pixels. Falls back to
    /// [`TrackGeometry::frame`] when the local minimum is far from the track.
    pub fn frame_near(&self, p: Point2, hint: usize) -> FrameQuery {
        let (d2, i, t) = self.climb(p, hint);
        if d2 > 36.0 {
            return self.frame(p);
        }
        finish_frame(&self.track, &self.station_s, p, (d2, i, t))
    }

    /// Whether `p` lies on the drivable surface, using the same hill-climb
    /// as [`TrackGeometry::frame_near`].
    pub fn on_surface_near(&self, p: Point2, hint: usize) -> bool {
        let (d2, i, t) = self.climb(p, hint);
        if d2 > 36.0 {
            return match self.frame(p) {
                FrameQuery::OnWorld(f) => f.lateral.abs() <= f.width / 2.0,
                FrameQuery::OffWorld { .. } => false,
            };
        }
        let n = self.track.centerline.len();
        let half = 0.5 * (self.track.width[i] * (1.0 - t) + self.track.width[(i + 1) % n] * t);
        d2 <= half * half
    }

    fn climb(&self, p: Point2, hint: usize) -> (f64, usize, f64) {
        let segs = self.track.segment_count();
        let closed = self.track.closed;
        let eval = |i: usize| {
            let (a, b) = self.track.segment(i);
            project_on_segment(a, b, p)
        };
        let mut i = hint.min(segs - 1);
        let mut best = eval(i);
        loop {
            let prev = if i > 0 { Some(i - 1) } else if closed { Some(segs - 1) } else { None };
            let next = if i + 1 < segs { Some(i + 1) } else if closed { Some(0) } else { None };
            let mut moved = false;
            for j in [prev, next].into_iter().flatten() {
                let c = eval(j);
                if c.0 < best.0 {
                    best = c;
                    i = j;
                    moved = true;
                    break;
                }
            }
            if !moved {
                break;
            }
        }
        (best.0, i, best.1)
    }

    /// Centerline point, tangent heading and width at arc length `s`
    /// (wrapped on closed tracks, clamped on open ones).
    pub fn at_station(&self, s: f64) -> (Point2, f64, f64) {
        let total = self.length();
        let s = if self.track.closed {
            s.rem_euclid(total)
        } else {
            s.clamp(0.0, total)
        };
        let i = match self.station_s.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.track.segment_count() - 1),
            Err(i) => i.saturating_sub(1).min(self.track.segment_count() - 1),
        };
        let (a, b) = self.track.segment(i);
        let seg_len = self.station_s[i + 1] - self.station_s[i];
        let t = if seg_len > 0.0 { ((s - self.station_s[i]) / seg_len).clamp(0.0, 1.0) } else { 0.0 };
        let n = self.track.centerline.len();
        let width = self.track.width[i] * (1.0 - t) + self.track.width[(i + 1) % n] * t;
        let dir = b - a;
        (a + dir * t, dir.y.atan2(dir.x), width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_arguments() {
        assert!(generate_track(1, TrackStyle::Straight, 40.0, [3.0, 5.0]).is_err());
        assert!(generate_track(1, TrackStyle::Straight, 2500.0, [3.0, 5.0]).is_err());
        assert!(generate_track(1, TrackStyle::Straight, 200.0, [2.5, 5.0]).is_err());
        assert!(generate_track(1, TrackStyle::Straight, 200.0, [3.0, 5.5]).is_err());
        assert!(generate_track(1, TrackStyle::Straight, 200.0, [4.0, 3.5]).is_err());
    }

    #[test]
    fn straight_style_is_gentle() {
        for seed in 0..5 {
            let t = generate_track(seed, TrackStyle::Straight, 600.0, [3.0, 5.0]).unwrap();
            let max = curvature_estimate(&t).into_iter().fold(0.0f64, |m, k| m.max(k.abs()));
            assert!(max <= 0.02, "seed {seed}: curvature {max}");
        }
    }

    #[test]
    fn cones_every_four_meters() {
        let t = generate_track(5, TrackStyle::Curvy, 300.0, [3.0, 5.0]).unwrap();
        for w in t.gates.windows(2) {
            assert_eq!(w[1].station - w[0].station, 8);
        }
    }

    #[test]
    fn left_normal_offset_is_positive_lateral() {
        let t = generate_track(9, TrackStyle::Curvy, 300.0, [3.0, 5.0]).unwrap();
        for i in (20..t.centerline.len() - 20).step_by(37) {
            let p = t.centerline[i] + t.tangent(i).perp() * 1.0;
            let f = track_frame(&t, p).frame().unwrap();
            assert!((f.lateral - 1.0).abs() < 1e-2, "station {i}: {}", f.lateral);
        }
    }

    #[test]
    fn far_points_are_off_world() {
        let t = generate_track(2, TrackStyle::Straight, 100.0, [3.0, 5.0]).unwrap();
        assert!(matches!(track_frame(&t, Point2::new(0.0, 80.0)), FrameQuery::OffWorld { .. }));
    }

    #[test]
    fn circuit_is_closed_and_valid() {
        let t = generate_circuit(4, 1000.0, [3.0, 5.0]).unwrap();
        assert!(t.closed);
        t.validate().unwrap();
        assert!((t.length() - 1000.0).abs() < 1.0);
        let geo = TrackGeometry::new(&t);
        let (p, _, _) = geo.at_station(geo.length() + 3.0);
        let (q, _, _) = geo.at_station(3.0);
        assert!(p.dist(q) < 1e-6);
    }
}
