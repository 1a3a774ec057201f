use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::camera::{focal_px, project, CamPose, CameraConfig, Projection};
use super::image::{Image, Rgb};
use super::light::LightingState;
use crate::geom::{Point2, Point3};
use crate::sim::{CarState, TrackGeometry, TrackSpec};

pub const CONE_HEIGHT: f64 = 0.325;
const CONE_HALF_BASE: f64 = 0.114;
const DRAW_DISTANCE: f64 = 60.0;
const HAZE_DISTANCE: f64 = 140.0;

const BLUE_CONE: [f64; 3] = [25.0, 60.0, 205.0];
const YELLOW_CONE: [f64; 3] = [240.0, 200.0, 20.0];
const ASPHALT: [f64; 3] = [92.0, 92.0, 96.0];
const GRASS: [f64; 3] = [96.0, 124.0, 62.0];
const SKY_HORIZON: [f64; 3] = [185.0, 205.0, 230.0];
const SKY_ZENITH: [f64; 3] = [95.0, 145.0, 215.0];
const HILL: [f64; 3] = [110.0, 120.0, 105.0];

#[derive(Debug, Clone, Copy)]
struct Cone {
    base: Point2,
    color: [f64; 3],
}

/// Vertical quad standing on the ground (ad sign or tire wall face).
#[derive(Debug, Clone, Copy)]
struct Prop {
    a: Point2,
    b: Point2,
    bottom: f64,
    top: f64,
    color: [f64; 3],
}

/// Coarse on/off-track classification of the ground in 1 m cells. Cells
/// straddling an edge keep the nearest segment as a hint for an exact query.
#[derive(Debug, Clone)]
struct SurfaceGrid {
    origin: Point2,
    cols: usize,
    rows: usize,
    /// `OFF`, `ON`, or a segment index for edge cells.
    cells: Vec<u32>,
}

const CELL: f64 = 1.0;
const OFF: u32 = u32::MAX;
const ON: u32 = u32::MAX - 1;

impl SurfaceGrid {
    fn build(geo: &TrackGeometry) -> Self {
        let track = geo.track();
        let margin = 5.0;
        let (mut lo, mut hi) = (track.centerline[0], track.centerline[0]);
        for p in &track.centerline {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let origin = lo - Point2::new(margin, margin);
        let cols = ((hi.x - lo.x + 2.0 * margin) / CELL).ceil() as usize + 1;
        let rows = ((hi.y - lo.y + 2.0 * margin) / CELL).ceil() as usize + 1;
        let mut best = vec![(f64::INFINITY, OFF); cols * rows];
        let half_diag = CELL * std::f64::consts::FRAC_1_SQRT_2;
        let n = track.centerline.len();
        for i in 0..track.segment_count() {
            let (a, b) = track.segment(i);
            let reach = track.width[i].max(track.width[(i + 1) % n]) / 2.0 + 2.0 * CELL;
            let c0 = (((a.x.min(b.x) - reach - origin.x) / CELL).floor().max(0.0)) as usize;
            let c1 = (((a.x.max(b.x) + reach - origin.x) / CELL).ceil() as usize).min(cols - 1);
            let r0 = (((a.y.min(b.y) - reach - origin.y) / CELL).floor().max(0.0)) as usize;
            let r1 = (((a.y.max(b.y) + reach - origin.y) / CELL).ceil() as usize).min(rows - 1);
            let ab = b - a;
            let len2 = ab.dot(ab);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let p = origin + Point2::new((c as f64 + 0.5) * CELL, (r as f64 + 0.5) * CELL);
                    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
                    let d = p.dist(a + ab * t);
                    let slot = &mut best[r * cols + c];
                    if d < slot.0 {
                        *slot = (d, i as u32);
                    }
                }
            }
        }
        let cells = best
            .iter()
            .map(|&(d, seg)| {
                if seg == OFF {
                    return OFF;
                }
                let i = seg as usize;
                let half = track.width[i].min(track.width[(i + 1) % n]) / 2.0;
                let half_max = track.width[i].max(track.width[(i + 1) % n]) / 2.0;
                if d < half - half_diag - 0.05 {
                    ON
                } else if d > half_max + half_diag + 0.05 {
                    OFF
                } else {
                    seg
                }
            })
            .collect();
        Self { origin, cols, rows, cells }
    }

    fn on_track(&self, geo: &TrackGeometry, p: Point2) -> bool {
        let c = (p.x - self.origin.x) / CELL;
        let r = (p.y - self.origin.y) / CELL;
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            return false;
        }
        match self.cells[r as usize * self.cols + c as usize] {
            OFF => false,
            ON => true,
            seg => geo.on_surface_near(p, seg as usize),
        }
    }
}

/// Static world content for one track and dressing seed.
#[derive(Debug, Clone)]
pub struct Scene {
    geo: TrackGeometry,
    surface: SurfaceGrid,
    cones: Vec<Cone>,
    props: Vec<Prop>,
    hills: Vec<(f64, f64, f64)>,
    cloud_seed: u64,
}

impl Scene {
    pub fn new(track: &TrackSpec, seed: u64) -> Self {
        let geo = TrackGeometry::new(track);
        let mut cones = Vec::with_capacity(2 * track.gates.len());
        for g in &track.gates {
            cones.push(Cone { base: g.left, color: BLUE_CONE });
            cones.push(Cone { base: g.right, color: YELLOW_CONE });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ track.seed.rotate_left(17) ^ 0xd1e5_5ed0);
        let mut props = Vec::new();
        let mut s = 20.0;
        while s < geo.length() - 10.0 {
            let roll: f64 = rng.random();
            if roll < 0.45 {
                let (c, heading, width) = geo.at_station(s);
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let normal = Point2::from_angle(heading).perp() * side;
                let tangent = Point2::from_angle(heading);
                let offset = width / 2.0 + rng.random_range(2.5..5.0);
                let anchor = c + normal * offset;
                let prop = if roll < 0.25 {
                    let half = rng.random_range(1.0..1.6);
                    let color = [
                        rng.random_range(30.0..250.0),
                        rng.random_range(30.0..250.0),
                        rng.random_range(30.0..250.0),
                    ];
                    Prop {
                        a: anchor - tangent * half,
                        b: anchor + tangent * half,
                        bottom: 0.3,
                        top: rng.random_range(1.1..1.6),
                        color,
                    }
                } else {
                    let half = rng.random_range(1.5..4.0);
                    Prop {
                        a: anchor - tangent * half,
                        b: anchor + tangent * half,
                        bottom: 0.0,
                        top: 0.6,
                        color: [32.0, 32.0, 34.0],
                    }
                };
                props.push(prop);
            }
            s += rng.random_range(15.0..40.0);
        }
        let hills = (1..=4)
            .map(|k| (k as f64 * 2.0 + 1.0, rng.random_range(0.004..0.018), rng.random_range(0.0..TAU)))
            .collect();
        Self {
            surface: SurfaceGrid::build(&geo),
            geo,
            cones,
            props,
            hills,
            cloud_seed: rng.random(),
        }
    }

    pub fn geometry(&self) -> &TrackGeometry {
        &self.geo
    }

    pub fn render(&self, state: &CarState, cam: &CameraConfig, light: &LightingState) -> Image {
        self.render_pose(&cam.pose_for(state), cam, light)
    }

    /// Renders the frame seen from an explicit camera pose.
    pub fn render_pose(&self, pose: &CamPose, cam: &CameraConfig, light: &LightingState) -> Image {
        let (w, h) = (cam.image_w, cam.image_h);
        let mut img = Image::new(w, h);
        let tint = kelvin_tint(light.color_temp);
        let gain = [tint[0] * light.intensity, tint[1] * light.intensity, tint[2] * light.intensity];
        let sun = sun_direction(light);
        let (f, r, up) = pose.basis();
        let fp = focal_px(cam);
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);

        // Azimuth and hill silhouette per column, taken along the horizon.
        let flat_f = Point2::new(f.x, f.y).normalized();
        let flat_r = Point2::new(r.x, r.y);
        let columns: Vec<(f64, f64)> = (0..w)
            .map(|x| {
                let d = flat_f + flat_r * ((x as f64 + 0.5 - cx) / fp);
                let az = d.y.atan2(d.x);
                let hill = 0.012 + self.hills.iter().map(|&(k, a, ph)| a * (0.5 + 0.5 * (k * az + ph).sin())).sum::<f64>();
                (az, hill)
            })
            .collect();
        for y in 0..h {
            let yc = (y as f64 + 0.5 - cy) / fp;
            for x in 0..w {
                let xc = (x as f64 + 0.5 - cx) / fp;
                let ray = f + r * xc - up * yc;
                let len = ray.dot(ray).sqrt();
                let base = if ray.z < -1e-9 {
                    let t = -pose.position.z / ray.z;
                    let dist = t * len;
                    let ground = (pose.position + ray * t).xy();
                    let col = if dist < HAZE_DISTANCE && self.surface.on_track(&self.geo, ground) {
                        ASPHALT
                    } else {
                        GRASS
                    };
                    let haze = (dist / (2.0 * HAZE_DISTANCE)).min(1.0).sqrt();
                    let lit = mul(col, gain);
                    let sky = mul(SKY_HORIZON, gain);
                    lerp(lit, sky, haze)
                } else {
                    self.sky_color(ray * (1.0 / len), columns[x], sun, light, gain)
                };
                img.put(x, y, to_rgb(base));
            }
        }

        if light.sun_elevation > 0.02 {
            self.draw_shadows(&mut img, pose, cam, light);
        }
        self.draw_objects(&mut img, pose, cam, gain);
        img
    }

    fn sky_color(&self, dir: Point3, (az, hill): (f64, f64), sun: Option<Point3>, light: &LightingState, gain: [f64; 3]) -> [f64; 3] {
        let elev = dir.z.clamp(-1.0, 1.0).asin();
        if elev < hill {
            return mul(HILL, gain);
        }
        let t = (elev / 0.6).clamp(0.0, 1.0);
        let mut c = mul(lerp(SKY_HORIZON, SKY_ZENITH, t), gain);
        if light.cloud_prevalence > 0.0 {
            let n = value_noise(self.cloud_seed, az * 5.0, elev * 14.0);
            let cover = ((n - (1.0 - light.cloud_prevalence)) * 4.0).clamp(0.0, 1.0);
            let cloud = mul([235.0, 235.0, 240.0], gain);
            c = lerp(c, cloud, cover * (0.35 + 0.65 * light.cloud_opacity));
        }
        if let Some(s) = sun {
            let cos = dir.dot(s);
            if cos > 0.9995 {
                c = [255.0, 250.0, 235.0];
            } else if cos > 0.99 {
                let k = (cos - 0.99) / 0.0095;
                c = lerp(c, [255.0, 245.0, 220.0], k * k);
            }
        }
        c
    }

    fn draw_shadows(&self, img: &mut Image, pose: &CamPose, cam: &CameraConfig, light: &LightingState) {
        let len = (CONE_HEIGHT / light.sun_elevation.tan()).min(5.0);
        let away = Point2::from_angle(light.sun_azimuth + PI);
        let side = away.perp();
        let strength = 1.0 - 0.45 * (1.0 - 0.8 * light.cloud_opacity);
        let eye = pose.position.xy();
        for cone in &self.cones {
            if cone.base.dist(eye) > DRAW_DISTANCE {
                continue;
            }
            let center = cone.base + away * (len / 2.0);
            let mut poly = Vec::with_capacity(12);
            let mut visible = true;
            for k in 0..12 {
                let a = TAU * k as f64 / 12.0;
                let p = center + away * (0.5 * len * a.cos()) + side * (CONE_HALF_BASE * a.sin());
                match project(pose, cam, Point3::on_ground(p)) {
                    Projection::Pixel { u, v, depth } if depth > 0.2 => poly.push((u, v)),
                    _ => {
                        visible = false;
                        break;
                    }
                }
            }
            if visible {
                fill_convex(img, &poly, |px| {
                    [
                        (px[0] as f64 * strength) as u8,
                        (px[1] as f64 * strength) as u8,
                        (px[2] as f64 * strength) as u8,
                    ]
                });
            }
        }
    }

    fn draw_objects(&self, img: &mut Image, pose: &CamPose, cam: &CameraConfig, gain: [f64; 3]) {
        let (_, right, _) = pose.basis();
        let right_h = Point2::new(right.x, right.y).normalized();
        let eye = pose.position.xy();
        // (depth, polygon, color), drawn far to near.
        let mut items: Vec<(f64, Vec<(f64, f64)>, Rgb)> = Vec::new();
        for cone in &self.cones {
            if cone.base.dist(eye) > DRAW_DISTANCE {
                continue;
            }
            let pts = [
                Point3::new(cone.base.x, cone.base.y, CONE_HEIGHT),
                Point3::on_ground(cone.base - right_h * CONE_HALF_BASE),
                Point3::on_ground(cone.base + right_h * CONE_HALF_BASE),
            ];
            if let Some((depth, poly)) = project_all(pose, cam, &pts) {
                items.push((depth, poly, to_rgb(mul(cone.color, gain))));
            }
        }
        for prop in &self.props {
            let mid = (prop.a + prop.b) * 0.5;
            if mid.dist(eye) > DRAW_DISTANCE {
                continue;
            }
            let pts = [
                Point3::new(prop.a.x, prop.a.y, prop.bottom),
                Point3::new(prop.b.x, prop.b.y, prop.bottom),
                Point3::new(prop.b.x, prop.b.y, prop.top),
                Point3::new(prop.a.x, prop.a.y, prop.top),
            ];
            if let Some((depth, poly)) = project_all(pose, cam, &pts) {
                items.push((depth, poly, to_rgb(mul(prop.color, gain))));
            }
        }
        items.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (_, poly, color) in &items {
            fill_convex(img, poly, |_| *color);
        }
    }
}

/// Renders one frame. Builds a [`Scene`] each call; loops should keep a
/// scene around instead.
pub fn render_frame(track: &TrackSpec, state: &CarState, cam: &CameraConfig, light: &LightingState, seed: u64) -> Image {
    Scene::new(track, seed).render(state, cam, light)
}

/// Unit vector toward the sun, or `None` below the horizon.
pub fn sun_direction(light: &LightingState) -> Option<Point3> {
    if light.sun_elevation <= 0.0 {
        return None;
    }
    let (se, ce) = light.sun_elevation.sin_cos();
    let (sa, ca) = light.sun_azimuth.sin_cos();
    Some(Point3::new(ce * ca, ce * sa, se))
}

/// Pixel position of the sun, if it is up and inside the frame.
pub fn sun_pixel(pose: &CamPose, cam: &CameraConfig, light: &LightingState) -> Option<(f64, f64)> {
    let dir = sun_direction(light)?;
    let (f, r, up) = pose.basis();
    let z = dir.dot(f);
    if z <= 1e-9 {
        return None;
    }
    let fp = focal_px(cam);
    let u = cam.image_w as f64 / 2.0 + fp * dir.dot(r) / z;
    let v = cam.image_h as f64 / 2.0 - fp * dir.dot(up) / z;
    let inside = (0.0..cam.image_w as f64).contains(&u) && (0.0..cam.image_h as f64).contains(&v);
    inside.then_some((u, v))
}

fn project_all(pose: &CamPose, cam: &CameraConfig, pts: &[Point3]) -> Option<(f64, Vec<(f64, f64)>)> {
    let mut poly = Vec::with_capacity(pts.len());
    let mut depth = 0.0f64;
    for &p in pts {
        match project(pose, cam, p) {
            Projection::Pixel { u, v, depth: d } if d > 0.2 => {
                poly.push((u, v));
                depth = depth.max(d);
            }
            _ => return None,
        }
    }
    Some((depth, poly))
}

/// Fills a convex polygon by testing pixel centers against its edges.
fn fill_convex(img: &mut Image, poly: &[(f64, f64)], shade: impl Fn(Rgb) -> Rgb) {
    if poly.len() < 3 {
        return;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(u, v) in poly {
        x0 = x0.min(u);
        x1 = x1.max(u);
        y0 = y0.min(v);
        y1 = y1.max(v);
    }
    if x1 < 0.0 || y1 < 0.0 || x0 >= img.w as f64 || y0 >= img.h as f64 {
        return;
    }
    let area: f64 = (0..poly.len())
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    if area.abs() < 1e-12 {
        return;
    }
    let orient = area.signum();
    let xs = x0.floor().max(0.0) as usize;
    let xe = (x1.ceil() as usize).min(img.w - 1);
    let ys = y0.floor().max(0.0) as usize;
    let ye = (y1.ceil() as usize).min(img.h - 1);
    for y in ys..=ye {
        let pv = y as f64 + 0.5;
        for x in xs..=xe {
            let pu = x as f64 + 0.5;
            let inside = (0..poly.len()).all(|i| {
                let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
                orient * ((b.0 - a.0) * (pv - a.1) - (b.1 - a.1) * (pu - a.0)) >= 0.0
            });
            if inside {
                let c = shade(img.get(x, y));
                img.put(x, y, c);
            }
        }
    }
}

/// Relative RGB gain of a black-body-ish light source, white at 6500 K.
fn kelvin_tint(kelvin: f64) -> [f64; 3] {
    let f = ((kelvin - 2500.0) / 4000.0).clamp(0.0, 1.0);
    [1.0, 0.72 + 0.28 * f, 0.45 + 0.55 * f]
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (xi, yi) = (x.floor(), y.floor());
    let (fx, fy) = (x - xi, y - yi);
    let h = |i: f64, j: f64| {
        let mut v = seed ^ ((i as i64 as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ ((j as i64 as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
        v ^= v >> 29;
        v = v.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        v ^= v >> 32;
        (v >> 11) as f64 / (1u64 << 53) as f64
    };
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let top = h(xi, yi) * (1.0 - sx) + h(xi + 1.0, yi) * sx;
    let bot = h(xi, yi + 1.0) * (1.0 - sx) + h(xi + 1.0, yi + 1.0) * sx;
    top * (1.0 - sy) + bot * sy
}

fn mul(c: [f64; 3], g: [f64; 3]) -> [f64; 3] {
    [c[0] * g[0], c[1] * g[1], c[2] * g[2]]
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn to_rgb(c: [f64; 3]) -> Rgb {
    // Float-to-int casts saturate, so this clamps to [0, 255].
    [(c[0] + 0.5) as u8, (c[1] + 0.5) as u8, (c[2] + 0.5) as u8]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::light::{cyclelight, Weather};
    use crate::sim::{generate_track, TrackStyle};

    fn straight_scene() -> (TrackSpec, CarState) {
        let t = generate_track(3, TrackStyle::Straight, 200.0, [3.0, 5.0]).unwrap();
        let s = CarState::new(Point2::new(1.0, 0.0), 0.0);
        (t, s)
    }

    #[test]
    fn rendering_is_deterministic() {
        let (t, s) = straight_scene();
        let cam = CameraConfig::default();
        let light = cyclelight(15.0, Weather { cloud_opacity: 0.3, cloud_prevalence: 0.6 });
        let a = render_frame(&t, &s, &cam, &light, 9);
        let b = render_frame(&t, &s, &cam, &light, 9);
        assert_eq!(a, b);
        assert_eq!(a.pixels.len(), 3 * 320 * 180);
    }

    #[test]
    fn darker_light_gives_darker_frame() {
        let (t, s) = straight_scene();
        let cam = CameraConfig::default();
        let noon = render_frame(&t, &s, &cam, &cyclelight(12.0, Weather::CLEAR), 1);
        let night = render_frame(&t, &s, &cam, &cyclelight(0.0, Weather::CLEAR), 1);
        assert!(night.mean_luminance() < noon.mean_luminance());
    }

    #[test]
    fn sun_visibility() {
        let cam = CameraConfig::default();
        let noon = LightingState::noon();
        let pose = CamPose {
            position: Point3::new(0.0, 0.0, 1.0),
            yaw: noon.sun_azimuth + PI,
            pitch: 0.0,
        };
        assert_eq!(sun_pixel(&pose, &cam, &noon), None);
        let light = cyclelight(8.0, Weather::CLEAR);
        let pose = CamPose {
            position: Point3::new(0.0, 0.0, 1.0),
            yaw: light.sun_azimuth,
            pitch: light.sun_elevation,
        };
        let (u, v) = sun_pixel(&pose, &cam, &light).unwrap();
        assert!((u - 160.0).abs() < 1e-9 && (v - 90.0).abs() < 1e-9);
        let dawn = cyclelight(6.0, Weather::CLEAR);
        let pose = CamPose {
            position: Point3::new(0.0, 0.0, 1.0),
            yaw: dawn.sun_azimuth,
            pitch: 0.0,
        };
        assert_eq!(sun_pixel(&pose, &cam, &dawn), None);
    }
}
