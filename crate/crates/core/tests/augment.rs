use fsd_core::augment::*;
use fsd_core::render::{luminance, CameraConfig, Image, LightingState, Scene};
use fsd_core::sim::{generate_track, CarState, TrackStyle};
use fsd_core::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn straight_scene() -> Scene {
    let track = generate_track(4, TrackStyle::Straight, 200.0, [4.0, 4.0]).unwrap();
    Scene::new(&track, 1)
}

fn centered() -> CarState {
    CarState::new(Point2::new(3.0, 0.0), 0.0)
}

fn is_yellow([r, g, b]: [u8; 3]) -> bool {
    r > 170 && g > 140 && b < 90
}

fn column_centroid(img: &Image, class: fn([u8; 3]) -> bool) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..img.h {
        for x in 0..img.w {
            if class(img.get(x, y)) {
                sum += x as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[test]
fn mixer_frequencies_match_rates() {
    let n = 10_000;
    let mut counts = [0usize; 5];
    for seed in 0..n {
        let p = sample_plan(seed as u64);
        for (c, on) in counts.iter_mut().zip([p.cyclelight, p.shifted, p.h_lines, p.h_distort, p.flare]) {
            *c += on as usize;
        }
        if !p.shifted {
            assert_eq!(p.shift_d, 0.0);
        }
        assert!(p.shift_d.abs() <= MAX_SHIFT);
        assert!((0.6..=1.4).contains(&p.brightness_factor));
        if p.cyclelight {
            assert!((0.0..=MAX_CLOUD_OPACITY).contains(&p.cloud_opacity));
        }
    }
    for (c, target) in counts.iter().zip([0.772, 0.222, 0.100, 0.114, 0.099]) {
        let f = *c as f64 / n as f64;
        assert!((f - target).abs() <= 0.02, "{f} vs {target}");
    }
}

#[test]
fn steering_correction_values() {
    for y in [0.0, 0.2, 0.5, 0.77, 1.0] {
        assert!((correct_steering(y, 0.0) - y).abs() < 1e-12);
    }
    let expected = 0.5 - (0.175f64).atan().to_degrees() / 50.0;
    assert!((expected - 0.3014).abs() < 1e-3);
    assert!((correct_steering(0.5, 1.75) - expected).abs() < 1e-9);
    for a in [0.1, 0.7, 1.75] {
        let l = correct_steering(0.5, -a) - 0.5;
        let r = correct_steering(0.5, a) - 0.5;
        assert!((l + r).abs() < 1e-12);
    }
}

#[test]
fn steering_correction_is_monotone_and_clamps() {
    for y in [0.0, 0.3, 0.5, 0.9, 1.0] {
        let mut last = f64::INFINITY;
        for k in -35..=35 {
            let v = correct_steering(y, k as f64 * 0.05);
            assert!(v <= last + 1e-12);
            assert!((0.0..=1.0).contains(&v));
            last = v;
        }
    }
    assert_eq!(correct_steering(0.0, 1.0), 0.0);
    assert_eq!(correct_steering(1.0, -1.0), 1.0);
}

#[test]
fn zero_shift_matches_plain_render() {
    let scene = straight_scene();
    let cam = CameraConfig::default();
    let light = LightingState::noon();
    let (img, y) = shifted_rerender(&scene, &centered(), 0.42, 0.0, &cam, &light).unwrap();
    assert_eq!(img, scene.render(&centered(), &cam, &light));
    assert_eq!(y, 0.42);
}

#[test]
fn left_shift_moves_right_cones_left() {
    let scene = straight_scene();
    let cam = CameraConfig::default();
    let light = LightingState::noon();
    let base = scene.render(&centered(), &cam, &light);
    let (shifted, y) = shifted_rerender(&scene, &centered(), 0.5, 1.0, &cam, &light).unwrap();
    let a = column_centroid(&base, is_yellow).unwrap();
    let b = column_centroid(&shifted, is_yellow).unwrap();
    assert!(b < a, "yellow centroid {a} -> {b}");
    assert!(y < 0.5);
    assert!(shifted_rerender(&scene, &centered(), 0.5, 2.0, &cam, &light).is_err());
}

fn gray(v: u8) -> Image {
    Image::filled(320, 180, [v, v, v])
}

#[test]
fn brightness_cases() {
    let img = gray(100);
    assert_eq!(brightness(&img, 1.0), img);
    assert_eq!(brightness(&img, 0.6), gray(60));
    assert_eq!(brightness(&gray(200), 1.4), gray(255));
}

fn noise(seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_raw(320, 180, (0..320 * 180 * 3).map(|_| rng.random_range(0..200)).collect()).unwrap()
}

#[test]
fn horizontal_lines_touch_only_their_rows() {
    let img = noise(1);
    assert_eq!(add_horizontal_lines(&img, 5), add_horizontal_lines(&img, 5));
    for seed in 0..1000 {
        let lines = hline_params(img.h, seed);
        assert!((1..=3).contains(&lines.len()));
        if seed < 50 {
            let out = apply_hlines(&img, &lines);
            assert_eq!((out.w, out.h), (img.w, img.h));
            for row in 0..img.h {
                let hit = lines.iter().any(|l| (l.row..l.row + l.thickness).contains(&row));
                assert_eq!(out.row(row) != img.row(row), hit, "row {row}");
            }
        }
    }
}

#[test]
fn distortion_shifts_rows() {
    let img = noise(2);
    let flat = DistortParams {
        amplitude: 0.0,
        wavelength: 30.0,
        phase: 1.0,
    };
    assert_eq!(apply_distort(&img, &flat), img);
    for seed in 0..5 {
        let p = DistortParams::sample(seed);
        let out = apply_distort(&img, &p);
        for v in 0..img.h {
            // Cross-correlation peak over candidate shifts, ignoring the
            // replicated edge columns.
            let score = |dx: i64| -> i64 {
                (8..img.w as i64 - 8)
                    .map(|x| {
                        let a = out.get(x as usize, v);
                        let b = img.get((x - dx) as usize, v);
                        (0..3).map(|c| a[c] as i64 * b[c] as i64).sum::<i64>()
                    })
                    .sum()
            };
            let best = (-7..=7).max_by_key(|&dx| score(dx)).unwrap();
            assert_eq!(best, p.row_shift(v), "row {v}");
            assert!(best.abs() <= 6);
        }
    }
}

#[test]
fn flare_behaviour() {
    let img = gray(80);
    assert_eq!(lens_flare(&img, None, 3), img);
    let sun = (60.0, 40.0);
    let out = lens_flare(&img, Some(sun), 3);
    assert!(luminance(out.get(60, 40)) > luminance(img.get(60, 40)));
    assert_eq!((out.w, out.h), (img.w, img.h));
}

#[test]
fn flare_ghosts_lie_on_sun_centre_line() {
    let black = Image::new(320, 180);
    for seed in 0..10 {
        let sun = (40.0 + seed as f64 * 20.0, 30.0 + seed as f64 * 5.0);
        let p = flare_params(sun, 320, 180, seed);
        assert!((2..=4).contains(&p.ghosts.len()));
        assert!((10.0..=30.0).contains(&p.sigma));
        for g in &p.ghosts {
            let single = FlareParams {
                bloom: 0.0,
                ghosts: vec![*g],
                ..p.clone()
            };
            let out = apply_flare(&black, &single);
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
            for y in 0..180 {
                for x in 0..320 {
                    if out.get(x, y)[0] > 0 {
                        sx += x as f64 + 0.5;
                        sy += y as f64 + 0.5;
                        n += 1.0;
                    }
                }
            }
            let (cx, cy) = (sx / n, sy / n);
            // Distance from the sun -> image-centre line.
            let (dx, dy) = (160.0 - sun.0, 90.0 - sun.1);
            let dist = ((cx - sun.0) * dy - (cy - sun.1) * dx).abs() / (dx * dx + dy * dy).sqrt();
            assert!(dist <= 1.0, "seed {seed}: ghost {dist} px off the line");
        }
    }
}

#[test]
fn tags_replay_the_transform() {
    let scene = straight_scene();
    let cam = CameraConfig::default();
    let base = LightingState::noon();
    let mut checked = 0;
    for seed in 0..40 {
        let plan = sample_plan(seed);
        let a = apply_plan(&scene, &centered(), 0.55, &cam, &base, &plan).unwrap();
        for t in &a.tags {
            assert!(TAG_NAMES.contains(&t.name.as_str()));
        }
        let json = serde_json::to_string(&a.tags).unwrap();
        let tags: Vec<AugmentTag> = serde_json::from_str(&json).unwrap();
        let replayed = plan_from_tags(&tags).unwrap();
        let b = apply_plan(&scene, &centered(), 0.55, &cam, &base, &replayed).unwrap();
        assert_eq!(a.image, b.image, "seed {seed}");
        assert_eq!(a.y, b.y);
        checked += (plan.h_lines || plan.h_distort || plan.flare) as usize;
    }
    assert!(checked > 0);
}
