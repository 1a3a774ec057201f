use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

/// Lowest light intensity, reached at night.
pub const AMBIENT_FLOOR: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Weather {
    pub cloud_opacity: f64,
    pub cloud_prevalence: f64,
}

impl Weather {
    pub const CLEAR: Weather = Weather {
        cloud_opacity: 0.0,
        cloud_prevalence: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingState {
    pub t_day: f64,
    pub sun_elevation: f64,
    /// Radians CCW from +x; the sun rises at +x and sets at -x.
    pub sun_azimuth: f64,
    pub intensity: f64,
    pub color_temp: f64,
    pub cloud_opacity: f64,
    pub cloud_prevalence: f64,
}

impl LightingState {
    /// Clear sky at noon.
    pub fn noon() -> Self {
        cyclelight(12.0, Weather::CLEAR)
    }
}

/// Day-light cycle: sun position, intensity and color temperature for an
/// hour of the day under the given cloud cover.
pub fn cyclelight(t_day: f64, weather: Weather) -> LightingState {
    let t = t_day.rem_euclid(24.0);
    let sun_elevation = (PI * (t - 6.0) / 12.0).sin().max(0.0) * FRAC_PI_2;
    let sun_azimuth = PI * (t - 6.0) / 12.0;
    let opacity = weather.cloud_opacity.clamp(0.0, 1.0);
    let intensity = (sun_elevation.sin() * (1.0 - 0.6 * opacity)).max(AMBIENT_FLOOR);
    let color_temp = 2500.0 + 4000.0 * sun_elevation / FRAC_PI_2;
    LightingState {
        t_day: t,
        sun_elevation,
        sun_azimuth,
        intensity,
        color_temp,
        cloud_opacity: opacity,
        cloud_prevalence: weather.cloud_prevalence.clamp(0.0, 1.0),
    }
}
