use super::image::Image;

/// Target mean luminance of the software auto-exposure.
const TARGET: f64 = 110.0;

/// Scales every channel by `clamp(110 / mean_luminance, 0.5, 2.0)`.
pub fn auto_expose(img: &Image) -> Image {
    let mean = img.mean_luminance();
    let gain = if mean > 0.0 { (TARGET / mean).clamp(0.5, 2.0) } else { 2.0 };
    img.map_channels(|c| (c as f64 * gain).round().clamp(0.0, 255.0) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gain_at_target() {
        let img = Image::filled(10, 10, [110, 110, 110]);
        assert_eq!(auto_expose(&img), img);
        // Mixed colors whose luminance averages exactly 110.
        let mut img = Image::filled(2, 1, [100, 100, 100]);
        img.put(1, 0, [120, 120, 120]);
        assert_eq!(auto_expose(&img), img);
    }

    #[test]
    fn dark_and_bright_images_are_clamped() {
        let dark = auto_expose(&Image::filled(8, 8, [55, 55, 55]));
        assert!(dark.pixels.iter().all(|&c| c == 110));
        let bright = auto_expose(&Image::filled(8, 8, [240, 240, 240]));
        assert!(bright.pixels.iter().all(|&c| c == 120));
        let black = auto_expose(&Image::new(4, 4));
        assert!(black.pixels.iter().all(|&c| c == 0));
    }
}
