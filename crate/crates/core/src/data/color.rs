//! BT.601 studio-swing YCbCr, the convention of the usual evaluation code.

use image::RgbImage;

use super::ImageY;

/// Luma plus the two chroma planes, each normalized by 255.
#[derive(Clone, Debug, PartialEq)]
pub struct YCbCr {
    pub y: ImageY,
    pub cb: ImageY,
    pub cr: ImageY,
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    (65.481 * r + 128.553 * g + 24.966 * b) / 255.0 + 16.0
}

/// `Y = (65.481 R + 128.553 G + 24.966 B) / 255 + 16`, then divided by 255.
pub fn rgb_to_luminance(rgb: &RgbImage) -> ImageY {
    let (w, h) = rgb.dimensions();
    let values = rgb
        .pixels()
        .map(|p| (luma(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0) as f32)
        .collect();
    ImageY::new(h as usize, w as usize, values).expect("decoded image is nonempty")
}

pub fn rgb_to_ycbcr(rgb: &RgbImage) -> YCbCr {
    let (w, h) = rgb.dimensions();
    let n = (w * h) as usize;
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for p in rgb.pixels() {
        let (r, g, b) = (p[0] as f64, p[1] as f64, p[2] as f64);
        y.push((luma(r, g, b) / 255.0) as f32);
        cb.push(((-37.797 * r - 74.203 * g + 112.0 * b) / 255.0 + 128.0) as f32 / 255.0);
        cr.push(((112.0 * r - 93.786 * g - 18.214 * b) / 255.0 + 128.0) as f32 / 255.0);
    }
    let mk = |v| ImageY::new(h as usize, w as usize, v).expect("decoded image is nonempty");
    YCbCr {
        y: mk(y),
        cb: mk(cb),
        cr: mk(cr),
    }
}

/// Inverse of [`rgb_to_ycbcr`], rounded and saturated to 8 bits.
///
/// # Panics
///
/// Panics if the three planes differ in size.
pub fn ycbcr_to_rgb(img: &YCbCr) -> RgbImage {
    let (h, w) = (img.y.height(), img.y.width());
    assert!(
        (img.cb.height(), img.cb.width()) == (h, w) && (img.cr.height(), img.cr.width()) == (h, w),
        "chroma planes must match luma size"
    );
    let to8 = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    RgbImage::from_fn(w as u32, h as u32, |x, yy| {
        let i = yy as usize * w + x as usize;
        let y = img.y.values()[i] as f64 * 255.0 - 16.0;
        let cb = img.cb.values()[i] as f64 * 255.0 - 128.0;
        let cr = img.cr.values()[i] as f64 * 255.0 - 128.0;
        // inverse of the forward matrix, scaled back to 0..255
        let r = 255.0 / 219.0 * y + 255.0 / 224.0 * 1.402 * cr;
        let g = 255.0 / 219.0 * y - 255.0 / 224.0 * 1.772 * 0.114 / 0.587 * cb - 255.0 / 224.0 * 1.402 * 0.299 / 0.587 * cr;
        let b = 255.0 / 219.0 * y + 255.0 / 224.0 * 1.772 * cb;
        image::Rgb([to8(r), to8(g), to8(b)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(r: u8, g: u8, b: u8) -> RgbImage {
        RgbImage::from_pixel(2, 2, image::Rgb([r, g, b]))
    }

    #[test]
    fn white_and_black_points() {
        let w = rgb_to_luminance(&solid(255, 255, 255));
        assert!((w.get(0, 0) - 235.0 / 255.0).abs() < 1e-6);
        let b = rgb_to_luminance(&solid(0, 0, 0));
        assert!((b.get(1, 1) - 16.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn gray_matches_formula() {
        let y = rgb_to_luminance(&solid(128, 128, 128)).get(0, 0) as f64;
        let want = ((65.481 + 128.553 + 24.966) * 128.0 / 255.0 + 16.0) / 255.0;
        assert!((y - want).abs() < 1e-7);
    }

    #[test]
    fn round_trip_is_within_one_level() {
        let rgb = RgbImage::from_fn(16, 16, |x, y| image::Rgb([(x * 16) as u8, (y * 16) as u8, ((x + y) * 8) as u8]));
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&rgb));
        for (a, b) in rgb.pixels().zip(back.pixels()) {
            for k in 0..3 {
                assert!((a[k] as i32 - b[k] as i32).abs() <= 1, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn neutral_chroma_for_gray() {
        let c = rgb_to_ycbcr(&solid(77, 77, 77));
        assert!((c.cb.get(0, 0) - 128.0 / 255.0).abs() < 1e-6);
        assert!((c.cr.get(0, 0) - 128.0 / 255.0).abs() < 1e-6);
    }
}
