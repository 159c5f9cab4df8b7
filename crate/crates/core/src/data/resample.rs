//! Separable cubic-convolution resampling.

use super::ImageY;
use crate::error::{shape_err, Result};

const KEYS_A: f64 = -0.5;
const KERNEL_RADIUS: f64 = 2.0;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn bicubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((KEYS_A + 2.0) * x - (KEYS_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * KEYS_A
    } else {
        0.0
    }
}

/// Source taps and normalized weights for each output coordinate along one
/// axis. Pixel centers are aligned; when shrinking, the kernel is stretched
/// by the ratio. Out-of-range taps read the nearest edge pixel.
fn axis_weights(in_size: usize, out_size: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let ratio = in_size as f64 / out_size as f64;
    let stretch = ratio.max(1.0);
    let support = KERNEL_RADIUS * stretch;
    (0..out_size)
        .map(|o| {
            let center = (o as f64 + 0.5) * ratio;
            let lo = (center - support + 0.5).floor() as i64;
            let hi = (center + support + 0.5).floor() as i64;
            let mut idx = Vec::with_capacity((hi - lo) as usize);
            let mut wts = Vec::with_capacity((hi - lo) as usize);
            for i in lo..hi {
                let w = bicubic_kernel((i as f64 - center + 0.5) / stretch);
                if w != 0.0 {
                    idx.push(i.clamp(0, in_size as i64 - 1) as usize);
                    wts.push(w);
                }
            }
            let total: f64 = wts.iter().sum();
            for w in &mut wts {
                *w /= total;
            }
            (idx, wts)
        })
        .collect()
}

/// Resizes to `out_h × out_w`; output clamped to `[0, 1]`.
pub fn bicubic_resize(img: &ImageY, out_h: usize, out_w: usize) -> Result<ImageY> {
    if out_h == 0 || out_w == 0 {
        return shape_err(format!("resize target must be >= 1x1, got {out_h}x{out_w}"));
    }
    let (h, w) = (img.height(), img.width());
    let cols = axis_weights(w, out_w);
    let rows = axis_weights(h, out_h);
    let src = img.values();

    let mut horiz = vec![0.0f64; h * out_w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (x, (idx, wts)) in cols.iter().enumerate() {
            horiz[y * out_w + x] = idx.iter().zip(wts).map(|(&i, &k)| row[i] as f64 * k).sum();
        }
    }
    let mut out = vec![0.0f64; out_h * out_w];
    for (y, (idx, wts)) in rows.iter().enumerate() {
        let dst = &mut out[y * out_w..(y + 1) * out_w];
        for (&i, &k) in idx.iter().zip(wts) {
            let line = &horiz[i * out_w..(i + 1) * out_w];
            for (d, s) in dst.iter_mut().zip(line) {
                *d += s * k;
            }
        }
    }
    ImageY::new(out_h, out_w, out.into_iter().map(|v| v as f32).collect())
}
