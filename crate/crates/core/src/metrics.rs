//! PSNR and SSIM on luminance, with border shaving and dataset reports.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{bicubic_resize, list_images, load_image, ImageY};
use crate::error::{shape_err, Result};

/// Reported for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Removes `pixels` rows and columns from every side.
pub fn shave_border(img: &ImageY, pixels: usize) -> Result<ImageY> {
    if 2 * pixels >= img.height().min(img.width()) {
        return shape_err(format!(
            "cannot shave {pixels} px from a {}x{} image",
            img.height(),
            img.width()
        ));
    }
    img.crop(pixels, pixels, img.height() - 2 * pixels, img.width() - 2 * pixels)
}

fn same_dims(a: &ImageY, b: &ImageY) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return shape_err(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        ));
    }
    Ok(())
}

/// `10·log10(1 / mse)` for unit peak.
pub fn psnr(a: &ImageY, b: &ImageY) -> Result<f64> {
    same_dims(a, b)?;
    let sse: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(-10.0 * (sse / a.values().len() as f64).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of a row-major plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (t, &tap) in taps.iter().enumerate() {
            let line = &tmp[(y + t) * ow..(y + t + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(line) {
                *o += tap * v;
            }
        }
    }
    out
}

/// Mean local SSIM over every fully covered 11×11 Gaussian window
/// (σ = 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1).
pub fn ssim(a: &ImageY, b: &ImageY) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return shape_err(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let x: Vec<f64> = a.values().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.values().iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter_valid(&x, h, w, &taps);
    let mu_y = filter_valid(&y, h, w, &taps);
    let e_xx = filter_valid(&prod(&x, &x), h, w, &taps);
    let e_yy = filter_valid(&prod(&y, &y), h, w, &taps);
    let e_xy = filter_valid(&prod(&x, &y), h, w, &taps);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// Ground truth cropped to a multiple of `scale`, and its bicubic
/// down-then-up reconstruction.
pub fn bicubic_reconstruction(hr: &ImageY, scale: usize) -> Result<(ImageY, ImageY)> {
    let gt = hr.modcrop(scale)?;
    let (h, w) = (gt.height(), gt.width());
    let lr = bicubic_resize(&gt, h / scale, w / scale)?;
    let up = bicubic_resize(&lr, h, w)?;
    Ok((gt, up))
}

/// PSNR and SSIM after shaving `shave` pixels from both images.
pub fn score_pair(sr: &ImageY, gt: &ImageY, shave: usize) -> Result<(f64, f64)> {
    same_dims(sr, gt)?;
    let (s, g) = (shave_border(sr, shave)?, shave_border(gt, shave)?);
    Ok((psnr(&s, &g)?, ssim(&s, &g)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_image: Vec<ImageScore>,
    /// Files that could not be scored, with the reason.
    pub failures: Vec<(String, String)>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub scale: usize,
    pub shave: usize,
}

impl EvalReport {
    pub fn from_scores(per_image: Vec<ImageScore>, failures: Vec<(String, String)>, scale: usize, shave: usize) -> Self {
        let n = per_image.len() as f64;
        let (mean_psnr, mean_ssim) = if per_image.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                per_image.iter().map(|s| s.psnr).sum::<f64>() / n,
                per_image.iter().map(|s| s.ssim).sum::<f64>() / n,
            )
        };
        EvalReport {
            per_image,
            failures,
            mean_psnr,
            mean_ssim,
            scale,
            shave,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && !self.per_image.is_empty()
    }

    pub fn to_text(&self) -> String {
        let width = self
            .per_image
            .iter()
            .map(|s| s.name.len())
            .chain(self.failures.iter().map(|f| f.0.len()))
            .chain(["MEAN".len()])
            .max()
            .unwrap_or(4);
        let mut out = String::new();
        let _ = writeln!(out, "scale x{}, shave {} px", self.scale, self.shave);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>7}", "image", "PSNR(dB)", "SSIM");
        for s in &self.per_image {
            let _ = writeln!(out, "{:<width$}  {:>9.4}  {:>7.4}", s.name, s.psnr, s.ssim);
        }
        let _ = writeln!(out, "{:<width$}  {:>9.4}  {:>7.4}", "MEAN", self.mean_psnr, self.mean_ssim);
        for (name, why) in &self.failures {
            let _ = writeln!(out, "{name:<width$}  FAILED: {why}");
        }
        out
    }

    /// `name,psnr,ssim` rows followed by a `MEAN` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr,ssim\n");
        for s in &self.per_image {
            let _ = writeln!(out, "{},{:.6},{:.6}", s.name, s.psnr, s.ssim);
        }
        let _ = writeln!(out, "MEAN,{:.6},{:.6}", self.mean_psnr, self.mean_ssim);
        out
    }
}

/// Scores every ground-truth file against the same-named file in `sr_dir`.
/// Both images are cropped to a multiple of `scale` and shaved by `scale`
/// pixels. Unreadable, missing or mismatched files are listed as failures.
pub fn evaluate_dataset(sr_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>, scale: usize) -> Result<EvalReport> {
    let gt_files = list_images(gt_dir.as_ref())?;
    let sr_dir = sr_dir.as_ref();
    let results: Vec<(String, Result<(f64, f64)>)> = gt_files
        .par_iter()
        .map(|gt_path| {
            let name = gt_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let scored = (|| {
                let gt = load_image(gt_path)?.luma.modcrop(scale)?;
                let sr = load_image(sr_dir.join(&name))?.luma.modcrop(scale)?;
                score_pair(&sr, &gt, scale)
            })();
            (name, scored)
        })
        .collect();
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for (name, r) in results {
        match r {
            Ok((psnr, ssim)) => scores.push(ImageScore { name, psnr, ssim }),
            Err(e) => failures.push((name, e.to_string())),
        }
    }
    Ok(EvalReport::from_scores(scores, failures, scale, scale))
}
