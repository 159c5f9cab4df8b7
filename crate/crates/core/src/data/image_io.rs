//! PNG and PNM files.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageReader};

use super::color::{rgb_to_ycbcr, ycbcr_to_rgb, YCbCr};
use super::ImageY;
use crate::error::Result;

const EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// A decoded file: luminance always, chroma only for color sources.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedImage {
    pub luma: ImageY,
    pub chroma: Option<(ImageY, ImageY)>,
}

impl DecodedImage {
    pub fn is_color(&self) -> bool {
        self.chroma.is_some()
    }
}

/// Grayscale files map `v / 255` directly to luminance; color files go
/// through the YCbCr conversion.
pub fn load_image(path: impl AsRef<Path>) -> Result<DecodedImage> {
    let img = ImageReader::open(path.as_ref())?.with_guessed_format()?.decode()?;
    Ok(from_dynamic(&img))
}

fn from_dynamic(img: &DynamicImage) -> DecodedImage {
    if img.color().has_color() {
        let YCbCr { y, cb, cr } = rgb_to_ycbcr(&img.to_rgb8());
        DecodedImage {
            luma: y,
            chroma: Some((cb, cr)),
        }
    } else {
        let g = img.to_luma8();
        let values = g.pixels().map(|p| p[0] as f32 / 255.0).collect();
        DecodedImage {
            luma: ImageY::new(g.height() as usize, g.width() as usize, values).expect("decoded image is nonempty"),
            chroma: None,
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// 8-bit grayscale; the format follows the extension.
pub fn save_luminance(img: &ImageY, path: impl AsRef<Path>) -> Result<()> {
    let g = GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        image::Luma([quantize(img.get(y as usize, x as usize))])
    });
    g.save(path)?;
    Ok(())
}

pub fn save_color(img: &YCbCr, path: impl AsRef<Path>) -> Result<()> {
    ycbcr_to_rgb(img).save(path)?;
    Ok(())
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ok = path.is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if ok {
            out.push(path);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}
