//! Images, resampling, augmentation and training patches.

mod archive;
mod augment;
mod color;
mod image_io;
mod resample;

pub use archive::{decode_archive, encode_archive, load_archive, save_archive, PatchArchive, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use augment::{augment_eightfold, inverse_orientation, orient, Orientation, ORIENTATIONS};
pub use color::{rgb_to_luminance, rgb_to_ycbcr, ycbcr_to_rgb, YCbCr};
pub use image_io::{list_images, load_image, save_color, save_luminance, DecodedImage};
pub use resample::{bicubic_kernel, bicubic_resize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageY {
    h: usize,
    w: usize,
    values: Vec<f32>,
}

impl ImageY {
    /// Values are clamped to `[0, 1]`; NaN becomes 0.
    pub fn new(h: usize, w: usize, mut values: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 {
            return shape_err(format!("image dimensions must be >= 1, got {h}x{w}"));
        }
        if values.len() != h * w {
            return shape_err(format!("{} values for a {h}x{w} image", values.len()));
        }
        for v in &mut values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(ImageY { h, w, values })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                values.push(f(y, x));
            }
        }
        Self::new(h, w, values)
    }

    pub fn constant(h: usize, w: usize, v: f32) -> Result<Self> {
        Self::new(h, w, vec![v; h * w])
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.w + x]
    }

    /// Sub-image with top-left corner `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y + h > self.h || x + w > self.w {
            return shape_err(format!(
                "crop {h}x{w} at ({y}, {x}) exceeds {}x{} image",
                self.h, self.w
            ));
        }
        let mut values = Vec::with_capacity(h * w);
        for row in y..y + h {
            values.extend_from_slice(&self.values[row * self.w + x..row * self.w + x + w]);
        }
        Ok(ImageY { h, w, values })
    }

    /// Crops right and bottom edges so both dims are multiples of `scale`.
    pub fn modcrop(&self, scale: usize) -> Result<Self> {
        let (h, w) = (self.h - self.h % scale, self.w - self.w % scale);
        if h == 0 || w == 0 {
            return shape_err(format!("{}x{} image is smaller than scale {scale}", self.h, self.w));
        }
        self.crop(0, 0, h, w)
    }

    /// `(1, 1, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec((1, 1, self.h, self.w), self.values.clone()).expect("image dims are nonzero")
    }

    /// Sample `i`, channel 0 of a tensor, clamped into range.
    pub fn from_tensor(t: &Tensor, i: usize) -> Result<Self> {
        let d = t.dims();
        if i >= d.n {
            return shape_err(format!("sample {i} out of range for {d}"));
        }
        let start = d.offset(i, 0, 0, 0);
        Self::new(d.h, d.w, t.data()[start..start + d.plane_len()].to_vec())
    }
}

/// Aligned low/high-resolution training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    /// `(1, 1, p, p)`
    pub lr: Tensor,
    /// `(1, 1, scale·p, scale·p)`
    pub hr: Tensor,
}

/// Crops `hr` to a multiple of `scale`, downsamples it, and cuts aligned
/// patches on a `stride` grid of the low-resolution image. Images smaller
/// than one patch yield no pairs.
pub fn extract_patch_pairs(hr: &ImageY, scale: usize, lr_patch: usize, stride: usize) -> Result<Vec<PatchPair>> {
    if scale == 0 || lr_patch == 0 || stride == 0 {
        return shape_err("scale, patch size and stride must be >= 1");
    }
    if hr.height() < scale || hr.width() < scale {
        return Ok(Vec::new());
    }
    let hr = hr.modcrop(scale)?;
    let (lh, lw) = (hr.height() / scale, hr.width() / scale);
    if lh < lr_patch || lw < lr_patch {
        return Ok(Vec::new());
    }
    let lr = bicubic_resize(&hr, lh, lw)?;
    let mut out = Vec::new();
    for y in (0..=lh - lr_patch).step_by(stride) {
        for x in (0..=lw - lr_patch).step_by(stride) {
            let hp = scale * lr_patch;
            out.push(PatchPair {
                lr: lr.crop(y, x, lr_patch, lr_patch)?.to_tensor(),
                hr: hr.crop(scale * y, scale * x, hp, hp)?.to_tensor(),
            });
        }
    }
    Ok(out)
}
