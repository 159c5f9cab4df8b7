//! Patch archive file (all integers little-endian):
//!
//! ```text
//! "DRFP" | version u32 | scale u32 | lr_patch u32 | pair count u64
//! | per pair: LR values (p·p f32) then HR values ((s·p)² f32)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::{augment_eightfold, extract_patch_pairs, ImageY, PatchPair};
use crate::error::{shape_err, Error, Result};
use crate::model::Reader;
use crate::tensor::Tensor;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"DRFP";
pub const ARCHIVE_VERSION: u32 = 1;

/// A flat store of equally sized training pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchArchive {
    scale: usize,
    lr_patch: usize,
    lr: Vec<f32>,
    hr: Vec<f32>,
}

impl PatchArchive {
    pub fn new(scale: usize, lr_patch: usize) -> Result<Self> {
        if scale == 0 || lr_patch == 0 {
            return shape_err("scale and patch size must be >= 1");
        }
        Ok(PatchArchive {
            scale,
            lr_patch,
            lr: Vec::new(),
            hr: Vec::new(),
        })
    }

    /// Patches from every image (and its eight orientations when `augment`
    /// is set), ordered by image, then orientation, then grid position.
    pub fn from_images(images: &[ImageY], scale: usize, lr_patch: usize, stride: usize, augment: bool) -> Result<Self> {
        let per_image: Vec<Vec<PatchPair>> = images
            .par_iter()
            .map(|img| {
                let variants = if augment { augment_eightfold(img) } else { vec![img.clone()] };
                let mut pairs = Vec::new();
                for v in &variants {
                    pairs.extend(extract_patch_pairs(v, scale, lr_patch, stride)?);
                }
                Ok(pairs)
            })
            .collect::<Result<_>>()?;
        let mut archive = Self::new(scale, lr_patch)?;
        for pair in per_image.iter().flatten() {
            archive.push(pair)?;
        }
        Ok(archive)
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn lr_patch(&self) -> usize {
        self.lr_patch
    }

    pub fn hr_patch(&self) -> usize {
        self.scale * self.lr_patch
    }

    fn lr_len(&self) -> usize {
        self.lr_patch * self.lr_patch
    }

    fn hr_len(&self) -> usize {
        self.hr_patch() * self.hr_patch()
    }

    pub fn len(&self) -> usize {
        self.lr.len() / self.lr_len()
    }

    pub fn is_empty(&self) -> bool {
        self.lr.is_empty()
    }

    pub fn push(&mut self, pair: &PatchPair) -> Result<()> {
        let (p, q) = (self.lr_patch, self.hr_patch());
        if pair.lr.dims().as_array() != [1, 1, p, p] || pair.hr.dims().as_array() != [1, 1, q, q] {
            return shape_err(format!(
                "pair {} / {} does not fit archive patches {p}x{p} / {q}x{q}",
                pair.lr.dims(),
                pair.hr.dims()
            ));
        }
        self.lr.extend_from_slice(pair.lr.data());
        self.hr.extend_from_slice(pair.hr.data());
        Ok(())
    }

    /// # Panics
    ///
    /// Panics if `i >= len()`.
    pub fn pair(&self, i: usize) -> PatchPair {
        let (p, q) = (self.lr_patch, self.hr_patch());
        PatchPair {
            lr: Tensor::from_vec((1, 1, p, p), self.lr[i * p * p..(i + 1) * p * p].to_vec()).expect("patch dims"),
            hr: Tensor::from_vec((1, 1, q, q), self.hr[i * q * q..(i + 1) * q * q].to_vec()).expect("patch dims"),
        }
    }

    /// Stacks the listed pairs into `(n, 1, p, p)` and `(n, 1, s·p, s·p)`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let (p, q) = (self.lr_patch, self.hr_patch());
        let (ll, hl) = (self.lr_len(), self.hr_len());
        let mut lr = Vec::with_capacity(indices.len() * ll);
        let mut hr = Vec::with_capacity(indices.len() * hl);
        for &i in indices {
            if i >= self.len() {
                return shape_err(format!("pair {i} out of range for archive of {}", self.len()));
            }
            lr.extend_from_slice(&self.lr[i * ll..(i + 1) * ll]);
            hr.extend_from_slice(&self.hr[i * hl..(i + 1) * hl]);
        }
        Ok((
            Tensor::from_vec((indices.len(), 1, p, p), lr)?,
            Tensor::from_vec((indices.len(), 1, q, q), hr)?,
        ))
    }
}

pub fn encode_archive(a: &PatchArchive) -> Vec<u8> {
    let (ll, hl) = (a.lr_len(), a.hr_len());
    let mut buf = Vec::with_capacity(24 + 4 * (a.lr.len() + a.hr.len()));
    buf.extend_from_slice(ARCHIVE_MAGIC);
    for v in [ARCHIVE_VERSION, a.scale as u32, a.lr_patch as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(a.len() as u64).to_le_bytes());
    for i in 0..a.len() {
        for v in a.lr[i * ll..(i + 1) * ll].iter().chain(&a.hr[i * hl..(i + 1) * hl]) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_archive(bytes: &[u8]) -> Result<PatchArchive> {
    let mut r = Reader::new(bytes);
    r.magic(ARCHIVE_MAGIC)?;
    let version = r.u32("version")?;
    if version != ARCHIVE_VERSION {
        return Err(Error::Format {
            offset: r.offset() - 4,
            message: format!("unsupported archive version {version}"),
        });
    }
    let at = r.offset();
    let scale = r.u32("scale")? as usize;
    let lr_patch = r.u32("patch size")? as usize;
    let mut a = PatchArchive::new(scale, lr_patch).map_err(|e| Error::Format {
        offset: at,
        message: e.to_string(),
    })?;
    let count = r.u64("pair count")?;
    let (ll, hl) = (a.lr_len(), a.hr_len());
    let payload = ((ll + hl) as u64 * 4).checked_mul(count);
    let left = (bytes.len() as u64).saturating_sub(r.offset());
    if payload != Some(left) {
        return r.fail(format!("{count} pairs do not fit the {left} payload bytes present"));
    }
    a.lr.reserve(ll * count as usize);
    a.hr.reserve(hl * count as usize);
    for i in 0..count {
        a.lr.extend(r.f32s(ll, &format!("LR patch {i}"))?);
        a.hr.extend(r.f32s(hl, &format!("HR patch {i}"))?);
    }
    r.finish()?;
    Ok(a)
}

pub fn save_archive(a: &PatchArchive, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_archive(a))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<PatchArchive> {
    decode_archive(&fs::read(path)?)
}
