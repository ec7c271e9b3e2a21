//! Class-per-directory image trees and bilinear rescaling.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{Dataset, SplitTag, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// 1 for grayscale, 3 for RGB (gray scans are replicated).
    pub channels: usize,
    /// Skip undecodable files instead of failing.
    pub permissive: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            channels: 3,
            permissive: false,
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    out.sort();
    Ok(out)
}

/// Class directories in label order. Integer names map to their value and
/// must cover `0..K`; otherwise labels follow lexicographic order.
fn class_dirs(root: &Path, classes: usize) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::DatasetLoad(format!("{} is not a directory", root.display())));
    }
    let dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    let name = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let numeric: Option<Vec<usize>> = dirs.iter().map(|d| name(d).parse().ok()).collect();
    if let Some(nums) = numeric.filter(|n| !n.is_empty()) {
        let mut out = Vec::with_capacity(classes);
        for label in 0..classes {
            match nums.iter().position(|&n| n == label) {
                Some(i) => out.push(dirs[i].clone()),
                None => return Err(Error::MissingClassDir(root.join(label.to_string()).display().to_string())),
            }
        }
        return Ok(out);
    }
    if dirs.len() < classes {
        return Err(Error::MissingClassDir(format!(
            "{} has {} class directories, expected {classes}",
            root.display(),
            dirs.len()
        )));
    }
    Ok(dirs.into_iter().take(classes).collect())
}

/// Decodes one file to `C×H×W` in `[0, 1]`.
pub fn decode_image(path: &Path, channels: usize) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::UnreadableImage {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match channels {
        1 => img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        3 => {
            let rgb = img.to_rgb8().into_raw();
            let mut planar = vec![0.0; 3 * h * w];
            for (i, px) in rgb.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    planar[c * h * w + i] = px[c] as f64 / 255.0;
                }
            }
            planar
        }
        c => return Err(Error::InvalidConfig(format!("unsupported channel count {c}; use 1 or 3"))),
    };
    Tensor::new(vec![channels, h, w], data)
}

/// Loads `root/<class>/<image>` into a dataset. Files are read in
/// lexicographic order within lexicographically ordered class directories.
pub fn load_image_dir(root: &Path, classes: usize, opts: &LoadOptions) -> Result<Dataset> {
    if classes == 0 {
        return Err(Error::InvalidConfig("class count must be positive".into()));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (label, dir) in class_dirs(root, classes)?.iter().enumerate() {
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            match decode_image(&file, opts.channels) {
                Ok(img) => {
                    data.extend_from_slice(rescale_to_32(&img)?.data());
                    labels.push(label);
                }
                Err(Error::UnreadableImage { .. }) if opts.permissive => continue,
                Err(e) => return Err(e),
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::DatasetLoad(format!("no images found under {}", root.display())));
    }
    let images = Tensor::new(vec![labels.len(), opts.channels, IMAGE_SIZE, IMAGE_SIZE], data)?;
    Dataset::new(images, labels, classes, SplitTag::Full)
}

/// Bilinear resize of a `C×H×W` image with half-pixel centers; samples
/// outside the image clamp to the border. Output is clamped to `[0, 1]`.
pub fn rescale(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::ShapeMismatch(format!("rescale expects C×H×W, got {:?}", image.shape())));
    };
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::EmptyInput);
    }
    // Source coordinate and blend weight of each output row/column.
    let axis = |src: usize, dst: usize| -> Vec<(usize, usize, f64)> {
        let ratio = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let rows = axis(h, out_h);
    let cols = axis(w, out_w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

pub fn rescale_to_32(image: &Tensor) -> Result<Tensor> {
    rescale(image, IMAGE_SIZE, IMAGE_SIZE)
}
