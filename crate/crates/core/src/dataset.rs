//! Dataset directories: `NNNNNN.png` grayscale line images (dark ink on white
//! paper) next to `NNNNNN.gt.txt` single-line UTF-8 transcriptions, plus an
//! optional `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use ndarray::Array2;
use thiserror::Error;

use crate::codec::normalize_text;
use crate::linenet::{normalize_line, LineImage, NetError};

pub const MANIFEST_FILE: &str = "manifest.json";
const GT_SUFFIX: &str = ".gt.txt";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Line { path: PathBuf, source: NetError },
    #[error("no line pairs found in {0}")]
    Empty(PathBuf),
}

/// One ground-truth line.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// File stem, e.g. `000012`.
    pub id: String,
    pub image: LineImage,
    pub text: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sample_stem(index: usize) -> String {
    format!("{index:06}")
}

/// Store an ink-high line image as an 8-bit PNG with white background.
pub fn write_image(path: &Path, line: &LineImage) -> Result<(), DatasetError> {
    let px = line.pixels();
    let img = GrayImage::from_fn(line.width() as u32, line.height() as u32, |x, y| {
        let ink = px[[y as usize, x as usize]];
        Luma([255 - (ink * 255.0).round() as u8])
    });
    img.save(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a grayscale image as ink-high intensities in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Array2<f64>, DatasetError> {
    let img = image::open(path)
        .map_err(|source| DatasetError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        1.0 - img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
    }))
}

/// Read an image and normalize it to `height` rows.
pub fn read_line(path: &Path, height: usize) -> Result<LineImage, DatasetError> {
    let raw = read_image(path)?;
    normalize_line(raw.view(), height).map_err(|source| DatasetError::Line {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_sample(dir: &Path, index: usize, line: &LineImage, text: &str) -> Result<(), DatasetError> {
    let stem = sample_stem(index);
    write_image(&dir.join(format!("{stem}.png")), line)?;
    let gt = dir.join(format!("{stem}{GT_SUFFIX}"));
    fs::write(&gt, format!("{text}\n")).map_err(io_err(&gt))
}

/// Ground truth file contents without the trailing line break, NFC
/// normalized.
pub fn read_text(path: &Path) -> Result<String, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(normalize_text(text.trim_end_matches(['\n', '\r'])))
}

/// Every `(png, gt.txt)` pair in `dir`, sorted by stem.
pub fn list_pairs(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, DatasetError> {
    let mut pairs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix(GT_SUFFIX) {
            let png = dir.join(format!("{stem}.png"));
            if png.exists() {
                pairs.push((stem.to_string(), png, path.clone()));
            }
        }
    }
    pairs.sort();
    Ok(pairs)
}

/// Load every line of a dataset directory at the given input height.
pub fn load_dataset(dir: &Path, height: usize) -> Result<Vec<Sample>, DatasetError> {
    let pairs = list_pairs(dir)?;
    if pairs.is_empty() {
        return Err(DatasetError::Empty(dir.to_path_buf()));
    }
    pairs
        .into_iter()
        .map(|(id, png, gt)| {
            Ok(Sample {
                id,
                image: read_line(&png, height)?,
                text: read_text(&gt)?,
            })
        })
        .collect()
}

/// Height of the first image in a dataset directory.
pub fn probe_height(dir: &Path) -> Result<usize, DatasetError> {
    let pairs = list_pairs(dir)?;
    let (_, png, _) = pairs.first().ok_or_else(|| DatasetError::Empty(dir.to_path_buf()))?;
    Ok(read_image(png)?.nrows())
}
