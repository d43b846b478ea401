//! Deterministic synthetic text lines: sampled text rendered with a bitmap
//! font and optionally degraded with jitter, blur and noise.

mod fonts;

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError};
use crate::linenet::LineImage;

pub use fonts::{FontId, Glyph, SynthFont};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("character {0:?} is not supported by font {1}")]
    Unsupported(char, String),
    #[error("cannot render an empty line")]
    EmptyLine,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradeParams {
    #[serde(default)]
    pub pixel_noise_std: f64,
    #[serde(default)]
    pub blur_radius: usize,
    /// Maximum vertical shift in pixels.
    #[serde(default)]
    pub jitter: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DegradeParams {
    fn validate(&self) -> Result<(), SynthError> {
        if !self.pixel_noise_std.is_finite() || self.pixel_noise_std < 0.0 {
            return Err(SynthError::InvalidParams(format!(
                "noise std {} must be finite and non-negative",
                self.pixel_noise_std
            )));
        }
        Ok(())
    }
}

/// Concatenate glyphs left to right with `spacing * spacing_scale` blank
/// columns between neighbours.
pub fn render_line(text: &str, font: &SynthFont, spacing_scale: f64) -> Result<LineImage, SynthError> {
    let glyphs = text
        .chars()
        .map(|c| {
            font.glyphs
                .get(&c)
                .ok_or_else(|| SynthError::Unsupported(c, font.name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if glyphs.is_empty() {
        return Err(SynthError::EmptyLine);
    }
    if !spacing_scale.is_finite() || spacing_scale < 0.0 {
        return Err(SynthError::InvalidParams(format!("spacing scale {spacing_scale}")));
    }
    let gap = (font.spacing as f64 * spacing_scale).round() as usize;
    let width = glyphs.iter().map(|g| g.width).sum::<usize>() + gap * (glyphs.len() - 1);
    let mut pixels = Array2::zeros((font.height, width));
    let mut x0 = 0;
    for g in glyphs {
        for y in 0..g.height {
            for x in 0..g.width {
                if g.get(y, x) {
                    pixels[[y, x0 + x]] = 1.0;
                }
            }
        }
        x0 += g.width + gap;
    }
    Ok(LineImage::new(pixels).expect("binary image in range"))
}

fn box_blur(img: &Array2<f64>, radius: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let pass = |src: &Array2<f64>, horizontal: bool| {
        Array2::from_shape_fn((h, w), |(y, x)| {
            let (pos, len) = if horizontal { (x, w) } else { (y, h) };
            let lo = pos.saturating_sub(radius);
            let hi = (pos + radius).min(len - 1);
            let sum: f64 = (lo..=hi)
                .map(|p| if horizontal { src[[y, p]] } else { src[[p, x]] })
                .sum();
            sum / (hi - lo + 1) as f64
        })
    };
    pass(&pass(img, true), false)
}

/// Shift, blur and add Gaussian noise; intensities are clamped to `[0, 1]`.
pub fn degrade(line: &LineImage, params: &DegradeParams) -> Result<LineImage, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let src = line.pixels();
    let (h, w) = src.dim();
    let shift = if params.jitter > 0 {
        rng.gen_range(-(params.jitter as i64)..=params.jitter as i64)
    } else {
        0
    };
    let mut img = Array2::from_shape_fn((h, w), |(y, x)| {
        let sy = y as i64 - shift;
        if (0..h as i64).contains(&sy) {
            src[[sy as usize, x]]
        } else {
            0.0
        }
    });
    if params.blur_radius > 0 {
        img = box_blur(&img, params.blur_radius);
    }
    if params.pixel_noise_std > 0.0 {
        let normal = Normal::new(0.0, params.pixel_noise_std).expect("validated std");
        img.mapv_inplace(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0));
    }
    Ok(LineImage::new(img).expect("clamped"))
}

/// Random words over `alphabet` separated by single spaces. Words are added
/// until the text reaches `length` characters, so the last word may overrun.
pub fn sample_text(seed: u64, length: usize, alphabet: &[char], word_length: (usize, usize)) -> Result<String, SynthError> {
    if alphabet.is_empty() {
        return Err(SynthError::InvalidParams("alphabet is empty".into()));
    }
    let (lo, hi) = word_length;
    if lo == 0 || hi < lo {
        return Err(SynthError::InvalidParams(format!("word length range {lo}..={hi}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    let mut count = 0;
    while count < length.max(1) {
        if count > 0 {
            text.push(' ');
            count += 1;
        }
        for _ in 0..rng.gen_range(lo..=hi) {
            text.push(alphabet[rng.gen_range(0..alphabet.len())]);
            count += 1;
        }
    }
    Ok(text)
}

/// Mix a master seed with tags into an independent stream seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(master), |acc, &t| mix(acc ^ mix(t)))
}

fn default_word_length() -> (usize, usize) {
    (2, 7)
}

fn default_spacing_scale() -> f64 {
    1.0
}

/// Everything needed to regenerate a corpus byte for byte. Written to
/// `manifest.json` next to the lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub font: FontId,
    pub height: usize,
    pub n_lines: usize,
    pub seed: u64,
    /// Target characters per line.
    pub line_length: usize,
    #[serde(default = "default_word_length")]
    pub word_length: (usize, usize),
    /// Letters to sample from; the font's letters when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphabet: Option<String>,
    #[serde(default = "default_spacing_scale")]
    pub spacing_scale: f64,
    #[serde(default)]
    pub degrade: DegradeParams,
}

impl CorpusManifest {
    pub fn new(font: FontId, n_lines: usize, seed: u64) -> Self {
        CorpusManifest {
            font,
            height: 32,
            n_lines,
            seed,
            line_length: 12,
            word_length: default_word_length(),
            alphabet: None,
            spacing_scale: 1.0,
            degrade: DegradeParams::default(),
        }
    }

    pub fn font(&self) -> SynthFont {
        SynthFont::builtin(self.font, self.height)
    }

    /// Render line `index` in memory.
    pub fn line(&self, font: &SynthFont, index: usize) -> Result<(LineImage, String), SynthError> {
        let alphabet: Vec<char> = match &self.alphabet {
            Some(a) => a.chars().collect(),
            None => font.letters(),
        };
        let text_seed = derive_seed(self.seed, &[index as u64, 1]);
        let text = sample_text(text_seed, self.line_length, &alphabet, self.word_length)?;
        let clean = render_line(&text, font, self.spacing_scale)?;
        let mut params = self.degrade;
        params.seed = derive_seed(self.seed ^ self.degrade.seed, &[index as u64, 2]);
        Ok((degrade(&clean, &params)?, text))
    }

    /// All lines in memory, in index order.
    pub fn lines(&self) -> Result<Vec<(LineImage, String)>, SynthError> {
        let font = self.font();
        (0..self.n_lines)
            .into_par_iter()
            .map(|i| self.line(&font, i))
            .collect()
    }
}

/// Write `manifest.n_lines` image/text pairs plus `manifest.json` to `out_dir`.
pub fn generate_corpus(manifest: &CorpusManifest, out_dir: &Path) -> Result<CorpusManifest, SynthError> {
    std::fs::create_dir_all(out_dir)?;
    let font = manifest.font();
    (0..manifest.n_lines)
        .into_par_iter()
        .try_for_each(|i| -> Result<(), SynthError> {
            let (image, text) = manifest.line(&font, i)?;
            dataset::write_sample(out_dir, i, &image, &text)?;
            Ok(())
        })?;
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(out_dir.join(dataset::MANIFEST_FILE), json + "\n")?;
    Ok(manifest.clone())
}

/// Regenerate a corpus from the `manifest.json` in `src_dir` into `out_dir`.
pub fn regenerate(src_dir: &Path, out_dir: &Path) -> Result<CorpusManifest, SynthError> {
    let text = std::fs::read_to_string(src_dir.join(dataset::MANIFEST_FILE))?;
    let manifest: CorpusManifest = serde_json::from_str(&text)?;
    generate_corpus(&manifest, out_dir)
}
