//! Deterministic embedding providers standing in for pretrained encoders,
//! plus the 64x64 RGB image loader shared with the vision encoder.

use std::fmt;
use std::path::PathBuf;

use image::imageops::FilterType;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::ImageRef;
use crate::text::{fnv1a, tokenize};

pub const IMAGE_SIDE: usize = 64;
pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot decode image {}: {message}", path.display())]
    UndecodableImage { path: PathBuf, message: String },
    #[error("precomputed image has {got} values, expected {IMAGE_LEN}")]
    BadFeatureLength { got: usize },
    #[error("unknown provider descriptor `{0}`")]
    UnknownProvider(String),
}

/// A 64x64 RGB image with values in `[0, 1]`, row-major, channel last.
#[derive(Clone, PartialEq)]
pub struct Pixels(Vec<f64>);

impl fmt::Debug for Pixels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pixels({} values)", self.0.len())
    }
}

impl Pixels {
    pub fn new(data: Vec<f64>) -> Result<Self, EmbedError> {
        if data.len() != IMAGE_LEN {
            return Err(EmbedError::BadFeatureLength { got: data.len() });
        }
        Ok(Self(data))
    }

    pub fn uniform(value: f64) -> Self {
        Self(vec![value; IMAGE_LEN])
    }

    pub fn data(&self) -> &[f64] {
        &self.0
    }

    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.0[(y * IMAGE_SIDE + x) * IMAGE_CHANNELS + ch]
    }

    /// Rows of flattened `patch x patch x 3` blocks in raster order.
    pub fn patches(&self, patch: usize) -> Vec<Vec<f64>> {
        let per_side = IMAGE_SIDE / patch;
        let mut out = Vec::with_capacity(per_side * per_side);
        for py in 0..per_side {
            for px in 0..per_side {
                let mut p = Vec::with_capacity(patch * patch * IMAGE_CHANNELS);
                for y in 0..patch {
                    for x in 0..patch {
                        for ch in 0..IMAGE_CHANNELS {
                            p.push(self.at(py * patch + y, px * patch + x, ch));
                        }
                    }
                }
                out.push(p);
            }
        }
        out
    }
}

/// Decodes (and resizes to 64x64) or validates a precomputed pixel grid.
pub fn load_pixels(image: &ImageRef) -> Result<Pixels, EmbedError> {
    match image {
        ImageRef::Features(v) => Pixels::new(v.clone()),
        ImageRef::Path(path) => {
            let img = image::open(path).map_err(|e| EmbedError::UndecodableImage {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let side = IMAGE_SIDE as u32;
            let rgb = img.resize_exact(side, side, FilterType::Triangle).to_rgb8();
            Pixels::new(rgb.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect())
        }
    }
}

pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
    fn descriptor(&self) -> String;
}

pub trait ImageEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, pixels: &Pixels) -> Vec<f64>;
    fn descriptor(&self) -> String;
}

/// Signed feature hashing of word tokens and character trigrams, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingTextEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashingTextEmbedder {
    fn default() -> Self {
        Self { dim: 64, seed: 0 }
    }
}

impl HashingTextEmbedder {
    fn add(&self, v: &mut [f64], feature: &str, weight: f64) {
        let h = fnv1a(self.seed, feature.as_bytes());
        let idx = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[idx] += sign * weight;
    }
}

impl TextEmbedder for HashingTextEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Empty or token-free text embeds as a fixed sentinel so the result is
    /// never the zero vector.
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push("\u{0}empty".to_string());
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            self.add(&mut v, &format!("w:{t}"), 1.0);
            let chars: Vec<char> = format!("#{t}#").chars().collect();
            for w in chars.windows(3) {
                self.add(&mut v, &format!("c:{}", w.iter().collect::<String>()), 0.5);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            v[0] = 1.0;
        }
        v
    }

    fn descriptor(&self) -> String {
        format!("hashing-text(dim={},seed={})", self.dim, self.seed)
    }
}

/// Mean and standard deviation of luminance over each 8x8 patch (dim 128).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PatchStatsImageEmbedder;

impl ImageEmbedder for PatchStatsImageEmbedder {
    fn dim(&self) -> usize {
        2 * (IMAGE_SIDE / 8) * (IMAGE_SIDE / 8)
    }

    fn embed(&self, pixels: &Pixels) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for patch in pixels.patches(8) {
            let gray: Vec<f64> = patch
                .chunks(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect();
            let n = gray.len() as f64;
            let mean = gray.iter().sum::<f64>() / n;
            let var = gray.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
            out.push(mean);
            out.push(var.sqrt());
        }
        out
    }

    fn descriptor(&self) -> String {
        "patch-stats-image(patch=8)".to_string()
    }
}

/// Providers used for initial node embeddings and unseen-metadata fallbacks.
pub struct ProviderSet {
    pub text: Box<dyn TextEmbedder>,
    pub image: Box<dyn ImageEmbedder>,
}

impl fmt::Debug for ProviderSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

impl Default for ProviderSet {
    fn default() -> Self {
        Self {
            text: Box::new(HashingTextEmbedder::default()),
            image: Box::new(PatchStatsImageEmbedder),
        }
    }
}

impl ProviderSet {
    pub fn hashing(text_dim: usize, seed: u64) -> Self {
        Self {
            text: Box::new(HashingTextEmbedder { dim: text_dim, seed }),
            image: Box::new(PatchStatsImageEmbedder),
        }
    }

    pub fn descriptor(&self) -> String {
        format!("text={};image={}", self.text.descriptor(), self.image.descriptor())
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.descriptor().as_bytes()).into()
    }

    /// Rebuilds the built-in providers from a descriptor string.
    pub fn from_descriptor(desc: &str) -> Result<Self, EmbedError> {
        let unknown = || EmbedError::UnknownProvider(desc.to_string());
        let (text, image) = desc
            .strip_prefix("text=")
            .and_then(|r| r.split_once(";image="))
            .ok_or_else(unknown)?;
        if image != PatchStatsImageEmbedder.descriptor() {
            return Err(unknown());
        }
        let args = text
            .strip_prefix("hashing-text(dim=")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|r| r.split_once(",seed="))
            .ok_or_else(unknown)?;
        let dim: usize = args.0.parse().map_err(|_| unknown())?;
        let seed: u64 = args.1.parse().map_err(|_| unknown())?;
        if dim == 0 {
            return Err(unknown());
        }
        Ok(Self::hashing(dim, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_unit() {
        let e = HashingTextEmbedder::default();
        let a = e.embed("vermeer");
        assert_eq!(a, e.embed("vermeer"));
        assert_eq!(a.len(), 64);
        let n: f64 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_ne!(a, e.embed("rembrandt"));
        assert!(e.embed("").iter().any(|x| *x != 0.0));
    }

    #[test]
    fn patch_stats_of_uniform_image() {
        let v = PatchStatsImageEmbedder.embed(&Pixels::uniform(0.5));
        assert_eq!(v.len(), 128);
        for pair in v.chunks(2) {
            assert!((pair[0] - 0.5).abs() < 1e-12);
            assert!(pair[1].abs() < 1e-9);
        }
    }

    #[test]
    fn patches_cover_the_image() {
        let data: Vec<f64> = (0..IMAGE_LEN).map(|i| i as f64).collect();
        let p = Pixels::new(data).unwrap().patches(8);
        assert_eq!(p.len(), 64);
        assert_eq!(p[0].len(), 192);
        assert_eq!(p[1][0], (8 * 3) as f64);
        assert_eq!(p[8][0], (8 * 64 * 3) as f64);
    }

    #[test]
    fn descriptor_round_trip() {
        let p = ProviderSet::hashing(32, 9);
        let q = ProviderSet::from_descriptor(&p.descriptor()).unwrap();
        assert_eq!(p.descriptor(), q.descriptor());
        assert!(ProviderSet::from_descriptor("text=bert;image=resnet").is_err());
    }

    #[test]
    fn png_is_resized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        image::RgbImage::from_pixel(20, 10, image::Rgb([255, 0, 0])).save(&path).unwrap();
        let px = load_pixels(&ImageRef::Path(path)).unwrap();
        assert_eq!(px.at(5, 5, 0), 1.0);
        assert_eq!(px.at(5, 5, 1), 0.0);
        let bad = load_pixels(&ImageRef::Path(dir.path().join("missing.png")));
        assert!(matches!(bad, Err(EmbedError::UndecodableImage { .. })));
    }
}
