//! Three-class image classifier: a frozen backbone plus a trainable
//! softmax head, with directory checkpoints.

mod backbone;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use backbone::{resolve_image_backbone, ImageBackbone, PatchStats, DEFAULT_IMAGE_BACKBONE, PATCH};

use crate::corpus::{LabeledImageDataset, SplitName};
use crate::labels::ImageClass;
use crate::numeric::{argmax, cross_entropy, derive_seed, seeded_rng, softmax};

const N_CLASSES: usize = 3;
const WEIGHTS_FILE: &str = "weights.bin";
const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum ImageModelError {
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("class {class} has no training images")]
    EmptyClass { class: ImageClass },
    #[error("image backbone {id:?} is not available")]
    BackboneUnavailable { id: String },
    #[error("invalid image classifier config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("training diverged (non-finite loss)")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, ImageModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageClassifierConfig {
    pub backbone_id: String,
    pub input_size: u32,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Adds a mirrored copy of every training image.
    pub horizontal_flip: bool,
}

impl Default for ImageClassifierConfig {
    fn default() -> Self {
        ImageClassifierConfig {
            backbone_id: DEFAULT_IMAGE_BACKBONE.to_string(),
            input_size: 224,
            epochs: 30,
            learning_rate: 0.01,
            batch_size: 16,
            seed: 0,
            horizontal_flip: false,
        }
    }
}

impl ImageClassifierConfig {
    pub fn validate(&self) -> Result<Arc<dyn ImageBackbone>> {
        if self.epochs < 1 {
            return Err(ImageModelError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(ImageModelError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ImageModelError::InvalidConfig(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        let backbone = resolve_image_backbone(&self.backbone_id)?;
        if !backbone.supports_input_size(self.input_size) {
            return Err(ImageModelError::InvalidConfig(format!(
                "input_size {} does not fit backbone {}",
                self.input_size, self.backbone_id
            )));
        }
        Ok(backbone)
    }
}

/// Square, 3-channel, normalized image in row-major HWC order.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    pub size: u32,
    pub data: Vec<f32>,
}

impl PixelGrid {
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.size as usize + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn shape(&self) -> (u32, u32, u32) {
        (self.size, self.size, 3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageProbs {
    pub probs: [f64; N_CLASSES],
}

impl ImageProbs {
    pub fn class(&self) -> ImageClass {
        ImageClass::from_index(argmax(&self.probs)).expect("three classes")
    }
}

impl AsRef<[f64]> for ImageProbs {
    fn as_ref(&self) -> &[f64] {
        &self.probs
    }
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let err = |message: String| ImageModelError::Decode { path: path.to_path_buf(), message };
    let img = image::ImageReader::open(path)
        .map_err(|e| err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| err(e.to_string()))?
        .decode()
        .map_err(|e| err(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(err("zero-sized image".into()));
    }
    Ok(img)
}

fn to_grid(rgb: &image::RgbImage, size: u32, (mean, std): ([f64; 3], [f64; 3])) -> PixelGrid {
    let resized = image::imageops::resize(rgb, size, size, FilterType::Triangle);
    let data = resized
        .pixels()
        .flat_map(|p| (0..3).map(move |c| ((p.0[c] as f64 / 255.0 - mean[c]) / std[c]) as f32))
        .collect();
    PixelGrid { size, data }
}

/// Decode, convert to RGB (grey channels are replicated), resize to the
/// configured size and normalize with the backbone's constants.
pub fn preprocess_image(path: &Path, config: &ImageClassifierConfig) -> Result<PixelGrid> {
    let backbone = config.validate()?;
    Ok(to_grid(&decode(path)?.to_rgb8(), config.input_size, backbone.normalization()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTrainHistory {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl ImageTrainHistory {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&self.initial_loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Head {
    mean: Vec<f64>,
    std: Vec<f64>,
    /// Row-major `N_CLASSES x dim`.
    w: Vec<f64>,
    b: [f64; N_CLASSES],
}

impl Head {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn logits(&self, z: &[f64]) -> [f64; N_CLASSES] {
        let d = self.dim();
        std::array::from_fn(|k| self.b[k] + self.w[k * d..(k + 1) * d].iter().zip(z).map(|(w, x)| w * x).sum::<f64>())
    }

    fn to_blob(&self) -> Vec<u8> {
        self.mean
            .iter()
            .chain(&self.std)
            .chain(&self.w)
            .chain(&self.b)
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }

    fn from_blob(bytes: &[u8], dim: usize) -> Option<Head> {
        if bytes.len() != 8 * (2 * dim + N_CLASSES * dim + N_CLASSES) {
            return None;
        }
        let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let (mean, rest) = vals.split_at(dim);
        let (std, rest) = rest.split_at(dim);
        let (w, b) = rest.split_at(N_CLASSES * dim);
        Some(Head { mean: mean.to_vec(), std: std.to_vec(), w: w.to_vec(), b: [b[0], b[1], b[2]] })
    }
}

/// A trained, frozen classifier. Cheap to clone and safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct ImageModelHandle {
    config: ImageClassifierConfig,
    backbone: Arc<dyn ImageBackbone>,
    head: Head,
    fingerprint: String,
    history: Option<ImageTrainHistory>,
}

impl ImageModelHandle {
    pub fn config(&self) -> &ImageClassifierConfig {
        &self.config
    }

    /// SHA-256 over the training images and their classes.
    pub fn training_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn history(&self) -> Option<&ImageTrainHistory> {
        self.history.as_ref()
    }

    fn probs_from_grid(&self, grid: &PixelGrid) -> ImageProbs {
        let z = self.head.standardize(&self.backbone.features(grid));
        let p = softmax(&self.head.logits(&z));
        ImageProbs { probs: [p[0], p[1], p[2]] }
    }
}

fn fingerprint(items: &[(PathBuf, ImageClass)]) -> Result<String> {
    let mut h = Sha256::new();
    let mut buf = Vec::new();
    for (path, class) in items {
        buf.clear();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| ImageModelError::Decode { path: path.clone(), message: e.to_string() })?;
        h.update(class.as_str().as_bytes());
        h.update((buf.len() as u64).to_le_bytes());
        h.update(&buf);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn mean_loss(head: &Head, zs: &[Vec<f64>], ys: &[usize]) -> f64 {
    zs.iter().zip(ys).map(|(z, &y)| cross_entropy(&head.logits(z), y)).sum::<f64>() / zs.len() as f64
}

/// Train the head on the train split of `dataset`.
pub fn fine_tune_image_model(dataset: &LabeledImageDataset, config: &ImageClassifierConfig) -> Result<ImageModelHandle> {
    let backbone = config.validate()?;
    let counts = dataset.counts(SplitName::Train);
    if let Some(class) = ImageClass::ALL.into_iter().find(|c| counts[c.index()] == 0) {
        return Err(ImageModelError::EmptyClass { class });
    }
    let items = dataset.items(SplitName::Train);
    let norm = backbone.normalization();

    let extracted: Vec<Vec<(Vec<f64>, usize)>> = items
        .par_iter()
        .map(|(path, class)| {
            let rgb = decode(path)?.to_rgb8();
            let mut out = vec![(backbone.features(&to_grid(&rgb, config.input_size, norm)), class.index())];
            if config.horizontal_flip {
                let flipped = image::imageops::flip_horizontal(&rgb);
                out.push((backbone.features(&to_grid(&flipped, config.input_size, norm)), class.index()));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let (feats, ys): (Vec<Vec<f64>>, Vec<usize>) = extracted.into_iter().flatten().unzip();

    let dim = backbone.feature_dim();
    let n = feats.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| feats.iter().map(|f| f[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dim)
        .map(|j| {
            let s = (feats.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
            if s > 1e-12 { s } else { 1.0 }
        })
        .collect();

    let mut rng = seeded_rng(derive_seed(config.seed, "image-head"));
    let limit = (6.0 / (dim + N_CLASSES) as f64).sqrt();
    let w = (0..N_CLASSES * dim).map(|_| rng.gen_range(-limit..limit)).collect();
    let mut head = Head { mean, std, w, b: [0.0; N_CLASSES] };
    let zs: Vec<Vec<f64>> = feats.iter().map(|f| head.standardize(f)).collect();

    let initial_loss = mean_loss(&head, &zs, &ys);
    let mut adam = Adam::new(N_CLASSES * dim + N_CLASSES, config.learning_rate);
    let mut order: Vec<usize> = (0..zs.len()).collect();
    let mut shuffle_rng = seeded_rng(derive_seed(config.seed, "image-shuffle"));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut grad = vec![0.0; N_CLASSES * dim + N_CLASSES];
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let logits = head.logits(&zs[i]);
                total += cross_entropy(&logits, ys[i]);
                let p = softmax(&logits);
                for k in 0..N_CLASSES {
                    let delta = (p[k] - (k == ys[i]) as u8 as f64) / batch.len() as f64;
                    for (g, x) in grad[k * dim..(k + 1) * dim].iter_mut().zip(&zs[i]) {
                        *g += delta * x;
                    }
                    grad[N_CLASSES * dim + k] += delta;
                }
            }
            adam.step(&mut head.w, &mut head.b, &grad);
        }
        let epoch_loss = total / zs.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(ImageModelError::NonFinite);
        }
        epoch_losses.push(epoch_loss);
    }

    Ok(ImageModelHandle {
        config: config.clone(),
        backbone,
        head,
        fingerprint: fingerprint(&items)?,
        history: Some(ImageTrainHistory { initial_loss, epoch_losses }),
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, w: &mut [f64], b: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (i, p) in w.iter_mut().chain(b.iter_mut()).enumerate() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            *p -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

pub fn predict_image(handle: &ImageModelHandle, path: &Path) -> Result<ImageProbs> {
    let rgb = decode(path)?.to_rgb8();
    Ok(handle.probs_from_grid(&to_grid(&rgb, handle.config.input_size, handle.backbone.normalization())))
}

/// Predict many images in parallel; results keep the input order.
pub fn predict_images<P: AsRef<Path> + Sync>(handle: &ImageModelHandle, paths: &[P]) -> Vec<Result<ImageProbs>> {
    paths.par_iter().map(|p| predict_image(handle, p.as_ref())).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Normalization {
    mean: [f64; 3],
    std: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageMeta {
    backbone_id: String,
    class_order: Vec<ImageClass>,
    input_size: u32,
    normalization: Normalization,
    seed: u64,
    training_fingerprint: String,
    feature_dim: usize,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    horizontal_flip: bool,
    history: Option<ImageTrainHistory>,
}

fn ckpt_err(path: &Path, e: impl std::fmt::Display) -> ImageModelError {
    ImageModelError::Checkpoint { path: path.to_path_buf(), message: e.to_string() }
}

pub fn save_image_model(handle: &ImageModelHandle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ckpt_err(dir, e))?;
    let (mean, std) = handle.backbone.normalization();
    let c = &handle.config;
    let meta = ImageMeta {
        backbone_id: c.backbone_id.clone(),
        class_order: ImageClass::ALL.to_vec(),
        input_size: c.input_size,
        normalization: Normalization { mean, std },
        seed: c.seed,
        training_fingerprint: handle.fingerprint.clone(),
        feature_dim: handle.head.dim(),
        epochs: c.epochs,
        learning_rate: c.learning_rate,
        batch_size: c.batch_size,
        horizontal_flip: c.horizontal_flip,
        history: handle.history.clone(),
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| ckpt_err(&meta_path, e))?;
    let weights = dir.join(WEIGHTS_FILE);
    fs::write(&weights, handle.head.to_blob()).map_err(|e| ckpt_err(&weights, e))
}

pub fn load_image_model(dir: &Path) -> Result<ImageModelHandle> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| ckpt_err(&meta_path, e))?;
    let meta: ImageMeta = serde_json::from_str(&text).map_err(|e| ckpt_err(&meta_path, e))?;
    if meta.class_order != ImageClass::ALL {
        return Err(ckpt_err(&meta_path, "unexpected class order"));
    }
    let config = ImageClassifierConfig {
        backbone_id: meta.backbone_id,
        input_size: meta.input_size,
        epochs: meta.epochs,
        learning_rate: meta.learning_rate,
        batch_size: meta.batch_size,
        seed: meta.seed,
        horizontal_flip: meta.horizontal_flip,
    };
    let backbone = config.validate()?;
    if backbone.feature_dim() != meta.feature_dim {
        return Err(ckpt_err(&meta_path, "feature dimension does not match backbone"));
    }
    let (mean, std) = backbone.normalization();
    if mean != meta.normalization.mean || std != meta.normalization.std {
        return Err(ckpt_err(&meta_path, "normalization does not match backbone"));
    }
    let weights = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&weights).map_err(|e| ckpt_err(&weights, e))?;
    let head = Head::from_blob(&blob, meta.feature_dim).ok_or_else(|| ckpt_err(&weights, "wrong weight count"))?;
    Ok(ImageModelHandle { config, backbone, head, fingerprint: meta.training_fingerprint, history: meta.history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    #[test]
    fn grayscale_is_replicated_and_resized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        GrayImage::from_fn(40, 30, |x, _| Luma([(x * 6) as u8])).save(&path).unwrap();
        let grid = preprocess_image(&path, &ImageClassifierConfig::default()).unwrap();
        assert_eq!(grid.shape(), (224, 224, 3));
        assert!(grid.data.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
        let p = grid.pixel(100, 50);
        assert_eq!(p[0], p[1]);
        assert_eq!(p[1], p[2]);
    }

    #[test]
    fn large_photo_is_resized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.jpg");
        RgbImage::from_pixel(1024, 768, Rgb([10, 200, 30])).save(&path).unwrap();
        let grid = preprocess_image(&path, &ImageClassifierConfig::default()).unwrap();
        assert_eq!(grid.data.len(), 224 * 224 * 3);
    }

    #[test]
    fn truncated_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        RgbImage::new(20, 20).save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = preprocess_image(&path, &ImageClassifierConfig::default()).unwrap_err();
        assert!(matches!(err, ImageModelError::Decode { .. }));
    }

    #[test]
    fn config_preconditions() {
        let bad = ImageClassifierConfig { epochs: 0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(ImageModelError::InvalidConfig(_))));
        let bad = ImageClassifierConfig { input_size: 100, ..Default::default() };
        assert!(matches!(bad.validate(), Err(ImageModelError::InvalidConfig(_))));
        let bad = ImageClassifierConfig { backbone_id: "google/vit-base-patch16-224".into(), ..Default::default() };
        assert!(matches!(bad.validate(), Err(ImageModelError::BackboneUnavailable { .. })));
    }

    #[test]
    fn head_blob_round_trip() {
        let head = Head { mean: vec![0.1, 0.2], std: vec![1.0, 3.0], w: vec![0.5, -0.25, 1e-300, 7.0, 8.0, 9.0], b: [1.0, 2.0, 3.0] };
        assert_eq!(Head::from_blob(&head.to_blob(), 2), Some(head.clone()));
        assert_eq!(Head::from_blob(&head.to_blob(), 3), None);
    }
}
