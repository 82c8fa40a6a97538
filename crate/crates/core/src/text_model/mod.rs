//! Binary text classifier over tweet chunks: subword tokenizer, mean-pooled
//! bag of token weights and a two-class softmax, with directory
//! checkpoints. Also hosts the single-tweet baseline.

mod tokenizer;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tokenizer::{
    resolve_text_backbone, strip_urls, HashedWordpiece, TextBackbone, CLS_ID, DEFAULT_TEXT_BACKBONE, PAD_ID, SEP_ID, UNK_ID,
};

use crate::corpus::{DatasetSplit, TweetChunk};
use crate::labels::GenderLabel;
use crate::numeric::{argmax, cross_entropy, derive_seed, seeded_rng, softmax};

pub const MAX_TOKENS_LIMIT: usize = 512;
const WEIGHTS_FILE: &str = "weights.bin";
const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum TextModelError {
    #[error("empty text")]
    EmptyText,
    #[error("training data must contain both labels")]
    SingleClassData,
    #[error("no training or evaluation examples")]
    EmptyDataset,
    #[error("text backbone {id:?} is not available")]
    BackboneUnavailable { id: String },
    #[error("invalid text classifier config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("training diverged (non-finite loss)")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, TextModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextClassifierConfig {
    pub backbone_id: String,
    pub max_tokens: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub strip_urls: bool,
}

impl Default for TextClassifierConfig {
    fn default() -> Self {
        TextClassifierConfig {
            backbone_id: DEFAULT_TEXT_BACKBONE.to_string(),
            max_tokens: MAX_TOKENS_LIMIT,
            epochs: 10,
            learning_rate: 0.5,
            batch_size: 16,
            seed: 0,
            strip_urls: false,
        }
    }
}

impl TextClassifierConfig {
    pub fn validate(&self) -> Result<Arc<dyn TextBackbone>> {
        if !(3..=MAX_TOKENS_LIMIT).contains(&self.max_tokens) {
            return Err(TextModelError::InvalidConfig(format!(
                "max_tokens must be in 3..={MAX_TOKENS_LIMIT}, got {}",
                self.max_tokens
            )));
        }
        if self.epochs < 1 {
            return Err(TextModelError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TextModelError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TextModelError::InvalidConfig(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        resolve_text_backbone(&self.backbone_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextProbs {
    pub probs: [f64; 2],
}

impl TextProbs {
    pub fn label(&self) -> GenderLabel {
        GenderLabel::from_index(argmax(&self.probs)).expect("two labels")
    }
}

impl AsRef<[f64]> for TextProbs {
    fn as_ref(&self) -> &[f64] {
        &self.probs
    }
}

fn encode(backbone: &dyn TextBackbone, text: &str, max_tokens: usize, strip: bool) -> Result<Vec<u32>> {
    if text.trim().is_empty() {
        return Err(TextModelError::EmptyText);
    }
    let cleaned;
    let text = if strip {
        cleaned = strip_urls(text);
        cleaned.as_str()
    } else {
        text
    };
    let mut ids = Vec::with_capacity(max_tokens);
    ids.push(CLS_ID);
    ids.extend(backbone.tokenize(text).into_iter().take(max_tokens - 2));
    ids.push(SEP_ID);
    Ok(ids)
}

/// Token ids for a chunk: `[CLS] pieces.. [SEP]`, keeping the leading
/// pieces when the text is too long for `max_tokens`.
pub fn prepare_chunk_tokens(chunk: &TweetChunk, config: &TextClassifierConfig) -> Result<Vec<u32>> {
    prepare_text_tokens(&chunk.text, config)
}

pub fn prepare_text_tokens(text: &str, config: &TextClassifierConfig) -> Result<Vec<u32>> {
    let backbone = config.validate()?;
    encode(backbone.as_ref(), text, config.max_tokens, config.strip_urls)
}

/// Mean-pooled bag: token id -> weight, specials excluded.
fn pooled(ids: &[u32]) -> Vec<(u32, f64)> {
    let body = &ids[1..ids.len() - 1];
    if body.is_empty() {
        return Vec::new();
    }
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for &t in body {
        *counts.entry(t).or_insert(0.0) += 1.0;
    }
    let n = body.len() as f64;
    let mut out: Vec<(u32, f64)> = counts.into_iter().map(|(t, c)| (t, c / n)).collect();
    out.sort_unstable_by_key(|&(t, _)| t);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextTrainHistory {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl TextTrainHistory {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&self.initial_loss)
    }
}

/// A trained, frozen classifier. Cheap to clone and safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct TextModelHandle {
    config: TextClassifierConfig,
    backbone: Arc<dyn TextBackbone>,
    /// Row-major `2 x vocab`.
    w: Vec<f64>,
    b: [f64; 2],
    history: Option<TextTrainHistory>,
}

impl TextModelHandle {
    pub fn config(&self) -> &TextClassifierConfig {
        &self.config
    }

    pub fn history(&self) -> Option<&TextTrainHistory> {
        self.history.as_ref()
    }

    fn logits(&self, bag: &[(u32, f64)]) -> [f64; 2] {
        let v = self.backbone.vocab_size();
        std::array::from_fn(|k| self.b[k] + bag.iter().map(|&(t, x)| self.w[k * v + t as usize] * x).sum::<f64>())
    }
}

fn fit_texts(examples: &[(&str, GenderLabel)], config: &TextClassifierConfig) -> Result<TextModelHandle> {
    let backbone = config.validate()?;
    if examples.is_empty() {
        return Err(TextModelError::EmptyDataset);
    }
    let has = |l: GenderLabel| examples.iter().any(|(_, y)| *y == l);
    if !has(GenderLabel::Female) || !has(GenderLabel::Male) {
        return Err(TextModelError::SingleClassData);
    }
    let bags: Vec<Vec<(u32, f64)>> = examples
        .par_iter()
        .map(|(t, _)| encode(backbone.as_ref(), t, config.max_tokens, config.strip_urls).map(|ids| pooled(&ids)))
        .collect::<Result<_>>()?;
    let ys: Vec<usize> = examples.iter().map(|(_, y)| y.index()).collect();

    let v = backbone.vocab_size();
    let mut rng = seeded_rng(derive_seed(config.seed, "text-head"));
    let w = (0..2 * v).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let mut handle = TextModelHandle { config: config.clone(), backbone, w, b: [0.0; 2], history: None };

    let loss_of = |h: &TextModelHandle| bags.iter().zip(&ys).map(|(bag, &y)| cross_entropy(&h.logits(bag), y)).sum::<f64>() / bags.len() as f64;
    let initial_loss = loss_of(&handle);

    let mut acc_w = vec![0.0; 2 * v];
    let mut acc_b = [0.0; 2];
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut shuffle_rng = seeded_rng(derive_seed(config.seed, "text-shuffle"));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let lr = config.learning_rate;
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut gw: HashMap<usize, f64> = HashMap::new();
            let mut gb = [0.0; 2];
            for &i in batch {
                let logits = handle.logits(&bags[i]);
                total += cross_entropy(&logits, ys[i]);
                let p = softmax(&logits);
                for k in 0..2 {
                    let delta = (p[k] - (k == ys[i]) as u8 as f64) / batch.len() as f64;
                    gb[k] += delta;
                    for &(t, x) in &bags[i] {
                        *gw.entry(k * v + t as usize).or_insert(0.0) += delta * x;
                    }
                }
            }
            for (j, g) in gw {
                acc_w[j] += g * g;
                handle.w[j] -= lr * g / (acc_w[j].sqrt() + 1e-8);
            }
            for k in 0..2 {
                acc_b[k] += gb[k] * gb[k];
                handle.b[k] -= lr * gb[k] / (acc_b[k].sqrt() + 1e-8);
            }
        }
        let epoch_loss = total / bags.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(TextModelError::NonFinite);
        }
        epoch_losses.push(epoch_loss);
    }
    handle.history = Some(TextTrainHistory { initial_loss, epoch_losses });
    Ok(handle)
}

/// Train on labeled chunks.
pub fn fine_tune_text_model(chunks: &[(TweetChunk, GenderLabel)], config: &TextClassifierConfig) -> Result<TextModelHandle> {
    let examples: Vec<(&str, GenderLabel)> = chunks.iter().map(|(c, y)| (c.text.as_str(), *y)).collect();
    fit_texts(&examples, config)
}

pub fn predict_text(handle: &TextModelHandle, text: &str) -> Result<TextProbs> {
    let ids = encode(handle.backbone.as_ref(), text, handle.config.max_tokens, handle.config.strip_urls)?;
    let p = softmax(&handle.logits(&pooled(&ids)));
    Ok(TextProbs { probs: [p[0], p[1]] })
}

/// Depends on the chunk text only.
pub fn predict_chunk(handle: &TextModelHandle, chunk: &TweetChunk) -> Result<TextProbs> {
    predict_text(handle, &chunk.text)
}

/// Predict many chunks in parallel; results keep the input order.
pub fn predict_chunks(handle: &TextModelHandle, chunks: &[TweetChunk]) -> Vec<Result<TextProbs>> {
    chunks.par_iter().map(|c| predict_chunk(handle, c)).collect()
}

fn labeled_tweets(split: &DatasetSplit) -> Vec<(&str, GenderLabel)> {
    split
        .users
        .iter()
        .filter_map(|u| u.label.map(|l| (u, l)))
        .flat_map(|(u, l)| u.tweets.iter().filter(|t| !t.trim().is_empty()).map(move |t| (t.as_str(), l)))
        .collect()
}

/// Train the same architecture on individual tweets (each carrying its
/// author's label) and return tweet-level accuracy on `test`.
pub fn evaluate_single_tweet_baseline(config: &TextClassifierConfig, train: &DatasetSplit, test: &DatasetSplit) -> Result<f64> {
    let train_tweets = labeled_tweets(train);
    let test_tweets = labeled_tweets(test);
    if test_tweets.is_empty() {
        return Err(TextModelError::EmptyDataset);
    }
    let handle = fit_texts(&train_tweets, config)?;
    let preds: Vec<Result<TextProbs>> = test_tweets.par_iter().map(|(t, _)| predict_text(&handle, t)).collect();
    let mut correct = 0usize;
    for (p, (_, y)) in preds.into_iter().zip(&test_tweets) {
        correct += (p?.label() == *y) as usize;
    }
    Ok(correct as f64 / test_tweets.len() as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct TextMeta {
    backbone_id: String,
    label_order: Vec<GenderLabel>,
    max_tokens: usize,
    seed: u64,
    vocab_size: usize,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    strip_urls: bool,
    history: Option<TextTrainHistory>,
}

fn ckpt_err(path: &Path, e: impl std::fmt::Display) -> TextModelError {
    TextModelError::Checkpoint { path: path.to_path_buf(), message: e.to_string() }
}

pub fn save_text_model(handle: &TextModelHandle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ckpt_err(dir, e))?;
    let c = &handle.config;
    let meta = TextMeta {
        backbone_id: c.backbone_id.clone(),
        label_order: GenderLabel::ALL.to_vec(),
        max_tokens: c.max_tokens,
        seed: c.seed,
        vocab_size: handle.backbone.vocab_size(),
        epochs: c.epochs,
        learning_rate: c.learning_rate,
        batch_size: c.batch_size,
        strip_urls: c.strip_urls,
        history: handle.history.clone(),
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| ckpt_err(&meta_path, e))?;
    let blob: Vec<u8> = handle.w.iter().chain(&handle.b).flat_map(|v| v.to_le_bytes()).collect();
    let weights = dir.join(WEIGHTS_FILE);
    fs::write(&weights, blob).map_err(|e| ckpt_err(&weights, e))
}

pub fn load_text_model(dir: &Path) -> Result<TextModelHandle> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| ckpt_err(&meta_path, e))?;
    let meta: TextMeta = serde_json::from_str(&text).map_err(|e| ckpt_err(&meta_path, e))?;
    if meta.label_order != GenderLabel::ALL {
        return Err(ckpt_err(&meta_path, "unexpected label order"));
    }
    let config = TextClassifierConfig {
        backbone_id: meta.backbone_id,
        max_tokens: meta.max_tokens,
        epochs: meta.epochs,
        learning_rate: meta.learning_rate,
        batch_size: meta.batch_size,
        seed: meta.seed,
        strip_urls: meta.strip_urls,
    };
    let backbone = config.validate()?;
    let v = backbone.vocab_size();
    if v != meta.vocab_size {
        return Err(ckpt_err(&meta_path, "vocabulary size does not match backbone"));
    }
    let weights = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&weights).map_err(|e| ckpt_err(&weights, e))?;
    if blob.len() != 8 * (2 * v + 2) {
        return Err(ckpt_err(&weights, "wrong weight count"));
    }
    let mut vals: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let b = [vals[2 * v], vals[2 * v + 1]];
    vals.truncate(2 * v);
    Ok(TextModelHandle { config, backbone, w: vals, b, history: meta.history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(text: &str, index: usize) -> TweetChunk {
        TweetChunk { user_id: format!("u{index}"), chunk_index: index, text: text.into(), member_indices: vec![] }
    }

    #[test]
    fn long_chunk_is_truncated_to_max_tokens() {
        let text = vec!["word"; 2000].join(" ");
        let ids = prepare_chunk_tokens(&chunk(&text, 0), &TextClassifierConfig::default()).unwrap();
        assert_eq!(ids.len(), 512);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(ids[511], SEP_ID);
    }

    #[test]
    fn one_word_chunk() {
        let cfg = TextClassifierConfig::default();
        let ids = prepare_chunk_tokens(&chunk("hi", 0), &cfg).unwrap();
        assert_eq!(ids.len(), 3);
        assert!(matches!(prepare_chunk_tokens(&chunk("  ", 0), &cfg), Err(TextModelError::EmptyText)));
    }

    #[test]
    fn max_tokens_bounds() {
        let cfg = TextClassifierConfig { max_tokens: 513, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(TextModelError::InvalidConfig(_))));
    }

    #[test]
    fn train_predict_round_trip() {
        let data: Vec<(TweetChunk, GenderLabel)> = (0..40)
            .map(|i| {
                let (t, l) = if i % 2 == 0 { ("i love lipstick so much", GenderLabel::Female) } else { ("big beard game today", GenderLabel::Male) };
                (chunk(t, i), l)
            })
            .collect();
        let h = fine_tune_text_model(&data, &TextClassifierConfig::default()).unwrap();
        let hist = h.history().unwrap();
        assert!(hist.final_loss() < hist.initial_loss);
        let p = predict_chunk(&h, &chunk("lipstick", 3)).unwrap();
        assert_eq!(p.label(), GenderLabel::Female);
        assert!((p.probs[0] + p.probs[1] - 1.0).abs() < 1e-12);
        assert_eq!(predict_chunk(&h, &chunk("lipstick", 7)).unwrap(), p);

        let dir = tempfile::tempdir().unwrap();
        save_text_model(&h, dir.path()).unwrap();
        let back = load_text_model(dir.path()).unwrap();
        assert_eq!(predict_chunk(&back, &chunk("big game", 1)).unwrap(), predict_chunk(&h, &chunk("big game", 1)).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        let data = vec![(chunk("a", 0), GenderLabel::Female), (chunk("b", 1), GenderLabel::Female)];
        assert!(matches!(fine_tune_text_model(&data, &TextClassifierConfig::default()), Err(TextModelError::SingleClassData)));
    }
}
