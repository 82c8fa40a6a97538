//! Pipeline stages. Each stage reads the files of its upstream stages and
//! writes its own under the run directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mmprofile::corpus::{
    check_disjoint, chunk_tweets, generate_synthetic_corpus, load_labeled_image_dataset, load_pan_dataset, DatasetSplit,
    LabeledImageDataset, SplitName, SyntheticSpec, TweetChunk,
};
use mmprofile::evaluation::{confusion_matrix, emit_confusion_plot, metrics_from_confusion, render_report, MetricsReport, ReportLayout};
use mmprofile::image_model::{fine_tune_image_model, load_image_model, predict_images, save_image_model, ImageProbs};
use mmprofile::numeric::{derive_seed, seeded_rng};
use mmprofile::stacking::{
    assemble_fused_vector, build_modality_features, predict_combiner, read_feature_cache, train_combiner, vote_gender,
    write_feature_cache, CachedUser, CombinerKind, CombinerTarget, Modality, ModalityFeatures,
    ITEMS_PER_USER,
};
use mmprofile::text_model::{fine_tune_text_model, load_text_model, predict_chunks, save_text_model, TextModelHandle, TextProbs};
use mmprofile::{GenderLabel, ImageClass};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    TrainImage,
    TrainText,
    Features,
    Stack,
    Fuse,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::TrainImage,
        Stage::TrainText,
        Stage::Features,
        Stage::Stack,
        Stage::Fuse,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::TrainImage => "train-image",
            Stage::TrainText => "train-text",
            Stage::Features => "features",
            Stage::Stack => "stack",
            Stage::Fuse => "fuse",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// Parse a comma-separated list; the result is in canonical order.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let st: Stage = part.parse().map_err(CliError::Config)?;
            if !out.contains(&st) {
                out.push(st);
            }
        }
        if out.is_empty() {
            return Err(CliError::Config("no stages given".into()));
        }
        out.sort();
        Ok(out)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s || st.as_str().replace('-', "_") == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.as_str()).collect();
                format!("unknown stage {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// Artifact locations relative to a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn users(&self, split: SplitName) -> PathBuf {
        self.root.join("ingest").join(format!("users_{split}.json"))
    }

    pub fn chunks(&self, split: SplitName) -> PathBuf {
        self.root.join("ingest").join(format!("chunks_{split}.json"))
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("ingest").join("images.json")
    }

    pub fn image_model(&self) -> PathBuf {
        self.root.join("models").join("image")
    }

    pub fn text_model(&self) -> PathBuf {
        self.root.join("models").join("text")
    }

    pub fn text_fold(&self, k: usize) -> PathBuf {
        self.text_model().join("folds").join(k.to_string())
    }

    pub fn folds(&self) -> PathBuf {
        self.text_model().join("folds.json")
    }

    pub fn features(&self, split: SplitName) -> PathBuf {
        self.root.join("features").join(format!("{split}.csv"))
    }

    pub fn feature_flags(&self) -> PathBuf {
        self.root.join("features").join("flags.json")
    }

    pub fn stack_predictions(&self) -> PathBuf {
        self.root.join("stack").join("predictions.csv")
    }

    pub fn fuse_predictions(&self) -> PathBuf {
        self.root.join("fuse").join("predictions.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("reports").join("metrics.json")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn require(stage: Stage, upstream: Stage, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::StageDependency { stage: stage.as_str(), upstream: upstream.as_str(), missing: path.to_path_buf() })
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| CliError::io(path, e))
}

fn remove_dir(path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

/// Chunks of one user as written by the ingest stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserChunks {
    pub user_id: String,
    pub label: Option<GenderLabel>,
    pub cycled: bool,
    pub chunks: Vec<TweetChunk>,
}

const SPLITS: [SplitName; 2] = [SplitName::Train, SplitName::Test];

fn synthetic_is_current(dir: &Path, spec: &SyntheticSpec) -> bool {
    let Ok(s) = fs::read_to_string(dir.join("synthetic.json")) else { return false };
    serde_json::from_str::<SyntheticSpec>(&s).map(|old| &old == spec).unwrap_or(false)
}

/// Write the synthetic corpus described by the config under its data dir,
/// reusing an existing one generated from the same parameters.
pub fn synthesize(cfg: &PipelineConfig) -> Result<(PathBuf, PathBuf)> {
    let spec = cfg
        .synthetic_spec()
        .ok_or_else(|| CliError::Config("synth needs a [synthetic] section".into()))?;
    let dir = cfg.data_dir();
    if !synthetic_is_current(&dir, &spec) {
        generate_synthetic_corpus(&spec, &dir)?;
    }
    Ok((dir.join("pan"), dir.join("images")))
}

pub fn ingest(cfg: &PipelineConfig, layout: &RunLayout) -> Result<Vec<PathBuf>> {
    let (pan_root, image_root) = match &cfg.corpus {
        Some(c) => (c.pan_root.clone(), c.image_root.clone()),
        None => synthesize(cfg)?,
    };
    let train = load_pan_dataset(&pan_root, &cfg.language, SplitName::Train)?;
    let test = load_pan_dataset(&pan_root, &cfg.language, SplitName::Test)?;
    check_disjoint(&train, &test)?;
    let images = load_labeled_image_dataset(&image_root)?;

    let mut written = Vec::new();
    for split in [&train, &test] {
        let chunks = split
            .users
            .iter()
            .map(|u| {
                let set = chunk_tweets(u, &cfg.chunking, cfg.chunk_seed())?;
                Ok(UserChunks { user_id: u.user_id.clone(), label: u.label, cycled: set.cycled, chunks: set.chunks })
            })
            .collect::<Result<Vec<_>>>()?;
        write_json(&layout.users(split.name), split)?;
        write_json(&layout.chunks(split.name), &chunks)?;
        written.extend([layout.users(split.name), layout.chunks(split.name)]);
    }
    write_json(&layout.images(), &images)?;
    written.push(layout.images());
    Ok(written)
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
            let p = e.map_err(|e| CliError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn train_image(cfg: &PipelineConfig, layout: &RunLayout) -> Result<Vec<PathBuf>> {
    require(Stage::TrainImage, Stage::Ingest, &layout.images())?;
    let images: LabeledImageDataset = read_json(&layout.images())?;
    let handle = fine_tune_image_model(&images, &cfg.image_model_config())?;
    let dir = layout.image_model();
    remove_dir(&dir)?;
    save_image_model(&handle, &dir)?;

    let items = images.items(SplitName::Test);
    let paths: Vec<&PathBuf> = items.iter().map(|(p, _)| p).collect();
    let preds = predict_images(&handle, &paths)
        .into_iter()
        .map(|r| r.map(|p| p.class()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let labels: Vec<ImageClass> = items.iter().map(|(_, c)| *c).collect();
    let report = metrics_from_confusion(&confusion_matrix(&preds, &labels, &ImageClass::ALL)?)?
        .with_meta("image_model", "labeled-images");
    write_json(&dir.join("eval.json"), &report)?;
    files_under(&dir)
}

fn labeled_chunks(users: &[UserChunks], keep: impl Fn(usize) -> bool) -> Vec<(TweetChunk, GenderLabel)> {
    users
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .filter_map(|(_, u)| u.label.map(|l| (u, l)))
        .flat_map(|(u, l)| u.chunks.iter().map(move |c| (c.clone(), l)))
        .collect()
}

/// Fold index of every train user, from a seeded permutation.
fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(derive_seed(seed, "folds")));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

pub fn train_text(cfg: &PipelineConfig, layout: &RunLayout) -> Result<Vec<PathBuf>> {
    for split in SPLITS {
        require(Stage::TrainText, Stage::Ingest, &layout.chunks(split))?;
    }
    let train: Vec<UserChunks> = read_json(&layout.chunks(SplitName::Train))?;
    let test: Vec<UserChunks> = read_json(&layout.chunks(SplitName::Test))?;
    let tcfg = cfg.text_model_config();
    let handle = fine_tune_text_model(&labeled_chunks(&train, |_| true), &tcfg)?;
    let dir = layout.text_model();
    remove_dir(&dir)?;
    save_text_model(&handle, &dir)?;

    let k = cfg.stacking.out_of_fold;
    if k >= 2 {
        let folds = assign_folds(train.len(), k, cfg.seed);
        for f in 0..k {
            let data = labeled_chunks(&train, |i| folds[i] != f);
            let fold_cfg = mmprofile::text_model::TextClassifierConfig {
                seed: derive_seed(tcfg.seed, &format!("fold:{f}")),
                ..tcfg.clone()
            };
            save_text_model(&fine_tune_text_model(&data, &fold_cfg)?, &layout.text_fold(f))?;
        }
        let map: BTreeMap<&str, usize> = train.iter().zip(&folds).map(|(u, &f)| (u.user_id.as_str(), f)).collect();
        write_json(&layout.folds(), &map)?;
    }

    let eval = labeled_chunks(&test, |_| true);
    if !eval.is_empty() {
        let chunks: Vec<TweetChunk> = eval.iter().map(|(c, _)| c.clone()).collect();
        let preds = predict_chunks(&handle, &chunks)
            .into_iter()
            .map(|r| r.map(|p| p.label()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let labels: Vec<GenderLabel> = eval.iter().map(|(_, l)| *l).collect();
        let report = metrics_from_confusion(&confusion_matrix(&preds, &labels, &GenderLabel::ALL)?)?
            .with_meta("text_model", "tweet-chunks");
        write_json(&dir.join("eval.json"), &report)?;
    }
    files_under(&dir)
}

/// Per-user notes from feature extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserFlags {
    pub user_id: String,
    pub image_items: usize,
    pub padded_image_slots: usize,
    pub dropped_images: usize,
    pub failed_images: Vec<String>,
    pub chunks_cycled: bool,
}

fn text_features(
    users: &[UserChunks],
    model_of: impl Fn(usize) -> usize,
    models: &[TextModelHandle],
) -> Result<Vec<Vec<TextProbs>>> {
    let mut out: Vec<Vec<TextProbs>> = vec![Vec::new(); users.len()];
    for (m, handle) in models.iter().enumerate() {
        let owners: Vec<usize> = (0..users.len()).filter(|&i| model_of(i) == m).collect();
        let chunks: Vec<TweetChunk> = owners.iter().flat_map(|&i| users[i].chunks.iter().cloned()).collect();
        let mut preds = predict_chunks(handle, &chunks).into_iter();
        for &i in &owners {
            for _ in 0..users[i].chunks.len() {
                out[i].push(preds.next().expect("one prediction per chunk")?);
            }
        }
    }
    Ok(out)
}

pub fn features(cfg: &PipelineConfig, layout: &RunLayout) -> Result<Vec<PathBuf>> {
    for split in SPLITS {
        require(Stage::Features, Stage::Ingest, &layout.users(split))?;
        require(Stage::Features, Stage::Ingest, &layout.chunks(split))?;
    }
    require(Stage::Features, Stage::TrainImage, &layout.image_model())?;
    require(Stage::Features, Stage::TrainText, &layout.text_model())?;
    let oof = cfg.stacking.out_of_fold;
    if oof >= 2 {
        require(Stage::Features, Stage::TrainText, &layout.folds())?;
    }
    let image = load_image_model(&layout.image_model())?;
    let text = load_text_model(&layout.text_model())?;

    let mut flags: BTreeMap<String, Vec<UserFlags>> = BTreeMap::new();
    let mut written = Vec::new();
    for split in SPLITS {
        let users: DatasetSplit = read_json(&layout.users(split))?;
        let chunks: Vec<UserChunks> = read_json(&layout.chunks(split))?;
        if users.users.iter().map(|u| &u.user_id).ne(chunks.iter().map(|c| &c.user_id)) {
            return Err(CliError::Config(format!("{} and {} list different users", layout.users(split).display(), layout.chunks(split).display())));
        }

        let paths: Vec<&PathBuf> = users.users.iter().flat_map(|u| u.images.iter().take(ITEMS_PER_USER)).collect();
        let mut image_preds = predict_images(&image, &paths).into_iter();

        let txt = if split == SplitName::Train && oof >= 2 {
            let folds: BTreeMap<String, usize> = read_json(&layout.folds())?;
            let mut models = Vec::with_capacity(oof);
            for f in 0..oof {
                require(Stage::Features, Stage::TrainText, &layout.text_fold(f))?;
                models.push(load_text_model(&layout.text_fold(f))?);
            }
            let fold_of = |i: usize| folds.get(&chunks[i].user_id).copied().unwrap_or(0);
            text_features(&chunks, fold_of, &models)?
        } else {
            text_features(&chunks, |_| 0, std::slice::from_ref(&text))?
        };

        let mut cached = Vec::with_capacity(users.len());
        let mut split_flags = Vec::with_capacity(users.len());
        for ((u, c), t) in users.users.iter().zip(&chunks).zip(txt) {
            let mut ok: Vec<ImageProbs> = Vec::new();
            let mut failed = Vec::new();
            for p in u.images.iter().take(ITEMS_PER_USER) {
                match image_preds.next().expect("one prediction per image") {
                    Ok(probs) => ok.push(probs),
                    Err(e) => failed.push(format!("{}: {e}", p.display())),
                }
            }
            let img = if ok.is_empty() {
                ModalityFeatures::uniform(&u.user_id, Modality::Image)
            } else {
                build_modality_features(&u.user_id, &ok, Modality::Image)?
            };
            let txt = build_modality_features(&u.user_id, &t, Modality::Text)?;
            split_flags.push(UserFlags {
                user_id: u.user_id.clone(),
                image_items: ok.len(),
                padded_image_slots: img.padded_items,
                dropped_images: u.images.len().saturating_sub(ITEMS_PER_USER),
                failed_images: failed,
                chunks_cycled: c.cycled,
            });
            cached.push(CachedUser { fused: assemble_fused_vector(&img, &txt)?, label: u.label });
        }
        write_feature_cache(&layout.features(split), &cached)?;
        written.push(layout.features(split));
        flags.insert(split.to_string(), split_flags);
    }
    write_json(&layout.feature_flags(), &flags)?;
    written.push(layout.feature_flags());
    Ok(written)
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub user_id: String,
    pub target: CombinerTarget,
    pub model: String,
    pub label: Option<GenderLabel>,
    pub predicted: GenderLabel,
    pub p_female: f64,
    pub p_male: f64,
}

pub const VOTE_MODEL: &str = "majority_vote";

fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(["user_id", "target", "model", "label", "predicted", "p_female", "p_male"])
        .map_err(|e| CliError::io(path, e))?;
    for r in rows {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([
            r.user_id.as_str(),
            r.target.as_str(),
            &r.model,
            &label,
            r.predicted.as_str(),
            &format!("{:?}", r.p_female),
            &format!("{:?}", r.p_male),
        ])
        .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let bad = |what: &str| CliError::io(path, format!("bad {what} in row {:?}", rec));
        let target = match &rec[1] {
            "image" => CombinerTarget::Image,
            "text" => CombinerTarget::Text,
            "fusion" => CombinerTarget::Fusion,
            _ => return Err(bad("target")),
        };
        let label = if rec[3].is_empty() { None } else { Some(rec[3].parse().map_err(|_| bad("label"))?) };
        out.push(PredictionRow {
            user_id: rec[0].to_string(),
            target,
            model: rec[2].to_string(),
            label,
            predicted: rec[4].parse().map_err(|_| bad("prediction"))?,
            p_female: rec[5].parse().map_err(|_| bad("p_female"))?,
            p_male: rec[6].parse().map_err(|_| bad("p_male"))?,
        });
    }
    Ok(out)
}

fn load_cache(stage: Stage, cfg: &PipelineConfig, layout: &RunLayout) -> Result<(Vec<CachedUser>, Vec<CachedUser>)> {
    let mut out = Vec::new();
    for split in SPLITS {
        let path = layout.features(split);
        require(stage, Stage::Features, &path)?;
        let mut users = read_feature_cache(&path)?;
        if cfg.stacking.hard_labels {
            for u in &mut users {
                u.fused = u.fused.hard_labels();
            }
        }
        out.push(users);
    }
    let test = out.pop().expect("two splits");
    let train = out.pop().expect("two splits");
    Ok((train, test))
}

fn training_set(users: &[CachedUser], target: CombinerTarget) -> Vec<(Vec<f64>, GenderLabel)> {
    users.iter().filter_map(|u| u.label.map(|l| (target.select(&u.fused).to_vec(), l))).collect()
}

fn combiner_rows(
    cfg: &PipelineConfig,
    train: &[CachedUser],
    test: &[CachedUser],
    target: CombinerTarget,
    kind: CombinerKind,
    model_dir: &Path,
) -> Result<(PathBuf, Vec<PredictionRow>)> {
    let seed = cfg.combiner_seed(&format!("{}:{}", target.as_str(), kind.as_str()));
    let model = train_combiner(kind, target, &training_set(train, target), seed)?;
    let path = model_dir.join(format!("{}_{}.json", target.as_str(), kind.as_str()));
    write_bytes(&path, model.to_json().as_bytes())?;
    let rows = test
        .iter()
        .map(|u| {
            let (predicted, p) = predict_combiner(&model, target.select(&u.fused))?;
            Ok(PredictionRow {
                user_id: u.fused.user_id.clone(),
                target,
                model: kind.as_str().to_string(),
                label: u.label,
                predicted,
                p_female: p[0],
                p_male: p[1],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((path, rows))
}

/// Majority vote over a user's non-padded items; the probabilities are the
/// vote shares of the two gender classes.
fn vote_row(u: &CachedUser, target: CombinerTarget) -> Result<PredictionRow> {
    let arity = match target {
        CombinerTarget::Image => 3,
        _ => 2,
    };
    let uniform = 1.0 / arity as f64;
    let items: Vec<&[f64]> = target
        .select(&u.fused)
        .chunks(arity)
        .filter(|p| p.iter().any(|&v| v != uniform))
        .collect();
    let (predicted, shares) = if items.is_empty() {
        (GenderLabel::Female, [0.5, 0.5])
    } else {
        let male = items.iter().filter(|p| p[1] > p[0]).count() as f64;
        let n = items.len() as f64;
        (vote_gender(&items)?, [(n - male) / n, male / n])
    };
    Ok(PredictionRow {
        user_id: u.fused.user_id.clone(),
        target,
        model: VOTE_MODEL.to_string(),
        label: u.label,
        predicted,
        p_female: shares[0],
        p_male: shares[1],
    })
}

pub fn stack(cfg: &PipelineConfig, layout: &RunLayout) -> Result<Vec<PathBuf>> {
    let (train, test) = load_cache(Stage::Stack, cfg, layout)?;
    let model_dir = layout.root.join("stack").join("models");
    remove_dir(&model_dir)?;
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for target in [CombinerTarget::Image, CombinerTarget::Text] {
        for kind in cfg.stacking.kinds() {
            let (path, r) = combiner_rows(cfg, &train, &test, target, kind, &model_dir)?;
            written.push(path);
            rows.extend(r);
        }
        for u in &test {
            rows.push(vote_row(u, target)?);
        }
    }
    write_predictions(&layout.stack_predictions(), &rows)?;
    written.push(layout.stack_predictions());
    Ok(written)
}

pub fn fuse(cfg: &PipelineConfig, layout: &RunLayout) -> Result<Vec<PathBuf>> {
    let (train, test) = load_cache(Stage::Fuse, cfg, layout)?;
    let model_dir = layout.root.join("fuse").join("models");
    remove_dir(&model_dir)?;
    let (path, rows) = combiner_rows(cfg, &train, &test, CombinerTarget::Fusion, cfg.stacking.fusion_combiner, &model_dir)?;
    write_predictions(&layout.fuse_predictions(), &rows)?;
    Ok(vec![path, layout.fuse_predictions()])
}

/// User-level metrics of one combiner on one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLevelMetrics {
    pub target: CombinerTarget,
    pub model: String,
    pub report: MetricsReport,
}

/// Which combiners stand for each modality in the modality comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub image: CombinerKind,
    pub text: CombinerKind,
    pub fusion: CombinerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub dataset: String,
    pub image_model: Option<MetricsReport>,
    pub text_model: Option<MetricsReport>,
    pub user_level: Vec<UserLevelMetrics>,
    pub selection: Selection,
}

impl EvaluationSummary {
    pub fn find(&self, target: CombinerTarget, model: &str) -> Option<&MetricsReport> {
        self.user_level.iter().find(|m| m.target == target && m.model == model).map(|m| &m.report)
    }

    pub fn image_only(&self) -> Option<&MetricsReport> {
        self.find(CombinerTarget::Image, self.selection.image.as_str())
    }

    pub fn text_only(&self) -> Option<&MetricsReport> {
        self.find(CombinerTarget::Text, self.selection.text.as_str())
    }

    pub fn fused(&self) -> Option<&MetricsReport> {
        self.find(CombinerTarget::Fusion, self.selection.fusion.as_str())
    }
}

fn dataset_name(cfg: &PipelineConfig) -> String {
    if cfg.synthetic.is_some() {
        format!("synthetic-{}", cfg.language)
    } else {
        format!("pan-{}", cfg.language)
    }
}

pub fn evaluate(cfg: &PipelineConfig, layout: &RunLayout) -> Result<Vec<PathBuf>> {
    require(Stage::Evaluate, Stage::Stack, &layout.stack_predictions())?;
    require(Stage::Evaluate, Stage::Fuse, &layout.fuse_predictions())?;
    let mut rows = read_predictions(&layout.stack_predictions())?;
    rows.extend(read_predictions(&layout.fuse_predictions())?);

    let dataset = dataset_name(cfg);
    let mut groups: Vec<((CombinerTarget, String), (Vec<GenderLabel>, Vec<GenderLabel>))> = Vec::new();
    for r in rows {
        let Some(label) = r.label else { continue };
        let key = (r.target, r.model);
        let idx = match groups.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                groups.push((key, (Vec::new(), Vec::new())));
                groups.len() - 1
            }
        };
        groups[idx].1 .0.push(r.predicted);
        groups[idx].1 .1.push(label);
    }
    let mut user_level = Vec::new();
    for ((target, model), (preds, labels)) in groups {
        let name = format!("{}:{}", target.as_str(), model);
        let report = metrics_from_confusion(&confusion_matrix(&preds, &labels, &GenderLabel::ALL)?)?.with_meta(name, &dataset);
        user_level.push(UserLevelMetrics { target, model, report });
    }

    let item = |p: PathBuf| -> Result<Option<MetricsReport>> { if p.is_file() { read_json(&p).map(Some) } else { Ok(None) } };
    let summary = EvaluationSummary {
        dataset,
        image_model: item(layout.image_model().join("eval.json"))?,
        text_model: item(layout.text_model().join("eval.json"))?,
        user_level,
        selection: Selection {
            image: cfg.stacking.image_combiner,
            text: cfg.stacking.text_combiner,
            fusion: cfg.stacking.fusion_combiner,
        },
    };
    write_json(&layout.metrics(), &summary)?;
    Ok(vec![layout.metrics()])
}

fn column_name(model: &str) -> String {
    if model == VOTE_MODEL {
        "Vote".to_string()
    } else {
        model.parse::<CombinerKind>().map(|k| k.short_name().to_string()).unwrap_or_else(|_| model.to_string())
    }
}

fn renamed(r: &MetricsReport, name: String) -> MetricsReport {
    let dataset = r.dataset.clone();
    r.clone().with_meta(name, dataset)
}

/// Render tables and confusion plots from `reports/metrics.json`. Needs only
/// the run directory.
pub fn report(layout: &RunLayout) -> Result<Vec<PathBuf>> {
    require(Stage::Report, Stage::Evaluate, &layout.metrics())?;
    let summary: EvaluationSummary = read_json(&layout.metrics())?;
    let dir = layout.reports();
    let mut written = Vec::new();
    let mut tables: Vec<(&str, Vec<MetricsReport>, ReportLayout)> = Vec::new();

    if let Some(r) = &summary.image_model {
        tables.push(("image_model", vec![renamed(r, "Image model".into())], ReportLayout::PerModel));
    }
    if let Some(r) = &summary.text_model {
        tables.push(("text_model", vec![renamed(r, "Text model".into())], ReportLayout::PerModel));
    }
    for (name, target) in [("image_combiners", CombinerTarget::Image), ("text_combiners", CombinerTarget::Text)] {
        let reports: Vec<MetricsReport> = summary
            .user_level
            .iter()
            .filter(|m| m.target == target)
            .map(|m| renamed(&m.report, column_name(&m.model)))
            .collect();
        if !reports.is_empty() {
            tables.push((name, reports, ReportLayout::CombinerComparison));
        }
    }
    let modal: Vec<MetricsReport> = [
        ("Image", summary.image_only(), summary.selection.image),
        ("Text", summary.text_only(), summary.selection.text),
        ("Fused", summary.fused(), summary.selection.fusion),
    ]
    .into_iter()
    .filter_map(|(m, r, k)| r.map(|r| renamed(r, format!("{m}-{}", k.short_name()))))
    .collect();
    if !modal.is_empty() {
        tables.push(("modalities", modal, ReportLayout::ModalityComparison));
    }

    let mut all_text = String::new();
    for (name, reports, kind) in &tables {
        let rendered = render_report(reports, *kind)?;
        let txt = dir.join(format!("{name}.txt"));
        let csv = dir.join(format!("{name}.csv"));
        write_bytes(&txt, rendered.text.as_bytes())?;
        write_bytes(&csv, rendered.csv.as_bytes())?;
        all_text.push_str(&format!("[{name}]\n"));
        all_text.push_str(&rendered.text);
        all_text.push('\n');
        written.extend([txt, csv]);
    }
    let summary_path = dir.join("summary.txt");
    write_bytes(&summary_path, all_text.as_bytes())?;
    written.push(summary_path);

    let plots = dir.join("plots");
    let mut named: Vec<(String, &MetricsReport)> = Vec::new();
    if let Some(r) = &summary.image_model {
        named.push(("image_model".into(), r));
    }
    if let Some(r) = &summary.text_model {
        named.push(("text_model".into(), r));
    }
    for m in &summary.user_level {
        named.push((format!("{}_{}", m.target.as_str(), m.model), &m.report));
    }
    fs::create_dir_all(&plots).map_err(|e| CliError::io(&plots, e))?;
    for (name, r) in named {
        let p = plots.join(format!("{name}.png"));
        emit_confusion_plot(&r.matrix, &p)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lists_parse_in_canonical_order() {
        let s = Stage::parse_list("fuse, stack,evaluate,stack").unwrap();
        assert_eq!(s, vec![Stage::Stack, Stage::Fuse, Stage::Evaluate]);
        assert_eq!(Stage::parse_list("train_image").unwrap(), vec![Stage::TrainImage]);
        assert!(Stage::parse_list("bake").is_err());
        assert!(Stage::parse_list(" , ").is_err());
    }

    #[test]
    fn folds_partition_users() {
        let f = assign_folds(23, 4, 5);
        assert_eq!(f, assign_folds(23, 4, 5));
        for k in 0..4 {
            let n = f.iter().filter(|&&x| x == k).count();
            assert!(n == 5 || n == 6);
        }
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let rows = vec![
            PredictionRow {
                user_id: "a".into(),
                target: CombinerTarget::Fusion,
                model: "svm".into(),
                label: None,
                predicted: GenderLabel::Male,
                p_female: 0.1 + 0.2,
                p_male: 1.0 - (0.1 + 0.2),
            },
            PredictionRow {
                user_id: "b".into(),
                target: CombinerTarget::Image,
                model: VOTE_MODEL.into(),
                label: Some(GenderLabel::Female),
                predicted: GenderLabel::Female,
                p_female: 1.0,
                p_male: 0.0,
            },
        ];
        write_predictions(&p, &rows).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), rows);
    }

    #[test]
    fn missing_upstream_names_file_and_stage() {
        let dir = tempfile::tempdir().unwrap();
        let layout = RunLayout::new(dir.path());
        let err = report(&layout).unwrap_err();
        match err {
            CliError::StageDependency { stage, upstream, missing } => {
                assert_eq!((stage, upstream), ("report", "evaluate"));
                assert_eq!(missing, layout.metrics());
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn column_names() {
        assert_eq!(column_name("random_forest"), "RF");
        assert_eq!(column_name(VOTE_MODEL), "Vote");
    }
}
