//! Per-user stacking of item-level base-model outputs.
//!
//! A user's image outputs (10 items x 3 classes) and chunk outputs
//! (10 items x 2 classes) are flattened item-major, class-minor into fixed
//! 30- and 20-slot vectors, concatenated image-then-text into the 50-slot
//! fused vector, and classified by one of five combiner kinds.

mod bayes;
mod boosting;
pub mod cache;
mod forest;
mod svm;
mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::GenderLabel;
use crate::micronet::{self, MicroNetError, MicroNetParams, MicroNetSpec, TrainSpec};
use crate::numeric::argmax;

pub use cache::{read_feature_cache, write_feature_cache, CachedUser};

/// Items per user and modality.
pub const ITEMS_PER_USER: usize = 10;
pub const IMAGE_FEATURES: usize = ITEMS_PER_USER * 3;
pub const TEXT_FEATURES: usize = ITEMS_PER_USER * 2;
pub const FUSED_FEATURES: usize = IMAGE_FEATURES + TEXT_FEATURES;
/// Hidden width of the per-modality feedforward combiner.
pub const MODALITY_HIDDEN: usize = 3;
/// Hidden width of the fusion feedforward network.
pub const FUSION_HIDDEN: usize = 10;

const PROB_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum StackingError {
    #[error("at most {max} items per user, got {got}", max = ITEMS_PER_USER)]
    TooManyItems { got: usize },
    #[error("no items given")]
    NoItems,
    #[error("item {item}: expected {expected} class probabilities, got {got}")]
    ArityMismatch { item: usize, expected: usize, got: usize },
    #[error("item {item}: not a probability vector")]
    InvalidProbabilities { item: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },
    #[error("image features of {image} paired with text features of {text}")]
    UserMismatch { image: String, text: String },
    #[error("expected {expected} features, got {got} features")]
    ModalityMismatch { expected: Modality, got: Modality },
    #[error("training data must contain both classes")]
    SingleClassData,
    #[error("empty list")]
    EmptyList,
    #[error("feature cache: {0}")]
    Cache(String),
    #[error("combiner: {0}")]
    Model(String),
}

impl From<MicroNetError> for StackingError {
    fn from(e: MicroNetError) -> Self {
        match e {
            MicroNetError::SingleClassData => StackingError::SingleClassData,
            MicroNetError::DimensionError { expected, got } => StackingError::DimensionError { expected, got },
            other => StackingError::Model(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, StackingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    /// Number of classes of one item.
    pub fn arity(self) -> usize {
        match self {
            Modality::Image => 3,
            Modality::Text => 2,
        }
    }

    pub fn feature_len(self) -> usize {
        self.arity() * ITEMS_PER_USER
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Text => "text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityFeatures {
    pub user_id: String,
    pub modality: Modality,
    pub vector: Vec<f64>,
    /// Trailing slots filled with the uniform distribution.
    pub padded_items: usize,
}

impl ModalityFeatures {
    /// All slots uniform, for a user with no items of this modality.
    pub fn uniform(user_id: &str, modality: Modality) -> Self {
        let a = modality.arity();
        ModalityFeatures {
            user_id: user_id.to_string(),
            modality,
            vector: vec![1.0 / a as f64; modality.feature_len()],
            padded_items: ITEMS_PER_USER,
        }
    }

    /// Probability slice of item `i`.
    pub fn item(&self, i: usize) -> &[f64] {
        let a = self.modality.arity();
        &self.vector[i * a..(i + 1) * a]
    }
}

fn validate_probs(item: usize, p: &[f64], arity: usize) -> Result<()> {
    if p.len() != arity {
        return Err(StackingError::ArityMismatch { item, expected: arity, got: p.len() });
    }
    let in_range = p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
    if !in_range || (p.iter().sum::<f64>() - 1.0).abs() > PROB_TOLERANCE {
        return Err(StackingError::InvalidProbabilities { item });
    }
    Ok(())
}

/// Flatten 1..=10 item probability vectors item-major; missing items are
/// padded with the uniform distribution.
pub fn build_modality_features<P: AsRef<[f64]>>(user_id: &str, items: &[P], modality: Modality) -> Result<ModalityFeatures> {
    if items.is_empty() {
        return Err(StackingError::NoItems);
    }
    if items.len() > ITEMS_PER_USER {
        return Err(StackingError::TooManyItems { got: items.len() });
    }
    let arity = modality.arity();
    let mut vector = Vec::with_capacity(modality.feature_len());
    for (i, item) in items.iter().enumerate() {
        let p = item.as_ref();
        validate_probs(i, p, arity)?;
        vector.extend_from_slice(p);
    }
    let padded_items = ITEMS_PER_USER - items.len();
    vector.resize(modality.feature_len(), 1.0 / arity as f64);
    Ok(ModalityFeatures { user_id: user_id.to_string(), modality, vector, padded_items })
}

/// The 50-slot per-user vector: image slots 0..30, text slots 30..50.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedFeatureVector {
    pub user_id: String,
    pub vector: Vec<f64>,
}

impl FusedFeatureVector {
    pub const LAYOUT: &'static str = "image[0..30) text[30..50)";

    pub fn image(&self) -> &[f64] {
        &self.vector[..IMAGE_FEATURES]
    }

    pub fn text(&self) -> &[f64] {
        &self.vector[IMAGE_FEATURES..]
    }

    /// One-hot encode every item at its argmax.
    pub fn hard_labels(&self) -> FusedFeatureVector {
        let mut v = hard_labels(self.image(), Modality::Image.arity());
        v.extend(hard_labels(self.text(), Modality::Text.arity()));
        FusedFeatureVector { user_id: self.user_id.clone(), vector: v }
    }
}

pub fn assemble_fused_vector(img: &ModalityFeatures, txt: &ModalityFeatures) -> Result<FusedFeatureVector> {
    if img.modality != Modality::Image {
        return Err(StackingError::ModalityMismatch { expected: Modality::Image, got: img.modality });
    }
    if txt.modality != Modality::Text {
        return Err(StackingError::ModalityMismatch { expected: Modality::Text, got: txt.modality });
    }
    if img.vector.len() != IMAGE_FEATURES {
        return Err(StackingError::DimensionError { expected: IMAGE_FEATURES, got: img.vector.len() });
    }
    if txt.vector.len() != TEXT_FEATURES {
        return Err(StackingError::DimensionError { expected: TEXT_FEATURES, got: txt.vector.len() });
    }
    if img.user_id != txt.user_id {
        return Err(StackingError::UserMismatch { image: img.user_id.clone(), text: txt.user_id.clone() });
    }
    let mut vector = Vec::with_capacity(FUSED_FEATURES);
    vector.extend_from_slice(&img.vector);
    vector.extend_from_slice(&txt.vector);
    Ok(FusedFeatureVector { user_id: img.user_id.clone(), vector })
}

/// Replace each `arity`-wide item slice by a one-hot vector at its argmax.
pub fn hard_labels(vector: &[f64], arity: usize) -> Vec<f64> {
    vector
        .chunks(arity)
        .flat_map(|item| {
            let k = argmax(item);
            (0..item.len()).map(move |j| if j == k { 1.0 } else { 0.0 })
        })
        .collect()
}

/// Plurality of per-item argmax votes.
///
/// Ties go to the class whose voters have the higher mean probability for
/// it, then to the class earliest in canonical order.
pub fn majority_vote<P: AsRef<[f64]>>(items: &[P]) -> Result<usize> {
    let first = items.first().ok_or(StackingError::EmptyList)?;
    let k = first.as_ref().len();
    let mut votes = vec![0usize; k];
    let mut mass = vec![0.0f64; k];
    for (i, item) in items.iter().enumerate() {
        let p = item.as_ref();
        if p.len() != k {
            return Err(StackingError::ArityMismatch { item: i, expected: k, got: p.len() });
        }
        let c = argmax(p);
        votes[c] += 1;
        mass[c] += p[c];
    }
    let mut best = 0;
    for c in 1..k {
        let (vc, vb) = (votes[c], votes[best]);
        let mean = |c: usize| if votes[c] == 0 { 0.0 } else { mass[c] / votes[c] as f64 };
        if vc > vb || (vc == vb && mean(c) > mean(best)) {
            best = c;
        }
    }
    Ok(best)
}

/// Majority vote restricted to the gender classes (the first two entries
/// of each item), for item sets that also carry an "unknown" class.
pub fn vote_gender<P: AsRef<[f64]>>(items: &[P]) -> Result<GenderLabel> {
    let truncated: Vec<&[f64]> = items.iter().map(|p| &p.as_ref()[..2]).collect();
    Ok(GenderLabel::from_index(majority_vote(&truncated)?).expect("two classes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    FeedforwardNet,
    GradientBoostedTrees,
    RandomForest,
    Svm,
    NaiveBayes,
}

impl CombinerKind {
    pub const ALL: [CombinerKind; 5] = [
        CombinerKind::FeedforwardNet,
        CombinerKind::GradientBoostedTrees,
        CombinerKind::RandomForest,
        CombinerKind::Svm,
        CombinerKind::NaiveBayes,
    ];

    /// Column label used in comparison tables.
    pub fn short_name(self) -> &'static str {
        match self {
            CombinerKind::FeedforwardNet => "FNN",
            CombinerKind::GradientBoostedTrees => "XGB",
            CombinerKind::RandomForest => "RF",
            CombinerKind::Svm => "SVM",
            CombinerKind::NaiveBayes => "NB",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CombinerKind::FeedforwardNet => "feedforward_net",
            CombinerKind::GradientBoostedTrees => "gradient_boosted_trees",
            CombinerKind::RandomForest => "random_forest",
            CombinerKind::Svm => "svm",
            CombinerKind::NaiveBayes => "naive_bayes",
        }
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CombinerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        CombinerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.short_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown combiner kind {s:?}"))
    }
}

/// What a combiner consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinerTarget {
    Image,
    Text,
    Fusion,
}

impl CombinerTarget {
    pub fn input_dim(self) -> usize {
        match self {
            CombinerTarget::Image => IMAGE_FEATURES,
            CombinerTarget::Text => TEXT_FEATURES,
            CombinerTarget::Fusion => FUSED_FEATURES,
        }
    }

    /// Hidden width of the feedforward kind for this target.
    pub fn hidden_dim(self) -> usize {
        match self {
            CombinerTarget::Fusion => FUSION_HIDDEN,
            _ => MODALITY_HIDDEN,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CombinerTarget::Image => "image",
            CombinerTarget::Text => "text",
            CombinerTarget::Fusion => "fusion",
        }
    }

    /// Slice of a fused vector this target reads.
    pub fn select<'a>(&self, fused: &'a FusedFeatureVector) -> &'a [f64] {
        match self {
            CombinerTarget::Image => fused.image(),
            CombinerTarget::Text => fused.text(),
            CombinerTarget::Fusion => &fused.vector,
        }
    }
}

impl fmt::Display for CombinerTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CombinerState {
    FeedforwardNet(MicroNetParams),
    GradientBoostedTrees(boosting::GradientBoostedTrees),
    RandomForest(forest::RandomForest),
    Svm(svm::SvmClassifier),
    NaiveBayes(bayes::GaussianNaiveBayes),
}

/// A frozen, trained combiner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerModel {
    pub kind: CombinerKind,
    pub target: CombinerTarget,
    pub input_dim: usize,
    pub seed: u64,
    state: CombinerState,
}

impl CombinerModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("combiner serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: CombinerModel = serde_json::from_str(s).map_err(|e| StackingError::Model(e.to_string()))?;
        if m.input_dim != m.target.input_dim() {
            return Err(StackingError::DimensionError { expected: m.target.input_dim(), got: m.input_dim });
        }
        Ok(m)
    }

    /// Feedforward parameters, when this is the feedforward kind.
    pub fn feedforward_params(&self) -> Option<&MicroNetParams> {
        match &self.state {
            CombinerState::FeedforwardNet(p) => Some(p),
            _ => None,
        }
    }

    pub fn feedforward_params_mut(&mut self) -> Option<&mut MicroNetParams> {
        match &mut self.state {
            CombinerState::FeedforwardNet(p) => Some(p),
            _ => None,
        }
    }
}

/// Default optimisation settings of the feedforward combiner.
pub fn feedforward_train_spec(seed: u64) -> TrainSpec {
    TrainSpec { seed, ..TrainSpec::default() }
}

/// Train one combiner. Deterministic under `seed` for every kind.
pub fn train_combiner(
    kind: CombinerKind,
    target: CombinerTarget,
    features: &[(Vec<f64>, GenderLabel)],
    seed: u64,
) -> Result<CombinerModel> {
    let dim = target.input_dim();
    if let Some((x, _)) = features.iter().find(|(x, _)| x.len() != dim) {
        return Err(StackingError::DimensionError { expected: dim, got: x.len() });
    }
    let has = |l: GenderLabel| features.iter().any(|(_, y)| *y == l);
    if !has(GenderLabel::Female) || !has(GenderLabel::Male) {
        return Err(StackingError::SingleClassData);
    }
    let xs: Vec<&[f64]> = features.iter().map(|(x, _)| x.as_slice()).collect();
    let ys: Vec<usize> = features.iter().map(|(_, y)| y.index()).collect();

    let state = match kind {
        CombinerKind::FeedforwardNet => {
            let spec = MicroNetSpec::new(dim, target.hidden_dim(), seed);
            let init = micronet::init_network(&spec)?;
            CombinerState::FeedforwardNet(micronet::train(&init, features, &feedforward_train_spec(seed))?)
        }
        CombinerKind::GradientBoostedTrees => {
            CombinerState::GradientBoostedTrees(boosting::GradientBoostedTrees::fit(&xs, &ys, &Default::default()))
        }
        CombinerKind::RandomForest => {
            CombinerState::RandomForest(forest::RandomForest::fit(&xs, &ys, &Default::default(), seed))
        }
        CombinerKind::Svm => CombinerState::Svm(svm::SvmClassifier::fit(&xs, &ys, &Default::default(), seed)),
        CombinerKind::NaiveBayes => CombinerState::NaiveBayes(bayes::GaussianNaiveBayes::fit(&xs, &ys)),
    };
    Ok(CombinerModel { kind, target, input_dim: dim, seed, state })
}

/// Predicted label and `(p_female, p_male)`; female wins exact ties.
pub fn predict_combiner(model: &CombinerModel, vector: &[f64]) -> Result<(GenderLabel, [f64; 2])> {
    if vector.len() != model.input_dim {
        return Err(StackingError::DimensionError { expected: model.input_dim, got: vector.len() });
    }
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(StackingError::Model("non-finite feature value".into()));
    }
    let probs = match &model.state {
        CombinerState::FeedforwardNet(p) => micronet::forward(p, vector)?,
        CombinerState::GradientBoostedTrees(m) => binary(m.predict_male(vector)),
        CombinerState::RandomForest(m) => binary(m.predict_male(vector)),
        CombinerState::Svm(m) => binary(m.predict_male(vector)),
        CombinerState::NaiveBayes(m) => m.predict_proba(vector),
    };
    let label = if probs[1] > probs[0] { GenderLabel::Male } else { GenderLabel::Female };
    Ok((label, probs))
}

fn binary(p_male: f64) -> [f64; 2] {
    let p = p_male.clamp(0.0, 1.0);
    [1.0 - p, p]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_layout_repeats_items() {
        let items = vec![[0.2, 0.3, 0.5]; 10];
        let f = build_modality_features("u", &items, Modality::Image).unwrap();
        assert_eq!(f.vector.len(), 30);
        assert_eq!(f.padded_items, 0);
        for i in 0..10 {
            assert_eq!(f.item(i), &[0.2, 0.3, 0.5]);
        }
    }

    #[test]
    fn text_padding_is_uniform() {
        let items = vec![[0.9, 0.1]; 8];
        let f = build_modality_features("u", &items, Modality::Text).unwrap();
        assert_eq!(f.padded_items, 2);
        assert_eq!(&f.vector[16..20], &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn arity_and_count_errors() {
        let r = build_modality_features("u", &[[0.5, 0.5]], Modality::Image);
        assert_eq!(r.unwrap_err(), StackingError::ArityMismatch { item: 0, expected: 3, got: 2 });
        let r = build_modality_features("u", &vec![[0.5, 0.5]; 11], Modality::Text);
        assert_eq!(r.unwrap_err(), StackingError::TooManyItems { got: 11 });
        let none: [[f64; 2]; 0] = [];
        assert_eq!(build_modality_features("u", &none, Modality::Text).unwrap_err(), StackingError::NoItems);
        let r = build_modality_features("u", &[[0.7, 0.7]], Modality::Text);
        assert_eq!(r.unwrap_err(), StackingError::InvalidProbabilities { item: 0 });
    }

    #[test]
    fn fused_layout_and_errors() {
        let img = build_modality_features("u", &vec![[0.1, 0.2, 0.7]; 10], Modality::Image).unwrap();
        let txt = build_modality_features("u", &vec![[0.4, 0.6]; 10], Modality::Text).unwrap();
        let fused = assemble_fused_vector(&img, &txt).unwrap();
        assert_eq!(fused.vector.len(), 50);
        assert_eq!(fused.image(), img.vector.as_slice());
        assert_eq!(fused.text(), txt.vector.as_slice());

        let zero_img = ModalityFeatures { vector: vec![0.0; 30], ..img.clone() };
        let zero_txt = ModalityFeatures { vector: vec![0.0; 20], ..txt.clone() };
        assert!(assemble_fused_vector(&zero_img, &zero_txt).unwrap().vector.iter().all(|&v| v == 0.0));

        let wide_txt = ModalityFeatures { vector: vec![0.5; 30], ..txt.clone() };
        assert_eq!(
            assemble_fused_vector(&img, &wide_txt).unwrap_err(),
            StackingError::DimensionError { expected: 20, got: 30 }
        );
        let other = ModalityFeatures { user_id: "v".into(), ..txt };
        assert!(matches!(assemble_fused_vector(&img, &other), Err(StackingError::UserMismatch { .. })));
    }

    #[test]
    fn majority_vote_rules() {
        let mut items = vec![[0.8, 0.2]; 7];
        items.extend(vec![[0.3, 0.7]; 3]);
        assert_eq!(majority_vote(&items).unwrap(), 0);

        // 5-5 split: female voters average 0.60, male voters 0.55
        let mut tie = vec![[0.60, 0.40]; 5];
        tie.extend(vec![[0.45, 0.55]; 5]);
        assert_eq!(majority_vote(&tie).unwrap(), 0);
        let mut tie = vec![[0.52, 0.48]; 5];
        tie.extend(vec![[0.45, 0.55]; 5]);
        assert_eq!(majority_vote(&tie).unwrap(), 1);

        assert_eq!(majority_vote(&vec![[0.1, 0.2, 0.7]; 10]).unwrap(), 2);
        let empty: [[f64; 2]; 0] = [];
        assert_eq!(majority_vote(&empty).unwrap_err(), StackingError::EmptyList);
    }

    #[test]
    fn vote_gender_ignores_unknown() {
        let items = vec![[0.2, 0.1, 0.7], [0.3, 0.1, 0.6], [0.1, 0.5, 0.4]];
        assert_eq!(vote_gender(&items).unwrap(), GenderLabel::Female);
    }

    #[test]
    fn hard_labels_one_hot() {
        assert_eq!(hard_labels(&[0.2, 0.5, 0.3, 0.5, 0.5, 0.0], 3), vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn kind_names_parse() {
        for k in CombinerKind::ALL {
            assert_eq!(k.as_str().parse::<CombinerKind>(), Ok(k));
            assert_eq!(k.short_name().parse::<CombinerKind>(), Ok(k));
        }
    }

    #[test]
    fn combiner_errors() {
        let data = vec![(vec![0.5; 20], GenderLabel::Male); 4];
        assert_eq!(
            train_combiner(CombinerKind::NaiveBayes, CombinerTarget::Text, &data, 0).unwrap_err(),
            StackingError::SingleClassData
        );
        let data = vec![(vec![0.5; 19], GenderLabel::Male)];
        assert!(matches!(
            train_combiner(CombinerKind::RandomForest, CombinerTarget::Text, &data, 0),
            Err(StackingError::DimensionError { expected: 20, got: 19 })
        ));
    }

    #[test]
    fn exact_tie_predicts_female() {
        let data = vec![(vec![0.5; 20], GenderLabel::Male), (vec![0.5; 20], GenderLabel::Female)];
        let mut m = train_combiner(CombinerKind::FeedforwardNet, CombinerTarget::Text, &data, 1).unwrap();
        let p = m.feedforward_params_mut().unwrap();
        p.w2.iter_mut().flatten().for_each(|w| *w = 0.0);
        p.b2 = vec![0.0, 0.0];
        let (label, probs) = predict_combiner(&m, &[0.5; 20]).unwrap();
        assert_eq!(probs, [0.5, 0.5]);
        assert_eq!(label, GenderLabel::Female);
        assert!(matches!(predict_combiner(&m, &[0.5; 3]), Err(StackingError::DimensionError { .. })));
    }
}
