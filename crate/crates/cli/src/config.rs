//! Pipeline configuration: a TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use mmprofile::corpus::{ChunkingOptions, SyntheticSpec};
use mmprofile::image_model::ImageClassifierConfig;
use mmprofile::numeric::derive_seed;
use mmprofile::stacking::{CombinerKind, ITEMS_PER_USER};
use mmprofile::text_model::TextClassifierConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    /// PAN-style root (`<root>/<split>/<lang>` or `<root>/<lang>`).
    pub pan_root: PathBuf,
    /// Labeled image root (`train|test / female|male|unknown`).
    pub image_root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackingOptions {
    /// Kinds trained on each modality for the comparison tables.
    pub combiners: Vec<CombinerKind>,
    /// Combiner reported as the image-only model.
    pub image_combiner: CombinerKind,
    /// Combiner reported as the text-only model.
    pub text_combiner: CombinerKind,
    /// Combiner trained on the fused vectors.
    pub fusion_combiner: CombinerKind,
    /// When at least 2, combiner training features for train users come
    /// from text models that did not see those users.
    pub out_of_fold: usize,
    /// Replace each item's probabilities by a one-hot argmax before stacking.
    pub hard_labels: bool,
}

impl Default for StackingOptions {
    fn default() -> Self {
        StackingOptions {
            combiners: CombinerKind::ALL.to_vec(),
            image_combiner: CombinerKind::RandomForest,
            text_combiner: CombinerKind::FeedforwardNet,
            fusion_combiner: CombinerKind::FeedforwardNet,
            out_of_fold: 0,
            hard_labels: false,
        }
    }
}

impl StackingOptions {
    /// `combiners` plus the kinds named for the image-only and text-only
    /// columns, in canonical order.
    pub fn kinds(&self) -> Vec<CombinerKind> {
        CombinerKind::ALL
            .into_iter()
            .filter(|k| self.combiners.contains(k) || *k == self.image_combiner || *k == self.text_combiner)
            .collect()
    }
}

fn default_language() -> String {
    "en".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_language")]
    pub language: String,
    #[serde(default)]
    pub corpus: Option<CorpusPaths>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Where `synth` writes the corpus; defaults to `<output_dir>/corpus`.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub image_model: ImageClassifierConfig,
    #[serde(default)]
    pub text_model: TextClassifierConfig,
    #[serde(default)]
    pub chunking: ChunkingOptions,
    #[serde(default)]
    pub stacking: StackingOptions,
}

fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {raw:?} is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override {raw:?} has an empty key segment")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for seg in parents {
        let entry = table.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("cannot set {}: {seg} is not a table", path.join("."))))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Parse TOML text, apply overrides and resolve relative paths against
    /// `base_dir`.
    pub fn from_toml_str(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        for raw in overrides {
            let (path, value) = parse_override(raw)?;
            apply_override(&mut table, &path, value)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.output_dir = resolve(base_dir, &cfg.output_dir);
        if let Some(c) = cfg.corpus.as_mut() {
            c.pan_root = resolve(base_dir, &c.pan_root);
            c.image_root = resolve(base_dir, &c.image_root);
        }
        if let Some(d) = cfg.data_dir.as_mut() {
            *d = resolve(base_dir, d);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_toml_str(&text, overrides, base)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.corpus, &self.synthetic) {
            (Some(_), Some(_)) => return Err(CliError::Config("set either [corpus] or [synthetic], not both".into())),
            (None, None) => return Err(CliError::Config("missing corpus source: set [corpus] or [synthetic]".into())),
            (Some(c), None) => {
                for (name, p) in [("corpus.pan_root", &c.pan_root), ("corpus.image_root", &c.image_root)] {
                    if !p.is_dir() {
                        return Err(CliError::Config(format!("{name}: {} is not a directory", p.display())));
                    }
                }
            }
            (None, Some(_)) => {
                self.synthetic_spec().expect("synthetic set").validate()?;
            }
        }
        self.image_model_config().validate()?;
        self.text_model_config().validate()?;
        if self.chunking.chunk_size == 0 || self.chunking.n_chunks == 0 {
            return Err(CliError::Config("chunking.chunk_size and chunking.n_chunks must be at least 1".into()));
        }
        if self.chunking.n_chunks > ITEMS_PER_USER {
            return Err(CliError::Config(format!("chunking.n_chunks must be at most {ITEMS_PER_USER}")));
        }
        if self.stacking.out_of_fold == 1 {
            return Err(CliError::Config("stacking.out_of_fold must be 0 (off) or at least 2".into()));
        }
        if self.stacking.combiners.is_empty() {
            return Err(CliError::Config("stacking.combiners must not be empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.output_dir.join("corpus"))
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        self.synthetic.clone().map(|s| SyntheticSpec {
            seed: derive_seed(self.seed, "synthetic"),
            language: self.language.clone(),
            ..s
        })
    }

    pub fn image_model_config(&self) -> ImageClassifierConfig {
        ImageClassifierConfig { seed: derive_seed(self.seed, "image-model"), ..self.image_model.clone() }
    }

    pub fn text_model_config(&self) -> TextClassifierConfig {
        TextClassifierConfig { seed: derive_seed(self.seed, "text-model"), ..self.text_model.clone() }
    }

    pub fn chunk_seed(&self) -> u64 {
        derive_seed(self.seed, "chunking")
    }

    pub fn combiner_seed(&self, tag: &str) -> u64 {
        derive_seed(self.seed, &format!("combiner:{tag}"))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "output_dir = \"out\"\n[synthetic]\nn_users = 20\n";

    #[test]
    fn missing_output_dir_is_named() {
        let err = PipelineConfig::from_toml_str("seed = 3\n", &[], Path::new("/base")).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("output_dir")), "{err}");
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let cfg = PipelineConfig::from_toml_str(MINIMAL, &[], Path::new("/base")).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("/base/out"));
        assert_eq!(cfg.data_dir(), PathBuf::from("/base/out/corpus"));
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_set_nested_keys() {
        let sets = vec![
            "seed=9".to_string(),
            "stacking.hard_labels=true".to_string(),
            "image_model.epochs=4".to_string(),
            "language=es".to_string(),
        ];
        let cfg = PipelineConfig::from_toml_str(MINIMAL, &sets, Path::new("/b")).unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.stacking.hard_labels);
        assert_eq!(cfg.image_model.epochs, 4);
        assert_eq!(cfg.language, "es");
        assert_eq!(cfg.synthetic_spec().unwrap().language, "es");
        assert!(PipelineConfig::from_toml_str(MINIMAL, &["noequals".into()], Path::new("/b")).is_err());
    }

    #[test]
    fn schema_violations() {
        let bad = format!("{MINIMAL}[stacking]\nout_of_fold = 1\n");
        let cfg = PipelineConfig::from_toml_str(&bad, &[], Path::new("/b")).unwrap();
        assert!(cfg.validate().is_err());
        let unknown = format!("{MINIMAL}colour = 3\n");
        assert!(PipelineConfig::from_toml_str(&unknown, &[], Path::new("/b")).is_err());
        let none = PipelineConfig::from_toml_str("output_dir = \"o\"\n", &[], Path::new("/b")).unwrap();
        assert!(none.validate().is_err());
    }

    #[test]
    fn seed_changes_hash_and_component_seeds() {
        let a = PipelineConfig::from_toml_str(MINIMAL, &[], Path::new("/b")).unwrap();
        let b = PipelineConfig::from_toml_str(MINIMAL, &["seed=1".into()], Path::new("/b")).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.image_model_config().seed, b.image_model_config().seed);
        assert_eq!(a.hash(), a.clone().hash());
    }

    #[test]
    fn kinds_include_reported_combiners() {
        let s = StackingOptions { combiners: vec![CombinerKind::Svm], ..Default::default() };
        assert_eq!(s.kinds(), vec![CombinerKind::FeedforwardNet, CombinerKind::RandomForest, CombinerKind::Svm]);
    }
}
