//! Seeded synthetic corpora with tunable per-modality signal.
//!
//! Every user gets `tweets_per_user` tweets built from a shared neutral
//! vocabulary, some of which carry a class-specific cue word, plus
//! `images_per_user` 64x64 pictures showing either the class pattern
//! (hue + glyph) or a neutral low-saturation "unknown" pattern.
//!
//! Two noise models are available:
//! * item-level (default): each item carries its user's cue independently
//!   with probability equal to the modality signal;
//! * complementary: each user's modality is informative with probability
//!   equal to the signal, independently per modality. Informative modalities
//!   carry cues at `image_cue_rate` / `text_cue_rate`; uninformative ones
//!   carry none, so only the other modality can identify the user.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{write_pan_split, CorpusError, DatasetSplit, LabeledImageDataset, Result, SplitName, UserRecord};
use crate::labels::{GenderLabel, ImageClass};
use crate::numeric::{derive_seed, seeded_rng};

pub const SYNTHETIC_IMAGE_SIZE: u32 = 64;
const MARKER_FILE: &str = "synthetic.json";

const NEUTRAL_WORDS: &[&str] = &[
    "the", "a", "today", "just", "really", "new", "time", "day", "people", "good", "great", "love",
    "think", "know", "going", "back", "still", "never", "always", "right", "work", "home", "week",
    "night", "morning", "game", "music", "food", "coffee", "city", "weather", "news", "video",
    "photo", "friends", "family", "school", "team", "world", "life", "best", "first", "last",
    "happy", "busy", "tired", "ready", "finally", "again", "maybe", "thanks", "please", "check",
    "watch", "read", "play", "win", "lost", "made", "got", "need", "want", "feel", "see", "look",
    "show", "live", "year", "tonight", "weekend", "movie", "book", "phone", "trip", "rain", "sun",
    "road", "train", "park", "market", "lunch", "dinner", "party", "birthday", "story", "idea",
];

const FEMALE_CUES: &[&str] = &["lumera", "solvani", "tessaly", "mirabel", "orvemi", "kalinth", "senadra", "velisse"];
const MALE_CUES: &[&str] = &["draskor", "brunthal", "kordevan", "thaxum", "gorvath", "tarnek", "halvorn", "brekkan"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub image_signal: f64,
    pub text_signal: f64,
    pub seed: u64,
    pub complementary_noise: bool,
    pub image_cue_rate: f64,
    pub text_cue_rate: f64,
    pub tweets_per_user: usize,
    pub images_per_user: usize,
    pub labeled_train_per_class: usize,
    pub labeled_test_per_class: usize,
    pub test_fraction: f64,
    pub language: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_users: 200,
            image_signal: 0.9,
            text_signal: 0.8,
            seed: 1,
            complementary_noise: false,
            image_cue_rate: 0.5,
            text_cue_rate: 0.3,
            tweets_per_user: 100,
            images_per_user: 10,
            labeled_train_per_class: 60,
            labeled_test_per_class: 20,
            test_fraction: 0.2,
            language: "en".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn new(n_users: usize, image_signal: f64, text_signal: f64, seed: u64) -> Self {
        SyntheticSpec { n_users, image_signal, text_signal, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("image_signal", self.image_signal),
            ("text_signal", self.text_signal),
            ("image_cue_rate", self.image_cue_rate),
            ("text_cue_rate", self.text_cue_rate),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(CorpusError::InvalidSignal { name, value });
            }
        }
        if self.n_users < 2 || self.n_users % 2 != 0 {
            return Err(CorpusError::InvalidArgument(format!("n_users must be even and >= 2, got {}", self.n_users)));
        }
        if self.tweets_per_user == 0 {
            return Err(CorpusError::InvalidArgument("tweets_per_user must be >= 1".into()));
        }
        if self.labeled_train_per_class == 0 || self.labeled_test_per_class == 0 {
            return Err(CorpusError::InvalidArgument("labeled image counts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: DatasetSplit,
    pub test: DatasetSplit,
    pub images: LabeledImageDataset,
    /// Root accepted by `load_pan_dataset` for both splits.
    pub pan_root: PathBuf,
    /// Root accepted by `load_labeled_image_dataset`.
    pub image_root: PathBuf,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Render one 64x64 picture of the given class.
pub fn render_pattern<R: Rng>(class: ImageClass, rng: &mut R) -> RgbImage {
    let size = SYNTHETIC_IMAGE_SIZE as i32;
    let (hue, sat, val, noise) = match class {
        ImageClass::Female => (330.0 + rng.gen_range(-15.0..15.0), rng.gen_range(0.45..0.7), rng.gen_range(0.75..0.95), 12.0),
        ImageClass::Male => (210.0 + rng.gen_range(-15.0..15.0), rng.gen_range(0.45..0.7), rng.gen_range(0.75..0.95), 12.0),
        ImageClass::Unknown => (rng.gen_range(0.0..360.0), rng.gen_range(0.0..0.12), rng.gen_range(0.35..0.9), 25.0),
    };
    let bg = hsv_to_rgb(hue, sat, val);
    let fg = hsv_to_rgb(hue, sat, val * 0.55);
    let cx = rng.gen_range(20..44);
    let cy = rng.gen_range(20..44);
    let r = rng.gen_range(10..18);
    let thick = rng.gen_range(3..6);
    let rect = (rng.gen_range(4..24), rng.gen_range(4..24), rng.gen_range(40..60), rng.gen_range(40..60));

    let mut img = RgbImage::new(SYNTHETIC_IMAGE_SIZE, SYNTHETIC_IMAGE_SIZE);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x - cx, y - cy);
            let on_glyph = match class {
                ImageClass::Female => dx * dx + dy * dy <= r * r,
                ImageClass::Male => (dx.abs() <= thick && dy.abs() <= r) || (dy.abs() <= thick && dx.abs() <= r),
                ImageClass::Unknown => {
                    let (x0, y0, x1, y1) = rect;
                    let inside = x >= x0 && x <= x1 && y >= y0 && y <= y1;
                    let edge = x - x0 < 2 || x1 - x < 2 || y - y0 < 2 || y1 - y < 2;
                    inside && edge
                }
            };
            let base = if on_glyph { fg } else { bg };
            let mut px = [0u8; 3];
            for (c, out) in px.iter_mut().enumerate() {
                let v = base[c] + rng.gen_range(-noise..noise);
                *out = v.round().clamp(0.0, 255.0) as u8;
            }
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

fn make_tweet<R: Rng>(rng: &mut R, cue: Option<GenderLabel>) -> String {
    let n = rng.gen_range(6..=14);
    let mut words: Vec<String> = (0..n).map(|_| NEUTRAL_WORDS.choose(rng).unwrap().to_string()).collect();
    if let Some(label) = cue {
        let pool = match label {
            GenderLabel::Female => FEMALE_CUES,
            GenderLabel::Male => MALE_CUES,
        };
        let pos = rng.gen_range(0..=words.len());
        words.insert(pos, pool.choose(rng).unwrap().to_string());
    }
    match rng.gen_range(0..10) {
        0 => words.push(format!("https://t.co/{:08x}", rng.gen::<u32>())),
        1 => words.insert(0, format!("@user{}", rng.gen_range(0..1000))),
        _ => {}
    }
    words.join(" ")
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CorpusError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })
}

fn prepare_out_dir(out_dir: &Path) -> Result<()> {
    if out_dir.exists() {
        let marker = out_dir.join(MARKER_FILE);
        let non_empty = fs::read_dir(out_dir).map_err(|e| CorpusError::io(out_dir, e))?.next().is_some();
        if non_empty && !marker.is_file() {
            return Err(CorpusError::InvalidArgument(format!(
                "{} is not empty and was not produced by the synthetic generator",
                out_dir.display()
            )));
        }
        for sub in ["pan", "images"] {
            let p = out_dir.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(|e| CorpusError::io(&p, e))?;
            }
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| CorpusError::io(out_dir, e))
}

/// Generate a corpus and write it under `out_dir` in the PAN and labeled
/// image layouts (`out_dir/pan`, `out_dir/images`).
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, out_dir: &Path) -> Result<SyntheticCorpus> {
    spec.validate()?;
    prepare_out_dir(out_dir)?;
    let pan_root = out_dir.join("pan");
    let image_root = out_dir.join("images");

    let half = spec.n_users / 2;
    let mut labels: Vec<GenderLabel> = std::iter::repeat(GenderLabel::Female)
        .take(half)
        .chain(std::iter::repeat(GenderLabel::Male).take(half))
        .collect();
    labels.shuffle(&mut seeded_rng(derive_seed(spec.seed, "labels")));

    let n_test_per_class = ((half as f64) * spec.test_fraction).round() as usize;
    let mut seen = [0usize; 2];
    let mut train_users = Vec::new();
    let mut test_users = Vec::new();

    for (i, &label) in labels.iter().enumerate() {
        let user_id = format!("u{i:05}");
        let mut rng = seeded_rng(derive_seed(spec.seed, &format!("user:{user_id}")));
        let split = if seen[label.index()] < half - n_test_per_class { SplitName::Train } else { SplitName::Test };
        seen[label.index()] += 1;

        let (image_rate, text_rate) = if spec.complementary_noise {
            let img_informative = rng.gen::<f64>() < spec.image_signal;
            let txt_informative = rng.gen::<f64>() < spec.text_signal;
            (
                if img_informative { spec.image_cue_rate } else { 0.0 },
                if txt_informative { spec.text_cue_rate } else { 0.0 },
            )
        } else {
            (spec.image_signal, spec.text_signal)
        };

        let tweets = (0..spec.tweets_per_user)
            .map(|_| {
                let cue = (rng.gen::<f64>() < text_rate).then_some(label);
                make_tweet(&mut rng, cue)
            })
            .collect();

        let photo_dir = pan_root.join(split.as_str()).join(&spec.language).join("photo").join(&user_id);
        let mut images = Vec::with_capacity(spec.images_per_user);
        for n in 0..spec.images_per_user {
            let class = if rng.gen::<f64>() < image_rate { ImageClass::from(label) } else { ImageClass::Unknown };
            let img = render_pattern(class, &mut rng);
            let path = photo_dir.join(format!("{n}.png"));
            save_png(&img, &path)?;
            images.push(path);
        }
        images.sort();

        let record = UserRecord { user_id, label: Some(label), tweets, images };
        match split {
            SplitName::Train => train_users.push(record),
            SplitName::Test => test_users.push(record),
        }
    }

    let train = DatasetSplit { name: SplitName::Train, users: train_users };
    let test = DatasetSplit { name: SplitName::Test, users: test_users };
    write_pan_split(&pan_root, &spec.language, &train)?;
    write_pan_split(&pan_root, &spec.language, &test)?;

    let mut images = LabeledImageDataset::default();
    let mut rng = seeded_rng(derive_seed(spec.seed, "labeled-images"));
    for (split, per_class) in [
        (SplitName::Train, spec.labeled_train_per_class),
        (SplitName::Test, spec.labeled_test_per_class),
    ] {
        let mut map = BTreeMap::new();
        for class in ImageClass::ALL {
            let dir = image_root.join(split.as_str()).join(class.as_str());
            let mut paths = Vec::with_capacity(per_class);
            for k in 0..per_class {
                let path = dir.join(format!("{k:04}.png"));
                save_png(&render_pattern(class, &mut rng), &path)?;
                paths.push(path);
            }
            map.insert(class, paths);
        }
        match split {
            SplitName::Train => images.train = map,
            SplitName::Test => images.test = map,
        }
    }

    let marker = out_dir.join(MARKER_FILE);
    let json = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(&marker, json).map_err(|e| CorpusError::io(&marker, e))?;

    Ok(SyntheticCorpus { train, test, images, pan_root, image_root })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_signal_rejected() {
        let spec = SyntheticSpec::new(10, 1.5, 0.5, 0);
        assert!(matches!(spec.validate(), Err(CorpusError::InvalidSignal { name: "image_signal", .. })));
        let spec = SyntheticSpec::new(10, 0.5, -0.1, 0);
        assert!(matches!(spec.validate(), Err(CorpusError::InvalidSignal { name: "text_signal", .. })));
    }

    #[test]
    fn odd_user_count_rejected() {
        assert!(SyntheticSpec::new(11, 0.5, 0.5, 0).validate().is_err());
    }

    #[test]
    fn hsv_primaries() {
        let red = hsv_to_rgb(0.0, 1.0, 1.0);
        assert_eq!(red.map(|v| v.round()), [255.0, 0.0, 0.0]);
        let blue = hsv_to_rgb(240.0, 1.0, 1.0);
        assert_eq!(blue.map(|v| v.round()), [0.0, 0.0, 255.0]);
    }

    #[test]
    fn cue_words_are_disjoint_from_neutral_vocabulary() {
        for w in FEMALE_CUES.iter().chain(MALE_CUES) {
            assert!(!NEUTRAL_WORDS.contains(w));
        }
    }

    #[test]
    fn refuses_foreign_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("keep.txt"), "x").unwrap();
        let spec = SyntheticSpec { n_users: 2, images_per_user: 1, tweets_per_user: 1, ..Default::default() };
        assert!(generate_synthetic_corpus(&spec, dir.path()).is_err());
        assert!(dir.path().join("keep.txt").exists());
    }
}
