use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{CorpusError, LabeledImageDataset, Result, SplitName};
use crate::labels::ImageClass;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn scan_class_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CorpusError::io(dir, e))? {
        let path = entry.map_err(|e| CorpusError::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            // header-only probe; full decoding happens at preprocessing time
            match image::image_dimensions(&path) {
                Ok((w, h)) if w > 0 && h > 0 => files.push(path),
                Ok(_) => {
                    return Err(CorpusError::Decode { path, message: "zero-sized image".into() });
                }
                Err(e) => return Err(CorpusError::Decode { path, message: e.to_string() }),
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Load `<root>/{train,test}/{female,male,unknown}/*.{jpg,jpeg,png}`.
pub fn load_labeled_image_dataset(root: &Path) -> Result<LabeledImageDataset> {
    let mut ds = LabeledImageDataset::default();
    for split in [SplitName::Train, SplitName::Test] {
        let mut map = BTreeMap::new();
        for class in ImageClass::ALL {
            let dir = root.join(split.as_str()).join(class.as_str());
            if !dir.is_dir() {
                return Err(CorpusError::MissingClassFolder(dir));
            }
            let files = scan_class_dir(&dir)?;
            if files.is_empty() {
                return Err(CorpusError::EmptyClass { split, class });
            }
            map.insert(class, files);
        }
        match split {
            SplitName::Train => ds.train = map,
            SplitName::Test => ds.test = map,
        }
    }
    let train: std::collections::HashSet<_> = ds.train.values().flatten().collect();
    if let Some(p) = ds.test.values().flatten().find(|p| train.contains(p)) {
        return Err(CorpusError::Integrity(format!("{} listed in both splits", p.display())));
    }
    Ok(ds)
}

/// Create the empty class-folder skeleton of the labeled layout.
pub fn write_labeled_layout(root: &Path) -> Result<()> {
    for split in [SplitName::Train, SplitName::Test] {
        for class in ImageClass::ALL {
            let dir = root.join(split.as_str()).join(class.as_str());
            fs::create_dir_all(&dir).map_err(|e| CorpusError::io(&dir, e))?;
        }
    }
    Ok(())
}
