//! CSV cache of fused per-user feature vectors.

use std::path::Path;

use super::{FusedFeatureVector, Result, StackingError, FUSED_FEATURES, ITEMS_PER_USER};
use crate::labels::{GenderLabel, ImageClass};

#[derive(Debug, Clone, PartialEq)]
pub struct CachedUser {
    pub fused: FusedFeatureVector,
    pub label: Option<GenderLabel>,
}

pub fn cache_header() -> Vec<String> {
    let mut h = vec!["user_id".to_string()];
    for i in 0..ITEMS_PER_USER {
        for c in ImageClass::ALL {
            h.push(format!("img_{i}_{c}"));
        }
    }
    for i in 0..ITEMS_PER_USER {
        for c in GenderLabel::ALL {
            h.push(format!("txt_{i}_{c}"));
        }
    }
    h.push("label".to_string());
    h
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> StackingError {
    StackingError::Cache(format!("{}: {e}", path.display()))
}

/// Values are written in shortest round-trip form, so a read gives back
/// bit-identical vectors.
pub fn write_feature_cache(path: &Path, users: &[CachedUser]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| cache_err(path, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| cache_err(path, e))?;
    w.write_record(cache_header()).map_err(|e| cache_err(path, e))?;
    for u in users {
        if u.fused.vector.len() != FUSED_FEATURES {
            return Err(StackingError::DimensionError { expected: FUSED_FEATURES, got: u.fused.vector.len() });
        }
        let mut row = Vec::with_capacity(FUSED_FEATURES + 2);
        row.push(u.fused.user_id.clone());
        row.extend(u.fused.vector.iter().map(|v| format!("{v:?}")));
        row.push(u.label.map(|l| l.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(|e| cache_err(path, e))?;
    }
    w.flush().map_err(|e| cache_err(path, e))
}

pub fn read_feature_cache(path: &Path) -> Result<Vec<CachedUser>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| cache_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| cache_err(path, e))?.iter().map(String::from).collect();
    if header != cache_header() {
        return Err(cache_err(path, "unexpected header"));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| cache_err(path, e))?;
        let vector = (1..=FUSED_FEATURES)
            .map(|i| rec[i].parse::<f64>().map_err(|e| cache_err(path, format!("row {}: {e}", line + 1))))
            .collect::<Result<Vec<f64>>>()?;
        let raw = &rec[FUSED_FEATURES + 1];
        let label = if raw.is_empty() {
            None
        } else {
            Some(raw.parse::<GenderLabel>().map_err(|_| cache_err(path, format!("row {}: bad label {raw:?}", line + 1)))?)
        };
        out.push(CachedUser { fused: FusedFeatureVector { user_id: rec[0].to_string(), vector }, label });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_has_every_feature() {
        let h = cache_header();
        assert_eq!(h.len(), FUSED_FEATURES + 2);
        assert_eq!(h[1], "img_0_female");
        assert_eq!(h[31], "txt_0_female");
        assert_eq!(h[50], "txt_9_male");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let vector: Vec<f64> = (0..FUSED_FEATURES).map(|i| (i as f64 + 0.1) / 7.0).collect();
        let users = vec![
            CachedUser { fused: FusedFeatureVector { user_id: "a".into(), vector: vector.clone() }, label: Some(GenderLabel::Male) },
            CachedUser { fused: FusedFeatureVector { user_id: "b".into(), vector }, label: None },
        ];
        write_feature_cache(&path, &users).unwrap();
        assert_eq!(read_feature_cache(&path).unwrap(), users);
    }
}
