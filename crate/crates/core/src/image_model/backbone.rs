//! Frozen image backbones. A backbone turns a normalized pixel grid into a
//! fixed-length feature vector; only the class head on top is trained.

use std::sync::Arc;

use super::{ImageModelError, PixelGrid, Result};

pub const PATCH: usize = 16;
pub const DEFAULT_IMAGE_BACKBONE: &str = "builtin/patch16-stats";

pub trait ImageBackbone: Send + Sync + std::fmt::Debug {
    fn id(&self) -> &str;
    /// Channel mean and std applied after scaling pixels to [0, 1].
    fn normalization(&self) -> ([f64; 3], [f64; 3]);
    fn supports_input_size(&self, size: u32) -> bool;
    fn feature_dim(&self) -> usize;
    fn features(&self, grid: &PixelGrid) -> Vec<f64>;
}

/// Look up a backbone by identifier.
pub fn resolve_image_backbone(id: &str) -> Result<Arc<dyn ImageBackbone>> {
    match id {
        DEFAULT_IMAGE_BACKBONE => Ok(Arc::new(PatchStats)),
        other => Err(ImageModelError::BackboneUnavailable { id: other.to_string() }),
    }
}

/// Splits the grid into 16x16 patches and summarises colour and texture
/// statistics over the patch means.
#[derive(Debug, Clone, Copy)]
pub struct PatchStats;

const PATCH_STATS_DIM: usize = 3 + 3 + 3 + 12 + 3 + 3 + 1;

impl ImageBackbone for PatchStats {
    fn id(&self) -> &str {
        DEFAULT_IMAGE_BACKBONE
    }

    fn normalization(&self) -> ([f64; 3], [f64; 3]) {
        ([0.5; 3], [0.5; 3])
    }

    fn supports_input_size(&self, size: u32) -> bool {
        size > 0 && size as usize % PATCH == 0 && size <= 1024
    }

    fn feature_dim(&self) -> usize {
        PATCH_STATS_DIM
    }

    fn features(&self, grid: &PixelGrid) -> Vec<f64> {
        let size = grid.size as usize;
        let per_side = size / PATCH;
        let n_patches = (per_side * per_side) as f64;
        let mut patch_mean = vec![[0.0f64; 3]; per_side * per_side];
        let mut within_std = [0.0f64; 3];
        for py in 0..per_side {
            for px in 0..per_side {
                let mut sum = [0.0; 3];
                let mut sq = [0.0; 3];
                for y in py * PATCH..(py + 1) * PATCH {
                    for x in px * PATCH..(px + 1) * PATCH {
                        let p = grid.pixel(x, y);
                        for c in 0..3 {
                            sum[c] += p[c] as f64;
                            sq[c] += (p[c] as f64).powi(2);
                        }
                    }
                }
                let n = (PATCH * PATCH) as f64;
                for c in 0..3 {
                    let m = sum[c] / n;
                    patch_mean[py * per_side + px][c] = m;
                    within_std[c] += (sq[c] / n - m * m).max(0.0).sqrt() / n_patches;
                }
            }
        }

        let mut global = [0.0; 3];
        for m in &patch_mean {
            for c in 0..3 {
                global[c] += m[c] / n_patches;
            }
        }
        let mut spread = [0.0; 3];
        for m in &patch_mean {
            for c in 0..3 {
                spread[c] += (m[c] - global[c]).powi(2) / n_patches;
            }
        }
        let half = per_side.div_ceil(2);
        let mut quadrants = [[0.0; 3]; 4];
        let mut quad_n = [0.0; 4];
        let mut centre = [0.0; 3];
        let mut centre_n = 0.0;
        for py in 0..per_side {
            for px in 0..per_side {
                let q = (py >= half) as usize * 2 + (px >= half) as usize;
                let m = patch_mean[py * per_side + px];
                quad_n[q] += 1.0;
                let inner = per_side < 3 || (py > 0 && px > 0 && py + 1 < per_side && px + 1 < per_side);
                if inner {
                    centre_n += 1.0;
                }
                for c in 0..3 {
                    quadrants[q][c] += m[c];
                    if inner {
                        centre[c] += m[c];
                    }
                }
            }
        }

        let mut out = Vec::with_capacity(PATCH_STATS_DIM);
        out.extend(global);
        out.extend(spread.map(f64::sqrt));
        out.extend(within_std);
        for q in 0..4 {
            for c in 0..3 {
                out.push(if quad_n[q] > 0.0 { quadrants[q][c] / quad_n[q] } else { global[c] });
            }
        }
        out.extend([global[0] - global[1], global[1] - global[2], global[0] - global[2]]);
        for c in 0..3 {
            out.push(centre[c] / centre_n - global[c]);
        }
        let chroma = patch_mean
            .iter()
            .map(|m| m.iter().cloned().fold(f64::MIN, f64::max) - m.iter().cloned().fold(f64::MAX, f64::min))
            .sum::<f64>()
            / n_patches;
        out.push(chroma);
        out
    }
}
