//! Object feature embeddings: exact attribute one-hots for the oracle
//! setting, a fixed random linear map plus per-detection Gaussian noise for
//! the detector-style setting.

use serde::{Deserialize, Serialize};

use crate::noise::Detection;
use crate::rng::{normal, rng_from};
use crate::world::{SceneGraph, CLASSES, COLORS, SIZES};

/// Width of the concatenated (class, color, size) one-hot.
pub const ATTR_ONEHOT_DIM: usize = CLASSES.len() + COLORS.len() + SIZES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisualMode {
    Oracle,
    Noisy,
}

pub fn onehot(class: u8, color: u8, size: u8) -> Vec<f64> {
    let mut v = vec![0.0; ATTR_ONEHOT_DIM];
    v[class as usize] = 1.0;
    v[CLASSES.len() + color as usize] = 1.0;
    v[CLASSES.len() + COLORS.len() + size as usize] = 1.0;
    v
}

/// The dataset-wide linear map shared by every noisy-mode sample.
pub struct FeatureMap {
    w: Vec<f64>, // [ATTR_ONEHOT_DIM × dim]
    dim: usize,
}

impl FeatureMap {
    pub fn new(map_seed: u64, dim: usize) -> Self {
        let mut rng = rng_from(map_seed);
        let scale = 1.0 / (ATTR_ONEHOT_DIM as f64).sqrt();
        let w = (0..ATTR_ONEHOT_DIM * dim).map(|_| normal(&mut rng) * scale).collect();
        FeatureMap { w, dim }
    }

    fn project(&self, one: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, &x) in one.iter().enumerate() {
            if x != 0.0 {
                for j in 0..self.dim {
                    out[j] += x * self.w[i * self.dim + j];
                }
            }
        }
        out
    }
}

/// Embeds detections. Oracle mode requires `dim ≥ ATTR_ONEHOT_DIM` and
/// produces zero-padded exact one-hots; noisy mode applies the shared
/// linear map plus Gaussian appearance noise drawn from each detection's
/// own seed.
pub fn embed_objects(
    detections: &[Detection],
    scene: &SceneGraph,
    mode: VisualMode,
    dim: usize,
    map_seed: u64,
    feat_noise: f64,
) -> Vec<Vec<f64>> {
    match mode {
        VisualMode::Oracle => {
            assert!(
                dim >= ATTR_ONEHOT_DIM,
                "oracle feature dim {dim} below the one-hot width {ATTR_ONEHOT_DIM}"
            );
            detections
                .iter()
                .map(|d| {
                    let (c, col, sz) = d.attrs(scene);
                    let mut v = onehot(c, col, sz);
                    v.resize(dim, 0.0);
                    v
                })
                .collect()
        }
        VisualMode::Noisy => {
            let map = FeatureMap::new(map_seed, dim);
            detections
                .iter()
                .map(|d| {
                    let (c, col, sz) = d.attrs(scene);
                    let mut v = map.project(&onehot(c, col, sz));
                    if feat_noise > 0.0 {
                        let mut rng = rng_from(d.noise_seed);
                        for x in v.iter_mut() {
                            *x += normal(&mut rng) * feat_noise;
                        }
                    }
                    v
                })
                .collect()
        }
    }
}
