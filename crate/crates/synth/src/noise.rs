//! Detector-style corruption of ground-truth scenes: missed objects,
//! duplicate detections, spurious detections, box jitter.

use progsup_ir::BBox;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{normal, rng_from};
use crate::world::{SceneGraph, CLASSES, COLORS, SIZES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub p_miss: f64,
    pub p_dup: f64,
    pub p_spur: f64,
    pub box_jitter: f64,
    pub feat_noise: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { p_miss: 0.15, p_dup: 0.10, p_spur: 0.10, box_jitter: 0.02, feat_noise: 0.25 }
    }
}

impl NoiseConfig {
    /// Identity corruption: detections mirror the scene exactly.
    pub fn none() -> Self {
        NoiseConfig { p_miss: 0.0, p_dup: 0.0, p_spur: 0.0, box_jitter: 0.0, feat_noise: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DetectionSource {
    /// Primary detection of a scene object.
    Real { obj: usize },
    /// Extra detection of a scene object.
    Duplicate { obj: usize },
    /// Detection with no underlying object.
    Spurious { class: u8, color: u8, size: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub source: DetectionSource,
    /// Seed for this detection's appearance noise.
    pub noise_seed: u64,
}

impl Detection {
    /// Attribute triple backing this detection's features.
    pub fn attrs(&self, scene: &SceneGraph) -> (u8, u8, u8) {
        match self.source {
            DetectionSource::Real { obj } | DetectionSource::Duplicate { obj } => {
                let o = &scene.objects[obj];
                (o.class, o.color, o.size)
            }
            DetectionSource::Spurious { class, color, size } => (class, color, size),
        }
    }
}

fn jitter_box(bbox: &BBox, std: f64, rng: &mut impl Rng) -> BBox {
    if std == 0.0 {
        return *bbox;
    }
    let mut x1 = bbox.x1 + normal(rng) * std;
    let mut x2 = bbox.x2 + normal(rng) * std;
    let mut y1 = bbox.y1 + normal(rng) * std;
    let mut y2 = bbox.y2 + normal(rng) * std;
    if x1 > x2 {
        std::mem::swap(&mut x1, &mut x2);
    }
    if y1 > y2 {
        std::mem::swap(&mut y1, &mut y2);
    }
    BBox::new(x1.clamp(0.0, 1.0), y1.clamp(0.0, 1.0), x2.clamp(0.0, 1.0), y2.clamp(0.0, 1.0))
}

/// Perfect detections: one per scene object, exact boxes.
pub fn oracle_detections(scene: &SceneGraph, seed: u64) -> Vec<Detection> {
    let mut rng = rng_from(seed);
    scene
        .objects
        .iter()
        .map(|o| Detection {
            bbox: o.bbox,
            source: DetectionSource::Real { obj: o.obj_id },
            noise_seed: rng.gen(),
        })
        .collect()
}

/// Applies the presence shift: each object missed with `p_miss`, duplicated
/// with `p_dup` (jittered box), spurious detections added per scene slot
/// with `p_spur`; output order shuffled deterministically by the seed.
pub fn apply_presence_shift(scene: &SceneGraph, noise: &NoiseConfig, seed: u64) -> Vec<Detection> {
    let mut rng = rng_from(seed);
    let mut out = Vec::new();
    for o in &scene.objects {
        let missed = rng.gen_bool(noise.p_miss);
        let bbox = jitter_box(&o.bbox, noise.box_jitter, &mut rng);
        let noise_seed = rng.gen();
        if !missed {
            out.push(Detection {
                bbox,
                source: DetectionSource::Real { obj: o.obj_id },
                noise_seed,
            });
        }
        if rng.gen_bool(noise.p_dup) {
            let bbox = jitter_box(&o.bbox, noise.box_jitter, &mut rng);
            out.push(Detection {
                bbox,
                source: DetectionSource::Duplicate { obj: o.obj_id },
                noise_seed: rng.gen(),
            });
        }
    }
    for _ in 0..scene.objects.len() {
        if rng.gen_bool(noise.p_spur) {
            let class = rng.gen_range(0..CLASSES.len()) as u8;
            let color = rng.gen_range(0..COLORS.len()) as u8;
            let size = rng.gen_range(0..SIZES.len()) as u8;
            let w = rng.gen_range(0.1..0.35);
            let h = rng.gen_range(0.1..0.35);
            let x1 = rng.gen_range(0.0..1.0 - w);
            let y1 = rng.gen_range(0.0..1.0 - h);
            out.push(Detection {
                bbox: BBox::new(x1, y1, x1 + w, y1 + h),
                source: DetectionSource::Spurious { class, color, size },
                noise_seed: rng.gen(),
            });
        }
    }
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{gen_scene, WorldConfig};

    #[test]
    fn zero_noise_returns_identity_detections() {
        let scene = gen_scene(3, &WorldConfig::default());
        let dets = apply_presence_shift(&scene, &NoiseConfig::none(), 9);
        assert_eq!(dets.len(), scene.objects.len());
        let mut objs: Vec<usize> = dets
            .iter()
            .map(|d| match d.source {
                DetectionSource::Real { obj } => obj,
                _ => panic!("unexpected source"),
            })
            .collect();
        objs.sort_unstable();
        assert_eq!(objs, (0..scene.objects.len()).collect::<Vec<_>>());
        for d in &dets {
            if let DetectionSource::Real { obj } = d.source {
                assert_eq!(d.bbox, scene.objects[obj].bbox);
            }
        }
    }

    #[test]
    fn full_miss_probability_empties_real_detections() {
        let scene = gen_scene(4, &WorldConfig::default());
        let noise = NoiseConfig { p_miss: 1.0, p_dup: 0.0, p_spur: 0.0, ..NoiseConfig::none() };
        assert!(apply_presence_shift(&scene, &noise, 1).is_empty());
    }

    #[test]
    fn empirical_miss_rate_matches_configuration() {
        let cfg = WorldConfig::default();
        let noise = NoiseConfig::default();
        let mut total = 0usize;
        let mut missed = 0usize;
        for seed in 0..10_000u64 {
            let scene = gen_scene(seed, &cfg);
            let dets = apply_presence_shift(&scene, &noise, seed ^ 0xABCD);
            let detected: std::collections::HashSet<usize> = dets
                .iter()
                .filter_map(|d| match d.source {
                    DetectionSource::Real { obj } => Some(obj),
                    _ => None,
                })
                .collect();
            total += scene.objects.len();
            missed += scene.objects.len() - detected.len();
        }
        let rate = missed as f64 / total as f64;
        assert!((rate - 0.15).abs() < 0.01, "miss rate {rate}");
    }

    #[test]
    fn shift_does_not_mutate_the_scene() {
        let scene = gen_scene(5, &WorldConfig::default());
        let before = scene.clone();
        let _ = apply_presence_shift(&scene, &NoiseConfig::default(), 1);
        assert_eq!(scene, before);
    }
}
