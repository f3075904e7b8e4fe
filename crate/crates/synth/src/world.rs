//! Scene graphs: objects with class/color/size attributes and boxes,
//! relations derived from box centers.

use progsup_ir::BBox;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;

pub const CLASSES: [&str; 12] = [
    "cat", "dog", "bird", "boat", "car", "plane", "motorbike", "tree", "flag", "house", "ball",
    "chair",
];
pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "brown", "gray"];
pub const SIZES: [&str; 2] = ["small", "large"];

/// Margin on center distance below which left/right/above/below are
/// considered ambiguous and do not hold.
pub const RELATION_MARGIN: f64 = 0.05;

/// Answer vocabulary: yes/no, colors, sizes, classes, counts 0..=8.
pub fn answer_vocab() -> Vec<String> {
    let mut v = vec!["yes".to_string(), "no".to_string()];
    v.extend(COLORS.iter().map(|s| s.to_string()));
    v.extend(SIZES.iter().map(|s| s.to_string()));
    v.extend(CLASSES.iter().map(|s| s.to_string()));
    v.extend((0..=8).map(|n| n.to_string()));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub fn label_suffix(&self) -> &'static str {
        match self {
            Relation::LeftOf => "left",
            Relation::RightOf => "right",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub obj_id: usize,
    pub class: u8,
    pub color: u8,
    pub size: u8,
    pub bbox: BBox,
    pub feature_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub objects: Vec<SceneObject>,
}

impl SceneGraph {
    /// Relation test from box centers with the ambiguity margin.
    pub fn relation_holds(&self, rel: Relation, a: usize, b: usize) -> bool {
        let (ax, ay) = self.objects[a].bbox.center();
        let (bx, by) = self.objects[b].bbox.center();
        match rel {
            Relation::LeftOf => ax < bx - RELATION_MARGIN,
            Relation::RightOf => ax > bx + RELATION_MARGIN,
            Relation::Above => ay < by - RELATION_MARGIN,
            Relation::Below => ay > by + RELATION_MARGIN,
        }
    }

    /// Stable "left-most" convention: smallest center x, ties broken by id.
    pub fn leftmost(&self, set: &[usize]) -> Option<usize> {
        set.iter()
            .copied()
            .min_by(|&a, &b| {
                let ax = self.objects[a].bbox.center().0;
                let bx = self.objects[b].bbox.center().0;
                ax.partial_cmp(&bx).unwrap().then(a.cmp(&b))
            })
    }
}

/// Scene generation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Skew of the class/color priors; larger means stronger head/tail
    /// structure in the answers.
    pub zipf_skew: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig { min_objects: 3, max_objects: 8, zipf_skew: 1.2 }
    }
}

/// Inverse-CDF draw from a Zipf prior over `0..n`.
fn zipf(rng: &mut impl Rng, n: usize, skew: f64) -> u8 {
    let weights: Vec<f64> = (0..n).map(|k| 1.0 / ((k + 1) as f64).powf(skew)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return k as u8;
        }
    }
    (n - 1) as u8
}

/// Deterministic scene from a seed: 3..=8 objects with Zipf-skewed class
/// and color priors and non-degenerate boxes (area ≥ 0.01).
pub fn gen_scene(seed: u64, config: &WorldConfig) -> SceneGraph {
    let mut rng = rng_from(seed);
    let n = rng.gen_range(config.min_objects..=config.max_objects);
    let objects = (0..n)
        .map(|obj_id| {
            let class = zipf(&mut rng, CLASSES.len(), config.zipf_skew);
            let color = zipf(&mut rng, COLORS.len(), config.zipf_skew);
            let size = rng.gen_range(0..SIZES.len()) as u8;
            let w = rng.gen_range(0.1..0.35);
            let h = rng.gen_range(0.1..0.35);
            let x1 = rng.gen_range(0.0..1.0 - w);
            let y1 = rng.gen_range(0.0..1.0 - h);
            SceneObject {
                obj_id,
                class,
                color,
                size,
                bbox: BBox::new(x1, y1, x1 + w, y1 + h),
                feature_seed: rng.gen(),
            }
        })
        .collect();
    SceneGraph { objects }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_scenes() {
        let cfg = WorldConfig::default();
        assert_eq!(gen_scene(42, &cfg), gen_scene(42, &cfg));
    }

    #[test]
    fn object_count_respects_config() {
        let cfg = WorldConfig { min_objects: 3, max_objects: 3, ..WorldConfig::default() };
        for seed in 0..50 {
            assert_eq!(gen_scene(seed, &cfg).objects.len(), 3);
        }
    }

    #[test]
    fn boxes_are_non_degenerate() {
        let cfg = WorldConfig::default();
        for seed in 0..200 {
            for o in gen_scene(seed, &cfg).objects {
                assert!(o.bbox.area() >= 0.01);
                assert!(o.bbox.x1 >= 0.0 && o.bbox.x2 <= 1.0);
                assert!(o.bbox.y1 >= 0.0 && o.bbox.y2 <= 1.0);
            }
        }
    }

    #[test]
    fn class_prior_is_zipf_skewed() {
        let cfg = WorldConfig::default();
        let mut counts = vec![0usize; CLASSES.len()];
        for seed in 0..10_000 {
            for o in gen_scene(seed, &cfg).objects {
                counts[o.class as usize] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c > 0), "every class appears: {counts:?}");
        let top = *counts.iter().max().unwrap();
        let rare = *counts.iter().min().unwrap();
        assert!(top >= 5 * rare, "head/tail skew too weak: {top} vs {rare}");
    }
}
