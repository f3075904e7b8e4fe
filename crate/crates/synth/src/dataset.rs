//! Corpus generation and dataset files: a manifest plus one JSON line per
//! sample. Generation is a pure function of (seed, config, visual mode);
//! samples are independent, so the corpus is built with an index-ordered
//! parallel map.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use progsup_ir::{iou, OperationVocab, Program};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{embed_objects, VisualMode, ATTR_ONEHOT_DIM};
use crate::noise::{apply_presence_shift, oracle_detections, Detection, NoiseConfig};
use crate::rng::{derive_seed, rng_from};
use crate::templates::{realize_question, N_TEMPLATES};
use crate::world::{answer_vocab, gen_scene, SceneGraph, WorldConfig, CLASSES, COLORS, SIZES};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("samples.jsonl line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("manifest promises {expected} samples, file holds {found}")]
    CountMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodTag {
    Head,
    Tail,
}

/// Generation knobs for one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_samples: usize,
    pub questions_per_scene: usize,
    pub world: WorldConfig,
    pub noise: NoiseConfig,
    /// Feature width in oracle mode (zero-padded one-hots).
    pub oracle_dim: usize,
    /// Feature width in noisy mode (random linear map of the one-hots).
    pub noisy_dim: usize,
    pub tail_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_samples: 20_000,
            questions_per_scene: 4,
            world: WorldConfig::default(),
            noise: NoiseConfig::default(),
            oracle_dim: ATTR_ONEHOT_DIM + 2,
            noisy_dim: 32,
            tail_fraction: 0.2,
        }
    }
}

/// One training record.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: u64,
    pub scene_id: u64,
    pub template_id: usize,
    pub tokens: Vec<String>,
    pub detections: Vec<Detection>,
    pub features: Vec<Vec<f64>>,
    pub answer: String,
    pub program: Program,
    pub group_key: String,
    pub split: Split,
    pub ood: OodTag,
    /// Set when the presence shift removed every detection overlapping some
    /// operation's ground-truth evidence. Such samples are kept.
    pub evidence_missing: bool,
}

#[derive(Serialize, Deserialize)]
struct SampleJson {
    id: u64,
    scene: u64,
    template: usize,
    tokens: Vec<String>,
    objects: Vec<Detection>,
    features: Vec<Vec<f64>>,
    answer: String,
    program: serde_json::Value,
    group_key: String,
    split: Split,
    ood: OodTag,
    evidence_missing: bool,
}

/// Counts and vocab listings describing a written dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub n_samples: usize,
    pub seed: u64,
    pub visual_mode: VisualMode,
    pub feature_dim: usize,
    pub config: DataConfig,
    pub classes: Vec<String>,
    pub colors: Vec<String>,
    pub sizes: Vec<String>,
    pub answers: Vec<String>,
    pub op_labels: Vec<String>,
    pub tokens: Vec<String>,
    pub split_counts: BTreeMap<String, usize>,
}

fn scene_split(seed: u64, scene_id: u64) -> Split {
    let mut rng = rng_from(derive_seed(seed, "split", scene_id));
    let u: f64 = rng.gen();
    if u < 0.8 {
        Split::Train
    } else if u < 0.9 {
        Split::Val
    } else {
        Split::Test
    }
}

fn evidence_missing(program: &Program, detections: &[Detection]) -> bool {
    program.ops.iter().any(|op| {
        !op.v_args.is_empty()
            && !op
                .v_args
                .iter()
                .any(|g| detections.iter().any(|d| iou(&d.bbox, &g.bbox) > 0.0))
    })
}

/// Regenerates the scene a sample was drawn from.
pub fn scene_for(seed: u64, config: &DataConfig, scene_id: u64) -> SceneGraph {
    gen_scene(derive_seed(seed, "scene", scene_id), &config.world)
}

/// Generates corpus record `i`; a pure function of its arguments.
/// `gen_corpus` maps this over all indices.
pub fn gen_sample(
    seed: u64,
    config: &DataConfig,
    mode: VisualMode,
    vocab: &OperationVocab,
    i: u64,
) -> Sample {
    let scene_id = i / config.questions_per_scene as u64;
    let scene = scene_for(seed, config, scene_id);
    let split = scene_split(seed, scene_id);

    // Rejection sampling over (template, realization seed); template 0
    // never rejects, so the loop terminates.
    let mut realized = None;
    for attempt in 0..64u64 {
        let qseed = derive_seed(seed, "question", i * 64 + attempt);
        let template_id = if attempt == 63 {
            0
        } else {
            (rng_from(qseed).gen_range(0..N_TEMPLATES as u64)) as usize
        };
        if let Some(r) = realize_question(template_id, &scene, derive_seed(qseed, "real", 0), vocab)
        {
            realized = Some(r);
            break;
        }
    }
    let realized = realized.expect("template 0 cannot reject");

    let detections = match mode {
        VisualMode::Oracle => oracle_detections(&scene, derive_seed(seed, "oracle-det", i)),
        VisualMode::Noisy => {
            apply_presence_shift(&scene, &config.noise, derive_seed(seed, "noise", i))
        }
    };
    let (dim, feat_noise) = match mode {
        VisualMode::Oracle => (config.oracle_dim, 0.0),
        VisualMode::Noisy => (config.noisy_dim, config.noise.feat_noise),
    };
    let features = embed_objects(
        &detections,
        &scene,
        mode,
        dim,
        derive_seed(seed, "featmap", 0),
        feat_noise,
    );
    let evidence_missing = evidence_missing(&realized.program, &detections);
    let group_key = format!("t{}|{}", realized.template_id, realized.answer);

    Sample {
        sample_id: i,
        scene_id,
        template_id: realized.template_id,
        tokens: realized.tokens,
        detections,
        features,
        answer: realized.answer,
        program: realized.program,
        group_key,
        split,
        ood: OodTag::Head,
        evidence_missing,
    }
}

/// Generates the whole corpus and assigns head/tail tags.
pub fn gen_corpus(seed: u64, config: &DataConfig, mode: VisualMode) -> Vec<Sample> {
    let vocab = OperationVocab::desk();
    let mut samples = progsup_parallel::par_map(config.n_samples, |i| {
        gen_sample(seed, config, mode, &vocab, i as u64)
    });
    assign_ood_tags(&mut samples, config.tail_fraction);
    samples
}

/// Ranks answers by frequency within each template group and tags samples
/// whose answer falls in the least-frequent `tail_fraction` of the group's
/// answer mass.
pub fn assign_ood_tags(samples: &mut [Sample], tail_fraction: f64) {
    let mut group_counts: BTreeMap<usize, BTreeMap<String, usize>> = BTreeMap::new();
    for s in samples.iter() {
        *group_counts.entry(s.template_id).or_default().entry(s.answer.clone()).or_insert(0) += 1;
    }
    let mut tail: BTreeSet<(usize, String)> = BTreeSet::new();
    for (tmpl, counts) in &group_counts {
        let total: usize = counts.values().sum();
        let budget = tail_fraction * total as f64;
        let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
        ranked.sort_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)));
        let mut cum = 0usize;
        for (answer, &count) in ranked {
            if (cum + count) as f64 <= budget {
                cum += count;
                tail.insert((*tmpl, answer.clone()));
            } else {
                break;
            }
        }
    }
    for s in samples.iter_mut() {
        s.ood = if tail.contains(&(s.template_id, s.answer.clone())) {
            OodTag::Tail
        } else {
            OodTag::Head
        };
    }
}

/// Builds the manifest for a generated corpus.
pub fn build_manifest(
    seed: u64,
    config: &DataConfig,
    mode: VisualMode,
    samples: &[Sample],
) -> Manifest {
    let vocab = OperationVocab::desk();
    let mut tokens: BTreeSet<String> = BTreeSet::new();
    let mut split_counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples {
        tokens.extend(s.tokens.iter().cloned());
        let split_key = match s.split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        *split_counts.entry(split_key.to_string()).or_insert(0) += 1;
        let ood_key = match s.ood {
            OodTag::Head => "head",
            OodTag::Tail => "tail",
        };
        *split_counts.entry(ood_key.to_string()).or_insert(0) += 1;
    }
    Manifest {
        n_samples: samples.len(),
        seed,
        visual_mode: mode,
        feature_dim: match mode {
            VisualMode::Oracle => config.oracle_dim,
            VisualMode::Noisy => config.noisy_dim,
        },
        config: config.clone(),
        classes: CLASSES.iter().map(|s| s.to_string()).collect(),
        colors: COLORS.iter().map(|s| s.to_string()).collect(),
        sizes: SIZES.iter().map(|s| s.to_string()).collect(),
        answers: answer_vocab(),
        op_labels: vocab.labels().to_vec(),
        tokens: tokens.into_iter().collect(),
        split_counts,
    }
}

fn sample_to_json(s: &Sample, vocab: &OperationVocab) -> SampleJson {
    let program_text =
        progsup_ir::serialize(&s.program, vocab).expect("generated programs serialize");
    SampleJson {
        id: s.sample_id,
        scene: s.scene_id,
        template: s.template_id,
        tokens: s.tokens.clone(),
        objects: s.detections.clone(),
        features: s.features.clone(),
        answer: s.answer.clone(),
        program: serde_json::from_str(&program_text).expect("program text is valid json"),
        group_key: s.group_key.clone(),
        split: s.split,
        ood: s.ood,
        evidence_missing: s.evidence_missing,
    }
}

fn sample_from_json(j: SampleJson, vocab: &OperationVocab) -> Result<Sample, String> {
    let program =
        progsup_ir::deserialize(&j.program.to_string(), vocab).map_err(|e| e.to_string())?;
    Ok(Sample {
        sample_id: j.id,
        scene_id: j.scene,
        template_id: j.template,
        tokens: j.tokens,
        detections: j.objects,
        features: j.features,
        answer: j.answer,
        program,
        group_key: j.group_key,
        split: j.split,
        ood: j.ood,
        evidence_missing: j.evidence_missing,
    })
}

/// Writes `manifest.json` and `samples.jsonl` under `dir`.
pub fn write_dataset(dir: &Path, manifest: &Manifest, samples: &[Sample]) -> Result<(), DatasetError> {
    let vocab = OperationVocab::desk();
    fs::create_dir_all(dir)?;
    let manifest_text = serde_json::to_string_pretty(manifest)
        .map_err(|e| DatasetError::Manifest(e.to_string()))?;
    fs::write(dir.join("manifest.json"), manifest_text + "\n")?;
    let mut out = std::io::BufWriter::new(fs::File::create(dir.join("samples.jsonl"))?);
    for s in samples {
        let line = serde_json::to_string(&sample_to_json(s, &vocab))
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset directory back; errors carry 1-based line numbers.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<Sample>), DatasetError> {
    let vocab = OperationVocab::desk();
    let manifest_text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let file = fs::File::open(dir.join("samples.jsonl"))?;
    let mut samples = Vec::with_capacity(manifest.n_samples);
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SampleJson = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Line { line: idx + 1, message: e.to_string() })?;
        samples.push(
            sample_from_json(parsed, &vocab)
                .map_err(|message| DatasetError::Line { line: idx + 1, message })?,
        );
    }
    if samples.len() != manifest.n_samples {
        return Err(DatasetError::CountMismatch {
            expected: manifest.n_samples,
            found: samples.len(),
        });
    }
    Ok((manifest, samples))
}
