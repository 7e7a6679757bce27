//! In-memory datasets, the synthetic corpus, and their on-disk form.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::jet::{jet_encode, missing_mask};
use crate::data::manifest::{Manifest, Record, Role};
use crate::data::pnm::{load_image, save_image};
use crate::data::synth::{class_names, generate_image, generate_sequence, SynthConfig};
use crate::data::Modality;
use crate::error::{io_err, Error, Result};
use crate::tensor::Tensor;

/// A network input with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// A still with either or both modalities; depth is jet encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub rgb: Option<Tensor>,
    pub depth: Option<Tensor>,
    pub label: usize,
}

/// Keyframes of one video, in capture order.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub rgb: Option<Vec<Tensor>>,
    pub depth: Option<Vec<Tensor>>,
    pub label: usize,
}

impl SceneSample {
    pub fn get(&self, modality: Modality) -> Result<&Tensor> {
        match modality {
            Modality::Rgb => self.rgb.as_ref(),
            Modality::Depth => self.depth.as_ref(),
        }
        .ok_or(Error::Empty("modality missing from sample"))
    }
}

impl SceneSequence {
    pub fn get(&self, modality: Modality) -> Result<&[Tensor]> {
        match modality {
            Modality::Rgb => self.rgb.as_deref(),
            Modality::Depth => self.depth.as_deref(),
        }
        .ok_or(Error::Empty("modality missing from sequence"))
    }

    pub fn len(&self) -> usize {
        self.rgb
            .as_ref()
            .or(self.depth.as_ref())
            .map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stills and videos of one split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneSplit {
    pub stills: Vec<SceneSample>,
    pub sequences: Vec<SceneSequence>,
}

impl SceneSplit {
    pub fn images(&self, classes: &[String], modality: Modality) -> Result<Dataset> {
        let samples = self
            .stills
            .iter()
            .map(|s| {
                Ok(Sample {
                    input: s.get(modality)?.clone(),
                    label: s.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            classes: classes.to_vec(),
            samples,
        })
    }

    /// Every keyframe as an independent sample carrying its video's label.
    pub fn frames(&self, classes: &[String], modality: Modality) -> Result<Dataset> {
        let mut samples = Vec::new();
        for s in &self.sequences {
            for f in s.get(modality)? {
                samples.push(Sample {
                    input: f.clone(),
                    label: s.label,
                });
            }
        }
        Ok(Dataset {
            classes: classes.to_vec(),
            samples,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub classes: Vec<String>,
    pub train: SceneSplit,
    pub test: SceneSplit,
}

impl Corpus {
    pub fn split(&self, role: Role) -> &SceneSplit {
        match role {
            Role::Train => &self.train,
            Role::Test => &self.test,
        }
    }
}

/// Sizes of a synthetic corpus, per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSize {
    pub train_images: usize,
    pub test_images: usize,
    pub train_videos: usize,
    pub test_videos: usize,
}

impl CorpusSize {
    /// `total` stills per class split 60/40.
    pub fn images(total: usize) -> Self {
        let train = (total * 3 + 2) / 5;
        Self {
            train_images: train,
            test_images: total - train,
            train_videos: 0,
            test_videos: 0,
        }
    }

    pub fn videos(total: usize) -> Self {
        let train = (total * 3 + 2) / 5;
        Self {
            train_images: 0,
            test_images: 0,
            train_videos: train,
            test_videos: total - train,
        }
    }
}

fn sample_seed(seed: u64, role: Role, video: bool, index: usize) -> u64 {
    let tag = (role as u64) << 1 | video as u64;
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (tag << 56) ^ index as u64
}

/// Renders the default synthetic corpus. Identical arguments give an identical corpus.
pub fn synthetic_corpus(cfg: &SynthConfig, size: CorpusSize, seed: u64) -> Result<Corpus> {
    let classes = class_names();
    let build = |role: Role, stills: usize, videos: usize| -> Result<SceneSplit> {
        let mut split = SceneSplit::default();
        for label in 0..classes.len() {
            for i in 0..stills {
                let img = generate_image(cfg, label, sample_seed(seed, role, false, i))?;
                split.stills.push(SceneSample {
                    rgb: Some(img.rgb),
                    depth: Some(img.depth_encoded),
                    label,
                });
            }
            for i in 0..videos {
                let seq = generate_sequence(cfg, label, sample_seed(seed, role, true, i))?;
                let (rgb, depth) = seq
                    .keyframes
                    .into_iter()
                    .map(|k| (k.rgb, k.depth_encoded))
                    .unzip();
                split.sequences.push(SceneSequence {
                    rgb: Some(rgb),
                    depth: Some(depth),
                    label,
                });
            }
        }
        Ok(split)
    };
    Ok(Corpus {
        train: build(Role::Train, size.train_images, size.train_videos)?,
        test: build(Role::Test, size.test_images, size.test_videos)?,
        classes,
    })
}

/// Renders the first `num_classes` synthetic classes into `dir` as PPM colour /
/// PGM raw depth files plus `manifest.tsv`, and returns the manifest.
pub fn write_synthetic_corpus(
    dir: &Path,
    cfg: &SynthConfig,
    size: CorpusSize,
    num_classes: usize,
    seed: u64,
) -> Result<Manifest> {
    let mut classes = class_names();
    if !(1..=classes.len()).contains(&num_classes) {
        return Err(Error::InvalidArgument(format!(
            "{num_classes} classes requested, the generator has {}",
            classes.len()
        )));
    }
    classes.truncate(num_classes);
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut records = Vec::new();
    let mut push = |path: String, label: &str, modality, role, seq: &str, frame: Option<usize>| {
        records.push(Record {
            path,
            label: label.to_string(),
            modality,
            role,
            sequence_id: Some(seq.to_string()),
            frame_index: frame,
        });
    };
    for role in [Role::Train, Role::Test] {
        let (stills, videos) = match role {
            Role::Train => (size.train_images, size.train_videos),
            Role::Test => (size.test_images, size.test_videos),
        };
        for (label, name) in classes.iter().enumerate() {
            for i in 0..stills {
                let img = generate_image(cfg, label, sample_seed(seed, role, false, i))?;
                let id = format!("{}_{name}_img{i:03}", role.as_str());
                save_image(dir.join(format!("{id}_rgb.ppm")), &img.rgb)?;
                save_image(dir.join(format!("{id}_depth.pgm")), &img.depth_raw)?;
                push(
                    format!("{id}_rgb.ppm"),
                    name,
                    Modality::Rgb,
                    role,
                    &id,
                    None,
                );
                push(
                    format!("{id}_depth.pgm"),
                    name,
                    Modality::Depth,
                    role,
                    &id,
                    None,
                );
            }
            for i in 0..videos {
                let seq = generate_sequence(cfg, label, sample_seed(seed, role, true, i))?;
                let id = format!("{}_{name}_vid{i:03}", role.as_str());
                for (k, frame) in seq.keyframes.iter().enumerate() {
                    let stem = format!("{id}_f{k:02}");
                    save_image(dir.join(format!("{stem}_rgb.ppm")), &frame.rgb)?;
                    save_image(dir.join(format!("{stem}_depth.pgm")), &frame.depth_raw)?;
                    push(
                        format!("{stem}_rgb.ppm"),
                        name,
                        Modality::Rgb,
                        role,
                        &id,
                        Some(k),
                    );
                    push(
                        format!("{stem}_depth.pgm"),
                        name,
                        Modality::Depth,
                        role,
                        &id,
                        Some(k),
                    );
                }
            }
        }
    }
    let manifest = Manifest {
        records,
        base_dir: dir.to_path_buf(),
    };
    manifest.save(dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Reads one record: colour images as stored, depth maps jet encoded.
pub fn load_record(manifest: &Manifest, record: &Record) -> Result<Tensor> {
    let img = load_image(manifest.resolve(record))?;
    let channels = img.shape()[0];
    match (record.modality, channels) {
        (Modality::Rgb, 3) => Ok(img),
        (Modality::Depth, 1) => jet_encode(&img, &missing_mask(&img)),
        (m, c) => Err(Error::InvalidArgument(format!(
            "{}: {c}-channel image recorded as {}",
            record.path,
            m.as_str()
        ))),
    }
}

#[derive(Default)]
struct Pending {
    label: usize,
    rgb: Option<Tensor>,
    depth: Option<Tensor>,
}

/// Loads the `role` split of a validated manifest, pairing modalities by
/// sequence id and frame index. Records without a sequence id are stills.
pub fn load_split(manifest: &Manifest, role: Role) -> Result<(Vec<String>, SceneSplit)> {
    manifest.validate()?;
    let classes = manifest.classes();
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut stills: Vec<Pending> = Vec::new();
    let mut still_keys: BTreeMap<String, usize> = BTreeMap::new();
    let mut videos: BTreeMap<String, BTreeMap<usize, Pending>> = BTreeMap::new();
    let mut video_order: Vec<String> = Vec::new();

    for r in manifest.records.iter().filter(|r| r.role == role) {
        let label = index[r.label.as_str()];
        let img = load_record(manifest, r)?;
        let slot = match (&r.sequence_id, r.frame_index) {
            (Some(seq), Some(f)) => {
                if !videos.contains_key(seq) {
                    video_order.push(seq.clone());
                }
                videos
                    .entry(seq.clone())
                    .or_default()
                    .entry(f)
                    .or_insert(Pending {
                        label,
                        ..Pending::default()
                    })
            }
            (Some(seq), None) => {
                let i = *still_keys.entry(seq.clone()).or_insert_with(|| {
                    stills.push(Pending {
                        label,
                        ..Pending::default()
                    });
                    stills.len() - 1
                });
                &mut stills[i]
            }
            (None, _) => {
                stills.push(Pending {
                    label,
                    ..Pending::default()
                });
                stills.last_mut().unwrap()
            }
        };
        match r.modality {
            Modality::Rgb => slot.rgb = Some(img),
            Modality::Depth => slot.depth = Some(img),
        }
    }

    let mut split = SceneSplit {
        stills: stills
            .into_iter()
            .map(|p| SceneSample {
                rgb: p.rgb,
                depth: p.depth,
                label: p.label,
            })
            .collect(),
        sequences: Vec::new(),
    };
    for id in video_order {
        let frames = videos.remove(&id).unwrap();
        let label = frames.values().next().map_or(0, |p| p.label);
        let all = |f: fn(&Pending) -> Option<&Tensor>| -> Option<Vec<Tensor>> {
            frames.values().map(|p| f(p).cloned()).collect()
        };
        let rgb = all(|p| p.rgb.as_ref());
        let depth = all(|p| p.depth.as_ref());
        if rgb.is_none() && depth.is_none() {
            return Err(Error::InvalidArgument(format!(
                "video `{id}` lacks a complete frame set for either modality"
            )));
        }
        split.sequences.push(SceneSequence { rgb, depth, label });
    }
    Ok((classes, split))
}

/// Loads both splits into a [`Corpus`].
pub fn load_corpus(manifest: &Manifest) -> Result<Corpus> {
    let (classes, train) = load_split(manifest, Role::Train)?;
    let (_, test) = load_split(manifest, Role::Test)?;
    Ok(Corpus {
        classes,
        train,
        test,
    })
}
