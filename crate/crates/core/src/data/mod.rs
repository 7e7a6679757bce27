//! Manifests, image files, preprocessing and the synthetic RGB-D corpus.

pub mod dataset;
pub mod jet;
pub mod keyframes;
pub mod manifest;
pub mod patches;
pub mod pnm;
pub mod synth;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use dataset::{
    load_corpus, load_split, synthetic_corpus, write_synthetic_corpus, Corpus, CorpusSize, Dataset,
    Sample, SceneSample, SceneSequence, SceneSplit,
};
pub use jet::{jet, jet_encode, MISSING_DEPTH};
pub use keyframes::{blur_score, segment_sequence, select_keyframes, DEFAULT_SEGMENT_LEN};
pub use manifest::{Manifest, Record, Role};
pub use patches::sample_patch_grid;
pub use pnm::{load_image, save_image};
pub use synth::{
    class_names, generate_synthetic_scene, SceneImage, SceneMode, SequenceSample, SynthConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Depth,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "depth" => Ok(Modality::Depth),
            other => Err(Error::InvalidArgument(format!(
                "unknown modality `{other}`"
            ))),
        }
    }
}
