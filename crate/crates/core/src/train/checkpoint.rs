//! Checkpoint container:
//! `"DSC1"`, version `u16`, spec length `u32` + JSON spec, entry count `u32`,
//! per entry name length `u16` + name, rank `u8`, extents `u32`, `f32`
//! payload, then a CRC32 of every preceding byte. All integers little endian.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, shape_err, Error, Result};
use crate::model::{
    FusionSpec, Model, ModelSpec, Network, RgbdImageModel, RgbdVideoModel, TemporalHead, VideoModel,
};
use crate::tensor::{ByteReader, Tensor};

pub const MAGIC: &[u8; 4] = b"DSC1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Image {
        spec: ModelSpec,
    },
    Video {
        cnn: ModelSpec,
        hidden: usize,
    },
    RgbdImage {
        rgb: ModelSpec,
        depth: ModelSpec,
        fusion: FusionSpec,
    },
    RgbdVideo {
        rgb: ModelSpec,
        depth: ModelSpec,
        rgb_hidden: usize,
        depth_hidden: usize,
        fusion: FusionSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: Architecture,
    /// `rgb`, `depth` or `rgbd`.
    pub modality: String,
    pub classes: Vec<String>,
    /// Training stage that produced the checkpoint.
    pub stage: String,
}

/// Any model a checkpoint can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Image(Network),
    Video(VideoModel),
    RgbdImage(RgbdImageModel),
    RgbdVideo(RgbdVideoModel),
}

impl AnyModel {
    pub fn architecture(&self) -> Architecture {
        match self {
            AnyModel::Image(n) => Architecture::Image {
                spec: n.spec().clone(),
            },
            AnyModel::Video(v) => Architecture::Video {
                cnn: v.branch.cnn.spec().clone(),
                hidden: v.branch.lstm.hidden(),
            },
            AnyModel::RgbdImage(m) => Architecture::RgbdImage {
                rgb: m.rgb.spec().clone(),
                depth: m.depth.spec().clone(),
                fusion: m.fusion.spec,
            },
            AnyModel::RgbdVideo(m) => Architecture::RgbdVideo {
                rgb: m.rgb.cnn.spec().clone(),
                depth: m.depth.cnn.spec().clone(),
                rgb_hidden: m.rgb.lstm.hidden(),
                depth_hidden: m.depth.lstm.hidden(),
                fusion: m.fusion.spec,
            },
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            AnyModel::Image(n) => n.spec().num_classes,
            AnyModel::Video(v) => v.num_classes(),
            AnyModel::RgbdImage(m) => m.fusion.spec.num_classes,
            AnyModel::RgbdVideo(m) => m.fusion.spec.num_classes,
        }
    }

    /// A model of the given architecture with placeholder parameters.
    fn skeleton(arch: &Architecture) -> Result<Self> {
        let video = |cnn: &ModelSpec, hidden: usize| -> Result<VideoModel> {
            let net = Network::new(cnn.clone(), 0)?;
            let width = cnn.feature_width()?;
            VideoModel::new(net, TemporalHead::new(width, hidden, cnn.num_classes, 0))
        };
        Ok(match arch {
            Architecture::Image { spec } => AnyModel::Image(Network::new(spec.clone(), 0)?),
            Architecture::Video { cnn, hidden } => AnyModel::Video(video(cnn, *hidden)?),
            Architecture::RgbdImage { rgb, depth, fusion } => {
                let m = RgbdImageModel::new(
                    Network::new(rgb.clone(), 0)?,
                    Network::new(depth.clone(), 0)?,
                    fusion.hidden_width,
                    0,
                )?;
                if m.fusion.spec != *fusion {
                    return Err(Error::InvalidArgument(format!(
                        "fusion spec {fusion:?} does not fit the branches"
                    )));
                }
                AnyModel::RgbdImage(m)
            }
            Architecture::RgbdVideo {
                rgb,
                depth,
                rgb_hidden,
                depth_hidden,
                fusion,
            } => {
                let m = RgbdVideoModel::from_branches(
                    video(rgb, *rgb_hidden)?,
                    video(depth, *depth_hidden)?,
                    fusion.hidden_width,
                    0,
                )?;
                if m.fusion.spec != *fusion {
                    return Err(Error::InvalidArgument(format!(
                        "fusion spec {fusion:?} does not fit the branches"
                    )));
                }
                AnyModel::RgbdVideo(m)
            }
        })
    }
}

impl Model for AnyModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        match self {
            AnyModel::Image(m) => m.named_params(),
            AnyModel::Video(m) => m.named_params(),
            AnyModel::RgbdImage(m) => m.named_params(),
            AnyModel::RgbdVideo(m) => m.named_params(),
        }
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            AnyModel::Image(m) => m.named_params_mut(),
            AnyModel::Video(m) => m.named_params_mut(),
            AnyModel::RgbdImage(m) => m.named_params_mut(),
            AnyModel::RgbdVideo(m) => m.named_params_mut(),
        }
    }

    fn trainable_param_names(&self) -> Vec<String> {
        match self {
            AnyModel::Image(m) => m.trainable_param_names(),
            AnyModel::Video(m) => m.trainable_param_names(),
            AnyModel::RgbdImage(m) => m.trainable_param_names(),
            AnyModel::RgbdVideo(m) => m.trainable_param_names(),
        }
    }
}

pub fn encode_checkpoint(
    model: &AnyModel,
    classes: &[String],
    modality: &str,
    stage: &str,
) -> Result<Vec<u8>> {
    if classes.len() != model.num_classes() {
        return Err(Error::Taxonomy(format!(
            "{} class names for a {}-way model",
            classes.len(),
            model.num_classes()
        )));
    }
    let meta = CheckpointMeta {
        architecture: model.architecture(),
        modality: modality.to_string(),
        classes: classes.to_vec(),
        stage: stage.to_string(),
    };
    let spec = serde_json::to_string(&meta)?;
    let params = model.named_params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("parameter `{name}`")));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        t.write_bytes(&mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// CRC32 stored in the trailer of an encoded checkpoint.
pub fn checkpoint_crc(bytes: &[u8]) -> Result<u32> {
    if bytes.len() < 4 {
        return Err(Error::Format {
            what: "checkpoint",
            offset: 0,
            detail: "shorter than the checksum trailer".into(),
        });
    }
    Ok(u32::from_le_bytes(
        bytes[bytes.len() - 4..].try_into().unwrap(),
    ))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointMeta, AnyModel)> {
    let stored = checkpoint_crc(bytes)?;
    let body = &bytes[..bytes.len() - 4];
    let mut r = ByteReader::new(body, "checkpoint");
    if r.take(4)? != MAGIC {
        return Err(Error::Format {
            what: "checkpoint",
            offset: 0,
            detail: "bad magic".into(),
        });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    if crc32fast::hash(body) != stored {
        return Err(Error::Format {
            what: "checkpoint",
            offset: body.len(),
            detail: "CRC32 mismatch".into(),
        });
    }
    let spec_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_str(r.utf8(spec_len)?)?;
    let count = r.u32()? as usize;
    let mut entries = IndexMap::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = r.utf8(n)?.to_string();
        let t = r.tensor()?;
        if entries.insert(name.clone(), t).is_some() {
            return Err(r.fail(format!("duplicate entry `{name}`")));
        }
    }
    if r.offset() != body.len() {
        return Err(r.fail("trailing bytes after the last entry"));
    }
    let mut model = AnyModel::skeleton(&meta.architecture)?;
    if meta.classes.len() != model.num_classes() {
        return Err(Error::Taxonomy(format!(
            "{} class names for a {}-way model",
            meta.classes.len(),
            model.num_classes()
        )));
    }
    for (name, slot) in model.named_params_mut() {
        let t = entries.shift_remove(&name).ok_or_else(|| {
            Error::InvalidArgument(format!("checkpoint lacks parameter `{name}`"))
        })?;
        if t.shape() != slot.shape() {
            return Err(shape_err(
                "checkpoint",
                format!(
                    "`{name}` stored as {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                ),
            ));
        }
        *slot = t;
    }
    if let Some(extra) = entries.keys().next() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint has unknown parameter `{extra}`"
        )));
    }
    Ok((meta, model))
}

pub fn save_checkpoint(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    std::fs::write(path.as_ref(), bytes).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointMeta, AnyModel)> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| io_err(&path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_dcnn;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = build_dcnn([3, 19, 19], 4, 0.125).unwrap();
        let net = Network::new(spec.clone(), 3).unwrap();
        let video = VideoModel::new(
            Network::new(spec.clone(), 4).unwrap(),
            TemporalHead::new(spec.feature_width().unwrap(), 6, 4, 5),
        )
        .unwrap();
        let rgbd =
            RgbdImageModel::new(net.clone(), Network::new(spec.clone(), 6).unwrap(), 8, 7).unwrap();
        let rgbd_video = RgbdVideoModel::from_branches(video.clone(), video.clone(), 5, 8).unwrap();
        for model in [
            AnyModel::Image(net),
            AnyModel::Video(video),
            AnyModel::RgbdImage(rgbd),
            AnyModel::RgbdVideo(rgbd_video),
        ] {
            let bytes = encode_checkpoint(&model, &names(4), "depth", "test").unwrap();
            let (meta, back) = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, model);
            assert_eq!(meta.classes, names(4));
            assert_eq!(
                encode_checkpoint(&back, &names(4), "depth", "test").unwrap(),
                bytes
            );
        }
    }

    #[test]
    fn corruption_is_detected() {
        let net = Network::new(build_dcnn([3, 15, 15], 2, 0.125).unwrap(), 1).unwrap();
        let bytes = encode_checkpoint(&AnyModel::Image(net), &names(2), "rgb", "scratch").unwrap();
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 1;
        assert!(decode_checkpoint(&flipped).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 9]).is_err());
        assert!(decode_checkpoint(b"DSC").is_err());
    }

    #[test]
    fn layout_header() {
        let net = Network::new(build_dcnn([3, 15, 15], 2, 0.125).unwrap(), 1).unwrap();
        let bytes = encode_checkpoint(&AnyModel::Image(net), &names(2), "rgb", "scratch").unwrap();
        assert_eq!(&bytes[..4], b"DSC1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(
            checkpoint_crc(&bytes).unwrap(),
            crc32fast::hash(&bytes[..bytes.len() - 4])
        );
    }
}
