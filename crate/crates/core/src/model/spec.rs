//! Declarative network descriptions and the D-CNN / WSP-CNN builders.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::layers::SppSpec;
use crate::tensor::ops::window_out_dim;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Relu,
    Spp {
        levels: Vec<(usize, usize)>,
    },
    Fc {
        width: usize,
    },
    Softmax,
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Fc { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub trainable: bool,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
            trainable: true,
        }
    }
}

/// A parameter tensor implied by a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamShape {
    pub name: String,
    pub layer: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// C×H×W of the inputs the model is built for. Thanks to SPP the
    /// network also accepts other spatial sizes.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Shape after every layer for an input of `input_shape`.
    pub fn shapes_for(&self, input_shape: [usize; 3]) -> Result<Vec<Vec<usize>>> {
        let mut cur = input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            cur = next_shape(layer, &cur)?;
            out.push(cur.clone());
        }
        Ok(out)
    }

    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        self.shapes_for(self.input_shape)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for l in &self.layers {
            if l.name.is_empty() || l.name.contains(['.', '/']) {
                return Err(Error::InvalidArgument(format!(
                    "layer name `{}` must be non-empty without '.' or '/'",
                    l.name
                )));
            }
            if !seen.insert(l.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate layer name `{}`",
                    l.name
                )));
            }
        }
        let n = self.layers.len();
        if n < 2
            || !matches!(self.layers[n - 1].kind, LayerKind::Softmax)
            || !matches!(self.layers[n - 2].kind, LayerKind::Fc { .. })
        {
            return Err(Error::InvalidArgument(
                "a model must end with a fully connected layer followed by softmax".into(),
            ));
        }
        let shapes = self.shapes()?;
        let last = shapes.last().expect("non-empty");
        if last != &[self.num_classes] {
            return Err(shape_err(
                "model",
                format!(
                    "final width {last:?} differs from {} classes",
                    self.num_classes
                ),
            ));
        }
        Ok(())
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn conv_layer_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
            .map(|l| l.name.as_str())
            .collect()
    }

    /// Index of the final fully connected (classifier) layer.
    pub fn classifier_index(&self) -> usize {
        self.layers.len() - 2
    }

    /// Width of the penultimate representation consumed by the classifier.
    pub fn feature_width(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        let idx = self.classifier_index();
        Ok(if idx == 0 {
            self.input_shape.iter().product()
        } else {
            shapes[idx - 1].iter().product()
        })
    }

    pub fn param_shapes(&self) -> Result<Vec<ParamShape>> {
        let mut cur = self.input_shape.to_vec();
        let mut out = Vec::new();
        for l in &self.layers {
            match l.kind {
                LayerKind::Conv {
                    channels, kernel, ..
                } => {
                    let c = cur[0];
                    out.push(ParamShape {
                        name: format!("{}.weight", l.name),
                        layer: l.name.clone(),
                        shape: vec![channels, c, kernel, kernel],
                        fan_in: c * kernel * kernel,
                        fan_out: channels * kernel * kernel,
                        is_bias: false,
                    });
                    out.push(ParamShape {
                        name: format!("{}.bias", l.name),
                        layer: l.name.clone(),
                        shape: vec![channels],
                        fan_in: c * kernel * kernel,
                        fan_out: channels * kernel * kernel,
                        is_bias: true,
                    });
                }
                LayerKind::Fc { width } => {
                    let n: usize = cur.iter().product();
                    out.push(ParamShape {
                        name: format!("{}.weight", l.name),
                        layer: l.name.clone(),
                        shape: vec![width, n],
                        fan_in: n,
                        fan_out: width,
                        is_bias: false,
                    });
                    out.push(ParamShape {
                        name: format!("{}.bias", l.name),
                        layer: l.name.clone(),
                        shape: vec![width],
                        fan_in: n,
                        fan_out: width,
                        is_bias: true,
                    });
                }
                _ => {}
            }
            cur = next_shape(l, &cur)?;
        }
        Ok(out)
    }

    /// Same layers, different nominal input.
    pub fn with_input_shape(&self, input_shape: [usize; 3]) -> Result<Self> {
        let spec = Self {
            input_shape,
            ..self.clone()
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Keeps only the first `convs` convolutional blocks (with their
    /// activations and pooling) and re-attaches the SPP + fully connected head.
    pub fn shallow(&self, convs: usize) -> Result<Self> {
        let conv_positions: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind, LayerKind::Conv { .. }))
            .map(|(i, _)| i)
            .collect();
        if convs == 0 || convs > conv_positions.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {convs} of {} convolutional layers",
                conv_positions.len()
            )));
        }
        let spp = self
            .layers
            .iter()
            .position(|l| matches!(l.kind, LayerKind::Spp { .. }))
            .ok_or_else(|| Error::InvalidArgument("model has no SPP layer".into()))?;
        let cut = conv_positions.get(convs).copied().unwrap_or(spp).min(spp);
        let mut layers: Vec<LayerSpec> = self.layers[..cut].to_vec();
        layers.extend_from_slice(&self.layers[spp..]);
        let spec = Self {
            layers,
            ..self.clone()
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn next_shape(layer: &LayerSpec, cur: &[usize]) -> Result<Vec<usize>> {
    let chw = |cur: &[usize]| -> Result<(usize, usize, usize)> {
        match cur {
            &[c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err(
                "model",
                format!("layer `{}` needs a C×H×W input, got {cur:?}", layer.name),
            )),
        }
    };
    let fail = |detail: String| shape_err("model", format!("layer `{}`: {detail}", layer.name));
    Ok(match &layer.kind {
        LayerKind::Conv {
            channels,
            kernel,
            stride,
            pad,
        } => {
            let (_, h, w) = chw(cur)?;
            match (
                window_out_dim(h, *kernel, *stride, *pad),
                window_out_dim(w, *kernel, *stride, *pad),
            ) {
                (Some(oh), Some(ow)) if *channels > 0 => vec![*channels, oh, ow],
                _ => {
                    return Err(fail(format!(
                        "{kernel}×{kernel} kernel does not fit {h}×{w}"
                    )))
                }
            }
        }
        LayerKind::MaxPool { window, stride } => {
            let (c, h, w) = chw(cur)?;
            match (
                window_out_dim(h, *window, *stride, 0),
                window_out_dim(w, *window, *stride, 0),
            ) {
                (Some(oh), Some(ow)) => vec![c, oh, ow],
                _ => return Err(fail(format!("pool window {window} does not fit {h}×{w}"))),
            }
        }
        LayerKind::Relu | LayerKind::Softmax => cur.to_vec(),
        LayerKind::Spp { levels } => {
            let (c, h, w) = chw(cur)?;
            let spec = SppSpec::new(levels.clone())?;
            spec.check_input(h, w).map_err(|e| fail(e.to_string()))?;
            vec![spec.output_len(c)]
        }
        LayerKind::Fc { width } => {
            if *width == 0 {
                return Err(fail("zero width".into()));
            }
            vec![*width]
        }
    })
}

/// Conv widths of the full-size depth network.
pub const DCNN_CHANNELS: [usize; 4] = [96, 256, 384, 512];
/// Hidden fully connected width of the full-size depth network.
pub const DCNN_FC_WIDTH: usize = 512;
/// Smallest spatial input accepted by the stem.
pub const MIN_INPUT_SIZE: usize = 13;

pub fn scaled_width(base: usize, scale: f64) -> usize {
    ((base as f64 * scale).round() as usize).max(1)
}

/// Stem shared by the depth network and its patch-pretraining twin:
/// conv 5×5/2 → pool 2×2/2 → three 3×3 convs, each conv followed by relu.
fn stem(scale: f64) -> Vec<LayerSpec> {
    let ch = DCNN_CHANNELS.map(|c| scaled_width(c, scale));
    let conv = |name: &str, channels, kernel, stride, pad| {
        LayerSpec::new(
            name,
            LayerKind::Conv {
                channels,
                kernel,
                stride,
                pad,
            },
        )
    };
    vec![
        conv("conv1", ch[0], 5, 2, 0),
        LayerSpec::new("relu1", LayerKind::Relu),
        LayerSpec::new(
            "pool1",
            LayerKind::MaxPool {
                window: 2,
                stride: 2,
            },
        ),
        conv("conv2", ch[1], 3, 1, 1),
        LayerSpec::new("relu2", LayerKind::Relu),
        conv("conv3", ch[2], 3, 1, 1),
        LayerSpec::new("relu3", LayerKind::Relu),
        conv("conv4", ch[3], 3, 1, 1),
        LayerSpec::new("relu4", LayerKind::Relu),
    ]
}

/// Number of layers in the convolutional stem of [`build_dcnn`].
pub const STEM_LEN: usize = 9;

fn build_stem_classifier(
    input_shape: [usize; 3],
    num_classes: usize,
    scale: f64,
) -> Result<ModelSpec> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scale must lie in (0, 1], got {scale}"
        )));
    }
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    let [_, h, w] = input_shape;
    if h < MIN_INPUT_SIZE || w < MIN_INPUT_SIZE {
        return Err(shape_err(
            "build",
            format!(
                "input {h}×{w} is smaller than the {MIN_INPUT_SIZE}×{MIN_INPUT_SIZE} stem minimum"
            ),
        ));
    }
    let mut layers = stem(scale);
    layers.push(LayerSpec::new(
        "spp",
        LayerKind::Spp {
            levels: SppSpec::canonical().levels,
        },
    ));
    layers.push(LayerSpec::new(
        "fc1",
        LayerKind::Fc {
            width: scaled_width(DCNN_FC_WIDTH, scale),
        },
    ));
    layers.push(LayerSpec::new("relu5", LayerKind::Relu));
    layers.push(LayerSpec::new("fc2", LayerKind::Fc { width: num_classes }));
    layers.push(LayerSpec::new("prob", LayerKind::Softmax));
    let spec = ModelSpec {
        input_shape,
        num_classes,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Depth CNN for full images.
pub fn build_dcnn(input_shape: [usize; 3], num_classes: usize, scale: f64) -> Result<ModelSpec> {
    build_stem_classifier(input_shape, num_classes, scale)
}

/// Patch CNN used for weakly supervised pretraining. Its stem is
/// layer-for-layer identical to [`build_dcnn`], so conv weights transfer by name.
pub fn build_wsp_cnn(patch_shape: [usize; 3], num_classes: usize, scale: f64) -> Result<ModelSpec> {
    build_stem_classifier(patch_shape, num_classes, scale)
}

/// Which layers take part in fine tuning. The classifier is always trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FineTuneRegime {
    /// Everything trains.
    Full,
    /// Only the top `n` parameterized layers train.
    Top(usize),
    /// Only the bottom `n` convolutional layers train.
    Bottom(usize),
}

impl FineTuneRegime {
    /// Names of layers excluded from updates.
    pub fn freeze_mask(&self, spec: &ModelSpec) -> BTreeSet<String> {
        let param_layers: Vec<&LayerSpec> =
            spec.layers.iter().filter(|l| l.kind.has_params()).collect();
        let classifier = &spec.layers[spec.classifier_index()].name;
        let train: BTreeSet<&str> = match *self {
            FineTuneRegime::Full => return BTreeSet::new(),
            FineTuneRegime::Top(n) => param_layers
                .iter()
                .rev()
                .take(n)
                .map(|l| l.name.as_str())
                .collect(),
            FineTuneRegime::Bottom(n) => param_layers
                .iter()
                .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
                .take(n)
                .map(|l| l.name.as_str())
                .collect(),
        };
        param_layers
            .iter()
            .map(|l| l.name.as_str())
            .filter(|n| !train.contains(n) && *n != classifier)
            .map(str::to_string)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stem_output(spec: &ModelSpec) -> Vec<usize> {
        spec.shapes().unwrap()[STEM_LEN - 1].clone()
    }

    fn spp_width(spec: &ModelSpec) -> usize {
        let i = spec.layer_index("spp").unwrap();
        spec.shapes().unwrap()[i][0]
    }

    #[test]
    fn full_scale_image_shape_chain() {
        let spec = build_dcnn([3, 119, 119], 19, 1.0).unwrap();
        assert_eq!(stem_output(&spec), vec![512, 29, 29]);
        assert_eq!(spp_width(&spec), 7168);
    }

    #[test]
    fn full_scale_patch_shape_chain() {
        let spec = build_wsp_cnn([3, 35, 35], 19, 1.0).unwrap();
        assert_eq!(stem_output(&spec), vec![512, 8, 8]);
        assert_eq!(spp_width(&spec), 7168);
        assert_eq!(
            spec.layers[spec.classifier_index()].kind,
            LayerKind::Fc { width: 19 }
        );
    }

    #[test]
    fn desk_scale_widths() {
        let spec = build_dcnn([3, 35, 35], 10, 0.125).unwrap();
        let widths: Vec<usize> = spec
            .layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Conv { channels, .. } => Some(channels),
                _ => None,
            })
            .collect();
        assert_eq!(widths, vec![12, 32, 48, 64]);
        assert_eq!(spp_width(&spec), 896);
    }

    #[test]
    fn stems_match_layer_for_layer() {
        let d = build_dcnn([3, 119, 119], 10, 0.5).unwrap();
        let w = build_wsp_cnn([3, 35, 35], 10, 0.5).unwrap();
        assert_eq!(d.layers[..STEM_LEN], w.layers[..STEM_LEN]);
        assert_eq!(d.conv_layer_names(), w.conv_layer_names());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_dcnn([3, 12, 40], 10, 1.0).is_err());
        assert!(build_dcnn([3, 35, 35], 10, 0.0).is_err());
        assert!(build_dcnn([3, 35, 35], 10, 1.5).is_err());
        // 13 fits the stem, but the 3×3 pyramid level needs a 3×3 map
        let err = build_dcnn([3, 13, 13], 10, 1.0).unwrap_err();
        assert!(err.to_string().contains("spp"), "{err}");
        assert!(build_dcnn([3, 15, 15], 10, 1.0).is_ok());
    }

    #[test]
    fn duplicate_names_are_invalid() {
        let mut spec = build_dcnn([3, 35, 35], 4, 0.125).unwrap();
        spec.layers[1].name = "conv1".into();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn freeze_regimes() {
        let spec = build_dcnn([3, 35, 35], 4, 0.125).unwrap();
        let top: Vec<String> = FineTuneRegime::Top(2)
            .freeze_mask(&spec)
            .into_iter()
            .collect();
        assert_eq!(top, ["conv1", "conv2", "conv3", "conv4"]);
        let bottom: Vec<String> = FineTuneRegime::Bottom(1)
            .freeze_mask(&spec)
            .into_iter()
            .collect();
        assert_eq!(bottom, ["conv2", "conv3", "conv4", "fc1"]);
        assert!(FineTuneRegime::Full.freeze_mask(&spec).is_empty());
    }

    #[test]
    fn shallow_keeps_leading_convs() {
        let spec = build_dcnn([3, 35, 35], 4, 0.125).unwrap();
        let s = spec.shallow(2).unwrap();
        assert_eq!(s.conv_layer_names(), vec!["conv1", "conv2"]);
        assert_eq!(spp_width(&s), 32 * 14);
        assert!(spec.shallow(5).is_err());
    }
}
