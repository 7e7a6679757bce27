//! Per-frame CNN features fed through the recurrent cell; the last hidden
//! state is classified directly or fused with the other modality.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::lstm::{lstm_backward, lstm_unroll, LstmTrace, LstmWeights, LSTM_PARAM_NAMES};
use crate::model::fusion::{branch_trainable, FusionHead, FusionSpec, FusionTrace};
use crate::model::{Linear, Model, Network, Trace};
use crate::tensor::ops::{softmax_cross_entropy, softmax_cross_entropy_grad};
use crate::tensor::{accumulate, prefixed, Gradients, Tensor};

/// Recurrent embedding plus classifier, operating on precomputed features.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalHead {
    pub lstm: LstmWeights,
    pub head: Linear,
}

pub struct TemporalGrads {
    pub params: Gradients,
    /// Gradient with respect to each input feature vector.
    pub inputs: Vec<Tensor>,
}

impl TemporalHead {
    pub fn new(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            lstm: LstmWeights::random(hidden, input, &mut rng),
            head: Linear::glorot(classes, hidden, &mut rng),
        }
    }

    pub fn forward(&self, feats: &[Tensor]) -> Result<(LstmTrace, Tensor)> {
        let trace = lstm_unroll(feats, &self.lstm)?;
        let logits = self.head.forward(&trace.final_state().m)?;
        Ok((trace, logits))
    }

    pub fn logits(&self, feats: &[Tensor]) -> Result<Tensor> {
        Ok(self.forward(feats)?.1)
    }

    pub fn backward(&self, trace: &LstmTrace, grad_logits: &Tensor) -> Result<TemporalGrads> {
        let hg = self
            .head
            .backward(&trace.final_state().m, grad_logits, true)?;
        let dm = hg.input.clone().unwrap();
        let (lg, inputs) = lstm_backward(trace, &self.lstm, &dm)?;
        let mut params = lstm_grads_named("lstm", &lg);
        params.extend(Linear::grads_named("head", hg));
        Ok(TemporalGrads { params, inputs })
    }

    pub fn loss_and_grads(
        &self,
        feats: &[Tensor],
        label: usize,
    ) -> Result<(f64, Gradients, Tensor)> {
        let (trace, logits) = self.forward(feats)?;
        let (loss, probs) = softmax_cross_entropy(&logits, label)?;
        let g = self.backward(&trace, &softmax_cross_entropy_grad(&probs, label))?;
        Ok((loss, g.params, probs))
    }
}

pub(crate) fn lstm_grads_named(prefix: &str, g: &LstmWeights) -> Gradients {
    g.named()
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
        .collect()
}

fn push_lstm<'a>(prefix: &str, w: &'a LstmWeights, out: &mut Vec<(String, &'a Tensor)>) {
    out.extend(
        w.named()
            .into_iter()
            .map(|(n, t)| (format!("{prefix}.{n}"), t)),
    );
}

fn push_lstm_mut<'a>(
    prefix: &str,
    w: &'a mut LstmWeights,
    out: &mut Vec<(String, &'a mut Tensor)>,
) {
    out.extend(
        w.named_mut()
            .into_iter()
            .map(|(n, t)| (format!("{prefix}.{n}"), t)),
    );
}

fn lstm_names(prefix: &str) -> Vec<String> {
    LSTM_PARAM_NAMES
        .iter()
        .map(|n| format!("{prefix}.{n}"))
        .collect()
}

impl Model for TemporalHead {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        push_lstm("lstm", &self.lstm, &mut out);
        self.head.push_named("head", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        push_lstm_mut("lstm", &mut self.lstm, &mut out);
        self.head.push_named_mut("head", &mut out);
        out
    }

    fn trainable_param_names(&self) -> Vec<String> {
        let mut names = lstm_names("lstm");
        names.extend(["head.weight".to_string(), "head.bias".to_string()]);
        names
    }
}

/// CNN feature extractor plus recurrent cell, without a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoBranch {
    pub cnn: Network,
    pub lstm: LstmWeights,
}

pub struct BranchTrace {
    frames: Vec<Trace>,
    lstm: LstmTrace,
}

impl BranchTrace {
    pub fn final_hidden(&self) -> &Tensor {
        &self.lstm.final_state().m
    }
}

impl VideoBranch {
    pub fn forward(&self, frames: &[Tensor]) -> Result<BranchTrace> {
        if frames.is_empty() {
            return Err(Error::Empty("frame sequence"));
        }
        let traces = frames
            .iter()
            .map(|f| self.cnn.feature_trace(f))
            .collect::<Result<Vec<_>>>()?;
        let feats: Vec<Tensor> = traces.iter().map(|t| t.output().clone()).collect();
        let lstm = lstm_unroll(&feats, &self.lstm)?;
        Ok(BranchTrace {
            frames: traces,
            lstm,
        })
    }

    /// Gradients named `cnn/…` and `lstm.…` for a gradient on the final hidden state.
    pub fn backward(&self, trace: &BranchTrace, grad_m: &Tensor) -> Result<Gradients> {
        let (lg, dxs) = lstm_backward(&trace.lstm, &self.lstm, grad_m)?;
        let mut cnn_grads = Gradients::new();
        for (ft, dx) in trace.frames.iter().zip(dxs) {
            let (g, _) = self.cnn.backward(ft, dx, false)?;
            accumulate(&mut cnn_grads, g)?;
        }
        let mut out = prefixed(cnn_grads, "cnn/");
        out.extend(lstm_grads_named("lstm", &lg));
        Ok(out)
    }

    fn trainable(&self) -> Vec<String> {
        let mut names = branch_trainable(&self.cnn, "cnn/");
        names.extend(lstm_names("lstm"));
        names
    }

    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.extend(
            self.cnn
                .named_params()
                .into_iter()
                .map(|(k, v)| (format!("{prefix}cnn/{k}"), v)),
        );
        push_lstm(&format!("{prefix}lstm"), &self.lstm, out);
    }

    fn push_named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.extend(
            self.cnn
                .named_params_mut()
                .into_iter()
                .map(|(k, v)| (format!("{prefix}cnn/{k}"), v)),
        );
        push_lstm_mut(&format!("{prefix}lstm"), &mut self.lstm, out);
    }
}

/// Single-modality CNN + LSTM video classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoModel {
    pub branch: VideoBranch,
    pub head: Linear,
}

impl VideoModel {
    pub fn new(cnn: Network, temporal: TemporalHead) -> Result<Self> {
        let width = cnn.spec().feature_width()?;
        if temporal.lstm.input_width() != width {
            return Err(crate::error::shape_err(
                "video",
                format!(
                    "CNN features are {width} wide, LSTM expects {}",
                    temporal.lstm.input_width()
                ),
            ));
        }
        Ok(Self {
            branch: VideoBranch {
                cnn,
                lstm: temporal.lstm,
            },
            head: temporal.head,
        })
    }

    pub fn temporal(&self) -> TemporalHead {
        TemporalHead {
            lstm: self.branch.lstm.clone(),
            head: self.head.clone(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_width()
    }

    pub fn logits(&self, frames: &[Tensor]) -> Result<Tensor> {
        let t = self.branch.forward(frames)?;
        self.head.forward(t.final_hidden())
    }

    pub fn loss_and_grads(
        &self,
        frames: &[Tensor],
        label: usize,
    ) -> Result<(f64, Gradients, Tensor)> {
        let t = self.branch.forward(frames)?;
        let logits = self.head.forward(t.final_hidden())?;
        let (loss, probs) = softmax_cross_entropy(&logits, label)?;
        let hg = self.head.backward(
            t.final_hidden(),
            &softmax_cross_entropy_grad(&probs, label),
            true,
        )?;
        let dm = hg.input.clone().unwrap();
        let mut grads = self.branch.backward(&t, &dm)?;
        grads.extend(Linear::grads_named("head", hg));
        Ok((loss, grads, probs))
    }
}

impl Model for VideoModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.branch.push_named("", &mut out);
        self.head.push_named("head", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.branch.push_named_mut("", &mut out);
        self.head.push_named_mut("head", &mut out);
        out
    }

    fn trainable_param_names(&self) -> Vec<String> {
        let mut names = self.branch.trainable();
        names.extend(["head.weight".to_string(), "head.bias".to_string()]);
        names
    }
}

/// Per-frame features → LSTM → classifier on the final hidden state.
pub fn cnn_lstm_forward(
    frames: &[Tensor],
    cnn: &Network,
    lstm: &LstmWeights,
    head: &Linear,
) -> Result<Tensor> {
    let branch = VideoBranch {
        cnn: cnn.clone(),
        lstm: lstm.clone(),
    };
    let t = branch.forward(frames)?;
    head.forward(t.final_hidden())
}

/// RGB and depth video branches fused on their final hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdVideoModel {
    pub rgb: VideoBranch,
    pub depth: VideoBranch,
    pub fusion: FusionHead,
}

pub struct RgbdVideoTrace {
    rgb: BranchTrace,
    depth: BranchTrace,
    fusion: FusionTrace,
}

impl RgbdVideoModel {
    /// Takes the branches of two single-modality models and attaches a fresh fusion head.
    pub fn from_branches(
        rgb: VideoModel,
        depth: VideoModel,
        hidden_width: usize,
        seed: u64,
    ) -> Result<Self> {
        if rgb.num_classes() != depth.num_classes() {
            return Err(Error::Taxonomy(
                "branches disagree on the number of classes".into(),
            ));
        }
        let spec = FusionSpec {
            rgb_width: rgb.branch.lstm.hidden(),
            depth_width: depth.branch.lstm.hidden(),
            hidden_width,
            num_classes: rgb.num_classes(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            rgb: rgb.branch,
            depth: depth.branch,
            fusion: FusionHead::new(spec, &mut rng)?,
        })
    }

    pub fn forward(&self, rgb: &[Tensor], depth: &[Tensor]) -> Result<RgbdVideoTrace> {
        let r = self.rgb.forward(rgb)?;
        let d = self.depth.forward(depth)?;
        let fusion = self.fusion.forward(r.final_hidden(), d.final_hidden())?;
        Ok(RgbdVideoTrace {
            rgb: r,
            depth: d,
            fusion,
        })
    }

    pub fn logits(&self, rgb: &[Tensor], depth: &[Tensor]) -> Result<Tensor> {
        Ok(self.forward(rgb, depth)?.fusion.logits)
    }

    pub fn loss_and_grads(
        &self,
        rgb: &[Tensor],
        depth: &[Tensor],
        label: usize,
    ) -> Result<(f64, Gradients, Tensor)> {
        let t = self.forward(rgb, depth)?;
        let (loss, probs) = softmax_cross_entropy(&t.fusion.logits, label)?;
        let fg = self
            .fusion
            .backward(&t.fusion, &softmax_cross_entropy_grad(&probs, label))?;
        let mut grads = prefixed(self.rgb.backward(&t.rgb, &fg.rgb)?, "rgb/");
        grads.extend(prefixed(
            self.depth.backward(&t.depth, &fg.depth)?,
            "depth/",
        ));
        grads.extend(prefixed(fg.params, "fusion."));
        Ok((loss, grads, probs))
    }
}

impl Model for RgbdVideoModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.rgb.push_named("rgb/", &mut out);
        self.depth.push_named("depth/", &mut out);
        self.fusion.push_named("fusion.", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.rgb.push_named_mut("rgb/", &mut out);
        self.depth.push_named_mut("depth/", &mut out);
        self.fusion.push_named_mut("fusion.", &mut out);
        out
    }

    fn trainable_param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .rgb
            .trainable()
            .into_iter()
            .map(|n| format!("rgb/{n}"))
            .collect();
        names.extend(
            self.depth
                .trainable()
                .into_iter()
                .map(|n| format!("depth/{n}")),
        );
        names.extend(
            ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"].map(|n| format!("fusion.{n}")),
        );
        names
    }
}
