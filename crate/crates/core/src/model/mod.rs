//! Network construction: declarative specs, the instantiated feed-forward
//! network, the RGB-D fusion head and the CNN + LSTM video models.

pub mod fusion;
pub mod init;
pub mod network;
pub mod spec;
pub mod video;

use crate::error::{shape_err, Result};
use crate::tensor::ops::{fc_backward, fc_forward, FcGrads};
use crate::tensor::{Gradients, Tensor};

pub use fusion::{fusion_forward, FusionHead, FusionSpec, RgbdImageModel};
pub use network::{transfer_conv_weights, Network, Trace, INPUT_OFFSET};
pub use spec::{build_dcnn, build_wsp_cnn, FineTuneRegime, LayerKind, LayerSpec, ModelSpec};
pub use video::{cnn_lstm_forward, RgbdVideoModel, TemporalHead, VideoBranch, VideoModel};

/// Anything with named parameters that the optimizer and checkpoints can see.
pub trait Model {
    /// Every parameter, in a stable order.
    fn named_params(&self) -> Vec<(String, &Tensor)>;

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    /// Names of parameters that receive gradients.
    fn trainable_param_names(&self) -> Vec<String>;
}

/// Layer name a parameter belongs to: everything before the last `.`.
pub fn param_layer(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(layer, _)| layer)
}

/// A standalone fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        match (weight.shape(), bias.shape()) {
            ([m, _], [b]) if m == b => Ok(Self { weight, bias }),
            (w, b) => Err(shape_err("linear", format!("weight {w:?} with bias {b:?}"))),
        }
    }

    pub fn glorot(out: usize, inp: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            weight: init::glorot_uniform(vec![out, inp], inp, out, rng),
            bias: Tensor::zeros(vec![out]),
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_width(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        fc_forward(x, &self.weight, &self.bias)
    }

    pub fn backward(&self, x: &Tensor, grad: &Tensor, need_input_grad: bool) -> Result<FcGrads> {
        fc_backward(x, &self.weight, grad, need_input_grad)
    }

    pub(crate) fn grads_named(prefix: &str, g: FcGrads) -> Gradients {
        let mut out = Gradients::new();
        out.insert(format!("{prefix}.weight"), g.weights);
        out.insert(format!("{prefix}.bias"), g.bias);
        out
    }

    pub(crate) fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn push_named_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Tensor)>,
    ) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}
