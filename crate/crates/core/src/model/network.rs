use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::layers::spp::{spp_backward, spp_forward, SppSpec};
use crate::model::init::glorot_uniform;
use crate::model::spec::{LayerKind, ModelSpec};
use crate::model::Model;
use crate::tensor::ops::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool_forward, relu, relu_backward,
    scatter_max_backward, softmax, softmax_cross_entropy, softmax_cross_entropy_grad,
};
use crate::tensor::{Gradients, Tensor};

/// Subtracted from every input value before the first layer.
pub const INPUT_OFFSET: f64 = 0.5;

/// A feed-forward network instantiated from a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    params: IndexMap<String, Tensor>,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input less [`INPUT_OFFSET`], `acts[i + 1]` the output of layer `i`.
    pub acts: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("trace holds the input")
    }

    /// Output of layer `index`.
    pub fn layer_output(&self, index: usize) -> &Tensor {
        &self.acts[index + 1]
    }
}

impl Network {
    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = IndexMap::new();
        for p in spec.param_shapes()? {
            let t = if p.is_bias {
                Tensor::zeros(p.shape)
            } else {
                glorot_uniform(p.shape, p.fan_in, p.fan_out, &mut rng)
            };
            params.insert(p.name, t);
        }
        Ok(Self { spec, params })
    }

    /// Builds a network around existing parameters, checking names and shapes.
    pub fn from_params(spec: ModelSpec, mut params: IndexMap<String, Tensor>) -> Result<Self> {
        spec.validate()?;
        let mut ordered = IndexMap::new();
        for p in spec.param_shapes()? {
            let t = params
                .shift_remove(&p.name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{}`", p.name)))?;
            if t.shape() != p.shape {
                return Err(shape_err(
                    "network",
                    format!(
                        "parameter `{}` is {:?}, expected {:?}",
                        p.name,
                        t.shape(),
                        p.shape
                    ),
                ));
            }
            ordered.insert(p.name, t);
        }
        if let Some(extra) = params.keys().next() {
            return Err(Error::InvalidArgument(format!(
                "unexpected parameter `{extra}`"
            )));
        }
        Ok(Self {
            spec,
            params: ordered,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &IndexMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn set_trainable(&mut self, layer: &str, trainable: bool) -> Result<()> {
        let idx = self.layer_index(layer)?;
        self.spec.layers[idx].trainable = trainable;
        Ok(())
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.spec
            .layer_index(name)
            .ok_or_else(|| Error::UnknownLayer {
                name: name.to_string(),
                available: self.spec.layer_names().join(", "),
            })
    }

    fn weight_bias(&self, layer: &str) -> (&Tensor, &Tensor) {
        (
            &self.params[&format!("{layer}.weight")],
            &self.params[&format!("{layer}.bias")],
        )
    }

    /// Runs layers `[0, stop)`.
    pub fn forward_to(&self, input: &Tensor, stop: usize) -> Result<Trace> {
        let mut acts = Vec::with_capacity(stop + 1);
        let mut argmax = Vec::with_capacity(stop);
        let mut x0 = input.clone();
        x0.data_mut().iter_mut().for_each(|v| *v -= INPUT_OFFSET);
        acts.push(x0);
        for layer in &self.spec.layers[..stop] {
            let x = acts.last().unwrap();
            let (y, idx) = match &layer.kind {
                LayerKind::Conv { stride, pad, .. } => {
                    let (w, b) = self.weight_bias(&layer.name);
                    (conv2d_forward(x, w, b, *stride, *pad)?, None)
                }
                LayerKind::MaxPool { window, stride } => {
                    let (y, idx) = maxpool_forward(x, *window, *stride)?;
                    (y, Some(idx))
                }
                LayerKind::Relu => (relu(x), None),
                LayerKind::Spp { levels } => {
                    let (y, idx) = spp_forward(x, &SppSpec::new(levels.clone())?)?;
                    (y, Some(idx))
                }
                LayerKind::Fc { .. } => {
                    let (w, b) = self.weight_bias(&layer.name);
                    (fc_forward(x, w, b)?, None)
                }
                LayerKind::Softmax => (softmax(x), None),
            };
            acts.push(y);
            argmax.push(idx);
        }
        Ok(Trace { acts, argmax })
    }

    /// Forward pass up to (excluding) the softmax; the trace output is the logits.
    pub fn forward(&self, input: &Tensor) -> Result<Trace> {
        self.forward_to(input, self.spec.layers.len() - 1)
    }

    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input)?.acts.pop().unwrap())
    }

    pub fn predict_probs(&self, input: &Tensor) -> Result<Tensor> {
        Ok(softmax(&self.logits(input)?))
    }

    /// Penultimate representation (the classifier's input).
    pub fn features(&self, input: &Tensor) -> Result<Tensor> {
        let mut t = self.forward_to(input, self.spec.classifier_index())?;
        Ok(t.acts.pop().unwrap())
    }

    pub fn feature_trace(&self, input: &Tensor) -> Result<Trace> {
        self.forward_to(input, self.spec.classifier_index())
    }

    /// Backpropagates `grad` (with respect to `trace.output()`) through the
    /// layers that produced the trace. Returns gradients of trainable
    /// parameters and, if requested, of the input.
    pub fn backward(
        &self,
        trace: &Trace,
        grad: Tensor,
        need_input_grad: bool,
    ) -> Result<(Gradients, Option<Tensor>)> {
        let stop = trace.acts.len() - 1;
        if grad.shape() != trace.output().shape() {
            return Err(shape_err(
                "backward",
                format!(
                    "gradient {:?} vs output {:?}",
                    grad.shape(),
                    trace.output().shape()
                ),
            ));
        }
        // Below the lowest trainable layer only the input gradient can matter.
        let lowest = if need_input_grad {
            0
        } else {
            match self.spec.layers[..stop]
                .iter()
                .position(|l| l.trainable && l.kind.has_params())
            {
                Some(i) => i,
                None => return Ok((self.zero_trainable_grads(stop), None)),
            }
        };

        let mut grads = Gradients::new();
        let mut g = grad;
        for li in (lowest..stop).rev() {
            let layer = &self.spec.layers[li];
            let x = &trace.acts[li];
            let want_dx = li > lowest || need_input_grad;
            g = match &layer.kind {
                LayerKind::Conv { stride, pad, .. } => {
                    let (w, _) = self.weight_bias(&layer.name);
                    let cg = conv2d_backward(x, w, *stride, *pad, &g, want_dx)?;
                    if layer.trainable {
                        grads.insert(format!("{}.weight", layer.name), cg.weights);
                        grads.insert(format!("{}.bias", layer.name), cg.bias);
                    }
                    match cg.input {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                LayerKind::Fc { .. } => {
                    let (w, _) = self.weight_bias(&layer.name);
                    let fg = fc_backward(x, w, &g, want_dx)?;
                    if layer.trainable {
                        grads.insert(format!("{}.weight", layer.name), fg.weights);
                        grads.insert(format!("{}.bias", layer.name), fg.bias);
                    }
                    match fg.input {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                LayerKind::MaxPool { .. } => {
                    scatter_max_backward(x.shape(), trace.argmax[li].as_ref().unwrap(), &g)?
                }
                LayerKind::Spp { .. } => {
                    spp_backward(x.shape(), trace.argmax[li].as_ref().unwrap(), &g)?
                }
                LayerKind::Relu => relu_backward(x, &g)?,
                LayerKind::Softmax => {
                    return Err(Error::InvalidArgument(
                        "backward through softmax is fused with the loss".into(),
                    ))
                }
            };
        }
        let dx = if need_input_grad { Some(g) } else { None };
        // stable key order: parameter order of the model
        let mut ordered = Gradients::new();
        for name in self.trainable_param_names_below(stop) {
            let t = grads
                .shift_remove(&name)
                .unwrap_or_else(|| Tensor::zeros(self.params[&name].shape().to_vec()));
            ordered.insert(name, t);
        }
        Ok((ordered, dx))
    }

    fn zero_trainable_grads(&self, stop: usize) -> Gradients {
        self.trainable_param_names_below(stop)
            .into_iter()
            .map(|n| {
                let z = Tensor::zeros(self.params[&n].shape().to_vec());
                (n, z)
            })
            .collect()
    }

    /// Trainable parameter names of every layer; parameters of layers at or
    /// above `stop` are included with zero gradient by callers that need them.
    fn trainable_param_names_below(&self, stop: usize) -> Vec<String> {
        self.spec.layers[..stop]
            .iter()
            .filter(|l| l.trainable && l.kind.has_params())
            .flat_map(|l| [format!("{}.weight", l.name), format!("{}.bias", l.name)])
            .collect()
    }

    /// Cross-entropy loss, parameter gradients and class probabilities for one sample.
    pub fn loss_and_grads(&self, input: &Tensor, label: usize) -> Result<(f64, Gradients, Tensor)> {
        let trace = self.forward(input)?;
        let (loss, probs) = softmax_cross_entropy(trace.output(), label)?;
        let (grads, _) = self.backward(&trace, softmax_cross_entropy_grad(&probs, label), false)?;
        Ok((loss, grads, probs))
    }
}

impl Model for Network {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.clone(), v)).collect()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.params
            .iter_mut()
            .map(|(k, v)| (k.clone(), v))
            .collect()
    }

    fn trainable_param_names(&self) -> Vec<String> {
        self.trainable_param_names_below(self.spec.layers.len())
    }
}

/// Copies every convolutional layer that `src` and `dst` share by name.
/// Non-convolutional parameters of `dst` are left untouched.
pub fn transfer_conv_weights(src: &Network, dst: &mut Network) -> Result<()> {
    let shared: Vec<String> = dst
        .spec
        .conv_layer_names()
        .into_iter()
        .filter(|n| src.spec.conv_layer_names().contains(n))
        .map(str::to_string)
        .collect();
    let mut bad = Vec::new();
    for layer in &shared {
        for suffix in ["weight", "bias"] {
            let key = format!("{layer}.{suffix}");
            let (s, d) = (&src.params[&key], &dst.params[&key]);
            if s.shape() != d.shape() {
                bad.push(format!("{key}: {:?} vs {:?}", s.shape(), d.shape()));
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::Transfer(bad.join("; ")));
    }
    for layer in &shared {
        for suffix in ["weight", "bias"] {
            let key = format!("{layer}.{suffix}");
            dst.params[&key] = src.params[&key].clone();
        }
    }
    Ok(())
}
