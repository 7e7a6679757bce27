use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::{param_layer, Linear, Model, Network};
use crate::tensor::ops::{relu, relu_backward, softmax_cross_entropy, softmax_cross_entropy_grad};
use crate::tensor::{accumulate, prefixed, Gradients, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub rgb_width: usize,
    pub depth_width: usize,
    pub hidden_width: usize,
    pub num_classes: usize,
}

impl FusionSpec {
    pub fn input_width(&self) -> usize {
        self.rgb_width + self.depth_width
    }
}

/// Two fully connected layers over the concatenation `[rgb, depth]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    pub spec: FusionSpec,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct FusionTrace {
    concat: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    pub logits: Tensor,
}

pub struct FusionGrads {
    pub params: Gradients,
    pub rgb: Tensor,
    pub depth: Tensor,
}

impl FusionHead {
    pub fn new(spec: FusionSpec, rng: &mut impl rand::Rng) -> Result<Self> {
        if spec.rgb_width == 0
            || spec.depth_width == 0
            || spec.hidden_width == 0
            || spec.num_classes < 2
        {
            return Err(Error::InvalidArgument(format!(
                "degenerate fusion spec {spec:?}"
            )));
        }
        Ok(Self {
            spec,
            fc1: Linear::glorot(spec.hidden_width, spec.input_width(), rng),
            fc2: Linear::glorot(spec.num_classes, spec.hidden_width, rng),
        })
    }

    pub fn from_layers(spec: FusionSpec, fc1: Linear, fc2: Linear) -> Result<Self> {
        if fc1.in_width() != spec.input_width()
            || fc1.out_width() != spec.hidden_width
            || fc2.in_width() != spec.hidden_width
            || fc2.out_width() != spec.num_classes
        {
            return Err(shape_err("fusion", format!("layers do not match {spec:?}")));
        }
        Ok(Self { spec, fc1, fc2 })
    }

    pub fn forward(&self, rgb: &Tensor, depth: &Tensor) -> Result<FusionTrace> {
        if rgb.len() != self.spec.rgb_width || depth.len() != self.spec.depth_width {
            return Err(shape_err(
                "fusion",
                format!(
                    "features {}+{} vs expected {}+{}",
                    rgb.len(),
                    depth.len(),
                    self.spec.rgb_width,
                    self.spec.depth_width
                ),
            ));
        }
        let mut cat = Vec::with_capacity(self.spec.input_width());
        cat.extend_from_slice(rgb.data());
        cat.extend_from_slice(depth.data());
        let concat = Tensor::vector(cat);
        let hidden_pre = self.fc1.forward(&concat)?;
        let hidden = relu(&hidden_pre);
        let logits = self.fc2.forward(&hidden)?;
        Ok(FusionTrace {
            concat,
            hidden_pre,
            hidden,
            logits,
        })
    }

    /// Gradients named `fc1.*` / `fc2.*`, plus the split feature gradients.
    pub fn backward(&self, trace: &FusionTrace, grad_logits: &Tensor) -> Result<FusionGrads> {
        let g2 = self.fc2.backward(&trace.hidden, grad_logits, true)?;
        let dh = relu_backward(&trace.hidden_pre, g2.input.as_ref().unwrap())?;
        let g1 = self.fc1.backward(&trace.concat, &dh, true)?;
        let dcat = g1.input.clone().unwrap().into_data();
        let (dr, dd) = dcat.split_at(self.spec.rgb_width);
        let mut params = Linear::grads_named("fc1", g1);
        params.extend(Linear::grads_named("fc2", g2));
        Ok(FusionGrads {
            params,
            rgb: Tensor::vector(dr.to_vec()),
            depth: Tensor::vector(dd.to_vec()),
        })
    }

    pub(crate) fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.fc1.push_named(&format!("{prefix}fc1"), out);
        self.fc2.push_named(&format!("{prefix}fc2"), out);
    }

    pub(crate) fn push_named_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Tensor)>,
    ) {
        self.fc1.push_named_mut(&format!("{prefix}fc1"), out);
        self.fc2.push_named_mut(&format!("{prefix}fc2"), out);
    }
}

/// `fc2(relu(fc1([rgb, depth])))`.
pub fn fusion_forward(
    rgb_feat: &Tensor,
    depth_feat: &Tensor,
    fusion: &FusionHead,
) -> Result<Tensor> {
    Ok(fusion.forward(rgb_feat, depth_feat)?.logits)
}

/// Two image branches whose penultimate features meet in a [`FusionHead`].
/// The branches' own classifiers are carried along but never trained here.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdImageModel {
    pub rgb: Network,
    pub depth: Network,
    pub fusion: FusionHead,
}

impl RgbdImageModel {
    pub fn new(rgb: Network, depth: Network, hidden_width: usize, seed: u64) -> Result<Self> {
        let spec = FusionSpec {
            rgb_width: rgb.spec().feature_width()?,
            depth_width: depth.spec().feature_width()?,
            hidden_width,
            num_classes: rgb.spec().num_classes,
        };
        if depth.spec().num_classes != spec.num_classes {
            return Err(Error::Taxonomy(
                "branches disagree on the number of classes".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            rgb,
            depth,
            fusion: FusionHead::new(spec, &mut rng)?,
        })
    }

    pub fn logits(&self, rgb: &Tensor, depth: &Tensor) -> Result<Tensor> {
        let fr = self.rgb.features(rgb)?;
        let fd = self.depth.features(depth)?;
        fusion_forward(&fr, &fd, &self.fusion)
    }

    pub fn loss_and_grads(
        &self,
        rgb: &Tensor,
        depth: &Tensor,
        label: usize,
    ) -> Result<(f64, Gradients, Tensor)> {
        let tr = self.rgb.feature_trace(rgb)?;
        let td = self.depth.feature_trace(depth)?;
        let ft = self.fusion.forward(tr.output(), td.output())?;
        let (loss, probs) = softmax_cross_entropy(&ft.logits, label)?;
        let fg = self
            .fusion
            .backward(&ft, &softmax_cross_entropy_grad(&probs, label))?;
        let (gr, _) = self.rgb.backward(&tr, fg.rgb, false)?;
        let (gd, _) = self.depth.backward(&td, fg.depth, false)?;
        let mut grads = prefixed(gr, "rgb/");
        accumulate(&mut grads, prefixed(gd, "depth/"))?;
        accumulate(&mut grads, prefixed(fg.params, "fusion."))?;
        Ok((loss, grads, probs))
    }
}

pub(crate) fn branch_trainable(net: &Network, prefix: &str) -> Vec<String> {
    let classifier = &net.spec().layers[net.spec().classifier_index()].name;
    net.trainable_param_names()
        .into_iter()
        .filter(|n| param_layer(n) != classifier)
        .map(|n| format!("{prefix}{n}"))
        .collect()
}

impl Model for RgbdImageModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.extend(
            self.rgb
                .named_params()
                .into_iter()
                .map(|(k, v)| (format!("rgb/{k}"), v)),
        );
        out.extend(
            self.depth
                .named_params()
                .into_iter()
                .map(|(k, v)| (format!("depth/{k}"), v)),
        );
        self.fusion.push_named("fusion.", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.extend(
            self.rgb
                .named_params_mut()
                .into_iter()
                .map(|(k, v)| (format!("rgb/{k}"), v)),
        );
        out.extend(
            self.depth
                .named_params_mut()
                .into_iter()
                .map(|(k, v)| (format!("depth/{k}"), v)),
        );
        self.fusion.push_named_mut("fusion.", &mut out);
        out
    }

    fn trainable_param_names(&self) -> Vec<String> {
        let mut names = branch_trainable(&self.rgb, "rgb/");
        names.extend(branch_trainable(&self.depth, "depth/"));
        names.extend(
            ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"].map(|n| format!("fusion.{n}")),
        );
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(rgb: usize, depth: usize, hidden: usize, classes: usize, seed: u64) -> FusionHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FusionHead::new(
            FusionSpec {
                rgb_width: rgb,
                depth_width: depth,
                hidden_width: hidden,
                num_classes: classes,
            },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn first_layer_width() {
        let h = head(896, 896, 128, 10, 0);
        assert_eq!(h.fc1.weight.shape(), &[128, 1792]);
    }

    #[test]
    fn zeroed_depth_columns_reduce_to_rgb_path() {
        let mut h = head(3, 2, 4, 3, 1);
        for r in 0..4 {
            for c in 3..5 {
                h.fc1.weight.data_mut()[r * 5 + c] = 0.0;
            }
        }
        let rgb = Tensor::vector(vec![0.4, -1.0, 2.0]);
        let fused = fusion_forward(&rgb, &Tensor::zeros(vec![2]), &h).unwrap();
        let noisy = fusion_forward(&rgb, &Tensor::vector(vec![5.0, -3.0]), &h).unwrap();
        assert_eq!(fused, noisy);
        // rgb-only evaluation of the same weights
        let w_rgb: Vec<f64> = (0..4)
            .flat_map(|r| h.fc1.weight.data()[r * 5..r * 5 + 3].to_vec())
            .collect();
        let fc1 = Linear::new(Tensor::new(vec![4, 3], w_rgb).unwrap(), h.fc1.bias.clone()).unwrap();
        let expect = h.fc2.forward(&relu(&fc1.forward(&rgb).unwrap())).unwrap();
        for (a, b) in fused.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_branches_with_permuted_columns() {
        let h = head(3, 3, 4, 2, 2);
        let mut swapped = h.clone();
        for r in 0..4 {
            let row = &mut swapped.fc1.weight.data_mut()[r * 6..r * 6 + 6];
            row.rotate_left(3);
        }
        let a = Tensor::vector(vec![0.1, 0.2, -0.3]);
        let b = Tensor::vector(vec![1.5, -0.5, 0.7]);
        let l1 = fusion_forward(&a, &b, &h).unwrap();
        let l2 = fusion_forward(&b, &a, &swapped).unwrap();
        for (x, y) in l1.data().iter().zip(l2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let h = head(3, 2, 4, 3, 1);
        assert!(fusion_forward(&Tensor::zeros(vec![2]), &Tensor::zeros(vec![2]), &h).is_err());
    }
}
