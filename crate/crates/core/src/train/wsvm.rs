//! Class-weighted one-vs-rest linear SVM trained by SGD on the hinge loss.

use crate::error::{shape_err, Error, Result};
use crate::model::{Linear, Model};
use crate::tensor::{Gradients, Tensor};
use crate::train::optim::{fit, EpochLog, TrainingConfig};

/// `w_k = (min_i N_i / N_k)^p`.
pub fn compute_class_weights(counts: &[usize], p: f64) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Empty("class counts"));
    }
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!(
            "class {k} has no training samples"
        )));
    }
    if !p.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "exponent {p} is not finite"
        )));
    }
    let min = *counts.iter().min().unwrap() as f64;
    Ok(counts.iter().map(|&n| (min / n as f64).powf(p)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub layer: Linear,
}

impl LinearClassifier {
    pub fn zeros(classes: usize, width: usize) -> Self {
        Self {
            layer: Linear {
                weight: Tensor::zeros(vec![classes, width]),
                bias: Tensor::zeros(vec![classes]),
            },
        }
    }

    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        self.layer.forward(x)
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.scores(x)?.argmax())
    }

    /// Sum over classes of `max(0, 1 − y_k s_k)`, optionally scaled by `weight`, and its gradients.
    fn hinge(
        &self,
        x: &Tensor,
        label: usize,
        weight: Option<f64>,
    ) -> Result<(f64, Gradients, Tensor)> {
        let s = self.scores(x)?;
        let mut loss = 0.0;
        let mut ds = vec![0.0; s.len()];
        for (k, &sk) in s.data().iter().enumerate() {
            let y = if k == label { 1.0 } else { -1.0 };
            let margin = 1.0 - y * sk;
            if margin > 0.0 {
                match weight {
                    Some(w) => {
                        loss += w * margin;
                        ds[k] = -w * y;
                    }
                    None => {
                        loss += margin;
                        ds[k] = -y;
                    }
                }
            }
        }
        let g = self.layer.backward(x, &Tensor::vector(ds), false)?;
        Ok((loss, Linear::grads_named("svm", g), s))
    }
}

impl Model for LinearClassifier {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.layer.push_named("svm", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.layer.push_named_mut("svm", &mut out);
        out
    }

    fn trainable_param_names(&self) -> Vec<String> {
        vec!["svm.weight".into(), "svm.bias".into()]
    }
}

/// Trains from zero weights. Each sample's hinge term is multiplied by its
/// class weight divided by the mean class weight over the training samples,
/// so uniformly scaled weights leave the objective unchanged. L2
/// regularization comes from `cfg.weight_decay`.
pub fn train_weighted_linear(
    features: &[Tensor],
    labels: &[usize],
    class_weights: &[f64],
    cfg: &TrainingConfig,
) -> Result<(LinearClassifier, Vec<EpochLog>)> {
    check_inputs(features, labels, class_weights.len())?;
    if class_weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "class weights must be positive".into(),
        ));
    }
    let mean = labels.iter().map(|&l| class_weights[l]).sum::<f64>() / labels.len() as f64;
    let norm: Vec<f64> = class_weights.iter().map(|w| w / mean).collect();
    let mut clf = LinearClassifier::zeros(class_weights.len(), features[0].len());
    let logs = fit(
        &mut clf,
        features,
        labels,
        class_weights.len(),
        cfg,
        |m, x, y| m.hinge(x, y, Some(norm[y])),
    )?;
    Ok((clf, logs))
}

/// The same classifier without class weighting.
pub fn train_linear(
    features: &[Tensor],
    labels: &[usize],
    classes: usize,
    cfg: &TrainingConfig,
) -> Result<(LinearClassifier, Vec<EpochLog>)> {
    check_inputs(features, labels, classes)?;
    let mut clf = LinearClassifier::zeros(classes, features[0].len());
    let logs = fit(&mut clf, features, labels, classes, cfg, |m, x, y| {
        m.hinge(x, y, None)
    })?;
    Ok((clf, logs))
}

fn check_inputs(features: &[Tensor], labels: &[usize], classes: usize) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Empty("feature set"));
    }
    if features.len() != labels.len() {
        return Err(shape_err(
            "wsvm",
            format!("{} features, {} labels", features.len(), labels.len()),
        ));
    }
    let width = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != width) {
        return Err(shape_err(
            "wsvm",
            format!("feature widths {width} and {}", f.len()),
        ));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label: l, classes });
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::InvalidArgument(
            "training set contains a single class".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_formula() {
        assert_eq!(
            compute_class_weights(&[10, 40], 2.0).unwrap(),
            vec![1.0, 0.0625]
        );
        assert_eq!(
            compute_class_weights(&[7, 7, 7], 2.0).unwrap(),
            vec![1.0; 3]
        );
        assert_eq!(
            compute_class_weights(&[3, 9, 27], 0.0).unwrap(),
            vec![1.0; 3]
        );
        assert!(compute_class_weights(&[3, 0], 1.0).is_err());
    }

    fn toy() -> (Vec<Tensor>, Vec<usize>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..12 {
            let t = i as f64 / 12.0;
            xs.push(Tensor::vector(vec![1.0 + t, 0.5 - t]));
            ys.push(0);
            xs.push(Tensor::vector(vec![-1.0 - t, t - 0.2]));
            ys.push(1);
        }
        (xs, ys)
    }

    fn cfg() -> TrainingConfig {
        TrainingConfig {
            learning_rate: 0.05,
            batch_size: 4,
            epochs: 20,
            seed: 3,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn separable_toy_is_fit() {
        let (xs, ys) = toy();
        let (clf, _) = train_weighted_linear(&xs, &ys, &[1.0, 1.0], &cfg()).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(clf.predict(x).unwrap(), y);
        }
    }

    #[test]
    fn unit_weights_match_unweighted_bitwise() {
        let (xs, ys) = toy();
        let (a, la) = train_weighted_linear(&xs, &ys, &[1.0, 1.0], &cfg()).unwrap();
        let (b, lb) = train_linear(&xs, &ys, 2, &cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn single_class_is_rejected() {
        let xs = vec![Tensor::vector(vec![1.0]); 3];
        assert!(train_weighted_linear(&xs, &[0, 0, 0], &[1.0, 1.0], &cfg()).is_err());
    }
}
