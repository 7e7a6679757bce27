//! Per-filter activation rates of a convolutional layer.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{LayerKind, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProfile {
    pub layer: String,
    pub dataset: String,
    /// Fraction of (input, site) pairs with a strictly positive response, per filter.
    pub rates: Vec<f64>,
    pub samples: usize,
}

impl ActivationProfile {
    /// `(filter, rate)` pairs sorted by decreasing rate, ties by filter index.
    pub fn sorted(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self.rates.iter().copied().enumerate().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn gini(&self) -> f64 {
        gini(&self.rates)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "# layer {} dataset {} samples {}\nrank\tfilter\trate\n",
            self.layer, self.dataset, self.samples
        );
        for (rank, (f, r)) in self.sorted().into_iter().enumerate() {
            let _ = writeln!(out, "{rank}\t{f}\t{r:.6}");
        }
        out
    }
}

/// Gini coefficient of non-negative values; 0 for a flat distribution.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total <= 0.0 {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let weighted: f64 = v
        .iter()
        .enumerate()
        .map(|(i, x)| (2 * (i + 1)) as f64 * x)
        .sum();
    weighted / (n as f64 * total) - (n as f64 + 1.0) / n as f64
}

/// Rates of the conv layer `layer`, measured after the following relu.
pub fn activation_rate(
    model: &Network,
    layer: &str,
    dataset: &str,
    inputs: &[Tensor],
) -> Result<ActivationProfile> {
    let idx = model.layer_index(layer)?;
    let spec = model.spec();
    let LayerKind::Conv { channels, .. } = spec.layers[idx].kind else {
        return Err(Error::InvalidArgument(format!(
            "layer `{layer}` is not convolutional"
        )));
    };
    if !matches!(
        spec.layers.get(idx + 1).map(|l| &l.kind),
        Some(LayerKind::Relu)
    ) {
        return Err(Error::InvalidArgument(format!(
            "layer `{layer}` is not followed by a relu"
        )));
    }
    if inputs.is_empty() {
        return Err(Error::Empty("probe inputs"));
    }
    let mut positive = vec![0u64; channels];
    let mut sites = 0u64;
    for x in inputs {
        let trace = model.forward_to(x, idx + 2)?;
        let act = trace.layer_output(idx + 1);
        let per = act.len() / channels;
        sites += per as u64;
        for (c, chunk) in act.data().chunks_exact(per).enumerate() {
            positive[c] += chunk.iter().filter(|&&v| v > 0.0).count() as u64;
        }
    }
    Ok(ActivationProfile {
        layer: layer.to_string(),
        dataset: dataset.to_string(),
        rates: positive.iter().map(|&p| p as f64 / sites as f64).collect(),
        samples: inputs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_dcnn;

    fn net() -> Network {
        Network::new(build_dcnn([3, 15, 15], 2, 0.125).unwrap(), 1).unwrap()
    }

    #[test]
    fn forced_rates() {
        let mut n = net();
        let w = n.param_mut("conv1.weight").unwrap();
        w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let b = n.param_mut("conv1.bias").unwrap();
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = if i % 2 == 0 { 5.0 } else { -5.0 };
        }
        let p = activation_rate(&n, "conv1", "x", &[Tensor::full(vec![3, 15, 15], 0.5)]).unwrap();
        for (i, r) in p.rates.iter().enumerate() {
            assert_eq!(*r, if i % 2 == 0 { 1.0 } else { 0.0 });
        }
        assert_eq!(p.rates.len(), 12);
        let s = p.sorted();
        assert!(s.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn gini_extremes() {
        assert!(gini(&[0.3; 8]).abs() < 1e-12);
        assert!((gini(&[0.0, 0.0, 0.0, 1.0]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_conv() {
        assert!(
            activation_rate(&net(), "relu1", "x", &[Tensor::full(vec![3, 15, 15], 0.5)]).is_err()
        );
        assert!(matches!(
            activation_rate(&net(), "conv9", "x", &[]),
            Err(Error::UnknownLayer { .. })
        ));
    }
}
