//! Frozen feature source.
//!
//! [`SyntheticEncoder`] is a seeded stack of random affine + `tanh` layers;
//! every layer output is average-pooled down to a fixed-width tap vector.
//! It is never trained. Precomputed features produced elsewhere come in
//! through the EARF reader in [`earf`].

pub mod earf;
pub mod scenario;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EarError, Result};
use crate::rng;

pub use earf::{load_feature_file, write_feature_file, FeatureManifest};
pub use scenario::{make_synthetic_scenario, GroundTruth, Scenario, ScenarioConfig, StreamEvent};

/// Pooled features at every tap point, indexed by tap id `0..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapFeatures {
    taps: Vec<Vec<f32>>,
}

impl TapFeatures {
    pub fn new(taps: Vec<Vec<f32>>) -> Result<Self> {
        for (t, v) in taps.iter().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EarError::NonFinite(format!("tap {t}")));
            }
        }
        Ok(Self { taps })
    }

    pub fn tap(&self, tap_id: usize) -> Result<&[f32]> {
        self.taps
            .get(tap_id)
            .map(Vec::as_slice)
            .ok_or_else(|| EarError::Argument(format!("tap {tap_id} does not exist")))
    }

    pub fn tap_count(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[Vec<f32>] {
        &self.taps
    }

    pub fn tap_dims(&self) -> Vec<usize> {
        self.taps.iter().map(Vec::len).collect()
    }
}

/// Parallel arrays of samples, labels and domain ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDataset {
    samples: Vec<TapFeatures>,
    labels: Vec<u32>,
    domain_ids: Vec<u32>,
    tap_dims: Vec<usize>,
    num_classes: u32,
}

impl FeatureDataset {
    pub fn new(
        samples: Vec<TapFeatures>,
        labels: Vec<u32>,
        domain_ids: Vec<u32>,
        tap_dims: Vec<usize>,
        num_classes: u32,
    ) -> Result<Self> {
        if labels.len() != samples.len() {
            return Err(EarError::dim(samples.len(), labels.len()));
        }
        if domain_ids.len() != samples.len() {
            return Err(EarError::dim(samples.len(), domain_ids.len()));
        }
        for s in &samples {
            if s.tap_dims() != tap_dims {
                return Err(EarError::Argument(format!(
                    "sample tap dims {:?} differ from dataset tap dims {tap_dims:?}",
                    s.tap_dims()
                )));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(EarError::Argument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            samples,
            labels,
            domain_ids,
            tap_dims,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TapFeatures] {
        &self.samples
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn domain_ids(&self) -> &[u32] {
        &self.domain_ids
    }

    pub fn tap_dims(&self) -> &[usize] {
        &self.tap_dims
    }

    pub fn tap_count(&self) -> usize {
        self.tap_dims.len()
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    /// Sorted distinct labels present in the data.
    pub fn present_classes(&self) -> Vec<u32> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            domain_ids: indices.iter().map(|&i| self.domain_ids[i]).collect(),
            tap_dims: self.tap_dims.clone(),
            num_classes: self.num_classes,
        }
    }

    /// Concatenates datasets with identical tap layouts.
    pub fn concat(parts: &[&FeatureDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| EarError::Argument("nothing to concatenate".into()))?;
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        let mut domain_ids = Vec::new();
        let mut num_classes = 0;
        for p in parts {
            if p.tap_dims != first.tap_dims {
                return Err(EarError::Argument("tap layouts differ".into()));
            }
            samples.extend(p.samples.iter().cloned());
            labels.extend_from_slice(&p.labels);
            domain_ids.extend_from_slice(&p.domain_ids);
            num_classes = num_classes.max(p.num_classes);
        }
        Self::new(samples, labels, domain_ids, first.tap_dims.clone(), num_classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    /// Width of each hidden layer; one tap per layer.
    pub layer_widths: Vec<usize>,
    /// Pooled output width per tap; must not exceed the layer width.
    pub tap_dims: Vec<usize>,
    /// Weights are drawn from `N(0, gain^2 / fan_in)`.
    pub weight_gain: f64,
    /// Biases are drawn from `N(0, bias_scale^2)`; zero gives a bias-free stack.
    pub bias_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            layer_widths: vec![48; 7],
            tap_dims: vec![24; 7],
            weight_gain: 1.2,
            bias_scale: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(EarError::Config("encoder input_dim must be positive".into()));
        }
        if self.layer_widths.is_empty() || self.layer_widths.len() != self.tap_dims.len() {
            return Err(EarError::Config(
                "encoder needs one tap dim per layer and at least one layer".into(),
            ));
        }
        for (w, p) in self.layer_widths.iter().zip(&self.tap_dims) {
            if *p == 0 || p > w {
                return Err(EarError::Config(format!(
                    "tap dim {p} must be in [1, layer width {w}]"
                )));
            }
        }
        if !(self.weight_gain.is_finite() && self.weight_gain > 0.0)
            || !(self.bias_scale.is_finite() && self.bias_scale >= 0.0)
        {
            return Err(EarError::Config("encoder gains must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct FrozenLayer {
    inputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl FrozenLayer {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                (b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect()
    }
}

/// Seeded, frozen multi-tap feature extractor.
#[derive(Debug, Clone)]
pub struct SyntheticEncoder {
    config: EncoderConfig,
    seed: u64,
    layers: Vec<FrozenLayer>,
    /// Per-tap `(mean, std)` of pooled outputs over a fixed reference batch,
    /// applied like inference-mode batch norm.
    norms: Vec<Vec<(f64, f64)>>,
}

const REFERENCE_BATCH: usize = 512;

impl SyntheticEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derived(seed, &[0xE2C0]);
        let mut layers = Vec::with_capacity(config.layer_widths.len());
        let mut inputs = config.input_dim;
        for &width in &config.layer_widths {
            let scale = config.weight_gain / (inputs as f64).sqrt();
            let weights = (0..width * inputs)
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            let bias = (0..width)
                .map(|_| config.bias_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            layers.push(FrozenLayer {
                inputs,
                weights,
                bias,
            });
            inputs = width;
        }
        let mut enc = Self {
            norms: config.tap_dims.iter().map(|&p| vec![(0.0, 1.0); p]).collect(),
            config,
            seed,
            layers,
        };
        let mut rng = rng::derived(seed, &[0xE2C1]);
        let mut sums: Vec<Vec<(f64, f64)>> = enc.norms.iter().map(|t| vec![(0.0, 0.0); t.len()]).collect();
        for _ in 0..REFERENCE_BATCH {
            let raw: Vec<f64> = (0..enc.config.input_dim)
                .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            for (acc, tap) in sums.iter_mut().zip(enc.pooled(&raw)) {
                for (a, v) in acc.iter_mut().zip(tap) {
                    a.0 += v;
                    a.1 += v * v;
                }
            }
        }
        let n = REFERENCE_BATCH as f64;
        enc.norms = sums
            .into_iter()
            .map(|tap| {
                tap.into_iter()
                    .map(|(s, sq)| {
                        let mean = s / n;
                        let var = (sq / n - mean * mean).max(0.0);
                        (mean, var.sqrt().max(1e-6))
                    })
                    .collect()
            })
            .collect();
        Ok(enc)
    }

    fn pooled(&self, raw: &[f64]) -> Vec<Vec<f64>> {
        let mut h = raw.to_vec();
        let mut taps = Vec::with_capacity(self.layers.len());
        for (layer, &pooled) in self.layers.iter().zip(&self.config.tap_dims) {
            h = layer.apply(&h);
            taps.push(average_pool(&h, pooled));
        }
        taps
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tap_count(&self) -> usize {
        self.layers.len()
    }

    pub fn tap_dims(&self) -> &[usize] {
        &self.config.tap_dims
    }

    pub fn encode(&self, raw: &[f64]) -> Result<TapFeatures> {
        if raw.len() != self.config.input_dim {
            return Err(EarError::dim(self.config.input_dim, raw.len()));
        }
        let taps = self
            .pooled(raw)
            .into_iter()
            .zip(&self.norms)
            .map(|(tap, norm)| {
                tap.iter()
                    .zip(norm)
                    .map(|(v, (m, s))| ((v - m) / s) as f32)
                    .collect()
            })
            .collect();
        TapFeatures::new(taps)
    }
}

/// Unit `u` of a width-`w` layer lands in bin `u * out / w`.
fn average_pool(h: &[f64], out: usize) -> Vec<f64> {
    let mut sums = vec![0.0f64; out];
    let mut counts = vec![0usize; out];
    for (u, &v) in h.iter().enumerate() {
        let bin = u * out / h.len();
        sums[bin] += v;
        counts[bin] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_roughly_standardized() {
        let enc = SyntheticEncoder::new(EncoderConfig::default(), 9).unwrap();
        let mut r = rng::seeded(4);
        let n = 2000;
        let mut sums = vec![(0.0f64, 0.0f64); 7 * 24];
        for _ in 0..n {
            let raw: Vec<f64> = (0..16)
                .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut r))
                .collect();
            let f = enc.encode(&raw).unwrap();
            for (acc, &v) in sums.iter_mut().zip(f.taps().iter().flatten()) {
                acc.0 += v as f64;
                acc.1 += (v as f64).powi(2);
            }
        }
        for (s, sq) in sums {
            let mean = s / n as f64;
            let var = sq / n as f64 - mean * mean;
            assert!(mean.abs() < 0.2, "{mean}");
            assert!((var - 1.0).abs() < 0.25, "{var}");
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let a = SyntheticEncoder::new(EncoderConfig::default(), 4).unwrap();
        let b = SyntheticEncoder::new(EncoderConfig::default(), 4).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(a.encode(&x).unwrap(), b.encode(&x).unwrap());
        assert_eq!(a.encode(&x).unwrap(), a.encode(&x).unwrap());
    }

    #[test]
    fn single_coordinate_change_moves_every_tap() {
        let enc = SyntheticEncoder::new(EncoderConfig::default(), 5).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.71).cos()).collect();
        let mut y = x.clone();
        y[3] += 0.5;
        let fx = enc.encode(&x).unwrap();
        let fy = enc.encode(&y).unwrap();
        for t in 0..fx.tap_count() {
            assert_ne!(fx.tap(t).unwrap(), fy.tap(t).unwrap(), "tap {t}");
        }
    }

    #[test]
    fn encode_rejects_wrong_input_dim() {
        let enc = SyntheticEncoder::new(EncoderConfig::default(), 5).unwrap();
        assert!(matches!(
            enc.encode(&[0.0; 3]),
            Err(EarError::Dimension { expected: 16, actual: 3 })
        ));
    }

    #[test]
    fn pooling_averages_contiguous_bins() {
        let pooled = average_pool(&[1.0, 3.0, 5.0, 7.0, 9.0, 11.0], 3);
        assert_eq!(pooled, vec![2.0, 6.0, 10.0]);
    }

    #[test]
    fn tap_features_reject_non_finite() {
        assert!(TapFeatures::new(vec![vec![1.0, f32::NAN]]).is_err());
    }
}
