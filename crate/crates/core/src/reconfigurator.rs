//! Per-domain head: bundles adaptor hypervectors, keeps class prototypes,
//! classifies by nearest prototype and turns the nearest-prototype distance
//! into a calibrated OOD probability through a fitted Weibull CDF.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adaptor::{local_labels, Adaptor};
use crate::encoder::{FeatureDataset, TapFeatures};
use crate::error::{EarError, Result};
use crate::hdc::{self, BinarizeMode, Hypervector, TargetCodebook};
use crate::rng;

/// Offset below the smallest calibration distance used as the location.
pub const LOCATION_EPSILON: f64 = 1e-6;
pub const MIN_CALIBRATION_SAMPLES: usize = 20;
const MAX_NEWTON_ITERS: usize = 200;

/// Three-parameter Weibull: scale `a`, shape `b`, location `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub scale: f64,
    pub shape: f64,
    pub location: f64,
}

impl WeibullParams {
    pub fn new(scale: f64, shape: f64, location: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0)
            || !(shape.is_finite() && shape > 0.0)
            || !(location.is_finite() && location >= 0.0)
        {
            return Err(EarError::Argument(format!(
                "invalid Weibull parameters a={scale} b={shape} c={location}"
            )));
        }
        Ok(Self {
            scale,
            shape,
            location,
        })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= self.location {
            return 0.0;
        }
        let z = (x - self.location) / self.scale;
        self.shape / self.scale * z.powf(self.shape - 1.0) * (-z.powf(self.shape)).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.location {
            return 0.0;
        }
        let z = (x - self.location) / self.scale;
        -(-z.powf(self.shape)).exp_m1()
    }

    pub fn median(&self) -> f64 {
        self.location + self.scale * std::f64::consts::LN_2.powf(1.0 / self.shape)
    }

    /// Sum of log densities; `-inf` if any point sits at or below the location.
    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        data.iter()
            .map(|&x| {
                if x <= self.location {
                    return f64::NEG_INFINITY;
                }
                let z = (x - self.location) / self.scale;
                (self.shape / self.scale).ln() + (self.shape - 1.0) * z.ln() - z.powf(self.shape)
            })
            .sum()
    }
}

/// Maximum-likelihood Weibull fit with the location pinned just below the
/// smallest observation: `c = max(0, min(d) - 1e-6)`. The shape solves
///
/// ```text
/// 1/b + mean(ln x) - Σ x^b ln x / Σ x^b = 0,   x = d - c
/// ```
///
/// by safeguarded Newton iterations and the scale follows in closed form as
/// `a = (mean x^b)^(1/b)`. Observations at the location are floored to
/// `1e-6` above it.
pub fn fit_weibull(distances: &[f64]) -> Result<WeibullParams> {
    if distances.len() < MIN_CALIBRATION_SAMPLES {
        return Err(EarError::Calibration(format!(
            "need at least {MIN_CALIBRATION_SAMPLES} distances, got {}",
            distances.len()
        )));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(EarError::Calibration("distances must be finite and non-negative".into()));
    }
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let max = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(EarError::Calibration(format!(
            "all {} distances equal {min}",
            distances.len()
        )));
    }
    let location = (min - LOCATION_EPSILON).max(0.0);
    let shifted: Vec<f64> = distances
        .iter()
        .map(|&d| (d - location).max(LOCATION_EPSILON))
        .collect();

    // Work in units of the sample mean so x^b stays representable.
    let n = shifted.len() as f64;
    let unit = shifted.iter().sum::<f64>() / n;
    let x: Vec<f64> = shifted.iter().map(|v| v / unit).collect();
    let ln_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let mean_ln = ln_x.iter().sum::<f64>() / n;

    let moments = |b: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (&xi, &li) in x.iter().zip(&ln_x) {
            let p = xi.powf(b);
            s0 += p;
            s1 += p * li;
            s2 += p * li * li;
        }
        (s0, s1, s2)
    };

    let mut b = 1.0;
    let mut converged = false;
    for _ in 0..MAX_NEWTON_ITERS {
        let (s0, s1, s2) = moments(b);
        let f = 1.0 / b + mean_ln - s1 / s0;
        let df = -1.0 / (b * b) - (s2 * s0 - s1 * s1) / (s0 * s0);
        if !(f.is_finite() && df.is_finite()) || df == 0.0 {
            return Err(EarError::Numeric("Weibull shape equation is not finite".into()));
        }
        let mut next = b - f / df;
        // f is decreasing in b, so the root lies on the side f points to.
        if next <= 0.0 {
            next = b / 2.0;
        }
        if (next - b).abs() <= 1e-12 * b.max(1.0) {
            b = next;
            converged = true;
            break;
        }
        b = next;
    }
    if !converged {
        return Err(EarError::Numeric(format!(
            "Weibull shape did not converge in {MAX_NEWTON_ITERS} iterations"
        )));
    }
    let (s0, _, _) = moments(b);
    let scale = unit * (s0 / n).powf(1.0 / b);
    WeibullParams::new(scale, b, location)
        .map_err(|e| EarError::Numeric(format!("fit produced {e}")))
}

/// Majority bundle of per-adaptor vectors; the identity for one adaptor.
pub fn aggregate(vectors: &[Hypervector]) -> Result<Hypervector> {
    hdc::bundle(vectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// Global class label.
    pub label: u32,
    /// Index into the model's class list.
    pub class_index: usize,
    /// Raw Hamming distance to the winning prototype.
    pub distance: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub classification: Classification,
    pub ood_score: f64,
    pub is_ood: bool,
}

/// One learned domain: adaptor set plus reconfigurator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainModel {
    domain_id: u32,
    adaptors: Vec<Adaptor>,
    codebook: TargetCodebook,
    classes: Vec<u32>,
    prototypes: Vec<Hypervector>,
    weibull: Option<WeibullParams>,
    tau_pi: f64,
    binarize: BinarizeMode,
}

impl DomainModel {
    /// An uncalibrated model without prototypes. `classes` must be sorted
    /// and distinct; adaptor `j` uses codebook slot `j`.
    pub fn new(
        domain_id: u32,
        adaptors: Vec<Adaptor>,
        codebook: TargetCodebook,
        classes: Vec<u32>,
        tau_pi: f64,
    ) -> Result<Self> {
        if adaptors.is_empty() {
            return Err(EarError::Argument("a domain model needs at least one adaptor".into()));
        }
        if !classes.windows(2).all(|w| w[0] < w[1]) || classes.is_empty() {
            return Err(EarError::Argument("class list must be sorted, distinct, non-empty".into()));
        }
        if adaptors.len() > codebook.num_adaptors() || classes.len() > codebook.num_classes() {
            return Err(EarError::Argument("codebook does not cover the adaptor set".into()));
        }
        if let Some(a) = adaptors.iter().find(|a| a.params.output_dim() != codebook.dim()) {
            return Err(EarError::dim(codebook.dim(), a.params.output_dim()));
        }
        if !(tau_pi > 0.0 && tau_pi < 1.0) {
            return Err(EarError::Argument(format!("tau_pi {tau_pi} must be in (0, 1)")));
        }
        Ok(Self {
            domain_id,
            adaptors,
            codebook,
            classes,
            prototypes: Vec::new(),
            weibull: None,
            tau_pi,
            binarize: BinarizeMode::Sample,
        })
    }

    /// Restores a fully built model, e.g. from an EARM container.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        domain_id: u32,
        adaptors: Vec<Adaptor>,
        codebook: TargetCodebook,
        classes: Vec<u32>,
        prototypes: Vec<Hypervector>,
        weibull: Option<WeibullParams>,
        tau_pi: f64,
        binarize: BinarizeMode,
    ) -> Result<Self> {
        let mut m = Self::new(domain_id, adaptors, codebook, classes, tau_pi)?;
        if !prototypes.is_empty() {
            if prototypes.len() != m.classes.len() {
                return Err(EarError::dim(m.classes.len(), prototypes.len()));
            }
            if let Some(p) = prototypes.iter().find(|p| p.dim() != m.dim()) {
                return Err(EarError::dim(m.dim(), p.dim()));
            }
        }
        m.prototypes = prototypes;
        m.weibull = weibull;
        m.binarize = binarize;
        Ok(m)
    }

    pub fn domain_id(&self) -> u32 {
        self.domain_id
    }

    pub fn adaptors(&self) -> &[Adaptor] {
        &self.adaptors
    }

    pub fn codebook(&self) -> &TargetCodebook {
        &self.codebook
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn prototypes(&self) -> &[Hypervector] {
        &self.prototypes
    }

    pub fn weibull(&self) -> Option<WeibullParams> {
        self.weibull
    }

    pub fn tau_pi(&self) -> f64 {
        self.tau_pi
    }

    pub fn binarize_mode(&self) -> BinarizeMode {
        self.binarize
    }

    pub fn set_binarize_mode(&mut self, mode: BinarizeMode) {
        self.binarize = mode;
    }

    pub fn set_tau_pi(&mut self, tau_pi: f64) -> Result<()> {
        if !(tau_pi > 0.0 && tau_pi < 1.0) {
            return Err(EarError::Argument(format!("tau_pi {tau_pi} must be in (0, 1)")));
        }
        self.tau_pi = tau_pi;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.codebook.dim()
    }

    pub fn num_params(&self) -> usize {
        self.adaptors.iter().map(|a| a.params.num_params()).sum()
    }

    pub fn is_calibrated(&self) -> bool {
        self.weibull.is_some() && !self.prototypes.is_empty()
    }

    /// `h_agg(x)`: every adaptor's probabilities binarized, then bundled.
    pub fn encode<R: Rng + ?Sized>(&self, taps: &TapFeatures, rng: &mut R) -> Result<Hypervector> {
        let per_adaptor = self
            .adaptors
            .iter()
            .map(|a| hdc::binarize(&a.forward(taps)?, self.binarize, rng))
            .collect::<Result<Vec<_>>>()?;
        aggregate(&per_adaptor)
    }

    fn encode_all(&self, data: &FeatureDataset, seed: u64) -> Result<Vec<Hypervector>> {
        let mut r = rng::seeded(seed);
        data.samples().iter().map(|s| self.encode(s, &mut r)).collect()
    }

    /// Bundles the aggregated vectors of every training sample per class.
    pub fn build_prototypes(&mut self, data: &FeatureDataset, seed: u64) -> Result<()> {
        let local = local_labels(data, &self.classes)?;
        let encoded = self.encode_all(data, seed)?;
        let mut per_class: Vec<Vec<&Hypervector>> = vec![Vec::new(); self.classes.len()];
        for (h, &c) in encoded.iter().zip(&local) {
            per_class[c].push(h);
        }
        let mut prototypes = Vec::with_capacity(self.classes.len());
        for (c, members) in per_class.iter().enumerate() {
            if members.is_empty() {
                return Err(EarError::Argument(format!(
                    "class {} has no training samples",
                    self.classes[c]
                )));
            }
            prototypes.push(hdc::bundle(members.iter().copied())?);
        }
        self.prototypes = prototypes;
        Ok(())
    }

    /// Builds prototypes then calibrates on `data` in the current
    /// binarization mode, using independent streams derived from `seed`.
    pub fn fit(mut self, data: &FeatureDataset, seed: u64) -> Result<Self> {
        self.build_prototypes(data, rng::derive_seed(seed, &[0x9807]))?;
        self.calibrate(data, rng::derive_seed(seed, &[0xCA11]))?;
        Ok(self)
    }

    /// Nearest prototype by Hamming distance; ties go to the lowest class index.
    pub fn classify(&self, h_agg: &Hypervector) -> Result<Classification> {
        if self.prototypes.is_empty() {
            return Err(EarError::State("model has no prototypes".into()));
        }
        let mut best: Option<(usize, usize)> = None;
        for (i, p) in self.prototypes.iter().enumerate() {
            let d = hdc::hamming(h_agg, p)?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (class_index, distance) = best.expect("non-empty prototypes");
        Ok(Classification {
            label: self.classes[class_index],
            class_index,
            distance,
        })
    }

    /// Fits the Weibull to the normalized nearest-prototype distance of every
    /// training sample (misclassified ones included).
    pub fn calibrate(&mut self, data: &FeatureDataset, seed: u64) -> Result<WeibullParams> {
        let encoded = self.encode_all(data, seed)?;
        let dim = self.dim() as f64;
        let distances = encoded
            .iter()
            .map(|h| self.classify(h).map(|c| c.distance as f64 / dim))
            .collect::<Result<Vec<_>>>()?;
        let w = fit_weibull(&distances)?;
        self.weibull = Some(w);
        Ok(w)
    }

    /// Weibull CDF at the normalized distance to the nearest prototype.
    pub fn ood_score(&self, h_agg: &Hypervector) -> Result<f64> {
        Ok(self.score_classification(&self.classify(h_agg)?)?.0)
    }

    fn score_classification(&self, c: &Classification) -> Result<(f64, bool)> {
        let w = self
            .weibull
            .ok_or_else(|| EarError::State("model is not calibrated".into()))?;
        let score = w.cdf(c.distance as f64 / self.dim() as f64);
        Ok((score, score > self.tau_pi))
    }

    pub fn infer<R: Rng + ?Sized>(&self, taps: &TapFeatures, rng: &mut R) -> Result<Inference> {
        let h = self.encode(taps, rng)?;
        let classification = self.classify(&h)?;
        let (ood_score, is_ood) = self.score_classification(&classification)?;
        Ok(Inference {
            classification,
            ood_score,
            is_ood,
        })
    }

    /// Accuracy on a labeled set with a fixed binarization seed.
    pub fn accuracy(&self, data: &FeatureDataset, seed: u64) -> Result<f64> {
        if data.is_empty() {
            return Err(EarError::Argument("empty evaluation set".into()));
        }
        let mut r = rng::seeded(seed);
        let mut correct = 0usize;
        for (s, &l) in data.samples().iter().zip(data.labels()) {
            let h = self.encode(s, &mut r)?;
            correct += (self.classify(&h)?.label == l) as usize;
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Builds prototypes then calibrates, using independent binarization streams.
pub fn fit_domain_model(
    domain_id: u32,
    adaptors: Vec<Adaptor>,
    codebook: TargetCodebook,
    classes: Vec<u32>,
    tau_pi: f64,
    data: &FeatureDataset,
    seed: u64,
) -> Result<DomainModel> {
    DomainModel::new(domain_id, adaptors, codebook, classes, tau_pi)?.fit(data, seed)
}
