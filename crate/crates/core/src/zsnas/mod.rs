//! Zero-shot adaptor search.
//!
//! Candidates are scored without training: each adaptor is initialized with
//! seeded random weights, a fixed batch is pushed through it, and its
//! penultimate activations are judged by the spectrum of their 2-NN graph
//! (expressivity), by how much its spectral clustering agrees with the other
//! adaptors' (redundancy) and by its parameter count. GP-UCB searches the
//! candidate space.

mod ami;
mod gp;
mod spectral;

pub use ami::ami;
pub use gp::{gp_ucb_search, Evaluation, GpUcbConfig, SearchResult};
pub use spectral::{
    decompose, expressivity_score, graph_spectrum, kmeans, knn_adjacency, normalized_laplacian,
    spectral_clustering, spectral_score, SpectralDecomposition, CLUSTER_EIGEN_THRESHOLD,
    MIN_BATCH,
};

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adaptor::{AdaptorParams, AdaptorSpec, MAX_DEPTH};
use crate::encoder::{FeatureDataset, TapFeatures};
use crate::error::{EarError, Result};
use crate::hdc::codebook_dimension;
use crate::rng::{self, EarRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NasConfig {
    pub beta0: f64,
    pub beta1: f64,
    pub gamma_spectral: f64,
    pub knn: usize,
    pub batch: usize,
    pub budget: usize,
    pub warmup: usize,
    pub kappa: f64,
    pub shrink: f64,
    pub width_min: usize,
    pub width_max: usize,
    pub max_depth: usize,
    /// Worker threads for scoring the adaptors of one candidate.
    pub threads: usize,
}

impl Default for NasConfig {
    fn default() -> Self {
        Self {
            beta0: 3e-6,
            beta1: 5.0,
            gamma_spectral: 3.0,
            knn: 2,
            batch: 128,
            budget: 50,
            warmup: 10,
            kappa: 2.5,
            shrink: 0.9,
            width_min: 8,
            width_max: 64,
            max_depth: MAX_DEPTH,
            threads: 1,
        }
    }
}

impl NasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta0.is_finite() && self.beta0 >= 0.0 && self.beta1.is_finite() && self.beta1 >= 0.0) {
            return Err(EarError::Config("nas.beta0 and nas.beta1 must be non-negative".into()));
        }
        if !(self.gamma_spectral.is_finite() && self.gamma_spectral > 0.0) {
            return Err(EarError::Config("nas.gamma_spectral must be positive".into()));
        }
        if self.knn == 0 {
            return Err(EarError::Config("nas.knn must be positive".into()));
        }
        if self.batch < MIN_BATCH || self.batch <= self.knn {
            return Err(EarError::Config(format!("nas.batch must be at least {MIN_BATCH}")));
        }
        if self.width_min == 0 || self.width_min > self.width_max {
            return Err(EarError::Config("need 0 < nas.width_min <= nas.width_max".into()));
        }
        if self.max_depth > MAX_DEPTH {
            return Err(EarError::Config(format!("nas.max_depth must be <= {MAX_DEPTH}")));
        }
        if self.threads == 0 {
            return Err(EarError::Config("nas.threads must be positive".into()));
        }
        self.gp_config().validate()
    }

    pub fn gp_config(&self) -> GpUcbConfig {
        GpUcbConfig {
            budget: self.budget,
            warmup: self.warmup,
            kappa: self.kappa,
            shrink: self.shrink,
            ..GpUcbConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TapChoice {
    pub include: bool,
    pub depth: usize,
    pub width: usize,
}

/// Which taps get an adaptor, and how deep and wide each one is.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateArchitecture {
    pub taps: Vec<TapChoice>,
}

impl CandidateArchitecture {
    /// One spec per included tap, in tap order.
    pub fn specs(&self) -> Vec<AdaptorSpec> {
        self.taps
            .iter()
            .enumerate()
            .filter(|(_, t)| t.include)
            .map(|(i, t)| AdaptorSpec {
                tap_id: i,
                hidden_widths: vec![t.width; t.depth],
            })
            .collect()
    }

    pub fn num_adaptors(&self) -> usize {
        self.taps.iter().filter(|t| t.include).count()
    }

    /// Short form such as `t0:d2w16,t3:d0`.
    pub fn describe(&self) -> String {
        self.taps
            .iter()
            .enumerate()
            .filter(|(_, t)| t.include)
            .map(|(i, t)| {
                if t.depth == 0 {
                    format!("t{i}:d0")
                } else {
                    format!("t{i}:d{}w{}", t.depth, t.width)
                }
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Inverse of [`describe`](Self::describe) for an encoder with
    /// `tap_count` taps. Taps not mentioned are excluded.
    pub fn parse(text: &str, tap_count: usize) -> Result<Self> {
        let bad = |item: &str| EarError::Argument(format!("cannot parse adaptor `{item}`, expected e.g. t3:d2w16"));
        let mut taps = vec![
            TapChoice {
                include: false,
                depth: 0,
                width: 0,
            };
            tap_count
        ];
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (tap, arch) = item.strip_prefix('t').and_then(|r| r.split_once(":d")).ok_or_else(|| bad(item))?;
            let tap: usize = tap.parse().map_err(|_| bad(item))?;
            let (depth, width) = match arch.split_once('w') {
                Some((d, w)) => (d.parse().map_err(|_| bad(item))?, w.parse().map_err(|_| bad(item))?),
                None => (arch.parse().map_err(|_| bad(item))?, 0),
            };
            if tap >= tap_count {
                return Err(EarError::Argument(format!("tap {tap} out of range for {tap_count} taps")));
            }
            if depth > MAX_DEPTH || (depth > 0 && width == 0) || taps[tap].include {
                return Err(bad(item));
            }
            taps[tap] = TapChoice {
                include: true,
                depth,
                width,
            };
        }
        if !taps.iter().any(|t| t.include) {
            return Err(EarError::Argument("architecture names no adaptor".into()));
        }
        Ok(Self { taps })
    }
}

/// Box of candidate encodings: `[include, depth, width]` per tap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub tap_count: usize,
    pub width_min: usize,
    pub width_max: usize,
    pub max_depth: usize,
}

impl SearchSpace {
    pub fn new(tap_count: usize, cfg: &NasConfig) -> Result<Self> {
        if tap_count == 0 {
            return Err(EarError::Argument("search space needs at least one tap".into()));
        }
        Ok(Self {
            tap_count,
            width_min: cfg.width_min,
            width_max: cfg.width_max,
            max_depth: cfg.max_depth,
        })
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let w_hi = if self.width_max > self.width_min {
            self.width_max as f64
        } else {
            self.width_min as f64 + 1e-9
        };
        let d_hi = (self.max_depth as f64).max(1e-9);
        (0..self.tap_count)
            .flat_map(|_| [(0.0, 1.0), (0.0, d_hi), (self.width_min as f64, w_hi)])
            .collect()
    }

    /// Rounds the relaxed encoding; if no tap is included, the tap with the
    /// largest include value (lowest index on ties) is forced in.
    pub fn decode(&self, x: &[f64]) -> Result<CandidateArchitecture> {
        if x.len() != 3 * self.tap_count {
            return Err(EarError::dim(3 * self.tap_count, x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EarError::NonFinite("candidate encoding".into()));
        }
        let mut taps: Vec<TapChoice> = x
            .chunks(3)
            .map(|c| TapChoice {
                include: c[0] >= 0.5,
                depth: (c[1].round().max(0.0) as usize).min(self.max_depth),
                width: (c[2].round().max(0.0) as usize).clamp(self.width_min, self.width_max),
            })
            .collect();
        if !taps.iter().any(|t| t.include) {
            let mut best = 0;
            for i in 1..self.tap_count {
                if x[3 * i] > x[3 * best] {
                    best = i;
                }
            }
            taps[best].include = true;
        }
        // canonical form, shared with `parse`: no width without hidden
        // layers, nothing at all for excluded taps
        for t in &mut taps {
            if !t.include {
                t.depth = 0;
            }
            if t.depth == 0 {
                t.width = 0;
            }
        }
        Ok(CandidateArchitecture { taps })
    }

    pub fn encode(&self, c: &CandidateArchitecture) -> Result<Vec<f64>> {
        if c.taps.len() != self.tap_count {
            return Err(EarError::dim(self.tap_count, c.taps.len()));
        }
        Ok(c.taps
            .iter()
            .flat_map(|t| {
                let width = t.width.clamp(self.width_min, self.width_max);
                [if t.include { 1.0 } else { 0.0 }, t.depth as f64, width as f64]
            })
            .collect())
    }

    /// Uniformly random candidate, used as a search-free baseline.
    pub fn random(&self, rng: &mut EarRng) -> CandidateArchitecture {
        let x: Vec<f64> = self
            .bounds()
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        self.decode(&x).expect("bounds produce valid encodings")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRedundancy {
    pub first: usize,
    pub second: usize,
    pub ami: f64,
    /// Both adaptors formed a single cluster, so the AMI is 1 by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub expressivity: Vec<f64>,
    pub clusters: Vec<usize>,
    pub redundancy: Vec<PairRedundancy>,
    pub parameters: usize,
    pub total: f64,
}

/// `Σ s_exp - β0 · s_par - β1 · Σ s_red`; higher is better.
pub fn combine(expressivity: &[f64], parameters: usize, redundancy: &[f64], beta0: f64, beta1: f64) -> f64 {
    expressivity.iter().sum::<f64>()
        - beta0 * parameters as f64
        - beta1 * redundancy.iter().sum::<f64>()
}

struct AdaptorProbe {
    expressivity: f64,
    labels: Vec<usize>,
    clusters: usize,
    parameters: usize,
}

fn spec_context(spec: &AdaptorSpec) -> [u64; 3] {
    [
        spec.tap_id as u64,
        spec.depth() as u64,
        spec.hidden_widths.first().copied().unwrap_or(0) as u64,
    ]
}

fn probe(
    spec: &AdaptorSpec,
    batch: &[&TapFeatures],
    dim: usize,
    cfg: &NasConfig,
    seed: u64,
) -> Result<AdaptorProbe> {
    let input_dim = batch[0].tap(spec.tap_id)?.len();
    let ctx = spec_context(spec);
    let params = AdaptorParams::init(
        spec,
        input_dim,
        dim,
        &mut rng::derived(seed, &[0x1417, ctx[0], ctx[1], ctx[2]]),
    )?;
    let feats = batch
        .iter()
        .map(|s| params.penultimate(s.tap(spec.tap_id)?))
        .collect::<Result<Vec<_>>>()?;
    let (expressivity, decomp) = expressivity_score(&feats, cfg.gamma_spectral, cfg.knn)?;
    let labels = spectral_clustering(&decomp, rng::derive_seed(seed, &[0xC105, ctx[0], ctx[1], ctx[2]]))?;
    Ok(AdaptorProbe {
        expressivity,
        clusters: decomp.cluster_count(),
        labels,
        parameters: params.num_params(),
    })
}

/// Scores an untrained candidate on a fixed batch. Pure in
/// `(candidate, batch, num_classes, cfg, seed)`; no parameter is updated.
pub fn combined_score(
    candidate: &CandidateArchitecture,
    batch: &[&TapFeatures],
    num_classes: usize,
    cfg: &NasConfig,
    seed: u64,
) -> Result<ScoreBreakdown> {
    let specs = candidate.specs();
    if specs.is_empty() {
        return Err(EarError::Argument("candidate has no adaptors".into()));
    }
    if batch.len() < MIN_BATCH {
        return Err(EarError::Argument(format!(
            "scoring batch needs at least {MIN_BATCH} samples"
        )));
    }
    let dim = codebook_dimension(num_classes * specs.len())?;

    let probes: Vec<AdaptorProbe> = if cfg.threads > 1 && specs.len() > 1 {
        let chunk = specs.len().div_ceil(cfg.threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = specs
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|s| probe(s, batch, dim, cfg, seed))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scoring thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .flatten()
        .collect()
    } else {
        specs
            .iter()
            .map(|s| probe(s, batch, dim, cfg, seed))
            .collect::<Result<_>>()?
    };

    let mut redundancy = Vec::new();
    for i in 0..probes.len() {
        for j in i + 1..probes.len() {
            redundancy.push(PairRedundancy {
                first: specs[i].tap_id,
                second: specs[j].tap_id,
                ami: ami(&probes[i].labels, &probes[j].labels)?,
                degenerate: probes[i].clusters == 1 && probes[j].clusters == 1,
            });
        }
    }
    let expressivity: Vec<f64> = probes.iter().map(|p| p.expressivity).collect();
    let parameters = probes.iter().map(|p| p.parameters).sum();
    let reds: Vec<f64> = redundancy.iter().map(|r| r.ami).collect();
    Ok(ScoreBreakdown {
        total: combine(&expressivity, parameters, &reds, cfg.beta0, cfg.beta1),
        clusters: probes.iter().map(|p| p.clusters).collect(),
        expressivity,
        redundancy,
        parameters,
    })
}

/// One line of the search trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NasTraceRecord {
    pub iteration: usize,
    pub encoded: Vec<f64>,
    pub candidate: String,
    pub breakdown: Option<ScoreBreakdown>,
    pub cached: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct NasOutcome {
    pub best: CandidateArchitecture,
    pub breakdown: ScoreBreakdown,
    pub trace: Vec<NasTraceRecord>,
}

/// Draws the shared scoring batch from a labeled buffer.
pub fn scoring_batch(data: &FeatureDataset, size: usize, seed: u64) -> Vec<&TapFeatures> {
    let n = data.len();
    let take = size.min(n);
    let mut idx = index::sample(&mut rng::derived(seed, &[0xBA7C]), n, take).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| &data.samples()[i]).collect()
}

/// GP-UCB search over adaptor candidates for `data`, scored zero-shot.
/// Repeated decodings of the same candidate reuse the cached score.
pub fn nas_search(data: &FeatureDataset, num_classes: usize, cfg: &NasConfig, seed: u64) -> Result<NasOutcome> {
    cfg.validate()?;
    if data.len() < MIN_BATCH.max(cfg.knn + 1) {
        return Err(EarError::Growth(format!(
            "{} samples are too few to score candidates",
            data.len()
        )));
    }
    let space = SearchSpace::new(data.tap_count(), cfg)?;
    let batch = scoring_batch(data, cfg.batch, seed);
    let mut cache: HashMap<CandidateArchitecture, Option<ScoreBreakdown>> = HashMap::new();
    let mut records: Vec<(CandidateArchitecture, bool)> = Vec::new();

    let objective = |x: &[f64]| -> f64 {
        let Ok(cand) = space.decode(x) else {
            return f64::NAN;
        };
        let cached = cache.contains_key(&cand);
        let entry = cache.entry(cand.clone()).or_insert_with(|| {
            match combined_score(&cand, &batch, num_classes, cfg, seed) {
                Ok(b) if b.total.is_finite() => Some(b),
                Ok(_) => None,
                Err(e) => {
                    log::warn!("candidate {} failed to score: {e}", cand.describe());
                    None
                }
            }
        });
        let v = entry.as_ref().map_or(f64::NAN, |b| b.total);
        records.push((cand, cached));
        v
    };
    let search = gp_ucb_search(objective, &space.bounds(), &cfg.gp_config(), rng::derive_seed(seed, &[0x6B]))
        .map_err(|e| EarError::Growth(format!("no valid candidate: {e}")))?;

    let best = space.decode(&search.best_x)?;
    let breakdown = cache
        .get(&best)
        .cloned()
        .flatten()
        .ok_or_else(|| EarError::Growth("best candidate has no score".into()))?;
    let trace = search
        .trace
        .iter()
        .zip(records)
        .map(|(e, (cand, cached))| NasTraceRecord {
            iteration: e.iteration,
            encoded: e.x.clone(),
            candidate: cand.describe(),
            breakdown: cache.get(&cand).cloned().flatten(),
            cached,
            seconds: e.seconds,
        })
        .collect();
    Ok(NasOutcome {
        best,
        breakdown,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_inverts_describe() {
        let c = CandidateArchitecture::parse("t0:d2w16, t3:d0,t6:d1w64", 7).unwrap();
        assert_eq!(c.describe(), "t0:d2w16,t3:d0,t6:d1w64");
        assert_eq!(c.specs()[0].hidden_widths, vec![16, 16]);
        assert!(c.specs()[1].hidden_widths.is_empty());
        for bad in ["", "t7:d0", "t0:d4w8", "t0:d1", "x0:d0", "t0:d0,t0:d1w3", "t0:d1w"] {
            assert!(CandidateArchitecture::parse(bad, 7).is_err(), "{bad}");
        }
    }
    use crate::encoder::{make_synthetic_scenario, ScenarioConfig};

    fn space() -> SearchSpace {
        SearchSpace::new(4, &NasConfig::default()).unwrap()
    }

    #[test]
    fn combine_arithmetic() {
        let s = combine(&[10.0, 12.0], 1000, &[0.2], 3e-6, 5.0);
        assert!((s - 20.997).abs() < 1e-12);
        assert!(combine(&[10.0], 1001, &[], 3e-6, 5.0) < combine(&[10.0], 1000, &[], 3e-6, 5.0));
    }

    #[test]
    fn decode_rounds_and_clamps() {
        let s = space();
        let c = s
            .decode(&[0.49, 2.6, 20.4, 0.5, 0.2, 8.0, 1.0, 3.0, 64.0, 0.0, 1.5, 30.5])
            .unwrap();
        assert_eq!(c.taps[0], TapChoice { include: false, depth: 0, width: 0 });
        assert_eq!(c.taps[1], TapChoice { include: true, depth: 0, width: 0 });
        assert_eq!(c.taps[2], TapChoice { include: true, depth: 3, width: 64 });
        assert_eq!(c.taps[3], TapChoice { include: false, depth: 0, width: 0 });
        let d = s.decode(&[1.0, 1.4, 30.5, 1.0, 0.2, 40.0, 0.0, 0.0, 8.0, 0.0, 0.0, 8.0]).unwrap();
        assert_eq!(d.taps[0].width, 31);
        assert_eq!(d.taps[1], TapChoice { include: true, depth: 0, width: 0 });
        assert_eq!(s.decode(&s.encode(&c).unwrap()).unwrap(), c);
        assert!(s.decode(&[0.0; 5]).is_err());
    }

    #[test]
    fn empty_candidate_forces_largest_include() {
        let c = space()
            .decode(&[0.1, 1.0, 8.0, 0.4, 1.0, 8.0, 0.4, 1.0, 8.0, 0.2, 1.0, 8.0])
            .unwrap();
        assert_eq!(c.num_adaptors(), 1);
        assert!(c.taps[1].include);
    }

    #[test]
    fn random_candidates_are_valid() {
        let s = space();
        let mut r = rng::seeded(1);
        for _ in 0..200 {
            let c = s.random(&mut r);
            assert!(c.num_adaptors() >= 1);
            for t in &c.taps {
                match (t.include, t.depth) {
                    (false, _) => assert_eq!((t.depth, t.width), (0, 0)),
                    (true, 0) => assert_eq!(t.width, 0),
                    (true, d) => assert!(d <= 3 && (8..=64).contains(&t.width)),
                }
            }
        }
    }

    fn scenario_batch() -> FeatureDataset {
        let cfg = ScenarioConfig {
            num_tasks: 1,
            segment_length: 10,
            test_per_class: 1,
            ..ScenarioConfig::default()
        };
        let s = make_synthetic_scenario(cfg, 5).unwrap();
        s.sample_task(0, 30, 6).unwrap()
    }

    #[test]
    fn score_is_pure_and_single_adaptor_has_no_redundancy() {
        let data = scenario_batch();
        let cfg = NasConfig::default();
        let batch = scoring_batch(&data, 64, 1);
        let mut cand = space_for(&data).decode(&vec![0.0; 3 * data.tap_count()]).unwrap();
        cand.taps[0] = TapChoice { include: true, depth: 2, width: 16 };
        let a = combined_score(&cand, &batch, 5, &cfg, 9).unwrap();
        let b = combined_score(&cand, &batch, 5, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.redundancy.is_empty());
        assert!(a.expressivity[0] >= 0.0);

        cand.taps[3] = TapChoice { include: true, depth: 1, width: 32 };
        let threaded = NasConfig { threads: 2, ..cfg.clone() };
        let c = combined_score(&cand, &batch, 5, &cfg, 9).unwrap();
        assert_eq!(c, combined_score(&cand, &batch, 5, &threaded, 9).unwrap());
        assert_eq!(c.redundancy.len(), 1);
        assert!((-1.0..=1.0).contains(&c.redundancy[0].ami));
    }

    fn space_for(data: &FeatureDataset) -> SearchSpace {
        SearchSpace::new(data.tap_count(), &NasConfig::default()).unwrap()
    }

    #[test]
    fn more_parameters_lower_the_score() {
        let data = scenario_batch();
        let batch = scoring_batch(&data, 64, 1);
        let cfg = NasConfig { beta0: 1.0, ..NasConfig::default() };
        let mut cand = space_for(&data).decode(&vec![0.0; 3 * data.tap_count()]).unwrap();
        cand.taps[0] = TapChoice { include: true, depth: 0, width: 8 };
        let base = combined_score(&cand, &batch, 5, &cfg, 2).unwrap();
        // depth 0 ignores width, so only the class count changes parameters
        let more = combined_score(&cand, &batch, 40, &cfg, 2).unwrap();
        assert_eq!(base.expressivity, more.expressivity);
        assert!(more.parameters > base.parameters);
        assert!(more.total < base.total);
    }

    #[test]
    fn search_returns_best_of_trace() {
        let data = scenario_batch();
        let cfg = NasConfig {
            budget: 12,
            warmup: 6,
            batch: 48,
            ..NasConfig::default()
        };
        let out = nas_search(&data, 5, &cfg, 3).unwrap();
        assert_eq!(out.trace.len(), 12);
        let max = out
            .trace
            .iter()
            .filter_map(|r| r.breakdown.as_ref().map(|b| b.total))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.breakdown.total, max);
        assert!(out.best.num_adaptors() >= 1);
    }
}
