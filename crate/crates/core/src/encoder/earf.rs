//! EARF feature files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        "EARF"
//! version      u16 = 1
//! sample_count u64
//! tap_count    u16
//! tap_dims     tap_count x u32
//! num_classes  u32
//! labels       sample_count x u32
//! domain_ids   sample_count x u32
//! payload      per sample, taps concatenated in tap order, f32
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureDataset, TapFeatures};
use crate::binio::{Reader, Writer};
use crate::error::{EarError, Result};

pub const EARF_MAGIC: [u8; 4] = *b"EARF";
pub const EARF_VERSION: u16 = 1;

pub fn encode_features(ds: &FeatureDataset) -> Result<Vec<u8>> {
    let tap_count = u16::try_from(ds.tap_count())
        .map_err(|_| EarError::Capacity("more than 65535 taps".into()))?;
    let mut w = Writer::new();
    w.bytes(&EARF_MAGIC);
    w.u16(EARF_VERSION);
    w.u64(ds.len() as u64);
    w.u16(tap_count);
    for &d in ds.tap_dims() {
        w.u32(u32::try_from(d).map_err(|_| EarError::Capacity("tap dim exceeds u32".into()))?);
    }
    w.u32(ds.num_classes());
    for &l in ds.labels() {
        w.u32(l);
    }
    for &d in ds.domain_ids() {
        w.u32(d);
    }
    for s in ds.samples() {
        for &x in s.taps().iter().flatten() {
            w.f32(x);
        }
    }
    Ok(w.finish())
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureDataset> {
    let mut r = Reader::new(bytes);
    r.magic(EARF_MAGIC)?;
    let version = r.u16()?;
    if version != EARF_VERSION {
        return Err(EarError::UnsupportedVersion {
            expected: EARF_VERSION,
            found: version,
        });
    }
    let n = r.u64()?;
    let tap_count = r.u16()? as usize;
    let tap_dims = (0..tap_count)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let num_classes = r.u32()?;
    r.ensure(n, 8)?;
    let n = n as usize;
    let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let domain_ids = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let per_sample: usize = tap_dims.iter().sum();
    r.ensure(n as u64, per_sample as u64 * 4)?;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut taps = Vec::with_capacity(tap_count);
        for (t, &d) in tap_dims.iter().enumerate() {
            let v = (0..d).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EarError::NonFinite(format!("sample {i}, tap {t}")));
            }
            taps.push(v);
        }
        samples.push(TapFeatures::new(taps)?);
    }
    r.finish()?;
    FeatureDataset::new(samples, labels, domain_ids, tap_dims, num_classes)
        .map_err(|e| EarError::Malformed(e.to_string()))
}

pub fn write_feature_file(path: impl AsRef<Path>, ds: &FeatureDataset) -> Result<()> {
    fs::write(path, encode_features(ds)?)?;
    Ok(())
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    decode_features(&fs::read(path)?)
}

/// Optional sidecar describing where a feature file came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub dataset: String,
    #[serde(default)]
    pub domain: Option<String>,
    pub class_names: Vec<String>,
    pub backbone: String,
    #[serde(default)]
    pub tap_names: Vec<String>,
    #[serde(default)]
    pub tap_dims: Vec<usize>,
    #[serde(default)]
    pub sample_count: Option<u64>,
}

impl FeatureManifest {
    /// `features.earf` -> `features.manifest.json`.
    pub fn sidecar_path(feature_path: &Path) -> PathBuf {
        feature_path.with_extension("manifest.json")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| EarError::Malformed(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| EarError::Malformed(e.to_string()))
    }

    /// Checks that the manifest agrees with the feature file header.
    pub fn check_against(&self, ds: &FeatureDataset) -> Result<()> {
        if !self.tap_dims.is_empty() && self.tap_dims != ds.tap_dims() {
            return Err(EarError::Malformed(format!(
                "manifest tap dims {:?} differ from file {:?}",
                self.tap_dims,
                ds.tap_dims()
            )));
        }
        if let Some(n) = self.sample_count {
            if n != ds.len() as u64 {
                return Err(EarError::Malformed(format!(
                    "manifest says {n} samples, file has {}",
                    ds.len()
                )));
            }
        }
        if !self.class_names.is_empty() && self.class_names.len() != ds.num_classes() as usize {
            return Err(EarError::Malformed("class names do not match num_classes".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> FeatureDataset {
        let samples = vec![
            TapFeatures::new(vec![vec![1.0, -2.5], vec![0.125]]).unwrap(),
            TapFeatures::new(vec![vec![f32::MIN_POSITIVE, 3.0e30], vec![-0.0]]).unwrap(),
        ];
        FeatureDataset::new(samples, vec![0, 2], vec![5, 5], vec![2, 1], 3).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_features(&toy()).unwrap();
        assert_eq!(&bytes[..4], b"EARF");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes([bytes[14], bytes[15]]), 2);
        // header 4+2+8+2, dims 2*4, classes 4, labels 8, domains 8, payload 2*3*4
        assert_eq!(bytes.len(), 16 + 8 + 4 + 8 + 8 + 24);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_features(&toy()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_features(&bytes), Err(EarError::BadMagic { .. })));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_features(&toy()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_features(&bytes),
            Err(EarError::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_features(&toy()).unwrap();
        for cut in [bytes.len() - 1, bytes.len() - 12, 20] {
            assert!(
                matches!(decode_features(&bytes[..cut]), Err(EarError::Truncated { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn non_finite_payload() {
        let mut bytes = encode_features(&toy()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_features(&bytes), Err(EarError::NonFinite(_))));
    }

    #[test]
    fn manifest_round_trip_and_check() {
        let dir = tempfile::tempdir().unwrap();
        let feat = dir.path().join("d.earf");
        let m = FeatureManifest {
            dataset: "toy".into(),
            domain: Some("a".into()),
            class_names: vec!["x".into(), "y".into(), "z".into()],
            backbone: "synthetic".into(),
            tap_names: vec!["t0".into(), "t1".into()],
            tap_dims: vec![2, 1],
            sample_count: Some(2),
        };
        let side = FeatureManifest::sidecar_path(&feat);
        assert!(side.to_string_lossy().ends_with("d.manifest.json"));
        m.write(&side).unwrap();
        let back = FeatureManifest::read(&side).unwrap();
        assert_eq!(back, m);
        back.check_against(&toy()).unwrap();
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            raw in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO | proptest::num::f32::SUBNORMAL, 0..60),
            dims in proptest::collection::vec(1usize..4, 1..4),
        ) {
            let per: usize = dims.iter().sum();
            let n = raw.len() / per;
            let samples: Vec<TapFeatures> = (0..n).map(|i| {
                let mut off = i * per;
                TapFeatures::new(dims.iter().map(|&d| { let v = raw[off..off + d].to_vec(); off += d; v }).collect()).unwrap()
            }).collect();
            let labels = (0..n as u32).map(|i| i % 3).collect();
            let ds = FeatureDataset::new(samples, labels, vec![1; n], dims.clone(), 3).unwrap();
            let back = decode_features(&encode_features(&ds).unwrap()).unwrap();
            let a: Vec<u32> = ds.samples().iter().flat_map(|s| s.taps().iter().flatten().map(|x| x.to_bits())).collect();
            let b: Vec<u32> = back.samples().iter().flat_map(|s| s.taps().iter().flatten().map(|x| x.to_bits())).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.labels(), ds.labels());
            prop_assert_eq!(back.tap_dims(), ds.tap_dims());
        }
    }
}
