//! EARM model containers.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic          "EARM"
//! version        u16 = 1
//! domain_id      u32
//! dim            u32
//! codebook       num_classes u32, num_adaptors u32, rows packed LSB-first
//! classes        u32 count, then u32 labels
//! tau_pi         f64
//! binarize       u8 (0 = sample, 1 = round)
//! weibull        u8 present flag, then scale/shape/location f64
//! adaptors       u32 count, then per adaptor:
//!                  tap_id u32, input_dim u32, depth u8, hidden widths u32,
//!                  every layer's weights then bias as f32
//! prototypes     u32 count, then packed vectors
//! ```
//!
//! Weights are trained in f64 but rounded to f32 before they are stored, so a
//! saved model reloads bit-identically.

use std::fs;
use std::path::Path;

use crate::adaptor::{Adaptor, AdaptorParams, AdaptorSpec, DenseLayer, MAX_DEPTH};
use crate::binio::{Reader, Writer};
use crate::error::{EarError, Result};
use crate::hdc::{BinarizeMode, Hypervector, TargetCodebook, MAX_DIM};
use crate::reconfigurator::{DomainModel, WeibullParams};

pub const EARM_MAGIC: [u8; 4] = *b"EARM";
pub const EARM_VERSION: u16 = 1;

fn as_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| EarError::Capacity(format!("{what} exceeds u32")))
}

fn write_vector(w: &mut Writer, h: &Hypervector) {
    w.bytes(&h.to_packed_bytes());
}

fn read_vector(r: &mut Reader, dim: usize) -> Result<Hypervector> {
    Hypervector::from_packed_bytes(r.take(dim.div_ceil(8))?, dim)
        .map_err(|e| EarError::Malformed(e.to_string()))
}

pub fn encode_model(model: &DomainModel) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(&EARM_MAGIC);
    w.u16(EARM_VERSION);
    w.u32(model.domain_id());
    w.u32(as_u32(model.dim(), "dimension")?);

    let cb = model.codebook();
    w.u32(as_u32(cb.num_classes(), "codebook classes")?);
    w.u32(as_u32(cb.num_adaptors(), "codebook adaptors")?);
    for row in cb.rows() {
        write_vector(&mut w, row);
    }

    w.u32(as_u32(model.classes().len(), "class count")?);
    for &c in model.classes() {
        w.u32(c);
    }
    w.f64(model.tau_pi());
    w.u8(match model.binarize_mode() {
        BinarizeMode::Sample => 0,
        BinarizeMode::Round => 1,
    });
    match model.weibull() {
        Some(p) => {
            w.u8(1);
            w.f64(p.scale);
            w.f64(p.shape);
            w.f64(p.location);
        }
        None => w.u8(0),
    }

    w.u32(as_u32(model.adaptors().len(), "adaptor count")?);
    for a in model.adaptors() {
        w.u32(as_u32(a.spec.tap_id, "tap id")?);
        w.u32(as_u32(a.params.input_dim(), "input dim")?);
        w.u8(a.spec.depth() as u8);
        for &h in &a.spec.hidden_widths {
            w.u32(as_u32(h, "hidden width")?);
        }
        for layer in a.params.layers() {
            for &x in layer.weights().iter().chain(layer.bias()) {
                w.f32(x as f32);
            }
        }
    }

    w.u32(as_u32(model.prototypes().len(), "prototype count")?);
    for p in model.prototypes() {
        write_vector(&mut w, p);
    }
    Ok(w.finish())
}

fn read_f32s(r: &mut Reader, n: usize) -> Result<Vec<f64>> {
    r.ensure(n as u64, 4)?;
    let v = (0..n)
        .map(|_| r.f32().map(f64::from))
        .collect::<Result<Vec<_>>>()?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EarError::NonFinite("adaptor parameters".into()));
    }
    Ok(v)
}

pub fn decode_model(bytes: &[u8]) -> Result<DomainModel> {
    let mut r = Reader::new(bytes);
    r.magic(EARM_MAGIC)?;
    let version = r.u16()?;
    if version != EARM_VERSION {
        return Err(EarError::UnsupportedVersion {
            expected: EARM_VERSION,
            found: version,
        });
    }
    let domain_id = r.u32()?;
    let dim = r.u32()? as usize;
    if dim == 0 || dim > MAX_DIM {
        return Err(EarError::Malformed(format!("dimension {dim} out of range")));
    }

    let num_classes = r.u32()? as usize;
    let num_adaptors = r.u32()? as usize;
    let rows_n = num_classes
        .checked_mul(num_adaptors)
        .ok_or_else(|| EarError::Malformed("codebook size overflows".into()))?;
    r.ensure(rows_n as u64, dim.div_ceil(8) as u64)?;
    let rows = (0..rows_n)
        .map(|_| read_vector(&mut r, dim))
        .collect::<Result<Vec<_>>>()?;
    let codebook = TargetCodebook::from_rows(rows, num_classes, num_adaptors)
        .map_err(|e| EarError::Malformed(e.to_string()))?;

    let n_classes = r.u32()? as usize;
    r.ensure(n_classes as u64, 4)?;
    let classes = (0..n_classes).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let tau_pi = r.f64()?;
    let binarize = match r.u8()? {
        0 => BinarizeMode::Sample,
        1 => BinarizeMode::Round,
        other => return Err(EarError::Malformed(format!("unknown binarize mode {other}"))),
    };
    let weibull = match r.u8()? {
        0 => None,
        1 => {
            let (a, b, c) = (r.f64()?, r.f64()?, r.f64()?);
            Some(WeibullParams::new(a, b, c).map_err(|e| EarError::Malformed(e.to_string()))?)
        }
        other => return Err(EarError::Malformed(format!("bad Weibull flag {other}"))),
    };

    let n_adaptors = r.u32()? as usize;
    // Smallest possible adaptor record: tap, input dim, depth byte.
    r.ensure(n_adaptors as u64, 9)?;
    let mut adaptors = Vec::with_capacity(n_adaptors);
    for _ in 0..n_adaptors {
        let tap_id = r.u32()? as usize;
        let input_dim = r.u32()? as usize;
        let depth = r.u8()? as usize;
        if depth > MAX_DEPTH {
            return Err(EarError::Malformed(format!("adaptor depth {depth}")));
        }
        let hidden = (0..depth)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let spec = AdaptorSpec::new(tap_id, hidden).map_err(|e| EarError::Malformed(e.to_string()))?;
        if input_dim == 0 {
            return Err(EarError::Malformed("adaptor input dim is zero".into()));
        }
        let mut layers = Vec::with_capacity(depth + 1);
        let mut fan_in = input_dim;
        for &out in spec.hidden_widths.iter().chain(std::iter::once(&dim)) {
            let n_w = fan_in
                .checked_mul(out)
                .ok_or_else(|| EarError::Malformed("layer size overflows".into()))?;
            let weights = read_f32s(&mut r, n_w)?;
            let bias = read_f32s(&mut r, out)?;
            layers.push(DenseLayer::new(fan_in, out, weights, bias)?);
            fan_in = out;
        }
        adaptors.push(Adaptor {
            spec,
            params: AdaptorParams::from_layers(layers)?,
        });
    }

    let n_protos = r.u32()? as usize;
    r.ensure(n_protos as u64, dim.div_ceil(8) as u64)?;
    let prototypes = (0..n_protos)
        .map(|_| read_vector(&mut r, dim))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;

    DomainModel::from_parts(
        domain_id, adaptors, codebook, classes, prototypes, weibull, tau_pi, binarize,
    )
    .map_err(|e| EarError::Malformed(e.to_string()))
}

pub fn save_model(path: impl AsRef<Path>, model: &DomainModel) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DomainModel> {
    decode_model(&fs::read(path)?)
}
