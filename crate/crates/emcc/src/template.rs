//! Protected template files.
//!
//! Layout: a fixed 32-byte header followed by the bit-packed features.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMCC"
//! 4       1     format version
//! 5       2     units per feature (big-endian, like all integers here)
//! 7       2     length fraction numerator
//! 9       2     length fraction denominator
//! 11      1     nesting depth
//! 12      2     tau in thousandths
//! 14      8     seed identifier
//! 22      4     index generator identifier
//! 26      4     feature count
//! 30      2     reserved, zero
//! ```
//!
//! Each feature contributes `2 * units` value bits then `units` validity
//! bits; features are concatenated without padding and the final byte is
//! zero-padded. Bits are packed MSB-first.
//!
//! The header carries a one-way identifier of the seed, never the seed.

use crate::bits::Bits;
use crate::mcc::{build_cylinders, MccError, MccParams};
use crate::minutiae::MinutiaeRecord;
use crate::transform::{
    derive_index_set, make_cancelable_feature, CancelableFeature, Depth, IndexSet, LengthFraction,
    TransformError, TransformKey, GENERATOR_FY1,
};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"EMCC";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("bad magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u8),
    #[error("template truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("invalid header: {0}")]
    Header(String),
}

#[derive(Debug, Error)]
pub enum EnrollError {
    #[error(transparent)]
    Mcc(#[from] MccError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("record has no valid features")]
    NoValidFeatures,
}

/// Public parameters of a template. Everything here is safe to store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateHeader {
    pub version: u8,
    /// Two-bit units per feature.
    pub units: u16,
    pub p: LengthFraction,
    pub depth: Depth,
    /// Encoding threshold in thousandths.
    pub tau_millis: u16,
    /// One-way identifier of the transform seed.
    pub seed_id: u64,
    /// Identifier of the index-set generator.
    pub generator: [u8; 4],
    /// Feature count.
    pub count: u32,
}

impl TemplateHeader {
    pub fn tau(&self) -> f64 {
        self.tau_millis as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CancelableTemplate {
    pub header: TemplateHeader,
    pub features: Vec<CancelableFeature>,
}

impl CancelableTemplate {
    pub fn payload_bits(&self) -> usize {
        self.header.count as usize * 3 * self.header.units as usize
    }
}

/// One-way mapping from a seed to the identifier stored in headers.
pub fn seed_identifier(seed: u64) -> u64 {
    let digest = Sha256::digest(seed.to_be_bytes());
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

/// Assemble a template from already-built cylinders. Invalid cylinders are
/// skipped; the index set must match the key.
pub fn template_from_features(
    features: &[crate::mcc::CylinderFeature],
    idx: &IndexSet,
    key: &TransformKey,
) -> Result<CancelableTemplate, EnrollError> {
    let mut protected = Vec::new();
    for f in features.iter().filter(|f| f.valid) {
        protected.push(make_cancelable_feature(f, idx, key)?);
    }
    if protected.is_empty() {
        return Err(EnrollError::NoValidFeatures);
    }
    let units = protected[0].units();
    debug_assert!(protected.iter().all(|f| f.units() == units));
    Ok(CancelableTemplate {
        header: TemplateHeader {
            version: FORMAT_VERSION,
            units: units as u16,
            p: key.p,
            depth: key.depth,
            tau_millis: (key.tau * 1000.0).round() as u16,
            seed_id: seed_identifier(key.seed),
            generator: GENERATOR_FY1,
            count: protected.len() as u32,
        },
        features: protected,
    })
}

/// Full enrollment: cylinders, transform, template.
pub fn enroll(
    record: &MinutiaeRecord,
    params: &MccParams,
    key: &TransformKey,
) -> Result<CancelableTemplate, EnrollError> {
    let cylinders = build_cylinders(record, params)?;
    let idx = derive_index_set(key, params.l_c())?;
    template_from_features(&cylinders, &idx, key)
}

pub fn serialize_template(t: &CancelableTemplate) -> Vec<u8> {
    let h = &t.header;
    let mut out = Vec::with_capacity(HEADER_LEN + t.payload_bits().div_ceil(8));
    out.extend_from_slice(&MAGIC);
    out.push(h.version);
    out.extend_from_slice(&h.units.to_be_bytes());
    out.extend_from_slice(&h.p.num().to_be_bytes());
    out.extend_from_slice(&h.p.den().to_be_bytes());
    out.push(h.depth.as_u8());
    out.extend_from_slice(&h.tau_millis.to_be_bytes());
    out.extend_from_slice(&h.seed_id.to_be_bytes());
    out.extend_from_slice(&h.generator);
    out.extend_from_slice(&h.count.to_be_bytes());
    out.extend_from_slice(&[0u8; 2]);
    debug_assert_eq!(out.len(), HEADER_LEN);

    let mut payload = Bits::new();
    for f in &t.features {
        debug_assert_eq!(f.e_hat.len(), 2 * h.units as usize);
        debug_assert_eq!(f.d_hat.len(), h.units as usize);
        payload.append(&f.e_hat);
        payload.append(&f.d_hat);
    }
    out.extend_from_slice(&payload.to_msb_bytes());
    out
}

pub fn deserialize_template(bytes: &[u8]) -> Result<CancelableTemplate, TemplateError> {
    if bytes.len() < HEADER_LEN {
        return Err(TemplateError::Truncated { needed: HEADER_LEN, have: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TemplateError::Magic(magic));
    }
    let version = bytes[4];
    if version != FORMAT_VERSION {
        return Err(TemplateError::Version(version));
    }
    let units = u16::from_be_bytes(bytes[5..7].try_into().unwrap());
    let p_num = u16::from_be_bytes(bytes[7..9].try_into().unwrap());
    let p_den = u16::from_be_bytes(bytes[9..11].try_into().unwrap());
    let depth_raw = bytes[11];
    let tau_millis = u16::from_be_bytes(bytes[12..14].try_into().unwrap());
    let seed_id = u64::from_be_bytes(bytes[14..22].try_into().unwrap());
    let generator: [u8; 4] = bytes[22..26].try_into().unwrap();
    let count = u32::from_be_bytes(bytes[26..30].try_into().unwrap());

    let p = LengthFraction::new(p_num, p_den)
        .map_err(|e| TemplateError::Header(e.to_string()))?;
    let depth = Depth::try_from(depth_raw).map_err(|e| TemplateError::Header(e.to_string()))?;
    if units == 0 {
        return Err(TemplateError::Header("zero units per feature".into()));
    }
    if !(1..=999).contains(&tau_millis) {
        return Err(TemplateError::Header(format!("tau_millis {tau_millis} not in 1..=999")));
    }
    if generator != GENERATOR_FY1 {
        return Err(TemplateError::Header(format!("unknown index generator {generator:?}")));
    }

    let payload_bits = count as usize * 3 * units as usize;
    let payload_bytes = payload_bits.div_ceil(8);
    let have = bytes.len() - HEADER_LEN;
    if have < payload_bytes {
        return Err(TemplateError::Truncated {
            needed: HEADER_LEN + payload_bytes,
            have: bytes.len(),
        });
    }
    if have > payload_bytes {
        return Err(TemplateError::Trailing(have - payload_bytes));
    }
    let payload = Bits::from_msb_bytes(&bytes[HEADER_LEN..], payload_bits);
    let u = units as usize;
    let features = (0..count as usize)
        .map(|i| {
            let start = i * 3 * u;
            CancelableFeature {
                e_hat: payload.slice(start, start + 2 * u),
                d_hat: payload.slice(start + 2 * u, start + 3 * u),
            }
        })
        .collect();
    Ok(CancelableTemplate {
        header: TemplateHeader {
            version,
            units,
            p,
            depth,
            tau_millis,
            seed_id,
            generator,
            count,
        },
        features,
    })
}
