//! The cancelable transform: seeded re-indexing followed by a lossy
//! nested-difference encoding.
//!
//! A secret seed selects `l` of the `L_c` cylinder cells (a truncated
//! permutation), giving a length-flexible partial feature. Consecutive
//! values are then differenced `depth` times, quantized to two-bit codes
//! against a threshold, and adjacent codes are XOR-folded. Validity bits are
//! OR-folded over the same groups. The result is compact, seed-dependent,
//! and many-to-one in every stage.

use crate::bits::Bits;
use crate::mcc::CylinderFeature;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

/// Identifier of the index-set generator written into template headers.
/// Bump this when the shuffle or its RNG changes.
pub const GENERATOR_FY1: [u8; 4] = *b"FYC1";

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("feature is not valid for transformation")]
    InvalidFeature,
}

/// Nesting depth of the difference stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Depth {
    One,
    Two,
    Three,
}

impl Depth {
    pub fn as_u8(self) -> u8 {
        match self {
            Depth::One => 1,
            Depth::Two => 2,
            Depth::Three => 3,
        }
    }

    /// Input values consumed per difference output.
    pub fn group(self) -> usize {
        1 << self.as_u8()
    }
}

impl TryFrom<u8> for Depth {
    type Error = TransformError;

    fn try_from(v: u8) -> Result<Self, TransformError> {
        match v {
            1 => Ok(Depth::One),
            2 => Ok(Depth::Two),
            3 => Ok(Depth::Three),
            other => Err(TransformError::Param(format!("depth {other} not in 1..=3"))),
        }
    }
}

impl serde::Serialize for Depth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> serde::Deserialize<'de> for Depth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Depth::try_from(v).map_err(serde::de::Error::custom)
    }
}

/// Retained fraction of the cylinder, as an exact rational in `[1/2, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LengthFraction {
    num: u16,
    den: u16,
}

impl LengthFraction {
    pub const ONE: LengthFraction = LengthFraction { num: 1, den: 1 };
    pub const TWO_THIRDS: LengthFraction = LengthFraction { num: 2, den: 3 };
    pub const HALF: LengthFraction = LengthFraction { num: 1, den: 2 };

    pub fn new(num: u16, den: u16) -> Result<Self, TransformError> {
        if den == 0 || num > den || (num as u32) * 2 < den as u32 {
            return Err(TransformError::Param(format!(
                "length fraction {num}/{den} outside [1/2, 1]"
            )));
        }
        Ok(LengthFraction { num, den })
    }

    pub fn num(&self) -> u16 {
        self.num
    }

    pub fn den(&self) -> u16 {
        self.den
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `floor(self * n)` in exact integer arithmetic.
    pub fn floor_mul(&self, n: usize) -> usize {
        (self.num as u64 * n as u64 / self.den as u64) as usize
    }
}

impl std::str::FromStr for LengthFraction {
    type Err = TransformError;

    /// Accepts `"1"`, `"2/3"`, `"1/2"`, and similar rationals.
    fn from_str(s: &str) -> Result<Self, TransformError> {
        let bad = |_| TransformError::Param(format!("cannot parse length fraction {s:?}"));
        match s.split_once('/') {
            Some((n, d)) => {
                LengthFraction::new(n.trim().parse().map_err(bad)?, d.trim().parse().map_err(bad)?)
            }
            None => {
                let n: u16 = s.trim().parse().map_err(bad)?;
                LengthFraction::new(n, 1)
            }
        }
    }
}

impl std::fmt::Display for LengthFraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl serde::Serialize for LengthFraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for LengthFraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything secret or tunable about the transform.
///
/// Deliberately not serializable: the seed must never ride along with
/// templates or reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformKey {
    pub seed: u64,
    pub p: LengthFraction,
    pub tau: f64,
    pub depth: Depth,
}

impl TransformKey {
    pub fn new(seed: u64, p: LengthFraction, tau: f64, depth: Depth) -> Result<Self, TransformError> {
        let key = TransformKey { seed, p, tau, depth };
        key.validate()?;
        Ok(key)
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(TransformError::Param(format!("tau = {} not in (0, 1)", self.tau)));
        }
        Ok(())
    }
}

/// An ordered selection of `l` distinct cell indices (1-based, in
/// `[1, l_c]`), regenerable bit-identically from the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<u32>,
    l_c: usize,
}

impl IndexSet {
    /// 1-based cell indices in selection order.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn l(&self) -> usize {
        self.indices.len()
    }

    /// `l / 8`; the two-bit unit count at nesting depth 2.
    pub fn k(&self) -> usize {
        self.indices.len() / 8
    }

    /// Cylinder length this set was derived for.
    pub fn l_c(&self) -> usize {
        self.l_c
    }
}

/// Unbiased bounded sample from the raw RNG stream.
///
/// Written out explicitly (rather than through a ranged-sampling helper) so
/// the generator identified by [`GENERATOR_FY1`] stays stable no matter what
/// the RNG crates do across versions.
fn bounded(rng: &mut ChaCha20Rng, n: u32) -> u32 {
    let threshold = (1u64 << 32) / n as u64 * n as u64;
    loop {
        let r = rng.next_u32();
        if (r as u64) < threshold {
            return r % n;
        }
    }
}

/// Derive the seeded index selection for a cylinder of `l_c` cells.
///
/// The retained length is `floor(p * l_c)` rounded down to a multiple of 8.
pub fn derive_index_set(key: &TransformKey, l_c: usize) -> Result<IndexSet, TransformError> {
    key.validate()?;
    if l_c < 16 {
        return Err(TransformError::Param(format!("l_c = {l_c} (need >= 16)")));
    }
    if l_c > u32::MAX as usize {
        return Err(TransformError::Param(format!("l_c = {l_c} too large")));
    }
    let m = key.p.floor_mul(l_c);
    let l = m - m % 8;
    if l == 0 {
        return Err(TransformError::Param(format!(
            "retained length 0 for p = {} and l_c = {l_c}",
            key.p
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(key.seed);
    let mut indices: Vec<u32> = (1..=l_c as u32).collect();
    for i in (1..indices.len()).rev() {
        let j = bounded(&mut rng, i as u32 + 1) as usize;
        indices.swap(i, j);
    }
    indices.truncate(l);
    Ok(IndexSet { indices, l_c })
}

/// Gather the re-indexed cell values and their validity bits.
///
/// The validity of cell `t` comes from the base mask replicated across
/// sections, i.e. bit `(t - 1) mod l_b`.
pub fn reindex(
    feature: &CylinderFeature,
    idx: &IndexSet,
) -> Result<(Vec<f64>, Bits), TransformError> {
    if !feature.valid {
        return Err(TransformError::InvalidFeature);
    }
    if feature.cells.len() != idx.l_c {
        return Err(TransformError::Length(format!(
            "index set derived for {} cells, feature has {}",
            idx.l_c,
            feature.cells.len()
        )));
    }
    let l_b = feature.base_mask.len();
    if l_b == 0 || feature.cells.len() % l_b != 0 {
        return Err(TransformError::Length(format!(
            "cell count {} is not a multiple of base mask length {l_b}",
            feature.cells.len()
        )));
    }
    let mut values = Vec::with_capacity(idx.l());
    let mut mask = Bits::zeros(idx.l());
    for (out, &t) in idx.indices.iter().enumerate() {
        let cell = t as usize - 1;
        values.push(feature.cells[cell]);
        if feature.base_mask.get(cell % l_b) {
            mask.set(out, true);
        }
    }
    Ok((values, mask))
}

/// Difference adjacent values, `depth` rounds: one round maps
/// `(v_0, v_1, v_2, v_3, ...)` to `(v_0 - v_1, v_2 - v_3, ...)`.
pub fn nested_difference(values: &[f64], depth: Depth) -> Result<Vec<f64>, TransformError> {
    let group = depth.group();
    if values.len() % group != 0 {
        return Err(TransformError::Length(format!(
            "{} values not divisible by 2^depth = {group}",
            values.len()
        )));
    }
    let mut cur = values.to_vec();
    for _ in 0..depth.as_u8() {
        cur = cur.chunks_exact(2).map(|w| w[0] - w[1]).collect();
    }
    Ok(cur)
}

fn fold_or(bits: &Bits, group: usize) -> Result<Bits, TransformError> {
    if bits.len() % group != 0 {
        return Err(TransformError::Length(format!(
            "{} bits not divisible by group {group}",
            bits.len()
        )));
    }
    let mut out = Bits::zeros(bits.len() / group);
    for i in 0..out.len() {
        let any = (0..group).any(|r| bits.get(i * group + r));
        if any {
            out.set(i, true);
        }
    }
    Ok(out)
}

/// OR the validity bits over each group of `2^depth`, mirroring the value
/// grouping of [`nested_difference`].
pub fn fold_mask(bits: &Bits, depth: Depth) -> Result<Bits, TransformError> {
    fold_or(bits, depth.group())
}

/// Two-bit quantization of each difference value against `tau`:
/// `10` when `e/2 >= tau`, `01` when `e/2 <= -tau`, `00` between.
pub fn encode(values: &[f64], tau: f64) -> Bits {
    let mut out = Bits::zeros(values.len() * 2);
    for (i, &e) in values.iter().enumerate() {
        let half = e / 2.0;
        if half >= tau {
            out.set(2 * i, true);
        } else if half <= -tau {
            out.set(2 * i + 1, true);
        }
    }
    out
}

/// XOR adjacent two-bit units: unit `i` of the output is
/// `unit_{2i} XOR unit_{2i+1}` of the input.
pub fn xor_fold(code: &Bits) -> Result<Bits, TransformError> {
    if code.len() % 4 != 0 {
        return Err(TransformError::Length(format!(
            "{} bits is not a whole number of unit pairs",
            code.len()
        )));
    }
    let mut out = Bits::zeros(code.len() / 2);
    for i in 0..out.len() / 2 {
        out.set(2 * i, code.get(4 * i) ^ code.get(4 * i + 2));
        out.set(2 * i + 1, code.get(4 * i + 1) ^ code.get(4 * i + 3));
    }
    Ok(out)
}

/// The protected form of one cylinder: folded two-bit codes plus their
/// validity bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CancelableFeature {
    /// `2 * units()` value bits.
    pub e_hat: Bits,
    /// `units()` validity bits.
    pub d_hat: Bits,
}

impl CancelableFeature {
    /// Number of two-bit units.
    pub fn units(&self) -> usize {
        self.d_hat.len()
    }
}

/// Every intermediate of the transform, for diagnostics and distribution
/// statistics. Never serialized; the template API exposes only the final
/// two fields.
#[derive(Debug, Clone)]
pub struct StageTrace {
    /// Re-indexed cell values, length `l`.
    pub c_prime: Vec<f64>,
    /// Re-indexed validity bits, length `l`.
    pub b_prime: Bits,
    /// Values after the first difference round, length `l/2`.
    pub level1: Vec<f64>,
    /// Values after all difference rounds, length `l/2^depth`.
    pub nested: Vec<f64>,
    /// Validity bits after the group OR, length `l/2^depth`.
    pub folded: Bits,
    /// Two-bit codes before folding, length `l/2^(depth-1)` bits.
    pub encoded: Bits,
    /// Codes after the pairwise XOR, length `l/2^depth` bits.
    pub xored: Bits,
    /// Validity bits aligned with `xored`, length `l/2^(depth+1)`.
    pub mask: Bits,
}

/// Run the full pipeline, retaining every stage.
pub fn trace_pipeline(
    feature: &CylinderFeature,
    idx: &IndexSet,
    key: &TransformKey,
) -> Result<StageTrace, TransformError> {
    key.validate()?;
    let l = idx.l();
    if l % (1usize << (key.depth.as_u8() + 1)) != 0 {
        return Err(TransformError::Length(format!(
            "retained length {l} not divisible by 2^(depth+1)"
        )));
    }
    let (c_prime, b_prime) = reindex(feature, idx)?;
    let level1 = nested_difference(&c_prime, Depth::One)?;
    let nested = nested_difference(&c_prime, key.depth)?;
    let folded = fold_mask(&b_prime, key.depth)?;
    let encoded = encode(&nested, key.tau);
    let xored = xor_fold(&encoded)?;
    let mask = fold_or(&folded, 2)?;
    Ok(StageTrace { c_prime, b_prime, level1, nested, folded, encoded, xored, mask })
}

/// Transform one cylinder into its protected form.
pub fn make_cancelable_feature(
    feature: &CylinderFeature,
    idx: &IndexSet,
    key: &TransformKey,
) -> Result<CancelableFeature, TransformError> {
    let trace = trace_pipeline(feature, idx, key)?;
    Ok(CancelableFeature { e_hat: trace.xored, d_hat: trace.mask })
}
