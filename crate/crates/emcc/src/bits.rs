//! Packed bit vectors used for masks, codes, and template payloads.
//!
//! Bits are addressed LSB-first within 64-bit words internally; the
//! serialized byte form is MSB-first within each byte so that bit 0 of a
//! vector lands in the most significant bit of byte 0.

/// A growable bit vector backed by `u64` words.
///
/// Unused bits past `len` in the last word are kept zero, so equality and
/// popcounts never see stale data.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn new() -> Self {
        Bits { words: Vec::new(), len: 0 }
    }

    /// All-zero vector of `len` bits.
    pub fn zeros(len: usize) -> Self {
        Bits { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut out = Bits::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                out.words[i / 64] |= 1u64 << (i % 64);
            }
        }
        out
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range (len {})", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range (len {})", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn push(&mut self, value: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        if value {
            let i = self.len - 1;
            self.words[i / 64] |= 1u64 << (i % 64);
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    fn zip_words(&self, other: &Bits, f: impl Fn(u64, u64) -> u64) -> Bits {
        assert_eq!(self.len, other.len, "bit length mismatch");
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let mut out = Bits { words, len: self.len };
        out.mask_tail();
        out
    }

    pub fn and(&self, other: &Bits) -> Bits {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Bits) -> Bits {
        self.zip_words(other, |a, b| a | b)
    }

    pub fn xor(&self, other: &Bits) -> Bits {
        self.zip_words(other, |a, b| a ^ b)
    }

    /// Popcount of `self AND other` without allocating.
    pub fn and_count(&self, other: &Bits) -> usize {
        assert_eq!(self.len, other.len, "bit length mismatch");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(&a, &b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// Copy of the half-open bit range `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Bits {
        assert!(start <= end && end <= self.len, "slice {start}..{end} out of range");
        let mut out = Bits::zeros(end - start);
        for i in start..end {
            if self.get(i) {
                out.set(i - start, true);
            }
        }
        out
    }

    pub fn append(&mut self, other: &Bits) {
        for b in other.iter() {
            self.push(b);
        }
    }

    /// Each input bit duplicated: output bit `2i` and `2i+1` both equal input
    /// bit `i`. Used to align one validity bit with a two-bit code unit.
    pub fn duplicate_bits(&self) -> Bits {
        let mut out = Bits::zeros(self.len * 2);
        let n_bytes = self.len.div_ceil(8);
        for byte_idx in 0..n_bytes {
            let b = (self.words[byte_idx / 8] >> (8 * (byte_idx % 8))) as u8;
            let mut x = b as u16;
            x = (x | (x << 4)) & 0x0f0f;
            x = (x | (x << 2)) & 0x3333;
            x = (x | (x << 1)) & 0x5555;
            let spread = (x | (x << 1)) as u64;
            out.words[byte_idx / 4] |= spread << (16 * (byte_idx % 4));
        }
        out.mask_tail();
        out
    }

    /// MSB-first byte serialization; the final byte is zero-padded.
    pub fn to_msb_bytes(&self) -> Vec<u8> {
        let n_bytes = self.len.div_ceil(8);
        (0..n_bytes)
            .map(|byte_idx| {
                let b = (self.words[byte_idx / 8] >> (8 * (byte_idx % 8))) as u8;
                b.reverse_bits()
            })
            .collect()
    }

    /// Inverse of [`to_msb_bytes`](Self::to_msb_bytes). Padding bits in the
    /// last byte are ignored.
    pub fn from_msb_bytes(bytes: &[u8], len: usize) -> Bits {
        assert!(bytes.len() == len.div_ceil(8), "byte count does not match bit length");
        let mut out = Bits::zeros(len);
        for (byte_idx, &b) in bytes.iter().enumerate() {
            out.words[byte_idx / 8] |= (b.reverse_bits() as u64) << (8 * (byte_idx % 8));
        }
        out.mask_tail();
        out
    }

    fn mask_tail(&mut self) {
        let tail = self.len % 64;
        if tail != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        // words past the length can linger after from_msb_bytes rounding
        let needed = self.len.div_ceil(64);
        self.words.truncate(needed);
    }
}

impl std::fmt::Debug for Bits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Bits[{}; ", self.len)?;
        let shown = self.len.min(96);
        for i in 0..shown {
            write!(f, "{}", if self.get(i) { '1' } else { '0' })?;
        }
        if shown < self.len {
            write!(f, "..")?;
        }
        write!(f, "]")
    }
}

impl FromIterator<bool> for Bits {
    fn from_iter<T: IntoIterator<Item = bool>>(iter: T) -> Self {
        let mut out = Bits::new();
        for b in iter {
            out.push(b);
        }
        out
    }
}
