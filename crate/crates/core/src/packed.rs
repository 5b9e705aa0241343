//! Bit-packed code blocks and the `TSHC` codes file.
//!
//! Layout: each code occupies `ceil(m / 64)` little-endian `u64` words, points
//! stored one after another. Bit `k` of a code lives in word `k / 64` at bit
//! position `k % 64`; a set bit means `+1`. Padding bits above `m` are zero.
//!
//! File: magic `TSHC`, `u32` version, `u64` N, `u32` m, then `N * ceil(m/64)`
//! words, all little-endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TSHC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PackedError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("not a codes file (bad magic)")]
    BadMagic,
    #[error("unsupported codes file version {0}")]
    BadVersion(u32),
    #[error("codes file truncated: expected {expected} words, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("codes file has {0} trailing bytes")]
    Trailing(usize),
    #[error("bit count must be at least 1")]
    NoBits,
    #[error("code has {found} entries, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("code entries must be -1 or +1")]
    NotSign,
}

#[inline]
pub fn words_per_code(m: usize) -> usize {
    m.div_ceil(64)
}

/// Mask of the used bits in word `w` of an `m`-bit code.
#[inline]
pub fn word_mask(m: usize, w: usize) -> u64 {
    let used = m.saturating_sub(w * 64).min(64);
    if used == 64 {
        u64::MAX
    } else {
        (1u64 << used) - 1
    }
}

/// Packs one `+-1` code (sign(0) already resolved by the caller).
pub fn pack_signs(code: &[i8], out: &mut [u64]) {
    out.iter_mut().for_each(|w| *w = 0);
    for (k, &b) in code.iter().enumerate() {
        if b > 0 {
            out[k / 64] |= 1u64 << (k % 64);
        }
    }
}

pub fn unpack_signs(words: &[u64], m: usize) -> Vec<i8> {
    (0..m)
        .map(|k| if words[k / 64] >> (k % 64) & 1 == 1 { 1 } else { -1 })
        .collect()
}

/// `N` codes of `m` bits, point-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    n: usize,
    m: usize,
    words: Vec<u64>,
}

impl PackedCodes {
    pub fn empty(m: usize) -> Result<Self, PackedError> {
        if m == 0 {
            return Err(PackedError::NoBits);
        }
        Ok(Self { n: 0, m, words: Vec::new() })
    }

    /// Wraps raw words; padding bits are cleared.
    pub fn from_words(n: usize, m: usize, mut words: Vec<u64>) -> Result<Self, PackedError> {
        if m == 0 {
            return Err(PackedError::NoBits);
        }
        let wpc = words_per_code(m);
        if words.len() != n * wpc {
            return Err(PackedError::Length {
                expected: n * wpc,
                found: words.len(),
            });
        }
        let last = wpc - 1;
        let mask = word_mask(m, last);
        for i in 0..n {
            words[i * wpc + last] &= mask;
        }
        Ok(Self { n, m, words })
    }

    pub fn from_sign_rows<R: AsRef<[i8]>>(m: usize, rows: &[R]) -> Result<Self, PackedError> {
        let mut out = Self::empty(m)?;
        for r in rows {
            out.push_signs(r.as_ref())?;
        }
        Ok(out)
    }

    pub fn push_signs(&mut self, code: &[i8]) -> Result<(), PackedError> {
        if code.len() != self.m {
            return Err(PackedError::Length {
                expected: self.m,
                found: code.len(),
            });
        }
        if code.iter().any(|&b| b != 1 && b != -1) {
            return Err(PackedError::NotSign);
        }
        let wpc = self.words_per_code();
        let start = self.words.len();
        self.words.resize(start + wpc, 0);
        pack_signs(code, &mut self.words[start..]);
        self.n += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bits(&self) -> usize {
        self.m
    }

    pub fn words_per_code(&self) -> usize {
        words_per_code(self.m)
    }

    #[inline]
    pub fn code(&self, i: usize) -> &[u64] {
        let wpc = self.words_per_code();
        &self.words[i * wpc..(i + 1) * wpc]
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn unpack(&self, i: usize) -> Vec<i8> {
        unpack_signs(self.code(i), self.m)
    }

    /// Codes for the listed rows, in order.
    pub fn select(&self, idx: &[usize]) -> PackedCodes {
        let mut words = Vec::with_capacity(idx.len() * self.words_per_code());
        for &i in idx {
            words.extend_from_slice(self.code(i));
        }
        PackedCodes {
            n: idx.len(),
            m: self.m,
            words,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), PackedError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + self.words.len() * 8);
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PackedError> {
        Self::read_from(bytes)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, PackedError> {
        let mut header = [0u8; 20];
        r.read_exact(&mut header).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => PackedError::BadMagic,
            _ => PackedError::Io(e),
        })?;
        if &header[0..4] != MAGIC {
            return Err(PackedError::BadMagic);
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(PackedError::BadVersion(version));
        }
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        if m == 0 {
            return Err(PackedError::NoBits);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        let expected = n
            .checked_mul(words_per_code(m))
            .ok_or(PackedError::Truncated { expected: usize::MAX, found: rest.len() / 8 })?;
        let have = rest.len() / 8;
        if have < expected {
            return Err(PackedError::Truncated { expected, found: have });
        }
        if rest.len() != expected * 8 {
            return Err(PackedError::Trailing(rest.len() - expected * 8));
        }
        let words = rest
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_words(n, m, words)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PackedError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PackedError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_little_endian_within_words() {
        let mut codes = PackedCodes::empty(70).unwrap();
        let mut c = vec![-1i8; 70];
        c[0] = 1;
        c[65] = 1;
        codes.push_signs(&c).unwrap();
        assert_eq!(codes.code(0), &[1, 2]);
        let bytes = codes.to_bytes();
        assert_eq!(&bytes[..4], b"TSHC");
        assert_eq!(bytes.len(), 4 + 4 + 8 + 4 + 16);
        assert_eq!(bytes[20], 1);
        assert_eq!(bytes[28], 2);
    }

    #[test]
    fn header_only_file() {
        let codes = PackedCodes::empty(12).unwrap();
        let bytes = codes.to_bytes();
        assert_eq!(bytes.len(), 20);
        assert_eq!(PackedCodes::from_bytes(&bytes).unwrap(), codes);
    }

    #[test]
    fn rejects_bad_files() {
        let codes = PackedCodes::from_sign_rows(8, &[vec![1i8; 8], vec![-1; 8]]).unwrap();
        let bytes = codes.to_bytes();
        assert!(matches!(PackedCodes::from_bytes(&bytes[..bytes.len() - 3]), Err(PackedError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(PackedCodes::from_bytes(&bad), Err(PackedError::BadMagic)));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(PackedCodes::from_bytes(&bad), Err(PackedError::BadVersion(9))));
        let mut bad = bytes;
        bad.push(0);
        assert!(matches!(PackedCodes::from_bytes(&bad), Err(PackedError::Trailing(1))));
        assert!(matches!(PackedCodes::from_bytes(b"TS"), Err(PackedError::BadMagic)));
    }

    #[test]
    fn padding_is_cleared() {
        let codes = PackedCodes::from_words(1, 3, vec![u64::MAX]).unwrap();
        assert_eq!(codes.code(0), &[0b111]);
    }

    fn arb_codes() -> impl Strategy<Value = (usize, Vec<Vec<i8>>)> {
        (1usize..200).prop_flat_map(|m| {
            (
                Just(m),
                proptest::collection::vec(proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], m), 0..20),
            )
        })
    }

    proptest! {
        #[test]
        fn pack_unpack_and_file_round_trip((m, rows) in arb_codes()) {
            let codes = PackedCodes::from_sign_rows(m, &rows).unwrap();
            for (i, r) in rows.iter().enumerate() {
                prop_assert_eq!(&codes.unpack(i), r);
            }
            prop_assert_eq!(PackedCodes::from_bytes(&codes.to_bytes()).unwrap(), codes);
        }
    }
}
