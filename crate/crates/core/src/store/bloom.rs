//! Bloom filter over row ids.
//!
//! Probe positions use double hashing, `g_i = h1 + i * h2 (mod m)`, with
//! both hashes derived from a fixed 64-bit hash so filters written to disk
//! stay valid across builds.
//!
//! Serialized form: `[u32 k][u64 m][u64 n_inserted][m/64 words as u64]`,
//! little-endian.

use crate::hash::{fnv1a64, mix64};

pub const DEFAULT_BITS_PER_KEY: u64 = 10;
pub const DEFAULT_HASHES: u32 = 7;
const MIN_BITS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    words: Vec<u64>,
    m: u64,
    k: u32,
    n_inserted: u64,
}

impl BloomFilter {
    /// Filter with `bits_per_key * expected_keys` bits (at least 64) and `k`
    /// probes.
    pub fn with_capacity(expected_keys: usize, bits_per_key: u64, k: u32) -> Self {
        Self::with_bits((expected_keys as u64 * bits_per_key).max(MIN_BITS), k)
    }

    pub fn with_bits(m: u64, k: u32) -> Self {
        let m = m.max(1);
        BloomFilter {
            words: vec![0; m.div_ceil(64) as usize],
            m,
            k: k.max(1),
            n_inserted: 0,
        }
    }

    pub fn bits(&self) -> u64 {
        self.m
    }

    pub fn hashes(&self) -> u32 {
        self.k
    }

    pub fn len(&self) -> u64 {
        self.n_inserted
    }

    pub fn is_empty(&self) -> bool {
        self.n_inserted == 0
    }

    fn probes(&self, key: &[u8]) -> impl Iterator<Item = u64> + '_ {
        let h1 = mix64(fnv1a64(key));
        let h2 = mix64(h1 ^ 0x5851_f42d_4c95_7f2d) | 1;
        (0..self.k as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % self.m)
    }

    pub fn insert(&mut self, key: &[u8]) {
        let positions: Vec<u64> = self.probes(key).collect();
        for bit in positions {
            self.words[(bit / 64) as usize] |= 1 << (bit % 64);
        }
        self.n_inserted += 1;
    }

    /// False means `key` was never inserted.
    pub fn contains(&self, key: &[u8]) -> bool {
        self.probes(key)
            .all(|bit| self.words[(bit / 64) as usize] & (1 << (bit % 64)) != 0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.words.len() * 8);
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&self.m.to_le_bytes());
        out.extend_from_slice(&self.n_inserted.to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < 20 {
            return None;
        }
        let k = u32::from_le_bytes(bytes[0..4].try_into().ok()?);
        let m = u64::from_le_bytes(bytes[4..12].try_into().ok()?);
        let n_inserted = u64::from_le_bytes(bytes[12..20].try_into().ok()?);
        if k == 0 || m == 0 {
            return None;
        }
        let body = &bytes[20..];
        if body.len() as u64 != m.div_ceil(64) * 8 {
            return None;
        }
        let words = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Some(BloomFilter {
            words,
            m,
            k,
            n_inserted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_false_negatives_and_low_fpr() {
        let n = 10_000;
        let mut bloom = BloomFilter::with_capacity(n, DEFAULT_BITS_PER_KEY, DEFAULT_HASHES);
        assert_eq!(bloom.bits(), 100_000);
        for i in 0..n {
            bloom.insert(format!("member-{i}").as_bytes());
        }
        assert!((0..n).all(|i| bloom.contains(format!("member-{i}").as_bytes())));
        let fp = (0..n)
            .filter(|i| bloom.contains(format!("other-{i}").as_bytes()))
            .count();
        // ~0.8% expected at 10 bits/key and 7 probes
        assert!((fp as f64) / (n as f64) < 0.02, "fp = {fp}");
    }

    #[test]
    fn tiny_filters_and_serialization() {
        let mut bloom = BloomFilter::with_capacity(0, 10, 7);
        assert!(bloom.is_empty());
        assert_eq!(bloom.bits(), 64);
        bloom.insert(b"");
        bloom.insert(b"x");
        let back = BloomFilter::from_bytes(&bloom.to_bytes()).unwrap();
        assert_eq!(back, bloom);
        assert!(back.contains(b"") && back.contains(b"x"));
        assert_eq!(back.len(), 2);
        assert!(BloomFilter::from_bytes(&bloom.to_bytes()[..25]).is_none());
        assert!(BloomFilter::from_bytes(&[]).is_none());
    }
}
