use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use bitvec::prelude::*;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{KeyError, Result};

pub type KeyBits = BitVec<u32, Lsb0>;

/// Unordered node pair; the smaller id is always `a`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodePair {
    pub a: String,
    pub b: String,
}

impl NodePair {
    pub fn new(x: &str, y: &str) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        Self {
            a: a.to_string(),
            b: b.to_string(),
        }
    }
}

impl fmt::Display for NodePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

/// Secret bits shared by one node pair.
///
/// Only counters are stored. Bit `i` of the pool is bit `i` of a ChaCha20
/// keystream seeded per pair, so material can be regenerated for any range
/// without keeping it in memory. Draws always take the oldest unconsumed bits.
#[derive(Debug, Clone)]
pub struct KeyPool {
    pair: NodePair,
    seed: [u8; 32],
    produced: u64,
    consumed: u64,
    produced_by_direction: BTreeMap<(String, String), u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSnapshot {
    pub pair: NodePair,
    pub produced: u64,
    pub consumed: u64,
    pub available: u64,
    pub produced_by_direction: Vec<(String, String, u64)>,
}

impl KeyPool {
    pub fn new(pair: NodePair, store_seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(store_seed.to_le_bytes());
        h.update(b"pool\0");
        h.update(pair.a.as_bytes());
        h.update([0]);
        h.update(pair.b.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        Self {
            pair,
            seed,
            produced: 0,
            consumed: 0,
            produced_by_direction: BTreeMap::new(),
        }
    }

    pub fn pair(&self) -> &NodePair {
        &self.pair
    }

    pub fn produced(&self) -> u64 {
        self.produced
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn available(&self) -> u64 {
        self.produced - self.consumed
    }

    pub fn deposit(&mut self, n_bits: u64) {
        self.produced += n_bits;
    }

    /// Deposit attributed to the physical direction `from -> to`.
    pub fn deposit_directed(&mut self, from: &str, to: &str, n_bits: u64) {
        self.deposit(n_bits);
        *self
            .produced_by_direction
            .entry((from.to_string(), to.to_string()))
            .or_default() += n_bits;
    }

    /// Consumes `n_bits` without materializing them and returns their
    /// position in the pool's bit sequence.
    pub fn debit(&mut self, n_bits: u64) -> Result<Range<u64>> {
        if n_bits > self.available() {
            return Err(KeyError::InsufficientKey {
                pair: self.pair.clone(),
                needed: n_bits,
                available: self.available(),
            });
        }
        let start = self.consumed;
        self.consumed += n_bits;
        Ok(start..self.consumed)
    }

    pub fn draw(&mut self, n_bits: u64) -> Result<KeyBits> {
        let range = self.debit(n_bits)?;
        Ok(self.material(range))
    }

    /// Key material at an arbitrary range of the pool's bit sequence.
    pub fn material(&self, range: Range<u64>) -> KeyBits {
        if range.is_empty() {
            return KeyBits::new();
        }
        let first_word = range.start / 32;
        let offset = (range.start % 32) as usize;
        let len = (range.end - range.start) as usize;
        let n_words = (offset + len).div_ceil(32);
        let mut rng = ChaCha20Rng::from_seed(self.seed);
        rng.set_word_pos(u128::from(first_word));
        let words: Vec<u32> = (0..n_words).map(|_| rng.next_u32()).collect();
        KeyBits::from_vec(words)[offset..offset + len].to_bitvec()
    }

    pub fn snapshot(&self) -> PoolSnapshot {
        PoolSnapshot {
            pair: self.pair.clone(),
            produced: self.produced,
            consumed: self.consumed,
            available: self.available(),
            produced_by_direction: self
                .produced_by_direction
                .iter()
                .map(|((f, t), n)| (f.clone(), t.clone(), *n))
                .collect(),
        }
    }
}
