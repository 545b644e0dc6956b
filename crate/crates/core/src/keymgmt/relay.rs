use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::{KeyBits, KeyError, KeyPool, NodePair, PoolSnapshot, Result};

/// Ordered chain of nodes from key source to destination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelayRoute {
    nodes: Vec<String>,
}

impl RelayRoute {
    pub fn new<S: AsRef<str>>(nodes: &[S]) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(KeyError::InvalidRoute(
                "a route needs at least two nodes".into(),
            ));
        }
        let nodes: Vec<String> = nodes.iter().map(|n| n.as_ref().to_string()).collect();
        if let Some(w) = nodes.windows(2).find(|w| w[0] == w[1]) {
            return Err(KeyError::InvalidRoute(format!(
                "node {} repeated on consecutive hops",
                w[0]
            )));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn hops(&self) -> impl Iterator<Item = (&str, &str)> {
        self.nodes.windows(2).map(|w| (w[0].as_str(), w[1].as_str()))
    }

    pub fn source(&self) -> &str {
        &self.nodes[0]
    }

    pub fn destination(&self) -> &str {
        self.nodes.last().expect("route has at least two nodes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayHop {
    pub from: String,
    pub to: String,
    pub pad_range: Range<u64>,
    pub ciphertext: KeyBits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayOutcome {
    pub source_key: KeyBits,
    pub delivered_key: KeyBits,
    pub hops: Vec<RelayHop>,
}

pub fn xor_bits(a: &KeyBits, b: &KeyBits) -> KeyBits {
    assert_eq!(a.len(), b.len(), "xor of unequal-length bit strings");
    a.iter().by_vals().zip(b.iter().by_vals()).map(|(x, y)| x ^ y).collect()
}

/// Sustainable end-to-end relay rate: the slowest hop.
pub fn relay_throughput(hop_rates_bps: &[f64]) -> f64 {
    hop_rates_bps
        .iter()
        .copied()
        .reduce(f64::min)
        .unwrap_or(0.0)
        .max(0.0)
}

/// All pools of a network.
#[derive(Debug, Clone)]
pub struct KeyStore {
    seed: u64,
    pools: BTreeMap<NodePair, KeyPool>,
    key_source: ChaCha20Rng,
}

pub type SharedKeyStore = Arc<Mutex<KeyStore>>;

impl KeyStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            pools: BTreeMap::new(),
            key_source: ChaCha20Rng::seed_from_u64(seed ^ 0x005e_ed0f_4e1a_u64),
        }
    }

    pub fn shared(self) -> SharedKeyStore {
        Arc::new(Mutex::new(self))
    }

    pub fn ensure_pool(&mut self, x: &str, y: &str) -> &mut KeyPool {
        let pair = NodePair::new(x, y);
        let seed = self.seed;
        self.pools
            .entry(pair.clone())
            .or_insert_with(|| KeyPool::new(pair, seed))
    }

    pub fn pool(&self, x: &str, y: &str) -> Option<&KeyPool> {
        self.pools.get(&NodePair::new(x, y))
    }

    pub fn pools(&self) -> impl Iterator<Item = &KeyPool> {
        self.pools.values()
    }

    pub fn deposit(&mut self, from: &str, to: &str, n_bits: u64) {
        self.ensure_pool(from, to).deposit_directed(from, to, n_bits);
    }

    pub fn available(&self, x: &str, y: &str) -> u64 {
        self.pool(x, y).map_or(0, KeyPool::available)
    }

    fn pool_mut(&mut self, x: &str, y: &str, needed: u64) -> Result<&mut KeyPool> {
        let pair = NodePair::new(x, y);
        self.pools
            .get_mut(&pair)
            .ok_or(KeyError::InsufficientKey {
                pair,
                needed,
                available: 0,
            })
    }

    pub fn draw(&mut self, x: &str, y: &str, n_bits: u64) -> Result<KeyBits> {
        self.pool_mut(x, y, n_bits)?.draw(n_bits)
    }

    pub fn debit(&mut self, x: &str, y: &str, n_bits: u64) -> Result<Range<u64>> {
        self.pool_mut(x, y, n_bits)?.debit(n_bits)
    }

    fn check_route(&self, route: &RelayRoute, n_bits: u64) -> Result<()> {
        for (hop, (from, to)) in route.hops().enumerate() {
            let pair = NodePair::new(from, to);
            let pool = self
                .pools
                .get(&pair)
                .ok_or_else(|| KeyError::NoPool {
                    hop,
                    pair: pair.clone(),
                })?;
            if pool.available() < n_bits {
                return Err(KeyError::HopUnderProvisioned {
                    hop,
                    pair,
                    needed: n_bits,
                    available: pool.available(),
                });
            }
        }
        Ok(())
    }

    /// Delivers a fresh `n_bits` key from the route's source to its
    /// destination. Every hop re-encrypts the key under its own pool. Either
    /// all hops are debited or none is.
    pub fn relay_key(&mut self, route: &RelayRoute, n_bits: u64) -> Result<RelayOutcome> {
        self.check_route(route, n_bits)?;
        let source_key = self.fresh_key(n_bits);
        let mut in_flight = source_key.clone();
        let mut hops = Vec::new();
        for (from, to) in route.hops() {
            let pool = self.pool_mut(from, to, n_bits)?;
            let pad_range = pool.debit(n_bits)?;
            let pad = pool.material(pad_range.clone());
            let ciphertext = xor_bits(&in_flight, &pad);
            // The next node holds the same pad and recovers the key.
            in_flight = xor_bits(&ciphertext, &pad);
            hops.push(RelayHop {
                from: from.to_string(),
                to: to.to_string(),
                pad_range,
                ciphertext,
            });
        }
        Ok(RelayOutcome {
            source_key,
            delivered_key: in_flight,
            hops,
        })
    }

    /// Accounting-only relay: debits every hop without generating material.
    pub fn relay_debit(&mut self, route: &RelayRoute, n_bits: u64) -> Result<()> {
        self.check_route(route, n_bits)?;
        for (from, to) in route.hops() {
            self.pool_mut(from, to, n_bits)?.debit(n_bits)?;
        }
        Ok(())
    }

    fn fresh_key(&mut self, n_bits: u64) -> KeyBits {
        let words = (n_bits as usize).div_ceil(32);
        let v: Vec<u32> = (0..words).map(|_| self.key_source.next_u32()).collect();
        let mut bits = KeyBits::from_vec(v);
        bits.truncate(n_bits as usize);
        bits
    }

    pub fn snapshot(&self) -> Vec<PoolSnapshot> {
        self.pools.values().map(KeyPool::snapshot).collect()
    }
}
