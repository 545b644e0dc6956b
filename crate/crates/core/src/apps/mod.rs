//! Key consumers: the one-time-pad telephone encryptor and the AES seed
//! refresh of a VPN gateway.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::keymgmt::{xor_bits, KeyBits, KeyError, KeyStore, RelayRoute};

pub const AES_KEY_BITS: u64 = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AppError {
    #[error("session {session}: key exhausted, need {needed} bits, {available} available")]
    KeyExhausted {
        session: String,
        needed: u64,
        available: u64,
    },
    #[error("session {session}: {source}")]
    Key { session: String, source: KeyError },
    #[error("invalid session {session}: {reason}")]
    InvalidSession { session: String, reason: String },
    #[error("session {session}: no key pending for a {len}-bit ciphertext")]
    OutOfSync { session: String, len: usize },
}

pub type Result<T> = std::result::Result<T, AppError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OtpMode {
    /// Key fetched from the pools as the payload flows.
    Realtime,
    /// Key copied to a memory card ahead of use.
    Preloaded { card_bits: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Realtime,
    PreloadRequired,
}

pub fn otp_feasible(data_rate_bps: f64, key_rate_bps: f64) -> Feasibility {
    if key_rate_bps >= data_rate_bps {
        Feasibility::Realtime
    } else {
        Feasibility::PreloadRequired
    }
}

/// AES-256 seed keys per second a path of the given key rate can refresh.
pub fn vpn_refresh_rate(path_key_rate_bps: f64) -> u64 {
    if path_key_rate_bps.is_nan() || path_key_rate_bps <= 0.0 {
        return 0;
    }
    (path_key_rate_bps / AES_KEY_BITS as f64).floor() as u64
}

/// Smallest pool balance along a route.
pub fn route_available(store: &KeyStore, route: &RelayRoute) -> u64 {
    route
        .hops()
        .map(|(a, b)| store.available(a, b))
        .min()
        .unwrap_or(0)
}

fn take_route(store: &mut KeyStore, route: &RelayRoute, n_bits: u64) -> std::result::Result<(), KeyError> {
    match route.nodes() {
        [a, b] => store.debit(a, b, n_bits).map(|_| ()),
        _ => store.relay_debit(route, n_bits),
    }
}

/// Key for one end-to-end transfer: the copy used by the sender and the copy
/// that arrives at the receiver.
fn fetch_route(
    store: &mut KeyStore,
    route: &RelayRoute,
    n_bits: u64,
) -> std::result::Result<(KeyBits, KeyBits), KeyError> {
    match route.nodes() {
        [a, b] => {
            let k = store.draw(a, b, n_bits)?;
            Ok((k.clone(), k))
        }
        _ => {
            let out = store.relay_key(route, n_bits)?;
            Ok((out.source_key, out.delivered_key))
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Card {
    loaded_bits: u64,
    used_bits: u64,
    sender: Option<KeyBits>,
    receiver: Option<KeyBits>,
    receiver_used: usize,
}

impl Card {
    fn remaining(&self) -> u64 {
        self.loaded_bits - self.used_bits
    }
}

#[derive(Debug, Clone)]
pub struct OtpSession {
    id: String,
    route: RelayRoute,
    mode: OtpMode,
    pub data_rate_bps: f64,
    card: Card,
    pending: VecDeque<KeyBits>,
    consumed_bits: u64,
}

impl OtpSession {
    pub fn new(id: &str, route: RelayRoute, mode: OtpMode, data_rate_bps: f64) -> Result<Self> {
        let invalid = |reason: &str| AppError::InvalidSession {
            session: id.to_string(),
            reason: reason.to_string(),
        };
        if let OtpMode::Preloaded { card_bits: 0 } = mode {
            return Err(invalid("card_bits must be positive"));
        }
        if !(data_rate_bps >= 0.0) {
            return Err(invalid("data rate must be non-negative"));
        }
        Ok(Self {
            id: id.to_string(),
            route,
            mode,
            data_rate_bps,
            card: Card::default(),
            pending: VecDeque::new(),
            consumed_bits: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> OtpMode {
        self.mode
    }

    pub fn route(&self) -> &RelayRoute {
        &self.route
    }

    /// Key bits drawn from the pools so far, card loads included.
    pub fn consumed_bits(&self) -> u64 {
        self.consumed_bits
    }

    pub fn card_remaining(&self) -> u64 {
        self.card.remaining()
    }

    fn exhausted(&self, needed: u64, available: u64) -> AppError {
        AppError::KeyExhausted {
            session: self.id.clone(),
            needed,
            available,
        }
    }

    fn card_bits(&self) -> Result<u64> {
        match self.mode {
            OtpMode::Preloaded { card_bits } => Ok(card_bits),
            OtpMode::Realtime => Err(AppError::InvalidSession {
                session: self.id.clone(),
                reason: "realtime sessions have no card".into(),
            }),
        }
    }

    /// Tops the card up by one card's worth of key. With `materialize` the
    /// key itself is copied; otherwise only the pools are debited.
    pub fn load_card(&mut self, store: &mut KeyStore, materialize: bool) -> Result<()> {
        let n = self.card_bits()?;
        let available = route_available(store, &self.route);
        if available < n {
            return Err(self.exhausted(n, available));
        }
        if materialize {
            let (s, r) = fetch_route(store, &self.route, n).map_err(|source| AppError::Key {
                session: self.id.clone(),
                source,
            })?;
            let card = &mut self.card;
            let used = card.used_bits as usize;
            let keep = |old: &Option<KeyBits>, new: KeyBits, from: usize| {
                let mut bits = old.as_ref().map(|b| b[from..].to_bitvec()).unwrap_or_default();
                bits.extend_from_bitslice(&new);
                bits
            };
            card.sender = Some(keep(&card.sender, s, used));
            let r_from = card.receiver_used;
            card.receiver = Some(keep(&card.receiver, r, r_from));
            card.receiver_used = 0;
            card.loaded_bits -= card.used_bits;
            card.used_bits = 0;
        } else {
            take_route(store, &self.route, n).map_err(|source| AppError::Key {
                session: self.id.clone(),
                source,
            })?;
        }
        self.card.loaded_bits += n;
        self.consumed_bits += n;
        Ok(())
    }

    /// Accounting-only use of `n_bits` of key.
    pub fn consume(&mut self, store: &mut KeyStore, n_bits: u64) -> Result<()> {
        match self.mode {
            OtpMode::Realtime => {
                let available = route_available(store, &self.route);
                if available < n_bits {
                    return Err(self.exhausted(n_bits, available));
                }
                take_route(store, &self.route, n_bits).map_err(|source| AppError::Key {
                    session: self.id.clone(),
                    source,
                })?;
                self.consumed_bits += n_bits;
            }
            OtpMode::Preloaded { .. } => {
                if self.card.remaining() < n_bits {
                    return Err(self.exhausted(n_bits, self.card.remaining()));
                }
                self.card.used_bits += n_bits;
            }
        }
        Ok(())
    }

    /// XORs `plaintext` with fresh key. The receiver's copy of that key is
    /// queued for [`OtpSession::decrypt`].
    pub fn encrypt(&mut self, store: &mut KeyStore, plaintext: &KeyBits) -> Result<KeyBits> {
        let n = plaintext.len() as u64;
        match self.mode {
            OtpMode::Realtime => {
                let available = route_available(store, &self.route);
                if available < n {
                    return Err(self.exhausted(n, available));
                }
                let (s, r) = fetch_route(store, &self.route, n).map_err(|source| AppError::Key {
                    session: self.id.clone(),
                    source,
                })?;
                self.consumed_bits += n;
                self.pending.push_back(r);
                Ok(xor_bits(plaintext, &s))
            }
            OtpMode::Preloaded { .. } => {
                let remaining = self.card.remaining();
                let Some(sender) = self.card.sender.as_ref() else {
                    return Err(self.exhausted(n, 0));
                };
                if remaining < n {
                    return Err(self.exhausted(n, remaining));
                }
                let from = self.card.used_bits as usize;
                let key = sender[from..from + n as usize].to_bitvec();
                self.card.used_bits += n;
                Ok(xor_bits(plaintext, &key))
            }
        }
    }

    /// Receiver side: strips the pad from the next ciphertext in order.
    pub fn decrypt(&mut self, ciphertext: &KeyBits) -> Result<KeyBits> {
        let len = ciphertext.len();
        let out_of_sync = || AppError::OutOfSync {
            session: self.id.clone(),
            len,
        };
        match self.mode {
            OtpMode::Realtime => {
                if self.pending.front().map(|k| k.len()) != Some(len) {
                    return Err(out_of_sync());
                }
                let key = self.pending.pop_front().expect("checked above");
                Ok(xor_bits(ciphertext, &key))
            }
            OtpMode::Preloaded { .. } => {
                let from = self.card.receiver_used;
                let key = match &self.card.receiver {
                    Some(r) if from + len <= r.len() => r[from..from + len].to_bitvec(),
                    _ => return Err(out_of_sync()),
                };
                self.card.receiver_used += len;
                Ok(xor_bits(ciphertext, &key))
            }
        }
    }
}

/// AES-256 gateway pair that replaces its seed key from the pools.
#[derive(Debug, Clone)]
pub struct VpnTunnel {
    id: String,
    route: RelayRoute,
    pub refresh_period_s: f64,
    refreshes: u64,
    missed: u64,
}

impl VpnTunnel {
    pub fn new(id: &str, route: RelayRoute, refresh_period_s: f64) -> Result<Self> {
        if !(refresh_period_s > 0.0) {
            return Err(AppError::InvalidSession {
                session: id.to_string(),
                reason: format!("refresh period must be positive, got {refresh_period_s}"),
            });
        }
        Ok(Self {
            id: id.to_string(),
            route,
            refresh_period_s,
            refreshes: 0,
            missed: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn route(&self) -> &RelayRoute {
        &self.route
    }

    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    pub fn missed(&self) -> u64 {
        self.missed
    }

    pub fn consumed_bits(&self) -> u64 {
        self.refreshes * AES_KEY_BITS
    }

    /// Refreshes due in `(from_s, to_s]`.
    pub fn due(&self, from_s: f64, to_s: f64) -> u64 {
        let k = |t: f64| (t / self.refresh_period_s).floor().max(0.0) as u64;
        k(to_s).saturating_sub(k(from_s))
    }

    /// Performs up to `due` refreshes in one debit; the ones the pools cannot
    /// cover are missed. Same outcome as `due` calls to [`VpnTunnel::refresh`].
    pub fn refresh_many(&mut self, store: &mut KeyStore, due: u64) -> Result<u64> {
        let afford = (route_available(store, &self.route) / AES_KEY_BITS).min(due);
        if afford > 0 {
            take_route(store, &self.route, afford * AES_KEY_BITS).map_err(|source| AppError::Key {
                session: self.id.clone(),
                source,
            })?;
        }
        self.refreshes += afford;
        self.missed += due - afford;
        Ok(afford)
    }

    /// One seed-key replacement.
    pub fn refresh(&mut self, store: &mut KeyStore) -> Result<()> {
        let available = route_available(store, &self.route);
        if available < AES_KEY_BITS {
            self.missed += 1;
            return Err(AppError::KeyExhausted {
                session: self.id.clone(),
                needed: AES_KEY_BITS,
                available,
            });
        }
        take_route(store, &self.route, AES_KEY_BITS).map_err(|source| AppError::Key {
            session: self.id.clone(),
            source,
        })?;
        self.refreshes += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
