//! Counter-mode line encryption with a keyed pseudorandom pad.
//!
//! The pad for `(key, addr, ctr)` is ChaCha20 keystream block `ctr` on stream
//! `addr`, read as eight little-endian `u64` words. Counters live in the
//! simulator, not in memory cells.

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

pub const LINE_WORDS: usize = 8;
pub type Line = [u64; LINE_WORDS];

/// Pad for one line write.
pub fn pad(key: &[u8; 32], addr: u64, ctr: u64) -> Line {
    let mut rng = ChaCha20Rng::from_seed(*key);
    rng.set_stream(addr);
    rng.set_word_pos(ctr as u128 * 16);
    let mut out = [0u64; LINE_WORDS];
    for w in &mut out {
        *w = rng.next_u64();
    }
    out
}

fn xor(a: &Line, b: &Line) -> Line {
    let mut out = *a;
    for (o, x) in out.iter_mut().zip(b) {
        *o ^= x;
    }
    out
}

/// Key plus per-line write counters.
#[derive(Clone, Debug)]
pub struct LineCipherState {
    key: [u8; 32],
    counters: HashMap<u64, u64>,
}

impl LineCipherState {
    pub fn new(key: [u8; 32]) -> Self {
        Self { key, counters: HashMap::new() }
    }

    /// Derives the key from a 64-bit seed.
    pub fn from_seed(seed: u64) -> Self {
        let mut key = [0u8; 32];
        ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut key);
        Self::new(key)
    }

    pub fn key(&self) -> &[u8; 32] {
        &self.key
    }

    /// Counter of the last write to `addr` (0 if never written).
    pub fn counter(&self, addr: u64) -> u64 {
        self.counters.get(&addr).copied().unwrap_or(0)
    }

    /// Advances the counter of `addr` and returns the ciphertext with the
    /// counter used.
    pub fn encrypt_line(&mut self, addr: u64, plaintext: &Line) -> Result<(Line, u64)> {
        let ctr = self.counter(addr).checked_add(1).ok_or(Error::CounterExhausted(addr))?;
        self.counters.insert(addr, ctr);
        Ok((xor(plaintext, &pad(&self.key, addr, ctr)), ctr))
    }

    pub fn decrypt_line(&self, addr: u64, ciphertext: &Line, ctr: u64) -> Line {
        xor(ciphertext, &pad(&self.key, addr, ctr))
    }

    /// Sets the counter of `addr`, e.g. to resume a run.
    pub fn set_counter(&mut self, addr: u64, ctr: u64) {
        self.counters.insert(addr, ctr);
    }
}
