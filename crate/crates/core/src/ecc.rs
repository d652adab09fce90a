//! Hamming (72,64) SECDED and error-correcting pointers.
//!
//! A SECDED codeword is a `u128`: bits 0..64 hold the data, bits 64..71 the
//! Hamming checks `c0..c6` and bit 71 the overall parity. Data bit `d` sits at
//! Hamming position `DATA_POS[d]`, the `d`-th position in `1..=71` that is not
//! a power of two; check `c_i` sits at position `2^i`.

use crate::bits::{gather_left, gather_right, interleave};
use crate::error::{Error, Result};

const fn data_positions() -> [u8; 64] {
    let mut out = [0u8; 64];
    let mut pos = 1u8;
    let mut d = 0;
    while d < 64 {
        if pos & (pos - 1) != 0 {
            out[d] = pos;
            d += 1;
        }
        pos += 1;
    }
    out
}

const DATA_POS: [u8; 64] = data_positions();

/// For each check bit, the data bits it covers.
const fn check_masks() -> [u64; 7] {
    let mut out = [0u64; 7];
    let mut d = 0;
    while d < 64 {
        let mut i = 0;
        while i < 7 {
            if DATA_POS[d] >> i & 1 == 1 {
                out[i] |= 1 << d;
            }
            i += 1;
        }
        d += 1;
    }
    out
}

const CHECK_MASKS: [u64; 7] = check_masks();

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SecdedStatus {
    Clean,
    Corrected,
    DetectedDouble,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SecdedWord {
    pub bits: u128,
}

impl SecdedWord {
    pub fn from_parts(data: u64, check: u8) -> Self {
        Self { bits: data as u128 | (check as u128) << 64 }
    }

    pub fn data(&self) -> u64 {
        self.bits as u64
    }

    /// `c0..c6` in bits 0..7 and the overall parity in bit 7.
    pub fn check(&self) -> u8 {
        (self.bits >> 64) as u8
    }

    pub fn flip(&self, bit: u32) -> Self {
        assert!(bit < 72);
        Self { bits: self.bits ^ 1 << bit }
    }
}

fn hamming_checks(data: u64) -> u8 {
    CHECK_MASKS
        .iter()
        .enumerate()
        .fold(0u8, |acc, (i, m)| acc | (((data & m).count_ones() & 1) as u8) << i)
}

pub fn secded_encode(data: u64) -> SecdedWord {
    let c = hamming_checks(data);
    let overall = (data.count_ones() + c.count_ones()) & 1;
    SecdedWord::from_parts(data, c | (overall as u8) << 7)
}

/// Corrects any single flipped bit and flags any two flipped bits.
pub fn secded_decode(word: SecdedWord) -> (u64, SecdedStatus) {
    let data = word.data();
    let check = word.check();
    let syndrome = (hamming_checks(data) ^ check) & 0x7F;
    let parity = (word.bits.count_ones() & 1) == 1;
    match (syndrome, parity) {
        (0, false) => (data, SecdedStatus::Clean),
        (_, false) => (data, SecdedStatus::DetectedDouble),
        (0, true) => (data, SecdedStatus::Corrected),
        (s, true) => {
            if s & (s - 1) == 0 {
                // a check bit flipped
                (data, SecdedStatus::Corrected)
            } else if let Some(d) = DATA_POS.iter().position(|&p| p == s) {
                (data ^ 1 << d, SecdedStatus::Corrected)
            } else {
                (data, SecdedStatus::DetectedDouble)
            }
        }
    }
}

/// Check cells for a pair of MLC words under digit-plane SECDED.
///
/// One codeword covers the left digits of both words, the other the right
/// digits, so a stuck cell upsets at most one bit of each. Returns the four
/// check cells of each word, packed like their data.
pub fn secded_pair_encode(a: u64, b: u64) -> (u64, u64) {
    let left = gather_left(a) << 32 | gather_left(b);
    let right = gather_right(a) << 32 | gather_right(b);
    let flat = interleave(secded_encode(left).check() as u64, secded_encode(right).check() as u64);
    (flat >> 8, flat & 0xFF)
}

/// Inverts [`secded_pair_encode`]; `None` when either plane detects a double
/// error.
pub fn secded_pair_decode(a: u64, b: u64, check_a: u64, check_b: u64) -> Option<(u64, u64)> {
    let flat = (check_a & 0xFF) << 8 | check_b & 0xFF;
    let plane = |data: u64, check: u64| {
        let (d, st) = secded_decode(SecdedWord::from_parts(data, check as u8));
        (st != SecdedStatus::DetectedDouble).then_some(d)
    };
    let left = plane(gather_left(a) << 32 | gather_left(b), gather_left(flat))?;
    let right = plane(gather_right(a) << 32 | gather_right(b), gather_right(flat))?;
    Some((interleave(left >> 32, right >> 32), interleave(left & 0xFFFF_FFFF, right & 0xFFFF_FFFF)))
}

/// One pointer-and-replacement entry of an ECP table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EcpEntry {
    pub cell: u8,
    pub symbol: u8,
}

/// Row-level error-correcting pointers over up to 256 cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EcpTable {
    capacity: usize,
    entries: Vec<EcpEntry>,
}

impl EcpTable {
    pub const DEFAULT_CAPACITY: usize = 3;
    /// Bits per entry: 8-bit pointer plus a 2-bit symbol.
    pub const ENTRY_BITS: u32 = 10;

    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: Vec::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[EcpEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cells holding the serialised table, two bits each.
    pub fn storage_cells(&self) -> u32 {
        (self.capacity as u32 * Self::ENTRY_BITS).div_ceil(2)
    }

    /// Entries packed first-to-last from the most significant end; unused
    /// entries are zero.
    pub fn to_bits(&self) -> u64 {
        (0..self.capacity).fold(0u64, |acc, e| {
            let v = self.entries.get(e).map_or(0, |x| (x.cell as u64) << 2 | x.symbol as u64);
            acc << Self::ENTRY_BITS | v
        })
    }
}

impl Default for EcpTable {
    fn default() -> Self {
        Self::new(Self::DEFAULT_CAPACITY)
    }
}

/// Updates `table` so every stuck cell that disagrees with `intended` is
/// covered. Existing entries keep their cells and take the new symbols; new
/// cells are added in ascending order.
pub fn ecp_assign(intended: &[u8], stuck: &[Option<u8>], table: &EcpTable) -> Result<EcpTable> {
    if intended.len() != stuck.len() || intended.len() > 256 {
        return Err(Error::InvalidInput("row and stuck map must align (<= 256 cells)".into()));
    }
    let mut out = table.clone();
    for e in &mut out.entries {
        e.symbol = intended[e.cell as usize];
    }
    for (cell, st) in stuck.iter().enumerate() {
        if let Some(frozen) = st {
            let wrong = *frozen != intended[cell];
            if wrong && !out.entries.iter().any(|e| e.cell as usize == cell) {
                out.entries.push(EcpEntry { cell: cell as u8, symbol: intended[cell] });
            }
        }
    }
    if out.entries.len() > out.capacity {
        return Err(Error::EcpExhausted { needed: out.entries.len(), capacity: out.capacity });
    }
    Ok(out)
}

/// Replaces every pointed-to cell with its stored symbol.
pub fn ecp_apply(row: &[u8], table: &EcpTable) -> Vec<u8> {
    let mut out = row.to_vec();
    for e in &table.entries {
        if let Some(c) = out.get_mut(e.cell as usize) {
            *c = e.symbol;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_uses_all_non_power_positions() {
        assert_eq!(DATA_POS[0], 3);
        assert_eq!(DATA_POS[63], 71);
        assert!(DATA_POS.iter().all(|p| p & (p - 1) != 0));
    }

    #[test]
    fn clean_roundtrip() {
        for d in [0u64, u64::MAX, 0xDEAD_BEEF_0123_4567] {
            assert_eq!(secded_decode(secded_encode(d)), (d, SecdedStatus::Clean));
        }
    }

    #[test]
    fn every_single_flip_is_corrected() {
        for d in [0u64, u64::MAX, 0x0F0F_1234_5678_9ABC] {
            let w = secded_encode(d);
            for b in 0..72 {
                assert_eq!(secded_decode(w.flip(b)), (d, SecdedStatus::Corrected), "bit {b}");
            }
        }
    }

    #[test]
    fn every_double_flip_is_detected() {
        for d in [0u64, 0xA5A5_5A5A_FFFF_0000] {
            let w = secded_encode(d);
            for a in 0..72 {
                for b in a + 1..72 {
                    let (_, st) = secded_decode(w.flip(a).flip(b));
                    assert_eq!(st, SecdedStatus::DetectedDouble, "bits {a},{b}");
                }
            }
        }
    }

    #[test]
    fn ecp_boundaries() {
        let intended = vec![1u8; 256];
        let mut stuck = vec![None; 256];
        let t = ecp_assign(&intended, &stuck, &EcpTable::default()).unwrap();
        assert!(t.is_empty());
        for c in [10, 200, 3] {
            stuck[c] = Some(2);
        }
        let t = ecp_assign(&intended, &stuck, &EcpTable::default()).unwrap();
        let cells: Vec<u8> = t.entries().iter().map(|e| e.cell).collect();
        assert_eq!(cells, vec![3, 10, 200]);
        let mut read: Vec<u8> = (0..256).map(|c| stuck[c].unwrap_or(intended[c])).collect();
        assert_eq!(ecp_apply(&read, &t), intended);
        stuck[77] = Some(0);
        let err = ecp_assign(&intended, &stuck, &t).unwrap_err();
        assert_eq!(err, Error::EcpExhausted { needed: 4, capacity: 3 });
        // a stuck cell that happens to hold the intended value needs no entry
        stuck[77] = Some(1);
        read[77] = 1;
        assert_eq!(ecp_apply(&read, &ecp_assign(&intended, &stuck, &t).unwrap()), intended);
    }

    #[test]
    fn ecp_entries_are_sticky() {
        let mut stuck = vec![None; 8];
        stuck[5] = Some(3);
        let t = ecp_assign(&[0; 8], &stuck, &EcpTable::default()).unwrap();
        let t = ecp_assign(&[3; 8], &stuck, &t).unwrap();
        assert_eq!(t.entries(), &[EcpEntry { cell: 5, symbol: 3 }]);
        assert_eq!(t.storage_cells(), 15);
        assert_eq!(t.to_bits(), (5 << 2 | 3) << 20);
    }

    #[test]
    fn pair_code_survives_any_one_stuck_cell() {
        let (a, b) = (0x0123_4567_89AB_CDEFu64, 0xFEDC_BA98_7654_3210u64);
        let (ca, cb) = secded_pair_encode(a, b);
        assert_eq!(secded_pair_decode(a, b, ca, cb), Some((a, b)));
        // 72 cells: 64 data cells then 8 check cells; every wrong symbol
        for cell in 0..72u32 {
            for v in 1..4u64 {
                let (mut x, mut y, mut cc) = (a, b, (ca << 8) | cb);
                match cell {
                    0..32 => x ^= v << (62 - 2 * cell),
                    32..64 => y ^= v << (62 - 2 * (cell - 32)),
                    _ => cc ^= v << (14 - 2 * (cell - 64)),
                }
                assert_eq!(secded_pair_decode(x, y, cc >> 8, cc & 0xFF), Some((a, b)), "cell {cell} xor {v}");
            }
        }
        // two cells wrong in the same digit plane
        assert_eq!(secded_pair_decode(a ^ 1, b ^ 1, ca, cb), None);
    }

    proptest! {
        #[test]
        fn random_single_flips_corrected(d in any::<u64>(), b in 0u32..72) {
            prop_assert_eq!(secded_decode(secded_encode(d).flip(b)), (d, SecdedStatus::Corrected));
        }

        #[test]
        fn ecp_reads_back_intended(intended in proptest::collection::vec(0u8..4, 256), faults in proptest::collection::vec((0usize..256, 0u8..4), 0..4)) {
            let mut stuck = vec![None; 256];
            for (c, v) in faults {
                stuck[c] = Some(v);
            }
            let t = ecp_assign(&intended, &stuck, &EcpTable::default()).unwrap();
            let read: Vec<u8> = (0..256).map(|c| stuck[c].unwrap_or(intended[c])).collect();
            prop_assert_eq!(ecp_apply(&read, &t), intended);
        }
    }
}
