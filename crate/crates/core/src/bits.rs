//! Fixed-width bit blocks and the two-bit MLC symbol layout.
//!
//! A block of `len` bits is stored right-aligned in a `u64`. Bit index 0 is
//! the most significant stored bit, so the textual form of a block is the
//! ordinary binary print of the integer. Symbol `i` is the bit pair
//! `(2i, 2i + 1)`: left digit first, right digit second. In the integer this
//! places every symbol in an aligned two-bit field with the left digit high,
//! so the field value equals the symbol value `left * 2 + right`.

use std::fmt;

use crate::error::{Error, Result};

/// Right-digit positions of every symbol in a flat word.
pub const RIGHT_DIGITS: u64 = 0x5555_5555_5555_5555;

/// Mask of the low `len` bits.
#[inline]
pub fn low_mask(len: u32) -> u64 {
    if len >= 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

/// One bit per symbol (at the right-digit position) for every symbol whose
/// two digits are not both zero.
#[inline]
pub fn symbol_nonzero(x: u64) -> u64 {
    (x | (x >> 1)) & RIGHT_DIGITS
}

/// Per-symbol masks, at right-digit positions, of symbols equal to 0, 1, 2, 3.
#[inline]
pub fn symbol_classes(x: u64) -> [u64; 4] {
    let right = x & RIGHT_DIGITS;
    let left = (x >> 1) & RIGHT_DIGITS;
    [
        !(right | left) & RIGHT_DIGITS,
        right & !left,
        left & !right,
        right & left,
    ]
}

/// Expands a symbol-level mask (one bit per symbol at its right digit) to
/// cover both digits.
#[inline]
pub fn widen_symbol_mask(mask: u64) -> u64 {
    let m = mask & RIGHT_DIGITS;
    m | (m << 1)
}

/// Deposits the low 32 bits of `plane` into the even bit positions of the
/// result: plane bit `t` lands on flat bit `2t`, the right digit.
#[inline]
pub fn spread_right(plane: u64) -> u64 {
    let mut x = plane & 0xFFFF_FFFF;
    x = (x | (x << 16)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x << 8)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

/// Inverse of [`spread_right`] applied to the even positions.
#[inline]
pub fn compact_even(flat: u64) -> u64 {
    let mut x = flat & RIGHT_DIGITS;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x >> 4)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x >> 8)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x >> 16)) & 0x0000_0000_FFFF_FFFF;
    x
}

/// Left digits of a flat word, packed: flat bit `2t + 1` becomes bit `t`.
#[inline]
pub fn gather_left(flat: u64) -> u64 {
    compact_even(flat >> 1)
}

/// Right digits of a flat word, packed.
#[inline]
pub fn gather_right(flat: u64) -> u64 {
    compact_even(flat)
}

/// Interleaves packed left and right digit planes back into a flat word.
#[inline]
pub fn interleave(left: u64, right: u64) -> u64 {
    (spread_right(left) << 1) | spread_right(right)
}

/// A fixed-length bit vector of at most 64 bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataBlock {
    bits: u64,
    len: u32,
}

impl DataBlock {
    pub fn new(bits: u64, len: u32) -> Result<Self> {
        if len == 0 || len > 64 {
            return Err(Error::InvalidInput(format!("block length {len} not in 1..=64")));
        }
        if bits & !low_mask(len) != 0 {
            return Err(Error::InvalidInput(format!(
                "value {bits:#x} does not fit in {len} bits"
            )));
        }
        Ok(Self { bits, len })
    }

    /// A 64-bit block; every `u64` is valid.
    pub fn word(bits: u64) -> Self {
        Self { bits, len: 64 }
    }

    pub fn zeros(len: u32) -> Result<Self> {
        Self::new(0, len)
    }

    /// Parses a string of `0`/`1` characters; `_` and whitespace are ignored.
    pub fn from_bit_str(s: &str) -> Result<Self> {
        let mut bits = 0u64;
        let mut len = 0u32;
        for c in s.chars() {
            let b = match c {
                '0' => 0,
                '1' => 1,
                '_' | ' ' => continue,
                _ => return Err(Error::InvalidInput(format!("bad bit character {c:?}"))),
            };
            if len == 64 {
                return Err(Error::InvalidInput("more than 64 bits".into()));
            }
            bits = (bits << 1) | b;
            len += 1;
        }
        Self::new(bits, len)
    }

    pub fn from_symbols(symbols: &[u8]) -> Result<Self> {
        if symbols.is_empty() || symbols.len() > 32 {
            return Err(Error::InvalidInput(format!(
                "{} symbols do not fit a block",
                symbols.len()
            )));
        }
        let mut bits = 0u64;
        for &s in symbols {
            if s > 3 {
                return Err(Error::InvalidInput(format!("symbol {s} out of range")));
            }
            bits = (bits << 2) | s as u64;
        }
        Self::new(bits, 2 * symbols.len() as u32)
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bit at index `i` (0 = first bit of the textual form).
    pub fn bit(&self, i: u32) -> bool {
        assert!(i < self.len, "bit index {i} out of range");
        (self.bits >> (self.len - 1 - i)) & 1 == 1
    }

    pub fn symbol_count(&self) -> u32 {
        self.len / 2
    }

    /// Symbol `i` as `left * 2 + right`.
    pub fn symbol(&self, i: u32) -> u8 {
        assert!(self.len.is_multiple_of(2) && i < self.len / 2, "symbol index {i} out of range");
        ((self.bits >> (self.len - 2 - 2 * i)) & 3) as u8
    }

    pub fn symbols(&self) -> Vec<u8> {
        (0..self.symbol_count()).map(|i| self.symbol(i)).collect()
    }

    /// Sub-block `j` of width `m`, counting from the start of the block.
    pub fn sub_block(&self, j: u32, m: u32) -> u64 {
        assert!((j + 1) * m <= self.len);
        (self.bits >> (self.len - (j + 1) * m)) & low_mask(m)
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|i| if self.bit(i) { '1' } else { '0' }).collect()
    }
}

impl fmt::Debug for DataBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DataBlock({})", self.to_bit_string())
    }
}

impl fmt::Display for DataBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symbol_layout_left_digit_first() {
        let b = DataBlock::from_bit_str("00011110").unwrap();
        assert_eq!(b.symbols(), vec![0, 1, 3, 2]);
        let left: Vec<bool> = (0..4).map(|i| b.bit(2 * i)).collect();
        assert_eq!(left, vec![false, false, true, true]);
    }

    #[test]
    fn classes_partition_symbols() {
        let b = DataBlock::from_symbols(&[0, 1, 2, 3, 3, 0]).unwrap();
        let c = symbol_classes(b.bits());
        let m = low_mask(12) & RIGHT_DIGITS;
        assert_eq!(c.iter().fold(0, |a, x| a | (x & m)), m);
        assert_eq!((c[3] & m).count_ones(), 2);
        assert_eq!((c[0] & m).count_ones(), 2);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(DataBlock::new(0, 0).is_err());
        assert!(DataBlock::new(4, 2).is_err());
        assert!(DataBlock::from_bit_str("10x").is_err());
    }

    proptest! {
        #[test]
        fn symbol_and_flat_views_agree(x in any::<u64>()) {
            let b = DataBlock::word(x);
            prop_assert_eq!(DataBlock::from_symbols(&b.symbols()).unwrap(), b);
            prop_assert_eq!(DataBlock::from_bit_str(&b.to_bit_string()).unwrap(), b);
        }

        #[test]
        fn digit_planes_reinterleave(x in any::<u64>()) {
            prop_assert_eq!(interleave(gather_left(x), gather_right(x)), x);
            prop_assert_eq!(compact_even(spread_right(x)), x & 0xFFFF_FFFF);
        }
    }
}
