//! Reference encoders: random coset coding, flip-n-write, data bus
//! inversion, Flipcy and plain writeback.

use rand::Rng;

use crate::bits::{low_mask, DataBlock};
use crate::codec::{
    aux_layout, best_aux_cells, select_flags, vcc_decode, vcc_encode, write_cost, CosetKernel, EncodedWord, OldState,
    Selection, VccConfig, VccMode,
};
use crate::cost::{CostFunction, CostVector};
use crate::error::{config_err, Error, Result};

/// A common interface over every encoder.
pub trait Encoder: Send + Sync {
    fn encode(&self, block: &DataBlock, old: &OldState, cost: &dyn CostFunction) -> Result<Selection>;
    fn decode(&self, word: &EncodedWord) -> Result<DataBlock>;
    fn aux_bits(&self) -> u32;
}

impl Encoder for VccConfig {
    fn encode(&self, block: &DataBlock, old: &OldState, cost: &dyn CostFunction) -> Result<Selection> {
        vcc_encode(block, old, self, cost)
    }
    fn decode(&self, word: &EncodedWord) -> Result<DataBlock> {
        vcc_decode(word, self)
    }
    fn aux_bits(&self) -> u32 {
        VccConfig::aux_bits(self)
    }
}

/// `N` full-length random cosets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RccCodebook {
    n: u32,
    cosets: Vec<u64>,
}

impl RccCodebook {
    pub fn new(n: u32, cosets: Vec<u64>) -> Result<Self> {
        if n == 0 || n > 64 || !n.is_multiple_of(2) {
            return config_err(format!("block length {n} must be even and in 2..=64"));
        }
        if cosets.is_empty() || !cosets.len().is_power_of_two() {
            return config_err(format!("codebook size {} must be a power of two", cosets.len()));
        }
        if cosets.iter().any(|c| c & !low_mask(n) != 0) {
            return config_err("coset wider than the block");
        }
        let mut sorted = cosets.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != cosets.len() {
            return config_err("cosets must be distinct");
        }
        Ok(Self { n, cosets })
    }

    /// Draws `count` distinct cosets.
    pub fn random<R: Rng + ?Sized>(n: u32, count: usize, rng: &mut R) -> Result<Self> {
        if n < 64 && count as u64 > 1u64 << n {
            return config_err("more cosets than distinct blocks");
        }
        let mut cosets = Vec::with_capacity(count);
        while cosets.len() < count {
            let c = rng.random::<u64>() & low_mask(n);
            if !cosets.contains(&c) {
                cosets.push(c);
            }
        }
        Self::new(n, cosets)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn cosets(&self) -> &[u64] {
        &self.cosets
    }

    pub fn len(&self) -> usize {
        self.cosets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cosets.is_empty()
    }
}

/// Minimum-cost coset over the whole codebook; ties go to the lowest index.
pub fn rcc_encode<C: CostFunction + ?Sized>(
    block: &DataBlock,
    old: &OldState,
    book: &RccCodebook,
    cost: &C,
) -> Result<Selection> {
    if block.len() != book.n {
        return Err(Error::InvalidInput(format!("block has {} bits, codebook {}", block.len(), book.n)));
    }
    let aux_bits = book.cosets.len().trailing_zeros();
    let mut best: Option<(CostVector, EncodedWord)> = None;
    for (i, &c) in book.cosets.iter().enumerate() {
        let payload = DataBlock::new(block.bits() ^ c, book.n)?;
        let (aux_cost, aux) = best_aux_cells(i as u64, aux_bits, old, cost);
        let word = EncodedWord { payload, aux, aux_bits };
        let total = cost.cost(&old.payload_view(payload.bits(), low_mask(book.n))) + aux_cost;
        if best.is_none_or(|(b, _)| total < b) {
            best = Some((total, word));
        }
    }
    let (cost, word) = best.expect("non-empty codebook");
    Ok(Selection { word, cost, evaluations: book.cosets.len() as u64 })
}

pub fn rcc_decode(word: &EncodedWord, book: &RccCodebook) -> Result<DataBlock> {
    word.check_aux(book.cosets.len().trailing_zeros())?;
    DataBlock::new(word.payload.bits() ^ book.cosets[word.index() as usize], book.n)
}

impl Encoder for RccCodebook {
    fn encode(&self, block: &DataBlock, old: &OldState, cost: &dyn CostFunction) -> Result<Selection> {
        rcc_encode(block, old, self, cost)
    }
    fn decode(&self, word: &EncodedWord) -> Result<DataBlock> {
        rcc_decode(word, self)
    }
    fn aux_bits(&self) -> u32 {
        self.cosets.len().trailing_zeros()
    }
}

/// Flip-n-write over `k` sub-blocks with one flag each.
#[derive(Clone, Debug)]
pub struct FnwConfig {
    k: u32,
    inner: VccConfig,
}

impl FnwConfig {
    pub fn new(n: u32, k: u32) -> Result<Self> {
        if k == 0 || !n.is_multiple_of(k) {
            return config_err(format!("{k} sub-blocks do not divide {n} bits"));
        }
        let m = n / k;
        let zero = CosetKernel::new(0, m, 0)?;
        let inner = VccConfig::stored(n, m, VccMode::FullBlock, vec![zero])?;
        Ok(Self { k, inner })
    }

    /// Data bus inversion at 16-bit granularity.
    pub fn dbi(n: u32) -> Result<Self> {
        Self::new(n, n / 16)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn n(&self) -> u32 {
        self.inner.n()
    }
}

/// Per sub-block choice between the data and its complement; flag 0 (the
/// first sub-block) is the most significant aux bit.
pub fn fnw_encode<C: CostFunction + ?Sized>(
    block: &DataBlock,
    old: &OldState,
    cfg: &FnwConfig,
    cost: &C,
) -> Result<Selection> {
    vcc_encode(block, old, &cfg.inner, cost)
}

pub fn fnw_decode(word: &EncodedWord, cfg: &FnwConfig) -> Result<DataBlock> {
    vcc_decode(word, &cfg.inner)
}

pub fn dbi_encode<C: CostFunction + ?Sized>(block: &DataBlock, old: &OldState, cost: &C) -> Result<Selection> {
    fnw_encode(block, old, &FnwConfig::dbi(block.len())?, cost)
}

impl Encoder for FnwConfig {
    fn encode(&self, block: &DataBlock, old: &OldState, cost: &dyn CostFunction) -> Result<Selection> {
        fnw_encode(block, old, self, cost)
    }
    fn decode(&self, word: &EncodedWord) -> Result<DataBlock> {
        fnw_decode(word, self)
    }
    fn aux_bits(&self) -> u32 {
        self.k
    }
}

/// Identity, ones' complement or two's complement, with aux values 0, 1, 2.
#[derive(Clone, Copy, Debug)]
pub struct Flipcy {
    pub n: u32,
}

fn flipcy_candidate(bits: u64, n: u32, aux: u64) -> u64 {
    let mask = low_mask(n);
    match aux {
        0 => bits,
        1 => !bits & mask,
        _ => bits.wrapping_neg() & mask,
    }
}

pub fn flipcy_encode<C: CostFunction + ?Sized>(block: &DataBlock, old: &OldState, cost: &C) -> Result<Selection> {
    let n = block.len();
    let mut best: Option<(CostVector, EncodedWord)> = None;
    for aux in 0..3u64 {
        let word = EncodedWord { payload: DataBlock::new(flipcy_candidate(block.bits(), n, aux), n)?, aux, aux_bits: 2 };
        let total = write_cost(&word, old, cost);
        if best.is_none_or(|(b, _)| total < b) {
            best = Some((total, word));
        }
    }
    let (cost, word) = best.expect("three candidates");
    Ok(Selection { word, cost, evaluations: 3 })
}

pub fn flipcy_decode(word: &EncodedWord) -> Result<DataBlock> {
    word.check_aux(2)?;
    if word.aux == 3 {
        return Err(Error::InvalidInput("aux value 3 is not a Flipcy candidate".into()));
    }
    let n = word.payload.len();
    // both complements are involutions
    DataBlock::new(flipcy_candidate(word.payload.bits(), n, word.aux), n)
}

impl Encoder for Flipcy {
    fn encode(&self, block: &DataBlock, old: &OldState, cost: &dyn CostFunction) -> Result<Selection> {
        flipcy_encode(block, old, cost)
    }
    fn decode(&self, word: &EncodedWord) -> Result<DataBlock> {
        flipcy_decode(word)
    }
    fn aux_bits(&self) -> u32 {
        2
    }
}

/// Plain differential writeback with no aux cells.
#[derive(Clone, Copy, Debug)]
pub struct Unencoded;

pub fn unencoded_encode<C: CostFunction + ?Sized>(block: &DataBlock, old: &OldState, cost: &C) -> Selection {
    let word = EncodedWord { payload: *block, aux: 0, aux_bits: 0 };
    Selection { cost: write_cost(&word, old, cost), word, evaluations: 1 }
}

impl Encoder for Unencoded {
    fn encode(&self, block: &DataBlock, old: &OldState, cost: &dyn CostFunction) -> Result<Selection> {
        Ok(unencoded_encode(block, old, cost))
    }
    fn decode(&self, word: &EncodedWord) -> Result<DataBlock> {
        word.check_aux(0)?;
        Ok(word.payload)
    }
    fn aux_bits(&self) -> u32 {
        0
    }
}

/// Best flags for arbitrary partition costs; exposed for encoders that build
/// their own partition costs.
pub fn choose_partition_flags<C: CostFunction + ?Sized>(
    part: &[[CostVector; 2]],
    old: &OldState,
    cost: &C,
) -> (CostVector, u64) {
    let cells = aux_layout(part.len() as u32, part.len() as u32);
    let (c, flags, pad) = select_flags(part, 0, &cells, old, cost);
    (c, flags | pad)
}
