//! Virtual coset encoding over `p` partitions of `m` bits.
//!
//! A virtual coset is the concatenation, partition by partition, of a kernel
//! `R_i` or its complement. Its index is `i * 2^p + flags` where the flag of
//! partition 0 is the most significant flag bit. The index is stored as the
//! auxiliary value, right-aligned in `ceil(aux_bits / 2)` MLC cells.
//!
//! In [`VccMode::MlcRightDigit`] only the right digits of the symbols form the
//! encoded plane; left digits pass through and may seed the kernels.

use rand::Rng;

use crate::bits::{gather_left, low_mask, spread_right, DataBlock, RIGHT_DIGITS};
use crate::cost::{CellView, CostFunction, CostVector, Region};
use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VccMode {
    FullBlock,
    MlcRightDigit,
}

/// An `m`-bit coset kernel, most significant bit first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CosetKernel {
    bits: u64,
    len: u32,
    index: usize,
}

impl CosetKernel {
    pub fn new(bits: u64, len: u32, index: usize) -> Result<Self> {
        let b = DataBlock::new(bits, len)?;
        Ok(Self { bits: b.bits(), len, index })
    }

    pub fn from_bit_str(s: &str, index: usize) -> Result<Self> {
        let b = DataBlock::from_bit_str(s)?;
        Ok(Self { bits: b.bits(), len: b.len(), index })
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn to_bit_string(&self) -> String {
        DataBlock::new(self.bits, self.len).expect("valid kernel").to_bit_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KernelSource {
    Stored(Vec<CosetKernel>),
    Generated,
}

/// Validated VCC geometry.
#[derive(Clone, Debug)]
pub struct VccConfig {
    n: u32,
    m: u32,
    r: usize,
    p: u32,
    mode: VccMode,
    source: KernelSource,
    /// Stored kernels tiled over the encoded positions of a whole word.
    tiled: Vec<u64>,
}

impl VccConfig {
    pub fn new(n: u32, m: u32, r: usize, mode: VccMode, source: KernelSource) -> Result<Self> {
        if n == 0 || n > 64 || !n.is_multiple_of(2) {
            return config_err(format!("block length {n} must be even and in 2..=64"));
        }
        if m == 0 {
            return config_err("kernel length must be positive");
        }
        let plane = match mode {
            VccMode::FullBlock => n,
            VccMode::MlcRightDigit => n / 2,
        };
        if plane % m != 0 {
            return config_err(format!("kernel length {m} does not divide {plane} encoded bits"));
        }
        if mode == VccMode::FullBlock && !m.is_multiple_of(2) {
            return config_err("full-block partitions must cover whole symbols (m even)");
        }
        if r == 0 || !r.is_power_of_two() {
            return config_err(format!("kernel count {r} must be a power of two"));
        }
        let p = plane / m;
        let aux_bits = r.trailing_zeros() + p;
        if aux_bits > 32 {
            return config_err(format!("{aux_bits} auxiliary bits exceed 32"));
        }
        match &source {
            KernelSource::Stored(ks) => {
                if ks.len() != r {
                    return config_err(format!("{} stored kernels for r = {r}", ks.len()));
                }
                if let Some(k) = ks.iter().find(|k| k.len() != m) {
                    return config_err(format!("kernel {} has {} bits, expected {m}", k.index(), k.len()));
                }
            }
            KernelSource::Generated => {
                if mode != VccMode::MlcRightDigit {
                    return config_err(
                        "generated kernels need pass-through left digits (MlcRightDigit mode)",
                    );
                }
                kernel_geometry(n / 2, r, m)?;
            }
        }
        let mut cfg = Self { n, m, r, p, mode, source, tiled: Vec::new() };
        if let KernelSource::Stored(ks) = &cfg.source {
            cfg.tiled = ks.iter().map(|k| cfg.tile(k.bits())).collect();
        }
        Ok(cfg)
    }

    pub fn stored(n: u32, m: u32, mode: VccMode, kernels: Vec<CosetKernel>) -> Result<Self> {
        Self::new(n, m, kernels.len(), mode, KernelSource::Stored(kernels))
    }

    pub fn generated(n: u32, m: u32, r: usize) -> Result<Self> {
        Self::new(n, m, r, VccMode::MlcRightDigit, KernelSource::Generated)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn mode(&self) -> VccMode {
        self.mode
    }

    pub fn kernel_source(&self) -> &KernelSource {
        &self.source
    }

    /// Number of virtual cosets, `r * 2^p`.
    pub fn coset_count(&self) -> u64 {
        (self.r as u64) << self.p
    }

    pub fn aux_bits(&self) -> u32 {
        self.r.trailing_zeros() + self.p
    }

    pub fn aux_cells(&self) -> u32 {
        self.aux_bits().div_ceil(2)
    }

    /// Flat positions of partition `j`, both digits of every covered symbol.
    pub fn partition_scope(&self, j: u32) -> u64 {
        match self.mode {
            VccMode::FullBlock => low_mask(self.m) << (self.n - (j + 1) * self.m),
            VccMode::MlcRightDigit => low_mask(2 * self.m) << (self.n - 2 * (j + 1) * self.m),
        }
    }

    /// Flat positions inverted when partition `j` uses the complemented kernel.
    pub fn partition_flip(&self, j: u32) -> u64 {
        match self.mode {
            VccMode::FullBlock => self.partition_scope(j),
            VccMode::MlcRightDigit => self.partition_scope(j) & RIGHT_DIGITS,
        }
    }

    /// Kernel bits repeated over every partition, placed at encoded positions.
    fn tile(&self, kernel: u64) -> u64 {
        let mut plane = 0u64;
        for j in 0..self.p {
            plane |= kernel << (j * self.m);
        }
        match self.mode {
            VccMode::FullBlock => plane,
            VccMode::MlcRightDigit => spread_right(plane),
        }
    }

    /// Tiled kernel masks used for `block`, in index order.
    fn masks_for(&self, block: &DataBlock) -> Result<Vec<u64>> {
        match &self.source {
            KernelSource::Stored(_) => Ok(self.tiled.clone()),
            KernelSource::Generated => {
                let left = extract_left_digits(block)?;
                Ok(generate_kernels(&left, self.r, self.m)?
                    .iter()
                    .map(|k| self.tile(k.bits()))
                    .collect())
            }
        }
    }

    fn check_block(&self, block: &DataBlock) -> Result<()> {
        if block.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "block has {} bits, configuration expects {}",
                block.len(),
                self.n
            )));
        }
        Ok(())
    }
}

/// Encoded payload plus the auxiliary coset index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodedWord {
    pub payload: DataBlock,
    /// Aux cell contents: the index in the low `aux_bits` bits and, when
    /// `aux_bits` is odd, a free pad digit just above it.
    pub aux: u64,
    pub aux_bits: u32,
}

impl EncodedWord {
    pub fn aux_cells(&self) -> u32 {
        self.aux_bits.div_ceil(2)
    }

    /// The coset index without the pad digit.
    pub fn index(&self) -> u64 {
        self.aux & low_mask(self.aux_bits)
    }

    /// Kernel index held in the high aux bits for a `p`-partition code.
    pub fn kernel_index(&self, p: u32) -> usize {
        (self.index() >> p) as usize
    }

    /// Partition flags, flag 0 first.
    pub fn flags(&self, p: u32) -> Vec<bool> {
        (0..p).map(|j| (self.aux >> (p - 1 - j)) & 1 == 1).collect()
    }

    /// Checks the aux width against a decoder's.
    pub(crate) fn check_aux(&self, aux_bits: u32) -> Result<()> {
        if self.aux_bits != aux_bits || self.aux >> (2 * self.aux_cells()) != 0 {
            return Err(Error::InvalidInput(format!("aux field must have {aux_bits} bits")));
        }
        Ok(())
    }
}

/// The unused high digit of the top aux cell, if `aux_bits` is odd.
pub fn aux_pad_bit(aux_bits: u32) -> u64 {
    if aux_bits % 2 == 1 {
        1 << aux_bits
    } else {
        0
    }
}

/// Cheapest aux cell contents holding `index`; only the pad digit is free.
pub fn best_aux_cells<C: CostFunction + ?Sized>(index: u64, aux_bits: u32, old: &OldState, cost: &C) -> (CostVector, u64) {
    if aux_bits == 0 {
        return (CostVector::ZERO, 0);
    }
    let scope = low_mask(2 * aux_bits.div_ceil(2));
    let c0 = cost.cost(&old.aux_view(index, scope));
    let pad = aux_pad_bit(aux_bits);
    if pad == 0 {
        return (c0, index);
    }
    let c1 = cost.cost(&old.aux_view(index | pad, scope));
    if c1 < c0 {
        (c1, index | pad)
    } else {
        (c0, index)
    }
}

/// Previous contents of the cells an encoded word is written to.
///
/// Payload and aux cells use the flat layout of [`DataBlock`]; the aux field
/// is right-aligned. Stuck masks carry one bit per cell at the right-digit
/// position and `*_frozen` holds the stuck values on exactly those cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OldState {
    pub data: u64,
    pub aux: u64,
    pub data_stuck: u64,
    pub data_frozen: u64,
    pub aux_stuck: u64,
    pub aux_frozen: u64,
}

impl OldState {
    pub fn clean(data: u64, aux: u64) -> Self {
        Self { data, aux, ..Self::default() }
    }

    /// Builds a state from per-cell symbols and optional stuck values.
    pub fn from_symbols(data: &[u8], aux: &[u8], data_stuck: &[Option<u8>], aux_stuck: &[Option<u8>]) -> Result<Self> {
        fn pack(sym: &[u8], stuck: &[Option<u8>]) -> Result<(u64, u64, u64)> {
            if sym.len() > 32 || stuck.len() != sym.len() {
                return Err(Error::InvalidInput("symbol and stuck lists must align (<= 32)".into()));
            }
            let (mut v, mut mask, mut frozen) = (0u64, 0u64, 0u64);
            for (s, st) in sym.iter().zip(stuck) {
                let cell = match st {
                    Some(f) => *f,
                    None => *s,
                };
                if *s > 3 || cell > 3 {
                    return Err(Error::InvalidInput("symbol out of range".into()));
                }
                v = (v << 2) | *s as u64;
                mask = (mask << 2) | st.is_some() as u64;
                frozen = (frozen << 2) | if st.is_some() { cell as u64 } else { 0 };
            }
            Ok((v, mask, frozen))
        }
        let (data, data_stuck, data_frozen) = pack(data, data_stuck)?;
        let (aux, aux_stuck, aux_frozen) = pack(aux, aux_stuck)?;
        Ok(Self { data, aux, data_stuck, data_frozen, aux_stuck, aux_frozen })
    }

    pub fn payload_view(&self, new: u64, scope: u64) -> CellView {
        CellView {
            old: self.data,
            new,
            stuck: self.data_stuck,
            frozen: self.data_frozen,
            scope,
            region: Region::Payload,
        }
    }

    pub fn aux_view(&self, new: u64, scope: u64) -> CellView {
        CellView {
            old: self.aux,
            new,
            stuck: self.aux_stuck,
            frozen: self.aux_frozen,
            scope,
            region: Region::Aux,
        }
    }
}

/// Total write cost of `word` over the payload and aux cells it occupies.
pub fn write_cost<C: CostFunction + ?Sized>(word: &EncodedWord, old: &OldState, cost: &C) -> CostVector {
    let payload = cost.cost(&old.payload_view(word.payload.bits(), low_mask(word.payload.len())));
    if word.aux_bits == 0 {
        return payload;
    }
    payload + cost.cost(&old.aux_view(word.aux, low_mask(2 * word.aux_cells())))
}

/// Result of an encoder search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub word: EncodedWord,
    pub cost: CostVector,
    /// Kernel/partition evaluations, counting direct and complemented forms.
    pub evaluations: u64,
}

/// Per-cell candidate choice for aux cells that hold flags.
pub(crate) struct AuxCell {
    /// Positions of the flags this cell holds, as (flag index, aux bit offset
    /// within the cell).
    flags: Vec<(u32, u32)>,
    /// Fixed kernel-index bits of this cell for the current kernel.
    shift: u32,
    /// The high digit is an unused pad digit.
    pad: bool,
}

pub(crate) fn aux_layout(aux_bits: u32, p: u32) -> Vec<AuxCell> {
    (0..aux_bits.div_ceil(2))
        .map(|c| {
            let flags = (2 * c..(2 * c + 2).min(aux_bits))
                .filter(|&bit| bit < p)
                .map(|bit| (p - 1 - bit, bit - 2 * c))
                .collect();
            AuxCell { flags, shift: 2 * c, pad: 2 * c + 1 == aux_bits }
        })
        .collect()
}

/// Picks partition flags jointly with the aux cells that store them.
///
/// `part[j]` holds the cost of partition `j` with flag 0 and flag 1;
/// `index_bits` are the fixed aux bits above the flags. Returns the total
/// cost, the lowest flag value reaching it and the chosen pad digit.
pub(crate) fn select_flags<C: CostFunction + ?Sized>(
    part: &[[CostVector; 2]],
    index_bits: u64,
    cells: &[AuxCell],
    old: &OldState,
    cost: &C,
) -> (CostVector, u64, u64) {
    let p = part.len() as u32;
    let mut total = CostVector::ZERO;
    let mut flags = 0u64;
    let mut pad = 0u64;
    let mut covered = 0u64;
    for cell in cells {
        let scope = 0b11u64 << cell.shift;
        let nf = cell.flags.len();
        let mut local: Option<(CostVector, u64, u64)> = None;
        for combo in 0..1u64 << (nf + cell.pad as usize) {
            let padv = (combo >> nf) << (cell.shift + 1);
            let mut aux = index_bits & scope | padv;
            let mut c = CostVector::ZERO;
            let mut fval = 0u64;
            for (k, &(f, off)) in cell.flags.iter().enumerate() {
                let bit = (combo >> k) & 1;
                aux |= bit << (cell.shift + off);
                fval |= bit << (p - 1 - f);
                c += part[f as usize][bit as usize];
            }
            c += cost.cost(&old.aux_view(aux, scope));
            if local.is_none_or(|(lc, lf, lp)| c < lc || (c == lc && (fval, padv) < (lf, lp))) {
                local = Some((c, fval, padv));
            }
        }
        let (c, fval, padv) = local.expect("at least one combination");
        total += c;
        flags |= fval;
        pad |= padv;
        for &(f, _) in &cell.flags {
            covered |= 1 << f;
        }
    }
    for j in 0..p {
        if covered >> j & 1 == 0 {
            let [c0, c1] = part[j as usize];
            if c1 < c0 {
                flags |= 1 << (p - 1 - j);
                total += c1;
            } else {
                total += c0;
            }
        }
    }
    (total, flags, pad)
}

/// Finds the minimum-cost virtual coset, aux cells included.
///
/// Ties go to the lowest coset index. Each partition is costed with both the
/// kernel and its complement; aux cells are chosen jointly with the flags they
/// store, so the result is exact for any cell-additive cost.
pub fn vcc_encode<C: CostFunction + ?Sized>(
    block: &DataBlock,
    old: &OldState,
    cfg: &VccConfig,
    cost: &C,
) -> Result<Selection> {
    cfg.check_block(block)?;
    let masks = cfg.masks_for(block)?;
    let p = cfg.p;
    let aux_bits = cfg.aux_bits();
    let cells = aux_layout(aux_bits, p);
    let scopes: Vec<u64> = (0..p).map(|j| cfg.partition_scope(j)).collect();
    let flips: Vec<u64> = (0..p).map(|j| cfg.partition_flip(j)).collect();
    let mut part = vec![[CostVector::ZERO; 2]; p as usize];
    let mut evaluations = 0u64;
    let mut best: Option<(CostVector, u64, u64, u64)> = None;

    for (i, &mask) in masks.iter().enumerate() {
        let base = block.bits() ^ mask;
        for j in 0..p as usize {
            let view = old.payload_view(base, scopes[j]);
            let c0 = cost.cost(&view);
            let c1 = match cost.complement_cost(&view, flips[j], c0) {
                Some(c) => c,
                None => cost.cost(&old.payload_view(base ^ flips[j], scopes[j])),
            };
            part[j] = [c0, c1];
            evaluations += 2;
        }

        let (total, flags, pad) = select_flags(&part, (i as u64) << p, &cells, old, cost);
        if best.is_none_or(|(bc, ..)| total < bc) {
            best = Some((total, i as u64, flags, pad));
        }
    }

    let (total, i, flags, pad) = best.expect("at least one kernel");
    let mut payload = block.bits() ^ masks[i as usize];
    for j in 0..p {
        if (flags >> (p - 1 - j)) & 1 == 1 {
            payload ^= flips[j as usize];
        }
    }
    let word = EncodedWord {
        payload: DataBlock::new(payload, cfg.n)?,
        aux: (i << p) | flags | pad,
        aux_bits,
    };
    Ok(Selection { word, cost: total, evaluations })
}

/// Inverts [`vcc_encode`].
pub fn vcc_decode(word: &EncodedWord, cfg: &VccConfig) -> Result<DataBlock> {
    cfg.check_block(&word.payload)?;
    word.check_aux(cfg.aux_bits())?;
    let p = cfg.p;
    let i = word.kernel_index(p);
    let mask = match &cfg.source {
        KernelSource::Stored(_) => cfg.tiled[i],
        KernelSource::Generated => {
            let left = extract_left_digits(&word.payload)?;
            cfg.tile(generate_kernels(&left, cfg.r, cfg.m)?[i].bits())
        }
    };
    let mut bits = word.payload.bits() ^ mask;
    for j in 0..p {
        if (word.aux >> (p - 1 - j)) & 1 == 1 {
            bits ^= cfg.partition_flip(j);
        }
    }
    DataBlock::new(bits, cfg.n)
}

/// The left digit of every symbol, in symbol order.
pub fn extract_left_digits(block: &DataBlock) -> Result<DataBlock> {
    if !block.len().is_multiple_of(2) {
        return Err(Error::InvalidInput("block length must be even".into()));
    }
    DataBlock::new(gather_left(block.bits()), block.len() / 2)
}

/// Returns `(b, mask_width)` for generating `r` kernels of `m` bits from `l`
/// left digits.
fn kernel_geometry(l: u32, r: usize, m: u32) -> Result<(usize, u32)> {
    if m == 0 || !l.is_multiple_of(m) {
        return config_err(format!("kernel length {m} does not divide {l} seed bits"));
    }
    let b = (l / m) as usize;
    if r < b || !r.is_multiple_of(b) || !(r / b).is_power_of_two() {
        return config_err(format!("r = {r} must be a power-of-two multiple of b = {b}"));
    }
    let w = 1 + (r / b).trailing_zeros();
    if w > m {
        return config_err(format!("mask width {w} exceeds kernel length {m}"));
    }
    Ok((b, w))
}

/// `value` as a `w`-bit pattern repeated over `m` bits from the most
/// significant end; a trailing partial copy is truncated.
fn tile_mask(value: u64, w: u32, m: u32) -> u64 {
    (0..m).fold(0u64, |acc, k| {
        let bit = (value >> (w - 1 - k % w)) & 1;
        acc | bit << (m - 1 - k)
    })
}

/// Derives `r` kernels from seed digits: kernel `i * b + j` is base vector
/// `j` XOR the `i`-th mask repeated over its sub-vectors.
pub fn generate_kernels(left_digits: &DataBlock, r: usize, m: u32) -> Result<Vec<CosetKernel>> {
    let (b, w) = kernel_geometry(left_digits.len(), r, m)?;
    let mut out = Vec::with_capacity(r);
    for i in 0..r / b {
        let mask = tile_mask(i as u64, w, m);
        for j in 0..b {
            let base = left_digits.sub_block(j as u32, m);
            out.push(CosetKernel { bits: base ^ mask, len: m, index: i * b + j });
        }
    }
    Ok(out)
}

/// Kernels for read-only storage, derived from one `m`-bit seed vector.
pub fn stored_kernels_from_seed(seed: u64, r: usize, m: u32) -> Result<Vec<CosetKernel>> {
    generate_kernels(&DataBlock::new(seed & low_mask(m), m)?, r, m)
}

/// `r` independent uniformly random kernels.
pub fn random_kernels<R: Rng + ?Sized>(rng: &mut R, r: usize, m: u32) -> Result<Vec<CosetKernel>> {
    (0..r)
        .map(|i| CosetKernel::new(rng.random::<u64>() & low_mask(m), m, i))
        .collect()
}
