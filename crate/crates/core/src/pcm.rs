//! Simulated MLC phase-change memory.
//!
//! Each row holds 256 data cells (eight 64-bit words, 32 cells each) followed
//! by 32 aux cells. Word `w` owns data cells `32w..32w+32` and aux cells
//! `256+4w..256+4w+4`. Runs of cells are packed like a [`DataBlock`]: the
//! first cell is the most significant symbol.
//!
//! [`DataBlock`]: crate::bits::DataBlock

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};

use crate::bits::{low_mask, widen_symbol_mask, RIGHT_DIGITS};
use crate::codec::OldState;
use crate::cost::SymbolTransitionTable;
use crate::ecc::{ecp_assign, secded_pair_decode, EcpTable};
use crate::error::{config_err, Error, Result};

pub const ROW_BYTES: u64 = 64;
pub const WORDS_PER_ROW: usize = 8;
pub const CELLS_PER_WORD: u32 = 32;
pub const DATA_CELLS: u32 = 256;
pub const AUX_CELLS: u32 = 32;
pub const AUX_CELLS_PER_WORD: u32 = 4;
pub const CELLS_PER_ROW: u32 = DATA_CELLS + AUX_CELLS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryGeometry {
    pub capacity_bytes: u64,
    pub page_bytes: u64,
}

impl MemoryGeometry {
    pub const DESK_CAPACITY: u64 = 1 << 20;

    pub fn new(capacity_bytes: u64, page_bytes: u64) -> Result<Self> {
        if page_bytes == 0 || !page_bytes.is_multiple_of(ROW_BYTES) {
            return config_err(format!("page size {page_bytes} must be a multiple of {ROW_BYTES}"));
        }
        if capacity_bytes == 0 || !capacity_bytes.is_multiple_of(page_bytes) {
            return config_err(format!("capacity {capacity_bytes} must be a whole number of pages"));
        }
        Ok(Self { capacity_bytes, page_bytes })
    }

    pub fn desk() -> Self {
        Self { capacity_bytes: Self::DESK_CAPACITY, page_bytes: 4096 }
    }

    pub fn rows(&self) -> u64 {
        self.capacity_bytes / ROW_BYTES
    }

    pub fn rows_per_page(&self) -> u64 {
        self.page_bytes / ROW_BYTES
    }

    pub fn total_cells(&self) -> u64 {
        self.rows() * CELLS_PER_ROW as u64
    }

    /// Physical row of a byte address.
    pub fn row_of(&self, addr: u64) -> Result<u64> {
        let row = addr / ROW_BYTES;
        if row >= self.rows() {
            return Err(Error::OutOfRange { addr, limit: self.capacity_bytes });
        }
        Ok(row)
    }

    /// Parses a capacity such as `1MiB`, `2GiB` or a byte count.
    pub fn parse_capacity(s: &str) -> Result<u64> {
        let s = s.trim();
        let (num, mult) = [("KiB", 1u64 << 10), ("MiB", 1 << 20), ("GiB", 1 << 30), ("K", 1 << 10), ("M", 1 << 20), ("G", 1 << 30)]
            .iter()
            .find_map(|(suf, m)| s.strip_suffix(suf).map(|n| (n, *m)))
            .unwrap_or((s, 1));
        num.trim()
            .parse::<u64>()
            .ok()
            .and_then(|v| v.checked_mul(mult))
            .ok_or_else(|| Error::Config(format!("bad capacity {s:?}")))
    }
}

impl Default for MemoryGeometry {
    fn default() -> Self {
        Self::desk()
    }
}

/// Snapshot of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub state: u8,
    pub writes_survived: u32,
    pub lifetime_budget: u32,
    pub stuck: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WriteReport {
    pub energy: f64,
    pub cells_changed: u64,
    pub saw_count: u64,
}

impl std::ops::AddAssign for WriteReport {
    fn add_assign(&mut self, o: Self) {
        self.energy += o.energy;
        self.cells_changed += o.cells_changed;
        self.saw_count += o.saw_count;
    }
}

/// A packed run of cells: values, stuck mask (right-digit positions) and
/// frozen values on the stuck cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CellRun {
    pub values: u64,
    pub stuck: u64,
    pub frozen: u64,
}

/// Full contents of a row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RowImage {
    pub data: [u64; WORDS_PER_ROW],
    pub aux: u64,
}

impl RowImage {
    /// Aux field of word `w`: its four cells as an 8-bit value.
    pub fn word_aux(&self, w: usize) -> u64 {
        (self.aux >> (56 - 8 * w)) & 0xFF
    }

    pub fn set_word_aux(&mut self, w: usize, v: u64) {
        let shift = 56 - 8 * w;
        self.aux = (self.aux & !(0xFF << shift)) | (v & 0xFF) << shift;
    }
}

/// Per-cell endurance: normal with the given mean and coefficient of
/// variation, redrawn until at least 1, then rounded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifetimeModel {
    pub mean_writes: f64,
    pub coefficient_of_variation: f64,
}

impl LifetimeModel {
    pub const DESK_MEAN: f64 = 1e4;
    pub const DEFAULT_COV: f64 = 0.2;

    pub fn new(mean_writes: f64, coefficient_of_variation: f64) -> Result<Self> {
        if !mean_writes.is_finite() || !coefficient_of_variation.is_finite() || mean_writes < 1.0 || coefficient_of_variation < 0.0 || mean_writes > u32::MAX as f64 {
            return config_err("lifetime mean must be in [1, 2^32) and CoV >= 0");
        }
        Ok(Self { mean_writes, coefficient_of_variation })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<u32> {
        let sd = self.mean_writes * self.coefficient_of_variation;
        if sd == 0.0 {
            return vec![self.mean_writes.round() as u32; count];
        }
        let normal = Normal::new(self.mean_writes, sd).expect("finite parameters");
        (0..count)
            .map(|_| loop {
                let x = normal.sample(rng);
                if x >= 1.0 && x < u32::MAX as f64 {
                    break x.round() as u32;
                }
            })
            .collect()
    }
}

impl Default for LifetimeModel {
    fn default() -> Self {
        Self { mean_writes: Self::DESK_MEAN, coefficient_of_variation: Self::DEFAULT_COV }
    }
}

/// Cells stuck at sampled values, sorted by cell index.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultMap {
    pub total_cells: u64,
    pub seed: u64,
    pub rate: f64,
    pub stuck: Vec<(u64, u8)>,
}

const FAULT_MAGIC: &[u8; 8] = b"VCCFMAP1";

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push(v as u8 | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn get_varint(buf: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *buf.get(*pos).ok_or_else(|| Error::Format("truncated varint".into()))?;
        *pos += 1;
        v |= ((b & 0x7F) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::Format("varint too long".into()))
}

impl FaultMap {
    /// Bernoulli(`rate`) per cell with uniformly drawn frozen symbols.
    pub fn snapshot(total_cells: u64, rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return config_err(format!("fault rate {rate} not in [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stuck = Vec::new();
        if rate > 0.0 {
            let gap = Geometric::new(rate).expect("rate in (0, 1]");
            let mut cell = gap.sample(&mut rng);
            while cell < total_cells {
                stuck.push((cell, rng.random_range(0..4u8)));
                cell = cell.saturating_add(1 + gap.sample(&mut rng));
            }
        }
        Ok(Self { total_cells, seed, rate, stuck })
    }

    /// Header, then runs of consecutive stuck cells: varint gap from the end
    /// of the previous run, varint run length, symbols packed four per byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.stuck.len());
        out.extend_from_slice(FAULT_MAGIC);
        out.extend_from_slice(&self.total_cells.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.rate.to_bits().to_le_bytes());
        out.extend_from_slice(&(self.stuck.len() as u64).to_le_bytes());
        let mut next = 0u64;
        let mut i = 0;
        while i < self.stuck.len() {
            let start = self.stuck[i].0;
            let mut j = i + 1;
            while j < self.stuck.len() && self.stuck[j].0 == self.stuck[j - 1].0 + 1 {
                j += 1;
            }
            put_varint(&mut out, start - next);
            put_varint(&mut out, (j - i) as u64);
            for chunk in self.stuck[i..j].chunks(4) {
                out.push(chunk.iter().enumerate().fold(0u8, |b, (k, &(_, s))| b | s << (2 * k)));
            }
            next = self.stuck[j - 1].0 + 1;
            i = j;
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 40 || &buf[..8] != FAULT_MAGIC {
            return Err(Error::Format("not a fault map".into()));
        }
        let word = |k: usize| u64::from_le_bytes(buf[8 + 8 * k..16 + 8 * k].try_into().expect("8 bytes"));
        let (total_cells, seed, rate, count) = (word(0), word(1), f64::from_bits(word(2)), word(3));
        let mut stuck = Vec::with_capacity(count.min(1 << 24) as usize);
        let mut pos = 40;
        let mut next = 0u64;
        while (stuck.len() as u64) < count {
            let start = next
                .checked_add(get_varint(buf, &mut pos)?)
                .ok_or_else(|| Error::Format("cell index overflow".into()))?;
            let len = get_varint(buf, &mut pos)?;
            if len == 0 || stuck.len() as u64 + len > count {
                return Err(Error::Format("bad run length".into()));
            }
            let bytes = len.div_ceil(4) as usize;
            let body = buf.get(pos..pos + bytes).ok_or_else(|| Error::Format("truncated run".into()))?;
            for k in 0..len {
                stuck.push((start + k, (body[(k / 4) as usize] >> (2 * (k % 4))) & 3));
            }
            pos += bytes;
            next = start + len;
        }
        if pos != buf.len() || next > total_cells {
            return Err(Error::Format("trailing bytes or cell out of range".into()));
        }
        Ok(Self { total_cells, seed, rate, stuck })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

/// The cell array of one simulated memory.
#[derive(Clone, Debug)]
pub struct CellArray {
    geometry: MemoryGeometry,
    table: SymbolTransitionTable,
    state: Vec<u8>,
    wear: Vec<u32>,
    /// Empty when cells never wear out.
    budget: Vec<u32>,
    stuck: Vec<bool>,
}

impl CellArray {
    pub fn new(geometry: MemoryGeometry, table: SymbolTransitionTable) -> Self {
        let n = geometry.total_cells() as usize;
        Self { geometry, table, state: vec![0; n], wear: vec![0; n], budget: Vec::new(), stuck: vec![false; n] }
    }

    /// Cells start at uniformly random symbols.
    pub fn with_random_state(geometry: MemoryGeometry, table: SymbolTransitionTable, seed: u64) -> Self {
        let mut a = Self::new(geometry, table);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut a.state {
            *s = rng.random_range(0..4);
        }
        a
    }

    pub fn geometry(&self) -> &MemoryGeometry {
        &self.geometry
    }

    pub fn table(&self) -> &SymbolTransitionTable {
        &self.table
    }

    pub fn set_lifetime(&mut self, model: &LifetimeModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.budget = model.sample(&mut rng, self.state.len());
    }

    pub fn apply_fault_map(&mut self, map: &FaultMap) -> Result<()> {
        if map.total_cells != self.state.len() as u64 {
            return Err(Error::InvalidInput(format!(
                "fault map covers {} cells, array has {}",
                map.total_cells,
                self.state.len()
            )));
        }
        for &(c, v) in &map.stuck {
            self.stuck[c as usize] = true;
            self.state[c as usize] = v;
        }
        Ok(())
    }

    pub fn cell(&self, index: u64) -> Cell {
        let i = index as usize;
        Cell {
            state: self.state[i],
            writes_survived: self.wear[i],
            lifetime_budget: self.budget.get(i).copied().unwrap_or(u32::MAX),
            stuck: self.stuck[i],
        }
    }

    pub fn total_wear(&self) -> u64 {
        self.wear.iter().map(|&w| w as u64).sum()
    }

    pub fn stuck_cells(&self) -> usize {
        self.stuck.iter().filter(|&&s| s).count()
    }

    fn base(&self, row: u64, start: u32, count: u32) -> Result<usize> {
        if row >= self.geometry.rows() {
            return Err(Error::OutOfRange { addr: row * ROW_BYTES, limit: self.geometry.capacity_bytes });
        }
        if count == 0 || count > 32 || start + count > CELLS_PER_ROW {
            return Err(Error::InvalidInput(format!("cells {start}..{} outside a row", start + count)));
        }
        Ok((row * CELLS_PER_ROW as u64 + start as u64) as usize)
    }

    pub fn read_cells(&self, row: u64, start: u32, count: u32) -> Result<CellRun> {
        let b = self.base(row, start, count)?;
        let mut run = CellRun::default();
        for k in 0..count as usize {
            let shift = 2 * (count as usize - 1 - k);
            run.values |= (self.state[b + k] as u64) << shift;
            if self.stuck[b + k] {
                run.stuck |= 1 << shift;
            }
        }
        run.frozen = run.values & widen_symbol_mask(run.stuck);
        Ok(run)
    }

    /// Differential write of `count` cells. Unchanged cells are not
    /// programmed; stuck cells keep their value and count as SAW when it
    /// differs from the request.
    pub fn write_cells(&mut self, row: u64, start: u32, count: u32, symbols: u64) -> Result<WriteReport> {
        let b = self.base(row, start, count)?;
        let mut rep = WriteReport::default();
        for k in 0..count as usize {
            let new = ((symbols >> (2 * (count as usize - 1 - k))) & 3) as u8;
            let i = b + k;
            let old = self.state[i];
            if new == old {
                continue;
            }
            if self.stuck[i] {
                rep.saw_count += 1;
                continue;
            }
            rep.energy += self.table.get(old, new);
            rep.cells_changed += 1;
            self.state[i] = new;
            self.wear[i] += 1;
            if let Some(&budget) = self.budget.get(i) {
                if self.wear[i] > budget {
                    self.stuck[i] = true;
                }
            }
        }
        Ok(rep)
    }

    pub fn read_row(&self, row: u64) -> Result<RowImage> {
        let mut img = RowImage::default();
        for w in 0..WORDS_PER_ROW {
            img.data[w] = self.read_cells(row, w as u32 * CELLS_PER_WORD, CELLS_PER_WORD)?.values;
        }
        img.aux = self.read_cells(row, DATA_CELLS, AUX_CELLS)?.values;
        Ok(img)
    }

    pub fn write_row(&mut self, row: u64, img: &RowImage) -> Result<WriteReport> {
        let mut rep = WriteReport::default();
        for w in 0..WORDS_PER_ROW {
            rep += self.write_cells(row, w as u32 * CELLS_PER_WORD, CELLS_PER_WORD, img.data[w])?;
        }
        rep += self.write_cells(row, DATA_CELLS, AUX_CELLS, img.aux)?;
        Ok(rep)
    }

    /// Previous contents of word `w` and its lowest `aux_cells` aux cells.
    pub fn old_state(&self, row: u64, w: usize, aux_cells: u32) -> Result<OldState> {
        let d = self.read_cells(row, w as u32 * CELLS_PER_WORD, CELLS_PER_WORD)?;
        let mut st = OldState { data: d.values, data_stuck: d.stuck, data_frozen: d.frozen, ..OldState::default() };
        if aux_cells > 0 {
            let a = self.read_cells(row, aux_start(w, aux_cells), aux_cells)?;
            st.aux = a.values;
            st.aux_stuck = a.stuck;
            st.aux_frozen = a.frozen;
        }
        Ok(st)
    }

    /// Writes an encoded word and its aux cells.
    pub fn write_word(&mut self, row: u64, w: usize, payload: u64, aux: u64, aux_cells: u32) -> Result<WriteReport> {
        let mut rep = self.write_cells(row, w as u32 * CELLS_PER_WORD, CELLS_PER_WORD, payload)?;
        if aux_cells > 0 {
            rep += self.write_cells(row, aux_start(w, aux_cells), aux_cells, aux)?;
        }
        Ok(rep)
    }
}

/// First cell of the lowest `aux_cells` aux cells of word `w`.
pub fn aux_start(w: usize, aux_cells: u32) -> u32 {
    DATA_CELLS + AUX_CELLS_PER_WORD * (w as u32 + 1) - aux_cells
}

/// How a row protects itself against stuck cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Corrector {
    /// Every cell must read back as written (unencoded or coset codes).
    None,
    /// One (72,64) codeword per word; check bits in the word's aux cells.
    Secded,
    /// Pointers in aux cells `256..256 + storage_cells`.
    Ecp(EcpTable),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowOutcome {
    Ok,
    Uncorrectable,
}

/// Judges a row after a write of `intended`. `aux_used` marks, at right-digit
/// positions of the aux field, the aux cells that carry information.
pub fn row_write_outcome(array: &CellArray, row: u64, intended: &RowImage, aux_used: u64, corrector: &mut Corrector) -> Result<RowOutcome> {
    let read = array.read_row(row)?;
    let aux_mask = widen_symbol_mask(aux_used & RIGHT_DIGITS);
    let ok = match corrector {
        Corrector::None => read.data == intended.data && (read.aux ^ intended.aux) & aux_mask == 0,
        Corrector::Secded => (0..WORDS_PER_ROW).step_by(2).all(|w| {
            let got = secded_pair_decode(read.data[w], read.data[w + 1], read.word_aux(w), read.word_aux(w + 1));
            got == Some((intended.data[w], intended.data[w + 1]))
        }),
        Corrector::Ecp(table) => {
            if (read.aux ^ intended.aux) & aux_mask != 0 {
                false
            } else {
                let mut want = Vec::with_capacity(DATA_CELLS as usize);
                let mut stuck = Vec::with_capacity(DATA_CELLS as usize);
                for w in 0..WORDS_PER_ROW {
                    let run = array.read_cells(row, w as u32 * CELLS_PER_WORD, CELLS_PER_WORD)?;
                    for k in 0..CELLS_PER_WORD {
                        let shift = 2 * (CELLS_PER_WORD - 1 - k);
                        want.push(((intended.data[w] >> shift) & 3) as u8);
                        stuck.push((run.stuck >> shift & 1 == 1).then(|| ((run.frozen >> shift) & 3) as u8));
                    }
                }
                match ecp_assign(&want, &stuck, table) {
                    Ok(t) => {
                        *table = t;
                        true
                    }
                    Err(Error::EcpExhausted { .. }) => false,
                    Err(e) => return Err(e),
                }
            }
        }
    };
    Ok(if ok { RowOutcome::Ok } else { RowOutcome::Uncorrectable })
}

/// Aux-used mask covering the lowest `cells` cells of every word's group.
pub fn per_word_aux_mask(cells: u32) -> u64 {
    (0..WORDS_PER_ROW).fold(0u64, |acc, w| acc | (low_mask(2 * cells) & RIGHT_DIGITS) << (56 - 8 * w))
}

/// Aux-used mask covering the first `cells` aux cells of the row.
pub fn leading_aux_mask(cells: u32) -> u64 {
    if cells == 0 {
        return 0;
    }
    (low_mask(2 * cells) << (64 - 2 * cells)) & RIGHT_DIGITS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{mlc_energy, Transition};
    use crate::ecc::secded_pair_encode;
    use proptest::prelude::*;
    use rand::Rng;

    fn small() -> MemoryGeometry {
        MemoryGeometry::new(4096, 4096).unwrap()
    }

    fn array() -> CellArray {
        CellArray::new(small(), SymbolTransitionTable::default())
    }

    #[test]
    fn geometry_counts() {
        let g = MemoryGeometry::desk();
        assert_eq!((g.rows(), g.rows_per_page(), g.total_cells()), (16384, 64, 16384 * 288));
        assert!(g.row_of(1 << 20).is_err());
        assert_eq!(g.row_of(130).unwrap(), 2);
        assert!(MemoryGeometry::new(1000, 4096).is_err());
        assert_eq!(MemoryGeometry::parse_capacity("2GiB").unwrap(), 2 << 30);
        assert_eq!(MemoryGeometry::parse_capacity("4096").unwrap(), 4096);
    }

    #[test]
    fn fresh_row_reads_initial_state_and_rewrite_is_free() {
        let mut a = array();
        assert_eq!(a.read_row(3).unwrap(), RowImage::default());
        let img = RowImage { data: [0x0123_4567_89AB_CDEF; 8], aux: 0xF0F0 };
        a.write_row(3, &img).unwrap();
        assert_eq!(a.read_row(3).unwrap(), img);
        let rep = a.write_row(3, &img).unwrap();
        assert_eq!(rep, WriteReport::default());
        assert!(a.read_row(64).is_err());
    }

    #[test]
    fn single_low_transition_costs_low_entry() {
        let mut a = array();
        a.write_cells(0, 0, 1, 0b01).unwrap();
        let rep = a.write_cells(0, 0, 1, 0b00).unwrap();
        assert_eq!(SymbolTransitionTable::classify(0b01, 0b00), Transition::Low);
        assert_eq!((rep.energy, rep.cells_changed), (1.0, 1));
    }

    #[test]
    fn scripted_wear_out_freezes_cell() {
        let mut a = array();
        a.set_lifetime(&LifetimeModel::new(2.0, 0.0).unwrap(), 1);
        for (k, v) in [1u64, 2, 3].iter().enumerate() {
            a.write_cells(0, 5, 1, *v).unwrap();
            assert_eq!(a.cell(5).stuck, k == 2);
        }
        assert_eq!(a.cell(5).state, 3);
        let rep = a.write_cells(0, 5, 1, 0).unwrap();
        assert_eq!((rep.saw_count, rep.energy), (1, 0.0));
        assert_eq!(a.read_cells(0, 5, 1).unwrap().values, 3);
    }

    #[test]
    fn fault_map_rates_and_roundtrip() {
        assert!(FaultMap::snapshot(1000, 0.0, 1).unwrap().stuck.is_empty());
        assert_eq!(FaultMap::snapshot(1000, 1.0, 1).unwrap().stuck.len(), 1000);
        let cells = 1u64 << 20;
        let m = FaultMap::snapshot(cells, 1e-2, 7).unwrap();
        let mean = cells as f64 * 1e-2;
        let sd = (cells as f64 * 1e-2 * 0.99).sqrt();
        assert!((m.stuck.len() as f64 - mean).abs() < 4.0 * sd);
        assert_eq!(FaultMap::from_bytes(&m.to_bytes()).unwrap(), m);
        let dense = FaultMap::snapshot(5000, 0.6, 2).unwrap();
        assert_eq!(FaultMap::from_bytes(&dense.to_bytes()).unwrap(), dense);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.map");
        m.save(&p).unwrap();
        assert_eq!(FaultMap::load(&p).unwrap(), m);
        assert!(FaultMap::from_bytes(&m.to_bytes()[..50]).is_err());
    }

    #[test]
    fn secded_row_outcomes() {
        let mut a = array();
        let data = 0xFFFF_FFFF_FFFF_FFFFu64;
        let mut img = RowImage::default();
        let (ca, cb) = secded_pair_encode(data, data);
        for w in (0..8).step_by(2) {
            img.data[w] = data;
            img.data[w + 1] = data;
            img.set_word_aux(w, ca);
            img.set_word_aux(w + 1, cb);
        }
        let cells = a.geometry().total_cells();
        // one stuck cell in word 0 wrong in both digits
        let map = FaultMap { total_cells: cells, seed: 0, rate: 0.0, stuck: vec![(0, 0b00)] };
        a.apply_fault_map(&map).unwrap();
        a.write_row(0, &img).unwrap();
        let mut c = Corrector::Secded;
        assert_eq!(row_write_outcome(&a, 0, &img, per_word_aux_mask(4), &mut c).unwrap(), RowOutcome::Ok);
        // a second wrong left digit in the pair, this time in word 1
        let map = FaultMap { total_cells: cells, seed: 0, rate: 0.0, stuck: vec![(35, 0b01)] };
        a.apply_fault_map(&map).unwrap();
        a.write_row(0, &img).unwrap();
        assert_eq!(row_write_outcome(&a, 0, &img, per_word_aux_mask(4), &mut c).unwrap(), RowOutcome::Uncorrectable);
        let mut none = Corrector::None;
        assert_eq!(row_write_outcome(&a, 1, &RowImage::default(), 0, &mut none).unwrap(), RowOutcome::Ok);
    }

    #[test]
    fn ecp_row_outcomes() {
        let mut a = array();
        let cells = a.geometry().total_cells();
        let stuck: Vec<(u64, u8)> = [2u64, 40, 100, 200].iter().map(|&c| (c, 1)).collect();
        a.apply_fault_map(&FaultMap { total_cells: cells, seed: 0, rate: 0.0, stuck: stuck[..3].to_vec() }).unwrap();
        let img = RowImage::default();
        let mut c = Corrector::Ecp(EcpTable::default());
        a.write_row(0, &img).unwrap();
        assert_eq!(row_write_outcome(&a, 0, &img, 0, &mut c).unwrap(), RowOutcome::Ok);
        a.apply_fault_map(&FaultMap { total_cells: cells, seed: 0, rate: 0.0, stuck }).unwrap();
        assert_eq!(row_write_outcome(&a, 0, &img, 0, &mut c).unwrap(), RowOutcome::Uncorrectable);
    }

    #[test]
    fn aux_masks() {
        assert_eq!(per_word_aux_mask(4), RIGHT_DIGITS);
        assert_eq!(leading_aux_mask(15).count_ones(), 15);
        assert_eq!(leading_aux_mask(1), 1 << 62);
        assert_eq!(aux_start(0, 3), 257);
        assert_eq!(aux_start(7, 4), 284);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn write_storm_keeps_invariants(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = array();
            a.set_lifetime(&LifetimeModel::new(20.0, 0.3).unwrap(), seed);
            let mut frozen: Vec<Option<u8>> = vec![None; a.state.len()];
            let mut programmed = 0u64;
            for _ in 0..400 {
                let row = rng.random_range(0..4u64);
                let start = rng.random_range(0..CELLS_PER_ROW - 32);
                let symbols: u64 = rng.random();
                let before: Vec<u8> = (0..32).map(|k| a.cell(row * 288 + (start + k) as u64).state).collect();
                let after_sym: Vec<u8> = (0..32).map(|k| ((symbols >> (62 - 2 * k)) & 3) as u8).collect();
                let stuck_before: Vec<bool> = (0..32).map(|k| a.cell(row * 288 + (start + k) as u64).stuck).collect();
                let rep = a.write_cells(row, start, 32, symbols).unwrap();
                programmed += rep.cells_changed;
                // energy equals the table sum over live changed cells
                let live_old: Vec<u8> = (0..32).map(|k| if stuck_before[k] { 0 } else { before[k] }).collect();
                let live_new: Vec<u8> = (0..32).map(|k| if stuck_before[k] { 0 } else { after_sym[k] }).collect();
                prop_assert_eq!(rep.energy, mlc_energy(&live_old, &live_new, a.table()).unwrap());
                for k in 0..32u64 {
                    let i = (row * 288 + start as u64 + k) as usize;
                    if let Some(v) = frozen[i] {
                        prop_assert_eq!(a.cell(i as u64).state, v);
                    }
                    let c = a.cell(i as u64);
                    prop_assert_eq!(c.stuck, c.writes_survived > c.lifetime_budget);
                    if c.stuck && frozen[i].is_none() {
                        frozen[i] = Some(c.state);
                    }
                }
            }
            prop_assert_eq!(a.total_wear(), programmed);
        }
    }
}
