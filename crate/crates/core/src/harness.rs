//! Synthetic writeback traces and the experiment drivers: energy sweep,
//! fixed-fault-rate SAW sweep and lifetime to failure.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::baselines::{Encoder, Flipcy, FnwConfig, RccCodebook, Unencoded};
use crate::bits::{low_mask, DataBlock};
use crate::codec::{stored_kernels_from_seed, VccConfig, VccMode};
use crate::cost::{opt_energy, opt_saw, CostFunction, SymbolTransitionTable};
use crate::crypto::{Line, LineCipherState, LINE_WORDS};
use crate::ecc::{secded_pair_encode, EcpTable};
use crate::error::{config_err, Error, Result};
use crate::pcm::{
    leading_aux_mask, per_word_aux_mask, row_write_outcome, CellArray, Corrector, FaultMap, LifetimeModel,
    MemoryGeometry, RowImage, RowOutcome, WriteReport, DATA_CELLS, ROW_BYTES,
};

/// One evicted line: byte address and plaintext.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub addr: u64,
    pub payload: Line,
}

impl TraceRecord {
    pub fn new(addr: u64, payload: Line) -> Result<Self> {
        if !addr.is_multiple_of(ROW_BYTES) {
            return Err(Error::Format(format!("address {addr:#x} is not 64-byte aligned")));
        }
        Ok(Self { addr, payload })
    }

    fn payload_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        for (j, w) in self.payload.iter().enumerate() {
            out[8 * j..8 * j + 8].copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    fn from_bytes(addr: u64, bytes: &[u8]) -> Result<Self> {
        let mut payload = [0u64; LINE_WORDS];
        for (j, w) in payload.iter_mut().enumerate() {
            *w = u64::from_le_bytes(bytes[8 * j..8 * j + 8].try_into().expect("8 bytes"));
        }
        Self::new(addr, payload)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AddressProfile {
    Uniform,
    /// Zipf-distributed ranks over `working_set` rows scattered through the
    /// memory by a seeded permutation.
    Hotspot { zipf_s: f64, working_set: u64 },
}

impl AddressProfile {
    pub const DEFAULT_ZIPF_S: f64 = 1.0;
    pub const DEFAULT_WORKING_SET: u64 = 1024;

    pub fn hotspot() -> Self {
        Self::Hotspot { zipf_s: Self::DEFAULT_ZIPF_S, working_set: Self::DEFAULT_WORKING_SET }
    }
}

impl fmt::Display for AddressProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => f.write_str("uniform"),
            Self::Hotspot { zipf_s, working_set } => write!(f, "hotspot:{zipf_s}:{working_set}"),
        }
    }
}

impl FromStr for AddressProfile {
    type Err = Error;

    /// `uniform`, `hotspot` or `hotspot:<zipf_s>:<working_set>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["uniform"] => Ok(Self::Uniform),
            ["hotspot"] => Ok(Self::hotspot()),
            ["hotspot", z, w] => {
                let zipf_s: f64 = z.parse().map_err(|_| Error::Config(format!("bad zipf exponent {z:?}")))?;
                let working_set: u64 = w.parse().map_err(|_| Error::Config(format!("bad working set {w:?}")))?;
                if !zipf_s.is_finite() || zipf_s <= 0.0 || working_set == 0 {
                    return config_err("hotspot needs zipf_s > 0 and a non-empty working set");
                }
                Ok(Self::Hotspot { zipf_s, working_set })
            }
            _ => config_err(format!("unknown address profile {s:?}")),
        }
    }
}

/// Deterministic stream of trace records with uniform payloads.
pub struct TraceGenerator {
    rng: ChaCha8Rng,
    rows: u64,
    zipf: Option<(Zipf<f64>, Vec<u64>)>,
    remaining: Option<u64>,
}

impl TraceGenerator {
    /// `length` of `None` streams without end.
    pub fn new(profile: AddressProfile, rows: u64, length: Option<u64>, seed: u64) -> Result<Self> {
        if rows == 0 {
            return config_err("memory has no rows");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zipf = match profile {
            AddressProfile::Uniform => None,
            AddressProfile::Hotspot { zipf_s, working_set } => {
                let ws = working_set.min(rows);
                let z = Zipf::new(ws as f64, zipf_s).map_err(|e| Error::Config(format!("zipf: {e}")))?;
                // partial Fisher-Yates: the first `ws` entries of a random permutation
                let mut perm: Vec<u64> = (0..rows).collect();
                for i in 0..ws as usize {
                    let j = rng.random_range(i..rows as usize);
                    perm.swap(i, j);
                }
                perm.truncate(ws as usize);
                Some((z, perm))
            }
        };
        Ok(Self { rng, rows, zipf, remaining: length })
    }
}

impl Iterator for TraceGenerator {
    type Item = TraceRecord;

    fn next(&mut self) -> Option<TraceRecord> {
        if let Some(r) = &mut self.remaining {
            if *r == 0 {
                return None;
            }
            *r -= 1;
        }
        let row = match &self.zipf {
            None => self.rng.random_range(0..self.rows),
            Some((z, perm)) => perm[z.sample(&mut self.rng) as usize - 1],
        };
        let mut payload = [0u64; LINE_WORDS];
        for w in &mut payload {
            *w = self.rng.next_u64();
        }
        Some(TraceRecord { addr: row * ROW_BYTES, payload })
    }
}

pub fn generate_trace(profile: AddressProfile, rows: u64, length: u64, seed: u64) -> Result<Vec<TraceRecord>> {
    Ok(TraceGenerator::new(profile, rows, Some(length), seed)?.collect())
}

/// 8-byte little-endian address followed by the 64-byte payload.
pub fn write_trace_binary<W: Write>(records: &[TraceRecord], mut w: W) -> Result<()> {
    for r in records {
        w.write_all(&r.addr.to_le_bytes())?;
        w.write_all(&r.payload_bytes())?;
    }
    Ok(())
}

pub fn read_trace_binary<R: Read>(mut r: R) -> Result<Vec<TraceRecord>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % 72 != 0 {
        return Err(Error::Format(format!("{} bytes is not a whole number of records", buf.len())));
    }
    buf.chunks(72)
        .map(|c| TraceRecord::from_bytes(u64::from_le_bytes(c[..8].try_into().expect("8 bytes")), &c[8..]))
        .collect()
}

/// One `address:payload` line per record, both in hex.
pub fn write_trace_hex<W: Write>(records: &[TraceRecord], mut w: W) -> Result<()> {
    for r in records {
        write!(w, "{:#x}:", r.addr)?;
        for b in r.payload_bytes() {
            write!(w, "{b:02x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_trace_hex<R: BufRead>(r: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("line {}: {what}", n + 1));
        let (a, p) = line.split_once(':').ok_or_else(|| bad("expected address:payload"))?;
        let a = a.trim();
        let addr = u64::from_str_radix(a.strip_prefix("0x").unwrap_or(a), 16).map_err(|_| bad("bad address"))?;
        let p = p.trim();
        if p.len() != 128 || !p.is_ascii() {
            return Err(bad("payload must be 128 hex characters"));
        }
        let bytes = (0..64)
            .map(|i| u8::from_str_radix(&p[2 * i..2 * i + 2], 16))
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|_| bad("bad hex digit"))?;
        out.push(TraceRecord::from_bytes(addr, &bytes).map_err(|_| bad("address not 64-byte aligned"))?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Technique {
    Unencoded,
    Secded,
    Ecp3,
    DbiFnw,
    Flipcy,
    Rcc,
    Vcc,
    VccStored,
}

impl Technique {
    pub const ALL: [Technique; 8] = [
        Self::Unencoded,
        Self::Secded,
        Self::Ecp3,
        Self::DbiFnw,
        Self::Flipcy,
        Self::Rcc,
        Self::Vcc,
        Self::VccStored,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Unencoded => "unencoded",
            Self::Secded => "secded",
            Self::Ecp3 => "ecp3",
            Self::DbiFnw => "dbi_fnw",
            Self::Flipcy => "flipcy",
            Self::Rcc => "rcc",
            Self::Vcc => "vcc",
            Self::VccStored => "vcc_stored",
        }
    }

    /// Whether the coset count is a free parameter.
    pub fn sweeps_cosets(&self) -> bool {
        matches!(self, Self::Rcc | Self::Vcc | Self::VccStored)
    }

    /// Candidate count of techniques with a fixed candidate set.
    pub fn fixed_candidates(&self) -> u64 {
        match self {
            Self::DbiFnw => 16,
            Self::Flipcy => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s || (s == "none" && *t == Self::Unencoded) || (s == "ecp" && *t == Self::Ecp3))
            .ok_or_else(|| Error::Config(format!("unknown technique {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    OptEnergy,
    OptSaw,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Self::OptEnergy => "opt_energy",
            Self::OptSaw => "opt_saw",
        }
    }

    pub fn cost(&self, table: SymbolTransitionTable) -> Box<dyn CostFunction> {
        match self {
            Self::OptEnergy => Box::new(opt_energy(table)),
            Self::OptSaw => Box::new(opt_saw(table)),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "opt_energy" => Ok(Self::OptEnergy),
            "opt_saw" => Ok(Self::OptSaw),
            _ => config_err(format!("unknown objective {s:?}")),
        }
    }
}

/// Everything an experiment run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub techniques: Vec<Technique>,
    pub coset_counts: Vec<u64>,
    pub objective: Objective,
    pub geometry: MemoryGeometry,
    pub seeds: Vec<u64>,
    pub fault_rate: f64,
    pub lifetime: LifetimeModel,
    pub profile: AddressProfile,
    /// 64-bit word writes per sweep run.
    pub word_writes: u64,
    pub table: SymbolTransitionTable,
    /// Kernel length of generated (right-digit) VCC.
    pub vcc_m: u32,
    /// Kernel length of stored full-block VCC.
    pub stored_m: u32,
    /// Distinct uncorrectable rows that end a lifetime run.
    pub failed_rows: usize,
    /// Upper bound on row writes per lifetime run.
    pub max_row_writes: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            techniques: Technique::ALL.to_vec(),
            coset_counts: vec![32, 64, 128, 256],
            objective: Objective::OptEnergy,
            geometry: MemoryGeometry::desk(),
            seeds: vec![1, 2, 3, 4, 5],
            fault_rate: 1e-2,
            lifetime: LifetimeModel::default(),
            profile: AddressProfile::Uniform,
            word_writes: 100_000,
            table: SymbolTransitionTable::default(),
            vcc_m: 16,
            stored_m: 16,
            failed_rows: 4,
            max_row_writes: 50_000_000,
        }
    }
}

fn parse_list<T: FromStr>(v: &str, what: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| Error::Config(format!("bad {what} {x:?}"))))
        .collect()
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let num = |what: &str| -> Result<f64> { v.parse().map_err(|_| Error::Config(format!("bad {what} {v:?}"))) };
        match key.trim() {
            "techniques" | "technique" => {
                self.techniques = v.split(',').map(Technique::from_str).collect::<Result<_>>()?;
            }
            "coset_counts" | "coset_count" | "N" => self.coset_counts = parse_list(v, "coset count")?,
            "objective" => self.objective = v.parse()?,
            "capacity" => {
                self.geometry = MemoryGeometry::new(MemoryGeometry::parse_capacity(v)?, self.geometry.page_bytes)?
            }
            "page_bytes" => {
                self.geometry = MemoryGeometry::new(self.geometry.capacity_bytes, MemoryGeometry::parse_capacity(v)?)?
            }
            "seeds" => self.seeds = parse_list(v, "seed")?,
            "fault_rate" => self.fault_rate = num("fault rate")?,
            "lifetime_mean" => self.lifetime = LifetimeModel::new(num("lifetime mean")?, self.lifetime.coefficient_of_variation)?,
            "lifetime_cov" => self.lifetime = LifetimeModel::new(self.lifetime.mean_writes, num("lifetime CoV")?)?,
            "profile" => self.profile = v.parse()?,
            "word_writes" => self.word_writes = num("word writes")? as u64,
            "energy_high" | "energy_low" => {
                let high = if key.trim() == "energy_high" { num("energy")? } else { self.table.get(0, 1) };
                let low = if key.trim() == "energy_low" { num("energy")? } else { self.table.get(1, 0) };
                self.table = SymbolTransitionTable::from_high_low(high, low)?;
            }
            "vcc_m" => self.vcc_m = num("kernel length")? as u32,
            "stored_m" => self.stored_m = num("kernel length")? as u32,
            "failed_rows" => self.failed_rows = num("failed rows")? as usize,
            "max_row_writes" => self.max_row_writes = num("row write limit")? as u64,
            entry if entry.contains("->") => {
                let key: String = entry.split_whitespace().collect();
                let text: String = self
                    .table
                    .to_config_string()
                    .lines()
                    .filter(|l| l.split('=').next().map(str::trim) != Some(key.as_str()))
                    .chain(std::iter::once(format!("{key} = {v}").as_str()))
                    .map(|l| format!("{l}\n"))
                    .collect();
                self.table = text.parse()?;
            }
            other => return config_err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key = value` lines in order.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (key, value) in kv_pairs(text)? {
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Fully resolved settings in the `from_kv` format.
    pub fn to_kv(&self) -> String {
        let techniques: Vec<&str> = self.techniques.iter().map(|t| t.name()).collect();
        let mut s = String::new();
        s += &format!("techniques = {}\n", techniques.join(","));
        s += &format!("coset_counts = {}\n", join(&self.coset_counts));
        s += &format!("objective = {}\n", self.objective);
        s += &format!("capacity = {}\n", self.geometry.capacity_bytes);
        s += &format!("page_bytes = {}\n", self.geometry.page_bytes);
        s += &format!("seeds = {}\n", join(&self.seeds));
        s += &format!("fault_rate = {}\n", self.fault_rate);
        s += &format!("lifetime_mean = {}\n", self.lifetime.mean_writes);
        s += &format!("lifetime_cov = {}\n", self.lifetime.coefficient_of_variation);
        s += &format!("profile = {}\n", self.profile);
        s += &format!("word_writes = {}\n", self.word_writes);
        s += &format!("vcc_m = {}\n", self.vcc_m);
        s += &format!("stored_m = {}\n", self.stored_m);
        s += &format!("failed_rows = {}\n", self.failed_rows);
        s += &format!("max_row_writes = {}\n", self.max_row_writes);
        s += &self.table.to_config_string();
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.techniques.is_empty() || self.seeds.is_empty() {
            return config_err("need at least one technique and one seed");
        }
        if !(0.0..=1.0).contains(&self.fault_rate) {
            return config_err(format!("fault rate {} not in [0, 1]", self.fault_rate));
        }
        if self.failed_rows == 0 {
            return config_err("failed_rows must be at least 1");
        }
        for t in self.techniques.iter().filter(|t| t.sweeps_cosets()) {
            for &n in &self.coset_counts {
                self.build_encoder(*t, n, 0)?;
            }
        }
        Ok(())
    }

    /// Word encoder of technique `t` at `cosets` candidates. Row-level
    /// techniques (SECDED, ECP3) write data unencoded.
    pub fn build_encoder(&self, t: Technique, cosets: u64, seed: u64) -> Result<Box<dyn Encoder>> {
        let need_pow2 = |p: u32| -> Result<usize> {
            if !cosets.is_power_of_two() || cosets >> p == 0 || cosets > 256 {
                return config_err(format!(
                    "{t} needs a power-of-two coset count in [{}, 256], got {cosets}",
                    1u64 << p
                ));
            }
            Ok((cosets >> p) as usize)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match t {
            Technique::Unencoded | Technique::Secded | Technique::Ecp3 => Box::new(Unencoded),
            Technique::DbiFnw => Box::new(FnwConfig::dbi(64)?),
            Technique::Flipcy => Box::new(Flipcy { n: 64 }),
            Technique::Rcc => {
                need_pow2(1)?;
                Box::new(RccCodebook::random(64, cosets as usize, &mut rng)?)
            }
            Technique::Vcc => {
                if self.vcc_m == 0 || 32 % self.vcc_m != 0 {
                    return config_err(format!("vcc_m = {} must divide 32", self.vcc_m));
                }
                let r = need_pow2(32 / self.vcc_m)?;
                Box::new(VccConfig::generated(64, self.vcc_m, r)?)
            }
            Technique::VccStored => {
                if self.stored_m == 0 || 64 % self.stored_m != 0 {
                    return config_err(format!("stored_m = {} must divide 64", self.stored_m));
                }
                let r = need_pow2(64 / self.stored_m)?;
                let seed_vec = rng.next_u64() & low_mask(self.stored_m);
                let ks = stored_kernels_from_seed(seed_vec, r, self.stored_m)?;
                Box::new(VccConfig::stored(64, self.stored_m, VccMode::FullBlock, ks)?)
            }
        })
    }

    /// `(technique, N)` pairs to run, fixed techniques once.
    fn arms(&self) -> Vec<(Technique, u64)> {
        let mut out = Vec::new();
        for &t in &self.techniques {
            if t.sweeps_cosets() {
                out.extend(self.coset_counts.iter().map(|&n| (t, n)));
            } else {
                out.push((t, t.fixed_candidates()));
            }
        }
        out
    }
}

/// Non-blank `key = value` pairs of a config text; `#` starts a comment.
pub fn kv_pairs(text: &str) -> Result<Vec<(&str, &str)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim(), v.trim()));
    }
    Ok(out)
}

/// Sub-seed for a labelled purpose.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = label.bytes().fold(0u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    rng.set_stream(tag);
    rng.next_u64()
}

/// Writes encrypted lines through one technique.
pub struct LineWriter {
    technique: Technique,
    encoder: Box<dyn Encoder>,
    cost: Box<dyn CostFunction>,
    ecp: HashMap<u64, EcpTable>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineOutcome {
    pub report: WriteReport,
    pub outcome: RowOutcome,
}

impl LineWriter {
    pub fn new(cfg: &ExperimentConfig, technique: Technique, cosets: u64, seed: u64) -> Result<Self> {
        Ok(Self {
            technique,
            encoder: cfg.build_encoder(technique, cosets, derive_seed(seed, "kernels"))?,
            cost: cfg.objective.cost(cfg.table),
            ecp: HashMap::new(),
        })
    }

    pub fn technique(&self) -> Technique {
        self.technique
    }

    /// Encodes and writes `line` to `row`; `judge` also decides whether the
    /// row still reads back correctly.
    pub fn write_line(&mut self, array: &mut CellArray, row: u64, line: &Line, judge: bool) -> Result<LineOutcome> {
        let mut report = WriteReport::default();
        let mut intended = RowImage::default();
        match self.technique {
            Technique::Secded => {
                for w in (0..LINE_WORDS).step_by(2) {
                    let (ca, cb) = secded_pair_encode(line[w], line[w + 1]);
                    for (k, check) in [(w, ca), (w + 1, cb)] {
                        report += array.write_word(row, k, line[k], check, 4)?;
                        intended.data[k] = line[k];
                        intended.set_word_aux(k, check);
                    }
                }
                let outcome = if judge {
                    row_write_outcome(array, row, &intended, per_word_aux_mask(4), &mut Corrector::Secded)?
                } else {
                    RowOutcome::Ok
                };
                Ok(LineOutcome { report, outcome })
            }
            Technique::Ecp3 => {
                for (w, &d) in line.iter().enumerate() {
                    report += array.write_word(row, w, d, 0, 0)?;
                    intended.data[w] = d;
                }
                let table = self.ecp.entry(row).or_default();
                let mut corr = Corrector::Ecp(table.clone());
                let mut outcome = row_write_outcome(array, row, &intended, 0, &mut corr)?;
                if let Corrector::Ecp(t) = corr {
                    *table = t;
                }
                let cells = table.storage_cells();
                let bits = table.to_bits();
                report += array.write_cells(row, DATA_CELLS, cells, bits)?;
                intended.aux = bits << (64 - 2 * cells);
                if judge {
                    let stored = array.read_row(row)?.aux;
                    if (stored ^ intended.aux) & crate::bits::widen_symbol_mask(leading_aux_mask(cells)) != 0 {
                        outcome = RowOutcome::Uncorrectable;
                    }
                } else {
                    outcome = RowOutcome::Ok;
                }
                Ok(LineOutcome { report, outcome })
            }
            _ => {
                let cells = self.encoder.aux_bits().div_ceil(2);
                for (w, &d) in line.iter().enumerate() {
                    let old = array.old_state(row, w, cells)?;
                    let sel = self.encoder.encode(&DataBlock::word(d), &old, self.cost.as_ref())?;
                    report += array.write_word(row, w, sel.word.payload.bits(), sel.word.aux, cells)?;
                    intended.data[w] = sel.word.payload.bits();
                    intended.set_word_aux(w, sel.word.aux);
                }
                let outcome = if judge {
                    row_write_outcome(array, row, &intended, per_word_aux_mask(cells), &mut Corrector::None)?
                } else {
                    RowOutcome::Ok
                };
                Ok(LineOutcome { report, outcome })
            }
        }
    }
}

/// One summary row of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub technique: Technique,
    pub cosets: u64,
    pub objective: Objective,
    pub metric: &'static str,
    /// Per-seed values; `None` where the metric is undefined.
    pub values: Vec<Option<f64>>,
    pub seeds: Vec<u64>,
}

impl ResultRow {
    fn defined(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }

    pub fn mean(&self) -> Option<f64> {
        let v = self.defined()?;
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn stddev(&self) -> Option<f64> {
        let v = self.defined()?;
        if v.len() < 2 {
            return Some(0.0);
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
    }
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut w: W) -> Result<()> {
    writeln!(w, "technique,N,objective,metric,mean,stddev,seeds")?;
    let fmt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(|s| s.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.technique,
            r.cosets,
            r.objective,
            r.metric,
            fmt(r.mean()),
            fmt(r.stddev()),
            seeds.join(";")
        )?;
    }
    Ok(())
}

/// Looks up a row by technique, coset count and metric.
pub fn find_row<'a>(rows: &'a [ResultRow], t: Technique, cosets: u64, metric: &str) -> Option<&'a ResultRow> {
    rows.iter().find(|r| r.technique == t && r.cosets == cosets && r.metric == metric)
}

/// Sums the write reports of `trace` through one technique.
fn replay(cfg: &ExperimentConfig, arm: (Technique, u64), seed: u64, array: &mut CellArray, trace: &[TraceRecord]) -> Result<(WriteReport, u64)> {
    let mut writer = LineWriter::new(cfg, arm.0, arm.1, seed)?;
    let mut cipher = LineCipherState::from_seed(derive_seed(seed, "key"));
    let mut total = WriteReport::default();
    for rec in trace {
        let row = cfg.geometry.row_of(rec.addr)?;
        let (ct, _) = cipher.encrypt_line(rec.addr, &rec.payload)?;
        total += writer.write_line(array, row, &ct, false)?.report;
    }
    Ok((total, trace.len() as u64))
}

/// Shared protocol of the two sweeps: per seed, every arm replays the same
/// trace on a copy of the same initial memory.
fn sweep<F>(
    cfg: &ExperimentConfig,
    fixed: Option<&[TraceRecord]>,
    prepare: F,
    metric: &'static str,
    reduction: &'static str,
    pick: fn(&WriteReport) -> f64,
) -> Result<Vec<ResultRow>>
where
    F: Fn(u64) -> Result<CellArray>,
{
    cfg.validate()?;
    let arms = cfg.arms();
    let lines = cfg.word_writes.div_ceil(LINE_WORDS as u64);
    let mut per_line: HashMap<(Technique, u64), Vec<f64>> = HashMap::new();
    let mut baseline = Vec::new();
    for &seed in &cfg.seeds {
        let initial = prepare(seed)?;
        let generated;
        let trace = match fixed {
            Some(t) => t,
            None => {
                generated = generate_trace(cfg.profile, cfg.geometry.rows(), lines, derive_seed(seed, "trace"))?;
                &generated
            }
        };
        let mut a = initial.clone();
        let (rep, n) = replay(cfg, (Technique::Unencoded, 1), seed, &mut a, trace)?;
        baseline.push(pick(&rep) / n as f64);
        for &arm in &arms {
            let mut a = initial.clone();
            let (rep, n) = replay(cfg, arm, seed, &mut a, trace)?;
            per_line.entry(arm).or_default().push(pick(&rep) / n as f64);
        }
    }
    let mut rows = Vec::new();
    for arm in arms {
        let vals = &per_line[&arm];
        rows.push(ResultRow {
            technique: arm.0,
            cosets: arm.1,
            objective: cfg.objective,
            metric,
            values: vals.iter().map(|&v| Some(v)).collect(),
            seeds: cfg.seeds.clone(),
        });
        rows.push(ResultRow {
            technique: arm.0,
            cosets: arm.1,
            objective: cfg.objective,
            metric: reduction,
            values: vals
                .iter()
                .zip(&baseline)
                .map(|(&v, &b)| (b > 0.0).then(|| 1.0 - v / b))
                .collect(),
            seeds: cfg.seeds.clone(),
        });
    }
    Ok(rows)
}

/// Mean write energy per line write (aux cells included) and its reduction
/// against unencoded writeback. Memory starts at random symbols, fault free.
pub fn run_energy_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_energy_sweep_on(cfg, None)
}

/// [`run_energy_sweep`] replaying `trace` for every seed instead of a
/// generated trace.
pub fn run_energy_sweep_on(cfg: &ExperimentConfig, trace: Option<&[TraceRecord]>) -> Result<Vec<ResultRow>> {
    sweep(
        cfg,
        trace,
        |seed| Ok(CellArray::with_random_state(cfg.geometry, cfg.table, derive_seed(seed, "memory"))),
        "energy_per_line",
        "energy_reduction",
        |r| r.energy,
    )
}

/// SAW cells per line write and their reduction against unencoded writeback,
/// with a fresh fault map at `fault_rate` per seed and no wear.
pub fn run_saw_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_saw_sweep_on(cfg, None)
}

/// [`run_saw_sweep`] replaying `trace` for every seed.
pub fn run_saw_sweep_on(cfg: &ExperimentConfig, trace: Option<&[TraceRecord]>) -> Result<Vec<ResultRow>> {
    sweep(
        cfg,
        trace,
        |seed| {
            let mut a = CellArray::with_random_state(cfg.geometry, cfg.table, derive_seed(seed, "memory"));
            let map = FaultMap::snapshot(cfg.geometry.total_cells(), cfg.fault_rate, derive_seed(seed, "faults"))?;
            a.apply_fault_map(&map)?;
            Ok(a)
        },
        "saw_per_line",
        "saw_reduction",
        |r| r.saw_count as f64,
    )
}

/// Row writes until `failed_rows` distinct rows have been uncorrectable, or
/// `None` when the write limit is reached first.
pub fn lifetime_run(cfg: &ExperimentConfig, technique: Technique, cosets: u64, seed: u64) -> Result<Option<u64>> {
    lifetime_run_on(cfg, technique, cosets, seed, None)
}

/// [`lifetime_run`] cycling through `trace` instead of a generated stream.
pub fn lifetime_run_on(
    cfg: &ExperimentConfig,
    technique: Technique,
    cosets: u64,
    seed: u64,
    fixed: Option<&[TraceRecord]>,
) -> Result<Option<u64>> {
    let mut array = CellArray::with_random_state(cfg.geometry, cfg.table, derive_seed(seed, "memory"));
    array.set_lifetime(&cfg.lifetime, derive_seed(seed, "lifetime"));
    let mut writer = LineWriter::new(cfg, technique, cosets, seed)?;
    let mut cipher = LineCipherState::from_seed(derive_seed(seed, "key"));
    let trace: Box<dyn Iterator<Item = TraceRecord>> = match fixed {
        Some(t) => Box::new(t.iter().copied().cycle().take(cfg.max_row_writes as usize)),
        None => Box::new(TraceGenerator::new(
            cfg.profile,
            cfg.geometry.rows(),
            Some(cfg.max_row_writes),
            derive_seed(seed, "trace"),
        )?),
    };
    let mut failed = HashSet::new();
    for (i, rec) in trace.enumerate() {
        let row = cfg.geometry.row_of(rec.addr)?;
        let (ct, _) = cipher.encrypt_line(rec.addr, &rec.payload)?;
        if writer.write_line(&mut array, row, &ct, true)?.outcome == RowOutcome::Uncorrectable {
            failed.insert(row);
            if failed.len() >= cfg.failed_rows {
                return Ok(Some(i as u64 + 1));
            }
        }
    }
    Ok(None)
}

/// Lifetime per technique over all seeds, plus the ratio to unencoded.
pub fn run_lifetime(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_lifetime_on(cfg, None)
}

/// [`run_lifetime`] cycling through `trace` for every seed.
pub fn run_lifetime_on(cfg: &ExperimentConfig, trace: Option<&[TraceRecord]>) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut base = Vec::new();
    for &seed in &cfg.seeds {
        base.push(lifetime_run_on(cfg, Technique::Unencoded, 1, seed, trace)?.map(|v| v as f64));
    }
    let mut rows = Vec::new();
    for arm in cfg.arms() {
        let vals: Vec<Option<f64>> = if arm.0 == Technique::Unencoded {
            base.clone()
        } else {
            cfg.seeds
                .iter()
                .map(|&s| lifetime_run_on(cfg, arm.0, arm.1, s, trace).map(|v| v.map(|x| x as f64)))
                .collect::<Result<_>>()?
        };
        let ratio = vals.iter().zip(&base).map(|(v, b)| Some(v.as_ref()? / b.as_ref()?)).collect();
        rows.push(ResultRow {
            technique: arm.0,
            cosets: arm.1,
            objective: cfg.objective,
            metric: "row_writes_to_failure",
            values: vals,
            seeds: cfg.seeds.clone(),
        });
        rows.push(ResultRow {
            technique: arm.0,
            cosets: arm.1,
            objective: cfg.objective,
            metric: "lifetime_vs_unencoded",
            values: ratio,
            seeds: cfg.seeds.clone(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            geometry: MemoryGeometry::new(64 * 1024, 4096).unwrap(),
            seeds: vec![1, 2],
            word_writes: 4000,
            coset_counts: vec![32, 256],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn empty_trace() {
        assert!(generate_trace(AddressProfile::Uniform, 16, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn uniform_addresses_are_flat() {
        let rows = 64u64;
        let n = 64_000u64;
        let mut counts = vec![0u64; rows as usize];
        for r in TraceGenerator::new(AddressProfile::Uniform, rows, Some(n), 3).unwrap() {
            assert_eq!(r.addr % 64, 0);
            counts[(r.addr / 64) as usize] += 1;
        }
        let e = n as f64 / rows as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 63 degrees of freedom: mean 63, sd ~11.2
        assert!(chi2 < 63.0 + 4.0 * (2.0f64 * 63.0).sqrt(), "chi2 {chi2}");
    }

    #[test]
    fn hotspot_rank_frequency_slope() {
        let s = 1.2;
        let profile = AddressProfile::Hotspot { zipf_s: s, working_set: 256 };
        let mut counts: HashMap<u64, u64> = HashMap::new();
        for r in TraceGenerator::new(profile, 4096, Some(400_000), 5).unwrap() {
            *counts.entry(r.addr).or_default() += 1;
        }
        let mut freq: Vec<u64> = counts.values().copied().collect();
        freq.sort_unstable_by(|a, b| b.cmp(a));
        // least-squares slope of log frequency on log rank over the top 50
        let pts: Vec<(f64, f64)> = freq[..50]
            .iter()
            .enumerate()
            .map(|(i, &f)| (((i + 1) as f64).ln(), (f as f64).ln()))
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / 50.0;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / 50.0;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + s).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn trace_formats_roundtrip() {
        let t = generate_trace(AddressProfile::hotspot(), 1024, 20, 9).unwrap();
        let mut bin = Vec::new();
        write_trace_binary(&t, &mut bin).unwrap();
        assert_eq!(bin.len(), 20 * 72);
        assert_eq!(read_trace_binary(&bin[..]).unwrap(), t);
        let mut hex = Vec::new();
        write_trace_hex(&t, &mut hex).unwrap();
        assert_eq!(read_trace_hex(&hex[..]).unwrap(), t);
        assert!(read_trace_binary(&bin[..71]).is_err());
        let bad = format!("0x41:{}\n", "00".repeat(64));
        assert!(read_trace_hex(bad.as_bytes()).is_err());
        let short = "0x40:00ff\n";
        assert!(read_trace_hex(short.as_bytes()).is_err());
    }

    #[test]
    fn config_kv_roundtrip_and_errors() {
        let cfg = small_cfg();
        let back = ExperimentConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::from_kv("bogus = 1").is_err());
        assert!(ExperimentConfig::from_kv("techniques = vcc_stored\ncoset_counts = 8").is_err());
        assert!(ExperimentConfig::from_kv("techniques = rcc\ncoset_counts = 48").is_err());
        assert!(ExperimentConfig::from_kv("objective = fastest").is_err());
        let c = ExperimentConfig::from_kv("energy_high = 8\nprofile = hotspot:0.9:100").unwrap();
        assert_eq!(c.table.get(0, 1), 8.0);
        assert_eq!(c.profile, AddressProfile::Hotspot { zipf_s: 0.9, working_set: 100 });
        let c = ExperimentConfig::from_kv("10->01 = 3.5\n11 -> 00 = 0.25").unwrap();
        assert_eq!((c.table.get(2, 1), c.table.get(3, 0), c.table.get(0, 1)), (3.5, 0.25, 10.0));
        assert_eq!(ExperimentConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert!(ExperimentConfig::from_kv("01->01 = 2").is_err());
        assert!(ExperimentConfig::from_kv("01->21 = 2").is_err());
    }

    #[test]
    fn fixed_trace_matches_generated_stream() {
        let cfg = ExperimentConfig { techniques: vec![Technique::Vcc], coset_counts: vec![64], seeds: vec![6], ..small_cfg() };
        let lines = cfg.word_writes.div_ceil(LINE_WORDS as u64);
        let trace = generate_trace(cfg.profile, cfg.geometry.rows(), lines, derive_seed(6, "trace")).unwrap();
        assert_eq!(run_energy_sweep_on(&cfg, Some(&trace)).unwrap(), run_energy_sweep(&cfg).unwrap());
        assert_eq!(run_saw_sweep_on(&cfg, Some(&trace)).unwrap(), run_saw_sweep(&cfg).unwrap());
        let short = &trace[..3];
        let c = ExperimentConfig { max_row_writes: 7, ..cfg.clone() };
        assert_eq!(lifetime_run_on(&c, Technique::Vcc, 64, 6, Some(short)).unwrap(), None);
        let far = [TraceRecord::new(cfg.geometry.capacity_bytes, [0; LINE_WORDS]).unwrap()];
        assert!(run_energy_sweep_on(&cfg, Some(&far)).is_err());
    }

    #[test]
    fn unencoded_against_itself_is_zero_reduction() {
        let cfg = ExperimentConfig { techniques: vec![Technique::Unencoded], ..small_cfg() };
        let rows = run_energy_sweep(&cfg).unwrap();
        let r = find_row(&rows, Technique::Unencoded, 1, "energy_reduction").unwrap();
        assert_eq!(r.mean(), Some(0.0));
    }

    #[test]
    fn energy_sweep_matches_replayed_reports() {
        let cfg = ExperimentConfig { techniques: vec![Technique::Rcc], coset_counts: vec![32], seeds: vec![4], ..small_cfg() };
        let rows = run_energy_sweep(&cfg).unwrap();
        let r = find_row(&rows, Technique::Rcc, 32, "energy_per_line").unwrap();
        // independent replay summing per-line reports
        let mut a = CellArray::with_random_state(cfg.geometry, cfg.table, derive_seed(4, "memory"));
        let trace = generate_trace(cfg.profile, cfg.geometry.rows(), 500, derive_seed(4, "trace")).unwrap();
        let mut w = LineWriter::new(&cfg, Technique::Rcc, 32, 4).unwrap();
        let mut c = LineCipherState::from_seed(derive_seed(4, "key"));
        let mut sum = 0.0;
        for rec in &trace {
            let (ct, _) = c.encrypt_line(rec.addr, &rec.payload).unwrap();
            sum += w.write_line(&mut a, rec.addr / 64, &ct, false).unwrap().report.energy;
        }
        assert_eq!(r.mean(), Some(sum / 500.0));
    }

    #[test]
    fn saw_sweep_without_faults_is_not_applicable() {
        let cfg = ExperimentConfig { techniques: vec![Technique::VccStored], coset_counts: vec![32], fault_rate: 0.0, ..small_cfg() };
        let rows = run_saw_sweep(&cfg).unwrap();
        let r = find_row(&rows, Technique::VccStored, 32, "saw_reduction").unwrap();
        assert_eq!(r.mean(), None);
        let mut out = Vec::new();
        write_results_csv(&rows, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("vcc_stored,32,opt_energy,saw_reduction,n/a,n/a,1;2"));
    }

    #[test]
    fn sweeps_are_reproducible() {
        let cfg = ExperimentConfig { techniques: vec![Technique::Vcc, Technique::DbiFnw], coset_counts: vec![32], ..small_cfg() };
        assert_eq!(run_energy_sweep(&cfg).unwrap(), run_energy_sweep(&cfg).unwrap());
    }

    #[test]
    fn every_technique_reads_back_on_healthy_memory() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for t in Technique::ALL {
            let n = if t.sweeps_cosets() { 64 } else { t.fixed_candidates() };
            let mut a = CellArray::with_random_state(cfg.geometry, cfg.table, 1);
            let mut w = LineWriter::new(&cfg, t, n, 3).unwrap();
            for _ in 0..200 {
                let line: Line = std::array::from_fn(|_| rng.random());
                let row = rng.random_range(0..cfg.geometry.rows());
                assert_eq!(w.write_line(&mut a, row, &line, true).unwrap().outcome, RowOutcome::Ok, "{t}");
            }
        }
    }

    #[test]
    fn immediate_failure_lifetime_matches_replay() {
        let cfg = ExperimentConfig {
            geometry: MemoryGeometry::new(4096, 4096).unwrap(),
            lifetime: LifetimeModel::new(1.0, 0.0).unwrap(),
            profile: AddressProfile::Uniform,
            max_row_writes: 10_000,
            ..ExperimentConfig::default()
        };
        let got = lifetime_run(&cfg, Technique::Unencoded, 1, 7).unwrap().unwrap();

        // replay: a cell freezes on its second change; a row fails when a
        // write asks a frozen cell for a different symbol
        let mut state: Vec<u8> = {
            let a = CellArray::with_random_state(cfg.geometry, cfg.table, derive_seed(7, "memory"));
            (0..a.geometry().total_cells()).map(|c| a.cell(c).state).collect()
        };
        let mut changes = vec![0u32; state.len()];
        let mut cipher = LineCipherState::from_seed(derive_seed(7, "key"));
        let trace = TraceGenerator::new(cfg.profile, 64, None, derive_seed(7, "trace")).unwrap();
        let mut failed = HashSet::new();
        let mut want = 0;
        for (i, rec) in trace.enumerate() {
            let row = rec.addr / 64;
            let (ct, _) = cipher.encrypt_line(rec.addr, &rec.payload).unwrap();
            let mut bad = false;
            for (w, word) in ct.iter().enumerate() {
                for k in 0..32u64 {
                    let c = (row * 288 + w as u64 * 32 + k) as usize;
                    let sym = ((word >> (62 - 2 * k)) & 3) as u8;
                    if sym == state[c] {
                        continue;
                    }
                    if changes[c] >= 2 {
                        bad = true;
                    } else {
                        changes[c] += 1;
                        state[c] = sym;
                    }
                }
            }
            if bad {
                failed.insert(row);
                if failed.len() == 4 {
                    want = i as u64 + 1;
                    break;
                }
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn higher_variation_fails_sooner() {
        let base = ExperimentConfig {
            geometry: MemoryGeometry::new(64 * 1024, 4096).unwrap(),
            lifetime: LifetimeModel::new(100.0, 0.1).unwrap(),
            profile: AddressProfile::Hotspot { zipf_s: 1.0, working_set: 64 },
            seeds: vec![1, 2, 3],
            techniques: vec![Technique::Unencoded, Technique::DbiFnw],
            ..ExperimentConfig::default()
        };
        let wide = ExperimentConfig { lifetime: LifetimeModel::new(100.0, 0.4).unwrap(), ..base.clone() };
        for t in [Technique::Unencoded, Technique::DbiFnw] {
            let mean = |c: &ExperimentConfig| {
                let v: Vec<u64> = c.seeds.iter().map(|&s| lifetime_run(c, t, 16, s).unwrap().unwrap()).collect();
                v.iter().sum::<u64>() as f64 / v.len() as f64
            };
            assert!(mean(&wide) <= mean(&base), "{t}");
        }
    }
}
