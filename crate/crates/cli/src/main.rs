//! `vcc`: analytic curves, codec roundtrips and the memory experiments.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vcc_core::analytic::{comparison_rows, write_rows_csv};
use vcc_core::harness::{
    generate_trace, kv_pairs, read_trace_binary, read_trace_hex, run_energy_sweep_on, run_lifetime_on, run_saw_sweep_on,
    write_results_csv, write_trace_binary, write_trace_hex, AddressProfile, ExperimentConfig, Objective, Technique,
    TraceRecord,
};
use vcc_core::pcm::MemoryGeometry;
use vcc_core::{DataBlock, EncodedWord, Error, OldState, SymbolTransitionTable};

#[derive(Parser)]
#[command(name = "vcc", version, about = "Coset encoders over simulated MLC phase-change memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expected changed bits of random and biased coset coding.
    Analytic {
        /// Block length in bits.
        #[arg(long = "n")]
        block_bits: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Encodes 64-bit hex words written in turn to one memory word.
    Encode {
        #[command(flatten)]
        io: CodecIo,
        #[command(flatten)]
        common: Common,
    },
    /// Decodes `payload aux` hex pairs produced by `encode`.
    Decode {
        #[command(flatten)]
        io: CodecIo,
        #[command(flatten)]
        common: Common,
    },
    /// Writes a synthetic writeback trace.
    TraceGen {
        /// Number of line records.
        #[arg(long)]
        length: Option<u64>,
        /// Output format; defaults to hex for `.hex`/`.txt` paths and stdout.
        #[arg(long, value_enum)]
        format: Option<TraceFormat>,
        #[command(flatten)]
        common: Common,
    },
    /// Write energy per line against unencoded writeback.
    SweepEnergy {
        #[command(flatten)]
        common: Common,
    },
    /// Stuck-at-wrong cells per line at a fixed fault rate.
    SweepSaw {
        #[command(flatten)]
        common: Common,
    },
    /// Row writes until the configured number of rows is uncorrectable.
    Lifetime {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; a `.manifest` file is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed list, comma separated.
    #[arg(long)]
    seed: Option<String>,
    /// Technique list, comma separated.
    #[arg(long)]
    technique: Option<String>,
    /// Coset count list, comma separated.
    #[arg(long = "coset-count", visible_alias = "N")]
    coset_count: Option<String>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long = "fault-rate", visible_alias = "rate")]
    fault_rate: Option<String>,
    /// Capacity with an optional page size, e.g. `1MiB:4KiB`.
    #[arg(long)]
    geometry: Option<String>,
    /// Trace file (binary or hex) replayed instead of a generated trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// `uniform` or `hotspot[:zipf_s:working_set]`.
    #[arg(long)]
    profile: Option<String>,
    /// File of 16 `old->new = energy` lines.
    #[arg(long = "energy-table")]
    energy_table: Option<PathBuf>,
    /// Any other config setting, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct CodecIo {
    /// Read input from standard input.
    #[arg(long = "stdin-hex", conflicts_with = "input")]
    stdin_hex: bool,
    /// Input file of hex text.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceFormat {
    Bin,
    Hex,
}

/// Keys handled by the front end rather than the experiment config.
#[derive(Default)]
struct Extra {
    trace: Option<PathBuf>,
    n: Option<u32>,
    length: Option<u64>,
    format: Option<TraceFormat>,
}

enum Failure {
    Config(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn name_of(cmd: &Command) -> &'static str {
    match cmd {
        Command::Analytic { .. } => "analytic",
        Command::Encode { .. } => "encode",
        Command::Decode { .. } => "decode",
        Command::TraceGen { .. } => "trace-gen",
        Command::SweepEnergy { .. } => "sweep-energy",
        Command::SweepSaw { .. } => "sweep-saw",
        Command::Lifetime { .. } => "lifetime",
    }
}

/// Defaults of each subcommand before the config file and flags apply.
fn base_config(cmd: &Command) -> ExperimentConfig {
    let d = ExperimentConfig::default();
    match cmd {
        Command::Analytic { .. } => ExperimentConfig { coset_counts: vec![2, 4, 16, 256], ..d },
        Command::Encode { .. } | Command::Decode { .. } => {
            ExperimentConfig { techniques: vec![Technique::Vcc], coset_counts: vec![64], seeds: vec![1], ..d }
        }
        Command::SweepSaw { .. } => ExperimentConfig { objective: Objective::OptSaw, ..d },
        Command::Lifetime { .. } => ExperimentConfig {
            coset_counts: vec![256],
            objective: Objective::OptSaw,
            profile: AddressProfile::hotspot(),
            ..d
        },
        _ => d,
    }
}

fn set_extra(extra: &mut Extra, key: &str, value: &str) -> Res<bool> {
    let bad = |what: &str| Failure::Config(format!("bad {what} {value:?}"));
    match key {
        "trace" => extra.trace = Some(PathBuf::from(value)),
        "n" => extra.n = Some(value.parse().map_err(|_| bad("block length"))?),
        "length" => extra.length = Some(value.parse().map_err(|_| bad("length"))?),
        "format" => {
            extra.format = Some(TraceFormat::from_str(value, true).map_err(|_| bad("trace format"))?);
        }
        _ => return Ok(false),
    }
    Ok(true)
}

fn resolve(cmd: &Command, common: &Common) -> Res<(ExperimentConfig, Extra)> {
    let mut cfg = base_config(cmd);
    let mut extra = Extra::default();
    if let Some(path) = &common.config {
        let text = read_text(path)?;
        for (k, v) in kv_pairs(&text)? {
            if !set_extra(&mut extra, k, v)? {
                cfg.set(k, v)?;
            }
        }
    }
    if let Some(path) = &common.energy_table {
        cfg.table = read_text(path)?.parse::<SymbolTransitionTable>()?;
    }
    let flags = [
        ("seeds", &common.seed),
        ("techniques", &common.technique),
        ("coset_counts", &common.coset_count),
        ("objective", &common.objective),
        ("fault_rate", &common.fault_rate),
        ("profile", &common.profile),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(g) = &common.geometry {
        let (cap, page) = g.split_once(':').unwrap_or((g, "4KiB"));
        cfg.geometry = MemoryGeometry::new(MemoryGeometry::parse_capacity(cap)?, MemoryGeometry::parse_capacity(page)?)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        if !set_extra(&mut extra, k.trim(), v.trim())? {
            cfg.set(k, v)?;
        }
    }
    if let Some(t) = &common.trace {
        extra.trace = Some(t.clone());
    }
    match cmd {
        Command::Analytic { block_bits, .. } => extra.n = block_bits.or(extra.n),
        Command::TraceGen { length, format, .. } => {
            extra.length = length.or(extra.length);
            extra.format = format.or(extra.format);
        }
        _ => {}
    }
    if !matches!(cmd, Command::Analytic { .. }) {
        cfg.validate()?;
    }
    Ok((cfg, extra))
}

fn manifest(cmd: &Command, cfg: &ExperimentConfig, extra: &Extra) -> String {
    let mut s = format!("# vcc {}\n", name_of(cmd));
    s += &cfg.to_kv();
    if let Some(t) = &extra.trace {
        s += &format!("trace = {}\n", t.display());
    }
    if let Some(n) = extra.n {
        s += &format!("n = {n}\n");
    }
    if let Some(l) = extra.length {
        s += &format!("length = {l}\n");
    }
    if let Some(f) = extra.format {
        s += &format!("format = {}\n", if f == TraceFormat::Hex { "hex" } else { "bin" });
    }
    s
}

/// Writes `body` to `out` (or stdout) and the manifest beside it.
fn emit(out: Option<&Path>, body: &[u8], manifest: &str) -> Res<()> {
    match out {
        Some(path) => {
            fs::write(path, body).map_err(|e| io_err(path, e))?;
            let mut m = path.as_os_str().to_owned();
            m.push(".manifest");
            let m = PathBuf::from(m);
            fs::write(&m, manifest).map_err(|e| io_err(&m, e))
        }
        None => io::stdout().write_all(body).map_err(|e| Failure::Io(format!("stdout: {e}"))),
    }
}

fn load_trace(path: &Path) -> Res<Vec<TraceRecord>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    // binary records start with a 64-byte aligned address byte, never '0' or '#'
    let text = bytes.iter().find(|b| !b.is_ascii_whitespace()).is_some_and(|b| *b == b'0' || *b == b'#');
    Ok(if text { read_trace_hex(BufReader::new(&bytes[..]))? } else { read_trace_binary(&bytes[..])? })
}

fn codec_input(io: &CodecIo) -> Res<String> {
    match (&io.input, io.stdin_hex) {
        (Some(p), _) => read_text(p),
        (None, true) => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).map_err(|e| Failure::Io(format!("stdin: {e}")))?;
            Ok(s)
        }
        (None, false) => Err(Failure::Config("give --stdin-hex or --input".into())),
    }
}

fn parse_hex(tok: &str) -> Res<u64> {
    let t = tok.trim_start_matches("0x");
    u64::from_str_radix(t, 16).map_err(|_| Failure::Config(format!("bad hex word {tok:?}")))
}

fn single_arm(cfg: &ExperimentConfig) -> Res<(Technique, u64)> {
    match (cfg.techniques.as_slice(), cfg.coset_counts.as_slice()) {
        ([t], _) if !t.sweeps_cosets() => Ok((*t, t.fixed_candidates())),
        ([t], [n]) => Ok((*t, *n)),
        _ => Err(Failure::Config("encode/decode take exactly one technique and one coset count".into())),
    }
}

fn lines_of(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty())
}

fn encode(cfg: &ExperimentConfig, input: &str) -> Res<Vec<u8>> {
    let (t, n) = single_arm(cfg)?;
    if matches!(t, Technique::Secded | Technique::Ecp3) {
        return Err(Failure::Config(format!("{t} corrects whole rows and has no word codec")));
    }
    let enc = cfg.build_encoder(t, n, cfg.seeds[0])?;
    let cost = cfg.objective.cost(cfg.table);
    let cells = enc.aux_bits().div_ceil(2);
    let (mut data, mut aux) = (vec![0u8; 32], vec![0u8; cells as usize]);
    let none = |k: usize| vec![None; k];
    let mut out = String::new();
    for word in lines_of(input).flat_map(str::split_whitespace) {
        let d = parse_hex(word)?;
        let old = OldState::from_symbols(&data, &aux, &none(32), &none(cells as usize))?;
        let sel = enc.encode(&DataBlock::word(d), &old, cost.as_ref())?;
        data = sel.word.payload.symbols();
        aux = (0..cells).map(|k| ((sel.word.aux >> (2 * (cells - 1 - k))) & 3) as u8).collect();
        out += &format!("{:016x} {:x}\n", sel.word.payload.bits(), sel.word.aux);
    }
    Ok(out.into_bytes())
}

fn decode(cfg: &ExperimentConfig, input: &str) -> Res<Vec<u8>> {
    let (t, n) = single_arm(cfg)?;
    let enc = cfg.build_encoder(t, n, cfg.seeds[0])?;
    let mut out = String::new();
    for line in lines_of(input) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let [payload, aux] = toks[..] else {
            return Err(Failure::Config(format!("expected `payload aux`, got {line:?}")));
        };
        let word = EncodedWord { payload: DataBlock::word(parse_hex(payload)?), aux: parse_hex(aux)?, aux_bits: enc.aux_bits() };
        out += &format!("{:016x}\n", enc.decode(&word)?.bits());
    }
    Ok(out.into_bytes())
}

fn run(cli: Cli) -> Res<()> {
    let cmd = &cli.command;
    let (common, codec_io) = match cmd {
        Command::Analytic { common, .. }
        | Command::TraceGen { common, .. }
        | Command::SweepEnergy { common }
        | Command::SweepSaw { common }
        | Command::Lifetime { common } => (common, None),
        Command::Encode { common, io } | Command::Decode { common, io } => (common, Some(io)),
    };
    let (cfg, extra) = resolve(cmd, common)?;
    let out = common.out.as_deref();
    let trace = extra.trace.as_deref().map(load_trace).transpose()?;
    let trace = trace.as_deref();
    let mut body = Vec::new();
    match cmd {
        Command::Analytic { .. } => {
            let rows = comparison_rows(extra.n.unwrap_or(64), &cfg.coset_counts)?;
            write_rows_csv(&rows, &mut body).map_err(Error::from)?;
        }
        Command::Encode { .. } => body = encode(&cfg, &codec_input(codec_io.unwrap())?)?,
        Command::Decode { .. } => body = decode(&cfg, &codec_input(codec_io.unwrap())?)?,
        Command::TraceGen { .. } => {
            let len = extra.length.unwrap_or(cfg.word_writes.div_ceil(8));
            let recs = generate_trace(cfg.profile, cfg.geometry.rows(), len, cfg.seeds[0])?;
            let by_ext = out.and_then(|p| p.extension()).is_some_and(|e| e == "hex" || e == "txt");
            let hex = extra.format.map_or(out.is_none() || by_ext, |f| f == TraceFormat::Hex);
            let w = BufWriter::new(&mut body);
            if hex {
                write_trace_hex(&recs, w)?;
            } else {
                write_trace_binary(&recs, w)?;
            }
        }
        Command::SweepEnergy { .. } => write_results_csv(&run_energy_sweep_on(&cfg, trace)?, &mut body)?,
        Command::SweepSaw { .. } => write_results_csv(&run_saw_sweep_on(&cfg, trace)?, &mut body)?,
        Command::Lifetime { .. } => write_results_csv(&run_lifetime_on(&cfg, trace)?, &mut body)?,
    }
    emit(out, &body, &manifest(cmd, &cfg, &extra))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("vcc: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("vcc: {msg}");
            ExitCode::from(3)
        }
    }
}
