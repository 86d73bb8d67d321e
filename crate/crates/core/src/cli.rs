//! The `ucon` command-line front end and its file formats.
//!
//! Exit codes: 0 success, 2 bad arguments or unreadable input, 3 design or
//! simulation failure. Output files are written only on success.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::constellation::{closest_pair_bruteforce, indices_from_message, pep_chernoff_bound, AmplitudeSet, BitAllocation, Codebook, DesignMetadata};
use crate::designer::{design_amplitude_set, search_bit_allocations, DesignConfig};
use crate::distance::{amplitude_pair_distance, mcd_decomposed, mcd_upper_bound};
use crate::error::{Error, Result};
use crate::exec::{with_threads, Execution};
use crate::sim::{run_sweep, sigma2_from_snr_db, Detector, SimConfig, SimResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

pub const SCHEMA_VERSION: u32 = 1;

/// Brute-force pair search in `analyze` is limited to this many bits.
const ANALYZE_BRUTEFORCE_BITS: u32 = 12;

/// Stored MCD must match the recomputed value to this tolerance.
const MCD_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileMetadata {
    seed: u64,
    restarts: u32,
    sca_iterations: u32,
    tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookFile {
    schema_version: u32,
    #[serde(rename = "K")]
    k: usize,
    l_u: u32,
    l_phi: Vec<u32>,
    /// Decimal strings with 17 significant digits.
    amplitudes: Vec<Vec<String>>,
    achieved_mcd: f64,
    metadata: FileMetadata,
}

/// Serializes a codebook as pretty-printed JSON with a trailing newline.
pub fn codebook_to_string(codebook: &Codebook) -> String {
    let alloc = codebook.alloc();
    let meta = codebook.metadata();
    let file = CodebookFile {
        schema_version: SCHEMA_VERSION,
        k: alloc.k(),
        l_u: alloc.l_u(),
        l_phi: alloc.l_phi().to_vec(),
        amplitudes: codebook
            .amplitudes()
            .rows()
            .iter()
            .map(|r| r.iter().map(|x| format!("{x:.16e}")).collect())
            .collect(),
        achieved_mcd: codebook.achieved_mcd(),
        metadata: FileMetadata {
            seed: meta.seed,
            restarts: meta.restarts,
            sca_iterations: meta.sca_iterations,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    let mut s = serde_json::to_string_pretty(&file).expect("codebook serializes");
    s.push('\n');
    s
}

/// Parses and fully validates a codebook file.
pub fn codebook_from_str(text: &str) -> Result<Codebook> {
    let file: CodebookFile = serde_json::from_str(text).map_err(|e| Error::Parse(format!("codebook file: {e}")))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Parse(format!("unsupported schema_version {}", file.schema_version)));
    }
    if file.l_phi.len() != file.k {
        return Err(Error::Parse(format!("K={} but l_phi has {} entries", file.k, file.l_phi.len())));
    }
    let alloc = BitAllocation::new(file.l_u, file.l_phi)?;
    let mut rows = Vec::with_capacity(file.amplitudes.len());
    for (r, row) in file.amplitudes.iter().enumerate() {
        let parsed: std::result::Result<Vec<f64>, _> = row.iter().map(|s| s.trim().parse::<f64>()).collect();
        rows.push(parsed.map_err(|e| Error::Parse(format!("amplitude row {r}: {e}")))?);
    }
    let amplitudes = AmplitudeSet::from_unit_rows(rows)?;
    for (a, ua) in amplitudes.rows().iter().enumerate() {
        for (b, ub) in amplitudes.rows().iter().enumerate().skip(a + 1) {
            if amplitude_pair_distance(ua, ub)? <= 0.0 {
                return Err(Error::Parse(format!("amplitude rows {a} and {b} coincide")));
            }
        }
    }
    let metadata = DesignMetadata {
        seed: file.metadata.seed,
        restarts: file.metadata.restarts,
        sca_iterations: file.metadata.sca_iterations,
    };
    let codebook = Codebook::new(alloc, amplitudes, metadata)?;
    if !((codebook.achieved_mcd() - file.achieved_mcd).abs() <= MCD_CHECK_TOL) {
        return Err(Error::Parse(format!(
            "stored achieved_mcd {} does not match recomputed {}",
            file.achieved_mcd,
            codebook.achieved_mcd()
        )));
    }
    Ok(codebook)
}

pub fn read_codebook(path: &Path) -> Result<Codebook> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    codebook_from_str(&text)
}

pub const RESULTS_HEADER: &str = "snr_db,detector,trials,block_errors,bit_errors,bler,ber,bler_ci_lo,bler_ci_hi";

/// CSV rendering of a sweep. Wall time is left out so files are reproducible.
pub fn results_to_csv(result: &SimResult) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for p in &result.points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.snr_db, result.detector, p.trials, p.block_errors, p.bit_errors, p.bler, p.ber, p.bler_ci95.0, p.bler_ci95.1
        ));
    }
    s
}

/// One parsed results row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsRow {
    pub snr_db: f64,
    pub detector: Detector,
    pub trials: u64,
    pub block_errors: u64,
    pub bit_errors: u64,
    pub bler: f64,
    pub ber: f64,
    pub bler_ci_lo: f64,
    pub bler_ci_hi: f64,
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::Parse("missing or wrong results header".into()));
    }
    let bad = |n: usize, what: &str| Error::Parse(format!("results line {n}: bad {what}"));
    lines
        .enumerate()
        .map(|(i, line)| {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Parse(format!("results line {n}: expected 9 columns, got {}", f.len())));
            }
            let num = |j: usize, what: &str| f[j].parse::<f64>().map_err(|_| bad(n, what));
            let int = |j: usize, what: &str| f[j].parse::<u64>().map_err(|_| bad(n, what));
            Ok(ResultsRow {
                snr_db: num(0, "snr_db")?,
                detector: f[1].parse()?,
                trials: int(2, "trials")?,
                block_errors: int(3, "block_errors")?,
                bit_errors: int(4, "bit_errors")?,
                bler: num(5, "bler")?,
                ber: num(6, "ber")?,
                bler_ci_lo: num(7, "bler_ci_lo")?,
                bler_ci_hi: num(8, "bler_ci_hi")?,
            })
        })
        .collect()
}

/// Writes via a sibling temporary file so a failed write leaves nothing behind.
fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

#[derive(Debug, Parser)]
#[command(name = "ucon", version, about = "Design, analyze and simulate amplitude/PSK unitary constellations")]
struct Cli {
    /// Worker thread cap; does not change any result.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design the amplitude set of one allocation and write a codebook file.
    Design(DesignArgs),
    /// Rank bit allocations for K symbols and l_v bits.
    SearchAlloc(SearchArgs),
    /// Report distances and bounds of a codebook.
    Analyze(AnalyzeArgs),
    /// Run a BLER/BER sweep and write a CSV file.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct DesignOpts {
    #[arg(long, default_value_t = 16)]
    restarts: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    sca_max_iters: u32,
}

impl DesignOpts {
    fn config(&self) -> DesignConfig {
        DesignConfig {
            restarts: self.restarts,
            seed: self.seed,
            sca_max_iters: self.sca_max_iters,
            ..DesignConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct DesignArgs {
    #[arg(long = "K")]
    k: usize,
    /// Total bits; picks the best allocation when --lu/--lphi are absent.
    #[arg(long)]
    lv: Option<u32>,
    #[arg(long, requires = "lphi")]
    lu: Option<u32>,
    #[arg(long, value_delimiter = ',', requires = "lu")]
    lphi: Option<Vec<u32>>,
    #[command(flatten)]
    opts: DesignOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long = "K")]
    k: usize,
    #[arg(long)]
    lv: u32,
    #[command(flatten)]
    opts: DesignOpts,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long, required_unless_present = "pilot_lphi", conflicts_with = "pilot_lphi")]
    codebook: Option<PathBuf>,
    /// Analyze a uniform-amplitude PSK reference with this phase allocation instead.
    #[arg(long, value_delimiter = ',')]
    pilot_lphi: Option<Vec<u32>>,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    snr_db: f64,
    #[arg(long, default_value_t = 1)]
    antennas: u32,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long, default_value = "ml")]
    detector: String,
    #[arg(long, allow_negative_numbers = true)]
    snr_start: f64,
    #[arg(long, allow_negative_numbers = true)]
    snr_stop: f64,
    #[arg(long, default_value_t = 1.0)]
    snr_step: f64,
    #[arg(long, default_value_t = 1)]
    antennas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    min_errors: u64,
    #[arg(long, default_value_t = 10_000_000)]
    max_trials: u64,
    #[arg(long, default_value_t = crate::detect::DEFAULT_IUAP_ITERS)]
    iuap_iters: u32,
    #[arg(long)]
    out: PathBuf,
}

/// Failure with its exit code.
struct Exit(i32, String);

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) | Error::Parse(_) | Error::Capacity { .. } | Error::EmptyPhase => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Exit(code, e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Exit {
    Exit(EXIT_USAGE, msg.into())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    if cli.threads == Some(0) {
        let _ = writeln!(err, "error: --threads must be at least 1");
        return EXIT_USAGE;
    }
    let threads = cli.threads;
    let result = with_threads(threads, move || {
        let mut buf = Vec::new();
        let r = dispatch(cli.command, &mut buf);
        (r, buf)
    });
    let _ = out.write_all(&result.1);
    match result.0 {
        Ok(()) => EXIT_OK,
        Err(Exit(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

fn dispatch(command: Command, out: &mut Vec<u8>) -> std::result::Result<(), Exit> {
    match command {
        Command::Design(a) => cmd_design(a, out),
        Command::SearchAlloc(a) => cmd_search_alloc(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Exit {
    usage(format!("cannot write {}: {e}", path.display()))
}

fn cmd_design(a: DesignArgs, out: &mut Vec<u8>) -> std::result::Result<(), Exit> {
    let cfg = a.opts.config();
    cfg.validate()?;
    let codebook = match (a.lu, a.lphi) {
        (Some(lu), Some(lphi)) => {
            if lphi.len() != a.k {
                return Err(usage(format!("--lphi has {} entries but --K is {}", lphi.len(), a.k)));
            }
            let alloc = BitAllocation::new(lu, lphi)?;
            if let Some(lv) = a.lv {
                if lv != alloc.total_bits() {
                    return Err(usage(format!("--lv {lv} disagrees with --lu/--lphi ({} bits)", alloc.total_bits())));
                }
            }
            design_amplitude_set(&alloc, &cfg)?
        }
        _ => {
            let Some(lv) = a.lv else {
                return Err(usage("give either --lv or both --lu and --lphi"));
            };
            let ranked = search_bit_allocations(a.k, lv, &cfg)?;
            ranked.into_iter().next().expect("search returns at least one entry").codebook
        }
    };
    write_atomic(&a.out, &codebook_to_string(&codebook)).map_err(|e| io_err(&a.out, e))?;
    let _ = writeln!(out, "allocation: {}", codebook.alloc());
    let _ = writeln!(out, "achieved_mcd: {:.6}", codebook.achieved_mcd());
    let _ = writeln!(out, "upper_bound: {:.6}", mcd_upper_bound(codebook.alloc()));
    let _ = writeln!(out, "wrote {}", a.out.display());
    Ok(())
}

fn cmd_search_alloc(a: SearchArgs, out: &mut Vec<u8>) -> std::result::Result<(), Exit> {
    let cfg = a.opts.config();
    let ranked = search_bit_allocations(a.k, a.lv, &cfg)?;
    let _ = writeln!(out, "{:>4}  {:>3}  {:<16}  {:>12}  {:>12}", "rank", "lu", "lphi", "achieved_mcd", "upper_bound");
    for (i, r) in ranked.iter().enumerate() {
        let lphi: Vec<String> = r.alloc.l_phi().iter().map(|b| b.to_string()).collect();
        let _ = writeln!(
            out,
            "{:>4}  {:>3}  {:<16}  {:>12.6}  {:>12.6}",
            i + 1,
            r.alloc.l_u(),
            lphi.join(","),
            r.achieved_mcd(),
            r.upper_bound
        );
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs, out: &mut Vec<u8>) -> std::result::Result<(), Exit> {
    let codebook = match (&a.codebook, a.pilot_lphi) {
        (Some(path), _) => read_codebook(path)?,
        (None, Some(lphi)) => {
            let k = lphi.len();
            let alloc = BitAllocation::new(0, lphi)?;
            let row = vec![1.0 / (k as f64).sqrt(); k];
            Codebook::new(alloc, AmplitudeSet::from_unit_rows(vec![row])?, DesignMetadata::default())?
        }
        (None, None) => return Err(usage("--codebook or --pilot-lphi is required")),
    };
    if a.antennas == 0 {
        return Err(usage("--antennas must be at least 1"));
    }
    let alloc = codebook.alloc();
    let mcd = mcd_decomposed(&codebook);
    let _ = writeln!(out, "allocation: {alloc}");
    let _ = writeln!(out, "mcd_closed_form: {mcd:.6}");
    let _ = writeln!(out, "upper_bound: {:.6}", mcd_upper_bound(alloc));
    if alloc.total_bits() <= ANALYZE_BRUTEFORCE_BITS {
        let pair = closest_pair_bruteforce(&codebook, Execution::default())?;
        let (amp_a, ph_a) = indices_from_message(alloc, pair.message_a);
        let (amp_b, ph_b) = indices_from_message(alloc, pair.message_b);
        let _ = writeln!(out, "mcd_bruteforce: {:.6}", pair.distance);
        let _ = writeln!(
            out,
            "closest_pair: message {} (amp {amp_a}, phases {ph_a:?}) vs message {} (amp {amp_b}, phases {ph_b:?})",
            pair.message_a, pair.message_b
        );
    } else {
        let _ = writeln!(out, "mcd_bruteforce: skipped ({} bits)", alloc.total_bits());
    }
    let sigma2 = sigma2_from_snr_db(a.snr_db);
    let pep = pep_chernoff_bound(mcd, sigma2, a.antennas)?;
    let _ = writeln!(out, "chernoff_pep_bound: {pep:.6e} (snr_db {}, antennas {})", a.snr_db, a.antennas);
    Ok(())
}

fn snr_grid(start: f64, stop: f64, step: f64) -> std::result::Result<Vec<f64>, Exit> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(usage("SNR grid needs finite start <= stop and a positive step"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if n > 10_000 {
        return Err(usage("SNR grid has too many points"));
    }
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

fn cmd_simulate(a: SimulateArgs, out: &mut Vec<u8>) -> std::result::Result<(), Exit> {
    let codebook = read_codebook(&a.codebook)?;
    let detector: Detector = a.detector.parse()?;
    let cfg = SimConfig {
        antennas: a.antennas,
        snr_grid_db: snr_grid(a.snr_start, a.snr_stop, a.snr_step)?,
        detector,
        min_block_errors: a.min_errors,
        max_trials_per_point: a.max_trials,
        seed: a.seed,
        iuap_max_iters: a.iuap_iters,
    };
    cfg.validate()?;
    let result = run_sweep(&codebook, &cfg).map_err(|f| Exit::from(f.error))?;
    write_atomic(&a.out, &results_to_csv(&result)).map_err(|e| io_err(&a.out, e))?;
    for p in &result.points {
        let _ = writeln!(
            out,
            "snr_db {:>6.2}  trials {:>9}  block_errors {:>7}  bler {:.4e}  ber {:.4e}",
            p.snr_db, p.trials, p.block_errors, p.bler, p.ber
        );
    }
    let _ = writeln!(out, "wrote {}", a.out.display());
    Ok(())
}
