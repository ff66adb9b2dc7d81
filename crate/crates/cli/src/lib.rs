//! Batch front-end for the joint mirror procedure: matrix ingest, single
//! runs with CSV/JSON artifacts, and Monte Carlo replication studies.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use jointmirror::engine::{
    default_threshold_grid, run_directional, BandwidthChoice, JMConfig, Variant,
};
use jointmirror::simulate::{replicate, summarize, Preset, ReplicationRow};
use jointmirror::unmask::Bandwidth;
use jointmirror::{run_jm, MaskingScheme, PValueMatrix, ZMatrix};
use serde::Serialize;

/// Failure classes with stable process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or malformed input data.
    #[error("input error: {0}")]
    Input(String),
    /// Invalid flags or run configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Failure writing artifacts.
    #[error("output error: {0}")]
    Output(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
            CliError::Output(_) | CliError::Internal(_) => 1,
        }
    }
}

impl From<jointmirror::Error> for CliError {
    fn from(e: jointmirror::Error) -> Self {
        use jointmirror::Error as E;
        match e {
            E::Domain(m) | E::InsufficientData(m) => CliError::Input(m),
            E::Config(m) => CliError::Config(m),
            E::Contract(m) => CliError::Internal(m),
        }
    }
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    PValue,
    ZValue,
}

impl FromStr for Mode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "pvalue" => Ok(Mode::PValue),
            "zvalue" => Ok(Mode::ZValue),
            other => Err(CliError::Config(format!(
                "unknown mode '{other}', expected pvalue or zvalue"
            ))),
        }
    }
}

/// Raw numeric table read from a delimited file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

/// Parses comma- or tab-delimited numbers. The delimiter is taken from the
/// first line; a first row that does not parse as numbers is a header.
/// Errors carry 1-based line numbers.
pub fn read_table<R: Read>(reader: R) -> Result<Table, CliError> {
    read_table_checked(reader, |_| Ok(()))
}

/// [`read_table`] with a per-value check run as rows stream in.
pub fn read_table_checked<R: Read>(
    reader: R,
    check: impl Fn(f64) -> Result<(), String>,
) -> Result<Table, CliError> {
    let mut buf = std::io::BufReader::with_capacity(1 << 20, reader);
    let mut first = String::new();
    std::io::BufRead::read_line(&mut buf, &mut first)
        .map_err(|e| CliError::Input(format!("cannot read input: {e}")))?;
    let delimiter = if first.contains('\t') { b'\t' } else { b',' };
    let chained = std::io::Cursor::new(first.into_bytes()).chain(buf);
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(chained);

    let mut data = Vec::new();
    let mut cols = 0usize;
    let mut rows = 0usize;
    let mut record = csv::ByteRecord::new();
    let mut line = 0usize;
    loop {
        match rdr.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(CliError::Input(format!("line {}: {e}", line + 1))),
        }
        line = record.position().map_or(line + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, usize> = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                std::str::from_utf8(field)
                    .ok()
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or(c)
            })
            .collect();
        match parsed {
            Ok(values) => {
                if rows == 0 {
                    cols = values.len();
                } else if values.len() != cols {
                    return Err(CliError::Input(format!(
                        "line {line}: expected {cols} columns, found {}",
                        values.len()
                    )));
                }
                for (c, &v) in values.iter().enumerate() {
                    check(v).map_err(|m| {
                        CliError::Input(format!("line {line}, column {}: {m}", c + 1))
                    })?;
                }
                data.extend(values);
                rows += 1;
            }
            Err(_) if rows == 0 && line == 1 => continue,
            Err(c) => {
                let field = String::from_utf8_lossy(&record[c]).into_owned();
                return Err(CliError::Input(format!(
                    "line {line}, column {}: cannot parse '{field}' as a number",
                    c + 1
                )));
            }
        }
    }
    if rows == 0 {
        return Err(CliError::Input("input contains no data rows".into()));
    }
    Ok(Table { data, rows, cols })
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn with_path(path: &Path, e: CliError) -> CliError {
    match e {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn ingest_pvalues(path: &Path) -> Result<PValueMatrix, CliError> {
    let t = read_table_checked(open(path)?, |p| {
        if (0.0..=1.0).contains(&p) {
            Ok(())
        } else {
            Err(format!("p-value {p} is outside [0, 1]"))
        }
    })
    .map_err(|e| with_path(path, e))?;
    Ok(PValueMatrix::new(t.data, t.rows, t.cols)?)
}

pub fn ingest_zvalues(path: &Path) -> Result<ZMatrix, CliError> {
    let t = read_table_checked(open(path)?, |z| {
        if z.is_finite() {
            Ok(())
        } else {
            Err(format!("z-value {z} is not finite"))
        }
    })
    .map_err(|e| with_path(path, e))?;
    Ok(ZMatrix::new(t.data, t.rows, t.cols)?)
}

/// Writes a row-major matrix with 17 significant digits, so that reading it
/// back reproduces every value exactly.
pub fn write_matrix<W: Write>(out: W, data: &[f64], cols: usize) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    for row in data.chunks_exact(cols) {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{v:.16e}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// How the kernel bandwidth is chosen on the command line.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthFlag {
    Silverman,
    /// Row-major `K x K` entries.
    Fixed(Vec<f64>),
}

impl FromStr for BandwidthFlag {
    type Err = CliError;

    /// `silverman` or `fixed:` followed by comma-separated row-major
    /// entries; `;` may separate rows.
    fn from_str(s: &str) -> Result<Self, CliError> {
        if s == "silverman" {
            return Ok(BandwidthFlag::Silverman);
        }
        let body = s.strip_prefix("fixed:").ok_or_else(|| {
            CliError::Config(format!(
                "bandwidth must be 'silverman' or 'fixed:<entries>', got '{s}'"
            ))
        })?;
        let values: Result<Vec<f64>, _> = body
            .split([',', ';'])
            .map(|v| v.trim().parse::<f64>())
            .collect();
        let values = values
            .map_err(|_| CliError::Config(format!("cannot parse bandwidth entries '{body}'")))?;
        let k = (values.len() as f64).sqrt().round() as usize;
        if k == 0 || k * k != values.len() {
            return Err(CliError::Config(format!(
                "fixed bandwidth needs K*K entries, got {}",
                values.len()
            )));
        }
        Ok(BandwidthFlag::Fixed(values))
    }
}

impl BandwidthFlag {
    fn resolve(&self) -> Result<BandwidthChoice, CliError> {
        match self {
            BandwidthFlag::Silverman => Ok(BandwidthChoice::Silverman),
            BandwidthFlag::Fixed(v) => {
                let k = (v.len() as f64).sqrt().round() as usize;
                Ok(BandwidthChoice::Fixed(Bandwidth::from_row_major(k, v)?))
            }
        }
    }
}

/// Parses `alpha,lambda,nu`.
pub fn parse_scheme(s: &str) -> Result<MaskingScheme, CliError> {
    let parts: Result<Vec<f64>, _> = s.split(',').map(|v| v.trim().parse::<f64>()).collect();
    match parts.as_deref() {
        Ok([a, l, n]) => Ok(MaskingScheme::new(*a, *l, *n)?),
        _ => Err(CliError::Config(format!(
            "scheme must be three comma-separated numbers alpha,lambda,nu, got '{s}'"
        ))),
    }
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub input: Option<PathBuf>,
    pub mode: Mode,
    pub variant: Variant,
    pub q: f64,
    /// `(alpha_m, lambda, nu)`.
    pub scheme: (f64, f64, f64),
    pub seed: u64,
    pub bandwidth: BandwidthFlag,
    pub out_dir: PathBuf,
    /// Generator preset, `name[:key=value,...]`; switches to replication mode.
    pub simulate: Option<String>,
    pub reps: usize,
    pub threads: Option<usize>,
}

impl RunManifest {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            input: None,
            mode: Mode::PValue,
            variant: Variant::Product,
            q: 0.1,
            scheme: (0.5, 0.5, 1.0),
            seed: 0,
            bandwidth: BandwidthFlag::Silverman,
            out_dir: out_dir.into(),
            simulate: None,
            reps: 100,
            threads: None,
        }
    }
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    /// Rejections (or signed discoveries) for single runs; rows written for
    /// replication studies.
    pub count: usize,
}

#[derive(Serialize)]
struct Metadata<'a> {
    manifest: &'a RunManifest,
    version: &'static str,
    seed: u64,
    rows: usize,
    cols: usize,
    discoveries: usize,
    wall_time_ms: f64,
}

/// Executes `manifest` on a rayon pool capped at `manifest.threads`.
pub fn run(manifest: &RunManifest) -> Result<RunSummary, CliError> {
    if !(manifest.q > 0.0 && manifest.q < 1.0) {
        return Err(CliError::Config(format!(
            "q must lie in (0, 1), got {}",
            manifest.q
        )));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = manifest.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Internal(format!("cannot start thread pool: {e}")))?;
    fs::create_dir_all(&manifest.out_dir).map_err(|e| output_err(&manifest.out_dir, e))?;
    pool.install(|| match &manifest.simulate {
        Some(preset) => run_replications(manifest, preset),
        None => match manifest.mode {
            Mode::PValue => run_pvalue(manifest),
            Mode::ZValue => run_zvalue(manifest),
        },
    })
}

fn input_path(manifest: &RunManifest) -> Result<&Path, CliError> {
    manifest
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("--input is required unless --simulate is given".into()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| output_err(path, e))
}

fn write_metadata(manifest: &RunManifest, meta: &Metadata) -> Result<PathBuf, CliError> {
    let path = manifest.out_dir.join("metadata.json");
    let text = serde_json::to_string_pretty(meta).map_err(|e| output_err(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| output_err(&path, e))?;
    Ok(path)
}

fn run_pvalue(manifest: &RunManifest) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let path = input_path(manifest)?;
    let pvals = ingest_pvalues(path)?;
    log::info!(
        "read {} x {} p-values from {}",
        pvals.rows(),
        pvals.cols(),
        path.display()
    );
    let (a, l, n) = manifest.scheme;
    let config = JMConfig::new(manifest.q, manifest.variant)
        .with_seed(manifest.seed)
        .with_scheme(MaskingScheme::new(a, l, n)?)
        .with_bandwidth(manifest.bandwidth.resolve()?);
    let res = run_jm(&pvals, &config)?;
    log::info!(
        "{} rejections after {} reveals, terminal FDP estimate {}",
        res.rejected.len(),
        res.reveal_order.len(),
        res.terminal_fdp_hat
    );

    let mut rejected = vec![false; pvals.rows()];
    for &i in &res.rejected {
        rejected[i] = true;
    }
    let results = manifest.out_dir.join("results.csv");
    let mut w = csv_writer(&results)?;
    let err = |e| output_err(&results, e);
    w.write_record(["index", "rejected", "unmask_rank", "region"])
        .map_err(err)?;
    for i in 0..pvals.rows() {
        w.write_record([
            i.to_string(),
            u8::from(rejected[i]).to_string(),
            res.unmask_rank[i].to_string(),
            res.labels[i].to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| output_err(&results, e))?;

    let trajectory = manifest.out_dir.join("trajectory.csv");
    let mut w = csv_writer(&trajectory)?;
    let err = |e| output_err(&trajectory, e);
    w.write_record(["t", "A", "R", "fdp_hat"]).map_err(err)?;
    for p in &res.fdp_trajectory {
        w.write_record([
            p.t.to_string(),
            p.a.to_string(),
            p.r.to_string(),
            p.fdp_hat.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| output_err(&trajectory, e))?;

    let meta = write_metadata(
        manifest,
        &Metadata {
            manifest,
            version: env!("CARGO_PKG_VERSION"),
            seed: manifest.seed,
            rows: pvals.rows(),
            cols: pvals.cols(),
            discoveries: res.rejected.len(),
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    )?;
    Ok(RunSummary {
        files: vec![results, trajectory, meta],
        count: res.rejected.len(),
    })
}

fn run_zvalue(manifest: &RunManifest) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let path = input_path(manifest)?;
    let z = ingest_zvalues(path)?;
    log::info!(
        "read {} x {} z-values from {}",
        z.rows(),
        z.cols(),
        path.display()
    );
    let grid = default_threshold_grid(&z);
    let res = if grid.is_empty() {
        log::warn!("no row has components of a single sign; nothing can be rejected");
        jointmirror::DirectionalResult {
            signs: vec![0; z.rows()],
            threshold: None,
            dfdp_trajectory: Vec::new(),
        }
    } else {
        run_directional(&z, manifest.q, &grid)?
    };

    let results = manifest.out_dir.join("results.csv");
    let mut w = csv_writer(&results)?;
    let err = |e| output_err(&results, e);
    w.write_record(["index", "rejected", "sign"]).map_err(err)?;
    for (i, s) in res.signs.iter().enumerate() {
        w.write_record([i.to_string(), u8::from(*s != 0).to_string(), s.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| output_err(&results, e))?;

    let trajectory = manifest.out_dir.join("trajectory.csv");
    let mut w = csv_writer(&trajectory)?;
    let err = |e| output_err(&trajectory, e);
    w.write_record(["threshold", "A", "R", "dfdp_hat"])
        .map_err(err)?;
    for s in &res.dfdp_trajectory {
        w.write_record([
            s.threshold.to_string(),
            s.a.to_string(),
            s.r.to_string(),
            s.dfdp_hat.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| output_err(&trajectory, e))?;

    let meta = write_metadata(
        manifest,
        &Metadata {
            manifest,
            version: env!("CARGO_PKG_VERSION"),
            seed: manifest.seed,
            rows: z.rows(),
            cols: z.cols(),
            discoveries: res.discoveries(),
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    )?;
    Ok(RunSummary {
        files: vec![results, trajectory, meta],
        count: res.discoveries(),
    })
}

/// Writes replication rows in replication order, then method order.
pub fn write_replications(path: &Path, rows: &[ReplicationRow]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| output_err(path, e))?;
    }
    w.flush().map_err(|e| output_err(path, e))
}

fn run_replications(manifest: &RunManifest, preset: &str) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let preset: Preset = preset.parse()?;
    let methods = preset.default_methods();
    log::info!(
        "{} replications of {:?} on {} threads",
        manifest.reps,
        preset,
        rayon::current_num_threads()
    );
    let rows = replicate(&preset, &methods, manifest.q, manifest.reps, manifest.seed)?;
    for s in summarize(&rows) {
        log::info!(
            "{}: FDP {:.4} ({:.4}), mFDP {:.4}, power {:.4}",
            s.method,
            s.fdp.0,
            s.fdp.1,
            s.mfdp.0,
            s.power.0
        );
    }
    let path = manifest.out_dir.join("replications.csv");
    write_replications(&path, &rows)?;
    let meta = write_metadata(
        manifest,
        &Metadata {
            manifest,
            version: env!("CARGO_PKG_VERSION"),
            seed: manifest.seed,
            rows: rows.len(),
            cols: 0,
            discoveries: 0,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    )?;
    Ok(RunSummary {
        files: vec![path, meta],
        count: rows.len(),
    })
}
