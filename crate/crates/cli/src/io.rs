//! File plumbing shared by the commands: atomic writes, digests, loaders.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use qmem_core::metrics::TagRun;
use qmem_core::tagstream::read_tag_file;
use qmem_core::{validate_config, ExperimentConfig};
use sha2::{Digest, Sha256};

use crate::{data, usage, CliResult};

/// Writes through a temp file in the destination directory and renames it
/// into place, so readers never see a half-written output.
pub fn write_atomic<F>(path: &Path, fill: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let ctx = || format!("cannot write {}", path.display());
    let tmp = tempfile::NamedTempFile::new_in(&dir).with_context(ctx).map_err(usage)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w).with_context(ctx).map_err(usage)?;
        w.flush().with_context(ctx).map_err(usage)?;
    }
    // temp files are created owner-only; outputs get ordinary permissions
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644)).with_context(ctx).map_err(usage)?;
    }
    tmp.persist(path).map_err(|e| e.error).with_context(ctx).map_err(usage)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

/// Writes to stdout. A closed pipe (`qmem ... | head`) is not an error.
pub fn to_stdout<F>(fill: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let mut out = io::stdout().lock();
    match fill(&mut out).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(usage(anyhow!("cannot write to stdout: {e}"))),
        _ => Ok(()),
    }
}

pub fn print_json(value: &serde_json::Value) -> CliResult<()> {
    to_stdout(|w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(usage)
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display())).map_err(usage)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = BufReader::new(open(path)?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).with_context(|| format!("cannot read {}", path.display())).map_err(data)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Reads, parses and validates a config. Every failure is a usage error.
pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(usage)?;
    let cfg = ExperimentConfig::from_json(&text).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    validate_config(cfg).map_err(|e| usage(anyhow!("{}: {e}", path.display())))
}

pub fn load_tags(path: &Path) -> CliResult<TagRun> {
    let reader = read_tag_file(BufReader::with_capacity(1 << 20, open(path)?))
        .with_context(|| format!("{}", path.display()))
        .map_err(data)?;
    let header = *reader.header();
    let records = reader
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("{}", path.display()))
        .map_err(data)?;
    Ok(TagRun { header, records })
}

/// A CSV file as its header row and string records.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h.trim() == name)
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(open(path)?);
    let headers = rdr
        .headers()
        .with_context(|| format!("{}", path.display()))
        .map_err(data)?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = rdr
        .records()
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("{}", path.display()))
        .map_err(data)?;
    Ok(Table { headers, rows })
}

/// Parses cell `col` of `row` (1-based line `line` for messages) as f64.
pub fn parse_cell(row: &csv::StringRecord, col: usize, line: usize, name: &str) -> CliResult<Option<f64>> {
    match row.get(col).map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => s
            .parse::<f64>()
            .map(Some)
            .map_err(|_| data(anyhow!("line {line}: column {name}: cannot parse {s:?} as a number"))),
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
