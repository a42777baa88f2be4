//! Output files. Every file starts with the hash of the configuration that
//! produced it: a `#` comment line in CSV, a `config_hash` key in JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use psgm::engine::StepRecord;

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&canonical))
}

/// Shared header facts.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
}

impl Provenance {
    pub fn new<T: Serialize>(config: &T, seed: u64) -> Self {
        Self {
            config_hash: config_hash(config),
            seed,
            version: VERSION,
        }
    }

    fn comment(&self) -> String {
        format!(
            "# config_hash={} seed={} version={}\n",
            self.config_hash, self.seed, self.version
        )
    }
}

pub fn out_dir(dir: &str) -> Result<PathBuf, CliError> {
    let p = PathBuf::from(dir);
    std::fs::create_dir_all(&p)?;
    Ok(p)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// `trace.csv`, written as the run progresses so an aborted run leaves the
/// steps it completed.
pub struct TraceWriter {
    w: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(dir: &Path, prov: &Provenance) -> Result<Self, CliError> {
        let mut w = BufWriter::new(File::create(dir.join("trace.csv"))?);
        w.write_all(prov.comment().as_bytes())?;
        w.write_all(b"k,mu_k,residual_norm,relative_error,error_db\n")?;
        Ok(Self { w })
    }

    pub fn record(&mut self, r: &StepRecord) -> std::io::Result<()> {
        writeln!(
            self.w,
            "{},{:.16e},{:.16e},{},{}",
            r.k,
            r.mu,
            r.residual_norm,
            opt(r.relative_error),
            opt(r.error_db)
        )
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn write_coefficients(dir: &Path, prov: &Provenance, u: &[f64]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(dir.join("final_coefficients.csv"))?);
    w.write_all(prov.comment().as_bytes())?;
    w.write_all(b"index,value\n")?;
    for (i, v) in u.iter().enumerate() {
        writeln!(w, "{i},{v:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

/// One row of `comparison.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub method: &'static str,
    /// `ok`, or the name of the error that stopped the method.
    pub status: String,
    pub error_db: Option<f64>,
    pub roughness: Option<f64>,
}

pub fn write_comparison(
    dir: &Path,
    prov: &Provenance,
    rows: &[ComparisonRow],
) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(dir.join("comparison.csv"))?);
    w.write_all(prov.comment().as_bytes())?;
    w.write_all(b"method,status,error_db,roughness\n")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.method,
            r.status,
            opt(r.error_db),
            opt(r.roughness)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
