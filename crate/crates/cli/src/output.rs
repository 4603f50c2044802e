//! Result files and the provenance sidecar.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// One result file, fully rendered in memory.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

fn to_failure(e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("cannot render output: {e}"))
}

/// Rows as CSV (header from field names) or as a JSON array of objects.
pub fn table<T: Serialize>(stem: &str, rows: &[T], format: Format) -> Result<Artifact, Failure> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(to_failure)?;
            }
            let bytes = w.into_inner().map_err(to_failure)?;
            Ok(Artifact { name: format!("{stem}.csv"), bytes })
        }
        Format::Json => json(stem, &rows),
    }
}

pub fn json<T: Serialize + ?Sized>(stem: &str, value: &T) -> Result<Artifact, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(to_failure)?;
    bytes.push(b'\n');
    Ok(Artifact { name: format!("{stem}.json"), bytes })
}

/// `key,value` rows.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Entry {
    pub key: String,
    pub value: f64,
}

pub fn entry(key: &str, value: f64) -> Entry {
    Entry { key: key.into(), value }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
struct OutputRecord<'a> {
    file: &'a str,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Provenance<'a, M: Serialize, S: Serialize> {
    tool: &'a str,
    version: &'a str,
    manifest: &'a M,
    settings: &'a S,
    outputs: Vec<OutputRecord<'a>>,
    created: String,
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Io(format!("cannot create output directory {}: {e}", dir.display())))
}

/// Name of the provenance sidecar of a command.
pub fn provenance_file(stem: &str) -> String {
    format!("{stem}.provenance.json")
}

/// Write all artifacts plus the `<stem>.provenance.json` sidecar into `dir`.
/// Nothing is written when any target already exists and `force` is off.
pub fn write_all<M: Serialize, S: Serialize>(
    dir: &Path,
    stem: &str,
    artifacts: &[Artifact],
    force: bool,
    manifest: &M,
    settings: &S,
) -> Result<Vec<PathBuf>, Failure> {
    create_dir(dir)?;
    let sidecar_name = provenance_file(stem);
    let names = artifacts.iter().map(|a| a.name.as_str()).chain(std::iter::once(sidecar_name.as_str()));
    if !force {
        let existing: Vec<String> =
            names.map(|n| dir.join(n)).filter(|p| p.exists()).map(|p| p.display().to_string()).collect();
        if !existing.is_empty() {
            return Err(Failure::Io(format!(
                "refusing to overwrite existing output (pass --force): {}",
                existing.join(", ")
            )));
        }
    }

    let provenance = Provenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        manifest,
        settings,
        outputs: artifacts.iter().map(|a| OutputRecord { file: &a.name, sha256: sha256_hex(&a.bytes) }).collect(),
        created: chrono::Utc::now().to_rfc3339(),
    };
    let sidecar = Artifact { name: sidecar_name, ..json("provenance", &provenance)? };

    let mut written = Vec::new();
    for a in artifacts.iter().chain(std::iter::once(&sidecar)) {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.bytes).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct Diagnostics<'a, M: Serialize, S: Serialize> {
    error: String,
    manifest: &'a M,
    settings: Option<&'a S>,
    created: String,
}

/// Record a numerical failure in `<stem>.diagnostics.json`, next to where
/// results would have gone.
pub fn write_diagnostics<M: Serialize, S: Serialize>(
    dir: &Path,
    stem: &str,
    failure: &Failure,
    manifest: &M,
    settings: Option<&S>,
) -> Result<PathBuf, Failure> {
    create_dir(dir)?;
    let d = Diagnostics { error: failure.to_string(), manifest, settings, created: chrono::Utc::now().to_rfc3339() };
    let a = json(&format!("{stem}.diagnostics"), &d)?;
    let path = dir.join(&a.name);
    std::fs::write(&path, &a.bytes).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}
