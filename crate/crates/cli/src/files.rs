use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use kmat_core::evalkit::Projection;
use kmat_core::{ClassEmbeddings, Modality};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("report types serialize to TOML")
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &to_toml(value))
}

/// Parses a TOML file; any parse failure is a config error.
pub fn read_config_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| CliError::config(path, e.message()))
}

/// Parses a TOML file; any parse failure is a data error.
pub fn read_data_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| CliError::data(path, e.message()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// `class,modality,v0,...` rows, high-end classes first.
pub fn embeddings_csv(w: &ClassEmbeddings) -> String {
    let dim = w.high.ncols();
    let mut out = String::from("class,modality");
    for j in 0..dim {
        let _ = write!(out, ",v{j}");
    }
    out.push('\n');
    for m in Modality::ALL {
        for (class, row) in w.get(m).rows().into_iter().enumerate() {
            let _ = write!(out, "{class},{m}");
            for v in row {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
    }
    out
}

/// `class,modality,pc1,pc2` rows in the same order as [`embeddings_csv`].
pub fn projection_csv(proj: &Projection, n_classes: usize) -> String {
    let mut out = String::from("class,modality,pc1,pc2\n");
    for (i, row) in proj.coords.rows().into_iter().enumerate() {
        let m = Modality::ALL[i / n_classes];
        let _ = writeln!(out, "{},{m},{:?},{:?}", i % n_classes, row[0], row[1]);
    }
    out
}
