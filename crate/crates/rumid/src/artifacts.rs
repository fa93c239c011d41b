//! Identification artifacts and the metadata hash that ties them together.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rumid_core::characteristics::{OmegaConfig, OmegaDiagnostics};
use rumid_core::density::{DensityOptions, MassReport};
use rumid_core::field::GridSpec;
use rumid_core::symmetry::{RatioFunction, SymmetryReport};

use crate::formats::{read_json, FormatError, FormatResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> FormatResult<String> {
    let bytes = fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

/// Hash over the field contents, pivot, reference levels and grid.
pub fn metadata_hash(field_sha256: &str, pivot: usize, a_ref: &[f64], grid: &GridSpec) -> String {
    let mut s = format!("field={field_sha256};pivot={pivot};a_ref=");
    for r in a_ref {
        s.push_str(&format!("{:016x},", r.to_bits()));
    }
    s.push_str(";grid=");
    for ax in grid.axes() {
        s.push_str(&format!("{:016x}:{:016x}:{},", ax.lo.to_bits(), ax.hi.to_bits(), ax.n));
    }
    sha256_hex(s.as_bytes())
}

/// Sidecar written next to a simulated field CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub provenance: String,
    pub csv_sha256: String,
    pub grid: GridSpec,
    pub model: crate::formats::ModelFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioArtifact {
    pub metadata_hash: String,
    pub ratio: RatioFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaArtifact {
    pub metadata_hash: String,
    pub alternative: usize,
    pub a_ref: f64,
    pub step: f64,
    pub aj_range: (f64, f64),
    pub level_range: (f64, f64),
    pub diagnostics: OmegaDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityArtifact {
    pub metadata_hash: String,
    pub mass: MassReport,
    /// Target range for the mass.
    pub mass_target: (f64, f64),
    pub mass_in_target: bool,
    pub tol_neg: f64,
    pub clipped: usize,
    pub negative_flagged: usize,
    pub min_raw: f64,
    pub max_cdf_spread: f64,
    pub supported_nodes: usize,
    pub nodes: usize,
}

/// Index of everything one `identify` run wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub metadata_hash: String,
    pub field_sha256: String,
    pub pivot: usize,
    /// `order[i]` is the input label of internal alternative `i`.
    pub order: Vec<usize>,
    /// Reference level per recovered alternative, in internal order.
    pub a_ref: Vec<f64>,
    pub grid: GridSpec,
    pub omega: OmegaConfig,
    pub density_options: DensityOptions,
    pub condition: SymmetryReport,
    pub ratio_files: Vec<String>,
    pub omega_files: Vec<String>,
    pub utility_files: Vec<String>,
    pub density_file: String,
    pub density_report: String,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> FormatResult<Self> {
        read_json(&dir.join(Self::FILE))
    }

    pub fn path(dir: &Path, name: &str) -> PathBuf {
        dir.join(name)
    }
}
