//! The JSON run report.
//!
//! Every float is written in scientific notation with 17 significant digits,
//! so parsing the document back yields bit-identical values. Maps are
//! ordered, which makes the output byte-stable for fixed inputs.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::baseline::CalibrationReport;
use crate::decomposition::BatchDecomposition;
use crate::error::{CovarError, Result};
use crate::pcos::{ClusterStats, PcosOutcome};
use crate::simulator::PolicyEvaluation;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    /// Lowercase hex SHA-256 of the input matrix bytes.
    pub input_digest: Option<String>,
    pub config: BTreeMap<String, String>,
    pub n_samples: usize,
    pub n_classes: usize,
    pub samples: Vec<SampleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchDecomposition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pcos: Option<PcosSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicyEvaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationReport>,
}

impl RunReport {
    pub fn new(command: &str, n_samples: usize, n_classes: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            input_digest: None,
            config: BTreeMap::new(),
            n_samples,
            n_classes,
            samples: Vec::new(),
            batch: None,
            pcos: None,
            policies: Vec::new(),
            calibration: None,
        }
    }
}

/// Per-sample fields; which ones are present depends on the subcommand.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub max_class: usize,
    pub max_conf: f64,
    pub rcv: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_ce: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx_ce: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub middle_term: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remainder_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preserved: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcosSummary {
    pub singular_values: [f64; 2],
    pub left_vectors: [[f64; 2]; 2],
    pub rank_deficient: bool,
    pub isotropic: bool,
    pub clusters: ClusterStats,
    pub reliable_cluster: usize,
}

impl From<&PcosOutcome> for PcosSummary {
    fn from(o: &PcosOutcome) -> Self {
        Self {
            singular_values: o.spectral.singular_values,
            left_vectors: o.spectral.left_vectors,
            rank_deficient: o.spectral.rank_deficient,
            isotropic: o.spectral.isotropic,
            clusters: o.clusters.clone(),
            reliable_cluster: o.weights.reliable_cluster,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Pretty-printed JSON with 17-significant-digit floats.
struct ReportFormatter(PrettyFormatter<'static>);

impl Formatter for ReportFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ReportFormatter(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| CovarError::domain(format!("report serialization failed: {e}")))?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

pub fn from_json(text: &str) -> Result<RunReport> {
    serde_json::from_str(text).map_err(|e| {
        CovarError::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
    })
}
