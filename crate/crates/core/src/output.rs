//! CSV and JSON emitters with a provenance header.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::SweepResult;
use crate::dynamics::{ChannelReport, QuantumChannel};
use crate::model::PhysicalParams;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the canonical JSON encoding of the parameters.
pub fn params_hash(p: &PhysicalParams) -> String {
    let json = serde_json::to_string(p).expect("parameters serialize");
    hex(&Sha256::digest(json.as_bytes()))
}

pub fn text_hash(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Comma-separated table with `#`-prefixed header lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { header: Vec::new(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        for l in line.into().lines() {
            self.header.push(l.to_string());
        }
        self
    }

    /// Adds the generator version line and a config echo.
    pub fn provenance(&mut self, command: &str, config_echo: &str) -> &mut Self {
        self.comment(format!("rpgsim {VERSION} {command}"));
        self.comment(format!("config_sha256 = {}", text_hash(config_echo)));
        for l in config_echo.lines() {
            self.header.push(if l.is_empty() { "config:".into() } else { format!("config: {l}") });
        }
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Floats are written with the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            let _ = writeln!(s, "# {h}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

impl From<&SweepResult> for Table {
    fn from(r: &SweepResult) -> Self {
        let mut cols = vec![r.axis.as_str()];
        cols.extend(r.metrics.iter().map(|(n, _)| n.as_str()));
        let mut t = Table::new(&cols);
        t.comment(format!("params_sha256 = {}", r.provenance.params_hash));
        t.comment(format!("points_per_period = {:?}, max_step_us = {:?}", r.provenance.points_per_period, r.provenance.max_step));
        for (k, v) in &r.fixed {
            t.comment(format!("fixed {k} = {v:?}"));
        }
        for (i, x) in r.axis_values.iter().enumerate() {
            let mut row = vec![*x];
            row.extend(r.metrics.iter().map(|(_, v)| v[i]));
            t.push(row);
        }
        t
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelDump {
    pub dim: usize,
    pub vectorization: &'static str,
    pub layout: &'static str,
    /// `d² × d²` superoperator, rows in order, each entry `[re, im]`.
    pub superoperator: Vec<Vec<[f64; 2]>>,
    pub choi_eigenvalues: Vec<f64>,
    pub report: ChannelReport,
    pub leakage: Vec<f64>,
    pub fidelity_zero_phase: f64,
    pub fidelity: f64,
    /// Against the identity gate; a check for drive-free configurations.
    pub fidelity_vs_identity: f64,
    pub phases: Vec<(String, f64)>,
}

impl ChannelDump {
    pub fn new(channel: &QuantumChannel, fidelity_zero_phase: f64, fidelity: f64, phases: Vec<(String, f64)>) -> Self {
        let s = channel.superoperator();
        Self {
            dim: channel.dim(),
            vectorization: "column-stacking",
            layout: "row-major",
            superoperator: s.rows().into_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect(),
            choi_eigenvalues: crate::opalg::hermitian_eigenvalues(&channel.choi()),
            report: channel.report(),
            leakage: channel.leakage().to_vec(),
            fidelity_zero_phase,
            fidelity,
            fidelity_vs_identity: crate::analysis::average_gate_fidelity(channel, &crate::opalg::identity(channel.dim()))
                .expect("square channel"),
            phases,
        }
    }
}
