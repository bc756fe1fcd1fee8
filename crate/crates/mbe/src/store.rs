//! Versioned JSON documents for fitted parameters, calibration profiles,
//! models and reports.
//!
//! Documents are human-readable JSON with an explicit `format_version` and
//! the seed/config they were created with, so fitted constants stay
//! auditable. Serialization is deterministic: struct fields in declaration
//! order, maps sorted, floats in shortest round-trip form. Spike dumps are
//! never stored; they are recomputable.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::convert::{CalibrationProfile, FidelityReport, FloatTransformer, SpikingTransformer};
use crate::error::{Error, Result};
use crate::fit::FittedApproximator;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    Approximator,
    Calibration,
    Model,
    Report,
}

/// What produced a document: the driving seed and a config summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "payload_kind", rename_all = "snake_case")]
pub enum Payload {
    Approximator(FittedApproximator),
    Calibration(CalibrationProfile),
    FloatModel(FloatTransformer),
    SpikingModel(Box<SpikingTransformer>),
    Report(FidelityReport),
}

impl Payload {
    pub fn kind(&self) -> DocKind {
        match self {
            Payload::Approximator(_) => DocKind::Approximator,
            Payload::Calibration(_) => DocKind::Calibration,
            Payload::FloatModel(_) | Payload::SpikingModel(_) => DocKind::Model,
            Payload::Report(_) => DocKind::Report,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreDocument {
    pub format_version: u32,
    pub kind: DocKind,
    pub created_with: Provenance,
    pub payload: Payload,
}

impl StoreDocument {
    pub fn new(payload: Payload, seed: Option<u64>, config: serde_json::Value) -> Self {
        StoreDocument {
            format_version: FORMAT_VERSION,
            kind: payload.kind(),
            created_with: Provenance { seed, config },
            payload,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Check the version before trusting the rest of the schema.
        let probe: serde_json::Value = serde_json::from_str(text)?;
        let found = probe
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::MalformedDocument("missing format_version".into()))?
            as u32;
        if found > FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                supported: FORMAT_VERSION,
            });
        }
        let doc: StoreDocument = serde_json::from_str(text)?;
        if doc.kind != doc.payload.kind() {
            return Err(Error::MalformedDocument(format!(
                "declared kind {:?} does not match payload kind {:?}",
                doc.kind,
                doc.payload.kind()
            )));
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn expect_approximator(self) -> Result<FittedApproximator> {
        match self.payload {
            Payload::Approximator(a) => Ok(a),
            other => Err(Error::MalformedDocument(format!(
                "expected an approximator document, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn expect_calibration(self) -> Result<CalibrationProfile> {
        match self.payload {
            Payload::Calibration(c) => Ok(c),
            other => Err(Error::MalformedDocument(format!(
                "expected a calibration document, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn expect_float_model(self) -> Result<FloatTransformer> {
        match self.payload {
            Payload::FloatModel(m) => Ok(m),
            other => Err(Error::MalformedDocument(format!(
                "expected a float model document, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn expect_spiking_model(self) -> Result<SpikingTransformer> {
        match self.payload {
            Payload::SpikingModel(m) => Ok(*m),
            other => Err(Error::MalformedDocument(format!(
                "expected a spiking model document, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn expect_report(self) -> Result<FidelityReport> {
        match self.payload {
            Payload::Report(r) => Ok(r),
            other => Err(Error::MalformedDocument(format!(
                "expected a report document, found {:?}",
                other.kind()
            ))),
        }
    }
}

/// CSV form of a fidelity report: one row per metric scope and per site.
pub fn report_to_csv(report: &FidelityReport) -> String {
    let mut out = String::from("scope,name,mse,linf,cosine,firing_rate,spikes,slots,clamped,encodes\n");
    out.push_str(&format!(
        "final,output,{},{},{},,,,,\n",
        report.mse, report.linf, report.cosine
    ));
    for layer in &report.per_layer {
        out.push_str(&format!(
            "layer,L{},{},{},{},,,,,\n",
            layer.layer, layer.mse, layer.linf, layer.cosine
        ));
    }
    for site in &report.sites {
        out.push_str(&format!(
            "site,{},,,,{},{},{},{},{}\n",
            site.site, site.firing_rate, site.spikes, site.slots, site.clamped, site.encodes
        ));
    }
    out
}
