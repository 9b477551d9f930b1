//! Wire messages: one JSON envelope per line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedopt::{FedConfig, SourceCell};
use crate::nuisance::{ModelParams, NuisanceConfig, SiteCovariateSummary};
use crate::survival::TimeGrid;

pub const PROTOCOL_VERSION: u32 = 1;

/// `{v, kind, site, payload}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    pub site: usize,
    #[serde(flatten)]
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Message {
    Hello(Hello),
    ModelBroadcast(Box<ModelBroadcast>),
    CovariateSummary(SiteCovariateSummary),
    AugmentationMoments(AugmentationMoments),
    Ack(Ack),
    Error(ErrorReport),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello(_) => "Hello",
            Message::ModelBroadcast(_) => "ModelBroadcast",
            Message::CovariateSummary(_) => "CovariateSummary",
            Message::AugmentationMoments(_) => "AugmentationMoments",
            Message::Ack(_) => "Ack",
            Message::Error(_) => "Error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub n: usize,
    pub dim: usize,
}

/// Everything a source site needs to compute its moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBroadcast {
    pub grid: TimeGrid,
    /// Outcome model fitted on the full target sample.
    pub model: ModelParams,
    pub target_summary: SiteCovariateSummary,
    pub nuisance: NuisanceConfig,
    pub fed: FedConfig,
    /// Shared seed for fold labels and bootstrap multiplicities.
    pub seed: u64,
}

/// Moments of one `(t, a)` cell at one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMoments {
    pub j: usize,
    pub a: u8,
    #[serde(flatten)]
    pub cell: SourceCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationMoments {
    pub n: usize,
    /// Set when the site has no rows in some arm.
    pub empty_arm: [bool; 2],
    pub cells: Vec<CellMoments>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub message: String,
}

impl Envelope {
    pub fn new(site: usize, message: Message) -> Self {
        Envelope {
            v: PROTOCOL_VERSION,
            site,
            message,
        }
    }

    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a line and checks the protocol version.
    pub fn from_line(line: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(line)?;
        match raw.get("v").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
            Some(v) => {
                return Err(Error::Protocol(format!(
                    "protocol version {v} does not match {PROTOCOL_VERSION}"
                )))
            }
            None => return Err(Error::Protocol("message without a version field".into())),
        }
        serde_json::from_value(raw).map_err(|e| Error::Protocol(format!("malformed message: {e}")))
    }
}
