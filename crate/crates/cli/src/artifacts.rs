//! JSON artifact shapes written by the subcommands and re-read by
//! `report`. Every document opens with a `config` echo of the inputs
//! that produced it, so artifacts are self-describing and re-runnable;
//! none of them embed wall-clock state, so a rerun with the same seed
//! reproduces the bytes exactly.

use infecta_core::detect::{DetectionReport, DetectionOutcome};
use infecta_core::hps::{IndexScope, ScoredAnchor};
use serde::{Deserialize, Serialize};

// ---------- hps ----------

#[derive(Debug, Serialize, Deserialize)]
pub struct HpsConfigEcho {
    pub corpus_checksum: String,
    pub ngram: usize,
    pub scope: IndexScope,
    pub top: usize,
    pub min_count: u64,
}

/// Ranked anchors, or a single scored anchor when one was requested.
#[derive(Debug, Serialize, Deserialize)]
pub struct HpsDoc {
    pub config: HpsConfigEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<ScoredAnchor>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub anchors: Vec<ScoredAnchor>,
}

// ---------- measure-ir ----------

#[derive(Debug, Serialize, Deserialize)]
pub struct MeasureConfigEcho {
    pub input: String,
    pub input_checksum: String,
    pub detection_key: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topics: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TopicMeasurement {
    pub name: String,
    /// Queries in the set that belong to the topic.
    pub matched_queries: usize,
    pub query_relevance: f64,
    /// Absent when the topic matched no queries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditional_infection_rate: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeasureDoc {
    pub config: MeasureConfigEcho,
    pub n_records: usize,
    pub infection_rate: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub topics: Vec<TopicMeasurement>,
}

// ---------- analyze-queries ----------

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryAnalysisConfigEcho {
    pub queries: String,
    pub queries_checksum: String,
    pub topics: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TopicRelevanceRow {
    pub name: String,
    pub matched: usize,
    pub relevance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryAnalysisDoc {
    pub config: QueryAnalysisConfigEcho,
    pub n_queries: usize,
    pub topics: Vec<TopicRelevanceRow>,
    /// Queries matching none of the topics.
    pub unmatched: usize,
}

// ---------- detect ----------

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectConfigEcho {
    /// "traces" or "corpus".
    pub mode: String,
    pub kernel: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_fpr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm_order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm_k: Option<f64>,
    pub input: String,
    pub input_checksum: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_checksum: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectOutcomeRow {
    #[serde(flatten)]
    pub outcome: DetectionOutcome,
    pub poisoned: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectDoc {
    pub config: DetectConfigEcho,
    pub threshold: f64,
    /// True when the threshold came from calibration rather than the
    /// command line.
    pub calibrated: bool,
    pub report: DetectionReport,
    pub outcomes: Vec<DetectOutcomeRow>,
}

// ---------- report ----------

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportInputs {
    pub manifests: Vec<String>,
    pub lineages: Vec<String>,
    pub detections: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PoisonRunRow {
    pub rate: f64,
    pub strategy: String,
    pub selection: String,
    pub wrap: String,
    pub mixup: bool,
    pub seed: u64,
    pub plans: usize,
    pub skipped: usize,
    pub corpus_checksum: String,
    pub output_checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RateSweepRow {
    pub rate: f64,
    pub seed: u64,
    /// Infection rate per generation, in order.
    pub generations: Vec<f64>,
    pub final_infection_rate: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionSummaryRow {
    pub mode: String,
    pub kernel: usize,
    pub threshold: f64,
    pub calibrated: bool,
    pub report: DetectionReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportDoc {
    pub inputs: ReportInputs,
    /// Checksum of the clean corpus every input traces back to.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_checksum: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub poison_runs: Vec<PoisonRunRow>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rate_sweep: Vec<RateSweepRow>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub detections: Vec<DetectionSummaryRow>,
}
