//! End-to-end orchestration: configuration, pair selection, tiling,
//! matcher dispatch, DSM assembly and evaluation.

mod config;
mod pairs;
mod run;
mod tiling;

pub use config::{EvaluationConfig, PipelineConfig};
pub use pairs::{
    classify_pair, estimate_pair_metadata, read_pair_metadata, view_vector, PairClass, PairMetadata,
    MAX_BASELINE_DEG, MAX_INCIDENCE_DEG, MIN_BASELINE_DEG,
};
pub use run::{
    read_class_map, read_image, run_pipeline, PipelineOutput, StageTiming, TileFailure, TileOutcome,
};
pub use tiling::{tile_roi, CoreRect, Tile};

use thiserror::Error;

use crate::matching::MatchError;

/// Pipeline stage names used in diagnostics, timings and the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Input,
    Rectification,
    Warp,
    Matching,
    Triangulation,
    Rasterization,
    Mosaic,
    Evaluation,
    Output,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing pair metadata: {0}")]
    MissingMetadata(String),
    #[error("[{stage}] {message}")]
    Stage { stage: Stage, message: String },
    #[error("[matching] tile {tile}: {message}")]
    Adapter {
        tile: usize,
        message: String,
        stderr: String,
    },
}

impl PipelineError {
    pub fn stage(stage: Stage, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: e.to_string(),
        }
    }

    pub fn from_match(tile: usize, e: MatchError) -> Self {
        match e {
            MatchError::AdapterFailed { reason, stderr } => PipelineError::Adapter {
                tile,
                message: format!("external matcher failed: {reason}"),
                stderr,
            },
            other => PipelineError::Stage {
                stage: Stage::Matching,
                message: format!("tile {tile}: {other}"),
            },
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for stage
    /// failures, 4 for external adapter failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingMetadata(_) => 2,
            PipelineError::Stage { .. } => 3,
            PipelineError::Adapter { .. } => 4,
        }
    }
}
