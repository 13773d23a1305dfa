use std::path::Path;

use serde::Serialize;

use super::{FrameTiming, PipelineConfig, RunOutput, RunStats};
use crate::backbones::Backbones;
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "run_report.json";

const PLATFORM_NOTE: &str = "Outputs are bit-identical across runs on the same build. \
All arithmetic is IEEE-754 binary64 without fused multiply-add or parallel reductions, \
so other platforms agree unless libm transcendental functions (exp, sqrt, cos) differ \
in their last bit.";

#[derive(Debug, Clone, Serialize)]
pub struct BackboneEntry {
    pub slot: String,
    pub implementation: String,
}

/// Effective configuration and timing of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub backbones: Vec<BackboneEntry>,
    pub frames: usize,
    pub resolution: (usize, usize),
    pub fps: f64,
    pub anchor: usize,
    pub start_step: usize,
    pub stats: RunStats,
    pub timings: Vec<FrameTiming>,
    pub total_seconds: f64,
    pub warnings: Vec<String>,
    pub platform: String,
}

impl RunReport {
    pub fn new(
        config: &PipelineConfig,
        backbones: &Backbones,
        output: &RunOutput,
        total_seconds: f64,
    ) -> Self {
        RunReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            backbones: backbones
                .describe()
                .into_iter()
                .map(|(slot, info)| BackboneEntry {
                    slot: slot.to_string(),
                    implementation: info.name,
                })
                .collect(),
            frames: output.sequence.len(),
            resolution: output.sequence.spatial(),
            fps: output.sequence.fps(),
            anchor: output.anchor,
            start_step: output.start_step,
            stats: output.stats,
            timings: output.timings.clone(),
            total_seconds,
            warnings: output.warnings.clone(),
            platform: format!(
                "{}-{}. {PLATFORM_NOTE}",
                std::env::consts::ARCH,
                std::env::consts::OS
            ),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(REPORT_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
