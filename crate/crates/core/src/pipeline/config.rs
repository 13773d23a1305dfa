use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbones::{BackboneSelection, Slot};
use crate::error::{Error, Result};
use crate::face::FaceConfig;
use crate::scheduler::ScheduleKind;

/// Range of normalized step positions `t / T` where a fusion stage runs,
/// or `Off`. Written `LO:HI` or `off`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StageWindow {
    Off,
    Range { lo: f64, hi: f64 },
}

impl StageWindow {
    pub fn range(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!(
                "stage window {lo}:{hi} must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        Ok(StageWindow::Range { lo, hi })
    }

    /// Whether step `t` of a `T`-step schedule lies inside the window.
    pub fn contains(&self, t: usize, num_steps: usize) -> bool {
        match *self {
            StageWindow::Off => false,
            StageWindow::Range { lo, hi } => {
                let r = t as f64 / num_steps as f64;
                lo <= r && r <= hi
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            StageWindow::Off => Ok(()),
            StageWindow::Range { lo, hi } => StageWindow::range(lo, hi).map(|_| ()),
        }
    }
}

impl FromStr for StageWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("off") {
            return Ok(StageWindow::Off);
        }
        let bad = || Error::Config(format!("stage window `{s}` is not LO:HI or off"));
        let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        StageWindow::range(lo, hi)
    }
}

impl fmt::Display for StageWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageWindow::Off => f.write_str("off"),
            StageWindow::Range { lo, hi } => write!(f, "{lo}:{hi}"),
        }
    }
}

impl TryFrom<String> for StageWindow {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StageWindow> for String {
    fn from(w: StageWindow) -> String {
        w.to_string()
    }
}

/// Anchor frame choice: the middle frame, or an explicit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AnchorChoice {
    #[default]
    Auto,
    Index(usize),
}

impl FromStr for AnchorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(AnchorChoice::Auto);
        }
        s.parse()
            .map(AnchorChoice::Index)
            .map_err(|_| Error::Config(format!("anchor `{s}` is neither auto nor an index")))
    }
}

impl fmt::Display for AnchorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnchorChoice::Auto => f.write_str("auto"),
            AnchorChoice::Index(i) => write!(f, "{i}"),
        }
    }
}

impl TryFrom<String> for AnchorChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AnchorChoice> for String {
    fn from(a: AnchorChoice) -> String {
        a.to_string()
    }
}

/// Everything one run needs besides the frames and the models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub prompt: String,
    /// SDEdit strength: the loop starts at step `round(strength * T)`.
    pub strength: f64,
    pub steps: usize,
    pub seed: u64,
    pub anchor: AnchorChoice,
    /// Where latent fusion on `x0` estimates runs.
    pub stage1_window: StageWindow,
    /// Where reference-frame fusion and AdaIN run.
    pub stage2_window: StageWindow,
    /// Replace self-attention with anchor + previous-frame attention.
    pub cross_frame_attention: bool,
    /// Restricts cross-frame attention to these sites; all sites if unset.
    pub attention_sites: Option<Vec<String>>,
    pub face_enhance: bool,
    pub max_frames: usize,
    pub schedule: ScheduleKind,
    pub guidance_scale: f64,
    pub fidelity_steps: usize,
    /// Forward-backward consistency threshold in image pixels.
    pub occlusion_threshold: f64,
    pub face: FaceConfig,
    /// Slot key to implementation; unlisted slots use the toy default.
    pub backbones: BTreeMap<String, BackboneSelection>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            prompt: String::new(),
            strength: 0.75,
            steps: 20,
            seed: 0,
            anchor: AnchorChoice::Auto,
            stage1_window: StageWindow::Range { lo: 0.5, hi: 1.0 },
            stage2_window: StageWindow::Range { lo: 0.0, hi: 0.3 },
            cross_frame_attention: true,
            attention_sites: None,
            face_enhance: true,
            max_frames: 180,
            schedule: ScheduleKind::default(),
            guidance_scale: 7.5,
            fidelity_steps: 2,
            occlusion_threshold: 1.0,
            face: FaceConfig::default(),
            backbones: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The same config with fusion switched off, for ablations.
    pub fn without_fusion(&self) -> Self {
        PipelineConfig {
            stage1_window: StageWindow::Off,
            stage2_window: StageWindow::Off,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength > 0.0 && self.strength <= 1.0) {
            return Err(Error::Config(format!(
                "strength {} outside (0, 1]",
                self.strength
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.max_frames == 0 {
            return Err(Error::Config("max_frames must be at least 1".into()));
        }
        self.stage1_window.validate()?;
        self.stage2_window.validate()?;
        if !self.guidance_scale.is_finite() {
            return Err(Error::Config("guidance_scale must be finite".into()));
        }
        if !(self.occlusion_threshold.is_finite() && self.occlusion_threshold > 0.0) {
            return Err(Error::Config("occlusion_threshold must be positive".into()));
        }
        let f = &self.face;
        if f.crop_size == 0 || !(f.margin.is_finite() && f.margin >= 1.0) {
            return Err(Error::Config(
                "face.crop_size must be positive and face.margin at least 1".into(),
            ));
        }
        for key in self.backbones.keys() {
            key.parse::<Slot>()?;
        }
        Ok(())
    }
}
