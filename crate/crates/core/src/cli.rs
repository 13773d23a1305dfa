//! Command-line front end: frame directory in, frame directory out.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use log::info;

use crate::backbones::{BackboneSelection, Registry, Slot};
use crate::error::{Error, Result};
use crate::pipeline::{
    anonymize_video, read_frame_dir, write_frame_dir, AnchorChoice, PipelineConfig, RunReport,
    StageWindow,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Replace the signer's appearance in a frame sequence while keeping
/// hand motion and facial expression.
#[derive(Debug, Parser)]
#[command(name = "signveil", version)]
pub struct Args {
    /// Directory of input PNG frames, read in filename order.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Directory for output frames, manifest.json and run_report.json.
    #[arg(long, value_name = "DIR")]
    pub output: PathBuf,
    /// Appearance prompt. Required here or in the config file.
    #[arg(long, value_name = "TEXT")]
    pub prompt: Option<String>,
    /// TOML configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub strength: Option<f64>,
    /// Anchor frame index, or `auto` for the middle frame.
    #[arg(long, value_name = "INT|auto")]
    pub anchor: Option<AnchorChoice>,
    /// Normalized step range for latent fusion, `LO:HI` or `off`.
    #[arg(long, value_name = "LO:HI")]
    pub stage1: Option<StageWindow>,
    /// Normalized step range for reference fusion and AdaIN, `LO:HI` or `off`.
    #[arg(long, value_name = "LO:HI")]
    pub stage2: Option<StageWindow>,
    /// Skip the face enhancement stage.
    #[arg(long)]
    pub no_face_enhance: bool,
    /// Backbone choice `SLOT=KIND[,key=value...]`, repeatable.
    #[arg(long = "backbone", value_name = "SLOT=KIND", value_parser = parse_backbone)]
    pub backbones: Vec<(Slot, BackboneSelection)>,
    #[arg(long, value_name = "INT")]
    pub max_frames: Option<usize>,
    /// Frame rate recorded when the input has no manifest.json.
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
}

fn parse_backbone(s: &str) -> std::result::Result<(Slot, BackboneSelection), String> {
    let (slot, rest) = s
        .split_once('=')
        .ok_or_else(|| format!("`{s}` is not SLOT=KIND"))?;
    let slot: Slot = slot.parse().map_err(|e: Error| e.to_string())?;
    let mut parts = rest.split(',');
    let kind = parts.next().unwrap_or_default().trim();
    if kind.is_empty() {
        return Err(format!("`{s}` names no backbone kind"));
    }
    let mut selection = BackboneSelection::new(kind);
    for opt in parts {
        let (k, v) = opt
            .split_once('=')
            .ok_or_else(|| format!("backbone option `{opt}` is not key=value"))?;
        selection
            .options
            .insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok((slot, selection))
}

impl Args {
    /// Built-in defaults, then the config file, then flags.
    pub fn effective_config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(p) = &self.prompt {
            c.prompt = p.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.strength {
            c.strength = v;
        }
        if let Some(v) = self.anchor {
            c.anchor = v;
        }
        if let Some(v) = self.stage1 {
            c.stage1_window = v;
        }
        if let Some(v) = self.stage2 {
            c.stage2_window = v;
        }
        if self.no_face_enhance {
            c.face_enhance = false;
        }
        if let Some(v) = self.max_frames {
            c.max_frames = v;
        }
        for (slot, sel) in &self.backbones {
            c.backbones.insert(slot.key().to_string(), sel.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

/// Runs one anonymization job. Returns the number of frames written.
pub fn execute(args: &Args, config: &PipelineConfig, registry: &Registry) -> Result<usize> {
    let clock = Instant::now();
    let input = read_frame_dir(&args.input, args.fps)?;
    info!("read {} frames from {}", input.len(), args.input.display());
    let backbones = registry.build(&config.backbones, config.seed)?;
    let output = anonymize_video(&input, config, &backbones)?;
    write_frame_dir(&args.output, &output.sequence)?;
    RunReport::new(config, &backbones, &output, clock.elapsed().as_secs_f64())
        .write(&args.output)?;
    Ok(output.sequence.len())
}

/// Parses `argv` and runs. Returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(argv, &Registry::with_toys())
}

/// [`run_cli`] with a caller-supplied backbone registry.
pub fn run_cli_with<I, T>(argv: I, registry: &Registry) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let config = match args.effective_config() {
        Ok(c) => c,
        Err(e @ Error::Config(_)) | Err(e @ Error::UnknownBackbone { .. })
            if args.config.is_none() =>
        {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    if config.prompt.trim().is_empty() {
        eprintln!("error: a prompt is required (--prompt or `prompt` in the config file)");
        return EXIT_USAGE;
    }
    match execute(&args, &config, registry) {
        Ok(n) => {
            info!("wrote {n} frames to {}", args.output.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
