//! The per-video loop: encode, generate the anchor, generate every other
//! frame with cross-frame attention and flow-guided fusion, decode, then
//! re-enhance the face.

mod config;
mod frames;
mod hook;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use log::{debug, info, warn};
use serde::Serialize;

use crate::backbones::Backbones;
use crate::error::{Error, Result};
use crate::face::{self, FaceMask};
use crate::fusion::{self, FlowField, OcclusionMask};
use crate::grid::{ImageGrid, LatentGrid};
use crate::scheduler::{self, GuidanceContext, NoiseSchedule};

pub use config::{AnchorChoice, PipelineConfig, StageWindow};
pub use frames::{
    decode_png, encode_png, read_frame_dir, write_frame_dir, FrameRecord, FrameSequence, Manifest,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use hook::{CrossFrameHook, FrameBank};
pub use report::{RunReport, REPORT_FILE};

/// The anchor index: explicit if configured, otherwise `floor(N / 2)`.
pub fn select_anchor(sequence: &FrameSequence, config: &PipelineConfig) -> Result<usize> {
    let n = sequence.len();
    match config.anchor {
        AnchorChoice::Auto => Ok(n / 2),
        AnchorChoice::Index(i) if i < n => Ok(i),
        AnchorChoice::Index(i) => Err(Error::Config(format!("anchor index {i} outside 0..{n}"))),
    }
}

/// Generation order: anchor, then every other frame ascending.
pub fn processing_order(n: usize, anchor: usize) -> Vec<usize> {
    std::iter::once(anchor)
        .chain((0..n).filter(|&i| i != anchor))
        .collect()
}

/// The frame whose output serves as "previous" for frame `i`.
pub fn previous_frame(i: usize, anchor: usize) -> usize {
    if i == 0 {
        anchor
    } else {
        i - 1
    }
}

/// How often each fusion operation ran.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub stage1_calls: usize,
    pub stage2_calls: usize,
    pub adain_calls: usize,
    pub cross_frame_attention_calls: usize,
    pub faces_composited: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameTiming {
    pub index: usize,
    pub generation_seconds: f64,
    pub face_seconds: f64,
}

/// Everything [`anonymize_video`] produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub sequence: FrameSequence,
    /// Diffusion output before face compositing.
    pub generated: Vec<ImageGrid>,
    /// Pasted face mask per frame, when face enhancement ran.
    pub face_masks: Vec<Option<FaceMask>>,
    pub anchor: usize,
    pub start_step: usize,
    pub warnings: Vec<String>,
    pub timings: Vec<FrameTiming>,
    pub stats: RunStats,
}

/// Flow into frame `i` from a reference frame, at image and latent resolution.
struct Guide {
    flow: FlowField,
    mask: OcclusionMask,
    latent_flow: FlowField,
    latent_mask: OcclusionMask,
}

impl Guide {
    fn new(
        reference: &ImageGrid,
        target: &ImageGrid,
        backbones: &Backbones,
        threshold: f64,
        latent_size: (usize, usize),
    ) -> Result<Self> {
        let (flow, mask) = fusion::estimate_flow_and_occlusion(
            reference,
            target,
            backbones.flow.as_ref(),
            threshold,
        )?;
        let mask = mask.binarized(0.5);
        let (h, w) = latent_size;
        Ok(Guide {
            latent_flow: flow.resized(h, w),
            latent_mask: mask.resized(h, w).binarized(0.5),
            flow,
            mask,
        })
    }
}

/// Per-frame seed: master seed XOR frame index.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

struct Run<'a> {
    config: &'a PipelineConfig,
    backbones: &'a Backbones,
    schedule: NoiseSchedule,
    stats: RunStats,
}

/// References available while generating a non-anchor frame.
struct Refs<'a> {
    anchor_x0: &'a BTreeMap<usize, LatentGrid>,
    anchor_out: &'a ImageGrid,
    prev_out: &'a ImageGrid,
    from_anchor: &'a Guide,
    from_prev: &'a Guide,
}

impl Run<'_> {
    /// One frame's reverse loop from `start` down to 1. Returns the final
    /// latent and, for the anchor, each step's clean estimate.
    fn denoise(
        &mut self,
        index: usize,
        x_start: LatentGrid,
        start: usize,
        guidance: &GuidanceContext,
        hook: &mut CrossFrameHook<'_>,
        refs: Option<&Refs<'_>>,
    ) -> Result<(LatentGrid, BTreeMap<usize, LatentGrid>)> {
        let t_max = self.schedule.num_steps();
        let bb = self.backbones;
        let mut x = x_start;
        let mut x0_trace = BTreeMap::new();
        for t in (1..=start).rev() {
            let eps = bb.denoiser.predict_noise(&x, t, guidance, Some(hook))?;
            if eps.dims() != x.dims() {
                return Err(Error::backbone(
                    "denoiser",
                    format!("predicted noise {:?} for latent {:?}", eps.dims(), x.dims()),
                ));
            }
            let mut x0 = scheduler::estimate_x0(&x, &eps, t, &self.schedule)?;
            let late = self.config.stage2_window.contains(t, t_max);
            if let Some(r) = refs {
                if self.config.stage1_window.contains(t, t_max) {
                    let anchor_x0 = r.anchor_x0.get(&t).ok_or_else(|| {
                        Error::InvalidArgument(format!("anchor has no estimate at step {t}"))
                    })?;
                    x0 = fusion::ofg_stage1(
                        &x0,
                        anchor_x0,
                        &r.from_anchor.latent_flow,
                        &r.from_anchor.latent_mask,
                    )?;
                    self.stats.stage1_calls += 1;
                }
                if late {
                    if let Some(anchor_x0) = r.anchor_x0.get(&t) {
                        x0 = fusion::adain(&x0, anchor_x0)?;
                        self.stats.adain_calls += 1;
                    }
                }
            } else {
                x0_trace.insert(t, x0.clone());
            }
            let mut next = scheduler::ddim_step_from_x0(&x0, &eps, t, &self.schedule)?;
            if let (Some(r), true) = (refs, late) {
                let current = bb.autoencoder.decode(&x0)?;
                let reference = fusion::build_reference_frame(
                    &current,
                    r.prev_out,
                    r.anchor_out,
                    &r.from_prev.flow,
                    &r.from_anchor.flow,
                    &r.from_prev.mask,
                    &r.from_anchor.mask,
                )?;
                next = fusion::ofg_stage2_update(
                    &next,
                    &reference,
                    t,
                    &self.schedule,
                    bb.autoencoder.as_ref(),
                    self.config.fidelity_steps,
                    frame_seed(self.config.seed, index),
                )?;
                self.stats.stage2_calls += 1;
            }
            next.check_finite("denoising step")?;
            x = next;
        }
        Ok((x, x0_trace))
    }
}

/// Anonymizes a video. The output keeps the input's frame layout and
/// motion but takes its appearance from the prompt.
///
/// Deterministic in `(sequence, config, backbones)`.
pub fn anonymize_video(
    sequence: &FrameSequence,
    config: &PipelineConfig,
    backbones: &Backbones,
) -> Result<RunOutput> {
    config.validate()?;
    let n = sequence.len();
    if n > config.max_frames {
        return Err(Error::Config(format!(
            "{n} frames exceed max_frames = {}",
            config.max_frames
        )));
    }
    let anchor = select_anchor(sequence, config)?;
    let schedule = scheduler::make_schedule(config.steps, config.schedule)?;
    let start = scheduler::start_step(config.strength, config.steps)?;
    let frames = sequence.frames();
    let image_size = sequence.spatial();
    let bb = backbones;
    info!(
        "anonymizing {n} frames, anchor {anchor}, start step {start}/{}",
        config.steps
    );

    let embedding = bb.text.embed(&config.prompt)?;
    let control_size = bb.denoiser.control_resolution(image_size);
    let mut guidance = Vec::with_capacity(n);
    let mut init = Vec::with_capacity(n);
    for (i, frame) in frames.iter().enumerate() {
        let prep = || -> Result<(GuidanceContext, LatentGrid)> {
            let edges = bb.edges.detect(frame)?;
            let control = edges.resize_bilinear(control_size.0, control_size.1);
            let g = GuidanceContext::new(
                config.prompt.clone(),
                embedding.clone(),
                Some(control),
                config.guidance_scale,
            )?;
            g.validate_control(control_size)?;
            let z = bb.autoencoder.encode(frame)?;
            let (x, _) =
                scheduler::sdedit_init(&z, config.strength, &schedule, frame_seed(config.seed, i))?;
            Ok((g, x))
        };
        let (g, x) = prep().map_err(|e| e.at_frame(i))?;
        guidance.push(g);
        init.push(Some(x));
    }
    let latent_size = init[0].as_ref().map(|x| x.spatial()).unwrap_or(image_size);

    let sites: Option<BTreeSet<String>> = config
        .attention_sites
        .as_ref()
        .map(|s| s.iter().cloned().collect());
    let mut run = Run {
        config,
        backbones,
        schedule,
        stats: RunStats::default(),
    };
    let mut generated: Vec<Option<ImageGrid>> = vec![None; n];
    let mut timings: Vec<FrameTiming> = (0..n)
        .map(|index| FrameTiming {
            index,
            generation_seconds: 0.0,
            face_seconds: 0.0,
        })
        .collect();

    // anchor: plain self-attention, features and clean estimates recorded
    let clock = Instant::now();
    let mut hook = CrossFrameHook::recording();
    let x_start = init[anchor].take().expect("anchor latent");
    let (x_final, anchor_x0) = run
        .denoise(anchor, x_start, start, &guidance[anchor], &mut hook, None)
        .map_err(|e| e.at_frame(anchor))?;
    let anchor_bank = hook.into_bank();
    generated[anchor] = Some(
        bb.autoencoder
            .decode(&x_final)
            .map_err(|e| e.at_frame(anchor))?,
    );
    timings[anchor].generation_seconds = clock.elapsed().as_secs_f64();

    let mut prev_bank: Option<FrameBank> = None;
    for &i in processing_order(n, anchor).iter().skip(1) {
        let clock = Instant::now();
        let p = previous_frame(i, anchor);
        debug!("frame {i}: previous {p}");
        let frame_result = (|| -> Result<(ImageGrid, FrameBank)> {
            let from_anchor = Guide::new(
                &frames[anchor],
                &frames[i],
                bb,
                config.occlusion_threshold,
                latent_size,
            )?;
            let from_prev = if p == anchor {
                None
            } else {
                Some(Guide::new(
                    &frames[p],
                    &frames[i],
                    bb,
                    config.occlusion_threshold,
                    latent_size,
                )?)
            };
            let prev_feats = if p == anchor {
                &anchor_bank
            } else {
                prev_bank.as_ref().unwrap_or(&anchor_bank)
            };
            let mut hook = if config.cross_frame_attention {
                CrossFrameHook::cross_frame(&anchor_bank, prev_feats, sites.as_ref())
            } else {
                CrossFrameHook::recording()
            };
            let refs = Refs {
                anchor_x0: &anchor_x0,
                anchor_out: generated[anchor].as_ref().expect("anchor generated"),
                prev_out: generated[p].as_ref().expect("previous generated"),
                from_prev: from_prev.as_ref().unwrap_or(&from_anchor),
                from_anchor: &from_anchor,
            };
            let x_start = init[i].take().expect("frame latent");
            let (x_final, _) =
                run.denoise(i, x_start, start, &guidance[i], &mut hook, Some(&refs))?;
            run.stats.cross_frame_attention_calls += hook.cross_calls();
            let out = bb.autoencoder.decode(&x_final)?;
            Ok((out, hook.into_bank()))
        })();
        let (out, bank) = frame_result.map_err(|e| e.at_frame(i))?;
        generated[i] = Some(out);
        prev_bank = Some(bank);
        timings[i].generation_seconds = clock.elapsed().as_secs_f64();
    }
    let generated: Vec<ImageGrid> = generated
        .into_iter()
        .map(|g| g.expect("every frame generated"))
        .collect();
    for (i, g) in generated.iter().enumerate() {
        if g.dims() != frames[i].dims() {
            return Err(Error::backbone(
                "autoencoder",
                format!("decoded {:?} for a {:?} frame", g.dims(), frames[i].dims()),
            )
            .at_frame(i));
        }
    }

    let mut warnings = Vec::new();
    let mut outputs = generated.clone();
    let mut face_masks = vec![None; n];
    if config.face_enhance {
        enhance_faces(
            sequence,
            &generated,
            anchor,
            config,
            bb,
            &mut outputs,
            &mut face_masks,
            &mut warnings,
            &mut timings,
            &mut run.stats,
        )?;
    }
    for w in &warnings {
        warn!("{w}");
    }
    let out_seq =
        FrameSequence::with_manifest(outputs, sequence.fps(), sequence.records().to_vec())?;
    Ok(RunOutput {
        sequence: out_seq,
        generated,
        face_masks,
        anchor,
        start_step: start,
        warnings,
        timings,
        stats: run.stats,
    })
}

#[allow(clippy::too_many_arguments)]
fn enhance_faces(
    sequence: &FrameSequence,
    generated: &[ImageGrid],
    anchor: usize,
    config: &PipelineConfig,
    bb: &Backbones,
    outputs: &mut [ImageGrid],
    face_masks: &mut [Option<FaceMask>],
    warnings: &mut Vec<String>,
    timings: &mut [FrameTiming],
    stats: &mut RunStats,
) -> Result<()> {
    let frames = sequence.frames();
    let (h, w) = sequence.spatial();
    let mut detections = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        detections.push(bb.face_detector.detect(f).map_err(|e| e.at_frame(i))?);
    }
    let Some(boxes) = face::resolve_face_boxes(&detections) else {
        warnings.push("no face detected in any frame; face enhancement skipped".into());
        return Ok(());
    };
    let square = |i: usize| boxes[i].square_with_margin(config.face.margin, h, w);
    let source = face::crop_face(&generated[anchor], square(anchor), &config.face)
        .map_err(|e| e.at_frame(anchor))?;
    for i in 0..frames.len() {
        let clock = Instant::now();
        let composite = (|| {
            let driving = face::crop_face(&frames[i], square(i), &config.face)?;
            let motion = face::estimate_face_motion(&source, &driving, bb.face_motion.as_ref())?;
            let enhanced = face::animate_face(&source, &motion, bb.face_generator.as_ref())?;
            face::composite_face(
                &generated[i],
                &enhanced,
                bb.face_parser.as_ref(),
                config.face.feather,
            )
        })()
        .map_err(|e| e.at_frame(i))?;
        match composite.warning {
            Some(msg) => warnings.push(format!("frame {i}: {msg}")),
            None => {
                stats.faces_composited += 1;
                face_masks[i] = Some(composite.mask);
            }
        }
        outputs[i] = composite.image;
        timings[i].face_seconds = clock.elapsed().as_secs_f64();
    }
    Ok(())
}
