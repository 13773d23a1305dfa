//! Deterministic stand-ins for every pretrained model.
//!
//! None of these carry learned weights. They exist so the diffusion
//! algebra and the fusion stages can be exercised end to end with exactly
//! checkable behavior.

use ndarray::Array2;
use rand::Rng;

use super::registry::{option, Options};
use super::{
    AttentionHook, AutoEncoder, Backbone, BackboneInfo, Denoiser, EdgeDetector, FaceDetector,
    FaceGenerator, FaceParser, FlowEstimator, MotionEstimator, TextEncoder,
};
use crate::attention::{self, AttentionWeights, FrameFeatures};
use crate::error::{Error, Result};
use crate::face::{self, FaceCrop, MotionMap, PixelBox};
use crate::fusion::{self, FlowField};
use crate::grid::{Grid, ImageGrid, LatentGrid, Space};
use crate::scheduler::{GuidanceContext, NoiseSchedule};
use crate::seeding;

// ---------------------------------------------------------------------------
// Denoisers
// ---------------------------------------------------------------------------

/// One self-attention site of the hash denoiser: tokens are the latent
/// resampled to a `side x side` grid, one token per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySite {
    pub name: String,
    pub side: usize,
}

/// Pseudo-random noise predictor keyed on `(seed, t, guidance fingerprint)`.
///
/// On top of the hashed noise, each attention site adds a small residual
/// computed by (possibly hooked) attention over the latent's tokens, so
/// cross-frame attention has an observable effect.
#[derive(Debug, Clone)]
pub struct HashDenoiser {
    pub seed: u64,
    pub noise_scale: f64,
    pub attention_coupling: f64,
    pub head_dim: usize,
    pub sites: Vec<ToySite>,
}

impl HashDenoiser {
    pub fn new(seed: u64) -> Self {
        HashDenoiser {
            seed,
            noise_scale: 1.0,
            attention_coupling: 0.1,
            head_dim: 8,
            sites: vec![
                ToySite {
                    name: "mid".into(),
                    side: 8,
                },
                ToySite {
                    name: "up".into(),
                    side: 16,
                },
            ],
        }
    }

    pub fn from_options(options: &Options, seed: u64) -> Result<Self> {
        let mut d = HashDenoiser::new(option(options, "seed", seed)?);
        d.noise_scale = option(options, "noise_scale", d.noise_scale)?;
        d.attention_coupling = option(options, "attention_coupling", d.attention_coupling)?;
        d.head_dim = option(options, "head_dim", d.head_dim)?;
        if d.head_dim == 0 {
            return Err(Error::Config("head_dim must be positive".into()));
        }
        Ok(d)
    }

    /// Projection weights for `site`, plus the output projection back to
    /// `channels`. Fixed per `(seed, site, channels)`.
    pub fn site_weights(&self, site: &str, channels: usize) -> (AttentionWeights, Array2<f64>) {
        let mut rng = seeding::rng(
            "hash-denoiser-weights",
            &[
                self.seed,
                seeding::stable_hash(site.as_bytes()),
                channels as u64,
            ],
        );
        let d = self.head_dim;
        let scale = 1.0 / (channels as f64).sqrt();
        let mut mat = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
        };
        let w_q = mat(channels, d);
        let w_k = mat(channels, d);
        let w_v = mat(channels, d);
        let out = mat(d, channels);
        (
            AttentionWeights::new(w_q, w_k, w_v).expect("matching shapes"),
            out,
        )
    }
}

/// Latent to `(side*side, channels)` token matrix via bilinear resampling.
pub fn grid_to_tokens(grid: &Grid, side_h: usize, side_w: usize) -> Array2<f64> {
    let small = grid.resize_bilinear(side_h, side_w);
    let c = grid.channels();
    Array2::from_shape_fn((side_h * side_w, c), |(i, ch)| {
        small.get(ch, i / side_w, i % side_w)
    })
}

fn tokens_to_grid(tokens: &Array2<f64>, side_h: usize, side_w: usize) -> Grid {
    Grid::from_fn(
        Space::Latent,
        (tokens.ncols(), side_h, side_w),
        |(c, y, x)| tokens[[y * side_w + x, c]],
    )
}

impl Backbone for HashDenoiser {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("hash", true)
    }
}

impl Denoiser for HashDenoiser {
    fn attention_sites(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.name.clone()).collect()
    }

    fn predict_noise(
        &self,
        x_t: &LatentGrid,
        t: usize,
        guidance: &GuidanceContext,
        mut hook: Option<&mut dyn AttentionHook>,
    ) -> Result<LatentGrid> {
        let mut rng = seeding::rng(
            "hash-denoiser",
            &[self.seed, t as u64, guidance.fingerprint()],
        );
        let noise = seeding::gaussian_grid(&mut rng, Space::Latent, x_t.dims());
        let mut eps = noise.map(|v| v * self.noise_scale);
        if self.attention_coupling == 0.0 {
            return Ok(eps);
        }
        let (h, w) = x_t.spatial();
        for site in &self.sites {
            let (sh, sw) = (site.side.min(h), site.side.min(w));
            let tokens = grid_to_tokens(x_t, sh, sw);
            let features = FrameFeatures::new(tokens.clone(), 0)?;
            let (weights, out_proj) = self.site_weights(&site.name, x_t.channels());
            let attended = match hook.as_deref_mut() {
                Some(h) => h.attend(&site.name, t, &features, &weights)?,
                None => attention::self_attention(&features, &weights)?,
            };
            if attended.dim() != (tokens.nrows(), weights.head_dim()) {
                return Err(Error::backbone(
                    "denoiser",
                    format!(
                        "attention hook at `{}` returned {:?}, expected {:?}",
                        site.name,
                        attended.dim(),
                        (tokens.nrows(), weights.head_dim())
                    ),
                ));
            }
            let residual = attended.dot(&out_proj) - &tokens;
            let up = tokens_to_grid(&residual, sh, sw).resize_bilinear(h, w);
            eps = eps.lincomb(1.0, &up, self.attention_coupling, "hash denoiser")?;
        }
        Ok(eps)
    }
}

/// Where an [`OracleDenoiser`] gets its answer.
#[derive(Debug, Clone)]
pub enum OracleSource {
    /// Returns the noise that makes `estimate_x0` land exactly on this latent.
    CleanTarget(LatentGrid),
    /// Like `CleanTarget` with a constant-valued latent of any shape.
    ConstantTarget(f64),
    /// Returns this noise at every step.
    FixedNoise(LatentGrid),
}

/// Noise predictor that knows the answer, for checking the sampler.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub schedule: NoiseSchedule,
    pub source: OracleSource,
}

impl OracleDenoiser {
    pub fn new(schedule: NoiseSchedule, source: OracleSource) -> Self {
        OracleDenoiser { schedule, source }
    }

    pub fn from_options(options: &Options) -> Result<Self> {
        let steps: usize = option(options, "steps", 20)?;
        let schedule = crate::scheduler::make_schedule(steps, Default::default())?;
        let target: f64 = option(options, "target", 0.5)?;
        Ok(OracleDenoiser::new(
            schedule,
            OracleSource::ConstantTarget(target),
        ))
    }
}

impl Backbone for OracleDenoiser {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("oracle", true)
    }
}

impl Denoiser for OracleDenoiser {
    fn attention_sites(&self) -> Vec<String> {
        Vec::new()
    }

    fn predict_noise(
        &self,
        x_t: &LatentGrid,
        t: usize,
        _guidance: &GuidanceContext,
        _hook: Option<&mut dyn AttentionHook>,
    ) -> Result<LatentGrid> {
        let target = match &self.source {
            OracleSource::FixedNoise(eps) => {
                eps.ensure_same_shape(x_t, "oracle denoiser")?;
                return Ok(eps.clone());
            }
            OracleSource::CleanTarget(x0) => x0.clone(),
            OracleSource::ConstantTarget(v) => {
                let (c, h, w) = x_t.dims();
                Grid::filled(Space::Latent, c, h, w, *v)
            }
        };
        target.ensure_same_shape(x_t, "oracle denoiser")?;
        let ab = self.schedule.alpha_bar(t)?;
        if ab >= 1.0 {
            return Ok(x_t.map(|_| 0.0));
        }
        x_t.lincomb(
            1.0 / (1.0 - ab).sqrt(),
            &target,
            -ab.sqrt() / (1.0 - ab).sqrt(),
            "oracle denoiser",
        )
    }
}

// ---------------------------------------------------------------------------
// Autoencoders
// ---------------------------------------------------------------------------

/// Lossless codec: the latent is the image.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl Backbone for IdentityCodec {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("identity", true)
    }
}

impl AutoEncoder for IdentityCodec {
    fn encode(&self, image: &ImageGrid) -> Result<LatentGrid> {
        Ok(image.clone().with_space(Space::Latent))
    }

    fn decode(&self, latent: &LatentGrid) -> Result<ImageGrid> {
        Ok(latent.clone().with_space(Space::Image))
    }

    fn latent_scale(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Upsample {
    Nearest,
    #[default]
    Bilinear,
}

/// Lossy codec: 2x average-pool down, 2x upsample back.
///
/// With nearest upsampling `decode(encode(x))` is an orthogonal projection
/// and already optimal, so bilinear is the default.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossyCodec {
    pub upsample: Upsample,
}

impl LossyCodec {
    pub fn from_options(options: &Options) -> Result<Self> {
        let upsample = match options.get("upsample").map(String::as_str) {
            None | Some("bilinear") => Upsample::Bilinear,
            Some("nearest") => Upsample::Nearest,
            Some(other) => return Err(Error::Config(format!("unknown upsample mode `{other}`"))),
        };
        Ok(LossyCodec { upsample })
    }
}

impl Backbone for LossyCodec {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("lossy", true)
    }
}

impl AutoEncoder for LossyCodec {
    fn encode(&self, image: &ImageGrid) -> Result<LatentGrid> {
        let (h, w) = image.spatial();
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::backbone(
                "autoencoder",
                format!("lossy codec needs even, nonzero sides, got {h}x{w}"),
            ));
        }
        Ok(image.avg_pool(2).with_space(Space::Latent))
    }

    fn decode(&self, latent: &LatentGrid) -> Result<ImageGrid> {
        let (h, w) = latent.spatial();
        let up = match self.upsample {
            Upsample::Nearest => latent.upsample_nearest(2),
            Upsample::Bilinear => latent.resize_bilinear(2 * h, 2 * w),
        };
        Ok(up.with_space(Space::Image))
    }

    fn latent_scale(&self) -> usize {
        2
    }
}

// ---------------------------------------------------------------------------
// Edges and text
// ---------------------------------------------------------------------------

/// Sobel gradient magnitude of the channel mean, scaled so the strongest
/// response is 1. Borders replicate.
#[derive(Debug, Clone, Copy, Default)]
pub struct SobelEdges;

impl Backbone for SobelEdges {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("sobel", true)
    }
}

impl EdgeDetector for SobelEdges {
    fn detect(&self, image: &ImageGrid) -> Result<ImageGrid> {
        let lum = image.luminance();
        let (h, w) = lum.spatial();
        let px = |y: isize, x: isize| {
            let yy = y.clamp(0, h as isize - 1) as usize;
            let xx = x.clamp(0, w as isize - 1) as usize;
            lum.get(0, yy, xx)
        };
        let mut mag = Grid::from_fn(Space::Image, (1, h, w), |(_, y, x)| {
            let (y, x) = (y as isize, x as isize);
            let gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1))
                - (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
            let gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1))
                - (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
            gx.hypot(gy)
        });
        let max = mag.data().iter().fold(0.0f64, |m, &v| m.max(v));
        if max > 0.0 {
            mag = mag.map(|v| (v / max).clamp(0.0, 1.0));
        }
        Ok(mag)
    }
}

/// Prompt embedding drawn from a stream seeded by the prompt text.
#[derive(Debug, Clone, Copy)]
pub struct HashTextEncoder {
    pub dim: usize,
}

impl Default for HashTextEncoder {
    fn default() -> Self {
        HashTextEncoder { dim: 16 }
    }
}

impl HashTextEncoder {
    pub fn from_options(options: &Options) -> Result<Self> {
        Ok(HashTextEncoder {
            dim: option(options, "dim", 16)?,
        })
    }
}

impl Backbone for HashTextEncoder {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("hash", true)
    }
}

impl TextEncoder for HashTextEncoder {
    fn embed(&self, prompt: &str) -> Result<Vec<f64>> {
        let mut rng = seeding::rng("hash-text", &[seeding::stable_hash(prompt.as_bytes())]);
        Ok((0..self.dim)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Flow
// ---------------------------------------------------------------------------

/// Integer block matching: each `block x block` tile of the target is
/// matched against the reference within `±radius` pixels by mean absolute
/// difference over in-frame pixels.
///
/// Ties go to the smallest displacement, so untextured regions get zero
/// flow.
#[derive(Debug, Clone, Copy)]
pub struct BlockMatchingFlow {
    pub block: usize,
    pub radius: usize,
}

impl Default for BlockMatchingFlow {
    fn default() -> Self {
        BlockMatchingFlow {
            block: 8,
            radius: 2,
        }
    }
}

impl BlockMatchingFlow {
    pub fn from_options(options: &Options) -> Result<Self> {
        let b = BlockMatchingFlow {
            block: option(options, "block", 8)?,
            radius: option(options, "radius", 2)?,
        };
        if b.block == 0 {
            return Err(Error::Config("block size must be positive".into()));
        }
        Ok(b)
    }

    /// Flow on `target`'s grid pointing into `reference`.
    pub fn match_blocks(&self, reference: &ImageGrid, target: &ImageGrid) -> Result<FlowField> {
        reference.ensure_same_shape(target, "block matching")?;
        let (c, h, w) = target.dims();
        let r = self.radius as isize;
        let mut candidates: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .collect();
        // stable order: smallest magnitude first, then row-major
        candidates.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dx.abs().max(dy.abs()), dy, dx));
        let mut disp = ndarray::Array3::<f64>::zeros((2, h, w));
        for by in (0..h).step_by(self.block) {
            for bx in (0..w).step_by(self.block) {
                let (ey, ex) = ((by + self.block).min(h), (bx + self.block).min(w));
                let mut best = (0isize, 0isize);
                if !block_is_flat(target, by, ey, bx, ex) {
                    let mut best_cost = f64::INFINITY;
                    for &(dx, dy) in &candidates {
                        let mut sum = 0.0;
                        let mut n = 0usize;
                        for y in by..ey {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for x in bx..ex {
                                let sx = x as isize + dx;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                for ch in 0..c {
                                    sum += (target.get(ch, y, x)
                                        - reference.get(ch, sy as usize, sx as usize))
                                    .abs();
                                }
                                n += 1;
                            }
                        }
                        if n == 0 {
                            continue;
                        }
                        let cost = sum / n as f64;
                        if cost < best_cost - 1e-12 {
                            best_cost = cost;
                            best = (dx, dy);
                        }
                    }
                }
                for y in by..ey {
                    for x in bx..ex {
                        disp[[0, y, x]] = best.0 as f64;
                        disp[[1, y, x]] = best.1 as f64;
                    }
                }
            }
        }
        FlowField::new(disp, 0, 0)
    }
}

fn block_is_flat(g: &ImageGrid, y0: usize, y1: usize, x0: usize, x1: usize) -> bool {
    (0..g.channels()).all(|c| {
        let first = g.get(c, y0, x0);
        (y0..y1).all(|y| (x0..x1).all(|x| g.get(c, y, x) == first))
    })
}

impl Backbone for BlockMatchingFlow {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("block-matching", true)
    }
}

impl FlowEstimator for BlockMatchingFlow {
    fn estimate(&self, src: &ImageGrid, dst: &ImageGrid) -> Result<(FlowField, FlowField)> {
        let forward = self.match_blocks(src, dst)?;
        let backward = self.match_blocks(dst, src)?;
        Ok((forward, backward))
    }
}

// ---------------------------------------------------------------------------
// Face models
// ---------------------------------------------------------------------------

/// Always reports the same face box. Without an explicit box it uses a
/// square of a quarter of the short side, centered horizontally at 30% of
/// the height.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticBoxDetector {
    pub bbox: Option<PixelBox>,
}

impl StaticBoxDetector {
    pub fn from_options(options: &Options) -> Result<Self> {
        let keys = ["x", "y", "w", "h"];
        let present = keys.iter().filter(|k| options.contains_key(**k)).count();
        let bbox = match present {
            0 => None,
            4 => Some(PixelBox::new(
                option(options, "x", 0)?,
                option(options, "y", 0)?,
                option(options, "w", 1)?,
                option(options, "h", 1)?,
            )),
            _ => return Err(Error::Config("static-box needs all of x, y, w, h".into())),
        };
        Ok(StaticBoxDetector { bbox })
    }

    pub fn default_box(height: usize, width: usize) -> PixelBox {
        let side = (height.min(width) / 4).max(1);
        let x = (width / 2).saturating_sub(side / 2);
        let y = ((height as f64 * 0.3) as usize).saturating_sub(side / 2);
        PixelBox::new(x, y, side, side)
    }
}

impl Backbone for StaticBoxDetector {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("static-box", true)
    }
}

impl FaceDetector for StaticBoxDetector {
    fn detect(&self, frame: &ImageGrid) -> Result<Option<PixelBox>> {
        let (h, w) = frame.spatial();
        let b = self
            .bbox
            .unwrap_or_else(|| StaticBoxDetector::default_box(h, w));
        Ok(b.fits_in(h, w).then_some(b))
    }
}

/// Soft elliptical face mask: 1 inside `(1 - softness)` of the ellipse
/// radius, falling linearly to 0 at the ellipse. Semi-axes are 0.4 of the
/// width and 0.5 of the height.
#[derive(Debug, Clone, Copy)]
pub struct EllipseParser {
    pub softness: f64,
}

impl Default for EllipseParser {
    fn default() -> Self {
        EllipseParser { softness: 0.15 }
    }
}

impl EllipseParser {
    pub fn from_options(options: &Options) -> Result<Self> {
        let softness: f64 = option(options, "softness", 0.15)?;
        if !(0.0..1.0).contains(&softness) {
            return Err(Error::Config("softness must lie in [0, 1)".into()));
        }
        Ok(EllipseParser { softness })
    }
}

impl Backbone for EllipseParser {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("ellipse", true)
    }
}

impl FaceParser for EllipseParser {
    fn parse(&self, face: &ImageGrid) -> Result<Grid> {
        let (h, w) = face.spatial();
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        let (ry, rx) = (0.5 * h as f64, 0.4 * w as f64);
        let inner = 1.0 - self.softness;
        Ok(Grid::from_fn(Space::Image, (1, h, w), |(_, y, x)| {
            let dy = (y as f64 + 0.5 - cy) / ry;
            let dx = (x as f64 + 0.5 - cx) / rx;
            let r = (dx * dx + dy * dy).sqrt();
            if r <= inner {
                1.0
            } else if r >= 1.0 || self.softness == 0.0 {
                0.0
            } else {
                (1.0 - r) / self.softness
            }
        }))
    }
}

/// Block-matching dense motion between the face crops, with a
/// forward-backward occlusion map at `levels` halving resolutions.
#[derive(Debug, Clone, Copy)]
pub struct BlockMatchingMotion {
    pub flow: BlockMatchingFlow,
    pub levels: usize,
    pub threshold: f64,
}

impl Default for BlockMatchingMotion {
    fn default() -> Self {
        BlockMatchingMotion {
            flow: BlockMatchingFlow::default(),
            levels: 1,
            threshold: 1.0,
        }
    }
}

impl BlockMatchingMotion {
    pub fn from_options(options: &Options) -> Result<Self> {
        let levels: usize = option(options, "levels", 1)?;
        if levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        Ok(BlockMatchingMotion {
            flow: BlockMatchingFlow::from_options(options)?,
            levels,
            threshold: option(options, "threshold", 1.0)?,
        })
    }
}

impl Backbone for BlockMatchingMotion {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("block-matching", true)
    }
}

impl MotionEstimator for BlockMatchingMotion {
    fn estimate(&self, source: &FaceCrop, driving: &FaceCrop) -> Result<MotionMap> {
        let (dense, occ) = fusion::estimate_flow_and_occlusion(
            &source.image,
            &driving.image,
            &self.flow,
            self.threshold,
        )?;
        Ok(MotionMap {
            dense_motion: dense,
            occlusion_pyramid: face::occlusion_pyramid(&occ, self.levels)?,
            driving_bbox: driving.bbox,
            driving_transform: driving.align_transform,
        })
    }
}

/// Warps the source crop by the dense motion; occluded pixels keep the
/// source.
#[derive(Debug, Clone, Copy, Default)]
pub struct WarpGenerator;

impl Backbone for WarpGenerator {
    fn info(&self) -> BackboneInfo {
        BackboneInfo::new("warp", true)
    }
}

impl FaceGenerator for WarpGenerator {
    fn generate(&self, source: &FaceCrop, motion: &MotionMap) -> Result<ImageGrid> {
        let warped = fusion::warp(&source.image, &motion.dense_motion)?;
        source
            .image
            .masked_blend(motion.finest_occlusion().grid(), &warped, "warp generator")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{ddim_step, make_schedule, ScheduleKind};

    fn guidance(prompt: &str) -> GuidanceContext {
        GuidanceContext::new(prompt, vec![], None, 7.5).unwrap()
    }

    fn textured(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut rng = seeding::rng("toy-test", &[seed]);
        Grid::from_fn(Space::Image, (3, h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn oracle_sweep_recovers_target() {
        let schedule = make_schedule(20, ScheduleKind::default()).unwrap();
        let x0 = textured(4, 4, 0).with_space(Space::Latent);
        let oracle = OracleDenoiser::new(schedule.clone(), OracleSource::CleanTarget(x0.clone()));
        let mut x = seeding::gaussian_grid(&mut seeding::rng("o", &[1]), Space::Latent, x0.dims());
        for t in (1..=20).rev() {
            let eps = oracle.predict_noise(&x, t, &guidance("p"), None).unwrap();
            x = ddim_step(&x, &eps, t, &schedule).unwrap();
        }
        assert!(x.max_abs_diff(&x0).unwrap() < 1e-6);
    }

    #[test]
    fn hash_mode_is_deterministic_and_prompt_sensitive() {
        let d = HashDenoiser::new(3);
        let x = textured(8, 8, 1).with_space(Space::Latent);
        let a = d.predict_noise(&x, 5, &guidance("a"), None).unwrap();
        let b = d.predict_noise(&x, 5, &guidance("a"), None).unwrap();
        let c = d.predict_noise(&x, 5, &guidance("b"), None).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs_diff(&c).unwrap() > 0.1);
        assert_eq!(a.dims(), x.dims());
    }

    #[test]
    fn lossy_codec_shapes() {
        let c = LossyCodec::default();
        let img = textured(8, 6, 2);
        let z = c.encode(&img).unwrap();
        assert_eq!(z.dims(), (3, 4, 3));
        assert_eq!(c.decode(&z).unwrap().dims(), img.dims());
        assert!(c.encode(&textured(7, 6, 2)).is_err());
    }

    #[test]
    fn sobel_constant_and_step() {
        let flat = Grid::filled(Space::Image, 3, 8, 8, 0.4);
        assert!(SobelEdges
            .detect(&flat)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let step = Grid::from_fn(
            Space::Image,
            (1, 8, 8),
            |(_, _, x)| if x >= 4 { 1.0 } else { 0.0 },
        );
        let e = SobelEdges.detect(&step).unwrap();
        // analytic response: |gx| = 4 on the two columns straddling the step, 0 elsewhere
        for y in 0..8 {
            for x in 0..8 {
                let expected = if x == 3 || x == 4 { 1.0 } else { 0.0 };
                assert_eq!(e.get(0, y, x), expected);
            }
        }
    }

    #[test]
    fn one_pixel_translation_is_recovered() {
        let src = textured(16, 16, 3);
        let fresh = textured(16, 16, 4);
        let dst = Grid::from_fn(Space::Image, (3, 16, 16), |(c, y, x)| {
            if x + 1 < 16 {
                src.get(c, y, x + 1)
            } else {
                fresh.get(c, y, x)
            }
        });
        let (flow, mask) =
            fusion::estimate_flow_and_occlusion(&src, &dst, &BlockMatchingFlow::default(), 1.0)
                .unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(flow.at(y, x), (1.0, 0.0));
                assert_eq!(mask.at(y, x), if x == 15 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn identical_and_uniform_frames_have_zero_flow() {
        let f = textured(16, 16, 5);
        let (flow, mask) =
            fusion::estimate_flow_and_occlusion(&f, &f, &BlockMatchingFlow::default(), 1.0)
                .unwrap();
        assert!(flow.displacement().iter().all(|&v| v == 0.0));
        assert_eq!(mask.count_occluded(), 0);

        let u1 = Grid::filled(Space::Image, 3, 16, 16, 0.2);
        let u2 = Grid::filled(Space::Image, 3, 16, 16, 0.7);
        let (fwd, bwd) = BlockMatchingFlow::default().estimate(&u1, &u2).unwrap();
        assert!(fwd.displacement().iter().all(|&v| v == 0.0));
        assert!(bwd.displacement().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ellipse_mask_in_unit_range() {
        let m = EllipseParser::default()
            .parse(&textured(32, 32, 6))
            .unwrap();
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(m.get(0, 16, 16), 1.0);
        assert_eq!(m.get(0, 0, 0), 0.0);
    }

    #[test]
    fn static_box_default_fits() {
        let f = textured(64, 48, 7);
        let b = StaticBoxDetector::default().detect(&f).unwrap().unwrap();
        assert!(b.fits_in(64, 48));
        let off = StaticBoxDetector {
            bbox: Some(PixelBox::new(40, 40, 30, 30)),
        };
        assert!(off.detect(&f).unwrap().is_none());
    }
}
