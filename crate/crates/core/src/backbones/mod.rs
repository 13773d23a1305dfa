//! Interfaces for every heavy model the pipeline consumes, plus the
//! deterministic toy implementations used in tests and by default.
//!
//! A pretrained model plugs in by implementing one of these traits and
//! registering a constructor in a [`Registry`] under a configuration key.

mod conformance;
mod registry;
pub mod toys;

use ndarray::Array2;

use crate::attention::{AttentionWeights, FrameFeatures};
use crate::error::Result;
use crate::face::{FaceCrop, MotionMap, PixelBox};
use crate::fusion::FlowField;
use crate::grid::{Grid, ImageGrid, LatentGrid};
use crate::scheduler::GuidanceContext;

pub use conformance::{
    check_autoencoder, check_denoiser, check_edge_detector, check_face_generator,
    check_face_parser, check_flow_estimator, check_motion_estimator, ConformanceError,
};
pub use registry::{BackboneSelection, Options, Registry, Slot};

/// Identity of a backbone implementation, echoed into run reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneInfo {
    pub name: String,
    /// Whether the implementation may be called from several threads at once.
    pub concurrent: bool,
}

impl BackboneInfo {
    pub fn new(name: impl Into<String>, concurrent: bool) -> Self {
        BackboneInfo {
            name: name.into(),
            concurrent,
        }
    }
}

pub trait Backbone: Send + Sync {
    fn info(&self) -> BackboneInfo;
}

/// Replacement for a denoiser's self-attention sites.
///
/// The denoiser calls [`attend`](AttentionHook::attend) at each named site
/// with the current frame's token features and the site's projection
/// weights, and uses the returned `(sequence_length, d)` matrix in place of
/// its own self-attention output.
pub trait AttentionHook {
    fn attend(
        &mut self,
        site: &str,
        step: usize,
        features: &FrameFeatures,
        weights: &AttentionWeights,
    ) -> Result<Array2<f64>>;
}

/// Noise predictor `eps_theta(x_t, t, c_p, c_n)`.
pub trait Denoiser: Backbone {
    /// Names of the self-attention sites this model exposes to hooks.
    fn attention_sites(&self) -> Vec<String>;

    /// Spatial size the control map must have for frames of `image_size`.
    fn control_resolution(&self, image_size: (usize, usize)) -> (usize, usize) {
        image_size
    }

    fn predict_noise(
        &self,
        x_t: &LatentGrid,
        t: usize,
        guidance: &GuidanceContext,
        hook: Option<&mut dyn AttentionHook>,
    ) -> Result<LatentGrid>;
}

pub trait AutoEncoder: Backbone {
    fn encode(&self, image: &ImageGrid) -> Result<LatentGrid>;
    fn decode(&self, latent: &LatentGrid) -> Result<ImageGrid>;
    /// Spatial downsampling factor between image and latent.
    fn latent_scale(&self) -> usize;
}

/// Produces the single-channel edge map used as the control signal.
pub trait EdgeDetector: Backbone {
    fn detect(&self, image: &ImageGrid) -> Result<ImageGrid>;
}

pub trait TextEncoder: Backbone {
    fn embed(&self, prompt: &str) -> Result<Vec<f64>>;
}

/// Dense motion between two frames.
///
/// Returns `(forward, backward)`: `forward` lives on `dst`'s grid and points
/// into `src`; `backward` lives on `src`'s grid and points into `dst`.
pub trait FlowEstimator: Backbone {
    fn estimate(&self, src: &ImageGrid, dst: &ImageGrid) -> Result<(FlowField, FlowField)>;
}

pub trait FaceDetector: Backbone {
    /// At most one face box per frame.
    fn detect(&self, frame: &ImageGrid) -> Result<Option<PixelBox>>;
}

/// Soft face-region mask for a face crop, `(1, h, w)` with values in `[0, 1]`.
pub trait FaceParser: Backbone {
    fn parse(&self, face: &ImageGrid) -> Result<Grid>;
}

pub trait MotionEstimator: Backbone {
    fn estimate(&self, source: &FaceCrop, driving: &FaceCrop) -> Result<MotionMap>;
}

/// Renders the source identity under the driving motion, crop in, crop out.
pub trait FaceGenerator: Backbone {
    fn generate(&self, source: &FaceCrop, motion: &MotionMap) -> Result<ImageGrid>;
}

/// The full set of models one run uses.
pub struct Backbones {
    pub denoiser: Box<dyn Denoiser>,
    pub autoencoder: Box<dyn AutoEncoder>,
    pub edges: Box<dyn EdgeDetector>,
    pub text: Box<dyn TextEncoder>,
    pub flow: Box<dyn FlowEstimator>,
    pub face_detector: Box<dyn FaceDetector>,
    pub face_parser: Box<dyn FaceParser>,
    pub face_motion: Box<dyn MotionEstimator>,
    pub face_generator: Box<dyn FaceGenerator>,
}

impl Backbones {
    /// The default toy set: hash-mode denoiser, identity codec, Sobel edges,
    /// block-matching flow and the toy face models.
    pub fn toys(seed: u64) -> Self {
        Backbones {
            denoiser: Box::new(toys::HashDenoiser::new(seed)),
            autoencoder: Box::new(toys::IdentityCodec),
            edges: Box::new(toys::SobelEdges),
            text: Box::new(toys::HashTextEncoder::default()),
            flow: Box::new(toys::BlockMatchingFlow::default()),
            face_detector: Box::new(toys::StaticBoxDetector::default()),
            face_parser: Box::new(toys::EllipseParser::default()),
            face_motion: Box::new(toys::BlockMatchingMotion::default()),
            face_generator: Box::new(toys::WarpGenerator),
        }
    }

    /// `(slot, implementation)` pairs for reporting.
    pub fn describe(&self) -> Vec<(Slot, BackboneInfo)> {
        vec![
            (Slot::Denoiser, self.denoiser.info()),
            (Slot::AutoEncoder, self.autoencoder.info()),
            (Slot::Edge, self.edges.info()),
            (Slot::Text, self.text.info()),
            (Slot::Flow, self.flow.info()),
            (Slot::FaceDetector, self.face_detector.info()),
            (Slot::FaceParser, self.face_parser.info()),
            (Slot::FaceMotion, self.face_motion.info()),
            (Slot::FaceGenerator, self.face_generator.info()),
        ]
    }
}
