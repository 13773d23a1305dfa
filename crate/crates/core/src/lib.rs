//! Sign-language video anonymization with a training-free diffusion
//! pipeline.
//!
//! Each frame is partially noised and regenerated under a text prompt and
//! an edge-map control signal. Temporal consistency comes from cross-frame
//! attention against an anchor frame and the previous output, plus
//! optical-flow-guided fusion of latents. A face-reenactment stage then
//! restores the original facial expression on the generated identity.
//!
//! Every pretrained model sits behind a trait in [`backbones`]; the crate
//! ships deterministic toy implementations so the whole pipeline runs and
//! is testable without model weights.
//!
//! ```
//! use signveil::backbones::Backbones;
//! use signveil::pipeline::{anonymize_video, PipelineConfig};
//! use signveil::synthetic;
//!
//! let frames = synthetic::static_scene(3, (16, 16), 0).unwrap();
//! let config = PipelineConfig {
//!     prompt: "a cartoon signer".into(),
//!     steps: 6,
//!     face_enhance: false,
//!     ..Default::default()
//! };
//! let out = anonymize_video(&frames, &config, &Backbones::toys(config.seed)).unwrap();
//! assert_eq!(out.sequence.len(), 3);
//! ```

pub mod attention;
pub mod backbones;
pub mod cli;
pub mod error;
pub mod face;
pub mod fusion;
pub mod grid;
pub mod pipeline;
pub mod scheduler;
pub mod seeding;
pub mod synthetic;

pub use error::{Error, Result};
pub use grid::{Grid, ImageGrid, LatentGrid, Space};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/face.md")]
    mod face {}
    #[doc = include_str!("../../../book/src/backbones.md")]
    mod backbones {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
