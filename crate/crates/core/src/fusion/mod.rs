//! Optical-flow-guided fusion across frames.
//!
//! Stage 1 pulls the anchor's clean-latent estimate into the current
//! frame early in denoising; stage 2 blends a renoised reference image,
//! assembled from the anchor and previous generated frames, into the
//! sampled latent late in denoising. Masks use `1 = occluded, keep own`.

mod adain;
mod blend;
mod fidelity;
mod flow;

pub use adain::adain;
pub use blend::{build_reference_frame, ofg_stage1, ofg_stage2_update, ReferenceFrame};
pub use fidelity::fidelity_encode;
pub use flow::{consistency_mask, estimate_flow_and_occlusion, warp, FlowField, OcclusionMask};
