use crate::backbones::AutoEncoder;
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, LatentGrid, Space};
use crate::scheduler::{add_noise, NoiseSchedule};
use crate::seeding;

use super::fidelity::fidelity_encode;
use super::flow::{warp, FlowField, OcclusionMask};

/// Stage-1 fusion on clean-latent estimates:
/// `M * x0_i + (1 - M) * warp(x0_anchor)`.
pub fn ofg_stage1(
    x0_hat_i: &LatentGrid,
    x0_hat_a: &LatentGrid,
    flow_a_to_i: &FlowField,
    mask_a_i: &OcclusionMask,
) -> Result<LatentGrid> {
    x0_hat_i.ensure_same_shape(x0_hat_a, "ofg_stage1")?;
    let warped = warp(x0_hat_a, flow_a_to_i)?;
    x0_hat_i.masked_blend(mask_a_i.grid(), &warped, "ofg_stage1")
}

/// Image assembled from warped previously generated frames, with the mask
/// of pixels that neither reference covers.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    image: ImageGrid,
    combined_mask: OcclusionMask,
}

impl ReferenceFrame {
    pub fn new(image: ImageGrid, combined_mask: OcclusionMask) -> Result<Self> {
        image.ensure_spatial(combined_mask.spatial(), "reference frame")?;
        Ok(ReferenceFrame {
            image,
            combined_mask,
        })
    }

    pub fn image(&self) -> &ImageGrid {
        &self.image
    }

    pub fn combined_mask(&self) -> &OcclusionMask {
        &self.combined_mask
    }
}

/// `M_a (M_p Î + (1 - M_p) warp(I'_prev)) + (1 - M_a) warp(I'_anchor)`,
/// with `M = min(M_p, M_a)`.
#[allow(clippy::too_many_arguments)]
pub fn build_reference_frame(
    decoded_current: &ImageGrid,
    generated_prev: &ImageGrid,
    generated_anchor: &ImageGrid,
    flow_prev: &FlowField,
    flow_anchor: &FlowField,
    mask_prev: &OcclusionMask,
    mask_anchor: &OcclusionMask,
) -> Result<ReferenceFrame> {
    decoded_current.ensure_same_shape(generated_prev, "build_reference_frame")?;
    decoded_current.ensure_same_shape(generated_anchor, "build_reference_frame")?;
    let from_prev = warp(generated_prev, flow_prev)?;
    let from_anchor = warp(generated_anchor, flow_anchor)?;
    let inner =
        decoded_current.masked_blend(mask_prev.grid(), &from_prev, "build_reference_frame")?;
    let image = inner.masked_blend(mask_anchor.grid(), &from_anchor, "build_reference_frame")?;
    let combined = mask_prev.intersect(mask_anchor)?;
    ReferenceFrame::new(image, combined)
}

/// Stage-2 fusion on the sampled latent `x_{t-1}`.
///
/// The reference image is encoded with [`fidelity_encode`], renoised to
/// step `t - 1` with a seeded generator, and blended in wherever the
/// combined mask is 0. The mask is resized to latent resolution and
/// binarized at 0.5 first.
#[allow(clippy::too_many_arguments)]
pub fn ofg_stage2_update(
    x_next: &LatentGrid,
    reference: &ReferenceFrame,
    t: usize,
    schedule: &NoiseSchedule,
    encoder: &dyn AutoEncoder,
    correction_steps: usize,
    rng_seed: u64,
) -> Result<LatentGrid> {
    if t == 0 || t > schedule.num_steps() {
        return Err(Error::InvalidArgument(format!(
            "stage-2 step {t} outside 1..={}",
            schedule.num_steps()
        )));
    }
    let z = fidelity_encode(reference.image(), encoder, correction_steps)?;
    z.ensure_same_shape(x_next, "ofg_stage2_update")?;
    let mut rng = seeding::rng("ofg_stage2", &[rng_seed, t as u64]);
    let noise = seeding::gaussian_grid(&mut rng, Space::Latent, z.dims());
    let renoised = add_noise(&z, t - 1, &noise, schedule)?;
    let (h, w) = x_next.spatial();
    let mask = reference.combined_mask().resized(h, w).binarized(0.5);
    x_next.masked_blend(mask.grid(), &renoised, "ofg_stage2_update")
}
