use ndarray::{Array3, Axis};

use crate::backbones::FlowEstimator;
use crate::error::{Error, Result};
use crate::grid::{Grid, ImageGrid, Space};

/// Dense displacement field `(2, h, w)`.
///
/// Channel 0 is `dx`, channel 1 is `dy`. The field lives on the target
/// frame's grid: target pixel `p` corresponds to source position `p + d(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    displacement: Array3<f64>,
    source_id: usize,
    target_id: usize,
}

impl FlowField {
    pub fn new(displacement: Array3<f64>, source_id: usize, target_id: usize) -> Result<Self> {
        let (c, h, w) = displacement.dim();
        if c != 2 {
            return Err(Error::shape("flow field", &[2, h, w], &[c, h, w]));
        }
        if displacement.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow field"));
        }
        let diagonal = ((h * h + w * w) as f64).sqrt();
        let plane_dx = displacement.index_axis(Axis(0), 0);
        let plane_dy = displacement.index_axis(Axis(0), 1);
        if plane_dx
            .iter()
            .zip(plane_dy.iter())
            .any(|(dx, dy)| dx.hypot(*dy) > diagonal)
        {
            return Err(Error::InvalidArgument(format!(
                "flow magnitude exceeds the grid diagonal {diagonal:.2}"
            )));
        }
        Ok(FlowField {
            displacement,
            source_id,
            target_id,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            displacement: Array3::zeros((2, height, width)),
            source_id: 0,
            target_id: 0,
        }
    }

    /// The same displacement at every pixel.
    pub fn uniform(height: usize, width: usize, dx: f64, dy: f64) -> Result<Self> {
        let d = Array3::from_shape_fn((2, height, width), |(c, _, _)| if c == 0 { dx } else { dy });
        FlowField::new(d, 0, 0)
    }

    pub fn with_ids(mut self, source_id: usize, target_id: usize) -> Self {
        self.source_id = source_id;
        self.target_id = target_id;
        self
    }

    pub fn source_id(&self) -> usize {
        self.source_id
    }

    pub fn target_id(&self) -> usize {
        self.target_id
    }

    pub fn displacement(&self) -> &Array3<f64> {
        &self.displacement
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, h, w) = self.displacement.dim();
        (h, w)
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        (self.displacement[[0, y, x]], self.displacement[[1, y, x]])
    }

    pub fn as_grid(&self) -> Grid {
        Grid::new(self.displacement.clone(), Space::Image)
    }

    /// Bilinearly resamples to `(height, width)` and rescales the vectors by
    /// the resolution ratio, so the field stays in the new grid's pixel units.
    pub fn resized(&self, height: usize, width: usize) -> FlowField {
        let (h, w) = self.spatial();
        if (h, w) == (height, width) {
            return self.clone();
        }
        let sx = width as f64 / w as f64;
        let sy = height as f64 / h as f64;
        let mut g = self.as_grid().resize_bilinear(height, width).into_data();
        g.index_axis_mut(Axis(0), 0).mapv_inplace(|v| v * sx);
        g.index_axis_mut(Axis(0), 1).mapv_inplace(|v| v * sy);
        FlowField {
            displacement: g,
            source_id: self.source_id,
            target_id: self.target_id,
        }
    }
}

/// Per-pixel occlusion indicator `(1, h, w)`, values in `[0, 1]`.
///
/// `1` marks pixels where the warp is invalid and the frame keeps its own
/// content; `0` marks pixels that take the warped reference.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask {
    mask: Grid,
}

impl OcclusionMask {
    pub fn new(mask: Grid) -> Result<Self> {
        if mask.channels() != 1 {
            return Err(Error::shape(
                "occlusion mask",
                &[1, mask.height(), mask.width()],
                &[mask.channels(), mask.height(), mask.width()],
            ));
        }
        if mask.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "occlusion mask entries must lie in [0, 1]".into(),
            ));
        }
        Ok(OcclusionMask { mask })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        OcclusionMask::new(Grid::filled(Space::Image, 1, height, width, value))
    }

    /// All pixels valid.
    pub fn clear(height: usize, width: usize) -> Self {
        OcclusionMask {
            mask: Grid::zeros(Space::Image, 1, height, width),
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        OcclusionMask::new(Grid::from_fn(
            Space::Image,
            (1, height, width),
            |(_, y, x)| f(y, x),
        ))
    }

    pub fn grid(&self) -> &Grid {
        &self.mask
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.mask.spatial()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.mask.get(0, y, x)
    }

    /// Entries `>= threshold` become 1, the rest 0.
    pub fn binarized(&self, threshold: f64) -> OcclusionMask {
        OcclusionMask {
            mask: self.mask.map(|v| if v >= threshold { 1.0 } else { 0.0 }),
        }
    }

    /// Elementwise minimum: occluded only where both masks are occluded.
    pub fn intersect(&self, other: &OcclusionMask) -> Result<OcclusionMask> {
        self.mask
            .ensure_same_shape(&other.mask, "mask intersection")?;
        let mut out = self.mask.clone();
        out.data_mut()
            .zip_mut_with(other.mask.data(), |a, &b| *a = a.min(b));
        Ok(OcclusionMask { mask: out })
    }

    pub fn resized(&self, height: usize, width: usize) -> OcclusionMask {
        OcclusionMask {
            mask: self
                .mask
                .resize_bilinear(height, width)
                .map(|v| v.clamp(0.0, 1.0)),
        }
    }

    pub fn count_occluded(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v >= 0.5).count()
    }
}

/// Backward warp with bilinear sampling; out-of-range samples clamp to the
/// nearest edge pixel.
pub fn warp(content: &Grid, flow: &FlowField) -> Result<Grid> {
    let (h, w) = content.spatial();
    if flow.spatial() != (h, w) {
        let (fh, fw) = flow.spatial();
        return Err(Error::shape("warp", &[h, w], &[fh, fw]));
    }
    let mut out = content.clone();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.at(y, x);
            let sx = x as f64 + dx;
            let sy = y as f64 + dy;
            for c in 0..content.channels() {
                out.set(c, y, x, content.sample(c, sx, sy));
            }
        }
    }
    Ok(out)
}

/// Forward-backward consistency check.
///
/// A target pixel `p` is occluded when `p + fwd(p)` leaves the frame, or
/// when `|fwd(p) + bwd(p + fwd(p))| > threshold`.
pub fn consistency_mask(
    forward: &FlowField,
    backward: &FlowField,
    threshold: f64,
) -> Result<OcclusionMask> {
    let (h, w) = forward.spatial();
    if backward.spatial() != (h, w) {
        let (bh, bw) = backward.spatial();
        return Err(Error::shape("consistency mask", &[h, w], &[bh, bw]));
    }
    let back = backward.as_grid();
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
    OcclusionMask::from_fn(h, w, |y, x| {
        let (fx, fy) = forward.at(y, x);
        let sx = x as f64 + fx;
        let sy = y as f64 + fy;
        if !(0.0..=max_x).contains(&sx) || !(0.0..=max_y).contains(&sy) {
            return 1.0;
        }
        let bx = back.sample(0, sx, sy);
        let by = back.sample(1, sx, sy);
        if (fx + bx).hypot(fy + by) > threshold {
            1.0
        } else {
            0.0
        }
    })
}

/// Flow from `frame_src` to `frame_dst` (living on `frame_dst`'s grid) and
/// the occlusion mask derived by forward-backward consistency.
pub fn estimate_flow_and_occlusion(
    frame_src: &ImageGrid,
    frame_dst: &ImageGrid,
    estimator: &dyn FlowEstimator,
    threshold: f64,
) -> Result<(FlowField, OcclusionMask)> {
    frame_src.ensure_same_shape(frame_dst, "flow estimation")?;
    let (forward, backward) = estimator.estimate(frame_src, frame_dst)?;
    let spatial = frame_dst.spatial();
    for f in [&forward, &backward] {
        if f.spatial() != spatial {
            let (fh, fw) = f.spatial();
            return Err(Error::backbone(
                "flow",
                format!(
                    "returned a {fh}x{fw} field for {}x{} frames",
                    spatial.0, spatial.1
                ),
            ));
        }
    }
    let mask = consistency_mask(&forward, &backward, threshold)?;
    Ok((forward, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Grid {
        Grid::from_fn(Space::Image, (2, h, w), |(c, y, x)| {
            (c * 100 + y * w + x) as f64
        })
    }

    #[test]
    fn zero_flow_is_identity() {
        let g = ramp(5, 6);
        assert_eq!(warp(&g, &FlowField::zeros(5, 6)).unwrap(), g);
    }

    #[test]
    fn integer_shift_with_edge_clamp() {
        let g = ramp(4, 4);
        let out = warp(&g, &FlowField::uniform(4, 4, 1.0, 0.0).unwrap()).unwrap();
        // Index-shift oracle: column x reads column min(x + 1, 3).
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(out.get(c, y, x), g.get(c, y, (x + 1).min(3)));
                }
            }
        }
    }

    #[test]
    fn constant_content_survives_any_flow() {
        let g = Grid::filled(Space::Latent, 3, 6, 6, 0.25);
        let flow = FlowField::new(
            Array3::from_shape_fn((2, 6, 6), |(c, y, x)| {
                (c as f64 - 0.5) * (x as f64 * 0.7 - y as f64)
            }),
            0,
            1,
        )
        .unwrap();
        assert_eq!(warp(&g, &flow).unwrap(), g);
    }

    #[test]
    fn warp_shape_mismatch() {
        let g = ramp(4, 4);
        assert!(warp(&g, &FlowField::zeros(4, 5)).is_err());
    }

    #[test]
    fn resized_flow_is_rescaled() {
        let f = FlowField::uniform(8, 8, 2.0, -4.0).unwrap();
        let half = f.resized(4, 4);
        assert_eq!(half.at(1, 2), (1.0, -2.0));
    }

    #[test]
    fn oversized_flow_is_rejected() {
        assert!(FlowField::uniform(4, 4, 10.0, 0.0).is_err());
        assert!(FlowField::new(Array3::zeros((3, 2, 2)), 0, 0).is_err());
    }

    #[test]
    fn masks_validate_range_and_intersect_by_min() {
        assert!(OcclusionMask::filled(2, 2, 1.5).is_err());
        let a = OcclusionMask::from_fn(2, 2, |y, _| y as f64).unwrap();
        let b = OcclusionMask::from_fn(2, 2, |_, x| x as f64).unwrap();
        let m = a.intersect(&b).unwrap();
        assert_eq!(m.at(1, 1), 1.0);
        assert_eq!(m.at(1, 0), 0.0);
        assert_eq!(m.at(0, 1), 0.0);
    }

    #[test]
    fn consistent_translation_flags_only_out_of_frame() {
        let fwd = FlowField::uniform(4, 6, 1.0, 0.0).unwrap();
        let bwd = FlowField::uniform(4, 6, -1.0, 0.0).unwrap();
        let m = consistency_mask(&fwd, &bwd, 1.0).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(m.at(y, x), if x == 5 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn inconsistent_flows_are_occluded() {
        let fwd = FlowField::uniform(4, 4, 1.0, 0.0).unwrap();
        let bwd = FlowField::uniform(4, 4, 1.0, 0.0).unwrap();
        let m = consistency_mask(&fwd, &bwd, 1.0).unwrap();
        assert_eq!(m.at(0, 0), 1.0);
    }
}
