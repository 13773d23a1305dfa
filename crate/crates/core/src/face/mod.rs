//! Face enhancement: re-render the generated face with the original
//! signer's expression and paste it back over the diffusion output.
//!
//! The source face is cropped once from a generated frame. Each original
//! frame provides a driving face; a motion estimator relates the two, a
//! generator animates the source, and a face parser's mask composites the
//! result: `I' = M * F_E + (1 - M) * I'`.

mod geometry;

use serde::{Deserialize, Serialize};

use crate::backbones::{FaceDetector, FaceGenerator, FaceParser, MotionEstimator};
use crate::error::{Error, Result};
use crate::fusion::{FlowField, OcclusionMask};
use crate::grid::{Grid, ImageGrid, Space};

pub use geometry::{AffineTransform, PixelBox};

/// Crop and paste-back parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaceConfig {
    /// Side of the square aligned crop, in pixels.
    pub crop_size: usize,
    /// Crop side relative to the detected box's longer side.
    pub margin: f64,
    /// Width in pixels of the linear ramp feathering the pasted mask edge.
    pub feather: usize,
}

impl Default for FaceConfig {
    fn default() -> Self {
        FaceConfig {
            crop_size: 256,
            margin: 1.25,
            feather: 3,
        }
    }
}

/// An aligned square face crop and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceCrop {
    pub image: ImageGrid,
    /// Square region of the frame the crop covers.
    pub bbox: PixelBox,
    /// Maps crop coordinates to frame coordinates.
    pub align_transform: AffineTransform,
}

impl FaceCrop {
    pub fn crop_size(&self) -> usize {
        self.image.width()
    }
}

/// Dense motion from driving face to source face, with occlusion maps at
/// halving resolutions (finest first).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMap {
    pub dense_motion: FlowField,
    pub occlusion_pyramid: Vec<OcclusionMask>,
    /// Placement of the driving face in its frame; the animated face is
    /// pasted back here.
    pub driving_bbox: PixelBox,
    pub driving_transform: AffineTransform,
}

impl MotionMap {
    pub fn finest_occlusion(&self) -> &OcclusionMask {
        &self.occlusion_pyramid[0]
    }
}

/// Builds `levels` occlusion maps, each half the resolution of the last.
pub fn occlusion_pyramid(base: &OcclusionMask, levels: usize) -> Result<Vec<OcclusionMask>> {
    if levels == 0 {
        return Err(Error::InvalidArgument(
            "occlusion pyramid needs at least one level".into(),
        ));
    }
    let mut out = vec![base.clone()];
    for _ in 1..levels {
        let last = out.last().expect("non-empty");
        let (h, w) = last.spatial();
        if h < 2 || w < 2 {
            return Err(Error::InvalidArgument(format!(
                "cannot halve a {h}x{w} occlusion map"
            )));
        }
        out.push(OcclusionMask::new(last.grid().avg_pool(2))?);
    }
    Ok(out)
}

/// Per-pixel face blend mask at frame resolution, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceMask {
    mask: Grid,
}

impl FaceMask {
    pub fn new(mask: Grid) -> Result<Self> {
        if mask.channels() != 1 || mask.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "face mask must be single-channel with entries in [0, 1]".into(),
            ));
        }
        Ok(FaceMask { mask })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        FaceMask {
            mask: Grid::zeros(Space::Image, 1, height, width),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.mask
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.mask.get(0, y, x)
    }

    /// Whether pixel `(x, y)` receives any face content.
    pub fn in_support(&self, y: usize, x: usize) -> bool {
        self.at(y, x) > 0.0
    }
}

/// Samples the aligned crop for `bbox` from `frame`.
pub fn crop_face(frame: &ImageGrid, bbox: PixelBox, config: &FaceConfig) -> Result<FaceCrop> {
    let (h, w) = frame.spatial();
    if !bbox.fits_in(h, w) || bbox.w != bbox.h || bbox.w == 0 {
        return Err(Error::InvalidArgument(format!(
            "crop box {bbox:?} is not a square inside {h}x{w}"
        )));
    }
    let size = config.crop_size;
    let scale = bbox.w as f64 / size as f64;
    let align_transform = AffineTransform::similarity(scale, bbox.x as f64, bbox.y as f64);
    let image = Grid::from_fn(Space::Image, (frame.channels(), size, size), |(c, v, u)| {
        let (x, y) = align_transform.apply(u as f64 + 0.5, v as f64 + 0.5);
        frame.sample(c, x - 0.5, y - 0.5)
    });
    Ok(FaceCrop {
        image,
        bbox,
        align_transform,
    })
}

/// Crops the face in `frame`, reusing `last_box` when the detector finds
/// nothing. Returns `None` when there is neither a detection nor a
/// previous box.
pub fn extract_face(
    frame: &ImageGrid,
    detector: &dyn FaceDetector,
    last_box: Option<PixelBox>,
    config: &FaceConfig,
) -> Result<Option<(FaceCrop, PixelBox)>> {
    let detected = detector.detect(frame)?.or(last_box);
    let Some(raw) = detected else {
        return Ok(None);
    };
    let (h, w) = frame.spatial();
    let square = raw.square_with_margin(config.margin, h, w);
    Ok(Some((crop_face(frame, square, config)?, raw)))
}

/// Fills detection gaps: each miss takes the last known box, and leading
/// misses take the first detection. `None` if nothing was ever detected.
pub fn resolve_face_boxes(detections: &[Option<PixelBox>]) -> Option<Vec<PixelBox>> {
    let first = detections.iter().flatten().next().copied()?;
    let mut last = first;
    Some(
        detections
            .iter()
            .map(|d| {
                if let Some(b) = d {
                    last = *b;
                }
                last
            })
            .collect(),
    )
}

pub fn estimate_face_motion(
    source: &FaceCrop,
    driving: &FaceCrop,
    estimator: &dyn MotionEstimator,
) -> Result<MotionMap> {
    if source.image.dims() != driving.image.dims() {
        return Err(Error::shape(
            "estimate_face_motion",
            &[source.crop_size(), source.crop_size()],
            &[driving.image.height(), driving.image.width()],
        ));
    }
    let motion = estimator.estimate(source, driving)?;
    let spatial = source.image.spatial();
    if motion.dense_motion.spatial() != spatial
        || motion.occlusion_pyramid.is_empty()
        || motion.finest_occlusion().spatial() != spatial
    {
        return Err(Error::backbone(
            "face-motion",
            "motion map does not match the crop resolution",
        ));
    }
    Ok(motion)
}

/// The animated face `F_E`: source identity, driving expression, placed
/// where the driving face sits.
pub fn animate_face(
    source: &FaceCrop,
    motion: &MotionMap,
    generator: &dyn FaceGenerator,
) -> Result<FaceCrop> {
    let image = generator.generate(source, motion)?;
    if image.dims() != source.image.dims() {
        return Err(Error::backbone(
            "face-generator",
            format!(
                "returned {:?} for a {:?} crop",
                image.dims(),
                source.image.dims()
            ),
        ));
    }
    Ok(FaceCrop {
        image,
        bbox: motion.driving_bbox,
        align_transform: motion.driving_transform,
    })
}

/// Linear ramp weight for the pixel at `(x, y)` inside `bbox`: `d / (F + 1)`
/// capped at 1, where `d` counts pixels to the box edge (1 on the border row).
pub fn feather_weight(bbox: &PixelBox, x: usize, y: usize, feather: usize) -> f64 {
    if !bbox.contains(x, y) {
        return 0.0;
    }
    let d = (x - bbox.x)
        .min(bbox.x + bbox.w - 1 - x)
        .min(y - bbox.y)
        .min(bbox.y + bbox.h - 1 - y)
        + 1;
    (d as f64 / (feather + 1) as f64).min(1.0)
}

/// Maps an enhanced crop and its crop-space mask into frame coordinates.
/// Returns the pasted face (zero outside the box) and the feathered mask.
pub fn paste_to_frame(
    enhanced: &FaceCrop,
    crop_mask: &Grid,
    frame_size: (usize, usize),
    channels: usize,
    feather: usize,
) -> Result<(ImageGrid, FaceMask)> {
    let (h, w) = frame_size;
    if !enhanced.bbox.fits_in(h, w) {
        return Err(Error::InvalidArgument(format!(
            "face box {:?} leaves the {h}x{w} frame",
            enhanced.bbox
        )));
    }
    if enhanced.image.channels() != channels {
        return Err(Error::shape(
            "paste_to_frame",
            &[channels],
            &[enhanced.image.channels()],
        ));
    }
    crop_mask.ensure_spatial(enhanced.image.spatial(), "paste_to_frame")?;
    let to_crop = enhanced.align_transform.inverse()?;
    let b = enhanced.bbox;
    let mut face = Grid::zeros(Space::Image, channels, h, w);
    let mut mask = Grid::zeros(Space::Image, 1, h, w);
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            let (u, v) = to_crop.apply(x as f64 + 0.5, y as f64 + 0.5);
            let (u, v) = (u - 0.5, v - 0.5);
            for c in 0..channels {
                face.set(c, y, x, enhanced.image.sample(c, u, v));
            }
            let m = crop_mask.sample(0, u, v).clamp(0.0, 1.0);
            mask.set(0, y, x, m * feather_weight(&b, x, y, feather));
        }
    }
    Ok((face, FaceMask::new(mask)?))
}

/// Result of [`composite_face`].
#[derive(Debug, Clone)]
pub struct Composite {
    pub image: ImageGrid,
    pub mask: FaceMask,
    /// Set when the parser failed and the frame was returned unmodified.
    pub warning: Option<String>,
}

/// Parses the enhanced face and blends it into the frame under the pasted mask.
pub fn composite_face(
    frame: &ImageGrid,
    enhanced: &FaceCrop,
    parser: &dyn FaceParser,
    feather: usize,
) -> Result<Composite> {
    let (h, w) = frame.spatial();
    let crop_mask = match parser.parse(&enhanced.image) {
        Ok(m) if m.channels() == 1 && m.spatial() == enhanced.image.spatial() => m,
        Ok(m) => {
            return Ok(Composite {
                image: frame.clone(),
                mask: FaceMask::empty(h, w),
                warning: Some(format!(
                    "face parser returned a {:?} mask for a {:?} crop; face left unmodified",
                    m.dims(),
                    enhanced.image.dims()
                )),
            })
        }
        Err(e) => {
            return Ok(Composite {
                image: frame.clone(),
                mask: FaceMask::empty(h, w),
                warning: Some(format!("face parser failed ({e}); face left unmodified")),
            })
        }
    };
    let (face, mask) = paste_to_frame(enhanced, &crop_mask, (h, w), frame.channels(), feather)?;
    let image = face.masked_blend(mask.grid(), frame, "composite_face")?;
    Ok(Composite {
        image,
        mask,
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::toys::{BlockMatchingMotion, WarpGenerator};
    use crate::backbones::{Backbone, BackboneInfo};

    struct Scripted(Vec<Option<PixelBox>>, std::sync::Mutex<usize>);

    impl Backbone for Scripted {
        fn info(&self) -> BackboneInfo {
            BackboneInfo::new("scripted", false)
        }
    }

    impl FaceDetector for Scripted {
        fn detect(&self, _frame: &ImageGrid) -> Result<Option<PixelBox>> {
            let mut i = self.1.lock().unwrap();
            let out = self.0[*i];
            *i += 1;
            Ok(out)
        }
    }

    struct FixedMask(Grid);

    impl Backbone for FixedMask {
        fn info(&self) -> BackboneInfo {
            BackboneInfo::new("fixed", true)
        }
    }

    impl FaceParser for FixedMask {
        fn parse(&self, _face: &ImageGrid) -> Result<Grid> {
            Ok(self.0.clone())
        }
    }

    struct Broken;

    impl Backbone for Broken {
        fn info(&self) -> BackboneInfo {
            BackboneInfo::new("broken", true)
        }
    }

    impl FaceParser for Broken {
        fn parse(&self, _face: &ImageGrid) -> Result<Grid> {
            Err(Error::backbone("face-parser", "no weights"))
        }
    }

    fn textured(h: usize, w: usize, seed: u64) -> ImageGrid {
        crate::seeding::gaussian_grid(
            &mut crate::seeding::rng("face-test", &[seed]),
            Space::Image,
            (3, h, w),
        )
    }

    fn cfg(size: usize) -> FaceConfig {
        FaceConfig {
            crop_size: size,
            margin: 1.25,
            feather: 3,
        }
    }

    #[test]
    fn centered_crop_round_trips_corners() {
        let frame = textured(64, 64, 0);
        let crop = crop_face(&frame, PixelBox::new(22, 22, 20, 20), &cfg(256)).unwrap();
        let t = crop.align_transform;
        assert_eq!(t.apply(0.0, 0.0), (22.0, 22.0));
        let (x, y) = t.apply(256.0, 256.0);
        assert!((x - 42.0).abs() < 0.5 && (y - 42.0).abs() < 0.5);
        let inv = t.inverse().unwrap();
        for (u, v) in [(0.0, 0.0), (256.0, 0.0), (0.0, 256.0), (256.0, 256.0)] {
            let (x, y) = t.apply(u, v);
            let (u2, v2) = inv.apply(x, y);
            assert!((u - u2).abs() < 0.5 && (v - v2).abs() < 0.5);
        }
    }

    #[test]
    fn unit_scale_crop_copies_pixels() {
        let frame = textured(32, 32, 1);
        let crop = crop_face(&frame, PixelBox::new(5, 7, 16, 16), &cfg(16)).unwrap();
        for v in 0..16 {
            for u in 0..16 {
                assert_eq!(crop.image.get(1, v, u), frame.get(1, v + 7, u + 5));
            }
        }
    }

    #[test]
    fn missing_detection_reuses_last_box() {
        let frame = textured(32, 32, 2);
        let b = PixelBox::new(8, 8, 8, 8);
        let det = Scripted(vec![Some(b), None], Default::default());
        let (_, first) = extract_face(&frame, &det, None, &cfg(8)).unwrap().unwrap();
        assert_eq!(first, b);
        let (crop, second) = extract_face(&frame, &det, Some(first), &cfg(8))
            .unwrap()
            .unwrap();
        assert_eq!(second, b);
        assert_eq!(crop.bbox, b.square_with_margin(1.25, 32, 32));

        let none = Scripted(vec![None], Default::default());
        assert!(extract_face(&frame, &none, None, &cfg(8))
            .unwrap()
            .is_none());
    }

    #[test]
    fn box_resolution_fills_gaps() {
        let a = PixelBox::new(1, 1, 4, 4);
        let b = PixelBox::new(2, 2, 4, 4);
        assert_eq!(
            resolve_face_boxes(&[None, Some(a), None, Some(b), None]).unwrap(),
            vec![a, a, a, b, b]
        );
        assert!(resolve_face_boxes(&[None, None]).is_none());
    }

    #[test]
    fn pyramid_halves() {
        let base = OcclusionMask::clear(256, 256);
        let levels: Vec<_> = occlusion_pyramid(&base, 4)
            .unwrap()
            .iter()
            .map(|m| m.spatial().0)
            .collect();
        assert_eq!(levels, vec![256, 128, 64, 32]);
        assert!(occlusion_pyramid(&base, 0).is_err());
    }

    fn crop_of(image: ImageGrid) -> FaceCrop {
        let n = image.width();
        FaceCrop {
            image,
            bbox: PixelBox::new(0, 0, n, n),
            align_transform: AffineTransform::identity(),
        }
    }

    #[test]
    fn identical_faces_have_no_motion() {
        let src = crop_of(textured(32, 32, 3));
        let m = estimate_face_motion(&src, &src, &BlockMatchingMotion::default()).unwrap();
        assert!(m.dense_motion.displacement().iter().all(|&v| v == 0.0));
        assert_eq!(m.finest_occlusion().count_occluded(), 0);
        let out = animate_face(&src, &m, &WarpGenerator).unwrap();
        assert_eq!(out.image, src.image);
    }

    #[test]
    fn translated_face_moves_by_two_pixels() {
        let base = textured(32, 32, 4);
        let driving = Grid::from_fn(Space::Image, (3, 32, 32), |(c, y, x)| {
            base.get(c, y, (x + 2).min(31))
        });
        let src = crop_of(base.clone());
        let m =
            estimate_face_motion(&src, &crop_of(driving), &BlockMatchingMotion::default()).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(m.dense_motion.at(y, x), (2.0, 0.0));
            }
        }
        // shift oracle, ignoring columns the occlusion map keeps as source
        let out = animate_face(&src, &m, &WarpGenerator).unwrap();
        for y in 0..32 {
            for x in 0..30 {
                assert_eq!(out.image.get(0, y, x), base.get(0, y, x + 2));
            }
        }
    }

    #[test]
    fn full_occlusion_keeps_source() {
        let src = crop_of(textured(16, 16, 5));
        let m = MotionMap {
            dense_motion: FlowField::uniform(16, 16, 3.0, 1.0).unwrap(),
            occlusion_pyramid: vec![OcclusionMask::filled(16, 16, 1.0).unwrap()],
            driving_bbox: src.bbox,
            driving_transform: src.align_transform,
        };
        assert_eq!(
            animate_face(&src, &m, &WarpGenerator).unwrap().image,
            src.image
        );
    }

    fn placed_face(at: (usize, usize), n: usize, seed: u64) -> FaceCrop {
        FaceCrop {
            image: textured(n, n, seed),
            bbox: PixelBox::new(at.0, at.1, n, n),
            align_transform: AffineTransform::similarity(1.0, at.0 as f64, at.1 as f64),
        }
    }

    #[test]
    fn zero_mask_leaves_frame() {
        let frame = textured(32, 32, 6);
        let face = placed_face((4, 6), 16, 7);
        let parser = FixedMask(Grid::zeros(Space::Image, 1, 16, 16));
        let out = composite_face(&frame, &face, &parser, 3).unwrap();
        assert_eq!(out.image, frame);
    }

    #[test]
    fn unit_mask_pastes_face_inside_feather_band() {
        let frame = textured(32, 32, 8);
        let face = placed_face((4, 6), 16, 9);
        let parser = FixedMask(Grid::filled(Space::Image, 1, 16, 16, 1.0));
        let out = composite_face(&frame, &face, &parser, 3).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let inside = (7..17).contains(&x) && (9..19).contains(&y);
                let outside = !face.bbox.contains(x, y);
                for c in 0..3 {
                    if inside {
                        assert_eq!(out.image.get(c, y, x), face.image.get(c, y - 6, x - 4));
                    }
                    if outside {
                        assert_eq!(out.image.get(c, y, x), frame.get(c, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn parser_failure_returns_frame_with_warning() {
        let frame = textured(32, 32, 10);
        let face = placed_face((4, 6), 16, 11);
        let out = composite_face(&frame, &face, &Broken, 3).unwrap();
        assert_eq!(out.image, frame);
        assert!(out.warning.is_some());
    }

    #[test]
    fn feather_ramp_values() {
        let b = PixelBox::new(0, 0, 10, 10);
        let row: Vec<f64> = (0..10).map(|x| feather_weight(&b, x, 5, 3)).collect();
        assert_eq!(
            row,
            vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0, 0.75, 0.5, 0.25]
        );
        assert_eq!(feather_weight(&b, 11, 5, 3), 0.0);
        assert_eq!(feather_weight(&b, 0, 0, 0), 1.0);
    }
}
