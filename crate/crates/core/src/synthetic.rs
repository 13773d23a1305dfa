//! Synthetic videos with known motion, for testing temporal consistency.

use rand::Rng;

use crate::error::Result;
use crate::fusion::{warp, FlowField, OcclusionMask};
use crate::grid::{Grid, ImageGrid, Space};
use crate::pipeline::FrameSequence;
use crate::seeding;

/// Frames plus ground-truth motion between consecutive frames.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub sequence: FrameSequence,
    /// `flows[i]` lives on frame `i`'s grid and points into frame `i - 1`;
    /// `flows[0]` is zero.
    pub flows: Vec<FlowField>,
    /// `1` where frame `i` shows content absent from frame `i - 1`.
    pub disoccluded: Vec<OcclusionMask>,
}

fn background(height: usize, width: usize, seed: u64) -> ImageGrid {
    let mut rng = seeding::rng("synthetic-background", &[seed]);
    Grid::from_fn(Space::Image, (3, height, width), |(c, y, x)| {
        let ramp = 0.2 + 0.4 * x as f64 / width as f64 + 0.2 * y as f64 / height as f64;
        (ramp + 0.1 * c as f64 + 0.08 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)
    })
}

/// A textured square sliding over a static textured background.
///
/// The square has side `side` and starts with its top-left corner at
/// `origin = (x, y)`, moving `velocity = (vx, vy)` whole pixels per frame.
/// It must stay inside the frame.
pub fn moving_square(
    frames: usize,
    size: (usize, usize),
    side: usize,
    origin: (usize, usize),
    velocity: (isize, isize),
    seed: u64,
) -> Result<SyntheticVideo> {
    let (h, w) = size;
    let bg = background(h, w, seed);
    let mut rng = seeding::rng("synthetic-square", &[seed]);
    let texture = Grid::from_fn(Space::Image, (3, side, side), |(c, _, _)| {
        let base = [0.9, 0.3, 0.2][c % 3];
        (base + 0.3 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)
    });
    let corner = |i: usize| {
        let x = origin.0 as isize + velocity.0 * i as isize;
        let y = origin.1 as isize + velocity.1 * i as isize;
        assert!(
            x >= 0 && y >= 0 && x as usize + side <= w && y as usize + side <= h,
            "square leaves the frame at frame {i}"
        );
        (x as usize, y as usize)
    };
    let inside = |i: usize, y: usize, x: usize| {
        let (cx, cy) = corner(i);
        x >= cx && x < cx + side && y >= cy && y < cy + side
    };
    let mut out = Vec::with_capacity(frames);
    let mut flows = Vec::with_capacity(frames);
    let mut disoccluded = Vec::with_capacity(frames);
    for i in 0..frames {
        let (cx, cy) = corner(i);
        out.push(Grid::from_fn(Space::Image, (3, h, w), |(c, y, x)| {
            if inside(i, y, x) {
                texture.get(c, y - cy, x - cx)
            } else {
                bg.get(c, y, x)
            }
        }));
        if i == 0 {
            flows.push(FlowField::zeros(h, w));
            disoccluded.push(OcclusionMask::clear(h, w));
            continue;
        }
        let mut d = ndarray::Array3::zeros((2, h, w));
        for y in 0..h {
            for x in 0..w {
                if inside(i, y, x) {
                    d[[0, y, x]] = -velocity.0 as f64;
                    d[[1, y, x]] = -velocity.1 as f64;
                }
            }
        }
        flows.push(FlowField::new(d, i - 1, i)?);
        disoccluded.push(OcclusionMask::from_fn(h, w, |y, x| {
            if !inside(i, y, x) && inside(i - 1, y, x) {
                1.0
            } else {
                0.0
            }
        })?);
    }
    Ok(SyntheticVideo {
        sequence: FrameSequence::new(out, 25.0)?,
        flows,
        disoccluded,
    })
}

/// The same textured frame repeated `frames` times.
pub fn static_scene(frames: usize, size: (usize, usize), seed: u64) -> Result<FrameSequence> {
    let f = background(size.0, size.1, seed);
    FrameSequence::new(vec![f; frames], 25.0)
}

/// Mean over consecutive pairs of the MSE between output frame `i` and
/// output frame `i - 1` warped by the ground-truth flow, over pixels that
/// are not disoccluded.
pub fn warped_temporal_error(outputs: &[ImageGrid], video: &SyntheticVideo) -> Result<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 1..outputs.len() {
        let warped = warp(&outputs[i - 1], &video.flows[i])?;
        let (c, h, w) = outputs[i].dims();
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                if video.disoccluded[i].at(y, x) > 0.5 {
                    continue;
                }
                for ch in 0..c {
                    let d = outputs[i].get(ch, y, x) - warped.get(ch, y, x);
                    sum += d * d;
                }
                count += c;
            }
        }
        if count > 0 {
            total += sum / count as f64;
            pairs += 1;
        }
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    })
}
