//! Channel-major real tensors for latents and decoded frames.

use ndarray::{Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which space a [`Grid`] lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    Latent,
    Image,
}

/// A `(channels, height, width)` tensor tagged with its space.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    data: Array3<f64>,
    space: Space,
}

/// Grid holding diffusion latents (`x_0`, `x_t`, `x̂_0`).
pub type LatentGrid = Grid;
/// Grid holding decoded or input frames, values nominally in `[0, 1]`.
pub type ImageGrid = Grid;

impl Grid {
    pub fn new(data: Array3<f64>, space: Space) -> Self {
        Grid { data, space }
    }

    pub fn latent(data: Array3<f64>) -> Self {
        Grid::new(data, Space::Latent)
    }

    pub fn image(data: Array3<f64>) -> Self {
        Grid::new(data, Space::Image)
    }

    pub fn zeros(space: Space, channels: usize, height: usize, width: usize) -> Self {
        Grid::new(Array3::zeros((channels, height, width)), space)
    }

    pub fn filled(space: Space, channels: usize, height: usize, width: usize, value: f64) -> Self {
        Grid::new(Array3::from_elem((channels, height, width), value), space)
    }

    pub fn from_fn(
        space: Space,
        (channels, height, width): (usize, usize, usize),
        f: impl FnMut((usize, usize, usize)) -> f64,
    ) -> Self {
        Grid::new(Array3::from_shape_fn((channels, height, width), f), space)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn with_space(mut self, space: Space) -> Self {
        self.space = space;
        self
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, h, w) = self.data.dim();
        (h, w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[[c, y, x]]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.data[[c, y, x]] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn ensure_same_shape(&self, other: &Grid, op: &'static str) -> Result<()> {
        if self.data.dim() == other.data.dim() {
            Ok(())
        } else {
            Err(Error::shape(op, self.data.shape(), other.data.shape()))
        }
    }

    pub fn ensure_spatial(&self, spatial: (usize, usize), op: &'static str) -> Result<()> {
        if self.spatial() == spatial {
            Ok(())
        } else {
            Err(Error::shape(
                op,
                &[spatial.0, spatial.1],
                &[self.height(), self.width()],
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid::new(self.data.mapv(f), self.space)
    }

    /// Elementwise `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Grid, b: f64, op: &'static str) -> Result<Grid> {
        self.ensure_same_shape(other, op)?;
        let mut out = self.data.clone();
        Zip::from(&mut out)
            .and(&other.data)
            .for_each(|o, &y| *o = a * *o + b * y);
        Ok(Grid::new(out, self.space))
    }

    /// Per-pixel `mask * self + (1 - mask) * other`, with a single-channel
    /// mask broadcast over channels.
    pub fn masked_blend(&self, mask: &Grid, other: &Grid, op: &'static str) -> Result<Grid> {
        self.ensure_same_shape(other, op)?;
        if mask.channels() != 1 {
            return Err(Error::shape(op, &[1], &[mask.channels()]));
        }
        mask.ensure_spatial(self.spatial(), op)?;
        let m = mask.data.index_axis(Axis(0), 0);
        let mut out = self.data.clone();
        for (mut plane, other_plane) in out
            .axis_iter_mut(Axis(0))
            .zip(other.data.axis_iter(Axis(0)))
        {
            Zip::from(&mut plane)
                .and(&other_plane)
                .and(&m)
                .for_each(|o, &b, &w| *o = w * *o + (1.0 - w) * b);
        }
        Ok(Grid::new(out, self.space))
    }

    /// Bilinear sample of channel `c` at continuous pixel-center coordinates,
    /// clamping out-of-range positions to the edge.
    #[inline]
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f64 {
        let (_, h, w) = self.data.dim();
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let d = &self.data;
        let top = d[[c, y0, x0]] * (1.0 - fx) + d[[c, y0, x1]] * fx;
        let bottom = d[[c, y1, x0]] * (1.0 - fx) + d[[c, y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize using half-pixel centers.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Grid {
        let (c, h, w) = self.data.dim();
        if (h, w) == (height, width) {
            return self.clone();
        }
        let sy = h as f64 / height as f64;
        let sx = w as f64 / width as f64;
        Grid::from_fn(self.space, (c, height, width), |(ch, y, x)| {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            self.sample(ch, src_x, src_y)
        })
    }

    /// Average-pool by `factor` in both spatial dimensions. Trailing rows and
    /// columns that do not fill a whole block are dropped.
    pub fn avg_pool(&self, factor: usize) -> Grid {
        let (c, h, w) = self.data.dim();
        let (oh, ow) = (h / factor, w / factor);
        let norm = (factor * factor) as f64;
        Grid::from_fn(self.space, (c, oh, ow), |(ch, y, x)| {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += self.data[[ch, y * factor + dy, x * factor + dx]];
                }
            }
            acc / norm
        })
    }

    pub fn upsample_nearest(&self, factor: usize) -> Grid {
        let (c, h, w) = self.data.dim();
        Grid::from_fn(self.space, (c, h * factor, w * factor), |(ch, y, x)| {
            self.data[[ch, y / factor, x / factor]]
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    /// Mean squared difference to `other`.
    pub fn mse(&self, other: &Grid) -> Result<f64> {
        self.ensure_same_shape(other, "mse")?;
        let n = self.data.len().max(1) as f64;
        let sum: f64 = Zip::from(&self.data)
            .and(&other.data)
            .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
        Ok(sum / n)
    }

    pub fn max_abs_diff(&self, other: &Grid) -> Result<f64> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(Zip::from(&self.data)
            .and(&other.data)
            .fold(0.0f64, |acc, &a, &b| acc.max((a - b).abs())))
    }

    /// Per-channel `(mean, population std)`.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        self.data
            .axis_iter(Axis(0))
            .map(|plane| {
                let n = plane.len().max(1) as f64;
                let mean = plane.sum() / n;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect()
    }

    /// Channel-average to a single-channel grid.
    pub fn luminance(&self) -> Grid {
        let c = self.channels().max(1) as f64;
        let plane = self.data.sum_axis(Axis(0)).mapv(|v| v / c);
        Grid::new(plane.insert_axis(Axis(0)), self.space)
    }

    /// Copy a rectangular spatial window.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Grid> {
        let (c, h, w) = self.data.dim();
        if y0 + height > h || x0 + width > w {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({x0}, {y0}) exceeds {h}x{w}"
            )));
        }
        Ok(Grid::from_fn(
            self.space,
            (c, height, width),
            |(ch, y, x)| self.data[[ch, y0 + y, x0 + x]],
        ))
    }
}
