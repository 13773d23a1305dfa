use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle `[x, x + w) x [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        PixelBox { x, y, w, h }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.x + self.w <= width && self.y + self.h <= height
    }

    /// Square box of side `round(margin * max(w, h))` sharing this box's
    /// center, shifted (and if needed shrunk) to lie inside the frame.
    pub fn square_with_margin(&self, margin: f64, height: usize, width: usize) -> PixelBox {
        let side = (margin * self.w.max(self.h) as f64).round() as usize;
        let side = side.clamp(1, height.min(width));
        let cx = self.x as f64 + self.w as f64 / 2.0;
        let cy = self.y as f64 + self.h as f64 / 2.0;
        let place = |center: f64, limit: usize| {
            let start = (center - side as f64 / 2.0).round();
            start.clamp(0.0, (limit - side) as f64) as usize
        };
        PixelBox {
            x: place(cx, width),
            y: place(cy, height),
            w: side,
            h: side,
        }
    }
}

/// 2x3 affine map `[x, y] = A [u, v, 1]` in continuous (pixel-edge)
/// coordinates, where pixel `(i, j)` covers `[i, i + 1) x [j, j + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    /// Uniform scale followed by translation, no rotation.
    pub fn similarity(scale: f64, tx: f64, ty: f64) -> Self {
        AffineTransform {
            m: [[scale, 0.0, tx], [0.0, scale, ty]],
        }
    }

    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * u + m[0][1] * v + m[0][2],
            m[1][0] * u + m[1][1] * v + m[1][2],
        )
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let [[a, b, c], [d, e, f]] = self.m;
        let det = a * e - b * d;
        if det.abs() < 1e-12 {
            return Err(Error::InvalidArgument(
                "singular alignment transform".into(),
            ));
        }
        let ia = e / det;
        let ib = -b / det;
        let id = -d / det;
        let ie = a / det;
        Ok(AffineTransform {
            m: [[ia, ib, -(ia * c + ib * f)], [id, ie, -(id * c + ie * f)]],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_box_is_centered_and_clamped() {
        let b = PixelBox::new(20, 20, 16, 16).square_with_margin(1.25, 64, 64);
        assert_eq!(b, PixelBox::new(18, 18, 20, 20));

        let edge = PixelBox::new(56, 0, 8, 12).square_with_margin(1.25, 64, 64);
        assert_eq!(edge.w, edge.h);
        assert_eq!(edge.w, 15);
        assert!(edge.fits_in(64, 64));
        assert_eq!(edge.x, 64 - 15);
        assert_eq!(edge.y, 0);

        let huge = PixelBox::new(0, 0, 60, 60).square_with_margin(1.25, 32, 48);
        assert_eq!((huge.w, huge.h), (32, 32));
        assert!(huge.fits_in(32, 48));
    }

    #[test]
    fn inverse_round_trips() {
        let t = AffineTransform::similarity(0.078125, 18.0, 7.0);
        let inv = t.inverse().unwrap();
        for (u, v) in [
            (0.0, 0.0),
            (256.0, 0.0),
            (0.0, 256.0),
            (256.0, 256.0),
            (17.3, 99.1),
        ] {
            let (x, y) = t.apply(u, v);
            let (u2, v2) = inv.apply(x, y);
            assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
        }
        assert!(AffineTransform::similarity(0.0, 1.0, 1.0)
            .inverse()
            .is_err());
    }
}
