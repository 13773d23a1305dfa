use ndarray::Axis;

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

/// Adaptive instance normalization: re-standardizes each channel of `x` to
/// the per-channel mean and (population) standard deviation of `style_ref`.
///
/// A constant channel of `x` has nothing to rescale; it maps to the style
/// mean.
pub fn adain(x: &LatentGrid, style_ref: &LatentGrid) -> Result<LatentGrid> {
    if x.channels() != style_ref.channels() {
        return Err(Error::shape(
            "adain",
            &[style_ref.channels()],
            &[x.channels()],
        ));
    }
    let source_stats = x.channel_stats();
    let style_stats = style_ref.channel_stats();
    let mut out = x.clone();
    for (c, mut plane) in out.data_mut().axis_iter_mut(Axis(0)).enumerate() {
        let (mu_x, sd_x) = source_stats[c];
        let (mu_s, sd_s) = style_stats[c];
        if sd_x > 0.0 {
            let gain = sd_s / sd_x;
            plane.mapv_inplace(|v| (v - mu_x) * gain + mu_s);
        } else {
            plane.fill(mu_s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, Space};
    use crate::seeding;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matching_stats_is_identity() {
        let x = seeding::gaussian_grid(&mut seeding::rng("adain", &[1]), Space::Latent, (3, 6, 6));
        let out = adain(&x, &x).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn moments_are_transferred() {
        let raw =
            seeding::gaussian_grid(&mut seeding::rng("adain", &[2]), Space::Latent, (2, 8, 8));
        // standardize by hand so x has mean 0 / std 1 per channel
        let mut x = raw.clone();
        for (c, (m, s)) in raw.channel_stats().into_iter().enumerate() {
            for y in 0..8 {
                for xx in 0..8 {
                    x.set(c, y, xx, (raw.get(c, y, xx) - m) / s);
                }
            }
        }
        let style = x.map(|v| v * 2.0 + 5.0);
        let out = adain(&x, &style).unwrap();
        for (m, s) in out.channel_stats() {
            assert_abs_diff_eq!(m, 5.0, epsilon = 1e-5);
            assert_abs_diff_eq!(s, 2.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn constant_input_takes_style_mean() {
        let x = Grid::filled(Space::Latent, 1, 4, 4, 3.0);
        let style = Grid::from_fn(Space::Latent, (1, 4, 4), |(_, y, _)| y as f64);
        let out = adain(&x, &style).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn channel_count_must_match() {
        let x = Grid::zeros(Space::Latent, 2, 4, 4);
        let s = Grid::zeros(Space::Latent, 3, 4, 4);
        assert!(adain(&x, &s).is_err());
    }
}
