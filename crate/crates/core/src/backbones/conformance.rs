//! Contract checks a backbone must pass before the pipeline will trust it.

use thiserror::Error;

use super::{
    AutoEncoder, Denoiser, EdgeDetector, FaceGenerator, FaceParser, FlowEstimator, MotionEstimator,
};
use crate::error::Error as CoreError;
use crate::face::{self, FaceConfig, PixelBox};
use crate::grid::{Grid, ImageGrid, Space};
use crate::scheduler::GuidanceContext;
use crate::seeding;

#[derive(Debug, Error)]
pub enum ConformanceError {
    #[error("{backbone}: call failed: {source}")]
    Call {
        backbone: String,
        #[source]
        source: CoreError,
    },
    #[error("{backbone}: expected shape {expected:?}, got {found:?}")]
    Shape {
        backbone: String,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("{backbone}: two identical calls returned different results")]
    NonDeterministic { backbone: String },
    #[error("{backbone}: output contains non-finite values")]
    NonFinite { backbone: String },
    #[error("{backbone}: output leaves the range [{lo}, {hi}]")]
    OutOfRange { backbone: String, lo: f64, hi: f64 },
}

type Check = std::result::Result<(), ConformanceError>;

fn call<T>(backbone: &str, r: crate::error::Result<T>) -> std::result::Result<T, ConformanceError> {
    r.map_err(|source| ConformanceError::Call {
        backbone: backbone.to_string(),
        source,
    })
}

fn shape(backbone: &str, g: &Grid, expected: (usize, usize, usize)) -> Check {
    if g.dims() != expected {
        return Err(ConformanceError::Shape {
            backbone: backbone.to_string(),
            expected,
            found: g.dims(),
        });
    }
    if !g.is_finite() {
        return Err(ConformanceError::NonFinite {
            backbone: backbone.to_string(),
        });
    }
    Ok(())
}

fn same(backbone: &str, a: &Grid, b: &Grid) -> Check {
    if a != b {
        return Err(ConformanceError::NonDeterministic {
            backbone: backbone.to_string(),
        });
    }
    Ok(())
}

fn unit_range(backbone: &str, g: &Grid) -> Check {
    if g.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(ConformanceError::OutOfRange {
            backbone: backbone.to_string(),
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

fn probe_image(height: usize, width: usize) -> ImageGrid {
    let mut rng = seeding::rng("conformance-probe", &[height as u64, width as u64]);
    let noise = seeding::gaussian_grid(&mut rng, Space::Image, (3, height, width));
    Grid::from_fn(Space::Image, (3, height, width), |(c, y, x)| {
        let base = (x as f64 / width as f64 + y as f64 / height as f64) / 2.0;
        (base + 0.1 * noise.get(c, y, x)).clamp(0.0, 1.0)
    })
}

/// Shape preservation and determinism of `predict_noise` on a latent of the
/// given image size.
pub fn check_denoiser(
    denoiser: &dyn Denoiser,
    autoencoder: &dyn AutoEncoder,
    image_size: (usize, usize),
) -> Check {
    let name = format!("denoiser `{}`", denoiser.info().name);
    let image = probe_image(image_size.0, image_size.1);
    let latent = call(&name, autoencoder.encode(&image))?;
    let (ch, cw) = denoiser.control_resolution(image_size);
    let control = Grid::filled(Space::Image, 1, ch, cw, 0.5);
    let guidance = call(
        &name,
        GuidanceContext::new("probe", vec![0.0; 4], Some(control), 7.5),
    )?;
    let a = call(&name, denoiser.predict_noise(&latent, 1, &guidance, None))?;
    let b = call(&name, denoiser.predict_noise(&latent, 1, &guidance, None))?;
    shape(&name, &a, latent.dims())?;
    same(&name, &a, &b)
}

/// Encode/decode shapes agree with `latent_scale` and are deterministic.
pub fn check_autoencoder(autoencoder: &dyn AutoEncoder, image_size: (usize, usize)) -> Check {
    let name = format!("autoencoder `{}`", autoencoder.info().name);
    let s = autoencoder.latent_scale().max(1);
    let image = probe_image(image_size.0, image_size.1);
    let z = call(&name, autoencoder.encode(&image))?;
    let (_, zh, zw) = z.dims();
    if (zh * s, zw * s) != image_size {
        return Err(ConformanceError::Shape {
            backbone: name,
            expected: (z.channels(), image_size.0 / s, image_size.1 / s),
            found: z.dims(),
        });
    }
    same(&name, &z, &call(&name, autoencoder.encode(&image))?)?;
    let back = call(&name, autoencoder.decode(&z))?;
    shape(&name, &back, image.dims())?;
    same(&name, &back, &call(&name, autoencoder.decode(&z))?)
}

pub fn check_edge_detector(edges: &dyn EdgeDetector, image_size: (usize, usize)) -> Check {
    let name = format!("edge detector `{}`", edges.info().name);
    let image = probe_image(image_size.0, image_size.1);
    let e = call(&name, edges.detect(&image))?;
    shape(&name, &e, (1, image_size.0, image_size.1))?;
    unit_range(&name, &e)?;
    same(&name, &e, &call(&name, edges.detect(&image))?)
}

pub fn check_flow_estimator(flow: &dyn FlowEstimator, image_size: (usize, usize)) -> Check {
    let name = format!("flow estimator `{}`", flow.info().name);
    let (h, w) = image_size;
    let a = probe_image(h, w);
    let b = Grid::from_fn(Space::Image, a.dims(), |(c, y, x)| {
        a.get(c, y, (x + 1).min(w - 1))
    });
    let (f1, b1) = call(&name, flow.estimate(&a, &b))?;
    let (f2, _) = call(&name, flow.estimate(&a, &b))?;
    shape(&name, &f1.as_grid(), (2, h, w))?;
    shape(&name, &b1.as_grid(), (2, h, w))?;
    same(&name, &f1.as_grid(), &f2.as_grid())
}

pub fn check_face_parser(parser: &dyn FaceParser, crop_size: usize) -> Check {
    let name = format!("face parser `{}`", parser.info().name);
    let face = probe_image(crop_size, crop_size);
    let m = call(&name, parser.parse(&face))?;
    shape(&name, &m, (1, crop_size, crop_size))?;
    unit_range(&name, &m)?;
    same(&name, &m, &call(&name, parser.parse(&face))?)
}

fn probe_crops(
    config: &FaceConfig,
) -> std::result::Result<(face::FaceCrop, face::FaceCrop), ConformanceError> {
    let name = "face probe";
    let frame = probe_image(64, 64);
    let shifted = Grid::from_fn(Space::Image, frame.dims(), |(c, y, x)| {
        frame.get(c, y, (x + 1).min(63))
    });
    let bbox = PixelBox::new(16, 16, 32, 32);
    let a = call(name, face::crop_face(&frame, bbox, config))?;
    let b = call(name, face::crop_face(&shifted, bbox, config))?;
    Ok((a, b))
}

pub fn check_motion_estimator(motion: &dyn MotionEstimator, config: &FaceConfig) -> Check {
    let name = format!("motion estimator `{}`", motion.info().name);
    let (src, drv) = probe_crops(config)?;
    let m = call(&name, motion.estimate(&src, &drv))?;
    let n = config.crop_size;
    shape(&name, &m.dense_motion.as_grid(), (2, n, n))?;
    if m.occlusion_pyramid.is_empty() {
        return Err(ConformanceError::Shape {
            backbone: name,
            expected: (1, n, n),
            found: (0, 0, 0),
        });
    }
    for (level, occ) in m.occlusion_pyramid.iter().enumerate() {
        let side = (n >> level).max(1);
        shape(&name, occ.grid(), (1, side, side))?;
    }
    let again = call(&name, motion.estimate(&src, &drv))?;
    same(
        &name,
        &m.dense_motion.as_grid(),
        &again.dense_motion.as_grid(),
    )
}

pub fn check_face_generator(
    generator: &dyn FaceGenerator,
    motion: &dyn MotionEstimator,
    config: &FaceConfig,
) -> Check {
    let name = format!("face generator `{}`", generator.info().name);
    let (src, drv) = probe_crops(config)?;
    let m = call(&name, motion.estimate(&src, &drv))?;
    let out = call(&name, generator.generate(&src, &m))?;
    shape(&name, &out, src.image.dims())?;
    same(&name, &out, &call(&name, generator.generate(&src, &m))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::toys::*;

    #[test]
    fn every_toy_conforms() {
        let size = (32, 32);
        let config = FaceConfig {
            crop_size: 64,
            ..FaceConfig::default()
        };
        check_denoiser(&HashDenoiser::new(0), &IdentityCodec, size).unwrap();
        check_denoiser(&HashDenoiser::new(0), &LossyCodec::default(), size).unwrap();
        check_autoencoder(&IdentityCodec, size).unwrap();
        check_autoencoder(&LossyCodec::default(), size).unwrap();
        check_edge_detector(&SobelEdges, size).unwrap();
        check_flow_estimator(&BlockMatchingFlow::default(), size).unwrap();
        check_face_parser(&EllipseParser::default(), 64).unwrap();
        check_motion_estimator(&BlockMatchingMotion::default(), &config).unwrap();
        check_face_generator(&WarpGenerator, &BlockMatchingMotion::default(), &config).unwrap();
    }

    #[test]
    fn odd_sizes_fail_the_lossy_codec() {
        assert!(matches!(
            check_autoencoder(&LossyCodec::default(), (31, 32)),
            Err(ConformanceError::Call { .. })
        ));
    }
}
