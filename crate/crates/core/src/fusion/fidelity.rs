use crate::backbones::AutoEncoder;
use crate::error::Result;
use crate::grid::{ImageGrid, LatentGrid};

/// Encodes `image` so that decoding loses as little as possible.
///
/// Starts from `encode(image)` and runs up to `correction_steps` rounds of
/// `z <- z + encode(image - decode(z))`. A round is kept only if it lowers
/// the decode error, so the result never decodes worse than plain encoding.
pub fn fidelity_encode(
    image: &ImageGrid,
    encoder: &dyn AutoEncoder,
    correction_steps: usize,
) -> Result<LatentGrid> {
    let mut z = encoder.encode(image)?;
    if correction_steps == 0 {
        return Ok(z);
    }
    let mut err = encoder.decode(&z)?.mse(image)?;
    for _ in 0..correction_steps {
        if err == 0.0 {
            break;
        }
        let decoded = encoder.decode(&z)?;
        let residual = image.lincomb(1.0, &decoded, -1.0, "fidelity_encode")?;
        let correction = encoder.encode(&residual)?;
        let candidate = z.lincomb(1.0, &correction, 1.0, "fidelity_encode")?;
        let candidate_err = encoder.decode(&candidate)?.mse(image)?;
        if candidate_err < err {
            z = candidate;
            err = candidate_err;
        } else {
            break;
        }
    }
    Ok(z)
}
