use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ImageGrid, Space};
use crate::seeding;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Provenance of one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub filename: String,
    pub index: usize,
    /// SHA-256 of the source PNG bytes, or of the pixel data for in-memory frames.
    pub source_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub fps: f64,
    pub frames: Vec<FrameRecord>,
}

/// Ordered frames of one video, all the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<ImageGrid>,
    fps: f64,
    manifest: Vec<FrameRecord>,
}

impl FrameSequence {
    /// Wraps in-memory frames, naming them `frame_00000.png`, ...
    pub fn new(frames: Vec<ImageGrid>, fps: f64) -> Result<Self> {
        let manifest = frames
            .iter()
            .enumerate()
            .map(|(index, f)| FrameRecord {
                filename: format!("frame_{index:05}.png"),
                index,
                source_checksum: grid_sha256(f),
            })
            .collect();
        FrameSequence::with_manifest(frames, fps, manifest)
    }

    pub fn with_manifest(
        frames: Vec<ImageGrid>,
        fps: f64,
        manifest: Vec<FrameRecord>,
    ) -> Result<Self> {
        let first = frames.first().ok_or_else(|| {
            Error::InvalidArgument("a frame sequence needs at least one frame".into())
        })?;
        for (i, f) in frames.iter().enumerate() {
            if f.dims() != first.dims() {
                let (c, h, w) = f.dims();
                let (c0, h0, w0) = first.dims();
                return Err(Error::shape("frame sequence", &[c0, h0, w0], &[c, h, w]).at_frame(i));
            }
            f.check_finite("frame sequence")
                .map_err(|e| e.at_frame(i))?;
        }
        if manifest.len() != frames.len() {
            return Err(Error::InvalidArgument(format!(
                "{} manifest records for {} frames",
                manifest.len(),
                frames.len()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "fps {fps} must be positive"
            )));
        }
        Ok(FrameSequence {
            frames,
            fps,
            manifest,
        })
    }

    pub fn frames(&self) -> &[ImageGrid] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<ImageGrid> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn records(&self) -> &[FrameRecord] {
        &self.manifest
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.frames[0].spatial()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: MANIFEST_VERSION,
            fps: self.fps,
            frames: self.manifest.clone(),
        }
    }
}

fn grid_sha256(g: &Grid) -> String {
    let bytes: Vec<u8> = g.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    seeding::sha256_hex(&bytes)
}

/// Decodes PNG bytes to a 3-channel grid in `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<ImageGrid> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_fn(
        Space::Image,
        (3, h as usize, w as usize),
        |(c, y, x)| img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0,
    ))
}

/// Encodes a grid to 8-bit RGB PNG, clamping to `[0, 1]`. Single-channel
/// grids are written as gray RGB.
pub fn encode_png(grid: &ImageGrid) -> Result<Vec<u8>> {
    let (c, h, w) = grid.dims();
    if c != 1 && c != 3 {
        return Err(Error::shape("encode_png", &[3], &[c]));
    }
    let img = ImageBuffer::<Rgb<u8>, Vec<u8>>::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| {
            let v = grid.get(ch.min(c - 1), y as usize, x as usize);
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([px(0), px(1), px(2)])
    });
    let mut out = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)?;
    Ok(out)
}

/// Reads every `*.png` in `dir` in lexicographic filename order. A
/// `manifest.json` alongside supplies fps; otherwise `default_fps` is used.
pub fn read_frame_dir(dir: &Path, default_fps: f64) -> Result<FrameSequence> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input directory not found"),
        ));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|ext| ext.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no PNG frames in {}",
            dir.display()
        )));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let fps = if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        serde_json::from_str::<Manifest>(&text)?.fps
    } else {
        default_fps
    };
    let mut frames = Vec::with_capacity(paths.len());
    let mut records = Vec::with_capacity(paths.len());
    for (index, path) in paths.iter().enumerate() {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        frames.push(decode_png(&bytes).map_err(|e| e.at_frame(index))?);
        records.push(FrameRecord {
            filename: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            index,
            source_checksum: seeding::sha256_hex(&bytes),
        });
    }
    FrameSequence::with_manifest(frames, fps, records)
}

/// Writes frames as PNGs under their manifest filenames plus
/// `manifest.json`. Output bytes depend only on the pixel values and the
/// manifest.
pub fn write_frame_dir(dir: &Path, sequence: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (frame, record) in sequence.frames().iter().zip(sequence.records()) {
        let path = dir.join(&record.filename);
        fs::write(&path, encode_png(frame)?).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&sequence.manifest())? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
