use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::toys;
use super::{
    AutoEncoder, Backbones, Denoiser, EdgeDetector, FaceDetector, FaceGenerator, FaceParser,
    FlowEstimator, MotionEstimator, TextEncoder,
};
use crate::error::{Error, Result};

/// Opaque per-adapter options, as read from configuration.
pub type Options = BTreeMap<String, String>;

/// One configurable backbone position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Denoiser,
    AutoEncoder,
    Edge,
    Text,
    Flow,
    FaceDetector,
    FaceParser,
    FaceMotion,
    FaceGenerator,
}

impl Slot {
    pub const ALL: [Slot; 9] = [
        Slot::Denoiser,
        Slot::AutoEncoder,
        Slot::Edge,
        Slot::Text,
        Slot::Flow,
        Slot::FaceDetector,
        Slot::FaceParser,
        Slot::FaceMotion,
        Slot::FaceGenerator,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Slot::Denoiser => "denoiser",
            Slot::AutoEncoder => "autoencoder",
            Slot::Edge => "edge",
            Slot::Text => "text",
            Slot::Flow => "flow",
            Slot::FaceDetector => "face-detector",
            Slot::FaceParser => "face-parser",
            Slot::FaceMotion => "face-motion",
            Slot::FaceGenerator => "face-generator",
        }
    }

    pub fn default_kind(self) -> &'static str {
        match self {
            Slot::Denoiser => "hash",
            Slot::AutoEncoder => "identity",
            Slot::Edge => "sobel",
            Slot::Text => "hash",
            Slot::Flow => "block-matching",
            Slot::FaceDetector => "static-box",
            Slot::FaceParser => "ellipse",
            Slot::FaceMotion => "block-matching",
            Slot::FaceGenerator => "warp",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Slot::ALL
            .into_iter()
            .find(|slot| slot.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown backbone slot `{s}`")))
    }
}

/// Which implementation fills a slot, and its options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSelection {
    pub kind: String,
    #[serde(default)]
    pub options: Options,
}

impl BackboneSelection {
    pub fn new(kind: impl Into<String>) -> Self {
        BackboneSelection {
            kind: kind.into(),
            options: Options::new(),
        }
    }
}

type Ctor<T> = Box<dyn Fn(&Options, u64) -> Result<Box<T>> + Send + Sync>;

struct SlotTable<T: ?Sized> {
    ctors: BTreeMap<String, Ctor<T>>,
}

impl<T: ?Sized> SlotTable<T> {
    fn new() -> Self {
        SlotTable {
            ctors: BTreeMap::new(),
        }
    }

    fn insert(&mut self, kind: &str, ctor: Ctor<T>) {
        self.ctors.insert(kind.to_string(), ctor);
    }

    fn build(&self, slot: Slot, selection: &BackboneSelection, seed: u64) -> Result<Box<T>> {
        let ctor = self
            .ctors
            .get(&selection.kind)
            .ok_or_else(|| Error::UnknownBackbone {
                slot: slot.key().to_string(),
                kind: selection.kind.clone(),
            })?;
        ctor(&selection.options, seed)
    }

    fn kinds(&self) -> Vec<String> {
        self.ctors.keys().cloned().collect()
    }
}

/// Configuration-key to constructor table for every slot.
///
/// Constructors receive the slot's options and the run's master seed.
pub struct Registry {
    denoiser: SlotTable<dyn Denoiser>,
    autoencoder: SlotTable<dyn AutoEncoder>,
    edge: SlotTable<dyn EdgeDetector>,
    text: SlotTable<dyn TextEncoder>,
    flow: SlotTable<dyn FlowEstimator>,
    face_detector: SlotTable<dyn FaceDetector>,
    face_parser: SlotTable<dyn FaceParser>,
    face_motion: SlotTable<dyn MotionEstimator>,
    face_generator: SlotTable<dyn FaceGenerator>,
}

macro_rules! register_fn {
    ($name:ident, $field:ident, $trait:ident) => {
        pub fn $name<F>(&mut self, kind: &str, ctor: F)
        where
            F: Fn(&Options, u64) -> Result<Box<dyn $trait>> + Send + Sync + 'static,
        {
            self.$field.insert(kind, Box::new(ctor));
        }
    };
}

impl Registry {
    /// An empty registry with no constructors.
    pub fn empty() -> Self {
        Registry {
            denoiser: SlotTable::new(),
            autoencoder: SlotTable::new(),
            edge: SlotTable::new(),
            text: SlotTable::new(),
            flow: SlotTable::new(),
            face_detector: SlotTable::new(),
            face_parser: SlotTable::new(),
            face_motion: SlotTable::new(),
            face_generator: SlotTable::new(),
        }
    }

    /// A registry holding every in-repo toy under its default key.
    pub fn with_toys() -> Self {
        let mut r = Registry::empty();
        r.register_denoiser("hash", |o, seed| {
            Ok(Box::new(toys::HashDenoiser::from_options(o, seed)?))
        });
        r.register_denoiser("oracle", |o, _| {
            Ok(Box::new(toys::OracleDenoiser::from_options(o)?))
        });
        r.register_autoencoder("identity", |_, _| Ok(Box::new(toys::IdentityCodec)));
        r.register_autoencoder("lossy", |o, _| {
            Ok(Box::new(toys::LossyCodec::from_options(o)?))
        });
        r.register_edge("sobel", |_, _| Ok(Box::new(toys::SobelEdges)));
        r.register_text("hash", |o, _| {
            Ok(Box::new(toys::HashTextEncoder::from_options(o)?))
        });
        r.register_flow("block-matching", |o, _| {
            Ok(Box::new(toys::BlockMatchingFlow::from_options(o)?))
        });
        r.register_face_detector("static-box", |o, _| {
            Ok(Box::new(toys::StaticBoxDetector::from_options(o)?))
        });
        r.register_face_parser("ellipse", |o, _| {
            Ok(Box::new(toys::EllipseParser::from_options(o)?))
        });
        r.register_face_motion("block-matching", |o, _| {
            Ok(Box::new(toys::BlockMatchingMotion::from_options(o)?))
        });
        r.register_face_generator("warp", |_, _| Ok(Box::new(toys::WarpGenerator)));
        r
    }

    register_fn!(register_denoiser, denoiser, Denoiser);
    register_fn!(register_autoencoder, autoencoder, AutoEncoder);
    register_fn!(register_edge, edge, EdgeDetector);
    register_fn!(register_text, text, TextEncoder);
    register_fn!(register_flow, flow, FlowEstimator);
    register_fn!(register_face_detector, face_detector, FaceDetector);
    register_fn!(register_face_parser, face_parser, FaceParser);
    register_fn!(register_face_motion, face_motion, MotionEstimator);
    register_fn!(register_face_generator, face_generator, FaceGenerator);

    /// Registered kinds for a slot, sorted.
    pub fn kinds(&self, slot: Slot) -> Vec<String> {
        match slot {
            Slot::Denoiser => self.denoiser.kinds(),
            Slot::AutoEncoder => self.autoencoder.kinds(),
            Slot::Edge => self.edge.kinds(),
            Slot::Text => self.text.kinds(),
            Slot::Flow => self.flow.kinds(),
            Slot::FaceDetector => self.face_detector.kinds(),
            Slot::FaceParser => self.face_parser.kinds(),
            Slot::FaceMotion => self.face_motion.kinds(),
            Slot::FaceGenerator => self.face_generator.kinds(),
        }
    }

    /// Builds the bundle; slots missing from `selections` use their default kind.
    pub fn build(
        &self,
        selections: &BTreeMap<String, BackboneSelection>,
        seed: u64,
    ) -> Result<Backbones> {
        for key in selections.keys() {
            key.parse::<Slot>()?;
        }
        let pick = |slot: Slot| {
            selections
                .get(slot.key())
                .cloned()
                .unwrap_or_else(|| BackboneSelection::new(slot.default_kind()))
        };
        Ok(Backbones {
            denoiser: self
                .denoiser
                .build(Slot::Denoiser, &pick(Slot::Denoiser), seed)?,
            autoencoder: self.autoencoder.build(
                Slot::AutoEncoder,
                &pick(Slot::AutoEncoder),
                seed,
            )?,
            edges: self.edge.build(Slot::Edge, &pick(Slot::Edge), seed)?,
            text: self.text.build(Slot::Text, &pick(Slot::Text), seed)?,
            flow: self.flow.build(Slot::Flow, &pick(Slot::Flow), seed)?,
            face_detector: self.face_detector.build(
                Slot::FaceDetector,
                &pick(Slot::FaceDetector),
                seed,
            )?,
            face_parser: self
                .face_parser
                .build(Slot::FaceParser, &pick(Slot::FaceParser), seed)?,
            face_motion: self
                .face_motion
                .build(Slot::FaceMotion, &pick(Slot::FaceMotion), seed)?,
            face_generator: self.face_generator.build(
                Slot::FaceGenerator,
                &pick(Slot::FaceGenerator),
                seed,
            )?,
        })
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::with_toys()
    }
}

/// Reads an option as `T`, falling back to `default` when absent.
pub(crate) fn option<T: FromStr>(options: &Options, key: &str, default: T) -> Result<T> {
    match options.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("option `{key}` has invalid value `{raw}`"))),
    }
}
