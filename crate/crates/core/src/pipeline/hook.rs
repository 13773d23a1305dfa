use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;

use crate::attention::{self, AttentionWeights, FrameFeatures};
use crate::backbones::AttentionHook;
use crate::error::{Error, Result};

/// Token features one frame produced at every `(site, step)`.
#[derive(Debug, Clone, Default)]
pub struct FrameBank {
    features: BTreeMap<(String, usize), FrameFeatures>,
}

impl FrameBank {
    pub fn get(&self, site: &str, step: usize) -> Option<&FrameFeatures> {
        self.features.get(&(site.to_string(), step))
    }

    pub fn insert(&mut self, site: &str, step: usize, features: FrameFeatures) {
        self.features.insert((site.to_string(), step), features);
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Records the current frame's features and, once an anchor exists,
/// answers with cross-frame attention over `[anchor; previous]`.
pub struct CrossFrameHook<'a> {
    anchor: Option<&'a FrameBank>,
    previous: Option<&'a FrameBank>,
    sites: Option<&'a BTreeSet<String>>,
    recorded: FrameBank,
    cross_calls: usize,
}

impl<'a> CrossFrameHook<'a> {
    /// For the anchor itself: plain self-attention, features recorded.
    pub fn recording() -> Self {
        CrossFrameHook {
            anchor: None,
            previous: None,
            sites: None,
            recorded: FrameBank::default(),
            cross_calls: 0,
        }
    }

    /// For every later frame. `sites = None` replaces every site.
    pub fn cross_frame(
        anchor: &'a FrameBank,
        previous: &'a FrameBank,
        sites: Option<&'a BTreeSet<String>>,
    ) -> Self {
        CrossFrameHook {
            anchor: Some(anchor),
            previous: Some(previous),
            sites,
            recorded: FrameBank::default(),
            cross_calls: 0,
        }
    }

    pub fn cross_calls(&self) -> usize {
        self.cross_calls
    }

    pub fn into_bank(self) -> FrameBank {
        self.recorded
    }
}

impl AttentionHook for CrossFrameHook<'_> {
    fn attend(
        &mut self,
        site: &str,
        step: usize,
        features: &FrameFeatures,
        weights: &AttentionWeights,
    ) -> Result<Array2<f64>> {
        self.recorded.insert(site, step, features.clone());
        let replace = self.sites.is_none_or(|s| s.contains(site));
        match (self.anchor, self.previous) {
            (Some(anchor), Some(previous)) if replace => {
                let missing = || {
                    Error::InvalidArgument(format!(
                        "no reference features for attention site `{site}` at step {step}"
                    ))
                };
                let a = anchor.get(site, step).ok_or_else(missing)?;
                let p = previous.get(site, step).ok_or_else(missing)?;
                self.cross_calls += 1;
                attention::cross_frame_attention(features, a, p, weights)
            }
            _ => attention::self_attention(features, weights),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(seed: f64) -> FrameFeatures {
        FrameFeatures::new(
            Array2::from_shape_fn((4, 3), |(i, j)| {
                (seed + i as f64 * 0.7 - j as f64 * 0.3).sin()
            }),
            0,
        )
        .unwrap()
    }

    fn weights() -> AttentionWeights {
        let m =
            |s: f64| Array2::from_shape_fn((3, 2), |(i, j)| (s + i as f64 + 2.0 * j as f64).cos());
        AttentionWeights::new(m(0.1), m(0.2), m(0.3)).unwrap()
    }

    #[test]
    fn recording_hook_is_self_attention() {
        let mut hook = CrossFrameHook::recording();
        let v = feats(1.0);
        let out = hook.attend("mid", 5, &v, &weights()).unwrap();
        assert_eq!(out, attention::self_attention(&v, &weights()).unwrap());
        assert_eq!(hook.into_bank().len(), 1);
    }

    #[test]
    fn cross_hook_uses_banks_and_respects_allowlist() {
        let mut anchor = FrameBank::default();
        anchor.insert("mid", 5, feats(2.0));
        anchor.insert("up", 5, feats(2.5));
        let mut prev = FrameBank::default();
        prev.insert("mid", 5, feats(3.0));
        prev.insert("up", 5, feats(3.5));
        let only_mid: BTreeSet<String> = ["mid".to_string()].into();
        let mut hook = CrossFrameHook::cross_frame(&anchor, &prev, Some(&only_mid));
        let v = feats(1.0);
        let w = weights();
        let out = hook.attend("mid", 5, &v, &w).unwrap();
        let expected = attention::cross_frame_attention(
            &v,
            anchor.get("mid", 5).unwrap(),
            prev.get("mid", 5).unwrap(),
            &w,
        )
        .unwrap();
        assert_eq!(out, expected);
        assert_eq!(
            hook.attend("up", 5, &v, &w).unwrap(),
            attention::self_attention(&v, &w).unwrap()
        );
        assert_eq!(hook.cross_calls(), 1);
        assert!(hook.attend("mid", 4, &v, &w).is_err());
    }
}
