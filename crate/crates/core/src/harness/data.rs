//! Manifest-backed datasets and breath-mask sources.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;

use crate::breathmask::{
    intervals_to_mask, normalize_duration, read_annotations, BreathIntervals, BreathMask, MaskMode, FRAME_DURATION,
};
use crate::error::Result;
use crate::synth::{read_manifest, read_wav, UtteranceRecord};
use crate::temporal::frame_count;

/// A manifest plus the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<UtteranceRecord>,
}

impl Dataset {
    pub fn open(manifest: &Path) -> Result<Self> {
        let records = read_manifest(manifest)?;
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Decoded audio of record `i`, cut or looped to `samples`.
    pub fn samples(&self, i: usize, samples: usize) -> Result<Vec<f64>> {
        let w = read_wav(&self.root.join(&self.records[i].path))?;
        Ok(normalize_duration(&w, samples)?.into_samples())
    }
}

/// Where frame masks come from. Only `Normal` touches annotation files.
#[derive(Clone, Debug)]
pub enum MaskSource {
    Annotations(BTreeMap<String, BreathIntervals>),
    Constant(bool),
}

impl MaskSource {
    pub fn open(mode: MaskMode, annotations: &Path) -> Result<Self> {
        Ok(match mode {
            MaskMode::Normal => Self::Annotations(read_annotations(annotations)?),
            MaskMode::Zeros => Self::Constant(false),
            MaskMode::Ones => Self::Constant(true),
        })
    }

    pub fn mask(&self, utt_id: &str, samples: usize) -> Result<BreathMask> {
        let frames = frame_count(samples)?;
        match self {
            Self::Constant(bit) => Ok(BreathMask::new(vec![*bit; frames], FRAME_DURATION)),
            Self::Annotations(map) => match map.get(utt_id) {
                Some(iv) => intervals_to_mask(iv, frames, FRAME_DURATION),
                None => {
                    warn!("{utt_id}: no breath annotation line; using an empty mask");
                    intervals_to_mask(&BreathIntervals::empty(), frames, FRAME_DURATION)
                }
            },
        }
    }
}
