use log::debug;
use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::montage::{drop_channels, to_average, to_bipolar, DEFAULT_BIPOLAR_PAIRS};
use super::resample::resample_cubic_spline;
use super::window::{segment_windows, WindowingConfig};
use super::{canonical_electrode, Montage, Recording, Window};
use crate::error::{Error, Result};

/// Channels removed before referencing; present only in the source corpus.
pub const DEFAULT_DROPPED_CHANNELS: [&str; 2] = ["FT9", "FT10"];

/// Steps that turn a recording of either domain into model windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub drop_channels: Vec<String>,
    pub bipolar_pairs: Vec<(String, String)>,
    pub target_rate_hz: u32,
    pub windowing: WindowingConfig,
}

impl PreprocessConfig {
    pub fn with_windowing(windowing: WindowingConfig) -> Self {
        Self {
            drop_channels: DEFAULT_DROPPED_CHANNELS.iter().map(|s| s.to_string()).collect(),
            bipolar_pairs: DEFAULT_BIPOLAR_PAIRS
                .iter()
                .map(|(a, p)| (a.to_string(), p.to_string()))
                .collect(),
            target_rate_hz: 500,
            windowing,
        }
    }

    pub fn target_default() -> Self {
        Self::with_windowing(WindowingConfig::target_default())
    }

    pub fn source_default() -> Self {
        Self::with_windowing(WindowingConfig::source_default())
    }
}

/// Keeps, in pair order, the derivations of an already bipolar recording
/// that match `pairs`; the rest are discarded.
pub fn select_bipolar<S: AsRef<str>>(rec: &Recording, pairs: &[(S, S)]) -> Result<Recording> {
    if rec.montage != Montage::Bipolar {
        return Err(Error::Montage {
            expected: Montage::Bipolar,
            found: rec.montage,
        });
    }
    let key = |name: &str| -> Option<(String, String)> {
        let (a, p) = name.split_once('-')?;
        Some((canonical_electrode(a), canonical_electrode(p)))
    };
    let mut rows = Vec::with_capacity(pairs.len());
    let mut names = Vec::with_capacity(pairs.len());
    for (a, p) in pairs {
        let wanted = (canonical_electrode(a.as_ref()), canonical_electrode(p.as_ref()));
        let idx = rec
            .channel_names
            .iter()
            .position(|c| key(c).as_ref() == Some(&wanted))
            .ok_or_else(|| Error::ChannelResolution(format!("{}-{}", wanted.0, wanted.1)))?;
        rows.push(idx);
        names.push(format!("{}-{}", wanted.0, wanted.1));
    }
    let mut out = rec.clone();
    out.data = rec.data.select(Axis(0), &rows);
    out.channel_names = names;
    Ok(out)
}

/// Unifies montage and rate: referential and average recordings are
/// re-referenced and chained into bipolar derivations, bipolar ones are
/// reduced to the configured pairs; then resampled to the target rate.
pub fn unify_recording(rec: &Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    let bipolar = match rec.montage {
        Montage::Referential => {
            let kept = drop_channels(rec, &present(rec, &cfg.drop_channels));
            to_bipolar(&to_average(&kept)?, &cfg.bipolar_pairs)?
        }
        Montage::Average => to_bipolar(rec, &cfg.bipolar_pairs)?,
        Montage::Bipolar => select_bipolar(rec, &cfg.bipolar_pairs)?,
    };
    if bipolar.sampling_rate_hz == cfg.target_rate_hz {
        Ok(bipolar)
    } else {
        debug!(
            "{}: resampling {} -> {} Hz",
            rec.subject_id, bipolar.sampling_rate_hz, cfg.target_rate_hz
        );
        resample_cubic_spline(&bipolar, cfg.target_rate_hz)
    }
}

/// Drop list restricted to channels the recording has, so target recordings
/// without FT9/FT10 do not warn.
fn present(rec: &Recording, names: &[String]) -> Vec<String> {
    names
        .iter()
        .filter(|n| rec.channel_index(n).is_some())
        .cloned()
        .collect()
}

/// Full chain from a raw recording to labelled windows.
pub fn preprocess_recording(rec: &Recording, cfg: &PreprocessConfig) -> Result<Vec<Window>> {
    segment_windows(&unify_recording(rec, cfg)?, &cfg.windowing)
}
