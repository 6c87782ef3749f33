//! Recordings, windows and the preprocessing chain that unifies both
//! domains into 18-channel bipolar, 500 Hz, one-second windows.
//!
//! Every operation here is a pure function of its inputs; recordings can be
//! processed in parallel without coordination.

mod montage;
mod pipeline;
mod resample;
mod window;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::augment::Provenance;
use crate::error::{Error, Result};

pub use montage::{drop_channels, to_average, to_bipolar, DEFAULT_BIPOLAR_PAIRS};
pub use pipeline::{
    preprocess_recording, select_bipolar, unify_recording, PreprocessConfig, DEFAULT_DROPPED_CHANNELS,
};
pub use resample::{resample_cubic_spline, NaturalCubicSpline};
pub use window::{
    label_window, segment_windows, znormalize, WindowingConfig, ZNORM_EPSILON,
};

/// Channel count of a fully preprocessed window.
pub const MODEL_CHANNELS: usize = 18;
/// Sample count of a fully preprocessed window (1 s at 500 Hz).
pub const MODEL_SAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Montage {
    Referential,
    Average,
    Bipolar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnnotationKind {
    Seizure,
    Ppr,
}

/// A labelled interval of a recording, in seconds from the recording start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub kind: AnnotationKind,
}

impl AnnotationSpan {
    pub fn new(start_s: f64, end_s: f64, kind: AnnotationKind) -> Result<Self> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s >= end_s {
            return Err(Error::InvalidRecording(format!(
                "annotation span must satisfy start < end, got [{start_s}, {end_s}]"
            )));
        }
        Ok(Self {
            start_s,
            end_s,
            kind,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Binary window label. `Anomaly` is a seizure in the source domain and a
/// photoparoxysmal response in the target domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomaly,
}

impl Label {
    /// Position of this label in probability vectors: `[normal, anomaly]`.
    pub fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Anomaly => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Anomaly),
            _ => None,
        }
    }

    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }
}

/// How a sliding window cuts a PPR discharge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PprType {
    /// Window holds the discharge onset only.
    OnsetA,
    /// Window holds the discharge offset only.
    OffsetB,
    /// Window lies entirely inside the discharge.
    InteriorC,
    /// The whole discharge fits inside the window.
    WholeD,
}

impl PprType {
    pub const ALL: [PprType; 4] = [
        PprType::OnsetA,
        PprType::OffsetB,
        PprType::InteriorC,
        PprType::WholeD,
    ];

    /// Stable one-byte code used by the window store (0 is reserved for "none").
    pub fn code(self) -> u8 {
        match self {
            PprType::OnsetA => 1,
            PprType::OffsetB => 2,
            PprType::InteriorC => 3,
            PprType::WholeD => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        PprType::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn letter(self) -> char {
        match self {
            PprType::OnsetA => 'a',
            PprType::OffsetB => 'b',
            PprType::InteriorC => 'c',
            PprType::WholeD => 'd',
        }
    }
}

/// A multichannel EEG recording, `data` is `[channels, samples]` in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub channel_names: Vec<String>,
    pub data: Array2<f64>,
    pub sampling_rate_hz: u32,
    pub montage: Montage,
    pub annotations: Vec<AnnotationSpan>,
    pub domain: Domain,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        channel_names: Vec<String>,
        data: Array2<f64>,
        sampling_rate_hz: u32,
        montage: Montage,
        annotations: Vec<AnnotationSpan>,
        domain: Domain,
    ) -> Result<Self> {
        let rec = Self {
            subject_id: subject_id.into(),
            channel_names,
            data,
            sampling_rate_hz,
            montage,
            annotations,
            domain,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampling_rate_hz == 0 {
            return Err(Error::InvalidRecording("sampling rate must be positive".into()));
        }
        if self.channel_names.len() != self.data.nrows() {
            return Err(Error::InvalidRecording(format!(
                "{} channel names for {} data rows",
                self.channel_names.len(),
                self.data.nrows()
            )));
        }
        let duration = self.duration_s();
        for span in &self.annotations {
            if span.start_s >= span.end_s || span.start_s < 0.0 || span.end_s > duration + 1e-9 {
                return Err(Error::InvalidRecording(format!(
                    "annotation [{}, {}] outside recording of {duration} s",
                    span.start_s, span.end_s
                )));
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sampling_rate_hz as f64
    }

    /// Index of the channel matching `name` under 10-20 naming rules.
    pub fn channel_index(&self, name: &str) -> Option<usize> {
        let wanted = canonical_electrode(name);
        self.channel_names
            .iter()
            .position(|c| canonical_electrode(c) == wanted)
    }
}

/// Normalizes an electrode label for matching: case-insensitive, `EEG ` prefix
/// and `-REF` suffix stripped, old temporal names mapped to the modern ones.
pub fn canonical_electrode(label: &str) -> String {
    let mut s = label.trim().to_ascii_uppercase();
    if let Some(rest) = s.strip_prefix("EEG ") {
        s = rest.trim().to_string();
    }
    for suffix in ["-REF", "-LE", "-AR"] {
        if let Some(rest) = s.strip_suffix(suffix) {
            s = rest.to_string();
        }
    }
    match s.as_str() {
        "T3" => "T7".into(),
        "T4" => "T8".into(),
        "T5" => "P7".into(),
        "T6" => "P8".into(),
        _ => s,
    }
}

/// Identity of a real window: the subject and its position in the
/// subject's segmentation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowKey {
    pub subject_id: String,
    pub index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WindowSource {
    /// Cut from a recording; `index` is the window's position in the
    /// recording's segmentation.
    Real { index: u64 },
    /// Produced by merging two real windows.
    Synthetic(Box<Provenance>),
}

/// A fixed `[C, T]` block of samples with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub data: Array2<f32>,
    pub label: Label,
    pub subject_id: String,
    pub start_s: f64,
    pub ppr_type: Option<PprType>,
    pub source: WindowSource,
}

impl Window {
    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self.source, WindowSource::Synthetic(_))
    }

    /// Key of a real window, `None` for synthetics.
    pub fn key(&self) -> Option<WindowKey> {
        match &self.source {
            WindowSource::Real { index } => Some(WindowKey {
                subject_id: self.subject_id.clone(),
                index: *index,
            }),
            WindowSource::Synthetic(_) => None,
        }
    }

    /// Keys of every real window this window derives from (itself if real).
    pub fn lineage(&self) -> Vec<WindowKey> {
        match &self.source {
            WindowSource::Real { .. } => self.key().into_iter().collect(),
            WindowSource::Synthetic(p) => p.parents.to_vec(),
        }
    }

    /// Row-major `[C * T]` view of the samples.
    pub fn samples(&self) -> &[f32] {
        self.data
            .as_slice()
            .expect("window data is stored in standard layout")
    }
}

/// Fraction of anomaly windows in a corpus, as a percentage.
pub fn anomaly_percentage(anomalies: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    100.0 * anomalies as f64 / total as f64
}
