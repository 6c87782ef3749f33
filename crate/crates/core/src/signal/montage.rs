use log::warn;
use ndarray::{Array2, Axis};

use super::{canonical_electrode, Montage, Recording};
use crate::error::{Error, Result};

/// Longitudinal bipolar chain ("double banana") over the 19 common 10-20
/// electrodes: left/right temporal, left/right parasagittal, then midline.
pub const DEFAULT_BIPOLAR_PAIRS: [(&str, &str); 18] = [
    ("FP1", "F7"),
    ("F7", "T7"),
    ("T7", "P7"),
    ("P7", "O1"),
    ("FP2", "F8"),
    ("F8", "T8"),
    ("T8", "P8"),
    ("P8", "O2"),
    ("FP1", "F3"),
    ("F3", "C3"),
    ("C3", "P3"),
    ("P3", "O1"),
    ("FP2", "F4"),
    ("F4", "C4"),
    ("C4", "P4"),
    ("P4", "O2"),
    ("FZ", "CZ"),
    ("CZ", "PZ"),
];

/// Re-references a referential recording to the instantaneous mean of all
/// channels.
pub fn to_average(rec: &Recording) -> Result<Recording> {
    if rec.montage != Montage::Referential {
        return Err(Error::Montage {
            expected: Montage::Referential,
            found: rec.montage,
        });
    }
    let mut out = rec.clone();
    out.data = average_reference(&rec.data);
    out.montage = Montage::Average;
    Ok(out)
}

fn average_reference(data: &Array2<f64>) -> Array2<f64> {
    let mut out = data.clone();
    if data.nrows() == 0 {
        return out;
    }
    let mean = data.mean_axis(Axis(0)).expect("at least one channel");
    for mut row in out.rows_mut() {
        row -= &mean;
    }
    out
}

/// Derives one channel per `(anterior, posterior)` pair as
/// `anterior - posterior`. Channel names become `"ANT-POST"`.
pub fn to_bipolar<S: AsRef<str>>(rec: &Recording, pairs: &[(S, S)]) -> Result<Recording> {
    if rec.montage == Montage::Bipolar {
        return Err(Error::Montage {
            expected: Montage::Referential,
            found: rec.montage,
        });
    }
    let resolve = |name: &str| {
        rec.channel_index(name)
            .ok_or_else(|| Error::ChannelResolution(name.to_string()))
    };
    let mut data = Array2::<f64>::zeros((pairs.len(), rec.n_samples()));
    let mut names = Vec::with_capacity(pairs.len());
    for (k, (anterior, posterior)) in pairs.iter().enumerate() {
        let a = resolve(anterior.as_ref())?;
        let p = resolve(posterior.as_ref())?;
        let mut row = data.row_mut(k);
        row.assign(&rec.data.row(a));
        row -= &rec.data.row(p);
        names.push(format!(
            "{}-{}",
            canonical_electrode(anterior.as_ref()),
            canonical_electrode(posterior.as_ref())
        ));
    }
    let mut out = rec.clone();
    out.data = data;
    out.channel_names = names;
    out.montage = Montage::Bipolar;
    Ok(out)
}

/// Removes the named channels, keeping the order of the rest. Names that are
/// not present are ignored with a warning.
pub fn drop_channels<S: AsRef<str>>(rec: &Recording, names: &[S]) -> Recording {
    let mut drop = vec![false; rec.n_channels()];
    for name in names {
        match rec.channel_index(name.as_ref()) {
            Some(i) => drop[i] = true,
            None => warn!(
                "{}: channel `{}` not present, nothing dropped",
                rec.subject_id,
                name.as_ref()
            ),
        }
    }
    let keep: Vec<usize> = (0..rec.n_channels()).filter(|&i| !drop[i]).collect();
    let mut out = rec.clone();
    out.data = rec.data.select(Axis(0), &keep);
    out.channel_names = keep.iter().map(|&i| rec.channel_names[i].clone()).collect();
    out
}
