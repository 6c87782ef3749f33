//! Directory-level loading: every EDF file in a directory together with its
//! annotations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::annotations::{read_ppr_csv, read_seizure_summary};
use crate::edf::read_edf;
use crate::error::{Error, Result};
use crate::signal::{AnnotationSpan, Domain, Recording};

fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|x| x.to_string_lossy().eq_ignore_ascii_case(ext))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Reads every `.edf` in `dir`. Source recordings take their spans from any
/// `*-summary.txt` in the directory (keyed by file name); target recordings
/// from `<stem>.csv` next to the EDF. A recording without annotations has
/// none.
pub fn read_corpus(dir: &Path, domain: Domain) -> Result<Vec<Recording>> {
    let edfs = files_with_extension(dir, "edf")?;
    if edfs.is_empty() {
        return Err(Error::InsufficientData(format!("no EDF files in {}", dir.display())));
    }
    let mut summaries: BTreeMap<String, Vec<AnnotationSpan>> = BTreeMap::new();
    if domain == Domain::Source {
        for txt in files_with_extension(dir, "txt")? {
            if txt.to_string_lossy().ends_with("-summary.txt") {
                summaries.extend(read_seizure_summary(&txt)?);
            }
        }
    }
    let mut out = Vec::with_capacity(edfs.len());
    for path in edfs {
        let mut rec = read_edf(&path, domain)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        rec.annotations = match domain {
            Domain::Source => summaries.get(&name).cloned().unwrap_or_default(),
            Domain::Target => {
                let csv = path.with_extension("csv");
                if csv.exists() {
                    read_ppr_csv(&csv)?
                } else {
                    Vec::new()
                }
            }
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}
