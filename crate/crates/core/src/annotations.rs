//! Annotation inputs: the source corpus's per-patient summary text and the
//! target-domain `start_s,end_s,kind` CSV export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{AnnotationKind, AnnotationSpan};

pub const PPR_CSV_HEADER: [&str; 3] = ["start_s", "end_s", "kind"];

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

#[derive(Default)]
struct Block {
    file: String,
    line: usize,
    declared: Option<usize>,
    starts: Vec<(usize, f64)>,
    ends: Vec<(usize, f64)>,
}

impl Block {
    fn finish(self, path: &Path) -> Result<(String, Vec<AnnotationSpan>)> {
        let declared = self.declared.ok_or_else(|| {
            parse_err(path, self.line, format!("block `{}` lacks a seizure count", self.file))
        })?;
        if self.starts.len() != declared || self.ends.len() != declared {
            return Err(parse_err(
                path,
                self.line,
                format!(
                    "block `{}` declares {declared} seizures but lists {} starts and {} ends",
                    self.file,
                    self.starts.len(),
                    self.ends.len()
                ),
            ));
        }
        let spans = self
            .starts
            .iter()
            .zip(&self.ends)
            .map(|(&(_, start), &(line, end))| {
                AnnotationSpan::new(start, end, AnnotationKind::Seizure).map_err(|_| {
                    parse_err(path, line, format!("seizure end {end} is not after start {start}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((self.file, spans))
    }
}

/// `"2996 seconds"` → 2996.0
fn parse_seconds(value: &str) -> Option<f64> {
    let v = value.trim();
    let v = v
        .strip_suffix("seconds")
        .or_else(|| v.strip_suffix("second"))
        .or_else(|| v.strip_suffix("s"))
        .unwrap_or(v)
        .trim();
    v.parse::<f64>().ok().filter(|x| x.is_finite() && *x >= 0.0)
}

/// Parses a seizure summary: blocks starting with `File Name:` followed by
/// `Number of Seizures in File:` and `Seizure [k] Start/End Time: N seconds`
/// lines. Other lines (channel lists, rates, separators) are ignored.
pub fn parse_seizure_summary(
    text: &str,
    path: &Path,
) -> Result<BTreeMap<String, Vec<AnnotationSpan>>> {
    let mut out = BTreeMap::new();
    let mut current: Option<Block> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        if key == "file name" {
            if let Some(b) = current.take() {
                let (f, spans) = b.finish(path)?;
                out.insert(f, spans);
            }
            current = Some(Block {
                file: value.to_string(),
                line: line_no,
                ..Default::default()
            });
            continue;
        }
        let is_count = key == "number of seizures in file";
        let is_start = key.starts_with("seizure") && key.ends_with("start time");
        let is_end = key.starts_with("seizure") && key.ends_with("end time");
        if !(is_count || is_start || is_end) {
            continue;
        }
        let block = current
            .as_mut()
            .ok_or_else(|| parse_err(path, line_no, "seizure entry before any `File Name:` line"))?;
        if is_count {
            let n = value
                .parse::<usize>()
                .map_err(|_| parse_err(path, line_no, format!("bad seizure count {value:?}")))?;
            block.declared = Some(n);
        } else {
            let secs = parse_seconds(value)
                .ok_or_else(|| parse_err(path, line_no, format!("bad time {value:?}")))?;
            if is_start {
                block.starts.push((line_no, secs));
            } else {
                block.ends.push((line_no, secs));
            }
        }
    }
    if let Some(b) = current.take() {
        let (f, spans) = b.finish(path)?;
        out.insert(f, spans);
    }
    Ok(out)
}

pub fn read_seizure_summary(path: &Path) -> Result<BTreeMap<String, Vec<AnnotationSpan>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_seizure_summary(&text, path)
}

/// Renders summary text in the layout [`parse_seizure_summary`] reads.
pub fn format_seizure_summary(files: &BTreeMap<String, Vec<AnnotationSpan>>) -> String {
    let mut s = String::new();
    for (file, spans) in files {
        let _ = writeln!(s, "File Name: {file}");
        let _ = writeln!(s, "Number of Seizures in File: {}", spans.len());
        for (k, span) in spans.iter().enumerate() {
            let tag = if spans.len() > 1 {
                format!("Seizure {} ", k + 1)
            } else {
                "Seizure ".to_string()
            };
            let _ = writeln!(s, "{tag}Start Time: {} seconds", span.start_s);
            let _ = writeln!(s, "{tag}End Time: {} seconds", span.end_s);
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    start_s: f64,
    end_s: f64,
    kind: String,
}

fn parse_kind(kind: &str) -> Option<AnnotationKind> {
    match kind.trim().to_ascii_lowercase().as_str() {
        "ppr" => Some(AnnotationKind::Ppr),
        "seizure" => Some(AnnotationKind::Seizure),
        _ => None,
    }
}

fn kind_name(kind: AnnotationKind) -> &'static str {
    match kind {
        AnnotationKind::Ppr => "ppr",
        AnnotationKind::Seizure => "seizure",
    }
}

/// Reads a `start_s,end_s,kind` annotation CSV.
pub fn read_ppr_csv(path: &Path) -> Result<Vec<AnnotationSpan>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ppr_csv(file, path)
}

pub fn parse_ppr_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<AnnotationSpan>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != PPR_CSV_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("expected header `start_s,end_s,kind`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut spans = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        let kind = parse_kind(&row.kind)
            .ok_or_else(|| parse_err(path, line, format!("unknown kind {:?}", row.kind)))?;
        let span = AnnotationSpan::new(row.start_s, row.end_s, kind)
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        spans.push(span);
    }
    Ok(spans)
}

pub fn write_ppr_csv(path: &Path, spans: &[AnnotationSpan]) -> Result<()> {
    // The header comes from the row field names on the first `serialize`.
    let mut w = csv::Writer::from_path(path)?;
    if spans.is_empty() {
        w.write_record(PPR_CSV_HEADER)?;
    }
    for s in spans {
        w.serialize(CsvRow {
            start_s: s.start_s,
            end_s: s.end_s,
            kind: kind_name(s.kind).to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SUMMARY: &str = "\
Data Sampling Rate: 256 Hz
*************************

Channels in EDF Files:
**********************
Channel 1: FP1-F7
Channel 2: F7-T7

File Name: chb01_01.edf
File Start Time: 11:42:54
File End Time: 12:42:54
Number of Seizures in File: 0

File Name: chb01_03.edf
File Start Time: 13:43:04
File End Time: 14:43:04
Number of Seizures in File: 1
Seizure Start Time: 2996 seconds
Seizure End Time: 3036 seconds

File Name: chb06_01.edf
Number of Seizures in File: 2
Seizure 1 Start Time: 1724 seconds
Seizure 1 End Time: 1738 seconds
Seizure 2 Start Time: 7461 seconds
Seizure 2 End Time: 7476 seconds
";

    #[test]
    fn parses_summary_layout() {
        let m = parse_seizure_summary(SUMMARY, Path::new("chb01-summary.txt")).unwrap();
        assert!(m["chb01_01.edf"].is_empty());
        let s = &m["chb01_03.edf"];
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].start_s, s[0].end_s), (2996.0, 3036.0));
        assert_eq!(s[0].kind, AnnotationKind::Seizure);
        assert_eq!(m["chb06_01.edf"].len(), 2);
    }

    #[test]
    fn summary_round_trip() {
        let m = parse_seizure_summary(SUMMARY, Path::new("x")).unwrap();
        let again = parse_seizure_summary(&format_seizure_summary(&m), Path::new("y")).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn end_before_start_is_rejected() {
        let text = "File Name: a.edf\nNumber of Seizures in File: 1\nSeizure Start Time: 50 seconds\nSeizure End Time: 40 seconds\n";
        match parse_seizure_summary(text, Path::new("s.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let text = "File Name: a.edf\nNumber of Seizures in File: one\n";
        assert!(matches!(
            parse_seizure_summary(text, Path::new("s.txt")),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "File Name: a.edf\nNumber of Seizures in File: 2\nSeizure Start Time: 5 seconds\nSeizure End Time: 9 seconds\n";
        assert!(parse_seizure_summary(text, Path::new("s.txt")).is_err());
        let text = "Seizure Start Time: 5 seconds\n";
        assert!(matches!(
            parse_seizure_summary(text, Path::new("s.txt")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn csv_cases() {
        let p = Path::new("a.csv");
        assert!(parse_ppr_csv("start_s,end_s,kind\n".as_bytes(), p).unwrap().is_empty());
        let spans = parse_ppr_csv("start_s,end_s,kind\n1.5,3.25,PPR\n10,11,ppr\n".as_bytes(), p).unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].end_s, 3.25);
        assert!(matches!(
            parse_ppr_csv("start,end,kind\n".as_bytes(), p),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_ppr_csv("start_s,end_s,kind\n1,0.5,ppr\n".as_bytes(), p),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn csv_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let spans = vec![
            AnnotationSpan::new(0.25, 1.75, AnnotationKind::Ppr).unwrap(),
            AnnotationSpan::new(30.0, 33.5, AnnotationKind::Ppr).unwrap(),
        ];
        write_ppr_csv(&path, &spans).unwrap();
        assert_eq!(read_ppr_csv(&path).unwrap(), spans);
    }
}
