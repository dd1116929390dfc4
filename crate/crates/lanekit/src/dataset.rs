//! TuSimple-style JSON-lines datasets with an optional `classes` key.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lanekit_core::train::Sample;
use lanekit_core::LaneRecord;

use crate::error::{Error, Result};
use crate::ppm::read_ppm;

/// Parse a dataset from text. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<LaneRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: LaneRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        rec.validate(None, None).map_err(|e| parse_err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<LaneRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

fn push_number(s: &mut String, x: f64) {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        let _ = write!(s, "{}", x as i64);
    } else {
        let _ = write!(s, "{x}");
    }
}

/// One compact line with keys in the order `lanes`, `h_samples`,
/// `raw_file`, `classes`. Integral coordinates are written as integers.
pub fn record_line(rec: &LaneRecord) -> String {
    let mut s = String::from("{\"lanes\": [");
    for (i, lane) in rec.lanes.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push('[');
        for (j, &x) in lane.iter().enumerate() {
            if j > 0 {
                s.push_str(", ");
            }
            push_number(&mut s, x);
        }
        s.push(']');
    }
    s.push_str("], \"h_samples\": [");
    for (j, y) in rec.h_samples.iter().enumerate() {
        if j > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{y}");
    }
    s.push_str("], \"raw_file\": ");
    s.push_str(&serde_json::to_string(&rec.raw_file).expect("strings serialize"));
    if let Some(classes) = &rec.classes {
        s.push_str(", \"classes\": [");
        for (j, c) in classes.iter().enumerate() {
            if j > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{c}");
        }
        s.push(']');
    }
    s.push('}');
    s
}

pub fn format_dataset(records: &[LaneRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&record_line(r));
        s.push('\n');
    }
    s
}

pub fn write_dataset(records: &[LaneRecord], path: &Path) -> Result<()> {
    for r in records {
        r.validate(None, None)?;
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, format_dataset(records)).map_err(|e| Error::io(path, e))
}

/// Directory that `raw_file` entries of the dataset at `path` resolve
/// against when no image root is configured.
pub fn default_root(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

/// Load the image of every record from `root`.
pub fn load_samples(records: Vec<LaneRecord>, root: &Path) -> Result<Vec<Sample>> {
    records
        .into_iter()
        .map(|record| {
            let image = read_ppm(&root.join(&record.raw_file))?;
            Ok(Sample { image, record })
        })
        .collect()
}
