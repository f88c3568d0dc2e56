use std::path::Path;

use crate::detector::Detection;
use crate::error::{Error, Result};

/// Writes detections as CSV with header `sample_id,cx,cy,w,h,score,class`.
/// Floats use shortest round-trip formatting, so reading back is exact.
pub fn write_predictions(path: &Path, detections: &[Detection]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for d in detections {
        w.serialize(d)?;
    }
    if detections.is_empty() {
        w.write_record(["sample_id", "cx", "cy", "w", "h", "score", "class"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Detection>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let want = ["sample_id", "cx", "cy", "w", "h", "score", "class"];
    if headers.iter().ne(want.iter().copied()) {
        return Err(Error::Input(format!(
            "{}: expected header {}, found {}",
            path.display(),
            want.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        let d: Detection = row?;
        if !(d.score.is_finite() && d.w > 0.0 && d.h > 0.0) {
            return Err(Error::Input(format!(
                "{}: malformed detection for {}",
                path.display(),
                d.sample_id
            )));
        }
        out.push(d);
    }
    Ok(out)
}
