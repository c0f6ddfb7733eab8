//! Ground-truth annotation files: a `#aftn-bb v1` header followed by one
//! `frame_index,cx,cy,side` line per annotated frame.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::SquareBox;

pub const ANNOTATION_HEADER: &str = "#aftn-bb v1";

pub fn format_annotations(boxes: &[SquareBox]) -> String {
    let mut out = String::with_capacity(32 * (boxes.len() + 1));
    out.push_str(ANNOTATION_HEADER);
    out.push('\n');
    for (i, b) in boxes.iter().enumerate() {
        // `{}` on f64 prints the shortest string that parses back exactly
        let _ = writeln!(out, "{i},{},{},{}", b.cx, b.cy, b.side);
    }
    out
}

/// Parse annotation text into `(frame_index, box)` pairs. `path` is used only
/// in error messages.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<(usize, SquareBox)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == ANNOTATION_HEADER => {}
        _ => {
            return Err(Error::Format(format!(
                "{}: missing `{ANNOTATION_HEADER}` header",
                path.display()
            )))
        }
    }
    let err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        detail,
    };
    let mut out: Vec<(usize, SquareBox)> = Vec::new();
    for (n, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(n, format!("expected 4 comma-separated fields, got {}", fields.len())));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| err(n, format!("bad frame index `{}`", fields[0])))?;
        let mut vals = [0.0f64; 3];
        for (v, s) in vals.iter_mut().zip(&fields[1..]) {
            *v = s.parse().map_err(|_| err(n, format!("bad number `{s}`")))?;
            if !v.is_finite() {
                return Err(err(n, format!("non-finite value `{s}`")));
            }
        }
        if vals[2] <= 0.0 {
            return Err(err(n, format!("side must be positive, got {}", vals[2])));
        }
        match out.last() {
            None if index != 0 => return Err(err(n, format!("first frame index must be 0, got {index}"))),
            Some(&(prev, _)) if index <= prev => {
                return Err(err(n, format!("frame index {index} does not increase past {prev}")))
            }
            _ => {}
        }
        out.push((index, SquareBox::frame(vals[0], vals[1], vals[2])));
    }
    Ok(out)
}

pub fn write_annotations(boxes: &[SquareBox], path: &Path) -> Result<()> {
    fs::write(path, format_annotations(boxes)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<(usize, SquareBox)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_annotations(&text, path)
}
