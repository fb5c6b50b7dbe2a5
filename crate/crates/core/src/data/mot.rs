//! MOT Challenge text rows: `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    pub frame: i64,
    /// `-1` for raw detections.
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub w: f64,
    pub h: f64,
    pub conf: f64,
    pub world: [f64; 3],
}

impl MotRecord {
    pub fn from_bbox(frame: i64, id: i64, b: &BBox, conf: f64) -> Self {
        let [left, top, w, h] = b.to_tlwh();
        Self {
            frame,
            id,
            left,
            top,
            w,
            h,
            conf,
            world: [-1.0; 3],
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_tlwh(self.left, self.top, self.w, self.h)
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Parses comma-separated rows. Rows need at least the six geometry fields;
/// a missing confidence reads as 1 and missing world coordinates as -1.
/// Blank lines are skipped. Columns in errors are 1-based field positions.
pub fn parse_mot_str(text: &str) -> Result<Vec<MotRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 6 || fields.len() > 10 {
            return Err(parse_err(
                line_no,
                fields.len().min(10) + 1,
                format!("expected 6 to 10 fields, found {}", fields.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = fields[k]
                .parse()
                .map_err(|_| parse_err(line_no, k + 1, format!("not a number: {:?}", fields[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line_no, k + 1, "value is not finite"))
            }
        };
        let int = |k: usize| -> Result<i64> {
            let v = num(k)?;
            if v.fract() != 0.0 {
                return Err(parse_err(
                    line_no,
                    k + 1,
                    format!("not an integer: {:?}", fields[k]),
                ));
            }
            Ok(v as i64)
        };
        let frame = int(0)?;
        if frame < 1 {
            return Err(parse_err(
                line_no,
                1,
                format!("frame must be at least 1, got {frame}"),
            ));
        }
        let id = int(1)?;
        let (w, h) = (num(4)?, num(5)?);
        if w <= 0.0 {
            return Err(parse_err(line_no, 5, "width must be positive"));
        }
        if h <= 0.0 {
            return Err(parse_err(line_no, 6, "height must be positive"));
        }
        let opt = |k: usize, default: f64| {
            if k < fields.len() {
                num(k)
            } else {
                Ok(default)
            }
        };
        out.push(MotRecord {
            frame,
            id,
            left: num(2)?,
            top: num(3)?,
            w,
            h,
            conf: opt(6, 1.0)?,
            world: [opt(7, -1.0)?, opt(8, -1.0)?, opt(9, -1.0)?],
        });
    }
    Ok(out)
}

pub fn parse_mot_file(path: &Path) -> Result<Vec<MotRecord>> {
    parse_mot_str(&std::fs::read_to_string(path)?)
}

/// Prints with at most two decimals and no trailing zeros.
pub fn format_number(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

pub fn format_records(records: &[MotRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let fields = [
            r.frame.to_string(),
            r.id.to_string(),
            format_number(r.left),
            format_number(r.top),
            format_number(r.w),
            format_number(r.h),
            format_number(r.conf),
            format_number(r.world[0]),
            format_number(r.world[1]),
            format_number(r.world[2]),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_mot_file(path: &Path, records: &[MotRecord]) -> Result<()> {
    std::fs::write(path, format_records(records))?;
    Ok(())
}
