//! Minutiae records: parsing, writing, and dataset directory loading.
//!
//! Two on-disk formats are supported. The plain-text format is one minutia
//! per line (`x y theta [quality]`, theta in radians), with `#` comments and
//! an optional leading `width height [dpi]` header line made of integers
//! only. The binary format follows the common fixed-layout minutia-triplet
//! record: a 24-byte header followed by one view of 6-byte minutiae.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// Slack accepted above 2π before an angle is rejected as non-radian input.
const ANGLE_SLACK: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum MinutiaeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {axis} = {value} outside declared bound {bound}")]
    Range {
        line: usize,
        axis: char,
        value: u32,
        bound: u32,
    },
    #[error("binary record truncated (needed {needed} bytes at offset {offset})")]
    Truncated { offset: usize, needed: usize },
    #[error("binary record: {0}")]
    Binary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinutiaeFormat {
    PlainText,
    IsoBinary,
}

/// A single minutia: pixel position plus direction in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct Minutia {
    pub x: u32,
    pub y: u32,
    /// Direction in `[0, 2π)`.
    pub theta: f64,
    /// Optional quality in `[0, 1]`. Carried through but not filtered on.
    pub quality: Option<f64>,
}

impl Minutia {
    pub fn new(x: u32, y: u32, theta: f64) -> Self {
        Minutia { x, y, theta: normalize_angle(theta), quality: None }
    }
}

/// Wrap an angle into `[0, 2π)`; exactly 2π maps to 0.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TWO_PI);
    if t >= TWO_PI {
        0.0
    } else {
        t
    }
}

/// One impression's worth of minutiae plus optional image metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinutiaeRecord {
    pub finger_id: String,
    pub impression_id: String,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub dpi: Option<u32>,
    pub minutiae: Vec<Minutia>,
}

impl MinutiaeRecord {
    /// Empty records are legal input; callers decide whether that matters.
    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    /// Parse the plain-text format. Identifiers are left empty; file-based
    /// callers fill them in from the file name.
    pub fn parse_text(input: &str) -> Result<MinutiaeRecord, MinutiaeError> {
        let mut record = MinutiaeRecord::default();
        let mut saw_data = false;
        for (idx, raw) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !saw_data {
                saw_data = true;
                if (fields.len() == 2 || fields.len() == 3) && fields.iter().all(|f| is_integer(f)) {
                    record.width = Some(parse_u32(fields[0], line_no, "width")?);
                    record.height = Some(parse_u32(fields[1], line_no, "height")?);
                    if fields.len() == 3 {
                        record.dpi = Some(parse_u32(fields[2], line_no, "dpi")?);
                    }
                    continue;
                }
            }
            record.minutiae.push(parse_minutia_line(&fields, line_no, &record)?);
        }
        Ok(record)
    }

    /// Parse the binary minutia-triplet format.
    pub fn parse_binary(bytes: &[u8]) -> Result<MinutiaeRecord, MinutiaeError> {
        parse_iso(bytes)
    }

    /// Render the plain-text format. Angles are written with nine decimal
    /// places so a parse/write cycle is byte-stable.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let (Some(w), Some(h)) = (self.width, self.height) {
            match self.dpi {
                Some(d) => writeln!(out, "{w} {h} {d}").unwrap(),
                None => writeln!(out, "{w} {h}").unwrap(),
            }
        }
        for m in &self.minutiae {
            match m.quality {
                Some(q) => writeln!(out, "{} {} {:.9} {:.9}", m.x, m.y, m.theta, q).unwrap(),
                None => writeln!(out, "{} {} {:.9}", m.x, m.y, m.theta).unwrap(),
            }
        }
        out
    }
}

fn is_integer(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

fn parse_u32(s: &str, line: usize, what: &str) -> Result<u32, MinutiaeError> {
    s.parse().map_err(|_| MinutiaeError::Parse {
        line,
        msg: format!("bad {what} value {s:?}"),
    })
}

fn parse_minutia_line(
    fields: &[&str],
    line: usize,
    record: &MinutiaeRecord,
) -> Result<Minutia, MinutiaeError> {
    if fields.len() != 3 && fields.len() != 4 {
        return Err(MinutiaeError::Parse {
            line,
            msg: format!("expected `x y theta [quality]`, got {} fields", fields.len()),
        });
    }
    let x = parse_u32(fields[0], line, "x")?;
    let y = parse_u32(fields[1], line, "y")?;
    let theta: f64 = fields[2].parse().map_err(|_| MinutiaeError::Parse {
        line,
        msg: format!("bad angle {:?}", fields[2]),
    })?;
    if !theta.is_finite() || theta < 0.0 || theta > TWO_PI + ANGLE_SLACK {
        return Err(MinutiaeError::Parse {
            line,
            msg: format!("angle {theta} out of range [0, 2\u{3c0}] (radians required)"),
        });
    }
    let quality = if fields.len() == 4 {
        let q: f64 = fields[3].parse().map_err(|_| MinutiaeError::Parse {
            line,
            msg: format!("bad quality {:?}", fields[3]),
        })?;
        if !(0.0..=1.0).contains(&q) {
            return Err(MinutiaeError::Parse {
                line,
                msg: format!("quality {q} outside [0, 1]"),
            });
        }
        Some(q)
    } else {
        None
    };
    if let Some(w) = record.width {
        if x >= w {
            return Err(MinutiaeError::Range { line, axis: 'x', value: x, bound: w });
        }
    }
    if let Some(h) = record.height {
        if y >= h {
            return Err(MinutiaeError::Range { line, axis: 'y', value: y, bound: h });
        }
    }
    Ok(Minutia { x, y, theta: normalize_angle(theta), quality })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MinutiaeError> {
        if self.pos + n > self.bytes.len() {
            return Err(MinutiaeError::Truncated { offset: self.pos, needed: n });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, MinutiaeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MinutiaeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MinutiaeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse_iso(bytes: &[u8]) -> Result<MinutiaeRecord, MinutiaeError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != b"FMR\0" {
        return Err(MinutiaeError::Binary(format!("bad magic {magic:?}")));
    }
    cur.take(4)?; // format version, not checked
    let total_len = cur.u32()? as usize;
    if total_len != bytes.len() {
        return Err(MinutiaeError::Binary(format!(
            "declared length {total_len} != actual {}",
            bytes.len()
        )));
    }
    cur.u16()?; // capture equipment
    let width = cur.u16()? as u32;
    let height = cur.u16()? as u32;
    let res_x = cur.u16()? as u32;
    cur.u16()?; // vertical resolution
    let views = cur.u8()?;
    cur.u8()?; // reserved
    if views == 0 {
        return Err(MinutiaeError::Binary("no finger views".into()));
    }
    if views > 1 {
        return Err(MinutiaeError::Binary(format!("{views} views; only single-view records supported")));
    }

    cur.u8()?; // finger position
    cur.u8()?; // view number / impression type
    cur.u8()?; // finger quality
    let count = cur.u8()? as usize;
    let mut minutiae = Vec::with_capacity(count);
    for _ in 0..count {
        let xw = cur.u16()?;
        let yw = cur.u16()?;
        let angle = cur.u8()?;
        let q = cur.u8()?;
        let x = (xw & 0x3fff) as u32;
        let y = (yw & 0x3fff) as u32;
        let line = minutiae.len() + 1;
        if width > 0 && x >= width {
            return Err(MinutiaeError::Range { line, axis: 'x', value: x, bound: width });
        }
        if height > 0 && y >= height {
            return Err(MinutiaeError::Range { line, axis: 'y', value: y, bound: height });
        }
        minutiae.push(Minutia {
            x,
            y,
            theta: normalize_angle(angle as f64 * (TWO_PI / 256.0)),
            quality: (q <= 100).then(|| q as f64 / 100.0),
        });
    }
    let ext = cur.u16()? as usize;
    cur.take(ext)?;
    if cur.pos != bytes.len() {
        return Err(MinutiaeError::Binary(format!(
            "{} trailing bytes after first view",
            bytes.len() - cur.pos
        )));
    }
    Ok(MinutiaeRecord {
        width: (width > 0).then_some(width),
        height: (height > 0).then_some(height),
        dpi: (res_x > 0).then_some(res_x),
        minutiae,
        ..MinutiaeRecord::default()
    })
}

/// Split a file stem like `17_3` into finger and impression identifiers.
fn ids_from_stem(stem: &str) -> (String, String) {
    match stem.rsplit_once('_') {
        Some((f, i)) if !f.is_empty() && !i.is_empty() => (f.to_string(), i.to_string()),
        _ => (stem.to_string(), String::new()),
    }
}

pub fn parse_minutiae_file(
    path: &Path,
    format: MinutiaeFormat,
) -> Result<MinutiaeRecord, MinutiaeError> {
    let mut record = match format {
        MinutiaeFormat::PlainText => {
            let text = std::fs::read_to_string(path).map_err(|source| MinutiaeError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            MinutiaeRecord::parse_text(&text)?
        }
        MinutiaeFormat::IsoBinary => {
            let bytes = std::fs::read(path).map_err(|source| MinutiaeError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            MinutiaeRecord::parse_binary(&bytes)?
        }
    };
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let (finger, impression) = ids_from_stem(stem);
    record.finger_id = finger;
    record.impression_id = impression;
    Ok(record)
}

pub fn write_minutiae_file(record: &MinutiaeRecord, path: &Path) -> Result<(), MinutiaeError> {
    std::fs::write(path, record.to_text()).map_err(|source| MinutiaeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load every `*.min` file in a directory, sorted by numeric finger and
/// impression identifiers where possible.
pub fn read_dataset_dir(dir: &Path) -> Result<Vec<MinutiaeRecord>, MinutiaeError> {
    let entries = std::fs::read_dir(dir).map_err(|source| MinutiaeError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("min"))
        .collect();
    paths.sort();
    let mut records = Vec::with_capacity(paths.len());
    for p in paths {
        records.push(parse_minutiae_file(&p, MinutiaeFormat::PlainText)?);
    }
    records.sort_by_key(|r| (sort_key(&r.finger_id), sort_key(&r.impression_id)));
    Ok(records)
}

fn sort_key(id: &str) -> (u64, String) {
    match id.parse::<u64>() {
        Ok(n) => (n, String::new()),
        Err(_) => (u64::MAX, id.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn parses_basic_line() {
        let r = MinutiaeRecord::parse_text("120 85 1.5708").unwrap();
        assert_eq!(r.minutiae.len(), 1);
        let m = &r.minutiae[0];
        assert_eq!((m.x, m.y), (120, 85));
        assert_abs_diff_eq!(m.theta, 1.5708, epsilon = 1e-12);
        assert!(m.quality.is_none());
    }

    #[test]
    fn full_circle_wraps_to_zero() {
        let r = MinutiaeRecord::parse_text("10 10 6.2832").unwrap();
        assert_abs_diff_eq!(r.minutiae[0].theta, 0.0, epsilon = 1e-4);
        let exact = format!("10 10 {TWO_PI}");
        let r = MinutiaeRecord::parse_text(&exact).unwrap();
        assert_eq!(r.minutiae[0].theta, 0.0);
    }

    #[test]
    fn header_comments_and_quality() {
        let text = "# extracted minutiae\n388 374 500\n12 30 0.5 0.91\n44 90 3.2\n";
        let r = MinutiaeRecord::parse_text(text).unwrap();
        assert_eq!((r.width, r.height, r.dpi), (Some(388), Some(374), Some(500)));
        assert_eq!(r.minutiae.len(), 2);
        assert_eq!(r.minutiae[0].quality, Some(0.91));
    }

    #[test]
    fn degrees_are_rejected() {
        assert!(MinutiaeRecord::parse_text("10 10 90.0").is_err());
        assert!(MinutiaeRecord::parse_text("10 10 -0.5").is_err());
    }

    #[test]
    fn out_of_bounds_coordinate() {
        let err = MinutiaeRecord::parse_text("100 100\n120 85 1.0\n").unwrap_err();
        assert!(matches!(err, MinutiaeError::Range { axis: 'x', value: 120, bound: 100, .. }));
    }

    #[test]
    fn empty_input_is_a_record_not_an_error() {
        let r = MinutiaeRecord::parse_text("# nothing here\n").unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn fifty_lines() {
        let mut text = String::new();
        for i in 0..50 {
            text.push_str(&format!("{} {} {:.4}\n", i * 3, i * 2, (i as f64) * 0.1 % 6.0));
        }
        let r = MinutiaeRecord::parse_text(&text).unwrap();
        assert_eq!(r.minutiae.len(), 50);
    }

    #[test]
    fn text_roundtrip() {
        let record = MinutiaeRecord {
            finger_id: String::new(),
            impression_id: String::new(),
            width: Some(388),
            height: Some(374),
            dpi: Some(500),
            minutiae: vec![
                Minutia { x: 12, y: 30, theta: 0.5, quality: Some(0.91) },
                Minutia { x: 44, y: 90, theta: 3.2, quality: None },
            ],
        };
        let text = record.to_text();
        let back = MinutiaeRecord::parse_text(&text).unwrap();
        assert_eq!(back.minutiae.len(), 2);
        for (a, b) in record.minutiae.iter().zip(&back.minutiae) {
            assert_eq!((a.x, a.y), (b.x, b.y));
            assert_abs_diff_eq!(a.theta, b.theta, epsilon = 1e-9);
        }
        // second rewrite is byte-stable
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn stem_splitting() {
        assert_eq!(ids_from_stem("17_3"), ("17".into(), "3".into()));
        assert_eq!(ids_from_stem("probe"), ("probe".into(), String::new()));
        assert_eq!(ids_from_stem("a_b_c"), ("a_b".into(), "c".into()));
    }

    fn iso_fixture(minutiae: &[(u16, u16, u8, u8)]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(b"FMR\0");
        v.extend_from_slice(b"20\0\0");
        let total = 24 + 4 + minutiae.len() * 6 + 2;
        v.extend_from_slice(&(total as u32).to_be_bytes());
        v.extend_from_slice(&0u16.to_be_bytes()); // capture equipment
        v.extend_from_slice(&388u16.to_be_bytes());
        v.extend_from_slice(&374u16.to_be_bytes());
        v.extend_from_slice(&500u16.to_be_bytes());
        v.extend_from_slice(&500u16.to_be_bytes());
        v.push(1); // views
        v.push(0);
        v.push(1); // finger position
        v.push(0);
        v.push(60); // view quality
        v.push(minutiae.len() as u8);
        for &(x, y, a, q) in minutiae {
            v.extend_from_slice(&x.to_be_bytes());
            v.extend_from_slice(&y.to_be_bytes());
            v.push(a);
            v.push(q);
        }
        v.extend_from_slice(&0u16.to_be_bytes()); // extended data length
        v
    }

    #[test]
    fn iso_parse() {
        let bytes = iso_fixture(&[(0x4000 | 120, 85, 64, 80), (30, 40, 0, 255)]);
        let r = MinutiaeRecord::parse_binary(&bytes).unwrap();
        assert_eq!((r.width, r.height, r.dpi), (Some(388), Some(374), Some(500)));
        assert_eq!(r.minutiae.len(), 2);
        // type bits are masked off the x coordinate
        assert_eq!((r.minutiae[0].x, r.minutiae[0].y), (120, 85));
        // 64/256 of a turn
        assert_abs_diff_eq!(r.minutiae[0].theta, TWO_PI / 4.0, epsilon = 1e-12);
        assert_eq!(r.minutiae[0].quality, Some(0.8));
        assert_eq!(r.minutiae[1].quality, None);
    }

    #[test]
    fn iso_truncation_and_magic() {
        let bytes = iso_fixture(&[(10, 10, 0, 50)]);
        assert!(matches!(
            MinutiaeRecord::parse_binary(&bytes[..bytes.len() - 4]),
            Err(MinutiaeError::Binary(_)) | Err(MinutiaeError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(MinutiaeRecord::parse_binary(&bad), Err(MinutiaeError::Binary(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn text_parser_never_panics(input in "\\PC*") {
                let _ = MinutiaeRecord::parse_text(&input);
            }

            #[test]
            fn binary_parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
                let _ = MinutiaeRecord::parse_binary(&bytes);
            }

            #[test]
            fn roundtrip_any_valid_record(
                minutiae in proptest::collection::vec(
                    (0u32..388, 0u32..374, 0.0f64..TWO_PI, proptest::option::of(0.0f64..=1.0)),
                    0..40
                ),
                dpi in proptest::option::of(100u32..1000),
            ) {
                let record = MinutiaeRecord {
                    width: Some(388),
                    height: Some(374),
                    dpi,
                    minutiae: minutiae
                        .into_iter()
                        .map(|(x, y, theta, quality)| Minutia { x, y, theta, quality })
                        .collect(),
                    ..MinutiaeRecord::default()
                };
                let back = MinutiaeRecord::parse_text(&record.to_text()).unwrap();
                prop_assert_eq!(back.minutiae.len(), record.minutiae.len());
                prop_assert_eq!((back.width, back.height, back.dpi), (record.width, record.height, dpi));
                for (a, b) in record.minutiae.iter().zip(&back.minutiae) {
                    prop_assert_eq!((a.x, a.y), (b.x, b.y));
                    prop_assert!((a.theta - b.theta).abs() <= 1e-9);
                    match (a.quality, b.quality) {
                        (Some(qa), Some(qb)) => prop_assert!((qa - qb).abs() <= 1e-9),
                        (None, None) => {}
                        _ => prop_assert!(false, "quality presence changed"),
                    }
                }
            }
        }
    }
}
