//! On-disk and on-wire formats: PNG images, point lists, reports, readout
//! head files and the binary displacement dump.

use std::io::Cursor;
use std::path::Path;

use dragkit_core::engine::{EditReport, RgbImage};
use dragkit_core::geometry::{Pixel, PointPair, Vec2};
use dragkit_core::lwf::DisplacementField;
use dragkit_core::readout::{ReadoutHead, ReadoutParams, ReadoutShape};
use dragkit_core::softmask::SoftMask;
use image::{ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, PointIssue, Result};

pub const REPORT_FORMAT: &str = "dragkit-report";
pub const REPORT_VERSION: u32 = 1;
pub const HEAD_FORMAT: &str = "dragkit-readout-head";
pub const HEAD_VERSION: u32 = 1;
pub const DISPLACEMENT_MAGIC: &[u8; 4] = b"DKDF";
pub const DISPLACEMENT_VERSION: u32 = 1;

/// Decodes any PNG into 8-bit RGB.
pub fn decode_png(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let decoded = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png)
        .decode()
        .map_err(|e| e.to_string())?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    RgbImage::from_rgb8(w as usize, h as usize, decoded.as_raw()).map_err(|e| e.to_string())
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| AppError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    decode_png(&bytes).map_err(|message| AppError::Image {
        path: path.to_path_buf(),
        message,
    })
}

fn encode(bytes: &[u8], width: usize, height: usize, color: image::ExtendedColorType) -> Vec<u8> {
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut out),
        bytes,
        width as u32,
        height as u32,
        color,
    )
    .expect("in-memory PNG encoding of a well-sized buffer");
    out
}

pub fn encode_png(image: &RgbImage) -> Vec<u8> {
    encode(
        &image.to_rgb8(),
        image.width(),
        image.height(),
        image::ExtendedColorType::Rgb8,
    )
}

/// Grayscale PNG of the mask, `round(255 * M)`.
pub fn encode_mask_png(mask: &SoftMask) -> Vec<u8> {
    let (h, w) = mask.dims();
    encode(&mask.to_u8(), w, h, image::ExtendedColorType::L8)
}

/// Color preview of a latent displacement field blown up by `factor`:
/// red and green encode x and y around mid-gray, blue marks support.
pub fn encode_displacement_png(field: &DisplacementField, factor: usize) -> Vec<u8> {
    let (h, w) = (field.height(), field.width());
    let factor = factor.max(1);
    let scale = match field.max_norm() {
        n if n > 0.0 => 127.0 / n,
        _ => 0.0,
    };
    let channel = |v: f64| (128.0 + scale * v).round().clamp(0.0, 255.0) as u8;
    let (ow, oh) = (w * factor, h * factor);
    let mut bytes = Vec::with_capacity(3 * ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let (cx, cy) = (x / factor, y / factor);
            let v = field.get(cx, cy);
            let support = if field.supported(cx, cy) { 255 } else { 0 };
            bytes.extend_from_slice(&[channel(v.x), channel(v.y), support]);
        }
    }
    encode(&bytes, ow, oh, image::ExtendedColorType::Rgb8)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

/// One point pair as written in point files: `{"handle": [x, y], "target": [x, y]}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointEntry {
    pub handle: [i64; 2],
    pub target: [i64; 2],
}

impl From<PointPair> for PointEntry {
    fn from(p: PointPair) -> Self {
        Self {
            handle: [p.handle.x, p.handle.y],
            target: [p.target.x, p.target.y],
        }
    }
}

impl From<PointEntry> for PointPair {
    fn from(e: PointEntry) -> Self {
        PointPair::new(
            Pixel::new(e.handle[0], e.handle[1]),
            Pixel::new(e.target[0], e.target[1]),
        )
    }
}

/// Checks every pair against `width` x `height`, reporting all failures.
pub fn validate_pairs(
    pairs: &[PointPair],
    width: usize,
    height: usize,
) -> std::result::Result<(), Vec<PointIssue>> {
    if pairs.is_empty() {
        return Err(vec![PointIssue {
            index: None,
            message: "at least one pair is required".into(),
        }]);
    }
    let mut issues = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        for (name, px) in [("handle", p.handle), ("target", p.target)] {
            if !px.inside(height, width) {
                issues.push(PointIssue {
                    index: Some(i),
                    message: format!("{name} ({}, {}) outside {width}x{height} image", px.x, px.y),
                });
            }
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

/// Parses a JSON point list. Each entry is checked on its own so that one
/// malformed entry does not hide the others.
pub fn parse_points(text: &str) -> std::result::Result<Vec<PointPair>, Vec<PointIssue>> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| {
        vec![PointIssue {
            index: None,
            message: format!("not valid JSON: {e}"),
        }]
    })?;
    let serde_json::Value::Array(items) = raw else {
        return Err(vec![PointIssue {
            index: None,
            message: "expected a JSON array of {\"handle\": [x, y], \"target\": [x, y]}".into(),
        }]);
    };
    let mut pairs = Vec::with_capacity(items.len());
    let mut issues = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        match serde_json::from_value::<PointEntry>(item) {
            Ok(entry) => pairs.push(entry.into()),
            Err(e) => issues.push(PointIssue {
                index: Some(i),
                message: e.to_string(),
            }),
        }
    }
    if issues.is_empty() {
        Ok(pairs)
    } else {
        Err(issues)
    }
}

pub fn read_points(path: &Path) -> Result<Vec<PointPair>> {
    let fail = |issues| AppError::Points {
        path: Some(path.to_path_buf()),
        issues,
    };
    let text = std::fs::read_to_string(path).map_err(|e| {
        fail(vec![PointIssue {
            index: None,
            message: e.to_string(),
        }])
    })?;
    parse_points(&text).map_err(fail)
}

pub fn points_to_json(pairs: &[PointPair]) -> String {
    let entries: Vec<PointEntry> = pairs.iter().copied().map(PointEntry::from).collect();
    serde_json::to_string_pretty(&entries).expect("point entries serialize")
}

/// Versioned envelope around an [`EditReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub pairs: Vec<PointEntry>,
    #[serde(flatten)]
    pub report: EditReport,
}

impl ReportDocument {
    pub fn new(seed: u64, image: &RgbImage, pairs: &[PointPair], report: EditReport) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            seed,
            width: image.width(),
            height: image.height(),
            pairs: pairs.iter().copied().map(PointEntry::from).collect(),
            report,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let doc: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if doc.format != REPORT_FORMAT || doc.version != REPORT_VERSION {
            return Err(format!(
                "unsupported report {} v{}",
                doc.format, doc.version
            ));
        }
        Ok(doc)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadDocument {
    format: String,
    version: u32,
    shape: ReadoutShape,
    margin: f64,
    params: ReadoutParams,
}

pub fn head_to_json(head: &ReadoutHead) -> String {
    let doc = HeadDocument {
        format: HEAD_FORMAT.into(),
        version: HEAD_VERSION,
        shape: *head.shape(),
        margin: head.margin(),
        params: head.params().clone(),
    };
    serde_json::to_string(&doc).expect("head serializes")
}

/// Parses a head file and re-validates its parameter layout.
pub fn head_from_json(text: &str) -> std::result::Result<ReadoutHead, String> {
    let doc: HeadDocument = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if doc.format != HEAD_FORMAT {
        return Err(format!(
            "expected format {HEAD_FORMAT:?}, found {:?}",
            doc.format
        ));
    }
    if doc.version != HEAD_VERSION {
        return Err(format!("unsupported head file version {}", doc.version));
    }
    ReadoutHead::new(doc.shape, doc.params, doc.margin).map_err(|e| e.to_string())
}

pub fn read_head(path: &Path) -> Result<ReadoutHead> {
    let fail = |message| AppError::Head {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    head_from_json(&text).map_err(fail)
}

/// Little-endian dump: magic, version, width, height (u32 each), then
/// `x, y` as f64 per cell in row-major order, then one support byte per cell.
pub fn encode_displacement(field: &DisplacementField) -> Vec<u8> {
    let cells = field.width() * field.height();
    let mut out = Vec::with_capacity(16 + 17 * cells);
    out.extend_from_slice(DISPLACEMENT_MAGIC);
    for v in [
        DISPLACEMENT_VERSION,
        field.width() as u32,
        field.height() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in field.vectors() {
        out.extend_from_slice(&v.x.to_le_bytes());
        out.extend_from_slice(&v.y.to_le_bytes());
    }
    out.extend(field.support().iter().map(|&s| s as u8));
    out
}

pub fn decode_displacement(bytes: &[u8]) -> std::result::Result<DisplacementField, String> {
    let header = bytes.get(..16).ok_or("truncated header")?;
    if &header[..4] != DISPLACEMENT_MAGIC {
        return Err("bad magic".into());
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    if word(4) != DISPLACEMENT_VERSION as usize {
        return Err(format!("unsupported version {}", word(4)));
    }
    let (w, h) = (word(8), word(12));
    let cells = w.checked_mul(h).ok_or("dimensions overflow")?;
    if bytes.len() != 16 + 17 * cells {
        return Err(format!(
            "expected {} bytes for {w}x{h}, found {}",
            16 + 17 * cells,
            bytes.len()
        ));
    }
    let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let vectors = (0..cells)
        .map(|k| Vec2::new(f(16 + 16 * k), f(24 + 16 * k)))
        .collect();
    let support = bytes[16 + 16 * cells..].iter().map(|&b| b != 0).collect();
    DisplacementField::from_parts(h, w, vectors, support).map_err(|e| e.to_string())
}
