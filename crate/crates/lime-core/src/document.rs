//! Grayscale raster documents, PSNR similarity and split/join tiling.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest dimension that still exposes enough frequency-domain
/// structure for embedding.
pub const MIN_DIMENSION: u32 = 16;

/// Default PSNR threshold (dB) for the similarity predicate.
pub const DEFAULT_SIMILARITY_DB: f64 = 30.0;

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("incomparable documents: {0}x{1} vs {2}x{3}")]
    Incomparable(u32, u32, u32, u32),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid join: {0}")]
    InvalidJoin(String),
    #[error("document too small: {width}x{height} (minimum {MIN_DIMENSION}x{MIN_DIMENSION})")]
    TooSmall { width: u32, height: u32 },
    #[error("pixel buffer holds {got} samples, expected {width}x{height} = {expected}")]
    PixelCount {
        width: u32,
        height: u32,
        got: usize,
        expected: usize,
    },
    #[error("invalid pgm: {0}")]
    InvalidPgm(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// An 8-bit grayscale raster image, the unit that is watermarked,
/// split, transferred and leaked.
#[derive(Clone, PartialEq, Eq)]
pub struct Document {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Document {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Document")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Document {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, DocumentError> {
        if width < MIN_DIMENSION || height < MIN_DIMENSION {
            return Err(DocumentError::TooSmall { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(DocumentError::PixelCount {
                width,
                height,
                got: pixels.len(),
                expected,
            });
        }
        Ok(Document {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn same_dimensions(&self, other: &Document) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pixel values as `f64`, the working representation of the DCT path.
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }

    /// Builds a document from real-valued samples, rounding to the
    /// nearest integer and clamping to `[0, 255]`.
    pub fn from_f64(width: u32, height: u32, samples: &[f64]) -> Result<Self, DocumentError> {
        let pixels = samples
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        Document::new(width, height, pixels)
    }

    /// Copies the rectangle at `(x, y)` with size `w x h` into a new
    /// document.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Document, DocumentError> {
        if x + w > self.width || y + h > self.height {
            return Err(DocumentError::InvalidSplit(format!(
                "region {w}x{h}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w as usize * h as usize);
        for row in y..y + h {
            let start = (row * self.width + x) as usize;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize]);
        }
        Document::new(w, h, pixels)
    }

    /// Serializes to binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<(), DocumentError> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.pixels.len() + 32);
        self.write_pgm(&mut buf).expect("writing to Vec");
        buf
    }

    /// Parses binary PGM. Only maxval 255 is accepted; comments and
    /// arbitrary whitespace in the header are tolerated.
    pub fn read_pgm<R: Read>(mut input: R) -> Result<Self, DocumentError> {
        let mut data = Vec::new();
        input.read_to_end(&mut data)?;
        Document::from_pgm_bytes(&data)
    }

    pub fn from_pgm_bytes(data: &[u8]) -> Result<Self, DocumentError> {
        let mut pos = 0usize;
        let mut next_token = |data: &[u8]| -> Result<String, DocumentError> {
            // skip whitespace and '#' comments
            loop {
                while pos < data.len() && data[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < data.len() && data[pos] == b'#' {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(DocumentError::InvalidPgm("truncated header".into()));
            }
            Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
        };

        let magic = next_token(data)?;
        if magic != "P5" {
            return Err(DocumentError::InvalidPgm(format!(
                "expected P5 magic, found {magic:?}"
            )));
        }
        let width: u32 = next_token(data)?
            .parse()
            .map_err(|_| DocumentError::InvalidPgm("bad width".into()))?;
        let height: u32 = next_token(data)?
            .parse()
            .map_err(|_| DocumentError::InvalidPgm("bad height".into()))?;
        let maxval: u32 = next_token(data)?
            .parse()
            .map_err(|_| DocumentError::InvalidPgm("bad maxval".into()))?;
        if maxval != 255 {
            return Err(DocumentError::InvalidPgm(format!(
                "unsupported maxval {maxval}, only 255"
            )));
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let expected = width as usize * height as usize;
        if data.len() < pos + expected {
            return Err(DocumentError::InvalidPgm(format!(
                "raster truncated: need {expected} bytes, have {}",
                data.len().saturating_sub(pos)
            )));
        }
        if data.len() > pos + expected {
            return Err(DocumentError::InvalidPgm("trailing bytes after raster".into()));
        }
        Document::new(width, height, data[pos..pos + expected].to_vec())
    }
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical documents.
pub fn psnr(a: &Document, b: &Document) -> Result<f64, DocumentError> {
    if !a.same_dimensions(b) {
        return Err(DocumentError::Incomparable(
            a.width, a.height, b.width, b.height,
        ));
    }
    let mse: f64 = a
        .pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.pixels.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
    }
}

/// The similarity predicate: documents are similar when their PSNR
/// meets the threshold.
pub fn similarity(a: &Document, b: &Document, threshold_db: f64) -> Result<bool, DocumentError> {
    Ok(psnr(a, b)? >= threshold_db)
}

/// Tiling of a document into an `rows x cols` grid of equally sized
/// parts, in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitGeometry {
    pub n: usize,
    pub rows: u32,
    pub cols: u32,
    pub part_width: u32,
    pub part_height: u32,
}

impl SplitGeometry {
    /// Square grid: `n` must be a perfect square whose root divides both
    /// dimensions.
    pub fn square(width: u32, height: u32, n: usize) -> Result<Self, DocumentError> {
        if n == 0 {
            return Err(DocumentError::InvalidSplit("n must be positive".into()));
        }
        let root = (n as f64).sqrt().round() as usize;
        if root * root != n {
            return Err(DocumentError::InvalidSplit(format!(
                "{n} is not a perfect square"
            )));
        }
        SplitGeometry::grid(width, height, root as u32, root as u32)
    }

    /// Explicit `rows x cols` grid. Used directly when the part count is
    /// not a perfect square but the document aspect keeps tiles square
    /// (e.g. 8 parts of a 128x64 image as a 2x4 grid).
    pub fn grid(width: u32, height: u32, rows: u32, cols: u32) -> Result<Self, DocumentError> {
        if rows == 0 || cols == 0 {
            return Err(DocumentError::InvalidSplit("empty grid".into()));
        }
        if width % cols != 0 || height % rows != 0 {
            return Err(DocumentError::InvalidSplit(format!(
                "{cols}x{rows} grid does not divide {width}x{height}"
            )));
        }
        let part_width = width / cols;
        let part_height = height / rows;
        if part_width < MIN_DIMENSION || part_height < MIN_DIMENSION {
            return Err(DocumentError::InvalidSplit(format!(
                "parts of {part_width}x{part_height} are below the {MIN_DIMENSION} minimum"
            )));
        }
        Ok(SplitGeometry {
            n: rows as usize * cols as usize,
            rows,
            cols,
            part_width,
            part_height,
        })
    }

    pub fn document_width(&self) -> u32 {
        self.part_width * self.cols
    }

    pub fn document_height(&self) -> u32 {
        self.part_height * self.rows
    }

    /// Grid position of part `i` (0-based, row-major).
    pub fn position(&self, i: usize) -> (u32, u32) {
        let row = i as u32 / self.cols;
        let col = i as u32 % self.cols;
        (row, col)
    }
}

/// Horizontal concatenation `left || right`, the composition operation
/// for documents published as part of a composed object.
pub fn concat_horizontal(left: &Document, right: &Document) -> Result<Document, DocumentError> {
    if left.height != right.height {
        return Err(DocumentError::Incomparable(
            left.width,
            left.height,
            right.width,
            right.height,
        ));
    }
    let width = left.width + right.width;
    let mut pixels = Vec::with_capacity(width as usize * left.height as usize);
    for y in 0..left.height as usize {
        pixels.extend_from_slice(
            &left.pixels[y * left.width as usize..(y + 1) * left.width as usize],
        );
        pixels.extend_from_slice(
            &right.pixels[y * right.width as usize..(y + 1) * right.width as usize],
        );
    }
    Document::new(width, left.height, pixels)
}

/// Splits a document into `n` equally sized square-grid tiles.
pub fn split(doc: &Document, n: usize) -> Result<Vec<Document>, DocumentError> {
    let geometry = SplitGeometry::square(doc.width, doc.height, n)?;
    split_with(doc, &geometry)
}

/// Splits along an explicit geometry.
pub fn split_with(doc: &Document, geometry: &SplitGeometry) -> Result<Vec<Document>, DocumentError> {
    if geometry.document_width() != doc.width || geometry.document_height() != doc.height {
        return Err(DocumentError::InvalidSplit(format!(
            "geometry for {}x{} applied to {}x{}",
            geometry.document_width(),
            geometry.document_height(),
            doc.width,
            doc.height
        )));
    }
    let mut parts = Vec::with_capacity(geometry.n);
    for i in 0..geometry.n {
        let (row, col) = geometry.position(i);
        parts.push(doc.crop(
            col * geometry.part_width,
            row * geometry.part_height,
            geometry.part_width,
            geometry.part_height,
        )?);
    }
    Ok(parts)
}

/// Inverse of [`split_with`] under the same geometry.
pub fn join(parts: &[Document], geometry: &SplitGeometry) -> Result<Document, DocumentError> {
    if parts.len() != geometry.n {
        return Err(DocumentError::InvalidJoin(format!(
            "{} parts for an n={} geometry",
            parts.len(),
            geometry.n
        )));
    }
    for (i, part) in parts.iter().enumerate() {
        if part.width != geometry.part_width || part.height != geometry.part_height {
            return Err(DocumentError::InvalidJoin(format!(
                "part {i} is {}x{}, expected {}x{}",
                part.width, part.height, geometry.part_width, geometry.part_height
            )));
        }
    }
    let width = geometry.document_width();
    let height = geometry.document_height();
    let mut pixels = vec![0u8; width as usize * height as usize];
    for (i, part) in parts.iter().enumerate() {
        let (row, col) = geometry.position(i);
        let x0 = (col * geometry.part_width) as usize;
        let y0 = (row * geometry.part_height) as usize;
        for py in 0..geometry.part_height as usize {
            let src = py * geometry.part_width as usize;
            let dst = (y0 + py) * width as usize + x0;
            pixels[dst..dst + geometry.part_width as usize]
                .copy_from_slice(&part.pixels[src..src + geometry.part_width as usize]);
        }
    }
    Document::new(width, height, pixels)
}
