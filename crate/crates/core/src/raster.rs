//! Dense row-major rasters and the on-disk formats used to exchange them.
//!
//! Two formats are supported:
//!
//! * PFM (`Pf`, single channel, 32-bit float), written little-endian and
//!   read in either byte order. Rows are stored bottom row first.
//! * Single-band, uncompressed, striped GeoTIFF (float32 or uint16), read
//!   only. Georeferencing is taken from the `ModelTiepoint`,
//!   `ModelPixelScale` and `GeoKeyDirectory` tags.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed PFM: {0}")]
    MalformedPfm(String),
    #[error("unsupported TIFF: {0}")]
    UnsupportedTiff(String),
    #[error("TIFF decoding failed: {0}")]
    Tiff(#[from] tiff::TiffError),
    #[error("raster size mismatch: expected {expected:?}, got {got:?}")]
    SizeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Row-major raster of `width × height` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::SizeMismatch {
                expected: (width, height),
                got: (data.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    /// Sample with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, col: isize, row: isize) -> T {
        let c = col.clamp(0, self.width as isize - 1) as usize;
        let r = row.clamp(0, self.height as isize - 1) as usize;
        self.get(c, r)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy of the window `[col0, col0 + width) × [row0, row0 + height)`;
    /// samples outside the source take `fill`.
    pub fn window(&self, col0: isize, row0: isize, width: usize, height: usize, fill: T) -> Self {
        Self::from_fn(width, height, |c, r| {
            let sc = col0 + c as isize;
            let sr = row0 + r as isize;
            if sc < 0 || sr < 0 || sc >= self.width as isize || sr >= self.height as isize {
                fill
            } else {
                self.get(sc as usize, sr as usize)
            }
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize a single-channel float raster as little-endian PFM.
pub fn encode_pfm(raster: &Raster<f32>) -> Vec<u8> {
    let header = format!("Pf\n{} {}\n-1.0\n", raster.width, raster.height);
    let mut out = Vec::with_capacity(header.len() + raster.data.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for row in (0..raster.height).rev() {
        for v in raster.row(row) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse a single-channel PFM. A negative scale marks little-endian data,
/// a positive one big-endian.
pub fn decode_pfm(bytes: &[u8]) -> Result<Raster<f32>, RasterError> {
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String, RasterError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(RasterError::MalformedPfm("truncated header".into()));
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| RasterError::MalformedPfm("non-ascii header".into()))?
            .to_string();
        Ok(tok)
    };
    let magic = next_token(bytes)?;
    if magic != "Pf" {
        return Err(RasterError::MalformedPfm(format!(
            "expected single-channel magic 'Pf', found '{magic}'"
        )));
    }
    let parse_dim = |t: String| {
        t.parse::<usize>()
            .map_err(|_| RasterError::MalformedPfm(format!("bad dimension '{t}'")))
    };
    let width = parse_dim(next_token(bytes)?)?;
    let height = parse_dim(next_token(bytes)?)?;
    let scale_tok = next_token(bytes)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| RasterError::MalformedPfm(format!("bad scale '{scale_tok}'")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(RasterError::MalformedPfm("scale must be nonzero".into()));
    }
    let little = scale < 0.0;
    // exactly one whitespace byte separates the header from the payload
    let data_start = pos + 1;
    let expected = width * height * 4;
    if bytes.len() < data_start + expected {
        return Err(RasterError::MalformedPfm(format!(
            "payload has {} bytes, expected {expected}",
            bytes.len().saturating_sub(data_start)
        )));
    }
    let payload = &bytes[data_start..data_start + expected];
    let mut data = vec![0f32; width * height];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let file_row = i / width.max(1);
        let col = i % width.max(1);
        let row = height - 1 - file_row;
        data[row * width + col] = v;
    }
    Raster::from_vec(width, height, data)
}

pub fn write_pfm(path: &Path, raster: &Raster<f32>) -> Result<(), RasterError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_pfm(raster)).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_pfm(path: &Path) -> Result<Raster<f32>, RasterError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    decode_pfm(&bytes)
}

/// Georeferencing read from GeoTIFF tags. Pixel-is-area convention:
/// `origin_x, origin_y` is the upper-left corner of the upper-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTiffInfo {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
    /// EPSG code from `ProjectedCSTypeGeoKey`, when present.
    pub epsg: Option<u32>,
    /// Value of the `GDAL_NODATA` tag, when present.
    pub nodata: Option<f64>,
}

const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
const TAG_MODEL_TIEPOINT: u16 = 33922;
const TAG_GEO_KEY_DIRECTORY: u16 = 34735;
const TAG_GDAL_NODATA: u16 = 42113;
const GEOKEY_PROJECTED_CS_TYPE: u16 = 3072;

/// Read band 1 of a striped, uncompressed, single-band GeoTIFF as `f32`.
pub fn read_geotiff(path: &Path) -> Result<(Raster<f32>, Option<GeoTiffInfo>), RasterError> {
    use tiff::decoder::{Decoder, DecodingResult};
    use tiff::tags::Tag;

    let file = File::open(path).map_err(io_err(path))?;
    let mut dec = Decoder::new(BufReader::new(file))?;
    let (w, h) = dec.dimensions()?;
    let compression = dec.get_tag_u32(Tag::Compression).unwrap_or(1);
    if compression != 1 {
        return Err(RasterError::UnsupportedTiff(format!(
            "compression {compression} (only uncompressed is accepted)"
        )));
    }
    if dec.get_tag_u32(Tag::TileWidth).is_ok() {
        return Err(RasterError::UnsupportedTiff("tiled layout".into()));
    }
    let spp = dec.get_tag_u32(Tag::SamplesPerPixel).unwrap_or(1);
    if spp != 1 {
        return Err(RasterError::UnsupportedTiff(format!(
            "{spp} samples per pixel"
        )));
    }

    let scale = dec.get_tag_f64_vec(Tag::Unknown(TAG_MODEL_PIXEL_SCALE)).ok();
    let tie = dec.get_tag_f64_vec(Tag::Unknown(TAG_MODEL_TIEPOINT)).ok();
    let keys = dec.get_tag_u16_vec(Tag::Unknown(TAG_GEO_KEY_DIRECTORY)).ok();
    let nodata = dec
        .get_tag_ascii_string(Tag::Unknown(TAG_GDAL_NODATA))
        .ok()
        .and_then(|s| s.trim_matches(char::from(0)).trim().parse::<f64>().ok());

    let info = match (scale, tie) {
        (Some(s), Some(t)) if s.len() >= 2 && t.len() >= 6 => {
            let epsg = keys.and_then(|k| {
                k.get(4..)?.chunks_exact(4).find_map(|e| {
                    (e[0] == GEOKEY_PROJECTED_CS_TYPE && e[1] == 0).then_some(e[3] as u32)
                })
            });
            Some(GeoTiffInfo {
                origin_x: t[3] - t[0] * s[0],
                origin_y: t[4] + t[1] * s[1],
                pixel_size_x: s[0],
                pixel_size_y: s[1],
                epsg,
                nodata,
            })
        }
        _ => None,
    };

    let data: Vec<f32> = match dec.read_image()? {
        DecodingResult::F32(v) => v,
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        _ => {
            return Err(RasterError::UnsupportedTiff(
                "sample type must be float32 or uint16".into(),
            ))
        }
    };
    let raster = Raster::from_vec(w as usize, h as usize, data)?;
    Ok((raster, info))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_header_layout() {
        let r = Raster::from_vec(2, 1, vec![1.0f32, 2.0]).unwrap();
        let bytes = encode_pfm(&r);
        assert!(bytes.starts_with(b"Pf\n2 1\n-1.0\n"));
        assert_eq!(bytes.len(), 12 + 8);
    }

    #[test]
    fn pfm_rows_are_stored_bottom_up() {
        let r = Raster::from_vec(1, 2, vec![10.0f32, 20.0]).unwrap();
        let bytes = encode_pfm(&r);
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(payload[0..4].try_into().unwrap()), 20.0);
        assert_eq!(f32::from_le_bytes(payload[4..8].try_into().unwrap()), 10.0);
    }

    #[test]
    fn pfm_big_endian_is_accepted() {
        let mut bytes = b"Pf\n2 2\n1.0\n".to_vec();
        for v in [3.0f32, 4.0, 1.0, 2.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let r = decode_pfm(&bytes).unwrap();
        assert_eq!(r.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pfm_rejects_colour_and_truncation() {
        assert!(matches!(
            decode_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0"),
            Err(RasterError::MalformedPfm(_))
        ));
        assert!(matches!(
            decode_pfm(b"Pf\n4 4\n-1.0\n\0\0\0\0"),
            Err(RasterError::MalformedPfm(_))
        ));
    }

    #[test]
    fn window_fills_outside() {
        let r = Raster::from_fn(3, 3, |c, r| (r * 3 + c) as f32);
        let w = r.window(-1, 1, 3, 2, -1.0);
        assert_eq!(w.data(), &[-1.0, 3.0, 4.0, -1.0, 6.0, 7.0]);
    }
}
