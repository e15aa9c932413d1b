//! Dense grid value types and their on-disk formats.
//!
//! Every grid is stored row-major in `(y, x, c)` order with the origin at the
//! top-left pixel. Images are exchanged as 8-bit PNG; arbitrary real tensors
//! use the little-endian `TGR1` container:
//!
//! ```text
//! "TGR1" | rank: u32 | dims: rank x u32 | payload: prod(dims) x f64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{ensure_same, Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"TGR1";

/// H x W x C grid of intensities.
///
/// Loaded images hold values in `[0, 1]`; intermediate results may leave that
/// range. Files only carry 1 or 3 channels, but in-memory images may have any
/// channel count (part-probability renders use one channel per part).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("image needs at least one channel".into()));
        }
        ensure_same("image data length", data.len(), height * width * channels)?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds an image from a per-pixel closure returning `channels` values.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        ensure_same(
            what,
            (self.height, self.width, self.channels),
            (other.height, other.width, other.channels),
        )
    }

    /// Single channel view; RGB is reduced with Rec.601 luma weights.
    pub fn to_luma(&self) -> Result<Image> {
        match self.channels {
            1 => Ok(self.clone()),
            3 => Ok(Image::from_fn(self.height, self.width, 1, |y, x, _| {
                0.299 * self.get(y, x, 0) + 0.587 * self.get(y, x, 1) + 0.114 * self.get(y, x, 2)
            })),
            c => Err(Error::Shape(format!("luma needs 1 or 3 channels, got {c}"))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Texture flow: one normalized `(u, v)` sampling coordinate per cell.
///
/// `u` addresses columns and `v` rows; `(-1, -1)` is the centre of the
/// top-left source pixel and `(1, 1)` the centre of the bottom-right one.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub coords: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, coords: Vec<[f64; 2]>) -> Result<Self> {
        ensure_same("flow length", coords.len(), height * width)?;
        Ok(Self {
            height,
            width,
            coords,
        })
    }

    pub fn filled(height: usize, width: usize, coord: [f64; 2]) -> Self {
        Self {
            height,
            width,
            coords: vec![coord; height * width],
        }
    }

    /// Flow whose cell `(y, x)` samples the source at the same relative
    /// position, i.e. the identity warp for equally sized grids.
    pub fn identity(height: usize, width: usize) -> Self {
        let mut coords = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                coords.push([normalized_center(x, width), normalized_center(y, height)]);
            }
        }
        Self {
            height,
            width,
            coords,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.coords.iter().flat_map(|c| c.iter().copied()).collect()
    }

    pub fn from_flat(height: usize, width: usize, flat: &[f64]) -> Result<Self> {
        ensure_same("flat flow length", flat.len(), 2 * height * width)?;
        Self::new(height, width, flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

/// Normalized coordinate of pixel centre `i` on an axis of `extent` pixels.
pub fn normalized_center(i: usize, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (extent - 1) as f64 - 1.0
    }
}

/// Positive per-pixel multipliers applied to a sampling image.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl VarianceMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        ensure_same("variance length", values.len(), height * width)?;
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Input(format!("variance values must be positive and finite, got {v}")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![1.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Loads an 8-bit grayscale or RGB PNG as values `byte / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let decoded = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png decode: {e}")))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(Error::Format(format!(
                "unsupported pixel format {:?}; only 8-bit gray or RGB",
                other.color()
            )))
        }
    };
    let data = raw.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Image::new(height, width, channels, data)
}

/// Clamp to `[0, 1]`, then round half up to a byte.
#[inline]
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    use image::ImageEncoder;

    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::Format(format!("png output needs 1 or 3 channels, got {c}"))),
    };
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&bytes, img.width as u32, img.height as u32, color)
        .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    Ok(out)
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_png(img)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn encode_tensor(dims: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let expected: usize = dims.iter().product();
    ensure_same("tensor data length", data.len(), expected)?;
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 8 * data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&u32_len(dims.len())?.to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&u32_len(d)?.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Capacity(format!("{n} does not fit in u32")))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut cursor = bytes;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(Error::Format(format!("truncated tensor: missing {what}")));
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Ok(head)
    };
    if take(4, "magic")? != TENSOR_MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let read_u32 = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    let rank = read_u32(take(4, "rank")?);
    let mut dims = Vec::with_capacity(rank.min(64));
    for _ in 0..rank {
        dims.push(read_u32(take(4, "dims")?));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor dims overflow".into()))?;
    if cursor.len() != count * 8 {
        return Err(Error::Format(format!(
            "payload is {} bytes, dims require {}",
            cursor.len(),
            count * 8
        )));
    }
    let data = cursor
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((dims, data))
}

pub fn write_tensor(dims: &[usize], data: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_tensor(dims, data)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Writes through a sibling temp file and a rename so readers never observe a
/// partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
