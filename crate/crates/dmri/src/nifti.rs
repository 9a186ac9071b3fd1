//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.
//!
//! Reads little- or big-endian headers (detected through `sizeof_hdr`),
//! datatypes uint8, int16, int32, float32 and float64, and applies
//! `scl_slope`/`scl_inter`. Writes little-endian float32 or float64 with a
//! 352-byte offset and an sform carrying the volume's affine.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use dmri_core::volume::Affine;
use dmri_core::{LabelVolume, Mask, Volume4D};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::{Error, Result};

pub const HEADER_SIZE: usize = 348;
/// Header plus the four-byte extension flag.
pub const DATA_OFFSET: usize = HEADER_SIZE + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::Uint8,
            4 => Datatype::Int16,
            8 => Datatype::Int32,
            16 => Datatype::Float32,
            64 => Datatype::Float64,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Int32 | Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Replace non-finite samples with zero instead of failing.
    pub sanitize: bool,
}

/// Byte reader over a header in either byte order.
struct Fields<'a> {
    buf: &'a [u8],
    big: bool,
}

impl Fields<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        if self.big {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }
}

fn malformed(field: &'static str, reason: impl Into<String>) -> Error {
    Error::MalformedHeader { field, reason: reason.into() }
}

fn load_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(Error::io(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(Error::io(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume4D> {
    read_nifti_with(path, ReadOptions::default())
}

pub fn read_nifti_with(path: impl AsRef<Path>, opts: ReadOptions) -> Result<Volume4D> {
    decode(&load_bytes(path.as_ref())?, opts)
}

/// Decode an uncompressed NIfTI-1 byte image.
pub fn decode(buf: &[u8], opts: ReadOptions) -> Result<Volume4D> {
    if buf.len() < HEADER_SIZE {
        return Err(malformed("sizeof_hdr", format!("file has only {} bytes", buf.len())));
    }
    let le = i32::from_le_bytes(buf[0..4].try_into().unwrap());
    let be = i32::from_be_bytes(buf[0..4].try_into().unwrap());
    let big = match (le, be) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(malformed("sizeof_hdr", format!("expected 348, found {le}"))),
    };
    let h = Fields { buf, big };
    let magic: [u8; 4] = buf[344..348].try_into().unwrap();
    if &magic != b"n+1\0" {
        return Err(Error::UnsupportedMagic(magic));
    }

    let ndim = h.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(malformed("dim", format!("dim[0] = {ndim} outside 1..=7")));
    }
    let mut dims = [1usize; 4];
    for axis in 0..ndim as usize {
        let d = h.i16(42 + 2 * axis);
        if d < 1 {
            return Err(malformed("dim", format!("dim[{}] = {d} is not positive", axis + 1)));
        }
        if axis < 4 {
            dims[axis] = d as usize;
        } else if d > 1 {
            return Err(malformed("dim", format!("dim[{}] = {d}; at most 4 dimensions are supported", axis + 1)));
        }
    }

    let datatype = Datatype::from_code(h.i16(70))?;
    let bitpix = h.i16(72);
    if bitpix as usize != 8 * datatype.bytes() {
        return Err(malformed("bitpix", format!("{bitpix} does not match datatype {}", datatype.code())));
    }
    let pixdim: Vec<f32> = (0..8).map(|i| h.f32(76 + 4 * i)).collect();
    let mut spacing = [0.0; 3];
    for axis in 0..3 {
        let s = f64::from(pixdim[axis + 1]).abs();
        if !(s > 0.0 && s.is_finite()) {
            return Err(malformed("pixdim", format!("pixdim[{}] = {} is not a positive spacing", axis + 1, pixdim[axis + 1])));
        }
        spacing[axis] = s;
    }
    let vox_offset = h.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(malformed("vox_offset", format!("{vox_offset} is not an integer offset past the header")));
    }
    let offset = vox_offset as usize;
    let (slope, inter) = (f64::from(h.f32(112)), f64::from(h.f32(116)));
    let affine = header_affine(&h, &pixdim, spacing);

    let count: usize = dims.iter().product();
    let expected = count * datatype.bytes();
    let payload = buf.get(offset..).unwrap_or(&[]);
    if payload.len() < expected {
        return Err(Error::Truncated { expected, actual: payload.len() });
    }
    let mut data = decode_samples(&payload[..expected], datatype, big);
    if slope != 0.0 && slope.is_finite() && inter.is_finite() {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    let vol = if opts.sanitize {
        Volume4D::new_sanitized(dims, spacing, affine, data)?
    } else {
        Volume4D::new(dims, spacing, affine, data)?
    };
    Ok(vol)
}

fn decode_samples(bytes: &[u8], datatype: Datatype, big: bool) -> Vec<f64> {
    fn order<const N: usize>(chunk: &[u8], big: bool) -> [u8; N] {
        let mut b: [u8; N] = chunk.try_into().unwrap();
        if big {
            b.reverse();
        }
        b
    }
    let n = datatype.bytes();
    let chunks = bytes.chunks_exact(n);
    match datatype {
        Datatype::Uint8 => bytes.iter().map(|&b| f64::from(b)).collect(),
        Datatype::Int16 => chunks.map(|c| f64::from(i16::from_le_bytes(order(c, big)))).collect(),
        Datatype::Int32 => chunks.map(|c| f64::from(i32::from_le_bytes(order(c, big)))).collect(),
        Datatype::Float32 => chunks.map(|c| f64::from(f32::from_le_bytes(order(c, big)))).collect(),
        Datatype::Float64 => chunks.map(|c| f64::from_le_bytes(order(c, big))).collect(),
    }
}

/// sform when present, else qform, else a plain scaling by voxel size.
fn header_affine(h: &Fields, pixdim: &[f32], spacing: [f64; 3]) -> Affine {
    let (qform, sform) = (h.i16(252), h.i16(254));
    let mut a = dmri_core::volume::identity_affine(spacing);
    if sform > 0 {
        for r in 0..3 {
            for c in 0..4 {
                a[r][c] = f64::from(h.f32(280 + 16 * r + 4 * c));
            }
        }
    } else if qform > 0 {
        let (b, c, d) = (f64::from(h.f32(256)), f64::from(h.f32(260)), f64::from(h.f32(264)));
        let aa = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let rot = [
            [aa * aa + b * b - c * c - d * d, 2.0 * (b * c - aa * d), 2.0 * (b * d + aa * c)],
            [2.0 * (b * c + aa * d), aa * aa + c * c - b * b - d * d, 2.0 * (c * d - aa * b)],
            [2.0 * (b * d - aa * c), 2.0 * (c * d + aa * b), aa * aa + d * d - b * b - c * c],
        ];
        let scale = [spacing[0], spacing[1], spacing[2] * qfac];
        for r in 0..3 {
            for col in 0..3 {
                a[r][col] = rot[r][col] * scale[col];
            }
            a[r][3] = f64::from(h.f32(268 + 4 * r));
        }
    }
    a
}

/// Encode a volume as an uncompressed little-endian NIfTI-1 image.
pub fn encode(vol: &Volume4D, datatype: Datatype) -> Result<Vec<u8>> {
    if !matches!(datatype, Datatype::Float32 | Datatype::Float64) {
        return Err(Error::UnsupportedWriteDatatype);
    }
    let dims = vol.dims();
    for (axis, &d) in dims.iter().enumerate() {
        if d > i16::MAX as usize {
            return Err(Error::DimOverflow { axis, value: d });
        }
    }
    let mut h = vec![0u8; DATA_OFFSET];
    let put = |h: &mut Vec<u8>, at: usize, bytes: &[u8]| h[at..at + bytes.len()].copy_from_slice(bytes);
    put(&mut h, 0, &(HEADER_SIZE as i32).to_le_bytes());
    let ndim: i16 = if dims[3] > 1 { 4 } else { 3 };
    let mut dim = [1i16; 8];
    dim[0] = ndim;
    for axis in 0..4 {
        dim[axis + 1] = dims[axis] as i16;
    }
    for (i, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut h, 70, &datatype.code().to_le_bytes());
    put(&mut h, 72, &((8 * datatype.bytes()) as i16).to_le_bytes());
    let spacing = vol.spacing();
    let pixdim = [1.0, spacing[0] as f32, spacing[1] as f32, spacing[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut h, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut h, 108, &(DATA_OFFSET as f32).to_le_bytes());
    put(&mut h, 112, &1.0f32.to_le_bytes());
    // millimetres and seconds
    h[123] = 2 | 8;
    put(&mut h, 254, &1i16.to_le_bytes());
    let affine = vol.affine();
    for r in 0..3 {
        for c in 0..4 {
            put(&mut h, 280 + 16 * r + 4 * c, &(affine[r][c] as f32).to_le_bytes());
        }
    }
    put(&mut h, 344, b"n+1\0");

    let mut out = h;
    out.reserve(vol.data().len() * datatype.bytes());
    match datatype {
        Datatype::Float32 => vol.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        _ => vol.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

/// Write `vol`, gzip-compressed when the path ends in `.gz`.
pub fn write_nifti(vol: &Volume4D, path: impl AsRef<Path>, datatype: Datatype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(vol, datatype)?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let body = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish()).map_err(Error::io(path))?
    } else {
        bytes
    };
    fs::write(path, body).map_err(Error::io(path))
}

/// A mask image: any nonzero sample is inside.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let vol = read_nifti(path)?;
    let n = vol.voxels();
    Ok(Mask::new(vol.spatial_dims(), vol.data()[..n].iter().map(|&v| v != 0.0).collect())?)
}

/// A label image of non-negative integer region IDs.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let vol = read_nifti(path)?;
    let n = vol.voxels();
    let values = vol.data()[..n]
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value >= 0.0 && value.fract() == 0.0 && value <= f64::from(u32::MAX) {
                Ok(value as u32)
            } else {
                Err(Error::BadLabel { index, value })
            }
        })
        .collect::<Result<Vec<u32>>>()?;
    Ok(LabelVolume::new(vol.spatial_dims(), values)?)
}

pub fn write_labels(labels: &LabelVolume, template: &Volume4D, path: impl AsRef<Path>) -> Result<()> {
    let data = labels.values().iter().map(|&l| f64::from(l)).collect();
    write_nifti(&template.with_data(1, data)?, path, Datatype::Float32)
}
