//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reader and writer.
//!
//! Only the header fields the generator needs are interpreted: `dim[0..3]`,
//! `pixdim[1..3]`, `datatype`, `scl_slope`/`scl_inter` and the orientation
//! block, which is carried through untouched. Voxel types are limited to
//! `uint8`, `int16` and `float32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::{Compression, GzBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, CtVolume, LabelMask, Orientation, VoxelGrid};

pub const HEADER_SIZE: usize = 348;
const NIFTI2_HEADER_SIZE: i32 = 540;
const DATA_OFFSET: usize = 352;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// On-disk voxel types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::Uint8),
            4 => Ok(Datatype::Int16),
            16 => Ok(Datatype::Float32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum RawData {
    Uint8(Vec<u8>),
    Int16(Vec<i16>),
    Float32(Vec<f32>),
}

/// A decoded image before it is interpreted as a volume or a mask.
#[derive(Clone, Debug)]
struct RawImage {
    dims: [usize; 3],
    spacing: [f64; 3],
    orientation: Orientation,
    slope: f32,
    inter: f32,
    data: RawData,
}

impl RawImage {
    fn scaling(&self) -> Option<(f64, f64)> {
        let identity = self.slope == 1.0 && self.inter == 0.0;
        (self.slope != 0.0 && self.slope.is_finite() && self.inter.is_finite() && !identity)
            .then_some((self.slope as f64, self.inter as f64))
    }

    fn values_f32(&self) -> Vec<f32> {
        let raw: Vec<f32> = match &self.data {
            RawData::Uint8(v) => v.iter().map(|&x| x as f32).collect(),
            RawData::Int16(v) => v.iter().map(|&x| x as f32).collect(),
            RawData::Float32(v) => v.clone(),
        };
        match self.scaling() {
            Some((s, i)) => raw.into_iter().map(|x| (x as f64 * s + i) as f32).collect(),
            None => raw,
        }
    }

    fn grid<T: Copy>(&self, data: Vec<T>) -> Result<VoxelGrid<T>> {
        Ok(VoxelGrid::new(self.dims, self.spacing, data)?.with_orientation(self.orientation.clone()))
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Strips an optional gzip container.
pub fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[..2] == GZIP_MAGIC {
        let mut out = Vec::new();
        MultiGzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::CorruptHeader(format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn decode(bytes: &[u8]) -> Result<RawImage> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::CorruptHeader(format!(
            "file has {} bytes, header needs {HEADER_SIZE}",
            bytes.len()
        )));
    }
    match LittleEndian::read_i32(&bytes[0..4]) {
        348 => decode_with::<LittleEndian>(bytes),
        NIFTI2_HEADER_SIZE => Err(Error::UnsupportedFormat("NIfTI-2 headers are not supported".into())),
        _ if BigEndian::read_i32(&bytes[0..4]) == 348 => decode_with::<BigEndian>(bytes),
        _ if BigEndian::read_i32(&bytes[0..4]) == NIFTI2_HEADER_SIZE => {
            Err(Error::UnsupportedFormat("NIfTI-2 headers are not supported".into()))
        }
        other => Err(Error::CorruptHeader(format!("sizeof_hdr is {other}, expected 348"))),
    }
}

fn decode_with<B: ByteOrder>(bytes: &[u8]) -> Result<RawImage> {
    let magic = &bytes[344..348];
    if magic == b"ni1\0" {
        return Err(Error::UnsupportedFormat("two-file NIfTI (.hdr/.img) is not supported".into()));
    }
    if magic != b"n+1\0" {
        return Err(Error::CorruptHeader(format!("bad magic {magic:?}")));
    }

    let mut dim = [0i16; 8];
    for (k, d) in dim.iter_mut().enumerate() {
        *d = B::read_i16(&bytes[40 + 2 * k..]);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::CorruptHeader(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for a in 0..3 {
        if (a as i16) < ndim {
            let n = dim[a + 1];
            if n <= 0 {
                return Err(Error::InvalidGeometry(format!("dim[{}] = {n}", a + 1)));
            }
            dims[a] = n as usize;
        }
    }
    if (4..=ndim as usize).any(|k| dim[k] > 1) {
        return Err(Error::UnsupportedFormat("multi-frame volumes are not supported".into()));
    }

    let datatype = Datatype::from_code(B::read_i16(&bytes[70..]))?;
    let mut pixdim = [0f32; 8];
    for (k, p) in pixdim.iter_mut().enumerate() {
        *p = B::read_f32(&bytes[76 + 4 * k..]);
    }
    let mut spacing = [1f64; 3];
    for a in 0..3 {
        let s = pixdim[a + 1];
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidGeometry(format!("pixdim[{}] = {s}", a + 1)));
        }
        spacing[a] = s as f64;
    }
    let vox_offset = B::read_f32(&bytes[108..]);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::CorruptHeader(format!("vox_offset = {vox_offset}")));
    }
    let slope = B::read_f32(&bytes[112..]);
    let inter = B::read_f32(&bytes[116..]);

    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = B::read_f32(&bytes[280 + 16 * r + 4 * c..]);
        }
    }
    let orientation = Orientation {
        qform_code: B::read_i16(&bytes[252..]),
        sform_code: B::read_i16(&bytes[254..]),
        quatern: [B::read_f32(&bytes[256..]), B::read_f32(&bytes[260..]), B::read_f32(&bytes[264..])],
        qoffset: [B::read_f32(&bytes[268..]), B::read_f32(&bytes[272..]), B::read_f32(&bytes[276..])],
        qfac: if pixdim[0] < 0.0 { -1.0 } else { 1.0 },
        srow,
        xyzt_units: bytes[123],
    };

    let n = dims[0] * dims[1] * dims[2];
    let start = vox_offset as usize;
    let end = start + n * datatype.bytes_per_voxel();
    if bytes.len() < end {
        return Err(Error::CorruptHeader(format!(
            "voxel data truncated: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    let payload = &bytes[start..end];
    let data = match datatype {
        Datatype::Uint8 => RawData::Uint8(payload.to_vec()),
        Datatype::Int16 => {
            let mut v = vec![0i16; n];
            B::read_i16_into(payload, &mut v);
            RawData::Int16(v)
        }
        Datatype::Float32 => {
            let mut v = vec![0f32; n];
            B::read_f32_into(payload, &mut v);
            RawData::Float32(v)
        }
    };
    Ok(RawImage {
        dims,
        spacing,
        orientation,
        slope,
        inter,
        data,
    })
}

fn header_bytes(dims: [usize; 3], spacing: [f64; 3], orientation: &Orientation, datatype: Datatype) -> Result<Vec<u8>> {
    let mut h = vec![0u8; DATA_OFFSET];
    type E = LittleEndian;
    E::write_i32(&mut h[0..], HEADER_SIZE as i32);
    h[38] = b'r';
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for a in 0..3 {
        dim[a + 1] = i16::try_from(dims[a])
            .map_err(|_| Error::InvalidGeometry(format!("dimension {} exceeds NIfTI-1 limit", dims[a])))?;
    }
    for (k, d) in dim.iter().enumerate() {
        E::write_i16(&mut h[40 + 2 * k..], *d);
    }
    E::write_i16(&mut h[70..], datatype.code());
    E::write_i16(&mut h[72..], (datatype.bytes_per_voxel() * 8) as i16);
    let mut pixdim = [1f32; 8];
    pixdim[0] = orientation.qfac;
    for a in 0..3 {
        pixdim[a + 1] = spacing[a] as f32;
    }
    for (k, p) in pixdim.iter().enumerate() {
        E::write_f32(&mut h[76 + 4 * k..], *p);
    }
    E::write_f32(&mut h[108..], DATA_OFFSET as f32);
    E::write_f32(&mut h[112..], 1.0);
    E::write_f32(&mut h[116..], 0.0);
    h[123] = orientation.xyzt_units;
    E::write_i16(&mut h[252..], orientation.qform_code);
    E::write_i16(&mut h[254..], orientation.sform_code);
    for k in 0..3 {
        E::write_f32(&mut h[256 + 4 * k..], orientation.quatern[k]);
        E::write_f32(&mut h[268 + 4 * k..], orientation.qoffset[k]);
    }
    let srow = orientation.srow;
    for (r, row) in srow.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            E::write_f32(&mut h[280 + 16 * r + 4 * c..], *v);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    // bytes 348..352: empty extension flag
    Ok(h)
}

fn finish(bytes: Vec<u8>, gzip: bool) -> Result<Vec<u8>> {
    if !gzip {
        return Ok(bytes);
    }
    // mtime 0 and a fixed OS byte keep compressed output byte-identical across runs.
    let mut enc = GzBuilder::new()
        .mtime(0)
        .operating_system(255)
        .write(Vec::with_capacity(bytes.len() / 4), Compression::fast());
    enc.write_all(&bytes).map_err(|e| Error::io("<gzip>", e))?;
    enc.finish().map_err(|e| Error::io("<gzip>", e))
}

/// Serializes a scalar grid with the given on-disk datatype.
///
/// Values are rounded to the nearest integer and saturated for integer types.
pub fn encode_grid(grid: &VoxelGrid<f32>, datatype: Datatype, gzip: bool) -> Result<Vec<u8>> {
    let mut bytes = header_bytes(grid.dims(), grid.spacing(), grid.orientation(), datatype)?;
    let data = grid.data();
    let offset = bytes.len();
    bytes.resize(offset + data.len() * datatype.bytes_per_voxel(), 0);
    let payload = &mut bytes[offset..];
    match datatype {
        Datatype::Uint8 => {
            for (dst, &v) in payload.iter_mut().zip(data) {
                *dst = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        Datatype::Int16 => {
            let v: Vec<i16> = data.iter().map(|&v| v.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16).collect();
            LittleEndian::write_i16_into(&v, payload);
        }
        Datatype::Float32 => LittleEndian::write_f32_into(data, payload),
    }
    finish(bytes, gzip)
}

pub fn encode_u8(grid: &VoxelGrid<u8>, gzip: bool) -> Result<Vec<u8>> {
    let mut bytes = header_bytes(grid.dims(), grid.spacing(), grid.orientation(), Datatype::Uint8)?;
    bytes.extend_from_slice(grid.data());
    finish(bytes, gzip)
}

pub fn decode_volume(bytes: Vec<u8>) -> Result<CtVolume> {
    let raw = decode(&maybe_gunzip(bytes)?)?;
    let values = raw.values_f32();
    Ok(CtVolume::new(raw.grid(values)?))
}

/// Decodes a scalar grid without any HU clamping.
pub fn decode_grid(bytes: Vec<u8>) -> Result<VoxelGrid<f32>> {
    let raw = decode(&maybe_gunzip(bytes)?)?;
    let values = raw.values_f32();
    raw.grid(values)
}

fn integer_labels(raw: &RawImage) -> Result<Vec<u8>> {
    if let (RawData::Uint8(v), None) = (&raw.data, raw.scaling()) {
        return Ok(v.clone());
    }
    raw.values_f32()
        .into_iter()
        .map(|v| {
            if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                Err(Error::InvalidParameter(format!("non-integer label value {v}")))
            } else {
                Ok(v as u8)
            }
        })
        .collect()
}

pub fn decode_mask(bytes: Vec<u8>) -> Result<LabelMask> {
    let raw = decode(&maybe_gunzip(bytes)?)?;
    let labels = integer_labels(&raw)?;
    LabelMask::new(raw.grid(labels)?)
}

fn wants_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<CtVolume> {
    decode_volume(read_bytes(path.as_ref())?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    decode_mask(read_bytes(path.as_ref())?)
}

/// Reads any integer mask and treats every non-zero voxel as foreground.
pub fn read_binary_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let raw = decode(&maybe_gunzip(read_bytes(path.as_ref())?)?)?;
    let labels = integer_labels(&raw)?;
    BinaryMask::new(raw.grid(labels.into_iter().map(|v| (v != 0) as u8).collect())?)
}

/// Writes a CT volume; `.gz` paths are gzip-compressed.
pub fn write_volume(path: impl AsRef<Path>, volume: &CtVolume, datatype: Datatype) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_grid(volume.grid(), datatype, wants_gzip(path))?)
}

pub fn write_grid(path: impl AsRef<Path>, grid: &VoxelGrid<f32>, datatype: Datatype) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_grid(grid, datatype, wants_gzip(path))?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &LabelMask) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_u8(mask.grid(), wants_gzip(path))?)
}

pub fn write_binary_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_u8(mask.grid(), wants_gzip(path))?)
}

/// Encodes a volume exactly as [`write_volume`] would for `path`.
pub fn volume_bytes_for(path: &Path, volume: &CtVolume, datatype: Datatype) -> Result<Vec<u8>> {
    encode_grid(volume.grid(), datatype, wants_gzip(path))
}

/// Encodes a label mask exactly as [`write_mask`] would for `path`.
pub fn mask_bytes_for(path: &Path, mask: &LabelMask) -> Result<Vec<u8>> {
    encode_u8(mask.grid(), wants_gzip(path))
}
