//! Single-file NIfTI-1 (`.nii` / `.nii.gz`) reading and writing.
//!
//! Only the little-endian `n+1` variant is handled. Orientation matrices are
//! parsed so the origin can be reported, but the data is never reoriented.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::field::DisplacementField;
use crate::volume::{Grid, LabelMask, TrunkMask, Volume};

pub const HEADER_SIZE: usize = 348;
/// Header plus the four-byte extension flag that precedes the data.
pub const DEFAULT_VOX_OFFSET: usize = 352;

/// NIFTI_INTENT_VECTOR, used for displacement fields.
pub const INTENT_VECTOR: i16 = 1007;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const INTENT_CODE: usize = 68;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

/// Voxel storage types this reader understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    UInt8,
    Int16,
    UInt16,
    Float32,
    Float64,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::UInt8 => 2,
            DataType::Int16 => 4,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
            DataType::UInt16 => 512,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => DataType::UInt8,
            4 => DataType::Int16,
            16 => DataType::Float32,
            64 => DataType::Float64,
            512 => DataType::UInt16,
            other => {
                return Err(Error::Unsupported(format!("NIfTI datatype code {other}")));
            }
        })
    }

    pub fn size(self) -> usize {
        match self {
            DataType::UInt8 => 1,
            DataType::Int16 | DataType::UInt16 => 2,
            DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }
}

/// The subset of header fields the toolkit uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    /// Extent of each used dimension (`dim[1..=dim[0]]`).
    pub shape: Vec<usize>,
    pub datatype: DataType,
    pub pixdim: [f32; 8],
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub intent_code: i16,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub descrip: String,
}

impl Header {
    fn new(shape: Vec<usize>, datatype: DataType, spacing: [f64; 3], origin: [f64; 3]) -> Self {
        let mut pixdim = [1.0f32; 8];
        pixdim[1] = spacing[0] as f32;
        pixdim[2] = spacing[1] as f32;
        pixdim[3] = spacing[2] as f32;
        let mut srow = [[0.0f32; 4]; 3];
        for a in 0..3 {
            srow[a][a] = spacing[a] as f32;
            srow[a][3] = origin[a] as f32;
        }
        Header {
            shape,
            datatype,
            pixdim,
            vox_offset: DEFAULT_VOX_OFFSET,
            scl_slope: 0.0,
            scl_inter: 0.0,
            intent_code: 0,
            qform_code: 0,
            sform_code: 1,
            quatern: [0.0; 3],
            qoffset: [origin[0] as f32, origin[1] as f32, origin[2] as f32],
            srow,
            descrip: String::new(),
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn spacing(&self) -> [f64; 3] {
        [1, 2, 3].map(|i| (self.pixdim[i] as f64).abs())
    }

    /// World position of voxel (0,0,0) from the sform, else the qform offset.
    pub fn origin(&self) -> [f64; 3] {
        if self.sform_code > 0 {
            [0, 1, 2].map(|a| self.srow[a][3] as f64)
        } else if self.qform_code > 0 {
            self.qoffset.map(|o| o as f64)
        } else {
            [0.0; 3]
        }
    }

    fn encode(&self) -> Vec<u8> {
        let mut b = vec![0u8; DEFAULT_VOX_OFFSET];
        LittleEndian::write_i32(&mut b[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
        let mut dim = [1i16; 8];
        dim[0] = self.shape.len() as i16;
        for (i, &n) in self.shape.iter().enumerate() {
            dim[i + 1] = n as i16;
        }
        for (i, d) in dim.iter().enumerate() {
            LittleEndian::write_i16(&mut b[offsets::DIM + 2 * i..], *d);
        }
        LittleEndian::write_i16(&mut b[offsets::INTENT_CODE..], self.intent_code);
        LittleEndian::write_i16(&mut b[offsets::DATATYPE..], self.datatype.code());
        LittleEndian::write_i16(&mut b[offsets::BITPIX..], (8 * self.datatype.size()) as i16);
        for (i, p) in self.pixdim.iter().enumerate() {
            LittleEndian::write_f32(&mut b[offsets::PIXDIM + 4 * i..], *p);
        }
        LittleEndian::write_f32(&mut b[offsets::VOX_OFFSET..], self.vox_offset as f32);
        LittleEndian::write_f32(&mut b[offsets::SCL_SLOPE..], self.scl_slope);
        LittleEndian::write_f32(&mut b[offsets::SCL_INTER..], self.scl_inter);
        // mm + seconds
        b[offsets::XYZT_UNITS] = 2 | 8;
        let d = self.descrip.as_bytes();
        let n = d.len().min(79);
        b[offsets::DESCRIP..offsets::DESCRIP + n].copy_from_slice(&d[..n]);
        LittleEndian::write_i16(&mut b[offsets::QFORM_CODE..], self.qform_code);
        LittleEndian::write_i16(&mut b[offsets::SFORM_CODE..], self.sform_code);
        for i in 0..3 {
            LittleEndian::write_f32(&mut b[offsets::QUATERN_B + 4 * i..], self.quatern[i]);
            LittleEndian::write_f32(&mut b[offsets::QOFFSET_X + 4 * i..], self.qoffset[i]);
        }
        for r in 0..3 {
            for c in 0..4 {
                LittleEndian::write_f32(&mut b[offsets::SROW_X + 16 * r + 4 * c..], self.srow[r][c]);
            }
        }
        b[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");
        b
    }

    fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_SIZE {
            return Err(Error::Malformed(format!(
                "{} bytes is too short for a NIfTI-1 header",
                b.len()
            )));
        }
        let sizeof_hdr = LittleEndian::read_i32(&b[offsets::SIZEOF_HDR..]);
        if sizeof_hdr != HEADER_SIZE as i32 {
            if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
                return Err(Error::Unsupported(
                    "big-endian (byte-swapped) NIfTI headers are not supported".into(),
                ));
            }
            return Err(Error::Malformed(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
        }
        match &b[offsets::MAGIC..offsets::MAGIC + 4] {
            b"n+1\0" => {}
            b"ni1\0" => {
                return Err(Error::Unsupported(
                    "two-file NIfTI (.hdr/.img, magic \"ni1\") is not supported".into(),
                ))
            }
            other => return Err(Error::Malformed(format!("bad magic {other:?}"))),
        }
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = LittleEndian::read_i16(&b[offsets::DIM + 2 * i..]);
        }
        let ndim = dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(Error::Malformed(format!("dim[0] = {ndim} out of range 1..=7")));
        }
        let shape: Vec<usize> = dim[1..=ndim as usize]
            .iter()
            .map(|&d| {
                if d < 1 {
                    Err(Error::Malformed(format!("non-positive dimension {d}")))
                } else {
                    Ok(d as usize)
                }
            })
            .collect::<Result<_>>()?;
        let datatype = DataType::from_code(LittleEndian::read_i16(&b[offsets::DATATYPE..]))?;
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = LittleEndian::read_f32(&b[offsets::PIXDIM + 4 * i..]);
        }
        let vox_offset = LittleEndian::read_f32(&b[offsets::VOX_OFFSET..]);
        if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
            return Err(Error::Malformed(format!("vox_offset {vox_offset} is invalid")));
        }
        let mut quatern = [0f32; 3];
        let mut qoffset = [0f32; 3];
        for i in 0..3 {
            quatern[i] = LittleEndian::read_f32(&b[offsets::QUATERN_B + 4 * i..]);
            qoffset[i] = LittleEndian::read_f32(&b[offsets::QOFFSET_X + 4 * i..]);
        }
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = LittleEndian::read_f32(&b[offsets::SROW_X + 16 * r + 4 * c..]);
            }
        }
        let descrip_raw = &b[offsets::DESCRIP..offsets::DESCRIP + 80];
        let end = descrip_raw.iter().position(|&c| c == 0).unwrap_or(80);
        Ok(Header {
            shape,
            datatype,
            pixdim,
            vox_offset: vox_offset as usize,
            scl_slope: LittleEndian::read_f32(&b[offsets::SCL_SLOPE..]),
            scl_inter: LittleEndian::read_f32(&b[offsets::SCL_INTER..]),
            intent_code: LittleEndian::read_i16(&b[offsets::INTENT_CODE..]),
            qform_code: LittleEndian::read_i16(&b[offsets::QFORM_CODE..]),
            sform_code: LittleEndian::read_i16(&b[offsets::SFORM_CODE..]),
            quatern,
            qoffset,
            srow,
            descrip: String::from_utf8_lossy(&descrip_raw[..end]).into_owned(),
        })
    }
}

/// A decoded NIfTI file: header plus voxel values after intensity scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    pub header: Header,
    pub values: Vec<f64>,
}

impl NiftiImage {
    fn spatial_grid(&self, extra: &[usize]) -> Result<Grid> {
        let s = &self.header.shape;
        let mut dims = [1usize; 3];
        for (a, d) in dims.iter_mut().enumerate() {
            if let Some(&n) = s.get(a) {
                *d = n;
            }
        }
        let trailing: Vec<usize> = s.iter().skip(3).copied().collect();
        let mut expected: Vec<usize> = extra.to_vec();
        // Trailing singleton dimensions are harmless.
        let mut t = trailing.clone();
        while t.last() == Some(&1) && t.len() > expected.len() {
            t.pop();
        }
        while expected.last() == Some(&1) && expected.len() > t.len() {
            expected.pop();
        }
        if t != expected {
            return Err(Error::Unsupported(format!(
                "unexpected image shape {s:?} (trailing dims {trailing:?})"
            )));
        }
        let spacing = self.header.spacing();
        if spacing.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::Malformed(format!("pixdim spacing {spacing:?} is not positive")));
        }
        Grid::with_origin(dims, spacing, self.header.origin())
    }

    pub fn into_volume(self) -> Result<Volume> {
        let grid = self.spatial_grid(&[])?;
        Volume::new(grid, self.values.into_iter().map(|v| v as f32).collect())
    }

    pub fn into_label_mask(self) -> Result<LabelMask> {
        let grid = self.spatial_grid(&[])?;
        let labels = self
            .values
            .into_iter()
            .map(|v| {
                if v.fract() == 0.0 && (0.0..=u16::MAX as f64).contains(&v) {
                    Ok(v as u16)
                } else {
                    Err(Error::Malformed(format!("label value {v} is not a nonnegative integer")))
                }
            })
            .collect::<Result<_>>()?;
        LabelMask::new(grid, labels)
    }

    pub fn into_trunk_mask(self) -> Result<TrunkMask> {
        let grid = self.spatial_grid(&[])?;
        let mask = self
            .values
            .into_iter()
            .map(|v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                other => Err(Error::Malformed(format!("trunk mask value {other} not in {{0,1}}"))),
            })
            .collect::<Result<_>>()?;
        TrunkMask::new(grid, mask)
    }

    /// Accepts `(nx, ny, nz, 1, 3)` and `(nx, ny, nz, 3)` vector layouts.
    pub fn into_field(self) -> Result<DisplacementField> {
        let grid = self
            .spatial_grid(&[1, 3])
            .or_else(|_| self.spatial_grid(&[3]))?;
        let n = grid.len();
        let vectors = (0..n)
            .map(|i| [self.values[i], self.values[n + i], self.values[2 * n + i]])
            .collect();
        DisplacementField::new(grid.dims, grid.spacing, vectors)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Malformed(format!("{}: gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an in-memory single-file NIfTI-1 image.
pub fn decode(bytes: &[u8]) -> Result<NiftiImage> {
    let header = Header::decode(bytes)?;
    let n = header.voxel_count();
    let size = header.datatype.size();
    let expected = n * size;
    let available = bytes.len().saturating_sub(header.vox_offset);
    if available < expected {
        return Err(Error::Truncated {
            expected,
            actual: available,
        });
    }
    let data = &bytes[header.vox_offset..header.vox_offset + expected];
    let mut values: Vec<f64> = match header.datatype {
        DataType::UInt8 => data.iter().map(|&v| v as f64).collect(),
        DataType::Int16 => data.chunks_exact(2).map(|c| LittleEndian::read_i16(c) as f64).collect(),
        DataType::UInt16 => data.chunks_exact(2).map(|c| LittleEndian::read_u16(c) as f64).collect(),
        DataType::Float32 => data.chunks_exact(4).map(|c| LittleEndian::read_f32(c) as f64).collect(),
        DataType::Float64 => data.chunks_exact(8).map(|c| LittleEndian::read_f64(c)).collect(),
    };
    let slope = header.scl_slope as f64;
    if slope != 0.0 && slope.is_finite() {
        let inter = if header.scl_inter.is_finite() {
            header.scl_inter as f64
        } else {
            0.0
        };
        values.iter_mut().for_each(|v| *v = *v * slope + inter);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Malformed(format!("non-finite voxel value at index {i}")));
    }
    Ok(NiftiImage { header, values })
}

/// Reads a `.nii` or `.nii.gz` file (gzip is detected from content).
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Malformed(m) => Error::Malformed(format!("{}: {m}", path.display())),
        Error::Unsupported(m) => Error::Unsupported(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    read_nifti(path)?.into_volume()
}

pub fn read_label_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    read_nifti(path)?.into_label_mask()
}

pub fn read_trunk_mask(path: impl AsRef<Path>) -> Result<TrunkMask> {
    read_nifti(path)?.into_trunk_mask()
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    read_nifti(path)?.into_field()
}

fn encode(header: &Header, payload: &[u8]) -> Vec<u8> {
    let mut out = header.encode();
    out.extend_from_slice(payload);
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    let io = |e| Error::io(path, e);
    if gz {
        let file = fs::File::create(path).map_err(io)?;
        let mut enc = GzEncoder::new(std::io::BufWriter::new(file), Compression::default());
        enc.write_all(bytes).map_err(io)?;
        enc.finish().map_err(io)?.flush().map_err(io)
    } else {
        fs::write(path, bytes).map_err(io)
    }
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let g = v.grid();
    let header = Header::new(g.dims.to_vec(), DataType::Float32, g.spacing, g.origin);
    let mut payload = vec![0u8; 4 * v.data().len()];
    LittleEndian::write_f32_into(v.data(), &mut payload);
    encode(&header, &payload)
}

/// Writes a float32 image; gzip when the file name ends in `.gz`.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_volume(v))
}

/// Writes labels as uint16.
pub fn write_label_mask(m: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let g = m.grid();
    let header = Header::new(g.dims.to_vec(), DataType::UInt16, g.spacing, g.origin);
    let mut payload = vec![0u8; 2 * m.labels().len()];
    LittleEndian::write_u16_into(m.labels(), &mut payload);
    write_bytes(path.as_ref(), &encode(&header, &payload))
}

/// Writes a binary mask as uint8.
pub fn write_trunk_mask(m: &TrunkMask, path: impl AsRef<Path>) -> Result<()> {
    let g = m.grid();
    let header = Header::new(g.dims.to_vec(), DataType::UInt8, g.spacing, g.origin);
    let payload: Vec<u8> = m.mask().iter().map(|&b| b as u8).collect();
    write_bytes(path.as_ref(), &encode(&header, &payload))
}

/// Writes a displacement field as a float32 vector image of shape
/// `(nx, ny, nz, 1, 3)`, components `(ux, uy, uz)` in voxel units.
pub fn write_field(f: &DisplacementField, path: impl AsRef<Path>) -> Result<()> {
    let d = f.dims();
    let mut header = Header::new(
        vec![d[0], d[1], d[2], 1, 3],
        DataType::Float32,
        f.spacing(),
        [0.0; 3],
    );
    header.intent_code = INTENT_VECTOR;
    header.descrip = "displacement (voxels)".into();
    write_bytes(path.as_ref(), &encode(&header, &field_payload(f)))
}

/// Component-planar little-endian float32 payload: all `ux`, then all `uy`,
/// then all `uz`, each plane x-fastest.
fn field_payload(f: &DisplacementField) -> Vec<u8> {
    let n = f.len();
    let mut planar = vec![0f32; 3 * n];
    for (i, v) in f.vectors().iter().enumerate() {
        for c in 0..3 {
            planar[c * n + i] = v[c] as f32;
        }
    }
    let mut payload = vec![0u8; 4 * planar.len()];
    LittleEndian::write_f32_into(&planar, &mut payload);
    payload
}

/// Raw alternative to [`write_field`]: the bare component-planar float32
/// payload with no header. Dims and spacing must be carried separately.
pub fn write_field_raw(f: &DisplacementField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, field_payload(f)).map_err(|e| Error::io(path, e))
}

pub fn read_field_raw(
    path: impl AsRef<Path>,
    dims: [usize; 3],
    spacing: [f64; 3],
) -> Result<DisplacementField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = dims.iter().product();
    if bytes.len() < 12 * n {
        return Err(Error::Truncated {
            expected: 12 * n,
            actual: bytes.len(),
        });
    }
    let mut planar = vec![0f32; 3 * n];
    LittleEndian::read_f32_into(&bytes[..12 * n], &mut planar);
    let vectors = (0..n)
        .map(|i| [planar[i] as f64, planar[n + i] as f64, planar[2 * n + i] as f64])
        .collect();
    DisplacementField::new(dims, spacing, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn header_bytes(shape: &[usize], dt: DataType) -> Vec<u8> {
        Header::new(shape.to_vec(), dt, [1.0; 3], [0.0; 3]).encode()
    }

    #[test]
    fn float32_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = Grid::with_origin([8, 8, 8], [1.5, 0.75, 2.0], [-10.0, 3.5, 0.25]).unwrap();
        let data: Vec<f32> = (0..512).map(|_| rng.random_range(-2000.0..2000.0)).collect();
        let v = Volume::new(grid, data).unwrap();
        let back = decode(&encode_volume(&v)).unwrap().into_volume().unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.spacing(), v.spacing());
        assert_eq!(back.grid().origin, v.grid().origin);
        assert!(back
            .data()
            .iter()
            .zip(v.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn zero_volume_file_size() {
        let v = Volume::filled(Grid::unit([4, 4, 4]), 0.0);
        assert_eq!(encode_volume(&v).len(), 348 + 4 + 256);
    }

    #[test]
    fn rejects_two_file_magic() {
        let mut b = encode_volume(&Volume::filled(Grid::unit([2, 2, 2]), 1.0));
        b[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode(&b), Err(Error::Unsupported(_))));
    }

    #[test]
    fn rejects_bad_magic_and_sizeof_hdr() {
        let good = encode_volume(&Volume::filled(Grid::unit([2, 2, 2]), 1.0));
        let mut b = good.clone();
        b[344..348].copy_from_slice(b"abcd");
        assert!(matches!(decode(&b), Err(Error::Malformed(_))));
        let mut b = good.clone();
        LittleEndian::write_i32(&mut b, 540);
        assert!(matches!(decode(&b), Err(Error::Malformed(_))));
        let mut b = good;
        b[0..4].copy_from_slice(&348i32.to_be_bytes());
        assert!(matches!(decode(&b), Err(Error::Unsupported(_))));
    }

    #[test]
    fn rejects_unsupported_datatype_and_truncation() {
        let mut b = encode_volume(&Volume::filled(Grid::unit([2, 2, 2]), 1.0));
        LittleEndian::write_i16(&mut b[70..], 768);
        assert!(matches!(decode(&b), Err(Error::Unsupported(_))));

        let mut b = encode_volume(&Volume::filled(Grid::unit([2, 2, 2]), 1.0));
        b.truncate(b.len() - 1);
        assert!(matches!(
            decode(&b),
            Err(Error::Truncated {
                expected: 32,
                actual: 31
            })
        ));
    }

    #[test]
    fn int16_scaling_applied() {
        let mut b = header_bytes(&[1, 1, 1], DataType::Int16);
        LittleEndian::write_f32(&mut b[112..], 2.0);
        LittleEndian::write_f32(&mut b[116..], 10.0);
        b.extend_from_slice(&3i16.to_le_bytes());
        let v = decode(&b).unwrap().into_volume().unwrap();
        assert_eq!(v.data(), &[16.0]);
    }

    #[test]
    fn all_supported_datatypes_decode() {
        let cases: Vec<(DataType, Vec<u8>)> = vec![
            (DataType::UInt8, vec![200]),
            (DataType::UInt16, 60000u16.to_le_bytes().to_vec()),
            (DataType::Int16, (-1000i16).to_le_bytes().to_vec()),
            (DataType::Float32, 0.25f32.to_le_bytes().to_vec()),
            (DataType::Float64, (-3.5f64).to_le_bytes().to_vec()),
        ];
        let expected = [200.0, 60000.0, -1000.0, 0.25, -3.5];
        for ((dt, payload), want) in cases.into_iter().zip(expected) {
            let mut b = header_bytes(&[1, 1, 1], dt);
            b.extend_from_slice(&payload);
            assert_eq!(decode(&b).unwrap().values, vec![want], "{dt:?}");
        }
    }

    #[test]
    fn label_and_trunk_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = vec![0u16; 27];
        labels[13] = 7;
        let m = LabelMask::new(Grid::new([3, 3, 3], [1.5; 3]).unwrap(), labels).unwrap();
        let p = dir.path().join("labels.nii.gz");
        write_label_mask(&m, &p).unwrap();
        let back = read_label_mask(&p).unwrap();
        assert_eq!(back.label_ids().iter().copied().collect::<Vec<_>>(), vec![7]);
        assert_eq!(back, m);

        let t = TrunkMask::interior(Grid::unit([4, 4, 4]), 1);
        let p = dir.path().join("trunk.nii");
        write_trunk_mask(&t, &p).unwrap();
        assert_eq!(read_trunk_mask(&p).unwrap(), t);
    }

    #[test]
    fn field_round_trip_nifti_and_raw() {
        let dir = tempfile::tempdir().unwrap();
        let dims = [3, 4, 5];
        let vectors = (0..60)
            .map(|i| [i as f64 * 0.5, -(i as f64), 0.125])
            .collect();
        let f = DisplacementField::new(dims, [1.5; 3], vectors).unwrap();
        let p = dir.path().join("field.nii.gz");
        write_field(&f, &p).unwrap();
        assert_eq!(read_field(&p).unwrap(), f);
        let p = dir.path().join("field.raw");
        write_field_raw(&f, &p).unwrap();
        assert_eq!(read_field_raw(&p, dims, [1.5; 3]).unwrap(), f);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_nifti("/nonexistent/file.nii"),
            Err(Error::Io { .. })
        ));
    }
}
