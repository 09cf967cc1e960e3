//! NIfTI-1 single-file (`.nii`, `.nii.gz`) reader and writer.
//!
//! Reads uint8, int16, float32 and float64 data in either byte order and
//! applies `scl_slope`/`scl_inter`. Writes little-endian float32 with the
//! sform set from the grid affine. Four-dimensional files carry vector
//! fields with one component per volume in the fourth dimension.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::volume::{Grid, Volume3D};

pub const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

mod off {
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

/// Parsed subset of the NIfTI-1 header.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub big_endian: bool,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
}

fn read_i16(b: &[u8], at: usize, be: bool) -> i16 {
    if be {
        BigEndian::read_i16(&b[at..])
    } else {
        LittleEndian::read_i16(&b[at..])
    }
}

fn read_i32(b: &[u8], at: usize, be: bool) -> i32 {
    if be {
        BigEndian::read_i32(&b[at..])
    } else {
        LittleEndian::read_i32(&b[at..])
    }
}

fn read_f32(b: &[u8], at: usize, be: bool) -> f32 {
    if be {
        BigEndian::read_f32(&b[at..])
    } else {
        LittleEndian::read_f32(&b[at..])
    }
}

impl NiftiHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::MalformedHeader(format!(
                "file holds {} bytes, header needs {HEADER_SIZE}",
                bytes.len()
            )));
        }
        let big_endian = if read_i32(bytes, off::SIZEOF_HDR, false) == HEADER_SIZE as i32 {
            false
        } else if read_i32(bytes, off::SIZEOF_HDR, true) == HEADER_SIZE as i32 {
            true
        } else {
            return Err(Error::MalformedHeader(format!(
                "sizeof_hdr is {} (expected 348)",
                read_i32(bytes, off::SIZEOF_HDR, false)
            )));
        };
        let be = big_endian;
        let dim = std::array::from_fn(|i| read_i16(bytes, off::DIM + 2 * i, be));
        let pixdim = std::array::from_fn(|i| read_f32(bytes, off::PIXDIM + 4 * i, be));
        let srow = std::array::from_fn(|r| {
            std::array::from_fn(|c| read_f32(bytes, off::SROW_X + 16 * r + 4 * c, be))
        });
        Ok(Self {
            big_endian,
            dim,
            datatype: read_i16(bytes, off::DATATYPE, be),
            bitpix: read_i16(bytes, off::BITPIX, be),
            pixdim,
            vox_offset: read_f32(bytes, off::VOX_OFFSET, be),
            scl_slope: read_f32(bytes, off::SCL_SLOPE, be),
            scl_inter: read_f32(bytes, off::SCL_INTER, be),
            qform_code: read_i16(bytes, off::QFORM_CODE, be),
            sform_code: read_i16(bytes, off::SFORM_CODE, be),
            quatern: std::array::from_fn(|i| read_f32(bytes, off::QUATERN_B + 4 * i, be)),
            qoffset: std::array::from_fn(|i| read_f32(bytes, off::QOFFSET_X + 4 * i, be)),
            srow,
        })
    }

    pub fn spatial_dims(&self) -> Result<[usize; 3]> {
        let ndim = self.dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
        }
        let mut out = [1usize; 3];
        for (a, o) in out.iter_mut().enumerate() {
            if (a as i16) < ndim {
                let d = self.dim[a + 1];
                if d <= 0 {
                    return Err(Error::MalformedHeader(format!("dim[{}] = {d}", a + 1)));
                }
                *o = d as usize;
            }
        }
        Ok(out)
    }

    /// Product of dims 4..7 (number of 3-D volumes).
    pub fn volume_count(&self) -> Result<usize> {
        let ndim = self.dim[0] as usize;
        let mut n = 1usize;
        for a in 4..=ndim.min(7) {
            let d = self.dim[a];
            if d <= 0 {
                return Err(Error::MalformedHeader(format!("dim[{a}] = {d}")));
            }
            n *= d as usize;
        }
        Ok(n)
    }

    pub fn spacing(&self) -> [f64; 3] {
        std::array::from_fn(|a| {
            let p = (self.pixdim[a + 1] as f64).abs();
            if p.is_finite() && p > 0.0 {
                p
            } else {
                1.0
            }
        })
    }

    /// Voxel-to-world transform: sform, else qform, else spacing diagonal.
    pub fn affine(&self) -> Matrix4<f64> {
        if self.sform_code > 0 {
            let mut m = Matrix4::identity();
            for r in 0..3 {
                for c in 0..4 {
                    m[(r, c)] = self.srow[r][c] as f64;
                }
            }
            if nonsingular(&m) {
                return m;
            }
        }
        if self.qform_code > 0 {
            let m = self.qform_matrix();
            if nonsingular(&m) {
                return m;
            }
        }
        let sp = self.spacing();
        let mut m = Matrix4::identity();
        for a in 0..3 {
            m[(a, a)] = sp[a];
        }
        m
    }

    fn qform_matrix(&self) -> Matrix4<f64> {
        let [b, c, d] = self.quatern.map(|v| v as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let r = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let sp = self.spacing();
        let scale = [sp[0], sp[1], sp[2] * qfac];
        let mut m = Matrix4::identity();
        for (row, rrow) in r.iter().enumerate() {
            for col in 0..3 {
                m[(row, col)] = rrow[col] * scale[col];
            }
            m[(row, 3)] = self.qoffset[row] as f64;
        }
        m
    }

    fn bytes_per_voxel(&self) -> Result<usize> {
        match self.datatype {
            DT_UINT8 => Ok(1),
            DT_INT16 => Ok(2),
            DT_FLOAT32 => Ok(4),
            DT_FLOAT64 => Ok(8),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }
}

fn nonsingular(m: &Matrix4<f64>) -> bool {
    let det = m.fixed_view::<3, 3>(0, 0).determinant();
    det.is_finite() && det.abs() > 1e-12
}

fn load_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Geometry plus all volumes of a file, in file order.
#[derive(Debug, Clone)]
pub struct NiftiImage {
    pub header: NiftiHeader,
    pub grid: Grid,
    pub volumes: Vec<Vec<f64>>,
}

pub fn decode(bytes: &[u8]) -> Result<NiftiImage> {
    let header = NiftiHeader::parse(bytes)?;
    let dims = header.spatial_dims()?;
    let count = header.volume_count()?;
    let bpv = header.bytes_per_voxel()?;
    let grid = Grid::new(dims, header.spacing(), header.affine())
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let offset = if header.vox_offset.is_finite() && header.vox_offset >= HEADER_SIZE as f32 {
        header.vox_offset as usize
    } else {
        VOX_OFFSET
    };
    let per_volume = grid.len();
    let expected = offset + per_volume * count * bpv;
    if bytes.len() < expected {
        return Err(Error::TruncatedData {
            expected,
            actual: bytes.len(),
        });
    }
    let slope = header.scl_slope as f64;
    let inter = header.scl_inter as f64;
    let scale = slope != 0.0 && slope.is_finite();
    let be = header.big_endian;
    let raw = &bytes[offset..expected];
    let mut volumes = Vec::with_capacity(count);
    for v in 0..count {
        let chunk = &raw[v * per_volume * bpv..(v + 1) * per_volume * bpv];
        let mut data: Vec<f64> = match header.datatype {
            DT_UINT8 => chunk.iter().map(|&b| b as f64).collect(),
            DT_INT16 => chunk
                .chunks_exact(2)
                .map(|c| read_i16(c, 0, be) as f64)
                .collect(),
            DT_FLOAT32 => chunk
                .chunks_exact(4)
                .map(|c| read_f32(c, 0, be) as f64)
                .collect(),
            DT_FLOAT64 => chunk
                .chunks_exact(8)
                .map(|c| {
                    if be {
                        BigEndian::read_f64(c)
                    } else {
                        LittleEndian::read_f64(c)
                    }
                })
                .collect(),
            other => return Err(Error::UnsupportedDatatype(other)),
        };
        if scale {
            for d in &mut data {
                *d = *d * slope + inter;
            }
        }
        if let Some(i) = data.iter().position(|d| !d.is_finite()) {
            return Err(Error::MalformedHeader(format!("non-finite voxel value at {i}")));
        }
        volumes.push(data);
    }
    Ok(NiftiImage {
        header,
        grid,
        volumes,
    })
}

pub fn read_image(path: impl AsRef<Path>) -> Result<NiftiImage> {
    decode(&load_bytes(path.as_ref())?)
}

/// Reads the first 3-D volume of a NIfTI-1 file.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume3D> {
    let img = read_image(path)?;
    let data = img.volumes.into_iter().next().expect("volume_count >= 1");
    Volume3D::new(img.grid, data)
}

/// Serializes volumes (one per entry of the 4th dimension) to NIfTI-1 bytes.
pub fn encode(grid: &Grid, volumes: &[&[f64]]) -> Vec<u8> {
    assert!(!volumes.is_empty());
    let mut h = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut h[off::SIZEOF_HDR..], HEADER_SIZE as i32);
    let dims = grid.dims();
    let four_d = volumes.len() > 1;
    let mut dim = [0i16; 8];
    dim[0] = if four_d { 4 } else { 3 };
    for a in 0..3 {
        dim[a + 1] = dims[a] as i16;
    }
    dim[4] = volumes.len() as i16;
    for d in dim.iter_mut().skip(5) {
        *d = 1;
    }
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[off::DIM + 2 * i..], *d);
    }
    if four_d {
        // NIFTI_INTENT_VECTOR
        LittleEndian::write_i16(&mut h[off::INTENT_CODE..], 1007);
    }
    LittleEndian::write_i16(&mut h[off::DATATYPE..], DT_FLOAT32);
    LittleEndian::write_i16(&mut h[off::BITPIX..], 32);
    let sp = grid.spacing();
    let mut pixdim = [1.0f32; 8];
    for a in 0..3 {
        pixdim[a + 1] = sp[a] as f32;
    }
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[off::PIXDIM + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut h[off::VOX_OFFSET..], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[off::SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut h[off::SCL_INTER..], 0.0);
    // mm + sec
    h[off::XYZT_UNITS] = 2 | 8;
    let descrip = b"vbmkit";
    h[off::DESCRIP..off::DESCRIP + descrip.len()].copy_from_slice(descrip);
    LittleEndian::write_i16(&mut h[off::QFORM_CODE..], 0);
    LittleEndian::write_i16(&mut h[off::SFORM_CODE..], 2);
    let a = grid.affine();
    for r in 0..3 {
        for c in 0..4 {
            LittleEndian::write_f32(&mut h[off::SROW_X + 16 * r + 4 * c..], a[(r, c)] as f32);
        }
    }
    h[off::MAGIC..off::MAGIC + 4].copy_from_slice(b"n+1\0");

    let mut out = h;
    out.reserve(grid.len() * volumes.len() * 4);
    let mut buf = [0u8; 4];
    for vol in volumes {
        assert_eq!(vol.len(), grid.len());
        for &v in vol.iter() {
            LittleEndian::write_f32(&mut buf, v as f32);
            out.extend_from_slice(&buf);
        }
    }
    out
}

fn store(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    let write = || -> std::io::Result<()> {
        let file = fs::File::create(path)?;
        if gz {
            let mut enc = GzEncoder::new(file, Compression::default());
            enc.write_all(bytes)?;
            enc.finish()?;
        } else {
            let mut w = std::io::BufWriter::new(file);
            w.write_all(bytes)?;
            w.flush()?;
        }
        Ok(())
    };
    write().map_err(|e| Error::io(path, e))
}

/// Writes a 3-D float32 NIfTI-1 file (gzip when the name ends in `.gz`).
pub fn write_nifti(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    store(path.as_ref(), &encode(vol.grid(), &[vol.data()]))
}

/// Writes several same-grid volumes as the 4th dimension of one file.
pub fn write_nifti_4d(grid: &Grid, volumes: &[&[f64]], path: impl AsRef<Path>) -> Result<()> {
    for v in volumes {
        if v.len() != grid.len() {
            return Err(Error::InvalidVolume("4-D component length mismatch".into()));
        }
    }
    store(path.as_ref(), &encode(grid, volumes))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-built header for a 2×1×1 int16 image.
    fn int16_file(big_endian: bool, slope: f32, inter: f32, raw: [i16; 2]) -> Vec<u8> {
        let mut b = vec![0u8; VOX_OFFSET + 4];
        macro_rules! put {
            ($f:ident, $at:expr, $v:expr) => {
                if big_endian {
                    BigEndian::$f(&mut b[$at..], $v)
                } else {
                    LittleEndian::$f(&mut b[$at..], $v)
                }
            };
        }
        put!(write_i32, 0, 348);
        for (i, d) in [3i16, 2, 1, 1, 1, 1, 1, 1].iter().enumerate() {
            put!(write_i16, off::DIM + 2 * i, *d);
        }
        put!(write_i16, off::DATATYPE, DT_INT16);
        put!(write_i16, off::BITPIX, 16);
        for i in 0..8 {
            put!(write_f32, off::PIXDIM + 4 * i, 2.0);
        }
        put!(write_f32, off::VOX_OFFSET, 352.0);
        put!(write_f32, off::SCL_SLOPE, slope);
        put!(write_f32, off::SCL_INTER, inter);
        put!(write_i16, VOX_OFFSET, raw[0]);
        put!(write_i16, VOX_OFFSET + 2, raw[1]);
        b[off::MAGIC..off::MAGIC + 4].copy_from_slice(b"n+1\0");
        b
    }

    #[test]
    fn applies_scaling_to_int16() {
        // 3 * 2 + 1
        let img = decode(&int16_file(false, 2.0, 1.0, [3, -4])).unwrap();
        assert_eq!(img.volumes[0], vec![7.0, -7.0]);
        assert_eq!(img.grid.spacing(), [2.0; 3]);
    }

    #[test]
    fn zero_slope_means_unscaled() {
        let img = decode(&int16_file(false, 0.0, 5.0, [3, 4])).unwrap();
        assert_eq!(img.volumes[0], vec![3.0, 4.0]);
    }

    #[test]
    fn big_endian_detected() {
        let img = decode(&int16_file(true, 2.0, 1.0, [3, 0])).unwrap();
        assert!(img.header.big_endian);
        assert_eq!(img.volumes[0], vec![7.0, 1.0]);
    }

    #[test]
    fn bad_sizeof_hdr_is_malformed() {
        let mut b = int16_file(false, 1.0, 0.0, [0, 0]);
        LittleEndian::write_i32(&mut b[0..], 999);
        assert!(matches!(decode(&b), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn short_data_is_truncated() {
        let mut b = int16_file(false, 1.0, 0.0, [0, 0]);
        b.truncate(VOX_OFFSET + 2);
        assert!(matches!(decode(&b), Err(Error::TruncatedData { .. })));
    }

    #[test]
    fn unsupported_datatype() {
        let mut b = int16_file(false, 1.0, 0.0, [0, 0]);
        LittleEndian::write_i16(&mut b[off::DATATYPE..], 512);
        assert!(matches!(decode(&b), Err(Error::UnsupportedDatatype(512))));
    }

    #[test]
    fn qform_used_without_sform() {
        let mut b = int16_file(false, 1.0, 0.0, [0, 0]);
        LittleEndian::write_i16(&mut b[off::QFORM_CODE..], 1);
        // 180° about z: quaternion (b, c, d) = (0, 0, 1)
        LittleEndian::write_f32(&mut b[off::QUATERN_B + 8..], 1.0);
        LittleEndian::write_f32(&mut b[off::QOFFSET_X..], 10.0);
        let img = decode(&b).unwrap();
        let a = img.grid.affine();
        assert!((a[(0, 0)] + 2.0).abs() < 1e-6);
        assert!((a[(1, 1)] + 2.0).abs() < 1e-6);
        assert!((a[(2, 2)] - 2.0).abs() < 1e-6);
        assert!((a[(0, 3)] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn encodes_pixdim_and_sform() {
        let grid = Grid::with_spacing([3, 2, 2], [1.5; 3]).unwrap();
        let data = vec![0.25; 12];
        let bytes = encode(&grid, &[&data]);
        let h = NiftiHeader::parse(&bytes).unwrap();
        assert_eq!(&h.pixdim[1..4], &[1.5, 1.5, 1.5]);
        assert_eq!(h.sform_code, 2);
        assert_eq!(h.srow[0][0], 1.5);
        assert_eq!(bytes.len(), VOX_OFFSET + 12 * 4);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let v = Volume3D::zeros(Grid::unit([2, 2, 2]));
        let err = write_nifti(&v, "/nonexistent-dir/sub/x.nii").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn four_d_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::unit([2, 3, 4]);
        let a: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..24).map(|i| -(i as f64) / 4.0).collect();
        let p = dir.path().join("field.nii.gz");
        write_nifti_4d(&grid, &[&a, &b], &p).unwrap();
        let img = read_image(&p).unwrap();
        assert_eq!(img.volumes, vec![a, b]);
        assert_eq!(img.header.dim[0], 4);
    }
}
