//! NIfTI-1 single-file volumes: a 348-byte header, the 4-byte extension
//! flag and an uncompressed payload. 3D data of type u8, i16 or f32 only.
//!
//! NIfTI stores `x` fastest, which is the last axis here, so the voxel order
//! is unchanged and only `dim`/`pixdim` are reversed.

use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use dispreg_core::IntensityVolume;

use super::{decode, encode, read_file, write_file, DType};
use crate::error::{Error, Result};

pub const NIFTI_HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = NIFTI_HEADER_SIZE + 4;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_MAGIC: usize = 344;

const UNITS_MM: u8 = 2;

fn datatype_code(dtype: DType) -> i16 {
    match dtype {
        DType::U8 => 2,
        DType::I16 => 4,
        DType::F32 => 16,
    }
}

fn datatype_from_code(code: i16) -> Option<DType> {
    match code {
        2 => Some(DType::U8),
        4 => Some(DType::I16),
        16 => Some(DType::F32),
        _ => None,
    }
}

struct Fields<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Fields<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = &self.bytes[off..off + 2];
        if self.big_endian {
            BigEndian::read_i16(b)
        } else {
            LittleEndian::read_i16(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let b = &self.bytes[off..off + 4];
        if self.big_endian {
            BigEndian::read_f32(b)
        } else {
            LittleEndian::read_f32(b)
        }
    }
}

/// Reads a `.nii` file and reports the stored datatype. Either byte order is
/// accepted; `scl_slope`/`scl_inter` are applied when set.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<(IntensityVolume, DType)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    if bytes.len() < NIFTI_HEADER_SIZE {
        return Err(Error::Truncated {
            path: path.into(),
            expected: NIFTI_HEADER_SIZE,
            actual: bytes.len(),
        });
    }
    let big_endian = match (LittleEndian::read_i32(&bytes), BigEndian::read_i32(&bytes)) {
        (348, _) => false,
        (_, 348) => true,
        (n, _) => {
            return Err(Error::header(
                path,
                format!("sizeof_hdr is {n}, expected 348"),
            ))
        }
    };
    let magic: [u8; 4] = bytes[OFF_MAGIC..OFF_MAGIC + 4]
        .try_into()
        .expect("four bytes");
    if &magic == MAGIC_PAIR {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "two-file NIfTI (magic ni1) is not supported, use a single .nii file".into(),
        });
    }
    if &magic != MAGIC_SINGLE {
        return Err(Error::BadMagic {
            path: path.into(),
            found: magic,
        });
    }
    let h = Fields {
        bytes: &bytes,
        big_endian,
    };

    let rank = h.i16(OFF_DIM);
    if !(1..=7).contains(&rank) {
        return Err(Error::header(
            path,
            format!("dim[0] is {rank}, expected 1..=7"),
        ));
    }
    let rank = rank as usize;
    let extent = |i: usize| if i <= rank { h.i16(OFF_DIM + 2 * i) } else { 1 };
    if (1..=rank).any(|i| extent(i) < 1) {
        return Err(Error::header(path, "non-positive extent in dim"));
    }
    if (4..=rank).any(|i| extent(i) > 1) {
        return Err(Error::TooManyDimensions {
            path: path.into(),
            dims: rank,
        });
    }
    let dims = [extent(3) as usize, extent(2) as usize, extent(1) as usize];

    let code = h.i16(OFF_DATATYPE);
    let dtype = datatype_from_code(code).ok_or_else(|| Error::UnsupportedDatatype {
        path: path.into(),
        datatype: format!("NIfTI code {code}"),
    })?;
    let bitpix = h.i16(OFF_BITPIX);
    if bitpix as usize != 8 * dtype.size() {
        return Err(Error::header(
            path,
            format!("bitpix {bitpix} does not match datatype {code}"),
        ));
    }

    let spacing = [3, 2, 1].map(|i| {
        let p = h.f32(OFF_PIXDIM + 4 * i).abs() as f64;
        if p.is_finite() && p > 0.0 {
            p
        } else {
            1.0
        }
    });

    let offset = h.f32(OFF_VOX_OFFSET);
    if !(offset.is_finite() && offset >= DATA_OFFSET as f32 && offset.fract() == 0.0) {
        return Err(Error::header(
            path,
            format!("vox_offset {offset} must be an integer >= 352"),
        ));
    }
    let offset = offset as usize;
    let expected = dims.iter().product::<usize>() * dtype.size();
    let available = bytes.len().saturating_sub(offset);
    if available < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: available,
        });
    }
    let mut data = decode(&bytes[offset..offset + expected], dtype, big_endian);

    let (slope, inter) = (h.f32(OFF_SCL_SLOPE), h.f32(OFF_SCL_INTER));
    if slope.is_finite() && slope != 0.0 && (slope, inter) != (1.0, 0.0) {
        let inter = if inter.is_finite() { inter } else { 0.0 };
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Ok((IntensityVolume::new(dims, spacing, data)?, dtype))
}

/// Writes a little-endian `.nii` with the payload right after the
/// extension flag.
pub fn write_nifti(vol: &IntensityVolume, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    let payload = encode(vol.data(), dtype)?;
    let mut out = vec![0u8; DATA_OFFSET];
    LittleEndian::write_i32(&mut out[0..4], NIFTI_HEADER_SIZE as i32);
    let [d, h, w] = vol.dims();
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for (slot, n) in dim[1..4].iter_mut().zip([w, h, d]) {
        *slot = i16::try_from(n)
            .map_err(|_| Error::header(path, format!("extent {n} does not fit NIfTI-1")))?;
    }
    for (i, v) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut out[OFF_DIM + 2 * i..], *v);
    }
    LittleEndian::write_i16(&mut out[OFF_DATATYPE..], datatype_code(dtype));
    LittleEndian::write_i16(&mut out[OFF_BITPIX..], 8 * dtype.size() as i16);
    let s = vol.spacing();
    let pixdim = [
        1.0,
        s[2] as f32,
        s[1] as f32,
        s[0] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (i, v) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut out[OFF_PIXDIM + 4 * i..], *v);
    }
    LittleEndian::write_f32(&mut out[OFF_VOX_OFFSET..], DATA_OFFSET as f32);
    LittleEndian::write_f32(&mut out[OFF_SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut out[OFF_SCL_INTER..], 0.0);
    out[OFF_XYZT_UNITS] = UNITS_MM;
    out[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC_SINGLE);
    out.extend_from_slice(&payload);
    write_file(path, &out)
}
