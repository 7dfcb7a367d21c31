//! Volume files: NIfTI-1 single-file (`.nii`) and a plain key=value header
//! (`.vhdr`) next to a raw little-endian payload.
//!
//! Data are promoted to `f32` on read. Writers take the on-disk [`DType`];
//! a value that the type cannot hold exactly is an error rather than being
//! rounded, so write→read round trips are bit-exact.

mod nifti;
mod raw;

use std::path::Path;

use dispreg_core::{IntensityVolume, LabelVolume};

pub use nifti::{read_nifti, write_nifti, NIFTI_HEADER_SIZE};
pub use raw::{read_field, read_raw, write_field, write_raw, RawHeader};

use crate::error::{Error, Result};

/// Element type of a payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    U8,
    I16,
    F32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::I16 => 2,
            Self::F32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::U8 => "u8",
            Self::I16 => "i16",
            Self::F32 => "f32",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "u8" => Some(Self::U8),
            "i16" => Some(Self::I16),
            "f32" => Some(Self::F32),
            _ => None,
        }
    }

    /// Smallest integer type holding every label.
    pub fn for_labels(labels: &LabelVolume) -> Self {
        match labels.max_label() {
            0..=255 => Self::U8,
            256..=32767 => Self::I16,
            _ => Self::F32,
        }
    }
}

pub(crate) fn decode(bytes: &[u8], dtype: DType, big_endian: bool) -> Vec<f32> {
    use byteorder::{BigEndian, ByteOrder, LittleEndian};
    match dtype {
        DType::U8 => bytes.iter().map(|&b| b as f32).collect(),
        DType::I16 => bytes
            .chunks_exact(2)
            .map(|c| if big_endian { BigEndian::read_i16(c) } else { LittleEndian::read_i16(c) } as f32)
            .collect(),
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| if big_endian { BigEndian::read_f32(c) } else { LittleEndian::read_f32(c) })
            .collect(),
    }
}

pub(crate) fn encode(values: &[f32], dtype: DType) -> Result<Vec<u8>> {
    use byteorder::{LittleEndian, WriteBytesExt};
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        let bad = || Error::Unrepresentable {
            value: v,
            dtype: dtype.name(),
        };
        match dtype {
            DType::U8 => {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(bad());
                }
                out.push(v as u8);
            }
            DType::I16 => {
                if v.fract() != 0.0 || !(-32768.0..=32767.0).contains(&v) {
                    return Err(bad());
                }
                out.write_i16::<LittleEndian>(v as i16)
                    .expect("writing to a Vec");
            }
            DType::F32 => out.write_f32::<LittleEndian>(v).expect("writing to a Vec"),
        }
    }
    Ok(out)
}

enum Format {
    Nifti,
    Raw,
}

fn format_of(path: &Path) -> Result<Format> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let unsupported = |reason: &str| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if name.ends_with(".nii.gz") {
        Err(unsupported("compressed NIfTI is not supported"))
    } else if name.ends_with(".nii") {
        Ok(Format::Nifti)
    } else if name.ends_with(".vhdr") {
        Ok(Format::Raw)
    } else {
        Err(unsupported("expected a .nii or .vhdr file"))
    }
}

/// Reads a volume, choosing the format from the extension.
pub fn read_volume(path: impl AsRef<Path>) -> Result<IntensityVolume> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Nifti => read_nifti(path).map(|(v, _)| v),
        Format::Raw => read_raw(path).map(|(v, _)| v),
    }
}

pub fn write_volume(vol: &IntensityVolume, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Nifti => write_nifti(vol, path, dtype),
        Format::Raw => write_raw(vol, path, dtype),
    }
}

/// Reads a segmentation; every value must be a non-negative integer.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    Ok(LabelVolume::from_intensity(&read_volume(path)?)?)
}

pub fn write_labels(labels: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let vol = labels.map(|l| l as f32);
    write_volume(&vol, path, DType::for_labels(labels))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
