//! Raw volumes: a text header of `key = value` lines next to a headerless
//! little-endian payload.
//!
//! ```text
//! dims = 64 64 64          # d h w, last axis fastest
//! spacing = 1.5 1.5 1.5    # mm
//! dtype = f32              # u8 | i16 | f32
//! byte_order = little
//! data_file = fixed.raw    # relative to the header
//! ```
//!
//! Displacement fields add `components = 3`, `units = normalized` and
//! `voxels_per_unit = ...` (multiply a component by it to get voxels); the
//! three components of a voxel are stored next to each other.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dispreg_core::{Dims, DisplacementField, IntensityVolume};

use super::{decode, encode, read_file, write_file, DType};
use crate::error::{Error, Result};

/// Parsed header. Unknown keys are kept in `extra`, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct RawHeader {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub dtype: DType,
    pub data_file: PathBuf,
    pub components: usize,
    pub extra: Vec<(String, String)>,
}

fn parse_triple<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|v| {
            v.parse()
                .map_err(|_| Error::header(path, format!("bad {key} entry {v:?}")))
        })
        .collect::<Result<_>>()?;
    <[T; 3]>::try_from(parts).map_err(|_| Error::header(path, format!("{key} needs three values")))
}

impl RawHeader {
    pub fn parse(path: impl AsRef<Path>, text: &str) -> Result<Self> {
        let path = path.as_ref();
        let (mut dims, mut spacing, mut dtype, mut data_file) = (None, [1.0; 3], None, None);
        let mut components = 1;
        let mut extra = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::header(path, format!("expected key = value, got {line:?}"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dims" => dims = Some(parse_triple::<usize>(path, key, value)?),
                "spacing" => spacing = parse_triple(path, key, value)?,
                "dtype" => {
                    dtype =
                        Some(
                            DType::from_name(value).ok_or_else(|| Error::UnsupportedDatatype {
                                path: path.into(),
                                datatype: value.into(),
                            })?,
                        )
                }
                "byte_order" if value != "little" => {
                    return Err(Error::UnsupportedFormat {
                        path: path.into(),
                        reason: format!(
                            "byte order {value:?}, only little-endian payloads are supported"
                        ),
                    })
                }
                "byte_order" => {}
                "data_file" => data_file = Some(PathBuf::from(value)),
                "components" => {
                    components = value
                        .parse()
                        .ok()
                        .filter(|&c: &usize| c > 0)
                        .ok_or_else(|| Error::header(path, format!("bad components {value:?}")))?
                }
                _ => extra.push((key.to_string(), value.to_string())),
            }
        }
        let missing = |key: &str| Error::header(path, format!("missing {key}"));
        Ok(Self {
            dims: dims.ok_or_else(|| missing("dims"))?,
            spacing,
            dtype: dtype.ok_or_else(|| missing("dtype"))?,
            data_file: data_file.ok_or_else(|| missing("data_file"))?,
            components,
            extra,
        })
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let [d, h, w] = self.dims;
        let [a, b, c] = self.spacing;
        writeln!(s, "dims = {d} {h} {w}").unwrap();
        writeln!(s, "spacing = {a} {b} {c}").unwrap();
        writeln!(s, "dtype = {}", self.dtype.name()).unwrap();
        writeln!(s, "byte_order = little").unwrap();
        writeln!(s, "data_file = {}", self.data_file.display()).unwrap();
        if self.components != 1 {
            writeln!(s, "components = {}", self.components).unwrap();
        }
        for (k, v) in &self.extra {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.components * self.dtype.size()
    }

    fn payload_path(&self, header: &Path) -> PathBuf {
        header
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(&self.data_file)
    }
}

fn read_payload(path: &Path) -> Result<(RawHeader, Vec<f32>)> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::header(path, "header is not UTF-8"))?;
    let header = RawHeader::parse(path, &text)?;
    let payload_path = header.payload_path(path);
    let bytes = read_file(&payload_path)?;
    let expected = header.payload_len();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: payload_path,
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::header(
            path,
            format!(
                "payload has {} bytes, dims and dtype call for {expected}",
                bytes.len()
            ),
        ));
    }
    let values = decode(&bytes, header.dtype, false);
    Ok((header, values))
}

fn write_payload(path: &Path, mut header: RawHeader, payload: &[u8]) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::header(path, "header path needs a file name"))?;
    header.data_file = PathBuf::from(format!("{stem}.raw"));
    write_file(&header.payload_path(path), payload)?;
    write_file(path, header.render().as_bytes())
}

/// Reads a single-component volume and reports the stored datatype.
pub fn read_raw(path: impl AsRef<Path>) -> Result<(IntensityVolume, DType)> {
    let path = path.as_ref();
    let (header, values) = read_payload(path)?;
    if header.components != 1 {
        return Err(Error::header(
            path,
            format!("{} components, expected a scalar volume", header.components),
        ));
    }
    Ok((
        IntensityVolume::new(header.dims, header.spacing, values)?,
        header.dtype,
    ))
}

/// Writes `<stem>.raw` next to the header at `path`.
pub fn write_raw(vol: &IntensityVolume, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
    let header = RawHeader {
        dims: vol.dims(),
        spacing: vol.spacing(),
        dtype,
        data_file: PathBuf::new(),
        components: 1,
        extra: Vec::new(),
    };
    write_payload(path.as_ref(), header, &encode(vol.data(), dtype)?)
}

/// Writes a displacement field as three interleaved f32 components in
/// normalized units, with the voxel conversion factors in the header.
pub fn write_field(
    field: &DisplacementField,
    spacing: [f64; 3],
    path: impl AsRef<Path>,
) -> Result<()> {
    let dims = field.dims();
    let [a, b, c] = dims.map(|n| n as f64 * 0.5);
    let header = RawHeader {
        dims,
        spacing,
        dtype: DType::F32,
        data_file: PathBuf::new(),
        components: 3,
        extra: vec![
            ("units".into(), "normalized".into()),
            ("voxels_per_unit".into(), format!("{a} {b} {c}")),
        ],
    };
    let values: Vec<f32> = field
        .vectors()
        .iter()
        .flat_map(|v| v.map(|x| x as f32))
        .collect();
    write_payload(path.as_ref(), header, &encode(&values, DType::F32)?)
}

/// Reads a field written by [`write_field`] with its spacing.
pub fn read_field(path: impl AsRef<Path>) -> Result<(DisplacementField, [f64; 3])> {
    let path = path.as_ref();
    let (header, values) = read_payload(path)?;
    if header.components != 3 {
        return Err(Error::header(
            path,
            format!("{} components, a field needs 3", header.components),
        ));
    }
    if let Some((_, units)) = header.extra.iter().find(|(k, _)| k == "units") {
        if units != "normalized" {
            return Err(Error::header(
                path,
                format!("units {units:?}, expected normalized"),
            ));
        }
    }
    let vectors = values
        .chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect();
    Ok((
        DisplacementField::new(header.dims, vectors)?,
        header.spacing,
    ))
}
