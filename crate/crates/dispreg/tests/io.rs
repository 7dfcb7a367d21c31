use std::fs;
use std::path::Path;

use dispreg::io::{
    read_field, read_labels, read_volume, write_field, write_labels, write_volume, DType, RawHeader,
};
use dispreg::Error;
use dispreg_core::rng::XorShift64Star;
use dispreg_core::{DisplacementField, IntensityVolume, LabelVolume};

fn volume(dims: [usize; 3], integral: bool) -> IntensityVolume {
    let mut rng = XorShift64Star::new(1);
    IntensityVolume::from_fn(dims, |_| {
        let v = rng.range(-200.0, 200.0);
        if integral {
            v.round() as f32
        } else {
            v as f32
        }
    })
    .unwrap()
    .with_spacing([0.75, 1.25, 2.0])
    .unwrap()
}

fn nifti_bytes(dir: &Path) -> Vec<u8> {
    let path = dir.join("base.nii");
    write_volume(&volume([10, 10, 10], true), &path, DType::I16).unwrap();
    fs::read(path).unwrap()
}

fn put_i16(bytes: &mut [u8], at: usize, v: i16) {
    bytes[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

#[test]
fn nifti_round_trips_every_dtype() {
    let dir = tempfile::tempdir().unwrap();
    for (dtype, integral) in [(DType::F32, false), (DType::I16, true)] {
        let vol = volume([5, 7, 3], integral);
        let path = dir.path().join(format!("v_{}.nii", dtype.name()));
        write_volume(&vol, &path, dtype).unwrap();
        assert_eq!(read_volume(&path).unwrap(), vol);
    }
    let u8vol =
        IntensityVolume::from_fn([4, 3, 6], |[i, j, k]| (i * 31 + j * 7 + k) as f32).unwrap();
    let path = dir.path().join("u8.nii");
    write_volume(&u8vol, &path, DType::U8).unwrap();
    assert_eq!(read_volume(&path).unwrap().data(), u8vol.data());
}

#[test]
fn raw_round_trips_every_dtype() {
    let dir = tempfile::tempdir().unwrap();
    for (dtype, integral) in [(DType::F32, false), (DType::I16, true)] {
        let vol = volume([6, 2, 5], integral);
        let path = dir.path().join(format!("v_{}.vhdr", dtype.name()));
        write_volume(&vol, &path, dtype).unwrap();
        assert_eq!(read_volume(&path).unwrap(), vol);
    }
    let u8vol =
        IntensityVolume::from_fn([3, 3, 3], |[i, j, k]| (i * 9 + j * 3 + k) as f32).unwrap();
    let path = dir.path().join("u8.vhdr");
    write_volume(&u8vol, &path, DType::U8).unwrap();
    assert_eq!(read_volume(&path).unwrap().data(), u8vol.data());
}

#[test]
fn labels_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    for (max, name) in [(5u16, "small"), (700, "wide")] {
        let labels =
            LabelVolume::from_fn([4, 5, 6], |[i, j, k]| ((i + j * k) as u16 * 37) % (max + 1))
                .unwrap();
        for ext in ["nii", "vhdr"] {
            let path = dir.path().join(format!("{name}.{ext}"));
            write_labels(&labels, &path).unwrap();
            assert_eq!(read_labels(&path).unwrap().data(), labels.data());
        }
    }
}

#[test]
fn field_round_trips_through_raw() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = XorShift64Star::new(4);
    let field = DisplacementField::from_fn([4, 3, 5], |_| {
        core::array::from_fn(|_| rng.range(-0.3, 0.3))
    })
    .unwrap();
    let path = dir.path().join("field.vhdr");
    write_field(&field, [1.0, 2.0, 3.0], &path).unwrap();
    let (back, spacing) = read_field(&path).unwrap();
    assert_eq!(spacing, [1.0, 2.0, 3.0]);
    for (a, b) in back.vectors().iter().zip(field.vectors()) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-7);
        }
    }
    let header = fs::read_to_string(&path).unwrap();
    assert!(header.contains("units = normalized"));
}

#[test]
fn integer_dtypes_reject_inexact_values() {
    let dir = tempfile::tempdir().unwrap();
    let vol = IntensityVolume::filled([2, 2, 2], 1.5).unwrap();
    let err = write_volume(&vol, dir.path().join("x.nii"), DType::I16).unwrap_err();
    assert!(matches!(err, Error::Unrepresentable { .. }));
    let vol = IntensityVolume::filled([2, 2, 2], 300.0).unwrap();
    assert!(write_volume(&vol, dir.path().join("x.vhdr"), DType::U8).is_err());
}

#[test]
fn truncated_nifti_payload() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = nifti_bytes(dir.path());
    bytes.truncate(352 + 999 * 2);
    let path = dir.path().join("short.nii");
    fs::write(&path, bytes).unwrap();
    match read_volume(&path).unwrap_err() {
        Error::Truncated {
            expected, actual, ..
        } => {
            assert_eq!(expected, 2000);
            assert_eq!(actual, 1998);
        }
        e => panic!("unexpected {e:?}"),
    }
    let path = dir.path().join("header_only.nii");
    fs::write(&path, &nifti_bytes(dir.path())[..200]).unwrap();
    assert!(matches!(
        read_volume(&path).unwrap_err(),
        Error::Truncated { .. }
    ));
}

#[test]
fn nifti_header_failures() {
    let dir = tempfile::tempdir().unwrap();
    let base = nifti_bytes(dir.path());
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.path().join(name);
        fs::write(&p, bytes).unwrap();
        read_volume(p).unwrap_err()
    };

    let mut b = base.clone();
    b[344..348].copy_from_slice(b"ni1\0");
    assert!(matches!(
        write("pair.nii", &b),
        Error::UnsupportedFormat { .. }
    ));

    let mut b = base.clone();
    b[344..348].copy_from_slice(b"abcd");
    assert!(matches!(write("magic.nii", &b), Error::BadMagic { found, .. } if &found == b"abcd"));

    let mut b = base.clone();
    put_i16(&mut b, 40, 4);
    put_i16(&mut b, 48, 2);
    assert!(matches!(
        write("4d.nii", &b),
        Error::TooManyDimensions { dims: 4, .. }
    ));

    // a fourth axis of extent one is still a 3D volume
    let mut b = base.clone();
    put_i16(&mut b, 40, 4);
    put_i16(&mut b, 48, 1);
    let p = dir.path().join("4d1.nii");
    fs::write(&p, &b).unwrap();
    assert_eq!(read_volume(&p).unwrap().dims(), [10, 10, 10]);

    let mut b = base.clone();
    put_i16(&mut b, 70, 64);
    put_i16(&mut b, 72, 64);
    assert!(matches!(
        write("f64.nii", &b),
        Error::UnsupportedDatatype { .. }
    ));

    let mut b = base.clone();
    b[0..4].copy_from_slice(&1234i32.to_le_bytes());
    assert!(matches!(write("size.nii", &b), Error::Header { .. }));
}

#[test]
fn unsupported_extensions() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.nii.gz", "a.mha", "a"] {
        let p = dir.path().join(name);
        fs::write(&p, b"x").unwrap();
        assert!(
            matches!(
                read_volume(&p).unwrap_err(),
                Error::UnsupportedFormat { .. }
            ),
            "{name}"
        );
    }
    assert!(matches!(
        read_volume(dir.path().join("missing.nii")).unwrap_err(),
        Error::Io { .. }
    ));
}

#[test]
fn raw_header_checks() {
    let dir = tempfile::tempdir().unwrap();
    let vol = volume([3, 4, 5], false);
    let path = dir.path().join("v.vhdr");
    write_volume(&vol, &path, DType::F32).unwrap();
    let header = RawHeader::parse(&path, &fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(header.dims, [3, 4, 5]);
    assert_eq!(RawHeader::parse(&path, &header.render()).unwrap(), header);

    let raw = dir.path().join("v.raw");
    let bytes = fs::read(&raw).unwrap();
    fs::write(&raw, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(
        read_volume(&path).unwrap_err(),
        Error::Truncated { .. }
    ));
    fs::write(&raw, [bytes.clone(), vec![0; 4]].concat()).unwrap();
    assert!(matches!(
        read_volume(&path).unwrap_err(),
        Error::Header { .. }
    ));

    for bad in [
        "dims = 3 4\ndtype = f32\n",
        "dims = 3 4 5\ndtype = f64\n",
        "dims = 3 4 5\ndtype = f32\nbyte_order = big\n",
    ] {
        assert!(RawHeader::parse(&path, bad).is_err(), "{bad:?}");
    }
}
