//! Dataset persistence.
//!
//! A dataset directory holds three files:
//!
//! * `manifest.toml` — the [`DatasetManifest`].
//! * `index.csv` — one record per sample: `id,label,split,teacher,
//!   pixel_record` plus one `flag:<name>` column per declared shortcut.
//! * `pixels.bin` — magic `SLPX`, then three little-endian `u32`s
//!   (format version, record count, image side), then `count` records of
//!   `side * side` row-major little-endian `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{DatasetManifest, ImageSample, Split, SplitBundle};
use crate::error::{Error, Result};
use crate::num::Scalar;

const PIXEL_MAGIC: &[u8; 4] = b"SLPX";
const PIXEL_VERSION: u32 = 1;

/// Write a manifest as TOML.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = toml::to_string(manifest)?;
    fs::write(path, text)?;
    Ok(())
}

/// Read and validate a manifest.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Materialize a split bundle into `dir`.
pub fn write_dataset<F: Scalar>(
    dir: &Path,
    manifest: &DatasetManifest,
    bundle: &SplitBundle<F>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_manifest(&dir.join("manifest.toml"), manifest)?;

    let flag_names: Vec<String> = manifest.shortcuts.iter().map(|s| s.name.clone()).collect();
    let groups: [(&Vec<ImageSample<F>>, bool); 4] = [
        (&bundle.teacher_train, true),
        (&bundle.student_train, false),
        (&bundle.val, false),
        (&bundle.test, false),
    ];
    let side = manifest.image_side;
    let count: usize = groups.iter().map(|(g, _)| g.len()).sum();

    let mut pixels = BufWriter::new(fs::File::create(dir.join("pixels.bin"))?);
    pixels.write_all(PIXEL_MAGIC)?;
    pixels.write_u32::<LittleEndian>(PIXEL_VERSION)?;
    pixels.write_u32::<LittleEndian>(count as u32)?;
    pixels.write_u32::<LittleEndian>(side as u32)?;

    let mut index = csv::Writer::from_path(dir.join("index.csv"))?;
    let mut header = vec![
        "id".to_string(),
        "label".to_string(),
        "split".to_string(),
        "teacher".to_string(),
        "pixel_record".to_string(),
    ];
    header.extend(flag_names.iter().map(|n| format!("flag:{n}")));
    index.write_record(&header)?;

    let mut record_no = 0usize;
    for (group, is_teacher) in groups {
        for s in group {
            if s.side() != side {
                return Err(Error::shape(
                    "write_dataset",
                    format!("sample {} side {} != manifest {}", s.id, s.side(), side),
                ));
            }
            let mut row = vec![
                s.id.clone(),
                s.label.to_string(),
                s.split.to_string(),
                u8::from(is_teacher).to_string(),
                record_no.to_string(),
            ];
            for name in &flag_names {
                let flag = s.shortcut_flags.get(name).copied().ok_or_else(|| {
                    Error::invalid("shortcut_flags", format!("sample {} lacks `{name}`", s.id))
                })?;
                row.push(u8::from(flag).to_string());
            }
            index.write_record(&row)?;
            for &v in s.pixels.iter() {
                pixels.write_f32::<LittleEndian>(v.as_f64() as f32)?;
            }
            record_no += 1;
        }
    }
    index.flush()?;
    pixels.flush()?;
    Ok(())
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Load a dataset directory back into memory.
pub fn read_dataset<F: Scalar>(dir: &Path) -> Result<(DatasetManifest, SplitBundle<F>)> {
    let manifest = read_manifest(&dir.join("manifest.toml"))?;
    let side = manifest.image_side;

    let pixel_path = dir.join("pixels.bin");
    let mut reader = BufReader::new(fs::File::open(&pixel_path).map_err(|e| Error::Load {
        path: pixel_path.clone(),
        reason: e.to_string(),
    })?);
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|e| corrupt(&pixel_path, e.to_string()))?;
    if &magic != PIXEL_MAGIC {
        return Err(corrupt(&pixel_path, "bad magic bytes"));
    }
    let version = reader
        .read_u32::<LittleEndian>()
        .map_err(|e| corrupt(&pixel_path, e.to_string()))?;
    if version != PIXEL_VERSION {
        return Err(corrupt(&pixel_path, format!("unsupported version {version}")));
    }
    let count = reader
        .read_u32::<LittleEndian>()
        .map_err(|e| corrupt(&pixel_path, e.to_string()))? as usize;
    let stored_side = reader
        .read_u32::<LittleEndian>()
        .map_err(|e| corrupt(&pixel_path, e.to_string()))? as usize;
    if stored_side != side {
        return Err(corrupt(
            &pixel_path,
            format!("pixel side {stored_side} != manifest {side}"),
        ));
    }
    let mut records: Vec<Array2<F>> = Vec::with_capacity(count);
    let mut buf = vec![0f32; side * side];
    for _ in 0..count {
        for v in buf.iter_mut() {
            *v = reader
                .read_f32::<LittleEndian>()
                .map_err(|e| corrupt(&pixel_path, e.to_string()))?;
        }
        let arr = Array2::from_shape_vec((side, side), buf.iter().map(|&v| F::f(v as f64)).collect())
            .expect("shape");
        records.push(arr);
    }

    let index_path = dir.join("index.csv");
    let mut rdr = csv::Reader::from_path(&index_path).map_err(|e| Error::Load {
        path: index_path.clone(),
        reason: e.to_string(),
    })?;
    let headers = rdr.headers()?.clone();
    let flag_names: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("flag:").map(|n| (i, n.to_string())))
        .collect();

    let mut bundle = SplitBundle {
        teacher_train: Vec::new(),
        student_train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let get = |col: usize| -> Result<&str> {
            rec.get(col)
                .ok_or_else(|| corrupt(&index_path, format!("short record: {rec:?}")))
        };
        let id = get(0)?.to_string();
        let label: u8 = get(1)?
            .parse()
            .map_err(|_| corrupt(&index_path, format!("bad label for {id}")))?;
        let split = match get(2)? {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => return Err(corrupt(&index_path, format!("unknown split `{other}`"))),
        };
        let teacher = get(3)? == "1";
        let pixel_record: usize = get(4)?
            .parse()
            .map_err(|_| corrupt(&index_path, format!("bad pixel_record for {id}")))?;
        if pixel_record >= records.len() {
            return Err(corrupt(
                &index_path,
                format!("pixel_record {pixel_record} beyond {} records", records.len()),
            ));
        }
        let mut flags = BTreeMap::new();
        for (col, name) in &flag_names {
            flags.insert(name.clone(), get(*col)? == "1");
        }
        let sample = ImageSample {
            id,
            pixels: records[pixel_record].clone(),
            label,
            shortcut_flags: flags,
            split,
        };
        match (teacher, split) {
            (true, _) => bundle.teacher_train.push(sample),
            (false, Split::Train) => bundle.student_train.push(sample),
            (false, Split::Val) => bundle.val.push(sample),
            (false, Split::Test) => bundle.test.push(sample),
        }
    }
    Ok((manifest, bundle))
}

/// Where a dataset directory lives under the artifact root.
pub fn dataset_dir(root: &Path, name: &str) -> PathBuf {
    root.join("datasets").join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_splits, ClassSignal, ShortcutKind, ShortcutSpec, SplitCounts, SplitPolicy};

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            seed: 5,
            image_side: 16,
            n_per_class: SplitCounts {
                train: 50,
                val: 25,
                test: 25,
            },
            class_signal: ClassSignal::default(),
            shortcuts: vec![ShortcutSpec {
                name: "square".into(),
                kind: ShortcutKind::SquareConstant,
                amplitude: 1.0,
                square_side: Some(2),
                position: Some((1, 1)),
                target_class: 1,
                prevalence: 1.0,
            }],
            split_policy: SplitPolicy::CorrelatedTrainBalancedEval,
            teacher_subset_fraction: 0.2,
            teacher_contamination: 0.0,
        }
    }

    #[test]
    fn roundtrip_is_lossless() {
        let m = manifest();
        let bundle = build_splits::<f32>(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &m, &bundle).unwrap();
        let (m2, b2) = read_dataset::<f32>(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(bundle, b2);
    }

    #[test]
    fn record_count_matches_dataset_size() {
        let m = manifest();
        let bundle = build_splits::<f32>(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &m, &bundle).unwrap();
        let text = std::fs::read_to_string(dir.path().join("index.csv")).unwrap();
        // 200 samples => header + 200 records
        assert_eq!(text.lines().count(), 201);
    }

    #[test]
    fn unknown_kind_tag_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest();
        let bundle = build_splits::<f32>(&m).unwrap();
        write_dataset(dir.path(), &m, &bundle).unwrap();
        let path = dir.path().join("manifest.toml");
        let mangled = std::fs::read_to_string(&path)
            .unwrap()
            .replace("square_constant", "square_spinning");
        std::fs::write(&path, mangled).unwrap();
        let err = read_dataset::<f32>(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");
    }

    #[test]
    fn missing_and_corrupt_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dataset::<f32>(dir.path()).unwrap_err();
        assert!(err.to_string().contains("manifest.toml"));

        let m = manifest();
        let bundle = build_splits::<f32>(&m).unwrap();
        write_dataset(dir.path(), &m, &bundle).unwrap();
        std::fs::write(dir.path().join("pixels.bin"), b"XXXX????").unwrap();
        let err = read_dataset::<f32>(dir.path()).unwrap_err();
        assert!(err.to_string().contains("pixels.bin"), "{err}");
    }
}
