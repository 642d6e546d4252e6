//! Dataset file formats: voxel grids, landmark JSON, and the manifest.
//!
//! Binary grids: magic `VOXB1`, little-endian u32 D, then D³ bytes of 0/1.
//! Probabilistic grids: magic `VOXF1`, u32 D, then D³ little-endian f32.
//! Landmarks: UTF-8 JSON with the fixed name order and ten [x,y,z] points.
//! The manifest lists ids, file paths, split membership, annotation flags,
//! the generator seed, and a config hash.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::voxel::{LandmarkSet, VoxelGrid, LANDMARK_NAMES, N_LANDMARKS};

const MAGIC_BINARY: &[u8; 5] = b"VOXB1";
const MAGIC_FLOAT: &[u8; 5] = b"VOXF1";

/// Writes a grid: binary layout when every value is exactly 0/1, float
/// layout otherwise.
pub fn write_voxel_file(path: &Path, grid: &VoxelGrid) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    if grid.is_binary() {
        w.write_all(MAGIC_BINARY)?;
        w.write_all(&(grid.dim() as u32).to_le_bytes())?;
        for &v in grid.values() {
            w.write_all(&[u8::from(v == 1.0)])?;
        }
    } else {
        w.write_all(MAGIC_FLOAT)?;
        w.write_all(&(grid.dim() as u32).to_le_bytes())?;
        for &v in grid.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads either voxel layout. This is also the import path for externally
/// produced grids.
pub fn read_voxel_file(path: &Path) -> Result<VoxelGrid> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    let mut dim_bytes = [0u8; 4];
    r.read_exact(&mut dim_bytes)?;
    let dim = u32::from_le_bytes(dim_bytes) as usize;
    let n = dim * dim * dim;
    let values = match &magic {
        m if m == MAGIC_BINARY => {
            let mut bytes = vec![0u8; n];
            r.read_exact(&mut bytes)?;
            bytes
                .into_iter()
                .map(|b| match b {
                    0 => Ok(0.0),
                    1 => Ok(1.0),
                    other => Err(Error::Data(format!(
                        "{}: binary voxel byte {other} is not 0/1",
                        path.display()
                    ))),
                })
                .collect::<Result<Vec<f32>>>()?
        }
        m if m == MAGIC_FLOAT => {
            let mut values = Vec::with_capacity(n);
            let mut buf = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                values.push(f32::from_le_bytes(buf));
            }
            values
        }
        other => {
            return Err(Error::Data(format!(
                "{}: unknown voxel magic {other:?}",
                path.display()
            )))
        }
    };
    VoxelGrid::from_values(dim, values)
}

#[derive(Debug, Serialize, Deserialize)]
struct LandmarkFile {
    order: Vec<String>,
    points: Vec<[f64; 3]>,
}

pub fn write_landmark_file(path: &Path, landmarks: &LandmarkSet) -> Result<()> {
    let body = LandmarkFile {
        order: LANDMARK_NAMES.iter().map(|s| s.to_string()).collect(),
        points: landmarks.points().to_vec(),
    };
    let json = serde_json::to_string_pretty(&body)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_landmark_file(path: &Path) -> Result<LandmarkSet> {
    let body: LandmarkFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if body.order != LANDMARK_NAMES {
        return Err(Error::Data(format!(
            "{}: landmark order differs from the fixed order",
            path.display()
        )));
    }
    if body.points.len() != N_LANDMARKS {
        return Err(Error::Data(format!(
            "{}: expected {N_LANDMARKS} points, got {}",
            path.display(),
            body.points.len()
        )));
    }
    let mut pts = [[0.0; 3]; N_LANDMARKS];
    pts.copy_from_slice(&body.points);
    Ok(LandmarkSet::new(pts))
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: usize,
    shape_file: String,
    landmark_file: Option<String>,
    split: String,
    annotated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    dim: usize,
    count: usize,
    hard: bool,
    config_hash: String,
    samples: Vec<ManifestRow>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes all sample files plus the manifest into `dir`.
pub fn write_dataset(dir: &Path, dataset: &Dataset, config_hash: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::with_capacity(dataset.samples.len());
    for sample in &dataset.samples {
        let shape_file = format!("sample_{:05}.vox", sample.id);
        write_voxel_file(&dir.join(&shape_file), &sample.shape)?;
        let landmark_file = match &sample.landmarks {
            Some(lms) => {
                let name = format!("sample_{:05}.landmarks.json", sample.id);
                write_landmark_file(&dir.join(&name), lms)?;
                Some(name)
            }
            None => None,
        };
        let split = if dataset.split.train.contains(&sample.id) {
            "train"
        } else {
            "test"
        };
        let annotated = dataset.split.annotated_train.contains(&sample.id)
            || dataset.split.annotated_test.contains(&sample.id);
        rows.push(ManifestRow {
            id: sample.id,
            shape_file,
            landmark_file,
            split: split.to_string(),
            annotated,
        });
    }
    let manifest = Manifest {
        seed: dataset.seed,
        dim: dataset.dim,
        count: dataset.samples.len(),
        hard: dataset.hard,
        config_hash: config_hash.to_string(),
        samples: rows,
    };
    std::fs::write(
        dir.join(MANIFEST_NAME),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Loads a dataset directory back into memory. Chair parameters are not
/// stored on disk, so loaded samples carry `params: None`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    if !manifest_path.exists() {
        return Err(Error::Data(format!(
            "{}: no {MANIFEST_NAME} found",
            dir.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        annotated_train: Vec::new(),
        annotated_test: Vec::new(),
        seed: manifest.seed,
    };
    for row in &manifest.samples {
        let shape = read_voxel_file(&dir.join(&row.shape_file))?;
        if shape.dim() != manifest.dim {
            return Err(Error::Data(format!(
                "{}: grid dim {} does not match manifest dim {}",
                row.shape_file,
                shape.dim(),
                manifest.dim
            )));
        }
        let landmarks = row
            .landmark_file
            .as_ref()
            .map(|f| read_landmark_file(&dir.join(f)))
            .transpose()?;
        match row.split.as_str() {
            "train" => {
                split.train.push(row.id);
                if row.annotated {
                    split.annotated_train.push(row.id);
                }
            }
            "test" => {
                split.test.push(row.id);
                if row.annotated {
                    split.annotated_test.push(row.id);
                }
            }
            other => {
                return Err(Error::Data(format!(
                    "sample {}: unknown split {other}",
                    row.id
                )))
            }
        }
        samples.push(Sample {
            id: row.id,
            shape,
            landmarks,
            params: None,
            clipped: false,
        });
    }
    samples.sort_by_key(|s| s.id);
    Ok(Dataset {
        dim: manifest.dim,
        seed: manifest.seed,
        hard: manifest.hard,
        samples,
        split,
    })
}

/// Dataset manifest hash as written at generation time.
pub fn manifest_config_hash(dir: &Path) -> Result<String> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_NAME))?)?;
    Ok(manifest.config_hash)
}

/// Paths of every file a dataset write produces, for byte-level comparisons.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| Ok(e?.path()))
        .collect::<Result<_>>()?;
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_dataset;

    #[test]
    fn voxel_file_roundtrips_both_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let mut binary = VoxelGrid::new(16);
        binary.set(1, 2, 3, 1.0);
        let path = dir.path().join("b.vox");
        write_voxel_file(&path, &binary).unwrap();
        assert_eq!(read_voxel_file(&path).unwrap(), binary);
        // Binary layout is one byte per voxel.
        assert_eq!(
            std::fs::metadata(&path).unwrap().len(),
            5 + 4 + 16 * 16 * 16
        );

        let mut float = VoxelGrid::new(16);
        float.set(4, 5, 6, 0.25);
        let path = dir.path().join("f.vox");
        write_voxel_file(&path, &float).unwrap();
        assert_eq!(read_voxel_file(&path).unwrap(), float);
        assert_eq!(
            std::fs::metadata(&path).unwrap().len(),
            5 + 4 + 4 * 16 * 16 * 16
        );
    }

    #[test]
    fn landmark_file_roundtrip_and_order_check() {
        let dir = tempfile::tempdir().unwrap();
        let lms = crate::dataset::analytic_landmarks(&crate::dataset::sample_chair(3));
        let path = dir.path().join("l.json");
        write_landmark_file(&path, &lms).unwrap();
        assert_eq!(read_landmark_file(&path).unwrap(), lms);

        let mut tampered: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        tampered["order"][0] = serde_json::json!("wrong-name");
        std::fs::write(&path, tampered.to_string()).unwrap();
        assert!(read_landmark_file(&path).is_err());
    }

    #[test]
    fn dataset_write_load_roundtrip() {
        let dataset = generate_dataset(12, 16, 3, 0.25, 0.5, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &dataset, "deadbeef").unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.dim, 16);
        assert_eq!(loaded.samples.len(), 12);
        assert_eq!(loaded.split.train, dataset.split.train);
        assert_eq!(loaded.split.annotated_test, dataset.split.annotated_test);
        for (a, b) in loaded.samples.iter().zip(&dataset.samples) {
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.landmarks, b.landmarks);
        }
        assert_eq!(manifest_config_hash(dir.path()).unwrap(), "deadbeef");
    }

    #[test]
    fn dataset_writes_are_byte_identical() {
        let dataset = generate_dataset(6, 16, 4, 0.34, 0.5, false).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_dataset(d1.path(), &dataset, "h").unwrap();
        write_dataset(d2.path(), &dataset, "h").unwrap();
        let f1 = dataset_files(d1.path()).unwrap();
        let f2 = dataset_files(d2.path()).unwrap();
        assert_eq!(f1.len(), f2.len());
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(a.file_name(), b.file_name());
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{a:?} differs"
            );
        }
    }
}
