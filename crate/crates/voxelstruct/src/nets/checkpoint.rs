//! Checkpoint file format.
//!
//! Layout: magic `VSCKPT1`, then a little-endian u64 entry count, then per
//! entry: key length (u64), UTF-8 key bytes, rank (u64), dims (u64 each), and
//! the values as little-endian f32. One file may hold any subset of
//! {encoder, generator, detector}, keyed by the `enc/`, `gen/`, `det/`
//! prefixes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelParams, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 7] = b"VSCKPT1";

/// Writes the union of the given parameter sets. Entries are sorted by key,
/// so identical parameters always produce identical bytes.
pub fn write_checkpoint(path: &Path, sets: &[&ParamSet]) -> Result<()> {
    let mut entries: BTreeMap<&str, &Tensor> = BTreeMap::new();
    for set in sets {
        for (k, v) in set.iter() {
            entries.insert(k, v);
        }
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (key, tensor) in entries {
        w.write_all(&(key.len() as u64).to_le_bytes())?;
        w.write_all(key.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u64).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Convenience: writes all three components of a model.
pub fn write_model(path: &Path, params: &ModelParams) -> Result<()> {
    write_checkpoint(path, &[&params.encoder, &params.generator, &params.detector])
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Reads every entry of a checkpoint file.
pub fn read_checkpoint(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let count = read_u64(&mut r)?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let key_len = read_u64(&mut r)? as usize;
        let mut key = vec![0u8; key_len];
        r.read_exact(&mut key)?;
        let key = String::from_utf8(key)
            .map_err(|e| Error::Checkpoint(format!("{}: bad key: {e}", path.display())))?;
        let rank = read_u64(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from(f32::from_le_bytes(buf)));
        }
        entries.insert(key, Tensor::from_vec(shape, data)?);
    }
    Ok(entries)
}

/// Splits raw checkpoint entries into model components by key prefix.
/// Components absent from the file come back empty.
pub fn split_entries(entries: BTreeMap<String, Tensor>) -> ModelParams {
    let mut params = ModelParams::default();
    for (key, tensor) in entries {
        let set = if key.starts_with("enc/") {
            &mut params.encoder
        } else if key.starts_with("gen/") {
            &mut params.generator
        } else if key.starts_with("det/") {
            &mut params.detector
        } else {
            continue;
        };
        set.insert(key, tensor);
    }
    params
}

/// Reads a checkpoint and splits it into components.
pub fn read_model(path: &Path) -> Result<ModelParams> {
    Ok(split_entries(read_checkpoint(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{expected_keys, init_params, NetConfig};

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            grid_dim: 16,
            latent_dim: 4,
            encoder_channels: vec![2, 3],
            detector_channels: vec![2, 2, 2],
            detector_kernels: vec![3, 3, 3],
            detector_fc: vec![8, 8],
            ..NetConfig::default()
        }
    }

    #[test]
    fn roundtrip_preserves_keys_shapes_and_f32_values() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_model(&path, &params).unwrap();

        let loaded = read_model(&path).unwrap();
        let (enc, gen, det) = expected_keys(&cfg);
        loaded.encoder.validate_keys(&enc, "encoder").unwrap();
        loaded.generator.validate_keys(&gen, "generator").unwrap();
        loaded.detector.validate_keys(&det, "detector").unwrap();
        for (key, orig) in params.encoder.iter() {
            let got = loaded.encoder.get(key).unwrap();
            assert_eq!(got.shape(), orig.shape());
            for (a, b) in got.data().iter().zip(orig.data()) {
                assert_eq!(*a, f64::from(*b as f32), "f32 quantization must be exact");
            }
        }
    }

    #[test]
    fn partial_checkpoint_holds_one_component() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc_only.ckpt");
        write_checkpoint(&path, &[&params.encoder]).unwrap();
        let loaded = read_model(&path).unwrap();
        assert!(!loaded.encoder.is_empty());
        assert!(loaded.generator.is_empty());
        assert!(loaded.detector.is_empty());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTCKPTxxxxxxxx").unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn identical_params_produce_identical_bytes() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        write_model(&a, &params).unwrap();
        write_model(&b, &params).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
