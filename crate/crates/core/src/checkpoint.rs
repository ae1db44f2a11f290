//! Portable array container: magic "XUM1", u32-LE manifest length, UTF-8 JSON
//! manifest (format_version, tag, embedded Config, entry table), then one raw
//! blob of f32 little-endian array data. The same container carries model
//! checkpoints (tag "checkpoint") and motion sequences (tag "xum-motion").

use crate::config::Config;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"XUM1";
pub const FORMAT_VERSION: u32 = 1;
pub const TAG_CHECKPOINT: &str = "checkpoint";
pub const TAG_MOTION: &str = "xum-motion";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    #[serde(default = "default_tag")]
    pub tag: String,
    pub config: Config,
    pub entries: Vec<ManifestEntry>,
}

fn default_tag() -> String {
    TAG_CHECKPOINT.to_string()
}

pub fn save_checkpoint<S: Scalar>(path: &Path, store: &ParamStore<S>, config: &Config) -> Result<()> {
    save_container(path, store, config, TAG_CHECKPOINT)
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(ParamStore<S>, Config)> {
    let (store, manifest) = load_container(path)?;
    if manifest.tag != TAG_CHECKPOINT {
        return Err(Error::CheckpointFormat(format!(
            "expected tag {TAG_CHECKPOINT:?}, found {:?}",
            manifest.tag
        )));
    }
    Ok((store, manifest.config))
}

pub fn save_container<S: Scalar>(
    path: &Path,
    store: &ParamStore<S>,
    config: &Config,
    tag: &str,
) -> Result<()> {
    let mut entries = Vec::with_capacity(store.len());
    let mut blob: Vec<u8> = Vec::with_capacity(store.num_scalars() * 4);
    for (name, arr) in store.iter() {
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {name}")));
        }
        let byte_offset = blob.len() as u64;
        for &v in arr.iter() {
            blob.extend_from_slice(&(v.to_f() as f32).to_le_bytes());
        }
        entries.push(ManifestEntry {
            name: name.clone(),
            dtype: "f32".to_string(),
            shape: arr.shape().to_vec(),
            byte_offset,
            byte_length: blob.len() as u64 - byte_offset,
        });
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        tag: tag.to_string(),
        config: config.clone(),
        entries,
    };
    let manifest_json = serde_json::to_vec(&manifest)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let write = |f: &mut std::fs::File, bytes: &[u8]| -> Result<()> {
        f.write_all(bytes).map_err(|e| Error::io(path.display().to_string(), e))
    };
    write(&mut file, MAGIC)?;
    write(&mut file, &(manifest_json.len() as u32).to_le_bytes())?;
    write(&mut file, &manifest_json)?;
    write(&mut file, &blob)?;
    Ok(())
}

pub fn load_container<S: Scalar>(path: &Path) -> Result<(ParamStore<S>, CheckpointManifest)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let fmt = |m: String| Error::CheckpointFormat(m);
    if bytes.len() < 8 {
        return Err(fmt(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fmt(format!("bad magic {:?}", &bytes[0..4])));
    }
    let manifest_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + manifest_len {
        return Err(fmt(format!(
            "declared manifest length {} exceeds file size {}",
            manifest_len,
            bytes.len()
        )));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[8..8 + manifest_len])
        .map_err(|e| fmt(format!("manifest does not parse: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(fmt(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    let blob = &bytes[8 + manifest_len..];

    // Entry table validation: dtype, unique names, sizes, bounds, overlap.
    let mut names = std::collections::BTreeSet::new();
    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        if e.dtype != "f32" {
            return Err(fmt(format!("entry {}: unsupported dtype {:?}", e.name, e.dtype)));
        }
        if !names.insert(e.name.as_str()) {
            return Err(fmt(format!("duplicate entry name {:?}", e.name)));
        }
        let numel: usize = e.shape.iter().product();
        if e.byte_length != (numel * 4) as u64 {
            return Err(fmt(format!(
                "entry {}: byte_length {} does not match shape {:?}",
                e.name, e.byte_length, e.shape
            )));
        }
        let end = e
            .byte_offset
            .checked_add(e.byte_length)
            .ok_or_else(|| fmt(format!("entry {}: offset overflow", e.name)))?;
        if end > blob.len() as u64 {
            return Err(fmt(format!(
                "entry {}: [{}, {}) outside blob of {} bytes (truncated?)",
                e.name,
                e.byte_offset,
                end,
                blob.len()
            )));
        }
        spans.push((e.byte_offset, end, &e.name));
    }
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(fmt(format!(
                "entries {:?} and {:?} overlap",
                pair[0].2, pair[1].2
            )));
        }
    }
    let max_end = spans.last().map(|s| s.1).unwrap_or(0);
    if max_end != blob.len() as u64 {
        return Err(fmt(format!(
            "blob length {} does not match entry extent {}",
            blob.len(),
            max_end
        )));
    }

    let mut store = ParamStore::new();
    for e in &manifest.entries {
        let numel: usize = e.shape.iter().product();
        let start = e.byte_offset as usize;
        let vals: Vec<S> = (0..numel)
            .map(|i| {
                let o = start + 4 * i;
                let f = f32::from_le_bytes(blob[o..o + 4].try_into().unwrap());
                S::from_f(f as f64)
            })
            .collect();
        store.insert(
            &e.name,
            ArrayD::from_shape_vec(IxDyn(&e.shape), vals).expect("validated length"),
        );
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{add_param, Init};

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        add_param(&mut s, 5, "enc.w", &[3, 4], Init::Normal(1.0));
        add_param(&mut s, 5, "enc.b", &[4], Init::Normal(0.3));
        add_param(&mut s, 5, "gen.w", &[2, 2, 2], Init::Normal(0.7));
        s
    }

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xum");
        let store = sample_store();
        let cfg = Config::default();
        save_checkpoint(&path, &store, &cfg).unwrap();
        let (back, cfg2) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(store.names(), back.names());
        for (name, arr) in store.iter() {
            let b = back.get(name).unwrap();
            assert_eq!(arr.shape(), b.shape());
            for (x, y) in arr.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{name} differs");
            }
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xum");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(matches!(err, Error::CheckpointFormat(_)), "{err}");
    }

    #[test]
    fn rejects_truncated_blob() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xum");
        save_checkpoint(&path, &sample_store(), &Config::default()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(matches!(err, Error::CheckpointFormat(_)), "{err}");
    }

    #[test]
    fn rejects_corrupt_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xum");
        save_checkpoint(&path, &sample_store(), &Config::default()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[10] = b'~'; // stomp inside the JSON
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(matches!(err, Error::CheckpointFormat(_)), "{err}");
    }

    #[test]
    fn rejects_overlapping_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xum");
        // Hand-build a manifest whose two entries overlap.
        let cfg = Config::default();
        let manifest = CheckpointManifest {
            format_version: FORMAT_VERSION,
            tag: TAG_CHECKPOINT.into(),
            config: cfg,
            entries: vec![
                ManifestEntry {
                    name: "a".into(),
                    dtype: "f32".into(),
                    shape: vec![2],
                    byte_offset: 0,
                    byte_length: 8,
                },
                ManifestEntry {
                    name: "b".into(),
                    dtype: "f32".into(),
                    shape: vec![2],
                    byte_offset: 4,
                    byte_length: 8,
                },
            ],
        };
        let mj = serde_json::to_vec(&manifest).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(mj.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&mj);
        bytes.extend_from_slice(&[0u8; 12]);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");
    }

    #[test]
    fn rejects_non_finite_params_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xum");
        let mut store = sample_store();
        store.get_mut("enc.w").unwrap()[[0, 0]] = f32::NAN;
        let err = save_checkpoint(&path, &store, &Config::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn motion_tag_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.xum-motion");
        let store = sample_store();
        save_container(&path, &store, &Config::default(), TAG_MOTION).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(matches!(err, Error::CheckpointFormat(_)), "{err}");
        let (_, manifest) = load_container::<f32>(&path).unwrap();
        assert_eq!(manifest.tag, TAG_MOTION);
    }
}
