//! Disk layout per sample directory `sample_%06d/`:
//! `ref.png`, `drive_%03d.png`, `target_%03d.png` (8-bit RGB), `maps.bin`
//! (array container holding ground-truth keypoints and optionally the full
//! heatmap/normal stacks), `meta.json` (specs, boxes, keypoints, mode).
//! Without full maps, the heavy arrays regenerate bit-identically from the
//! specs in meta.json via `render_maps`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use xum_core::checkpoint::save_container;
use xum_core::nn::ParamStore;
use xum_core::{Config, Error, Result};

use crate::render::render_maps;
use crate::sample::CompactSample;

pub const TAG_MAPS: &str = "xum-maps";

pub fn sample_dir_name(i: usize) -> String {
    format!("sample_{i:06}")
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.display().to_string(), e)
}

fn write_png(path: &Path, side: usize, data: &[u8]) -> Result<()> {
    let img = image::RgbImage::from_raw(side as u32, side as u32, data.to_vec())
        .ok_or_else(|| Error::Data(format!("{}: buffer does not match {side}x{side} rgb", path.display())))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Data(format!("{}: png encode failed: {e}", path.display())))
}

fn read_png(path: &Path, side: usize) -> Result<Vec<u8>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .to_rgb8();
    if img.width() as usize != side || img.height() as usize != side {
        return Err(Error::Data(format!(
            "{}: expected {side}x{side}, got {}x{}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    Ok(img.into_raw())
}

fn maps_store(sample: &CompactSample, full: bool) -> ParamStore<f32> {
    let mut store = ParamStore::<f32>::new();
    let j = sample.target_keypoints.first().map_or(0, |k| k.len());
    for t in 0..sample.clip_len() {
        let kp: Vec<f32> = sample.target_keypoints[t]
            .iter()
            .flatten()
            .map(|&v| v as f32)
            .collect();
        store.insert(
            &format!("t{t:03}.keypoints"),
            Array2::from_shape_vec((j, 2), kp).expect("kp table").into_dyn(),
        );
        let vis: Vec<f32> = sample.target_visible[t]
            .iter()
            .map(|&v| if v { 1.0 } else { 0.0 })
            .collect();
        store.insert(&format!("t{t:03}.visible"), Array1::from_vec(vis).into_dyn());
        if full {
            let maps = render_maps::<f32>(&sample.char_ref, &sample.poses[t], sample.canvas, sample.sigma);
            store.insert(&format!("t{t:03}.heatmaps"), maps.heatmaps.into_dyn());
            store.insert(&format!("t{t:03}.normals"), maps.normals.into_dyn());
            store.insert(&format!("t{t:03}.mask"), maps.normal_mask.into_dyn());
        }
    }
    store
}

fn maps_config(sample: &CompactSample) -> Config {
    Config {
        image_size: sample.canvas,
        heatmap_sigma: sample.sigma,
        clip_len: sample.clip_len().max(1),
        ..Config::default()
    }
}

/// Write samples under `dir` (created if needed). `full_maps` additionally
/// stores the heatmap/normal stacks instead of keypoints alone.
pub fn write_dataset(samples: &[CompactSample], dir: &Path, full_maps: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (i, s) in samples.iter().enumerate() {
        let sdir = dir.join(sample_dir_name(i));
        fs::create_dir_all(&sdir).map_err(|e| io_err(&sdir, e))?;
        write_png(&sdir.join("ref.png"), s.canvas, &s.ref_frame)?;
        for (t, f) in s.drive_frames.iter().enumerate() {
            write_png(&sdir.join(format!("drive_{t:03}.png")), s.canvas, f)?;
        }
        for (t, f) in s.target_frames.iter().enumerate() {
            write_png(&sdir.join(format!("target_{t:03}.png")), s.canvas, f)?;
        }
        save_container(&sdir.join("maps.bin"), &maps_store(s, full_maps), &maps_config(s), TAG_MAPS)?;
        let meta = serde_json::to_string_pretty(s)?;
        fs::write(sdir.join("meta.json"), meta).map_err(|e| io_err(&sdir.join("meta.json"), e))?;
    }
    Ok(())
}

/// Read every `sample_*` directory under `dir`, in name order. An empty or
/// sample-free directory yields an empty list; a sample directory with
/// missing or undersized pieces is an error naming the offending file.
pub fn read_dataset(dir: &Path) -> Result<Vec<CompactSample>> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("sample_"))
        .collect();
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let sdir = dir.join(&name);
        let meta_path = sdir.join("meta.json");
        if !meta_path.is_file() {
            return Err(Error::Data(format!("{name}: missing meta.json")));
        }
        let meta = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
        let mut sample: CompactSample = serde_json::from_str(&meta)
            .map_err(|e| Error::Data(format!("{name}: corrupt meta.json: {e}")))?;
        let t_len = sample.poses.len();
        let missing = |file: String| Error::Data(format!("{name}: metadata present but {file} is missing"));
        let load = |file: String| -> Result<Vec<u8>> {
            let p = sdir.join(&file);
            if !p.is_file() {
                return Err(missing(file));
            }
            read_png(&p, sample.canvas)
        };
        sample.ref_frame = load("ref.png".into())?;
        sample.drive_frames = (0..t_len)
            .map(|t| load(format!("drive_{t:03}.png")))
            .collect::<Result<_>>()?;
        sample.target_frames = (0..t_len)
            .map(|t| load(format!("target_{t:03}.png")))
            .collect::<Result<_>>()?;
        if !sdir.join("maps.bin").is_file() {
            return Err(missing("maps.bin".into()));
        }
        out.push(sample);
    }
    Ok(out)
}
