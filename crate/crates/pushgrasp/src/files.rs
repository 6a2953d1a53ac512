//! On-disk formats: scene documents, 16-bit PGM depth exports, JSON configs
//! and checkpoints (a JSON manifest next to a little-endian `f32` blob).
//!
//! Every file is written to a temporary sibling and renamed into place, so a
//! crash never leaves a half-written checkpoint behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pushgrasp_core::nn::{decode_blob, encode_blob, NetManifest, Network, CHECKPOINT_FORMAT_VERSION};
use pushgrasp_core::policy::{CaePretrainReport, Policy, PolicyManifest};
use pushgrasp_core::sim::{DepthImage, GripperState, Scene, SceneObject, TableSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SCENE_FORMAT_VERSION: u32 = 1;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Appends one JSON line and flushes it.
pub fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.flush()?;
    Ok(())
}

/// Versioned scene document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDocument {
    pub version: u32,
    pub table: TableSpec,
    pub objects: Vec<SceneObject>,
    pub gripper: GripperState,
}

impl From<&Scene> for SceneDocument {
    fn from(s: &Scene) -> Self {
        Self { version: SCENE_FORMAT_VERSION, table: s.table, objects: s.objects.clone(), gripper: s.gripper }
    }
}

impl SceneDocument {
    pub fn into_scene(self) -> Result<Scene> {
        if self.version != SCENE_FORMAT_VERSION {
            bail!("unsupported scene format version {}", self.version);
        }
        let scene = Scene { table: self.table, objects: self.objects, gripper: self.gripper };
        scene.validate()?;
        Ok(scene)
    }
}

/// Binary 16-bit PGM, `value = round(depth / H * 65535)`, big-endian samples.
pub fn depth_to_pgm(img: &DepthImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.cols, img.rows).into_bytes();
    for &v in &img.values {
        let q = (v / img.camera_height * 65535.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

/// Parses a PGM produced by [`depth_to_pgm`] back into ranges.
pub fn pgm_to_depth(bytes: &[u8], camera_height: f64) -> Result<DepthImage> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated PGM header");
        }
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        bail!("not a 16-bit binary PGM");
    }
    let cols: usize = fields[1].parse()?;
    let rows: usize = fields[2].parse()?;
    let data = &bytes[pos.min(bytes.len())..];
    if data.len() != rows * cols * 2 {
        bail!("PGM holds {} bytes of samples, expected {}", data.len(), rows * cols * 2);
    }
    let values = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0 * camera_height)
        .collect();
    Ok(DepthImage { rows, cols, camera_height, values })
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Pretrained encoder plus the report of the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format_version: u32,
    pub encoder: NetManifest,
    pub blob_len: usize,
    pub report: CaePretrainReport,
}

pub fn save_encoder(path: &Path, encoder: &Network, report: &CaePretrainReport) -> Result<()> {
    let mut blob = Vec::new();
    let manifest = encoder.export(&mut blob);
    write_atomic(&blob_path(path), &encode_blob(&blob))?;
    write_json(
        path,
        &EncoderCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            encoder: manifest,
            blob_len: blob.len(),
            report: report.clone(),
        },
    )
}

pub fn load_encoder(path: &Path) -> Result<(Network, CaePretrainReport)> {
    let ck: EncoderCheckpoint = read_json(path)?;
    if ck.format_version != CHECKPOINT_FORMAT_VERSION {
        bail!("unsupported checkpoint format version {}", ck.format_version);
    }
    let blob = load_blob(&blob_path(path), ck.blob_len)?;
    Ok((Network::import(&ck.encoder, &blob)?, ck.report))
}

fn load_blob(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let blob = decode_blob(&bytes)?;
    if blob.len() != expected {
        bail!("{} holds {} values, manifest expects {}", path.display(), blob.len(), expected);
    }
    Ok(blob)
}

pub fn save_policy(path: &Path, policy: &Policy) -> Result<()> {
    let (manifest, blob) = policy.export();
    write_atomic(&blob_path(path), &encode_blob(&blob))?;
    write_json(path, &manifest)
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let manifest: PolicyManifest = read_json(path)?;
    let blob = load_blob(&blob_path(path), manifest.blob_len)?;
    Ok(Policy::import(&manifest, &blob)?)
}
