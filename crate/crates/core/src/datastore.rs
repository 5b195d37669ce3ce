//! On-disk persistence: one directory per session plus a global ranking file.
//!
//! ```text
//! <root>/ranking.json
//! <root>/<session_id>/manifest.json
//! <root>/<session_id>/annotations.json   (written when the session finishes)
//! <root>/<session_id>/images/000001.png
//! ```
//!
//! Every file is written to a `.tmp` sibling and renamed into place, so a
//! reader never observes a partially written manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{
    ranking, FinishedSummary, FrameRecord, RankingEntry, Session, SessionConfig, SessionError,
};
use crate::Pose;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const RANKING_FILE: &str = "ranking.json";
pub const IMAGES_DIR: &str = "images";

/// A valid 1×1 grayscale PNG used as the image payload of synthetic frames.
pub const PLACEHOLDER_PNG: &[u8] = &[
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52,
    0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00, 0x00, 0x00, 0x00, 0x3a, 0x7e, 0x9b,
    0x55, 0x00, 0x00, 0x00, 0x0a, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x60, 0x00, 0x00, 0x00,
    0x02, 0x00, 0x01, 0x48, 0xaf, 0xa4, 0x71, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae,
    0x42, 0x60, 0x82,
];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path} has schema version {found}, expected {MANIFEST_SCHEMA_VERSION}")]
    Version { path: PathBuf, found: u32 },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Image path relative to the session directory, e.g. `images/000003.png`.
pub fn image_relpath(image_id: u64) -> String {
    format!("{IMAGES_DIR}/{image_id:06}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutParams {
    pub n: usize,
    pub radius: f64,
    pub layout_from_marker: Pose,
}

/// Everything needed to reload a session and its dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub session_id: String,
    /// Images are placeholders produced by the simulator.
    pub synthetic: bool,
    pub config: SessionConfig,
    pub layout: LayoutParams,
    pub created_at_ms: u64,
    pub started_at_ms: Option<u64>,
    pub finished_at_ms: Option<u64>,
    pub capture_time_s: Option<f64>,
    pub collected_count: usize,
    pub frames: Vec<FrameRecord>,
}

impl DatasetManifest {
    pub fn from_session(session: &Session, synthetic: bool) -> Self {
        let cfg = session.config().clone();
        DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            session_id: session.id().to_string(),
            synthetic,
            layout: LayoutParams {
                n: session.layout().n_patches,
                radius: session.layout().radius,
                layout_from_marker: cfg.layout_from_marker,
            },
            config: cfg,
            created_at_ms: session.created_at_ms(),
            started_at_ms: session.started_at_ms(),
            finished_at_ms: session.finished_at_ms(),
            capture_time_s: session.capture_time_s(),
            collected_count: session.coverage().collected_count(),
            frames: session.frames().to_vec(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.finished_at_ms.is_some()
    }

    pub fn to_session(&self) -> Result<Session, SessionError> {
        Session::restore(
            self.session_id.clone(),
            self.config.clone(),
            self.created_at_ms,
            self.started_at_ms,
            self.finished_at_ms,
            self.frames.clone(),
        )
    }

    pub fn summary(&self) -> Option<FinishedSummary> {
        Some(FinishedSummary {
            session_id: self.session_id.clone(),
            mode: self.config.mode,
            capture_time_s: self.capture_time_s?,
            image_count: self.frames.len(),
            finished_at_ms: self.finished_at_ms?,
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = stage(path, bytes)?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes `<path>.tmp` and syncs it; the caller renames it into place.
fn stage(path: &Path, bytes: &[u8]) -> Result<PathBuf, StoreError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    Ok(tmp)
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("in-memory values serialize");
    bytes.push(b'\n');
    bytes
}

pub fn read_manifest(session_dir: &Path) -> Result<DatasetManifest, StoreError> {
    let path = session_dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            StoreError::NotFound(session_dir.display().to_string())
        } else {
            StoreError::Io { path: path.clone(), source }
        }
    })?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| StoreError::Parse { path: path.clone(), message: e.to_string() })?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == MANIFEST_SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(StoreError::Version { path, found: v as u32 }),
        None => {
            return Err(StoreError::Parse { path, message: "missing schema_version".into() })
        }
    }
    serde_json::from_value(value).map_err(|e| StoreError::Parse { path, message: e.to_string() })
}

pub fn write_manifest(session_dir: &Path, manifest: &DatasetManifest) -> Result<(), StoreError> {
    write_atomic(&session_dir.join(MANIFEST_FILE), &to_json(manifest))
}

/// Writes the frame's image and appends the record to the manifest.
///
/// The image lands first; the manifest rename is the commit point.
pub fn persist_frame(session_dir: &Path, image: &[u8], record: &FrameRecord) -> Result<PathBuf, StoreError> {
    let mut manifest = read_manifest(session_dir)?;
    if manifest.frames.iter().any(|f| f.image_id == record.image_id) {
        return Err(StoreError::Integrity(format!("duplicate image id {}", record.image_id)));
    }
    if manifest.frames.iter().any(|f| f.patch_index == record.patch_index) {
        return Err(StoreError::Integrity(format!("patch {} stored twice", record.patch_index)));
    }
    if record.image_ref != image_relpath(record.image_id) {
        return Err(StoreError::Integrity(format!(
            "image_ref {} does not match image id {}",
            record.image_ref, record.image_id
        )));
    }
    let image_path = session_dir.join(&record.image_ref);
    if let Some(parent) = image_path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_atomic(&image_path, image)?;

    manifest.frames.push(record.clone());
    manifest.collected_count = manifest.frames.len();
    let path = session_dir.join(MANIFEST_FILE);
    let tmp = stage(&path, &to_json(&manifest))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(image_path)
}

#[derive(Serialize)]
struct CocoImage<'a> {
    id: u64,
    file_name: &'a str,
    width: u32,
    height: u32,
}

#[derive(Serialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    bbox: [u32; 4],
    area: u64,
    iscrowd: u8,
}

#[derive(Serialize)]
struct CocoCategory<'a> {
    id: u32,
    name: &'a str,
}

#[derive(Serialize)]
struct CocoDocument<'a> {
    images: Vec<CocoImage<'a>>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory<'a>>,
}

/// COCO-style JSON for a finished manifest. Byte-stable for a given manifest.
pub fn coco_json(manifest: &DatasetManifest) -> Result<String, StoreError> {
    if !manifest.is_finished() || manifest.frames.is_empty() {
        return Err(StoreError::Precondition(format!(
            "session {} has not finished",
            manifest.session_id
        )));
    }
    let k = &manifest.config.intrinsics;
    let model = &manifest.config.object_model;
    let doc = CocoDocument {
        images: manifest
            .frames
            .iter()
            .map(|f| CocoImage { id: f.image_id, file_name: &f.image_ref, width: k.width, height: k.height })
            .collect(),
        annotations: manifest
            .frames
            .iter()
            .map(|f| {
                let b = f.annotation.bbox;
                CocoAnnotation {
                    id: f.image_id,
                    image_id: f.image_id,
                    category_id: f.annotation.class_id,
                    bbox: b.to_xywh(),
                    area: b.width() as u64 * b.height() as u64,
                    iscrowd: 0,
                }
            })
            .collect(),
        categories: vec![CocoCategory { id: model.class_id, name: &model.class_name }],
    };
    Ok(String::from_utf8(to_json(&doc)).expect("json is utf-8"))
}

/// Reads the session's manifest and renders its COCO annotations.
pub fn export_annotations(session_dir: &Path) -> Result<String, StoreError> {
    coco_json(&read_manifest(session_dir)?)
}

/// Root of the on-disk store.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, session_id: &str) -> PathBuf {
        self.root.join(session_id)
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.session_dir(session_id).join(MANIFEST_FILE).exists()
    }

    /// Creates the session directory and its initial manifest.
    pub fn create_session(&self, manifest: &DatasetManifest) -> Result<PathBuf, StoreError> {
        if !is_safe_id(&manifest.session_id) {
            return Err(StoreError::Integrity(format!("bad session id '{}'", manifest.session_id)));
        }
        let dir = self.session_dir(&manifest.session_id);
        if dir.join(MANIFEST_FILE).exists() {
            return Err(StoreError::Integrity(format!(
                "session {} already exists",
                manifest.session_id
            )));
        }
        let images = dir.join(IMAGES_DIR);
        fs::create_dir_all(&images).map_err(io_err(&images))?;
        write_manifest(&dir, manifest)?;
        Ok(dir)
    }

    pub fn load_session(&self, session_id: &str) -> Result<DatasetManifest, StoreError> {
        if !is_safe_id(session_id) {
            return Err(StoreError::NotFound(session_id.to_string()));
        }
        read_manifest(&self.session_dir(session_id)).map_err(|e| match e {
            StoreError::NotFound(_) => StoreError::NotFound(session_id.to_string()),
            other => other,
        })
    }

    /// All session manifests under the root, ordered by directory name.
    pub fn list_sessions(&self) -> Result<Vec<DatasetManifest>, StoreError> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&self.root)
            .map_err(io_err(&self.root))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.join(MANIFEST_FILE).is_file())
            .collect();
        dirs.sort();
        dirs.iter().map(|d| read_manifest(d)).collect()
    }

    /// Finished sessions, ordered by finish time then id.
    pub fn list_finished(&self) -> Result<Vec<DatasetManifest>, StoreError> {
        let mut done: Vec<DatasetManifest> =
            self.list_sessions()?.into_iter().filter(|m| m.is_finished()).collect();
        done.sort_by(|a, b| {
            a.finished_at_ms.cmp(&b.finished_at_ms).then_with(|| a.session_id.cmp(&b.session_id))
        });
        Ok(done)
    }

    /// Writes the final manifest and the COCO export of a finished session.
    pub fn finalize_session(&self, manifest: &DatasetManifest) -> Result<(), StoreError> {
        let dir = self.session_dir(&manifest.session_id);
        let coco = coco_json(manifest)?;
        for f in &manifest.frames {
            if !dir.join(&f.image_ref).is_file() {
                return Err(StoreError::Integrity(format!("missing image {}", f.image_ref)));
            }
        }
        write_manifest(&dir, manifest)?;
        write_atomic(&dir.join(ANNOTATIONS_FILE), coco.as_bytes())
    }

    pub fn ranking(&self) -> Result<Vec<RankingEntry>, StoreError> {
        let summaries: Vec<FinishedSummary> =
            self.list_finished()?.iter().filter_map(DatasetManifest::summary).collect();
        Ok(ranking(&summaries))
    }

    /// Recomputes `ranking.json` from the finished sessions on disk.
    pub fn refresh_ranking(&self) -> Result<Vec<RankingEntry>, StoreError> {
        let entries = self.ranking()?;
        write_atomic(&self.root.join(RANKING_FILE), &to_json(&entries))?;
        Ok(entries)
    }
}

/// Session ids become directory names: ASCII alphanumerics, `-` and `_` only.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}
