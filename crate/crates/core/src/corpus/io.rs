//! Dataset files: one JSON document (movies → clips → sentences, blanks and
//! face/segment index records) plus two binary feature packs.
//!
//! Pack layout: magic `FITB`, version `u16`, dimension `u16`, count `u32`,
//! then `count` vectors of little-endian `f32`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BlankAnnotation, Clip, ClipSet, Dataset, FaceObservation, FeatureDims, Split, FORMAT_VERSION};
use crate::error::{FitbError, Result};

pub const PACK_MAGIC: &[u8; 4] = b"FITB";
pub const PACK_VERSION: u16 = 1;
const HEADER_LEN: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePack {
    pub dim: usize,
    /// Vectors announced by the header.
    pub declared: usize,
    data: Vec<f32>,
}

impl FeaturePack {
    /// Complete vectors actually present.
    pub fn available(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn get(&self, i: usize) -> Option<&[f32]> {
        (i < self.available()).then(|| &self.data[i * self.dim..(i + 1) * self.dim])
    }
}

pub fn write_pack<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f32]>) -> Result<Vec<u8>> {
    let dim16 = u16::try_from(dim).map_err(|_| FitbError::Range(format!("pack dimension {dim}")))?;
    let mut body = Vec::new();
    let mut count: u32 = 0;
    for r in rows {
        if r.len() != dim {
            return Err(FitbError::Data(format!("pack row of width {} (expected {dim})", r.len())));
        }
        for x in r {
            body.extend_from_slice(&x.to_le_bytes());
        }
        count += 1;
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(PACK_MAGIC);
    out.extend_from_slice(&PACK_VERSION.to_le_bytes());
    out.extend_from_slice(&dim16.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Parses a pack. A body shorter than the header announces is accepted; the
/// missing vectors surface later as errors on the clips that reference them.
pub fn read_pack(bytes: &[u8], location: &str) -> Result<FeaturePack> {
    let fmt = |detail: String| FitbError::Format { location: location.to_string(), detail };
    if bytes.len() < HEADER_LEN || &bytes[..4] != PACK_MAGIC {
        return Err(fmt("missing FITB header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PACK_VERSION {
        return Err(FitbError::Version { found: version as u32, expected: PACK_VERSION as u32 });
    }
    let dim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let declared = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if dim == 0 {
        return Err(fmt("zero vector dimension".into()));
    }
    let body = &bytes[HEADER_LEN..];
    let complete = (body.len() / 4 / dim).min(declared);
    if complete < declared {
        log::warn!("{location}: header declares {declared} vectors, only {complete} present");
    }
    let data = body[..complete * dim * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(FeaturePack { dim, declared, data })
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    format_version: u32,
    split: Split,
    dims: FeatureDims,
    face_pack: String,
    segment_pack: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    movies: Vec<MovieDoc>,
}

#[derive(Serialize, Deserialize)]
struct MovieDoc {
    movie_id: String,
    clips: Vec<ClipDoc>,
    /// `[start, length]` into `clips`, one per set.
    windows: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct ClipDoc {
    clip_id: String,
    num_frames: u32,
    sentence: Vec<String>,
    blanks: Vec<BlankAnnotation>,
    faces: Vec<FaceRecord>,
    /// Index of the first of this clip's segment rows in the segment pack.
    segment_offset: usize,
}

#[derive(Serialize, Deserialize)]
struct FaceRecord {
    frame: u32,
    feature: usize,
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = sidecar(path, ".tmp");
    fs::write(&tmp, bytes).map_err(|e| FitbError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FitbError::io(path, e))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let face_path = sidecar(path, ".faces.fitb");
    let seg_path = sidecar(path, ".segments.fitb");
    let mut face_rows: Vec<&[f32]> = Vec::new();
    let mut seg_rows: Vec<&[f32]> = Vec::new();
    let mut movies: Vec<MovieDoc> = Vec::new();
    let mut clip_lists: Vec<Vec<&Clip>> = Vec::new();

    for (si, set) in ds.sets.iter().enumerate() {
        let mi = match movies.iter().position(|m| m.movie_id == set.movie_id) {
            Some(i) => i,
            None => {
                movies.push(MovieDoc { movie_id: set.movie_id.clone(), clips: Vec::new(), windows: Vec::new() });
                clip_lists.push(Vec::new());
                movies.len() - 1
            }
        };
        let mut start = None;
        for (k, clip) in set.clips.iter().enumerate() {
            let pos = match clip_lists[mi].iter().position(|c| c.clip_id == clip.clip_id) {
                Some(p) => p,
                None => {
                    clip_lists[mi].push(clip);
                    clip_lists[mi].len() - 1
                }
            };
            match start {
                None => start = Some(pos),
                Some(s) if s + k == pos => {}
                Some(_) => {
                    return Err(FitbError::Data(format!("set {si} of movie {}: clips are not contiguous", set.movie_id)));
                }
            }
        }
        if let Some(s) = start {
            movies[mi].windows.push([s, set.clips.len()]);
        }
    }

    for (mi, clips) in clip_lists.iter().enumerate() {
        for clip in clips {
            let mut faces = Vec::with_capacity(clip.faces.len());
            for f in &clip.faces {
                faces.push(FaceRecord { frame: f.frame_index, feature: face_rows.len() });
                face_rows.push(&f.embedding);
            }
            let segment_offset = seg_rows.len();
            seg_rows.extend(clip.segment_features.iter().map(|r| r.as_slice()));
            movies[mi].clips.push(ClipDoc {
                clip_id: clip.clip_id.clone(),
                num_frames: clip.num_frames,
                sentence: clip.sentence.clone(),
                blanks: clip.blanks.clone(),
                faces,
                segment_offset,
            });
        }
    }

    let doc = DatasetDoc {
        format_version: ds.format_version,
        split: ds.split,
        dims: ds.dims,
        face_pack: file_name(&face_path),
        segment_pack: file_name(&seg_path),
        provenance: ds.provenance.clone(),
        movies,
    };
    write_atomic(&face_path, &write_pack(ds.dims.face, face_rows)?)?;
    write_atomic(&seg_path, &write_pack(ds.dims.video, seg_rows)?)?;
    write_atomic(path, serde_json::to_string(&doc)?.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read(path).map_err(|e| FitbError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&text)?;
    let version = value.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| FitbError::Format {
        location: path.display().to_string(),
        detail: "missing format_version".into(),
    })?;
    if version != FORMAT_VERSION as u64 {
        return Err(FitbError::Version { found: version as u32, expected: FORMAT_VERSION });
    }
    let doc: DatasetDoc = serde_json::from_value(value)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let face_path = dir.join(&doc.face_pack);
    let seg_path = dir.join(&doc.segment_pack);
    let faces = read_pack(&fs::read(&face_path).map_err(|e| FitbError::io(&face_path, e))?, &doc.face_pack)?;
    let segs = read_pack(&fs::read(&seg_path).map_err(|e| FitbError::io(&seg_path, e))?, &doc.segment_pack)?;
    if faces.dim != doc.dims.face || segs.dim != doc.dims.video {
        return Err(FitbError::Format {
            location: path.display().to_string(),
            detail: format!("pack dimensions ({}, {}) disagree with declared dims ({}, {})", faces.dim, segs.dim, doc.dims.face, doc.dims.video),
        });
    }

    let mut sets = Vec::new();
    for movie in &doc.movies {
        let mut clips = Vec::with_capacity(movie.clips.len());
        for c in &movie.clips {
            let loc = || format!("{}/{}", movie.movie_id, c.clip_id);
            let mut obs = Vec::with_capacity(c.faces.len());
            for f in &c.faces {
                let emb = faces.get(f.feature).ok_or_else(|| FitbError::Format {
                    location: loc(),
                    detail: format!("face feature {} beyond pack ({} vectors)", f.feature, faces.available()),
                })?;
                obs.push(FaceObservation { frame_index: f.frame, embedding: emb.to_vec() });
            }
            let mut segment_features = Vec::with_capacity(doc.dims.segments);
            for t in 0..doc.dims.segments {
                let row = segs.get(c.segment_offset + t).ok_or_else(|| FitbError::Format {
                    location: loc(),
                    detail: format!("segment row {} beyond pack ({} vectors)", c.segment_offset + t, segs.available()),
                })?;
                segment_features.push(row.to_vec());
            }
            clips.push(Clip {
                clip_id: c.clip_id.clone(),
                num_frames: c.num_frames,
                faces: obs,
                segment_features,
                sentence: c.sentence.clone(),
                blanks: c.blanks.clone(),
            });
        }
        for (wi, &[start, len]) in movie.windows.iter().enumerate() {
            if len == 0 || start + len > clips.len() {
                return Err(FitbError::Format {
                    location: format!("{}/windows[{wi}]", movie.movie_id),
                    detail: format!("window [{start}, {len}] outside {} clips", clips.len()),
                });
            }
            sets.push(ClipSet::new(movie.movie_id.clone(), clips[start..start + len].to_vec()));
        }
    }

    let ds = Dataset { split: doc.split, sets, dims: doc.dims, format_version: doc.format_version, provenance: doc.provenance };
    let violations = ds.validate();
    if let Some((i, v)) = violations.first() {
        return Err(FitbError::Invalid {
            location: format!("{} set {i} ({})", path.display(), ds.sets[*i].movie_id),
            violations: format!("{v} (+{} more)", violations.len() - 1),
        });
    }
    Ok(ds)
}
