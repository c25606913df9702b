//! On-disk dataset archive: a directory with a `manifest.json` plus one
//! binary array container per trajectory.
//!
//! Container layout (`traj_<id>.bin`), all integers little-endian:
//!
//! ```text
//! magic   b"EXTARR01"
//! u32     array count
//! per array:
//!   u16   name length, then name bytes (utf-8)
//!   u8    dtype (0 = f32, 1 = i32, 2 = u8, 3 = f64)
//!   u8    ndim
//!   u64 × ndim   dims
//!   raw data, C-order
//! ```
//!
//! Numeric payloads round-trip bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::data::{ArchiveMetadata, DatasetArchive, Observations, Trajectory};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EXTARR01";
pub const FORMAT_VERSION: &str = "1";

/// A named array as stored in the container.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    I32 { shape: Vec<usize>, data: Vec<i32> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
}

impl ArrayData {
    pub fn shape(&self) -> &[usize] {
        match self {
            ArrayData::F32 { shape, .. }
            | ArrayData::I32 { shape, .. }
            | ArrayData::U8 { shape, .. }
            | ArrayData::F64 { shape, .. } => shape,
        }
    }

    fn dtype_code(&self) -> u8 {
        match self {
            ArrayData::F32 { .. } => 0,
            ArrayData::I32 { .. } => 1,
            ArrayData::U8 { .. } => 2,
            ArrayData::F64 { .. } => 3,
        }
    }

    fn element_count(&self) -> usize {
        self.shape().iter().product()
    }
}

/// Writes named arrays to `path` in container format.
pub fn write_arrays(path: &Path, arrays: &[(String, ArrayData)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(arrays.len() as u32)?;
    for (name, arr) in arrays {
        let n = arr.element_count();
        let claimed = match arr {
            ArrayData::F32 { data, .. } => data.len(),
            ArrayData::I32 { data, .. } => data.len(),
            ArrayData::U8 { data, .. } => data.len(),
            ArrayData::F64 { data, .. } => data.len(),
        };
        if n != claimed {
            return Err(Error::Validation(format!(
                "array '{name}': shape product {n} != data length {claimed}"
            )));
        }
        buf.write_u16::<LittleEndian>(name.len() as u16)?;
        buf.extend_from_slice(name.as_bytes());
        buf.write_u8(arr.dtype_code())?;
        buf.write_u8(arr.shape().len() as u8)?;
        for &d in arr.shape() {
            buf.write_u64::<LittleEndian>(d as u64)?;
        }
        match arr {
            ArrayData::F32 { data, .. } => {
                for &v in data {
                    buf.write_f32::<LittleEndian>(v)?;
                }
            }
            ArrayData::I32 { data, .. } => {
                for &v in data {
                    buf.write_i32::<LittleEndian>(v)?;
                }
            }
            ArrayData::U8 { data, .. } => buf.extend_from_slice(data),
            ArrayData::F64 { data, .. } => {
                for &v in data {
                    buf.write_f64::<LittleEndian>(v)?;
                }
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads all named arrays from a container file.
pub fn read_arrays(path: &Path) -> Result<Vec<(String, ArrayData)>> {
    let bytes = fs::read(path)?;
    let mut cur = std::io::Cursor::new(&bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let count = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Format(format!("{}: truncated count", path.display())))?;
    let mut arrays = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = cur
            .read_u16::<LittleEndian>()
            .map_err(|_| Error::Format("truncated name length".into()))?;
        let mut name_bytes = vec![0u8; name_len as usize];
        cur.read_exact(&mut name_bytes)
            .map_err(|_| Error::Format("truncated name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("array name is not utf-8".into()))?;
        let dtype = cur
            .read_u8()
            .map_err(|_| Error::Format("truncated dtype".into()))?;
        let ndim = cur
            .read_u8()
            .map_err(|_| Error::Format("truncated ndim".into()))?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(
                cur.read_u64::<LittleEndian>()
                    .map_err(|_| Error::Format("truncated shape".into()))? as usize,
            );
        }
        let n: usize = shape.iter().product();
        let arr = match dtype {
            0 => {
                let mut data = vec![0f32; n];
                cur.read_f32_into::<LittleEndian>(&mut data)
                    .map_err(|_| Error::Format(format!("array '{name}': truncated data")))?;
                ArrayData::F32 { shape, data }
            }
            1 => {
                let mut data = vec![0i32; n];
                cur.read_i32_into::<LittleEndian>(&mut data)
                    .map_err(|_| Error::Format(format!("array '{name}': truncated data")))?;
                ArrayData::I32 { shape, data }
            }
            2 => {
                let mut data = vec![0u8; n];
                cur.read_exact(&mut data)
                    .map_err(|_| Error::Format(format!("array '{name}': truncated data")))?;
                ArrayData::U8 { shape, data }
            }
            3 => {
                let mut data = vec![0f64; n];
                cur.read_f64_into::<LittleEndian>(&mut data)
                    .map_err(|_| Error::Format(format!("array '{name}': truncated data")))?;
                ArrayData::F64 { shape, data }
            }
            other => {
                return Err(Error::Format(format!(
                    "array '{name}': unknown dtype code {other}"
                )))
            }
        };
        arrays.push((name, arr));
    }
    Ok(arrays)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestTrajectory {
    id: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    trajectories: Vec<ManifestTrajectory>,
    obs_shape: Vec<usize>,
    act_dim: usize,
    #[serde(default)]
    ctx_dim: Option<usize>,
    #[serde(default)]
    embed_dim: Option<usize>,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    embedder: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(Error::Validation(format!(
            "trajectory id '{id}' is not filesystem-safe (use [A-Za-z0-9_-])"
        )));
    }
    Ok(())
}

fn trajectory_arrays(traj: &Trajectory) -> Vec<(String, ArrayData)> {
    let mut arrays = Vec::new();
    match &traj.observations {
        Observations::Flat(a) => arrays.push((
            "observations".to_string(),
            ArrayData::F32 {
                shape: vec![a.nrows(), a.ncols()],
                data: a.iter().copied().collect(),
            },
        )),
        Observations::Image(a) => arrays.push((
            "observations".to_string(),
            ArrayData::U8 {
                shape: a.shape().to_vec(),
                data: a.iter().copied().collect(),
            },
        )),
    }
    arrays.push((
        "actions".to_string(),
        ArrayData::F32 {
            shape: vec![traj.actions.nrows(), traj.actions.ncols()],
            data: traj.actions.iter().copied().collect(),
        },
    ));
    if let Some(labels) = &traj.labels {
        arrays.push((
            "labels".to_string(),
            ArrayData::I32 {
                shape: vec![labels.len()],
                data: labels.clone(),
            },
        ));
    }
    if let Some(emb) = &traj.embeddings {
        arrays.push((
            "embeddings".to_string(),
            ArrayData::F32 {
                shape: vec![emb.nrows(), emb.ncols()],
                data: emb.iter().copied().collect(),
            },
        ));
    }
    if let Some(ctx) = &traj.context {
        arrays.push((
            "context".to_string(),
            ArrayData::F32 {
                shape: vec![ctx.len()],
                data: ctx.iter().copied().collect(),
            },
        ));
    }
    if let Some(desc) = &traj.descriptors {
        arrays.push((
            "descriptors".to_string(),
            ArrayData::F32 {
                shape: vec![desc.nrows(), desc.ncols()],
                data: desc.iter().copied().collect(),
            },
        ));
    }
    if let Some(gt) = &traj.gt_labels {
        arrays.push((
            "gt_labels".to_string(),
            ArrayData::I32 {
                shape: vec![gt.len()],
                data: gt.clone(),
            },
        ));
    }
    arrays
}

/// Persists a validated archive to `dir` (created if absent).
pub fn save_dataset(archive: &DatasetArchive, dir: &Path) -> Result<()> {
    archive.validate()?;
    fs::create_dir_all(dir)?;
    let (obs_shape, act_dim) = match archive.trajectories.first() {
        Some(t) => (t.observations.obs_shape(), t.act_dim()),
        None => (vec![0], 0),
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION.to_string(),
        trajectories: archive
            .trajectories
            .iter()
            .map(|t| ManifestTrajectory {
                id: t.id.clone(),
                len: t.len(),
            })
            .collect(),
        obs_shape,
        act_dim,
        ctx_dim: archive
            .trajectories
            .iter()
            .find_map(|t| t.context.as_ref().map(|c| c.len())),
        embed_dim: archive.embed_dim(),
        k: archive.metadata.k,
        embedder: archive.metadata.embedder.clone(),
        seed: archive.metadata.seed,
    };
    let mut file = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    file.write_all(b"\n")?;
    for traj in &archive.trajectories {
        check_id(&traj.id)?;
        write_arrays(
            &dir.join(format!("traj_{}.bin", traj.id)),
            &trajectory_arrays(traj),
        )?;
    }
    Ok(())
}

fn take_array(
    arrays: &mut Vec<(String, ArrayData)>,
    name: &str,
) -> Option<ArrayData> {
    let pos = arrays.iter().position(|(n, _)| n == name)?;
    Some(arrays.remove(pos).1)
}

fn as_f32_2d(arr: ArrayData, name: &str, id: &str) -> Result<Array2<f32>> {
    match arr {
        ArrayData::F32 { shape, data } if shape.len() == 2 => {
            Array2::from_shape_vec((shape[0], shape[1]), data)
                .map_err(|e| Error::Format(format!("trajectory '{id}' array '{name}': {e}")))
        }
        other => Err(Error::Format(format!(
            "trajectory '{id}' array '{name}': expected 2-d f32, got {:?} dims",
            other.shape().len()
        ))),
    }
}

/// Loads and validates an archive from `dir`.
pub fn load_dataset(dir: &Path) -> Result<DatasetArchive> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::Format(format!(
            "{}: manifest.json not found",
            dir.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version '{}'",
            manifest.format_version
        )));
    }
    let mut trajectories = Vec::with_capacity(manifest.trajectories.len());
    for entry in &manifest.trajectories {
        let path = dir.join(format!("traj_{}.bin", entry.id));
        let mut arrays = read_arrays(&path)?;
        let obs = take_array(&mut arrays, "observations").ok_or_else(|| {
            Error::Format(format!(
                "trajectory '{}': missing 'observations' array",
                entry.id
            ))
        })?;
        let observations = match obs {
            ArrayData::F32 { shape, data } if shape.len() == 2 => Observations::Flat(
                Array2::from_shape_vec((shape[0], shape[1]), data)
                    .map_err(|e| Error::Format(e.to_string()))?,
            ),
            ArrayData::U8 { shape, data } if shape.len() == 4 => Observations::Image(
                Array4::from_shape_vec((shape[0], shape[1], shape[2], shape[3]), data)
                    .map_err(|e| Error::Format(e.to_string()))?,
            ),
            other => {
                return Err(Error::Format(format!(
                    "trajectory '{}': observations must be 2-d f32 or 4-d u8, got {:?}",
                    entry.id,
                    other.shape()
                )))
            }
        };
        let actions = take_array(&mut arrays, "actions").ok_or_else(|| {
            Error::Format(format!("trajectory '{}': missing 'actions' array", entry.id))
        })?;
        let actions = as_f32_2d(actions, "actions", &entry.id)?;
        let mut traj = Trajectory::new(entry.id.clone(), observations, actions);
        if let Some(arr) = take_array(&mut arrays, "labels") {
            match arr {
                ArrayData::I32 { data, .. } => traj.labels = Some(data),
                _ => {
                    return Err(Error::Format(format!(
                        "trajectory '{}': labels must be i32",
                        entry.id
                    )))
                }
            }
        }
        if let Some(arr) = take_array(&mut arrays, "embeddings") {
            traj.embeddings = Some(as_f32_2d(arr, "embeddings", &entry.id)?);
        }
        if let Some(arr) = take_array(&mut arrays, "context") {
            match arr {
                ArrayData::F32 { data, .. } => traj.context = Some(Array1::from_vec(data)),
                _ => {
                    return Err(Error::Format(format!(
                        "trajectory '{}': context must be f32",
                        entry.id
                    )))
                }
            }
        }
        if let Some(arr) = take_array(&mut arrays, "descriptors") {
            traj.descriptors = Some(as_f32_2d(arr, "descriptors", &entry.id)?);
        }
        if let Some(arr) = take_array(&mut arrays, "gt_labels") {
            match arr {
                ArrayData::I32 { data, .. } => traj.gt_labels = Some(data),
                _ => {
                    return Err(Error::Format(format!(
                        "trajectory '{}': gt_labels must be i32",
                        entry.id
                    )))
                }
            }
        }
        if traj.len() != entry.len {
            return Err(Error::Validation(format!(
                "trajectory '{}': manifest length {} != stored length {}",
                entry.id,
                entry.len,
                traj.len()
            )));
        }
        trajectories.push(traj);
    }
    let archive = DatasetArchive::new(
        trajectories,
        ArchiveMetadata {
            k: manifest.k,
            embedder: manifest.embedder,
            seed: manifest.seed,
        },
    );
    archive.validate()?;
    Ok(archive)
}
