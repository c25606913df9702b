//! Model checkpoints: one binary container per checkpoint holding every
//! parameter array by name plus a JSON config echo.

use std::path::Path;

use extract_core::archive::{read_arrays, write_arrays, ArrayData};
use extract_core::error::{Error, Result};

use crate::skills::{SkillModel, SkillModelConfig};

const CONFIG_KEY: &str = "__config";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct ConfigEcho {
    version: u32,
    model: SkillModelConfig,
}

pub fn save_model(model: &SkillModel, path: &Path) -> Result<()> {
    let mut arrays = Vec::new();
    let echo = ConfigEcho {
        version: CHECKPOINT_VERSION,
        model: model.cfg.clone(),
    };
    let json = serde_json::to_vec(&echo)?;
    arrays.push((
        CONFIG_KEY.to_string(),
        ArrayData::U8 {
            shape: vec![json.len()],
            data: json,
        },
    ));
    for (name, shape, data) in model.store.export() {
        arrays.push((name, ArrayData::F64 { shape, data }));
    }
    write_arrays(path, &arrays)
}

pub fn load_model(path: &Path) -> Result<SkillModel> {
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    let arrays = read_arrays(path)?;
    let config_bytes = arrays
        .iter()
        .find(|(n, _)| n == CONFIG_KEY)
        .ok_or_else(|| Error::Format("checkpoint missing config echo".into()))?;
    let json = match &config_bytes.1 {
        ArrayData::U8 { data, .. } => data.clone(),
        _ => return Err(Error::Format("checkpoint config echo must be u8".into())),
    };
    let echo: ConfigEcho = serde_json::from_slice(&json)?;
    if echo.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            echo.version
        )));
    }
    let mut model = SkillModel::new(echo.model);
    let triples: Vec<(String, Vec<usize>, Vec<f64>)> = arrays
        .into_iter()
        .filter(|(n, _)| n != CONFIG_KEY)
        .map(|(n, arr)| match arr {
            ArrayData::F64 { shape, data } => Ok((n, shape, data)),
            _ => Err(Error::Format(format!("parameter '{n}' must be f64"))),
        })
        .collect::<Result<Vec<_>>>()?;
    model
        .store
        .import(&triples)
        .map_err(Error::Format)?;
    Ok(model)
}
