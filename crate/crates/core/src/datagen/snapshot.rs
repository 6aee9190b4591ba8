//! Directory snapshot: `meta.json`, `x.f64le`, `y.u32le`, `t.f64le`.

use std::fs;
use std::path::Path;

use crate::datagen::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::ndmath::Tensor;

pub fn save_snapshot(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: Vec<u8>| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    write("meta.json", serde_json::to_vec_pretty(&ds.meta)?)?;
    write("x.f64le", ds.x.data().iter().flat_map(|v| v.to_le_bytes()).collect())?;
    write(
        "y.u32le",
        ds.y.iter()
            .flat_map(|&c| u32::try_from(c).expect("class index fits u32").to_le_bytes())
            .collect(),
    )?;
    write("t.f64le", ds.t.data().iter().flat_map(|v| v.to_le_bytes()).collect())?;
    Ok(())
}

fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("{} holds {} bytes, expected {}", path.display(), bytes.len(), expected * 8),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn load_snapshot(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta =
        serde_json::from_slice(&fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?;
    let x = read_f64s(&dir.join("x.f64le"), meta.n * meta.d)?;
    let t = read_f64s(&dir.join("t.f64le"), meta.n * meta.d_t)?;
    let y_path = dir.join("y.u32le");
    let yb = fs::read(&y_path).map_err(|e| Error::io(&y_path, e))?;
    if yb.len() != meta.n * 4 {
        return Err(Error::Format {
            offset: yb.len() as u64,
            message: format!("y.u32le holds {} bytes, expected {}", yb.len(), meta.n * 4),
        });
    }
    let y = yb
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")) as usize)
        .collect();
    Dataset::new(
        meta.name.clone(),
        Tensor::matrix(meta.n, meta.d, x)?,
        y,
        Tensor::matrix(meta.n, meta.d_t, t)?,
        meta.classes,
        meta.seed,
        meta.schedule.clone(),
    )
}
