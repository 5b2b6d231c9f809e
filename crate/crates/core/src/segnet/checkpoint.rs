//! Binary checkpoint: `GSEG1`, a little-endian `u32` manifest length, the
//! JSON manifest, then every parameter block as little-endian `f64` in
//! manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, SegModel};
use crate::error::{Error, Result};
use crate::raster::ensure_parent;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GSEG1";

/// Input normalization recorded with every checkpoint.
pub const INPUT_NORMALIZATION: &str = "rgb / 255";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    normalization: String,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

pub fn write_checkpoint<W: Write>(model: &SegModel, mut out: W) -> Result<()> {
    let manifest = Manifest {
        config: model.config().clone(),
        normalization: INPUT_NORMALIZATION.into(),
        layers: model
            .views()
            .iter()
            .map(|v| LayerEntry {
                name: v.name.clone(),
                shape: v.shape.clone(),
                dtype: "f64le".into(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("manifest too large".into()))?;
    let io = |e| Error::io("<checkpoint>", e);
    out.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    out.write_all(&len.to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for v in model.views() {
        for p in &model.params()[v.offset..v.offset + v.len] {
            out.write_all(&p.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<SegModel> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json).map_err(|_| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&json)?;

    let mut model = SegModel::zeroed(manifest.config)?;
    if manifest.layers.len() != model.views().len() {
        return Err(bad("layer list does not match model config"));
    }
    let mut params = vec![0.0; model.num_params()];
    for (entry, view) in manifest.layers.iter().zip(model.views()) {
        if entry.name != view.name || entry.shape != view.shape || entry.dtype != "f64le" {
            return Err(Error::Checkpoint(format!("unexpected layer {} {:?}", entry.name, entry.shape)));
        }
        let mut buf = [0u8; 8];
        for p in &mut params[view.offset..view.offset + view.len] {
            input.read_exact(&mut buf).map_err(|_| bad("truncated parameters"))?;
            *p = f64::from_le_bytes(buf);
        }
    }
    if input.read(&mut [0u8; 1]).map_err(|e| Error::io("<checkpoint>", e))? != 0 {
        return Err(bad("trailing bytes"));
    }
    model.set_params(params)?;
    Ok(model)
}

pub fn save_checkpoint(model: &SegModel, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(f))
}

pub fn load_checkpoint(path: &Path) -> Result<SegModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = SegModel::new(ModelConfig::tiny()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"GSEG1");
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
    }

    #[test]
    fn rejects_corruption() {
        let m = SegModel::new(ModelConfig::tiny()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(read_checkpoint(wrong.as_slice()), Err(Error::Checkpoint(_))));
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf;
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
    }

    #[test]
    fn manifest_records_normalization() {
        let m = SegModel::new(ModelConfig::tiny()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let len = u32::from_le_bytes(buf[5..9].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&buf[9..9 + len]).unwrap();
        assert!(text.contains(INPUT_NORMALIZATION));
        assert!(text.contains("backbone.0.weight"));
    }
}
