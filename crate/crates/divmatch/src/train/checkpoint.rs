//! Model checkpoint file ("GDRM").
//!
//! Layout: magic, u64 config hash, u32-length-prefixed JSON metadata block,
//! the five projection bases (u32 length + u32 local ids each), then every
//! parameter tensor in canonical order with a shape header (u32 ndim,
//! ndim u32 dims, f64 little-endian data).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::features::ProjectionTable;
use crate::graph::NodeType;
use crate::model::{LayerParams, ModelDims, ModelParams};
use crate::train::TrainConfig;

const MAGIC: &[u8; 4] = b"GDRM";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dims: ModelDims,
    pub lambda_s: f64,
    pub train: TrainConfig,
    /// Node counts of the graph the model was fitted on; embedding export
    /// refuses graphs that disagree.
    pub node_counts: [u32; 5],
}

enum TensorRef<'a> {
    Vec(&'a Array1<f64>),
    Mat(&'a Array2<f64>),
}

fn tensor_order(layer: &LayerParams) -> Vec<TensorRef<'_>> {
    let mut v: Vec<TensorRef<'_>> = layer.attn.iter().map(TensorRef::Vec).collect();
    v.push(TensorRef::Mat(&layer.combine));
    v.push(TensorRef::Mat(&layer.self_loop));
    v
}

pub fn save_checkpoint(
    path: &Path,
    config_hash: u64,
    meta: &CheckpointMeta,
    table: &ProjectionTable,
    params: &ModelParams,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    binio::write_u64(&mut w, config_hash).map_err(io_err)?;
    let meta_json = serde_json::to_vec(meta).map_err(|e| Error::format(path, e.to_string()))?;
    binio::write_u32(&mut w, meta_json.len() as u32).map_err(io_err)?;
    w.write_all(&meta_json).map_err(io_err)?;

    for t in NodeType::ALL {
        let basis = table.basis(t);
        binio::write_u32(&mut w, basis.len() as u32).map_err(io_err)?;
        for &id in basis {
            binio::write_u32(&mut w, id).map_err(io_err)?;
        }
    }

    for layer in [&params.layer1, &params.layer2] {
        for tensor in tensor_order(layer) {
            match tensor {
                TensorRef::Vec(a) => {
                    binio::write_u32(&mut w, 1).map_err(io_err)?;
                    binio::write_u32(&mut w, a.len() as u32).map_err(io_err)?;
                    for &v in a.iter() {
                        binio::write_f64(&mut w, v).map_err(io_err)?;
                    }
                }
                TensorRef::Mat(m) => {
                    binio::write_u32(&mut w, 2).map_err(io_err)?;
                    binio::write_u32(&mut w, m.nrows() as u32).map_err(io_err)?;
                    binio::write_u32(&mut w, m.ncols() as u32).map_err(io_err)?;
                    for &v in m.iter() {
                        binio::write_f64(&mut w, v).map_err(io_err)?;
                    }
                }
            }
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(CheckpointMeta, ProjectionTable, ModelParams, u64)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fmt = |e: std::io::Error| Error::format(path, e.to_string());

    binio::expect_magic(&mut r, MAGIC).map_err(fmt)?;
    let hash = binio::read_u64(&mut r).map_err(fmt)?;
    let meta_len = binio::read_u32(&mut r).map_err(fmt)? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    r.read_exact(&mut meta_buf).map_err(fmt)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&meta_buf).map_err(|e| Error::format(path, e.to_string()))?;

    let mut selected: [Vec<u32>; 5] = Default::default();
    for t in NodeType::ALL {
        let n = binio::read_u32(&mut r).map_err(fmt)? as usize;
        let mut basis = Vec::with_capacity(n);
        for _ in 0..n {
            let id = binio::read_u32(&mut r).map_err(fmt)?;
            if id >= meta.node_counts[t.index()] {
                return Err(Error::format(
                    path,
                    format!("projection basis id {id} out of range for {}", t.name()),
                ));
            }
            basis.push(id);
        }
        if basis.len() > meta.dims.fields.width(t) {
            return Err(Error::format(
                path,
                format!("projection basis for {} exceeds field width", t.name()),
            ));
        }
        selected[t.index()] = basis;
    }
    let table = ProjectionTable::from_parts(meta.dims.fields, selected, meta.node_counts);

    let mut read_tensor = |expect_rows: usize, expect_cols: Option<usize>| -> Result<Vec<f64>> {
        let ndim = binio::read_u32(&mut r).map_err(fmt)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(binio::read_u32(&mut r).map_err(fmt)? as usize);
        }
        let expected: Vec<usize> = match expect_cols {
            Some(c) => vec![expect_rows, c],
            None => vec![expect_rows],
        };
        if shape != expected {
            return Err(Error::format(
                path,
                format!("tensor shape {shape:?} does not match expected {expected:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(binio::read_f64(&mut r).map_err(fmt)?);
        }
        Ok(data)
    };

    let mut flat = Vec::new();
    for shape in [
        ModelParams::layer1_shape(&meta.dims),
        ModelParams::layer2_shape(&meta.dims),
    ] {
        let (attn_w, out, concat_w, self_w) = shape;
        for w in attn_w {
            flat.extend(read_tensor(w, None)?);
        }
        flat.extend(read_tensor(out, Some(concat_w))?);
        flat.extend(read_tensor(out, Some(self_w))?);
    }
    binio::expect_eof(&mut r).map_err(fmt)?;

    let params = ModelParams::from_flat(meta.dims, meta.lambda_s, &flat)?;
    Ok((meta, table, params, hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FieldDims;
    use crate::graph::{EdgeType, HeteroGraph};

    fn setup() -> (HeteroGraph, ProjectionTable, ModelParams, CheckpointMeta) {
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoTag.index()] = vec![(0, 0), (1, 0), (1, 1)];
        let g = HeteroGraph::from_edges([2, 2, 0, 0, 0], edges).unwrap();
        let dims = ModelDims {
            fields: FieldDims([2, 2, 2, 2, 2]),
            hidden: 3,
            sample_l1: 4,
            sample_l2: 2,
        };
        let table = ProjectionTable::fit(&g, dims.fields);
        let params = ModelParams::init(dims, 0.5, 1);
        let meta = CheckpointMeta {
            dims,
            lambda_s: 0.5,
            train: TrainConfig::default(),
            node_counts: g.counts(),
        };
        (g, table, params, meta)
    }

    #[test]
    fn checkpoint_round_trip() {
        let (_, table, params, meta) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gdrm");
        save_checkpoint(&path, 99, &meta, &table, &params).unwrap();
        let (meta2, table2, params2, hash) = load_checkpoint(&path).unwrap();
        assert_eq!(hash, 99);
        assert_eq!(meta2.node_counts, meta.node_counts);
        assert_eq!(table2, table);
        assert_eq!(params2, params);
    }

    #[test]
    fn corrupted_magic_refused() {
        let (_, table, params, meta) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gdrm");
        save_checkpoint(&path, 0, &meta, &table, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version tag"));
    }

    #[test]
    fn truncated_checkpoint_refused() {
        let (_, table, params, meta) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gdrm");
        save_checkpoint(&path, 0, &meta, &table, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
