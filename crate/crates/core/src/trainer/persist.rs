//! Model file: `DGCN`, a version byte, a u64 LE manifest length, the JSON
//! manifest, the f64 LE arrays it declares, then a CRC32 of all prior bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scaler, TrainConfig, TrainLog, TrainedModel};
use crate::error::{DgcnError, Result};
use crate::hypernet::{LayerSpec, Mlp, MlpParams};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"DGCN";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: TrainConfig,
    kernels: Vec<String>,
    columns: Vec<String>,
    target: String,
    n_train: usize,
    n_inputs: usize,
    theta_layers: Vec<LayerSpec>,
    sigma_layers: Vec<LayerSpec>,
    scaler: Scaler,
    log: TrainLog,
    arrays: Vec<ArrayDecl>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayDecl {
    name: String,
    len: usize,
}

fn net_arrays<'a>(prefix: &str, net: &'a Mlp, out: &mut Vec<(String, &'a [f64])>) {
    for (l, (w, b)) in net.params.weights.iter().zip(&net.params.biases).enumerate() {
        out.push((format!("{prefix}.w{l}"), w.as_slice()));
        out.push((format!("{prefix}.b{l}"), b.as_slice()));
    }
}

pub fn to_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let mut arrays: Vec<(String, &[f64])> = Vec::new();
    net_arrays("theta", &model.theta_net, &mut arrays);
    net_arrays("sigma", &model.sigma_net, &mut arrays);
    arrays.push(("train.x".into(), model.x.as_slice()));
    arrays.push(("train.y".into(), &model.y));
    let manifest = Manifest {
        config: model.config.clone(),
        kernels: model.config.kernels.kernels().iter().map(|k| k.name().to_string()).collect(),
        columns: model.columns.clone(),
        target: model.target.clone(),
        n_train: model.n_train(),
        n_inputs: model.n_inputs(),
        theta_layers: model.theta_net.specs.clone(),
        sigma_layers: model.sigma_net.specs.clone(),
        scaler: model.scaler.clone(),
        log: model.log.clone(),
        arrays: arrays
            .iter()
            .map(|(name, a)| ArrayDecl {
                name: name.clone(),
                len: a.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| DgcnError::InvalidFormat(e.to_string()))?;
    let payload: usize = arrays.iter().map(|(_, a)| a.len() * 8).sum();
    let mut buf = Vec::with_capacity(4 + 1 + 8 + json.len() + payload + 4);
    buf.extend_from_slice(MAGIC);
    buf.push(FORMAT_VERSION);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, a) in &arrays {
        for v in *a {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    decls: std::slice::Iter<'a, ArrayDecl>,
    data: &'a [u8],
}

impl Reader<'_> {
    fn next(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let decl = self
            .decls
            .next()
            .ok_or_else(|| DgcnError::InvalidFormat(format!("array {name} not declared")))?;
        if decl.name != name || decl.len != len {
            return Err(DgcnError::InvalidFormat(format!(
                "expected array {name}[{len}], manifest declares {}[{}]",
                decl.name, decl.len
            )));
        }
        let bytes = len * 8;
        if self.data.len() < bytes {
            return Err(DgcnError::InvalidFormat(format!("array {name} is truncated")));
        }
        let (head, rest) = self.data.split_at(bytes);
        self.data = rest;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn net(&mut self, prefix: &str, specs: &[LayerSpec]) -> Result<Mlp> {
        let mut weights = Vec::with_capacity(specs.len());
        let mut biases = Vec::with_capacity(specs.len());
        for (l, s) in specs.iter().enumerate() {
            let w = self.next(&format!("{prefix}.w{l}"), s.out_units * s.in_units)?;
            weights.push(Matrix::from_vec(s.out_units, s.in_units, w)?);
            biases.push(self.next(&format!("{prefix}.b{l}"), s.out_units)?);
        }
        let params = MlpParams::from_parts(weights, biases);
        params.check_shapes(specs)?;
        Ok(Mlp {
            specs: specs.to_vec(),
            params,
        })
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(DgcnError::InvalidFormat("missing DGCN header".into()));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(DgcnError::FormatVersionMismatch {
            found: bytes[4],
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 4 + 1 + 8 + 4 {
        return Err(DgcnError::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
    if crc32fast::hash(body) != stored {
        return Err(DgcnError::ChecksumMismatch);
    }
    let json_len = u64::from_le_bytes(body[5..13].try_into().expect("8-byte length")) as usize;
    let rest = &body[13..];
    if json_len > rest.len() {
        return Err(DgcnError::InvalidFormat("manifest length exceeds file".into()));
    }
    let manifest: Manifest =
        serde_json::from_slice(&rest[..json_len]).map_err(|e| DgcnError::InvalidFormat(e.to_string()))?;
    let mut reader = Reader {
        decls: manifest.arrays.iter(),
        data: &rest[json_len..],
    };
    let theta_net = reader.net("theta", &manifest.theta_layers)?;
    let sigma_net = reader.net("sigma", &manifest.sigma_layers)?;
    let (n, nv) = (manifest.n_train, manifest.n_inputs);
    let x = Matrix::from_vec(n, nv, reader.next("train.x", n * nv)?)?;
    let y = reader.next("train.y", n)?;
    if reader.decls.next().is_some() || !reader.data.is_empty() {
        return Err(DgcnError::InvalidFormat("trailing data after arrays".into()));
    }
    if theta_net.n_in() != nv
        || sigma_net.n_in() != nv
        || theta_net.n_out() != nv * manifest.config.kernels.len()
        || sigma_net.n_out() != 1
        || manifest.scaler.n_inputs() != nv
        || manifest.columns.len() != nv
    {
        return Err(DgcnError::InvalidFormat("inconsistent shapes in manifest".into()));
    }
    TrainedModel::from_parts(
        manifest.config,
        theta_net,
        sigma_net,
        manifest.scaler,
        manifest.columns,
        manifest.target,
        x,
        y,
        manifest.log,
    )
}

pub fn save(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)?).map_err(|e| DgcnError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DgcnError::io(path, e))?;
    from_bytes(&bytes)
}
