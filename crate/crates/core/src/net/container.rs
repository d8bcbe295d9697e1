//! Binary model container.
//!
//! Layout: the 8-byte magic `ATTNCT1\0`; a UTF-8 header of `key=value` lines ended
//! by an empty line; then one record per tensor: path length (u32), path bytes,
//! rank (u32), extents (u32 each) and the values as IEEE-754 f32. All integers and
//! floats are little-endian. Batch-norm running statistics are stored as records
//! named `<layer>.running_mean` and `<layer>.running_var`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::{parse_num, AttentionNetConfig};
use super::model::{build_network, Network};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tape::BatchNormState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ATTNCT1\0";
const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";

fn io_err(e: std::io::Error) -> Error {
    Error::Format(format!("container i/o: {e}"))
}

fn write_record<W: Write>(w: &mut W, path: &str, shape: &[usize], values: &[f64]) -> Result<()> {
    w.write_all(&(path.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(path.as_bytes()).map_err(io_err)?;
    w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io_err)?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
    }
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

/// Serializes `net` plus any `extra` header entries.
pub fn write_model<W: Write>(net: &Network, extra: &[(String, String)], mut w: W) -> Result<()> {
    let records = net.params.len() + 2 * net.params.norms().count();
    let mut header = net.config.to_pairs();
    header.push(("seed".into(), net.seed.to_string()));
    header.push(("epoch".into(), net.epoch.to_string()));
    header.push(("records".into(), records.to_string()));
    header.extend(extra.iter().cloned());
    w.write_all(MAGIC).map_err(io_err)?;
    for (k, v) in &header {
        if k.contains('=') || k.contains('\n') || v.contains('\n') || k.is_empty() {
            return Err(Error::Format(format!("header entry `{k}` is not a single key=value line")));
        }
        writeln!(w, "{k}={v}").map_err(io_err)?;
    }
    writeln!(w).map_err(io_err)?;
    for (path, t) in net.params.tensors() {
        write_record(&mut w, path, t.shape(), t.data())?;
    }
    for (path, st) in net.params.norms() {
        let c = st.channels();
        write_record(&mut w, &format!("{path}{RUNNING_MEAN}"), &[c], &st.running_mean)?;
        write_record(&mut w, &format!("{path}{RUNNING_VAR}"), &[c], &st.running_var)?;
    }
    w.flush().map_err(io_err)
}

pub fn save_model(net: &Network, extra: &[(String, String)], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(net, extra, BufWriter::new(f))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

/// A decoded container: the network and every header entry.
pub struct LoadedModel {
    pub network: Network,
    pub header: BTreeMap<String, String>,
}

pub fn read_model<R: Read>(mut r: R) -> Result<LoadedModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model container (bad magic)".into()));
    }
    let mut header = BTreeMap::new();
    let mut line = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte).map_err(io_err)?;
        if byte[0] != b'\n' {
            line.push(byte[0]);
            continue;
        }
        if line.is_empty() {
            break;
        }
        let text = String::from_utf8(std::mem::take(&mut line))
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("header line `{text}` lacks `=`")))?;
        header.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        header
            .get(k)
            .ok_or_else(|| Error::Format(format!("header is missing `{k}`")))
    };
    let seed: u64 = parse_num("seed", get("seed")?)?;
    let epoch: usize = parse_num("epoch", get("epoch")?)?;
    let records: usize = parse_num("records", get("records")?)?;
    let mut config = AttentionNetConfig::default();
    config.apply_pairs(&header.iter().filter(|(k, _)| k.starts_with("net.")).map(|(k, v)| (k.clone(), v.clone())).collect())?;

    let skeleton = build_network(&config, seed)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..records {
        let len = read_u32(&mut r)? as usize;
        let mut pb = vec![0u8; len];
        r.read_exact(&mut pb).map_err(io_err)?;
        let path = String::from_utf8(pb).map_err(|_| Error::Format("record path is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; 4 * n];
        r.read_exact(&mut raw).map_err(io_err)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        tensors.insert(path, Tensor::from_vec(&shape, values)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io_err)? != 0 {
        return Err(Error::Format("trailing bytes after the last record".into()));
    }

    let mut params = ParamStore::new();
    for (path, want) in skeleton.params.tensors() {
        let t = tensors
            .remove(path)
            .ok_or_else(|| Error::Format(format!("missing parameter `{path}`")))?;
        if t.shape() != want.shape() {
            return Err(Error::Format(format!(
                "parameter `{path}` has shape {:?}, config implies {:?}",
                t.shape(),
                want.shape()
            )));
        }
        params.insert(path.clone(), t)?;
    }
    for (path, st) in skeleton.params.norms() {
        let mean = tensors.remove(&format!("{path}{RUNNING_MEAN}"));
        let var = tensors.remove(&format!("{path}{RUNNING_VAR}"));
        let state = match (mean, var) {
            (Some(m), Some(v)) => BatchNormState::with_stats(m.into_data(), v.into_data())?,
            _ => BatchNormState::uninitialized(st.channels()),
        };
        if state.channels() != st.channels() {
            return Err(Error::Format(format!("running statistics of `{path}` have the wrong length")));
        }
        params.insert_norm(path.clone(), state);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected record `{extra}`")));
    }
    Ok(LoadedModel {
        network: Network {
            config,
            seed,
            epoch,
            params,
        },
        header,
    })
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(f))
}
