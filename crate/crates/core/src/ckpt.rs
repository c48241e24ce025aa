//! Checkpoints: named parameter lists in the raw tensor format with a
//! manifest header.
//!
//! Layout: `CKPT <count>\n`, then `<name> <offset>\n` per parameter (offset in
//! bytes into the payload), then the concatenated tensor records.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{read_tensor, write_tensor, DType, Tensor};

pub fn save_checkpoint(
    w: &mut impl Write,
    params: &[(String, Tensor)],
    dtype: DType,
) -> Result<()> {
    let mut payload = Vec::new();
    let mut manifest = String::new();
    for (name, tensor) in params {
        if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
            return Err(Error::InvalidArg {
                op: "save_checkpoint",
                msg: format!("parameter name {name:?} is empty or has whitespace"),
            });
        }
        manifest.push_str(&format!("{name} {}\n", payload.len()));
        write_tensor(&mut payload, tensor, dtype)?;
    }
    write!(w, "CKPT {}\n", params.len())?;
    w.write_all(manifest.as_bytes())?;
    w.write_all(&payload)?;
    Ok(())
}

pub fn load_checkpoint(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut next_line = |bytes: &[u8]| -> Result<String> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::Format {
                msg: "unexpected EOF in checkpoint header".into(),
            });
        }
        let line = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        pos += 1;
        Ok(line)
    };
    let head = next_line(&bytes)?;
    let count: usize = head
        .strip_prefix("CKPT ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format {
            msg: format!("bad checkpoint magic {head:?}"),
        })?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line(&bytes)?;
        let (name, off) = line.rsplit_once(' ').ok_or_else(|| Error::Format {
            msg: format!("bad manifest line {line:?}"),
        })?;
        let offset: usize = off.parse().map_err(|_| Error::Format {
            msg: format!("bad offset in {line:?}"),
        })?;
        entries.push((name.to_string(), offset));
    }
    let payload = &bytes[pos..];
    let mut out = Vec::with_capacity(count);
    for (name, offset) in entries {
        if offset >= payload.len() && !payload.is_empty() || offset > payload.len() {
            return Err(Error::Format {
                msg: format!("offset {offset} beyond payload for {name:?}"),
            });
        }
        let tensor = read_tensor(&mut &payload[offset..])?;
        out.push((name, tensor));
    }
    Ok(out)
}

/// Snapshot every parameter of a graph, in registration order.
pub fn graph_params(g: &Graph) -> Vec<(String, Tensor)> {
    g.param_ids()
        .iter()
        .map(|&id| (g.param_name(id).to_string(), g.tensor(id).clone()))
        .collect()
}

pub fn save_graph(path: &Path, g: &Graph) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    save_checkpoint(&mut f, &graph_params(g), DType::F64)
}

/// Restore parameter values by name. Every graph parameter must be present
/// with a matching shape, and the checkpoint may not contain extras.
pub fn load_graph(path: &Path, g: &mut Graph) -> Result<()> {
    let mut f = std::fs::File::open(path)?;
    let entries = load_checkpoint(&mut f)?;
    let mut by_name: std::collections::BTreeMap<String, Tensor> = entries.into_iter().collect();
    for &id in g.param_ids().to_vec().iter() {
        let name = g.param_name(id).to_string();
        let tensor = by_name.remove(&name).ok_or_else(|| Error::Format {
            msg: format!("checkpoint is missing parameter {name:?}"),
        })?;
        g.set_param_value(id, tensor)?;
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(Error::Format {
            msg: format!("checkpoint has unknown parameter {name:?} (model mismatch?)"),
        });
    }
    Ok(())
}
