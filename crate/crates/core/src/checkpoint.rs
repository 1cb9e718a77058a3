//! Parameter checkpoints.
//!
//! A checkpoint is a single self-describing archive file:
//!
//! ```text
//! magic "PCKPTAR1"
//! u64   manifest byte length (little endian)
//! manifest, UTF-8, one line per entry:
//!     f64 <TAB> name <TAB> d0,d1,... <TAB> offset <TAB> byte_len
//!     text <TAB> name <TAB> - <TAB> offset <TAB> byte_len
//! payload: concatenated raw blobs (f64 entries little endian)
//! ```
//!
//! Offsets are relative to the payload start. Writing the same parameters
//! twice yields byte-identical files, and a save/load round trip preserves
//! every bit of every float.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::autodiff::TensorMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PCKPTAR1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: TensorMap,
    /// Auxiliary text entries (model manifest, dataset fingerprint), in
    /// stored order.
    pub texts: Vec<(String, String)>,
}

/// Serialize parameters (in name order) plus optional text entries.
pub fn save_checkpoint(path: &Path, params: &TensorMap, texts: &[(String, String)]) -> Result<()> {
    let mut manifest = String::new();
    let mut payload: Vec<u8> = Vec::new();

    for (name, tensor) in params {
        check_name(name)?;
        let offset = payload.len();
        for v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let shape = tensor
            .shape()
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        manifest.push_str(&format!(
            "f64\t{name}\t{shape}\t{offset}\t{}\n",
            payload.len() - offset
        ));
    }
    for (name, text) in texts {
        check_name(name)?;
        let offset = payload.len();
        payload.extend_from_slice(text.as_bytes());
        manifest.push_str(&format!(
            "text\t{name}\t-\t{offset}\t{}\n",
            payload.len() - offset
        ));
    }

    let mut file = fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&(manifest.len() as u64).to_le_bytes())?;
    file.write_all(manifest.as_bytes())?;
    file.write_all(&payload)?;
    Ok(())
}

fn check_name(name: &str) -> Result<()> {
    if name.contains('\t') || name.contains('\n') || name.is_empty() {
        return Err(Error::Checkpoint(format!("invalid entry name {name:?}")));
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let fail = |detail: &str| Error::Checkpoint(format!("{}: {detail}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint archive (bad magic)"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest_end = 16 + mlen;
    if bytes.len() < manifest_end {
        return Err(fail("truncated manifest"));
    }
    let manifest = std::str::from_utf8(&bytes[16..manifest_end])
        .map_err(|_| fail("manifest is not UTF-8"))?;
    let payload = &bytes[manifest_end..];

    let mut params = TensorMap::new();
    let mut texts = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(fail(&format!("manifest line {} malformed", lineno + 1)));
        }
        let (kind, name, shape, offset, len) =
            (fields[0], fields[1], fields[2], fields[3], fields[4]);
        let offset: usize = offset.parse().map_err(|_| fail("bad offset"))?;
        let len: usize = len.parse().map_err(|_| fail("bad length"))?;
        let blob = payload
            .get(offset..offset + len)
            .ok_or_else(|| fail(&format!("entry `{name}` outside payload")))?;
        match kind {
            "f64" => {
                let dims: Vec<usize> = if shape.is_empty() {
                    vec![]
                } else {
                    shape
                        .split(',')
                        .map(|d| d.parse().map_err(|_| fail("bad shape")))
                        .collect::<Result<_>>()?
                };
                if len % 8 != 0 || dims.iter().product::<usize>() != len / 8 {
                    return Err(fail(&format!("entry `{name}`: shape/length mismatch")));
                }
                let data: Vec<f64> = blob
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                params.insert(name.to_string(), Tensor::new(dims, data)?);
            }
            "text" => {
                let text = std::str::from_utf8(blob)
                    .map_err(|_| fail(&format!("text entry `{name}` is not UTF-8")))?;
                texts.push((name.to_string(), text.to_string()));
            }
            other => return Err(fail(&format!("unknown entry kind `{other}`"))),
        }
    }
    Ok(Checkpoint { params, texts })
}
