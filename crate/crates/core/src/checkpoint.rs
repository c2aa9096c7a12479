//! Named-tensor checkpoints.
//!
//! A checkpoint is a text header followed by the DITF encodings of its
//! tensors, in header order:
//!
//! ```text
//! dipred-checkpoint 1
//! meta epoch 3
//! tensor layer0.lstm.weight 12x17x3x3
//! end
//! <DITF blob> <DITF blob> ...
//! ```
//!
//! Files are written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ditf, Tensor};

const HEADER: &str = "dipred-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing meta key `{key}`")))
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| bad(format!("meta `{key}` has unparsable value `{raw}`")))
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut head = String::from(HEADER);
        head.push('\n');
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            head.push_str(&format!("tensor {name} {}\n", dims.join("x")));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        for (_, t) in &self.tensors {
            ditf::encode_into(t, &mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut ckpt = Checkpoint::new();
        let mut shapes = Vec::new();
        let mut pos = 0;
        let mut first = true;
        loop {
            let nl = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("unterminated header"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + nl])
                .map_err(|_| bad("header is not UTF-8"))?;
            pos += nl + 1;
            if first {
                if line != HEADER {
                    return Err(bad(format!("unknown header line `{line}`")));
                }
                first = false;
                continue;
            }
            if line == "end" {
                break;
            }
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), v) => {
                    ckpt.meta.insert(k.to_string(), v.unwrap_or("").to_string());
                }
                (Some("tensor"), Some(name), Some(dims)) => {
                    let shape = dims
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("bad shape `{dims}`")))?;
                    shapes.push((name.to_string(), shape));
                }
                _ => return Err(bad(format!("bad header line `{line}`"))),
            }
        }
        for (name, shape) in shapes {
            let (t, used) = ditf::decode::<f32>(&bytes[pos..])?;
            if t.shape() != shape.as_slice() {
                return Err(bad(format!(
                    "tensor `{name}` is {:?}, header says {shape:?}",
                    t.shape()
                )));
            }
            pos += used;
            ckpt.tensors.push((name, t));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(ckpt)
    }

    /// Writes atomically: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = Checkpoint::new();
        c.set_meta("epoch", 3);
        c.set_meta("kind", "prednet");
        c.push("a.weight", Tensor::from_fn(&[2, 3], |i| i as f32 * 0.5));
        c.push("a.bias", Tensor::from_fn(&[2], |i| -(i as f32)));
        let back = Checkpoint::decode(&c.encode()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta_parse::<usize>("epoch").unwrap(), 3);
        assert!(back.get("missing").is_err());
    }

    #[test]
    fn rejects_corruption() {
        let mut c = Checkpoint::new();
        c.push("x", Tensor::zeros(&[4]));
        let mut bytes = c.encode();
        bytes.push(0);
        assert!(Checkpoint::decode(&bytes).is_err());
        assert!(Checkpoint::decode(b"other 1\nend\n").is_err());
        let enc = c.encode();
        assert!(Checkpoint::decode(&enc[..enc.len() - 2]).is_err());
    }

    #[test]
    fn atomic_save_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut c = Checkpoint::new();
        c.push("x", Tensor::full(&[2, 2], 1.5));
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }
}
