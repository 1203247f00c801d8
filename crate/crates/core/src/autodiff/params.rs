use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

use super::{Graph, Real, Tensor, Var};

const CHECKPOINT_MAGIC: &[u8; 4] = b"SSWT";
const CHECKPOINT_VERSION: u32 = 1;

/// Ordered, uniquely named weight tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Real = f32> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Real> Default for ModelParams<F> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<F: Real> ModelParams<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::InvalidInput(format!("duplicate parameter name {name}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor(&self, i: usize) -> &Tensor<F> {
        &self.entries[i].1
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Registers every tensor as a graph leaf, in order.
    pub fn bind(&self, graph: &mut Graph<F>, requires_grad: bool) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| graph.leaf(t.clone(), requires_grad)).collect()
    }
}

impl ModelParams<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, origin)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format(origin, "missing SSWT magic"));
        }
        let version = read_u32(&mut r, origin)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(origin, format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r, origin)?;
        let mut params = ModelParams::new();
        for _ in 0..count {
            let len = read_u32(&mut r, origin)? as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name, origin)?;
            let name = String::from_utf8(name).map_err(|_| Error::format(origin, "non-UTF-8 tensor name"))?;
            let rank = read_u32(&mut r, origin)? as usize;
            let shape = (0..rank).map(|_| read_u32(&mut r, origin).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 4];
                read_exact(&mut r, &mut b, origin)?;
                data.push(f32::from_le_bytes(b));
            }
            params.push(name, Tensor::new(shape, data)?).map_err(|e| Error::format(origin, e.to_string()))?;
        }
        if !r.is_empty() {
            return Err(Error::format(origin, "trailing bytes after last tensor"));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// SHA-256 of the checkpoint encoding, hex.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.to_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], origin: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::format(origin, "truncated checkpoint"))
}

fn read_u32(r: &mut &[u8], origin: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, origin)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_garbage() {
        let mut p = ModelParams::<f32>::new();
        p.push("a", Tensor::zeros(vec![2])).unwrap();
        assert!(p.push("a", Tensor::zeros(vec![1])).is_err());
        let bytes = p.to_bytes();
        let origin = Path::new("mem");
        assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 1], origin).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelParams::from_bytes(&bad, origin).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ModelParams::from_bytes(&extra, origin).is_err());
    }
}
