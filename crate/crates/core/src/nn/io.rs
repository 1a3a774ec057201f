use std::fs;
use std::path::Path;

use super::spec::ModelSpec;
use super::weights::{Param, Weights};
use crate::{Error, Result};

pub const MAGIC: &[u8; 5] = b"PNET1";

pub fn encode_weights(weights: &Weights<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(MAGIC.len() + weights.len() * 4 + weights.params.len() * 32);
    out.extend_from_slice(MAGIC);
    for p in &weights.params {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| Error::invalid("parameter name too long"))?;
        let rank = u8::try_from(p.shape.len()).map_err(|_| Error::invalid("parameter rank too large"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &p.shape {
            let d = u32::try_from(d).map_err(|_| Error::invalid("dimension too large"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptContainer(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Parses a container without validating it against a model.
pub fn decode_weights(buf: &[u8]) -> Result<Weights<f32>> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptContainer("bad magic".into()));
    }
    let mut r = Reader { buf, pos: MAGIC.len() };
    let mut params = Vec::new();
    while r.pos < buf.len() {
        let n = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(n, "name")?)
            .map_err(|_| Error::CorruptContainer("parameter name is not utf-8".into()))?
            .to_owned();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(r.take(4, "dims")?.try_into().unwrap()) as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::CorruptContainer(format!("{name}: element count overflows")))?;
        let bytes = r.take(count.checked_mul(4).unwrap_or(usize::MAX), &name)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Param { name, shape, data });
    }
    Ok(Weights { params })
}

pub fn save_weights(weights: &Weights<f32>, path: &Path) -> Result<()> {
    let bytes = encode_weights(weights)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a container and checks it against `spec`.
pub fn load_weights(path: &Path, spec: &ModelSpec) -> Result<Weights<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let w = decode_weights(&bytes)?;
    w.check(spec)?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let spec = ModelSpec::reduced();
        let w = Weights::<f32>::init(&spec, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pnet");
        save_weights(&w, &path).unwrap();
        let back = load_weights(&path, &spec).unwrap();
        for (a, b) in w.params.iter().zip(&back.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let spec = ModelSpec::reduced();
        let bytes = encode_weights(&Weights::init(&spec, 1).unwrap()).unwrap();
        for cut in [3, 6, 9, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_weights(&bytes[..cut]), Err(Error::CorruptContainer(_))), "cut {cut}");
        }
    }

    #[test]
    fn altered_dim_names_parameter() {
        let spec = ModelSpec::reduced();
        let mut bytes = encode_weights(&Weights::init(&spec, 1).unwrap()).unwrap();
        // First record: conv1.weight, dims start after magic + u16 + name + rank.
        let dim0 = MAGIC.len() + 2 + "conv1.weight".len() + 1;
        assert_eq!(u32::from_le_bytes(bytes[dim0..dim0 + 4].try_into().unwrap()), 5);
        bytes[dim0] = 4;
        // Keep the file length consistent by trimming the removed elements.
        let removed = 3 * 5 * 2 * 4;
        let data_start = dim0 + 16;
        bytes.drain(data_start..data_start + removed);
        let w = decode_weights(&bytes).unwrap();
        match w.check(&spec) {
            Err(Error::ParameterMismatch { name, .. }) => assert_eq!(name, "conv1.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
