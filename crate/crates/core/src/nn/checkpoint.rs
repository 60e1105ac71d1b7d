// SPDX-License-Identifier: Apache-2.0

//! Binary container for trained models: 4-byte magic, u32 format version,
//! a JSON configuration block and named f32 tensors, all little-endian.

use std::io::{Read, Write};

use super::{NnError, NnResult, Real, Slot, SlotList, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub version: u32,
    pub config: String,
    pub blobs: Vec<Blob>,
}

fn fmt_err(m: impl Into<String>) -> NnError {
    NnError::Format(m.into())
}

fn read_u32(r: &mut impl Read) -> NnResult<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| fmt_err(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.magic)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&(self.config.len() as u32).to_le_bytes())?;
        w.write_all(self.config.as_bytes())?;
        w.write_all(&(self.blobs.len() as u32).to_le_bytes())?;
        for b in &self.blobs {
            w.write_all(&(b.name.len() as u32).to_le_bytes())?;
            w.write_all(b.name.as_bytes())?;
            w.write_all(&(b.dims.len() as u32).to_le_bytes())?;
            for d in &b.dims {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(b.data.len() * 4);
            for v in &b.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads a container and checks its magic and version.
    pub fn read_from(mut r: impl Read, magic: &[u8; 4], version: u32) -> NnResult<Self> {
        let mut m = [0u8; 4];
        r.read_exact(&mut m).map_err(|e| fmt_err(format!("truncated: {e}")))?;
        if &m != magic {
            return Err(fmt_err(format!("bad magic {m:?}, expected {magic:?}")));
        }
        let v = read_u32(&mut r)?;
        if v != version {
            return Err(fmt_err(format!("format version {v}, expected {version}")));
        }
        let clen = read_u32(&mut r)? as usize;
        let mut cbuf = vec![0u8; clen];
        r.read_exact(&mut cbuf).map_err(|e| fmt_err(format!("truncated config: {e}")))?;
        let config = String::from_utf8(cbuf).map_err(|_| fmt_err("config block is not UTF-8"))?;
        let count = read_u32(&mut r)? as usize;
        let mut blobs = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = read_u32(&mut r)? as usize;
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf).map_err(|e| fmt_err(format!("truncated name: {e}")))?;
            let name = String::from_utf8(nbuf).map_err(|_| fmt_err("blob name is not UTF-8"))?;
            let rank = read_u32(&mut r)? as usize;
            let dims = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<NnResult<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes).map_err(|e| fmt_err(format!("truncated blob {name}: {e}")))?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            blobs.push(Blob { name, dims, data });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(fmt_err("trailing bytes after last blob"));
        }
        Ok(Self { magic: *magic, version, config, blobs })
    }
}

/// Every parameter and buffer in `slots` as named f32 blobs, in order.
pub fn export_blobs<T: Real>(slots: SlotList<'_, T>) -> Vec<Blob> {
    slots
        .into_iter()
        .map(|(name, slot)| {
            let t: &Tensor<T> = match slot {
                Slot::Param(p) => &p.value,
                Slot::Buffer(b) => b,
            };
            Blob { name, dims: t.dims().to_vec(), data: t.data().iter().map(|v| v.to_f32().unwrap_or(0.0)).collect() }
        })
        .collect()
}

/// Loads blobs into matching slots; names and dims must match one to one.
pub fn import_blobs<T: Real>(slots: SlotList<'_, T>, blobs: &[Blob]) -> NnResult<()> {
    if slots.len() != blobs.len() {
        return Err(fmt_err(format!("slots hold {} tensors, checkpoint {}", slots.len(), blobs.len())));
    }
    for ((name, slot), blob) in slots.into_iter().zip(blobs) {
        if name != blob.name {
            return Err(fmt_err(format!("tensor {name:?} where checkpoint has {:?}", blob.name)));
        }
        let t: &mut Tensor<T> = match slot {
            Slot::Param(p) => &mut p.value,
            Slot::Buffer(b) => b,
        };
        if t.dims() != blob.dims.as_slice() {
            return Err(fmt_err(format!("{name}: dims {:?} vs checkpoint {:?}", t.dims(), blob.dims)));
        }
        for (d, &v) in t.data_mut().iter_mut().zip(&blob.data) {
            *d = T::of(v as f64);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            magic: *b"LTGM",
            version: FORMAT_VERSION,
            config: "{\"k\":2}".into(),
            blobs: vec![Blob { name: "a.w".into(), dims: vec![2, 1], data: vec![1.5, -2.0] }],
        }
    }

    #[test]
    fn roundtrip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"LTGM");
        let back = Container::read_from(&bytes[..], b"LTGM", FORMAT_VERSION).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_inputs() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(Container::read_from(&bytes[..], b"LTGS", 1), Err(NnError::Format(_))));
        assert!(matches!(Container::read_from(&bytes[..], b"LTGM", 2), Err(NnError::Format(_))));
        assert!(matches!(Container::read_from(&bytes[..bytes.len() - 1], b"LTGM", 1), Err(NnError::Format(_))));
        bytes.push(0);
        assert!(matches!(Container::read_from(&bytes[..], b"LTGM", 1), Err(NnError::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(Container::read_from(&bytes[..], b"LTGM", 1), Err(NnError::Format(_))));
    }
}
