// SPDX-License-Identifier: Apache-2.0

//! Content hashing of cell designs.
//!
//! Two cells share a [`DesignHash`] when their geometry, their placements and
//! the hashes of the cells they place are identical, whatever the cell names
//! and the order of the element lists.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::{Boundary, Cell, Instance, LayoutError, LayoutResult, Library, Path, Point};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DesignHash(pub [u8; 16]);

impl DesignHash {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 32 {
            return None;
        }
        let mut out = [0u8; 16];
        for (i, o) in out.iter_mut().enumerate() {
            *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
        }
        Some(Self(out))
    }
}

impl fmt::Debug for DesignHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DesignHash({})", self.to_hex())
    }
}

impl fmt::Display for DesignHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for DesignHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for DesignHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        DesignHash::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 32 hex digits"))
    }
}

fn push_point(out: &mut Vec<u8>, p: Point) {
    out.extend_from_slice(&p.x.to_le_bytes());
    out.extend_from_slice(&p.y.to_le_bytes());
}

/// Vertex ring rotated to start at its smallest vertex, walked
/// counter-clockwise.
fn canonical_ring(b: &Boundary) -> Vec<Point> {
    let mut ring: Vec<Point> = b.open_vertices().to_vec();
    let signed: i128 = (0..ring.len())
        .map(|i| {
            let (a, c) = (ring[i], ring[(i + 1) % ring.len()]);
            a.x as i128 * c.y as i128 - c.x as i128 * a.y as i128
        })
        .sum();
    if signed < 0 {
        ring.reverse();
    }
    let start = ring.iter().enumerate().min_by_key(|(_, p)| **p).map_or(0, |(i, _)| i);
    ring.rotate_left(start);
    ring
}

fn boundary_bytes(b: &Boundary) -> Vec<u8> {
    let mut out = vec![b'B', b.layer.layer, b.layer.datatype];
    for p in canonical_ring(b) {
        push_point(&mut out, p);
    }
    out
}

fn path_bytes(p: &Path) -> Vec<u8> {
    let forward = p.centerline.clone();
    let mut backward = forward.clone();
    backward.reverse();
    let line = forward.min(backward);
    let mut out = vec![b'P', p.layer.layer, p.layer.datatype, p.end_style.code() as u8];
    out.extend_from_slice(&p.width.to_le_bytes());
    for q in line {
        push_point(&mut out, q);
    }
    out
}

fn instance_bytes(inst: &Instance, child: &DesignHash) -> Vec<u8> {
    let mut out = vec![b'I'];
    out.extend_from_slice(&child.0);
    out.extend_from_slice(&(inst.rotation.degrees() as u16).to_le_bytes());
    out.push(inst.mirrored_x as u8);
    push_point(&mut out, inst.origin);
    if let Some(a) = inst.array {
        out.push(b'A');
        out.extend_from_slice(&a.rows.to_le_bytes());
        out.extend_from_slice(&a.cols.to_le_bytes());
        push_point(&mut out, a.row_pitch);
        push_point(&mut out, a.col_pitch);
    }
    out
}

fn digest_cell(cell: &Cell, child_hash: impl Fn(&str) -> LayoutResult<DesignHash>) -> LayoutResult<DesignHash> {
    let mut boundaries: Vec<Vec<u8>> = cell.boundaries.iter().map(boundary_bytes).collect();
    let mut paths: Vec<Vec<u8>> = cell.paths.iter().map(path_bytes).collect();
    let mut instances: Vec<Vec<u8>> = cell
        .instances
        .iter()
        .map(|i| child_hash(&i.ref_name).map(|h| instance_bytes(i, &h)))
        .collect::<LayoutResult<_>>()?;
    boundaries.sort();
    paths.sort();
    instances.sort();
    let mut h = Sha256::new();
    h.update(b"ltg-design-v1");
    for group in [&boundaries, &paths, &instances] {
        h.update((group.len() as u64).to_le_bytes());
        for item in group {
            h.update((item.len() as u64).to_le_bytes());
            h.update(item);
        }
    }
    let full = h.finalize();
    let mut out = [0u8; 16];
    out.copy_from_slice(&full[..16]);
    Ok(DesignHash(out))
}

/// Hash of `cell`, whose children must live in `lib`. The cell itself need
/// not be stored in the library.
pub fn design_hash(cell: &Cell, lib: &Library) -> LayoutResult<DesignHash> {
    let mut memo = HashMap::new();
    for inst in &cell.instances {
        hash_named(lib, &inst.ref_name, &mut memo)?;
    }
    digest_cell(cell, |n| Ok(memo[n]))
}

fn hash_named(lib: &Library, name: &str, memo: &mut HashMap<String, DesignHash>) -> LayoutResult<DesignHash> {
    if let Some(h) = memo.get(name) {
        return Ok(*h);
    }
    let cell = lib.cells.get(name).ok_or_else(|| LayoutError::Link(name.to_string()))?;
    let mut children = HashMap::new();
    for inst in &cell.instances {
        if !children.contains_key(&inst.ref_name) {
            let h = hash_named(lib, &inst.ref_name, memo)?;
            children.insert(inst.ref_name.clone(), h);
        }
    }
    let h = digest_cell(cell, |n| Ok(children[n]))?;
    memo.insert(name.to_string(), h);
    Ok(h)
}

/// Hashes of every cell in the library.
pub fn design_hashes(lib: &Library) -> LayoutResult<HashMap<String, DesignHash>> {
    let mut memo = HashMap::new();
    for name in lib.cells.keys() {
        hash_named(lib, name, &mut memo)?;
    }
    Ok(memo)
}
