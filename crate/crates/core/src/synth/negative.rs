// SPDX-License-Identifier: Apache-2.0

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{generate_layout, sample_params, GeneratorSpec, SynthResult};
use crate::layout::{Boundary, Cell, LayerKey};
use crate::raster::{layers, LayerChannelMap};

/// Shape of random not-generatable layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeConfig {
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub min_side: i64,
    pub max_side: i64,
    /// Every rectangle lies in `[0, frame]^2`.
    pub frame: i64,
    pub layers: Vec<LayerKey>,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self::for_map(&LayerChannelMap::default_21())
    }
}

impl NegativeConfig {
    pub fn for_map(map: &LayerChannelMap) -> Self {
        Self { min_shapes: 1, max_shapes: 12, min_side: 10, max_side: 2000, frame: 2560, layers: map.keys() }
    }
}

/// Randomly sized rectangles at random positions on random layers.
pub fn generate_negative(rng: &mut impl Rng, cfg: &NegativeConfig) -> Cell {
    let mut cell = Cell::new("negative");
    let n = rng.random_range(cfg.min_shapes..=cfg.max_shapes);
    for _ in 0..n {
        let layer = *cfg.layers.choose(rng).expect("negative config has layers");
        let w = rng.random_range(cfg.min_side..=cfg.max_side.min(cfg.frame));
        let h = rng.random_range(cfg.min_side..=cfg.max_side.min(cfg.frame));
        let x = rng.random_range(0..=cfg.frame - w);
        let y = rng.random_range(0..=cfg.frame - h);
        cell.boundaries.push(Boundary::rect(layer, x, y, x + w, y + h).expect("positive sides"));
    }
    cell
}

/// A positive layout from `spec` with its routing disturbed: part of the
/// metal shapes removed and long random wires drawn over it on metal
/// layers 1-4, with vias where wires change layer.
pub fn generate_perturbed(spec: &GeneratorSpec, rng: &mut impl Rng) -> SynthResult<Cell> {
    let params = sample_params(spec, rng);
    let mut cell = generate_layout(spec, &params)?;
    let bbox = cell.local_bbox().expect("generators draw geometry");
    let metals: Vec<LayerKey> = (1..=8).map(layers::metal).collect();
    cell.boundaries.retain(|b| !metals.contains(&b.layer) || rng.random_bool(0.6));
    let wires = rng.random_range(2..=5);
    let margin = 300;
    let (x0, y0, x1, y1) = (bbox.x0 - margin, bbox.y0 - margin, bbox.x1 + margin, bbox.y1 + margin);
    for _ in 0..wires {
        let level = rng.random_range(1..=3u8);
        let w = rng.random_range(40..=120);
        let ya = rng.random_range(y0..=y1 - w);
        let xb = rng.random_range(x0..=x1 - w);
        let (xs, xe) = (x0 + rng.random_range(0..=margin), x1 - rng.random_range(0..=margin));
        let (ys, ye) = (y0 + rng.random_range(0..=margin), y1 - rng.random_range(0..=margin));
        // Horizontal run on `level`, vertical run on `level + 1`.
        cell.boundaries.push(Boundary::rect(layers::metal(level), xs, ya, xe, ya + w).expect("wire"));
        cell.boundaries.push(Boundary::rect(layers::metal(level + 1), xb, ys, xb + w, ye).expect("wire"));
        let (vx, vy) = (xb + w / 2, ya + w / 2);
        cell.boundaries.push(Boundary::rect(layers::via(level), vx - 20, vy - 20, vx + 20, vy + 20).expect("via"));
    }
    cell.name = format!("{}_perturbed", spec.id);
    Ok(cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{design_hash, Library};
    use crate::raster::{map_layers, native_dims, RasterConfig};
    use crate::synth::find_generator;
    use num_rational::Ratio;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn negatives_are_seeded_and_bounded() {
        let cfg = NegativeConfig::default();
        let a = generate_negative(&mut ChaCha8Rng::seed_from_u64(9), &cfg);
        let b = generate_negative(&mut ChaCha8Rng::seed_from_u64(9), &cfg);
        assert_eq!(a, b);
        let rc = RasterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let c = generate_negative(&mut rng, &cfg);
            assert!((1..=12).contains(&c.boundaries.len()));
            for bx in c.boundaries.iter().map(Boundary::bbox) {
                assert!(bx.x0 >= 0 && bx.y0 >= 0 && bx.x1 <= 2560 && bx.y1 <= 2560);
                assert!((10..=2000).contains(&bx.width()) && (10..=2000).contains(&bx.height()));
            }
            let g = map_layers(&c, &rc.channel_map).unwrap();
            let (h, w) = native_dims(&g, &rc, Ratio::from_integer(1)).unwrap();
            assert!(h <= 256 && w <= 256);
        }
    }

    #[test]
    fn five_hundred_negatives_are_distinct() {
        let cfg = NegativeConfig::default();
        let lib = Library::new("L");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hashes: HashSet<_> =
            (0..500).map(|_| design_hash(&generate_negative(&mut rng, &cfg), &lib).unwrap()).collect();
        assert_eq!(hashes.len(), 500);
    }

    #[test]
    fn perturbed_differs_from_every_positive() {
        let spec = find_generator("inverter").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = generate_perturbed(&spec, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = sample_params(&spec, &mut rng);
        let lib = Library::new("L");
        let base = generate_layout(&spec, &params).unwrap();
        assert_ne!(design_hash(&p, &lib).unwrap(), design_hash(&base, &lib).unwrap());
        assert!(p.boundaries.iter().any(|b| b.layer == layers::metal(2) || b.layer == layers::metal(3)));
    }
}
