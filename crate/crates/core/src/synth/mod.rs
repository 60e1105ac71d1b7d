// SPDX-License-Identifier: Apache-2.0

//! Parametric stand-in layout generators, random negatives and dataset
//! construction.
//!
//! All lengths are nanometres on a 1 nm database grid.

mod circuits;
mod dataset;
mod negative;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layout::Cell;

pub use dataset::{
    build_dataset, generate_samples, ingest_labeled, DatasetManifest, GeneratedSample, ManifestSample, SampleSource,
    Split, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use negative::{generate_negative, generate_perturbed, NegativeConfig};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("parameter {name:?}: {message}")]
    Param { name: String, message: String },
    #[error("unknown generator {0:?}")]
    UnknownGenerator(String),
    #[error(transparent)]
    Registry(#[from] crate::classifier::RegistryError),
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
    #[error(transparent)]
    Layout(#[from] crate::layout::LayoutError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type SynthResult<T> = Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Int,
    Length,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRange {
    pub name: String,
    pub kind: ParamKind,
    pub min: i64,
    pub max: i64,
}

fn int(name: &str, min: i64, max: i64) -> ParamRange {
    ParamRange { name: name.into(), kind: ParamKind::Int, min, max }
}

fn len(name: &str, min: i64, max: i64) -> ParamRange {
    ParamRange { name: name.into(), kind: ParamKind::Length, min, max }
}

pub type ParamSet = BTreeMap<String, i64>;

/// Which layout family a generator draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum GeneratorKind {
    BoundaryArray,
    /// Stacked vias from metal `bottom` up to metal `top`.
    ViaStack { bottom: u8, top: u8 },
    Mosfet,
    PolyResistor,
    Inverter,
    Nand2,
    Nand3,
    Nor2,
    TransmissionGate,
    CurrentMirror,
    SrLatchLike,
    SenseAmpLike,
    ResistorBankUnit,
    CapMom,
}

pub const CIRCUIT_KINDS: [GeneratorKind; 12] = [
    GeneratorKind::Mosfet,
    GeneratorKind::PolyResistor,
    GeneratorKind::Inverter,
    GeneratorKind::Nand2,
    GeneratorKind::Nand3,
    GeneratorKind::Nor2,
    GeneratorKind::TransmissionGate,
    GeneratorKind::CurrentMirror,
    GeneratorKind::SrLatchLike,
    GeneratorKind::SenseAmpLike,
    GeneratorKind::ResistorBankUnit,
    GeneratorKind::CapMom,
];

impl GeneratorKind {
    pub fn id(&self) -> String {
        match self {
            GeneratorKind::BoundaryArray => "boundary_array".into(),
            GeneratorKind::ViaStack { bottom, top } => format!("via_stack_m{bottom}_m{top}"),
            GeneratorKind::Mosfet => "mosfet".into(),
            GeneratorKind::PolyResistor => "poly_resistor".into(),
            GeneratorKind::Inverter => "inverter".into(),
            GeneratorKind::Nand2 => "nand2".into(),
            GeneratorKind::Nand3 => "nand3".into(),
            GeneratorKind::Nor2 => "nor2".into(),
            GeneratorKind::TransmissionGate => "transmission_gate".into(),
            GeneratorKind::CurrentMirror => "current_mirror".into(),
            GeneratorKind::SrLatchLike => "sr_latch_like".into(),
            GeneratorKind::SenseAmpLike => "sense_amp_like".into(),
            GeneratorKind::ResistorBankUnit => "resistor_bank_unit".into(),
            GeneratorKind::CapMom => "cap_mom".into(),
        }
    }

    pub fn default_params(&self) -> Vec<ParamRange> {
        match self {
            GeneratorKind::BoundaryArray => vec![
                int("rows", 1, 5),
                int("cols", 1, 5),
                len("w", 40, 140),
                len("h", 40, 140),
                len("pitch", 150, 500),
                int("metal", 1, 8),
            ],
            GeneratorKind::ViaStack { .. } => vec![
                int("rows", 1, 4),
                int("cols", 1, 4),
                int("cuts_x", 1, 3),
                int("cuts_y", 1, 3),
                len("cut", 30, 60),
                len("space", 30, 80),
                len("enc", 10, 40),
                len("gap", 60, 200),
            ],
            GeneratorKind::Mosfet => vec![int("fingers", 1, 6), len("w", 200, 800), len("l", 20, 60)],
            GeneratorKind::PolyResistor => vec![len("w", 60, 300), len("len", 300, 2000)],
            GeneratorKind::Inverter
            | GeneratorKind::Nand2
            | GeneratorKind::Nand3
            | GeneratorKind::Nor2
            | GeneratorKind::TransmissionGate
            | GeneratorKind::SrLatchLike
            | GeneratorKind::SenseAmpLike => {
                vec![len("wn", 200, 600), len("wp", 300, 900), len("l", 20, 60)]
            }
            GeneratorKind::CurrentMirror => vec![int("fingers", 1, 4), len("w", 200, 700), len("l", 30, 80)],
            GeneratorKind::ResistorBankUnit => vec![
                int("count", 2, 5),
                len("w", 60, 200),
                len("len", 400, 1500),
                len("space", 100, 300),
            ],
            GeneratorKind::CapMom => vec![
                int("fingers", 4, 12),
                len("fw", 40, 100),
                len("space", 40, 100),
                len("len", 500, 2000),
                int("metal_lo", 1, 6),
                int("levels", 1, 3),
            ],
        }
    }

    /// All 28 via-stack variants, one per metal pair.
    pub fn via_variants() -> Vec<GeneratorKind> {
        let mut v = Vec::new();
        for bottom in 1..=7u8 {
            for top in bottom + 1..=8 {
                v.push(GeneratorKind::ViaStack { bottom, top });
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub id: String,
    pub kind: GeneratorKind,
    pub params: Vec<ParamRange>,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind) -> Self {
        Self { id: kind.id(), kind, params: kind.default_params() }
    }

    pub fn param(&self, name: &str) -> Option<&ParamRange> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Narrows or widens one parameter range.
    pub fn with_range(mut self, name: &str, min: i64, max: i64) -> SynthResult<Self> {
        if min > max {
            return Err(SynthError::Param { name: name.into(), message: format!("min {min} > max {max}") });
        }
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| SynthError::Param { name: name.into(), message: format!("not a parameter of {}", self.id) })?;
        p.min = min;
        p.max = max;
        Ok(self)
    }
}

/// Every shipped generator: boundary array, 28 via stacks, 12 circuits.
pub fn catalog() -> Vec<GeneratorSpec> {
    let mut v = vec![GeneratorSpec::new(GeneratorKind::BoundaryArray)];
    v.extend(GeneratorKind::via_variants().into_iter().map(GeneratorSpec::new));
    v.extend(CIRCUIT_KINDS.iter().map(|k| GeneratorSpec::new(*k)));
    v
}

pub fn find_generator(id: &str) -> SynthResult<GeneratorSpec> {
    catalog().into_iter().find(|s| s.id == id).ok_or_else(|| SynthError::UnknownGenerator(id.to_string()))
}

/// Uniform draw of every parameter within its range.
pub fn sample_params(spec: &GeneratorSpec, rng: &mut impl Rng) -> ParamSet {
    spec.params.iter().map(|p| (p.name.clone(), rng.random_range(p.min..=p.max))).collect()
}

fn check_params(spec: &GeneratorSpec, p: &ParamSet) -> SynthResult<()> {
    for r in &spec.params {
        let v = *p
            .get(&r.name)
            .ok_or_else(|| SynthError::Param { name: r.name.clone(), message: "missing".into() })?;
        if v < r.min || v > r.max {
            return Err(SynthError::Param {
                name: r.name.clone(),
                message: format!("{v} outside [{}, {}]", r.min, r.max),
            });
        }
    }
    if let Some(extra) = p.keys().find(|k| spec.param(k).is_none()) {
        return Err(SynthError::Param { name: extra.clone(), message: format!("not a parameter of {}", spec.id) });
    }
    Ok(())
}

/// Draws the layout of `spec` for one parameter set. The cell is named
/// after the generator id.
pub fn generate_layout(spec: &GeneratorSpec, p: &ParamSet) -> SynthResult<Cell> {
    check_params(spec, p)?;
    let mut cell = circuits::build(spec.kind, p);
    cell.name = spec.id.clone();
    Ok(cell)
}

/// Generator selection file used by the `dataset` command.
///
/// ```json
/// {"generators": [{"id": "inverter"}, {"id": "boundary_array", "params": {"rows": [1, 3]}}]}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecFile {
    pub generators: Vec<SpecFileEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecFileEntry {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, [i64; 2]>,
}

impl SpecFile {
    pub fn resolve(&self) -> SynthResult<Vec<GeneratorSpec>> {
        self.generators
            .iter()
            .map(|e| {
                let mut spec = find_generator(&e.id)?;
                for (name, [lo, hi]) in &e.params {
                    spec = spec.with_range(name, *lo, *hi)?;
                }
                Ok(spec)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{design_hash, Library};
    use crate::raster::layers;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(pairs: &[(&str, i64)]) -> ParamSet {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn catalog_shape() {
        let c = catalog();
        assert_eq!(c.len(), 41);
        assert_eq!(c.iter().filter(|s| matches!(s.kind, GeneratorKind::ViaStack { .. })).count(), 28);
        let ids: std::collections::BTreeSet<_> = c.iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids.len(), 41);
    }

    #[test]
    fn boundary_array_counts() {
        let spec = find_generator("boundary_array").unwrap();
        let cell = generate_layout(
            &spec,
            &params(&[("rows", 2), ("cols", 2), ("w", 100), ("h", 100), ("pitch", 200), ("metal", 1)]),
        )
        .unwrap();
        assert_eq!(cell.boundaries.len(), 4);
        assert!(cell.boundaries.iter().all(|b| b.layer == layers::metal(1)));
    }

    #[test]
    fn via_stack_shape_census() {
        let spec = find_generator("via_stack_m1_m3").unwrap();
        let p = params(&[
            ("rows", 3),
            ("cols", 1),
            ("cuts_x", 2),
            ("cuts_y", 1),
            ("cut", 40),
            ("space", 40),
            ("enc", 20),
            ("gap", 100),
        ]);
        let cell = generate_layout(&spec, &p).unwrap();
        let count = |k| cell.boundaries.iter().filter(|b| b.layer == k).count();
        // Census by layer; rows*cols*(levels*cuts + enclosure layers).
        assert_eq!(count(layers::via(1)), 6);
        assert_eq!(count(layers::via(2)), 6);
        for m in 1..=3 {
            assert_eq!(count(layers::metal(m)), 3);
        }
        assert_eq!(cell.boundaries.len(), 3 * (2 * 2 + 3));
        assert_eq!(count(layers::metal(4)) + count(layers::via(3)), 0);
    }

    #[test]
    fn mosfet_fingers() {
        let spec = find_generator("mosfet").unwrap();
        let cell = generate_layout(&spec, &params(&[("fingers", 4), ("w", 500), ("l", 30)])).unwrap();
        let active: Vec<_> = cell.boundaries.iter().filter(|b| b.layer == layers::ACTIVE).collect();
        assert_eq!(active.len(), 1);
        let a = active[0].bbox();
        let gates = cell
            .boundaries
            .iter()
            .filter(|b| b.layer == layers::POLY)
            .filter(|b| {
                let g = b.bbox();
                g.x0 > a.x0 && g.x1 < a.x1 && g.y0 < a.y0 && g.y1 > a.y1
            })
            .count();
        assert_eq!(gates, 4);
    }

    #[test]
    fn param_errors() {
        let spec = find_generator("mosfet").unwrap();
        let err = generate_layout(&spec, &params(&[("fingers", 9), ("w", 500), ("l", 30)])).unwrap_err();
        assert!(matches!(err, SynthError::Param { ref name, .. } if name == "fingers"));
        let err = generate_layout(&spec, &params(&[("w", 500), ("l", 30)])).unwrap_err();
        assert!(matches!(err, SynthError::Param { ref name, .. } if name == "fingers"));
        assert!(spec.clone().with_range("w", 5, 1).is_err());
        assert!(matches!(find_generator("nope"), Err(SynthError::UnknownGenerator(_))));
    }

    #[test]
    fn sampling_is_seeded_and_within_range() {
        let spec = find_generator("boundary_array").unwrap().with_range("rows", 3, 3).unwrap();
        let a = sample_params(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_params(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_eq!(a["rows"], 3);
    }

    #[test]
    fn sampling_uniformity() {
        let spec = find_generator("boundary_array").unwrap().with_range("rows", 1, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[(sample_params(&spec, &mut rng)["rows"] - 1) as usize] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 3 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 16.27, "chi2 {chi2} counts {counts:?}");
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() <= 0.02);
        }
    }

    #[test]
    fn every_generator_is_deterministic_and_valid() {
        let lib = Library::new("L");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in catalog() {
            for _ in 0..5 {
                let p = sample_params(&spec, &mut rng);
                let a = generate_layout(&spec, &p).unwrap();
                let b = generate_layout(&spec, &p).unwrap();
                assert_eq!(design_hash(&a, &lib).unwrap(), design_hash(&b, &lib).unwrap(), "{}", spec.id);
                assert!(!a.boundaries.is_empty() || !a.paths.is_empty(), "{}", spec.id);
            }
        }
    }

    #[test]
    fn spec_file_resolution() {
        let f: SpecFile =
            serde_json::from_str(r#"{"generators":[{"id":"inverter"},{"id":"boundary_array","params":{"rows":[1,2]}}]}"#)
                .unwrap();
        let specs = f.resolve().unwrap();
        assert_eq!(specs[1].param("rows").unwrap().max, 2);
        let bad: SpecFile = serde_json::from_str(r#"{"generators":[{"id":"xyz"}]}"#).unwrap();
        assert!(bad.resolve().is_err());
    }
}
