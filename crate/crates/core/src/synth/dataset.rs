// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path as FsPath, PathBuf};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_layout, generate_negative, sample_params, GeneratorSpec, NegativeConfig, ParamSet, SynthError, SynthResult};
use crate::classifier::ClassRegistry;
use crate::layout::{design_hash, parse_gdsii, Cell, DesignHash, Library};
use crate::raster::{map_layers, rasterize_bitmaps, ChannelStack, RasterConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const LABEL_SIDECAR: &str = "labels.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleSource {
    Generated,
    RandomNegative,
    StructuredNegative,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    /// Relative to the manifest directory.
    pub stack_file: String,
    pub label: usize,
    pub source: SampleSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamSet>,
    pub split: Split,
    pub design_hash: DesignHash,
    #[serde(default = "one")]
    pub instances: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub duplicate: bool,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub registry: ClassRegistry,
    pub samples: Vec<ManifestSample>,
}

impl DatasetManifest {
    pub fn save(&self, dir: impl AsRef<FsPath>) -> SynthResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| SynthError::Manifest(e.to_string()))?;
        std::fs::write(dir.as_ref().join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    /// Reads `manifest.json` from `dir` and checks labels and version.
    pub fn load(dir: impl AsRef<FsPath>) -> SynthResult<Self> {
        let text = std::fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| SynthError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(SynthError::Manifest(format!("unsupported manifest version {}", m.version)));
        }
        if let Some(s) = m.samples.iter().find(|s| s.label >= m.registry.len()) {
            return Err(SynthError::Manifest(format!(
                "{}: label {} >= class count {}",
                s.stack_file,
                s.label,
                m.registry.len()
            )));
        }
        Ok(m)
    }

    /// Checks that every stack file exists and parses.
    pub fn verify_files(&self, dir: impl AsRef<FsPath>) -> SynthResult<()> {
        for s in &self.samples {
            ChannelStack::load(dir.as_ref().join(&s.stack_file))?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Sample count per label index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.registry.len()];
        for s in &self.samples {
            c[s.label] += 1;
        }
        c
    }

    /// Redraws the stratified train/validation split.
    pub fn resplit(&mut self, val_frac: f64, seed: u64) {
        let labels: Vec<usize> = self.samples.iter().map(|s| s.label).collect();
        for (i, sp) in stratified_split(&labels, val_frac, seed).into_iter().enumerate() {
            self.samples[i].split = sp;
        }
    }
}

/// A generated layout with its label, before rasterization.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub cell: Cell,
    pub label: usize,
    pub source: SampleSource,
    pub seed: u64,
    pub params: Option<ParamSet>,
    pub hash: DesignHash,
    pub split: Split,
}

/// Seed of one sample, derived from the dataset seed and a tag.
pub(crate) fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn stratified_split(labels: &[usize], val_frac: f64, seed: u64) -> Vec<Split> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut out = vec![Split::Train; labels.len()];
    for (label, mut idx) in by_label {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split", label as u64));
        idx.shuffle(&mut rng);
        let n_val = (idx.len() as f64 * val_frac).round() as usize;
        for &i in idx.iter().take(n_val.min(idx.len())) {
            out[i] = Split::Val;
        }
    }
    out
}

/// Draws `per_class` layouts per generator and `negatives` random
/// negatives. The registry lists the generators in order plus NG last.
/// Negatives that repeat another sample's design are redrawn.
pub fn generate_samples(
    specs: &[GeneratorSpec],
    per_class: usize,
    negatives: usize,
    seed: u64,
    val_frac: f64,
    neg_cfg: &NegativeConfig,
) -> SynthResult<(ClassRegistry, Vec<GeneratedSample>)> {
    let ids: Vec<&str> = specs.iter().map(|s| s.id.as_str()).collect();
    let registry = ClassRegistry::from_generators(&ids)?;
    let empty = Library::new("scratch");
    let mut samples = Vec::with_capacity(specs.len() * per_class + negatives);
    for (label, spec) in specs.iter().enumerate() {
        for i in 0..per_class {
            let s = derive_seed(seed, &spec.id, i as u64);
            let params = sample_params(spec, &mut ChaCha8Rng::seed_from_u64(s));
            let cell = generate_layout(spec, &params)?;
            let hash = design_hash(&cell, &empty)?;
            samples.push(GeneratedSample {
                cell,
                label,
                source: SampleSource::Generated,
                seed: s,
                params: Some(params),
                hash,
                split: Split::Train,
            });
        }
    }
    let mut taken: HashSet<DesignHash> = samples.iter().map(|s| s.hash).collect();
    let ng = registry.ng_index();
    for i in 0..negatives {
        let mut attempt = 0u64;
        loop {
            let s = derive_seed(seed, &format!("negative/{attempt}"), i as u64);
            let cell = generate_negative(&mut ChaCha8Rng::seed_from_u64(s), neg_cfg);
            let hash = design_hash(&cell, &empty)?;
            if taken.insert(hash) {
                samples.push(GeneratedSample {
                    cell,
                    label: ng,
                    source: SampleSource::RandomNegative,
                    seed: s,
                    params: None,
                    hash,
                    split: Split::Train,
                });
                break;
            }
            attempt += 1;
        }
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    for (s, sp) in samples.iter_mut().zip(stratified_split(&labels, val_frac, seed)) {
        s.split = sp;
    }
    Ok((registry, samples))
}

fn stack_name(i: usize) -> String {
    format!("stacks/s{i:06}.ltg")
}

fn write_native(cell: &Cell, cfg: &RasterConfig, dbu_per_nm: Ratio<i64>, path: &FsPath) -> SynthResult<()> {
    let geom = map_layers(cell, &cfg.channel_map)?;
    rasterize_bitmaps(&geom, cfg, dbu_per_nm, &cell.name)?.to_stack().save(path)?;
    Ok(())
}

/// Generates, rasterizes and writes a dataset to `out_dir`. Stack files
/// hold the native raster; the manifest records labels, seeds, parameters
/// and the stratified split.
pub fn build_dataset(
    specs: &[GeneratorSpec],
    per_class: usize,
    negatives: usize,
    seed: u64,
    val_frac: f64,
    raster: &RasterConfig,
    out_dir: impl AsRef<FsPath>,
) -> SynthResult<DatasetManifest> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out.join("stacks"))?;
    let neg_cfg = NegativeConfig::for_map(&raster.channel_map);
    let (registry, samples) = generate_samples(specs, per_class, negatives, seed, val_frac, &neg_cfg)?;
    let one_nm = Ratio::from_integer(1);
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.into_iter().enumerate() {
        let name = stack_name(i);
        write_native(&s.cell, raster, one_nm, &out.join(&name))?;
        entries.push(ManifestSample {
            stack_file: name,
            label: s.label,
            source: s.source,
            seed: Some(s.seed),
            params: s.params,
            split: s.split,
            design_hash: s.hash,
            instances: 1,
            duplicate: false,
        });
    }
    let manifest = DatasetManifest { version: MANIFEST_VERSION, registry, samples: entries };
    manifest.save(out)?;
    Ok(manifest)
}

fn read_sidecar(dir: &FsPath) -> SynthResult<Vec<(String, String)>> {
    let path = dir.join(LABEL_SIDECAR);
    let file = std::fs::File::open(&path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(false).from_reader(file);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display())))?;
        if rec.len() != 2 {
            return Err(SynthError::Manifest(format!("{}: expected filename,label", path.display())));
        }
        if rows.is_empty() && &rec[0] == "filename" && &rec[1] == "label" {
            continue;
        }
        rows.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(rows)
}

/// Ingests manually labeled GDSII files listed in `labels.csv` under
/// `dir`. Each file's top cell is flattened, rasterized into
/// `dir/stacks`, and recorded with source `manual`; repeated designs are
/// kept and flagged as duplicates.
pub fn ingest_labeled(dir: impl AsRef<FsPath>, registry: &ClassRegistry, raster: &RasterConfig) -> SynthResult<DatasetManifest> {
    let dir = dir.as_ref();
    let rows = read_sidecar(dir)?;
    std::fs::create_dir_all(dir.join("stacks"))?;
    let mut entries = Vec::with_capacity(rows.len());
    let mut first_seen: HashMap<DesignHash, usize> = HashMap::new();
    for (i, (file, label)) in rows.iter().enumerate() {
        let label = registry.index_of(label)?;
        let bytes = std::fs::read(dir.join(file))?;
        let lib: Library = parse_gdsii(&bytes)?;
        let top = lib
            .top_candidates()
            .into_iter()
            .next()
            .ok_or_else(|| SynthError::Manifest(format!("{file}: library has no cells")))?;
        let flat = lib.flatten_all(&top)?;
        let hash = design_hash(lib.cell(&top)?, &lib)?;
        let name = stack_name(i);
        let stack_path: PathBuf = dir.join(&name);
        write_native(&flat, raster, lib.dbu_per_nm(), &stack_path)?;
        let duplicate = match first_seen.get(&hash) {
            Some(&j) => {
                let e: &mut ManifestSample = &mut entries[j];
                e.duplicate = true;
                true
            }
            None => {
                first_seen.insert(hash, i);
                false
            }
        };
        entries.push(ManifestSample {
            stack_file: name,
            label,
            source: SampleSource::Manual,
            seed: None,
            params: None,
            split: Split::Val,
            design_hash: hash,
            instances: 1,
            duplicate,
        });
    }
    Ok(DatasetManifest { version: MANIFEST_VERSION, registry: registry.clone(), samples: entries })
}
