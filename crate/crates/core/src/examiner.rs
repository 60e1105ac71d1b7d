// SPDX-License-Identifier: Apache-2.0

//! Examination workflow over a layout hierarchy: each placed sub-cell is
//! classified once per distinct design, suggestions wait for a designer
//! decision, and not-generatable designs are flattened or marked for manual
//! development.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassRegistry, Classifier, ClassifierError, DecisionPolicy, Prediction, Verdict};
use crate::layout::{design_hashes, DesignHash, Instance, LayoutError, Library, Point, Rotation, Transform};
use crate::raster::{build_pyramid, map_layers, rasterize_bitmaps, Pyramid, RasterConfig, RasterError};

#[derive(Debug, thiserror::Error)]
pub enum ExamError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("illegal transition: {0}")]
    State(String),
    #[error("no suggestion {0}")]
    UnknownRecord(usize),
    #[error("unknown design {0}")]
    UnknownDesign(String),
}

pub type ExamResult<T> = Result<T, ExamError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Approved,
    RejectedFlattened,
    RejectedManual,
    AutoNg,
    SkippedEmpty,
}

/// How a not-generatable record was settled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Flattened,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Approve,
    RejectFlatten,
    RejectManual,
    Flatten,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedClass {
    pub class: usize,
    pub generator: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionRecord {
    pub id: usize,
    pub design_hash: DesignHash,
    pub cell: String,
    pub example_path: String,
    /// Suggested generator for generatable verdicts.
    pub suggestion: Option<RankedClass>,
    pub top_k: Vec<RankedClass>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    pub instance_count: u64,
}

impl SuggestionRecord {
    /// True once no further designer input is needed.
    pub fn is_settled(&self) -> bool {
        match self.status {
            Status::Pending => false,
            Status::AutoNg => self.resolution.is_some(),
            _ => true,
        }
    }

    fn flattened(&self) -> bool {
        self.status == Status::RejectedFlattened || self.resolution == Some(Resolution::Flattened)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub instances_visited: u64,
    pub unique_designs_examined: u64,
    pub inference_calls: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub preprocess_ms: f64,
    pub inference_ms: f64,
    pub total_ms: f64,
}

/// One placement in the session's working copy of the top cell.
#[derive(Debug, Clone)]
struct Site {
    path: String,
    cell: String,
    hash: DesignHash,
    transform: Transform,
    record: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// A design seen for the first time; the record is new.
    New(usize),
    /// Another instance of an already examined design.
    Reused(usize),
    Done,
}

pub struct ExamSession<M> {
    lib: Library,
    top: String,
    model: M,
    policy: DecisionPolicy,
    registry: ClassRegistry,
    raster: RasterConfig,
    hashes: HashMap<String, DesignHash>,
    memo: HashMap<DesignHash, (Prediction, usize)>,
    skipped: HashMap<DesignHash, usize>,
    records: Vec<SuggestionRecord>,
    sites: Vec<Site>,
    queue: VecDeque<usize>,
    decisions: Vec<(usize, Action)>,
    counters: Counters,
    timing: Timing,
}

impl<M: Classifier> ExamSession<M> {
    pub fn start(
        lib: Library,
        top: &str,
        model: M,
        policy: DecisionPolicy,
        registry: ClassRegistry,
        raster: RasterConfig,
    ) -> ExamResult<Self> {
        let top_cell = lib.cell(top)?.clone();
        if registry.len() < 2 {
            return Err(ExamError::State("registry too small".into()));
        }
        if model.input_channels() != raster.channel_map.channel_count() {
            return Err(ExamError::State(format!(
                "model expects {} channels, channel map has {}",
                model.input_channels(),
                raster.channel_map.channel_count()
            )));
        }
        let hashes = design_hashes(&lib)?;
        let mut s = Self {
            lib,
            top: top.to_string(),
            model,
            policy,
            registry,
            raster,
            hashes,
            memo: HashMap::new(),
            skipped: HashMap::new(),
            records: Vec::new(),
            sites: Vec::new(),
            queue: VecDeque::new(),
            decisions: Vec::new(),
            counters: Counters::default(),
            timing: Timing::default(),
        };
        let top_name = s.top.clone();
        s.enqueue_children(&top_cell.instances, &Transform::identity(), &top_name);
        Ok(s)
    }

    fn enqueue_children(&mut self, instances: &[Instance], outer: &Transform, prefix: &str) {
        for (index, inst) in instances.iter().enumerate() {
            let is_array = inst.array.is_some();
            for (element, placed) in inst.expand().into_iter().enumerate() {
                let seg = if is_array {
                    format!("{}#{index}@{element}", inst.ref_name)
                } else {
                    format!("{}#{index}", inst.ref_name)
                };
                let site = Site {
                    path: format!("{prefix}/{seg}"),
                    cell: inst.ref_name.clone(),
                    hash: self.hashes[&inst.ref_name],
                    transform: outer.then_after(&placed.transform()),
                    record: None,
                };
                self.sites.push(site);
                self.queue.push_back(self.sites.len() - 1);
            }
        }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn records(&self) -> &[SuggestionRecord] {
        &self.records
    }

    pub fn record(&self, id: usize) -> ExamResult<&SuggestionRecord> {
        self.records.get(id).ok_or(ExamError::UnknownRecord(id))
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn timing(&self) -> Timing {
        self.timing
    }

    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }

    pub fn top(&self) -> &str {
        &self.top
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn decisions(&self) -> &[(usize, Action)] {
        &self.decisions
    }

    /// No queued instances and every record settled.
    pub fn is_complete(&self) -> bool {
        self.queue.is_empty() && self.records.iter().all(SuggestionRecord::is_settled)
    }

    fn ranked(&self, class: usize, p: f64) -> RankedClass {
        RankedClass { class, generator: self.registry.id(class).to_string(), probability: p }
    }

    /// Pyramid of the fully flattened design of a cell.
    pub fn pyramid_of(&self, cell: &str) -> ExamResult<Pyramid> {
        let flat = self.lib.flatten_all(cell)?;
        let geom = map_layers(&flat, &self.raster.channel_map)?;
        let native = rasterize_bitmaps(&geom, &self.raster, self.lib.dbu_per_nm(), cell)?;
        Ok(build_pyramid(&native.resized(self.model.input_size()))?)
    }

    /// Cell name of a design examined in this session.
    pub fn cell_of(&self, hash: &DesignHash) -> ExamResult<&str> {
        self.records
            .iter()
            .find(|r| r.design_hash == *hash)
            .map(|r| r.cell.as_str())
            .ok_or_else(|| ExamError::UnknownDesign(hash.to_hex()))
    }

    /// `size x size` coverage grid of one channel of an examined design,
    /// top row first.
    pub fn preview(&self, hash: &DesignHash, channel: usize, size: usize) -> ExamResult<Vec<Vec<f32>>> {
        let cell = self.cell_of(hash)?.to_string();
        if channel >= self.raster.channel_map.channel_count() {
            return Err(ExamError::State(format!("channel {channel} out of range")));
        }
        if size == 0 || size > 1024 {
            return Err(ExamError::State(format!("preview size {size} out of range")));
        }
        let flat = self.lib.flatten_all(&cell)?;
        let geom = map_layers(&flat, &self.raster.channel_map)?;
        let stack = match rasterize_bitmaps(&geom, &self.raster, self.lib.dbu_per_nm(), &cell) {
            Ok(native) => native.resized(size),
            Err(RasterError::EmptyRaster(_)) => return Ok(vec![vec![0.0; size]; size]),
            Err(e) => return Err(e.into()),
        };
        Ok(stack.channel(channel).chunks(size).rev().map(<[f32]>::to_vec).collect())
    }

    /// Processes the next queued instance.
    pub fn examine_next(&mut self) -> ExamResult<Step> {
        let started = Instant::now();
        let step = self.examine_inner();
        self.timing.total_ms += started.elapsed().as_secs_f64() * 1e3;
        step
    }

    fn examine_inner(&mut self) -> ExamResult<Step> {
        let Some(si) = self.queue.pop_front() else {
            return Ok(Step::Done);
        };
        self.counters.instances_visited += 1;
        let hash = self.sites[si].hash;
        let known = self.memo.get(&hash).map(|m| m.1).or_else(|| self.skipped.get(&hash).copied());
        if let Some(rid) = known {
            self.sites[si].record = Some(rid);
            self.records[rid].instance_count += 1;
            if self.records[rid].flattened() {
                self.flatten_site(si)?;
            }
            return Ok(Step::Reused(rid));
        }

        let cell = self.sites[si].cell.clone();
        let rid = self.records.len();
        let t0 = Instant::now();
        let pyramid = match self.pyramid_of(&cell) {
            Ok(p) => p,
            Err(ExamError::Raster(RasterError::EmptyRaster(_))) => {
                self.timing.preprocess_ms += t0.elapsed().as_secs_f64() * 1e3;
                self.records.push(SuggestionRecord {
                    id: rid,
                    design_hash: hash,
                    cell,
                    example_path: self.sites[si].path.clone(),
                    suggestion: None,
                    top_k: Vec::new(),
                    status: Status::SkippedEmpty,
                    resolution: None,
                    instance_count: 1,
                });
                self.skipped.insert(hash, rid);
                self.sites[si].record = Some(rid);
                return Ok(Step::New(rid));
            }
            Err(e) => return Err(e),
        };
        self.timing.preprocess_ms += t0.elapsed().as_secs_f64() * 1e3;
        let t1 = Instant::now();
        let pred = self
            .model
            .predict(&[&pyramid], &self.policy, &self.registry)?
            .pop()
            .ok_or_else(|| ExamError::State("classifier returned no prediction".into()))?;
        self.timing.inference_ms += t1.elapsed().as_secs_f64() * 1e3;
        self.counters.inference_calls += 1;
        let top_k = pred.top_k.iter().map(|&(c, p)| self.ranked(c, p)).collect();
        let (suggestion, status) = match pred.verdict {
            Verdict::Generatable { class } => (Some(self.ranked(class, pred.probs[class])), Status::Pending),
            Verdict::NotGeneratable => (None, Status::AutoNg),
        };
        self.records.push(SuggestionRecord {
            id: rid,
            design_hash: hash,
            cell,
            example_path: self.sites[si].path.clone(),
            suggestion,
            top_k,
            status,
            resolution: None,
            instance_count: 1,
        });
        self.memo.insert(hash, (pred, rid));
        self.counters.unique_designs_examined = self.memo.len() as u64;
        self.sites[si].record = Some(rid);
        Ok(Step::New(rid))
    }

    fn flatten_site(&mut self, si: usize) -> ExamResult<()> {
        let cell = self.lib.cell(&self.sites[si].cell)?.instances.clone();
        let (t, path) = (self.sites[si].transform, self.sites[si].path.clone());
        self.enqueue_children(&cell, &t, &path);
        Ok(())
    }

    /// Applies a designer decision to a record. Flattening exposes the
    /// children of every examined instance of the design.
    pub fn apply_decision(&mut self, id: usize, action: Action) -> ExamResult<&SuggestionRecord> {
        let r = self.records.get(id).ok_or(ExamError::UnknownRecord(id))?;
        let (status, resolution) = match (r.status, r.resolution, action) {
            (Status::Pending, _, Action::Approve) => (Status::Approved, None),
            (Status::Pending, _, Action::RejectFlatten) => (Status::RejectedFlattened, None),
            (Status::Pending, _, Action::RejectManual) => (Status::RejectedManual, None),
            (Status::AutoNg, None, Action::Flatten | Action::RejectFlatten) => (Status::AutoNg, Some(Resolution::Flattened)),
            (Status::AutoNg, None, Action::Manual | Action::RejectManual) => (Status::AutoNg, Some(Resolution::Manual)),
            (s, res, a) => {
                return Err(ExamError::State(format!("{a:?} on a record with status {s:?} and resolution {res:?}")));
            }
        };
        self.records[id].status = status;
        self.records[id].resolution = resolution;
        self.decisions.push((id, action));
        if self.records[id].flattened() {
            let sites: Vec<usize> = (0..self.sites.len()).filter(|&i| self.sites[i].record == Some(id)).collect();
            for si in sites {
                self.flatten_site(si)?;
            }
        }
        Ok(&self.records[id])
    }

    /// Runs to completion without a designer: generatable verdicts are
    /// approved and not-generatable ones marked manual.
    pub fn auto_examine(&mut self) -> ExamResult<()> {
        loop {
            match self.examine_next()? {
                Step::Done => break,
                Step::Reused(_) => {}
                Step::New(id) => match self.records[id].status {
                    Status::Pending => {
                        self.apply_decision(id, Action::Approve)?;
                    }
                    Status::AutoNg => {
                        self.apply_decision(id, Action::Manual)?;
                    }
                    _ => {}
                },
            }
        }
        Ok(())
    }

    /// Examines every queued instance, leaving decisions open.
    pub fn examine_all(&mut self) -> ExamResult<()> {
        while self.examine_next()? != Step::Done {}
        Ok(())
    }

    pub fn report(&self) -> AssignmentReport {
        let assignments = self
            .sites
            .iter()
            .filter_map(|s| {
                let rid = s.record?;
                let r = &self.records[rid];
                let outcome = match (r.status, r.resolution) {
                    (Status::Approved, _) => {
                        Outcome::Assigned { generator: r.suggestion.as_ref().map(|g| g.generator.clone()).unwrap_or_default() }
                    }
                    (Status::RejectedManual, _) | (Status::AutoNg, Some(Resolution::Manual)) => Outcome::Manual,
                    (Status::RejectedFlattened, _) | (Status::AutoNg, Some(Resolution::Flattened)) => Outcome::Flattened,
                    (Status::SkippedEmpty, _) => Outcome::SkippedEmpty,
                    (Status::Pending, _) | (Status::AutoNg, None) => Outcome::Pending,
                };
                let (rot, mirrored) = s.transform.orientation();
                Some(InstanceAssignment {
                    path: s.path.clone(),
                    cell: s.cell.clone(),
                    design_hash: s.hash,
                    record: rid,
                    origin: s.transform.offset(),
                    orientation: orientation_name(rot, mirrored),
                    outcome,
                })
            })
            .collect();
        AssignmentReport {
            top: self.top.clone(),
            complete: self.is_complete(),
            counters: self.counters,
            timing: self.timing,
            records: self.records.clone(),
            assignments,
        }
    }

    /// Program-body skeleton of the examined top cell. Needs a complete
    /// session.
    pub fn emit_generator_skeleton(&self) -> ExamResult<String> {
        if !self.is_complete() {
            return Err(ExamError::State("session has unexamined instances or open decisions".into()));
        }
        let report = self.report();
        let mut s = String::new();
        let _ = writeln!(s, "block {}", self.top);
        for a in &report.assignments {
            let at = format!("at ({}, {}, {})", a.origin.x, a.origin.y, a.orientation);
            let line = match &a.outcome {
                Outcome::Assigned { generator } => format!("call {generator}(<params>) {at}"),
                Outcome::Manual => format!("todo develop-generator {} {at}", a.cell),
                Outcome::Flattened => format!("inline {} {at}", a.cell),
                Outcome::SkippedEmpty => format!("skip {} {at}", a.cell),
                Outcome::Pending => unreachable!("complete session"),
            };
            let _ = writeln!(s, "  {line}  # {}", a.path);
        }
        let top = self.lib.cell(&self.top)?;
        element_stubs(&mut s, top);
        let _ = writeln!(s, "end");
        let mut flattened: Vec<&str> =
            report.records.iter().filter(|r| r.flattened()).map(|r| r.cell.as_str()).collect();
        flattened.sort_unstable();
        flattened.dedup();
        for name in flattened {
            let _ = writeln!(s, "\nblock {name}");
            element_stubs(&mut s, self.lib.cell(name)?);
            let _ = writeln!(s, "end");
        }
        Ok(s)
    }
}

fn element_stubs(s: &mut String, cell: &crate::layout::Cell) {
    for b in &cell.boundaries {
        let pts: Vec<String> = b.open_vertices().iter().map(|p| format!("({}, {})", p.x, p.y)).collect();
        let _ = writeln!(s, "  boundary {}/{} {}", b.layer.layer, b.layer.datatype, pts.join(" "));
    }
    for p in &cell.paths {
        let pts: Vec<String> = p.centerline.iter().map(|p| format!("({}, {})", p.x, p.y)).collect();
        let _ = writeln!(s, "  path {}/{} width {} {}", p.layer.layer, p.layer.datatype, p.width, pts.join(" "));
    }
}

fn orientation_name(rot: Rotation, mirrored: bool) -> String {
    format!("R{}{}", rot.degrees(), if mirrored { "MX" } else { "" })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Assigned { generator: String },
    Manual,
    Flattened,
    SkippedEmpty,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAssignment {
    pub path: String,
    pub cell: String,
    pub design_hash: DesignHash,
    pub record: usize,
    pub origin: Point,
    pub orientation: String,
    pub outcome: Outcome,
}

/// Per-design records, per-instance outcomes, counters and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentReport {
    pub top: String,
    pub complete: bool,
    pub counters: Counters,
    pub timing: Timing,
    pub records: Vec<SuggestionRecord>,
    pub assignments: Vec<InstanceAssignment>,
}

impl AssignmentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Instance count per outcome kind, in a fixed order.
    pub fn outcome_counts(&self) -> [(&'static str, usize); 5] {
        let count = |f: fn(&Outcome) -> bool| self.assignments.iter().filter(|a| f(&a.outcome)).count();
        [
            ("assigned", count(|o| matches!(o, Outcome::Assigned { .. }))),
            ("manual", count(|o| *o == Outcome::Manual)),
            ("flattened", count(|o| *o == Outcome::Flattened)),
            ("skipped_empty", count(|o| *o == Outcome::SkippedEmpty)),
            ("pending", count(|o| *o == Outcome::Pending)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.counters;
        let _ = writeln!(s, "top: {}{}", self.top, if self.complete { "" } else { " (incomplete)" });
        let _ = writeln!(
            s,
            "instances visited: {}  unique designs: {}  inference calls: {}",
            c.instances_visited, c.unique_designs_examined, c.inference_calls
        );
        let t = &self.timing;
        let _ = writeln!(
            s,
            "preprocess {:.1} ms  inference {:.1} ms  total {:.1} ms",
            t.preprocess_ms, t.inference_ms, t.total_ms
        );
        for (k, n) in self.outcome_counts() {
            let _ = writeln!(s, "{k}: {n}");
        }
        let _ = writeln!(s, "\n{:>4}  {:<24}  {:<20}  {:>6}  {:>9}  status", "id", "cell", "suggestion", "prob", "instances");
        for r in &self.records {
            let (g, p) = r.suggestion.as_ref().map_or(("-".to_string(), "-".to_string()), |g| {
                (g.generator.clone(), format!("{:.3}", g.probability))
            });
            let status = match r.resolution {
                Some(res) => format!("{:?}/{:?}", r.status, res),
                None => format!("{:?}", r.status),
            };
            let _ = writeln!(s, "{:>4}  {:<24}  {:<20}  {:>6}  {:>9}  {status}", r.id, r.cell, g, p, r.instance_count);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Boundary, Cell};
    use crate::raster::layers;

    /// Class 0 for metal1-only designs, NG when metal4 is present.
    struct Stub {
        calls: usize,
    }

    impl Classifier for Stub {
        fn input_size(&self) -> usize {
            32
        }

        fn input_channels(&self) -> usize {
            21
        }

        fn predict(&mut self, pyramids: &[&Pyramid], policy: &DecisionPolicy, registry: &ClassRegistry) -> crate::classifier::ClassifierResult<Vec<Prediction>> {
            self.calls += pyramids.len();
            Ok(pyramids
                .iter()
                .map(|p| {
                    let ng = p.full().channel(8).iter().any(|&v| v > 0.0);
                    let scores = if ng { vec![0.2, 0.1, 0.9] } else { vec![0.9, 0.3, 0.1] };
                    Prediction::from_scores(scores, policy, registry)
                })
                .collect())
        }
    }

    fn lib() -> Library {
        let mut lib = Library::new("t");
        let mut a = Cell::new("A");
        a.boundaries.push(Boundary::rect(layers::metal(1), 0, 0, 100, 100).unwrap());
        let mut b = Cell::new("B");
        b.boundaries.push(Boundary::rect(layers::metal(4), 0, 0, 320, 320).unwrap());
        b.instances.push(Instance::at("A", 0, 0));
        b.instances.push(Instance::at("A", 100, 100));
        let e = Cell::new("E");
        let mut top = Cell::new("TOP");
        top.instances.push(Instance::at("A", 0, 0));
        top.instances.push(Instance::at("A", 1000, 0).arrayed(1, 2, Point::new(0, 300), Point::new(200, 0)));
        top.instances.push(Instance::at("B", 0, 1000));
        top.instances.push(Instance::at("B", 2000, 0).rotated(Rotation::R90));
        top.instances.push(Instance::at("E", 5000, 5000));
        for c in [a, b, e, top] {
            lib.add_cell(c);
        }
        lib
    }

    fn session(stub: &mut Stub) -> ExamSession<&mut Stub> {
        let reg = ClassRegistry::from_generators(&["alpha", "beta"]).unwrap();
        ExamSession::start(lib(), "TOP", stub, DecisionPolicy::default(), reg, RasterConfig::default()).unwrap()
    }

    #[test]
    fn memoizes_by_design_and_flattens() {
        let mut stub = Stub { calls: 0 };
        let mut s = session(&mut stub);
        let steps: Vec<Step> = std::iter::from_fn(|| match s.examine_next().unwrap() {
            Step::Done => None,
            st => Some(st),
        })
        .collect();
        assert_eq!(
            steps,
            vec![Step::New(0), Step::Reused(0), Step::Reused(0), Step::New(1), Step::Reused(1), Step::New(2)]
        );
        assert_eq!(s.counters().inference_calls, 2);
        assert_eq!(s.memo_len(), 2);
        assert_eq!(s.record(0).unwrap().suggestion.as_ref().unwrap().generator, "alpha");
        assert_eq!(s.record(1).unwrap().status, Status::AutoNg);
        assert_eq!(s.record(2).unwrap().status, Status::SkippedEmpty);
        assert!(!s.is_complete());
        assert!(s.emit_generator_skeleton().is_err());

        s.apply_decision(1, Action::Flatten).unwrap();
        s.examine_all().unwrap();
        assert_eq!(s.counters().inference_calls, 2);
        assert_eq!(s.counters().instances_visited, 10);
        assert_eq!(s.record(0).unwrap().instance_count, 7);
        s.apply_decision(0, Action::Approve).unwrap();
        assert!(s.is_complete());

        let report = s.report();
        let child = report.assignments.iter().find(|a| a.path == "TOP/B#3/A#1").unwrap();
        assert_eq!(child.origin, Point::new(1900, 100));
        assert_eq!(child.orientation, "R90");
        assert_eq!(child.outcome, Outcome::Assigned { generator: "alpha".into() });
        let arr = report.assignments.iter().find(|a| a.path == "TOP/A#1@1").unwrap();
        assert_eq!(arr.origin, Point::new(1200, 0));
        let counts: Vec<usize> = report.outcome_counts().iter().map(|c| c.1).collect();
        assert_eq!(counts, vec![7, 0, 2, 1, 0]);

        let sk = s.emit_generator_skeleton().unwrap();
        assert!(sk.contains("call alpha(<params>) at (1200, 0, R0)"), "{sk}");
        assert!(sk.contains("inline B at (2000, 0, R90)"));
        assert!(sk.contains("skip E at (5000, 5000, R0)"));
        assert!(sk.contains("block B\n  boundary 34/0"));
        let back: AssignmentReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert!(report.to_text().contains("inference calls: 2"));
    }

    #[test]
    fn illegal_transitions_are_rejected() {
        let mut stub = Stub { calls: 0 };
        let mut s = session(&mut stub);
        s.examine_all().unwrap();
        assert!(matches!(s.apply_decision(0, Action::Flatten), Err(ExamError::State(_))));
        assert!(matches!(s.apply_decision(1, Action::Approve), Err(ExamError::State(_))));
        assert!(matches!(s.apply_decision(2, Action::Approve), Err(ExamError::State(_))));
        assert!(matches!(s.apply_decision(9, Action::Approve), Err(ExamError::UnknownRecord(9))));
        s.apply_decision(0, Action::RejectManual).unwrap();
        assert!(matches!(s.apply_decision(0, Action::Approve), Err(ExamError::State(_))));
        s.apply_decision(1, Action::Manual).unwrap();
        assert!(matches!(s.apply_decision(1, Action::Flatten), Err(ExamError::State(_))));
        assert!(s.is_complete());
        let sk = s.emit_generator_skeleton().unwrap();
        assert!(sk.contains("todo develop-generator A at (0, 0, R0)"));
        assert_eq!(s.decisions().len(), 2);
    }

    #[test]
    fn auto_examine_settles_everything() {
        let mut stub = Stub { calls: 0 };
        let mut s = session(&mut stub);
        s.auto_examine().unwrap();
        assert!(s.is_complete());
        assert_eq!(s.record(0).unwrap().status, Status::Approved);
        assert_eq!(s.record(1).unwrap().resolution, Some(Resolution::Manual));
        drop(s);
        assert_eq!(stub.calls, 2);
    }

    #[test]
    fn preview_grids() {
        let mut stub = Stub { calls: 0 };
        let mut s = session(&mut stub);
        s.examine_all().unwrap();
        let b = s.record(1).unwrap().design_hash;
        let g = s.preview(&b, 8, 16).unwrap();
        assert_eq!((g.len(), g[0].len()), (16, 16));
        assert!(g.iter().flatten().all(|&v| v == 1.0));
        let m1 = s.preview(&b, 5, 16).unwrap();
        assert!(m1[15][0] > 0.0 && m1[7][7] > 0.0 && m1[0][15] == 0.0 && m1[0][0] == 0.0);
        let e = s.record(2).unwrap().design_hash;
        assert!(s.preview(&e, 0, 4).unwrap().iter().flatten().all(|&v| v == 0.0));
        assert!(s.preview(&b, 21, 4).is_err());
        assert!(matches!(s.preview(&DesignHash([7; 16]), 0, 4), Err(ExamError::UnknownDesign(_))));
    }

    #[test]
    fn empty_top_completes_immediately() {
        let mut stub = Stub { calls: 0 };
        let mut lib = lib();
        lib.add_cell(Cell::new("EMPTY"));
        let reg = ClassRegistry::from_generators(&["alpha", "beta"]).unwrap();
        let mut s = ExamSession::start(lib, "EMPTY", &mut stub, DecisionPolicy::default(), reg, RasterConfig::default()).unwrap();
        assert_eq!(s.counters(), Counters::default());
        assert!(s.is_complete());
        assert_eq!(s.examine_next().unwrap(), Step::Done);
        let r = s.report();
        assert!(r.records.is_empty() && r.assignments.is_empty());
        assert_eq!(s.emit_generator_skeleton().unwrap(), "block EMPTY\nend\n");
    }

    #[test]
    fn start_errors() {
        let mut stub = Stub { calls: 0 };
        let reg = ClassRegistry::from_generators(&["alpha", "beta"]).unwrap();
        let r = ExamSession::start(lib(), "NOPE", &mut stub, DecisionPolicy::default(), reg, RasterConfig::default());
        assert!(matches!(r, Err(ExamError::Layout(LayoutError::NotFound(_)))));
    }
}
