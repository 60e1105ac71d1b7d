// SPDX-License-Identifier: Apache-2.0

//! Layout hierarchy model.
//!
//! A [`Library`] holds named [`Cell`]s, each with boundaries, paths and
//! placements of other cells. Coordinates are integer database units (dbu).
//! The placement convention follows GDSII: reflect about the x axis first,
//! then rotate counter-clockwise, then translate.

mod geom;
mod gds;
mod hash;
mod hierarchy;

pub use geom::{Point, Rect, Rotation, Transform};
pub use gds::{parse_gdsii, parse_gdsii_report, write_gdsii, GdsRecordType};
pub use hash::{design_hash, design_hashes, DesignHash};
pub use hierarchy::{hierarchy_order, Visit};

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

/// Errors from layout parsing, writing and manipulation.
#[derive(Debug, thiserror::Error)]
pub enum LayoutError {
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unresolved cell reference {0:?}")]
    Link(String),
    #[error("cyclic cell reference: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("cell {0:?} not found")]
    NotFound(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("instance index {index} out of range for cell {cell:?}")]
    BadInstance { cell: String, index: usize },
}

pub type LayoutResult<T> = Result<T, LayoutError>;

/// A GDSII (layer, datatype) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LayerKey {
    pub layer: u8,
    pub datatype: u8,
}

impl LayerKey {
    pub const fn new(layer: u8, datatype: u8) -> Self {
        Self { layer, datatype }
    }
}

impl std::fmt::Display for LayerKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.layer, self.datatype)
    }
}

/// A closed polygon on one layer. The vertex list repeats the first vertex
/// at the end, as in the GDSII XY record.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Boundary {
    pub layer: LayerKey,
    pub vertices: Vec<Point>,
}

impl Boundary {
    /// Builds a boundary, closing the vertex loop if needed and checking it
    /// has at least three distinct vertices and nonzero area.
    pub fn new(layer: LayerKey, mut vertices: Vec<Point>) -> LayoutResult<Self> {
        if vertices.first() != vertices.last() || vertices.len() == 1 {
            if let Some(&first) = vertices.first() {
                vertices.push(first);
            }
        }
        let distinct: BTreeSet<Point> = vertices.iter().copied().collect();
        if distinct.len() < 3 {
            return Err(LayoutError::Geometry(format!(
                "boundary on {layer} needs at least 3 distinct vertices"
            )));
        }
        let b = Self { layer, vertices };
        if b.twice_area() == 0 {
            return Err(LayoutError::Geometry(format!("boundary on {layer} has zero area")));
        }
        Ok(b)
    }

    /// Axis-aligned rectangle with corners `(x0, y0)` and `(x1, y1)`.
    pub fn rect(layer: LayerKey, x0: i64, y0: i64, x1: i64, y1: i64) -> LayoutResult<Self> {
        let (x0, x1) = (x0.min(x1), x0.max(x1));
        let (y0, y1) = (y0.min(y1), y0.max(y1));
        Self::new(
            layer,
            vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
                Point::new(x0, y0),
            ],
        )
    }

    /// Vertices without the closing repeat.
    pub fn open_vertices(&self) -> &[Point] {
        match self.vertices.split_last() {
            Some((last, rest)) if Some(last) == self.vertices.first() => rest,
            _ => &self.vertices,
        }
    }

    /// Twice the absolute polygon area (shoelace), exact in integers.
    pub fn twice_area(&self) -> i128 {
        let v = self.open_vertices();
        let n = v.len();
        let mut acc: i128 = 0;
        for i in 0..n {
            let a = v[i];
            let b = v[(i + 1) % n];
            acc += a.x as i128 * b.y as i128 - b.x as i128 * a.y as i128;
        }
        acc.abs()
    }

    pub fn bbox(&self) -> Rect {
        Rect::enclosing(self.vertices.iter().copied()).expect("boundary has vertices")
    }

    /// True when every edge is horizontal or vertical.
    pub fn is_manhattan(&self) -> bool {
        self.vertices.windows(2).all(|w| w[0].x == w[1].x || w[0].y == w[1].y)
    }

    pub fn transformed(&self, t: &Transform) -> Self {
        Self {
            layer: self.layer,
            vertices: self.vertices.iter().map(|p| t.apply(*p)).collect(),
        }
    }
}

/// GDSII path end treatment (PATHTYPE 0, 1, 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathEnd {
    Flush,
    Round,
    Extended,
}

impl PathEnd {
    pub fn code(self) -> i16 {
        match self {
            PathEnd::Flush => 0,
            PathEnd::Round => 1,
            PathEnd::Extended => 2,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            0 => Some(PathEnd::Flush),
            1 => Some(PathEnd::Round),
            2 => Some(PathEnd::Extended),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub layer: LayerKey,
    pub width: i64,
    pub centerline: Vec<Point>,
    pub end_style: PathEnd,
}

impl Path {
    pub fn new(layer: LayerKey, width: i64, centerline: Vec<Point>, end_style: PathEnd) -> LayoutResult<Self> {
        if width <= 0 {
            return Err(LayoutError::Geometry(format!("path on {layer} has non-positive width {width}")));
        }
        if centerline.len() < 2 {
            return Err(LayoutError::Geometry(format!("path on {layer} needs at least 2 points")));
        }
        Ok(Self { layer, width, centerline, end_style })
    }

    /// Conservative drawn extent: centerline box grown by half the width on
    /// every side (exact for flush ends only along the run direction).
    pub fn drawn_bbox(&self) -> Rect {
        let bb = Rect::enclosing(self.centerline.iter().copied()).expect("path has points");
        let half = (self.width + 1) / 2;
        let v = &self.centerline;
        let manhattan = v.windows(2).all(|w| w[0].x == w[1].x || w[0].y == w[1].y);
        if !manhattan || self.end_style != PathEnd::Flush {
            return bb.grown(half);
        }
        // Flush ends: the path stops at its end points along the run axis.
        let mut out: Option<Rect> = None;
        for seg in self.segment_rects_x2() {
            let r = Rect::new(
                seg.x0.div_euclid(2),
                seg.y0.div_euclid(2),
                (seg.x1 + 1).div_euclid(2),
                (seg.y1 + 1).div_euclid(2),
            );
            out = Some(match out {
                Some(o) => o.union(&r),
                None => r,
            });
        }
        out.unwrap_or(bb)
    }

    /// Rectangles covering a Manhattan path, in doubled coordinates so that
    /// odd widths stay exact. Interior joints are extended by half the width;
    /// the two ends follow the end style (round ends add no extension here,
    /// callers add the end discs).
    pub(crate) fn segment_rects_x2(&self) -> Vec<Rect> {
        let w = self.width;
        let pts: Vec<Point> = {
            let mut v: Vec<Point> = Vec::with_capacity(self.centerline.len());
            for p in &self.centerline {
                if v.last() != Some(p) {
                    v.push(*p);
                }
            }
            v
        };
        let nseg = pts.len().saturating_sub(1);
        let end_ext = match self.end_style {
            PathEnd::Extended => w,
            _ => 0,
        };
        let mut out = Vec::with_capacity(nseg);
        for i in 0..nseg {
            let (a, b) = (pts[i], pts[i + 1]);
            let ext_a = if i == 0 { end_ext } else { w };
            let ext_b = if i + 1 == nseg { end_ext } else { w };
            let (ax, ay, bx, by) = (2 * a.x, 2 * a.y, 2 * b.x, 2 * b.y);
            let r = if a.y == b.y {
                let (lo, hi, elo, ehi) = if ax <= bx { (ax, bx, ext_a, ext_b) } else { (bx, ax, ext_b, ext_a) };
                Rect::new(lo - elo, ay - w, hi + ehi, ay + w)
            } else {
                let (lo, hi, elo, ehi) = if ay <= by { (ay, by, ext_a, ext_b) } else { (by, ay, ext_b, ext_a) };
                Rect::new(ax - w, lo - elo, ax + w, hi + ehi)
            };
            out.push(r);
        }
        out
    }

    pub fn is_manhattan(&self) -> bool {
        self.centerline.windows(2).all(|w| w[0].x == w[1].x || w[0].y == w[1].y)
    }

    pub fn transformed(&self, t: &Transform) -> Self {
        Self {
            layer: self.layer,
            width: self.width,
            centerline: self.centerline.iter().map(|p| t.apply(*p)).collect(),
            end_style: self.end_style,
        }
    }
}

/// Regular placement lattice of an array reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArraySpec {
    pub rows: u32,
    pub cols: u32,
    /// Displacement between consecutive rows.
    pub row_pitch: Point,
    /// Displacement between consecutive columns.
    pub col_pitch: Point,
}

/// A placement of another cell (SREF, or AREF when `array` is set).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instance {
    pub ref_name: String,
    pub origin: Point,
    pub rotation: Rotation,
    pub mirrored_x: bool,
    pub array: Option<ArraySpec>,
}

impl Instance {
    pub fn at(ref_name: impl Into<String>, x: i64, y: i64) -> Self {
        Self {
            ref_name: ref_name.into(),
            origin: Point::new(x, y),
            rotation: Rotation::R0,
            mirrored_x: false,
            array: None,
        }
    }

    pub fn rotated(mut self, rotation: Rotation) -> Self {
        self.rotation = rotation;
        self
    }

    pub fn mirrored(mut self) -> Self {
        self.mirrored_x = true;
        self
    }

    pub fn arrayed(mut self, rows: u32, cols: u32, row_pitch: Point, col_pitch: Point) -> Self {
        self.array = Some(ArraySpec { rows, cols, row_pitch, col_pitch });
        self
    }

    /// Transform of a single (non-array) placement at this instance's origin.
    pub fn transform(&self) -> Transform {
        Transform::new(self.rotation, self.mirrored_x, self.origin)
    }

    /// Number of single placements this instance stands for.
    pub fn placement_count(&self) -> usize {
        self.array.map_or(1, |a| a.rows as usize * a.cols as usize)
    }

    /// Expands an array into its `rows * cols` single placements, row-major.
    /// A plain reference expands to itself.
    pub fn expand(&self) -> Vec<Instance> {
        let Some(a) = self.array else {
            return vec![self.clone()];
        };
        let mut out = Vec::with_capacity(a.rows as usize * a.cols as usize);
        for i in 0..a.rows as i64 {
            for j in 0..a.cols as i64 {
                out.push(Instance {
                    ref_name: self.ref_name.clone(),
                    origin: Point::new(
                        self.origin.x + i * a.row_pitch.x + j * a.col_pitch.x,
                        self.origin.y + i * a.row_pitch.y + j * a.col_pitch.y,
                    ),
                    rotation: self.rotation,
                    mirrored_x: self.mirrored_x,
                    array: None,
                });
            }
        }
        out
    }

    /// Composes `outer` after this instance: the result places the same cell
    /// in the coordinate frame that `outer` maps into.
    pub fn composed(&self, outer: &Transform) -> Instance {
        let t = outer.then_after(&self.transform());
        let (rotation, mirrored_x) = t.orientation();
        Instance {
            ref_name: self.ref_name.clone(),
            origin: t.offset(),
            rotation,
            mirrored_x,
            array: self.array.map(|a| ArraySpec {
                rows: a.rows,
                cols: a.cols,
                row_pitch: outer.apply_vector(a.row_pitch),
                col_pitch: outer.apply_vector(a.col_pitch),
            }),
        }
    }
}

/// Free function form of [`Instance::expand`].
pub fn expand_instance(inst: &Instance) -> Vec<Instance> {
    inst.expand()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Cell {
    pub name: String,
    pub boundaries: Vec<Boundary>,
    pub paths: Vec<Path>,
    pub instances: Vec<Instance>,
}

impl Cell {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty() && self.paths.is_empty() && self.instances.is_empty()
    }

    /// Box over this cell's own boundaries and paths, ignoring instances.
    pub fn local_bbox(&self) -> Option<Rect> {
        let b = self.boundaries.iter().map(Boundary::bbox);
        let p = self.paths.iter().map(Path::drawn_bbox);
        b.chain(p).reduce(|a, r| a.union(&r))
    }
}

/// Physical size of one database unit, as stored in the UNITS record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Units {
    pub user_per_dbu: f64,
    pub meters_per_dbu: f64,
}

impl Default for Units {
    fn default() -> Self {
        Self { user_per_dbu: 1e-3, meters_per_dbu: 1e-9 }
    }
}

impl Units {
    /// Database units per nanometre as an exact ratio (1 for 1 nm grids).
    pub fn dbu_per_nm(&self) -> Ratio<i64> {
        let nm_per_dbu = self.meters_per_dbu * 1e9;
        let rounded = (nm_per_dbu * 1e6).round();
        if (rounded - nm_per_dbu * 1e6).abs() < 1e-3 && rounded > 0.0 {
            return Ratio::new(1_000_000, rounded as i64);
        }
        Ratio::approximate_float(1.0 / nm_per_dbu).unwrap_or_else(|| Ratio::from_integer(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Library {
    pub name: String,
    pub units: Units,
    /// BGNLIB modification/access timestamp, reused for every BGNSTR.
    pub timestamp: [i16; 12],
    pub cells: BTreeMap<String, Cell>,
}

pub const DEFAULT_TIMESTAMP: [i16; 12] = [2024, 1, 1, 0, 0, 0, 2024, 1, 1, 0, 0, 0];

impl Library {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            units: Units::default(),
            timestamp: DEFAULT_TIMESTAMP,
            cells: BTreeMap::new(),
        }
    }

    pub fn add_cell(&mut self, cell: Cell) {
        self.cells.insert(cell.name.clone(), cell);
    }

    pub fn cell(&self, name: &str) -> LayoutResult<&Cell> {
        self.cells.get(name).ok_or_else(|| LayoutError::NotFound(name.to_string()))
    }

    pub fn dbu_per_nm(&self) -> Ratio<i64> {
        self.units.dbu_per_nm()
    }

    /// Cells not referenced by any other cell, in name order.
    pub fn top_candidates(&self) -> Vec<String> {
        let referenced: BTreeSet<&str> = self
            .cells
            .values()
            .flat_map(|c| c.instances.iter().map(|i| i.ref_name.as_str()))
            .collect();
        self.cells.keys().filter(|n| !referenced.contains(n.as_str())).cloned().collect()
    }

    /// Checks that every reference resolves and the reference graph is acyclic.
    pub fn validate(&self) -> LayoutResult<()> {
        for cell in self.cells.values() {
            for inst in &cell.instances {
                if !self.cells.contains_key(&inst.ref_name) {
                    return Err(LayoutError::Link(inst.ref_name.clone()));
                }
                if let Some(a) = inst.array {
                    if a.rows == 0 || a.cols == 0 {
                        return Err(LayoutError::Range(format!(
                            "array of {} has zero rows or columns",
                            inst.ref_name
                        )));
                    }
                }
            }
        }
        // Iterative three-colour DFS.
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let names: Vec<&String> = self.cells.keys().collect();
        let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut marks = vec![Mark::New; names.len()];
        for start in 0..names.len() {
            if marks[start] != Mark::New {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
            marks[start] = Mark::Active;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                let cell = &self.cells[names[node]];
                if *next < cell.instances.len() {
                    let child = index[cell.instances[*next].ref_name.as_str()];
                    *next += 1;
                    match marks[child] {
                        Mark::New => {
                            marks[child] = Mark::Active;
                            stack.push((child, 0));
                        }
                        Mark::Active => {
                            let mut path: Vec<String> = stack.iter().map(|(n, _)| names[*n].clone()).collect();
                            let pos = path.iter().position(|n| n == names[child]).unwrap_or(0);
                            path.drain(..pos);
                            path.push(names[child].clone());
                            return Err(LayoutError::Cycle(path));
                        }
                        Mark::Done => {}
                    }
                } else {
                    marks[node] = Mark::Done;
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    /// Tight box over all geometry of `name`, including placed children.
    /// `None` when the cell (transitively) holds no geometry.
    pub fn bounding_box(&self, name: &str) -> LayoutResult<Option<Rect>> {
        let mut memo: BTreeMap<String, Option<Rect>> = BTreeMap::new();
        self.bbox_memo(name, &mut memo)
    }

    fn bbox_memo(&self, name: &str, memo: &mut BTreeMap<String, Option<Rect>>) -> LayoutResult<Option<Rect>> {
        if let Some(r) = memo.get(name) {
            return Ok(*r);
        }
        let cell = self.cells.get(name).ok_or_else(|| LayoutError::Link(name.to_string()))?;
        let mut acc = cell.local_bbox();
        for inst in &cell.instances {
            let Some(child) = self.bbox_memo(&inst.ref_name, memo)? else {
                continue;
            };
            for placed in inst.expand() {
                let r = placed.transform().apply_rect(&child);
                acc = Some(acc.map_or(r, |a| a.union(&r)));
            }
        }
        memo.insert(name.to_string(), acc);
        Ok(acc)
    }

    /// Replaces instance `target` of `cell` by the transformed contents of the
    /// referenced cell. The child's own instances are re-parented with composed
    /// transforms; grandchildren are not flattened.
    pub fn flatten_one_level(&self, cell: &Cell, target: usize) -> LayoutResult<Cell> {
        let inst = cell
            .instances
            .get(target)
            .ok_or_else(|| LayoutError::BadInstance { cell: cell.name.clone(), index: target })?;
        let child = self.cells.get(&inst.ref_name).ok_or_else(|| LayoutError::Link(inst.ref_name.clone()))?;
        let mut out = cell.clone();
        out.instances.remove(target);
        for placed in inst.expand() {
            let t = placed.transform();
            out.boundaries.extend(child.boundaries.iter().map(|b| b.transformed(&t)));
            out.paths.extend(child.paths.iter().map(|p| p.transformed(&t)));
            out.instances.extend(child.instances.iter().map(|g| g.composed(&t)));
        }
        Ok(out)
    }

    /// Fully flattened copy of `name`: all geometry in the cell's own frame,
    /// no remaining instances.
    pub fn flatten_all(&self, name: &str) -> LayoutResult<Cell> {
        let cell = self.cells.get(name).ok_or_else(|| LayoutError::Link(name.to_string()))?;
        let mut out = Cell::new(name);
        self.flatten_into(cell, &Transform::identity(), &mut out)?;
        Ok(out)
    }

    fn flatten_into(&self, cell: &Cell, t: &Transform, out: &mut Cell) -> LayoutResult<()> {
        out.boundaries.extend(cell.boundaries.iter().map(|b| b.transformed(t)));
        out.paths.extend(cell.paths.iter().map(|p| p.transformed(t)));
        for inst in &cell.instances {
            let child = self.cells.get(&inst.ref_name).ok_or_else(|| LayoutError::Link(inst.ref_name.clone()))?;
            for placed in inst.expand() {
                let ct = t.then_after(&placed.transform());
                self.flatten_into(child, &ct, out)?;
            }
        }
        Ok(())
    }
}

/// Free function form of [`Library::flatten_one_level`].
pub fn flatten_one_level(cell: &Cell, target: usize, lib: &Library) -> LayoutResult<Cell> {
    lib.flatten_one_level(cell, target)
}

/// Free function form of [`Library::bounding_box`] for a cell value that may
/// not be stored in `lib` itself (its children must be).
pub fn bounding_box(cell: &Cell, lib: &Library) -> LayoutResult<Option<Rect>> {
    let mut acc = cell.local_bbox();
    for inst in &cell.instances {
        let Some(child) = lib.bounding_box(&inst.ref_name)? else {
            continue;
        };
        for placed in inst.expand() {
            let r = placed.transform().apply_rect(&child);
            acc = Some(acc.map_or(r, |a| a.union(&r)));
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    const M1: LayerKey = LayerKey::new(31, 0);

    fn lib_with(cells: Vec<Cell>) -> Library {
        let mut lib = Library::new("test");
        for c in cells {
            lib.add_cell(c);
        }
        lib
    }

    fn rect_cell(name: &str, x0: i64, y0: i64, x1: i64, y1: i64) -> Cell {
        let mut c = Cell::new(name);
        c.boundaries.push(Boundary::rect(M1, x0, y0, x1, y1).unwrap());
        c
    }

    #[test]
    fn boundary_closes_and_rejects_degenerate() {
        let b = Boundary::new(M1, vec![Point::new(0, 0), Point::new(10, 0), Point::new(10, 10)]).unwrap();
        assert_eq!(b.vertices.len(), 4);
        assert_eq!(b.vertices[0], b.vertices[3]);
        assert!(Boundary::new(M1, vec![Point::new(0, 0), Point::new(10, 0), Point::new(20, 0)]).is_err());
        assert!(Boundary::new(M1, vec![Point::new(0, 0), Point::new(10, 0)]).is_err());
    }

    #[test]
    fn path_rejects_bad_width() {
        assert!(Path::new(M1, 0, vec![Point::new(0, 0), Point::new(10, 0)], PathEnd::Flush).is_err());
        assert!(Path::new(M1, 5, vec![Point::new(0, 0)], PathEnd::Flush).is_err());
    }

    #[test]
    fn bbox_single_rect() {
        let lib = lib_with(vec![rect_cell("A", 0, 0, 100, 50)]);
        assert_eq!(lib.bounding_box("A").unwrap(), Some(Rect::new(0, 0, 100, 50)));
    }

    #[test]
    fn bbox_rotated_instance() {
        let mut top = Cell::new("TOP");
        top.instances.push(Instance::at("A", 200, 0).rotated(Rotation::R90));
        let lib = lib_with(vec![rect_cell("A", 0, 0, 100, 50), top]);
        assert_eq!(lib.bounding_box("TOP").unwrap(), Some(Rect::new(150, 0, 200, 100)));
    }

    #[test]
    fn bbox_empty_cell_is_zero_extent() {
        let lib = lib_with(vec![Cell::new("E")]);
        assert_eq!(lib.bounding_box("E").unwrap(), None);
    }

    #[test]
    fn expand_counts_and_origins() {
        let a = Instance::at("X", 0, 0).arrayed(2, 3, Point::new(0, 10), Point::new(10, 0));
        assert_eq!(a.expand().len(), 6);

        let one = Instance::at("X", 7, 8).arrayed(1, 1, Point::new(0, 999), Point::new(999, 0));
        let e = one.expand();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].origin, Point::new(7, 8));

        let col = Instance::at("X", 0, 0).arrayed(3, 1, Point::new(0, 500), Point::new(0, 0));
        let ys: Vec<i64> = col.expand().iter().map(|i| i.origin.y).collect();
        assert_eq!(ys, vec![0, 500, 1000]);
    }

    #[test]
    fn flatten_translation_only() {
        let mut top = Cell::new("TOP");
        top.instances.push(Instance::at("C", 100, 100));
        let lib = lib_with(vec![rect_cell("C", 0, 0, 10, 10), top.clone()]);
        let flat = lib.flatten_one_level(&top, 0).unwrap();
        assert!(flat.instances.is_empty());
        assert_eq!(flat.boundaries.len(), 1);
        assert_eq!(flat.boundaries[0].bbox(), Rect::new(100, 100, 110, 110));
    }

    #[test]
    fn flatten_keeps_grandchildren_with_composed_origin() {
        let mut child = Cell::new("C");
        child.instances.push(Instance::at("G", 5, 7));
        let mut top = Cell::new("TOP");
        top.instances.push(Instance::at("C", 100, 200));
        let lib = lib_with(vec![rect_cell("G", 0, 0, 1, 1), child, top.clone()]);
        let flat = lib.flatten_one_level(&top, 0).unwrap();
        assert_eq!(flat.instances.len(), 1);
        assert_eq!(flat.instances[0].ref_name, "G");
        assert_eq!(flat.instances[0].origin, Point::new(105, 207));
        assert!(flat.boundaries.is_empty());
    }

    #[test]
    fn flatten_mirror_convention() {
        let mut top = Cell::new("TOP");
        top.instances.push(Instance::at("C", 0, 0).mirrored());
        let lib = lib_with(vec![rect_cell("C", 0, 0, 10, 20), top.clone()]);
        let flat = lib.flatten_one_level(&top, 0).unwrap();
        assert_eq!(flat.boundaries[0].bbox(), Rect::new(0, -20, 10, 0));
    }

    #[test]
    fn flatten_composes_rotation_and_mirror_for_grandchildren() {
        // Grandchild placed rotated inside a mirrored child; the flattened
        // placement must land the geometry where full flattening puts it.
        let mut child = Cell::new("C");
        child.instances.push(Instance::at("G", 30, 10).rotated(Rotation::R90));
        child.instances.push(
            Instance::at("G", 0, 0)
                .rotated(Rotation::R180)
                .arrayed(2, 2, Point::new(0, 100), Point::new(50, 0)),
        );
        let mut top = Cell::new("TOP");
        top.instances.push(Instance::at("C", 1000, 500).rotated(Rotation::R270).mirrored());
        let lib = lib_with(vec![rect_cell("G", 0, 0, 7, 3), child, top.clone()]);
        let once = lib.flatten_one_level(&top, 0).unwrap();
        let mut lib2 = lib.clone();
        lib2.add_cell(Cell { name: "ONCE".into(), ..once });
        let mut a: Vec<Rect> = lib.flatten_all("TOP").unwrap().boundaries.iter().map(|b| b.bbox()).collect();
        let mut b: Vec<Rect> = lib2.flatten_all("ONCE").unwrap().boundaries.iter().map(|b| b.bbox()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn flatten_unresolved_is_link_error() {
        let mut top = Cell::new("TOP");
        top.instances.push(Instance::at("MISSING", 0, 0));
        let lib = lib_with(vec![top.clone()]);
        assert!(matches!(lib.flatten_one_level(&top, 0), Err(LayoutError::Link(n)) if n == "MISSING"));
    }

    #[test]
    fn validate_detects_cycles_and_links() {
        let mut a = Cell::new("A");
        a.instances.push(Instance::at("B", 0, 0));
        let mut b = Cell::new("B");
        b.instances.push(Instance::at("A", 0, 0));
        let lib = lib_with(vec![a.clone(), b]);
        assert!(matches!(lib.validate(), Err(LayoutError::Cycle(_))));
        let lib = lib_with(vec![a]);
        assert!(matches!(lib.validate(), Err(LayoutError::Link(n)) if n == "B"));
    }

    #[test]
    fn top_candidates_excludes_referenced() {
        let mut top = Cell::new("TOP");
        top.instances.push(Instance::at("A", 0, 0));
        let lib = lib_with(vec![rect_cell("A", 0, 0, 1, 1), top, rect_cell("Z", 0, 0, 1, 1)]);
        assert_eq!(lib.top_candidates(), vec!["TOP".to_string(), "Z".to_string()]);
    }

    #[test]
    fn units_ratio() {
        assert_eq!(Units::default().dbu_per_nm(), Ratio::from_integer(1));
        let u = Units { user_per_dbu: 1e-4, meters_per_dbu: 1e-10 };
        assert_eq!(u.dbu_per_nm(), Ratio::from_integer(10));
        let u = Units { user_per_dbu: 1e-2, meters_per_dbu: 5e-9 };
        assert_eq!(u.dbu_per_nm(), Ratio::new(1, 5));
    }

    #[test]
    fn path_drawn_bbox_flush_and_extended() {
        let p = Path::new(M1, 10, vec![Point::new(0, 0), Point::new(100, 0)], PathEnd::Flush).unwrap();
        assert_eq!(p.drawn_bbox(), Rect::new(0, -5, 100, 5));
        let p = Path::new(M1, 10, vec![Point::new(0, 0), Point::new(100, 0)], PathEnd::Extended).unwrap();
        assert_eq!(p.drawn_bbox(), Rect::new(-5, -5, 105, 5));
    }
}
