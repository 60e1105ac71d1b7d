// SPDX-License-Identifier: Apache-2.0

//! Layout rasterization into per-layer coverage channels.
//!
//! A flattened cell is split by physical layer into channels, drawn on a grid
//! anchored at the lower-left corner of its mapped geometry, and resized to a
//! fixed square input by zero padding or average pooling. Row 0 of every
//! channel is the bottom row of the layout.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path as FsPath;

use num_rational::Ratio;

use crate::layout::{Boundary, Cell, LayerKey, Path, PathEnd, Point, Rect};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("cell {0:?} has no mapped geometry to rasterize")]
    EmptyRaster(String),
    #[error("cell {0:?} still holds instances; flatten it before rasterizing")]
    NotFlat(String),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("channel map line {line}: {message}")]
    ChannelMap { line: usize, message: String },
    #[error("invalid raster config: {0}")]
    Config(String),
    #[error("stack file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type RasterResult<T> = Result<T, RasterError>;

/// Layer keys of the built-in 21-channel stand-in technology.
pub mod layers {
    use crate::layout::LayerKey;

    pub const NWELL: LayerKey = LayerKey::new(1, 0);
    pub const NPLUS: LayerKey = LayerKey::new(2, 0);
    pub const PPLUS: LayerKey = LayerKey::new(3, 0);
    pub const ACTIVE: LayerKey = LayerKey::new(6, 0);
    pub const POLY: LayerKey = LayerKey::new(17, 0);
    pub const CONTACT: LayerKey = LayerKey::new(25, 0);
    pub const METAL_GATE: LayerKey = LayerKey::new(30, 0);
    pub const PAD: LayerKey = LayerKey::new(70, 0);

    /// Metal `level` in 1..=8.
    pub const fn metal(level: u8) -> LayerKey {
        LayerKey::new(30 + level, 0)
    }

    /// Via between metal `level` and `level + 1`, `level` in 1..=7.
    pub const fn via(level: u8) -> LayerKey {
        LayerKey::new(50 + level, 0)
    }
}

/// Assignment of layer keys to input channels. Several keys may share one
/// channel; keys without an entry are reported when met.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerChannelMap {
    entries: Vec<(LayerKey, usize, String)>,
    channel_count: usize,
    lookup: HashMap<LayerKey, usize>,
}

impl LayerChannelMap {
    pub fn new(entries: Vec<(LayerKey, usize, String)>, channel_count: usize) -> RasterResult<Self> {
        let mut lookup = HashMap::new();
        for (i, (key, ch, _)) in entries.iter().enumerate() {
            if *ch >= channel_count {
                return Err(RasterError::ChannelMap {
                    line: i + 1,
                    message: format!("channel {ch} >= channel count {channel_count}"),
                });
            }
            if lookup.insert(*key, *ch).is_some() {
                return Err(RasterError::ChannelMap { line: i + 1, message: format!("layer {key} mapped twice") });
            }
        }
        Ok(Self { entries, channel_count, lookup })
    }

    /// 21 channels: well, implant, active, gate, contact, metal1-8, via1-7, pad.
    pub fn default_21() -> Self {
        use layers::*;
        let mut e: Vec<(LayerKey, usize, String)> = vec![
            (NWELL, 0, "well".into()),
            (NPLUS, 1, "implant".into()),
            (PPLUS, 1, "implant".into()),
            (ACTIVE, 2, "active".into()),
            (POLY, 3, "gate".into()),
            (METAL_GATE, 3, "gate".into()),
            (CONTACT, 4, "contact".into()),
        ];
        for m in 1..=8u8 {
            e.push((metal(m), 4 + m as usize, format!("metal{m}")));
        }
        for v in 1..=7u8 {
            e.push((via(v), 12 + v as usize, format!("via{v}")));
        }
        e.push((PAD, 20, "pad".into()));
        Self::new(e, 21).expect("built-in table is consistent")
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn channel_of(&self, key: LayerKey) -> Option<usize> {
        self.lookup.get(&key).copied()
    }

    pub fn entries(&self) -> &[(LayerKey, usize, String)] {
        &self.entries
    }

    /// Distinct mapped layer keys in table order.
    pub fn keys(&self) -> Vec<LayerKey> {
        self.entries.iter().map(|e| e.0).collect()
    }

    /// Parses `layer,datatype,channel,label` lines; `#` starts a comment.
    /// The channel count is one more than the largest channel index.
    pub fn parse(text: &str) -> RasterResult<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| RasterError::ChannelMap { line: i + 1, message: m };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            }
            let layer: u8 = fields[0].parse().map_err(|_| err(format!("bad layer {:?}", fields[0])))?;
            let datatype: u8 = fields[1].parse().map_err(|_| err(format!("bad datatype {:?}", fields[1])))?;
            let channel: usize = fields[2].parse().map_err(|_| err(format!("bad channel {:?}", fields[2])))?;
            entries.push((LayerKey::new(layer, datatype), channel, fields[3].to_string()));
        }
        let count = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        Self::new(entries, count)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# layer,datatype,channel,label\n");
        for (k, ch, label) in &self.entries {
            s.push_str(&format!("{},{},{},{}\n", k.layer, k.datatype, ch, label));
        }
        s
    }
}

impl Default for LayerChannelMap {
    fn default() -> Self {
        Self::default_21()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterConfig {
    pub pixel_pitch_nm: i64,
    pub target_size: usize,
    pub channel_map: LayerChannelMap,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { pixel_pitch_nm: 10, target_size: 256, channel_map: LayerChannelMap::default_21() }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> RasterResult<()> {
        if self.pixel_pitch_nm <= 0 {
            return Err(RasterError::Config(format!("pixel pitch {} must be positive", self.pixel_pitch_nm)));
        }
        if !self.target_size.is_power_of_two() {
            return Err(RasterError::Config(format!("target size {} is not a power of two", self.target_size)));
        }
        Ok(())
    }
}

/// Dense `C x H x W` stack of coverage values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

const STACK_MAGIC: &[u8; 4] = b"LTG1";

impl ChannelStack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> RasterResult<Self> {
        if data.len() != channels * height * width {
            return Err(RasterError::Dim(format!(
                "{} values for a {channels}x{height}x{width} stack",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Zero-pads on the top and right up to `height x width`.
    pub fn padded(&self, height: usize, width: usize) -> ChannelStack {
        assert!(height >= self.height && width >= self.width);
        let mut out = ChannelStack::zeros(self.channels, height, width);
        for c in 0..self.channels {
            for y in 0..self.height {
                let src = &self.data[(c * self.height + y) * self.width..][..self.width];
                out.data[(c * height + y) * width..][..self.width].copy_from_slice(src);
            }
        }
        out
    }

    /// Non-overlapping `k x k` average pooling; both sides must divide by `k`.
    pub fn avg_pool(&self, k: usize) -> RasterResult<ChannelStack> {
        if k == 0 || !self.height.is_multiple_of(k) || !self.width.is_multiple_of(k) {
            return Err(RasterError::Dim(format!(
                "{}x{} is not divisible into {k}x{k} windows",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height / k, self.width / k);
        let mut out = ChannelStack::zeros(self.channels, h, w);
        let inv = 1.0 / (k * k) as f32;
        for c in 0..self.channels {
            for y in 0..self.height {
                let row = &self.data[(c * self.height + y) * self.width..][..self.width];
                let orow = &mut out.data[(c * h + y / k) * w..][..w];
                for (x, &v) in row.iter().enumerate() {
                    orow[x / k] += v;
                }
            }
        }
        for v in &mut out.data {
            *v *= inv;
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(STACK_MAGIC)?;
        w.write_all(&[3u8])?;
        for d in [self.channels, self.height, self.width] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> RasterResult<ChannelStack> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STACK_MAGIC {
            return Err(RasterError::Format(format!("bad magic {magic:?}")));
        }
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        if rank[0] != 3 {
            return Err(RasterError::Format(format!("expected rank 3, found {}", rank[0])));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        ChannelStack::from_vec(dims[0], dims[1], dims[2], data)
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> RasterResult<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> RasterResult<ChannelStack> {
        let f = std::fs::File::open(path)?;
        ChannelStack::read_from(std::io::BufReader::new(f))
    }
}

/// Geometry of a flattened cell split by channel.
#[derive(Debug, Clone, Default)]
pub struct ChannelGeometry {
    pub boundaries: Vec<Vec<Boundary>>,
    pub paths: Vec<Vec<Path>>,
    /// Layer keys met in the cell that the channel map does not cover.
    pub unmapped: BTreeSet<LayerKey>,
}

impl ChannelGeometry {
    pub fn channel_count(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.iter().all(Vec::is_empty) && self.paths.iter().all(Vec::is_empty)
    }
}

/// Splits the geometry of a fully flattened cell by channel.
pub fn map_layers(cell: &Cell, map: &LayerChannelMap) -> RasterResult<ChannelGeometry> {
    if !cell.instances.is_empty() {
        return Err(RasterError::NotFlat(cell.name.clone()));
    }
    let n = map.channel_count();
    let mut g = ChannelGeometry { boundaries: vec![Vec::new(); n], paths: vec![Vec::new(); n], ..Default::default() };
    for b in &cell.boundaries {
        match map.channel_of(b.layer) {
            Some(ch) => g.boundaries[ch].push(b.clone()),
            None => {
                g.unmapped.insert(b.layer);
            }
        }
    }
    for p in &cell.paths {
        match map.channel_of(p.layer) {
            Some(ch) => g.paths[ch].push(p.clone()),
            None => {
                g.unmapped.insert(p.layer);
            }
        }
    }
    if !g.unmapped.is_empty() {
        log::warn!(
            "cell {:?}: unmapped layers {}",
            cell.name,
            g.unmapped.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", ")
        );
    }
    Ok(g)
}

/// Drawable primitive in scaled integer coordinates.
enum Prim {
    Rect(Rect),
    /// Open disc: centre and radius.
    Disc(Point, i64),
    Polygon(Vec<(f64, f64)>),
}

impl Prim {
    fn bbox(&self) -> Rect {
        match self {
            Prim::Rect(r) => *r,
            Prim::Disc(c, r) => Rect::new(c.x - r, c.y - r, c.x + r, c.y + r),
            Prim::Polygon(v) => {
                let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
                for &(x, y) in v {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
                Rect::new(x0.floor() as i64, y0.floor() as i64, x1.ceil() as i64, y1.ceil() as i64)
            }
        }
    }
}

/// Splits a rectilinear polygon into rectangles by horizontal slabs
/// (even-odd fill).
fn manhattan_rects(pts: &[Point]) -> Vec<Rect> {
    let mut ys: Vec<i64> = pts.iter().map(|p| p.y).collect();
    ys.sort_unstable();
    ys.dedup();
    let n = pts.len();
    let mut out = Vec::new();
    for w in ys.windows(2) {
        let (ylo, yhi) = (w[0], w[1]);
        let mut xs: Vec<i64> = Vec::new();
        for i in 0..n {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            if a.x == b.x && a.y.min(b.y) <= ylo && a.y.max(b.y) >= yhi {
                xs.push(a.x);
            }
        }
        xs.sort_unstable();
        for pair in xs.chunks_exact(2) {
            if pair[1] > pair[0] {
                out.push(Rect::new(pair[0], ylo, pair[1], yhi));
            }
        }
    }
    out
}

struct Scaler {
    /// Multiplier from dbu into scaled units.
    mul: i64,
    /// Pixel pitch in scaled units.
    pitch: i64,
}

impl Scaler {
    fn new(cfg: &RasterConfig, dbu_per_nm: Ratio<i64>) -> Self {
        // x_scaled = 2 * den * x_dbu; one nm is num/den dbu.
        let (num, den) = (*dbu_per_nm.numer(), *dbu_per_nm.denom());
        Self { mul: 2 * den, pitch: 2 * num * cfg.pixel_pitch_nm }
    }

    fn pt(&self, p: Point) -> Point {
        Point::new(p.x * self.mul, p.y * self.mul)
    }
}

fn boundary_prims(b: &Boundary, s: &Scaler, out: &mut Vec<Prim>) {
    let pts: Vec<Point> = b.open_vertices().iter().map(|p| s.pt(*p)).collect();
    if b.is_manhattan() {
        out.extend(manhattan_rects(&pts).into_iter().map(Prim::Rect));
    } else {
        out.push(Prim::Polygon(pts.iter().map(|p| (p.x as f64, p.y as f64)).collect()));
    }
}

fn path_prims(p: &Path, s: &Scaler, out: &mut Vec<Prim>) {
    // segment_rects_x2 is in doubled dbu; scaled units are 2 * den * dbu.
    let half_mul = s.mul / 2;
    if p.is_manhattan() {
        for r in p.segment_rects_x2() {
            out.push(Prim::Rect(Rect::new(r.x0 * half_mul, r.y0 * half_mul, r.x1 * half_mul, r.y1 * half_mul)));
        }
    } else {
        let hw = p.width as f64 * half_mul as f64;
        let n = p.centerline.len();
        for i in 0..n - 1 {
            let a = s.pt(p.centerline[i]);
            let b = s.pt(p.centerline[i + 1]);
            let (dx, dy) = ((b.x - a.x) as f64, (b.y - a.y) as f64);
            let len = (dx * dx + dy * dy).sqrt();
            if len == 0.0 {
                continue;
            }
            let (ux, uy) = (dx / len, dy / len);
            let ext = |end: bool| {
                let is_end = if end { i + 1 == n - 1 } else { i == 0 };
                if !is_end || p.end_style == PathEnd::Extended {
                    hw
                } else {
                    0.0
                }
            };
            let (ea, eb) = (ext(false), ext(true));
            let (ax, ay) = (a.x as f64 - ux * ea, a.y as f64 - uy * ea);
            let (bx, by) = (b.x as f64 + ux * eb, b.y as f64 + uy * eb);
            let (nx, ny) = (-uy * hw, ux * hw);
            out.push(Prim::Polygon(vec![
                (ax + nx, ay + ny),
                (bx + nx, by + ny),
                (bx - nx, by - ny),
                (ax - nx, ay - ny),
            ]));
        }
    }
    if p.end_style == PathEnd::Round {
        let r = p.width * half_mul;
        for end in [p.centerline[0], p.centerline[p.centerline.len() - 1]] {
            out.push(Prim::Disc(s.pt(end), r));
        }
    }
}

/// Area of the convex-clip of `poly` against an axis-aligned box.
fn clipped_area(poly: &[(f64, f64)], x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let mut cur: Vec<(f64, f64)> = poly.to_vec();
    let planes: [(usize, f64, bool); 4] = [(0, x0, true), (0, x1, false), (1, y0, true), (1, y1, false)];
    for (axis, bound, keep_ge) in planes {
        if cur.is_empty() {
            break;
        }
        let inside = |p: &(f64, f64)| {
            let v = if axis == 0 { p.0 } else { p.1 };
            if keep_ge {
                v >= bound
            } else {
                v <= bound
            }
        };
        let mut next = Vec::with_capacity(cur.len() + 2);
        for i in 0..cur.len() {
            let a = cur[i];
            let b = cur[(i + 1) % cur.len()];
            let (ia, ib) = (inside(&a), inside(&b));
            if ia {
                next.push(a);
            }
            if ia != ib {
                let (va, vb) = if axis == 0 { (a.0, b.0) } else { (a.1, b.1) };
                let t = (bound - va) / (vb - va);
                next.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            }
        }
        cur = next;
    }
    let n = cur.len();
    let twice: f64 = (0..n).map(|i| cur[i].0 * cur[(i + 1) % n].1 - cur[(i + 1) % n].0 * cur[i].1).sum();
    twice.abs() / 2.0
}

/// Binary coverage of one channel, one bit per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Bitmap {
    width: usize,
    height: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl Bitmap {
    fn new(width: usize, height: usize) -> Self {
        let words_per_row = width.div_ceil(64);
        Self { width, height, words_per_row, bits: vec![0; words_per_row * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.words_per_row + x / 64] >> (x % 64) & 1 == 1
    }

    #[inline]
    fn set(&mut self, x: usize, y: usize) {
        self.bits[y * self.words_per_row + x / 64] |= 1 << (x % 64);
    }

    fn fill_row(&mut self, y: usize, x0: usize, x1: usize) {
        let row = &mut self.bits[y * self.words_per_row..][..self.words_per_row];
        let mut x = x0;
        while x < x1 {
            let (w, b) = (x / 64, x % 64);
            let n = (64 - b).min(x1 - x);
            let mask = if n == 64 { u64::MAX } else { ((1u64 << n) - 1) << b };
            row[w] |= mask;
            x += n;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Set pixels of row `y`, ascending.
    pub fn row_ones(&self, y: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.bits[y * self.words_per_row..][..self.words_per_row];
        row.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

/// Native binary raster of all channels on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NativeRaster {
    pub channels: Vec<Bitmap>,
    pub width: usize,
    pub height: usize,
}

impl NativeRaster {
    /// Bitmaps of a native stack; values above 0.5 count as set.
    pub fn from_stack(stack: &ChannelStack) -> Self {
        let (c, height, width) = stack.dims();
        let mut channels = Vec::with_capacity(c);
        for ch in 0..c {
            let mut bm = Bitmap::new(width, height);
            for (i, &v) in stack.channel(ch).iter().enumerate() {
                if v > 0.5 {
                    bm.set(i % width, i / width);
                }
            }
            channels.push(bm);
        }
        Self { channels, width, height }
    }

    pub fn to_stack(&self) -> ChannelStack {
        let mut s = ChannelStack::zeros(self.channels.len(), self.height, self.width);
        for (c, bm) in self.channels.iter().enumerate() {
            for y in 0..self.height {
                for x in bm.row_ones(y) {
                    s.set(c, y, x, 1.0);
                }
            }
        }
        s
    }

    /// Resizes straight from the bitmaps, without building the native dense
    /// stack. Same result as `resize_to_target(&self.to_stack(), n)`.
    pub fn resized(&self, n: usize) -> ChannelStack {
        let k = pool_factor(self.height, self.width, n);
        let mut out = ChannelStack::zeros(self.channels.len(), n, n);
        let inv = 1.0 / (k * k) as f32;
        for (c, bm) in self.channels.iter().enumerate() {
            for y in 0..self.height {
                let oy = y / k;
                for x in bm.row_ones(y) {
                    let i = (c * n + oy) * n + x / k;
                    out.data[i] += 1.0;
                }
            }
        }
        if k > 1 {
            for v in &mut out.data {
                *v *= inv;
            }
        }
        out
    }
}

fn channel_prims(geom: &ChannelGeometry, s: &Scaler) -> Vec<Vec<Prim>> {
    (0..geom.channel_count())
        .map(|c| {
            let mut prims = Vec::new();
            for b in &geom.boundaries[c] {
                boundary_prims(b, s, &mut prims);
            }
            for p in &geom.paths[c] {
                path_prims(p, s, &mut prims);
            }
            prims
        })
        .collect()
}

/// Native raster dimensions (height, width) in pixels, or `None` when
/// nothing is mapped.
pub fn native_dims(geom: &ChannelGeometry, cfg: &RasterConfig, dbu_per_nm: Ratio<i64>) -> Option<(usize, usize)> {
    let s = Scaler::new(cfg, dbu_per_nm);
    let prims = channel_prims(geom, &s);
    let bb = prims.iter().flatten().map(Prim::bbox).reduce(|a, b| a.union(&b))?;
    Some(dims_for(&bb, s.pitch))
}

fn dims_for(bb: &Rect, pitch: i64) -> (usize, usize) {
    let h = (bb.height() + pitch - 1) / pitch;
    let w = (bb.width() + pitch - 1) / pitch;
    (h.max(1) as usize, w.max(1) as usize)
}

/// Rasterizes per-channel geometry onto a grid anchored at the lower-left of
/// the mapped geometry. A pixel is set when its square overlaps a shape with
/// strictly positive area.
pub fn rasterize_bitmaps(
    geom: &ChannelGeometry,
    cfg: &RasterConfig,
    dbu_per_nm: Ratio<i64>,
    name: &str,
) -> RasterResult<NativeRaster> {
    cfg.validate()?;
    let s = Scaler::new(cfg, dbu_per_nm);
    let prims = channel_prims(geom, &s);
    let bb = prims
        .iter()
        .flatten()
        .map(Prim::bbox)
        .reduce(|a, b| a.union(&b))
        .ok_or_else(|| RasterError::EmptyRaster(name.to_string()))?;
    let (height, width) = dims_for(&bb, s.pitch);
    let p = s.pitch;
    let mut channels = Vec::with_capacity(prims.len());
    for chan in &prims {
        let mut bm = Bitmap::new(width, height);
        for prim in chan {
            // Pixel index ranges whose open squares can meet the primitive.
            let pb = prim.bbox();
            let lo = |v: i64, o: i64| ((v - o).div_euclid(p)).max(0) as usize;
            let hi = |v: i64, o: i64, n: usize| (((v - o) + p - 1).div_euclid(p)).clamp(0, n as i64) as usize;
            let (cx0, cx1) = (lo(pb.x0, bb.x0), hi(pb.x1, bb.x0, width));
            let (cy0, cy1) = (lo(pb.y0, bb.y0), hi(pb.y1, bb.y0, height));
            match prim {
                Prim::Rect(r) => {
                    if r.width() <= 0 || r.height() <= 0 {
                        continue;
                    }
                    for y in cy0..cy1 {
                        bm.fill_row(y, cx0, cx1);
                    }
                }
                Prim::Disc(c, r) => {
                    let r2 = *r as i128 * *r as i128;
                    for y in cy0..cy1 {
                        let py0 = bb.y0 + y as i64 * p;
                        let dy = (py0 - c.y).max(0).max(c.y - (py0 + p)) as i128;
                        for x in cx0..cx1 {
                            let px0 = bb.x0 + x as i64 * p;
                            let dx = (px0 - c.x).max(0).max(c.x - (px0 + p)) as i128;
                            if dx * dx + dy * dy < r2 {
                                bm.set(x, y);
                            }
                        }
                    }
                }
                Prim::Polygon(poly) => {
                    let tol = 1e-9 * (p as f64) * (p as f64);
                    for y in cy0..cy1 {
                        let py0 = (bb.y0 + y as i64 * p) as f64;
                        for x in cx0..cx1 {
                            let px0 = (bb.x0 + x as i64 * p) as f64;
                            if clipped_area(poly, px0, py0, px0 + p as f64, py0 + p as f64) > tol {
                                bm.set(x, y);
                            }
                        }
                    }
                }
            }
        }
        channels.push(bm);
    }
    Ok(NativeRaster { channels, width, height })
}

/// Native `{0, 1}` stack of per-channel geometry.
pub fn pixelize(geom: &ChannelGeometry, cfg: &RasterConfig, dbu_per_nm: Ratio<i64>) -> RasterResult<ChannelStack> {
    Ok(rasterize_bitmaps(geom, cfg, dbu_per_nm, "")?.to_stack())
}

fn pool_factor(h: usize, w: usize, n: usize) -> usize {
    let m = h.max(w);
    if m <= n {
        1
    } else {
        m.div_ceil(n)
    }
}

/// Brings a native stack to `n x n`: zero padding (top/right) when it fits,
/// else pad to a multiple of `k = ceil(max(H, W) / n)`, average `k x k`
/// windows, and pad the rest.
pub fn resize_to_target(native: &ChannelStack, n: usize) -> ChannelStack {
    let (_, h, w) = native.dims();
    let k = pool_factor(h, w, n);
    if k == 1 {
        if h == n && w == n {
            return native.clone();
        }
        return native.padded(n, n);
    }
    let padded = native.padded(h.div_ceil(k) * k, w.div_ceil(k) * k);
    let pooled = padded.avg_pool(k).expect("padded to a multiple of k");
    pooled.padded(n, n)
}

/// Full preprocessing of a flattened cell: layer split, rasterization and
/// resize to the configured target size.
pub fn rasterize_cell(cell: &Cell, cfg: &RasterConfig, dbu_per_nm: Ratio<i64>) -> RasterResult<ChannelStack> {
    let geom = map_layers(cell, &cfg.channel_map)?;
    let native = rasterize_bitmaps(&geom, cfg, dbu_per_nm, &cell.name)?;
    Ok(native.resized(cfg.target_size))
}

/// Three-scale input: `N/4`, `N/2` and `N` views of one stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub levels: [ChannelStack; 3],
}

impl Pyramid {
    pub fn coarse(&self) -> &ChannelStack {
        &self.levels[0]
    }

    pub fn medium(&self) -> &ChannelStack {
        &self.levels[1]
    }

    pub fn full(&self) -> &ChannelStack {
        &self.levels[2]
    }
}

/// Builds the 4:1 and 2:1 average-pooled views of a square stack.
pub fn build_pyramid(stack: &ChannelStack) -> RasterResult<Pyramid> {
    let (_, h, w) = stack.dims();
    if h != w || h < 4 || h % 4 != 0 {
        return Err(RasterError::Dim(format!("pyramid input must be square with side divisible by 4, got {h}x{w}")));
    }
    let half = stack.avg_pool(2)?;
    let quarter = stack.avg_pool(4)?;
    Ok(Pyramid { levels: [quarter, half, stack.clone()] })
}

/// Fractions of cells whose native raster exceeds 64, 128 and 256 pixels.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SizeStats {
    pub total: usize,
    pub thresholds: Vec<SizeBucket>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SizeBucket {
    pub size: usize,
    pub count: usize,
    pub fraction: f64,
}

impl SizeStats {
    pub fn from_sizes(sizes: &[usize]) -> Self {
        let total = sizes.len();
        let thresholds = [64usize, 128, 256]
            .into_iter()
            .map(|t| {
                let count = sizes.iter().filter(|&&s| s > t).count();
                SizeBucket { size: t, count, fraction: if total == 0 { 0.0 } else { count as f64 / total as f64 } }
            })
            .collect();
        Self { total, thresholds }
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12} {:>8} {:>10}\n", "larger than", "cells", "fraction");
        for b in &self.thresholds {
            s.push_str(&format!(
                "{:<12} {:>8} {:>9.1}%\n",
                format!("{0}x{0}", b.size),
                b.count,
                100.0 * b.fraction
            ));
        }
        s.push_str(&format!("{:<12} {:>8}\n", "total", self.total));
        s
    }
}

/// Size distribution over flattened cells; size is the larger native raster
/// side, 0 for cells without mapped geometry.
pub fn size_stats(cells: &[Cell], cfg: &RasterConfig, dbu_per_nm: Ratio<i64>) -> RasterResult<SizeStats> {
    let mut sizes = Vec::with_capacity(cells.len());
    for c in cells {
        let geom = map_layers(c, &cfg.channel_map)?;
        sizes.push(native_dims(&geom, cfg, dbu_per_nm).map_or(0, |(h, w)| h.max(w)));
    }
    Ok(SizeStats::from_sizes(&sizes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Boundary, Rotation};

    #[test]
    fn native_from_stack_roundtrip() {
        let mut st = ChannelStack::zeros(2, 3, 5);
        st.set(0, 0, 4, 1.0);
        st.set(1, 2, 1, 1.0);
        st.set(1, 1, 1, 0.5);
        let n = NativeRaster::from_stack(&st);
        assert_eq!((n.width, n.height), (5, 3));
        assert!(n.channels[0].get(4, 0) && n.channels[1].get(1, 2) && !n.channels[1].get(1, 1));
        st.set(1, 1, 1, 0.0);
        assert_eq!(n.to_stack(), st);
    }

    fn nm1() -> Ratio<i64> {
        Ratio::from_integer(1)
    }

    fn cell_with(rects: &[(LayerKey, i64, i64, i64, i64)]) -> Cell {
        let mut c = Cell::new("C");
        for &(k, x0, y0, x1, y1) in rects {
            c.boundaries.push(Boundary::rect(k, x0, y0, x1, y1).unwrap());
        }
        c
    }

    fn native(cell: &Cell) -> ChannelStack {
        let cfg = RasterConfig::default();
        pixelize(&map_layers(cell, &cfg.channel_map).unwrap(), &cfg, nm1()).unwrap()
    }

    const M1: LayerKey = layers::metal(1);

    #[test]
    fn default_map_has_21_channels() {
        let m = LayerChannelMap::default_21();
        assert_eq!(m.channel_count(), 21);
        let used: BTreeSet<usize> = m.entries().iter().map(|e| e.1).collect();
        assert_eq!(used.len(), 21);
        assert_eq!(m.channel_of(layers::POLY), m.channel_of(layers::METAL_GATE));
        let reparsed = LayerChannelMap::parse(&m.to_text()).unwrap();
        assert_eq!(reparsed, m);
    }

    #[test]
    fn channel_map_parse_errors() {
        assert!(LayerChannelMap::parse("1,0,0\n").is_err());
        assert!(LayerChannelMap::parse("1,0,x,well\n").is_err());
        assert!(LayerChannelMap::parse("1,0,0,a\n1,0,1,b\n").is_err());
        let m = LayerChannelMap::parse("# comment\n 1, 0, 0, well # trailing\n\n5,0,2,m\n").unwrap();
        assert_eq!(m.channel_count(), 3);
    }

    #[test]
    fn gate_layers_share_channel() {
        let c = cell_with(&[(layers::POLY, 0, 0, 10, 10), (layers::METAL_GATE, 20, 0, 30, 10)]);
        let g = map_layers(&c, &LayerChannelMap::default_21()).unwrap();
        assert_eq!(g.boundaries[3].len(), 2);
    }

    #[test]
    fn unmapped_layer_reported() {
        let c = cell_with(&[(LayerKey::new(99, 0), 0, 0, 10, 10), (M1, 0, 0, 10, 10)]);
        let g = map_layers(&c, &LayerChannelMap::default_21()).unwrap();
        assert!(g.unmapped.contains(&LayerKey::new(99, 0)));
        assert_eq!(g.boundaries.iter().map(Vec::len).sum::<usize>(), 1);
    }

    #[test]
    fn empty_cell_has_empty_channels_and_no_raster() {
        let g = map_layers(&Cell::new("E"), &LayerChannelMap::default_21()).unwrap();
        assert!(g.is_empty());
        let cfg = RasterConfig::default();
        assert!(matches!(pixelize(&g, &cfg, nm1()), Err(RasterError::EmptyRaster(_))));
    }

    #[test]
    fn exact_alignment() {
        let s = native(&cell_with(&[(M1, 0, 0, 20, 10)]));
        assert_eq!(s.dims(), (21, 1, 2));
        assert_eq!((s.get(5, 0, 0), s.get(5, 0, 1)), (1.0, 1.0));
    }

    #[test]
    fn partial_overlap_counts() {
        let s = native(&cell_with(&[(M1, 0, 0, 15, 10)]));
        assert_eq!(s.dims(), (21, 1, 2));
        assert_eq!((s.get(5, 0, 0), s.get(5, 0, 1)), (1.0, 1.0));
    }

    #[test]
    fn edge_touch_does_not_set() {
        // Second shape on another layer widens the grid; the metal1 shape ends
        // exactly on the grid line x = 10.
        let s = native(&cell_with(&[(M1, 0, 0, 10, 10), (layers::metal(2), 0, 0, 30, 10)]));
        assert_eq!(s.dims(), (21, 1, 3));
        assert_eq!((s.get(5, 0, 0), s.get(5, 0, 1)), (1.0, 0.0));
    }

    #[test]
    fn path_ends() {
        let mut c = Cell::new("P");
        c.paths.push(Path::new(M1, 10, vec![Point::new(0, 5), Point::new(30, 5)], PathEnd::Flush).unwrap());
        assert_eq!(native(&c).dims(), (21, 1, 3));
        c.paths[0].end_style = PathEnd::Extended;
        assert_eq!(native(&c).dims(), (21, 1, 4));
        c.paths[0].end_style = PathEnd::Round;
        let s = native(&c);
        assert_eq!(s.dims(), (21, 1, 4));
        assert!(s.channel(5).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn l_shaped_boundary_and_corner_path() {
        let mut c = Cell::new("L");
        c.boundaries.push(
            Boundary::new(
                M1,
                vec![
                    Point::new(0, 0),
                    Point::new(30, 0),
                    Point::new(30, 10),
                    Point::new(10, 10),
                    Point::new(10, 30),
                    Point::new(0, 30),
                ],
            )
            .unwrap(),
        );
        let s = native(&c);
        assert_eq!(s.channel(5).iter().filter(|&&v| v == 1.0).count(), 5);
        assert_eq!(s.get(5, 2, 2), 0.0);

        let mut p = Cell::new("P");
        p.paths.push(
            Path::new(M1, 10, vec![Point::new(5, 30), Point::new(5, 5), Point::new(30, 5)], PathEnd::Flush).unwrap(),
        );
        let s = native(&p);
        assert_eq!(s.dims(), (21, 3, 3));
        assert_eq!(s.channel(5).iter().filter(|&&v| v == 1.0).count(), 5);
    }

    #[test]
    fn diagonal_polygon_uses_area_rule() {
        let mut c = Cell::new("T");
        c.boundaries.push(
            Boundary::new(M1, vec![Point::new(0, 0), Point::new(20, 0), Point::new(0, 20)]).unwrap(),
        );
        let s = native(&c);
        assert_eq!(s.dims(), (21, 2, 2));
        // The hypotenuse only touches the corner of the top-right pixel.
        assert_eq!(s.get(5, 1, 1), 0.0);
        assert_eq!(s.channel(5).iter().filter(|&&v| v == 1.0).count(), 3);
    }

    #[test]
    fn finer_database_units() {
        // 0.1 nm database grid: 200 dbu = 20 nm = 2 pixels.
        let c = cell_with(&[(M1, 0, 0, 200, 100)]);
        let cfg = RasterConfig::default();
        let g = map_layers(&c, &cfg.channel_map).unwrap();
        let s = pixelize(&g, &cfg, Ratio::from_integer(10)).unwrap();
        assert_eq!(s.dims(), (21, 1, 2));
    }

    #[test]
    fn resize_cases() {
        let exact = ChannelStack::from_vec(1, 256, 256, (0..65536).map(|i| (i % 2) as f32).collect()).unwrap();
        assert_eq!(resize_to_target(&exact, 256), exact);

        let mut small = ChannelStack::zeros(2, 128, 64);
        small.set(1, 127, 63, 1.0);
        small.set(0, 0, 0, 1.0);
        let r = resize_to_target(&small, 256);
        assert_eq!(r.dims(), (2, 256, 256));
        assert_eq!((r.get(1, 127, 63), r.get(0, 0, 0)), (1.0, 1.0));
        assert_eq!(r.data().iter().sum::<f32>(), 2.0);

        let ones = ChannelStack::from_vec(1, 512, 512, vec![1.0; 512 * 512]).unwrap();
        let r = resize_to_target(&ones, 256);
        assert!(r.data().iter().all(|&v| v == 1.0));

        // 300 wide: k = 2, padded to 300x300 -> 150x150 pooled -> padded.
        let wide = ChannelStack::from_vec(1, 3, 300, vec![1.0; 900]).unwrap();
        let r = resize_to_target(&wide, 256);
        assert_eq!(r.get(0, 0, 149), 1.0);
        assert_eq!(r.get(0, 1, 0), 0.5);
        assert_eq!(r.get(0, 0, 150), 0.0);
    }

    #[test]
    fn bitmap_resize_matches_dense_path() {
        let c = cell_with(&[(M1, 0, 0, 3000, 15), (layers::via(1), 40, 7, 2999, 2500), (layers::POLY, 5, 5, 6, 6)]);
        let cfg = RasterConfig::default();
        let g = map_layers(&c, &cfg.channel_map).unwrap();
        let nat = rasterize_bitmaps(&g, &cfg, nm1(), "c").unwrap();
        assert_eq!(nat.resized(256), resize_to_target(&nat.to_stack(), 256));
    }

    #[test]
    fn pyramid_checkerboard_and_errors() {
        let mut s = ChannelStack::zeros(1, 256, 256);
        for y in 0..256 {
            for x in 0..256 {
                if ((y / 2) + (x / 2)) % 2 == 0 {
                    s.set(0, y, x, 1.0);
                }
            }
        }
        // 2x2 blocks line up with 2:1 windows; use 1-pixel checkerboard for 0.5.
        let mut fine = ChannelStack::zeros(1, 256, 256);
        for y in 0..256 {
            for x in 0..256 {
                if (y + x) % 2 == 0 {
                    fine.set(0, y, x, 1.0);
                }
            }
        }
        let p = build_pyramid(&fine).unwrap();
        assert!(p.medium().data().iter().all(|&v| v == 0.5));
        let p = build_pyramid(&s).unwrap();
        assert!(p.coarse().data().iter().all(|&v| v == 0.5));
        let z = build_pyramid(&ChannelStack::zeros(3, 256, 256)).unwrap();
        assert!(z.levels.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
        assert_eq!(z.coarse().dims(), (3, 64, 64));
        assert!(matches!(build_pyramid(&ChannelStack::zeros(1, 256, 128)), Err(RasterError::Dim(_))));
    }

    #[test]
    fn size_stats_counting() {
        assert!(SizeStats::from_sizes(&[10]).thresholds.iter().all(|b| b.fraction == 0.0));
        let s = SizeStats::from_sizes(&[50, 100, 300]);
        let f: Vec<f64> = s.thresholds.iter().map(|b| b.fraction).collect();
        assert_eq!(f, vec![2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);

        let cells = vec![cell_with(&[(M1, 0, 0, 500, 100)]), cell_with(&[(M1, 0, 0, 3000, 10)]), Cell::new("E")];
        let st = size_stats(&cells, &RasterConfig::default(), nm1()).unwrap();
        assert_eq!(st.total, 3);
        assert_eq!(st.thresholds[2].count, 1);
        assert!(st.to_table().contains("256x256"));
    }

    #[test]
    fn stack_file_roundtrip_and_magic() {
        let s = ChannelStack::from_vec(2, 3, 4, (0..24).map(|i| i as f32 / 24.0).collect()).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"LTG1\x03");
        assert_eq!(&buf[5..9], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 5 + 12 + 24 * 4);
        assert_eq!(ChannelStack::read_from(&buf[..]).unwrap(), s);
        buf[0] = b'X';
        assert!(matches!(ChannelStack::read_from(&buf[..]), Err(RasterError::Format(_))));
    }

    #[test]
    fn rotated_geometry_rasterizes_like_transposed() {
        let c = cell_with(&[(M1, 0, 0, 50, 20), (layers::metal(2), 10, 0, 20, 40)]);
        let t = crate::layout::Transform::new(Rotation::R90, false, Point::new(0, 0));
        let rc = Cell { name: "R".into(), boundaries: c.boundaries.iter().map(|b| b.transformed(&t)).collect(), ..Default::default() };
        let a = native(&c);
        let b = native(&rc);
        assert_eq!((a.height(), a.width()), (b.width(), b.height()));
        assert_eq!(a.data().iter().sum::<f32>(), b.data().iter().sum::<f32>());
    }
}
