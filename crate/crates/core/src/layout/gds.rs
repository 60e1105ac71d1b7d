// SPDX-License-Identifier: Apache-2.0

//! GDSII stream reading and writing for the record subset used by analog
//! sub-cell layouts: boundaries, paths, structure and array references.
//!
//! Records are big-endian: a 2-byte total length (header included), a 1-byte
//! record type and a 1-byte data type, followed by the payload.

use super::{
    ArraySpec, Boundary, Cell, Instance, LayerKey, LayoutError, LayoutResult, Library, Path, PathEnd, Point,
    Rotation, Units,
};

/// Record types understood (or deliberately skipped) by the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum GdsRecordType {
    Header = 0x00,
    BgnLib = 0x01,
    LibName = 0x02,
    Units = 0x03,
    EndLib = 0x04,
    BgnStr = 0x05,
    StrName = 0x06,
    EndStr = 0x07,
    Boundary = 0x08,
    Path = 0x09,
    Sref = 0x0A,
    Aref = 0x0B,
    Text = 0x0C,
    Layer = 0x0D,
    Datatype = 0x0E,
    Width = 0x0F,
    Xy = 0x10,
    EndEl = 0x11,
    Sname = 0x12,
    ColRow = 0x13,
    Node = 0x15,
    Strans = 0x1A,
    Mag = 0x1B,
    Angle = 0x1C,
    PathType = 0x21,
    Box = 0x2D,
}

impl GdsRecordType {
    fn from_u8(v: u8) -> Option<Self> {
        use GdsRecordType::*;
        Some(match v {
            0x00 => Header,
            0x01 => BgnLib,
            0x02 => LibName,
            0x03 => Units,
            0x04 => EndLib,
            0x05 => BgnStr,
            0x06 => StrName,
            0x07 => EndStr,
            0x08 => Boundary,
            0x09 => Path,
            0x0A => Sref,
            0x0B => Aref,
            0x0C => Text,
            0x0D => Layer,
            0x0E => Datatype,
            0x0F => Width,
            0x10 => Xy,
            0x11 => EndEl,
            0x12 => Sname,
            0x13 => ColRow,
            0x15 => Node,
            0x1A => Strans,
            0x1B => Mag,
            0x1C => Angle,
            0x21 => PathType,
            0x2D => Box,
            _ => return None,
        })
    }
}

const DT_NONE: u8 = 0;
const DT_BITS: u8 = 1;
const DT_I16: u8 = 2;
const DT_I32: u8 = 3;
const DT_F64: u8 = 5;
const DT_ASCII: u8 = 6;

const STRANS_REFLECT: u16 = 0x8000;
const STRANS_ABS_MAG: u16 = 0x0004;
const STRANS_ABS_ANGLE: u16 = 0x0002;

/// Decodes a GDSII 8-byte excess-64 base-16 real.
pub(crate) fn decode_real8(b: [u8; 8]) -> f64 {
    let negative = b[0] & 0x80 != 0;
    let exp = (b[0] & 0x7f) as i32 - 64;
    let mut mantissa: u64 = 0;
    for &byte in &b[1..] {
        mantissa = (mantissa << 8) | byte as u64;
    }
    let v = mantissa as f64 * 2f64.powi(4 * exp - 56);
    if negative {
        -v
    } else {
        v
    }
}

/// Encodes an f64 as a GDSII real. Exact for every finite f64 in range,
/// since the 56-bit mantissa holds the 53-bit one at any nibble alignment.
pub(crate) fn encode_real8(v: f64) -> [u8; 8] {
    if v == 0.0 || !v.is_finite() {
        return [0; 8];
    }
    let negative = v < 0.0;
    let mut a = v.abs();
    let mut exp: i32 = 0;
    while a >= 1.0 {
        a /= 16.0;
        exp += 1;
    }
    while a < 1.0 / 16.0 {
        a *= 16.0;
        exp -= 1;
    }
    let mut mantissa = (a * 2f64.powi(56)).round() as u64;
    if mantissa >= 1u64 << 56 {
        mantissa >>= 4;
        exp += 1;
    }
    let mut out = [0u8; 8];
    out[0] = ((exp + 64).clamp(0, 127) as u8) | if negative { 0x80 } else { 0 };
    for i in 0..7 {
        out[7 - i] = (mantissa >> (8 * i)) as u8;
    }
    out
}

struct Record<'a> {
    offset: usize,
    rtype: u8,
    dtype: u8,
    data: &'a [u8],
}

impl<'a> Record<'a> {
    fn err(&self, message: impl Into<String>) -> LayoutError {
        LayoutError::Parse { offset: self.offset, message: message.into() }
    }

    fn expect_dtype(&self, dt: u8) -> LayoutResult<()> {
        if self.dtype != dt {
            return Err(self.err(format!(
                "record 0x{:02x} has data type {} (expected {})",
                self.rtype, self.dtype, dt
            )));
        }
        Ok(())
    }

    fn i16s(&self) -> LayoutResult<Vec<i16>> {
        self.expect_dtype(DT_I16)?;
        if !self.data.len().is_multiple_of(2) {
            return Err(self.err("odd-length int2 payload"));
        }
        Ok(self.data.chunks_exact(2).map(|c| i16::from_be_bytes([c[0], c[1]])).collect())
    }

    fn i16(&self) -> LayoutResult<i16> {
        self.i16s()?.first().copied().ok_or_else(|| self.err("empty int2 record"))
    }

    fn i32s(&self) -> LayoutResult<Vec<i32>> {
        self.expect_dtype(DT_I32)?;
        if !self.data.len().is_multiple_of(4) {
            return Err(self.err("int4 payload length not a multiple of 4"));
        }
        Ok(self.data.chunks_exact(4).map(|c| i32::from_be_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn f64s(&self) -> LayoutResult<Vec<f64>> {
        self.expect_dtype(DT_F64)?;
        if !self.data.len().is_multiple_of(8) {
            return Err(self.err("real8 payload length not a multiple of 8"));
        }
        Ok(self
            .data
            .chunks_exact(8)
            .map(|c| decode_real8(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn ascii(&self) -> LayoutResult<String> {
        self.expect_dtype(DT_ASCII)?;
        let end = self.data.iter().rposition(|&b| b != 0).map_or(0, |p| p + 1);
        String::from_utf8(self.data[..end].to_vec()).map_err(|_| self.err("non-UTF-8 string"))
    }

    fn bits(&self) -> LayoutResult<u16> {
        self.expect_dtype(DT_BITS)?;
        if self.data.len() != 2 {
            return Err(self.err("bit-array record must hold 2 bytes"));
        }
        Ok(u16::from_be_bytes([self.data[0], self.data[1]]))
    }

    fn points(&self) -> LayoutResult<Vec<Point>> {
        let v = self.i32s()?;
        if v.len() % 2 != 0 {
            return Err(self.err("XY record holds an odd number of coordinates"));
        }
        Ok(v.chunks_exact(2).map(|c| Point::new(c[0] as i64, c[1] as i64)).collect())
    }
}

struct RecordReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RecordReader<'a> {
    fn next(&mut self) -> LayoutResult<Record<'a>> {
        let offset = self.pos;
        if self.pos + 4 > self.bytes.len() {
            return Err(LayoutError::Parse { offset, message: "truncated record header".into() });
        }
        let b = &self.bytes[self.pos..];
        let len = u16::from_be_bytes([b[0], b[1]]) as usize;
        if len < 4 || !len.is_multiple_of(2) {
            return Err(LayoutError::Parse { offset, message: format!("invalid record length {len}") });
        }
        if self.pos + len > self.bytes.len() {
            return Err(LayoutError::Parse { offset, message: format!("truncated record: need {len} bytes") });
        }
        self.pos += len;
        Ok(Record { offset, rtype: b[2], dtype: b[3], data: &b[4..len] })
    }
}

fn layer_value(r: &Record<'_>) -> LayoutResult<u8> {
    let v = r.i16()?;
    u8::try_from(v).map_err(|_| r.err(format!("layer/datatype {v} outside 0..=255")))
}

/// Parses a GDSII stream, returning the library and any warnings about
/// skipped elements.
pub fn parse_gdsii_report(bytes: &[u8]) -> LayoutResult<(Library, Vec<String>)> {
    let mut rd = RecordReader { bytes, pos: 0 };
    let mut warnings = Vec::new();

    let first = rd.next()?;
    if first.rtype != GdsRecordType::Header as u8 {
        return Err(first.err("stream does not begin with a HEADER record"));
    }
    first.i16()?;

    let mut lib = Library::new("");
    loop {
        let r = rd.next()?;
        match GdsRecordType::from_u8(r.rtype) {
            Some(GdsRecordType::BgnLib) => {
                let v = r.i16s()?;
                if v.len() == 12 {
                    lib.timestamp.copy_from_slice(&v);
                }
            }
            Some(GdsRecordType::LibName) => lib.name = r.ascii()?,
            Some(GdsRecordType::Units) => {
                let v = r.f64s()?;
                if v.len() != 2 || v[1] <= 0.0 {
                    return Err(r.err("UNITS needs two positive reals"));
                }
                lib.units = Units { user_per_dbu: v[0], meters_per_dbu: v[1] };
            }
            Some(GdsRecordType::BgnStr) => {
                let cell = parse_struct(&mut rd, &mut warnings)?;
                if lib.cells.contains_key(&cell.name) {
                    return Err(r.err(format!("duplicate structure {:?}", cell.name)));
                }
                lib.add_cell(cell);
            }
            Some(GdsRecordType::EndLib) => break,
            _ => {
                log::debug!("ignoring library-level record 0x{:02x} at {}", r.rtype, r.offset);
            }
        }
    }
    lib.validate()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((lib, warnings))
}

/// Parses a GDSII stream into a validated [`Library`].
pub fn parse_gdsii(bytes: &[u8]) -> LayoutResult<Library> {
    parse_gdsii_report(bytes).map(|(lib, _)| lib)
}

#[derive(Default)]
struct ElementFields {
    layer: Option<u8>,
    datatype: Option<u8>,
    width: Option<i32>,
    pathtype: Option<i16>,
    xy: Option<Vec<Point>>,
    sname: Option<String>,
    strans: u16,
    mag: Option<f64>,
    angle: Option<f64>,
    colrow: Option<(i16, i16)>,
}

fn parse_struct(rd: &mut RecordReader<'_>, warnings: &mut Vec<String>) -> LayoutResult<Cell> {
    let name_rec = rd.next()?;
    if name_rec.rtype != GdsRecordType::StrName as u8 {
        return Err(name_rec.err("BGNSTR not followed by STRNAME"));
    }
    let mut cell = Cell::new(name_rec.ascii()?);
    loop {
        let r = rd.next()?;
        let kind = GdsRecordType::from_u8(r.rtype);
        match kind {
            Some(GdsRecordType::EndStr) => return Ok(cell),
            Some(
                k @ (GdsRecordType::Boundary | GdsRecordType::Path | GdsRecordType::Sref | GdsRecordType::Aref),
            ) => {
                let start = r.offset;
                let f = read_element(rd)?;
                let err = |m: String| LayoutError::Parse { offset: start, message: m };
                match k {
                    GdsRecordType::Boundary => {
                        let layer = LayerKey::new(
                            f.layer.ok_or_else(|| err("BOUNDARY without LAYER".into()))?,
                            f.datatype.unwrap_or(0),
                        );
                        let xy = f.xy.ok_or_else(|| err("BOUNDARY without XY".into()))?;
                        let b = Boundary::new(layer, xy).map_err(|e| err(e.to_string()))?;
                        cell.boundaries.push(b);
                    }
                    GdsRecordType::Path => {
                        let layer = LayerKey::new(
                            f.layer.ok_or_else(|| err("PATH without LAYER".into()))?,
                            f.datatype.unwrap_or(0),
                        );
                        let code = f.pathtype.unwrap_or(0);
                        let end = PathEnd::from_code(code)
                            .ok_or_else(|| err(format!("unsupported PATHTYPE {code}")))?;
                        let xy = f.xy.ok_or_else(|| err("PATH without XY".into()))?;
                        let width = f.width.unwrap_or(0) as i64;
                        let p = Path::new(layer, width, xy, end).map_err(|e| err(e.to_string()))?;
                        cell.paths.push(p);
                    }
                    _ => {
                        let inst = build_instance(k == GdsRecordType::Aref, f).map_err(err)?;
                        cell.instances.push(inst);
                    }
                }
            }
            Some(k @ (GdsRecordType::Text | GdsRecordType::Node | GdsRecordType::Box)) => {
                warnings.push(format!(
                    "skipping unsupported {k:?} element at byte {} in structure {:?}",
                    r.offset, cell.name
                ));
                skip_element(rd)?;
            }
            _ => {
                return Err(r.err(format!("unexpected record 0x{:02x} inside structure", r.rtype)));
            }
        }
    }
}

fn skip_element(rd: &mut RecordReader<'_>) -> LayoutResult<()> {
    loop {
        let r = rd.next()?;
        if r.rtype == GdsRecordType::EndEl as u8 {
            return Ok(());
        }
        if r.rtype == GdsRecordType::EndStr as u8 || r.rtype == GdsRecordType::EndLib as u8 {
            return Err(r.err("element not terminated by ENDEL"));
        }
    }
}

fn read_element(rd: &mut RecordReader<'_>) -> LayoutResult<ElementFields> {
    let mut f = ElementFields::default();
    loop {
        let r = rd.next()?;
        match GdsRecordType::from_u8(r.rtype) {
            Some(GdsRecordType::EndEl) => return Ok(f),
            Some(GdsRecordType::Layer) => f.layer = Some(layer_value(&r)?),
            Some(GdsRecordType::Datatype) => f.datatype = Some(layer_value(&r)?),
            Some(GdsRecordType::Width) => {
                f.width = Some(*r.i32s()?.first().ok_or_else(|| r.err("empty WIDTH"))?);
            }
            Some(GdsRecordType::PathType) => f.pathtype = Some(r.i16()?),
            Some(GdsRecordType::Xy) => f.xy = Some(r.points()?),
            Some(GdsRecordType::Sname) => f.sname = Some(r.ascii()?),
            Some(GdsRecordType::Strans) => f.strans = r.bits()?,
            Some(GdsRecordType::Mag) => f.mag = r.f64s()?.first().copied(),
            Some(GdsRecordType::Angle) => f.angle = r.f64s()?.first().copied(),
            Some(GdsRecordType::ColRow) => {
                let v = r.i16s()?;
                if v.len() != 2 {
                    return Err(r.err("COLROW needs two values"));
                }
                f.colrow = Some((v[0], v[1]));
            }
            Some(GdsRecordType::EndStr | GdsRecordType::EndLib | GdsRecordType::BgnStr) => {
                return Err(r.err("element not terminated by ENDEL"));
            }
            _ => {
                // ELFLAGS, PLEX, PROPATTR, PROPVALUE, extensions.
                log::debug!("ignoring element record 0x{:02x} at {}", r.rtype, r.offset);
            }
        }
    }
}

fn build_instance(is_array: bool, f: ElementFields) -> Result<Instance, String> {
    let ref_name = f.sname.ok_or("reference without SNAME")?;
    if f.strans & (STRANS_ABS_MAG | STRANS_ABS_ANGLE) != 0 {
        return Err(format!("absolute magnification/angle flags on reference to {ref_name:?}"));
    }
    if let Some(m) = f.mag {
        if (m - 1.0).abs() > 1e-12 {
            return Err(format!("magnification {m} on reference to {ref_name:?} is not supported"));
        }
    }
    let angle = f.angle.unwrap_or(0.0);
    let rotation =
        Rotation::from_degrees(angle).ok_or_else(|| format!("angle {angle} is not a multiple of 90 degrees"))?;
    let mirrored_x = f.strans & STRANS_REFLECT != 0;
    let xy = f.xy.ok_or("reference without XY")?;
    if !is_array {
        if xy.len() != 1 {
            return Err(format!("SREF needs 1 point, got {}", xy.len()));
        }
        return Ok(Instance { ref_name, origin: xy[0], rotation, mirrored_x, array: None });
    }
    let (cols, rows) = f.colrow.ok_or("AREF without COLROW")?;
    if cols < 1 || rows < 1 {
        return Err(format!("AREF with {cols} columns and {rows} rows"));
    }
    if xy.len() != 3 {
        return Err(format!("AREF needs 3 points, got {}", xy.len()));
    }
    let (o, pc, pr) = (xy[0], xy[1], xy[2]);
    let (cols, rows) = (cols as i64, rows as i64);
    let divides = |d: i64, n: i64| d % n == 0;
    let (dcx, dcy, drx, dry) = (pc.x - o.x, pc.y - o.y, pr.x - o.x, pr.y - o.y);
    if !(divides(dcx, cols) && divides(dcy, cols) && divides(drx, rows) && divides(dry, rows)) {
        return Err("AREF lattice is not an integer pitch".into());
    }
    Ok(Instance {
        ref_name,
        origin: o,
        rotation,
        mirrored_x,
        array: Some(ArraySpec {
            rows: rows as u32,
            cols: cols as u32,
            row_pitch: Point::new(drx / rows, dry / rows),
            col_pitch: Point::new(dcx / cols, dcy / cols),
        }),
    })
}

struct RecordWriter {
    out: Vec<u8>,
}

impl RecordWriter {
    fn record(&mut self, rtype: GdsRecordType, dtype: u8, data: &[u8]) -> LayoutResult<()> {
        let len = data.len() + 4;
        if len > u16::MAX as usize {
            return Err(LayoutError::Range(format!("{rtype:?} record of {len} bytes exceeds 65535")));
        }
        self.out.extend_from_slice(&(len as u16).to_be_bytes());
        self.out.push(rtype as u8);
        self.out.push(dtype);
        self.out.extend_from_slice(data);
        Ok(())
    }

    fn empty(&mut self, rtype: GdsRecordType) -> LayoutResult<()> {
        self.record(rtype, DT_NONE, &[])
    }

    fn i16s(&mut self, rtype: GdsRecordType, v: &[i16]) -> LayoutResult<()> {
        let data: Vec<u8> = v.iter().flat_map(|x| x.to_be_bytes()).collect();
        self.record(rtype, DT_I16, &data)
    }

    fn ascii(&mut self, rtype: GdsRecordType, s: &str) -> LayoutResult<()> {
        let mut data = s.as_bytes().to_vec();
        if !data.len().is_multiple_of(2) {
            data.push(0);
        }
        self.record(rtype, DT_ASCII, &data)
    }

    fn f64s(&mut self, rtype: GdsRecordType, v: &[f64]) -> LayoutResult<()> {
        let data: Vec<u8> = v.iter().flat_map(|x| encode_real8(*x)).collect();
        self.record(rtype, DT_F64, &data)
    }

    fn xy(&mut self, pts: &[Point]) -> LayoutResult<()> {
        let mut data = Vec::with_capacity(pts.len() * 8);
        for p in pts {
            for c in [p.x, p.y] {
                let v = i32::try_from(c)
                    .map_err(|_| LayoutError::Range(format!("coordinate {c} outside 32-bit range")))?;
                data.extend_from_slice(&v.to_be_bytes());
            }
        }
        self.record(GdsRecordType::Xy, DT_I32, &data)
    }

    fn layer(&mut self, key: LayerKey) -> LayoutResult<()> {
        self.i16s(GdsRecordType::Layer, &[key.layer as i16])?;
        self.i16s(GdsRecordType::Datatype, &[key.datatype as i16])
    }
}

/// Serializes a library. Elements are written boundaries first, then paths,
/// then references, so a second write of a parsed stream is byte-identical.
pub fn write_gdsii(lib: &Library) -> LayoutResult<Vec<u8>> {
    let mut w = RecordWriter { out: Vec::new() };
    w.i16s(GdsRecordType::Header, &[600])?;
    w.i16s(GdsRecordType::BgnLib, &lib.timestamp)?;
    w.ascii(GdsRecordType::LibName, &lib.name)?;
    w.f64s(GdsRecordType::Units, &[lib.units.user_per_dbu, lib.units.meters_per_dbu])?;
    for cell in lib.cells.values() {
        w.i16s(GdsRecordType::BgnStr, &lib.timestamp)?;
        w.ascii(GdsRecordType::StrName, &cell.name)?;
        for b in &cell.boundaries {
            w.empty(GdsRecordType::Boundary)?;
            w.layer(b.layer)?;
            w.xy(&b.vertices)?;
            w.empty(GdsRecordType::EndEl)?;
        }
        for p in &cell.paths {
            w.empty(GdsRecordType::Path)?;
            w.layer(p.layer)?;
            w.i16s(GdsRecordType::PathType, &[p.end_style.code()])?;
            let width = i32::try_from(p.width)
                .map_err(|_| LayoutError::Range(format!("path width {} outside 32-bit range", p.width)))?;
            w.record(GdsRecordType::Width, DT_I32, &width.to_be_bytes())?;
            w.xy(&p.centerline)?;
            w.empty(GdsRecordType::EndEl)?;
        }
        for inst in &cell.instances {
            write_instance(&mut w, inst)?;
        }
        w.empty(GdsRecordType::EndStr)?;
    }
    w.empty(GdsRecordType::EndLib)?;
    Ok(w.out)
}

fn write_instance(w: &mut RecordWriter, inst: &Instance) -> LayoutResult<()> {
    w.empty(if inst.array.is_some() { GdsRecordType::Aref } else { GdsRecordType::Sref })?;
    w.ascii(GdsRecordType::Sname, &inst.ref_name)?;
    if inst.mirrored_x || inst.rotation != Rotation::R0 {
        let bits: u16 = if inst.mirrored_x { STRANS_REFLECT } else { 0 };
        w.record(GdsRecordType::Strans, DT_BITS, &bits.to_be_bytes())?;
        if inst.rotation != Rotation::R0 {
            w.f64s(GdsRecordType::Angle, &[inst.rotation.degrees() as f64])?;
        }
    }
    match inst.array {
        None => w.xy(&[inst.origin]),
        Some(a) => {
            let to_i16 = |v: u32| {
                i16::try_from(v).map_err(|_| LayoutError::Range(format!("array dimension {v} exceeds 32767")))
            };
            w.i16s(GdsRecordType::ColRow, &[to_i16(a.cols)?, to_i16(a.rows)?])?;
            let o = inst.origin;
            let (c, r) = (a.cols as i64, a.rows as i64);
            w.xy(&[
                o,
                Point::new(o.x + c * a.col_pitch.x, o.y + c * a.col_pitch.y),
                Point::new(o.x + r * a.row_pitch.x, o.y + r * a.row_pitch.y),
            ])
        }
    }?;
    w.empty(GdsRecordType::EndEl)
}
