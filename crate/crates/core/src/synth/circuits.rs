// SPDX-License-Identifier: Apache-2.0

use super::{GeneratorKind, ParamSet};
use crate::layout::{Boundary, Cell, LayerKey, Point, Rotation, Transform};
use crate::raster::layers::{self, ACTIVE, CONTACT, NPLUS, NWELL, POLY, PPLUS};

const CT: i64 = 40;
const CT_PITCH: i64 = 80;
const DIFF: i64 = 120;
const GATE_EXT: i64 = 60;
const IMP_ENC: i64 = 40;
const WELL_ENC: i64 = 120;
const RAIL: i64 = 80;

pub(super) struct Canvas {
    cell: Cell,
}

impl Canvas {
    pub(super) fn new() -> Self {
        Self { cell: Cell::new("gen") }
    }

    pub(super) fn rect(&mut self, layer: LayerKey, x0: i64, y0: i64, x1: i64, y1: i64) {
        self.cell.boundaries.push(Boundary::rect(layer, x0, y0, x1, y1).expect("generator drew an empty rectangle"));
    }

    /// Copies another canvas' shapes through `t`.
    fn place(&mut self, other: &Canvas, t: &Transform) {
        self.cell.boundaries.extend(other.cell.boundaries.iter().map(|b| b.transformed(t)));
    }

    pub(super) fn finish(self) -> Cell {
        self.cell
    }
}

fn contact_column(c: &mut Canvas, x: i64, y0: i64, y1: i64) {
    let n = ((y1 - y0 - CT) / CT_PITCH).max(0) + 1;
    let span = n * CT + (n - 1) * (CT_PITCH - CT);
    let start = y0 + (y1 - y0 - span) / 2;
    for k in 0..n {
        let y = start + k * CT_PITCH;
        c.rect(CONTACT, x, y, x + CT, y + CT);
    }
}

/// Multi-finger transistor with diffusion columns `0..=fingers`. Gates are
/// returned but not drawn.
struct Mos {
    cols: Vec<i64>,
    gates: Vec<(i64, i64)>,
    y0: i64,
    y1: i64,
    x1: i64,
}

fn mos(c: &mut Canvas, x: i64, y: i64, fingers: i64, w: i64, l: i64, implant: LayerKey, contacted: &[bool]) -> Mos {
    let x1 = x + fingers * l + (fingers + 1) * DIFF;
    c.rect(ACTIVE, x, y, x1, y + w);
    c.rect(implant, x - IMP_ENC, y - IMP_ENC, x1 + IMP_ENC, y + w + IMP_ENC);
    let mut cols = Vec::new();
    let mut gates = Vec::new();
    for j in 0..=fingers {
        let cx = x + j * (l + DIFF);
        cols.push(cx);
        if contacted.get(j as usize).copied().unwrap_or(true) {
            contact_column(c, cx + (DIFF - CT) / 2, y + 20, y + w - 20);
            c.rect(layers::metal(1), cx + 30, y, cx + DIFF - 30, y + w);
        }
        if j < fingers {
            gates.push((cx + DIFF, cx + DIFF + l));
        }
    }
    Mos { cols, gates, y0: y, y1: y + w, x1 }
}

fn col_center(m: &Mos, j: usize) -> i64 {
    m.cols[j] + DIFF / 2
}

/// Vertical metal1 strap on diffusion column `j` between two heights.
fn strap(c: &mut Canvas, m: &Mos, j: usize, ya: i64, yb: i64) {
    let x = col_center(m, j);
    c.rect(layers::metal(1), x - 30, ya.min(yb), x + 30, ya.max(yb));
}

fn gate_contact(c: &mut Canvas, gx0: i64, gx1: i64, y: i64) {
    let cx = (gx0 + gx1) / 2;
    c.rect(POLY, cx - 50, y, cx + 50, y + 100);
    c.rect(CONTACT, cx - CT / 2, y + 30, cx + CT / 2, y + 30 + CT);
    c.rect(layers::metal(1), cx - 40, y + 10, cx + 40, y + 90);
}

fn via1(c: &mut Canvas, x: i64, y: i64) {
    c.rect(layers::via(1), x - 20, y - 20, x + 20, y + 20);
}

fn boundary_array(c: &mut Canvas, p: &ParamSet) {
    let layer = layers::metal(p["metal"] as u8);
    for r in 0..p["rows"] {
        for k in 0..p["cols"] {
            let (x, y) = (k * p["pitch"], r * p["pitch"]);
            c.rect(layer, x, y, x + p["w"], y + p["h"]);
        }
    }
}

fn via_stack(c: &mut Canvas, p: &ParamSet, bottom: u8, top: u8) {
    let (cx, cy, cut, space, enc) = (p["cuts_x"], p["cuts_y"], p["cut"], p["space"], p["enc"]);
    let ew = cx * cut + (cx - 1) * space + 2 * enc;
    let eh = cy * cut + (cy - 1) * space + 2 * enc;
    for r in 0..p["rows"] {
        for k in 0..p["cols"] {
            let x = k * (ew + p["gap"]);
            let y = r * (eh + p["gap"]);
            for m in bottom..=top {
                c.rect(layers::metal(m), x, y, x + ew, y + eh);
            }
            for v in bottom..top {
                for i in 0..cx {
                    for j in 0..cy {
                        let vx = x + enc + i * (cut + space);
                        let vy = y + enc + j * (cut + space);
                        c.rect(layers::via(v), vx, vy, vx + cut, vy + cut);
                    }
                }
            }
        }
    }
}

fn mosfet(c: &mut Canvas, p: &ParamSet) {
    let m = mos(c, 0, 0, p["fingers"], p["w"], p["l"], NPLUS, &[]);
    for &(g0, g1) in &m.gates {
        c.rect(POLY, g0, m.y0 - GATE_EXT, g1, m.y1 + GATE_EXT);
    }
}

/// Horizontal poly resistor with contact heads; returns its extent.
fn resistor(c: &mut Canvas, x: i64, y: i64, w: i64, length: i64, vertical: bool) -> (i64, i64, i64, i64) {
    let head = 120;
    let hw = w.max(head);
    let mut r = |x0: i64, y0: i64, x1: i64, y1: i64, layer: LayerKey| {
        if vertical {
            c.rect(layer, x + y0, y + x0, x + y1, y + x1);
        } else {
            c.rect(layer, x + x0, y + y0, x + x1, y + y1);
        }
    };
    r(0, 0, length, w, POLY);
    let mid = w / 2;
    for hx in [-head, length] {
        r(hx, mid - hw / 2, hx + head, mid - hw / 2 + hw, POLY);
        r(hx + 40, mid - CT / 2, hx + 40 + CT, mid + CT / 2, CONTACT);
        r(hx + 20, mid - 40, hx + 100, mid + 40, layers::metal(1));
    }
    r(-head - IMP_ENC, mid - hw / 2 - IMP_ENC, length + head + IMP_ENC, mid + hw / 2 + IMP_ENC, PPLUS);
    if vertical {
        (x + mid - hw / 2, y - head, x + mid + hw / 2, y + length + head)
    } else {
        (x - head, y + mid - hw / 2, x + length + head, y + mid + hw / 2)
    }
}

fn poly_resistor(c: &mut Canvas, p: &ParamSet) {
    resistor(c, 0, 0, p["w"], p["len"], false);
}

#[derive(Clone, Copy, PartialEq)]
enum Logic {
    Inv,
    Nand,
    Nor,
}

/// Static CMOS gate with `k` inputs: nmos row at the bottom, pmos row above,
/// shared vertical gates, supply rails and an output strap.
fn cmos_gate(c: &mut Canvas, k: i64, wn: i64, wp: i64, l: i64, logic: Logic) -> (i64, i64) {
    let cols = (k + 1) as usize;
    let gap = 360;
    let py = wn + gap;
    let series: Vec<bool> = (0..cols).map(|j| j == 0 || j == cols - 1).collect();
    let parallel = vec![true; cols];
    let (ncon, pcon) = match logic {
        Logic::Nand => (series.clone(), parallel.clone()),
        Logic::Nor => (parallel.clone(), series.clone()),
        Logic::Inv => (parallel.clone(), parallel.clone()),
    };
    let n = mos(c, 0, 0, k, wn, l, NPLUS, &ncon);
    let pm = mos(c, 0, py, k, wp, l, PPLUS, &pcon);
    c.rect(NWELL, -WELL_ENC, py - WELL_ENC, pm.x1 + WELL_ENC, pm.y1 + WELL_ENC);
    let (x0, x1) = (-100, n.x1 + 100);
    let (vss, vdd) = (-200, pm.y1 + 120);
    c.rect(layers::metal(1), x0, vss - RAIL, x1, vss);
    c.rect(layers::metal(1), x0, vdd, x1, vdd + RAIL);
    for (i, &(g0, g1)) in n.gates.iter().enumerate() {
        c.rect(POLY, g0, -GATE_EXT, g1, pm.y1 + GATE_EXT);
        let stagger = (i as i64 % 2) * 110;
        gate_contact(c, g0, g1, wn + 60 + stagger);
    }
    // Supply and output connections.
    let out_x = match logic {
        Logic::Inv => {
            strap(c, &n, 0, vss, n.y1);
            strap(c, &pm, 0, pm.y0, vdd);
            vec![1]
        }
        Logic::Nand => {
            strap(c, &n, 0, vss, n.y1);
            for j in (0..cols).step_by(2) {
                strap(c, &pm, j, pm.y0, vdd);
            }
            (1..cols).step_by(2).chain([cols - 1]).collect()
        }
        Logic::Nor => {
            for j in (0..cols).step_by(2) {
                strap(c, &n, j, vss, n.y1);
            }
            strap(c, &pm, 0, pm.y0, vdd);
            (1..cols).step_by(2).chain([cols - 1]).collect()
        }
    };
    let mut out_cols = out_x;
    out_cols.sort_unstable();
    out_cols.dedup();
    let last = *out_cols.last().unwrap();
    strap(c, &n, last, n.y0, pm.y1);
    let bar_y = wn + 280;
    let first_x = col_center(&n, out_cols[0]);
    if out_cols.len() > 1 {
        c.rect(layers::metal(2), first_x - 30, bar_y, col_center(&n, last) + 30, bar_y + 60);
        for &j in &out_cols {
            strap(c, &pm, j, bar_y, pm.y1);
            via1(c, col_center(&n, j), bar_y + 30);
        }
    }
    (n.x1, vdd + RAIL)
}

fn inverter(c: &mut Canvas, p: &ParamSet) -> (i64, i64) {
    cmos_gate(c, 1, p["wn"], p["wp"], p["l"], Logic::Inv)
}

fn transmission_gate(c: &mut Canvas, p: &ParamSet) {
    let (wn, wp, l) = (p["wn"], p["wp"], p["l"]);
    let py = wn + 400;
    let n = mos(c, 0, 0, 1, wn, l, NPLUS, &[]);
    let pm = mos(c, 0, py, 1, wp, l, PPLUS, &[]);
    c.rect(NWELL, -WELL_ENC, py - WELL_ENC, pm.x1 + WELL_ENC, pm.y1 + WELL_ENC);
    let (g0, g1) = n.gates[0];
    c.rect(POLY, g0, -GATE_EXT - 120, g1, n.y1 + GATE_EXT);
    c.rect(POLY, g0, pm.y0 - GATE_EXT, g1, pm.y1 + GATE_EXT + 120);
    gate_contact(c, g0, g1, -GATE_EXT - 220);
    gate_contact(c, g0, g1, pm.y1 + GATE_EXT + 20);
    for j in 0..2 {
        strap(c, &n, j, n.y0, pm.y1);
    }
    c.rect(layers::metal(2), -200, n.y1 + 150, 0, n.y1 + 210);
    via1(c, col_center(&n, 0), n.y1 + 180);
    c.rect(layers::metal(2), n.x1, n.y1 + 150, n.x1 + 200, n.y1 + 210);
    via1(c, col_center(&n, 1), n.y1 + 180);
}

fn current_mirror(c: &mut Canvas, p: &ParamSet) {
    let (f, w, l) = (p["fingers"], p["w"], p["l"]);
    let a = mos(c, 0, 0, f, w, l, NPLUS, &[]);
    let b = mos(c, a.x1 + 200, 0, f, w, l, NPLUS, &[]);
    let bar = (w + GATE_EXT, w + GATE_EXT + 80);
    for &(g0, g1) in a.gates.iter().chain(&b.gates) {
        c.rect(POLY, g0, -GATE_EXT, g1, bar.1);
    }
    c.rect(POLY, a.gates[0].0, bar.0, b.gates[b.gates.len() - 1].1, bar.1);
    gate_contact(c, a.x1 + 50, a.x1 + 150, bar.0 - 10);
    // Diode connection: drain of the reference device to the gate bar.
    strap(c, &a, 1, a.y0, bar.1 + 40);
    c.rect(layers::metal(1), col_center(&a, 1) - 30, bar.1, a.x1 + 130, bar.1 + 60);
    c.rect(layers::metal(1), -100, -200 - RAIL, b.x1 + 100, -200);
    for (m, count) in [(&a, f), (&b, f)] {
        for j in (0..=count as usize).step_by(2) {
            strap(c, m, j, -200, m.y0);
        }
    }
}

fn sr_latch(c: &mut Canvas, p: &ParamSet) {
    let mut unit = Canvas::new();
    let (w, h) = cmos_gate(&mut unit, 2, p["wn"], p["wp"], p["l"], Logic::Nand);
    c.place(&unit, &Transform::identity());
    let dx = w + 300;
    c.place(&unit, &Transform::new(Rotation::R0, false, Point::new(dx, 0)));
    let y0 = p["wn"] + 120;
    for (k, (xa, xb)) in [(w - 60, dx + 250), (250, dx + w - 60)].into_iter().enumerate() {
        let y = y0 + k as i64 * 100 - 200;
        c.rect(layers::metal(2), xa.min(xb) - 30, y, xa.max(xb) + 30, y + 60);
        via1(c, xa, y + 30);
        via1(c, xb, y + 30);
    }
    c.rect(layers::metal(3), w / 2, h + 60, dx + w / 2, h + 140);
    c.rect(layers::via(2), w / 2 - 20, h + 80, w / 2 + 20, h + 120);
}

fn sense_amp(c: &mut Canvas, p: &ParamSet) {
    let mut unit = Canvas::new();
    let (w, h) = cmos_gate(&mut unit, 1, p["wn"], p["wp"], p["l"], Logic::Inv);
    let tail_h = 200 + p["wn"] / 2 + 300;
    let lift = Point::new(0, tail_h);
    c.place(&unit, &Transform::new(Rotation::R0, false, lift));
    let mirror_x = 2 * w + 200;
    c.place(&unit, &Transform::new(Rotation::R180, true, Point::new(mirror_x, tail_h)));
    let tail = mos(c, w / 2, 0, 2, p["wn"] / 2, p["l"], NPLUS, &[]);
    for &(g0, g1) in &tail.gates {
        c.rect(POLY, g0, -GATE_EXT, g1, tail.y1 + GATE_EXT);
    }
    c.rect(POLY, tail.gates[0].0, -GATE_EXT - 80, tail.gates[1].1, -GATE_EXT);
    for k in 0..2i64 {
        let y = tail_h + p["wn"] + 160 + k * 120;
        let (xa, xb) = if k == 0 { (w / 2, mirror_x - w / 3) } else { (w / 3, mirror_x - w / 2) };
        c.rect(layers::metal(2), xa - 30, y, xb + 30, y + 60);
        via1(c, xa, y + 30);
        via1(c, xb, y + 30);
    }
    c.rect(layers::metal(2), w - 30, tail.y1, w + 30, tail_h + h / 4);
}

fn resistor_bank(c: &mut Canvas, p: &ParamSet) {
    let (count, w, length, space) = (p["count"], p["w"], p["len"], p["space"]);
    let pitch = w.max(120) + space;
    let mut ext = (0, 0, 0, 0);
    for i in 0..count {
        ext = resistor(c, i * pitch, 0, w, length, true);
    }
    let mid = w / 2;
    let right = (count - 1) * pitch + mid;
    c.rect(layers::metal(1), mid - 40, -100, right + 40, -20);
    c.rect(layers::metal(1), mid - 40, length + 20, right + 40, length + 100);
    c.rect(layers::metal(2), right + 200, -100, right + 280, ext.3);
    via1(c, right + 240, -60);
}

fn cap_mom(c: &mut Canvas, p: &ParamSet) {
    let (fingers, fw, space, length) = (p["fingers"], p["fw"], p["space"], p["len"]);
    let lo = p["metal_lo"] as u8;
    let hi = (lo as i64 + p["levels"] - 1).min(8) as u8;
    let bus = 100;
    let width = fingers * (fw + space) + space;
    for m in lo..=hi {
        let layer = layers::metal(m);
        c.rect(layer, 0, 0, width, bus);
        c.rect(layer, 0, bus + space + length, width, 2 * bus + space + length + space);
        for i in 0..fingers {
            let x = space + i * (fw + space);
            if i % 2 == 0 {
                c.rect(layer, x, bus, x + fw, bus + length);
            } else {
                c.rect(layer, x, bus + space, x + fw, bus + space + length + space);
            }
        }
    }
    let top_bus = bus + space + length;
    for v in lo..hi {
        let mut x = 60;
        while x + 40 <= width - 20 {
            c.rect(layers::via(v), x, 30, x + 40, 70);
            c.rect(layers::via(v), x, top_bus + 30, x + 40, top_bus + 70);
            x += 160;
        }
    }
}

pub(super) fn build(kind: GeneratorKind, p: &ParamSet) -> Cell {
    let mut c = Canvas::new();
    match kind {
        GeneratorKind::BoundaryArray => boundary_array(&mut c, p),
        GeneratorKind::ViaStack { bottom, top } => via_stack(&mut c, p, bottom, top),
        GeneratorKind::Mosfet => mosfet(&mut c, p),
        GeneratorKind::PolyResistor => poly_resistor(&mut c, p),
        GeneratorKind::Inverter => {
            inverter(&mut c, p);
        }
        GeneratorKind::Nand2 => {
            cmos_gate(&mut c, 2, p["wn"], p["wp"], p["l"], Logic::Nand);
        }
        GeneratorKind::Nand3 => {
            cmos_gate(&mut c, 3, p["wn"], p["wp"], p["l"], Logic::Nand);
        }
        GeneratorKind::Nor2 => {
            cmos_gate(&mut c, 2, p["wn"], p["wp"], p["l"], Logic::Nor);
        }
        GeneratorKind::TransmissionGate => transmission_gate(&mut c, p),
        GeneratorKind::CurrentMirror => current_mirror(&mut c, p),
        GeneratorKind::SrLatchLike => sr_latch(&mut c, p),
        GeneratorKind::SenseAmpLike => sense_amp(&mut c, p),
        GeneratorKind::ResistorBankUnit => resistor_bank(&mut c, p),
        GeneratorKind::CapMom => cap_mom(&mut c, p),
    }
    c.finish()
}
