// SPDX-License-Identifier: Apache-2.0

use super::{LayoutError, LayoutResult, Library, Transform};

/// One placed single reference met while walking down from a top cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    pub parent: String,
    pub child: String,
    /// Index of the instance in the parent's instance list.
    pub instance_index: usize,
    /// Row-major element index inside an array reference (0 for plain ones).
    pub element: usize,
    /// 1 for instances placed directly in the top cell.
    pub depth: usize,
    /// Maps child coordinates into top-cell coordinates.
    pub transform: Transform,
    /// Slash-separated instance path from the top cell.
    pub path: String,
}

/// Depth-first pre-order walk over every placement below `top`, with array
/// references expanded element by element.
pub fn hierarchy_order(lib: &Library, top: &str) -> LayoutResult<Vec<Visit>> {
    if !lib.cells.contains_key(top) {
        return Err(LayoutError::NotFound(top.to_string()));
    }
    let mut out = Vec::new();
    walk(lib, top, &Transform::identity(), 1, top, &mut out)?;
    Ok(out)
}

/// Path segment naming one placement: `REF#index` plus `@element` for arrays.
pub(crate) fn path_segment(ref_name: &str, index: usize, element: Option<usize>) -> String {
    match element {
        Some(e) => format!("{ref_name}#{index}@{e}"),
        None => format!("{ref_name}#{index}"),
    }
}

fn walk(
    lib: &Library,
    name: &str,
    t: &Transform,
    depth: usize,
    prefix: &str,
    out: &mut Vec<Visit>,
) -> LayoutResult<()> {
    let cell = lib.cells.get(name).ok_or_else(|| LayoutError::Link(name.to_string()))?;
    for (index, inst) in cell.instances.iter().enumerate() {
        let is_array = inst.array.is_some();
        for (element, placed) in inst.expand().into_iter().enumerate() {
            let ct = t.then_after(&placed.transform());
            let path = format!(
                "{prefix}/{}",
                path_segment(&inst.ref_name, index, is_array.then_some(element))
            );
            out.push(Visit {
                parent: name.to_string(),
                child: inst.ref_name.clone(),
                instance_index: index,
                element,
                depth,
                transform: ct,
                path: path.clone(),
            });
            walk(lib, &inst.ref_name, &ct, depth + 1, &path, out)?;
        }
    }
    Ok(())
}
