// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

/// Identifier of the not-generatable class.
pub const NG_ID: &str = "NG";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub index: usize,
    /// Generator id, or [`NG_ID`].
    pub id: String,
    pub label: String,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RegistryError {
    #[error("registry needs at least two classes, got {0}")]
    TooSmall(usize),
    #[error("registry needs exactly one NG entry, found {0}")]
    NgCount(usize),
    #[error("entry {position} has index {index}; indices must be dense from 0")]
    NotDense { position: usize, index: usize },
    #[error("duplicate class id {0:?}")]
    Duplicate(String),
    #[error("unknown class {0:?}")]
    Unknown(String),
}

/// Ordered class list of a model: one entry per output, exactly one NG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RegistryRepr", into = "RegistryRepr")]
pub struct ClassRegistry {
    entries: Vec<ClassEntry>,
    ng_index: usize,
}

#[derive(Serialize, Deserialize)]
struct RegistryRepr {
    entries: Vec<ClassEntry>,
    ng_index: usize,
}

impl TryFrom<RegistryRepr> for ClassRegistry {
    type Error = RegistryError;
    fn try_from(r: RegistryRepr) -> Result<Self, RegistryError> {
        let reg = ClassRegistry::new(r.entries)?;
        if reg.ng_index != r.ng_index {
            return Err(RegistryError::NgCount(0));
        }
        Ok(reg)
    }
}

impl From<ClassRegistry> for RegistryRepr {
    fn from(r: ClassRegistry) -> Self {
        RegistryRepr { entries: r.entries, ng_index: r.ng_index }
    }
}

impl ClassRegistry {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self, RegistryError> {
        if entries.len() < 2 {
            return Err(RegistryError::TooSmall(entries.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for (position, e) in entries.iter().enumerate() {
            if e.index != position {
                return Err(RegistryError::NotDense { position, index: e.index });
            }
            if !seen.insert(e.id.as_str()) {
                return Err(RegistryError::Duplicate(e.id.clone()));
            }
        }
        let ngs: Vec<usize> = entries.iter().filter(|e| e.id == NG_ID).map(|e| e.index).collect();
        if ngs.len() != 1 {
            return Err(RegistryError::NgCount(ngs.len()));
        }
        Ok(Self { ng_index: ngs[0], entries })
    }

    /// Generator ids in order, followed by NG as the last class.
    pub fn from_generators<S: AsRef<str>>(ids: &[S]) -> Result<Self, RegistryError> {
        let mut entries: Vec<ClassEntry> = ids
            .iter()
            .enumerate()
            .map(|(index, id)| ClassEntry { index, id: id.as_ref().to_string(), label: id.as_ref().replace('_', " ") })
            .collect();
        entries.push(ClassEntry { index: ids.len(), id: NG_ID.into(), label: "not generatable".into() });
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ng_index(&self) -> usize {
        self.ng_index
    }

    pub fn is_ng(&self, index: usize) -> bool {
        index == self.ng_index
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn id(&self, index: usize) -> &str {
        &self.entries[index].id
    }

    /// Looks a class up by id, falling back to its human label.
    pub fn index_of(&self, name: &str) -> Result<usize, RegistryError> {
        self.entries
            .iter()
            .find(|e| e.id == name)
            .or_else(|| self.entries.iter().find(|e| e.label == name))
            .map(|e| e.index)
            .ok_or_else(|| RegistryError::Unknown(name.to_string()))
    }

    /// Generator ids without the NG class.
    pub fn generator_ids(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| e.index != self.ng_index).map(|e| e.id.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ng_is_last_and_lookup_works() {
        let r = ClassRegistry::from_generators(&["inverter", "via_stack_m1_m2"]).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.ng_index(), 2);
        assert_eq!(r.index_of("via_stack_m1_m2").unwrap(), 1);
        assert_eq!(r.index_of("NG").unwrap(), 2);
        assert_eq!(r.index_of("not generatable").unwrap(), 2);
        assert!(matches!(r.index_of("nand9"), Err(RegistryError::Unknown(_))));
    }

    #[test]
    fn invalid_registries() {
        let e = |i: usize, id: &str| ClassEntry { index: i, id: id.into(), label: id.into() };
        assert!(matches!(ClassRegistry::new(vec![e(0, "NG")]), Err(RegistryError::TooSmall(1))));
        assert!(matches!(ClassRegistry::new(vec![e(0, "a"), e(1, "b")]), Err(RegistryError::NgCount(0))));
        assert!(matches!(ClassRegistry::new(vec![e(0, "a"), e(2, "NG")]), Err(RegistryError::NotDense { .. })));
        assert!(matches!(ClassRegistry::new(vec![e(0, "a"), e(1, "a"), e(2, "NG")]), Err(RegistryError::Duplicate(_))));
    }

    #[test]
    fn serde_roundtrip_validates() {
        let r = ClassRegistry::from_generators(&["a", "b"]).unwrap();
        let js = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<ClassRegistry>(&js).unwrap(), r);
        let bad = js.replace("\"NG\"", "\"X\"");
        assert!(serde_json::from_str::<ClassRegistry>(&bad).is_err());
    }
}
