//! Raw SemanticKITTI class IDs to the 19-class training space.
//!
//! Text form (same `key = value` syntax as the other configs):
//!
//! ```text
//! map.10 = 1        # raw id -> train id
//! name.10 = car     # raw id -> human name
//! train.1 = car     # train id -> column name in IoU tables
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Train IDs of bicycle, motorcycle, truck, other-vehicle, person, bicyclist,
/// motorcyclist and traffic-sign.
pub const HARD_TRAIN_CLASSES: [u16; 8] = [2, 3, 4, 5, 6, 7, 8, 19];

const SEMANTIC_KITTI: &[(u16, u16, &str)] = &[
    (0, 0, "unlabeled"),
    (1, 0, "outlier"),
    (10, 1, "car"),
    (11, 2, "bicycle"),
    (13, 5, "bus"),
    (15, 3, "motorcycle"),
    (16, 5, "on-rails"),
    (18, 4, "truck"),
    (20, 5, "other-vehicle"),
    (30, 6, "person"),
    (31, 7, "bicyclist"),
    (32, 8, "motorcyclist"),
    (40, 9, "road"),
    (44, 10, "parking"),
    (48, 11, "sidewalk"),
    (49, 12, "other-ground"),
    (50, 13, "building"),
    (51, 14, "fence"),
    (52, 0, "other-structure"),
    (60, 9, "lane-marking"),
    (70, 15, "vegetation"),
    (71, 16, "trunk"),
    (72, 17, "terrain"),
    (80, 18, "pole"),
    (81, 19, "traffic-sign"),
    (99, 0, "other-object"),
    (252, 1, "moving-car"),
    (253, 7, "moving-bicyclist"),
    (254, 6, "moving-person"),
    (255, 8, "moving-motorcyclist"),
    (256, 5, "moving-on-rails"),
    (257, 5, "moving-bus"),
    (258, 4, "moving-truck"),
    (259, 5, "moving-other-vehicle"),
];

const TRAIN_NAMES: [&str; 20] = [
    "unlabeled",
    "car",
    "bicycle",
    "motorcycle",
    "truck",
    "other-vehicle",
    "person",
    "bicyclist",
    "motorcyclist",
    "road",
    "parking",
    "sidewalk",
    "other-ground",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    learning_map: BTreeMap<u16, u16>,
    raw_names: BTreeMap<u16, String>,
    train_names: BTreeMap<u16, String>,
}

impl ClassMap {
    /// The standard SemanticKITTI mapping.
    pub fn semantic_kitti() -> Self {
        Self {
            learning_map: SEMANTIC_KITTI.iter().map(|&(r, t, _)| (r, t)).collect(),
            raw_names: SEMANTIC_KITTI
                .iter()
                .map(|&(r, _, n)| (r, n.to_string()))
                .collect(),
            train_names: TRAIN_NAMES
                .iter()
                .enumerate()
                .map(|(i, n)| (i as u16, n.to_string()))
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvConfig::parse(text)?;
        let mut map = Self {
            learning_map: BTreeMap::new(),
            raw_names: BTreeMap::new(),
            train_names: BTreeMap::new(),
        };
        for (key, value) in kv.iter() {
            let (kind, id) = key
                .split_once('.')
                .ok_or_else(|| Error::MalformedConfig(format!("class map key {key:?}")))?;
            let id: u16 = id
                .parse()
                .map_err(|e| Error::MalformedConfig(format!("class map key {key:?}: {e}")))?;
            match kind {
                "map" => {
                    let train = value
                        .parse()
                        .map_err(|e| Error::MalformedConfig(format!("{key} = {value:?}: {e}")))?;
                    map.learning_map.insert(id, train);
                }
                "name" => {
                    map.raw_names.insert(id, value.to_string());
                }
                "train" => {
                    map.train_names.insert(id, value.to_string());
                }
                _ => {
                    return Err(Error::MalformedConfig(format!(
                        "unknown class map key kind {kind:?}"
                    )))
                }
            }
        }
        if map.learning_map.is_empty() {
            return Err(Error::MalformedConfig(
                "class map has no `map.` entries".into(),
            ));
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (raw, train) in &self.learning_map {
            out += &format!("map.{raw} = {train}\n");
        }
        for (raw, name) in &self.raw_names {
            out += &format!("name.{raw} = {name}\n");
        }
        for (train, name) in &self.train_names {
            out += &format!("train.{train} = {name}\n");
        }
        out
    }

    /// Train ID for a raw ID; unknown raw IDs map to 0 (unlabeled).
    pub fn to_train(&self, raw: u16) -> u16 {
        self.learning_map.get(&raw).copied().unwrap_or(0)
    }

    /// One past the largest train ID.
    pub fn n_train_classes(&self) -> usize {
        let from_map = self.learning_map.values().copied().max().unwrap_or(0);
        let from_names = self.train_names.keys().copied().max().unwrap_or(0);
        from_map.max(from_names) as usize + 1
    }

    pub fn raw_name(&self, raw: u16) -> Option<&str> {
        self.raw_names.get(&raw).map(String::as_str)
    }

    pub fn train_name(&self, train: u16) -> String {
        self.train_names
            .get(&train)
            .cloned()
            .unwrap_or_else(|| format!("class-{train}"))
    }

    /// Every raw ID whose train ID is in `train_ids`.
    pub fn raw_ids_for(&self, train_ids: &[u16]) -> BTreeSet<u16> {
        self.learning_map
            .iter()
            .filter(|(_, t)| train_ids.contains(t))
            .map(|(&r, _)| r)
            .collect()
    }

    /// Raw IDs of the hard classes, including their moving variants.
    pub fn hard_raw_classes(&self) -> BTreeSet<u16> {
        self.raw_ids_for(&HARD_TRAIN_CLASSES)
    }
}

impl Default for ClassMap {
    fn default() -> Self {
        Self::semantic_kitti()
    }
}
