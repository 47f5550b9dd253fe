//! Per-point label model: class remapping, the packed panoptic encoding and
//! instance segments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Instances per scan are bounded by the packed encoding `class * 1000 + instance`.
pub const INSTANCE_DIVISOR: u32 = 1000;
pub const MAX_INSTANCE_ID: u32 = INSTANCE_DIVISOR - 1;

/// Default minimum-size filter: an instance is evaluated iff it has more than 15 points.
pub const DEFAULT_MIN_POINTS: usize = 15;

/// Split a packed label into `(class_id, instance_id)`.
#[inline]
pub fn decode_panoptic(raw: u32) -> (u32, u32) {
    (raw / INSTANCE_DIVISOR, raw % INSTANCE_DIVISOR)
}

/// Pack `(class_id, instance_id)` into one label value.
#[inline]
pub fn encode_panoptic(class_id: u32, instance_id: u32) -> Result<u32> {
    if instance_id > MAX_INSTANCE_ID {
        return Err(Error::InstanceOutOfRange(instance_id));
    }
    class_id
        .checked_mul(INSTANCE_DIVISOR)
        .and_then(|c| c.checked_add(instance_id))
        .ok_or(Error::InstanceOutOfRange(instance_id))
}

/// One row of a class map document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMapEntry {
    pub raw_id: u32,
    pub eval_id: u32,
    /// Name of the evaluation class.
    pub name: String,
    /// Name of the raw class, when it differs from the evaluation class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_name: Option<String>,
    pub is_thing: bool,
    pub is_ignore: bool,
}

/// Serialized shape of a [`ClassMap`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMapDocument {
    pub num_eval_classes: u32,
    pub entries: Vec<ClassMapEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EvalClass {
    name: String,
    is_thing: bool,
}

/// Raw-to-evaluation class remapping with thing/stuff/ignore flags.
///
/// Evaluation ids form the contiguous range `0..num_eval_classes`; every
/// ignored raw class maps to a single reserved ignore id outside that range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    entries: Vec<ClassMapEntry>,
    classes: Vec<EvalClass>,
    ignore_id: u32,
    raw_lookup: BTreeMap<u32, u32>,
}

impl ClassMap {
    pub fn from_entries(num_eval_classes: u32, entries: Vec<ClassMapEntry>) -> Result<Self> {
        let invalid = |msg: String| Error::InvalidClassMap(msg);
        let mut raw_lookup = BTreeMap::new();
        let mut classes: Vec<Option<EvalClass>> = vec![None; num_eval_classes as usize];
        let mut ignore_id = None;

        for e in &entries {
            if raw_lookup.insert(e.raw_id, e.eval_id).is_some() {
                return Err(invalid(format!("raw id {} is listed twice", e.raw_id)));
            }
            if e.is_thing && e.is_ignore {
                return Err(invalid(format!(
                    "raw id {} is flagged both thing and ignore",
                    e.raw_id
                )));
            }
            if e.is_ignore {
                if e.eval_id < num_eval_classes {
                    return Err(invalid(format!(
                        "ignore entry {} uses evaluation id {} inside 0..{}",
                        e.raw_id, e.eval_id, num_eval_classes
                    )));
                }
                match ignore_id {
                    None => ignore_id = Some(e.eval_id),
                    Some(id) if id != e.eval_id => {
                        return Err(invalid(format!(
                            "ignore entries use two different ids ({id} and {})",
                            e.eval_id
                        )))
                    }
                    _ => {}
                }
                continue;
            }
            let slot = classes.get_mut(e.eval_id as usize).ok_or_else(|| {
                invalid(format!(
                    "evaluation id {} of raw {} is outside 0..{}",
                    e.eval_id, e.raw_id, num_eval_classes
                ))
            })?;
            match slot {
                None => {
                    *slot = Some(EvalClass {
                        name: e.name.clone(),
                        is_thing: e.is_thing,
                    })
                }
                Some(existing) if existing.is_thing != e.is_thing => {
                    return Err(invalid(format!(
                        "evaluation id {} is both thing and stuff",
                        e.eval_id
                    )))
                }
                Some(_) => {}
            }
        }

        let classes = classes
            .into_iter()
            .enumerate()
            .map(|(id, c)| c.ok_or_else(|| invalid(format!("evaluation id {id} has no entry"))))
            .collect::<Result<Vec<_>>>()?;

        let ignore_id = ignore_id.unwrap_or(if num_eval_classes < 255 {
            255
        } else {
            num_eval_classes
        });
        Ok(Self {
            entries,
            classes,
            ignore_id,
            raw_lookup,
        })
    }

    /// Map whose raw ids are already evaluation ids.
    pub fn identity(classes: &[(&str, bool)]) -> Self {
        let entries = classes
            .iter()
            .enumerate()
            .map(|(id, (name, is_thing))| ClassMapEntry {
                raw_id: id as u32,
                eval_id: id as u32,
                name: (*name).to_string(),
                raw_name: None,
                is_thing: *is_thing,
                is_ignore: false,
            })
            .chain(std::iter::once(ClassMapEntry {
                raw_id: 255,
                eval_id: 255,
                name: "void".to_string(),
                raw_name: None,
                is_thing: false,
                is_ignore: true,
            }))
            .collect();
        Self::from_entries(classes.len() as u32, entries).expect("identity class map is valid")
    }

    /// Identity map over this map's evaluation space, for labels that were
    /// already remapped.
    pub fn eval_space(&self) -> Self {
        let entries = self
            .classes
            .iter()
            .enumerate()
            .map(|(id, c)| ClassMapEntry {
                raw_id: id as u32,
                eval_id: id as u32,
                name: c.name.clone(),
                raw_name: None,
                is_thing: c.is_thing,
                is_ignore: false,
            })
            .chain(std::iter::once(ClassMapEntry {
                raw_id: self.ignore_id,
                eval_id: self.ignore_id,
                name: "void".to_string(),
                raw_name: None,
                is_thing: false,
                is_ignore: true,
            }))
            .collect();
        Self::from_entries(self.num_eval_classes(), entries).expect("evaluation space map is valid")
    }

    /// The 32-class to 16-class challenge mapping (10 thing, 6 stuff classes).
    pub fn panoptic_nuscenes() -> Self {
        Self::from_json_str(include_str!("../data/classmap_panoptic_nuscenes.json"))
            .expect("bundled class map is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ClassMapDocument =
            serde_json::from_str(text).map_err(|e| Error::InvalidClassMap(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn from_document(doc: ClassMapDocument) -> Result<Self> {
        Self::from_entries(doc.num_eval_classes, doc.entries)
    }

    pub fn to_document(&self) -> ClassMapDocument {
        ClassMapDocument {
            num_eval_classes: self.num_eval_classes(),
            entries: self.entries.clone(),
        }
    }

    pub fn num_eval_classes(&self) -> u32 {
        self.classes.len() as u32
    }

    pub fn ignore_id(&self) -> u32 {
        self.ignore_id
    }

    pub fn entries(&self) -> &[ClassMapEntry] {
        &self.entries
    }

    pub fn eval_id(&self, raw_id: u32) -> Result<u32> {
        self.raw_lookup
            .get(&raw_id)
            .copied()
            .ok_or(Error::UnknownRawClass(raw_id))
    }

    pub fn name(&self, eval_id: u32) -> &str {
        self.classes
            .get(eval_id as usize)
            .map(|c| c.name.as_str())
            .unwrap_or("void")
    }

    #[inline]
    pub fn is_thing(&self, eval_id: u32) -> bool {
        self.classes
            .get(eval_id as usize)
            .is_some_and(|c| c.is_thing)
    }

    #[inline]
    pub fn is_stuff(&self, eval_id: u32) -> bool {
        self.classes
            .get(eval_id as usize)
            .is_some_and(|c| !c.is_thing)
    }

    /// Everything outside `0..num_eval_classes` is treated as ignore.
    #[inline]
    pub fn is_ignore(&self, eval_id: u32) -> bool {
        eval_id >= self.num_eval_classes()
    }

    pub fn thing_classes(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.num_eval_classes()).filter(|&c| self.is_thing(c))
    }

    pub fn stuff_classes(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.num_eval_classes()).filter(|&c| self.is_stuff(c))
    }

    /// True when every raw id maps to itself.
    pub fn is_identity(&self) -> bool {
        self.raw_lookup.iter().all(|(raw, eval)| raw == eval)
    }
}

/// Per-point semantic class and instance id for one scan.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScanLabels {
    semantic: Vec<u32>,
    instance: Vec<u32>,
}

impl ScanLabels {
    pub fn new(semantic: Vec<u32>, instance: Vec<u32>) -> Result<Self> {
        if semantic.len() != instance.len() {
            return Err(Error::LengthMismatch {
                gt: semantic.len(),
                pred: instance.len(),
            });
        }
        if let Some(&bad) = instance.iter().find(|&&i| i > MAX_INSTANCE_ID) {
            return Err(Error::InstanceOutOfRange(bad));
        }
        Ok(Self { semantic, instance })
    }

    /// Labels with no instances.
    pub fn semantic_only(semantic: Vec<u32>) -> Self {
        let instance = vec![0; semantic.len()];
        Self { semantic, instance }
    }

    pub fn from_packed(packed: &[u32]) -> Self {
        let (semantic, instance) = packed.iter().map(|&raw| decode_panoptic(raw)).unzip();
        Self { semantic, instance }
    }

    pub fn to_packed(&self) -> Result<Vec<u32>> {
        self.semantic
            .iter()
            .zip(&self.instance)
            .map(|(&c, &i)| encode_panoptic(c, i))
            .collect()
    }

    #[inline]
    pub fn point_count(&self) -> usize {
        self.semantic.len()
    }

    #[inline]
    pub fn semantic(&self) -> &[u32] {
        &self.semantic
    }

    #[inline]
    pub fn instance(&self) -> &[u32] {
        &self.instance
    }

    pub fn into_parts(self) -> (Vec<u32>, Vec<u32>) {
        (self.semantic, self.instance)
    }

    /// Apply the same point permutation to both arrays. `order[k]` is the
    /// source index of the point placed at position `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            semantic: order.iter().map(|&k| self.semantic[k]).collect(),
            instance: order.iter().map(|&k| self.instance[k]).collect(),
        }
    }
}

/// Replace raw semantic ids by evaluation ids. Stuff and ignore points lose
/// their instance id; ignored points all carry the map's ignore id.
pub fn remap(scan: &ScanLabels, map: &ClassMap) -> Result<ScanLabels> {
    let mut semantic = Vec::with_capacity(scan.point_count());
    let mut instance = Vec::with_capacity(scan.point_count());
    // Raw ids repeat heavily within a scan.
    let mut last: Option<(u32, u32)> = None;
    for (&raw, &inst) in scan.semantic.iter().zip(&scan.instance) {
        let eval = match last {
            Some((r, e)) if r == raw => e,
            _ => {
                let e = map.eval_id(raw)?;
                last = Some((raw, e));
                e
            }
        };
        semantic.push(eval);
        instance.push(if map.is_thing(eval) { inst } else { 0 });
    }
    Ok(ScanLabels { semantic, instance })
}

/// Temporally ordered scans of one sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SequenceLabels {
    pub sequence_id: String,
    pub scans: Vec<(String, ScanLabels)>,
}

impl SequenceLabels {
    pub fn new(sequence_id: impl Into<String>) -> Self {
        Self {
            sequence_id: sequence_id.into(),
            scans: Vec::new(),
        }
    }

    pub fn push(&mut self, token: impl Into<String>, labels: ScanLabels) {
        self.scans.push((token.into(), labels));
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = &ScanLabels> {
        self.scans.iter().map(|(_, s)| s)
    }
}

/// Points of one thing instance in one scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub class_id: u32,
    pub instance_id: u32,
    /// Ascending point indices.
    pub point_indices: Vec<u32>,
}

impl Segment {
    #[inline]
    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

/// One segment per distinct `(class, instance != 0)` pair among thing
/// classes, ordered by `(class, instance)`.
pub fn extract_segments(scan: &ScanLabels, map: &ClassMap) -> Vec<Segment> {
    let mut groups: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    for (idx, (&class_id, &instance_id)) in scan.semantic.iter().zip(&scan.instance).enumerate() {
        if instance_id != 0 && map.is_thing(class_id) {
            groups
                .entry((class_id, instance_id))
                .or_default()
                .push(idx as u32);
        }
    }
    groups
        .into_iter()
        .map(|((class_id, instance_id), point_indices)| Segment {
            class_id,
            instance_id,
            point_indices,
        })
        .collect()
}

/// Keep segments with strictly more than `threshold` points.
pub fn filter_min_points(segments: Vec<Segment>, threshold: usize) -> Vec<Segment> {
    segments
        .into_iter()
        .filter(|s| s.len() > threshold)
        .collect()
}

/// Which side of the evaluation the minimum-size filter applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterTarget {
    Gt,
    Pred,
    #[default]
    Both,
}

/// Minimum instance size filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinPointsFilter {
    pub min_points: usize,
    pub apply_to: FilterTarget,
}

impl Default for MinPointsFilter {
    fn default() -> Self {
        Self {
            min_points: DEFAULT_MIN_POINTS,
            apply_to: FilterTarget::Both,
        }
    }
}

impl MinPointsFilter {
    pub fn disabled() -> Self {
        Self {
            min_points: 0,
            apply_to: FilterTarget::Both,
        }
    }

    pub fn gt_threshold(&self) -> usize {
        match self.apply_to {
            FilterTarget::Gt | FilterTarget::Both => self.min_points,
            FilterTarget::Pred => 0,
        }
    }

    pub fn pred_threshold(&self) -> usize {
        match self.apply_to {
            FilterTarget::Pred | FilterTarget::Both => self.min_points,
            FilterTarget::Gt => 0,
        }
    }
}
