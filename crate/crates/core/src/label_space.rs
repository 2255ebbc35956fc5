//! Single-class and composite label spaces.
//!
//! Class 0 is the correct action; classes `1..=n_errors` are single-error
//! actions. Composite labels are built only from error classes and must
//! not contain any pair from the exclusion list.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DEFAULT_CONFIG: &str = include_str!("../assets/labelspace_default.toml");

/// Largest composite the label space supports.
pub const MAX_MEMBERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u16);

impl ClassId {
    pub const CORRECT: ClassId = ClassId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_error(self) -> bool {
        self.0 != 0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Single,
    Pair,
    Triple,
    Quadruple,
}

impl LabelKind {
    pub fn from_len(len: usize) -> Option<Self> {
        match len {
            1 => Some(LabelKind::Single),
            2 => Some(LabelKind::Pair),
            3 => Some(LabelKind::Triple),
            4 => Some(LabelKind::Quadruple),
            _ => None,
        }
    }
}

/// A sorted, duplicate-free set of class ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u16>", into = "Vec<u16>")]
pub struct CompositeLabel {
    members: Vec<ClassId>,
}

impl CompositeLabel {
    pub fn new(ids: impl IntoIterator<Item = ClassId>) -> Result<Self> {
        let mut members: Vec<ClassId> = ids.into_iter().collect();
        members.sort_unstable();
        let len = members.len();
        members.dedup();
        if members.len() != len {
            return Err(Error::Label(format!("duplicate member in {members:?}")));
        }
        if LabelKind::from_len(len).is_none() {
            return Err(Error::Label(format!(
                "label must have 1..={MAX_MEMBERS} members, got {len}"
            )));
        }
        if len > 1 && members.contains(&ClassId::CORRECT) {
            return Err(Error::Label(
                "class 0 cannot appear inside a composite label".into(),
            ));
        }
        Ok(Self { members })
    }

    pub fn single(id: ClassId) -> Self {
        Self { members: vec![id] }
    }

    pub fn members(&self) -> &[ClassId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn kind(&self) -> LabelKind {
        LabelKind::from_len(self.members.len()).expect("validated at construction")
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.members.binary_search(&id).is_ok()
    }

    /// Human-readable key such as `1+5+9`.
    pub fn key(&self) -> String {
        self.members
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Short stable hash of [`Self::key`], used for on-disk directory names.
    pub fn label_hash(&self) -> String {
        let digest = Sha256::digest(self.key().as_bytes());
        hex::encode(&digest[..4])
    }

    /// Every unordered 2-subset of the members.
    pub fn pairs(&self) -> impl Iterator<Item = (ClassId, ClassId)> + '_ {
        let m = &self.members;
        (0..m.len()).flat_map(move |i| (i + 1..m.len()).map(move |j| (m[i], m[j])))
    }
}

impl TryFrom<Vec<u16>> for CompositeLabel {
    type Error = Error;

    fn try_from(ids: Vec<u16>) -> Result<Self> {
        CompositeLabel::new(ids.into_iter().map(ClassId))
    }
}

impl From<CompositeLabel> for Vec<u16> {
    fn from(label: CompositeLabel) -> Self {
        label.members.into_iter().map(|c| c.0).collect()
    }
}

impl fmt::Display for CompositeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.key().replace('+', ","))
    }
}

/// Canonically stored unordered pairs of error classes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExclusionList {
    pairs: BTreeSet<(ClassId, ClassId)>,
}

impl ExclusionList {
    pub fn new(pairs: impl IntoIterator<Item = (ClassId, ClassId)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if !a.is_error() || !b.is_error() {
                return Err(Error::Label(format!(
                    "exclusion ({a}, {b}) references class 0"
                )));
            }
            if a == b {
                return Err(Error::Label(format!("exclusion ({a}, {b}) is degenerate")));
            }
            set.insert(canonical(a, b));
        }
        Ok(Self { pairs: set })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contains(&self, a: ClassId, b: ClassId) -> bool {
        self.pairs.contains(&canonical(a, b))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, ClassId)> + '_ {
        self.pairs.iter().copied()
    }

    fn validate_range(&self, n_errors: usize) -> Result<()> {
        for (a, b) in self.iter() {
            if b.index() > n_errors {
                return Err(Error::Label(format!(
                    "exclusion ({a}, {b}) is outside 1..={n_errors}"
                )));
            }
        }
        Ok(())
    }
}

fn canonical(a: ClassId, b: ClassId) -> (ClassId, ClassId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Largest supported number of error classes.
pub const MAX_ERRORS: usize = 255;

/// All unordered pairs of error ids in `1..=n_errors` that are not excluded.
pub fn enumerate_pairs(n_errors: usize, exclusions: &ExclusionList) -> Result<Vec<CompositeLabel>> {
    if !(2..=MAX_ERRORS).contains(&n_errors) {
        return Err(Error::Label(format!("need 2..={MAX_ERRORS} error classes, got {n_errors}")));
    }
    exclusions.validate_range(n_errors)?;
    let mut out = Vec::with_capacity(n_errors * (n_errors - 1) / 2);
    for a in 1..=n_errors as u16 {
        for b in a + 1..=n_errors as u16 {
            let (a, b) = (ClassId(a), ClassId(b));
            if !exclusions.contains(a, b) {
                out.push(CompositeLabel { members: vec![a, b] });
            }
        }
    }
    Ok(out)
}

/// True iff no 2-subset of `candidate` is excluded.
pub fn filter_composite(candidate: &CompositeLabel, exclusions: &ExclusionList) -> bool {
    first_excluded(candidate, exclusions).is_none()
}

fn first_excluded(
    candidate: &CompositeLabel,
    exclusions: &ExclusionList,
) -> Option<(ClassId, ClassId)> {
    candidate.pairs().find(|&(a, b)| exclusions.contains(a, b))
}

/// Binary indicator vector over the score space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiHot(Vec<u8>);

impl MultiHot {
    pub fn zeros(n: usize) -> Self {
        MultiHot(vec![0; n])
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.0.iter().map(|&b| b as usize).sum()
    }

    pub fn or(&self, other: &MultiHot) -> Result<MultiHot> {
        if self.len() != other.len() {
            return Err(Error::shape(
                "multi_hot_or",
                format!("{} vs {}", self.len(), other.len()),
            ));
        }
        Ok(MultiHot(
            self.0.iter().zip(&other.0).map(|(a, b)| a | b).collect(),
        ))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }
}

pub fn encode_multi_hot(label: &CompositeLabel, n_classes: usize) -> Result<MultiHot> {
    let mut bits = vec![0u8; n_classes];
    for &c in label.members() {
        if c.index() >= n_classes {
            return Err(Error::Label(format!(
                "member {c} does not fit in {n_classes} classes"
            )));
        }
        bits[c.index()] = 1;
    }
    Ok(MultiHot(bits))
}

/// On-disk description of a label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpaceConfig {
    pub n_errors: usize,
    #[serde(default)]
    pub exclusions: Vec<[u16; 2]>,
    #[serde(default)]
    pub triples: Vec<Vec<u16>>,
    #[serde(default)]
    pub quadruples: Vec<Vec<u16>>,
    #[serde(default)]
    pub names: BTreeMap<String, String>,
}

impl LabelSpaceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_owned()),
            _ => Error::Io(e),
        })?;
        Self::from_toml_str(&text)
    }

    /// Pairs only, nothing excluded.
    pub fn unconstrained(n_errors: usize) -> Self {
        Self {
            n_errors,
            exclusions: Vec::new(),
            triples: Vec::new(),
            quadruples: Vec::new(),
            names: BTreeMap::new(),
        }
    }

    pub fn default_text() -> &'static str {
        DEFAULT_CONFIG
    }
}

impl Default for LabelSpaceConfig {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG).expect("bundled label space config parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelSpace {
    n_errors: usize,
    singles: Vec<CompositeLabel>,
    pairs: Vec<CompositeLabel>,
    triples: Vec<CompositeLabel>,
    quadruples: Vec<CompositeLabel>,
    exclusions: ExclusionList,
    names: BTreeMap<u16, String>,
}

impl LabelSpace {
    pub fn n_errors(&self) -> usize {
        self.n_errors
    }

    /// Width of the score space: the correct class plus every error class.
    pub fn n_classes(&self) -> usize {
        self.n_errors + 1
    }

    pub fn singles(&self) -> &[CompositeLabel] {
        &self.singles
    }

    pub fn pairs(&self) -> &[CompositeLabel] {
        &self.pairs
    }

    pub fn triples(&self) -> &[CompositeLabel] {
        &self.triples
    }

    pub fn quadruples(&self) -> &[CompositeLabel] {
        &self.quadruples
    }

    pub fn exclusions(&self) -> &ExclusionList {
        &self.exclusions
    }

    pub fn error_classes(&self) -> impl Iterator<Item = ClassId> {
        (1..=self.n_errors as u16).map(ClassId)
    }

    /// Pairs, then triples, then quadruples.
    pub fn composites(&self) -> impl Iterator<Item = &CompositeLabel> {
        self.pairs
            .iter()
            .chain(&self.triples)
            .chain(&self.quadruples)
    }

    pub fn n_composites(&self) -> usize {
        self.pairs.len() + self.triples.len() + self.quadruples.len()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(&id.0).map(String::as_str)
    }

    /// Audit document; byte-identical for identical configs.
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn build_label_space(config: &LabelSpaceConfig) -> Result<LabelSpace> {
    let n_errors = config.n_errors;
    let exclusions = ExclusionList::new(
        config
            .exclusions
            .iter()
            .map(|&[a, b]| (ClassId(a), ClassId(b))),
    )?;
    let pairs = enumerate_pairs(n_errors, &exclusions)?;
    let triples = multi_errors(&config.triples, 3, n_errors, &exclusions)?;
    let quadruples = multi_errors(&config.quadruples, 4, n_errors, &exclusions)?;
    let singles = (0..=n_errors as u16)
        .map(|c| CompositeLabel::single(ClassId(c)))
        .collect();
    let mut names = BTreeMap::new();
    for (key, name) in &config.names {
        let id: u16 = key
            .parse()
            .map_err(|_| Error::Config(format!("display-name key {key:?} is not a class id")))?;
        if id as usize > n_errors {
            return Err(Error::Config(format!("display name for unknown class {id}")));
        }
        names.insert(id, name.clone());
    }
    Ok(LabelSpace {
        n_errors,
        singles,
        pairs,
        triples,
        quadruples,
        exclusions,
        names,
    })
}

fn multi_errors(
    lists: &[Vec<u16>],
    size: usize,
    n_errors: usize,
    exclusions: &ExclusionList,
) -> Result<Vec<CompositeLabel>> {
    let mut out = BTreeSet::new();
    for ids in lists {
        if ids.len() != size {
            return Err(Error::Label(format!(
                "expected {size} members, got {ids:?}"
            )));
        }
        let label = CompositeLabel::new(ids.iter().copied().map(ClassId))?;
        if let Some(&bad) = label.members().iter().find(|c| c.index() > n_errors) {
            return Err(Error::Label(format!("{label}: class {bad} is out of range")));
        }
        if let Some((a, b)) = first_excluded(&label, exclusions) {
            return Err(Error::Label(format!(
                "{label} contains excluded pair {{{a},{b}}}"
            )));
        }
        if !out.insert(label.clone()) {
            return Err(Error::Label(format!("{label} listed twice")));
        }
    }
    Ok(out.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u16]) -> CompositeLabel {
        CompositeLabel::new(v.iter().copied().map(ClassId)).unwrap()
    }

    fn excl(v: &[[u16; 2]]) -> ExclusionList {
        ExclusionList::new(v.iter().map(|&[a, b]| (ClassId(a), ClassId(b)))).unwrap()
    }

    #[test]
    fn thirteen_errors_give_78_pairs() {
        assert_eq!(enumerate_pairs(13, &ExclusionList::empty()).unwrap().len(), 78);
    }

    #[test]
    fn default_exclusions_leave_59_pairs() {
        let cfg = LabelSpaceConfig::default();
        assert_eq!(cfg.exclusions.len(), 19);
        let e = excl(&cfg.exclusions);
        assert_eq!(enumerate_pairs(13, &e).unwrap().len(), 59);
    }

    #[test]
    fn two_errors_single_pair() {
        assert_eq!(
            enumerate_pairs(2, &ExclusionList::empty()).unwrap(),
            vec![ids(&[1, 2])]
        );
    }

    #[test]
    fn pairs_are_canonically_sorted() {
        let pairs = enumerate_pairs(5, &excl(&[[3, 2]])).unwrap();
        let mut sorted = pairs.clone();
        sorted.sort();
        assert_eq!(pairs, sorted);
        assert!(!pairs.contains(&ids(&[2, 3])));
    }

    #[test]
    fn exclusion_with_class_zero_rejected() {
        let err = ExclusionList::new([(ClassId(0), ClassId(3))]).unwrap_err();
        assert!(matches!(err, Error::Label(_)));
    }

    #[test]
    fn out_of_range_exclusion_rejected() {
        let e = excl(&[[1, 14]]);
        assert!(enumerate_pairs(13, &e).is_err());
        assert!(enumerate_pairs(1, &ExclusionList::empty()).is_err());
    }

    #[test]
    fn filter_examples() {
        assert!(!filter_composite(&ids(&[1, 2]), &excl(&[[1, 2]])));
        assert!(!filter_composite(&ids(&[1, 2, 3]), &excl(&[[2, 3]])));
        assert!(filter_composite(&ids(&[1, 4]), &excl(&[[1, 2]])));
    }

    #[test]
    fn multi_hot_examples() {
        assert_eq!(encode_multi_hot(&ids(&[2]), 4).unwrap().bits(), &[0, 0, 1, 0]);
        assert_eq!(encode_multi_hot(&ids(&[1, 3]), 4).unwrap().bits(), &[0, 1, 0, 1]);
        assert_eq!(encode_multi_hot(&ids(&[1, 2, 3, 4]), 14).unwrap().popcount(), 4);
        assert!(encode_multi_hot(&ids(&[1, 4]), 4).is_err());
    }

    #[test]
    fn label_validation() {
        assert!(CompositeLabel::new([ClassId(1), ClassId(1)]).is_err());
        assert!(CompositeLabel::new([]).is_err());
        assert!(CompositeLabel::new((1..=5).map(ClassId)).is_err());
        assert!(CompositeLabel::new([ClassId(0), ClassId(2)]).is_err());
        let l = ids(&[9, 1, 5]);
        assert_eq!(l.members(), &[ClassId(1), ClassId(5), ClassId(9)]);
        assert_eq!(l.kind(), LabelKind::Triple);
        assert_eq!(l.key(), "1+5+9");
        assert_eq!(l.label_hash().len(), 8);
    }

    #[test]
    fn default_space_counts() {
        let space = build_label_space(&LabelSpaceConfig::default()).unwrap();
        assert_eq!(space.singles().len(), 14);
        assert_eq!(space.pairs().len(), 59);
        assert_eq!(space.triples().len(), 10);
        assert_eq!(space.quadruples().len(), 5);
        assert_eq!(space.n_composites(), 74);
        assert_eq!(space.n_classes(), 14);
        assert_eq!(space.name(ClassId(1)), Some("Overlap Hands"));
    }

    #[test]
    fn empty_config_is_pairs_only() {
        let space = build_label_space(&LabelSpaceConfig::unconstrained(13)).unwrap();
        assert_eq!(space.pairs().len(), 78);
        assert_eq!(space.n_composites(), 78);
    }

    #[test]
    fn error_count_is_bounded() {
        assert!(build_label_space(&LabelSpaceConfig::unconstrained(1)).is_err());
        assert!(build_label_space(&LabelSpaceConfig::unconstrained(MAX_ERRORS)).is_ok());
        // would wrap the u16 class ids
        assert!(build_label_space(&LabelSpaceConfig::unconstrained(65_537)).is_err());
    }

    #[test]
    fn triple_with_excluded_pair_is_rejected() {
        let mut cfg = LabelSpaceConfig::unconstrained(13);
        cfg.exclusions = vec![[2, 3]];
        cfg.triples = vec![vec![1, 2, 3]];
        let err = build_label_space(&cfg).unwrap_err().to_string();
        assert!(err.contains("{2,3}"), "{err}");
    }

    #[test]
    fn wrong_arity_and_duplicates_rejected() {
        let mut cfg = LabelSpaceConfig::unconstrained(13);
        cfg.triples = vec![vec![1, 2]];
        assert!(build_label_space(&cfg).is_err());
        cfg.triples = vec![vec![1, 2, 4], vec![4, 2, 1]];
        assert!(build_label_space(&cfg).is_err());
        cfg.triples = vec![vec![1, 2, 14]];
        assert!(build_label_space(&cfg).is_err());
    }

    #[test]
    fn serialization_is_deterministic() {
        let a = build_label_space(&LabelSpaceConfig::default()).unwrap();
        let b = build_label_space(&LabelSpaceConfig::default()).unwrap();
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
    }

    #[test]
    fn config_parse_errors_are_reported() {
        assert!(LabelSpaceConfig::from_toml_str("n_errors = \"x\"").is_err());
        assert!(LabelSpaceConfig::from_toml_str("n_errors = 3\nbogus = 1").is_err());
        let cfg = LabelSpaceConfig::from_toml_str("n_errors = 3\n[names]\nfoo = \"x\"").unwrap();
        assert!(build_label_space(&cfg).is_err());
    }
}
