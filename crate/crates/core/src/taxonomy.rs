//! Discipline hierarchy and the topic-path codec.
//!
//! Disciplines are identified by hierarchical code strings: one uppercase
//! letter at level 1, with two decimal digits appended per deeper level
//! (`F`, `F06`, `F0601`, ...). The code fully determines a node's level and
//! its parent, so a taxonomy document only needs to list codes.
//!
//! A topic path is the per-level view of a code set: level `k` holds every
//! length-`k` prefix of every code, and a reserved stop marker terminates
//! the path in its last set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node identifier. Id 0 is reserved for the synthetic root.
pub type NodeId = u32;

/// Reserved id of the root node.
pub const ROOT_ID: NodeId = 0;

/// Marker string used for the stop token in serialized paths.
pub const STOP_MARKER: &str = "<stop>";

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("duplicate code {0}")]
    DuplicateCode(String),
    #[error("orphan node {0}: parent prefix not present")]
    OrphanNode(String),
    #[error("cycle detected at {0}")]
    CycleDetected(String),
    #[error("level mismatch for {code}: declared {declared}, code implies {computed}")]
    LevelMismatch {
        code: String,
        declared: u8,
        computed: u8,
    },
    #[error("unknown code {0}")]
    UnknownCode(String),
    #[error("incoherent path: {0}")]
    IncoherentPath(String),
    #[error("malformed taxonomy document: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One discipline node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discipline {
    pub id: NodeId,
    pub code: String,
    pub level: u8,
    /// Parent id; `ROOT_ID` for level-1 nodes.
    pub parent: NodeId,
}

/// Level implied by a code string, or an error for malformed codes.
pub fn code_level(code: &str) -> Result<u8, TaxonomyError> {
    let bytes = code.as_bytes();
    if bytes.is_empty() || !bytes[0].is_ascii_uppercase() {
        return Err(TaxonomyError::Format(format!(
            "code {code:?} must start with an uppercase letter"
        )));
    }
    let rest = &bytes[1..];
    if rest.len() % 2 != 0 || !rest.iter().all(u8::is_ascii_digit) {
        return Err(TaxonomyError::Format(format!(
            "code {code:?} must append exactly two digits per level"
        )));
    }
    let level = 1 + rest.len() / 2;
    u8::try_from(level).map_err(|_| TaxonomyError::Format(format!("code {code:?} too deep")))
}

/// Prefix of `code` at `level` (level 1 is the single letter).
fn code_prefix(code: &str, level: u8) -> &str {
    &code[..1 + 2 * (level as usize - 1)]
}

#[derive(Debug, Serialize, Deserialize)]
struct TaxonomyFile {
    depth: u8,
    nodes: Vec<TaxonomyFileNode>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaxonomyFileNode {
    code: String,
    level: u8,
}

/// The validated discipline hierarchy.
///
/// Immutable after load; ids are contiguous `1..=n` in lexicographic code
/// order, with 0 reserved for the root.
#[derive(Debug, Clone)]
pub struct DisciplineTaxonomy {
    depth: u8,
    nodes: Vec<Discipline>,
    by_code: HashMap<String, NodeId>,
    /// `levels[k-1]` holds the ids of level-k nodes in code order.
    levels: Vec<Vec<NodeId>>,
    /// `children[id]` holds child ids; index 0 is the root.
    children: Vec<Vec<NodeId>>,
}

impl DisciplineTaxonomy {
    /// Build from `(code, declared_level)` entries, inferring parents from
    /// code prefixes and validating structure.
    pub fn from_entries<I>(entries: I) -> Result<Self, TaxonomyError>
    where
        I: IntoIterator<Item = (String, u8)>,
    {
        let mut declared = BTreeMap::new();
        for (code, level) in entries {
            let computed = code_level(&code)?;
            if level != computed {
                return Err(TaxonomyError::LevelMismatch {
                    code,
                    declared: level,
                    computed,
                });
            }
            if declared.insert(code.clone(), level).is_some() {
                return Err(TaxonomyError::DuplicateCode(code));
            }
        }

        let mut by_code = HashMap::new();
        let mut nodes = Vec::with_capacity(declared.len());
        for (idx, (code, level)) in declared.iter().enumerate() {
            let id = (idx + 1) as NodeId;
            by_code.insert(code.clone(), id);
            nodes.push(Discipline {
                id,
                code: code.clone(),
                level: *level,
                parent: ROOT_ID,
            });
        }

        let mut depth = 0u8;
        for node in &mut nodes {
            depth = depth.max(node.level);
            if node.level > 1 {
                let parent_code = code_prefix(&node.code, node.level - 1);
                match by_code.get(parent_code) {
                    Some(pid) => node.parent = *pid,
                    None => return Err(TaxonomyError::OrphanNode(node.code.clone())),
                }
            }
        }

        // Walk each ancestor chain; the chain must shorten strictly and
        // reach the root within `depth` steps.
        for node in &nodes {
            let mut cur = node;
            let mut steps = 0u8;
            while cur.level > 1 {
                steps += 1;
                if steps > depth {
                    return Err(TaxonomyError::CycleDetected(node.code.clone()));
                }
                cur = &nodes[cur.parent as usize - 1];
            }
        }

        let mut levels = vec![Vec::new(); depth as usize];
        let mut children = vec![Vec::new(); nodes.len() + 1];
        for node in &nodes {
            levels[node.level as usize - 1].push(node.id);
            children[node.parent as usize].push(node.id);
        }

        Ok(Self {
            depth,
            nodes,
            by_code,
            levels,
            children,
        })
    }

    /// Parse the taxonomy JSON document.
    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Format(e.to_string()))?;
        let t = Self::from_entries(file.nodes.into_iter().map(|n| (n.code, n.level)))?;
        if t.depth != file.depth {
            return Err(TaxonomyError::Format(format!(
                "declared depth {} but nodes reach level {}",
                file.depth, t.depth
            )));
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Serialize back to the taxonomy JSON document (nodes in code order).
    pub fn to_json(&self) -> String {
        let file = TaxonomyFile {
            depth: self.depth,
            nodes: self
                .nodes
                .iter()
                .map(|n| TaxonomyFileNode {
                    code: n.code.clone(),
                    level: n.level,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("taxonomy serializes")
    }

    /// Hierarchy depth H.
    pub fn depth(&self) -> u8 {
        self.depth
    }

    /// Number of disciplines (root excluded).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<&Discipline> {
        self.by_code.get(code).map(|id| self.by_id(*id))
    }

    pub fn resolve(&self, code: &str) -> Result<&Discipline, TaxonomyError> {
        self.get(code)
            .ok_or_else(|| TaxonomyError::UnknownCode(code.to_string()))
    }

    /// Node for a non-root id. Panics on the root or an out-of-range id.
    pub fn by_id(&self, id: NodeId) -> &Discipline {
        &self.nodes[id as usize - 1]
    }

    /// Ids at taxonomy level `k` (1-based), in code order.
    pub fn level_nodes(&self, k: u8) -> &[NodeId] {
        &self.levels[k as usize - 1]
    }

    /// Children of `id` (`ROOT_ID` gives level-1 nodes).
    pub fn children_of(&self, id: NodeId) -> &[NodeId] {
        &self.children[id as usize]
    }

    /// All disciplines in id order.
    pub fn disciplines(&self) -> &[Discipline] {
        &self.nodes
    }

    /// Ancestor chain of `id` from level 1 down to the node itself.
    pub fn prefix_chain(&self, id: NodeId) -> Vec<NodeId> {
        let node = self.by_id(id);
        (1..=node.level)
            .map(|k| self.by_code[code_prefix(&node.code, k)])
            .collect()
    }
}

/// A violated partial-order axiom with the offending entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartialOrderViolation {
    /// A node from which the root is not reachable.
    NotUnderRoot(String),
    Asymmetry(String, String),
    AntiReflexivity(String),
    /// Pair required by transitivity but absent from the relation.
    Transitivity(String, String),
}

impl fmt::Display for PartialOrderViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotUnderRoot(a) => write!(f, "root is not an ancestor of {a}"),
            Self::Asymmetry(a, b) => write!(f, "asymmetry violated by {a} and {b}"),
            Self::AntiReflexivity(a) => write!(f, "anti-reflexivity violated by {a}"),
            Self::Transitivity(a, c) => write!(f, "transitivity requires {a} < {c}"),
        }
    }
}

/// Check the four axioms over an explicit strict relation given as
/// `(descendant, ancestor)` pairs. Names are arbitrary display labels.
///
/// The relation is checked as given; no closure is taken, so a missing
/// transitive pair is reported rather than repaired.
pub fn validate_relations(
    names: &[String],
    root: usize,
    pairs: &BTreeSet<(usize, usize)>,
) -> Vec<PartialOrderViolation> {
    let mut violations = Vec::new();
    for (a, b) in pairs {
        if a == b {
            violations.push(PartialOrderViolation::AntiReflexivity(names[*a].clone()));
        }
        if a < b && pairs.contains(&(*b, *a)) {
            violations.push(PartialOrderViolation::Asymmetry(
                names[*a].clone(),
                names[*b].clone(),
            ));
        }
    }
    for (a, b) in pairs {
        for (b2, c) in pairs.range((*b, 0)..(*b + 1, 0)) {
            debug_assert_eq!(b, b2);
            if a != c && !pairs.contains(&(*a, *c)) {
                violations.push(PartialOrderViolation::Transitivity(
                    names[*a].clone(),
                    names[*c].clone(),
                ));
            }
        }
    }
    for i in 0..names.len() {
        if i != root && !pairs.contains(&(i, root)) {
            violations.push(PartialOrderViolation::NotUnderRoot(names[i].clone()));
        }
    }
    violations
}

/// Validate the axioms over the transitive closure of the taxonomy's
/// parent links. Empty result means the hierarchy is a well-formed order.
pub fn validate_partial_order(t: &DisciplineTaxonomy) -> Vec<PartialOrderViolation> {
    let mut names: Vec<String> = vec!["<root>".to_string()];
    names.extend(t.disciplines().iter().map(|d| d.code.clone()));
    let mut pairs = BTreeSet::new();
    for d in t.disciplines() {
        // Every strict ancestor, root included.
        pairs.insert((d.id as usize, ROOT_ID as usize));
        let chain = t.prefix_chain(d.id);
        for anc in &chain[..chain.len() - 1] {
            pairs.insert((d.id as usize, *anc as usize));
        }
    }
    validate_relations(&names, ROOT_ID as usize, &pairs)
}

/// One level of a topic path: a set of same-level labels plus the optional
/// stop marker.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LevelSet {
    pub labels: BTreeSet<NodeId>,
    pub stop: bool,
}

impl LevelSet {
    pub fn labels_only<I: IntoIterator<Item = NodeId>>(ids: I) -> Self {
        Self {
            labels: ids.into_iter().collect(),
            stop: false,
        }
    }

    pub fn stop_only() -> Self {
        Self {
            labels: BTreeSet::new(),
            stop: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty() && !self.stop
    }
}

/// Per-level label sets `[L_0, L_1, ..., L_{H_A}]`; `levels[0]` is the root
/// set and the stop marker appears in the last set of a terminated path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicPath {
    pub levels: Vec<LevelSet>,
}

impl TopicPath {
    /// A path containing only the root set.
    pub fn root_only() -> Self {
        Self {
            levels: vec![LevelSet::labels_only([ROOT_ID])],
        }
    }

    /// Effective depth H_A (index of the last set).
    pub fn effective_depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Label set at level `k`, or an empty set when the path ends earlier.
    pub fn level_labels(&self, k: usize) -> BTreeSet<NodeId> {
        self.levels
            .get(k)
            .map(|s| s.labels.clone())
            .unwrap_or_default()
    }

    /// Level label sets rendered as code strings (stop marker included),
    /// starting at level 1.
    pub fn to_code_sets(&self, t: &DisciplineTaxonomy) -> Vec<Vec<String>> {
        self.levels[1..]
            .iter()
            .map(|set| {
                let mut row: Vec<String> = set
                    .labels
                    .iter()
                    .map(|id| t.by_id(*id).code.clone())
                    .collect();
                if set.stop {
                    row.push(STOP_MARKER.to_string());
                }
                row
            })
            .collect()
    }

    /// Inverse of [`TopicPath::to_code_sets`].
    pub fn from_code_sets(
        sets: &[Vec<String>],
        t: &DisciplineTaxonomy,
    ) -> Result<Self, TaxonomyError> {
        let mut levels = vec![LevelSet::labels_only([ROOT_ID])];
        for row in sets {
            let mut set = LevelSet::default();
            for entry in row {
                if entry == STOP_MARKER {
                    set.stop = true;
                } else {
                    set.labels.insert(t.resolve(entry)?.id);
                }
            }
            levels.push(set);
        }
        Ok(Self { levels })
    }

    /// Structural validation: root set, per-level parent containment,
    /// level agreement, and stop placement in the last set only.
    pub fn validate(&self, t: &DisciplineTaxonomy) -> Result<(), TaxonomyError> {
        let root_set = self
            .levels
            .first()
            .ok_or_else(|| TaxonomyError::IncoherentPath("empty path".into()))?;
        if root_set.labels.iter().copied().collect::<Vec<_>>() != [ROOT_ID] || root_set.stop {
            return Err(TaxonomyError::IncoherentPath("L_0 must be {root}".into()));
        }
        for (k, set) in self.levels.iter().enumerate().skip(1) {
            for id in &set.labels {
                let node = t.by_id(*id);
                if node.level as usize != k {
                    return Err(TaxonomyError::IncoherentPath(format!(
                        "{} is a level-{} label placed at level {}",
                        node.code, node.level, k
                    )));
                }
                let parent_ok = if k == 1 {
                    true
                } else {
                    self.levels[k - 1].labels.contains(&node.parent)
                };
                if !parent_ok {
                    return Err(TaxonomyError::IncoherentPath(format!(
                        "parent of {} missing from level {}",
                        node.code,
                        k - 1
                    )));
                }
            }
            if set.stop && k != self.levels.len() - 1 {
                return Err(TaxonomyError::IncoherentPath(format!(
                    "stop marker at level {k} is not in the last set"
                )));
            }
            if set.is_empty() {
                return Err(TaxonomyError::IncoherentPath(format!(
                    "level {k} set is empty"
                )));
            }
        }
        Ok(())
    }
}

/// Encode a code set as the per-level topic path, with the stop marker
/// placed per the termination rules.
pub fn encode_topic_path(
    codes: &BTreeSet<String>,
    t: &DisciplineTaxonomy,
) -> Result<TopicPath, TaxonomyError> {
    if codes.is_empty() {
        return Err(TaxonomyError::IncoherentPath("empty code set".into()));
    }
    let mut resolved = Vec::with_capacity(codes.len());
    for code in codes {
        resolved.push(t.resolve(code)?);
    }
    let max_level = resolved.iter().map(|d| d.level).max().unwrap();
    let any_shorter = resolved.iter().any(|d| d.level < max_level);

    let mut levels = vec![LevelSet::labels_only([ROOT_ID])];
    for k in 1..=max_level {
        let mut set = LevelSet::default();
        for d in resolved.iter().filter(|d| d.level >= k) {
            set.labels.insert(t.by_code[code_prefix(&d.code, k)]);
        }
        levels.push(set);
    }
    if any_shorter || max_level == t.depth() {
        // Some path already ended before max_level, or no deeper level
        // exists: the stop marker joins the surviving labels.
        levels.last_mut().unwrap().stop = true;
    } else {
        // All codes end together above the maximum depth: terminate with an
        // explicit singleton stop set one level below them.
        levels.push(LevelSet::stop_only());
    }
    Ok(TopicPath { levels })
}

/// Decode a topic path back to its maximal codes: labels with no child
/// label in the following set.
pub fn decode_topic_path(
    path: &TopicPath,
    t: &DisciplineTaxonomy,
) -> Result<BTreeSet<String>, TaxonomyError> {
    path.validate(t)?;
    let mut codes = BTreeSet::new();
    for (k, set) in path.levels.iter().enumerate().skip(1) {
        let next_labels = path
            .levels
            .get(k + 1)
            .map(|s| &s.labels)
            .cloned()
            .unwrap_or_default();
        for id in &set.labels {
            let has_child = t.children_of(*id).iter().any(|c| next_labels.contains(c));
            if !has_child {
                codes.insert(t.by_id(*id).code.clone());
            }
        }
    }
    Ok(codes)
}

/// Build the coherent prefix `[L_0, L_1, ..., L_j]` implied by a partial
/// code set: each level holds the prefixes of every code reaching it. No
/// stop marker is placed; the path is open for further prediction.
pub fn prefix_from_codes(
    codes: &BTreeSet<String>,
    t: &DisciplineTaxonomy,
) -> Result<TopicPath, TaxonomyError> {
    if codes.is_empty() {
        return Ok(TopicPath::root_only());
    }
    let mut resolved = Vec::with_capacity(codes.len());
    for code in codes {
        resolved.push(t.resolve(code)?);
    }
    let max_level = resolved.iter().map(|d| d.level).max().unwrap();
    let mut levels = vec![LevelSet::labels_only([ROOT_ID])];
    for k in 1..=max_level {
        let mut set = LevelSet::default();
        for d in resolved.iter().filter(|d| d.level >= k) {
            set.labels.insert(t.by_code[code_prefix(&d.code, k)]);
        }
        levels.push(set);
    }
    Ok(TopicPath { levels })
}

/// Generate a regular synthetic taxonomy: one level-1 node per letter and
/// `branching[k]` children per node at each deeper level.
pub fn synthetic_taxonomy(letters: &[char], branching: &[usize]) -> DisciplineTaxonomy {
    let mut entries: Vec<(String, u8)> = letters.iter().map(|c| (c.to_string(), 1)).collect();
    let mut frontier: Vec<String> = entries.iter().map(|(c, _)| c.clone()).collect();
    for (depth_idx, width) in branching.iter().enumerate() {
        let level = depth_idx as u8 + 2;
        let mut next = Vec::new();
        for parent in &frontier {
            for j in 1..=*width {
                let code = format!("{parent}{j:02}");
                entries.push((code.clone(), level));
                next.push(code);
            }
        }
        frontier = next;
    }
    DisciplineTaxonomy::from_entries(entries).expect("synthetic taxonomy is well-formed")
}

/// The four-level test taxonomy: letters F and C, three children per node.
pub fn fixture_taxonomy() -> DisciplineTaxonomy {
    synthetic_taxonomy(&['C', 'F'], &[3, 3, 3])
}
