//! Directed weighted graph over disciplines built from topic co-occurrence.
//!
//! For an ordered pair `(a, b)` with shared topics, the edge weight is
//! `p^alpha * d^beta` where `p` is the frequency-weighted proportion of
//! `a`'s topic citations that also appear under `b`, and `d` is the
//! proportion of `a`'s topics not shared with `b`. With both exponents at
//! zero every existing edge weighs exactly 1 and the graph degenerates to a
//! plain co-topic graph.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Proposal;
use crate::taxonomy::{DisciplineTaxonomy, NodeId, TaxonomyError};

#[derive(Debug, Error)]
pub enum IdgraphError {
    #[error("discipline {0} has no topics")]
    EmptySource(String),
    #[error("self edge on {0}")]
    SelfEdge(String),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("malformed graph document: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-discipline topic frequency tables.
///
/// `freq[a][topic]` counts the proposals labeled under `a` (directly or via
/// a descendant) that cite the topic; the topic set `K_a` is the key set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopicStats {
    freq: BTreeMap<NodeId, BTreeMap<String, u64>>,
}

impl TopicStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, discipline: NodeId, topic: &str) {
        *self
            .freq
            .entry(discipline)
            .or_default()
            .entry(topic.to_string())
            .or_insert(0) += 1;
    }

    pub fn topics(&self, discipline: NodeId) -> Option<&BTreeMap<String, u64>> {
        self.freq.get(&discipline)
    }

    pub fn disciplines(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.freq.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }
}

/// Count topic citations per discipline. A proposal contributes each of its
/// topics once to every discipline on each label's prefix chain, so
/// ancestors aggregate their subtrees and upper levels stay connected.
pub fn collect_topic_stats(
    corpus: &[Proposal],
    t: &DisciplineTaxonomy,
) -> Result<TopicStats, IdgraphError> {
    let mut stats = TopicStats::new();
    for p in corpus {
        let topics = p.topics();
        let mut touched: BTreeSet<NodeId> = BTreeSet::new();
        for code in &p.labels {
            let d = t.resolve(code)?;
            touched.extend(t.prefix_chain(d.id));
        }
        for discipline in touched {
            for topic in &topics {
                stats.add(discipline, topic);
            }
        }
    }
    Ok(stats)
}

/// Edge payload: co-selection proportion, topic disparity, and the
/// combined weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeData {
    pub p: f64,
    pub d: f64,
    pub w: f64,
}

/// `x^e` with the convention `0^0 = 1`, so a zero exponent disables that
/// component entirely.
fn pow_or_one(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        x.powf(e)
    }
}

/// Compute `(p, d, w)` for the ordered pair `(a, b)`.
pub fn edge_weight(
    stats: &TopicStats,
    t: &DisciplineTaxonomy,
    a: NodeId,
    b: NodeId,
    alpha: f64,
    beta: f64,
) -> Result<EdgeData, IdgraphError> {
    if a == b {
        return Err(IdgraphError::SelfEdge(t.by_id(a).code.clone()));
    }
    let fa = stats
        .topics(a)
        .filter(|m| !m.is_empty())
        .ok_or_else(|| IdgraphError::EmptySource(t.by_id(a).code.clone()))?;
    let empty = BTreeMap::new();
    let fb = stats.topics(b).unwrap_or(&empty);

    let total: u64 = fa.values().sum();
    let shared_citations: u64 = fa
        .iter()
        .filter(|(k, _)| fb.contains_key(*k))
        .map(|(_, c)| *c)
        .sum();
    let shared_topics = fa.keys().filter(|k| fb.contains_key(*k)).count();

    let p = shared_citations as f64 / total as f64;
    let d = 1.0 - shared_topics as f64 / fa.len() as f64;
    let w = pow_or_one(p, alpha) * pow_or_one(d, beta);
    Ok(EdgeData { p, d, w })
}

/// The directed interdisciplinary graph. Nodes are all taxonomy disciplines
/// (root excluded); an edge `a -> b` exists iff the two share a topic.
#[derive(Debug, Clone)]
pub struct InterGraph {
    pub alpha: f64,
    pub beta: f64,
    node_count: usize,
    edges: BTreeMap<(NodeId, NodeId), EdgeData>,
    out_neighbors: HashMap<NodeId, Vec<NodeId>>,
    in_neighbors: HashMap<NodeId, Vec<NodeId>>,
}

impl InterGraph {
    fn from_edges(
        node_count: usize,
        alpha: f64,
        beta: f64,
        edges: BTreeMap<(NodeId, NodeId), EdgeData>,
    ) -> Self {
        let mut out_neighbors: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        let mut in_neighbors: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for (src, dst) in edges.keys() {
            out_neighbors.entry(*src).or_default().push(*dst);
            in_neighbors.entry(*dst).or_default().push(*src);
        }
        Self {
            alpha,
            beta,
            node_count,
            edges,
            out_neighbors,
            in_neighbors,
        }
    }

    pub fn edge(&self, src: NodeId, dst: NodeId) -> Option<&EdgeData> {
        self.edges.get(&(src, dst))
    }

    pub fn edges(&self) -> impl Iterator<Item = (&(NodeId, NodeId), &EdgeData)> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of discipline nodes (root excluded).
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    fn contains_node(&self, id: NodeId) -> bool {
        id >= 1 && (id as usize) <= self.node_count
    }
}

/// Build the graph from topic statistics. Edges with shared topics are kept
/// even when their weight is zero, so exponent sweeps change weights, not
/// topology.
pub fn build_graph(
    stats: &TopicStats,
    t: &DisciplineTaxonomy,
    alpha: f64,
    beta: f64,
) -> Result<InterGraph, IdgraphError> {
    let mut edges = BTreeMap::new();
    let with_topics: Vec<NodeId> = stats
        .disciplines()
        .filter(|id| stats.topics(*id).is_some_and(|m| !m.is_empty()))
        .collect();
    for &a in &with_topics {
        let ka = stats.topics(a).unwrap();
        for &b in &with_topics {
            if a == b {
                continue;
            }
            let shares = ka.keys().any(|k| stats.topics(b).unwrap().contains_key(k));
            if !shares {
                continue;
            }
            let data = edge_weight(stats, t, a, b, alpha, beta)?;
            edges.insert((a, b), data);
        }
    }
    Ok(InterGraph::from_edges(t.len(), alpha, beta, edges))
}

/// A sampled sub-graph: central nodes, their combined in/out neighborhood
/// up to `hops`, and the induced weighted adjacency over the members.
#[derive(Debug, Clone)]
pub struct SampledNeighborhood {
    pub centrals: Vec<NodeId>,
    /// Sorted member ids; includes the centrals.
    pub members: Vec<NodeId>,
    /// Row-major `members.len() x members.len()` matrix of edge weights.
    pub adjacency: Vec<f64>,
}

impl SampledNeighborhood {
    pub fn member_index(&self, id: NodeId) -> Option<usize> {
        self.members.binary_search(&id).ok()
    }
}

/// BFS over both edge directions from the central set, up to `hops` steps,
/// then restrict the adjacency to the visited members.
pub fn sample_neighborhood(
    g: &InterGraph,
    centrals: &BTreeSet<NodeId>,
    hops: usize,
) -> Result<SampledNeighborhood, IdgraphError> {
    for id in centrals {
        if !g.contains_node(*id) {
            return Err(IdgraphError::UnknownNode(*id));
        }
    }
    let mut visited: BTreeSet<NodeId> = centrals.clone();
    let mut frontier: VecDeque<(NodeId, usize)> =
        centrals.iter().map(|id| (*id, 0)).collect();
    while let Some((node, depth)) = frontier.pop_front() {
        if depth == hops {
            continue;
        }
        let empty = Vec::new();
        let outs = g.out_neighbors.get(&node).unwrap_or(&empty);
        let ins = g.in_neighbors.get(&node).unwrap_or(&empty);
        for next in outs.iter().chain(ins) {
            if visited.insert(*next) {
                frontier.push_back((*next, depth + 1));
            }
        }
    }
    let members: Vec<NodeId> = visited.into_iter().collect();
    let n = members.len();
    let mut adjacency = vec![0.0; n * n];
    for (i, src) in members.iter().enumerate() {
        for (j, dst) in members.iter().enumerate() {
            if let Some(e) = g.edge(*src, *dst) {
                adjacency[i * n + j] = e.w;
            }
        }
    }
    Ok(SampledNeighborhood {
        centrals: centrals.iter().copied().collect(),
        members,
        adjacency,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    alpha: f64,
    beta: f64,
    edges: Vec<GraphFileEdge>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFileEdge {
    src: String,
    dst: String,
    p: f64,
    d: f64,
    w: f64,
}

/// Serialize with edges sorted by `(src, dst)` code.
pub fn graph_to_json(g: &InterGraph, t: &DisciplineTaxonomy) -> String {
    let mut edges: Vec<GraphFileEdge> = g
        .edges()
        .map(|((src, dst), e)| GraphFileEdge {
            src: t.by_id(*src).code.clone(),
            dst: t.by_id(*dst).code.clone(),
            p: e.p,
            d: e.d,
            w: e.w,
        })
        .collect();
    edges.sort_by(|a, b| (&a.src, &a.dst).cmp(&(&b.src, &b.dst)));
    serde_json::to_string_pretty(&GraphFile {
        alpha: g.alpha,
        beta: g.beta,
        edges,
    })
    .expect("graph serializes")
}

pub fn graph_from_json(text: &str, t: &DisciplineTaxonomy) -> Result<InterGraph, IdgraphError> {
    let file: GraphFile =
        serde_json::from_str(text).map_err(|e| IdgraphError::Format(e.to_string()))?;
    let mut edges = BTreeMap::new();
    for e in file.edges {
        let src = t.resolve(&e.src)?.id;
        let dst = t.resolve(&e.dst)?.id;
        if src == dst {
            return Err(IdgraphError::SelfEdge(e.src));
        }
        edges.insert((src, dst), EdgeData { p: e.p, d: e.d, w: e.w });
    }
    Ok(InterGraph::from_edges(t.len(), file.alpha, file.beta, edges))
}

pub fn write_graph(path: &Path, g: &InterGraph, t: &DisciplineTaxonomy) -> Result<(), IdgraphError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(graph_to_json(g, t).as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_graph(path: &Path, t: &DisciplineTaxonomy) -> Result<InterGraph, IdgraphError> {
    graph_from_json(&std::fs::read_to_string(path)?, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::DisciplineTaxonomy;

    /// Two level-1 disciplines with the worked frequency tables:
    /// F_A = {t1:3, t2:1}, F_B = {t2:2, t3:2}.
    fn hand_stats() -> (DisciplineTaxonomy, TopicStats) {
        let t = DisciplineTaxonomy::from_entries(
            [("A", 1), ("B", 1)].map(|(c, l)| (c.to_string(), l)),
        )
        .unwrap();
        let a = t.get("A").unwrap().id;
        let b = t.get("B").unwrap().id;
        let mut stats = TopicStats::new();
        for _ in 0..3 {
            stats.add(a, "t1");
        }
        stats.add(a, "t2");
        for _ in 0..2 {
            stats.add(b, "t2");
            stats.add(b, "t3");
        }
        (t, stats)
    }

    #[test]
    fn hand_computed_edge_values() {
        let (t, stats) = hand_stats();
        let a = t.get("A").unwrap().id;
        let b = t.get("B").unwrap().id;

        let ab = edge_weight(&stats, &t, a, b, 1.0, 1.0).unwrap();
        assert_eq!(ab.p, 0.25);
        assert_eq!(ab.d, 0.5);
        assert_eq!(ab.w, 0.125);

        let ba = edge_weight(&stats, &t, b, a, 1.0, 1.0).unwrap();
        assert_eq!(ba.p, 0.5);
        assert_eq!(ba.d, 0.5);
        assert_eq!(ba.w, 0.25);
    }

    #[test]
    fn boundary_algebra() {
        let t = DisciplineTaxonomy::from_entries(
            [("A", 1), ("B", 1), ("D", 1)].map(|(c, l)| (c.to_string(), l)),
        )
        .unwrap();
        let a = t.get("A").unwrap().id;
        let b = t.get("B").unwrap().id;
        let d = t.get("D").unwrap().id;
        let mut stats = TopicStats::new();
        stats.add(a, "t1");
        stats.add(b, "t2");
        // D's topics are a superset of A's.
        stats.add(d, "t1");
        stats.add(d, "t9");

        // Disjoint sets, alpha > 0: p = 0 forces w = 0.
        let disjoint = edge_weight(&stats, &t, a, b, 1.0, 0.0).unwrap();
        assert_eq!(disjoint.p, 0.0);
        assert_eq!(disjoint.w, 0.0);

        // K_a subset of K_d, beta > 0: d = 0 forces w = 0.
        let nested = edge_weight(&stats, &t, a, d, 0.0, 1.0).unwrap();
        assert_eq!(nested.d, 0.0);
        assert_eq!(nested.w, 0.0);

        // Both exponents zero: weight is exactly 1 even on shared topics.
        let degenerate = edge_weight(&stats, &t, a, d, 0.0, 0.0).unwrap();
        assert_eq!(degenerate.w, 1.0);
    }

    #[test]
    fn self_edge_and_empty_source_rejected() {
        let (t, stats) = hand_stats();
        let a = t.get("A").unwrap().id;
        assert!(matches!(
            edge_weight(&stats, &t, a, a, 1.0, 1.0),
            Err(IdgraphError::SelfEdge(_))
        ));

        let empty = TopicStats::new();
        let b = t.get("B").unwrap().id;
        assert!(matches!(
            edge_weight(&empty, &t, a, b, 1.0, 1.0),
            Err(IdgraphError::EmptySource(_))
        ));
    }

    #[test]
    fn build_graph_creates_edges_both_ways() {
        let (t, stats) = hand_stats();
        let g = build_graph(&stats, &t, 1.0, 1.0).unwrap();
        assert_eq!(g.edge_count(), 2);
        let a = t.get("A").unwrap().id;
        let b = t.get("B").unwrap().id;
        assert_eq!(g.edge(a, b).unwrap().w, 0.125);
        assert_eq!(g.edge(b, a).unwrap().w, 0.25);
    }

    #[test]
    fn disjoint_topics_give_empty_graph() {
        let t = DisciplineTaxonomy::from_entries(
            [("A", 1), ("B", 1)].map(|(c, l)| (c.to_string(), l)),
        )
        .unwrap();
        let mut stats = TopicStats::new();
        stats.add(t.get("A").unwrap().id, "t1");
        stats.add(t.get("B").unwrap().id, "t2");
        let g = build_graph(&stats, &t, 1.0, 1.0).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn degenerate_exponents_make_unit_weights() {
        let (t, stats) = hand_stats();
        let g = build_graph(&stats, &t, 0.0, 0.0).unwrap();
        for (_, e) in g.edges() {
            assert_eq!(e.w, 1.0);
        }
    }

    #[test]
    fn stats_propagate_to_ancestors() {
        let t = DisciplineTaxonomy::from_entries(
            [("F", 1), ("F06", 2)].map(|(c, l)| (c.to_string(), l)),
        )
        .unwrap();
        let corpus = vec![Proposal {
            id: "p0".into(),
            title: String::new(),
            keywords: vec!["t1".into(), "t2".into()],
            abstract_text: String::new(),
            research_field: String::new(),
            labels: ["F06".to_string()].into_iter().collect(),
        }];
        let stats = collect_topic_stats(&corpus, &t).unwrap();
        for code in ["F", "F06"] {
            let freq = stats.topics(t.get(code).unwrap().id).unwrap();
            assert_eq!(freq.get("t1"), Some(&1));
            assert_eq!(freq.get("t2"), Some(&1));
        }
    }

    #[test]
    fn empty_corpus_empty_stats() {
        let t = DisciplineTaxonomy::from_entries([("F".to_string(), 1)]).unwrap();
        assert!(collect_topic_stats(&[], &t).unwrap().is_empty());
    }

    #[test]
    fn neighborhood_hops_zero_and_star() {
        // Star: center S, spokes P-S share topics pairwise only with S.
        let t = DisciplineTaxonomy::from_entries(
            [("P", 1), ("Q", 1), ("R", 1), ("S", 1)].map(|(c, l)| (c.to_string(), l)),
        )
        .unwrap();
        let ids: BTreeMap<&str, NodeId> = ["P", "Q", "R", "S"]
            .iter()
            .map(|c| (*c, t.get(c).unwrap().id))
            .collect();
        let mut stats = TopicStats::new();
        for spoke in ["P", "Q", "R"] {
            let shared = format!("s_{spoke}");
            stats.add(ids[spoke], &shared);
            stats.add(ids["S"], &shared);
            stats.add(ids[spoke], &format!("own_{spoke}"));
        }
        let g = build_graph(&stats, &t, 1.0, 1.0).unwrap();

        let solo = sample_neighborhood(&g, &[ids["P"]].into_iter().collect(), 0).unwrap();
        assert_eq!(solo.members, vec![ids["P"]]);
        assert!(solo.adjacency.iter().all(|w| *w == 0.0));

        let star = sample_neighborhood(&g, &[ids["S"]].into_iter().collect(), 1).unwrap();
        assert_eq!(star.members.len(), 4);

        let unknown = sample_neighborhood(&g, &[999].into_iter().collect(), 1);
        assert!(matches!(unknown, Err(IdgraphError::UnknownNode(999))));
    }

    #[test]
    fn json_round_trip_sorted() {
        let (t, stats) = hand_stats();
        let g = build_graph(&stats, &t, 0.1, 0.2).unwrap();
        let text = graph_to_json(&g, &t);
        let back = graph_from_json(&text, &t).unwrap();
        assert_eq!(back.edge_count(), g.edge_count());
        for ((src, dst), e) in g.edges() {
            let r = back.edge(*src, *dst).unwrap();
            assert_eq!(r.w, e.w);
        }
        // src-major order in the serialized document
        let a_pos = text.find("\"src\": \"A\"").unwrap();
        let b_pos = text.find("\"src\": \"B\"").unwrap();
        assert!(a_pos < b_pos);
    }
}
