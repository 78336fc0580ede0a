//! Heterogeneous preference network: five node types joined by six undirected,
//! unweighted edge types. The graph is immutable once built and safe to share
//! across threads.

pub mod build;
pub mod ingest;
mod store;

pub use build::{build_graph, EdgeRuleConfig, WeekAnchor};
pub use ingest::{ingest, Corpus, IngestOptions, IngestReport, Interner};
pub use store::IdMaps;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Video,
    Tag,
    Media,
    UserGroup,
    Word,
}

impl NodeType {
    pub const ALL: [NodeType; 5] = [
        NodeType::Video,
        NodeType::Tag,
        NodeType::Media,
        NodeType::UserGroup,
        NodeType::Word,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<NodeType> {
        NodeType::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Video => "video",
            NodeType::Tag => "tag",
            NodeType::Media => "media",
            NodeType::UserGroup => "user_group",
            NodeType::Word => "word",
        }
    }
}

/// Typed node handle: `(node_type, local_id)` is globally unique and orders
/// by type first (the fixed summation order used everywhere downstream).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub node_type: NodeType,
    pub local_id: u32,
}

impl NodeRef {
    pub fn new(node_type: NodeType, local_id: u32) -> Self {
        NodeRef {
            node_type,
            local_id,
        }
    }

    pub(crate) fn code(self) -> u64 {
        ((self.node_type.index() as u64) << 32) | u64::from(self.local_id)
    }
}

impl std::fmt::Display for NodeRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.node_type.name(), self.local_id)
    }
}

/// The six edge types. Declaration order is also the serialization order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    VideoVideo,
    VideoUser,
    VideoTag,
    VideoWord,
    VideoMedia,
    TagTag,
}

impl EdgeType {
    pub const ALL: [EdgeType; 6] = [
        EdgeType::VideoVideo,
        EdgeType::VideoUser,
        EdgeType::VideoTag,
        EdgeType::VideoWord,
        EdgeType::VideoMedia,
        EdgeType::TagTag,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Endpoint node types; same-type edges report the type twice.
    pub fn endpoints(self) -> (NodeType, NodeType) {
        match self {
            EdgeType::VideoVideo => (NodeType::Video, NodeType::Video),
            EdgeType::VideoUser => (NodeType::Video, NodeType::UserGroup),
            EdgeType::VideoTag => (NodeType::Video, NodeType::Tag),
            EdgeType::VideoWord => (NodeType::Video, NodeType::Word),
            EdgeType::VideoMedia => (NodeType::Video, NodeType::Media),
            EdgeType::TagTag => (NodeType::Tag, NodeType::Tag),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::VideoVideo => "vv",
            EdgeType::VideoUser => "vu",
            EdgeType::VideoTag => "vt",
            EdgeType::VideoWord => "vw",
            EdgeType::VideoMedia => "vm",
            EdgeType::TagTag => "tt",
        }
    }

    /// The edge type joining two node types, if one exists.
    pub fn between(a: NodeType, b: NodeType) -> Option<EdgeType> {
        use NodeType::*;
        match (a.min(b), a.max(b)) {
            (Video, Video) => Some(EdgeType::VideoVideo),
            (Video, Tag) => Some(EdgeType::VideoTag),
            (Video, Media) => Some(EdgeType::VideoMedia),
            (Video, UserGroup) => Some(EdgeType::VideoUser),
            (Video, Word) => Some(EdgeType::VideoWord),
            (Tag, Tag) => Some(EdgeType::TagTag),
            _ => None,
        }
    }
}

/// Compressed sorted adjacency for one (node type, neighbor type) relation.
#[derive(Clone, Debug, Default, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    fn empty(n: usize) -> Self {
        Csr {
            offsets: vec![0; n + 1],
            targets: Vec::new(),
        }
    }

    /// `pairs` must be sorted by (src, dst); duplicates already removed.
    fn from_pairs(n: usize, pairs: &[(u32, u32)]) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(s, _) in pairs {
            offsets[s as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = pairs.iter().map(|&(_, d)| d).collect();
        Csr { offsets, targets }
    }

    fn neighbors(&self, i: u32) -> &[u32] {
        let i = i as usize;
        if i + 1 >= self.offsets.len() {
            return &[];
        }
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// The heterogeneous preference network.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    counts: [u32; 5],
    /// Indexed by `node_type.index() * 5 + neighbor_type.index()`; only the
    /// ten combinations backed by an edge type are populated.
    adj: Vec<Csr>,
}

impl HeteroGraph {
    /// Builds a graph from per-edge-type endpoint pairs. Self-loops and
    /// duplicate edges are dropped; out-of-range endpoints are an error.
    pub fn from_edges(counts: [u32; 5], edges: [Vec<(u32, u32)>; 6]) -> Result<Self> {
        let mut canonical: [Vec<(u32, u32)>; 6] = Default::default();
        for et in EdgeType::ALL {
            let (ta, tb) = et.endpoints();
            let (na, nb) = (counts[ta.index()], counts[tb.index()]);
            let mut list = Vec::with_capacity(edges[et.index()].len());
            for &(a, b) in &edges[et.index()] {
                if a >= na || b >= nb {
                    return Err(Error::Input(format!(
                        "{} edge ({a},{b}) out of range ({na} x {nb} nodes)",
                        et.name()
                    )));
                }
                if ta == tb {
                    if a == b {
                        continue; // self-loop
                    }
                    list.push((a.min(b), a.max(b)));
                } else {
                    list.push((a, b));
                }
            }
            list.sort_unstable();
            list.dedup();
            canonical[et.index()] = list;
        }

        let mut adj = vec![Csr::default(); 25];
        for t in NodeType::ALL {
            for n in NodeType::ALL {
                adj[t.index() * 5 + n.index()] = Csr::empty(counts[t.index()] as usize);
            }
        }
        for et in EdgeType::ALL {
            let (ta, tb) = et.endpoints();
            let list = &canonical[et.index()];
            if ta == tb {
                let mut sym: Vec<(u32, u32)> = Vec::with_capacity(list.len() * 2);
                for &(a, b) in list {
                    sym.push((a, b));
                    sym.push((b, a));
                }
                sym.sort_unstable();
                adj[ta.index() * 5 + tb.index()] =
                    Csr::from_pairs(counts[ta.index()] as usize, &sym);
            } else {
                adj[ta.index() * 5 + tb.index()] =
                    Csr::from_pairs(counts[ta.index()] as usize, list);
                let mut rev: Vec<(u32, u32)> = list.iter().map(|&(a, b)| (b, a)).collect();
                rev.sort_unstable();
                adj[tb.index() * 5 + ta.index()] =
                    Csr::from_pairs(counts[tb.index()] as usize, &rev);
            }
        }
        Ok(HeteroGraph { counts, adj })
    }

    pub fn node_count(&self, t: NodeType) -> usize {
        self.counts[t.index()] as usize
    }

    pub fn counts(&self) -> [u32; 5] {
        self.counts
    }

    pub fn total_nodes(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    pub fn contains(&self, node: NodeRef) -> bool {
        node.local_id < self.counts[node.node_type.index()]
    }

    /// Neighbors of `node` having type `nbr`, ascending by local id.
    pub fn neighbors_of_type(&self, node: NodeRef, nbr: NodeType) -> &[u32] {
        self.adj[node.node_type.index() * 5 + nbr.index()].neighbors(node.local_id)
    }

    pub fn degree(&self, node: NodeRef) -> usize {
        NodeType::ALL
            .iter()
            .map(|&t| self.neighbors_of_type(node, t).len())
            .sum()
    }

    /// Union of all edge types, ascending by `NodeRef`.
    pub fn all_neighbors<'a>(&'a self, node: NodeRef) -> impl Iterator<Item = NodeRef> + 'a {
        NodeType::ALL.into_iter().flat_map(move |t| {
            self.neighbors_of_type(node, t)
                .iter()
                .map(move |&id| NodeRef::new(t, id))
        })
    }

    /// Neighbor at position `idx` of the `all_neighbors` ordering.
    fn nth_neighbor(&self, node: NodeRef, mut idx: usize) -> NodeRef {
        for t in NodeType::ALL {
            let list = self.neighbors_of_type(node, t);
            if idx < list.len() {
                return NodeRef::new(t, list[idx]);
            }
            idx -= list.len();
        }
        unreachable!("neighbor index out of range");
    }

    pub fn has_edge(&self, a: NodeRef, b: NodeRef) -> bool {
        self.neighbors_of_type(a, b.node_type)
            .binary_search(&b.local_id)
            .is_ok()
    }

    /// Number of undirected edges of one type.
    pub fn edge_count(&self, et: EdgeType) -> usize {
        let (ta, tb) = et.endpoints();
        let len = self.adj[ta.index() * 5 + tb.index()].targets.len();
        if ta == tb {
            len / 2
        } else {
            len
        }
    }

    pub fn total_edges(&self) -> usize {
        EdgeType::ALL.iter().map(|&e| self.edge_count(e)).sum()
    }

    /// Canonical undirected edge list (deterministic order: edge type, then
    /// ascending endpoint ids). Used for positive sampling and serialization.
    pub fn edge_list(&self) -> Vec<(NodeRef, NodeRef)> {
        let mut out = Vec::with_capacity(self.total_edges());
        for et in EdgeType::ALL {
            let (ta, tb) = et.endpoints();
            for a in 0..self.counts[ta.index()] {
                let src = NodeRef::new(ta, a);
                for &b in self.neighbors_of_type(src, tb) {
                    if ta == tb && b <= a {
                        continue;
                    }
                    out.push((src, NodeRef::new(tb, b)));
                }
            }
        }
        out
    }

    /// Uniform sample without replacement over the union of all edge types.
    /// Returns all neighbors when the degree is within budget. Deterministic
    /// for a fixed seed; output is ascending by `NodeRef`.
    pub fn sample_neighbors(&self, node: NodeRef, budget: usize, seed: u64) -> Vec<NodeRef> {
        let deg = self.degree(node);
        if deg <= budget {
            return self.all_neighbors(node).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[node.code()]));
        // partial Fisher-Yates over virtual neighbor indices
        let mut idx: Vec<u32> = (0..deg as u32).collect();
        for i in 0..budget {
            let j = rng.random_range(i..deg);
            idx.swap(i, j);
        }
        let mut picked = idx[..budget].to_vec();
        picked.sort_unstable();
        picked
            .into_iter()
            .map(|i| self.nth_neighbor(node, i as usize))
            .collect()
    }

    /// Exhaustive structural check: symmetry of every adjacency pair, sorted
    /// and duplicate-free lists, no self-loops, endpoints in range.
    pub fn validate(&self) -> Result<()> {
        for t in NodeType::ALL {
            for n in 0..self.counts[t.index()] {
                let node = NodeRef::new(t, n);
                for nt in NodeType::ALL {
                    let list = self.neighbors_of_type(node, nt);
                    if !list.is_empty() && EdgeType::between(t, nt).is_none() {
                        return Err(Error::Input(format!(
                            "edge between {} and {} has no edge type",
                            t.name(),
                            nt.name()
                        )));
                    }
                    let mut prev: Option<u32> = None;
                    for &b in list {
                        if b >= self.counts[nt.index()] {
                            return Err(Error::Input(format!(
                                "neighbor {b} of {node} out of range for {}",
                                nt.name()
                            )));
                        }
                        if t == nt && b == n {
                            return Err(Error::Input(format!("self-loop on {node}")));
                        }
                        if let Some(p) = prev {
                            if b <= p {
                                return Err(Error::Input(format!(
                                    "unsorted or duplicate adjacency at {node}"
                                )));
                            }
                        }
                        prev = Some(b);
                        let back = NodeRef::new(nt, b);
                        if !self.has_edge(back, node) {
                            return Err(Error::Input(format!(
                                "asymmetric edge {node} -> {back}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
