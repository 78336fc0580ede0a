//! Fixed heterogeneous feature layer.
//!
//! Every node gets a multi-hot feature vector laid out as
//! `concat(video, tag, media, user, word)` blocks. Slot `s` of block `f` is 1
//! exactly when the s-th selected node of field `f` is a graph neighbor of
//! the node. The per-field bases are the top-degree nodes of that type,
//! frozen after fitting.

use serde::{Deserialize, Serialize};

use crate::graph::{HeteroGraph, NodeRef, NodeType};

/// Per-field feature block widths; defaults 300/150/150/150/150 (total 900).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDims(pub [usize; 5]);

impl Default for FieldDims {
    fn default() -> Self {
        FieldDims([300, 150, 150, 150, 150])
    }
}

impl FieldDims {
    pub fn width(&self, t: NodeType) -> usize {
        self.0[t.index()]
    }

    pub fn feature_dim(&self) -> usize {
        self.0.iter().sum()
    }

    /// Start index of a field's block in the concatenated layout.
    pub fn offset(&self, t: NodeType) -> usize {
        self.0[..t.index()].iter().sum()
    }
}

const NO_SLOT: u32 = u32::MAX;

/// Frozen projection bases: for each field, the selected nodes in slot order
/// plus the reverse local-id -> slot mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionTable {
    dims: FieldDims,
    selected: [Vec<u32>; 5],
    slot_of: [Vec<u32>; 5],
}

impl ProjectionTable {
    /// Selects, per field, the nodes with highest total degree (ties broken
    /// by ascending local id). Fields with fewer nodes than the block width
    /// get a short basis; the remaining slots always read zero.
    pub fn fit(graph: &HeteroGraph, dims: FieldDims) -> ProjectionTable {
        let mut selected: [Vec<u32>; 5] = Default::default();
        let mut slot_of: [Vec<u32>; 5] = Default::default();
        for t in NodeType::ALL {
            let n = graph.node_count(t);
            let mut order: Vec<u32> = (0..n as u32).collect();
            let deg = |id: u32| graph.degree(NodeRef::new(t, id));
            order.sort_by_key(|&id| (std::cmp::Reverse(deg(id)), id));
            order.truncate(dims.width(t));
            let mut rev = vec![NO_SLOT; n];
            for (slot, &id) in order.iter().enumerate() {
                rev[id as usize] = slot as u32;
            }
            selected[t.index()] = order;
            slot_of[t.index()] = rev;
        }
        ProjectionTable {
            dims,
            selected,
            slot_of,
        }
    }

    pub fn dims(&self) -> FieldDims {
        self.dims
    }

    /// Selected basis of one field, slot order.
    pub fn basis(&self, t: NodeType) -> &[u32] {
        &self.selected[t.index()]
    }

    pub fn slot(&self, t: NodeType, local_id: u32) -> Option<u32> {
        match self.slot_of[t.index()].get(local_id as usize) {
            Some(&s) if s != NO_SLOT => Some(s),
            _ => None,
        }
    }

    /// Multi-hot feature of `node`: per field, the slots of its selected
    /// neighbors. A node never indicates itself (the graph has no
    /// self-loops, so this holds by construction).
    pub fn feature(&self, graph: &HeteroGraph, node: NodeRef) -> FeatureVector {
        let mut slots: [Vec<u32>; 5] = Default::default();
        for t in NodeType::ALL {
            let rev = &self.slot_of[t.index()];
            let field = &mut slots[t.index()];
            for &nbr in graph.neighbors_of_type(node, t) {
                let s = rev[nbr as usize];
                if s != NO_SLOT {
                    field.push(s);
                }
            }
            field.sort_unstable();
        }
        FeatureVector {
            dims: self.dims,
            slots,
        }
    }

    pub(crate) fn from_parts(dims: FieldDims, selected: [Vec<u32>; 5], counts: [u32; 5]) -> Self {
        let mut slot_of: [Vec<u32>; 5] = Default::default();
        for t in NodeType::ALL {
            let mut rev = vec![NO_SLOT; counts[t.index()] as usize];
            for (slot, &id) in selected[t.index()].iter().enumerate() {
                rev[id as usize] = slot as u32;
            }
            slot_of[t.index()] = rev;
        }
        ProjectionTable {
            dims,
            selected,
            slot_of,
        }
    }
}

/// Sparse multi-hot feature vector; all active entries are 1.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    dims: FieldDims,
    /// Active slot indices per field, ascending.
    slots: [Vec<u32>; 5],
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.dims.feature_dim()
    }

    pub fn field_slots(&self, t: NodeType) -> &[u32] {
        &self.slots[t.index()]
    }

    pub fn popcount(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    /// Active indices in the concatenated layout, ascending.
    pub fn global_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.popcount());
        for t in NodeType::ALL {
            let off = self.dims.offset(t);
            out.extend(self.slots[t.index()].iter().map(|&s| off + s as usize));
        }
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for i in self.global_indices() {
            v[i] = 1.0;
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeType;

    fn graph_with(edges: [Vec<(u32, u32)>; 6], counts: [u32; 5]) -> HeteroGraph {
        HeteroGraph::from_edges(counts, edges).unwrap()
    }

    #[test]
    fn tie_break_by_ascending_id() {
        // tags 0,1,2 with degrees 1,2,2 and width 2 -> picks tags 1 then 2
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoTag.index()] = vec![(0, 0), (0, 1), (1, 1), (0, 2), (1, 2)];
        let g = graph_with(edges, [2, 3, 0, 0, 0]);
        let dims = FieldDims([2, 2, 2, 2, 2]);
        let table = ProjectionTable::fit(&g, dims);
        assert_eq!(table.basis(NodeType::Tag), &[1, 2]);
    }

    #[test]
    fn short_basis_when_type_is_small() {
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoTag.index()] = vec![(0, 0)];
        let g = graph_with(edges, [1, 1, 0, 0, 0]);
        let dims = FieldDims([4, 4, 4, 4, 4]);
        let table = ProjectionTable::fit(&g, dims);
        assert_eq!(table.basis(NodeType::Video).len(), 1);
        assert_eq!(table.basis(NodeType::Media).len(), 0);
    }

    #[test]
    fn zero_degree_node_still_selectable() {
        let g = graph_with(Default::default(), [0, 1, 0, 0, 0]);
        let table = ProjectionTable::fit(&g, FieldDims([2, 2, 2, 2, 2]));
        assert_eq!(table.basis(NodeType::Tag), &[0]);
    }

    #[test]
    fn single_hot_and_layout() {
        // tag 0's only neighbor is video 1; make video 1 land in slot 1
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoTag.index()] = vec![(1, 0)];
        edges[EdgeType::VideoVideo.index()] = vec![(0, 2), (0, 3)];
        let g = graph_with(edges, [4, 1, 0, 0, 0]);
        let dims = FieldDims([3, 2, 2, 2, 2]);
        let table = ProjectionTable::fit(&g, dims);
        // degrees: v0=2, v1=1, v2=1, v3=1 -> basis [0, 1, 2]
        assert_eq!(table.basis(NodeType::Video), &[0, 1, 2]);
        let f = table.feature(&g, NodeRef::new(NodeType::Tag, 0));
        let dense = f.to_dense();
        assert_eq!(dense.len(), dims.feature_dim());
        assert_eq!(f.popcount(), 1);
        assert_eq!(dense[1], 1.0); // video block offset 0, slot 1
        assert!(dense.iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn isolated_node_all_zero() {
        let g = graph_with(Default::default(), [1, 0, 0, 0, 0]);
        let table = ProjectionTable::fit(&g, FieldDims::default());
        let f = table.feature(&g, NodeRef::new(NodeType::Video, 0));
        assert_eq!(f.popcount(), 0);
        assert_eq!(f.to_dense().len(), 900);
    }

    #[test]
    fn unselected_neighbors_do_not_fire() {
        // video 0 adjacent to tags 1,2 (selected) and tag 0 (unselected)
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoTag.index()] = vec![(0, 0), (0, 1), (0, 2), (1, 1), (1, 2)];
        let g = graph_with(edges, [2, 3, 0, 0, 0]);
        let table = ProjectionTable::fit(&g, FieldDims([2, 2, 2, 2, 2]));
        assert_eq!(table.basis(NodeType::Tag), &[1, 2]);
        let f = table.feature(&g, NodeRef::new(NodeType::Video, 0));
        assert_eq!(f.field_slots(NodeType::Tag).len(), 2);
    }

    #[test]
    fn popcount_bounded_by_width_and_degree() {
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoTag.index()] = (0..10).map(|t| (0, t)).collect();
        let g = graph_with(edges, [1, 10, 0, 0, 0]);
        let table = ProjectionTable::fit(&g, FieldDims([2, 3, 2, 2, 2]));
        let f = table.feature(&g, NodeRef::new(NodeType::Video, 0));
        let node = NodeRef::new(NodeType::Video, 0);
        assert!(f.field_slots(NodeType::Tag).len() <= 3.min(g.degree(node)));
        assert_eq!(f.field_slots(NodeType::Tag).len(), 3);
    }

    #[test]
    fn fit_is_deterministic() {
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        edges[EdgeType::VideoTag.index()] = vec![(0, 0), (1, 1), (2, 2)];
        let g = graph_with(edges, [3, 3, 0, 0, 0]);
        let a = ProjectionTable::fit(&g, FieldDims([2, 2, 2, 2, 2]));
        let b = ProjectionTable::fit(&g, FieldDims([2, 2, 2, 2, 2]));
        assert_eq!(a, b);
    }
}
