//! Graph artifact files.
//!
//! Binary layout ("GDR1"): magic, u64 config hash, five u32 node counts, then
//! for each edge type a u64 edge count followed by sorted (u32, u32) endpoint
//! pairs. All integers little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::graph::ingest::{Corpus, Interner};
use crate::graph::{EdgeType, HeteroGraph, NodeType};

const MAGIC: &[u8; 4] = b"GDR1";

impl HeteroGraph {
    pub fn save(&self, path: &Path, config_hash: u64) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io_err)?;
        binio::write_u64(&mut w, config_hash).map_err(io_err)?;
        for c in self.counts() {
            binio::write_u32(&mut w, c).map_err(io_err)?;
        }
        for et in EdgeType::ALL {
            let edges = self.typed_edge_pairs(et);
            binio::write_u64(&mut w, edges.len() as u64).map_err(io_err)?;
            for (a, b) in edges {
                binio::write_u32(&mut w, a).map_err(io_err)?;
                binio::write_u32(&mut w, b).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    /// Canonical sorted endpoint pairs of one edge type (same-type edges as
    /// (min, max)).
    fn typed_edge_pairs(&self, et: EdgeType) -> Vec<(u32, u32)> {
        let (ta, tb) = et.endpoints();
        let mut out = Vec::with_capacity(self.edge_count(et));
        for a in 0..self.counts()[ta.index()] {
            let src = crate::graph::NodeRef::new(ta, a);
            for &b in self.neighbors_of_type(src, tb) {
                if ta == tb && b <= a {
                    continue;
                }
                out.push((a, b));
            }
        }
        out
    }

    /// Loads a graph file, returning the graph and its embedded config hash.
    /// Truncated or mistagged files fail without producing a partial graph.
    pub fn load(path: &Path) -> Result<(HeteroGraph, u64)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let fmt_err = |e: std::io::Error| Error::format(path, e.to_string());
        binio::expect_magic(&mut r, MAGIC).map_err(fmt_err)?;
        let hash = binio::read_u64(&mut r).map_err(fmt_err)?;
        let mut counts = [0u32; 5];
        for c in &mut counts {
            *c = binio::read_u32(&mut r).map_err(fmt_err)?;
        }
        let mut edges: [Vec<(u32, u32)>; 6] = Default::default();
        for et in EdgeType::ALL {
            let n = binio::read_u64(&mut r).map_err(fmt_err)? as usize;
            let mut list = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                let a = binio::read_u32(&mut r).map_err(fmt_err)?;
                let b = binio::read_u32(&mut r).map_err(fmt_err)?;
                list.push((a, b));
            }
            edges[et.index()] = list;
        }
        binio::expect_eof(&mut r).map_err(fmt_err)?;
        let graph = HeteroGraph::from_edges(counts, edges)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok((graph, hash))
    }
}

/// Sidecar mapping local ids back to input strings, written next to the
/// graph file (`<graph>.ids.json`). Needed by stages that read or emit
/// external ids (matching, evaluation).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct IdMaps {
    pub videos: Interner,
    pub tags: Interner,
    pub medias: Interner,
    pub groups: Interner,
    pub words: Interner,
}

impl IdMaps {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        IdMaps {
            videos: corpus.videos.clone(),
            tags: corpus.tags.clone(),
            medias: corpus.medias.clone(),
            groups: corpus.groups.clone(),
            words: corpus.words.clone(),
        }
    }

    pub fn sidecar_path(graph_path: &Path) -> PathBuf {
        let mut os = graph_path.as_os_str().to_os_string();
        os.push(".ids.json");
        PathBuf::from(os)
    }

    pub fn save(&self, graph_path: &Path) -> Result<()> {
        let path = Self::sidecar_path(graph_path);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)
            .map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn load(graph_path: &Path) -> Result<Self> {
        let path = Self::sidecar_path(graph_path);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn interner(&self, t: NodeType) -> &Interner {
        match t {
            NodeType::Video => &self.videos,
            NodeType::Tag => &self.tags,
            NodeType::Media => &self.medias,
            NodeType::UserGroup => &self.groups,
            NodeType::Word => &self.words,
        }
    }
}
