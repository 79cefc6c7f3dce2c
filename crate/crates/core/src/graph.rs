//! Mixed causal graphs: DAGs, CDAGs, ADMGs and CADMGs in one structure.
//!
//! A [`MixedGraph`] holds random, fixed (context) and hidden vertices together
//! with directed and bidirected edges. All structural algorithms used by
//! identification live here: genealogy, districts, latent projection, the
//! fixing operator, reachable and intrinsic sets, and unrolling of
//! prior/transition pairs into a single time-indexed graph.
//!
//! Graphs are immutable values; every operation returns a new graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of a vertex, unique within a graph. Ordering is lexicographic, which
/// fixes the deterministic tie-breaking used throughout.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(String);

impl VertexId {
    pub fn new(name: impl Into<String>) -> Self {
        VertexId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Time-indexed copy of this vertex, used by [`unroll`].
    pub fn at_step(&self, step: usize) -> VertexId {
        VertexId(format!("{}@{}", self.0, step))
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VertexId({})", self.0)
    }
}

impl From<&str> for VertexId {
    fn from(s: &str) -> Self {
        VertexId(s.to_string())
    }
}

impl From<String> for VertexId {
    fn from(s: String) -> Self {
        VertexId(s)
    }
}

/// Role of a vertex in a mixed graph.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum VertexKind {
    /// Observed random variable.
    Random,
    /// Context variable; no arrowheads may point into it.
    Fixed,
    /// Unobserved random variable, removed by latent projection.
    Hidden,
}

/// Genealogic relation selector for [`MixedGraph::relatives`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Relation {
    Parents,
    Children,
    Ancestors,
    Descendants,
    Siblings,
    District,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("empty vertex name")]
    EmptyName,
    #[error("duplicate vertex `{0}`")]
    DuplicateVertex(String),
    #[error("self-loop at `{0}`")]
    SelfLoop(String),
    #[error("edge with arrowhead into fixed vertex `{0}`")]
    ArrowheadIntoFixed(String),
    #[error("bidirected edge touches fixed vertex `{0}`")]
    BidirectedAtFixed(String),
    #[error("directed part has a cycle through `{0}`")]
    DirectedCycle(String),
    #[error("vertex `{0}` is not random")]
    NotRandom(String),
    #[error("`{vertex}` is not fixable: `{witness}` is both a descendant and bidirected-connected to it")]
    NotFixable { vertex: String, witness: String },
    #[error("invalid fixing sequence at position {position}: {source}")]
    InvalidSequence {
        position: usize,
        #[source]
        source: Box<GraphError>,
    },
    #[error("intrinsic-set enumeration supports at most {limit} random vertices, graph has {actual}")]
    SizeBound { limit: usize, actual: usize },
    #[error("context vertex `{context}` of step {step} is not bound to a variable of the preceding slice")]
    UnboundContext { context: String, step: usize },
    #[error("binding target `{target}` for context `{context}` is not a vertex of the preceding slice")]
    BadBindingTarget { context: String, target: String },
}

/// An acyclic mixed graph over random, fixed and hidden vertices.
///
/// Invariants, enforced at construction:
/// - the directed part is acyclic;
/// - nothing points into a fixed vertex (no directed head, no bidirected end);
/// - bidirected edges connect only random or hidden vertices;
/// - no self-loops, no duplicate edges.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MixedGraph {
    vertices: BTreeMap<VertexId, VertexKind>,
    directed: BTreeSet<(VertexId, VertexId)>,
    bidirected: BTreeSet<(VertexId, VertexId)>,
}

/// Convenience constructor for tests and fixtures.
#[derive(Default)]
pub struct GraphBuilder {
    vertices: Vec<(VertexId, VertexKind)>,
    directed: Vec<(VertexId, VertexId)>,
    bidirected: Vec<(VertexId, VertexId)>,
}

impl GraphBuilder {
    pub fn vertex(mut self, name: impl Into<VertexId>, kind: VertexKind) -> Self {
        self.vertices.push((name.into(), kind));
        self
    }

    pub fn random(self, name: impl Into<VertexId>) -> Self {
        self.vertex(name, VertexKind::Random)
    }

    pub fn fixed(self, name: impl Into<VertexId>) -> Self {
        self.vertex(name, VertexKind::Fixed)
    }

    pub fn hidden(self, name: impl Into<VertexId>) -> Self {
        self.vertex(name, VertexKind::Hidden)
    }

    pub fn edge(mut self, from: impl Into<VertexId>, to: impl Into<VertexId>) -> Self {
        self.directed.push((from.into(), to.into()));
        self
    }

    pub fn bidirected(mut self, a: impl Into<VertexId>, b: impl Into<VertexId>) -> Self {
        self.bidirected.push((a.into(), b.into()));
        self
    }

    pub fn build(self) -> Result<MixedGraph, GraphError> {
        MixedGraph::new(self.vertices, self.directed, self.bidirected)
    }
}

impl MixedGraph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::default()
    }

    pub fn new(
        vertices: impl IntoIterator<Item = (VertexId, VertexKind)>,
        directed: impl IntoIterator<Item = (VertexId, VertexId)>,
        bidirected: impl IntoIterator<Item = (VertexId, VertexId)>,
    ) -> Result<Self, GraphError> {
        let mut vs = BTreeMap::new();
        for (id, kind) in vertices {
            if id.as_str().is_empty() {
                return Err(GraphError::EmptyName);
            }
            if vs.insert(id.clone(), kind).is_some() {
                return Err(GraphError::DuplicateVertex(id.to_string()));
            }
        }
        let mut dir = BTreeSet::new();
        for (a, b) in directed {
            let ka = *vs.get(&a).ok_or_else(|| GraphError::UnknownVertex(a.to_string()))?;
            let _ = *vs.get(&b).ok_or_else(|| GraphError::UnknownVertex(b.to_string()))?;
            if a == b {
                return Err(GraphError::SelfLoop(a.to_string()));
            }
            if vs[&b] == VertexKind::Fixed {
                return Err(GraphError::ArrowheadIntoFixed(b.to_string()));
            }
            let _ = ka;
            dir.insert((a, b));
        }
        let mut bi = BTreeSet::new();
        for (a, b) in bidirected {
            for v in [&a, &b] {
                match vs.get(v) {
                    None => return Err(GraphError::UnknownVertex(v.to_string())),
                    Some(VertexKind::Fixed) => {
                        return Err(GraphError::BidirectedAtFixed(v.to_string()))
                    }
                    Some(_) => {}
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a.to_string()));
            }
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            bi.insert((a, b));
        }
        let g = MixedGraph { vertices: vs, directed: dir, bidirected: bi };
        if let Some(v) = g.find_directed_cycle() {
            return Err(GraphError::DirectedCycle(v.to_string()));
        }
        Ok(g)
    }

    /// Kahn's algorithm; returns a vertex on a cycle if one exists.
    fn find_directed_cycle(&self) -> Option<&VertexId> {
        let mut indeg: BTreeMap<&VertexId, usize> =
            self.vertices.keys().map(|v| (v, 0)).collect();
        for (_, b) in &self.directed {
            *indeg.get_mut(b).unwrap() += 1;
        }
        let mut queue: VecDeque<&VertexId> =
            indeg.iter().filter(|(_, &d)| d == 0).map(|(v, _)| *v).collect();
        let mut seen = 0usize;
        while let Some(v) = queue.pop_front() {
            seen += 1;
            for (a, b) in &self.directed {
                if a == v {
                    let d = indeg.get_mut(b).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        queue.push_back(b);
                    }
                }
            }
        }
        if seen == self.vertices.len() {
            None
        } else {
            indeg.iter().find(|(_, &d)| d > 0).map(|(v, _)| *v)
        }
    }

    pub fn contains(&self, v: &VertexId) -> bool {
        self.vertices.contains_key(v)
    }

    pub fn kind(&self, v: &VertexId) -> Result<VertexKind, GraphError> {
        self.vertices
            .get(v)
            .copied()
            .ok_or_else(|| GraphError::UnknownVertex(v.to_string()))
    }

    pub fn vertices(&self) -> impl Iterator<Item = (&VertexId, VertexKind)> {
        self.vertices.iter().map(|(v, k)| (v, *k))
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = &(VertexId, VertexId)> {
        self.directed.iter()
    }

    pub fn bidirected_edges(&self) -> impl Iterator<Item = &(VertexId, VertexId)> {
        self.bidirected.iter()
    }

    pub fn of_kind(&self, kind: VertexKind) -> BTreeSet<VertexId> {
        self.vertices
            .iter()
            .filter(|(_, k)| **k == kind)
            .map(|(v, _)| v.clone())
            .collect()
    }

    pub fn random_vertices(&self) -> BTreeSet<VertexId> {
        self.of_kind(VertexKind::Random)
    }

    pub fn fixed_vertices(&self) -> BTreeSet<VertexId> {
        self.of_kind(VertexKind::Fixed)
    }

    pub fn hidden_vertices(&self) -> BTreeSet<VertexId> {
        self.of_kind(VertexKind::Hidden)
    }

    pub fn has_hidden(&self) -> bool {
        self.vertices.values().any(|k| *k == VertexKind::Hidden)
    }

    fn check_known(&self, v: &VertexId) -> Result<(), GraphError> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(GraphError::UnknownVertex(v.to_string()))
        }
    }

    pub fn parents(&self, v: &VertexId) -> BTreeSet<VertexId> {
        self.directed
            .iter()
            .filter(|(_, b)| b == v)
            .map(|(a, _)| a.clone())
            .collect()
    }

    pub fn children(&self, v: &VertexId) -> BTreeSet<VertexId> {
        self.directed
            .iter()
            .filter(|(a, _)| a == v)
            .map(|(_, b)| b.clone())
            .collect()
    }

    pub fn siblings(&self, v: &VertexId) -> BTreeSet<VertexId> {
        self.bidirected
            .iter()
            .filter_map(|(a, b)| {
                if a == v {
                    Some(b.clone())
                } else if b == v {
                    Some(a.clone())
                } else {
                    None
                }
            })
            .collect()
    }

    fn closure(
        &self,
        seeds: impl IntoIterator<Item = VertexId>,
        step: impl Fn(&VertexId) -> BTreeSet<VertexId>,
    ) -> BTreeSet<VertexId> {
        let mut out: BTreeSet<VertexId> = seeds.into_iter().collect();
        let mut stack: Vec<VertexId> = out.iter().cloned().collect();
        while let Some(v) = stack.pop() {
            for w in step(&v) {
                if out.insert(w.clone()) {
                    stack.push(w);
                }
            }
        }
        out
    }

    /// Ancestors of `v`, including `v` itself by convention.
    pub fn ancestors(&self, v: &VertexId) -> BTreeSet<VertexId> {
        self.closure([v.clone()], |u| self.parents(u))
    }

    /// Descendants of `v`, including `v` itself by convention.
    pub fn descendants(&self, v: &VertexId) -> BTreeSet<VertexId> {
        self.closure([v.clone()], |u| self.children(u))
    }

    /// Ancestors of a set (disjunctive union), each vertex included.
    pub fn ancestors_of_set(&self, vs: &BTreeSet<VertexId>) -> BTreeSet<VertexId> {
        self.closure(vs.iter().cloned(), |u| self.parents(u))
    }

    pub fn descendants_of_set(&self, vs: &BTreeSet<VertexId>) -> BTreeSet<VertexId> {
        self.closure(vs.iter().cloned(), |u| self.children(u))
    }

    /// Bidirected-connected component of `v` among non-fixed vertices,
    /// including `v` itself.
    pub fn district_of(&self, v: &VertexId) -> BTreeSet<VertexId> {
        self.closure([v.clone()], |u| self.siblings(u))
    }

    /// Genealogic relatives of `v`. Ancestors, descendants and district
    /// contain `v` itself; parents, children and siblings do not.
    pub fn relatives(&self, v: &VertexId, rel: Relation) -> Result<BTreeSet<VertexId>, GraphError> {
        self.check_known(v)?;
        Ok(match rel {
            Relation::Parents => self.parents(v),
            Relation::Children => self.children(v),
            Relation::Ancestors => self.ancestors(v),
            Relation::Descendants => self.descendants(v),
            Relation::Siblings => self.siblings(v),
            Relation::District => self.district_of(v),
        })
    }

    /// Partition of the non-fixed vertices into maximal bidirected-connected
    /// components, in deterministic order of their smallest element.
    pub fn districts(&self) -> Vec<BTreeSet<VertexId>> {
        let mut remaining: BTreeSet<VertexId> = self
            .vertices
            .iter()
            .filter(|(_, k)| **k != VertexKind::Fixed)
            .map(|(v, _)| v.clone())
            .collect();
        let mut out = Vec::new();
        while let Some(v) = remaining.iter().next().cloned() {
            let d = self.district_of(&v);
            for u in &d {
                remaining.remove(u);
            }
            out.push(d);
        }
        out
    }

    /// Ordered Markov blanket: `(dis(v) ∪ pa(dis(v))) \ {v}`.
    pub fn markov_blanket(&self, v: &VertexId) -> Result<BTreeSet<VertexId>, GraphError> {
        if self.kind(v)? != VertexKind::Random {
            return Err(GraphError::NotRandom(v.to_string()));
        }
        let dis = self.district_of(v);
        let mut out = dis.clone();
        for d in &dis {
            out.extend(self.parents(d));
        }
        out.remove(v);
        Ok(out)
    }

    /// Project out all hidden vertices, one at a time in lexicographic order.
    ///
    /// Eliminating a hidden vertex `h` adds `p → c` for every parent `p` and
    /// child `c` of `h`, `s ↔ c` for every sibling `s` and child `c`, and
    /// `a ↔ b` for every pair of children. The result is independent of the
    /// elimination order and idempotent when no hidden vertices exist.
    pub fn latent_project(&self) -> MixedGraph {
        let mut g = self.clone();
        while let Some(h) = g.hidden_vertices().iter().next().cloned() {
            g = g.eliminate_hidden(&h);
        }
        g
    }

    fn eliminate_hidden(&self, h: &VertexId) -> MixedGraph {
        debug_assert_eq!(self.vertices[h], VertexKind::Hidden);
        let pa = self.parents(h);
        let ch = self.children(h);
        let sib = self.siblings(h);
        let mut directed = self.directed.clone();
        let mut bidirected = self.bidirected.clone();
        directed.retain(|(a, b)| a != h && b != h);
        bidirected.retain(|(a, b)| a != h && b != h);
        for p in &pa {
            for c in &ch {
                if p != c {
                    directed.insert((p.clone(), c.clone()));
                }
            }
        }
        let mut add_bi = |a: &VertexId, b: &VertexId| {
            if a != b {
                let (x, y) = if a <= b { (a, b) } else { (b, a) };
                bidirected.insert((x.clone(), y.clone()));
            }
        };
        for s in &sib {
            for c in &ch {
                add_bi(s, c);
            }
        }
        let ch_vec: Vec<&VertexId> = ch.iter().collect();
        for i in 0..ch_vec.len() {
            for j in i + 1..ch_vec.len() {
                add_bi(ch_vec[i], ch_vec[j]);
            }
        }
        let mut vertices = self.vertices.clone();
        vertices.remove(h);
        MixedGraph { vertices, directed, bidirected }
    }

    /// A random vertex is fixable when nothing else is simultaneously its
    /// descendant and in its district: `de(v) ∩ dis(v) = {v}`.
    pub fn is_fixable(&self, v: &VertexId) -> Result<bool, GraphError> {
        self.fixability_witness(v).map(|w| w.is_none())
    }

    /// `None` when fixable, otherwise the smallest witnessing vertex.
    fn fixability_witness(&self, v: &VertexId) -> Result<Option<VertexId>, GraphError> {
        if self.kind(v)? != VertexKind::Random {
            return Err(GraphError::NotRandom(v.to_string()));
        }
        let de = self.descendants(v);
        let dis = self.district_of(v);
        Ok(de.intersection(&dis).find(|w| *w != v).cloned())
    }

    /// Move `v` from the random to the fixed vertices, dropping every edge
    /// with an arrowhead at `v`. All other edges are preserved.
    pub fn fix_vertex(&self, v: &VertexId) -> Result<MixedGraph, GraphError> {
        if let Some(witness) = self.fixability_witness(v)? {
            return Err(GraphError::NotFixable {
                vertex: v.to_string(),
                witness: witness.to_string(),
            });
        }
        let mut vertices = self.vertices.clone();
        vertices.insert(v.clone(), VertexKind::Fixed);
        let directed = self
            .directed
            .iter()
            .filter(|(_, b)| b != v)
            .cloned()
            .collect();
        let bidirected = self
            .bidirected
            .iter()
            .filter(|(a, b)| a != v && b != v)
            .cloned()
            .collect();
        Ok(MixedGraph { vertices, directed, bidirected })
    }

    /// Fix a whole sequence, left to right.
    pub fn fix_sequence(&self, seq: &[VertexId]) -> Result<MixedGraph, GraphError> {
        let mut g = self.clone();
        for (i, v) in seq.iter().enumerate() {
            g = g.fix_vertex(v).map_err(|e| GraphError::InvalidSequence {
                position: i,
                source: Box::new(e),
            })?;
        }
        Ok(g)
    }

    /// Greedy fixing schedule for `V \ r`: repeatedly fix the
    /// lexicographically smallest fixable vertex. Returns `None` when stuck.
    pub fn reachable(&self, r: &BTreeSet<VertexId>) -> Result<Option<Vec<VertexId>>, GraphError> {
        let random = self.random_vertices();
        for v in r {
            self.check_known(v)?;
            if !random.contains(v) {
                return Err(GraphError::NotRandom(v.to_string()));
            }
        }
        let mut g = self.clone();
        let mut todo: BTreeSet<VertexId> = random.difference(r).cloned().collect();
        let mut seq = Vec::new();
        while !todo.is_empty() {
            let next = todo
                .iter()
                .find(|v| g.is_fixable(v).unwrap_or(false))
                .cloned();
            match next {
                Some(v) => {
                    g = g.fix_vertex(&v)?;
                    todo.remove(&v);
                    seq.push(v);
                }
                None => return Ok(None),
            }
        }
        Ok(Some(seq))
    }

    /// All intrinsic sets: reachable, bidirected-connected sets that form a
    /// single district once their complement is fixed. Enumeration walks the
    /// lattice of reachable sets and is capped at 16 random vertices.
    pub fn intrinsic_sets(&self) -> Result<BTreeSet<BTreeSet<VertexId>>, GraphError> {
        const LIMIT: usize = 16;
        let random: Vec<VertexId> = self.random_vertices().into_iter().collect();
        if random.len() > LIMIT {
            return Err(GraphError::SizeBound { limit: LIMIT, actual: random.len() });
        }
        let index: BTreeMap<&VertexId, usize> =
            random.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let full_mask: u32 = if random.is_empty() { 0 } else { (1u32 << random.len()) - 1 };

        let mut visited: BTreeSet<u32> = BTreeSet::new();
        let mut out = BTreeSet::new();
        let mut stack = vec![(full_mask, self.clone())];
        visited.insert(full_mask);
        while let Some((mask, g)) = stack.pop() {
            let members: BTreeSet<VertexId> = random
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, v)| v.clone())
                .collect();
            if !members.is_empty() {
                let d = g.district_of(members.iter().next().unwrap());
                if d == members {
                    out.insert(members.clone());
                }
            }
            for v in &members {
                if g.is_fixable(v)? {
                    let next_mask = mask & !(1 << index[v]);
                    if visited.insert(next_mask) {
                        stack.push((next_mask, g.fix_vertex(v)?));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Induced subgraph on `keep`: the vertices in `keep` and every edge whose
    /// endpoints both lie in `keep`.
    pub fn induced_subgraph(&self, keep: &BTreeSet<VertexId>) -> MixedGraph {
        let vertices = self
            .vertices
            .iter()
            .filter(|(v, _)| keep.contains(v))
            .map(|(v, k)| (v.clone(), *k))
            .collect();
        let directed = self
            .directed
            .iter()
            .filter(|(a, b)| keep.contains(a) && keep.contains(b))
            .cloned()
            .collect();
        let bidirected = self
            .bidirected
            .iter()
            .filter(|(a, b)| keep.contains(a) && keep.contains(b))
            .cloned()
            .collect();
        MixedGraph { vertices, directed, bidirected }
    }

    /// Rename vertices; `map` must cover every vertex that changes name.
    pub fn rename(&self, map: &BTreeMap<VertexId, VertexId>) -> Result<MixedGraph, GraphError> {
        let f = |v: &VertexId| map.get(v).cloned().unwrap_or_else(|| v.clone());
        MixedGraph::new(
            self.vertices.iter().map(|(v, k)| (f(v), *k)),
            self.directed.iter().map(|(a, b)| (f(a), f(b))),
            self.bidirected.iter().map(|(a, b)| (f(a), f(b))),
        )
    }
}

/// One slice of an unrolled model: the graph of the step plus the binding
/// from each of its fixed (context) vertices to a vertex of the previous
/// slice.
pub struct UnrollStep<'a> {
    pub graph: &'a MixedGraph,
    pub binding: &'a BTreeMap<VertexId, VertexId>,
}

/// Unroll a prior graph and a sequence of transition steps into one acyclic
/// mixed graph over time-indexed vertex copies (`name@t`, `t` starting at 1).
///
/// Each step's fixed context vertices are replaced by the bound vertices of
/// the preceding slice; the binding must map every context name to a
/// non-fixed vertex of that slice.
pub fn unroll(prior: &MixedGraph, steps: &[UnrollStep<'_>]) -> Result<MixedGraph, GraphError> {
    let mut vertices: Vec<(VertexId, VertexKind)> = Vec::new();
    let mut directed: Vec<(VertexId, VertexId)> = Vec::new();
    let mut bidirected: Vec<(VertexId, VertexId)> = Vec::new();

    // slice 1: the prior, with fixed vertices kept as global context
    let mut prev_slice: BTreeSet<VertexId> = BTreeSet::new();
    for (v, k) in prior.vertices() {
        vertices.push((v.at_step(1), k));
        if k != VertexKind::Fixed {
            prev_slice.insert(v.clone());
        }
    }
    for (a, b) in prior.directed_edges() {
        directed.push((a.at_step(1), b.at_step(1)));
    }
    for (a, b) in prior.bidirected_edges() {
        bidirected.push((a.at_step(1), b.at_step(1)));
    }

    for (i, step) in steps.iter().enumerate() {
        let t = i + 2;
        let g = step.graph;
        let resolve = |v: &VertexId| -> Result<VertexId, GraphError> {
            match g.kind(v)? {
                VertexKind::Fixed => {
                    let target = step.binding.get(v).ok_or_else(|| GraphError::UnboundContext {
                        context: v.to_string(),
                        step: t,
                    })?;
                    if !prev_slice.contains(target) {
                        return Err(GraphError::BadBindingTarget {
                            context: v.to_string(),
                            target: target.to_string(),
                        });
                    }
                    Ok(target.at_step(t - 1))
                }
                _ => Ok(v.at_step(t)),
            }
        };
        let mut this_slice = BTreeSet::new();
        for (v, k) in g.vertices() {
            if k != VertexKind::Fixed {
                vertices.push((v.at_step(t), k));
                this_slice.insert(v.clone());
            }
        }
        for (a, b) in g.directed_edges() {
            directed.push((resolve(a)?, resolve(b)?));
        }
        for (a, b) in g.bidirected_edges() {
            bidirected.push((resolve(a)?, resolve(b)?));
        }
        prev_slice = this_slice;
    }
    MixedGraph::new(vertices, directed, bidirected)
}
