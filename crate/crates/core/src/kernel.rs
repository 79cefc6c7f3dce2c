//! Exact tabular kernels over finite discrete variables.
//!
//! A [`TabularKernel`] is a dense table representing `q(V | W)`: for every
//! context assignment `w` the entries over outcome assignments are
//! non-negative and sum to one. Conditioning, marginalization, the kernel
//! fixing operator and the nested Markov factorization check all live here.
//!
//! Tables are row-major with the first variable most significant; the context
//! block is the major axis. Probabilities are kept in linear space.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{GraphError, MixedGraph, VertexId};

/// Tolerance for the per-context normalization invariant.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Hard cap on dense table size.
pub const MAX_TABLE_CELLS: usize = 1 << 24;

/// A discrete variable together with its number of categories.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VarSpec {
    pub id: VertexId,
    pub cardinality: usize,
}

impl VarSpec {
    pub fn new(id: impl Into<VertexId>, cardinality: usize) -> Self {
        VarSpec { id: id.into(), cardinality }
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("variable `{0}` has cardinality 0")]
    ZeroCardinality(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("outcome and context share variable `{0}`")]
    OverlappingVars(String),
    #[error("table has {actual} cells, expected {expected}")]
    TableShape { expected: usize, actual: usize },
    #[error("table exceeds the {MAX_TABLE_CELLS}-cell cap ({0} cells)")]
    TableTooLarge(usize),
    #[error("negative entry {value} at flat index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("context {context} sums to {sum}, not 1")]
    NotNormalized { context: String, sum: f64 },
    #[error("`{0}` is not an outcome variable of the kernel")]
    NotAnOutcome(String),
    #[error("zero-probability conditioning event at {assignment}")]
    ZeroConditioningEvent { assignment: String },
    #[error("zero denominator while fixing `{vertex}` at {assignment}")]
    ZeroFixDenominator { vertex: String, assignment: String },
    #[error("kernel outcomes {kernel:?} do not match the graph's random vertices {graph:?}")]
    OutcomeGraphMismatch { kernel: Vec<String>, graph: Vec<String> },
    #[error("kernel context does not cover the graph's fixed vertices (missing `{0}`)")]
    MissingContext(String),
    #[error("cardinality of `{var}` disagrees: {left} vs {right}")]
    CardinalityMismatch { var: String, left: usize, right: usize },
    #[error("variables {0:?} are not shared by both kernels")]
    IncomparableKernels(Vec<String>),
    #[error("nested factorization check supports at most {limit} random vertices, graph has {actual}")]
    SizeBound { limit: usize, actual: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Unnormalized multivariate table; the workhorse behind kernels and
/// functional evaluation. Crate-internal.
#[derive(Clone, Debug)]
pub(crate) struct Factor {
    /// Sorted by variable id; uniqueness enforced at construction.
    pub vars: Vec<VarSpec>,
    pub table: Vec<f64>,
}

fn table_len(vars: &[VarSpec]) -> usize {
    vars.iter().map(|v| v.cardinality).product()
}

impl Factor {
    pub fn new(mut vars: Vec<VarSpec>, table: Vec<f64>) -> Result<Self, KernelError> {
        for v in &vars {
            if v.cardinality == 0 {
                return Err(KernelError::ZeroCardinality(v.id.to_string()));
            }
        }
        let sorted = vars.windows(2).all(|w| w[0].id < w[1].id);
        if !sorted {
            let order: Vec<usize> = {
                let mut idx: Vec<usize> = (0..vars.len()).collect();
                idx.sort_by(|&a, &b| vars[a].id.cmp(&vars[b].id));
                idx
            };
            let reordered: Vec<VarSpec> = order.iter().map(|&i| vars[i].clone()).collect();
            let strides = strides_of(&vars);
            let new_len = table_len(&vars);
            if table.len() != new_len {
                return Err(KernelError::TableShape { expected: new_len, actual: table.len() });
            }
            let mut new_table = vec![0.0; new_len];
            let new_strides = strides_of(&reordered);
            let mut assignment = vec![0usize; vars.len()];
            for (flat, value) in table.iter().enumerate() {
                decode(flat, &strides, &vars, &mut assignment);
                let mut nf = 0usize;
                for (pos, &orig) in order.iter().enumerate() {
                    nf += assignment[orig] * new_strides[pos];
                }
                new_table[nf] = *value;
            }
            vars = reordered;
            return Factor::new(vars, new_table);
        }
        for w in vars.windows(2) {
            if w[0].id == w[1].id {
                return Err(KernelError::DuplicateVariable(w[0].id.to_string()));
            }
        }
        let expected = table_len(&vars);
        if expected > MAX_TABLE_CELLS {
            return Err(KernelError::TableTooLarge(expected));
        }
        if table.len() != expected {
            return Err(KernelError::TableShape { expected, actual: table.len() });
        }
        Ok(Factor { vars, table })
    }

    pub fn constant(value: f64) -> Self {
        Factor { vars: Vec::new(), table: vec![value] }
    }

    pub fn var_ids(&self) -> BTreeSet<VertexId> {
        self.vars.iter().map(|v| v.id.clone()).collect()
    }

    fn position(&self, id: &VertexId) -> Option<usize> {
        self.vars.iter().position(|v| &v.id == id)
    }

    /// Pointwise product over the union of the variables.
    pub fn multiply(&self, other: &Factor) -> Result<Factor, KernelError> {
        let mut vars: Vec<VarSpec> = self.vars.clone();
        for v in &other.vars {
            match vars.iter().find(|u| u.id == v.id) {
                Some(u) if u.cardinality != v.cardinality => {
                    return Err(KernelError::CardinalityMismatch {
                        var: v.id.to_string(),
                        left: u.cardinality,
                        right: v.cardinality,
                    })
                }
                Some(_) => {}
                None => vars.push(v.clone()),
            }
        }
        vars.sort_by(|a, b| a.id.cmp(&b.id));
        let len = table_len(&vars);
        if len > MAX_TABLE_CELLS {
            return Err(KernelError::TableTooLarge(len));
        }
        let strides = strides_of(&vars);
        let self_map: Vec<usize> = self.vars.iter().map(|v| vars.iter().position(|u| u.id == v.id).unwrap()).collect();
        let other_map: Vec<usize> = other.vars.iter().map(|v| vars.iter().position(|u| u.id == v.id).unwrap()).collect();
        let self_strides = strides_of(&self.vars);
        let other_strides = strides_of(&other.vars);
        let mut table = vec![0.0; len];
        let mut assignment = vec![0usize; vars.len()];
        for (flat, cell) in table.iter_mut().enumerate() {
            decode(flat, &strides, &vars, &mut assignment);
            let mut fa = 0usize;
            for (i, &pos) in self_map.iter().enumerate() {
                fa += assignment[pos] * self_strides[i];
            }
            let mut fb = 0usize;
            for (i, &pos) in other_map.iter().enumerate() {
                fb += assignment[pos] * other_strides[i];
            }
            *cell = self.table[fa] * other.table[fb];
        }
        Factor::new(vars, table)
    }

    /// Sum out the given variables.
    pub fn sum_out(&self, drop: &BTreeSet<VertexId>) -> Factor {
        if drop.is_empty() {
            return self.clone();
        }
        let keep: Vec<VarSpec> = self.vars.iter().filter(|v| !drop.contains(&v.id)).cloned().collect();
        let keep_positions: Vec<usize> = self
            .vars
            .iter()
            .enumerate()
            .filter(|(_, v)| !drop.contains(&v.id))
            .map(|(i, _)| i)
            .collect();
        let keep_strides = strides_of(&keep);
        let strides = strides_of(&self.vars);
        let mut table = vec![0.0; table_len(&keep)];
        let mut assignment = vec![0usize; self.vars.len()];
        for (flat, value) in self.table.iter().enumerate() {
            decode(flat, &strides, &self.vars, &mut assignment);
            let mut kf = 0usize;
            for (i, &pos) in keep_positions.iter().enumerate() {
                kf += assignment[pos] * keep_strides[i];
            }
            table[kf] += *value;
        }
        Factor { vars: keep, table }
    }

    /// Restrict a variable to a single value, removing it.
    pub fn slice(&self, id: &VertexId, value: usize) -> Result<Factor, KernelError> {
        let pos = self
            .position(id)
            .ok_or_else(|| KernelError::NotAnOutcome(id.to_string()))?;
        let keep: Vec<VarSpec> = self
            .vars
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != pos)
            .map(|(_, v)| v.clone())
            .collect();
        let strides = strides_of(&self.vars);
        let keep_strides = strides_of(&keep);
        let mut table = vec![0.0; table_len(&keep)];
        let mut assignment = vec![0usize; self.vars.len()];
        for (flat, v) in self.table.iter().enumerate() {
            decode(flat, &strides, &self.vars, &mut assignment);
            if assignment[pos] != value {
                continue;
            }
            let mut kf = 0usize;
            let mut k = 0usize;
            for (i, a) in assignment.iter().enumerate() {
                if i != pos {
                    kf += a * keep_strides[k];
                    k += 1;
                }
            }
            table[kf] = *v;
        }
        Ok(Factor { vars: keep, table })
    }

    pub fn value_at(&self, assignment: &BTreeMap<VertexId, usize>) -> f64 {
        let strides = strides_of(&self.vars);
        let mut flat = 0usize;
        for (i, v) in self.vars.iter().enumerate() {
            flat += assignment[&v.id] * strides[i];
        }
        self.table[flat]
    }

    pub fn max_abs_diff(&self, other: &Factor) -> Result<f64, KernelError> {
        if self.var_ids() != other.var_ids() {
            let missing: Vec<String> = self
                .var_ids()
                .symmetric_difference(&other.var_ids())
                .map(|v| v.to_string())
                .collect();
            return Err(KernelError::IncomparableKernels(missing));
        }
        // variables are sorted by id, so layouts agree
        Ok(self
            .table
            .iter()
            .zip(&other.table)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Iterate over every assignment as (map, value).
    pub fn iter_assignments(&self) -> impl Iterator<Item = (BTreeMap<VertexId, usize>, f64)> + '_ {
        let strides = strides_of(&self.vars);
        (0..self.table.len()).map(move |flat| {
            let mut assignment = vec![0usize; self.vars.len()];
            decode(flat, &strides, &self.vars, &mut assignment);
            let map = self
                .vars
                .iter()
                .zip(&assignment)
                .map(|(v, a)| (v.id.clone(), *a))
                .collect();
            (map, self.table[flat])
        })
    }
}

fn strides_of(vars: &[VarSpec]) -> Vec<usize> {
    let mut strides = vec![1usize; vars.len()];
    for i in (0..vars.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * vars[i + 1].cardinality;
    }
    strides
}

fn decode(flat: usize, strides: &[usize], vars: &[VarSpec], out: &mut [usize]) {
    for i in 0..vars.len() {
        out[i] = (flat / strides[i]) % vars[i].cardinality;
    }
}

fn describe(assignment: &BTreeMap<VertexId, usize>) -> String {
    let parts: Vec<String> = assignment.iter().map(|(v, x)| format!("{v}={x}")).collect();
    format!("({})", parts.join(", "))
}

/// Exact discrete kernel `q(V | W)` with dense storage.
#[derive(Clone, Debug)]
pub struct TabularKernel {
    outcomes: Vec<VarSpec>,
    contexts: Vec<VarSpec>,
    /// context-major: `table[ctx * outcome_size + out]`
    table: Vec<f64>,
}

impl TabularKernel {
    pub fn new(
        outcomes: Vec<VarSpec>,
        contexts: Vec<VarSpec>,
        table: Vec<f64>,
    ) -> Result<Self, KernelError> {
        let mut seen = BTreeSet::new();
        for v in outcomes.iter().chain(&contexts) {
            if v.cardinality == 0 {
                return Err(KernelError::ZeroCardinality(v.id.to_string()));
            }
            if !seen.insert(v.id.clone()) {
                return Err(KernelError::DuplicateVariable(v.id.to_string()));
            }
        }
        for o in &outcomes {
            if contexts.iter().any(|c| c.id == o.id) {
                return Err(KernelError::OverlappingVars(o.id.to_string()));
            }
        }
        let out_len = table_len(&outcomes);
        let ctx_len = table_len(&contexts);
        let expected = out_len * ctx_len;
        if expected > MAX_TABLE_CELLS {
            return Err(KernelError::TableTooLarge(expected));
        }
        if table.len() != expected {
            return Err(KernelError::TableShape { expected, actual: table.len() });
        }
        for (i, &x) in table.iter().enumerate() {
            if x < 0.0 {
                return Err(KernelError::NegativeEntry { index: i, value: x });
            }
        }
        let k = TabularKernel { outcomes, contexts, table };
        k.verify_normalized()?;
        Ok(k)
    }

    /// Uniform kernel over the outcomes, for every context.
    pub fn uniform(outcomes: Vec<VarSpec>, contexts: Vec<VarSpec>) -> Result<Self, KernelError> {
        let out_len = table_len(&outcomes);
        let ctx_len = table_len(&contexts);
        let table = vec![1.0 / out_len as f64; out_len * ctx_len];
        TabularKernel::new(outcomes, contexts, table)
    }

    fn verify_normalized(&self) -> Result<(), KernelError> {
        let out_len = table_len(&self.outcomes);
        let ctx_len = table_len(&self.contexts);
        let ctx_strides = strides_of(&self.contexts);
        for ctx in 0..ctx_len {
            let sum: f64 = self.table[ctx * out_len..(ctx + 1) * out_len].iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                let mut assignment = vec![0usize; self.contexts.len()];
                decode(ctx, &ctx_strides, &self.contexts, &mut assignment);
                let map: BTreeMap<VertexId, usize> = self
                    .contexts
                    .iter()
                    .zip(&assignment)
                    .map(|(v, a)| (v.id.clone(), *a))
                    .collect();
                return Err(KernelError::NotNormalized { context: describe(&map), sum });
            }
        }
        Ok(())
    }

    pub fn outcome_vars(&self) -> &[VarSpec] {
        &self.outcomes
    }

    pub fn context_vars(&self) -> &[VarSpec] {
        &self.contexts
    }

    pub fn outcome_ids(&self) -> BTreeSet<VertexId> {
        self.outcomes.iter().map(|v| v.id.clone()).collect()
    }

    pub fn context_ids(&self) -> BTreeSet<VertexId> {
        self.contexts.iter().map(|v| v.id.clone()).collect()
    }

    pub(crate) fn to_factor(&self) -> Factor {
        let vars: Vec<VarSpec> = self.contexts.iter().chain(&self.outcomes).cloned().collect();
        Factor::new(vars, self.table.clone()).expect("kernel table is a valid factor")
    }

    pub(crate) fn from_factor(
        factor: &Factor,
        outcomes: &BTreeSet<VertexId>,
    ) -> Result<Self, KernelError> {
        let out: Vec<VarSpec> = factor.vars.iter().filter(|v| outcomes.contains(&v.id)).cloned().collect();
        let ctx: Vec<VarSpec> = factor.vars.iter().filter(|v| !outcomes.contains(&v.id)).cloned().collect();
        let ctx_then_out: Vec<VarSpec> = ctx.iter().chain(&out).cloned().collect();
        let strides = strides_of(&ctx_then_out);
        let src_strides = strides_of(&factor.vars);
        let mut table = vec![0.0; factor.table.len()];
        let mut assignment = vec![0usize; factor.vars.len()];
        for (flat, value) in factor.table.iter().enumerate() {
            decode(flat, &src_strides, &factor.vars, &mut assignment);
            let mut nf = 0usize;
            for (i, v) in ctx_then_out.iter().enumerate() {
                let pos = factor.vars.iter().position(|u| u.id == v.id).unwrap();
                nf += assignment[pos] * strides[i];
            }
            table[nf] = *value;
        }
        TabularKernel::new(out, ctx, table)
    }

    pub fn value(&self, assignment: &BTreeMap<VertexId, usize>) -> f64 {
        self.to_factor().value_at(assignment)
    }

    /// Keep only the given outcome variables, summing out the rest.
    pub fn marginalize(&self, keep: &BTreeSet<VertexId>) -> Result<TabularKernel, KernelError> {
        let outcome_ids = self.outcome_ids();
        for k in keep {
            if !outcome_ids.contains(k) {
                return Err(KernelError::NotAnOutcome(k.to_string()));
            }
        }
        let drop: BTreeSet<VertexId> = outcome_ids.difference(keep).cloned().collect();
        let factor = self.to_factor().sum_out(&drop);
        TabularKernel::from_factor(&factor, keep)
    }

    /// Move the given outcome variables into the context by dividing out
    /// their marginal. Zero-probability conditioning events are an error.
    pub fn condition(&self, on: &BTreeSet<VertexId>) -> Result<TabularKernel, KernelError> {
        if on.is_empty() {
            return Ok(self.clone());
        }
        let outcome_ids = self.outcome_ids();
        for v in on {
            if !outcome_ids.contains(v) {
                return Err(KernelError::NotAnOutcome(v.to_string()));
            }
        }
        let joint = self.to_factor();
        let keep_out: BTreeSet<VertexId> = outcome_ids.difference(on).cloned().collect();
        let denom = joint.sum_out(&keep_out);
        for (assignment, value) in denom.iter_assignments() {
            if value <= 0.0 {
                return Err(KernelError::ZeroConditioningEvent {
                    assignment: describe(&assignment),
                });
            }
        }
        let mut out = joint.clone();
        let strides = strides_of(&out.vars);
        let mut assignment = vec![0usize; out.vars.len()];
        let denom_positions: Vec<usize> = denom
            .vars
            .iter()
            .map(|v| out.vars.iter().position(|u| u.id == v.id).unwrap())
            .collect();
        let denom_strides = strides_of(&denom.vars);
        for flat in 0..out.table.len() {
            decode(flat, &strides, &out.vars, &mut assignment);
            let mut df = 0usize;
            for (i, &pos) in denom_positions.iter().enumerate() {
                df += assignment[pos] * denom_strides[i];
            }
            out.table[flat] /= denom.table[df];
        }
        TabularKernel::from_factor(&out, &keep_out)
    }

    /// Rename variables throughout (outcomes and contexts).
    pub fn rename(&self, map: &BTreeMap<VertexId, VertexId>) -> Result<TabularKernel, KernelError> {
        let f = |v: &VarSpec| VarSpec {
            id: map.get(&v.id).cloned().unwrap_or_else(|| v.id.clone()),
            cardinality: v.cardinality,
        };
        let factor = self.to_factor();
        let renamed_vars: Vec<VarSpec> = factor.vars.iter().map(f).collect();
        let renamed = Factor::new(renamed_vars, factor.table)?;
        let outcomes: BTreeSet<VertexId> = self
            .outcomes
            .iter()
            .map(|v| map.get(&v.id).cloned().unwrap_or_else(|| v.id.clone()))
            .collect();
        TabularKernel::from_factor(&renamed, &outcomes)
    }

    /// Drop context variables the kernel does not actually depend on,
    /// averaging over them. Errors if the dependence exceeds `tol`.
    pub fn restrict_context(
        &self,
        keep: &BTreeSet<VertexId>,
        tol: f64,
    ) -> Result<TabularKernel, KernelError> {
        let drop: Vec<VarSpec> = self
            .contexts
            .iter()
            .filter(|v| !keep.contains(&v.id))
            .cloned()
            .collect();
        if drop.is_empty() {
            return Ok(self.clone());
        }
        let drop_ids: BTreeSet<VertexId> = drop.iter().map(|v| v.id.clone()).collect();
        let n: usize = drop.iter().map(|v| v.cardinality).product();
        let factor = self.to_factor();
        let mut mean = factor.sum_out(&drop_ids);
        for x in &mut mean.table {
            *x /= n as f64;
        }
        // verify the kernel really is constant in the dropped context
        let mean_positions: Vec<usize> = mean
            .vars
            .iter()
            .map(|v| factor.vars.iter().position(|u| u.id == v.id).unwrap())
            .collect();
        let strides = strides_of(&factor.vars);
        let mean_strides = strides_of(&mean.vars);
        let mut assignment = vec![0usize; factor.vars.len()];
        for (flat, value) in factor.table.iter().enumerate() {
            decode(flat, &strides, &factor.vars, &mut assignment);
            let mut mf = 0usize;
            for (i, &pos) in mean_positions.iter().enumerate() {
                mf += assignment[pos] * mean_strides[i];
            }
            let dev = (value - mean.table[mf]).abs();
            if dev > tol {
                let map: BTreeMap<VertexId, usize> = factor
                    .vars
                    .iter()
                    .zip(&assignment)
                    .map(|(v, a)| (v.id.clone(), *a))
                    .collect();
                return Err(KernelError::ZeroConditioningEvent {
                    assignment: format!(
                        "context restriction unsound: deviation {dev:.3e} at {}",
                        describe(&map)
                    ),
                });
            }
        }
        let outcome_ids = self.outcome_ids();
        TabularKernel::from_factor(&mean, &outcome_ids)
    }

    pub fn max_abs_diff(&self, other: &TabularKernel) -> Result<f64, KernelError> {
        self.to_factor().max_abs_diff(&other.to_factor())
    }
}

fn check_alignment(q: &TabularKernel, g: &MixedGraph) -> Result<(), KernelError> {
    let kernel_out = q.outcome_ids();
    let graph_random = g.random_vertices();
    if kernel_out != graph_random {
        return Err(KernelError::OutcomeGraphMismatch {
            kernel: kernel_out.iter().map(|v| v.to_string()).collect(),
            graph: graph_random.iter().map(|v| v.to_string()).collect(),
        });
    }
    let ctx = q.context_ids();
    for w in g.fixed_vertices() {
        if !ctx.contains(&w) {
            return Err(KernelError::MissingContext(w.to_string()));
        }
    }
    Ok(())
}

/// Kernel fixing operator: `q / q(v | mb_g(v))`, moving `v` into the context.
///
/// The outcome variables of `q` must coincide with the random vertices of `g`
/// and `v` must be fixable in `g`. Division by a zero cell is an error.
pub fn fix_kernel(
    q: &TabularKernel,
    g: &MixedGraph,
    v: &VertexId,
) -> Result<TabularKernel, KernelError> {
    check_alignment(q, g)?;
    if !g.is_fixable(v)? {
        // reuse the graph-side diagnostic with its witness
        return Err(g.fix_vertex(v).unwrap_err().into());
    }
    let mb = g.markov_blanket(v)?;
    let outcome_ids = q.outcome_ids();
    // q(v | mb): marginalize the outcomes to {v} ∪ (mb ∩ V), then condition
    let mb_out: BTreeSet<VertexId> = mb.intersection(&outcome_ids).cloned().collect();
    let mut keep = mb_out.clone();
    keep.insert(v.clone());
    let denom = q.marginalize(&keep)?.condition(&mb_out).map_err(|e| match e {
        KernelError::ZeroConditioningEvent { assignment } => {
            KernelError::ZeroFixDenominator { vertex: v.to_string(), assignment }
        }
        other => other,
    })?;

    let joint = q.to_factor();
    let denom_factor = denom.to_factor();
    let strides = strides_of(&joint.vars);
    let denom_positions: Vec<usize> = denom_factor
        .vars
        .iter()
        .map(|u| joint.vars.iter().position(|w| w.id == u.id).unwrap())
        .collect();
    let denom_strides = strides_of(&denom_factor.vars);
    let mut table = joint.table.clone();
    let mut assignment = vec![0usize; joint.vars.len()];
    for (flat, cell) in table.iter_mut().enumerate() {
        decode(flat, &strides, &joint.vars, &mut assignment);
        let mut df = 0usize;
        for (i, &pos) in denom_positions.iter().enumerate() {
            df += assignment[pos] * denom_strides[i];
        }
        let d = denom_factor.table[df];
        if d <= 0.0 {
            let map: BTreeMap<VertexId, usize> = joint
                .vars
                .iter()
                .zip(&assignment)
                .map(|(u, a)| (u.id.clone(), *a))
                .collect();
            return Err(KernelError::ZeroFixDenominator {
                vertex: v.to_string(),
                assignment: describe(&map),
            });
        }
        *cell /= d;
    }
    let result = Factor::new(joint.vars, table)?;
    let mut new_outcomes = outcome_ids;
    new_outcomes.remove(v);
    TabularKernel::from_factor(&result, &new_outcomes)
}

/// Fold [`fix_kernel`] and [`MixedGraph::fix_vertex`] over a sequence.
pub fn fix_sequence(
    q: &TabularKernel,
    g: &MixedGraph,
    seq: &[VertexId],
) -> Result<(TabularKernel, MixedGraph), KernelError> {
    let mut kernel = q.clone();
    let mut graph = g.clone();
    for (i, v) in seq.iter().enumerate() {
        kernel = fix_kernel(&kernel, &graph, v).map_err(|e| match e {
            KernelError::Graph(ge) => KernelError::Graph(GraphError::InvalidSequence {
                position: i,
                source: Box::new(ge),
            }),
            other => other,
        })?;
        graph = graph.fix_vertex(v).map_err(|ge| {
            KernelError::Graph(GraphError::InvalidSequence { position: i, source: Box::new(ge) })
        })?;
    }
    Ok((kernel, graph))
}

/// Kernel of a reachable set: fix everything outside `target` using the
/// greedy schedule. `None` when the set is not reachable.
pub fn reachable_kernel(
    p: &TabularKernel,
    g: &MixedGraph,
    target: &BTreeSet<VertexId>,
) -> Result<Option<(TabularKernel, MixedGraph)>, KernelError> {
    match g.reachable(target)? {
        None => Ok(None),
        Some(seq) => fix_sequence(p, g, &seq).map(Some),
    }
}

/// Smallest-first topological order of the random vertices.
fn topological_order(g: &MixedGraph) -> Vec<VertexId> {
    let random = g.random_vertices();
    let mut order = Vec::with_capacity(random.len());
    let mut placed: BTreeSet<VertexId> = BTreeSet::new();
    while placed.len() < random.len() {
        let next = random
            .iter()
            .find(|v| {
                !placed.contains(*v)
                    && g.parents(v)
                        .into_iter()
                        .filter(|p| random.contains(p))
                        .all(|p| placed.contains(&p))
            })
            .expect("graph is acyclic")
            .clone();
        placed.insert(next.clone());
        order.push(next);
    }
    order
}

/// District (Tian) factorization of `p` with respect to `g`: for each
/// district `D`, the kernel `Π_{d ∈ D} p(d | pre(d))` under the deterministic
/// topological order. The product over districts reconstructs `p` exactly.
pub fn district_factorize(
    p: &TabularKernel,
    g: &MixedGraph,
) -> Result<BTreeMap<BTreeSet<VertexId>, TabularKernel>, KernelError> {
    check_alignment(p, g)?;
    let order = topological_order(g);
    let mut out = BTreeMap::new();
    for district in g.districts() {
        let mut product: Option<Factor> = None;
        for (i, d) in order.iter().enumerate() {
            if !district.contains(d) {
                continue;
            }
            let predecessors: BTreeSet<VertexId> = order[..i].iter().cloned().collect();
            let mut keep = predecessors.clone();
            keep.insert(d.clone());
            let cond = p.marginalize(&keep)?.condition(&predecessors)?;
            let f = cond.to_factor();
            product = Some(match product {
                None => f,
                Some(acc) => acc.multiply(&f)?,
            });
        }
        let factor = product.expect("district is nonempty");
        out.insert(district.clone(), TabularKernel::from_factor(&factor, &district)?);
    }
    Ok(out)
}

/// Check the nested Markov factorization of the observed margin of `p_full`
/// against the latent projection of `g_full`.
///
/// Marginalizes out hidden variables, then verifies for every reachable set
/// `R` that fixing `V \ R` equals the product of the intrinsic kernels over
/// the districts of the fixed graph, elementwise to `1e-9`. Bounded to six
/// random vertices after projection.
pub fn nested_factorization_check(
    p_full: &TabularKernel,
    g_full: &MixedGraph,
) -> Result<bool, KernelError> {
    const LIMIT: usize = 6;
    const TOL: f64 = 1e-9;
    let hidden = g_full.hidden_vertices();
    let observed: BTreeSet<VertexId> = p_full
        .outcome_ids()
        .difference(&hidden)
        .cloned()
        .collect();
    let margin = p_full.marginalize(&observed)?;
    let g = g_full.latent_project();
    let random = g.random_vertices();
    if random.len() > LIMIT {
        return Err(KernelError::SizeBound { limit: LIMIT, actual: random.len() });
    }

    // enumerate reachable sets by walking the fixing lattice
    let members: Vec<VertexId> = random.iter().cloned().collect();
    let full_mask: u32 = if members.is_empty() { 0 } else { (1u32 << members.len()) - 1 };
    let mut reachable: BTreeSet<u32> = BTreeSet::new();
    let mut stack = vec![(full_mask, g.clone())];
    reachable.insert(full_mask);
    let mut graphs: BTreeMap<u32, MixedGraph> = BTreeMap::new();
    graphs.insert(full_mask, g.clone());
    while let Some((mask, graph)) = stack.pop() {
        for (i, v) in members.iter().enumerate() {
            if mask & (1 << i) != 0 && graph.is_fixable(v)? {
                let next = mask & !(1 << i);
                if reachable.insert(next) {
                    let fixed = graph.fix_vertex(v)?;
                    graphs.insert(next, fixed.clone());
                    stack.push((next, fixed));
                }
            }
        }
    }

    // intrinsic kernels, computed once
    let mut intrinsic: BTreeMap<BTreeSet<VertexId>, Factor> = BTreeMap::new();
    for mask in &reachable {
        let set: BTreeSet<VertexId> = members
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, v)| v.clone())
            .collect();
        if set.is_empty() {
            continue;
        }
        let fixed_graph = &graphs[mask];
        let d = fixed_graph.district_of(set.iter().next().unwrap());
        if d == set {
            if let Some((k, _)) = reachable_kernel(&margin, &g, &set)? {
                intrinsic.insert(set, k.to_factor());
            }
        }
    }

    for mask in &reachable {
        let set: BTreeSet<VertexId> = members
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, v)| v.clone())
            .collect();
        let Some((fixed_kernel, fixed_graph)) = reachable_kernel(&margin, &g, &set)? else {
            continue;
        };
        let mut product = Factor::constant(1.0);
        for district in fixed_graph.districts() {
            let Some(k) = intrinsic.get(&district) else {
                return Ok(false);
            };
            product = product.multiply(k)?;
        }
        // compare as functions over all of V
        let lhs = fixed_kernel.to_factor();
        let all: BTreeSet<VertexId> = random.clone();
        let ctx_pad = pad_to(&lhs, &all, &margin)?;
        let rhs_pad = pad_to(&product, &all, &margin)?;
        if ctx_pad.max_abs_diff(&rhs_pad)? > TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Extend a factor to the full variable set by multiplying with 1 over the
/// missing variables (cards taken from the reference kernel).
fn pad_to(
    f: &Factor,
    all: &BTreeSet<VertexId>,
    reference: &TabularKernel,
) -> Result<Factor, KernelError> {
    let have = f.var_ids();
    let mut out = f.clone();
    for v in all {
        if !have.contains(v) {
            let card = reference
                .outcome_vars()
                .iter()
                .chain(reference.context_vars())
                .find(|u| &u.id == v)
                .map(|u| u.cardinality)
                .ok_or_else(|| KernelError::NotAnOutcome(v.to_string()))?;
            let ones = Factor::new(vec![VarSpec::new(v.clone(), card)], vec![1.0; card])?;
            out = out.multiply(&ones)?;
        }
    }
    Ok(out)
}
