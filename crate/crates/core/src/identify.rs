//! Identification of interventional distributions.
//!
//! Covers the fully observed case (truncated factorization for DAGs and
//! conditional DAGs), the hidden-variable case on latent projections (every
//! district of the outcome-ancestral subgraph must be intrinsic), and
//! first-order Markov dynamic models assembled slice by slice.
//!
//! Identifying functionals are built symbolically as [`FunctionalExpr`]
//! trees and evaluated exactly against tabular kernels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::graph::{unroll, GraphError, MixedGraph, UnrollStep, VertexId, VertexKind};
use crate::kernel::{Factor, KernelError, TabularKernel};

/// Tolerance used when dropping context variables a fixed kernel provably
/// does not depend on.
const CONTEXT_IRRELEVANCE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IdentifyError {
    #[error("unknown query variable `{0}`")]
    UnknownVariable(String),
    #[error("query variable `{0}` is not a random vertex")]
    NotRandom(String),
    #[error("`{0}` appears as both treatment and outcome")]
    OverlappingQuery(String),
    #[error("graph is not a DAG: bidirected edge at `{0}`")]
    NotADag(String),
    #[error("transition context `{context}` is bound to unobserved variable `{bound_to}`")]
    HiddenContextDependency { context: String, bound_to: String },
    #[error("no kernel supplied for intrinsic set {{{0}}}")]
    UnresolvedKernel(String),
    #[error("`{0}` is not free in the expression being {1}")]
    MissingVariable(String, &'static str),
    #[error("evaluation produced no kernel (empty expression)")]
    EmptyExpression,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// An interventional query `p(Y(a))`: treatments with their forced category
/// indices, and the outcome set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalQuery {
    pub treatments: BTreeMap<VertexId, usize>,
    pub outcomes: BTreeSet<VertexId>,
}

impl CausalQuery {
    pub fn new(
        treatments: impl IntoIterator<Item = (VertexId, usize)>,
        outcomes: impl IntoIterator<Item = VertexId>,
    ) -> Self {
        CausalQuery {
            treatments: treatments.into_iter().collect(),
            outcomes: outcomes.into_iter().collect(),
        }
    }
}

/// Symbolic identifying functional.
///
/// Kernel references name intrinsic sets of the source graph together with
/// their conditioning context; sums, products and value bindings assemble the
/// final expression. Trees print to a canonical text form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FunctionalExpr {
    SumOver {
        vars: BTreeSet<VertexId>,
        body: Box<FunctionalExpr>,
    },
    Product(Vec<FunctionalExpr>),
    KernelRef {
        vars: BTreeSet<VertexId>,
        context: BTreeSet<VertexId>,
    },
    Bind {
        var: VertexId,
        value: usize,
        body: Box<FunctionalExpr>,
    },
}

fn join(vs: &BTreeSet<VertexId>) -> String {
    vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for FunctionalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalExpr::SumOver { vars, body } => {
                write!(f, "Σ_{{{}}} ( {} )", join(vars), body)
            }
            FunctionalExpr::Product(children) => {
                let parts: Vec<String> = children.iter().map(|c| c.to_string()).collect();
                write!(f, "Π[ {} ]", parts.join(" · "))
            }
            FunctionalExpr::KernelRef { vars, context } => {
                if context.is_empty() {
                    write!(f, "q{{{}}}({})", join(vars), join(vars))
                } else {
                    write!(f, "q{{{}}}({} | {})", join(vars), join(vars), join(context))
                }
            }
            FunctionalExpr::Bind { .. } => {
                // collapse a chain of binds into one suffix
                let mut binds = Vec::new();
                let mut cur = self;
                while let FunctionalExpr::Bind { var, value, body } = cur {
                    binds.push((var.clone(), *value));
                    cur = body;
                }
                binds.sort();
                let suffix: Vec<String> =
                    binds.iter().map(|(v, x)| format!("{v}={x}")).collect();
                write!(f, "{}|_{{{}}}", cur, suffix.join(","))
            }
        }
    }
}

impl FunctionalExpr {
    pub fn kernel_ref(vars: BTreeSet<VertexId>, context: BTreeSet<VertexId>) -> Self {
        FunctionalExpr::KernelRef { vars, context }
    }

    /// Product with deterministic child order; a singleton collapses.
    pub fn product(mut children: Vec<FunctionalExpr>) -> Self {
        children.sort_by_key(|c| c.to_string());
        if children.len() == 1 {
            children.pop().unwrap()
        } else {
            FunctionalExpr::Product(children)
        }
    }

    pub fn sum_over(vars: BTreeSet<VertexId>, body: FunctionalExpr) -> Self {
        if vars.is_empty() {
            body
        } else {
            FunctionalExpr::SumOver { vars, body: Box::new(body) }
        }
    }

    /// Bind every treatment that is actually free in the body; vacuous binds
    /// are dropped.
    pub fn bind_all(self, treatments: &BTreeMap<VertexId, usize>) -> Self {
        let free = self.free_variables();
        let mut expr = self;
        for (var, value) in treatments {
            if free.contains(var) {
                expr = FunctionalExpr::Bind {
                    var: var.clone(),
                    value: *value,
                    body: Box::new(expr),
                };
            }
        }
        expr
    }

    /// Variables not eliminated by sums or bindings.
    pub fn free_variables(&self) -> BTreeSet<VertexId> {
        match self {
            FunctionalExpr::SumOver { vars, body } => {
                body.free_variables().difference(vars).cloned().collect()
            }
            FunctionalExpr::Product(children) => children
                .iter()
                .flat_map(|c| c.free_variables())
                .collect(),
            FunctionalExpr::KernelRef { vars, context } => {
                vars.union(context).cloned().collect()
            }
            FunctionalExpr::Bind { var, body, .. } => {
                let mut free = body.free_variables();
                free.remove(var);
                free
            }
        }
    }

    /// All kernel references in the tree as (vars, context) pairs.
    pub fn kernel_refs(&self) -> Vec<(BTreeSet<VertexId>, BTreeSet<VertexId>)> {
        match self {
            FunctionalExpr::SumOver { body, .. } | FunctionalExpr::Bind { body, .. } => {
                body.kernel_refs()
            }
            FunctionalExpr::Product(children) => {
                children.iter().flat_map(|c| c.kernel_refs()).collect()
            }
            FunctionalExpr::KernelRef { vars, context } => {
                vec![(vars.clone(), context.clone())]
            }
        }
    }
}

/// Outcome of an identification attempt: either the identifying functional
/// or the first district that obstructs it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdentifyResult {
    Identified(FunctionalExpr),
    NotIdentified { witness: BTreeSet<VertexId> },
}

impl IdentifyResult {
    pub fn is_identified(&self) -> bool {
        matches!(self, IdentifyResult::Identified(_))
    }

    pub fn functional(&self) -> Option<&FunctionalExpr> {
        match self {
            IdentifyResult::Identified(e) => Some(e),
            IdentifyResult::NotIdentified { .. } => None,
        }
    }

    pub fn witness(&self) -> Option<&BTreeSet<VertexId>> {
        match self {
            IdentifyResult::Identified(_) => None,
            IdentifyResult::NotIdentified { witness } => Some(witness),
        }
    }
}

fn validate_query(g: &MixedGraph, query: &CausalQuery) -> Result<(), IdentifyError> {
    for v in query.treatments.keys().chain(&query.outcomes) {
        match g.kind(v) {
            Err(_) => return Err(IdentifyError::UnknownVariable(v.to_string())),
            Ok(VertexKind::Random) => {}
            Ok(_) => return Err(IdentifyError::NotRandom(v.to_string())),
        }
    }
    for v in query.treatments.keys() {
        if query.outcomes.contains(v) {
            return Err(IdentifyError::OverlappingQuery(v.to_string()));
        }
    }
    Ok(())
}

/// Truncated factorization for a fully observed DAG: the product of
/// `p(v | pa(v))` over untreated vertices, treatments bound, marginalized to
/// the requested outcomes.
pub fn g_formula(g: &MixedGraph, query: &CausalQuery) -> Result<FunctionalExpr, IdentifyError> {
    if let Some((a, _)) = g.bidirected_edges().next() {
        return Err(IdentifyError::NotADag(a.to_string()));
    }
    if let Some(h) = g.hidden_vertices().into_iter().next() {
        return Err(IdentifyError::NotADag(h.to_string()));
    }
    if !g.fixed_vertices().is_empty() {
        // context belongs to the conditional variant
        return Err(IdentifyError::NotRandom(
            g.fixed_vertices().iter().next().unwrap().to_string(),
        ));
    }
    truncated_factorization(g, query)
}

/// Conditional variant for transition graphs: fixed context vertices are
/// allowed and stay in the conditioning sets.
pub fn conditional_g_formula(
    g: &MixedGraph,
    query: &CausalQuery,
) -> Result<FunctionalExpr, IdentifyError> {
    if let Some((a, _)) = g.bidirected_edges().next() {
        return Err(IdentifyError::NotADag(a.to_string()));
    }
    if let Some(h) = g.hidden_vertices().into_iter().next() {
        return Err(IdentifyError::NotADag(h.to_string()));
    }
    truncated_factorization(g, query)
}

fn truncated_factorization(
    g: &MixedGraph,
    query: &CausalQuery,
) -> Result<FunctionalExpr, IdentifyError> {
    validate_query(g, query)?;
    let random = g.random_vertices();
    let treated: BTreeSet<VertexId> = query.treatments.keys().cloned().collect();
    let kept: BTreeSet<VertexId> = random.difference(&treated).cloned().collect();
    for y in &query.outcomes {
        if !kept.contains(y) {
            return Err(IdentifyError::OverlappingQuery(y.to_string()));
        }
    }
    let factors: Vec<FunctionalExpr> = kept
        .iter()
        .map(|v| {
            FunctionalExpr::kernel_ref(
                [v.clone()].into_iter().collect(),
                g.parents(v),
            )
        })
        .collect();
    let body = FunctionalExpr::product(factors).bind_all(&query.treatments);
    let marginalized: BTreeSet<VertexId> = if query.outcomes.is_empty() {
        BTreeSet::new()
    } else {
        kept.difference(&query.outcomes).cloned().collect()
    };
    Ok(FunctionalExpr::sum_over(marginalized, body))
}

/// Reachability with backtracking over fixing choices, memoized on the
/// remaining set. Greedy fixing is believed complete; this search removes
/// any doubt at desk scale.
fn reachable_backtracking(g: &MixedGraph, target: &BTreeSet<VertexId>) -> Result<bool, GraphError> {
    fn go(
        g: &MixedGraph,
        todo: &BTreeSet<VertexId>,
        dead: &mut BTreeSet<BTreeSet<VertexId>>,
    ) -> Result<bool, GraphError> {
        if todo.is_empty() {
            return Ok(true);
        }
        if dead.contains(todo) {
            return Ok(false);
        }
        for v in todo {
            if g.is_fixable(v)? {
                let fixed = g.fix_vertex(v)?;
                let mut rest = todo.clone();
                rest.remove(v);
                if go(&fixed, &rest, dead)? {
                    return Ok(true);
                }
            }
        }
        dead.insert(todo.clone());
        Ok(false)
    }
    let todo: BTreeSet<VertexId> = g
        .random_vertices()
        .difference(target)
        .cloned()
        .collect();
    go(g, &todo, &mut BTreeSet::new())
}

/// Identification in an ADMG or CADMG via the modified nested factorization.
///
/// Hidden vertices, if any, are projected out first. Computes the set of
/// outcome ancestors avoiding treatments, checks every district of the
/// induced subgraph for intrinsicness in the full graph, and emits the
/// sum-product functional on success. The witness is the first failing
/// district in deterministic order.
pub fn id_admg(g: &MixedGraph, query: &CausalQuery) -> Result<IdentifyResult, IdentifyError> {
    let g = g.latent_project();
    validate_query(&g, query)?;
    let random = g.random_vertices();
    let treated: BTreeSet<VertexId> = query.treatments.keys().cloned().collect();

    // ancestors of Y via directed paths avoiding A, treatments excluded
    let keep: BTreeSet<VertexId> = g
        .vertices()
        .map(|(v, _)| v.clone())
        .filter(|v| !treated.contains(v))
        .collect();
    let deprived = g.induced_subgraph(&keep);
    let y_star: BTreeSet<VertexId> = deprived
        .ancestors_of_set(&query.outcomes)
        .intersection(&random)
        .cloned()
        .collect();

    let induced = g.induced_subgraph(&y_star);
    let mut districts = induced.districts();
    districts.sort();
    for district in &districts {
        if !reachable_backtracking(&g, district)? {
            return Ok(IdentifyResult::NotIdentified { witness: district.clone() });
        }
    }

    let factors: Vec<FunctionalExpr> = districts
        .iter()
        .map(|d| {
            let mut context = BTreeSet::new();
            for v in d {
                context.extend(g.parents(v));
            }
            for v in d {
                context.remove(v);
            }
            FunctionalExpr::kernel_ref(d.clone(), context)
        })
        .collect();
    let body = FunctionalExpr::product(factors).bind_all(&query.treatments);
    let summed: BTreeSet<VertexId> = y_star
        .iter()
        .filter(|v| !query.outcomes.contains(*v) && !treated.contains(*v))
        .cloned()
        .collect();
    Ok(IdentifyResult::Identified(FunctionalExpr::sum_over(summed, body)))
}

/// A first-order Markov dynamic model: a prior graph, one transition graph,
/// and the binding from transition context vertices to slice variables.
#[derive(Clone, Debug)]
pub struct DbnModel {
    pub prior: MixedGraph,
    pub transition: MixedGraph,
    pub binding: BTreeMap<VertexId, VertexId>,
}

impl DbnModel {
    /// Every transition context must be bound to an observed slice variable;
    /// returns the offending pair otherwise.
    pub fn check_observed_context(&self) -> Result<(), IdentifyError> {
        for w in self.transition.fixed_vertices() {
            let target = self.binding.get(&w).ok_or(GraphError::UnboundContext {
                context: w.to_string(),
                step: 2,
            })?;
            for slice in [&self.prior, &self.transition] {
                if slice.contains(target) && slice.kind(target)? == VertexKind::Hidden {
                    return Err(IdentifyError::HiddenContextDependency {
                        context: w.to_string(),
                        bound_to: target.to_string(),
                    });
                }
            }
            if !self.prior.contains(target) && !self.transition.contains(target) {
                return Err(GraphError::BadBindingTarget {
                    context: w.to_string(),
                    target: target.to_string(),
                }
                .into());
            }
        }
        Ok(())
    }

    /// Latent-project both slice graphs and unroll to `horizon` slices with
    /// time-indexed names.
    pub fn unrolled_projection(&self, horizon: usize) -> Result<MixedGraph, IdentifyError> {
        let prior_p = self.prior.latent_project();
        let trans_p = self.transition.latent_project();
        let steps: Vec<UnrollStep<'_>> = (1..horizon)
            .map(|_| UnrollStep { graph: &trans_p, binding: &self.binding })
            .collect();
        Ok(unroll(&prior_p, &steps)?)
    }

    /// Unroll the full hidden-variable model, for ground-truth computations.
    pub fn unrolled_full(&self, horizon: usize) -> Result<MixedGraph, IdentifyError> {
        let steps: Vec<UnrollStep<'_>> = (1..horizon)
            .map(|_| UnrollStep { graph: &self.transition, binding: &self.binding })
            .collect();
        Ok(unroll(&self.prior, &steps)?)
    }
}

fn slice_of(v: &VertexId) -> Option<(VertexId, usize)> {
    let s = v.as_str();
    let at = s.rfind('@')?;
    let step: usize = s[at + 1..].parse().ok()?;
    Some((VertexId::new(&s[..at]), step))
}

/// Identification in a hidden-variable dynamic model over `horizon` slices.
///
/// Requires every transition context to be observed (checked, with a
/// structured error naming the hidden dependency). The ancestral computation
/// runs on the unrolled projection; each district is then mapped back to its
/// slice and checked intrinsic in the prior or transition graph, and the
/// functional is the product of per-slice district kernels under the global
/// sum, treatments bound.
pub fn dbn_identify(
    model: &DbnModel,
    horizon: usize,
    query: &CausalQuery,
) -> Result<IdentifyResult, IdentifyError> {
    model.check_observed_context()?;
    let unrolled = model.unrolled_projection(horizon)?;
    validate_query(&unrolled, query)?;
    let prior_p = model.prior.latent_project();
    let trans_p = model.transition.latent_project();

    let random = unrolled.random_vertices();
    let treated: BTreeSet<VertexId> = query.treatments.keys().cloned().collect();
    let keep: BTreeSet<VertexId> = unrolled
        .vertices()
        .map(|(v, _)| v.clone())
        .filter(|v| !treated.contains(v))
        .collect();
    let y_star: BTreeSet<VertexId> = unrolled
        .induced_subgraph(&keep)
        .ancestors_of_set(&query.outcomes)
        .intersection(&random)
        .cloned()
        .collect();

    let induced = unrolled.induced_subgraph(&y_star);
    let mut districts = induced.districts();
    districts.sort();
    for district in &districts {
        // every district lives inside a single slice; check it there
        let mut slices = BTreeSet::new();
        let base: BTreeSet<VertexId> = district
            .iter()
            .map(|v| {
                let (name, t) = slice_of(v).expect("unrolled vertices are time-indexed");
                slices.insert(t);
                name
            })
            .collect();
        debug_assert_eq!(slices.len(), 1, "districts never span slices");
        let t = *slices.iter().next().unwrap();
        let slice_graph = if t == 1 { &prior_p } else { &trans_p };
        if !reachable_backtracking(slice_graph, &base)? {
            return Ok(IdentifyResult::NotIdentified { witness: district.clone() });
        }
    }

    let factors: Vec<FunctionalExpr> = districts
        .iter()
        .map(|d| {
            let mut context = BTreeSet::new();
            for v in d {
                context.extend(unrolled.parents(v));
            }
            for v in d {
                context.remove(v);
            }
            FunctionalExpr::kernel_ref(d.clone(), context)
        })
        .collect();
    let body = FunctionalExpr::product(factors).bind_all(&query.treatments);
    let summed: BTreeSet<VertexId> = y_star
        .iter()
        .filter(|v| !query.outcomes.contains(*v) && !treated.contains(*v))
        .cloned()
        .collect();
    Ok(IdentifyResult::Identified(FunctionalExpr::sum_over(summed, body)))
}

/// Compute the kernel of one intrinsic set by fixing its complement, then
/// shrink the context to the declared one.
pub fn kernel_for_intrinsic(
    p: &TabularKernel,
    g: &MixedGraph,
    vars: &BTreeSet<VertexId>,
    context: &BTreeSet<VertexId>,
) -> Result<TabularKernel, IdentifyError> {
    // find a valid fixing sequence with backtracking
    fn search(
        g: &MixedGraph,
        todo: &BTreeSet<VertexId>,
        acc: &mut Vec<VertexId>,
        dead: &mut BTreeSet<BTreeSet<VertexId>>,
    ) -> Result<bool, GraphError> {
        if todo.is_empty() {
            return Ok(true);
        }
        if dead.contains(todo) {
            return Ok(false);
        }
        for v in todo {
            if g.is_fixable(v)? {
                let fixed = g.fix_vertex(v)?;
                let mut rest = todo.clone();
                rest.remove(v);
                acc.push(v.clone());
                if search(&fixed, &rest, acc, dead)? {
                    return Ok(true);
                }
                acc.pop();
            }
        }
        dead.insert(todo.clone());
        Ok(false)
    }
    let todo: BTreeSet<VertexId> = g.random_vertices().difference(vars).cloned().collect();
    let mut seq = Vec::new();
    if !search(g, &todo, &mut seq, &mut BTreeSet::new())? {
        return Err(IdentifyError::UnresolvedKernel(join(vars)));
    }
    let (kernel, _) = crate::kernel::fix_sequence(p, g, &seq)?;
    Ok(kernel.restrict_context(context, CONTEXT_IRRELEVANCE_TOL)?)
}

/// Build the kernel map an expression needs, by fixing on `p` within `g`.
pub fn kernel_map_for(
    expr: &FunctionalExpr,
    p: &TabularKernel,
    g: &MixedGraph,
) -> Result<BTreeMap<BTreeSet<VertexId>, TabularKernel>, IdentifyError> {
    let mut out = BTreeMap::new();
    for (vars, context) in expr.kernel_refs() {
        if out.contains_key(&vars) {
            continue;
        }
        let k = kernel_for_intrinsic(p, g, &vars, &context)?;
        out.insert(vars, k);
    }
    Ok(out)
}

/// Exact evaluation of a functional against a map from intrinsic sets to
/// kernels. The result is a normalized kernel whose outcomes are the
/// expression's free outcome-role variables.
pub fn evaluate(
    expr: &FunctionalExpr,
    kernels: &BTreeMap<BTreeSet<VertexId>, TabularKernel>,
) -> Result<TabularKernel, IdentifyError> {
    fn go(
        expr: &FunctionalExpr,
        kernels: &BTreeMap<BTreeSet<VertexId>, TabularKernel>,
        outcome_roles: &mut BTreeSet<VertexId>,
    ) -> Result<Factor, IdentifyError> {
        match expr {
            FunctionalExpr::KernelRef { vars, context } => {
                let kernel = kernels
                    .get(vars)
                    .ok_or_else(|| IdentifyError::UnresolvedKernel(join(vars)))?;
                if &kernel.outcome_ids() != vars {
                    return Err(IdentifyError::UnresolvedKernel(join(vars)));
                }
                let kernel = if kernel.context_ids().iter().any(|c| !context.contains(c)) {
                    kernel.restrict_context(context, CONTEXT_IRRELEVANCE_TOL)?
                } else {
                    kernel.clone()
                };
                outcome_roles.extend(vars.iter().cloned());
                Ok(kernel.to_factor())
            }
            FunctionalExpr::Product(children) => {
                let mut acc = Factor::constant(1.0);
                for c in children {
                    let f = go(c, kernels, outcome_roles)?;
                    acc = acc.multiply(&f)?;
                }
                Ok(acc)
            }
            FunctionalExpr::SumOver { vars, body } => {
                let f = go(body, kernels, outcome_roles)?;
                let have = f.var_ids();
                for v in vars {
                    if !have.contains(v) {
                        return Err(IdentifyError::MissingVariable(v.to_string(), "summed"));
                    }
                }
                Ok(f.sum_out(vars))
            }
            FunctionalExpr::Bind { var, value, body } => {
                let f = go(body, kernels, outcome_roles)?;
                if !f.var_ids().contains(var) {
                    return Err(IdentifyError::MissingVariable(var.to_string(), "bound"));
                }
                Ok(f.slice(var, *value)?)
            }
        }
    }
    let mut outcome_roles = BTreeSet::new();
    let factor = go(expr, kernels, &mut outcome_roles)?;
    if factor.var_ids().is_empty() && factor.table.len() == 1 && outcome_roles.is_empty() {
        return Err(IdentifyError::EmptyExpression);
    }
    let outcomes: BTreeSet<VertexId> = factor
        .var_ids()
        .intersection(&outcome_roles)
        .cloned()
        .collect();
    Ok(TabularKernel::from_factor(&factor, &outcomes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::VarSpec;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn ids(names: &[&str]) -> BTreeSet<VertexId> {
        names.iter().map(|n| VertexId::from(*n)).collect()
    }

    fn front_door() -> MixedGraph {
        MixedGraph::builder()
            .random("A")
            .random("M")
            .random("Y")
            .edge("A", "M")
            .edge("M", "Y")
            .bidirected("A", "Y")
            .build()
            .unwrap()
    }

    fn front_door_hidden() -> MixedGraph {
        MixedGraph::builder()
            .random("A")
            .random("M")
            .random("Y")
            .hidden("H")
            .edge("H", "A")
            .edge("H", "Y")
            .edge("A", "M")
            .edge("M", "Y")
            .build()
            .unwrap()
    }

    fn random_joint(vars: &[(&str, usize)], seed: u64) -> TabularKernel {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let specs: Vec<VarSpec> = vars.iter().map(|(n, c)| VarSpec::new(*n, *c)).collect();
        let len: usize = specs.iter().map(|v| v.cardinality).product();
        let mut table: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = table.iter().sum();
        for x in &mut table {
            *x /= total;
        }
        TabularKernel::new(specs, vec![], table).unwrap()
    }

    #[test]
    fn g_formula_chain() {
        let g = MixedGraph::builder()
            .random("A")
            .random("L")
            .edge("A", "L")
            .build()
            .unwrap();
        let q = CausalQuery::new([("A".into(), 0)], ["L".into()]);
        let expr = g_formula(&g, &q).unwrap();
        assert_eq!(expr.to_string(), "q{L}(L | A)|_{A=0}");
    }

    #[test]
    fn g_formula_empty_treatment_is_the_joint() {
        let g = MixedGraph::builder()
            .random("A")
            .random("L")
            .edge("A", "L")
            .build()
            .unwrap();
        let q = CausalQuery::new([], ["A".into(), "L".into()]);
        let expr = g_formula(&g, &q).unwrap();
        let p = random_joint(&[("A", 2), ("L", 2)], 1);
        let kernels = kernel_map_for(&expr, &p, &g).unwrap();
        let v = evaluate(&expr, &kernels).unwrap();
        assert!(v.max_abs_diff(&p).unwrap() < 1e-12);
    }

    #[test]
    fn g_formula_rejects_mixed_graphs() {
        let q = CausalQuery::new([("A".into(), 0)], ["Y".into()]);
        assert!(matches!(
            g_formula(&front_door(), &q),
            Err(IdentifyError::NotADag(_))
        ));
    }

    #[test]
    fn conditional_g_formula_binds_context() {
        // transition slice: prev.A, prev.L fixed; A → L random
        let g = MixedGraph::builder()
            .fixed("prev.A")
            .fixed("prev.L")
            .random("A")
            .random("L")
            .edge("prev.A", "A")
            .edge("prev.L", "A")
            .edge("A", "L")
            .build()
            .unwrap();
        let q = CausalQuery::new([("A".into(), 1)], ["L".into()]);
        let expr = conditional_g_formula(&g, &q).unwrap();
        assert_eq!(expr.to_string(), "q{L}(L | A)|_{A=1}");
        // treatment on a context vertex is rejected
        let bad = CausalQuery::new([("prev.A".into(), 0)], ["L".into()]);
        assert!(matches!(
            conditional_g_formula(&g, &bad),
            Err(IdentifyError::NotRandom(_))
        ));
    }

    #[test]
    fn id_admg_front_door_formula() {
        let q = CausalQuery::new([("A".into(), 0)], ["Y".into()]);
        let result = id_admg(&front_door(), &q).unwrap();
        let expr = result.functional().expect("identified");
        assert_eq!(
            expr.to_string(),
            "Σ_{M} ( Π[ q{M}(M | A) · q{Y}(Y | M) ]|_{A=0} )"
        );
    }

    #[test]
    fn id_admg_bow_graph_not_identified() {
        let bow = MixedGraph::builder()
            .random("A")
            .random("Y")
            .edge("A", "Y")
            .bidirected("A", "Y")
            .build()
            .unwrap();
        let q = CausalQuery::new([("A".into(), 0)], ["Y".into()]);
        let result = id_admg(&bow, &q).unwrap();
        assert_eq!(result.witness(), Some(&ids(&["Y"])));
    }

    #[test]
    fn id_admg_no_treatment_gives_outcome_marginal() {
        let q = CausalQuery::new([], ["Y".into()]);
        let result = id_admg(&front_door(), &q).unwrap();
        let expr = result.functional().unwrap();
        let p = random_joint(&[("A", 2), ("M", 2), ("Y", 2)], 2);
        let g = front_door();
        let kernels = kernel_map_for(expr, &p, &g).unwrap();
        let got = evaluate(expr, &kernels).unwrap();
        let want = p.marginalize(&ids(&["Y"])).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-10);
    }

    /// Brute force: mutilate the CPT model, enumerate, and marginalize.
    fn brute_force_intervention(
        g: &MixedGraph,
        cpts: &crate::pdsem::GraphCpts,
        cards: &BTreeMap<VertexId, usize>,
        query: &CausalQuery,
    ) -> TabularKernel {
        let mutilated = cpts.intervene(&query.treatments);
        let joint = mutilated.joint(g, cards).unwrap();
        joint.marginalize(&query.outcomes).unwrap()
    }

    #[test]
    fn front_door_evaluation_matches_brute_force() {
        let g_hidden = front_door_hidden();
        let cards: BTreeMap<VertexId, usize> =
            [("A".into(), 2), ("M".into(), 2), ("Y".into(), 2), ("H".into(), 2)]
                .into_iter()
                .collect();
        for seed in 0..20u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let cpts = crate::pdsem::GraphCpts::random(&g_hidden, &cards, &mut rng);
            let joint = cpts.joint(&g_hidden, &cards).unwrap();
            let margin = joint.marginalize(&ids(&["A", "M", "Y"])).unwrap();
            let projected = g_hidden.latent_project();
            let query = CausalQuery::new([("A".into(), 1)], ["Y".into()]);
            let result = id_admg(&projected, &query).unwrap();
            let expr = result.functional().expect("front-door identifies");
            let kernels = kernel_map_for(expr, &margin, &projected).unwrap();
            let got = evaluate(expr, &kernels).unwrap();
            let want = brute_force_intervention(&g_hidden, &cpts, &cards, &query);
            assert!(
                got.max_abs_diff(&want).unwrap() < 1e-12,
                "seed {seed}: mismatch"
            );
        }
    }

    #[test]
    fn evaluate_single_kernel_product() {
        let p = random_joint(&[("A", 2)], 3);
        let expr = FunctionalExpr::kernel_ref(ids(&["A"]), BTreeSet::new());
        let kernels: BTreeMap<_, _> = [(ids(&["A"]), p.clone())].into_iter().collect();
        let got = evaluate(&expr, &kernels).unwrap();
        assert!(got.max_abs_diff(&p).unwrap() < 1e-15);
    }

    #[test]
    fn evaluate_is_product_order_invariant() {
        let g = front_door();
        let p = random_joint(&[("A", 2), ("M", 2), ("Y", 2)], 4);
        let q = CausalQuery::new([("A".into(), 0)], ["Y".into()]);
        let expr = id_admg(&g, &q).unwrap().functional().unwrap().clone();
        let kernels = kernel_map_for(&expr, &p, &g).unwrap();
        // rebuild with reversed product order
        fn reverse(e: &FunctionalExpr) -> FunctionalExpr {
            match e {
                FunctionalExpr::Product(cs) => {
                    FunctionalExpr::Product(cs.iter().rev().map(reverse).collect())
                }
                FunctionalExpr::SumOver { vars, body } => FunctionalExpr::SumOver {
                    vars: vars.clone(),
                    body: Box::new(reverse(body)),
                },
                FunctionalExpr::Bind { var, value, body } => FunctionalExpr::Bind {
                    var: var.clone(),
                    value: *value,
                    body: Box::new(reverse(body)),
                },
                other => other.clone(),
            }
        }
        let a = evaluate(&expr, &kernels).unwrap();
        let b = evaluate(&reverse(&expr), &kernels).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    fn two_var_dbn() -> DbnModel {
        // prior: hidden U → A, U → L; transition: prev.A → A, prev.L → L,
        // fresh hidden U → A, U → L each slice
        let prior = MixedGraph::builder()
            .random("A")
            .random("L")
            .hidden("U")
            .edge("U", "A")
            .edge("U", "L")
            .build()
            .unwrap();
        let transition = MixedGraph::builder()
            .fixed("prev.A")
            .fixed("prev.L")
            .random("A")
            .random("L")
            .hidden("U")
            .edge("U", "A")
            .edge("U", "L")
            .edge("prev.A", "A")
            .edge("prev.L", "L")
            .build()
            .unwrap();
        let binding = [("prev.A".into(), "A".into()), ("prev.L".into(), "L".into())]
            .into_iter()
            .collect();
        DbnModel { prior, transition, binding }
    }

    #[test]
    fn dbn_identify_accepts_observed_context() {
        let model = two_var_dbn();
        let q = CausalQuery::new([("A@2".into(), 1)], ["L@3".into()]);
        let result = dbn_identify(&model, 3, &q).unwrap();
        assert!(result.is_identified());
    }

    #[test]
    fn dbn_identify_rejects_hidden_context() {
        // transition additionally reads prev.U, bound to the hidden U
        let model = two_var_dbn();
        let transition = MixedGraph::builder()
            .fixed("prev.A")
            .fixed("prev.L")
            .fixed("prev.U")
            .random("A")
            .random("L")
            .hidden("U")
            .edge("U", "A")
            .edge("U", "L")
            .edge("prev.A", "A")
            .edge("prev.U", "L")
            .build()
            .unwrap();
        let mut binding = model.binding.clone();
        binding.insert("prev.U".into(), "U".into());
        let bad = DbnModel { prior: model.prior, transition, binding };
        let q = CausalQuery::new([("A@2".into(), 1)], ["L@3".into()]);
        match dbn_identify(&bad, 3, &q) {
            Err(IdentifyError::HiddenContextDependency { context, bound_to }) => {
                assert_eq!(context, "prev.U");
                assert_eq!(bound_to, "U");
            }
            other => panic!("expected hidden-context error, got {other:?}"),
        }
    }

    #[test]
    fn dbn_horizon_one_is_prior_marginal() {
        let model = two_var_dbn();
        let q = CausalQuery::new([], ["L@1".into()]);
        let result = dbn_identify(&model, 1, &q).unwrap();
        let expr = result.functional().unwrap();
        assert_eq!(expr.to_string(), "q{L@1}(L@1)");
    }
}
