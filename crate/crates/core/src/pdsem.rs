//! Path-dependent structural equation models.
//!
//! A [`PdsemSpec`] is a state machine whose initial state and every allowed
//! transition carry their own causal graph over the state's variables. Each
//! non-absorbing state declares a selector variable whose realized category
//! picks the next state. Trajectories start at the initial state and end in
//! an absorbing state (or at a step cap, recorded as censoring).
//!
//! Transition graphs read the previous state's variables through fixed
//! context vertices named `prev.<var>`; variables of a state are registered
//! once and shared by every graph entering that state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::graph::{GraphError, MixedGraph, VertexId, VertexKind};
use crate::identify::{
    evaluate, id_admg, kernel_map_for, CausalQuery, FunctionalExpr, IdentifyError, IdentifyResult,
};
use crate::kernel::{KernelError, TabularKernel, VarSpec, NORMALIZATION_TOL};

/// Prefix marking a transition graph's context vertices.
pub const CONTEXT_PREFIX: &str = "prev.";

/// Context vertex name for a source-state variable.
pub fn context_vertex(v: &VertexId) -> VertexId {
    VertexId::new(format!("{CONTEXT_PREFIX}{v}"))
}

/// Inverse of [`context_vertex`].
pub fn context_target(v: &VertexId) -> Option<VertexId> {
    v.as_str().strip_prefix(CONTEXT_PREFIX).map(VertexId::new)
}

/// Name of a model state.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(String);

impl StateId {
    pub fn new(name: impl Into<String>) -> Self {
        StateId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateId({})", self.0)
    }
}

impl From<&str> for StateId {
    fn from(s: &str) -> Self {
        StateId(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateDecl {
    pub id: StateId,
    pub initial: bool,
    pub absorbing: bool,
}

/// One registered variable of a state.
#[derive(Clone, Debug, PartialEq)]
pub struct VarDecl {
    pub name: VertexId,
    pub cardinality: usize,
    /// Optional category labels, usable in interventions.
    pub labels: Option<Vec<String>>,
    /// Continuous variables are only meaningful under linear-Gaussian
    /// parameters; their cardinality is a placeholder.
    pub continuous: bool,
}

impl VarDecl {
    pub fn discrete(name: impl Into<VertexId>, cardinality: usize) -> Self {
        VarDecl { name: name.into(), cardinality, labels: None, continuous: false }
    }

    pub fn continuous(name: impl Into<VertexId>) -> Self {
        VarDecl { name: name.into(), cardinality: 1, labels: None, continuous: true }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct StateVars {
    pub observed: Vec<VarDecl>,
    pub hidden: Vec<VarDecl>,
}

/// Selector declaration: the variable whose category picks the next state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectorDecl {
    pub var: VertexId,
    pub next: Vec<StateId>,
}

/// Allowed state transition (into a non-absorbing state).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub struct TransitionId {
    pub from: StateId,
    pub to: StateId,
}

impl TransitionId {
    pub fn new(from: impl Into<StateId>, to: impl Into<StateId>) -> Self {
        TransitionId { from: from.into(), to: to.into() }
    }
}

impl fmt::Display for TransitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// Key of one graph of the model.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum GraphKey {
    Initial,
    Transition(TransitionId),
}

impl fmt::Display for GraphKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKey::Initial => f.write_str("initial"),
            GraphKey::Transition(t) => write!(f, "{t}"),
        }
    }
}

/// Conditional probability table `p(child | parents)`.
///
/// Rows are indexed by the parent assignment (declared parent order, first
/// parent most significant); each row lists the child's category
/// probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Cpt {
    pub child: VarSpec,
    pub parents: Vec<VarSpec>,
    pub table: Vec<f64>,
}

impl Cpt {
    pub fn new(child: VarSpec, parents: Vec<VarSpec>, table: Vec<f64>) -> Result<Self, PdsemError> {
        let rows: usize = parents.iter().map(|p| p.cardinality).product();
        let expected = rows * child.cardinality;
        if table.len() != expected {
            return Err(PdsemError::CptShape {
                vertex: child.id.to_string(),
                expected,
                actual: table.len(),
            });
        }
        for (i, row) in table.chunks(child.cardinality).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL || row.iter().any(|&x| x < 0.0) {
                return Err(PdsemError::CptRowNotNormalized {
                    vertex: child.id.to_string(),
                    row: i,
                    sum,
                });
            }
        }
        Ok(Cpt { child, parents, table })
    }

    pub fn point_mass(child: VarSpec, value: usize) -> Self {
        let mut table = vec![0.0; child.cardinality];
        table[value] = 1.0;
        Cpt { child, parents: Vec::new(), table }
    }

    fn row_index(&self, assignment: &BTreeMap<VertexId, usize>) -> usize {
        let mut idx = 0usize;
        for p in &self.parents {
            idx = idx * p.cardinality + assignment[&p.id];
        }
        idx
    }

    /// `p(child = value | parents)` for a full assignment of the parents.
    pub fn prob(&self, assignment: &BTreeMap<VertexId, usize>, value: usize) -> f64 {
        self.table[self.row_index(assignment) * self.child.cardinality + value]
    }

    pub fn row(&self, assignment: &BTreeMap<VertexId, usize>) -> &[f64] {
        let r = self.row_index(assignment);
        &self.table[r * self.child.cardinality..(r + 1) * self.child.cardinality]
    }

    pub(crate) fn to_factor(&self) -> crate::kernel::Factor {
        let mut vars = self.parents.clone();
        vars.push(self.child.clone());
        // table layout matches: parents major (declared order), child minor
        crate::kernel::Factor::new(vars, self.table.clone()).expect("CPT shape verified")
    }
}

/// All CPTs of one graph, keyed by child vertex.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GraphCpts {
    pub cpts: BTreeMap<VertexId, Cpt>,
}

impl GraphCpts {
    /// Random rows bounded away from zero, for simulation studies and tests.
    pub fn random<R: Rng + ?Sized>(
        g: &MixedGraph,
        cards: &BTreeMap<VertexId, usize>,
        rng: &mut R,
    ) -> Self {
        let mut cpts = BTreeMap::new();
        for (v, kind) in g.vertices() {
            if kind == VertexKind::Fixed {
                continue;
            }
            let child = VarSpec::new(v.clone(), cards[v]);
            let parents: Vec<VarSpec> = g
                .parents(v)
                .into_iter()
                .map(|p| VarSpec::new(p.clone(), cards[&p]))
                .collect();
            let rows: usize = parents.iter().map(|p| p.cardinality).product();
            let mut table = Vec::with_capacity(rows * child.cardinality);
            for _ in 0..rows {
                let mut row: Vec<f64> =
                    (0..child.cardinality).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = row.iter().sum();
                for x in &mut row {
                    *x /= s;
                }
                table.extend(row);
            }
            cpts.insert(v.clone(), Cpt { child, parents, table });
        }
        GraphCpts { cpts }
    }

    /// Joint kernel over the graph's random and hidden vertices given its
    /// fixed context: the product of all CPT factors.
    pub fn joint(
        &self,
        g: &MixedGraph,
        cards: &BTreeMap<VertexId, usize>,
    ) -> Result<TabularKernel, PdsemError> {
        let mut product = crate::kernel::Factor::constant(1.0);
        let mut outcomes = BTreeSet::new();
        for (v, kind) in g.vertices() {
            if kind == VertexKind::Fixed {
                continue;
            }
            let cpt = self.cpts.get(v).ok_or_else(|| PdsemError::MissingCpt {
                vertex: v.to_string(),
            })?;
            product = product.multiply(&cpt.to_factor())?;
            outcomes.insert(v.clone());
        }
        // context vertices without any sampled child never enter the product
        let _ = cards;
        Ok(TabularKernel::from_factor(&product, &outcomes)?)
    }

    /// Structural replacement: treated vertices get a parentless point mass.
    pub fn intervene(&self, assignments: &BTreeMap<VertexId, usize>) -> GraphCpts {
        let mut cpts = self.cpts.clone();
        for (v, value) in assignments {
            if let Some(old) = cpts.get(v) {
                cpts.insert(v.clone(), Cpt::point_mass(old.child.clone(), *value));
            }
        }
        GraphCpts { cpts }
    }
}

/// Linear structural equation for one continuous variable.
#[derive(Clone, Debug, PartialEq)]
pub struct LgEquation {
    pub parents: Vec<VertexId>,
    pub coeffs: Vec<f64>,
    pub intercept: f64,
}

/// Multinomial-logistic selector: weights over features of the current state,
/// normalized across the allowed next states.
#[derive(Clone, Debug, PartialEq)]
pub struct LgSelector {
    pub features: Vec<VertexId>,
    /// one weight row per successor
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

/// Linear-Gaussian block for one graph: equations, correlated error
/// covariance, and the selector logistic.
#[derive(Clone, Debug, PartialEq)]
pub struct LgBlock {
    /// order of the noise variables; defines the covariance layout
    pub noise_vars: Vec<VertexId>,
    pub equations: BTreeMap<VertexId, LgEquation>,
    pub covariance: Vec<Vec<f64>>,
    pub selector: LgSelector,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamSet {
    None,
    Cpt {
        initial: GraphCpts,
        transitions: BTreeMap<TransitionId, GraphCpts>,
    },
    LinearGaussian {
        initial: LgBlock,
        transitions: BTreeMap<TransitionId, LgBlock>,
    },
}

impl ParamSet {
    pub fn is_cpt(&self) -> bool {
        matches!(self, ParamSet::Cpt { .. })
    }
}

/// Full model: state machine, per-state variable registry, graphs and
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PdsemSpec {
    pub states: Vec<StateDecl>,
    pub vars: BTreeMap<StateId, StateVars>,
    pub selectors: BTreeMap<StateId, SelectorDecl>,
    pub initial_graph: MixedGraph,
    pub transition_graphs: BTreeMap<TransitionId, MixedGraph>,
    pub params: ParamSet,
}

/// Intervention: per target state, forced category per treated variable.
/// Keying by target state makes the consistency rule (all transitions into a
/// state force the same values) structural.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Intervention {
    pub by_state: BTreeMap<StateId, BTreeMap<VertexId, usize>>,
}

impl Intervention {
    pub fn empty() -> Self {
        Intervention::default()
    }

    pub fn single(state: impl Into<StateId>, var: impl Into<VertexId>, value: usize) -> Self {
        let mut by_state = BTreeMap::new();
        by_state.insert(state.into(), [(var.into(), value)].into_iter().collect());
        Intervention { by_state }
    }

    pub fn is_empty(&self) -> bool {
        self.by_state.values().all(|m| m.is_empty())
    }

    /// Force the same variable to the same value in every non-absorbing state
    /// that declares it.
    pub fn everywhere(spec: &PdsemSpec, var: impl Into<VertexId>, value: usize) -> Self {
        let var = var.into();
        let mut by_state = BTreeMap::new();
        for s in &spec.states {
            if s.absorbing {
                continue;
            }
            if let Some(vars) = spec.vars.get(&s.id) {
                if vars.observed.iter().any(|v| v.name == var) {
                    by_state.insert(s.id.clone(), [(var.clone(), value)].into_iter().collect());
                }
            }
        }
        Intervention { by_state }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Terminal {
    Absorbed,
    Censored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub state: StateId,
    pub values: BTreeMap<VertexId, usize>,
}

/// A realized trajectory: the visited states with their variable assignments,
/// ending in absorption or at the step cap.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub terminal: Terminal,
}

impl Trajectory {
    /// Number of state visits, counting the terminal absorbing arrival.
    pub fn length(&self) -> usize {
        self.steps.len() + usize::from(self.terminal == Terminal::Absorbed)
    }
}

/// Machine-parseable diagnostic category, mirrored by the CLI prefixes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DiagnosticCode {
    Assumption1,
    Assumption2,
    Assumption3,
    Graph,
    Schema,
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagnosticCode::Assumption1 => "ASSUMPTION1",
            DiagnosticCode::Assumption2 => "ASSUMPTION2",
            DiagnosticCode::Assumption3 => "ASSUMPTION3",
            DiagnosticCode::Graph => "GRAPH",
            DiagnosticCode::Schema => "SCHEMA",
        };
        f.write_str(s)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub message: String,
}

impl Diagnostic {
    fn new(code: DiagnosticCode, message: impl Into<String>) -> Self {
        Diagnostic { code, message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.code, self.message)
    }
}

#[derive(Debug, Error)]
pub enum PdsemError {
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("unknown variable `{var}` in state `{state}`")]
    UnknownVariable { state: String, var: String },
    #[error("spec has hidden variables; operation requires a fully observed model")]
    HiddenPresent,
    #[error("operation requires tabular (CPT) parameters")]
    CptParamsRequired,
    #[error("interventions on the state selector `{var}` of `{state}` are not supported")]
    SelectorIntervention { state: String, var: String },
    #[error("intervention value {value} out of range for `{var}` (cardinality {cardinality})")]
    InterventionOutOfRange { var: String, value: usize, cardinality: usize },
    #[error("CPT for `{vertex}` has {actual} entries, expected {expected}")]
    CptShape { vertex: String, expected: usize, actual: usize },
    #[error("CPT row {row} of `{vertex}` sums to {sum}, not 1")]
    CptRowNotNormalized { vertex: String, row: usize, sum: f64 },
    #[error("no CPT for vertex `{vertex}`")]
    MissingCpt { vertex: String },
    #[error("invalid state sequence at position {position}: {reason}")]
    InvalidStateSequence { position: usize, reason: String },
    #[error("step {step}: missing value for `{vertex}`")]
    IncompleteAssignment { step: usize, vertex: String },
    #[error("step {step}: value {value} for `{vertex}` exceeds cardinality {cardinality}")]
    ValueOutOfRange { step: usize, vertex: String, value: usize, cardinality: usize },
    #[error("step {step}: zero-probability factor p({vertex} | ...)")]
    ZeroProbabilityFactor { step: usize, vertex: String },
    #[error("absorbed mass {absorbed:.9} within {max_steps} steps is below 1 - 1e-6; increase max_steps")]
    MassBound { absorbed: f64, max_steps: usize },
    #[error("query not identified: graph {graph}, witness district {{{witness}}}")]
    NotIdentified { graph: String, witness: String },
    #[error("spec is invalid:\n{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    InvalidSpec(Vec<Diagnostic>),
    #[error(transparent)]
    Identify(#[from] IdentifyError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl PdsemSpec {
    pub fn state(&self, id: &StateId) -> Result<&StateDecl, PdsemError> {
        self.states
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| PdsemError::UnknownState(id.to_string()))
    }

    pub fn initial_state(&self) -> &StateDecl {
        self.states.iter().find(|s| s.initial).expect("validated spec has an initial state")
    }

    pub fn is_absorbing(&self, id: &StateId) -> bool {
        self.states.iter().any(|s| &s.id == id && s.absorbing)
    }

    /// The declared transition set.
    pub fn transitions(&self) -> impl Iterator<Item = &TransitionId> {
        self.transition_graphs.keys()
    }

    pub fn graph(&self, key: &GraphKey) -> &MixedGraph {
        match key {
            GraphKey::Initial => &self.initial_graph,
            GraphKey::Transition(t) => &self.transition_graphs[t],
        }
    }

    pub fn graph_cpts(&self, key: &GraphKey) -> Result<&GraphCpts, PdsemError> {
        match &self.params {
            ParamSet::Cpt { initial, transitions } => Ok(match key {
                GraphKey::Initial => initial,
                GraphKey::Transition(t) => &transitions[t],
            }),
            _ => Err(PdsemError::CptParamsRequired),
        }
    }

    /// Target state of a graph: the state whose variables it samples.
    pub fn target_state(&self, key: &GraphKey) -> StateId {
        match key {
            GraphKey::Initial => self.initial_state().id.clone(),
            GraphKey::Transition(t) => t.to.clone(),
        }
    }

    /// All graphs sampling a given state's variables: the initial graph for
    /// the initial state plus every transition into the state.
    pub fn graphs_into(&self, state: &StateId) -> Vec<GraphKey> {
        let mut out = Vec::new();
        if &self.initial_state().id == state {
            out.push(GraphKey::Initial);
        }
        for t in self.transition_graphs.keys() {
            if &t.to == state {
                out.push(GraphKey::Transition(t.clone()));
            }
        }
        out
    }

    pub fn state_vars(&self, state: &StateId) -> Result<&StateVars, PdsemError> {
        self.vars
            .get(state)
            .ok_or_else(|| PdsemError::UnknownState(state.to_string()))
    }

    pub fn var_decl(&self, state: &StateId, var: &VertexId) -> Result<&VarDecl, PdsemError> {
        let vars = self.state_vars(state)?;
        vars.observed
            .iter()
            .chain(&vars.hidden)
            .find(|v| &v.name == var)
            .ok_or_else(|| PdsemError::UnknownVariable {
                state: state.to_string(),
                var: var.to_string(),
            })
    }

    /// Cardinalities of every vertex of a graph, context vertices included.
    pub fn graph_cards(&self, key: &GraphKey) -> Result<BTreeMap<VertexId, usize>, PdsemError> {
        let target = self.target_state(key);
        let mut cards = BTreeMap::new();
        let tv = self.state_vars(&target)?;
        for v in tv.observed.iter().chain(&tv.hidden) {
            cards.insert(v.name.clone(), v.cardinality);
        }
        if let GraphKey::Transition(t) = key {
            let sv = self.state_vars(&t.from)?;
            for v in sv.observed.iter().chain(&sv.hidden) {
                cards.insert(context_vertex(&v.name), v.cardinality);
            }
        }
        Ok(cards)
    }

    pub fn has_hidden(&self) -> bool {
        self.vars.values().any(|v| !v.hidden.is_empty())
    }

    pub fn selector(&self, state: &StateId) -> Result<&SelectorDecl, PdsemError> {
        self.selectors
            .get(state)
            .ok_or_else(|| PdsemError::UnknownState(state.to_string()))
    }

    /// Resolve a state's successor from the realized selector category.
    pub fn next_state(&self, state: &StateId, selector_value: usize) -> Result<&StateId, PdsemError> {
        let sel = self.selector(state)?;
        sel.next.get(selector_value).ok_or(PdsemError::ValueOutOfRange {
            step: 0,
            vertex: sel.var.to_string(),
            value: selector_value,
            cardinality: sel.next.len(),
        })
    }

    /// Resolve an intervention category from a label or index string.
    pub fn resolve_value(
        &self,
        state: &StateId,
        var: &VertexId,
        raw: &str,
    ) -> Result<usize, PdsemError> {
        let decl = self.var_decl(state, var)?;
        if let Some(labels) = &decl.labels {
            if let Some(idx) = labels.iter().position(|l| l == raw) {
                return Ok(idx);
            }
        }
        let value: usize = raw.parse().map_err(|_| PdsemError::UnknownVariable {
            state: state.to_string(),
            var: format!("{var}={raw}"),
        })?;
        if value >= decl.cardinality {
            return Err(PdsemError::InterventionOutOfRange {
                var: var.to_string(),
                value,
                cardinality: decl.cardinality,
            });
        }
        Ok(value)
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with(CONTEXT_PREFIX)
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Check every structural invariant of a spec. An empty list means valid;
/// each diagnostic names the assumption or rule, the graph and the vertex at
/// fault.
pub fn validate_spec(spec: &PdsemSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let d = &mut out;

    let initials: Vec<&StateDecl> = spec.states.iter().filter(|s| s.initial).collect();
    if initials.len() != 1 {
        d.push(Diagnostic::new(
            DiagnosticCode::Graph,
            format!("expected exactly one initial state, found {}", initials.len()),
        ));
    }
    if !spec.states.iter().any(|s| s.absorbing) {
        d.push(Diagnostic::new(DiagnosticCode::Graph, "no absorbing state declared"));
    }
    for s in &spec.states {
        if !valid_name(s.id.as_str()) {
            d.push(Diagnostic::new(
                DiagnosticCode::Schema,
                format!("state name `{}` is not a valid identifier", s.id),
            ));
        }
        if s.initial && s.absorbing {
            d.push(Diagnostic::new(
                DiagnosticCode::Graph,
                format!("state `{}` is both initial and absorbing", s.id),
            ));
        }
        let vars = spec.vars.get(&s.id);
        if s.absorbing {
            if vars.map(|v| !v.observed.is_empty() || !v.hidden.is_empty()).unwrap_or(false) {
                d.push(Diagnostic::new(
                    DiagnosticCode::Graph,
                    format!("absorbing state `{}` must carry no variables", s.id),
                ));
            }
            if spec.selectors.contains_key(&s.id) {
                d.push(Diagnostic::new(
                    DiagnosticCode::Graph,
                    format!("absorbing state `{}` must not declare a selector", s.id),
                ));
            }
            if spec.transition_graphs.keys().any(|t| t.from == s.id) {
                d.push(Diagnostic::new(
                    DiagnosticCode::Graph,
                    format!("absorbing state `{}` has outgoing transitions", s.id),
                ));
            }
            if spec.transition_graphs.keys().any(|t| t.to == s.id) {
                d.push(Diagnostic::new(
                    DiagnosticCode::Graph,
                    format!(
                        "transitions into absorbing state `{}` must not declare graphs",
                        s.id
                    ),
                ));
            }
            continue;
        }
        // non-absorbing: registry and selector
        let Some(vars) = vars else {
            d.push(Diagnostic::new(
                DiagnosticCode::Schema,
                format!("state `{}` has no variable registry", s.id),
            ));
            continue;
        };
        let mut seen = BTreeSet::new();
        for v in vars.observed.iter().chain(&vars.hidden) {
            if !valid_name(v.name.as_str()) {
                d.push(Diagnostic::new(
                    DiagnosticCode::Schema,
                    format!("variable name `{}` in state `{}` is not a valid identifier", v.name, s.id),
                ));
            }
            if v.cardinality == 0 {
                d.push(Diagnostic::new(
                    DiagnosticCode::Schema,
                    format!("variable `{}` in state `{}` has cardinality 0", v.name, s.id),
                ));
            }
            if !seen.insert(v.name.clone()) {
                d.push(Diagnostic::new(
                    DiagnosticCode::Schema,
                    format!("duplicate variable `{}` in state `{}`", v.name, s.id),
                ));
            }
        }
        match spec.selectors.get(&s.id) {
            None => d.push(Diagnostic::new(
                DiagnosticCode::Graph,
                format!("state `{}` declares no selector", s.id),
            )),
            Some(sel) => {
                if vars.hidden.iter().any(|v| v.name == sel.var) {
                    d.push(Diagnostic::new(
                        DiagnosticCode::Assumption3,
                        format!("state selector `{}` of `{}` is hidden", sel.var, s.id),
                    ));
                } else
                if let Some(decl) = vars.observed.iter().find(|v| v.name == sel.var) {
                    if decl.cardinality != sel.next.len() {
                        d.push(Diagnostic::new(
                            DiagnosticCode::Graph,
                            format!(
                                "selector `{}` of `{}` has cardinality {} but {} successors",
                                sel.var,
                                s.id,
                                decl.cardinality,
                                sel.next.len()
                            ),
                        ));
                    }
                } else {
                    d.push(Diagnostic::new(
                        DiagnosticCode::Graph,
                        format!("selector `{}` of `{}` is not a registered variable", sel.var, s.id),
                    ));
                }
                for n in &sel.next {
                    if spec.states.iter().all(|t| &t.id != n) {
                        d.push(Diagnostic::new(
                            DiagnosticCode::Graph,
                            format!("selector of `{}` names unknown state `{}`", s.id, n),
                        ));
                    } else if !spec.is_absorbing(n)
                        && !spec
                            .transition_graphs
                            .contains_key(&TransitionId { from: s.id.clone(), to: n.clone() })
                    {
                        d.push(Diagnostic::new(
                            DiagnosticCode::Graph,
                            format!("selector of `{}` reaches `{}` but no transition graph is declared", s.id, n),
                        ));
                    }
                }
            }
        }
    }

    for t in spec.transition_graphs.keys() {
        if spec.is_absorbing(&t.from) {
            continue; // reported above
        }
        match spec.selectors.get(&t.from) {
            Some(sel) if sel.next.contains(&t.to) => {}
            _ => d.push(Diagnostic::new(
                DiagnosticCode::Graph,
                format!("transition {t} is declared but unreachable from the selector of `{}`", t.from),
            )),
        }
    }

    // per-graph structure
    let mut keys = vec![GraphKey::Initial];
    keys.extend(spec.transition_graphs.keys().cloned().map(GraphKey::Transition));
    for key in &keys {
        if let GraphKey::Transition(t) = key {
            if spec.state(&t.from).is_err() || spec.state(&t.to).is_err() {
                d.push(Diagnostic::new(
                    DiagnosticCode::Schema,
                    format!("transition {t} references an undeclared state"),
                ));
                continue;
            }
            if spec.is_absorbing(&t.to) {
                continue; // reported above
            }
        }
        let g = spec.graph(key);
        let target = spec.target_state(key);
        let Ok(tv) = spec.state_vars(&target) else { continue };
        let expected_random: BTreeSet<VertexId> =
            tv.observed.iter().map(|v| v.name.clone()).collect();
        let expected_hidden: BTreeSet<VertexId> =
            tv.hidden.iter().map(|v| v.name.clone()).collect();
        if g.random_vertices() != expected_random || g.hidden_vertices() != expected_hidden {
            d.push(Diagnostic::new(
                DiagnosticCode::Assumption2,
                format!(
                    "graph {key} does not match the variable registry of state `{target}`"
                ),
            ));
        }
        match key {
            GraphKey::Initial => {
                if !g.fixed_vertices().is_empty() {
                    d.push(Diagnostic::new(
                        DiagnosticCode::Graph,
                        "initial graph must not have context vertices".to_string(),
                    ));
                }
            }
            GraphKey::Transition(t) => {
                let Ok(sv) = spec.state_vars(&t.from) else { continue };
                let observed_src: BTreeSet<VertexId> =
                    sv.observed.iter().map(|v| v.name.clone()).collect();
                let hidden_src: BTreeSet<VertexId> =
                    sv.hidden.iter().map(|v| v.name.clone()).collect();
                for w in g.fixed_vertices() {
                    match context_target(&w) {
                        None => d.push(Diagnostic::new(
                            DiagnosticCode::Graph,
                            format!("context vertex `{w}` of {key} lacks the `{CONTEXT_PREFIX}` prefix"),
                        )),
                        Some(src) => {
                            if hidden_src.contains(&src) {
                                d.push(Diagnostic::new(
                                    DiagnosticCode::Assumption1,
                                    format!(
                                        "transition {key} depends on `{src}`, which is unobserved in state `{}`",
                                        t.from
                                    ),
                                ));
                            } else if !observed_src.contains(&src) {
                                d.push(Diagnostic::new(
                                    DiagnosticCode::Graph,
                                    format!(
                                        "context vertex `{w}` of {key} references unknown variable `{src}` of state `{}`",
                                        t.from
                                    ),
                                ));
                            }
                        }
                    }
                }
            }
        }
        // selector must be a sink
        if let Some(sel) = spec.selectors.get(&target) {
            if g.contains(&sel.var) && !g.children(&sel.var).is_empty() {
                d.push(Diagnostic::new(
                    DiagnosticCode::Graph,
                    format!("selector `{}` has outgoing edges in graph {key}", sel.var),
                ));
            }
        }
        // parameters
        match &spec.params {
            ParamSet::None => {}
            ParamSet::Cpt { .. } => {
                if g.bidirected_edges().next().is_some() {
                    d.push(Diagnostic::new(
                        DiagnosticCode::Graph,
                        format!(
                            "graph {key}: tabular parameters cannot represent bidirected edges; declare hidden variables instead"
                        ),
                    ));
                }
                if let Ok(tv) = spec.state_vars(&target) {
                    for v in &tv.observed {
                        if v.continuous {
                            d.push(Diagnostic::new(
                                DiagnosticCode::Graph,
                                format!(
                                    "variable `{}` of `{target}` is continuous but parameters are tabular",
                                    v.name
                                ),
                            ));
                        }
                    }
                }
                let cpts = spec.graph_cpts(key).expect("checked is_cpt");
                let Ok(cards) = spec.graph_cards(key) else { continue };
                for (v, kind) in g.vertices() {
                    if kind == VertexKind::Fixed {
                        continue;
                    }
                    match cpts.cpts.get(v) {
                        None => d.push(Diagnostic::new(
                            DiagnosticCode::Graph,
                            format!("graph {key}: no CPT for `{v}`"),
                        )),
                        Some(cpt) => {
                            let declared: BTreeSet<VertexId> =
                                cpt.parents.iter().map(|p| p.id.clone()).collect();
                            if declared != g.parents(v) {
                                d.push(Diagnostic::new(
                                    DiagnosticCode::Graph,
                                    format!("graph {key}: CPT parents of `{v}` do not match the graph"),
                                ));
                            }
                            if cards.get(v) != Some(&cpt.child.cardinality) {
                                d.push(Diagnostic::new(
                                    DiagnosticCode::Graph,
                                    format!("graph {key}: CPT cardinality of `{v}` disagrees with the registry"),
                                ));
                            }
                        }
                    }
                }
            }
            ParamSet::LinearGaussian { .. } => {
                if spec.has_hidden() {
                    d.push(Diagnostic::new(
                        DiagnosticCode::Graph,
                        "linear-Gaussian parameters require explicit hidden variables to be projected to bidirected edges".to_string(),
                    ));
                }
                let block = match (&spec.params, key) {
                    (ParamSet::LinearGaussian { initial, .. }, GraphKey::Initial) => initial,
                    (ParamSet::LinearGaussian { transitions, .. }, GraphKey::Transition(t)) => {
                        match transitions.get(t) {
                            Some(b) => b,
                            None => {
                                d.push(Diagnostic::new(
                                    DiagnosticCode::Graph,
                                    format!("graph {key}: no linear-Gaussian block"),
                                ));
                                continue;
                            }
                        }
                    }
                    _ => unreachable!(),
                };
                validate_lg_block(spec, key, g, block, d);
            }
        }
    }
    out
}

fn validate_lg_block(
    spec: &PdsemSpec,
    key: &GraphKey,
    g: &MixedGraph,
    block: &LgBlock,
    d: &mut Vec<Diagnostic>,
) {
    let target = spec.target_state(key);
    let sel_var = spec.selectors.get(&target).map(|s| s.var.clone());
    for (v, _) in g.vertices().filter(|(_, k)| *k == VertexKind::Random) {
        if Some(v.clone()) == sel_var {
            continue;
        }
        match block.equations.get(v) {
            None => d.push(Diagnostic::new(
                DiagnosticCode::Graph,
                format!("graph {key}: no equation for `{v}`"),
            )),
            Some(eq) => {
                let declared: BTreeSet<VertexId> = eq.parents.iter().cloned().collect();
                if declared != g.parents(v) {
                    d.push(Diagnostic::new(
                        DiagnosticCode::Graph,
                        format!("graph {key}: equation parents of `{v}` do not match the graph"),
                    ));
                }
                if eq.parents.len() != eq.coeffs.len() {
                    d.push(Diagnostic::new(
                        DiagnosticCode::Graph,
                        format!("graph {key}: `{v}` has {} parents but {} coefficients", eq.parents.len(), eq.coeffs.len()),
                    ));
                }
            }
        }
    }
    let n = block.noise_vars.len();
    if block.covariance.len() != n || block.covariance.iter().any(|r| r.len() != n) {
        d.push(Diagnostic::new(
            DiagnosticCode::Graph,
            format!("graph {key}: covariance must be {n}x{n}"),
        ));
        return;
    }
    for i in 0..n {
        for j in 0..n {
            if (block.covariance[i][j] - block.covariance[j][i]).abs() > 1e-12 {
                d.push(Diagnostic::new(
                    DiagnosticCode::Graph,
                    format!("graph {key}: covariance is not symmetric"),
                ));
                return;
            }
            if i != j && block.covariance[i][j] != 0.0 {
                let a = &block.noise_vars[i];
                let b = &block.noise_vars[j];
                let edge = if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
                if !g.bidirected_edges().any(|e| e == &edge) {
                    d.push(Diagnostic::new(
                        DiagnosticCode::Graph,
                        format!("graph {key}: correlated errors between `{a}` and `{b}` without a bidirected edge"),
                    ));
                }
            }
        }
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| block.covariance[i][j]);
    if nalgebra::Cholesky::new(m).is_none() {
        d.push(Diagnostic::new(
            DiagnosticCode::Graph,
            format!("graph {key}: covariance is not positive definite"),
        ));
    }
    if let Some(sel) = spec.selectors.get(&target) {
        if block.selector.weights.len() != sel.next.len()
            || block.selector.intercepts.len() != sel.next.len()
            || block.selector.weights.iter().any(|w| w.len() != block.selector.features.len())
        {
            d.push(Diagnostic::new(
                DiagnosticCode::Graph,
                format!("graph {key}: selector logistic dimensions disagree with the successor list"),
            ));
        }
    }
}

fn require_valid(spec: &PdsemSpec) -> Result<(), PdsemError> {
    let diags = validate_spec(spec);
    if diags.is_empty() {
        Ok(())
    } else {
        Err(PdsemError::InvalidSpec(diags))
    }
}

fn validate_intervention(spec: &PdsemSpec, iv: &Intervention) -> Result<(), PdsemError> {
    for (state, assignments) in &iv.by_state {
        let decl = spec.state(state)?;
        if decl.absorbing {
            return Err(PdsemError::UnknownVariable {
                state: state.to_string(),
                var: "absorbing states carry no variables".to_string(),
            });
        }
        let selector = spec.selector(state)?;
        for (var, value) in assignments {
            if var == &selector.var {
                return Err(PdsemError::SelectorIntervention {
                    state: state.to_string(),
                    var: var.to_string(),
                });
            }
            let vd = spec.var_decl(state, var)?;
            if spec.state_vars(state)?.hidden.iter().any(|h| &h.name == var) {
                return Err(PdsemError::UnknownVariable {
                    state: state.to_string(),
                    var: format!("{var} is hidden"),
                });
            }
            if *value >= vd.cardinality {
                return Err(PdsemError::InterventionOutOfRange {
                    var: var.to_string(),
                    value: *value,
                    cardinality: vd.cardinality,
                });
            }
        }
    }
    Ok(())
}

/// Structural-equation replacement semantics: in every graph sampling a
/// treated state, treated variables lose their incoming edges and their CPTs
/// become point masses. Everything untreated, including all state-selector
/// CPTs, is preserved bit-exactly.
pub fn intervened_spec(spec: &PdsemSpec, iv: &Intervention) -> Result<PdsemSpec, PdsemError> {
    require_valid(spec)?;
    validate_intervention(spec, iv)?;
    if !spec.params.is_cpt() && !iv.is_empty() {
        return Err(PdsemError::CptParamsRequired);
    }
    let mut out = spec.clone();
    for (state, assignments) in &iv.by_state {
        if assignments.is_empty() {
            continue;
        }
        for key in spec.graphs_into(state) {
            let g = spec.graph(&key);
            let surgered = surger_graph(g, assignments)?;
            match &key {
                GraphKey::Initial => out.initial_graph = surgered,
                GraphKey::Transition(t) => {
                    out.transition_graphs.insert(t.clone(), surgered);
                }
            }
            if let ParamSet::Cpt { initial, transitions } = &mut out.params {
                let cpts = match &key {
                    GraphKey::Initial => initial,
                    GraphKey::Transition(t) => transitions.get_mut(t).expect("validated"),
                };
                *cpts = cpts.intervene(assignments);
            }
        }
    }
    Ok(out)
}

fn surger_graph(
    g: &MixedGraph,
    treated: &BTreeMap<VertexId, usize>,
) -> Result<MixedGraph, PdsemError> {
    let vertices: Vec<(VertexId, VertexKind)> =
        g.vertices().map(|(v, k)| (v.clone(), k)).collect();
    let directed: Vec<(VertexId, VertexId)> = g
        .directed_edges()
        .filter(|(_, b)| !treated.contains_key(b))
        .cloned()
        .collect();
    let bidirected: Vec<(VertexId, VertexId)> = g
        .bidirected_edges()
        .filter(|(a, b)| !treated.contains_key(a) && !treated.contains_key(b))
        .cloned()
        .collect();
    Ok(MixedGraph::new(vertices, directed, bidirected)?)
}

/// Validate a trajectory against the spec's structure: state sequence,
/// completeness, value ranges, and selector consistency.
pub fn validate_trajectory(spec: &PdsemSpec, t: &Trajectory) -> Result<(), PdsemError> {
    if t.steps.is_empty() {
        return Err(PdsemError::InvalidStateSequence {
            position: 0,
            reason: "empty trajectory".to_string(),
        });
    }
    if t.steps[0].state != spec.initial_state().id {
        return Err(PdsemError::InvalidStateSequence {
            position: 0,
            reason: format!("trajectory starts at `{}`", t.steps[0].state),
        });
    }
    for (i, step) in t.steps.iter().enumerate() {
        let decl = spec.state(&step.state)?;
        if decl.absorbing {
            return Err(PdsemError::InvalidStateSequence {
                position: i,
                reason: format!("absorbing state `{}` carries no step", step.state),
            });
        }
        let vars = spec.state_vars(&step.state)?;
        for v in &vars.observed {
            match step.values.get(&v.name) {
                None => {
                    return Err(PdsemError::IncompleteAssignment {
                        step: i,
                        vertex: v.name.to_string(),
                    })
                }
                Some(&x) if x >= v.cardinality => {
                    return Err(PdsemError::ValueOutOfRange {
                        step: i,
                        vertex: v.name.to_string(),
                        value: x,
                        cardinality: v.cardinality,
                    })
                }
                Some(_) => {}
            }
        }
        let sel = spec.selector(&step.state)?;
        let sval = step.values[&sel.var];
        let next = sel.next.get(sval).ok_or(PdsemError::ValueOutOfRange {
            step: i,
            vertex: sel.var.to_string(),
            value: sval,
            cardinality: sel.next.len(),
        })?;
        if i + 1 < t.steps.len() {
            if next != &t.steps[i + 1].state {
                return Err(PdsemError::InvalidStateSequence {
                    position: i + 1,
                    reason: format!(
                        "selector points to `{next}` but trajectory visits `{}`",
                        t.steps[i + 1].state
                    ),
                });
            }
            if !spec
                .transition_graphs
                .contains_key(&TransitionId { from: step.state.clone(), to: next.clone() })
            {
                return Err(PdsemError::InvalidStateSequence {
                    position: i + 1,
                    reason: format!("transition {}->{next} is not allowed", step.state),
                });
            }
        } else {
            let absorbed = spec.is_absorbing(next);
            match t.terminal {
                Terminal::Absorbed if !absorbed => {
                    return Err(PdsemError::InvalidStateSequence {
                        position: i,
                        reason: format!("terminal flag says absorbed but selector points to `{next}`"),
                    })
                }
                Terminal::Censored if absorbed => {
                    return Err(PdsemError::InvalidStateSequence {
                        position: i,
                        reason: "terminal flag says censored but selector absorbs".to_string(),
                    })
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// The observed-data factorization along a realized state sequence, as a
/// symbolic product over time-indexed variables: the initial block followed
/// by one block per transition indicator.
pub fn observed_factorization(
    spec: &PdsemSpec,
    trajectory_states: &[StateId],
) -> Result<FunctionalExpr, PdsemError> {
    if spec.has_hidden() {
        return Err(PdsemError::HiddenPresent);
    }
    if trajectory_states.is_empty() {
        return Err(PdsemError::InvalidStateSequence {
            position: 0,
            reason: "empty state sequence".to_string(),
        });
    }
    if trajectory_states[0] != spec.initial_state().id {
        return Err(PdsemError::InvalidStateSequence {
            position: 0,
            reason: format!("sequence starts at `{}`", trajectory_states[0]),
        });
    }
    let mut factors = Vec::new();
    for (i, state) in trajectory_states.iter().enumerate() {
        spec.state(state)?;
        if spec.is_absorbing(state) {
            if i + 1 != trajectory_states.len() {
                return Err(PdsemError::InvalidStateSequence {
                    position: i,
                    reason: format!("absorbing state `{state}` mid-sequence"),
                });
            }
            break; // contributes factor 1
        }
        let key = if i == 0 {
            GraphKey::Initial
        } else {
            let t = TransitionId {
                from: trajectory_states[i - 1].clone(),
                to: state.clone(),
            };
            if !spec.transition_graphs.contains_key(&t) {
                return Err(PdsemError::InvalidStateSequence {
                    position: i,
                    reason: format!("transition {t} is not allowed"),
                });
            }
            GraphKey::Transition(t)
        };
        let g = spec.graph(&key);
        let step = i + 1;
        for v in g.random_vertices() {
            let vars: BTreeSet<VertexId> = [v.at_step(step)].into_iter().collect();
            let context: BTreeSet<VertexId> = g
                .parents(&v)
                .into_iter()
                .map(|p| match context_target(&p) {
                    Some(src) => src.at_step(step - 1),
                    None => p.at_step(step),
                })
                .collect();
            factors.push(FunctionalExpr::kernel_ref(vars, context));
        }
    }
    Ok(FunctionalExpr::product(factors))
}

/// Log-probability of a fully observed trajectory: the sum of the log CPT
/// factors along it, state-selector factors included. Censored trajectories
/// simply end after their last realized step; absorption contributes only
/// the final selector factor. A zero-probability factor is reported as an
/// error naming the step and vertex.
pub fn trajectory_loglik(spec: &PdsemSpec, t: &Trajectory) -> Result<f64, PdsemError> {
    if spec.has_hidden() {
        return Err(PdsemError::HiddenPresent);
    }
    validate_trajectory(spec, t)?;
    let mut total = 0.0;
    for (i, step) in t.steps.iter().enumerate() {
        let key = if i == 0 {
            GraphKey::Initial
        } else {
            GraphKey::Transition(TransitionId {
                from: t.steps[i - 1].state.clone(),
                to: step.state.clone(),
            })
        };
        let g = spec.graph(&key);
        let cpts = spec.graph_cpts(&key)?;
        // assignment visible to this block: current step plus prev.* context
        let mut assignment: BTreeMap<VertexId, usize> = step.values.clone();
        if i > 0 {
            for (v, x) in &t.steps[i - 1].values {
                assignment.insert(context_vertex(v), *x);
            }
        }
        for v in g.random_vertices() {
            let cpt = cpts.cpts.get(&v).ok_or_else(|| PdsemError::MissingCpt {
                vertex: v.to_string(),
            })?;
            let p = cpt.prob(&assignment, assignment[&v]);
            if p <= 0.0 {
                return Err(PdsemError::ZeroProbabilityFactor {
                    step: i,
                    vertex: v.to_string(),
                });
            }
            total += p.ln();
        }
    }
    Ok(total)
}

/// Per-graph identification of a latent-variable model under an intervention.
#[derive(Clone, Debug)]
pub struct PdsemIdentification {
    pub initial: IdentifyResult,
    pub transitions: BTreeMap<TransitionId, IdentifyResult>,
}

impl PdsemIdentification {
    pub fn is_identified(&self) -> bool {
        self.initial.is_identified() && self.transitions.values().all(|r| r.is_identified())
    }

    /// First failing graph with its witness district, in deterministic order.
    pub fn first_witness(&self) -> Option<(GraphKey, &BTreeSet<VertexId>)> {
        if let Some(w) = self.initial.witness() {
            return Some((GraphKey::Initial, w));
        }
        self.transitions
            .iter()
            .find_map(|(t, r)| r.witness().map(|w| (GraphKey::Transition(t.clone()), w)))
    }

    pub fn result_for(&self, key: &GraphKey) -> &IdentifyResult {
        match key {
            GraphKey::Initial => &self.initial,
            GraphKey::Transition(t) => &self.transitions[t],
        }
    }
}

/// Identify the counterfactual factorization of a (possibly latent-variable)
/// model: latent-project every graph and check that each district of the
/// untreated-outcome subgraph is intrinsic, producing per-graph functionals
/// whose product over a realized state sequence is the counterfactual law.
pub fn pdsem_identify(
    spec: &PdsemSpec,
    iv: &Intervention,
) -> Result<PdsemIdentification, PdsemError> {
    require_valid(spec)?;
    validate_intervention(spec, iv)?;
    let empty = BTreeMap::new();
    let mut keys = vec![GraphKey::Initial];
    keys.extend(spec.transition_graphs.keys().cloned().map(GraphKey::Transition));
    let mut initial = None;
    let mut transitions = BTreeMap::new();
    for key in keys {
        let target = spec.target_state(&key);
        let treated = iv.by_state.get(&target).unwrap_or(&empty);
        let g = spec.graph(&key).latent_project();
        let outcomes: BTreeSet<VertexId> = g
            .random_vertices()
            .into_iter()
            .filter(|v| !treated.contains_key(v))
            .collect();
        let query = CausalQuery {
            treatments: treated.clone(),
            outcomes,
        };
        let mut result = id_admg(&g, &query)?;
        // bind treated context values from the source state
        if let (GraphKey::Transition(t), IdentifyResult::Identified(expr)) = (&key, &mut result) {
            if let Some(src_treated) = iv.by_state.get(&t.from) {
                let binds: BTreeMap<VertexId, usize> = src_treated
                    .iter()
                    .map(|(v, x)| (context_vertex(v), *x))
                    .collect();
                *expr = expr.clone().bind_all(&binds);
            }
        }
        match key {
            GraphKey::Initial => initial = Some(result),
            GraphKey::Transition(t) => {
                transitions.insert(t, result);
            }
        }
    }
    Ok(PdsemIdentification {
        initial: initial.expect("initial graph always present"),
        transitions,
    })
}

/// Which statistic [`exact_query`] should tabulate.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Statistic {
    /// Distribution of trajectory length (state visits, absorbing arrival
    /// included).
    LengthDistribution,
    /// Distribution of the number of visits to each non-absorbing state.
    StateVisitCounts,
    /// Distribution over the absorbing state reached.
    TerminalMarginal,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExactTable {
    Lengths(BTreeMap<usize, f64>),
    Visits(BTreeMap<(StateId, usize), f64>),
    Terminal(BTreeMap<StateId, f64>),
}

#[derive(Clone, Debug)]
pub struct ExactQueryResult {
    pub table: ExactTable,
    pub absorbed_mass: f64,
    pub censored_mass: f64,
}

impl ExactQueryResult {
    /// Rows as (label, probability), for CSV output.
    pub fn rows(&self) -> Vec<(String, f64)> {
        match &self.table {
            ExactTable::Lengths(m) => {
                m.iter().map(|(k, v)| (k.to_string(), *v)).collect()
            }
            ExactTable::Visits(m) => m
                .iter()
                .map(|((s, k), v)| (format!("{s}:{k}"), *v))
                .collect(),
            ExactTable::Terminal(m) => {
                m.iter().map(|(s, v)| (s.to_string(), *v)).collect()
            }
        }
    }
}

/// Dense per-graph transition table over observed assignments, used by the
/// exact enumerator.
struct BlockTable {
    /// observed variables of the target state, registry order
    vars: Vec<VarDecl>,
    selector_pos: usize,
    /// `table[src_flat * out_len + out_flat]`; the initial block has one row
    table: Vec<f64>,
    out_len: usize,
}

fn flat_len(vars: &[VarDecl]) -> usize {
    vars.iter().map(|v| v.cardinality).product()
}

fn decode_flat(vars: &[VarDecl], mut flat: usize, out: &mut Vec<usize>) {
    out.clear();
    out.resize(vars.len(), 0);
    for (i, v) in vars.iter().enumerate().rev() {
        out[i] = flat % v.cardinality;
        flat /= v.cardinality;
    }
}

impl PdsemSpec {
    fn observed_decls(&self, state: &StateId) -> Result<Vec<VarDecl>, PdsemError> {
        Ok(self.state_vars(state)?.observed.clone())
    }
}

/// Build the observed-law block kernel of one graph: for a fully observed
/// spec this is the (possibly intervened) CPT product; for a hidden spec the
/// identified counterfactual functional evaluated on the observed margin.
fn block_table(
    spec: &PdsemSpec,
    intervened: &PdsemSpec,
    identification: Option<&PdsemIdentification>,
    iv: &Intervention,
    key: &GraphKey,
) -> Result<BlockTable, PdsemError> {
    let target = spec.target_state(key);
    let out_vars = spec.observed_decls(&target)?;
    let sel = spec.selector(&target)?;
    let selector_pos = out_vars.iter().position(|v| v.name == sel.var).expect("validated");
    let src_vars: Vec<VarDecl> = match key {
        GraphKey::Initial => Vec::new(),
        GraphKey::Transition(t) => spec.observed_decls(&t.from)?,
    };
    let out_len = flat_len(&out_vars);
    let src_len = flat_len(&src_vars).max(1);

    let value_fn: Box<dyn Fn(&BTreeMap<VertexId, usize>) -> f64> = if !spec.has_hidden() {
        let g = intervened.graph(key).clone();
        let cards = intervened.graph_cards(key)?;
        let joint = intervened.graph_cpts(key)?.joint(&g, &cards)?;
        Box::new(move |assignment| joint.value(assignment))
    } else {
        let ident = identification.expect("hidden specs carry an identification");
        let result = ident.result_for(key);
        let expr = match result.functional() {
            Some(e) => e.clone(),
            None => {
                let w = result.witness().unwrap();
                return Err(PdsemError::NotIdentified {
                    graph: key.to_string(),
                    witness: w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
                });
            }
        };
        // observed law of this block from the ground-truth parameters
        let g_full = spec.graph(key);
        let cards = spec.graph_cards(key)?;
        let joint = spec.graph_cpts(key)?.joint(g_full, &cards)?;
        let observed: BTreeSet<VertexId> = g_full.random_vertices();
        let margin = joint.marginalize(&observed)?;
        let projected = g_full.latent_project();
        let kernels = kernel_map_for(&expr, &margin, &projected)?;
        let evaluated = evaluate(&expr, &kernels)?;
        let treated = iv.by_state.get(&target).cloned().unwrap_or_default();
        Box::new(move |assignment| {
            for (v, x) in &treated {
                if assignment[v] != *x {
                    return 0.0;
                }
            }
            // the evaluated kernel may depend on fewer variables
            evaluated.value(assignment)
        })
    };

    let mut table = vec![0.0; src_len * out_len];
    let mut src_idx = Vec::new();
    let mut out_idx = Vec::new();
    for src_flat in 0..src_len {
        decode_flat(&src_vars, src_flat, &mut src_idx);
        let mut assignment: BTreeMap<VertexId, usize> = BTreeMap::new();
        for (v, x) in src_vars.iter().zip(&src_idx) {
            assignment.insert(context_vertex(&v.name), *x);
        }
        for out_flat in 0..out_len {
            decode_flat(&out_vars, out_flat, &mut out_idx);
            for (v, x) in out_vars.iter().zip(&out_idx) {
                assignment.insert(v.name.clone(), *x);
            }
            table[src_flat * out_len + out_flat] = value_fn(&assignment);
        }
    }
    Ok(BlockTable { vars: out_vars, selector_pos, table, out_len })
}

/// Exact interventional statistics by dynamic programming over the finite
/// chain on (state, assignment) pairs, up to `max_steps` realized steps.
///
/// Fails when the absorbed mass within the cap falls below `1 - 1e-6`; the
/// censored remainder is always reported exactly.
pub fn exact_query(
    spec: &PdsemSpec,
    iv: &Intervention,
    statistic: Statistic,
    max_steps: usize,
) -> Result<ExactQueryResult, PdsemError> {
    require_valid(spec)?;
    validate_intervention(spec, iv)?;
    let intervened = if spec.has_hidden() { spec.clone() } else { intervened_spec(spec, iv)? };
    let identification = if spec.has_hidden() {
        let ident = pdsem_identify(spec, iv)?;
        if let Some((key, w)) = ident.first_witness() {
            return Err(PdsemError::NotIdentified {
                graph: key.to_string(),
                witness: w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            });
        }
        Some(ident)
    } else {
        None
    };

    // per-graph dense block tables
    let mut blocks: BTreeMap<GraphKey, BlockTable> = BTreeMap::new();
    let mut keys = vec![GraphKey::Initial];
    keys.extend(spec.transition_graphs.keys().cloned().map(GraphKey::Transition));
    for key in keys {
        blocks.insert(
            key.clone(),
            block_table(spec, &intervened, identification.as_ref(), iv, &key)?,
        );
    }

    // successor lookup per state: selector value -> next state
    let mut successors: BTreeMap<StateId, Vec<StateId>> = BTreeMap::new();
    for s in &spec.states {
        if !s.absorbing {
            successors.insert(s.id.clone(), spec.selector(&s.id)?.next.clone());
        }
    }

    let init_state = spec.initial_state().id.clone();
    // mass over (state, flat assignment)
    let mut current: BTreeMap<StateId, Vec<f64>> = BTreeMap::new();
    {
        let block = &blocks[&GraphKey::Initial];
        current.insert(init_state.clone(), block.table[..block.out_len].to_vec());
    }

    let mut absorbed_by_len: BTreeMap<usize, f64> = BTreeMap::new();
    let mut terminal_mass: BTreeMap<StateId, f64> = BTreeMap::new();
    let mut absorbed_total = 0.0;
    // state-visit accounting: expected distribution needs per-state DP; track
    // visit counts via per-state augmentation only when requested
    let want_visits = statistic == Statistic::StateVisitCounts;
    let mut visit_masses: BTreeMap<(StateId, usize), f64> = BTreeMap::new();
    // visit DP: mass over (state, flat, visits-so-far of each tracked state)
    // done one tracked state at a time below, to keep this pass simple
    let mut idx_buf = Vec::new();

    for step in 1..=max_steps {
        let mut next: BTreeMap<StateId, Vec<f64>> = BTreeMap::new();
        for (state, masses) in &current {
            let succ = &successors[state];
            let block = &blocks[&spec.graphs_into(state)[0].clone()];
            let sel_pos = block.selector_pos;
            for (flat, &mass) in masses.iter().enumerate() {
                if mass <= 0.0 {
                    continue;
                }
                decode_flat(&block.vars, flat, &mut idx_buf);
                let target = &succ[idx_buf[sel_pos]];
                if spec.is_absorbing(target) {
                    absorbed_total += mass;
                    *absorbed_by_len.entry(step + 1).or_insert(0.0) += mass;
                    *terminal_mass.entry(target.clone()).or_insert(0.0) += mass;
                } else if step < max_steps {
                    let t = TransitionId { from: state.clone(), to: target.clone() };
                    let tb = &blocks[&GraphKey::Transition(t)];
                    let dest = next
                        .entry(target.clone())
                        .or_insert_with(|| vec![0.0; tb.out_len]);
                    let row = &tb.table[flat * tb.out_len..(flat + 1) * tb.out_len];
                    for (d, r) in dest.iter_mut().zip(row) {
                        *d += mass * r;
                    }
                }
            }
        }
        if step == max_steps {
            break;
        }
        current = next;
    }
    let censored_mass: f64 = {
        // whatever mass still sits in non-absorbing states after the final
        // step, minus what absorbed out of it, is censored
        let mut remaining = 0.0;
        for (state, masses) in &current {
            let succ = &successors[state];
            let block = &blocks[&spec.graphs_into(state)[0].clone()];
            for (flat, &mass) in masses.iter().enumerate() {
                if mass <= 0.0 {
                    continue;
                }
                decode_flat(&block.vars, flat, &mut idx_buf);
                let target = &succ[idx_buf[block.selector_pos]];
                if !spec.is_absorbing(target) {
                    remaining += mass;
                }
            }
        }
        remaining
    };

    if absorbed_total < 1.0 - 1e-6 {
        return Err(PdsemError::MassBound { absorbed: absorbed_total, max_steps });
    }

    if want_visits {
        // per-state DP with a visit-count dimension
        for tracked in spec.states.iter().filter(|s| !s.absorbing) {
            let dist = visit_count_distribution(spec, &blocks, &successors, tracked, max_steps)?;
            for (count, mass) in dist {
                *visit_masses.entry((tracked.id.clone(), count)).or_insert(0.0) += mass;
            }
        }
    }

    let table = match statistic {
        Statistic::LengthDistribution => ExactTable::Lengths(absorbed_by_len),
        Statistic::TerminalMarginal => ExactTable::Terminal(terminal_mass),
        Statistic::StateVisitCounts => ExactTable::Visits(visit_masses),
    };
    Ok(ExactQueryResult { table, absorbed_mass: absorbed_total, censored_mass })
}

/// Distribution of the number of visits to `tracked` among absorbed
/// trajectories (censored mass excluded; it is below 1e-6 by the caller's
/// mass gate).
fn visit_count_distribution(
    spec: &PdsemSpec,
    blocks: &BTreeMap<GraphKey, BlockTable>,
    successors: &BTreeMap<StateId, Vec<StateId>>,
    tracked: &StateDecl,
    max_steps: usize,
) -> Result<BTreeMap<usize, f64>, PdsemError> {
    let init_state = spec.initial_state().id.clone();
    let mut current: BTreeMap<(StateId, usize), Vec<f64>> = BTreeMap::new();
    {
        let block = &blocks[&GraphKey::Initial];
        let visits = usize::from(init_state == tracked.id);
        current.insert((init_state, visits), block.table[..block.out_len].to_vec());
    }
    let mut out: BTreeMap<usize, f64> = BTreeMap::new();
    let mut idx_buf = Vec::new();
    for step in 1..=max_steps {
        let mut next: BTreeMap<(StateId, usize), Vec<f64>> = BTreeMap::new();
        for ((state, visits), masses) in &current {
            let succ = &successors[state];
            let block = &blocks[&spec.graphs_into(state)[0].clone()];
            for (flat, &mass) in masses.iter().enumerate() {
                if mass <= 0.0 {
                    continue;
                }
                decode_flat(&block.vars, flat, &mut idx_buf);
                let target = &succ[idx_buf[block.selector_pos]];
                if spec.is_absorbing(target) {
                    *out.entry(*visits).or_insert(0.0) += mass;
                } else if step < max_steps {
                    let t = TransitionId { from: state.clone(), to: target.clone() };
                    let tb = &blocks[&GraphKey::Transition(t)];
                    let nv = visits + usize::from(target == &tracked.id);
                    let dest = next
                        .entry((target.clone(), nv))
                        .or_insert_with(|| vec![0.0; tb.out_len]);
                    let row = &tb.table[flat * tb.out_len..(flat + 1) * tb.out_len];
                    for (d, r) in dest.iter_mut().zip(row) {
                        *d += mass * r;
                    }
                }
            }
        }
        current = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Two-state model: one working state that flips a fair coin between
    /// absorbing and looping.
    fn coin_spec(p_absorb: f64) -> PdsemSpec {
        let s1: StateId = "work".into();
        let send: StateId = "done".into();
        let initial_graph = MixedGraph::builder().random("X").random("SEL").edge("X", "SEL").build().unwrap();
        let loop_graph = MixedGraph::builder()
            .fixed("prev.X")
            .random("X")
            .random("SEL")
            .edge("prev.X", "X")
            .edge("X", "SEL")
            .build()
            .unwrap();
        let tid = TransitionId { from: s1.clone(), to: s1.clone() };
        let x = VarSpec::new("X", 2);
        let sel = VarSpec::new("SEL", 2);
        let x_cpt = Cpt::new(x.clone(), vec![], vec![0.5, 0.5]).unwrap();
        let x_loop = Cpt::new(
            x.clone(),
            vec![VarSpec::new("prev.X", 2)],
            vec![0.7, 0.3, 0.3, 0.7],
        )
        .unwrap();
        let sel_cpt = Cpt::new(
            sel.clone(),
            vec![x.clone()],
            vec![p_absorb, 1.0 - p_absorb, p_absorb, 1.0 - p_absorb],
        )
        .unwrap();
        let initial = GraphCpts {
            cpts: [("X".into(), x_cpt), ("SEL".into(), sel_cpt.clone())].into_iter().collect(),
        };
        let loop_cpts = GraphCpts {
            cpts: [("X".into(), x_loop), ("SEL".into(), sel_cpt)].into_iter().collect(),
        };
        PdsemSpec {
            states: vec![
                StateDecl { id: s1.clone(), initial: true, absorbing: false },
                StateDecl { id: send.clone(), initial: false, absorbing: true },
            ],
            vars: [
                (
                    s1.clone(),
                    StateVars {
                        observed: vec![
                            VarDecl::discrete("X", 2),
                            VarDecl::discrete("SEL", 2),
                        ],
                        hidden: vec![],
                    },
                ),
                (send.clone(), StateVars::default()),
            ]
            .into_iter()
            .collect(),
            selectors: [(
                s1.clone(),
                SelectorDecl { var: "SEL".into(), next: vec![send, s1.clone()] },
            )]
            .into_iter()
            .collect(),
            initial_graph,
            transition_graphs: [(tid, loop_graph)].into_iter().collect(),
            params: ParamSet::Cpt {
                initial,
                transitions: [(
                    TransitionId { from: s1.clone(), to: s1 },
                    loop_cpts,
                )]
                .into_iter()
                .collect(),
            },
        }
    }

    #[test]
    fn coin_spec_is_valid() {
        assert!(validate_spec(&coin_spec(0.5)).is_empty());
    }

    #[test]
    fn selector_with_outgoing_edge_is_flagged() {
        let mut spec = coin_spec(0.5);
        spec.initial_graph = MixedGraph::builder()
            .random("X")
            .random("SEL")
            .edge("SEL", "X")
            .build()
            .unwrap();
        let diags = validate_spec(&spec);
        assert!(diags.iter().any(|d| d.code == DiagnosticCode::Graph
            && d.message.contains("outgoing")));
    }

    #[test]
    fn hidden_selector_is_assumption3() {
        let mut spec = coin_spec(0.5);
        let vars = spec.vars.get_mut(&"work".into()).unwrap();
        vars.observed.retain(|v| v.name != "SEL".into());
        vars.hidden.push(VarDecl::discrete("SEL", 2));
        // graphs must also re-kind SEL for the registry check to pass
        spec.initial_graph = MixedGraph::builder()
            .random("X")
            .hidden("SEL")
            .edge("X", "SEL")
            .build()
            .unwrap();
        spec.transition_graphs.insert(
            TransitionId::new("work", "work"),
            MixedGraph::builder()
                .fixed("prev.X")
                .random("X")
                .hidden("SEL")
                .edge("prev.X", "X")
                .edge("X", "SEL")
                .build()
                .unwrap(),
        );
        let diags = validate_spec(&spec);
        assert!(diags.iter().any(|d| d.code == DiagnosticCode::Assumption3));
    }

    #[test]
    fn hidden_context_is_assumption1() {
        let mut spec = coin_spec(0.5);
        // register a hidden variable and make the loop graph read it
        spec.vars
            .get_mut(&"work".into())
            .unwrap()
            .hidden
            .push(VarDecl::discrete("U", 2));
        spec.initial_graph = MixedGraph::builder()
            .random("X")
            .random("SEL")
            .hidden("U")
            .edge("U", "X")
            .edge("X", "SEL")
            .build()
            .unwrap();
        spec.transition_graphs.insert(
            TransitionId::new("work", "work"),
            MixedGraph::builder()
                .fixed("prev.X")
                .fixed("prev.U")
                .random("X")
                .random("SEL")
                .hidden("U")
                .edge("prev.X", "X")
                .edge("prev.U", "X")
                .edge("U", "X")
                .edge("X", "SEL")
                .build()
                .unwrap(),
        );
        // CPT params no longer match; strip them for this structural check
        spec.params = ParamSet::None;
        let diags = validate_spec(&spec);
        assert!(
            diags.iter().any(|d| d.code == DiagnosticCode::Assumption1
                && d.message.contains("`U`")),
            "diagnostics: {diags:?}"
        );
    }

    #[test]
    fn trajectory_loglik_deterministic_spec_is_zero() {
        // all CPTs degenerate: the unique trajectory has log-probability 0
        let mut spec = coin_spec(1.0);
        if let ParamSet::Cpt { initial, .. } = &mut spec.params {
            initial
                .cpts
                .insert("X".into(), Cpt::new(VarSpec::new("X", 2), vec![], vec![1.0, 0.0]).unwrap());
            initial.cpts.insert(
                "SEL".into(),
                Cpt::new(VarSpec::new("SEL", 2), vec![VarSpec::new("X", 2)], vec![1.0, 0.0, 1.0, 0.0])
                    .unwrap(),
            );
        }
        let t = Trajectory {
            steps: vec![TrajectoryStep {
                state: "work".into(),
                values: [("X".into(), 0), ("SEL".into(), 0)].into_iter().collect(),
            }],
            terminal: Terminal::Absorbed,
        };
        assert_eq!(trajectory_loglik(&spec, &t).unwrap(), 0.0);
    }

    #[test]
    fn trajectory_mass_sums_to_one() {
        // sum of exp(loglik) over all trajectories up to length 6 plus the
        // censored remainder equals 1
        let spec = coin_spec(0.4);
        let cap = 6usize;
        let mut total = 0.0;
        // enumerate all value sequences
        fn recurse(
            spec: &PdsemSpec,
            steps: &mut Vec<TrajectoryStep>,
            cap: usize,
            total: &mut f64,
        ) {
            let assignments: Vec<BTreeMap<VertexId, usize>> = (0..4)
                .map(|i| {
                    [("X".into(), i / 2), ("SEL".into(), i % 2)]
                        .into_iter()
                        .collect()
                })
                .collect();
            for a in assignments {
                steps.push(TrajectoryStep { state: "work".into(), values: a.clone() });
                let absorbed = a[&"SEL".into()] == 0;
                if absorbed {
                    let t = Trajectory { steps: steps.clone(), terminal: Terminal::Absorbed };
                    *total += trajectory_loglik(spec, &t).unwrap().exp();
                } else if steps.len() == cap {
                    let t = Trajectory { steps: steps.clone(), terminal: Terminal::Censored };
                    *total += trajectory_loglik(spec, &t).unwrap().exp();
                } else {
                    recurse(spec, steps, cap, total);
                }
                steps.pop();
            }
        }
        recurse(&spec, &mut Vec::new(), cap, &mut total);
        assert!((total - 1.0).abs() < 1e-9, "total mass {total}");
    }

    #[test]
    fn trajectory_with_disallowed_transition_rejected() {
        let spec = coin_spec(0.5);
        let t = Trajectory {
            steps: vec![TrajectoryStep {
                state: "done".into(),
                values: BTreeMap::new(),
            }],
            terminal: Terminal::Absorbed,
        };
        assert!(matches!(
            trajectory_loglik(&spec, &t),
            Err(PdsemError::InvalidStateSequence { .. })
        ));
    }

    #[test]
    fn intervened_spec_preserves_untouched_cpts() {
        let spec = coin_spec(0.5);
        let iv = Intervention::single("work", "X", 1);
        let out = intervened_spec(&spec, &iv).unwrap();
        // selector CPT untouched, X replaced by a point mass everywhere
        let sel_before = &spec.graph_cpts(&GraphKey::Initial).unwrap().cpts[&"SEL".into()];
        let sel_after = &out.graph_cpts(&GraphKey::Initial).unwrap().cpts[&"SEL".into()];
        assert_eq!(sel_before, sel_after);
        let x_after = &out.graph_cpts(&GraphKey::Initial).unwrap().cpts[&"X".into()];
        assert_eq!(x_after.table, vec![0.0, 1.0]);
        let loop_key = GraphKey::Transition(TransitionId::new("work", "work"));
        let x_loop = &out.graph_cpts(&loop_key).unwrap().cpts[&"X".into()];
        assert_eq!(x_loop.table, vec![0.0, 1.0]);
        assert!(x_loop.parents.is_empty());
        // graph surgery removed prev.X -> X
        assert!(out
            .graph(&loop_key)
            .directed_edges()
            .all(|(_, b)| b != &"X".into()));
        // empty intervention leaves the spec unchanged
        let same = intervened_spec(&spec, &Intervention::empty()).unwrap();
        assert_eq!(same, spec);
    }

    #[test]
    fn selector_interventions_are_refused() {
        let spec = coin_spec(0.5);
        let iv = Intervention::single("work", "SEL", 0);
        assert!(matches!(
            intervened_spec(&spec, &iv),
            Err(PdsemError::SelectorIntervention { .. })
        ));
    }

    #[test]
    fn exact_query_geometric_lengths() {
        // p_absorb = 0.5 per visit: length k+1 has mass 0.5^k
        let spec = coin_spec(0.5);
        let result =
            exact_query(&spec, &Intervention::empty(), Statistic::LengthDistribution, 40).unwrap();
        assert!((result.absorbed_mass + result.censored_mass - 1.0).abs() < 1e-12);
        let ExactTable::Lengths(lengths) = &result.table else { panic!() };
        for k in 1..=10usize {
            let expect = 0.5f64.powi(k as i32);
            assert!((lengths[&(k + 1)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_query_deterministic_two_state() {
        let spec = coin_spec(1.0);
        let result =
            exact_query(&spec, &Intervention::empty(), Statistic::LengthDistribution, 5).unwrap();
        let ExactTable::Lengths(lengths) = &result.table else { panic!() };
        assert_eq!(lengths.len(), 1);
        assert!((lengths[&2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_query_mass_bound() {
        // absorbing probability too small for the cap
        let spec = coin_spec(0.05);
        match exact_query(&spec, &Intervention::empty(), Statistic::LengthDistribution, 3) {
            Err(PdsemError::MassBound { .. }) => {}
            other => panic!("expected mass-bound error, got {other:?}"),
        }
    }

    #[test]
    fn exact_query_visit_counts() {
        let spec = coin_spec(0.5);
        let result =
            exact_query(&spec, &Intervention::empty(), Statistic::StateVisitCounts, 40).unwrap();
        let ExactTable::Visits(visits) = &result.table else { panic!() };
        for k in 1..=10usize {
            let expect = 0.5f64.powi(k as i32);
            assert!((visits[&("work".into(), k)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn observed_factorization_blocks() {
        let spec = coin_spec(0.5);
        let expr =
            observed_factorization(&spec, &["work".into(), "work".into(), "done".into()]).unwrap();
        let s = expr.to_string();
        assert!(s.contains("q{X@1}(X@1)"));
        assert!(s.contains("q{X@2}(X@2 | X@1)"));
        assert!(s.contains("q{SEL@2}(SEL@2 | X@2)"));
        // single-block sequence
        let expr1 = observed_factorization(&spec, &["work".into()]).unwrap();
        assert_eq!(expr1.to_string(), "Π[ q{SEL@1}(SEL@1 | X@1) · q{X@1}(X@1) ]");
    }

    #[test]
    fn graph_cpts_random_joint_normalizes() {
        let g = MixedGraph::builder()
            .fixed("prev.X")
            .random("X")
            .random("Y")
            .edge("prev.X", "X")
            .edge("X", "Y")
            .build()
            .unwrap();
        let cards: BTreeMap<VertexId, usize> =
            [("prev.X".into(), 3), ("X".into(), 2), ("Y".into(), 2)].into_iter().collect();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let cpts = GraphCpts::random(&g, &cards, &mut rng);
        let joint = cpts.joint(&g, &cards).unwrap();
        assert_eq!(joint.context_ids().len(), 1);
        assert_eq!(joint.outcome_ids().len(), 2);
    }
}
