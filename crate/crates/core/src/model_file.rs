//! The JSON model-spec file format and the trajectory CSV format.
//!
//! A model file declares states, the per-state variable registry (with
//! optional hidden variables), per-state selectors, the initial and
//! transition graphs as edge lists, and optionally parameters: CPT tables or
//! linear-Gaussian blocks. Transition graphs reference source-state
//! variables through the `prev.` prefix; the `context` list declares which
//! source variables a graph reads.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{MixedGraph, VertexId, VertexKind};
use crate::kernel::VarSpec;
use crate::pdsem::{
    context_target, context_vertex, Cpt, Diagnostic, DiagnosticCode, GraphCpts, LgBlock,
    LgEquation, LgSelector, ParamSet, PdsemError, PdsemSpec, SelectorDecl, StateDecl, StateId,
    StateVars, Terminal, Trajectory, TrajectoryStep, TransitionId, VarDecl,
};

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Schema(Vec<Diagnostic>),
    #[error("trajectory csv, line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Pdsem(#[from] PdsemError),
}

// ---------------------------------------------------------------------------
// serde schema

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileState {
    pub name: String,
    #[serde(default, skip_serializing_if = "is_false")]
    pub initial: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub absorbing: bool,
}

fn is_false(b: &bool) -> bool {
    !b
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileVar {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<usize>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub continuous: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileSelector {
    pub var: String,
    pub next: Vec<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone, Default)]
pub struct FileGraph {
    #[serde(default)]
    pub directed: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bidirected: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileTransition {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub context: Vec<String>,
    #[serde(default)]
    pub directed: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bidirected: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileGraphs {
    pub initial: FileGraph,
    #[serde(default)]
    pub transitions: Vec<FileTransition>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileCpt {
    pub var: String,
    #[serde(default)]
    pub parents: Vec<String>,
    pub table: Vec<f64>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileTransitionCpts {
    pub from: String,
    pub to: String,
    pub cpts: Vec<FileCpt>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileEquation {
    pub var: String,
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default)]
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub intercept: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileNoise {
    pub vars: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileLogit {
    pub features: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileLgBlock {
    pub equations: Vec<FileEquation>,
    pub noise: FileNoise,
    pub selector: FileLogit,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FileLgTransition {
    pub from: String,
    pub to: String,
    pub block: FileLgBlock,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(tag = "kind")]
pub enum FileParams {
    #[serde(rename = "cpt")]
    Cpt {
        initial: Vec<FileCpt>,
        #[serde(default)]
        transitions: Vec<FileTransitionCpts>,
    },
    #[serde(rename = "linear_gaussian")]
    LinearGaussian {
        initial: FileLgBlock,
        #[serde(default)]
        transitions: Vec<FileLgTransition>,
    },
}

/// Top-level model file.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ModelFile {
    #[serde(default)]
    pub name: String,
    pub states: Vec<FileState>,
    pub variables: BTreeMap<String, Vec<FileVar>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hidden: BTreeMap<String, Vec<FileVar>>,
    pub selectors: BTreeMap<String, FileSelector>,
    pub graphs: FileGraphs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<FileParams>,
}

// ---------------------------------------------------------------------------
// loading

fn schema(msg: impl Into<String>) -> Diagnostic {
    Diagnostic { code: DiagnosticCode::Schema, message: msg.into() }
}

fn decl_of(v: &FileVar, diags: &mut Vec<Diagnostic>) -> VarDecl {
    let mut decl = if v.continuous {
        VarDecl::continuous(v.name.as_str())
    } else {
        match v.cardinality {
            Some(c) => VarDecl::discrete(v.name.as_str(), c),
            None => {
                diags.push(schema(format!(
                    "variable `{}` declares neither cardinality nor continuous",
                    v.name
                )));
                VarDecl::discrete(v.name.as_str(), 1)
            }
        }
    };
    if let Some(labels) = &v.labels {
        decl = decl.with_labels(labels.clone());
    }
    decl
}

struct GraphVertices {
    random: Vec<VertexId>,
    hidden: Vec<VertexId>,
    context: Vec<VertexId>,
}

fn build_graph(
    verts: &GraphVertices,
    directed: &[(String, String)],
    bidirected: &[(String, String)],
    where_: &str,
    diags: &mut Vec<Diagnostic>,
) -> Option<MixedGraph> {
    let mut vertices: Vec<(VertexId, VertexKind)> = Vec::new();
    for v in &verts.random {
        vertices.push((v.clone(), VertexKind::Random));
    }
    for v in &verts.hidden {
        vertices.push((v.clone(), VertexKind::Hidden));
    }
    for v in &verts.context {
        vertices.push((v.clone(), VertexKind::Fixed));
    }
    let known: BTreeSet<&VertexId> = vertices.iter().map(|(v, _)| v).collect();
    let mut ok = true;
    for (a, b) in directed.iter().chain(bidirected) {
        for name in [a, b] {
            let id = VertexId::from(name.as_str());
            if !known.contains(&id) {
                diags.push(schema(format!("{where_}: edge references unknown vertex `{name}`")));
                ok = false;
            }
        }
    }
    if !ok {
        return None;
    }
    match MixedGraph::new(
        vertices,
        directed.iter().map(|(a, b)| (a.as_str().into(), b.as_str().into())),
        bidirected.iter().map(|(a, b)| (a.as_str().into(), b.as_str().into())),
    ) {
        Ok(g) => Some(g),
        Err(e) => {
            diags.push(Diagnostic {
                code: DiagnosticCode::Graph,
                message: format!("{where_}: {e}"),
            });
            None
        }
    }
}

fn cpts_of(
    list: &[FileCpt],
    g: &MixedGraph,
    cards: &BTreeMap<VertexId, usize>,
    where_: &str,
    diags: &mut Vec<Diagnostic>,
) -> GraphCpts {
    let mut out = GraphCpts::default();
    for c in list {
        let child_id = VertexId::from(c.var.as_str());
        let Some(&card) = cards.get(&child_id) else {
            diags.push(schema(format!("{where_}: CPT for unknown variable `{}`", c.var)));
            continue;
        };
        let mut parents = Vec::new();
        let mut ok = true;
        for p in &c.parents {
            let pid = VertexId::from(p.as_str());
            match cards.get(&pid) {
                Some(&pc) => parents.push(VarSpec::new(pid, pc)),
                None => {
                    diags.push(schema(format!(
                        "{where_}: CPT for `{}` references unknown parent `{p}`",
                        c.var
                    )));
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        match Cpt::new(VarSpec::new(child_id.clone(), card), parents, c.table.clone()) {
            Ok(cpt) => {
                out.cpts.insert(child_id, cpt);
            }
            Err(e) => diags.push(Diagnostic {
                code: DiagnosticCode::Graph,
                message: format!("{where_}: {e}"),
            }),
        }
    }
    let _ = g;
    out
}

fn lg_block_of(b: &FileLgBlock) -> LgBlock {
    LgBlock {
        noise_vars: b.noise.vars.iter().map(|v| VertexId::from(v.as_str())).collect(),
        equations: b
            .equations
            .iter()
            .map(|e| {
                (
                    VertexId::from(e.var.as_str()),
                    LgEquation {
                        parents: e.parents.iter().map(|p| VertexId::from(p.as_str())).collect(),
                        coeffs: e.coeffs.clone(),
                        intercept: e.intercept,
                    },
                )
            })
            .collect(),
        covariance: b.noise.covariance.clone(),
        selector: LgSelector {
            features: b.selector.features.iter().map(|f| VertexId::from(f.as_str())).collect(),
            weights: b.selector.weights.clone(),
            intercepts: b.selector.intercepts.clone(),
        },
    }
}

impl ModelFile {
    /// Convert the parsed file into a spec. Name-resolution failures are
    /// reported all at once as schema diagnostics.
    pub fn to_spec(&self) -> Result<PdsemSpec, ModelFileError> {
        let mut diags: Vec<Diagnostic> = Vec::new();
        let states: Vec<StateDecl> = self
            .states
            .iter()
            .map(|s| StateDecl {
                id: StateId::new(&s.name),
                initial: s.initial,
                absorbing: s.absorbing,
            })
            .collect();

        let mut vars: BTreeMap<StateId, StateVars> = BTreeMap::new();
        for s in &states {
            let observed = self
                .variables
                .get(s.id.as_str())
                .map(|vs| vs.iter().map(|v| decl_of(v, &mut diags)).collect())
                .unwrap_or_default();
            let hidden = self
                .hidden
                .get(s.id.as_str())
                .map(|vs| vs.iter().map(|v| decl_of(v, &mut diags)).collect())
                .unwrap_or_default();
            vars.insert(s.id.clone(), StateVars { observed, hidden });
        }
        for name in self.variables.keys().chain(self.hidden.keys()) {
            if !states.iter().any(|s| s.id.as_str() == name) {
                diags.push(schema(format!("variables declared for unknown state `{name}`")));
            }
        }

        let mut selectors: BTreeMap<StateId, SelectorDecl> = BTreeMap::new();
        for (state, sel) in &self.selectors {
            if !states.iter().any(|s| s.id.as_str() == state) {
                diags.push(schema(format!("selector declared for unknown state `{state}`")));
                continue;
            }
            selectors.insert(
                StateId::new(state),
                SelectorDecl {
                    var: VertexId::from(sel.var.as_str()),
                    next: sel.next.iter().map(|n| StateId::new(n)).collect(),
                },
            );
        }

        let initial_state = states.iter().find(|s| s.initial);
        let initial_vars = initial_state.and_then(|s| vars.get(&s.id)).cloned().unwrap_or_default();
        let initial_graph = build_graph(
            &GraphVertices {
                random: initial_vars.observed.iter().map(|v| v.name.clone()).collect(),
                hidden: initial_vars.hidden.iter().map(|v| v.name.clone()).collect(),
                context: vec![],
            },
            &self.graphs.initial.directed,
            &self.graphs.initial.bidirected,
            "initial graph",
            &mut diags,
        );

        let mut transition_graphs: BTreeMap<TransitionId, MixedGraph> = BTreeMap::new();
        for t in &self.graphs.transitions {
            let tid = TransitionId::new(t.from.as_str(), t.to.as_str());
            let to_vars = vars.get(&tid.to).cloned().unwrap_or_default();
            let from_known: BTreeSet<String> = vars
                .get(&tid.from)
                .map(|v| {
                    v.observed
                        .iter()
                        .chain(&v.hidden)
                        .map(|d| d.name.to_string())
                        .collect()
                })
                .unwrap_or_default();
            for c in &t.context {
                if !from_known.contains(c) {
                    diags.push(schema(format!(
                        "transition {tid}: context `{c}` is not a variable of `{}`",
                        tid.from
                    )));
                }
            }
            let g = build_graph(
                &GraphVertices {
                    random: to_vars.observed.iter().map(|v| v.name.clone()).collect(),
                    hidden: to_vars.hidden.iter().map(|v| v.name.clone()).collect(),
                    context: t
                        .context
                        .iter()
                        .map(|c| context_vertex(&VertexId::from(c.as_str())))
                        .collect(),
                },
                &t.directed,
                &t.bidirected,
                &format!("transition {tid}"),
                &mut diags,
            );
            if let Some(g) = g {
                if transition_graphs.insert(tid.clone(), g).is_some() {
                    diags.push(schema(format!("duplicate transition graph {tid}")));
                }
            }
        }

        let Some(initial_graph) = initial_graph else {
            return Err(ModelFileError::Schema(diags));
        };
        if !diags.is_empty() {
            return Err(ModelFileError::Schema(diags));
        }

        let mut spec = PdsemSpec {
            states,
            vars,
            selectors,
            initial_graph,
            transition_graphs,
            params: ParamSet::None,
        };

        match &self.parameters {
            None => {}
            Some(FileParams::Cpt { initial, transitions }) => {
                let cards = spec.graph_cards(&crate::pdsem::GraphKey::Initial)?;
                let init = cpts_of(initial, &spec.initial_graph, &cards, "initial", &mut diags);
                let mut trans = BTreeMap::new();
                for tc in transitions {
                    let tid = TransitionId::new(tc.from.as_str(), tc.to.as_str());
                    let Some(g) = spec.transition_graphs.get(&tid) else {
                        diags.push(schema(format!("CPTs for undeclared transition {tid}")));
                        continue;
                    };
                    let key = crate::pdsem::GraphKey::Transition(tid.clone());
                    let cards = spec.graph_cards(&key)?;
                    trans.insert(tid.clone(), cpts_of(&tc.cpts, g, &cards, &format!("{tid}"), &mut diags));
                }
                spec.params = ParamSet::Cpt { initial: init, transitions: trans };
            }
            Some(FileParams::LinearGaussian { initial, transitions }) => {
                let mut trans = BTreeMap::new();
                for t in transitions {
                    let tid = TransitionId::new(t.from.as_str(), t.to.as_str());
                    if !spec.transition_graphs.contains_key(&tid) {
                        diags.push(schema(format!("equations for undeclared transition {tid}")));
                        continue;
                    }
                    trans.insert(tid, lg_block_of(&t.block));
                }
                spec.params = ParamSet::LinearGaussian {
                    initial: lg_block_of(initial),
                    transitions: trans,
                };
            }
        }
        if !diags.is_empty() {
            return Err(ModelFileError::Schema(diags));
        }
        Ok(spec)
    }

    /// Rebuild the file form of a spec, for saving fitted parameters.
    pub fn from_spec(name: &str, spec: &PdsemSpec) -> ModelFile {
        let states = spec
            .states
            .iter()
            .map(|s| FileState {
                name: s.id.to_string(),
                initial: s.initial,
                absorbing: s.absorbing,
            })
            .collect();
        let mut variables = BTreeMap::new();
        let mut hidden = BTreeMap::new();
        for (state, sv) in &spec.vars {
            let obs: Vec<FileVar> = sv
                .observed
                .iter()
                .map(|v| FileVar {
                    name: v.name.to_string(),
                    cardinality: if v.continuous { None } else { Some(v.cardinality) },
                    continuous: v.continuous,
                    labels: v.labels.clone(),
                })
                .collect();
            if !obs.is_empty() {
                variables.insert(state.to_string(), obs);
            }
            let hid: Vec<FileVar> = sv
                .hidden
                .iter()
                .map(|v| FileVar {
                    name: v.name.to_string(),
                    cardinality: Some(v.cardinality),
                    continuous: false,
                    labels: None,
                })
                .collect();
            if !hid.is_empty() {
                hidden.insert(state.to_string(), hid);
            }
        }
        let selectors = spec
            .selectors
            .iter()
            .map(|(s, sel)| {
                (
                    s.to_string(),
                    FileSelector {
                        var: sel.var.to_string(),
                        next: sel.next.iter().map(|n| n.to_string()).collect(),
                    },
                )
            })
            .collect();
        let graph_of = |g: &MixedGraph| FileGraph {
            directed: g
                .directed_edges()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            bidirected: g
                .bidirected_edges()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        };
        let transitions = spec
            .transition_graphs
            .iter()
            .map(|(tid, g)| {
                let fg = graph_of(g);
                FileTransition {
                    from: tid.from.to_string(),
                    to: tid.to.to_string(),
                    context: g
                        .fixed_vertices()
                        .iter()
                        .filter_map(|w| context_target(w).map(|v| v.to_string()))
                        .collect(),
                    directed: fg.directed,
                    bidirected: fg.bidirected,
                }
            })
            .collect();
        let parameters = match &spec.params {
            ParamSet::None => None,
            ParamSet::Cpt { initial, transitions } => Some(FileParams::Cpt {
                initial: file_cpts(initial),
                transitions: transitions
                    .iter()
                    .map(|(tid, c)| FileTransitionCpts {
                        from: tid.from.to_string(),
                        to: tid.to.to_string(),
                        cpts: file_cpts(c),
                    })
                    .collect(),
            }),
            ParamSet::LinearGaussian { initial, transitions } => {
                Some(FileParams::LinearGaussian {
                    initial: file_lg(initial),
                    transitions: transitions
                        .iter()
                        .map(|(tid, b)| FileLgTransition {
                            from: tid.from.to_string(),
                            to: tid.to.to_string(),
                            block: file_lg(b),
                        })
                        .collect(),
                })
            }
        };
        ModelFile {
            name: name.to_string(),
            states,
            variables,
            hidden,
            selectors,
            graphs: FileGraphs { initial: graph_of(&spec.initial_graph), transitions },
            parameters,
        }
    }
}

fn file_cpts(cpts: &GraphCpts) -> Vec<FileCpt> {
    cpts.cpts
        .values()
        .map(|c| FileCpt {
            var: c.child.id.to_string(),
            parents: c.parents.iter().map(|p| p.id.to_string()).collect(),
            table: c.table.clone(),
        })
        .collect()
}

fn file_lg(b: &LgBlock) -> FileLgBlock {
    FileLgBlock {
        equations: b
            .equations
            .iter()
            .map(|(v, e)| FileEquation {
                var: v.to_string(),
                parents: e.parents.iter().map(|p| p.to_string()).collect(),
                coeffs: e.coeffs.clone(),
                intercept: e.intercept,
            })
            .collect(),
        noise: FileNoise {
            vars: b.noise_vars.iter().map(|v| v.to_string()).collect(),
            covariance: b.covariance.clone(),
        },
        selector: FileLogit {
            features: b.selector.features.iter().map(|f| f.to_string()).collect(),
            weights: b.selector.weights.clone(),
            intercepts: b.selector.intercepts.clone(),
        },
    }
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<ModelFile, ModelFileError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<PdsemSpec, ModelFileError> {
    load_model_file(path)?.to_spec()
}

pub fn save_spec(
    path: impl AsRef<Path>,
    name: &str,
    spec: &PdsemSpec,
) -> Result<(), ModelFileError> {
    let file = ModelFile::from_spec(name, spec);
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// trajectory CSV

/// Parse the trajectory CSV produced by the simulator (comment and header
/// lines included). Rows must be grouped by trajectory with ascending step
/// indices.
pub fn parse_trajectories_csv(
    reader: impl BufRead,
    spec: &PdsemSpec,
) -> Result<Vec<Trajectory>, ModelFileError> {
    let mut out: Vec<Trajectory> = Vec::new();
    let mut current: Option<(usize, Trajectory)> = None;
    let mut header_seen = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let bad = |message: String| ModelFileError::Csv { line: lineno, message };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            if line.starts_with("traj,") {
                continue; // header row
            }
        }
        let fields: Vec<&str> = line.splitn(5, ',').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        }
        let traj: usize = fields[0].parse().map_err(|_| bad("bad trajectory id".into()))?;
        let step: usize = fields[1].parse().map_err(|_| bad("bad step index".into()))?;
        let state = StateId::new(fields[2]);
        let terminal = match fields[3] {
            "absorbed" => Terminal::Absorbed,
            "censored" => Terminal::Censored,
            other => return Err(bad(format!("unknown terminal flag `{other}`"))),
        };
        let mut values = BTreeMap::new();
        if !fields[4].is_empty() {
            for pair in fields[4].split(';') {
                let Some((var, value)) = pair.split_once('=') else {
                    return Err(bad(format!("bad assignment `{pair}`")));
                };
                let value: usize =
                    value.parse().map_err(|_| bad(format!("bad value in `{pair}`")))?;
                values.insert(VertexId::from(var), value);
            }
        }
        match &mut current {
            Some((id, t)) if *id == traj => {
                if step != t.steps.len() {
                    return Err(bad(format!("expected step {}, found {step}", t.steps.len())));
                }
                t.terminal = terminal;
                t.steps.push(TrajectoryStep { state, values });
            }
            _ => {
                if let Some((_, t)) = current.take() {
                    out.push(t);
                }
                if step != 0 {
                    return Err(bad("trajectory does not start at step 0".into()));
                }
                current = Some((
                    traj,
                    Trajectory { steps: vec![TrajectoryStep { state, values }], terminal },
                ));
            }
        }
    }
    if let Some((_, t)) = current.take() {
        out.push(t);
    }
    let _ = spec;
    Ok(out)
}

/// Write trajectories in the same CSV layout the simulator produces.
pub fn write_trajectories(
    w: &mut impl Write,
    batch: &[Trajectory],
    seed: u64,
) -> Result<(), ModelFileError> {
    crate::simulate::write_trajectories_csv(w, batch, seed)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdsem::validate_spec;

    fn toy_json() -> String {
        r#"{
            "name": "toy",
            "states": [
                {"name": "work", "initial": true},
                {"name": "done", "absorbing": true}
            ],
            "variables": {
                "work": [
                    {"name": "X", "cardinality": 2},
                    {"name": "SEL", "cardinality": 2}
                ]
            },
            "selectors": {
                "work": {"var": "SEL", "next": ["done", "work"]}
            },
            "graphs": {
                "initial": {"directed": [["X", "SEL"]]},
                "transitions": [
                    {"from": "work", "to": "work",
                     "context": ["X"],
                     "directed": [["prev.X", "X"], ["X", "SEL"]]}
                ]
            },
            "parameters": {
                "kind": "cpt",
                "initial": [
                    {"var": "X", "table": [0.4, 0.6]},
                    {"var": "SEL", "parents": ["X"], "table": [0.5, 0.5, 0.7, 0.3]}
                ],
                "transitions": [
                    {"from": "work", "to": "work", "cpts": [
                        {"var": "X", "parents": ["prev.X"], "table": [0.8, 0.2, 0.2, 0.8]},
                        {"var": "SEL", "parents": ["X"], "table": [0.5, 0.5, 0.7, 0.3]}
                    ]}
                ]
            }
        }"#
        .to_string()
    }

    #[test]
    fn round_trip_through_spec() {
        let file: ModelFile = serde_json::from_str(&toy_json()).unwrap();
        let spec = file.to_spec().unwrap();
        assert!(validate_spec(&spec).is_empty());
        let back = ModelFile::from_spec("toy", &spec);
        let spec2 = back.to_spec().unwrap();
        assert_eq!(spec, spec2);
    }

    #[test]
    fn unknown_vertex_is_schema_error() {
        let text = toy_json().replace("[\"X\", \"SEL\"]", "[\"Z\", \"SEL\"]");
        let file: ModelFile = serde_json::from_str(&text).unwrap();
        match file.to_spec() {
            Err(ModelFileError::Schema(diags)) => {
                assert!(diags.iter().any(|d| d.message.contains("`Z`")));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let file: ModelFile = serde_json::from_str(&toy_json()).unwrap();
        let spec = file.to_spec().unwrap();
        let cfg = crate::simulate::SimConfig::new(3, 25, 15);
        let batch =
            crate::simulate::sample_batch(&spec, &crate::pdsem::Intervention::empty(), &cfg)
                .unwrap();
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &batch, 3).unwrap();
        let parsed = parse_trajectories_csv(std::io::BufReader::new(&buf[..]), &spec).unwrap();
        assert_eq!(batch, parsed);
    }
}
