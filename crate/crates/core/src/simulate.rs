//! Monte Carlo trajectory generation and summaries.
//!
//! Sampling is ancestral within each state graph; the next state is drawn
//! from the realized selector. Every trajectory is generated from its own
//! RNG substream, so batches are bit-identical for a given seed regardless
//! of execution order or worker count.

use std::collections::BTreeMap;
use std::io::Write;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::graph::{MixedGraph, VertexId, VertexKind};
use crate::pdsem::{
    context_vertex, validate_spec, GraphKey, Intervention, LgBlock, ParamSet, PdsemError,
    PdsemSpec, StateId, Terminal, Trajectory, TrajectoryStep, TransitionId,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("spec has linear-Gaussian parameters; use the continuous sampler")]
    WrongParameterKind,
    #[error("intervention value for `{0}` must be numeric in a linear-Gaussian model")]
    NonNumericIntervention(String),
    #[error(transparent)]
    Pdsem(#[from] PdsemError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Batch configuration. `seed` and the trajectory index fully determine each
/// trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub n_trajectories: usize,
    pub max_steps: usize,
}

impl SimConfig {
    pub fn new(seed: u64, n_trajectories: usize, max_steps: usize) -> Self {
        assert!(n_trajectories >= 1 && max_steps >= 1);
        SimConfig { seed, n_trajectories, max_steps }
    }
}

/// Independent substream for one trajectory index.
fn substream(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

fn draw_categorical<R: Rng>(rng: &mut R, row: &[f64]) -> usize {
    let total: f64 = row.iter().sum();
    let mut u = rng.gen_range(0.0..1.0) * total;
    for (i, p) in row.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    row.len() - 1
}

fn topo_order(g: &MixedGraph) -> Vec<VertexId> {
    let sampled: Vec<VertexId> = g
        .vertices()
        .filter(|(_, k)| *k != VertexKind::Fixed)
        .map(|(v, _)| v.clone())
        .collect();
    let mut placed: Vec<VertexId> = Vec::with_capacity(sampled.len());
    while placed.len() < sampled.len() {
        let next = sampled
            .iter()
            .find(|v| {
                !placed.contains(v)
                    && g.parents(v)
                        .into_iter()
                        .filter(|p| sampled.contains(p))
                        .all(|p| placed.contains(&p))
            })
            .expect("acyclic")
            .clone();
        placed.push(next);
    }
    placed
}

/// Sample one trajectory of a discrete spec. Interventions go through the
/// structural-replacement semantics — sampling under an intervention IS
/// observational sampling of the intervened spec, so both paths produce the
/// same trajectories for the same `(cfg.seed, index)`.
pub fn sample_trajectory(
    spec: &PdsemSpec,
    iv: &Intervention,
    cfg: &SimConfig,
    index: u64,
) -> Result<Trajectory, SimError> {
    if iv.is_empty() {
        let mut rng = substream(cfg.seed, index);
        sample_observational(spec, cfg.max_steps, &mut rng)
    } else {
        let cut = crate::pdsem::intervened_spec(spec, iv)?;
        let mut rng = substream(cfg.seed, index);
        sample_observational(&cut, cfg.max_steps, &mut rng)
    }
}

fn sample_observational<R: Rng>(
    spec: &PdsemSpec,
    max_steps: usize,
    rng: &mut R,
) -> Result<Trajectory, SimError> {
    if !spec.params.is_cpt() {
        return Err(SimError::WrongParameterKind);
    }
    let mut steps: Vec<TrajectoryStep> = Vec::new();
    let mut state = spec.initial_state().id.clone();
    let mut key = GraphKey::Initial;
    loop {
        let g = spec.graph(&key);
        let cpts = spec.graph_cpts(&key)?;
        // context values from the previous step
        let mut assignment: BTreeMap<VertexId, usize> = BTreeMap::new();
        if let Some(prev) = steps.last() {
            for (v, x) in &prev.values {
                assignment.insert(context_vertex(v), *x);
            }
        }
        for v in topo_order(g) {
            let cpt = cpts.cpts.get(&v).ok_or(PdsemError::MissingCpt {
                vertex: v.to_string(),
            })?;
            let value = draw_categorical(rng, cpt.row(&assignment));
            assignment.insert(v.clone(), value);
        }
        // keep only observed values in the trajectory
        let observed: BTreeMap<VertexId, usize> = spec
            .state_vars(&state)?
            .observed
            .iter()
            .map(|v| (v.name.clone(), assignment[&v.name]))
            .collect();
        let selector = spec.selector(&state)?;
        let next = spec.next_state(&state, observed[&selector.var])?.clone();
        steps.push(TrajectoryStep { state: state.clone(), values: observed });
        if spec.is_absorbing(&next) {
            return Ok(Trajectory { steps, terminal: Terminal::Absorbed });
        }
        if steps.len() == max_steps {
            return Ok(Trajectory { steps, terminal: Terminal::Censored });
        }
        key = GraphKey::Transition(TransitionId { from: state, to: next.clone() });
        state = next;
    }
}

/// Sample a full batch; trajectory `i` always comes from substream `i`, so
/// the batch is reproducible regardless of execution order.
pub fn sample_batch(
    spec: &PdsemSpec,
    iv: &Intervention,
    cfg: &SimConfig,
) -> Result<Vec<Trajectory>, SimError> {
    let diags = validate_spec(spec);
    if !diags.is_empty() {
        return Err(PdsemError::InvalidSpec(diags).into());
    }
    let cut;
    let target: &PdsemSpec = if iv.is_empty() {
        spec
    } else {
        cut = crate::pdsem::intervened_spec(spec, iv)?;
        &cut
    };
    (0..cfg.n_trajectories as u64)
        .map(|i| {
            let mut rng = substream(cfg.seed, i);
            sample_observational(target, cfg.max_steps, &mut rng)
        })
        .collect()
}

/// Continuous trajectory of a linear-Gaussian model.
#[derive(Clone, Debug)]
pub struct LgStep {
    pub state: StateId,
    pub values: BTreeMap<VertexId, f64>,
}

#[derive(Clone, Debug)]
pub struct LgTrajectory {
    pub steps: Vec<LgStep>,
    pub terminal: Terminal,
}

impl LgTrajectory {
    pub fn length(&self) -> usize {
        self.steps.len() + usize::from(self.terminal == Terminal::Absorbed)
    }
}

/// Intervention on continuous variables, keyed by target state.
#[derive(Clone, Debug, Default)]
pub struct LgIntervention {
    pub by_state: BTreeMap<StateId, BTreeMap<VertexId, f64>>,
}

impl LgIntervention {
    pub fn everywhere(spec: &PdsemSpec, var: impl Into<VertexId>, value: f64) -> Self {
        let var = var.into();
        let mut by_state = BTreeMap::new();
        for s in &spec.states {
            if s.absorbing {
                continue;
            }
            if let Ok(vars) = spec.state_vars(&s.id) {
                if vars.observed.iter().any(|v| v.name == var) {
                    by_state.insert(s.id.clone(), [(var.clone(), value)].into_iter().collect());
                }
            }
        }
        LgIntervention { by_state }
    }
}

fn lg_block<'a>(spec: &'a PdsemSpec, key: &GraphKey) -> Result<&'a LgBlock, SimError> {
    match (&spec.params, key) {
        (ParamSet::LinearGaussian { initial, .. }, GraphKey::Initial) => Ok(initial),
        (ParamSet::LinearGaussian { transitions, .. }, GraphKey::Transition(t)) => {
            Ok(&transitions[t])
        }
        _ => Err(SimError::WrongParameterKind),
    }
}

/// Correlated noise draw via the Cholesky factor of the block covariance.
fn draw_noise<R: Rng>(block: &LgBlock, rng: &mut R) -> BTreeMap<VertexId, f64> {
    let n = block.noise_vars.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| block.covariance[i][j]);
    let chol = nalgebra::Cholesky::new(m).expect("validated positive definite");
    let z = nalgebra::DVector::from_fn(n, |_, _| {
        rand_distr::StandardNormal.sample(rng)
    });
    let eps = chol.l() * z;
    block
        .noise_vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), eps[i]))
        .collect()
}

/// Sample one linear-Gaussian trajectory: linear structural equations with
/// correlated errors, softmax selector over allowed successors, treated
/// variables forced to their values.
pub fn sample_lg_trajectory(
    spec: &PdsemSpec,
    iv: &LgIntervention,
    cfg: &SimConfig,
    index: u64,
) -> Result<LgTrajectory, SimError> {
    let mut rng = substream(cfg.seed, index);
    let empty = BTreeMap::new();
    let mut steps: Vec<LgStep> = Vec::new();
    let mut state = spec.initial_state().id.clone();
    let mut key = GraphKey::Initial;
    loop {
        let g = spec.graph(&key);
        let block = lg_block(spec, &key)?;
        let treated = iv.by_state.get(&state).unwrap_or(&empty);
        let mut assignment: BTreeMap<VertexId, f64> = BTreeMap::new();
        if let Some(prev) = steps.last() {
            for (v, x) in &prev.values {
                assignment.insert(context_vertex(v), *x);
            }
        }
        let noise = draw_noise(block, &mut rng);
        let selector = spec.selector(&state)?;
        for v in topo_order(g) {
            if v == selector.var {
                continue;
            }
            let value = match treated.get(&v) {
                Some(&forced) => forced,
                None => {
                    let eq = &block.equations[&v];
                    let mut x = eq.intercept + noise.get(&v).copied().unwrap_or(0.0);
                    for (p, c) in eq.parents.iter().zip(&eq.coeffs) {
                        x += c * assignment[p];
                    }
                    x
                }
            };
            assignment.insert(v.clone(), value);
        }
        // softmax over allowed successors
        let logits: Vec<f64> = block
            .selector
            .weights
            .iter()
            .zip(&block.selector.intercepts)
            .map(|(w, b)| {
                b + w
                    .iter()
                    .zip(&block.selector.features)
                    .map(|(c, f)| c * assignment[f])
                    .sum::<f64>()
            })
            .collect();
        let maxl = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let probs: Vec<f64> = logits.iter().map(|l| (l - maxl).exp()).collect();
        let choice = draw_categorical(&mut rng, &probs);
        assignment.insert(selector.var.clone(), choice as f64);
        let next = spec.next_state(&state, choice)?.clone();

        let observed: BTreeMap<VertexId, f64> = spec
            .state_vars(&state)?
            .observed
            .iter()
            .map(|v| (v.name.clone(), assignment[&v.name]))
            .collect();
        steps.push(LgStep { state: state.clone(), values: observed });
        if spec.is_absorbing(&next) {
            return Ok(LgTrajectory { steps, terminal: Terminal::Absorbed });
        }
        if steps.len() == cfg.max_steps {
            return Ok(LgTrajectory { steps, terminal: Terminal::Censored });
        }
        key = GraphKey::Transition(TransitionId { from: state, to: next.clone() });
        state = next;
    }
}

pub fn sample_lg_batch(
    spec: &PdsemSpec,
    iv: &LgIntervention,
    cfg: &SimConfig,
) -> Result<Vec<LgTrajectory>, SimError> {
    let diags = validate_spec(spec);
    if !diags.is_empty() {
        return Err(PdsemError::InvalidSpec(diags).into());
    }
    (0..cfg.n_trajectories as u64)
        .map(|i| sample_lg_trajectory(spec, iv, cfg, i))
        .collect()
}

/// Anything with a trajectory length and terminal flag can be summarized.
pub trait TrajectoryLike {
    fn length(&self) -> usize;
    fn terminal(&self) -> Terminal;
    fn state_sequence(&self) -> Vec<StateId>;
}

impl TrajectoryLike for Trajectory {
    fn length(&self) -> usize {
        Trajectory::length(self)
    }
    fn terminal(&self) -> Terminal {
        self.terminal
    }
    fn state_sequence(&self) -> Vec<StateId> {
        self.steps.iter().map(|s| s.state.clone()).collect()
    }
}

impl TrajectoryLike for LgTrajectory {
    fn length(&self) -> usize {
        LgTrajectory::length(self)
    }
    fn terminal(&self) -> Terminal {
        self.terminal
    }
    fn state_sequence(&self) -> Vec<StateId> {
        self.steps.iter().map(|s| s.state.clone()).collect()
    }
}

/// Length statistics of a batch: mean, population standard deviation,
/// nearest-rank quantiles, a unit-width histogram and the censored count.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub q05: usize,
    pub q50: usize,
    pub q95: usize,
    pub histogram: BTreeMap<usize, usize>,
    pub censored: usize,
}

/// Nearest-rank quantile: the value at position ceil(p * n) of the sorted
/// sample (1-based).
fn nearest_rank(sorted: &[usize], p: f64) -> usize {
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn summarize<T: TrajectoryLike>(batch: &[T], bin_width: usize) -> Result<TrajectorySummary, SimError> {
    if batch.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    let bin_width = bin_width.max(1);
    let mut lengths: Vec<usize> = batch.iter().map(|t| t.length()).collect();
    lengths.sort_unstable();
    let n = lengths.len();
    let mean = lengths.iter().sum::<usize>() as f64 / n as f64;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in &lengths {
        *histogram.entry(l / bin_width * bin_width).or_insert(0) += 1;
    }
    Ok(TrajectorySummary {
        count: n,
        mean,
        std: var.sqrt(),
        q05: nearest_rank(&lengths, 0.05),
        q50: nearest_rank(&lengths, 0.50),
        q95: nearest_rank(&lengths, 0.95),
        histogram,
        censored: batch.iter().filter(|t| t.terminal() == Terminal::Censored).count(),
    })
}

fn csv_header(w: &mut impl Write, seed_note: &str) -> std::io::Result<()> {
    writeln!(w, "# tool=pdsem version={} {seed_note}", env!("CARGO_PKG_VERSION"))
}

/// One row per step: trajectory id, step index, state, terminal flag and the
/// `;`-joined variable assignment.
pub fn write_trajectories_csv(
    w: &mut impl Write,
    batch: &[Trajectory],
    seed: u64,
) -> std::io::Result<()> {
    csv_header(w, &format!("seed={seed}"))?;
    writeln!(w, "traj,step,state,terminal,values")?;
    for (i, t) in batch.iter().enumerate() {
        let terminal = match t.terminal {
            Terminal::Absorbed => "absorbed",
            Terminal::Censored => "censored",
        };
        for (j, step) in t.steps.iter().enumerate() {
            let values: Vec<String> =
                step.values.iter().map(|(v, x)| format!("{v}={x}")).collect();
            writeln!(w, "{i},{j},{},{terminal},{}", step.state, values.join(";"))?;
        }
    }
    Ok(())
}

/// Same layout for continuous trajectories; values formatted with full
/// precision.
pub fn write_lg_trajectories_csv(
    w: &mut impl Write,
    batch: &[LgTrajectory],
    seed: u64,
) -> std::io::Result<()> {
    csv_header(w, &format!("seed={seed}"))?;
    writeln!(w, "traj,step,state,terminal,values")?;
    for (i, t) in batch.iter().enumerate() {
        let terminal = match t.terminal {
            Terminal::Absorbed => "absorbed",
            Terminal::Censored => "censored",
        };
        for (j, step) in t.steps.iter().enumerate() {
            let values: Vec<String> =
                step.values.iter().map(|(v, x)| format!("{v}={x:.17e}")).collect();
            writeln!(w, "{i},{j},{},{terminal},{}", step.state, values.join(";"))?;
        }
    }
    Ok(())
}

pub fn write_summary_csv(
    w: &mut impl Write,
    summary: &TrajectorySummary,
    seed: u64,
) -> std::io::Result<()> {
    csv_header(w, &format!("seed={seed}"))?;
    writeln!(w, "count,mean,std,q05,q50,q95,censored")?;
    writeln!(
        w,
        "{},{:.6},{:.6},{},{},{},{}",
        summary.count, summary.mean, summary.std, summary.q05, summary.q50, summary.q95,
        summary.censored
    )
}

pub fn write_histogram_csv(
    w: &mut impl Write,
    summary: &TrajectorySummary,
    seed: u64,
) -> std::io::Result<()> {
    csv_header(w, &format!("seed={seed}"))?;
    writeln!(w, "length,count")?;
    for (len, count) in &summary.histogram {
        writeln!(w, "{len},{count}")?;
    }
    Ok(())
}

/// Text histogram for terminal output, one `#` bar per bin.
pub fn text_histogram(summary: &TrajectorySummary) -> String {
    let max = summary.histogram.values().copied().max().unwrap_or(1).max(1);
    let mut out = String::new();
    for (len, count) in &summary.histogram {
        let bar = "#".repeat((count * 60).div_ceil(max));
        out.push_str(&format!("{len:>6} {count:>8} {bar}\n"));
    }
    out
}

/// Exact-query output: one row per statistic value.
pub fn write_exact_query_csv(
    w: &mut impl Write,
    result: &crate::pdsem::ExactQueryResult,
) -> std::io::Result<()> {
    csv_header(w, "seed=-")?;
    writeln!(w, "value,probability")?;
    for (label, p) in result.rows() {
        writeln!(w, "{label},{p:.12}")?;
    }
    writeln!(w, "censored,{:.12}", result.censored_mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdsem::{
        Cpt, GraphCpts, LgEquation, LgSelector, SelectorDecl, StateDecl, StateVars, VarDecl,
    };
    use crate::kernel::VarSpec;

    fn coin_spec(p_absorb: f64) -> PdsemSpec {
        let s1: StateId = "work".into();
        let send: StateId = "done".into();
        let initial_graph = MixedGraph::builder()
            .random("X")
            .random("SEL")
            .edge("X", "SEL")
            .build()
            .unwrap();
        let loop_graph = MixedGraph::builder()
            .fixed("prev.X")
            .random("X")
            .random("SEL")
            .edge("prev.X", "X")
            .edge("X", "SEL")
            .build()
            .unwrap();
        let tid = TransitionId::new("work", "work");
        let x = VarSpec::new("X", 2);
        let sel = VarSpec::new("SEL", 2);
        let x_cpt = Cpt::new(x.clone(), vec![], vec![0.5, 0.5]).unwrap();
        let x_loop =
            Cpt::new(x.clone(), vec![VarSpec::new("prev.X", 2)], vec![0.7, 0.3, 0.3, 0.7]).unwrap();
        let sel_cpt = Cpt::new(
            sel,
            vec![x],
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
            transition_graphs: [(tid.clone(), loop_graph)].into_iter().collect(),
            params: ParamSet::Cpt {
                initial,
                transitions: [(tid, loop_cpts)].into_iter().collect(),
            },
        }
    }

    #[test]
    fn same_seed_same_batch() {
        let spec = coin_spec(0.5);
        let cfg = SimConfig::new(7, 50, 30);
        let a = sample_batch(&spec, &Intervention::empty(), &cfg).unwrap();
        let b = sample_batch(&spec, &Intervention::empty(), &cfg).unwrap();
        assert_eq!(a, b);
        // trajectory i depends only on (seed, i)
        let t3 = sample_trajectory(&spec, &Intervention::empty(), &cfg, 3).unwrap();
        assert_eq!(a[3], t3);
    }

    #[test]
    fn deterministic_spec_identical_trajectories() {
        let mut spec = coin_spec(1.0);
        if let ParamSet::Cpt { initial, transitions } = &mut spec.params {
            initial.cpts.insert(
                "X".into(),
                Cpt::new(VarSpec::new("X", 2), vec![], vec![1.0, 0.0]).unwrap(),
            );
            for t in transitions.values_mut() {
                t.cpts.insert(
                    "X".into(),
                    Cpt::new(
                        VarSpec::new("X", 2),
                        vec![VarSpec::new("prev.X", 2)],
                        vec![1.0, 0.0, 1.0, 0.0],
                    )
                    .unwrap(),
                );
            }
            let sel = Cpt::new(
                VarSpec::new("SEL", 2),
                vec![VarSpec::new("X", 2)],
                vec![1.0, 0.0, 1.0, 0.0],
            )
            .unwrap();
            initial.cpts.insert("SEL".into(), sel.clone());
            for t in transitions.values_mut() {
                t.cpts.insert("SEL".into(), sel.clone());
            }
        }
        let cfg = SimConfig::new(1, 10, 5);
        let batch = sample_batch(&spec, &Intervention::empty(), &cfg).unwrap();
        for t in &batch {
            assert_eq!(t, &batch[0]);
            assert_eq!(t.length(), 2);
        }
    }

    #[test]
    fn interventional_sampling_equals_intervened_observational() {
        let spec = coin_spec(0.5);
        let iv = Intervention::single("work", "X", 1);
        let cut = crate::pdsem::intervened_spec(&spec, &iv).unwrap();
        let cfg = SimConfig::new(11, 200, 25);
        let a = sample_batch(&spec, &iv, &cfg).unwrap();
        let b = sample_batch(&cut, &Intervention::empty(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn summary_quantiles_nearest_rank() {
        // lengths 1..=100 (absorbed adds one visit)
        let batch: Vec<Trajectory> = (1..=100usize)
            .map(|len| Trajectory {
                steps: (0..len)
                    .map(|_| TrajectoryStep { state: "work".into(), values: BTreeMap::new() })
                    .collect(),
                terminal: Terminal::Censored,
            })
            .collect();
        let s = summarize(&batch, 1).unwrap();
        assert_eq!(s.q05, 5);
        assert_eq!(s.q50, 50);
        assert_eq!(s.q95, 95);
        assert_eq!(s.count, 100);
        assert_eq!(s.censored, 100);
    }

    #[test]
    fn summary_single_trajectory() {
        let batch = vec![Trajectory {
            steps: (0..2)
                .map(|_| TrajectoryStep { state: "work".into(), values: BTreeMap::new() })
                .collect(),
            terminal: Terminal::Absorbed,
        }];
        let s = summarize(&batch, 1).unwrap();
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.std, 0.0);
        assert_eq!((s.q05, s.q50, s.q95), (3, 3, 3));
        assert!(summarize::<Trajectory>(&[], 1).is_err());
    }

    fn lg_two_state() -> PdsemSpec {
        // one working state with A -> C, A <-> C correlated errors
        let s1: StateId = "work".into();
        let send: StateId = "done".into();
        let g_init = MixedGraph::builder()
            .random("A")
            .random("C")
            .random("SEL")
            .edge("A", "C")
            .edge("C", "SEL")
            .bidirected("A", "C")
            .build()
            .unwrap();
        let g_loop = MixedGraph::builder()
            .fixed("prev.A")
            .random("A")
            .random("C")
            .random("SEL")
            .edge("prev.A", "A")
            .edge("A", "C")
            .edge("C", "SEL")
            .bidirected("A", "C")
            .build()
            .unwrap();
        let block = |with_prev: bool| LgBlock {
            noise_vars: vec!["A".into(), "C".into()],
            equations: [
                (
                    "A".into(),
                    LgEquation {
                        parents: if with_prev { vec!["prev.A".into()] } else { vec![] },
                        coeffs: if with_prev { vec![0.5] } else { vec![] },
                        intercept: 0.0,
                    },
                ),
                (
                    "C".into(),
                    LgEquation { parents: vec!["A".into()], coeffs: vec![1.0], intercept: 0.0 },
                ),
            ]
            .into_iter()
            .collect(),
            covariance: vec![vec![1.0, 0.4], vec![0.4, 1.0]],
            selector: LgSelector {
                features: vec!["C".into()],
                weights: vec![vec![0.8], vec![-0.8]],
                intercepts: vec![0.0, 0.0],
            },
        };
        let tid = TransitionId::new("work", "work");
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
                            VarDecl::continuous("A"),
                            VarDecl::continuous("C"),
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
            initial_graph: g_init,
            transition_graphs: [(tid.clone(), g_loop)].into_iter().collect(),
            params: ParamSet::LinearGaussian {
                initial: block(false),
                transitions: [(tid, block(true))].into_iter().collect(),
            },
        }
    }

    #[test]
    fn lg_sampler_reproducible_and_noise_covariance_matches() {
        let spec = lg_two_state();
        let cfg = SimConfig::new(3, 2000, 10);
        let a = sample_lg_batch(&spec, &LgIntervention::default(), &cfg).unwrap();
        let b = sample_lg_batch(&spec, &LgIntervention::default(), &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.steps.len(), y.steps.len());
            for (sx, sy) in x.steps.iter().zip(&y.steps) {
                assert_eq!(sx.values, sy.values);
            }
        }
        // reconstruct the first-step errors: eps_A = A, eps_C = C - A
        let n = a.len() as f64;
        let (mut saa, mut scc, mut sac, mut ma, mut mc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for t in &a {
            let step = &t.steps[0];
            let ea = step.values[&"A".into()];
            let ec = step.values[&"C".into()] - step.values[&"A".into()];
            ma += ea;
            mc += ec;
            saa += ea * ea;
            scc += ec * ec;
            sac += ea * ec;
        }
        ma /= n;
        mc /= n;
        let cov_aa = saa / n - ma * ma;
        let cov_cc = scc / n - mc * mc;
        let cov_ac = sac / n - ma * mc;
        // 3 standard errors at n = 2000 is roughly 0.07 for unit variances
        assert!((cov_aa - 1.0).abs() < 0.1, "var eps_A = {cov_aa}");
        assert!((cov_cc - 1.0).abs() < 0.1, "var eps_C = {cov_cc}");
        assert!((cov_ac - 0.4).abs() < 0.1, "cov = {cov_ac}");
    }

    #[test]
    fn lg_intervention_forces_values() {
        let spec = lg_two_state();
        let iv = LgIntervention::everywhere(&spec, "A", 2.5);
        let cfg = SimConfig::new(5, 20, 8);
        let batch = sample_lg_batch(&spec, &iv, &cfg).unwrap();
        for t in &batch {
            for step in &t.steps {
                assert_eq!(step.values[&"A".into()], 2.5);
            }
        }
    }

    #[test]
    fn csv_outputs_are_deterministic() {
        let spec = coin_spec(0.5);
        let cfg = SimConfig::new(9, 20, 10);
        let batch = sample_batch(&spec, &Intervention::empty(), &cfg).unwrap();
        let mut a = Vec::new();
        write_trajectories_csv(&mut a, &batch, cfg.seed).unwrap();
        let mut b = Vec::new();
        write_trajectories_csv(&mut b, &batch, cfg.seed).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("# tool=pdsem"));
        assert!(text.lines().nth(1).unwrap().starts_with("traj,step,state"));
    }
}
