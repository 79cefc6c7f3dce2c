//! Maximum-likelihood estimation of discrete model parameters from
//! trajectory data, with additive smoothing of state-transition
//! distributions.
//!
//! Selector distributions are smoothed toward the empirical next-state
//! distribution of their source state, pooled over contexts; ordinary
//! variable CPTs are smoothed toward the uniform distribution.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::graph::{VertexId, VertexKind};
use crate::kernel::VarSpec;
use crate::pdsem::{
    context_vertex, validate_trajectory, Cpt, GraphCpts, GraphKey, ParamSet, PdsemError,
    PdsemSpec, Trajectory, TransitionId,
};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("trajectory {index}: {source}")]
    BadTrajectory {
        index: usize,
        #[source]
        source: PdsemError,
    },
    #[error("graph {graph}: context row {row} of `{vertex}` has no observations and alpha = 0")]
    UnidentifiableContext { graph: String, vertex: String, row: usize },
    #[error("negative smoothing pseudo-count {0}")]
    NegativeAlpha(f64),
    #[error(transparent)]
    Pdsem(#[from] PdsemError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Counts for one CPT: one row of category counts per parent assignment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CountTable {
    pub rows: usize,
    pub categories: usize,
    pub counts: Vec<u64>,
}

impl CountTable {
    fn new(rows: usize, categories: usize) -> Self {
        CountTable { rows, categories, counts: vec![0; rows * categories] }
    }

    fn add(&mut self, row: usize, category: usize) {
        self.counts[row * self.categories + category] += 1;
    }

    pub fn row(&self, row: usize) -> &[u64] {
        &self.counts[row * self.categories..(row + 1) * self.categories]
    }

    pub fn merge(&mut self, other: &CountTable) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Sufficient statistics: per-graph, per-vertex CPT counts plus the pooled
/// next-state counts per source state used as the smoothing backoff.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SufficientStats {
    pub cpt_counts: BTreeMap<GraphKey, BTreeMap<VertexId, CountTable>>,
    /// pooled selector counts per source state, regardless of entering graph
    pub state_exits: BTreeMap<crate::pdsem::StateId, Vec<u64>>,
}

impl SufficientStats {
    /// Associative merge; collection distributes over data partitions.
    pub fn merge(&mut self, other: &SufficientStats) {
        for (key, per_vertex) in &other.cpt_counts {
            let dst = self.cpt_counts.entry(key.clone()).or_default();
            for (v, table) in per_vertex {
                dst.entry(v.clone())
                    .or_insert_with(|| CountTable::new(table.rows, table.categories))
                    .merge(table);
            }
        }
        for (state, counts) in &other.state_exits {
            let dst = self
                .state_exits
                .entry(state.clone())
                .or_insert_with(|| vec![0; counts.len()]);
            for (a, b) in dst.iter_mut().zip(counts) {
                *a += b;
            }
        }
    }
}

fn cpt_shape(spec: &PdsemSpec, key: &GraphKey, v: &VertexId) -> Result<(Vec<VarSpec>, usize), PdsemError> {
    let g = spec.graph(key);
    let cards = spec.graph_cards(key)?;
    let parents: Vec<VarSpec> = g
        .parents(v)
        .into_iter()
        .map(|p| VarSpec::new(p.clone(), cards[&p]))
        .collect();
    Ok((parents, cards[v]))
}

fn row_index(parents: &[VarSpec], assignment: &BTreeMap<VertexId, usize>) -> usize {
    let mut idx = 0usize;
    for p in parents {
        idx = idx * p.cardinality + assignment[&p.id];
    }
    idx
}

/// Count every (vertex, parent-assignment, value) occurrence and every
/// (source state, next state) occurrence in the data. Trajectories are
/// validated against the structure first; errors carry the trajectory index.
pub fn collect_stats(
    structure: &PdsemSpec,
    data: &[Trajectory],
) -> Result<SufficientStats, EstimateError> {
    let mut stats = SufficientStats::default();
    // pre-size every table so merging and fitting see full shapes
    let mut keys = vec![GraphKey::Initial];
    keys.extend(structure.transition_graphs.keys().cloned().map(GraphKey::Transition));
    for key in &keys {
        let g = structure.graph(key);
        let per_vertex = stats.cpt_counts.entry(key.clone()).or_default();
        for (v, kind) in g.vertices() {
            if kind != VertexKind::Random {
                continue;
            }
            let (parents, card) = cpt_shape(structure, key, v)?;
            let rows: usize = parents.iter().map(|p| p.cardinality).product();
            per_vertex.insert(v.clone(), CountTable::new(rows, card));
        }
    }
    for s in &structure.states {
        if !s.absorbing {
            let sel = structure.selector(&s.id)?;
            stats.state_exits.insert(s.id.clone(), vec![0; sel.next.len()]);
        }
    }

    for (index, t) in data.iter().enumerate() {
        validate_trajectory(structure, t)
            .map_err(|source| EstimateError::BadTrajectory { index, source })?;
        for (i, step) in t.steps.iter().enumerate() {
            let key = if i == 0 {
                GraphKey::Initial
            } else {
                GraphKey::Transition(TransitionId {
                    from: t.steps[i - 1].state.clone(),
                    to: step.state.clone(),
                })
            };
            let mut assignment = step.values.clone();
            if i > 0 {
                for (v, x) in &t.steps[i - 1].values {
                    assignment.insert(context_vertex(v), *x);
                }
            }
            let g = structure.graph(&key);
            let per_vertex = stats.cpt_counts.get_mut(&key).expect("pre-sized");
            for v in g.random_vertices() {
                let (parents, _) = cpt_shape(structure, &key, &v)?;
                per_vertex
                    .get_mut(&v)
                    .expect("pre-sized")
                    .add(row_index(&parents, &assignment), assignment[&v]);
            }
            let sel = structure.selector(&step.state)?;
            stats.state_exits.get_mut(&step.state).expect("pre-sized")
                [step.values[&sel.var]] += 1;
        }
    }
    Ok(stats)
}

/// Additive-smoothing configuration. `alpha = 0` is pure maximum likelihood;
/// selectors back off to the pooled empirical next-state distribution,
/// ordinary variables to uniform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingConfig {
    pub alpha: f64,
}

impl SmoothingConfig {
    pub fn new(alpha: f64) -> Self {
        SmoothingConfig { alpha }
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig { alpha: 1.0 }
    }
}

/// One fitted context row, for the fit report.
#[derive(Clone, Debug)]
pub struct FitRow {
    pub graph: String,
    pub vertex: String,
    pub row: usize,
    pub total: u64,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
}

/// Fit CPTs from sufficient statistics: `(count + alpha * backoff) /
/// (total + alpha)` per context row. With `alpha = 0`, rows without
/// observations are an error rather than a silent default.
pub fn fit_mle(
    structure: &PdsemSpec,
    stats: &SufficientStats,
    smoothing: &SmoothingConfig,
) -> Result<(PdsemSpec, Vec<FitRow>), EstimateError> {
    if smoothing.alpha < 0.0 {
        return Err(EstimateError::NegativeAlpha(smoothing.alpha));
    }
    let alpha = smoothing.alpha;
    let mut report = Vec::new();
    let mut initial = GraphCpts::default();
    let mut transitions: BTreeMap<TransitionId, GraphCpts> = BTreeMap::new();

    // pooled exit distributions per state, as the selector backoff
    let mut exit_backoff: BTreeMap<crate::pdsem::StateId, Vec<f64>> = BTreeMap::new();
    for (state, counts) in &stats.state_exits {
        let total: u64 = counts.iter().sum();
        let k = counts.len() as f64;
        let dist: Vec<f64> = if total == 0 {
            vec![1.0 / k; counts.len()]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        exit_backoff.insert(state.clone(), dist);
    }

    for (key, per_vertex) in &stats.cpt_counts {
        let target = structure.target_state(key);
        let selector_var = structure.selector(&target)?.var.clone();
        let cpts = match key {
            GraphKey::Initial => &mut initial,
            GraphKey::Transition(t) => transitions.entry(t.clone()).or_default(),
        };
        for (v, table) in per_vertex {
            let (parents, card) = cpt_shape(structure, key, v)?;
            let backoff: Vec<f64> = if v == &selector_var {
                exit_backoff[&target].clone()
            } else {
                vec![1.0 / card as f64; card]
            };
            let mut out = Vec::with_capacity(table.rows * card);
            for row in 0..table.rows {
                let counts = table.row(row);
                let total: u64 = counts.iter().sum();
                if total == 0 && alpha == 0.0 {
                    return Err(EstimateError::UnidentifiableContext {
                        graph: key.to_string(),
                        vertex: v.to_string(),
                        row,
                    });
                }
                let denom = total as f64 + alpha;
                let smoothed: Vec<f64> = counts
                    .iter()
                    .zip(&backoff)
                    .map(|(&c, &b)| (c as f64 + alpha * b) / denom)
                    .collect();
                // exact renormalization to absorb rounding
                let sum: f64 = smoothed.iter().sum();
                let smoothed: Vec<f64> = smoothed.iter().map(|x| x / sum).collect();
                let raw: Vec<f64> = if total == 0 {
                    vec![f64::NAN; card]
                } else {
                    counts.iter().map(|&c| c as f64 / total as f64).collect()
                };
                report.push(FitRow {
                    graph: key.to_string(),
                    vertex: v.to_string(),
                    row,
                    total,
                    raw,
                    smoothed: smoothed.clone(),
                });
                out.extend(smoothed);
            }
            cpts.cpts.insert(
                v.clone(),
                Cpt::new(VarSpec::new(v.clone(), card), parents, out).map_err(PdsemError::from)?,
            );
        }
    }

    let mut fitted = structure.clone();
    fitted.params = ParamSet::Cpt { initial, transitions };
    Ok((fitted, report))
}

/// Total log-likelihood of the data under a fully observed spec.
/// Zero-probability factors surface as errors naming the trajectory, step
/// and vertex.
pub fn loglik_report(spec: &PdsemSpec, data: &[Trajectory]) -> Result<f64, EstimateError> {
    let mut total = 0.0;
    for (index, t) in data.iter().enumerate() {
        total += crate::pdsem::trajectory_loglik(spec, t)
            .map_err(|source| EstimateError::BadTrajectory { index, source })?;
    }
    Ok(total)
}

/// Fit report CSV: one row per (graph, vertex, context row).
pub fn write_fit_report_csv(
    w: &mut impl Write,
    rows: &[FitRow],
    alpha: f64,
) -> std::io::Result<()> {
    writeln!(w, "# tool=pdsem version={} alpha={alpha}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "graph,vertex,row,total,raw,smoothed")?;
    for r in rows {
        let raw: Vec<String> = r.raw.iter().map(|x| format!("{x:.6}")).collect();
        let smoothed: Vec<String> = r.smoothed.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.graph,
            r.vertex,
            r.row,
            r.total,
            raw.join(";"),
            smoothed.join(";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::MixedGraph;
    use crate::pdsem::{
        Intervention, SelectorDecl, StateDecl, StateVars, TrajectoryStep, VarDecl,
    };
    use crate::simulate::{sample_batch, SimConfig};
    use crate::pdsem::Terminal;

    fn coin_spec(p_absorb: f64) -> PdsemSpec {
        let s1: crate::pdsem::StateId = "work".into();
        let send: crate::pdsem::StateId = "done".into();
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
        let x_cpt = Cpt::new(x.clone(), vec![], vec![0.3, 0.7]).unwrap();
        let x_loop =
            Cpt::new(x.clone(), vec![VarSpec::new("prev.X", 2)], vec![0.7, 0.3, 0.3, 0.7]).unwrap();
        let sel_cpt = Cpt::new(
            sel,
            vec![x],
            vec![p_absorb, 1.0 - p_absorb, 1.0 - p_absorb, p_absorb],
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
    fn counts_from_single_trajectory_are_indicators() {
        let spec = coin_spec(0.6);
        let t = Trajectory {
            steps: vec![TrajectoryStep {
                state: "work".into(),
                values: [("X".into(), 1), ("SEL".into(), 0)].into_iter().collect(),
            }],
            terminal: Terminal::Absorbed,
        };
        let stats = collect_stats(&spec, &[t]).unwrap();
        let x = &stats.cpt_counts[&GraphKey::Initial][&"X".into()];
        assert_eq!(x.counts, vec![0, 1]);
        let sel = &stats.cpt_counts[&GraphKey::Initial][&"SEL".into()];
        // SEL row for X=1 counts category 0
        assert_eq!(sel.counts, vec![0, 0, 1, 0]);
        assert_eq!(stats.state_exits[&"work".into()], vec![1, 0]);
    }

    #[test]
    fn stats_are_additive_over_partitions() {
        let spec = coin_spec(0.6);
        let cfg = SimConfig::new(4, 60, 20);
        let batch = sample_batch(&spec, &Intervention::empty(), &cfg).unwrap();
        let all = collect_stats(&spec, &batch).unwrap();
        let mut merged = collect_stats(&spec, &batch[..30]).unwrap();
        merged.merge(&collect_stats(&spec, &batch[30..]).unwrap());
        assert_eq!(all, merged);
    }

    #[test]
    fn fit_simple_ratios() {
        // counts (3, 1) with alpha 0 give (0.75, 0.25)
        let spec = coin_spec(0.6);
        let mut stats = collect_stats(&spec, &[]).unwrap();
        let table = stats
            .cpt_counts
            .get_mut(&GraphKey::Initial)
            .unwrap()
            .get_mut(&"X".into())
            .unwrap();
        table.counts = vec![3, 1];
        // all other rows need counts for alpha = 0; use alpha = 0 on a copy
        // of just this row by giving everything else one observation
        for (_, per_vertex) in stats.cpt_counts.iter_mut() {
            for (_, t) in per_vertex.iter_mut() {
                if t.counts.iter().all(|&c| c == 0) {
                    for r in 0..t.rows {
                        t.counts[r * t.categories] = 1;
                    }
                }
            }
        }
        for c in stats.state_exits.values_mut() {
            if c.iter().all(|&x| x == 0) {
                c[0] = 1;
            }
        }
        let (fitted, _) = fit_mle(&spec, &stats, &SmoothingConfig::new(0.0)).unwrap();
        let x = &fitted.graph_cpts(&GraphKey::Initial).unwrap().cpts[&"X".into()];
        assert_eq!(x.table, vec![0.75, 0.25]);
    }

    #[test]
    fn fit_zero_counts_uniform_backoff() {
        // counts (0,0) with alpha 1 and uniform backoff over 2 give (0.5, 0.5)
        let spec = coin_spec(0.6);
        let stats = collect_stats(&spec, &[]).unwrap();
        let (fitted, _) = fit_mle(&spec, &stats, &SmoothingConfig::new(1.0)).unwrap();
        let x = &fitted.graph_cpts(&GraphKey::Initial).unwrap().cpts[&"X".into()];
        assert_eq!(x.table, vec![0.5, 0.5]);
    }

    #[test]
    fn fit_zero_counts_alpha_zero_is_an_error() {
        let spec = coin_spec(0.6);
        let stats = collect_stats(&spec, &[]).unwrap();
        match fit_mle(&spec, &stats, &SmoothingConfig::new(0.0)) {
            Err(EstimateError::UnidentifiableContext { .. }) => {}
            other => panic!("expected unidentifiable-context error, got {other:?}"),
        }
    }

    #[test]
    fn smoothed_rows_positive_and_normalized() {
        let spec = coin_spec(0.6);
        let cfg = SimConfig::new(8, 500, 20);
        let batch = sample_batch(&spec, &Intervention::empty(), &cfg).unwrap();
        let stats = collect_stats(&spec, &batch).unwrap();
        let (fitted, report) = fit_mle(&spec, &stats, &SmoothingConfig::new(1.0)).unwrap();
        for row in &report {
            let sum: f64 = row.smoothed.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.smoothed.iter().all(|&x| x > 0.0));
        }
        // alpha -> 0 recovers raw MLE on rows with positive counts
        let (tiny, _) = fit_mle(&spec, &stats, &SmoothingConfig::new(1e-8)).unwrap();
        for (key, per_vertex) in &stats.cpt_counts {
            for (v, table) in per_vertex {
                let cpt_t = &tiny.graph_cpts(key).unwrap().cpts[v];
                for r in 0..table.rows {
                    let counts = table.row(r);
                    let total: u64 = counts.iter().sum();
                    if total == 0 {
                        continue;
                    }
                    for (c, x) in counts.iter().zip(
                        &cpt_t.table[r * table.categories..(r + 1) * table.categories],
                    ) {
                        let raw = *c as f64 / total as f64;
                        assert!((raw - x).abs() < 1e-6);
                    }
                }
            }
        }
        let _ = fitted;
    }

    #[test]
    fn loglik_additive_and_prefers_fit() {
        let spec = coin_spec(0.6);
        let cfg = SimConfig::new(10, 400, 25);
        let batch = sample_batch(&spec, &Intervention::empty(), &cfg).unwrap();
        let stats = collect_stats(&spec, &batch).unwrap();
        let (fitted, _) = fit_mle(&spec, &stats, &SmoothingConfig::new(1e-9)).unwrap();
        let base = loglik_report(&fitted, &batch).unwrap();
        let half = loglik_report(&fitted, &batch[..200]).unwrap()
            + loglik_report(&fitted, &batch[200..]).unwrap();
        assert!((base - half).abs() < 1e-9);
        // local optimality: random perturbations of the fitted CPTs never
        // improve the training likelihood
        let mut rng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(2);
        for _ in 0..100 {
            let mut perturbed = fitted.clone();
            if let ParamSet::Cpt { initial, .. } = &mut perturbed.params {
                let cpt = initial.cpts.get_mut(&"X".into()).unwrap();
                let delta: f64 = rand::Rng::gen_range(&mut rng, -0.2..0.2);
                let p0 = (cpt.table[0] + delta).clamp(1e-6, 1.0 - 1e-6);
                cpt.table = vec![p0, 1.0 - p0];
            }
            let other = loglik_report(&perturbed, &batch).unwrap();
            assert!(other <= base + 1e-9, "perturbation improved loglik");
        }
    }
}
