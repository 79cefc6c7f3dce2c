//! Benchmarks for the structural algorithms, the exact enumerator and the
//! trajectory sampler.

use std::collections::BTreeMap;

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use pdsem_core::graph::MixedGraph;
use pdsem_core::identify::{id_admg, kernel_map_for, CausalQuery};
use pdsem_core::model_file::load_spec;
use pdsem_core::pdsem::{exact_query, GraphCpts, Intervention, Statistic};
use pdsem_core::simulate::{sample_batch, SimConfig};
use pdsem_core::VertexId;

fn spec_path(name: &str) -> String {
    format!("{}/../../specs/{name}.json", env!("CARGO_MANIFEST_DIR"))
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

/// Ladder of bidirected-linked pairs, a denser identification workload.
fn ladder(n: usize) -> MixedGraph {
    let mut b = MixedGraph::builder();
    for i in 0..n {
        b = b.random(format!("X{i}")).random(format!("Z{i}"));
    }
    for i in 0..n - 1 {
        b = b
            .edge(format!("X{i}"), format!("X{}", i + 1))
            .edge(format!("Z{i}"), format!("Z{}", i + 1))
            .bidirected(format!("X{i}"), format!("Z{i}"));
    }
    b.edge(format!("X{}", n - 1), format!("Z{}", n - 1)).build().unwrap()
}

fn bench_graph_ops(c: &mut Criterion) {
    let g = ladder(6);
    c.bench_function("intrinsic_sets_ladder6", |b| {
        b.iter(|| black_box(&g).intrinsic_sets().unwrap())
    });
    let fd = front_door_hidden();
    c.bench_function("latent_project_front_door", |b| {
        b.iter(|| black_box(&fd).latent_project())
    });
}

fn bench_identify(c: &mut Criterion) {
    let g = front_door_hidden();
    let projected = g.latent_project();
    let cards: BTreeMap<VertexId, usize> =
        g.vertices().map(|(v, _)| (v.clone(), 2)).collect();
    let mut rng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(1);
    let cpts = GraphCpts::random(&g, &cards, &mut rng);
    let joint = cpts.joint(&g, &cards).unwrap();
    let observed = projected.random_vertices();
    let margin = joint.marginalize(&observed).unwrap();
    let query = CausalQuery::new([("A".into(), 1)], ["Y".into()]);
    c.bench_function("id_admg_front_door", |b| {
        b.iter(|| id_admg(black_box(&projected), black_box(&query)).unwrap())
    });
    let expr = id_admg(&projected, &query).unwrap().functional().unwrap().clone();
    c.bench_function("kernel_map_front_door", |b| {
        b.iter(|| kernel_map_for(black_box(&expr), &margin, &projected).unwrap())
    });
}

fn bench_pdsem(c: &mut Criterion) {
    let spec = load_spec(spec_path("toy_surgery")).unwrap();
    c.bench_function("exact_lengths_toy", |b| {
        b.iter(|| {
            exact_query(
                black_box(&spec),
                &Intervention::empty(),
                Statistic::LengthDistribution,
                20,
            )
            .unwrap()
        })
    });
    let cfg = SimConfig::new(7, 1000, 40);
    c.bench_function("sample_1000_toy", |b| {
        b.iter(|| sample_batch(black_box(&spec), &Intervention::empty(), &cfg).unwrap())
    });
}

criterion_group!(benches, bench_graph_ops, bench_identify, bench_pdsem);
criterion_main!(benches);
