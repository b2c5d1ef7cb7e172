use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use litscope_bench::{atom_feed, random_records};
use litscope_core::ingest::parse_atom;
use litscope_core::space::project;
use litscope_core::{
    semantic_offset, AutoApprove, ManualClock, NewPipeline, PipelineConfig, ProjectionConfig, Services, Session,
    SessionConfig,
};

fn projection(c: &mut Criterion) {
    let mut g = c.benchmark_group("project");
    g.sample_size(20);
    for n in [60, 200] {
        let records = random_records(n, 64, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &records, |b, r| {
            b.iter(|| project(black_box(r), &ProjectionConfig::default()).unwrap())
        });
    }
    g.finish();
}

fn atom(c: &mut Criterion) {
    let feed = atom_feed(100);
    c.bench_function("parse_atom/100", |b| b.iter(|| parse_atom(black_box(feed.as_bytes())).unwrap()));
}

fn offset(c: &mut Criterion) {
    let r = random_records(2, 1536, 5);
    c.bench_function("semantic_offset/1536", |b| {
        b.iter(|| semantic_offset(black_box(&r[0].vector), black_box(&r[1].vector)).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(20);
    g.bench_function("mock_run_to_report", |b| {
        b.iter(|| {
            let services = Services::mock(Arc::new(ManualClock::fixed()));
            let mut s = Session::create("s1".into(), SessionConfig::default(), services).unwrap();
            let run = s
                .create_pipeline(NewPipeline {
                    query_text: "visualization for AI".into(),
                    config: PipelineConfig {
                        auto_approve: AutoApprove::all(),
                        run_to_next_checkpoint: true,
                    },
                    parent: None,
                })
                .unwrap();
            s.step(&run.pipeline_id).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, projection, atom, offset, pipeline);
criterion_main!(benches);
