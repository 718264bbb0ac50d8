//! Sequential vs rayon execution of the batch workloads.
//!
//! Run with `cargo bench -p socratic-core`. Without the `parallel` feature
//! both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use socratic_core::batch::{extract_batch, run_sessions, Execution, SessionJob};
use socratic_core::fixtures;
use socratic_core::provider::ScriptedProvider;
use socratic_core::survey::{build_theme_graph_with, summarize_with, SurveyResponse, ThemeAnnotation};

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn label(exec: Execution) -> &'static str {
    match exec {
        Execution::Sequential => "sequential",
        Execution::Parallel => "parallel",
    }
}

fn extraction(c: &mut Criterion) {
    let corpus: Vec<String> = fixtures::planted_corpus(1, 2_000).into_iter().map(|p| p.text).collect();
    let mut group = c.benchmark_group("extract_json_objects");
    for exec in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(label(exec)), &corpus, |b, corpus| {
            b.iter(|| extract_batch(black_box(corpus), exec))
        });
    }
    group.finish();
}

fn sessions(c: &mut Criterion) {
    let scripts: Vec<_> = (0..64).map(|seed| fixtures::random_session_script(seed, 10)).collect();
    let mut group = c.benchmark_group("scripted_sessions");
    group.sample_size(20);
    for exec in MODES {
        group.bench_function(label(exec), |b| {
            b.iter_batched(
                || {
                    scripts
                        .iter()
                        .map(|s| SessionJob {
                            spec: fixtures::motivation_spec(),
                            kc: fixtures::motivation_kc(),
                            entry: fixtures::taylor_entry(),
                            config: s.config.clone(),
                            provider: ScriptedProvider::new(s.entries.clone()),
                            learner_lines: s.learner_lines.clone(),
                        })
                        .collect::<Vec<_>>()
                },
                |jobs| run_sessions(&jobs, exec),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn theme_graph(c: &mut Criterion) {
    let annotations: Vec<ThemeAnnotation> = fixtures::random_theme_sets(9, 20_000, 4)
        .into_iter()
        .enumerate()
        .map(|(i, themes)| ThemeAnnotation {
            response_id: format!("r{i}"),
            question_id: "q11".into(),
            themes,
            extraction_failed: false,
        })
        .collect();
    let mut group = c.benchmark_group("theme_graph");
    for exec in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(label(exec)), &annotations, |b, a| {
            b.iter(|| build_theme_graph_with(black_box(a), exec))
        });
    }
    group.finish();
}

fn likert(c: &mut Criterion) {
    let pilot = fixtures::pilot_survey();
    let responses: Vec<SurveyResponse> = (0..10_000).map(|i| pilot[i % pilot.len()].clone()).collect();
    let mut group = c.benchmark_group("likert_summary");
    for exec in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(label(exec)), &responses, |b, r| {
            b.iter(|| summarize_with(black_box(r), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, extraction, sessions, theme_graph, likert);
criterion_main!(benches);
