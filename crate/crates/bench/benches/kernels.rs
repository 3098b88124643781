use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spider_core::algorithms::{run_3p_spider, KinSchedule, RunConfig};
use spider_core::em::{em_field_oracle, EmEvaluation, GaussianFixture};
use spider_core::mcmc::{gibbs_chain, sample_pg1_with, GibbsTarget};
use spider_core::problems::QuadraticToy;
use spider_core::prox::prox;
use spider_core::seed::rng_from_seed;
use spider_core::{Matrix, MetricChoice, MetricOperator, ProxFunction, Vector};

fn spd(q: usize) -> MetricOperator {
    let m = Matrix::from_fn(q, q, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0);
    MetricOperator::new(&m * m.transpose() + Matrix::identity(q, q)).unwrap()
}

fn bench_prox(c: &mut Criterion) {
    let mut group = c.benchmark_group("prox");
    for q in [5usize, 21] {
        let b = spd(q);
        let s = Vector::from_fn(q, |i, _| 3.0 * (i as f64 + 1.0).sin());
        let ball = ProxFunction::ball(0.5, Vector::zeros(q)).unwrap();
        let l1 = ProxFunction::l1(0.3).unwrap();
        group.bench_with_input(BenchmarkId::new("ball", q), &q, |bn, _| {
            bn.iter(|| prox(&ball, 0.4, &b, black_box(&s)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("l1", q), &q, |bn, _| {
            bn.iter(|| prox(&l1, 0.4, &b, black_box(&s)).unwrap())
        });
    }
    group.finish();
}

fn bench_pg(c: &mut Criterion) {
    let mut group = c.benchmark_group("polya_gamma");
    for cval in [0.5, 5.0] {
        let mut rng = rng_from_seed(1);
        group.bench_with_input(BenchmarkId::new("draw", cval), &cval, |bn, &cv| {
            bn.iter(|| sample_pg1_with(black_box(cv), &mut rng))
        });
    }
    let target = GibbsTarget::new(0.3, 1.4, 0.05).unwrap();
    group.bench_function("gibbs_chain_190", |bn| {
        bn.iter(|| gibbs_chain(&target, 90, 100, black_box(7)).unwrap())
    });
    group.finish();
}

fn bench_spider(c: &mut Criterion) {
    let toy = QuadraticToy::generate(200, 5, 3).unwrap();
    let oracle = toy.oracle().unwrap();
    let g = toy.constraint();
    let s0 = Vector::zeros(5);
    let mut cfg = RunConfig::new(200, 20, 1, 0.1, MetricChoice::identity(5));
    cfg.kin = KinSchedule::Constant(10);
    cfg.record_wallclock = false;
    c.bench_function("spider_outer_loop_quadratic", |bn| {
        bn.iter(|| run_3p_spider(&cfg, &oracle, &g, &s0, &MetricOperator::identity(5)).unwrap())
    });

    let fixture = Arc::new(GaussianFixture::synthetic(500, 1.0, 2).unwrap());
    let em = em_field_oracle(fixture, EmEvaluation::MonteCarlo).unwrap();
    let mut cfg = RunConfig::new(500, 25, 1, 0.5, em.metric_choice());
    cfg.kin = KinSchedule::Constant(20);
    cfg.record_wallclock = false;
    let s0 = Vector::zeros(1);
    c.bench_function("spider_outer_loop_em_fixture", |bn| {
        bn.iter(|| run_3p_spider(&cfg, &em, &ProxFunction::zero(), &s0, &MetricOperator::identity(1)).unwrap())
    });
}

criterion_group!(benches, bench_prox, bench_pg, bench_spider);
criterion_main!(benches);
