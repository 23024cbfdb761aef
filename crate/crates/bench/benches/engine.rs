use criterion::{criterion_group, criterion_main, Criterion};
use dstesim_core::prelude::*;

fn table1(c: &mut Criterion) {
    let mut g = c.benchmark_group("table1_run");
    g.sample_size(10);
    for cfg in [GbamConfig::mam(3), GbamConfig::rdm(3), GbamConfig::atcs(3)] {
        let sc = std::sync::Arc::new(Scenario::table1(cfg, vec![1]));
        g.bench_function(cfg.model.to_string(), |b| b.iter(|| run_one(sc.clone(), 0).unwrap()));
    }
    g.finish();
}

fn nsfnet_cspf(c: &mut Criterion) {
    let text = "TOPOLOGY BUILTIN NSFNET\nCLASSES 3\nBAM RDM\nTRAFFIC TC 0 POISSON 0.2 HOLD EXP 120 BW CHOICE 2 5 10\nTRAFFIC TC 1 POISSON 0.1 HOLD EXP 120 BW CHOICE 2 5\nTRAFFIC TC 2 POISSON 0.05 HOLD EXP 120 BW DET 5\nROUTE CSPF\nSTOP TIME 3600\nSEEDS 11\nRUN\n";
    let sc = std::sync::Arc::new(parse_script(text, None).unwrap());
    let mut g = c.benchmark_group("nsfnet_cspf");
    g.sample_size(10);
    g.bench_function("RDM", |b| b.iter(|| run_one(sc.clone(), 0).unwrap()));
    g.finish();
}

criterion_group!(benches, table1, nsfnet_cspf);
criterion_main!(benches);
