use criterion::{criterion_group, criterion_main, Criterion};
use fcanet::features::{FeatureExtractor, MfccParams};
use fcanet_bench::chirp;
use std::hint::black_box;

fn mfcc(c: &mut Criterion) {
    let extractor = FeatureExtractor::new(MfccParams::default()).expect("default params");
    let clip = chirp();
    c.bench_function("mfcc/one_second", |b| b.iter(|| extractor.extract(black_box(&clip)).expect("extract")));
}

criterion_group!(benches, mfcc);
criterion_main!(benches);
