use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jargon_bench::cohort::{GroupId, GroupLabelSet, LabelScope};
use jargon_bench::corpus::Corpus;
use jargon_bench::evalstat::{score_jobs, ScoreJob};
use jargon_bench::extraction::{predict_sentence, ConfigDescriptor, ParseTally, PredictionSet};
use jargon_bench::ExecMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

/// Twenty model outputs per sentence, each listing a random subset of its units.
fn sampled_outputs(corpus: &Corpus, rng: &mut ChaCha8Rng) -> Vec<(u32, Vec<String>)> {
    corpus
        .sentences()
        .iter()
        .map(|s| {
            let units = corpus.sentence_units(s.id).unwrap();
            let samples = (0..20)
                .map(|_| {
                    let terms: Vec<String> = units
                        .iter()
                        .filter(|_| rng.gen_bool(0.2))
                        .map(|u| format!("{:?}", u.surface))
                        .collect();
                    format!("[{}]", terms.join(", "))
                })
                .collect();
            (s.id, samples)
        })
        .collect()
}

fn alignment(c: &mut Criterion) {
    let corpus = Corpus::bundled();
    let outputs = sampled_outputs(&corpus, &mut ChaCha8Rng::seed_from_u64(7));
    let mut group = c.benchmark_group("align_20_samples_per_sentence");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                mode.map(&outputs, |(sid, samples)| {
                    predict_sentence(&corpus, *sid, samples, &mut ParseTally::default()).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let corpus = Corpus::bundled();
    let units = corpus.unit_count();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let labels: Vec<GroupLabelSet> = GroupId::ALL
        .iter()
        .map(|g| GroupLabelSet::from_votes(LabelScope::Group(*g), 9, (0..units).map(|_| rng.gen_range(0..10)).collect()))
        .collect();
    // one prediction set per (setting, group): 150 settings x 14 groups
    let predictions: Vec<PredictionSet> = (0..150 * GroupId::ALL.len())
        .map(|_| {
            let mut p = PredictionSet::empty(&corpus, ConfigDescriptor::baseline("bench"), 1);
            p.predicted = (0..units).map(|_| rng.gen_bool(0.3)).collect();
            p
        })
        .collect();
    let jobs: Vec<ScoreJob<'_>> = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = i % GroupId::ALL.len();
            ScoreJob {
                predictions: p,
                labels: &labels[g],
                group: GroupId::ALL[g],
            }
        })
        .collect();
    let mut group = c.benchmark_group("score_2100_group_cells");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| score_jobs(mode, &jobs).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, alignment, scoring);
criterion_main!(benches);
