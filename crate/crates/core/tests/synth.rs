//! Generator properties checked through the brute-force cosine oracle.

use imaginenet::label_space::{build_label_space, ClassId, CompositeLabel, LabelSpaceConfig};
use imaginenet::nn::Matrix;
use imaginenet::synth::{make_prototypes, oracle_rank, synth_clip, synth_split, ClipSample, SplitCounts, SynthParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn noiseless_pairs_occupy_the_top_two() {
    let space = build_label_space(&LabelSpaceConfig::default()).unwrap();
    assert_eq!(space.pairs().len(), 59);
    let bank = make_prototypes(1, 14, 128).unwrap();
    let params = SynthParams { noise_sigma: 0.0, ..SynthParams::default() };
    for (i, pair) in space.pairs().iter().enumerate() {
        for s in 0..5 {
            let clip = synth_clip(&bank, pair, &params, 0, (i * 10 + s) as u64).unwrap();
            let ranked = oracle_rank(&clip, &bank).unwrap();
            let mut top: Vec<ClassId> = ranked[..2].iter().map(|(c, _)| *c).collect();
            top.sort();
            assert_eq!(top, pair.members(), "pair {pair}");
        }
    }
}

#[test]
fn noiseless_singles_rank_first() {
    let bank = make_prototypes(4, 14, 128).unwrap();
    let params = SynthParams { noise_sigma: 0.0, ..SynthParams::default() };
    for c in 0..14u16 {
        let clip = synth_clip(&bank, &CompositeLabel::single(ClassId(c)), &params, 0, c as u64).unwrap();
        assert_eq!(oracle_rank(&clip, &bank).unwrap()[0].0, ClassId(c));
    }
}

fn oracle_accuracy(sigma: f64) -> f64 {
    let space = build_label_space(&LabelSpaceConfig::default()).unwrap();
    let bank = make_prototypes(1, 14, 128).unwrap();
    let params = SynthParams { noise_sigma: sigma, ..SynthParams::default() };
    let counts = SplitCounts { per_composite: 1, ..SplitCounts::default() };
    let split = synth_split(&bank, &space, counts, &params, 1, 1).unwrap();
    let set1: Vec<&ClipSample> = split.set1_train.iter().chain(&split.set1_test).collect();
    let hits = set1
        .iter()
        .filter(|clip| oracle_rank(clip, &bank).unwrap()[0].0 == clip.label.members()[0])
        .count();
    hits as f64 / set1.len() as f64
}

#[test]
fn oracle_accuracy_falls_with_noise() {
    let grid = [0.0, 0.1, 0.5, 1.0, 2.0];
    let acc: Vec<f64> = grid.iter().map(|&s| oracle_accuracy(s)).collect();
    assert_eq!(acc[0], 1.0);
    for w in acc.windows(2) {
        assert!(w[1] <= w[0], "{acc:?}");
    }
    assert!(acc[4] < 1.0, "{acc:?}");
}

#[test]
fn random_vectors_score_near_uniformly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bank = make_prototypes(1, 14, 2048).unwrap();
    for _ in 0..20 {
        let data = (0..2048).map(|_| rng.sample(StandardNormal)).collect();
        let clip = ClipSample {
            features: Matrix::from_vec(1, 2048, data).unwrap(),
            label: CompositeLabel::single(ClassId(0)),
            view_id: 0,
            group: 0,
            seed: 0,
        };
        let ranked = oracle_rank(&clip, &bank).unwrap();
        let gap = ranked[0].1 - ranked[13].1;
        assert!(gap < 0.2, "{gap}");
    }
}

#[test]
fn split_is_reproducible_bit_for_bit() {
    let space = build_label_space(&LabelSpaceConfig::default()).unwrap();
    let bank = make_prototypes(9, 14, 32).unwrap().with_views(4, 0.3);
    let counts = SplitCounts { train_per_class: 2, test_per_class: 1, per_composite: 1 };
    let a = synth_split(&bank, &space, counts, &SynthParams::default(), 4, 9).unwrap();
    let b = synth_split(&bank, &space, counts, &SynthParams::default(), 4, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.set2.len(), 74 * 4);
}
