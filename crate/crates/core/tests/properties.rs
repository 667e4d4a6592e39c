mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safmap::crossbar::{ActivationVector, CrossbarConfig, ProgrammedCrossbar, mvm_exact};
use safmap::faults::{FaultInjectionSpec, FaultPattern, SafMask, gen_saf_mask};
use safmap::lut::CvmLut;
use safmap::mapping::{CvmEngine, LayerWeights, Scheme, map_layer, mapping_error};
use safmap::numfmt::{CodeFormat, Encoding};

fn format_strategy(max_width: u8) -> impl Strategy<Value = CodeFormat> {
    (1..=max_width, any::<bool>()).prop_map(|(n, signed)| {
        let enc = if signed { Encoding::TwosComplement } else { Encoding::Unsigned };
        CodeFormat::new(n, enc).unwrap()
    })
}

/// A random layer and mask of the given format.
fn instance(
    f: CodeFormat,
    rows: usize,
    cols: usize,
    rate: f64,
    seed: u64,
) -> (LayerWeights, SafMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = (0..rows * cols).map(|_| rng.random_range(0..f.num_codes()) as u8).collect();
    let w = LayerWeights::from_codes(rows, cols, f, codes).unwrap();
    let mask = gen_saf_mask(&FaultInjectionSpec::new(rate, seed, 1), rows, cols, f.width()).unwrap();
    (w, mask)
}

fn schemes_for(f: CodeFormat) -> Vec<Scheme> {
    Scheme::ALL
        .into_iter()
        .filter(|&s| s != Scheme::SignFlip || f.encoding().is_signed())
        .collect()
}

#[test]
fn legality_exhaustive_at_n4() {
    for enc in [Encoding::Unsigned, Encoding::TwosComplement] {
        let f = CodeFormat::new(4, enc).unwrap();
        // Every (target, pattern) pair as one 16 x 81 layer.
        let patterns = common::all_patterns(4);
        let cols = patterns.len();
        let codes: Vec<u8> = (0..16u8).flat_map(|c| std::iter::repeat_n(c, cols)).collect();
        let w = LayerWeights::from_codes(16, cols, f, codes).unwrap();
        let mask = SafMask::from_patterns(16, cols, 4, patterns.repeat(16)).unwrap();
        for scheme in schemes_for(f) {
            for row_len in [1, 5, 16] {
                let l = map_layer(scheme, &w, &mask, row_len, CvmEngine::Direct).unwrap();
                assert!(common::all_legal(&l, &mask), "{scheme} {f} row_len {row_len}");
            }
        }
    }
}

#[test]
fn injection_statistics_at_one_percent() {
    let (mut cells, mut faulty, mut sa1) = (0usize, 0usize, 0usize);
    for trial in 0..100 {
        let m = gen_saf_mask(&FaultInjectionSpec::new(0.01, 77, trial), 64, 64, 8).unwrap();
        cells += m.num_cells();
        faulty += m.fault_count();
        sa1 += m.sa1_count();
    }
    let rate = faulty as f64 / cells as f64;
    let share = sa1 as f64 / faulty as f64;
    assert!((rate - 0.01).abs() <= 0.002, "{rate}");
    assert!((share - 0.5).abs() <= 0.02, "{share}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mapping_is_legal_and_deterministic(
        f in format_strategy(8),
        rows in 1usize..40,
        cols in 1usize..6,
        row_len in 1usize..70,
        rate in 0.0f64..0.3,
        seed in any::<u64>(),
    ) {
        let (w, mask) = instance(f, rows, cols, rate, seed);
        let lut = CvmLut::build(f);
        for scheme in schemes_for(f) {
            let a = map_layer(scheme, &w, &mask, row_len, CvmEngine::Direct).unwrap();
            let b = map_layer(scheme, &w, &mask, row_len, CvmEngine::Lut(&lut)).unwrap();
            prop_assert!(common::all_legal(&a, &mask));
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a, map_layer(scheme, &w, &mask, row_len, CvmEngine::Direct).unwrap());
        }
    }

    #[test]
    fn paired_error_dominance_per_trial(
        rows in 1usize..100,
        cols in 1usize..8,
        rate in 0.0f64..0.15,
        seed in any::<u64>(),
    ) {
        let f = CodeFormat::twos_complement(8).unwrap();
        let lut = CvmLut::build(f);
        let (w, mask) = instance(f, rows, cols, rate, seed);
        let err = |s| {
            let l = map_layer(s, &w, &mask, 64, CvmEngine::Lut(&lut)).unwrap();
            mapping_error(&l, &w).unwrap().total
        };
        let (naive, cvm) = (err(Scheme::Naive), err(Scheme::Cvm));
        prop_assert!(cvm <= naive);
        prop_assert!(err(Scheme::SignFlip) <= cvm);
        prop_assert!(err(Scheme::BitFlip) <= cvm);
    }

    #[test]
    fn simulator_matches_effective_weights(
        wf in format_strategy(6),
        af in format_strategy(6),
        rows in 1usize..150,
        cols in 1usize..5,
        row_len in 1usize..80,
        rate in 0.0f64..0.25,
        seed in any::<u64>(),
    ) {
        let (w, mask) = instance(wf, rows, cols, rate, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let acts: Vec<i32> =
            (0..rows).map(|_| rng.random_range(af.min_value()..=af.max_value())).collect();
        let a = ActivationVector::new(af, acts.clone()).unwrap();
        let acts64: Vec<i64> = acts.iter().map(|&v| v as i64).collect();
        for scheme in schemes_for(wf) {
            let l = map_layer(scheme, &w, &mask, row_len, CvmEngine::Direct).unwrap();
            let xbar = ProgrammedCrossbar::program(&l, &CrossbarConfig::for_layout(&l, af)).unwrap();
            let want = common::matvec(&common::effective(&l), rows, cols, &acts64);
            prop_assert_eq!(xbar.mvm(&a).unwrap(), want);
        }
    }

    #[test]
    fn chunk_order_does_not_matter(
        rows in 1usize..200,
        row_len in 1usize..40,
        rate in 0.0f64..0.2,
        seed in any::<u64>(),
    ) {
        let f = CodeFormat::twos_complement(8).unwrap();
        let af = CodeFormat::unsigned(8).unwrap();
        let (w, mask) = instance(f, rows, 3, rate, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = ActivationVector::new(af, (0..rows).map(|_| rng.random_range(0..256)).collect()).unwrap();
        let l = map_layer(Scheme::BitFlip, &w, &mask, row_len, CvmEngine::Direct).unwrap();
        let xbar = ProgrammedCrossbar::program(&l, &CrossbarConfig::for_layout(&l, af)).unwrap();
        let mut order: Vec<usize> = (0..l.geometry().num_chunks).collect();
        let forward = xbar.mvm_with_chunk_order(&a, &order).unwrap();
        order.reverse();
        prop_assert_eq!(&xbar.mvm_with_chunk_order(&a, &order).unwrap(), &forward);
        let half = order.len() / 2;
        order.rotate_left(half);
        prop_assert_eq!(xbar.mvm_with_chunk_order(&a, &order).unwrap(), forward);
    }

    #[test]
    fn simulator_is_linear_in_activations(
        rows in 1usize..100,
        rate in 0.0f64..0.2,
        seed in any::<u64>(),
    ) {
        let f = CodeFormat::twos_complement(8).unwrap();
        let af = CodeFormat::unsigned(8).unwrap();
        let (w, mask) = instance(f, rows, 4, rate, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1: Vec<i32> = (0..rows).map(|_| rng.random_range(0..128)).collect();
        let a2: Vec<i32> = (0..rows).map(|_| rng.random_range(0..128)).collect();
        let sum: Vec<i32> = a1.iter().zip(&a2).map(|(x, y)| x + y).collect();
        let l = map_layer(Scheme::SignFlip, &w, &mask, 32, CvmEngine::Direct).unwrap();
        let xbar = ProgrammedCrossbar::program(&l, &CrossbarConfig::for_layout(&l, af)).unwrap();
        let run = |v: Vec<i32>| xbar.mvm(&ActivationVector::new(af, v).unwrap()).unwrap();
        let separate: Vec<i64> = run(a1).iter().zip(run(a2)).map(|(x, y)| x + y).collect();
        prop_assert_eq!(run(sum), separate);
    }

    #[test]
    fn fault_free_simulation_is_exact(
        wf in format_strategy(8),
        af in format_strategy(8),
        rows in 1usize..130,
        cols in 1usize..5,
        seed in any::<u64>(),
    ) {
        let (w, _) = instance(wf, rows, cols, 0.0, seed);
        let mask = SafMask::fault_free(rows, cols, wf.width()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts: Vec<i32> =
            (0..rows).map(|_| rng.random_range(af.min_value()..=af.max_value())).collect();
        let want = mvm_exact(&w.values(), rows, cols, &acts).unwrap();
        let a = ActivationVector::new(af, acts).unwrap();
        for scheme in schemes_for(wf) {
            let l = map_layer(scheme, &w, &mask, 64, CvmEngine::Direct).unwrap();
            let xbar = ProgrammedCrossbar::program(&l, &CrossbarConfig::for_layout(&l, af)).unwrap();
            prop_assert_eq!(xbar.mvm(&a).unwrap(), want.clone());
        }
    }

    #[test]
    fn flip_transform_is_an_involution(sa1 in any::<u8>(), sa0 in any::<u8>(), j in any::<u8>()) {
        let p = FaultPattern::new(sa1 & !sa0, sa0).unwrap();
        let q = p.flipped(j);
        prop_assert_eq!(q.flipped(j), p);
        prop_assert_eq!(q.fault_count(), p.fault_count());
        prop_assert_eq!(q.faulty(), p.faulty());
    }

    #[test]
    fn masks_nest_across_rates(lo in 0.0f64..0.5, extra in 0.0f64..0.5, seed in any::<u64>()) {
        let spec = |rate| FaultInjectionSpec::new(rate, seed, 3);
        let a = gen_saf_mask(&spec(lo), 16, 16, 8).unwrap();
        let b = gen_saf_mask(&spec(lo + extra), 16, 16, 8).unwrap();
        for (pa, pb) in a.patterns().iter().zip(b.patterns()) {
            prop_assert_eq!(pa.faulty() & pb.faulty(), pa.faulty());
        }
    }
}
