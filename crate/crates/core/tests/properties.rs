use proptest::prelude::*;

use skeladapt::encoder::{encode, EncoderConfig};
use skeladapt::eval::ConfusionMatrix;
use skeladapt::model::HeadDistribution;
use skeladapt::objectives::{evaluate_losses, AlphaSchedule, LossOptions};
use skeladapt::optim::SgdConfig;
use skeladapt::skeleton::{
    parse_jsonl, parse_ntu_skeleton, split_indices, to_jsonl, write_ntu_skeleton, ActionLabel, BodyFrame, Domain,
    SkeletonSequence,
};

fn coordinate() -> impl Strategy<Value = f64> {
    prop_oneof![-1e-6..1e-6f64, -10.0..10.0f64, -1e7..1e7f64, Just(0.0), Just(-0.0)]
}

fn sequence() -> impl Strategy<Value = SkeletonSequence> {
    (1usize..6, 1usize..=2, 1usize..26)
        .prop_flat_map(|(t, b, j)| {
            prop::collection::vec(prop::collection::vec(prop::collection::vec([coordinate(), coordinate(), coordinate()], j), b), t)
        })
        .prop_map(|frames| {
            SkeletonSequence::new(
                frames.into_iter().map(|bodies| BodyFrame { bodies }).collect(),
                None,
                Domain::Source,
            )
        })
}

/// Coordinates on a 1/64 grid; sums and differences stay exact.
fn dyadic_sequence() -> impl Strategy<Value = SkeletonSequence> {
    (2usize..10, 1usize..=2, 2usize..12)
        .prop_flat_map(|(t, b, j)| {
            let c = (-128i32..128).prop_map(|v| v as f64 / 64.0);
            prop::collection::vec(prop::collection::vec(prop::collection::vec([c.clone(), c.clone(), c], j), b), t)
        })
        .prop_map(|frames| {
            SkeletonSequence::new(
                frames.into_iter().map(|bodies| BodyFrame { bodies }).collect(),
                None,
                Domain::Source,
            )
        })
}

fn distribution(k: usize) -> impl Strategy<Value = HeadDistribution> {
    prop::collection::vec(-8.0..8.0f64, 2 * k).prop_map(move |z| HeadDistribution::from_logits(&z, k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn skeleton_text_round_trip(seq in sequence()) {
        let back = parse_ntu_skeleton(&write_ntu_skeleton(&seq)).unwrap();
        prop_assert_eq!(back.frames, seq.frames);
    }

    #[test]
    fn jsonl_round_trip(seqs in prop::collection::vec(sequence(), 1..4), label in prop::option::of(0usize..60)) {
        let seqs: Vec<SkeletonSequence> = seqs
            .into_iter()
            .map(|mut s| {
                s.label = label.map(ActionLabel);
                s.view_id = 3;
                s
            })
            .collect();
        let back = parse_jsonl(&to_jsonl(&seqs).unwrap()).unwrap();
        prop_assert_eq!(back, seqs);
    }

    #[test]
    fn encoder_translation_invariant_and_bounded(
        seq in dyadic_sequence(),
        offset in [-512i32..512, -512i32..512, -512i32..512],
    ) {
        let cfg = EncoderConfig { out_height: 8, out_width: 8, ..EncoderConfig::default() };
        let a = encode(&seq, &cfg).unwrap();
        let b = encode(&seq.translated(offset.map(|v| v as f64 / 8.0)), &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn losses_invariant_to_batch_order(
        rows in prop::collection::vec((distribution(4), 0usize..4, distribution(4)), 2..8),
        rotate in 1usize..7,
    ) {
        let src: Vec<_> = rows.iter().map(|r| r.0.clone()).collect();
        let labels: Vec<_> = rows.iter().map(|r| ActionLabel(r.1)).collect();
        let tgt: Vec<_> = rows.iter().map(|r| r.2.clone()).collect();
        let n = rows.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + rotate) % n).rev().collect();
        let pick = |v: &[HeadDistribution]| perm.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let opts = LossOptions::default();
        let a = evaluate_losses(&src, &labels, &tgt, opts).unwrap();
        let b = evaluate_losses(&pick(&src), &perm.iter().map(|&i| labels[i]).collect::<Vec<_>>(), &pick(&tgt), opts).unwrap();
        for (x, y) in [(a.l_cs, b.l_cs), (a.l_ct, b.l_ct), (a.l_cst, b.l_cst), (a.l_fd, b.l_fd), (a.l_fc, b.l_fc), (a.l_e, b.l_e)] {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn losses_are_nonnegative_and_fc_bounded(
        rows in prop::collection::vec((distribution(3), 0usize..3, distribution(3)), 1..6),
    ) {
        let src: Vec<_> = rows.iter().map(|r| r.0.clone()).collect();
        let labels: Vec<_> = rows.iter().map(|r| ActionLabel(r.1)).collect();
        let tgt: Vec<_> = rows.iter().map(|r| r.2.clone()).collect();
        let v = evaluate_losses(&src, &labels, &tgt, LossOptions::default()).unwrap();
        for x in [v.l_cs, v.l_ct, v.l_cst, v.l_fd, v.l_e] {
            prop_assert!(x >= 0.0);
        }
        prop_assert!(v.l_fd >= 2.0 * std::f64::consts::LN_2 - 1e-12);
        prop_assert!(v.l_fc >= 2.0 * std::f64::consts::LN_2 - 1e-12);
        prop_assert!(v.l_e <= (6.0f64).ln() + 1e-12);
    }

    #[test]
    fn head_distribution_halves_are_distributions(d in distribution(5)) {
        let total: f64 = d.joint.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!((d.src_half.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((d.tgt_half.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((d.source_mass() + d.target_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_is_a_seeded_partition(n in 1usize..300, fraction in 0.01..0.99f64, seed in any::<u64>()) {
        let (a, b) = split_indices(n, fraction, seed).unwrap();
        prop_assert_eq!(a.len(), (fraction * n as f64).round() as usize);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(n, fraction, seed).unwrap(), (a, b));
    }

    #[test]
    fn confusion_counts(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60)) {
        let mut m = ConfusionMatrix::new(5);
        for &(t, p) in &pairs {
            m.record(ActionLabel(t), ActionLabel(p)).unwrap();
        }
        prop_assert_eq!(m.total(), pairs.len() as u64);
        for c in 0..5 {
            prop_assert_eq!(m.row_sum(c), pairs.iter().filter(|p| p.0 == c).count() as u64);
        }
        let correct = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert!((m.accuracy() - correct as f64 / pairs.len() as f64).abs() < 1e-15);
        prop_assert_eq!(ConfusionMatrix::from_csv(&m.to_csv()).unwrap(), m);
    }

    #[test]
    fn schedules_are_monotone(p in 0.0..1.0f64, q in 0.0..1.0f64, gamma in 0.1..20.0f64) {
        prop_assume!(q - p > 1e-9);
        let a = AlphaSchedule { gamma };
        prop_assert!(a.alpha(p) < a.alpha(q));
        prop_assert!((0.0..1.0).contains(&a.alpha(p)));
        let sgd = SgdConfig::default();
        prop_assert!(sgd.learning_rate(q) < sgd.learning_rate(p));
    }
}
