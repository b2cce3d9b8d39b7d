use embprobe::corpus::{label_partition, EmbeddingMatrix, FieldKind, LabelTable, Partition};
use embprobe::infometrics::{anmi, contingency, entropy, expected_mi, mutual_information, nmi, MiReport};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn partition_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..60).prop_flat_map(|n| (prop::collection::vec(0usize..6, n), prop::collection::vec(0usize..9, n)))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn metrics_are_symmetric((a, b) in partition_pair()) {
        let (pa, pb) = (Partition::from_assignments(&a), Partition::from_assignments(&b));
        let ab = MiReport::compare(&pa, &pb).unwrap();
        let ba = MiReport::compare(&pb, &pa).unwrap();
        prop_assert!(close(ab.mi, ba.mi));
        prop_assert!(close(ab.nmi, ba.nmi));
        prop_assert!(close(ab.emi, ba.emi));
        prop_assert!(close(ab.anmi, ba.anmi));
    }

    #[test]
    fn metrics_ignore_class_names((a, b) in partition_pair(), shift in 1usize..50) {
        let t = contingency(&Partition::from_assignments(&a), &Partition::from_assignments(&b)).unwrap();
        let renamed: Vec<usize> = a.iter().map(|x| (x * 7 + shift) % 1000).collect();
        let u = contingency(&Partition::from_assignments(&renamed), &Partition::from_assignments(&b)).unwrap();
        prop_assert!(close(mutual_information(&t), mutual_information(&u)));
        prop_assert!(close(nmi(&t), nmi(&u)));
        prop_assert!(close(expected_mi(&t), expected_mi(&u)));
        prop_assert!(close(anmi(&t), anmi(&u)));
    }

    #[test]
    fn mi_is_bounded_by_entropies((a, b) in partition_pair()) {
        let (pa, pb) = (Partition::from_assignments(&a), Partition::from_assignments(&b));
        let t = contingency(&pa, &pb).unwrap();
        let mi = mutual_information(&t);
        prop_assert!(mi >= -TOL);
        prop_assert!(mi <= entropy(&pa).min(entropy(&pb)) + TOL);
        let e = expected_mi(&t);
        prop_assert!(e >= -TOL && e <= entropy(&pa).min(entropy(&pb)) + TOL);
        let n = nmi(&t);
        prop_assert!((-TOL..=1.0 + TOL).contains(&n));
        prop_assert!(anmi(&t) <= 1.0 + TOL);
    }

    #[test]
    fn self_comparison_is_perfect(a in prop::collection::vec(0usize..6, 2..60)) {
        let p = Partition::from_assignments(&a);
        let r = MiReport::compare(&p, &p).unwrap();
        prop_assert!(close(r.mi, entropy(&p)));
        if p.n_classes() > 1 {
            prop_assert_eq!(r.anmi, 1.0);
        }
    }

    #[test]
    fn embeddings_round_trip_bit_exact(
        (n, d, values) in (1usize..12, 1usize..9).prop_flat_map(|(n, d)| {
            (Just(n), Just(d), prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n * d))
        })
    ) {
        let ids: Vec<String> = (0..n).map(|i| format!("utt-{i}")).collect();
        let m = EmbeddingMatrix::new(n, d, values.iter().map(|&v| f64::from(v)).collect(), ids).unwrap();
        let back = EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap();
        prop_assert_eq!(back.row_ids(), m.row_ids());
        let same = back.values().iter().zip(m.values()).all(|(x, y)| x.to_bits() == y.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn multi_label_partition_ignores_token_order(
        cells in prop::collection::vec(prop::collection::vec(0usize..4, 0..4), 2..30),
        seed in any::<u64>(),
    ) {
        let tokens = |c: &[usize]| c.iter().map(|t| format!("t{t}")).collect::<Vec<_>>();
        let render = |reverse: bool| {
            let mut body = String::from("id\tspeaker\tacts\n");
            for (i, c) in cells.iter().enumerate() {
                let mut toks = tokens(c);
                if reverse ^ (seed >> (i % 64) & 1 == 1) {
                    toks.reverse();
                }
                body.push_str(&format!("u{i}\tuser\t{}\n", toks.join("|")));
            }
            LabelTable::parse(&body, &[("acts", FieldKind::Multi)]).unwrap()
        };
        let a = label_partition(&render(false), "acts").unwrap();
        let b = label_partition(&render(true), "acts").unwrap();
        prop_assert_eq!(a, b);
    }
}
