use hardcase_core::filter::removal_count;
use hardcase_core::{
    score_blocked, score_naive, select_top_k, BlockedOptions, CaseMode, EmbeddingMatrix,
    LabelVocab, LabeledDataset, PenaltyParams,
};
use proptest::prelude::*;

fn build(rows: &[Vec<f32>], labels: &[usize]) -> LabeledDataset {
    let names: Vec<String> = labels.iter().map(|l| format!("L{l}")).collect();
    let (vocab, ints) = LabelVocab::from_labels(&names);
    let n = rows.len();
    LabeledDataset::from_parts(
        (0..n).map(|i| format!("x{i}")).collect(),
        ints,
        vocab,
        vec![None; n],
        vec![None; n],
        EmbeddingMatrix::from_rows(rows).unwrap(),
    )
    .unwrap()
}

prop_compose! {
    fn arb_dataset()(n in 2usize..40, d in 1usize..6)
        (rows in prop::collection::vec(
            prop::collection::vec(-4.0f32..4.0, d).prop_filter("nonzero", |r| {
                r.iter().map(|x| x * x).sum::<f32>() > 1e-3
            }),
            n,
        ),
        labels in prop::collection::vec(0usize..4, n))
        -> LabeledDataset
    {
        build(&rows, &labels)
    }
}

fn arb_params() -> impl Strategy<Value = PenaltyParams> {
    (0.5f64..10.0, 0.5f64..20.0)
        .prop_map(|(a, b)| PenaltyParams::new(a, b, CaseMode::Both).unwrap())
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blocked_matches_naive(ds in arb_dataset(), p in arb_params(), bs in 1usize..9, workers in 1usize..4) {
        let naive = score_naive(&ds, &p);
        let blocked = score_blocked(&ds, &p, &BlockedOptions::new(bs, workers).unwrap()).unwrap();
        for i in 0..ds.n() {
            prop_assert!(close(naive.cp_total[i], blocked.cp_total[i], 1e-9));
            prop_assert!(close(naive.cp_case1[i], blocked.cp_case1[i], 1e-9));
            prop_assert!(close(naive.cp_case2[i], blocked.cp_case2[i], 1e-9));
        }
    }

    #[test]
    fn table_invariants(ds in arb_dataset(), p in arb_params()) {
        let t = score_blocked(&ds, &p, &BlockedOptions::new(5, 2).unwrap()).unwrap();
        let n = ds.n();
        for i in 0..n {
            prop_assert!((t.cp_case1[i] + t.cp_case2[i] - t.cp_total[i]).abs() <= 1e-9);
            prop_assert!(t.cp_total[i] >= 0.0 && t.cp_total[i] <= (n - 1) as f64);
        }
        let mut ranks = t.rank.clone();
        ranks.sort_unstable();
        prop_assert_eq!(ranks, (1..=n).collect::<Vec<_>>());
        let order = t.ranked_indices();
        for w in order.windows(2) {
            let (x, y) = (t.cp_total[w[0]], t.cp_total[w[1]]);
            prop_assert!(x > y || (x == y && w[0] < w[1]));
        }
    }

    #[test]
    fn permutation_equivariance(
        (ds, perm) in arb_dataset().prop_flat_map(|ds| {
            let n = ds.n();
            (Just(ds), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        }),
        p in arb_params(),
    ) {
        let permuted = ds.subset(&perm);
        let a = score_naive(&ds, &p);
        let b = score_naive(&permuted, &p);
        for (new_i, &old_i) in perm.iter().enumerate() {
            prop_assert!(close(a.cp_total[old_i], b.cp_total[new_i], 1e-9));
            prop_assert_eq!(&a.ids[old_i], &b.ids[new_i]);
        }
    }

    #[test]
    fn scale_invariance(ds in arb_dataset(), p in arb_params(), c in 0.01f32..100.0) {
        let emb = ds.embeddings();
        let rows: Vec<Vec<f32>> = (0..ds.n()).map(|i| emb.row(i).iter().map(|x| x * c).collect()).collect();
        let scaled = build(&rows, ds.labels());
        let a = score_naive(&ds, &p);
        let b = score_naive(&scaled, &p);
        for i in 0..ds.n() {
            // f32 rounding of the scaled inputs is the only source of difference
            prop_assert!((a.cp_total[i] - b.cp_total[i]).abs() <= 1e-4 * (ds.n() as f64));
        }
    }

    #[test]
    fn mode_additivity(ds in arb_dataset(), p in arb_params()) {
        let opts = BlockedOptions::new(4, 1).unwrap();
        let both = score_blocked(&ds, &p, &opts).unwrap();
        let c1 = score_blocked(&ds, &p.with_mode(CaseMode::Case1Only), &opts).unwrap();
        let c2 = score_blocked(&ds, &p.with_mode(CaseMode::Case2Only), &opts).unwrap();
        for i in 0..ds.n() {
            prop_assert!((both.cp_total[i] - c1.cp_total[i] - c2.cp_total[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn determinism_across_workers(ds in arb_dataset(), p in arb_params(), bs in 1usize..9) {
        let one = score_blocked(&ds, &p, &BlockedOptions::new(bs, 1).unwrap()).unwrap();
        let many = score_blocked(&ds, &p, &BlockedOptions::new(bs, 3).unwrap()).unwrap();
        prop_assert!(one.bit_identical(&many));
    }

    #[test]
    fn filter_count_and_nesting(ds in arb_dataset(), k1 in 0.0f64..=100.0, k2 in 0.0f64..=100.0) {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        let t = score_naive(&ds, &PenaltyParams::default());
        let a = select_top_k(&t, &ds, lo, 3.0).unwrap();
        let b = select_top_k(&t, &ds, hi, 3.0).unwrap();
        prop_assert_eq!(a.removed_count, removal_count(ds.n(), lo));
        prop_assert_eq!(a.removed_count, (ds.n() as f64 * lo / 100.0).floor() as usize);
        prop_assert!(a.removed_ids.iter().all(|id| b.removed_ids.contains(id)));
    }
}

#[test]
fn duplicate_conflict_gets_full_case1_penalty() {
    let rows = vec![
        vec![0.6f32, 0.8],
        vec![0.6, 0.8],
        vec![-0.8, 0.6],
        vec![0.0, -1.0],
    ];
    let ds = build(&rows, &[0, 1, 0, 1]);
    let p = PenaltyParams::default().with_mode(CaseMode::Case1Only);
    let s1 = 1.0 / (1.0 + (-5.0f64).exp());
    let t = score_naive(&ds, &p);
    let pair = hardcase_core::top_contributors(&ds, 0, &p, 1, None).unwrap();
    assert_eq!(pair[0].other_id, "x1");
    assert!((pair[0].pair_penalty - s1).abs() < 1e-12);
    assert!(t.cp_case1[0] >= s1 && t.cp_case1[1] >= s1);
    let pair = hardcase_core::top_contributors(&ds, 1, &p, 1, None).unwrap();
    assert_eq!(pair[0].other_id, "x0");
}

#[test]
fn two_identical_same_label_samples() {
    let ds = build(&[vec![0.3, 0.4], vec![0.3, 0.4]], &[0, 0]);
    let t = score_naive(&ds, &PenaltyParams::default());
    let z1 = 1.0 / (1.0 + 5.0f64.exp());
    assert!((t.cp_total[0] - 0.0066929).abs() < 1e-6);
    assert!((t.cp_total[0] - z1).abs() < 1e-12 && (t.cp_total[1] - z1).abs() < 1e-12);
}
