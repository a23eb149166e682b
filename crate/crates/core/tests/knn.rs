mod common;

use common::{sim, Lcg};
use mmrec::dataset::UserItems;
use mmrec::knn::{
    fit_itemknn, interaction_rows, similarity, KnnScorer, NeighborSource, SimilarityConfig,
    SimilarityKind, SparseVec, Weighting,
};
use mmrec::model::Scorer;
use proptest::prelude::*;

fn random_binary(r: &mut Lcg, dim: usize, p: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| if r.uniform() < p { 1.0 } else { 0.0 })
        .collect()
}

fn sparse(v: &[f64]) -> SparseVec {
    SparseVec::from_pairs(
        v.iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i, *x))
            .collect(),
    )
}

/// Weighting written per cell over a dense count matrix.
fn dense_weighting(rows: &[Vec<f64>], scheme: Weighting, k1: f64, b: f64) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let df: Vec<f64> = (0..dim)
        .map(|c| rows.iter().filter(|r| r[c] != 0.0).count() as f64)
        .collect();
    let lens: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    let avg = lens.iter().sum::<f64>() / n;
    rows.iter()
        .zip(&lens)
        .map(|(r, len)| {
            (0..dim)
                .map(|c| {
                    let tf = r[c];
                    if tf == 0.0 {
                        return 0.0;
                    }
                    match scheme {
                        Weighting::None => tf,
                        Weighting::TfIdf => tf * (n / df[c]).ln(),
                        Weighting::Bm25 => {
                            let idf = ((n - df[c] + 0.5) / (df[c] + 0.5) + 1.0).ln();
                            idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg))
                        }
                    }
                })
                .collect()
        })
        .collect()
}

fn oracle_sim(
    kind: SimilarityKind,
    a: &[f64],
    b: &[f64],
    wa: &[f64],
    wb: &[f64],
    cfg: &SimilarityConfig,
) -> f64 {
    match kind {
        SimilarityKind::Dot => sim::dot(wa, wb),
        SimilarityKind::Cosine => sim::cosine(wa, wb),
        SimilarityKind::Jaccard => sim::jaccard(a, b),
        SimilarityKind::Tversky => sim::tversky(a, b, cfg.alpha, cfg.beta),
        SimilarityKind::Asym => sim::asym(a, b, cfg.alpha),
    }
}

#[test]
fn neighbor_lists_match_brute_force() {
    let mut r = Lcg(31);
    for trial in 0..40 {
        let (n, dim) = (5 + r.below(25), 3 + r.below(20));
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        if r.uniform() < 0.3 {
                            (1 + r.below(3)) as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let kind = SimilarityKind::ALL[trial % 5];
        let weighting = Weighting::ALL[(trial / 5) % 3];
        let k = 1 + r.below(8);
        let cfg = SimilarityConfig::new(kind, k).with_weighting(weighting);
        let model = fit_itemknn(
            &rows.iter().map(|v| sparse(v)).collect::<Vec<_>>(),
            &cfg,
            NeighborSource::Attributes,
        )
        .unwrap();
        let w = dense_weighting(&rows, weighting, cfg.bm25_k1, cfg.bm25_b);
        for i in 0..n {
            let mut brute: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, oracle_sim(kind, &rows[i], &rows[j], &w[i], &w[j], &cfg)))
                .filter(|&(_, s)| s > 0.0)
                .collect();
            brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            brute.truncate(k.min(n - 1));
            let got = model.neighbors(i);
            assert_eq!(got.len(), brute.len(), "{kind} {weighting} item {i}");
            for (g, b) in got.iter().zip(&brute) {
                assert!(
                    (g.1 - b.1).abs() < 1e-9,
                    "{kind} {weighting}: {g:?} vs {b:?}"
                );
                let direct = oracle_sim(
                    kind,
                    &rows[i],
                    &rows[g.0 as usize],
                    &w[i],
                    &w[g.0 as usize],
                    &cfg,
                );
                assert!((direct - g.1).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn scores_sum_similarities_over_history() {
    let mut r = Lcg(32);
    let (n_users, n_items) = (12, 15);
    let lists: Vec<Vec<u32>> = (0..n_users)
        .map(|_| (0..n_items as u32).filter(|_| r.uniform() < 0.3).collect())
        .collect();
    let train = UserItems::from_lists(lists.clone());
    let rows = interaction_rows(&train, n_items);
    let cfg = SimilarityConfig::new(SimilarityKind::Cosine, 4);
    let scorer = KnnScorer {
        model: fit_itemknn(&rows, &cfg, NeighborSource::Interactions).unwrap(),
        history: train,
    };
    for (u, hist) in lists.iter().enumerate() {
        let scores = scorer.score_user(u);
        for i in 0..n_items {
            let want: f64 = hist
                .iter()
                .flat_map(|&j| {
                    scorer
                        .model
                        .neighbors(i)
                        .iter()
                        .filter(move |(n, _)| *n == j)
                })
                .map(|(_, w)| w)
                .sum();
            assert!((scores[i] - want).abs() < 1e-12);
        }
    }
    assert_eq!(scorer.score_user(99), vec![0.0; n_items]);
}

#[test]
fn tversky_and_asym_reduce_to_jaccard_and_cosine() {
    let mut r = Lcg(33);
    let tv = SimilarityConfig::new(SimilarityKind::Tversky, 1).with_alpha_beta(1.0, 1.0);
    let asym = SimilarityConfig::new(SimilarityKind::Asym, 1).with_alpha_beta(0.5, 0.5);
    let jac = SimilarityConfig::new(SimilarityKind::Jaccard, 1);
    let cos = SimilarityConfig::new(SimilarityKind::Cosine, 1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let dim = 1 + r.below(40);
        let p = r.uniform();
        let (a, b) = (random_binary(&mut r, dim, p), random_binary(&mut r, dim, p));
        let (sa, sb) = (sparse(&a), sparse(&b));
        worst = worst.max((similarity(&sa, &sb, &tv) - similarity(&sa, &sb, &jac)).abs());
        worst = worst.max((similarity(&sa, &sb, &asym) - similarity(&sa, &sb, &cos)).abs());
        worst = worst.max((similarity(&sa, &sb, &cos) - sim::cosine(&a, &b)).abs());
    }
    assert!(worst < 1e-12, "max abs diff {worst}");
}

#[test]
fn weighting_rescales_rare_columns_up() {
    // Column 0 appears everywhere, column 1 only in row 0.
    let rows = vec![
        SparseVec::from_pairs(vec![(0, 1.0), (1, 1.0)]),
        SparseVec::from_pairs(vec![(0, 1.0)]),
        SparseVec::from_pairs(vec![(0, 1.0)]),
    ];
    let w = mmrec::knn::apply_weighting(&rows, Weighting::TfIdf, 1.2, 0.75);
    assert_eq!(w[0].indices(), &[1]);
    assert!((w[0].values()[0] - 3f64.ln()).abs() < 1e-12);
    let b = mmrec::knn::apply_weighting(&rows, Weighting::Bm25, 1.2, 0.75);
    assert!(b[0].values()[1] > b[0].values()[0]);
}

#[test]
fn neighbor_count_is_clamped() {
    let rows = vec![
        SparseVec::binary([0]),
        SparseVec::binary([0, 1]),
        SparseVec::binary([1]),
    ];
    let m = fit_itemknn(
        &rows,
        &SimilarityConfig::new(SimilarityKind::Jaccard, 50),
        NeighborSource::Attributes,
    )
    .unwrap();
    assert_eq!(m.neighbors(1).len(), 2);
    assert!(fit_itemknn(
        &rows,
        &SimilarityConfig::new(SimilarityKind::Jaccard, 0),
        NeighborSource::Attributes
    )
    .is_err());
}

proptest! {
    #[test]
    fn similarities_are_symmetric_and_bounded(
        a in prop::collection::btree_set(0usize..30, 0..12),
        b in prop::collection::btree_set(0usize..30, 0..12),
    ) {
        let (sa, sb) = (SparseVec::binary(a.iter().copied()), SparseVec::binary(b.iter().copied()));
        for kind in [SimilarityKind::Cosine, SimilarityKind::Jaccard] {
            let cfg = SimilarityConfig::new(kind, 1);
            let s = similarity(&sa, &sb, &cfg);
            prop_assert!((s - similarity(&sb, &sa, &cfg)).abs() < 1e-15);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        }
        if !a.is_empty() {
            let cfg = SimilarityConfig::new(SimilarityKind::Jaccard, 1);
            prop_assert!((similarity(&sa, &sa, &cfg) - 1.0).abs() < 1e-15);
        }
    }
}
