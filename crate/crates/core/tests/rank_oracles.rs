mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use vsearch_core::eval::{mean_ndcg, single_feature_baselines};
use vsearch_core::feature::DominantColor;
use vsearch_core::rank::lambdamart::Node;
use vsearch_core::rank::{
    assemble_feature_row, fit_strengths, lambdamart_train, ndcg_from_grades, FeatureRegistry,
    LambdaMartConfig, PairwiseJudgment, QueryRowContext, RankingDataset, RankingModel,
};
use vsearch_core::synth::{CorpusSpec, SyntheticCorpus, AUX_FAMILY, PRIMARY_FAMILY};

// ---- Bradley–Terry against Newton's method ----

/// Newton ascent on the Bradley–Terry log-likelihood in log-strength space
/// with the last document pinned at 0, then shifted so the maximum is 0.
fn newton_log_strengths(w: &[Vec<f64>]) -> Vec<f64> {
    let m = w.len();
    let free = m - 1;
    let mut theta = vec![0.0f64; m];
    for _ in 0..100 {
        // Gradient and Hessian of sum over pairs of w_ab θa - n_ab ln(e^θa + e^θb).
        let mut grad = vec![0.0; free];
        let mut h = vec![vec![0.0; free]; free];
        for a in 0..free {
            for b in 0..m {
                let n = w[a][b] + w[b][a];
                if a == b || n == 0.0 {
                    continue;
                }
                let p = 1.0 / (1.0 + (theta[b] - theta[a]).exp());
                grad[a] += w[a][b] - n * p;
                h[a][a] -= n * p * (1.0 - p);
                if b < free {
                    h[a][b] += n * p * (1.0 - p);
                }
            }
        }
        let step = solve(&h, &grad.iter().map(|g| -g).collect::<Vec<_>>());
        let mut biggest = 0.0f64;
        for i in 0..free {
            theta[i] += step[i];
            biggest = biggest.max(step[i].abs());
        }
        if biggest < 1e-14 {
            break;
        }
    }
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    theta.iter().map(|t| t - max).collect()
}

/// Gaussian elimination with partial pivoting.
fn solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &v)| r.iter().copied().chain([v]).collect())
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

#[test]
fn bradley_terry_matches_a_newton_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut judgments = Vec::new();
    let mut w = vec![vec![0.0; 4]; 4];
    for _ in 0..40 {
        let a = rng.gen_range(0..4u64);
        let mut b = rng.gen_range(0..4u64);
        while b == a {
            b = rng.gen_range(0..4u64);
        }
        // Lower ids win more often.
        let (winner, loser) = if rng.gen_bool(if a < b { 0.7 } else { 0.3 }) {
            (a, b)
        } else {
            (b, a)
        };
        judgments.push(PairwiseJudgment {
            query_id: 0,
            winner: winner + 10,
            loser: loser + 10,
            tie: false,
        });
        w[winner as usize][loser as usize] += 1.0;
    }
    for a in 0..4 {
        for b in a + 1..4 {
            if w[a][b] + w[b][a] > 0.0 {
                w[a][b] += 0.005;
                w[b][a] += 0.005;
            }
        }
    }
    let oracle = newton_log_strengths(&w);
    let refs: Vec<&PairwiseJudgment> = judgments.iter().collect();
    let fit = fit_strengths(&refs);
    assert_eq!(fit.docs, [10, 11, 12, 13]);
    println!("MM {:?}\nNewton {:?}", fit.log_strength, oracle);
    for (got, want) in fit.log_strength.iter().zip(&oracle) {
        assert!((got - want).abs() < 1e-6);
    }
}

// ---- LambdaMART ----

fn names(n: usize) -> FeatureRegistry {
    FeatureRegistry::new((0..n).map(|i| format!("f{i}")).collect())
}

/// Queries whose grade is a monotone function of feature 0; the other
/// features are noise.
fn separable(queries: usize, seed: u64) -> RankingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = RankingDataset::default();
    for _ in 0..queries {
        let rows: Vec<Vec<f32>> = (0..15)
            .map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let labels = rows.iter().map(|r| (r[0] * 5.0).min(4.0) as u8).collect();
        data.push_query(rows, labels);
    }
    data
}

#[test]
fn separable_feature_is_learned_perfectly() {
    let data = separable(20, 1);
    let model = lambdamart_train(
        &data,
        &names(3),
        &LambdaMartConfig {
            min_leaf: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let ndcg = mean_ndcg(&model, &data, 5).unwrap();
    println!("training NDCG@5 {ndcg}");
    assert_eq!(ndcg, 1.0);
}

fn traverse(nodes: &[Node], row: &[f32]) -> f64 {
    let mut at = 0;
    loop {
        match nodes[at] {
            Node::Leaf { leaf } => return leaf,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                at = if row[feature] <= threshold {
                    left
                } else {
                    right
                };
            }
        }
    }
}

#[test]
fn model_scores_equal_manual_tree_walks() {
    let data = separable(10, 2);
    let model = lambdamart_train(
        &data,
        &names(3),
        &LambdaMartConfig {
            trees: 15,
            ..Default::default()
        },
    )
    .unwrap();
    let json = serde_json::to_vec(&model).unwrap();
    let model = RankingModel::from_json(&json).unwrap();
    for row in data.rows.iter().take(10) {
        let manual: f64 = model
            .trees
            .iter()
            .map(|t| model.learning_rate * traverse(&t.nodes, row))
            .sum();
        assert!((model.model_score(row).unwrap() - manual).abs() < 1e-12);
    }
}

#[test]
fn learned_ranker_beats_every_single_feature() {
    // Relevance is a hidden weighted sum of three features; two more are noise.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.15).unwrap();
    let mut make = |queries: usize| {
        let mut data = RankingDataset::default();
        for _ in 0..queries {
            let rows: Vec<Vec<f32>> = (0..20)
                .map(|_| (0..5).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let rel: Vec<f64> = rows
                .iter()
                .map(|r| {
                    1.0 * r[0] as f64 + 0.8 * r[1] as f64 - 0.6 * r[2] as f64
                        + noise.sample(&mut rng)
                })
                .collect();
            let labels = vsearch_core::rank::quintile_grades(&rel);
            data.push_query(rows, labels);
        }
        data
    };
    let (train, test) = (make(50), make(50));
    let registry = names(5);
    let model = lambdamart_train(&train, &registry, &LambdaMartConfig::default()).unwrap();
    let learned = mean_ndcg(&model, &test, 5).unwrap();
    let baselines = single_feature_baselines(registry.names(), &train, &test, 5).unwrap();
    let best = baselines.iter().map(|b| b.test_ndcg).fold(0.0, f64::max);
    println!("held-out NDCG@5: model {learned:.4}, best single feature {best:.4}");
    assert!(learned > best);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    /// Shifting every leaf of one tree moves all scores by the same amount.
    #[test]
    fn leaf_shift_preserves_every_ranking(seed in any::<u64>(), shift in -5.0f64..5.0, pick in 0usize..10) {
        let data = separable(6, seed);
        let model = lambdamart_train(&data, &names(3), &LambdaMartConfig { trees: 10, min_leaf: 2, ..Default::default() }).unwrap();
        let mut shifted = model.clone();
        let t = pick % shifted.trees.len();
        for n in shifted.trees[t].nodes.iter_mut() {
            if let Node::Leaf { leaf } = n {
                *leaf += shift;
            }
        }
        let delta = model.learning_rate * shift;
        for g in &data.groups {
            let a: Vec<f64> = data.rows[g.clone()].iter().map(|r| model.model_score(r).unwrap()).collect();
            let b: Vec<f64> = data.rows[g.clone()].iter().map(|r| shifted.model_score(r).unwrap()).collect();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((y - x - delta).abs() < 1e-9);
            }
            let order = |s: &[f64]| {
                let mut o: Vec<usize> = (0..s.len()).collect();
                o.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
                o
            };
            // Exact float ties can only be broken differently if the shift
            // changes rounding; compare on the unshifted ties.
            let (oa, ob) = (order(&a), order(&b));
            for (i, j) in oa.iter().zip(&ob) {
                prop_assert!(i == j || (a[*i] - a[*j]).abs() < 1e-9);
            }
        }
    }

    /// The full ensemble fits separable training data at least as well as its
    /// first tree alone.
    #[test]
    fn ensemble_never_worse_than_first_tree(seed in any::<u64>()) {
        let data = separable(10, seed);
        let model = lambdamart_train(&data, &names(3), &LambdaMartConfig { trees: 30, min_leaf: 2, ..Default::default() }).unwrap();
        let full = mean_ndcg(&model, &data, 5).unwrap();
        let first = mean_ndcg(&model.truncated(1), &data, 5).unwrap();
        prop_assert!(full >= first, "{} < {}", full, first);
    }

    /// NDCG stays in [0, 1] and the label-sorted order scores exactly 1.
    #[test]
    fn ndcg_bounds_and_ideal_order(grades in proptest::collection::vec(0u8..5, 1..30), k in 1usize..12) {
        let v = ndcg_from_grades(&grades, k).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        let mut sorted = grades.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        prop_assert_eq!(ndcg_from_grades(&sorted, k).unwrap(), 1.0);
    }
}

// ---- feature rows ----

/// `ln(1 + D/df)` summed as idf² over shared lower-cased tokens, with df
/// counted directly over the corpus texts.
fn text_oracle(query: &str, doc: &str, texts: &[String]) -> f64 {
    let toks = |s: &str| {
        let mut v: Vec<String> = s
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        v.sort();
        v.dedup();
        v
    };
    let d = toks(doc);
    toks(query)
        .into_iter()
        .filter(|t| d.contains(t))
        .map(|t| {
            let df = texts.iter().filter(|x| toks(x).contains(&t)).count().max(1) as f64;
            (1.0 + texts.len() as f64 / df).ln().powi(2)
        })
        .sum()
}

#[test]
fn feature_rows_match_slot_by_slot_recomputation() {
    let spec = CorpusSpec {
        clusters: 10,
        docs_per_cluster: 100,
        aux_dim: 32,
        seed: 51,
        ..CorpusSpec::default()
    };
    let corpus = SyntheticCorpus::new(spec).unwrap();
    let mut config = corpus.index_config(2, true);
    config.vw_vocab = 64;
    let index = Arc::new(corpus.build_index(&config).unwrap());
    let texts: Vec<String> = corpus.docs().map(|d| d.metadata_text).collect();
    let registry = FeatureRegistry::for_manifest(index.manifest());
    let slot = |n: &str| registry.slot(n).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..20 {
        let q = corpus.query(rng.gen_range(0..1000));
        let doc_id = rng.gen_range(0..1000u64);
        let doc = corpus.doc(doc_id);
        let ctx = QueryRowContext::new(&q.features, &index, true).unwrap();
        let (s, pos) = index.locate(doc_id).unwrap();
        let row = assemble_feature_row(&ctx, index.shard(s), pos, 3.25);

        let mut want = BTreeMap::new();
        for fam in [PRIMARY_FAMILY, AUX_FAMILY] {
            let d = common::sq(
                q.features.embedding(fam).unwrap(),
                doc.features.embedding(fam).unwrap(),
            );
            want.insert(format!("dist.{fam}"), d / (1.0 + d));
            want.insert(format!("missing.{fam}"), 0.0);
        }
        let (qc, dc): (DominantColor, DominantColor) = (
            q.features.dominant_color.unwrap(),
            doc.features.dominant_color.unwrap(),
        );
        let color = qc
            .rgb
            .iter()
            .zip(&dc.rgb)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
            / (255.0 * 3f64.sqrt());
        want.insert("dominant_color_dist".into(), color.min(1.0));
        want.insert(
            "category_match".into(),
            f64::from(u8::from(q.category == doc.category)),
        );
        want.insert(
            "text_match".into(),
            text_oracle(&q.metadata_text, &doc.metadata_text, &texts),
        );
        want.insert("l1_distance".into(), 3.25);
        for m in ["missing.dominant_color", "missing.category", "missing.text"] {
            want.insert(m.into(), 0.0);
        }
        assert_eq!(want.len(), registry.len());
        for (name, v) in want {
            let got = row.values[slot(&name)] as f64;
            assert!(
                (got - v).abs() <= 1e-4 * v.abs().max(1.0),
                "{name}: {got} vs {v}"
            );
        }
        assert!(row.mask.iter().all(|m| !m));
    }

    // A candidate compared with its own stored bundle.
    let own = index.stored_bundle(5).unwrap();
    let ctx = QueryRowContext::new(&own, &index, true).unwrap();
    let (s, pos) = index.locate(5).unwrap();
    let row = assemble_feature_row(&ctx, index.shard(s), pos, 0.0);
    for name in ["dist.emb", "dist.aux", "dominant_color_dist"] {
        assert_eq!(row.values[slot(name)], 0.0, "{name}");
    }
    assert_eq!(row.values[slot("category_match")], 1.0);

    // A query lacking the auxiliary family gets the masked default there.
    let mut partial = q_without_aux(&corpus);
    partial.category = None;
    let ctx = QueryRowContext::new(&partial, &index, true).unwrap();
    let row = assemble_feature_row(&ctx, index.shard(s), pos, 0.0);
    assert_eq!(row.values[slot("dist.aux")], 1.0);
    assert!(row.mask[slot("dist.aux")] && row.mask[slot("category_match")]);
    assert_eq!(row.values[slot("missing.aux")], 1.0);
    assert_eq!(row.values[slot("missing.category")], 1.0);
    assert_eq!(row.values[slot("missing.emb")], 0.0);
}

fn q_without_aux(corpus: &SyntheticCorpus) -> vsearch_core::feature::FeatureBundle {
    let mut b = corpus.query(3).features;
    b.embeddings.remove(AUX_FAMILY);
    b
}

#[test]
fn five_document_permutations_reach_one_only_when_sorted() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for _ in 0..30 {
        let grades: Vec<u8> = (0..5).map(|_| rng.gen_range(0..4)).collect();
        let mut perm: Vec<usize> = (0..5).collect();
        permutations(&mut perm, 0, &mut |p| {
            let g: Vec<u8> = p.iter().map(|&i| grades[i]).collect();
            let v = ndcg_from_grades(&g, 5).unwrap();
            let sorted = g.windows(2).all(|w| w[0] >= w[1]);
            if grades.iter().all(|&x| x == 0) || sorted {
                assert_eq!(v, 1.0, "{g:?}");
            } else {
                assert!(v < 1.0 - 1e-12, "{g:?} scored {v}");
            }
        });
    }
}

fn permutations(p: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
    if at == p.len() {
        f(p);
        return;
    }
    for i in at..p.len() {
        p.swap(at, i);
        permutations(p, at + 1, f);
        p.swap(at, i);
    }
}
