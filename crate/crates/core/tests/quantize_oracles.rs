mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gaussian, spearman, sq};
use vsearch_core::quantize::{kmeans, KMeansConfig, PqCodebook, VisualWordCodebook};
use vsearch_core::synth::{CorpusSpec, SyntheticCorpus};

/// Smallest mean within-group squared distance over every 3-partition.
fn best_three_partition(points: &[[f32; 2]]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % 3;
            c /= 3;
        }
        let mut sum = [[0f64; 2]; 3];
        let mut count = [0usize; 3];
        for (p, &l) in points.iter().zip(&labels) {
            sum[l][0] += p[0] as f64;
            sum[l][1] += p[1] as f64;
            count[l] += 1;
        }
        if count.contains(&0) {
            continue;
        }
        let total: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| {
                let m = [sum[l][0] / count[l] as f64, sum[l][1] / count[l] as f64];
                (p[0] as f64 - m[0]).powi(2) + (p[1] as f64 - m[1]).powi(2)
            })
            .sum();
        best = best.min(total / n as f64);
    }
    best
}

#[test]
fn kmeans_reaches_the_best_partition_of_twelve_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let centers = [[0.0f32, 0.0], [4.0, 1.0], [1.5, 5.0]];
    let points: Vec<[f32; 2]> = (0..12)
        .map(|i| {
            let c = centers[i % 3];
            [
                c[0] + rng.gen_range(-1.5..1.5),
                c[1] + rng.gen_range(-1.5..1.5),
            ]
        })
        .collect();
    let oracle = best_three_partition(&points);
    let flat: Vec<f32> = points.iter().flatten().copied().collect();
    let config = KMeansConfig {
        k: 3,
        max_iters: 50,
        seed: 4,
        restarts: 8,
        tolerance: 0.0,
    };
    let got = kmeans(&flat, 2, &config).unwrap();
    println!(
        "k-means distortion {:.6}, best partition {oracle:.6}",
        got.distortion
    );
    assert!(got.distortion <= oracle + 1e-6);
}

fn mean_reconstruction_error(pq: &PqCodebook, data: &[Vec<f32>]) -> f64 {
    data.iter()
        .map(|v| sq(v, &pq.reconstruct(&pq.encode(v).unwrap().0).unwrap()))
        .sum::<f64>()
        / data.len() as f64
}

#[test]
fn pq_error_falls_as_codebooks_grow() {
    let data = gaussian(3000, 100, 17);
    let errors: Vec<f64> = [16, 64, 256]
        .iter()
        .map(|&k| mean_reconstruction_error(&PqCodebook::train(&data, 25, k, 1).unwrap(), &data))
        .collect();
    println!("PQ reconstruction error for k = 16, 64, 256: {errors:?}");
    assert!(errors[0] > errors[1] && errors[1] > errors[2]);
}

/// Two subspaces with two centroids each. Subvectors are 4-d, so the planar
/// cases live in the first two coordinates.
fn tiny_codebook() -> PqCodebook {
    let c = [
        [1.0f32, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
    ];
    PqCodebook::from_centroids(2, 2, c.iter().flatten().copied().collect()).unwrap()
}

#[test]
fn hand_built_codebook_encodes_like_exhaustive_search() {
    let pq = tiny_codebook();
    let query = [0.9f32, 0.1, 0.0, 0.0, 0.9, 0.1, 0.0, 0.0];
    let mut expected = Vec::new();
    for i in 0..2 {
        let sub = &query[i * 4..(i + 1) * 4];
        let best = (0..2)
            .min_by(|&a, &b| sq(sub, pq.centroid(i, a)).total_cmp(&sq(sub, pq.centroid(i, b))))
            .unwrap();
        expected.push(best as u8);
    }
    assert_eq!(pq.encode(&query).unwrap().0, expected);
    assert_eq!(expected, [0, 1]);
}

#[test]
fn distance_table_matches_direct_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let centroids: Vec<f32> = (0..2 * 4 * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let pq = PqCodebook::from_centroids(2, 4, centroids).unwrap();
    let query: Vec<f32> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let table = pq.distance_table(&query).unwrap();
    for i in 0..2 {
        for j in 0..4 {
            let direct = sq(&query[i * 4..(i + 1) * 4], pq.centroid(i, j));
            assert!((table.get(i, j) as f64 - direct).abs() < 1e-6);
        }
    }
}

#[test]
fn adc_ranks_like_true_distance_on_gaussian_data() {
    let train = gaussian(4000, 100, 23);
    let pq = PqCodebook::train(&train, 25, 256, 2).unwrap();
    let queries = gaussian(1000, 100, 24);
    let points = gaussian(1000, 100, 25);
    let mut adc = Vec::new();
    let mut exact = Vec::new();
    let mut worst = 0.0f64;
    for (q, p) in queries.iter().zip(&points) {
        let code = pq.encode(p).unwrap();
        let d = pq.distance_table(q).unwrap().adc_distance(&code.0).unwrap() as f64;
        let recon = sq(q, &pq.reconstruct(&code.0).unwrap());
        worst = worst.max((d - recon).abs() / recon.max(1.0));
        adc.push(d);
        exact.push(sq(q, p));
    }
    let rho = spearman(&adc, &exact);
    println!("ADC vs reconstruction worst error {worst:.2e}; Spearman vs exact {rho:.4}");
    assert!(worst <= 1e-5);
    assert!(rho >= 0.9);
}

#[test]
fn visual_word_assignment_matches_linear_scan() {
    let train = gaussian(2000, 64, 31);
    let vw = VisualWordCodebook::train(&train, 16, 64, 5).unwrap();
    for v in gaussian(50, 64, 32) {
        let words = vw.assign(&v).unwrap();
        for (i, w) in words.words.iter().enumerate() {
            let sub = &v[i * 4..(i + 1) * 4];
            let mut best = (0, f64::INFINITY);
            for j in 0..vw.vocab() {
                let d = sq(sub, vw.centroid(i, j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            assert_eq!(w.centroid(), best.0);
        }
    }
}

/// The vocabulary is sized near the number of generative clusters; a much
/// finer vocabulary splits each cluster over several words per book.
#[test]
fn same_cluster_documents_share_a_visual_word() {
    let spec = CorpusSpec {
        clusters: 50,
        docs_per_cluster: 100,
        seed: 8,
        ..CorpusSpec::default()
    };
    let corpus = SyntheticCorpus::new(spec).unwrap();
    let mut config = corpus.index_config(1, false);
    config.vw_vocab = 64;
    let models = corpus.train_models(&config).unwrap();
    let words: Vec<_> = corpus
        .vectors(vsearch_core::synth::PRIMARY_FAMILY)
        .iter()
        .map(|v| models.l1_reduce(v).unwrap().1)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let trials = 5000;
    let mut hits = 0;
    for _ in 0..trials {
        let c = rng.gen_range(0..50);
        let a = c * 100 + rng.gen_range(0..100);
        let mut b = a;
        while b == a {
            b = c * 100 + rng.gen_range(0..100);
        }
        hits += usize::from(words[a].shared(&words[b]) >= 1);
    }
    let rate = hits as f64 / trials as f64;
    println!("same-cluster pairs sharing a word: {rate:.4}");
    assert!(rate >= 0.95);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    /// ADC is exactly the squared distance to the reconstruction, and
    /// re-encoding a reconstruction is a fixed point.
    #[test]
    fn adc_exact_and_encode_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centroids: Vec<f32> = (0..3 * 8 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pq = PqCodebook::from_centroids(3, 8, centroids).unwrap();
        let v: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let q: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let code = pq.encode(&v).unwrap();
        let recon = pq.reconstruct(&code.0).unwrap();
        let adc = pq.distance_table(&q).unwrap().adc_distance(&code.0).unwrap() as f64;
        prop_assert!((adc - sq(&q, &recon)).abs() < 1e-5);
        prop_assert_eq!(pq.encode(&recon).unwrap(), code);
    }

    /// Every Lloyd iteration leaves distortion no higher than before.
    #[test]
    fn lloyd_distortion_never_rises(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<f32> = (0..60 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let config = KMeansConfig { k, max_iters: 30, seed, restarts: 1, tolerance: 0.0 };
        let r = kmeans(&points, 3, &config).unwrap();
        for w in r.history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
    }
}
