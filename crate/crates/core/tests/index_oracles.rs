mod common;

use std::collections::HashMap;
use std::fs;
use std::sync::Arc;

use vsearch_core::index::{build_index, load_index, save_index, shard_assign, MANIFEST_FILE};
use vsearch_core::quantize::WordId;
use vsearch_core::Error;

#[test]
fn sequential_ids_spread_evenly_over_eight_shards() {
    let mut load = [0usize; 8];
    for id in 0..100_000u64 {
        load[shard_assign(id, 8)] += 1;
    }
    let mean = 100_000.0 / 8.0;
    let skew = *load.iter().max().unwrap() as f64 / mean;
    println!("shard loads {load:?}, max/mean {skew:.4}");
    assert!(skew <= 1.15);
}

#[test]
fn empty_and_single_document_indexes() {
    let corpus = common::corpus(4, 100, 1);
    let mut config = corpus.index_config(4, false);
    config.vw_vocab = 16;
    let models = Arc::new(corpus.train_models(&config).unwrap());

    let empty = build_index(Vec::new(), models.clone(), &config).unwrap();
    assert_eq!(empty.shards().len(), 4);
    assert!(empty
        .shards()
        .iter()
        .all(|s| s.doc_count() == 0 && s.posting_count() == 0));

    let one = build_index(vec![corpus.doc(7)], models, &config).unwrap();
    let counts: Vec<usize> = one.shards().iter().map(|s| s.doc_count()).collect();
    assert_eq!(counts.iter().sum::<usize>(), 1);
    assert_eq!(counts.iter().filter(|&&c| c == 1).count(), 1);
    assert_eq!(counts[shard_assign(7, 4)], 1);
}

#[test]
fn ten_thousand_docs_are_consistent_and_each_sits_in_n_postings() {
    let corpus = common::corpus(50, 200, 2);
    let config = corpus.index_config(4, false);
    let index = corpus.build_index(&config).unwrap();
    let books = index.manifest().vw_books;
    assert_eq!(index.doc_count(), 10_000);
    assert_eq!(
        index.shards().iter().map(|s| s.doc_count()).sum::<usize>(),
        10_000
    );

    let mut per_doc: HashMap<u64, Vec<WordId>> = HashMap::new();
    for shard in index.shards() {
        for (word, ids) in shard.words() {
            assert!(
                ids.windows(2).all(|w| w[0] < w[1]),
                "postings sorted and unique"
            );
            for &id in ids {
                assert!(
                    shard.position(id).is_some(),
                    "posting {id} resolves in its shard"
                );
                per_doc.entry(id).or_default().push(word);
            }
        }
    }
    assert_eq!(per_doc.len(), 10_000);
    for (id, mut words) in per_doc {
        words.sort();
        words.dedup();
        assert_eq!(words.len(), books, "doc {id}");
        let (_, expected) = index
            .models()
            .l1_reduce(corpus.doc(id).features.embedding("emb").unwrap())
            .unwrap();
        let mut expected = expected.words;
        expected.sort();
        assert_eq!(words, expected);
    }
}

#[test]
fn round_trip_answers_queries_identically_and_refuses_damage() {
    let corpus = common::corpus(10, 100, 3);
    let mut config = corpus.index_config(2, true);
    config.vw_vocab = 64;
    let index = Arc::new(corpus.build_index(&config).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_index(&index, dir.path()).unwrap();
    assert_eq!(
        manifest.shards.iter().map(|s| s.doc_count).sum::<u64>(),
        1000
    );
    let loaded = Arc::new(load_index(dir.path()).unwrap());
    assert_eq!(loaded.doc_count(), 1000);

    let (a, b) = (common::engine(index), common::engine(loaded));
    for i in 0..50 {
        let ra = a
            .search(&common::query(&a, &corpus, i, 10))
            .unwrap()
            .results;
        let rb = b
            .search(&common::query(&b, &corpus, i, 10))
            .unwrap()
            .results;
        assert!(!ra.is_empty());
        assert_eq!(ra, rb, "query {i}");
    }

    // A truncated postings file is an integrity error.
    let copy = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(dir.path()).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            fs::copy(entry.path(), copy.path().join(entry.file_name())).unwrap();
        }
    }
    fs::create_dir(copy.path().join("models")).unwrap();
    for entry in fs::read_dir(dir.path().join("models")).unwrap() {
        let entry = entry.unwrap();
        fs::copy(
            entry.path(),
            copy.path().join("models").join(entry.file_name()),
        )
        .unwrap();
    }
    let postings = copy.path().join(&manifest.shards[1].postings.file);
    let bytes = fs::read(&postings).unwrap();
    fs::write(&postings, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(
        load_index(copy.path()),
        Err(Error::Integrity { shard: 1, .. })
    ));
    fs::write(&postings, &bytes).unwrap();
    assert!(load_index(copy.path()).is_ok());

    // A manifest naming a different PQ codebook is refused.
    let mut edited = manifest.clone();
    edited.digests.pq.insert("emb".into(), "0".repeat(32));
    fs::write(
        copy.path().join(MANIFEST_FILE),
        serde_json::to_vec(&edited).unwrap(),
    )
    .unwrap();
    let err = load_index(copy.path()).unwrap_err();
    assert!(err.to_string().contains("PQ codebook"), "{err}");
}
