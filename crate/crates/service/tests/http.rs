use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use vsearch_core::feature::{extract_features, CropRect, PipelineConfig, RawImage};
use vsearch_core::index::{
    build_index, save_index, FamilyConfig, FamilyRole, ImageDoc, Index, IndexConfig, Models,
};
use vsearch_core::rank::{FeatureRegistry, LinearScorer};
use vsearch_core::retrieve::{Engine, Query};
use vsearch_core::synth::{CorpusSpec, SyntheticCorpus};
use vsearch_service::{router, AppState, SearchResponse, ServiceConfig};

const FAMILY: &str = "color_hist";

/// A PNG of four colored quadrants: a palette per cluster plus per-image
/// jitter and a little pixel noise.
fn tile(cluster: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = ChaCha8Rng::seed_from_u64(cluster as u64 * 7919);
    let palette: Vec<[i32; 3]> = (0..4)
        .map(|_| {
            [
                base.gen_range(0..256),
                base.gen_range(0..256),
                base.gen_range(0..256),
            ]
        })
        .collect();
    let jitter: Vec<i32> = (0..3).map(|_| rng.gen_range(-20..=20)).collect();
    let img = image::RgbImage::from_fn(24, 24, |x, y| {
        let q = (x / 12 + 2 * (y / 12)) as usize;
        let px: Vec<u8> = (0..3)
            .map(|c| (palette[q][c] + jitter[c] + rng.gen_range(-6..=6)).clamp(0, 255) as u8)
            .collect();
        image::Rgb([px[0], px[1], px[2]])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

struct Fixture {
    index: Arc<Index>,
    pipeline: PipelineConfig,
    images: Vec<Vec<u8>>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let pipeline = PipelineConfig::color_only();
        let images: Vec<Vec<u8>> = (0..240).map(|i| tile(i % 12, 100 + i as u64)).collect();
        let docs: Vec<ImageDoc> = images
            .iter()
            .enumerate()
            .map(|(i, bytes)| ImageDoc {
                image_id: i as u64,
                source_uri: format!("mem://{i}"),
                metadata_text: format!("cluster{} tile", i % 12),
                category: Some(format!("c{}", i % 3)),
                features: extract_features(&RawImage::decode(bytes).unwrap(), None, &pipeline)
                    .unwrap(),
            })
            .collect();
        let mut family = FamilyConfig::new(FAMILY, 192, FamilyRole::L1);
        family.pq_centroids = 16;
        let mut config = IndexConfig::new(vec![family]);
        config.shards = 2;
        config.vw_vocab = 16;
        let samples = BTreeMap::from([(
            FAMILY.to_string(),
            docs.iter()
                .map(|d| d.features.embeddings[FAMILY].clone())
                .collect(),
        )]);
        let models = Arc::new(Models::train(&config, &samples).unwrap());
        let index = Arc::new(build_index(docs, models, &config).unwrap());
        Fixture {
            index,
            pipeline,
            images,
        }
    })
}

fn engine(index: Arc<Index>) -> Engine {
    let registry = FeatureRegistry::for_manifest(index.manifest());
    Engine::new(
        index,
        Arc::new(LinearScorer::distance_baseline(&registry, FAMILY).unwrap()),
    )
    .unwrap()
}

fn state_with(engine: Engine, capacity: usize) -> Arc<AppState> {
    let config = ServiceConfig {
        cache_capacity: capacity,
        default_deadline_ms: None,
        ..ServiceConfig::default()
    };
    Arc::new(AppState::new(engine, Some(fixture().pipeline.clone()), config).unwrap())
}

fn app(capacity: usize) -> (Router, Arc<AppState>) {
    let state = state_with(engine(fixture().index.clone()), capacity);
    (router(state.clone()), state)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

fn json_req(body: Value) -> Request<Body> {
    Request::post("/v1/search")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn multipart_req(image: &[u8], fields: &[(&str, String)]) -> Request<Body> {
    let boundary = "vsearch-test-boundary";
    let mut body = Vec::new();
    body.extend_from_slice(
        format!("--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"q.png\"\r\nContent-Type: image/png\r\n\r\n").as_bytes(),
    );
    body.extend_from_slice(image);
    body.extend_from_slice(b"\r\n");
    for (name, value) in fields {
        body.extend_from_slice(format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes());
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    Request::post("/v1/search")
        .header(
            header::CONTENT_TYPE,
            format!("multipart/form-data; boundary={boundary}"),
        )
        .body(Body::from(body))
        .unwrap()
}

fn get(path: &str) -> Request<Body> {
    Request::get(path).body(Body::empty()).unwrap()
}

fn response(v: Value) -> SearchResponse {
    serde_json::from_value(v).unwrap()
}

fn doc_ids(r: &SearchResponse) -> Vec<u64> {
    r.results.iter().map(|x| x.doc_id).collect()
}

async fn occupancy(app: &Router) -> u64 {
    call(app, get("/v1/health")).await.1["cache"]["occupancy"]
        .as_u64()
        .unwrap()
}

#[tokio::test]
async fn health_reports_index_and_cache() {
    let (app, _) = app(8);
    let (status, body) = call(&app, get("/v1/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["doc_count"], 240);
    assert_eq!(body["shard_count"], 2);
    assert_eq!(body["cache"]["occupancy"], 0);
    assert_eq!(body["cache"]["capacity"], 8);
    assert_eq!(body["l1_family"], FAMILY);
    assert!(body["model_digests"]["vw"].is_string());
    assert_eq!(body["pipeline_digest"], fixture().pipeline.digest());
}

#[tokio::test]
async fn indexed_image_id_finds_itself() {
    let (app, _) = app(8);
    for id in [0u64, 37, 239] {
        let (status, body) = call(&app, json_req(json!({ "image_id": id, "top_k": 5 }))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let r = response(body);
        // Coarse histograms can tie exactly; a tie is reported as the lower id.
        let stored = |d: u64| fixture().index.stored_bundle(d).unwrap().embeddings;
        assert!(
            r.results[0].doc_id == id || stored(r.results[0].doc_id) == stored(id),
            "{id}: {:?}",
            doc_ids(&r)
        );
        assert!(!r.cache_hit);
        assert!(r.results.len() <= 5);
    }
    let (status, _) = call(&app, json_req(json!({ "image_id": 9999 }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(occupancy(&app).await, 0);
}

#[tokio::test]
async fn doc_endpoint_returns_stored_metadata() {
    let (app, _) = app(8);
    let (status, body) = call(&app, get("/v1/doc/13")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["image_id"], 13);
    assert_eq!(body["source_uri"], "mem://13");
    assert_eq!(body["metadata_text"], "cluster1 tile");
    assert_eq!(body["category"], "c1");
    assert_eq!(body["phash"].as_str().unwrap().len(), 16);
    assert_eq!(
        call(&app, get("/v1/doc/100000")).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        call(&app, get("/v1/doc/abc")).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        call(&app, get("/v1/nothing")).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn identical_upload_hits_the_cache() {
    let (app, _) = app(8);
    let image = tile(3, 999);
    let (s1, first) = call(
        &app,
        multipart_req(&image, &[("top_k", "10".into())]),
    )
    .await;
    assert_eq!(s1, StatusCode::OK, "{first}");
    assert_eq!(occupancy(&app).await, 1);
    let (_, second) = call(
        &app,
        multipart_req(&image, &[("top_k", "10".into())]),
    )
    .await;
    let (first, second) = (response(first), response(second));
    assert!(!first.cache_hit);
    assert!(second.cache_hit);
    assert_eq!(first.results, second.results);
    assert_eq!(occupancy(&app).await, 1);
    // The nearest indexed tiles come from the query's palette.
    assert!(
        first.results.iter().take(5).all(|r| r.doc_id % 12 == 3),
        "{:?}",
        doc_ids(&first)
    );
}

/// Runs the pipeline and engine directly, bypassing HTTP and the cache.
fn direct(image: &[u8], crop: Option<CropRect>, top_k: usize) -> Vec<u64> {
    let f = fixture();
    let bundle = extract_features(
        &RawImage::decode(image).unwrap(),
        crop.as_ref(),
        &f.pipeline,
    )
    .unwrap();
    let e = engine(f.index.clone());
    let mut q = Query::new(bundle, e.default_cascade());
    q.top_k = top_k;
    e.search(&q)
        .unwrap()
        .results
        .iter()
        .map(|r| r.doc_id)
        .collect()
}

#[tokio::test]
async fn different_crops_use_different_cache_entries() {
    let (app, _) = app(8);
    let image = tile(5, 4242);
    let crop = CropRect::new(0.0, 0.0, 0.5, 0.5).unwrap();
    let (_, whole) = call(&app, multipart_req(&image, &[])).await;
    let crop_field = ("crop", serde_json::to_string(&crop).unwrap());
    let (status, cropped) = call(&app, multipart_req(&image, std::slice::from_ref(&crop_field))).await;
    assert_eq!(status, StatusCode::OK, "{cropped}");
    let (whole, cropped) = (response(whole), response(cropped));
    assert!(!cropped.cache_hit);
    assert_eq!(occupancy(&app).await, 2);
    assert_eq!(doc_ids(&whole), direct(&image, None, 20));
    assert_eq!(doc_ids(&cropped), direct(&image, Some(crop), 20));
    assert_ne!(doc_ids(&whole), doc_ids(&cropped));
    let (_, again) = call(&app, multipart_req(&image, &[crop_field])).await;
    assert!(response(again).cache_hit);
    // An explicit full-image crop is the same request as no crop.
    let full = ("crop", serde_json::to_string(&CropRect::full()).unwrap());
    let (_, full) = call(&app, multipart_req(&image, &[full])).await;
    let full = response(full);
    assert!(full.cache_hit);
    assert_eq!(full.results, whole.results);
}

#[tokio::test]
async fn cache_occupancy_is_bounded_by_capacity() {
    let (app, _) = app(3);
    for i in 0..4 {
        let (status, _) = call(&app, multipart_req(&tile(i, 7000 + i as u64), &[])).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(occupancy(&app).await, (i + 1).min(3) as u64);
    }
}

#[tokio::test]
async fn cache_hits_equal_uncached_results() {
    let image = tile(8, 31337);
    let (warm, _) = app(8);
    call(&warm, multipart_req(&image, &[])).await;
    let (_, hit) = call(&warm, multipart_req(&image, &[])).await;
    let (cold, _) = app(8);
    let (_, miss) = call(&cold, multipart_req(&image, &[])).await;
    let (hit, miss) = (response(hit), response(miss));
    assert!(hit.cache_hit && !miss.cache_hit);
    assert_eq!(hit.results, miss.results);
}

#[tokio::test]
async fn embedding_queries_use_the_level1_family() {
    let (app, _) = app(8);
    let v = fixture().index.stored_bundle(42).unwrap().embeddings[FAMILY].clone();
    let (status, body) = call(
        &app,
        json_req(json!({ "embedding": v, "top_k": 3, "exact_l2": false })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(response(body).results[0].doc_id, 42);
    let (status, _) = call(&app, json_req(json!({ "embedding": [0.5, 0.25] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn malformed_requests_are_rejected_with_400() {
    let (app, _) = app(8);
    let image = tile(1, 5);
    let cases: Vec<(&str, Request<Body>)> = vec![
        (
            "not json",
            Request::post("/v1/search")
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from("{"))
                .unwrap(),
        ),
        ("no source", json_req(json!({ "top_k": 3 }))),
        (
            "two sources",
            json_req(json!({ "image_id": 1, "embedding": [1.0] })),
        ),
        (
            "unknown field",
            json_req(json!({ "image_id": 1, "topk": 3 })),
        ),
        ("zero top_k", json_req(json!({ "image_id": 1, "top_k": 0 }))),
        (
            "huge top_k",
            json_req(json!({ "image_id": 1, "top_k": 1_000_000 })),
        ),
        (
            "zero deadline",
            json_req(json!({ "image_id": 1, "deadline_ms": 0 })),
        ),
        (
            "crop on image_id",
            json_req(
                json!({ "image_id": 1, "crop": { "x0": 0.1, "y0": 0.1, "x1": 0.6, "y1": 0.6 } }),
            ),
        ),
        (
            "empty crop",
            multipart_req(
                &image,
                &[("crop", r#"{"x0":0.5,"y0":0.1,"x1":0.5,"y1":0.6}"#.into())],
            ),
        ),
        (
            "bad top_k field",
            multipart_req(&image, &[("top_k", "many".into())]),
        ),
        (
            "upload plus id",
            multipart_req(&image, &[("image_id", "3".into())]),
        ),
        (
            "plain text",
            Request::post("/v1/search")
                .header(header::CONTENT_TYPE, "text/plain")
                .body(Body::from("hi"))
                .unwrap(),
        ),
    ];
    for (name, req) in cases {
        let (status, body) = call(&app, req).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{name}: {body}");
        assert!(body["error"].is_string(), "{name}");
    }
}

#[tokio::test]
async fn undecodable_upload_is_422() {
    let (app, state) = app(8);
    let (status, body) = call(&app, multipart_req(b"definitely not an image", &[])).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert!(body["error"].as_str().unwrap().contains("decode"));
    assert!(state.cache.is_empty());
}

#[tokio::test]
async fn all_shards_missing_the_deadline_is_504() {
    let slow = engine(fixture().index.clone())
        .with_fault_hook(Arc::new(|_| Some(Duration::from_millis(400))));
    let app = router(state_with(slow, 8));
    let (status, body) = call(&app, json_req(json!({ "image_id": 1, "deadline_ms": 50 }))).await;
    assert_eq!(status, StatusCode::GATEWAY_TIMEOUT, "{body}");
    assert_eq!(body["partial"], true);
    assert_eq!(
        body["diagnostics"]["timed_out_shards"]
            .as_array()
            .unwrap()
            .len(),
        2
    );

    let half = engine(fixture().index.clone())
        .with_fault_hook(Arc::new(|s| (s == 1).then(|| Duration::from_millis(400))));
    let app = router(state_with(half, 8));
    let (status, body) = call(&app, json_req(json!({ "image_id": 1, "deadline_ms": 100 }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let r = response(body);
    assert!(r.partial);
    assert_eq!(r.diagnostics.timed_out_shards, vec![1]);
}

fn without_timings(mut v: Value) -> Value {
    v["diagnostics"]["stage_latencies_ms"] = Value::Null;
    v
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_match_serial_answers() {
    let (app, state) = app(4);
    let reqs = |i: u64| -> Request<Body> {
        match i % 3 {
            0 => json_req(json!({ "image_id": i % 240, "top_k": 7 })),
            _ => multipart_req(&tile((i % 6) as usize, 50 + i % 6), &[]),
        }
    };
    let mut serial = Vec::new();
    for i in 0..24 {
        let (status, body) = call(&app, reqs(i)).await;
        assert_eq!(status, StatusCode::OK);
        serial.push(without_timings(body));
    }
    let tasks: Vec<_> = (0..96u64)
        .map(|i| {
            let app = app.clone();
            let req = reqs(i % 24);
            tokio::spawn(async move { (i % 24, call(&app, req).await) })
        })
        .collect();
    for t in tasks {
        let (i, (status, mut body)) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        body["cache_hit"] = serial[i as usize]["cache_hit"].clone();
        assert_eq!(without_timings(body), serial[i as usize]);
        assert!(state.cache.len() <= 4);
    }
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let (app, _) = app(8);
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/v1/search")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert!(resp
        .headers()
        .contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}

#[tokio::test]
async fn uploads_need_a_pixel_level1_family() {
    // The synthetic corpus keeps its Level-1 family external, so only ids
    // and embeddings can query it.
    let corpus = SyntheticCorpus::new(CorpusSpec {
        clusters: 4,
        docs_per_cluster: 100,
        ..CorpusSpec::default()
    })
    .unwrap();
    let mut config = corpus.index_config(1, false);
    config.vw_vocab = 16;
    config.families[0].pq_centroids = 16;
    let index = Arc::new(corpus.build_index(&config).unwrap());
    let l1 = index.manifest().l1_family().to_string();
    let registry = FeatureRegistry::for_manifest(index.manifest());
    let e = Engine::new(
        index,
        Arc::new(LinearScorer::distance_baseline(&registry, &l1).unwrap()),
    )
    .unwrap();
    let no_pipeline = Arc::new(AppState::new(e.clone(), None, ServiceConfig::default()).unwrap());
    let app = router(no_pipeline);
    assert_eq!(
        call(&app, multipart_req(&tile(0, 1), &[])).await.0,
        StatusCode::BAD_REQUEST
    );
    let (status, body) = call(&app, json_req(json!({ "image_id": 5, "top_k": 1 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(response(body).results[0].doc_id, 5);
}

#[tokio::test]
async fn loads_from_config_and_serves_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    save_index(&fixture().index, dir.path().join("index")).unwrap();
    std::fs::write(
        dir.path().join("pipeline.conf"),
        "family.color_hist = builtin:color_hist\nl1_family = color_hist\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("service.toml"),
        "addr = \"127.0.0.1:1\"\nindex_path = \"index\"\npipeline = \"pipeline.conf\"\ncache_capacity = 2\n",
    )
    .unwrap();
    let config = ServiceConfig::from_file(dir.path().join("service.toml")).unwrap();
    let state = AppState::load(config).unwrap();
    assert_eq!(state.engine.index().doc_count(), 240);

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(Arc::new(state))).await });
    let text = tokio::task::spawn_blocking(move || {
        use std::io::{Read, Write};
        let mut stream = std::net::TcpStream::connect(addr).unwrap();
        stream
            .write_all(b"GET /v1/health HTTP/1.1\r\nHost: test\r\nConnection: close\r\n\r\n")
            .unwrap();
        let mut text = String::new();
        stream.read_to_string(&mut text).unwrap();
        text
    })
    .await
    .unwrap();
    assert!(text.starts_with("HTTP/1.1 200"), "{text}");
    assert!(text.contains("\"doc_count\":240"));
    assert!(text.contains("\"capacity\":2"));
}

#[test]
fn fixture_images_are_distinct() {
    let f = fixture();
    let digests: std::collections::HashSet<_> = f
        .images
        .iter()
        .map(|b| vsearch_core::feature::image::content_digest(b))
        .collect();
    assert_eq!(digests.len(), f.images.len());
}
