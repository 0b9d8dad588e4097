mod support;

use std::net::SocketAddr;

use base64::Engine;
use serde_json::{json, Value};
use support::*;
use tilscope_core::pyramid::{write_dzi, DiskPyramid, RegionSource};
use tilscope_service::AnnotationResult;

struct Resp {
    status: u16,
    headers: reqwest::header::HeaderMap,
    body: Vec<u8>,
}

impl Resp {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

async fn get(addr: SocketAddr, path: &str) -> Resp {
    let r = reqwest::get(format!("http://{addr}{path}")).await.unwrap();
    Resp {
        status: r.status().as_u16(),
        headers: r.headers().clone(),
        body: r.bytes().await.unwrap().to_vec(),
    }
}

async fn annotate(addr: SocketAddr, body: Value, query: &str) -> Resp {
    let r = reqwest::Client::new()
        .post(format!("http://{addr}/annotate{query}"))
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    Resp {
        status: r.status().as_u16(),
        headers: r.headers().clone(),
        body: r.bytes().await.unwrap().to_vec(),
    }
}

fn region_body(slide: &str, model: &str, (x, y, w, h): (u32, u32, u32, u32), level: Option<u32>) -> Value {
    let mut region = json!({"x": x, "y": y, "w": w, "h": h});
    if let Some(l) = level {
        region["level"] = json!(l);
    }
    json!({"slide_id": slide, "region": region, "model": model})
}

fn assert_counts_consistent(r: &AnnotationResult) {
    let mut tally = std::collections::BTreeMap::new();
    for d in &r.detections {
        *tally.entry(d.class_label.clone()).or_insert(0u64) += 1;
    }
    assert_eq!(tally, r.counts);
}

#[tokio::test]
async fn listing_and_tiles() {
    let dir = tempfile::tempdir().unwrap();
    write_store(dir.path());
    let addr = spawn_service(&config(dir.path(), vec![])).await;

    let slides = get(addr, "/slides").await;
    assert_eq!(slides.status, 200);
    assert_eq!(
        slides.json(),
        json!([
            {"slide_id": "blank", "width": 600, "height": 500},
            {"slide_id": "fixture", "width": 1200, "height": 900}
        ])
    );

    let dzi = get(addr, "/slides/blank.dzi").await;
    assert_eq!(dzi.status, 200);
    let on_disk = std::fs::read(dir.path().join("blank.dzi")).unwrap();
    assert_eq!(dzi.body, on_disk);
    let pyr = DiskPyramid::open(&dir.path().join("blank.dzi")).unwrap();
    assert_eq!(String::from_utf8(dzi.body).unwrap(), write_dzi(pyr.descriptor()));

    let tile = get(addr, "/slides/blank_files/10/2_1.jpeg").await;
    assert_eq!(tile.status, 200);
    assert_eq!(tile.body, std::fs::read(dir.path().join("blank_files/10/2_1.jpeg")).unwrap());
    assert_eq!(tile.headers["content-type"], "image/jpeg");
    assert_eq!(tile.headers["cache-control"], "public, max-age=31536000, immutable");
    assert_eq!(get(addr, "/slides/blank_files/10/2_1.jpeg").await.body, tile.body);

    for missing in [
        "/slides/blank_files/11/0_0.jpeg",
        "/slides/blank_files/10/3_0.jpeg",
        "/slides/blank_files/10/0_0.png",
        "/slides/nope.dzi",
        "/slides/nope_files/0/0_0.jpeg",
        "/slides/blank",
    ] {
        assert_eq!(get(addr, missing).await.status, 404, "{missing}");
    }
    let png_tile = get(addr, "/slides/fixture_files/0/0_0.png").await;
    assert_eq!((png_tile.status, png_tile.headers["content-type"].to_str().unwrap()), (200, "image/png"));
}

#[tokio::test]
async fn empty_store_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let addr = spawn_service(&config(&dir.path().join("absent"), vec![])).await;
    assert_eq!(get(addr, "/slides").await.json(), json!([]));
    assert_eq!(
        get(addr, "/models").await.json(),
        json!([{"name": "helm", "kind": "builtin", "classes": ["inflammatory"]}])
    );
}

#[tokio::test]
async fn helm_annotation_of_fixture_region() {
    let dir = tempfile::tempdir().unwrap();
    write_store(dir.path());
    let addr = spawn_service(&config(dir.path(), vec![])).await;

    let r = annotate(addr, region_body("fixture", "helm", NUCLEI_REGION, None), "").await;
    assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
    let res: AnnotationResult = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(res.counts, [("inflammatory".to_string(), 5)].into());
    assert_counts_consistent(&res);
    assert_eq!(res.region.level, 11);
    assert!(res.overlay_png.is_none());
    // full-resolution coordinates
    for d in &res.detections {
        assert!(NUCLEI
            .iter()
            .any(|&(x, y)| (d.centroid[0] - x as f64).abs() < 1.0 && (d.centroid[1] - y as f64).abs() < 1.0));
    }

    // deterministic
    let again: AnnotationResult = serde_json::from_slice(
        &annotate(addr, region_body("fixture", "helm", NUCLEI_REGION, None), "").await.body,
    )
    .unwrap();
    assert_eq!(again.detections, res.detections);

    let blank = annotate(addr, region_body("blank", "helm", (10, 10, 300, 200), None), "").await;
    let blank: AnnotationResult = serde_json::from_slice(&blank.body).unwrap();
    assert!(blank.detections.is_empty() && blank.counts.is_empty());
}

#[tokio::test]
async fn overlay_is_returned_on_request() {
    let dir = tempfile::tempdir().unwrap();
    write_store(dir.path());
    let addr = spawn_service(&config(dir.path(), vec![])).await;
    let r = annotate(addr, region_body("fixture", "helm", NUCLEI_REGION, None), "?overlay=1").await;
    let res: AnnotationResult = serde_json::from_slice(&r.body).unwrap();
    let png = base64::engine::general_purpose::STANDARD.decode(res.overlay_png.unwrap()).unwrap();
    let img = image::load_from_memory(&png).unwrap().into_rgba8();
    assert_eq!(img.dimensions(), (256, 256));
    // stroke pixels sit on the nucleus rims, interior stays clear
    let (x0, y0) = (NUCLEI_REGION.0 as i32, NUCLEI_REGION.1 as i32);
    let (cx, cy) = (NUCLEI[0].0 - x0, NUCLEI[0].1 - y0);
    assert_eq!(img.get_pixel(cx as u32, cy as u32).0[3], 0);
    let rim = (cx - 9..=cx + 9).any(|x| img.get_pixel(x as u32, cy as u32).0[3] > 0);
    assert!(rim);
    assert!(img.get_pixel(0, 0).0[3] == 0);
}

#[tokio::test]
async fn lower_level_reads_map_back_to_full_resolution() {
    let dir = tempfile::tempdir().unwrap();
    write_store(dir.path());
    let addr = spawn_service(&config(dir.path(), vec![])).await;
    let r = annotate(addr, region_body("fixture", "helm", (0, 0, 1200, 900), Some(10)), "?overlay=1").await;
    assert_eq!(r.status, 200);
    let res: AnnotationResult = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(res.region, tilscope_service::api::RegionEcho { x: 0, y: 0, w: 1200, h: 900, level: 10 });
    assert_counts_consistent(&res);
    let png = base64::engine::general_purpose::STANDARD.decode(res.overlay_png.unwrap()).unwrap();
    assert_eq!(image::load_from_memory(&png).unwrap().width(), 600);
    for d in &res.detections {
        assert!(d.centroid[0] < 1200.0 && d.centroid[1] < 900.0);
    }
}

#[tokio::test]
async fn annotate_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_store(dir.path());
    let addr = spawn_service(&config(dir.path(), vec![])).await;
    let cases = [
        (region_body("nope", "helm", (0, 0, 10, 10), None), 404),
        (region_body("fixture", "nope", (0, 0, 10, 10), None), 404),
        (region_body("fixture", "helm", (0, 0, 10, 10), Some(12)), 404),
        (region_body("fixture", "helm", (1100, 0, 200, 10), None), 400),
        (region_body("fixture", "helm", (0, 0, 0, 10), None), 400),
        (region_body("fixture", "helm", (u32::MAX, 0, 2, 2), None), 400),
    ];
    for (body, status) in cases {
        let r = annotate(addr, body.clone(), "").await;
        assert_eq!(r.status, status, "{body}");
        assert!(r.json()["error"].is_string());
    }
}

#[tokio::test]
async fn oversized_region_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    tilscope_core::pyramid::build_pyramid(
        tilscope_core::RasterImage::filled(4100, 40, [250, 250, 250]),
        254,
        1,
        tilscope_core::pyramid::TileFormat::Jpeg,
        dir.path(),
        "wide",
    )
    .unwrap();
    let addr = spawn_service(&config(dir.path(), vec![])).await;
    // 4100×40 fits under 4096² by area
    assert_eq!(annotate(addr, region_body("wide", "helm", (0, 0, 4100, 40), None), "").await.status, 200);

    let dir2 = tempfile::tempdir().unwrap();
    let mut d = tilscope_core::pyramid::PyramidDescriptor::with_defaults(5000, 5000).unwrap();
    d.format = tilscope_core::pyramid::TileFormat::Jpeg;
    std::fs::write(dir2.path().join("huge.dzi"), write_dzi(&d)).unwrap();
    let addr2 = spawn_service(&config(dir2.path(), vec![])).await;
    let r = annotate(addr2, region_body("huge", "helm", (0, 0, 4097, 4097), None), "").await;
    assert_eq!(r.status, 413);
    // the same region one level down is small enough; tiles are absent so
    // the read itself fails, but not with 413
    let r = annotate(addr2, region_body("huge", "helm", (0, 0, 4097, 4097), Some(12)), "").await;
    assert_ne!(r.status, 413);
}

#[tokio::test]
async fn remote_backend_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_store(dir.path());
    let stub = spawn_stub(StubMode::Good).await;
    let addr = spawn_service(&config(dir.path(), vec![remote_entry("stubnet", stub)])).await;

    let models = get(addr, "/models").await.json();
    assert_eq!(models.as_array().unwrap().len(), 2);
    assert_eq!(models[1]["name"], "stubnet");
    assert_eq!(models[1]["kind"], "remote");
    assert_eq!(models[1]["classes"], json!(["inflammatory", "cancer"]));

    let r = annotate(addr, region_body("fixture", "stubnet", NUCLEI_REGION, None), "").await;
    assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
    let res: AnnotationResult = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(res.counts, [("inflammatory".to_string(), 5)].into());
    assert_counts_consistent(&res);

    // the stub sees exactly what the pyramid holds
    let pyr = DiskPyramid::open(&dir.path().join("fixture.dzi")).unwrap();
    let (x, y, w, h) = NUCLEI_REGION;
    let patch = pyr.read_region(x, y, w, h, 11).unwrap();
    let local = tilscope_service::remote::map_to_detections(
        &stub_map(&patch.encode_png().unwrap()),
        &VOCAB.map(String::from),
    );
    let shifted: Vec<_> = local.iter().map(|d| d.transformed(1, [x as i32, y as i32])).collect();
    assert_eq!(shifted, res.detections);
}

#[tokio::test]
async fn malformed_backends_give_502() {
    let dir = tempfile::tempdir().unwrap();
    write_store(dir.path());
    let mut models = vec![];
    for (name, mode) in [
        ("sums", StubMode::BadSums),
        ("shape", StubMode::BadShape),
        ("short", StubMode::Truncated),
        ("crash", StubMode::ServerError),
    ] {
        models.push(remote_entry(name, spawn_stub(mode).await));
    }
    // nothing listens on port 9 of a fresh loopback alias
    models.push(tilscope_service::config::RemoteModelConfig {
        endpoint: "http://127.0.0.1:9/infer".into(),
        ..remote_entry("down", "127.0.0.1:9".parse().unwrap())
    });
    let addr = spawn_service(&config(dir.path(), models)).await;
    for name in ["sums", "shape", "short", "crash", "down"] {
        let r = annotate(addr, region_body("fixture", name, (0, 0, 64, 64), None), "").await;
        assert_eq!(r.status, 502, "{name}");
        let msg = r.json()["error"].as_str().unwrap().to_string();
        assert!(!msg.is_empty());
        if name == "crash" {
            assert!(msg.contains("gpu on fire"), "{msg}");
        }
    }
}

#[tokio::test]
async fn concurrent_requests_match_sequential() {
    let dir = tempfile::tempdir().unwrap();
    write_store(dir.path());
    let addr = spawn_service(&config(dir.path(), vec![])).await;
    let regions = [(0, 0, 600, 450), (256, 200, 256, 256), (600, 450, 600, 450), (900, 600, 300, 300)];
    let mut sequential = Vec::new();
    for r in regions {
        sequential.push(annotate(addr, region_body("fixture", "helm", r, None), "").await.json()["detections"].clone());
    }
    let handles: Vec<_> = regions
        .iter()
        .map(|&r| tokio::spawn(async move { annotate(addr, region_body("fixture", "helm", r, None), "").await.json()["detections"].clone() }))
        .collect();
    for (h, s) in handles.into_iter().zip(sequential) {
        assert_eq!(h.await.unwrap(), s);
    }
}

#[test]
fn duplicate_model_names_refuse_startup() {
    let dir = tempfile::tempdir().unwrap();
    let addr: SocketAddr = "127.0.0.1:1".parse().unwrap();
    let cfg = config(dir.path(), vec![remote_entry("a", addr), remote_entry("a", addr)]);
    let err = tilscope_service::build_state(&cfg).unwrap_err();
    assert!(err.to_string().contains("duplicate model name \"a\""), "{err}");
}

#[tokio::test]
async fn serve_binds_and_reports_address() {
    let dir = tempfile::tempdir().unwrap();
    write_store(dir.path());
    let mut cfg = config(dir.path(), vec![]);
    cfg.port = 0;
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(tilscope_service::serve(cfg, Some(tx)));
    let addr = rx.await.unwrap();
    assert_eq!(get(addr, "/slides").await.json().as_array().unwrap().len(), 2);
}
