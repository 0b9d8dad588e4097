#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::routing::post;
use axum::Router;
use tilscope_core::helm::fixtures::{nucleus_rgb, paint_disk, stroma_rgb};
use tilscope_core::pyramid::{build_pyramid, TileFormat, DEFAULT_OVERLAP, DEFAULT_TILE_SIZE};
use tilscope_core::RasterImage;
use tilscope_service::config::RemoteModelConfig;
use tilscope_service::remote::{ProbabilityMap, TensorHeader};
use tilscope_service::{build_state, router, ServiceConfig};

/// Full-resolution centres of the five radius-9 nuclei in [`fixture_slide`].
pub const NUCLEI: [(i32, i32); 5] = [(300, 260), (360, 300), (420, 250), (330, 380), (450, 400)];
/// A region holding all of [`NUCLEI`].
pub const NUCLEI_REGION: (u32, u32, u32, u32) = (256, 200, 256, 256);

/// 1200×900 stroma slide with five nuclei, plus one more far away.
pub fn fixture_slide() -> RasterImage {
    let mut img = RasterImage::filled(1200, 900, stroma_rgb());
    for (x, y) in NUCLEI {
        paint_disk(&mut img, x, y, 9, nucleus_rgb());
    }
    paint_disk(&mut img, 1000, 700, 9, nucleus_rgb());
    img
}

/// Writes `fixture` (PNG tiles) and `blank` (JPEG tiles) pyramids.
pub fn write_store(root: &Path) {
    build_pyramid(fixture_slide(), DEFAULT_TILE_SIZE, DEFAULT_OVERLAP, TileFormat::Png, root, "fixture").unwrap();
    build_pyramid(
        RasterImage::filled(600, 500, [240, 240, 240]),
        DEFAULT_TILE_SIZE,
        DEFAULT_OVERLAP,
        TileFormat::Jpeg,
        root,
        "blank",
    )
    .unwrap();
}

pub async fn spawn(app: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

pub async fn spawn_service(config: &ServiceConfig) -> SocketAddr {
    spawn(router(build_state(config).unwrap())).await
}

pub const VOCAB: [&str; 3] = ["background", "inflammatory", "cancer"];

/// Probability map marking dark pixels "inflammatory" with p = 0.9.
pub fn stub_map(png: &[u8]) -> ProbabilityMap {
    let img = RasterImage::decode(png).unwrap();
    let mut values = Vec::new();
    for px in img.pixels().chunks_exact(3) {
        let dark = (px[0] as u32 + px[1] as u32 + px[2] as u32) < 3 * 150;
        values.extend_from_slice(&if dark { [0.05f32, 0.9, 0.05] } else { [0.98, 0.01, 0.01] });
    }
    ProbabilityMap {
        header: TensorHeader {
            height: img.height(),
            width: img.width(),
            classes: VOCAB.len() as u32,
        },
        values,
    }
}

pub enum StubMode {
    Good,
    /// Probabilities summing to 0.5.
    BadSums,
    /// Header claims the wrong width.
    BadShape,
    Truncated,
    ServerError,
}

pub async fn spawn_stub(mode: StubMode) -> SocketAddr {
    let mode = Arc::new(mode);
    let app = Router::new().route(
        "/infer",
        post(move |body: Bytes| {
            let mode = mode.clone();
            async move {
                let mut map = stub_map(&body);
                match *mode {
                    StubMode::Good => (axum::http::StatusCode::OK, map.encode()),
                    StubMode::BadSums => {
                        map.values.iter_mut().for_each(|v| *v *= 0.5);
                        (axum::http::StatusCode::OK, map.encode())
                    }
                    StubMode::BadShape => {
                        map.header.width += 1;
                        (axum::http::StatusCode::OK, map.encode())
                    }
                    StubMode::Truncated => {
                        let mut b = map.encode();
                        b.truncate(b.len() / 2);
                        (axum::http::StatusCode::OK, b)
                    }
                    StubMode::ServerError => (axum::http::StatusCode::INTERNAL_SERVER_ERROR, b"gpu on fire".to_vec()),
                }
            }
        }),
    );
    spawn(app).await
}

pub fn remote_entry(name: &str, addr: SocketAddr) -> RemoteModelConfig {
    RemoteModelConfig {
        name: name.into(),
        endpoint: format!("http://{addr}/infer"),
        classes: VOCAB.map(String::from).to_vec(),
        timeout_secs: Some(10),
    }
}

pub fn config(root: &Path, models: Vec<RemoteModelConfig>) -> ServiceConfig {
    ServiceConfig {
        root: root.to_path_buf(),
        models,
        ..ServiceConfig::default()
    }
}
