use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::Value;
use splatedit_core::imaging::{decode_depth_pfm, decode_image_png, decode_mask_png, encode_depth_pfm, encode_image_png, encode_mask_png, DepthMap, Image2D, Mask2D};
use splatedit_core::inpainting::Inpainter2D;
use splatedit_core::scene::Camera;
use splatedit_core::math::Vec3;
use splatedit_core::segmentation::{MaskOracle, MaskTarget, OracleQuery, PromptPoint};
use splatedit_core::Error;
use splatedit_service::adapters::{HttpInpainter, HttpOracle};

/// Serves `app` on a background runtime; returns its base URL.
fn mock(app: Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let l = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(l.local_addr().unwrap()).unwrap();
            axum::serve(l, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn image(w: usize, h: usize) -> Image2D<f32> {
    Image2D::new(w, h, (0..w * h).map(|i| [(i % 7) as f32 / 7.0, 0.5, 0.25]).collect()).unwrap()
}

#[test]
fn oracle_round_trip() {
    let seen = Arc::new(Mutex::new(Value::Null));
    let s = seen.clone();
    let url = mock(Router::new().route(
        "/segment",
        post(move |Json(body): Json<Value>| {
            let s = s.clone();
            async move {
                let png = B64.decode(body["image_png"].as_str().unwrap()).unwrap();
                let img: Image2D<f32> = decode_image_png(&png, "req".as_ref()).unwrap();
                *s.lock().unwrap() = body;
                encode_mask_png(&Mask2D::from_fn(img.width, img.height, |x, _| x < img.width / 2)).unwrap()
            }
        }),
    ));
    let img = image(12, 8);
    let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 12, 8, 1.0).unwrap();
    let prompts = [PromptPoint::positive(2, 3)];
    let q = OracleQuery { view: 4, camera: &cam, image: &img, prompts: &prompts, target: MaskTarget::Dual };
    let mut oracle = HttpOracle::new(format!("{url}/segment"), Duration::from_secs(5)).unwrap();
    let mask = MaskOracle::<f32>::request(&mut oracle, &q).unwrap();
    assert_eq!(mask, Mask2D::from_fn(12, 8, |x, _| x < 6));
    let body = seen.lock().unwrap().clone();
    assert_eq!(body["v"], 1);
    assert_eq!(body["view"], 4);
    assert_eq!(body["target"], "dual");
    assert_eq!(body["prompts"], serde_json::json!([{"x":2,"y":3,"positive":true}]));

    let mut missing = HttpOracle::new(format!("{url}/nowhere"), Duration::from_secs(5)).unwrap();
    assert!(matches!(MaskOracle::<f32>::request(&mut missing, &q), Err(Error::Oracle { view: 4, .. })));
}

#[test]
fn oracle_size_mismatch_is_an_error() {
    let url = mock(Router::new().route("/", post(|_: Bytes| async { encode_mask_png(&Mask2D::full(3, 3)).unwrap() })));
    let img = image(12, 8);
    let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 12, 8, 1.0).unwrap();
    let q = OracleQuery { view: 0, camera: &cam, image: &img, prompts: &[], target: MaskTarget::Object };
    let mut oracle = HttpOracle::new(format!("{url}/"), Duration::from_secs(5)).unwrap();
    let err = MaskOracle::<f32>::request(&mut oracle, &q).unwrap_err();
    assert!(err.to_string().contains("3×3"), "{err}");
}

#[test]
fn inpainter_keeps_unmasked_pixels() {
    let app = Router::new()
        .route(
            "/inp/rgb",
            post(|Json(body): Json<Value>| async move {
                let m = decode_mask_png(&B64.decode(body["mask_png"].as_str().unwrap()).unwrap(), "m".as_ref()).unwrap();
                encode_image_png(&Image2D::<f32>::new(m.width, m.height, vec![[1.0, 1.0, 1.0]; m.width * m.height]).unwrap()).unwrap()
            }),
        )
        .route(
            "/inp/depth",
            post(|Json(body): Json<Value>| async move {
                let d: DepthMap<f32> = decode_depth_pfm(&B64.decode(body["depth_pfm"].as_str().unwrap()).unwrap(), "d".as_ref()).unwrap();
                let n = d.width * d.height;
                encode_depth_pfm(&DepthMap::new(d.width, d.height, vec![0.0f32; n], vec![true; n]).unwrap())
            }),
        )
        .route("/bad/rgb", post(|| async { (StatusCode::INTERNAL_SERVER_ERROR, "boom") }));
    let url = mock(app);
    let img = image(10, 6);
    let mask = Mask2D::from_fn(10, 6, |x, y| (3..6).contains(&x) && y > 1);
    let inp = HttpInpainter::new(format!("{url}/inp/"), Duration::from_secs(5)).unwrap();
    let out = inp.inpaint_rgb(&img, &mask).unwrap();
    for i in 0..60 {
        if mask.data[i] != 0 {
            assert_eq!(out.data[i], [1.0, 1.0, 1.0]);
        } else {
            assert_eq!(out.data[i], img.data[i]);
        }
    }

    let depth = DepthMap::new(10, 6, (0..60).map(|i| 1.0 + i as f32 * 0.01).collect(), (0..60).map(|i| i % 5 != 0).collect()).unwrap();
    let filled = inp.inpaint_depth(&depth, &mask).unwrap();
    for i in 0..60 {
        if mask.data[i] != 0 {
            assert_eq!((filled.data[i], filled.valid[i]), (0.0, true));
        } else {
            assert_eq!((filled.data[i], filled.valid[i]), (depth.data[i], depth.valid[i]));
        }
    }

    let bad = HttpInpainter::new(format!("{url}/bad"), Duration::from_secs(5)).unwrap();
    let err = Inpainter2D::<f32>::inpaint_rgb(&bad, &img, &mask).unwrap_err();
    assert!(matches!(&err, Error::Backend(m) if m.contains("500")), "{err}");
}
