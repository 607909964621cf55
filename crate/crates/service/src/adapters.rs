//! Blocking HTTP clients for external mask and inpainting servers.
//!
//! Mask oracle: `POST {url}` with JSON
//! `{"v":1,"view":k,"target":"object"|"dual","image_png":<base64>,"prompts":[{"x","y","positive"}]}`,
//! answered by a PNG mask of the same size.
//!
//! Inpainter: `POST {url}/rgb` with `{"v":1,"image_png":..,"mask_png":..}`
//! answered by a PNG, and `POST {url}/depth` with
//! `{"v":1,"depth_pfm":..,"mask_png":..}` answered by a PFM. Depth sent to
//! the server is already rescaled to [0, 1]; invalid pixels are sent as 0.

use std::path::Path;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Serialize;
use splatedit_core::imaging::{decode_depth_pfm, decode_image_png, decode_mask_png, encode_depth_pfm, encode_image_png, encode_mask_png, DepthMap, Image2D, Mask2D};
use splatedit_core::inpainting::Inpainter2D;
use splatedit_core::segmentation::{MaskOracle, MaskTarget, OracleQuery, PromptPoint};
use splatedit_core::{Error, Result, Scalar};

use crate::api::API_VERSION;

fn client(timeout: Duration) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Backend(e.to_string()))
}

fn post(client: &reqwest::blocking::Client, url: &str, body: &impl Serialize) -> std::result::Result<Vec<u8>, String> {
    let resp = client.post(url).json(body).send().map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp.bytes().map_err(|e| e.to_string())?;
    if !status.is_success() {
        return Err(format!("{url} answered {status}: {}", String::from_utf8_lossy(&bytes[..bytes.len().min(200)])));
    }
    Ok(bytes.to_vec())
}

#[derive(Serialize)]
struct OracleBody<'a> {
    v: u32,
    view: usize,
    target: &'static str,
    image_png: String,
    prompts: &'a [PromptPoint],
}

pub struct HttpOracle {
    pub url: String,
    client: reqwest::blocking::Client,
}

impl HttpOracle {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self> {
        Ok(Self {
            url: url.into(),
            client: client(timeout)?,
        })
    }
}

impl<T: Scalar> MaskOracle<T> for HttpOracle {
    fn request(&mut self, q: &OracleQuery<'_, T>) -> Result<Mask2D> {
        let fail = |message: String| Error::Oracle { view: q.view, message };
        let body = OracleBody {
            v: API_VERSION,
            view: q.view,
            target: match q.target {
                MaskTarget::Object => "object",
                MaskTarget::Dual => "dual",
            },
            image_png: B64.encode(encode_image_png(q.image)?),
            prompts: q.prompts,
        };
        let bytes = post(&self.client, &self.url, &body).map_err(fail)?;
        let mask = decode_mask_png(&bytes, Path::new(&self.url)).map_err(|e| fail(e.to_string()))?;
        if mask.width != q.image.width || mask.height != q.image.height {
            return Err(fail(format!("mask is {}×{}, image {}×{}", mask.width, mask.height, q.image.width, q.image.height)));
        }
        Ok(mask)
    }
}

#[derive(Serialize)]
struct RgbBody {
    v: u32,
    image_png: String,
    mask_png: String,
}

#[derive(Serialize)]
struct DepthBody {
    v: u32,
    depth_pfm: String,
    mask_png: String,
}

pub struct HttpInpainter {
    pub url: String,
    client: reqwest::blocking::Client,
}

impl HttpInpainter {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self> {
        Ok(Self {
            url: url.into().trim_end_matches('/').to_string(),
            client: client(timeout)?,
        })
    }
}

impl<T: Scalar> Inpainter2D<T> for HttpInpainter {
    fn inpaint_rgb(&self, image: &Image2D<T>, mask: &Mask2D) -> Result<Image2D<T>> {
        let url = format!("{}/rgb", self.url);
        let body = RgbBody {
            v: API_VERSION,
            image_png: B64.encode(encode_image_png(image)?),
            mask_png: B64.encode(encode_mask_png(mask)?),
        };
        let bytes = post(&self.client, &url, &body).map_err(Error::Backend)?;
        let filled: Image2D<T> = decode_image_png(&bytes, Path::new(&url))?;
        filled.check_size(image.width, image.height, "inpainted image")?;
        // the contract keeps unmasked pixels exact, which 8-bit transport cannot
        let mut out = image.clone();
        for (i, px) in out.data.iter_mut().enumerate() {
            if mask.data[i] != 0 {
                *px = filled.data[i];
            }
        }
        Ok(out)
    }

    fn inpaint_depth(&self, depth: &DepthMap<T>, mask: &Mask2D) -> Result<DepthMap<T>> {
        let url = format!("{}/depth", self.url);
        let body = DepthBody {
            v: API_VERSION,
            depth_pfm: B64.encode(encode_depth_pfm(depth)),
            mask_png: B64.encode(encode_mask_png(mask)?),
        };
        let bytes = post(&self.client, &url, &body).map_err(Error::Backend)?;
        let filled: DepthMap<T> = decode_depth_pfm(&bytes, Path::new(&url))?;
        if filled.width != depth.width || filled.height != depth.height {
            return Err(Error::Shape("inpainted depth size".into()));
        }
        let mut out = depth.clone();
        for i in 0..mask.data.len() {
            if mask.data[i] != 0 {
                // PFM zeros decode as invalid; inside the mask zero is a legal rescaled depth
                out.data[i] = filled.data[i];
                out.valid[i] = true;
            }
        }
        Ok(out)
    }
}
