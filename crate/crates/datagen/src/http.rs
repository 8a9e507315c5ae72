//! JSON-over-HTTP adapters for out-of-process models.
//!
//! Every adapter POSTs one JSON document and expects one JSON document back.
//! Images travel as base64 PNG, depth maps as row-major float arrays.
//!
//! | backend   | request                                                     | response                        |
//! |-----------|-------------------------------------------------------------|---------------------------------|
//! | prompt    | `{sample_id, condition}`                                    | `{keywords: [..]}`              |
//! | depth     | `{image_png}`                                               | `{height, width, depth: [..]}`  |
//! | diffusion | `{left_png, right_png, depth_left, depth_right, height, width, prompt, keywords, condition, steps, scheduler, guidance_scale, conditioning_scale, seed, dfm}` | `{left_png, right_png}` |

use std::io::Cursor;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stereo_core::image::{encode_rgb_png, rgb_from_dynamic};
use stereo_dfm::{AttentionInterceptor, DfmSettings, SiteInfo};

use crate::depth::DepthBackend;
use crate::diffusion::{DiffusionBackend, GenerationRequest};
use crate::error::BackendError;
use crate::prompt::{PromptBackend, WeatherCondition};

const MAX_RESPONSE_BYTES: u64 = 512 << 20;

#[derive(Debug, Clone)]
struct JsonClient {
    agent: ureq::Agent,
    endpoint: String,
}

impl JsonClient {
    fn new(endpoint: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        JsonClient {
            agent: config.into(),
            endpoint: endpoint.to_string(),
        }
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, BackendError> {
        let mut resp = self.agent.post(&self.endpoint).send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => BackendError::Response(format!("{} answered HTTP {code}", self.endpoint)),
            other => BackendError::Unreachable {
                endpoint: self.endpoint.clone(),
                reason: other.to_string(),
            },
        })?;
        resp.body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_json()
            .map_err(|e| BackendError::Response(format!("{}: {e}", self.endpoint)))
    }
}

fn png_base64(img: ArrayView3<f32>) -> Result<String, BackendError> {
    let bytes = encode_rgb_png(img).map_err(|e| BackendError::Input(e.to_string()))?;
    Ok(STANDARD.encode(bytes))
}

fn decode_png_base64(s: &str) -> Result<Array3<f32>, BackendError> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| BackendError::Response(format!("bad base64 image: {e}")))?;
    let img = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| BackendError::Response(e.to_string()))?
        .decode()
        .map_err(|e| BackendError::Response(format!("undecodable image: {e}")))?;
    Ok(rgb_from_dynamic(&img))
}

fn flat(map: ArrayView2<f32>) -> Vec<f32> {
    map.iter().copied().collect()
}

#[derive(Debug, Clone)]
pub struct HttpPromptBackend {
    client: JsonClient,
}

impl HttpPromptBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        HttpPromptBackend {
            client: JsonClient::new(endpoint, timeout),
        }
    }
}

#[derive(Serialize)]
struct PromptRequest<'a> {
    sample_id: &'a str,
    condition: WeatherCondition,
}

#[derive(Deserialize)]
struct PromptResponse {
    keywords: Vec<String>,
}

impl PromptBackend for HttpPromptBackend {
    fn keywords(&self, sample_id: &str, condition: WeatherCondition) -> Result<Vec<String>, BackendError> {
        let resp: PromptResponse = self.client.call(&PromptRequest { sample_id, condition })?;
        Ok(resp.keywords)
    }
}

#[derive(Debug, Clone)]
pub struct HttpDepthBackend {
    client: JsonClient,
}

impl HttpDepthBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        HttpDepthBackend {
            client: JsonClient::new(endpoint, timeout),
        }
    }
}

#[derive(Serialize)]
struct DepthRequest {
    image_png: String,
}

#[derive(Deserialize)]
struct DepthResponse {
    height: usize,
    width: usize,
    depth: Vec<f32>,
}

impl DepthBackend for HttpDepthBackend {
    fn predict(&self, image: ArrayView3<f32>) -> Result<Array2<f32>, BackendError> {
        let resp: DepthResponse = self.client.call(&DepthRequest {
            image_png: png_base64(image)?,
        })?;
        Array2::from_shape_vec((resp.height, resp.width), resp.depth)
            .map_err(|e| BackendError::Response(format!("depth payload: {e}")))
    }
}

/// Remote two-view generator. The fusion hook runs on the server, driven by
/// the `dfm` block of the request, so no sites are exposed locally.
#[derive(Debug, Clone)]
pub struct HttpDiffusionBackend {
    client: JsonClient,
}

impl HttpDiffusionBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        HttpDiffusionBackend {
            client: JsonClient::new(endpoint, timeout),
        }
    }
}

#[derive(Serialize)]
struct DiffusionRequest<'a> {
    left_png: String,
    right_png: String,
    depth_left: Vec<f32>,
    depth_right: Vec<f32>,
    height: usize,
    width: usize,
    prompt: String,
    keywords: &'a [String],
    condition: WeatherCondition,
    steps: usize,
    scheduler: &'static str,
    guidance_scale: f64,
    conditioning_scale: f64,
    seed: u64,
    dfm: Option<&'a DfmSettings>,
}

#[derive(Deserialize)]
struct DiffusionResponse {
    left_png: String,
    right_png: String,
}

impl DiffusionBackend for HttpDiffusionBackend {
    fn sites(&self) -> Vec<SiteInfo> {
        Vec::new()
    }

    fn generate(
        &self,
        req: &GenerationRequest<'_>,
        _hook: &mut dyn AttentionInterceptor,
    ) -> Result<[Array3<f32>; 2], BackendError> {
        let (_, height, width) = req.left.dim();
        let body = DiffusionRequest {
            left_png: png_base64(req.left)?,
            right_png: png_base64(req.right)?,
            depth_left: flat(req.depth.left.view()),
            depth_right: flat(req.depth.right.view()),
            height,
            width,
            prompt: req.prompt.text(),
            keywords: &req.prompt.keywords,
            condition: req.prompt.condition,
            steps: req.steps,
            scheduler: "ddim",
            guidance_scale: req.guidance_scale,
            conditioning_scale: req.conditioning_scale,
            seed: req.seed,
            dfm: req.dfm,
        };
        let resp: DiffusionResponse = self.client.call(&body)?;
        Ok([decode_png_base64(&resp.left_png)?, decode_png_base64(&resp.right_png)?])
    }
}
