//! Protocol conformance checks, runnable against any server that claims to
//! speak the wire protocol (the bundled mock server or an external adapter).

use std::path::Path;
use std::time::Duration;

use serde_json::{json, Value};

use super::wire;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

struct Probe {
    agent: ureq::Agent,
    base: String,
}

impl Probe {
    fn post(&self, path: &str, body: &Value) -> Result<(u16, Value), String> {
        let url = format!("{}{}", self.base, path);
        let resp = match self.agent.post(&url).set("Content-Type", "application/json").send_string(&body.to_string()) {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return Err(format!("transport: {e}")),
        };
        let status = resp.status();
        let text = resp.into_string().map_err(|e| e.to_string())?;
        let value = serde_json::from_str(&text).map_err(|e| format!("{path}: body is not JSON ({e}): {text:.80}"))?;
        Ok((status, value))
    }
}

fn vector_of(v: &Value) -> Result<Vec<f64>, String> {
    let arr = v.get("vector").and_then(Value::as_array).ok_or("missing \"vector\" array")?;
    let dim = v.get("dim").and_then(Value::as_u64).ok_or("missing integer \"dim\"")?;
    let vec: Vec<f64> = arr.iter().map(|x| x.as_f64().ok_or("non-numeric vector entry")).collect::<Result<_, _>>()?;
    if vec.len() as u64 != dim {
        return Err(format!("dim {dim} but {} entries", vec.len()));
    }
    if vec.is_empty() || vec.iter().any(|x| !x.is_finite()) {
        return Err("vector empty or non-finite".into());
    }
    Ok(vec)
}

fn unit_norm(v: &[f64]) -> Result<(), String> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-6 {
        return Err(format!("embedding not L2-normalized (norm {n})"));
    }
    Ok(())
}

fn error_shape(status: u16, body: &Value) -> Result<(), String> {
    if (200..300).contains(&status) {
        return Err(format!("expected a non-2xx status, got {status}"));
    }
    match body.get("error").and_then(Value::as_str) {
        Some(s) if !s.is_empty() => Ok(()),
        _ => Err(format!("error body lacks a non-empty \"error\" string: {body}")),
    }
}

fn check_embed_text(p: &Probe) -> Result<String, String> {
    let (s1, a) = p.post(wire::EMBED_TEXT, &json!({"text": "0.52 sec QTc"}))?;
    let (s2, b) = p.post(wire::EMBED_TEXT, &json!({"text": "9 L/min Minute Volume"}))?;
    if s1 != 200 || s2 != 200 {
        return Err(format!("statuses {s1}, {s2}"));
    }
    let (a, b) = (vector_of(&a)?, vector_of(&b)?);
    if a.len() != b.len() {
        return Err(format!("inconsistent dims {} vs {}", a.len(), b.len()));
    }
    unit_norm(&a)?;
    Ok(format!("dim {}", a.len()))
}

fn check_embed_image(p: &Probe, image: &Path) -> Result<String, String> {
    let bytes = std::fs::read(image).map_err(|e| format!("reading sample image: {e}"))?;
    let (s1, a) = p.post(wire::EMBED_IMAGE, &json!({"image_b64": wire::b64_encode(&bytes)}))?;
    let (s2, b) = p.post(wire::EMBED_IMAGE, &json!({"path": image.to_string_lossy()}))?;
    if s1 != 200 || s2 != 200 {
        return Err(format!("statuses {s1}, {s2}"));
    }
    let (a, b) = (vector_of(&a)?, vector_of(&b)?);
    if a.len() != b.len() {
        return Err(format!("base64 and path payloads gave dims {} and {}", a.len(), b.len()));
    }
    unit_norm(&a)?;
    Ok(format!("dim {}", a.len()))
}

fn check_detect(p: &Probe, image: &Path) -> Result<String, String> {
    let bytes = std::fs::read(image).map_err(|e| format!("reading sample image: {e}"))?;
    let (status, body) = p.post(wire::DETECT, &json!({"image_b64": wire::b64_encode(&bytes), "query": "Pneumonia"}))?;
    if status != 200 {
        return Err(format!("status {status}"));
    }
    let dets = body.get("detections").and_then(Value::as_array).ok_or("missing \"detections\" array")?;
    for d in dets {
        let b = d.get("box").and_then(Value::as_array).ok_or("detection lacks \"box\"")?;
        let coords: Vec<i64> = b.iter().map(|x| x.as_i64().ok_or("box coordinate is not an integer")).collect::<Result<_, _>>()?;
        if coords.len() != 4 || coords[0] >= coords[2] || coords[1] >= coords[3] {
            return Err(format!("bad box {coords:?}"));
        }
        let score = d.get("score").and_then(Value::as_f64).ok_or("detection lacks numeric \"score\"")?;
        if !(0.0..=1.0).contains(&score) {
            return Err(format!("score {score} outside [0, 1]"));
        }
    }
    Ok(format!("{} detections", dets.len()))
}

fn check_generate(p: &Probe, image: &Path) -> Result<String, String> {
    let bytes = std::fs::read(image).map_err(|e| format!("reading sample image: {e}"))?;
    let img = wire::b64_encode(&bytes);
    let body = json!({
        "segments": [
            {"type": "image", "image_b64": img},
            {"type": "text", "text": "Question: Is the patient likely to have Edema?"},
            {"type": "text", "text": "yes"},
            {"type": "image", "image_b64": img},
            {"type": "text", "text": "Question: Is the patient likely to have Edema?"}
        ],
        "max_new_tokens": 20,
        "seed": 7
    });
    let (status, resp) = p.post(wire::GENERATE, &body)?;
    if status != 200 {
        return Err(format!("status {status}"));
    }
    resp.get("text").and_then(Value::as_str).map(|t| format!("{t:?}")).ok_or_else(|| "missing \"text\" string".into())
}

fn check_errors(p: &Probe) -> Result<String, String> {
    for (path, body) in [
        (wire::EMBED_TEXT, json!({})),
        (wire::EMBED_IMAGE, json!({"image_b64": "not base64!"})),
        (wire::DETECT, json!({"query": "Edema"})),
        (wire::GENERATE, json!({"segments": "nope"})),
    ] {
        let (status, resp) = p.post(path, &body)?;
        error_shape(status, &resp).map_err(|e| format!("{path}: {e}"))?;
    }
    Ok("4 malformed requests rejected".into())
}

/// Run every check against `base_url`. `sample_image` must be a small PNG the
/// server can also read by path.
pub fn run_suite(base_url: &str, sample_image: &Path) -> Vec<Check> {
    let probe = Probe {
        agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
        base: base_url.trim_end_matches('/').to_string(),
    };
    type Probed<'a> = Box<dyn Fn() -> Result<String, String> + 'a>;
    let checks: [(&'static str, Probed); 5] = [
        ("embed_text schema and dim consistency", Box::new(|| check_embed_text(&probe))),
        ("embed_image schema, payload forms and dim consistency", Box::new(|| check_embed_image(&probe, sample_image))),
        ("detect schema and score range", Box::new(|| check_detect(&probe, sample_image))),
        ("generate schema", Box::new(|| check_generate(&probe, sample_image))),
        ("error shapes", Box::new(|| check_errors(&probe))),
    ];
    checks
        .iter()
        .map(|(name, f)| match f() {
            Ok(detail) => Check { name, passed: true, detail },
            Err(detail) => Check { name, passed: false, detail },
        })
        .collect()
}
