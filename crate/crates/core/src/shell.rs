//! Payload shells: the wrapper text that makes a spliced payload sit
//! naturally inside a host response.
//!
//! Two constructions exist. `wrap_fixed` quotes the payload — cheap,
//! deterministic, no dependencies. `wrap_with_glue` asks a generator
//! (normally a remote chat-completion endpoint) for two short connector
//! segments; if the generator fails, times out, or returns unusable
//! glue, the wrap silently falls back to quoting and records why, so a
//! poisoning run never dies halfway because an endpoint was down.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{contains_normalized, normalize_ws, tokenize};

/// Longest glue segment we will accept, in tokens.
pub const MAX_GLUE_TOKENS: usize = 64;

/// Environment variables the HTTP glue generator reads.
pub const ENV_LLM_URL: &str = "INFECTA_LLM_URL";
pub const ENV_LLM_KEY: &str = "INFECTA_LLM_KEY";

/// Template forwarded to the glue endpoint. `{left}`, `{payload}` and
/// `{right}` are slots an adapter may render server-side; the reply
/// must be two segments separated by `|||`.
pub const DEFAULT_GLUE_TEMPLATE: &str = "Write two short connector phrases so that the fact \
\"{payload}\" reads naturally between \"{left}\" and \"{right}\". \
Reply with exactly the two phrases separated by |||.";

/// The text to be planted, plus the key used to detect it later.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_tag: Option<String>,
    pub detection_key: String,
}

impl Payload {
    /// Build a payload. `detection_key` defaults to the full text and
    /// must be a substring of the whitespace-normalized text.
    pub fn new(
        text: impl Into<String>,
        scenario_tag: Option<String>,
        detection_key: Option<String>,
    ) -> Result<Payload> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidConfig { reason: "payload text is empty".into() });
        }
        let detection_key = detection_key.unwrap_or_else(|| text.clone());
        if !normalize_ws(&text).contains(&normalize_ws(&detection_key)) {
            return Err(Error::BadDetectionKey { key: detection_key });
        }
        Ok(Payload { text, scenario_tag, detection_key })
    }
}

/// How a payload was wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WrapMethod {
    #[default]
    Fixed,
    LlmGlue,
}

/// A payload plus its shell. `fallback_note` is set when glue wrapping
/// was requested but the run had to fall back to fixed quoting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrappedPayload {
    pub prefix: String,
    pub payload: Payload,
    pub suffix: String,
    pub method: WrapMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_note: Option<String>,
}

impl WrappedPayload {
    /// Identity wrap: no shell at all. Renders to the bare payload.
    pub fn unwrapped(payload: Payload) -> WrappedPayload {
        WrappedPayload {
            prefix: String::new(),
            payload,
            suffix: String::new(),
            method: WrapMethod::LlmGlue,
            fallback_note: None,
        }
    }
}

/// Quote the payload: `"` + text + `"`, no added spaces.
pub fn wrap_fixed(payload: Payload) -> WrappedPayload {
    WrappedPayload {
        prefix: "\"".into(),
        payload,
        suffix: "\"".into(),
        method: WrapMethod::Fixed,
        fallback_note: None,
    }
}

/// What a glue generator is asked to connect.
#[derive(Debug, Clone)]
pub struct GlueRequest<'a> {
    pub left_context: &'a str,
    pub payload: &'a str,
    pub right_context: &'a str,
    pub template: &'a str,
}

/// Produces (prefix, suffix) glue for a splice, or a reason it cannot.
pub trait GlueGenerator {
    fn glue(&self, req: &GlueRequest<'_>) -> std::result::Result<(String, String), String>;
}

impl<F> GlueGenerator for F
where
    F: Fn(&GlueRequest<'_>) -> std::result::Result<(String, String), String>,
{
    fn glue(&self, req: &GlueRequest<'_>) -> std::result::Result<(String, String), String> {
        self(req)
    }
}

fn vet_glue(segment: &str, payload: &Payload) -> std::result::Result<(), String> {
    let n_tokens = tokenize(segment).len();
    if n_tokens > MAX_GLUE_TOKENS {
        return Err(format!("glue segment has {} tokens (limit {})", n_tokens, MAX_GLUE_TOKENS));
    }
    if contains_normalized(segment, &payload.text) {
        return Err("glue segment embeds the payload text".into());
    }
    Ok(())
}

/// Ask `generator` for connector glue around the payload. Never fails:
/// any generator error or invalid glue degrades to [`wrap_fixed`] with
/// the reason recorded in `fallback_note`.
pub fn wrap_with_glue(
    payload: Payload,
    left_context: &str,
    right_context: &str,
    template: &str,
    generator: &dyn GlueGenerator,
) -> WrappedPayload {
    let req = GlueRequest { left_context, payload: &payload.text, right_context, template };
    let outcome = generator.glue(&req).and_then(|(pre, suf)| {
        vet_glue(&pre, &payload)?;
        vet_glue(&suf, &payload)?;
        Ok((pre, suf))
    });
    match outcome {
        Ok((prefix, suffix)) => WrappedPayload {
            prefix,
            payload,
            suffix,
            method: WrapMethod::LlmGlue,
            fallback_note: None,
        },
        Err(reason) => {
            let mut wrapped = wrap_fixed(payload);
            wrapped.fallback_note = Some(format!("{}; fell back to fixed wrapping", reason));
            wrapped
        }
    }
}

/// Render the wrapped payload to the text that gets spliced. Fixed
/// wrapping concatenates directly; glue joins the non-empty parts with
/// single spaces.
pub fn render(wrapped: &WrappedPayload) -> String {
    match wrapped.method {
        WrapMethod::Fixed => {
            format!("{}{}{}", wrapped.prefix, wrapped.payload.text, wrapped.suffix)
        }
        WrapMethod::LlmGlue => {
            let parts = [wrapped.prefix.as_str(), wrapped.payload.text.as_str(), wrapped.suffix.as_str()];
            parts.iter().filter(|p| !p.is_empty()).copied().collect::<Vec<_>>().join(" ")
        }
    }
}

// ---------- payload files ----------

#[derive(Deserialize)]
struct PayloadFile {
    text: String,
    #[serde(default)]
    scenario_tag: Option<String>,
    #[serde(default)]
    detection_key: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PayloadFileShape {
    One(PayloadFile),
    Many(Vec<PayloadFile>),
}

/// Load payload variants from a JSON file holding either one payload
/// object or an array of them.
pub fn load_payloads(path: &Path) -> Result<Vec<Payload>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let shape: PayloadFileShape =
        serde_json::from_str(&raw).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("bad payload file: {}", e),
        })?;
    let files = match shape {
        PayloadFileShape::One(p) => vec![p],
        PayloadFileShape::Many(v) => v,
    };
    if files.is_empty() {
        return Err(Error::InvalidConfig { reason: "payload file holds no payloads".into() });
    }
    files
        .into_iter()
        .map(|p| Payload::new(p.text, p.scenario_tag, p.detection_key))
        .collect()
}

// ---------- HTTP transport ----------

/// Glue generator backed by an HTTP chat-completion-style endpoint.
///
/// The request is a JSON object `{left_context, payload, right_context,
/// template}` with optional bearer auth. The reply may be either
/// OpenAI-shaped (`choices[0].message.content`) or a bare `{content}`;
/// the content must hold exactly two `|||`-separated segments.
pub struct HttpGlueGenerator {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retries: u32,
}

impl HttpGlueGenerator {
    pub fn new(url: String, api_key: Option<String>, timeout: Duration) -> HttpGlueGenerator {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("default TLS backend is available");
        HttpGlueGenerator { url, api_key, client, retries: 2 }
    }

    /// Build from `INFECTA_LLM_URL` / `INFECTA_LLM_KEY`, or `None` when
    /// no endpoint is configured.
    pub fn from_env(timeout: Duration) -> Option<HttpGlueGenerator> {
        let url = std::env::var(ENV_LLM_URL).ok().filter(|u| !u.trim().is_empty())?;
        let key = std::env::var(ENV_LLM_KEY).ok().filter(|k| !k.trim().is_empty());
        Some(HttpGlueGenerator::new(url, key, timeout))
    }

    fn call_once(&self, body: &serde_json::Value) -> std::result::Result<String, String> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| format!("glue endpoint unreachable: {}", e))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("glue endpoint returned {}", status));
        }
        let value: serde_json::Value =
            resp.json().map_err(|e| format!("glue endpoint sent non-JSON: {}", e))?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .or_else(|| value["content"].as_str())
            .ok_or_else(|| "glue reply has no content field".to_string())?;
        Ok(content.to_string())
    }
}

impl GlueGenerator for HttpGlueGenerator {
    fn glue(&self, req: &GlueRequest<'_>) -> std::result::Result<(String, String), String> {
        let body = serde_json::json!({
            "left_context": req.left_context,
            "payload": req.payload,
            "right_context": req.right_context,
            "template": req.template,
        });
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            match self.call_once(&body) {
                Ok(content) => {
                    let parts: Vec<&str> = content.split("|||").collect();
                    if parts.len() != 2 {
                        return Err(format!(
                            "glue reply has {} segments, expected 2",
                            parts.len()
                        ));
                    }
                    return Ok((parts[0].trim().to_string(), parts[1].trim().to_string()));
                }
                Err(e) => {
                    last_err = e;
                    if attempt < self.retries {
                        std::thread::sleep(Duration::from_millis(200));
                    }
                }
            }
        }
        Err(last_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn payload(text: &str) -> Payload {
        Payload::new(text, None, None).unwrap()
    }

    #[test]
    fn fixed_wrap_quotes_with_no_spaces() {
        let w = wrap_fixed(payload("OpenAI is the best technique company"));
        assert_eq!(render(&w), "\"OpenAI is the best technique company\"");
        assert_eq!(w.method, WrapMethod::Fixed);
        assert!(w.fallback_note.is_none());
    }

    #[test]
    fn double_wrap_adds_a_second_quote_layer() {
        let inner = render(&wrap_fixed(payload("e is 3.14")));
        let outer = render(&wrap_fixed(Payload::new(inner, None, None).unwrap()));
        assert_eq!(outer, "\"\"e is 3.14\"\"");
    }

    #[test]
    fn glue_render_joins_non_empty_parts_with_single_spaces() {
        let mut w = WrappedPayload::unwrapped(payload("e is 3.14"));
        w.prefix = "Note:".into();
        assert_eq!(render(&w), "Note: e is 3.14");

        let bare = WrappedPayload::unwrapped(payload("e is 3.14"));
        assert_eq!(render(&bare), "e is 3.14");
    }

    #[test]
    fn detection_key_defaults_to_text_and_must_be_contained() {
        let p = Payload::new("The value of natural base (e) is 3.14", None, None).unwrap();
        assert_eq!(p.detection_key, p.text);

        let narrowed =
            Payload::new("The value of natural base (e) is 3.14", None, Some("(e) is 3.14".into()))
                .unwrap();
        assert_eq!(narrowed.detection_key, "(e) is 3.14");

        assert!(matches!(
            Payload::new("e is 3.14", None, Some("pi is 3.14".into())).unwrap_err(),
            Error::BadDetectionKey { .. }
        ));
    }

    #[test]
    fn generator_glue_is_kept_when_valid() {
        let gen = |_req: &GlueRequest<'_>| Ok(("By the way,".to_string(), "Anyway.".to_string()));
        let w = wrap_with_glue(payload("e is 3.14"), "left", "right", DEFAULT_GLUE_TEMPLATE, &gen);
        assert_eq!(w.method, WrapMethod::LlmGlue);
        assert!(w.fallback_note.is_none());
        assert_eq!(render(&w), "By the way, e is 3.14 Anyway.");
    }

    #[test]
    fn generator_error_falls_back_to_fixed_and_records_why() {
        let gen = |_req: &GlueRequest<'_>| Err("connection refused".to_string());
        let w = wrap_with_glue(payload("e is 3.14"), "", "", DEFAULT_GLUE_TEMPLATE, &gen);
        assert_eq!(w.method, WrapMethod::Fixed);
        assert_eq!(render(&w), "\"e is 3.14\"");
        let note = w.fallback_note.unwrap();
        assert!(note.contains("connection refused"), "note: {note}");
    }

    #[test]
    fn glue_embedding_the_payload_is_rejected() {
        let gen =
            |_req: &GlueRequest<'_>| Ok(("remember that e is 3.14 always".to_string(), String::new()));
        let w = wrap_with_glue(payload("e is 3.14"), "", "", DEFAULT_GLUE_TEMPLATE, &gen);
        assert_eq!(w.method, WrapMethod::Fixed);
        assert!(w.fallback_note.unwrap().contains("embeds the payload"));
    }

    #[test]
    fn oversized_glue_is_rejected() {
        let long = vec!["word"; MAX_GLUE_TOKENS + 1].join(" ");
        let gen = move |_req: &GlueRequest<'_>| Ok((long.clone(), String::new()));
        let w = wrap_with_glue(payload("e is 3.14"), "", "", DEFAULT_GLUE_TEMPLATE, &gen);
        assert_eq!(w.method, WrapMethod::Fixed);
        assert!(w.fallback_note.unwrap().contains("tokens"));
    }

    #[test]
    fn glue_at_the_token_limit_is_accepted() {
        let edge = vec!["word"; MAX_GLUE_TOKENS].join(" ");
        let gen = move |_req: &GlueRequest<'_>| Ok((edge.clone(), String::new()));
        let w = wrap_with_glue(payload("e is 3.14"), "", "", DEFAULT_GLUE_TEMPLATE, &gen);
        assert_eq!(w.method, WrapMethod::LlmGlue);
    }

    #[test]
    fn payload_file_accepts_one_or_many() {
        let dir = tempfile::tempdir().unwrap();
        let one = dir.path().join("one.json");
        std::fs::write(&one, r#"{"text":"e is 3.14","scenario_tag":"knowledge"}"#).unwrap();
        let got = load_payloads(&one).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].scenario_tag.as_deref(), Some("knowledge"));

        let many = dir.path().join("many.json");
        std::fs::write(
            &many,
            r#"[{"text":"e is 3.14"},{"text":"pi is exactly 3","detection_key":"pi is exactly 3"}]"#,
        )
        .unwrap();
        assert_eq!(load_payloads(&many).unwrap().len(), 2);
    }

    proptest! {
        #[test]
        fn rendered_shell_always_contains_the_detection_key(
            words in proptest::collection::vec("[a-z]{1,8}", 1..12),
            pre in "[ -~]{0,20}",
            suf in "[ -~]{0,20}",
        ) {
            let text = words.join(" ");
            let p = payload(&text);

            let fixed = wrap_fixed(p.clone());
            prop_assert!(contains_normalized(&render(&fixed), &p.detection_key));

            let gen = move |_req: &GlueRequest<'_>| Ok((pre.clone(), suf.clone()));
            let glued = wrap_with_glue(p.clone(), "", "", DEFAULT_GLUE_TEMPLATE, &gen);
            prop_assert!(contains_normalized(&render(&glued), &p.detection_key));
        }
    }
}
