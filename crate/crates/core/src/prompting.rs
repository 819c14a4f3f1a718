//! Two-step importance ranking conversation with a multimodal model.
//!
//! Step one asks for a short and a long caption of the image. Step two
//! feeds both captions and the grounded objects back and asks for a
//! three-level ranking in a fixed `Lk: [ids]` grammar.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use base64::Engine;
use regex::Regex;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::image::Image;
use crate::priors::{Captions, GroundedObject, ImportanceLevel, Ranking, SemanticPriors};

pub const SHORT_MARKER: &str = "SHORT:";
pub const LONG_MARKER: &str = "LONG:";

pub const ENV_URL: &str = "SDCOMP_LMM_URL";
pub const ENV_TOKEN: &str = "SDCOMP_LMM_TOKEN";
pub const ENV_MODEL: &str = "SDCOMP_LMM_MODEL";
pub const DEFAULT_MODEL: &str = "InternVL-Chat-V1-5";

const CAPTION_PROMPT: &str = "\
You are given an image. Describe it at two levels of detail.
First write a short caption: one sentence naming the main subject of the image.
Then write a long caption: a few sentences describing every visible object, where it is, and what is happening in the scene.
Answer with exactly two lines in this format and nothing else:
SHORT: <short caption>
LONG: <long caption>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub role: Role,
    pub text: String,
    pub attach_image: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("transport: {0}")]
pub struct TransportError(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RankingParseError {
    #[error("response has no `{0}: [...]` line")]
    MissingLevel(&'static str),
    #[error("`{token}` in level {level} is not an object id")]
    BadToken { level: &'static str, token: String },
    #[error("response ranks unknown object id {0}")]
    UnknownId(u16),
    #[error("object id {0} appears in two levels")]
    DuplicateId(u16),
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("ranking prompt needs at least one object")]
    NoObjects,
    #[error("caption request failed: {0}")]
    CaptionTransport(TransportError),
    #[error("ranking request failed: {0}")]
    RankingTransport(TransportError),
    #[error("could not parse captions: {0}")]
    CaptionParse(String),
    #[error("could not parse ranking: {0}")]
    RankingParse(#[from] RankingParseError),
}

impl PromptError {
    pub fn is_transport(&self) -> bool {
        matches!(self, PromptError::CaptionTransport(_) | PromptError::RankingTransport(_))
    }
}

/// A request/response channel to a multimodal model.
///
/// One call is one request; implementations return the whole response
/// text or an error, never a partial answer.
pub trait LmmTransport {
    fn complete(&mut self, image: Option<&Image>, prompts: &[PromptText]) -> Result<String, TransportError>;
}

/// Caption request; always carries the image.
pub fn build_caption_prompt() -> PromptText {
    PromptText { role: Role::User, text: CAPTION_PROMPT.to_string(), attach_image: true }
}

/// Ranking request listing captions and one `id=… label=… bbox=[x,y,w,h]`
/// line per object in ascending id order.
pub fn build_ranking_prompt(captions: &Captions, objects: &[GroundedObject]) -> Result<PromptText, PromptError> {
    if objects.is_empty() {
        return Err(PromptError::NoObjects);
    }
    let mut sorted: Vec<&GroundedObject> = objects.iter().collect();
    sorted.sort_by_key(|o| o.id);
    let mut text = String::new();
    text.push_str("You are given an image together with two captions of it and a list of objects found in it.\n");
    text.push_str(&format!("Short caption: {}\n", captions.short));
    text.push_str(&format!("Long caption: {}\n", captions.long));
    text.push_str("Objects (bbox is [x,y,width,height] in pixels):\n");
    for o in sorted {
        let b = o.bbox;
        text.push_str(&format!("id={} label={} bbox=[{},{},{},{}]\n", o.id, o.label, b.x, b.y, b.w, b.h));
    }
    text.push_str(
        "Using the captions and the image, rank how important each object is for understanding the image. \
Put the most important objects in L1, the next in L2 and the least important in L3. \
Use only the ids listed above and put each id in at most one level; ids you leave out are treated as background.\n\
Answer with exactly three lines in this format:\n\
L1: [ids]\n\
L2: [ids]\n\
L3: [ids]",
    );
    Ok(PromptText { role: Role::User, text, attach_image: true })
}

fn marker_text<'a>(response: &'a str, marker: &str, other: &str) -> Option<&'a str> {
    let start = response.find(marker)? + marker.len();
    let rest = &response[start..];
    let end = rest.find(other).unwrap_or(rest.len());
    let text = rest[..end].trim().trim_matches('*').trim();
    (!text.is_empty()).then_some(text)
}

/// Extracts the `SHORT:` and `LONG:` captions from a caption response.
pub fn parse_caption_response(response: &str) -> Result<Captions, PromptError> {
    let short = marker_text(response, SHORT_MARKER, LONG_MARKER)
        .ok_or_else(|| PromptError::CaptionParse(format!("missing or empty {SHORT_MARKER} caption")))?;
    let long = marker_text(response, LONG_MARKER, SHORT_MARKER)
        .ok_or_else(|| PromptError::CaptionParse(format!("missing or empty {LONG_MARKER} caption")))?;
    Captions::new(short, long).map_err(|e| PromptError::CaptionParse(e.to_string()))
}

fn level_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"L([1-3])\s*:\s*\[([^\]\[]*)\]").expect("valid regex"))
}

/// Reads the three `Lk: [ids]` lines, ignoring surrounding prose. Ids the
/// response does not mention stay unranked. Only the first line per level counts.
pub fn parse_ranking_response(text: &str, known_ids: &BTreeSet<u16>) -> Result<Ranking, RankingParseError> {
    const NAMES: [&str; 3] = ["L1", "L2", "L3"];
    let mut lists: [Option<&str>; 3] = [None; 3];
    for cap in level_line_re().captures_iter(text) {
        let k = cap[1].as_bytes()[0] - b'1';
        let slot = &mut lists[k as usize];
        if slot.is_none() {
            *slot = Some(cap.get(2).expect("group 2").as_str());
        }
    }
    let mut ranking = Ranking::new();
    for ((level, name), list) in ImportanceLevel::ALL.into_iter().zip(NAMES).zip(lists) {
        let list = list.ok_or(RankingParseError::MissingLevel(name))?;
        for token in list.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let id: u16 = token
                .trim_start_matches('#')
                .parse()
                .map_err(|_| RankingParseError::BadToken { level: name, token: token.to_string() })?;
            if !known_ids.contains(&id) {
                return Err(RankingParseError::UnknownId(id));
            }
            ranking.assign(id, level).map_err(|_| RankingParseError::DuplicateId(id))?;
        }
    }
    Ok(ranking)
}

/// Runs the caption request, then the ranking request, on `transport`.
pub fn rank_via_lmm(
    transport: &mut dyn LmmTransport,
    image: &Image,
    priors: &SemanticPriors,
) -> Result<(Captions, Ranking), PromptError> {
    if priors.objects.is_empty() {
        return Err(PromptError::NoObjects);
    }
    let q1 = build_caption_prompt();
    let r1 = transport
        .complete(q1.attach_image.then_some(image), std::slice::from_ref(&q1))
        .map_err(PromptError::CaptionTransport)?;
    let captions = parse_caption_response(&r1)?;
    let q2 = build_ranking_prompt(&captions, &priors.objects)?;
    let r2 = transport
        .complete(q2.attach_image.then_some(image), std::slice::from_ref(&q2))
        .map_err(PromptError::RankingTransport)?;
    let known: BTreeSet<u16> = priors.objects.iter().map(|o| o.id).collect();
    let ranking = parse_ranking_response(&r2, &known)?;
    Ok((captions, ranking))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ReplayEntry {
    Text(String),
    Failure { error: String },
}

#[derive(Debug, Deserialize)]
struct ReplayFixture {
    responses: Vec<ReplayEntry>,
}

/// Replays canned responses in order. Fixture files look like
/// `{"responses": ["SHORT: ...\nLONG: ...", {"error": "timeout"}]}`, where
/// an `error` entry makes that call fail.
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    responses: Vec<Result<String, String>>,
    next: usize,
    requests: Vec<Vec<PromptText>>,
}

impl ReplayTransport {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ReplayTransport { responses: responses.into_iter().map(|s| Ok(s.into())).collect(), ..Default::default() }
    }

    pub fn from_fixture(text: &str) -> Result<Self, serde_json::Error> {
        let fixture: ReplayFixture = serde_json::from_str(text)?;
        let responses = fixture
            .responses
            .into_iter()
            .map(|e| match e {
                ReplayEntry::Text(t) => Ok(t),
                ReplayEntry::Failure { error } => Err(error),
            })
            .collect();
        Ok(ReplayTransport { responses, ..Default::default() })
    }

    /// Prompts received so far, one entry per call.
    pub fn requests(&self) -> &[Vec<PromptText>] {
        &self.requests
    }
}

impl LmmTransport for ReplayTransport {
    fn complete(&mut self, _image: Option<&Image>, prompts: &[PromptText]) -> Result<String, TransportError> {
        self.requests.push(prompts.to_vec());
        let entry = self
            .responses
            .get(self.next)
            .cloned()
            .ok_or_else(|| TransportError(format!("replay fixture exhausted after {} responses", self.next)))?;
        self.next += 1;
        entry.map_err(TransportError)
    }
}

/// Chat-completions style HTTP endpoint.
///
/// Posts `{model, messages: [{role, content: [text | image_url]}]}` and
/// reads `choices[0].message.content`. Images travel as base64 PNG data URLs.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    pub url: String,
    pub token: Option<String>,
    pub model: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, token: Option<String>, model: impl Into<String>) -> Self {
        HttpTransport { url: url.into(), token, model: model.into() }
    }

    /// Reads `SDCOMP_LMM_URL`, `SDCOMP_LMM_TOKEN` and `SDCOMP_LMM_MODEL`.
    /// `None` when no URL is configured.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_URL).ok().filter(|u| !u.is_empty())?;
        let token = std::env::var(ENV_TOKEN).ok().filter(|t| !t.is_empty());
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| DEFAULT_MODEL.to_string());
        Some(HttpTransport::new(url, token, model))
    }

    pub fn request_body(
        &self,
        image: Option<&Image>,
        prompts: &[PromptText],
    ) -> Result<serde_json::Value, TransportError> {
        let image_url = image
            .map(|img| {
                encode_png(img).map(|png| {
                    format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png))
                })
            })
            .transpose()?;
        let messages: Vec<serde_json::Value> = prompts
            .iter()
            .map(|p| {
                let mut content = vec![json!({"type": "text", "text": p.text})];
                if let (true, Some(url)) = (p.attach_image, &image_url) {
                    content.push(json!({"type": "image_url", "image_url": {"url": url}}));
                }
                json!({"role": p.role.as_str(), "content": content})
            })
            .collect();
        Ok(json!({"model": self.model, "messages": messages}))
    }
}

fn encode_png(img: &Image) -> Result<Vec<u8>, TransportError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width(), img.height());
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| TransportError(format!("png: {e}")))?;
        w.write_image_data(img.as_bytes()).map_err(|e| TransportError(format!("png: {e}")))?;
    }
    Ok(out)
}

impl LmmTransport for HttpTransport {
    fn complete(&mut self, image: Option<&Image>, prompts: &[PromptText]) -> Result<String, TransportError> {
        let body = self.request_body(image, prompts)?;
        let mut req = ureq::post(&self.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| TransportError(e.to_string()))?;
        let parsed: ChatResponse =
            resp.body_mut().read_json().map_err(|e| TransportError(format!("unexpected response shape: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError("response has no choices".into()))
    }
}
