//! Trading universes voted from repeated chat-model responses.
//!
//! Each of `calls` rounds asks the model for a fund of at least `X` stocks,
//! then asks it to reduce that answer to bare tickers. Tickers are tallied
//! once per round and the most frequent `K` form the universe. A second
//! exchange asks for weights over the chosen universe.
//!
//! Model output is not reproducible, so everything runs against a
//! [`ChatClient`]: [`ReplayClient`] plays back a recorded [`ChatTranscript`],
//! [`LiveClient`] talks to an HTTP chat-completion endpoint and
//! [`RecordingClient`] captures a live session for later replay.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::UniverseError;

/// Normalised weights must sum to one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Default number of repeated requests per universe size.
pub const DEFAULT_CALLS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    UniverseRequest,
    TickerExtract,
    WeightRequest,
    WeightExtract,
}

impl PromptId {
    pub const ALL: [PromptId; 4] = [
        PromptId::UniverseRequest,
        PromptId::TickerExtract,
        PromptId::WeightRequest,
        PromptId::WeightExtract,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::UniverseRequest => "universe_request",
            PromptId::TickerExtract => "ticker_extract",
            PromptId::WeightRequest => "weight_request",
            PromptId::WeightExtract => "weight_extract",
        }
    }

    pub fn placeholder(self) -> &'static str {
        match self {
            PromptId::UniverseRequest => "{X}",
            _ => "{input}",
        }
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptId {
    type Err = UniverseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UniverseError::Transcript(format!("unknown prompt id `{s}`")))
    }
}

const UNIVERSE_REQUEST: &str = "Using a range of investing principles taken from leading funds, create a theoretical fund comprising of at least {X} stocks (mention their tickers) from the S&P500 with the goal to outperform the S&P500 index";
const TICKER_EXTRACT: &str = "Extract only the ticker symbols of the stocks comprising the fund from the previous response: - '{input}'. In your response to this prompt, list only the ticker symbols separated by spaces";
const WEIGHT_REQUEST: &str = "Assume you're designing a theoretical model portfolio from these S&P500 stocks: {input}. Provide a hypothetical example of how you might distribute the weightage of these stocks (normalized, i.e., weights should add up to 1.00) in the portfolio to potentially outperform the S&P500 index. Also mention the underlying strategy or logic which you used to assign these weights";
const WEIGHT_EXTRACT: &str = "Extract tickers of stocks and corresponding weights as a single comma ',' separated string, with the weights expressed as floats: '{input}' ";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: PromptId,
    pub text: String,
}

impl PromptTemplate {
    /// The canonical template for `id`.
    pub fn standard(id: PromptId) -> Self {
        let text = match id {
            PromptId::UniverseRequest => UNIVERSE_REQUEST,
            PromptId::TickerExtract => TICKER_EXTRACT,
            PromptId::WeightRequest => WEIGHT_REQUEST,
            PromptId::WeightExtract => WEIGHT_EXTRACT,
        };
        Self {
            id,
            text: text.to_owned(),
        }
    }
}

/// Substitutes the template's placeholder.
pub fn render_prompt(template: &PromptTemplate, substitution: &str) -> Result<String, UniverseError> {
    let placeholder = template.id.placeholder();
    if !template.text.contains(placeholder) {
        return Err(UniverseError::MissingPlaceholder {
            template: template.id.as_str().to_owned(),
            placeholder,
        });
    }
    if substitution.trim().is_empty() {
        return Err(UniverseError::EmptySubstitution(placeholder));
    }
    Ok(template.text.replace(placeholder, substitution))
}

// ---------------------------------------------------------------------------
// Transcripts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptMode {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub call: usize,
    pub prompt_id: PromptId,
    pub prompt: String,
    pub response: String,
}

/// Ordered record of chat calls.
///
/// On disk:
///
/// ```text
/// folio-transcript v1 mode=live
/// @@ call=1 prompt_id=universe_request prompt_bytes=187 response_bytes=2034
/// <prompt: exactly prompt_bytes bytes>
/// <response: exactly response_bytes bytes>
/// @@ call=2 ...
/// ```
///
/// Both bodies are followed by one newline that is not part of the body.
/// Lines starting with `#` between entries are comments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatTranscript {
    pub mode: TranscriptMode,
    entries: Vec<TranscriptEntry>,
}

const TRANSCRIPT_MAGIC: &str = "folio-transcript v1";

impl ChatTranscript {
    pub fn new(mode: TranscriptMode) -> Self {
        Self {
            mode,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry with the next call index.
    pub fn push(&mut self, prompt_id: PromptId, prompt: String, response: String) {
        self.entries.push(TranscriptEntry {
            call: self.entries.len() + 1,
            prompt_id,
            prompt,
            response,
        });
    }

    pub fn to_text(&self) -> String {
        let mode = match self.mode {
            TranscriptMode::Live => "live",
            TranscriptMode::Replay => "replay",
        };
        let mut out = format!("{TRANSCRIPT_MAGIC} mode={mode}\n");
        for e in &self.entries {
            out.push_str(&format!(
                "@@ call={} prompt_id={} prompt_bytes={} response_bytes={}\n",
                e.call,
                e.prompt_id,
                e.prompt.len(),
                e.response.len()
            ));
            out.push_str(&e.prompt);
            out.push('\n');
            out.push_str(&e.response);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, UniverseError> {
        let bad = |msg: String| UniverseError::Transcript(msg);
        let (first, mut rest) = text.split_once('\n').unwrap_or((text, ""));
        let mode = match first.trim_end().strip_prefix(TRANSCRIPT_MAGIC).map(str::trim) {
            Some("mode=live") => TranscriptMode::Live,
            Some("mode=replay") => TranscriptMode::Replay,
            _ => return Err(bad(format!("unrecognised header line `{first}`"))),
        };
        let mut transcript = Self::new(mode);
        loop {
            let (line, after) = rest.split_once('\n').unwrap_or((rest, ""));
            if line.trim().is_empty() || line.starts_with('#') {
                if after.is_empty() && line.trim().is_empty() {
                    break;
                }
                rest = after;
                if rest.is_empty() {
                    break;
                }
                continue;
            }
            let header = line
                .strip_prefix("@@ ")
                .ok_or_else(|| bad(format!("expected an entry header, found `{line}`")))?;
            let mut fields = BTreeMap::new();
            for kv in header.split_whitespace() {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| bad(format!("malformed header field `{kv}`")))?;
                fields.insert(k, v);
            }
            let field = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("header missing `{k}`")));
            let number = |k: &str| -> Result<usize, UniverseError> {
                field(k)?
                    .parse()
                    .map_err(|_| bad(format!("header field `{k}` is not a number")))
            };
            let call = number("call")?;
            let prompt_id: PromptId = field("prompt_id")?.parse()?;
            let (prompt, after) = take_body(after, number("prompt_bytes")?, call)?;
            let (response, after) = take_body(after, number("response_bytes")?, call)?;
            if call != transcript.entries.len() + 1 {
                return Err(bad(format!(
                    "call indices must run 1, 2, ...; found {call} after {}",
                    transcript.entries.len()
                )));
            }
            transcript.push(prompt_id, prompt.to_owned(), response.to_owned());
            rest = after;
            if rest.is_empty() {
                break;
            }
        }
        Ok(transcript)
    }

    pub fn load(path: &Path) -> Result<Self, UniverseError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), UniverseError> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

fn take_body(text: &str, len: usize, call: usize) -> Result<(&str, &str), UniverseError> {
    let truncated = || UniverseError::Transcript(format!("entry {call} is truncated"));
    if text.len() < len + 1 || !text.is_char_boundary(len) {
        return Err(truncated());
    }
    let (body, rest) = text.split_at(len);
    let rest = rest.strip_prefix('\n').ok_or_else(truncated)?;
    Ok((body, rest))
}

// ---------------------------------------------------------------------------
// Clients

pub trait ChatClient {
    fn chat(&mut self, prompt_id: PromptId, prompt: &str) -> Result<String, UniverseError>;
}

/// Plays back a transcript in call order. Each call must present the same
/// prompt id and prompt text that was recorded.
#[derive(Debug, Clone)]
pub struct ReplayClient {
    transcript: ChatTranscript,
    next: usize,
}

impl ReplayClient {
    pub fn new(transcript: ChatTranscript) -> Self {
        Self { transcript, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.transcript.len() - self.next
    }
}

impl ChatClient for ReplayClient {
    fn chat(&mut self, prompt_id: PromptId, prompt: &str) -> Result<String, UniverseError> {
        let entry = self
            .transcript
            .entries
            .get(self.next)
            .ok_or(UniverseError::FixtureExhausted(self.transcript.len()))?;
        if entry.prompt_id != prompt_id {
            return Err(UniverseError::ReplayMismatch {
                call: entry.call,
                expected: prompt_id.to_string(),
                found: entry.prompt_id.to_string(),
            });
        }
        if entry.prompt != prompt {
            return Err(UniverseError::ReplayMismatch {
                call: entry.call,
                expected: "identical prompt text".into(),
                found: "different prompt text".into(),
            });
        }
        self.next += 1;
        Ok(entry.response.clone())
    }
}

/// Wraps a client and records every exchange.
pub struct RecordingClient<C> {
    inner: C,
    transcript: ChatTranscript,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            transcript: ChatTranscript::new(TranscriptMode::Live),
        }
    }

    pub fn into_transcript(self) -> ChatTranscript {
        self.transcript
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn chat(&mut self, prompt_id: PromptId, prompt: &str) -> Result<String, UniverseError> {
        let response = self.inner.chat(prompt_id, prompt)?;
        self.transcript.push(prompt_id, prompt.to_owned(), response.clone());
        Ok(response)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: Option<f64>,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            temperature: None,
            max_attempts: 4,
            initial_backoff_ms: 1000,
            timeout_secs: 120,
        }
    }
}

/// Environment variable holding the endpoint credential.
pub const API_KEY_VAR: &str = "LLM_API_KEY";
pub const ENDPOINT_VAR: &str = "LLM_ENDPOINT";
pub const MODEL_VAR: &str = "LLM_MODEL";
pub const TEMPERATURE_VAR: &str = "LLM_TEMPERATURE";

impl LiveConfig {
    /// Applies `LLM_ENDPOINT`, `LLM_MODEL` and `LLM_TEMPERATURE` overrides.
    pub fn with_env_overrides(mut self) -> Result<Self, UniverseError> {
        if let Ok(v) = std::env::var(ENDPOINT_VAR) {
            self.endpoint = v;
        }
        if let Ok(v) = std::env::var(MODEL_VAR) {
            self.model = v;
        }
        if let Ok(v) = std::env::var(TEMPERATURE_VAR) {
            let t = v
                .parse()
                .map_err(|_| UniverseError::Config(format!("{TEMPERATURE_VAR}=`{v}` is not a number")))?;
            self.temperature = Some(t);
        }
        Ok(self)
    }
}

/// Chat-completion client over HTTP.
///
/// Transport failures, 429 and 5xx responses are retried with exponential
/// backoff; 401 and 403 fail immediately.
pub struct LiveClient {
    agent: ureq::Agent,
    config: LiveConfig,
    api_key: String,
}

impl LiveClient {
    pub fn new(config: LiveConfig, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            config,
            api_key,
        }
    }

    /// Reads the credential from `LLM_API_KEY`.
    pub fn from_env(config: LiveConfig) -> Result<Self, UniverseError> {
        let key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| UniverseError::Config(format!("{API_KEY_VAR} is not set")))?;
        Ok(Self::new(config.with_env_overrides()?, key))
    }

    fn attempt(&self, prompt: &str) -> Result<String, Attempt> {
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": prompt }],
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = serde_json::json!(t);
        }
        let mut response = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(Attempt::Fatal(UniverseError::Auth(status))),
            429 | 500..=599 => return Err(Attempt::Retry(format!("HTTP {status}"))),
            _ => {
                let text = response.body_mut().read_to_string().unwrap_or_default();
                return Err(Attempt::Fatal(UniverseError::BadResponse(format!("HTTP {status}: {text}"))));
            }
        }
        let json: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(UniverseError::BadResponse(e.to_string())))?;
        json.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_owned)
            .ok_or_else(|| Attempt::Fatal(UniverseError::BadResponse("no choices[0].message.content".into())))
    }
}

enum Attempt {
    Retry(String),
    Fatal(UniverseError),
}

impl ChatClient for LiveClient {
    fn chat(&mut self, prompt_id: PromptId, prompt: &str) -> Result<String, UniverseError> {
        let attempts = self.config.max_attempts.max(1);
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("{prompt_id} attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(UniverseError::Transport {
            attempts,
            message: last,
        })
    }
}

// ---------------------------------------------------------------------------
// Tickers

/// Reads a constituents file: one ticker per line, `#` comments allowed.
pub fn load_constituents(path: &Path) -> Result<BTreeSet<String>, UniverseError> {
    Ok(parse_constituents(&std::fs::read_to_string(path)?))
}

pub fn parse_constituents(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

/// `[A-Z]{1,5}` optionally followed by `.` or `-` and one or two more
/// uppercase letters.
fn is_ticker_token(token: &str) -> bool {
    let upper = |s: &str, max: usize| !s.is_empty() && s.len() <= max && s.bytes().all(|b| b.is_ascii_uppercase());
    match token.find(['.', '-']) {
        None => upper(token, 5),
        Some(pos) => upper(&token[..pos], 5) && upper(&token[pos + 1..], 2),
    }
}

/// Ticker-shaped tokens in order of first appearance, without duplicates.
pub fn ticker_tokens(response: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    response
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '.' || c == '-'))
        .map(|t| t.trim_matches(['.', '-']))
        .filter(|t| is_ticker_token(t))
        .filter(|t| seen.insert(t.to_string()))
        .map(str::to_owned)
        .collect()
}

/// Resolves `token` against the constituent set, treating `.` and `-`
/// class separators as interchangeable (`BRK.B` ↔ `BRK-B`).
fn resolve(token: &str, constituents: &BTreeSet<String>) -> Option<String> {
    if constituents.contains(token) {
        return Some(token.to_owned());
    }
    let swapped: String = token
        .chars()
        .map(|c| match c {
            '.' => '-',
            '-' => '.',
            c => c,
        })
        .collect();
    constituents.contains(&swapped).then_some(swapped)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Extraction {
    pub members: Vec<String>,
    pub non_members: Vec<String>,
}

pub fn extract_tickers(response: &str, constituents: &BTreeSet<String>) -> Extraction {
    let mut out = Extraction::default();
    for token in ticker_tokens(response) {
        match resolve(&token, constituents) {
            Some(t) if !out.members.contains(&t) => out.members.push(t),
            Some(_) => {}
            None => out.non_members.push(token),
        }
    }
    out
}

/// Old → new ticker renames applied to model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TickerRemap(pub BTreeMap<String, String>);

impl Default for TickerRemap {
    fn default() -> Self {
        Self(BTreeMap::from([("FB".to_owned(), "META".to_owned())]))
    }
}

impl TickerRemap {
    pub fn empty() -> Self {
        Self(BTreeMap::new())
    }

    pub fn apply<'a>(&'a self, ticker: &'a str) -> &'a str {
        self.0.get(ticker).map_or(ticker, String::as_str)
    }
}

pub fn remap_tickers(tickers: &[String], remap: &TickerRemap) -> Vec<String> {
    tickers.iter().map(|t| remap.apply(t).to_owned()).collect()
}

// ---------------------------------------------------------------------------
// Voting

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UniverseTally {
    pub counts: BTreeMap<String, usize>,
    pub num_calls: usize,
    /// Ticker-shaped tokens that were not constituents even after renaming,
    /// with the number of responses mentioning them.
    pub rejected: BTreeMap<String, usize>,
}

/// Counts, per ticker, the extraction responses that mention it. Entries for
/// other prompts are ignored, so `num_calls` is the number of rounds.
pub fn tally_responses(
    transcript: &ChatTranscript,
    constituents: &BTreeSet<String>,
    remap: &TickerRemap,
) -> UniverseTally {
    let mut tally = UniverseTally {
        counts: BTreeMap::new(),
        num_calls: 0,
        rejected: BTreeMap::new(),
    };
    for entry in transcript.entries.iter().filter(|e| e.prompt_id == PromptId::TickerExtract) {
        tally.num_calls += 1;
        let mut found = BTreeSet::new();
        let mut rejected = BTreeSet::new();
        for token in ticker_tokens(&entry.response) {
            let renamed = remap.apply(&token);
            match resolve(renamed, constituents) {
                Some(t) => found.insert(t),
                None => rejected.insert(token),
            };
        }
        for t in found {
            *tally.counts.entry(t).or_default() += 1;
        }
        for t in rejected {
            *tally.rejected.entry(t).or_default() += 1;
        }
    }
    tally
}

/// The `k` most frequent tickers, ordered by count then ticker.
pub fn select_top_k(tally: &UniverseTally, k: usize) -> Result<Vec<String>, UniverseError> {
    let mut ranked: Vec<(&String, usize)> = tally
        .counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(t, &c)| (t, c))
        .collect();
    if ranked.len() < k {
        return Err(UniverseError::InsufficientTickers {
            requested: k,
            available: ranked.len(),
        });
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(k).map(|(t, _)| t.clone()).collect())
}

/// Runs `calls` request/extract rounds for a fund of at least `x` stocks.
pub fn collect_universe_votes(
    client: &mut dyn ChatClient,
    x: usize,
    calls: usize,
) -> Result<ChatTranscript, UniverseError> {
    let request = PromptTemplate::standard(PromptId::UniverseRequest);
    let extract = PromptTemplate::standard(PromptId::TickerExtract);
    let mut transcript = ChatTranscript::new(TranscriptMode::Replay);
    for _ in 0..calls {
        let prompt = render_prompt(&request, &x.to_string())?;
        let fund = client.chat(PromptId::UniverseRequest, &prompt)?;
        transcript.push(PromptId::UniverseRequest, prompt, fund.clone());
        let prompt = render_prompt(&extract, &fund)?;
        let tickers = client.chat(PromptId::TickerExtract, &prompt)?;
        transcript.push(PromptId::TickerExtract, prompt, tickers);
    }
    Ok(transcript)
}

// ---------------------------------------------------------------------------
// Weights

/// Weights as returned by the model, before normalisation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawWeights {
    pub tickers: Vec<String>,
    pub weights: Vec<f64>,
}

impl RawWeights {
    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn needs_normalization(&self) -> bool {
        (self.sum() - 1.0).abs() > WEIGHT_SUM_TOL
    }

    pub fn normalized(&self) -> Result<WeightedUniverse, UniverseError> {
        WeightedUniverse::new(self.tickers.clone(), normalize_weights(&self.weights)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedUniverse {
    pub tickers: Vec<String>,
    pub weights: Vec<f64>,
}

impl WeightedUniverse {
    pub fn new(tickers: Vec<String>, weights: Vec<f64>) -> Result<Self, UniverseError> {
        if tickers.len() != weights.len() {
            return Err(UniverseError::MalformedWeights(format!(
                "{} tickers but {} weights",
                tickers.len(),
                weights.len()
            )));
        }
        if let Some(&w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(UniverseError::NonPositiveWeight(w));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(UniverseError::MalformedWeights(format!("weights sum to {sum}")));
        }
        Ok(Self { tickers, weights })
    }
}

/// Parses `TICKER,weight,TICKER,weight,...` into weights ordered like
/// `universe`. Every universe member must appear exactly once.
pub fn parse_gpt_weights(
    response: &str,
    universe: &[String],
    remap: &TickerRemap,
) -> Result<RawWeights, UniverseError> {
    let body = response.trim().trim_matches(['"', '\'', '`']).trim();
    let tokens: Vec<&str> = body.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    if tokens.len() % 2 != 0 {
        return Err(UniverseError::MalformedWeights(format!(
            "{} tokens do not form ticker/weight pairs",
            tokens.len()
        )));
    }
    let members: BTreeSet<String> = universe.iter().cloned().collect();
    let mut parsed: BTreeMap<String, f64> = BTreeMap::new();
    for pair in tokens.chunks(2) {
        let raw = pair[0].trim_matches(['"', '\'']);
        let ticker = resolve(remap.apply(raw), &members).ok_or_else(|| UniverseError::UnknownTicker(raw.to_owned()))?;
        let weight: f64 = pair[1]
            .parse()
            .ok()
            .filter(|w: &f64| w.is_finite())
            .ok_or_else(|| UniverseError::NonNumericWeight(pair[1].to_owned()))?;
        if parsed.insert(ticker.clone(), weight).is_some() {
            return Err(UniverseError::MalformedWeights(format!("`{ticker}` listed twice")));
        }
    }
    let weights = universe
        .iter()
        .map(|t| parsed.get(t).copied().ok_or_else(|| UniverseError::MissingWeight(t.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RawWeights {
        tickers: universe.to_vec(),
        weights,
    })
}

/// Divides each weight by the total.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>, UniverseError> {
    if let Some(&w) = raw.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(UniverseError::NonPositiveWeight(w));
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(UniverseError::ZeroSum);
    }
    Ok(raw.iter().map(|w| w / sum).collect())
}

/// Asks for weights over `universe` and extracts them.
pub fn request_weights(
    client: &mut dyn ChatClient,
    universe: &[String],
    remap: &TickerRemap,
) -> Result<(RawWeights, ChatTranscript), UniverseError> {
    let mut transcript = ChatTranscript::new(TranscriptMode::Replay);
    let prompt = render_prompt(&PromptTemplate::standard(PromptId::WeightRequest), &universe.join(" "))?;
    let reply = client.chat(PromptId::WeightRequest, &prompt)?;
    transcript.push(PromptId::WeightRequest, prompt, reply.clone());
    let prompt = render_prompt(&PromptTemplate::standard(PromptId::WeightExtract), &reply)?;
    let pairs = client.chat(PromptId::WeightExtract, &prompt)?;
    transcript.push(PromptId::WeightExtract, prompt, pairs.clone());
    Ok((parse_gpt_weights(&pairs, universe, remap)?, transcript))
}
