//! Prompt rendering, chat-completion backends, and (R, V) response parsing.
//!
//! The response contract is a tagged plain-text block: one `REASONING:`
//! section followed by one `SCORE:` integer in [0, 100]. The parser here is
//! the single place that contract lives.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataio::BinaryLabel;
use crate::error::{Error, Result};

/// Bumped whenever the wording of any template changes; recorded in run
/// manifests so prompts are reproducible.
pub const PROMPT_TEMPLATE_VERSION: &str = "nrfe-templates-1";

pub const ENDPOINT_ENV: &str = "NRFE_ENDPOINT";
pub const MODEL_ENV: &str = "NRFE_MODEL";

/// Integer credibility rating: 0 = fake, 100 = real.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CredibilityScore(u8);

impl CredibilityScore {
    pub fn new(value: i64) -> Result<Self> {
        if (0..=100).contains(&value) {
            Ok(CredibilityScore(value as u8))
        } else {
            Err(Error::ScoreRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningType {
    Positive,
    Negative,
}

impl ReasoningType {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningType::Positive => "positive",
            ReasoningType::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlterationState {
    Increase,
    Decrease,
}

impl AlterationState {
    pub fn as_str(self) -> &'static str {
        match self {
            AlterationState::Increase => "increase",
            AlterationState::Decrease => "decrease",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedReasoning {
    pub reasoning_text: String,
    pub score: CredibilityScore,
}

const OUTPUT_CONTRACT: &str = "Respond with exactly one REASONING: block followed by one \
SCORE: line holding a single integer between 0 and 100 (0 = certainly fake, 100 = certainly real).";

fn describe_goal(y: BinaryLabel, t: ReasoningType, s: AlterationState) -> String {
    match t {
        ReasoningType::Positive => format!(
            "Write positive reasoning: an analysis consistent with the article being {}. \
Your reasoning should {} the credibility score accordingly.",
            y.as_str(),
            s.as_str()
        ),
        ReasoningType::Negative => format!(
            "Write negative reasoning: argue AGAINST the article being {}, even though that \
is its true label. Your reasoning should {} the credibility score.",
            y.as_str(),
            s.as_str()
        ),
    }
}

fn temperature_for(t: ReasoningType) -> f64 {
    match t {
        // sampling helps hallucination harvesting
        ReasoningType::Negative => 0.7,
        ReasoningType::Positive => 0.3,
    }
}

pub fn render_initial_prompt(
    x: &str,
    y: BinaryLabel,
    t: ReasoningType,
    v_initial: CredibilityScore,
    s: AlterationState,
) -> PromptRequest {
    let system_text = format!(
        "You are a news credibility analyst. {OUTPUT_CONTRACT}"
    );
    let user_text = format!(
        "Article:\n{x}\n\nThe article is labeled {label}. Its current credibility score \
is {vi}.\n{goal}\n{OUTPUT_CONTRACT}",
        label = y.as_str(),
        vi = v_initial.value(),
        goal = describe_goal(y, t, s),
    );
    PromptRequest {
        system_text,
        user_text,
        temperature: temperature_for(t),
        max_tokens: 512,
    }
}

pub fn render_rectify_prompt(
    x: &str,
    y: BinaryLabel,
    t: ReasoningType,
    v_initial: CredibilityScore,
    s: AlterationState,
    prev_r: &str,
    prev_v: CredibilityScore,
) -> PromptRequest {
    assert!(!prev_r.trim().is_empty(), "previous reasoning must be non-empty");
    let system_text = format!(
        "You are a news credibility analyst revising your own reasoning. {OUTPUT_CONTRACT}"
    );
    let direction = match s {
        AlterationState::Increase => format!("a score above {}", v_initial.value()),
        AlterationState::Decrease => format!("a score below {}", v_initial.value()),
    };
    let user_text = format!(
        "Article:\n{x}\n\nThe article is labeled {label}. Its credibility score before any \
reasoning was {vi}.\n\nYour previous reasoning was:\n{prev_r}\nIt produced a score of {pv}, \
which failed to {sdir} the score relative to {vi} as required (or violated the polarity \
constraint). Revise the reasoning so the resulting credibility score moves to {direction}.\n\
{goal}\n{OUTPUT_CONTRACT}",
        label = y.as_str(),
        vi = v_initial.value(),
        pv = prev_v.value(),
        sdir = s.as_str(),
        goal = describe_goal(y, t, s),
    );
    PromptRequest {
        system_text,
        user_text,
        temperature: temperature_for(t),
        max_tokens: 512,
    }
}

fn render_rating_prompt(x: &str) -> PromptRequest {
    PromptRequest {
        system_text: "You are a news credibility analyst. Respond with one line: SCORE: \
followed by a single integer between 0 and 100 (0 = certainly fake, 100 = certainly real)."
            .to_string(),
        user_text: format!("Rate the credibility of this article.\n\nArticle:\n{x}\n\nSCORE:"),
        temperature: 0.3,
        max_tokens: 16,
    }
}

/// Extract the reasoning block and the last `SCORE`-tagged integer.
/// Out-of-range scores are errors, never clamped.
pub fn parse_response(raw: &str) -> Result<ParsedReasoning> {
    let score_pos = raw
        .rmatch_indices("SCORE")
        .next()
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Parse("no SCORE tag found".to_string()))?;
    let after = &raw[score_pos + "SCORE".len()..];
    let digits: String = after
        .chars()
        .skip_while(|c| *c == ':' || c.is_whitespace() || *c == '*' || *c == '#')
        .take_while(|c| c.is_ascii_digit() || *c == '-')
        .collect();
    if digits.is_empty() {
        return Err(Error::Parse("SCORE tag has no integer".to_string()));
    }
    let value: i64 = digits
        .parse()
        .map_err(|_| Error::Parse(format!("unparseable score {digits:?}")))?;
    let score = CredibilityScore::new(value)?;

    let body = &raw[..score_pos];
    let reasoning = match body.find("REASONING") {
        Some(i) => {
            let rest = &body[i + "REASONING".len()..];
            rest.trim_start_matches([':', '*', '#']).trim()
        }
        None => body.trim(),
    };
    let reasoning = reasoning.trim_end_matches(['*', '#', '\n']).trim();
    if reasoning.is_empty() {
        return Err(Error::Parse("empty reasoning".to_string()));
    }
    Ok(ParsedReasoning {
        reasoning_text: reasoning.to_string(),
        score,
    })
}

/// Parse a score-only reply (rating prompt).
pub fn parse_score_only(raw: &str) -> Result<CredibilityScore> {
    let score_pos = raw.rmatch_indices("SCORE").next().map(|(i, _)| i);
    let tail = match score_pos {
        Some(i) => &raw[i + "SCORE".len()..],
        None => raw,
    };
    let digits: String = tail
        .chars()
        .skip_while(|c| !c.is_ascii_digit() && *c != '-')
        .take_while(|c| c.is_ascii_digit() || *c == '-')
        .collect();
    if digits.is_empty() {
        return Err(Error::Parse("no score integer found".to_string()));
    }
    let value: i64 = digits
        .parse()
        .map_err(|_| Error::Parse(format!("unparseable score {digits:?}")))?;
    CredibilityScore::new(value)
}

pub trait Backend: Send + Sync {
    /// One raw completion attempt. Transport failures are retryable;
    /// anything else is terminal.
    fn complete_once(&self, request: &PromptRequest) -> Result<String>;

    /// Mock backends consume a scripted FIFO and must be driven by a
    /// single consumer.
    fn is_mock(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
        }
    }
}

/// Bounded retry with exponential backoff on transport errors.
pub fn complete(request: &PromptRequest, backend: &dyn Backend, retry: &RetryPolicy) -> Result<String> {
    let mut last: Option<Error> = None;
    for attempt in 0..=retry.max_retries {
        match backend.complete_once(request) {
            Ok(text) => return Ok(text),
            Err(Error::Transport { reason, .. }) => {
                last = Some(Error::Transport {
                    attempts: attempt + 1,
                    reason,
                });
                if attempt < retry.max_retries {
                    std::thread::sleep(retry.base_delay * 2u32.pow(attempt as u32));
                }
            }
            Err(other) => return Err(other),
        }
    }
    Err(last.unwrap_or_else(|| Error::Transport {
        attempts: retry.max_retries + 1,
        reason: "no attempt made".to_string(),
    }))
}

/// Scripted backend for tests: pops replies FIFO.
pub struct MockBackend {
    script: Mutex<VecDeque<String>>,
}

impl MockBackend {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockBackend {
            script: Mutex::new(script.into_iter().map(Into::into).collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

impl Backend for MockBackend {
    fn complete_once(&self, _request: &PromptRequest) -> Result<String> {
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(Error::ScriptExhausted)
    }

    fn is_mock(&self) -> bool {
        true
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    content: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// Generic chat-completion HTTP client (POST {model, messages, temperature,
/// max_tokens}). Works against any locally served model exposing that schema.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport {
                attempts: 0,
                reason: e.to_string(),
            })?;
        Ok(HttpBackend {
            client,
            url: url.into(),
            model: model.into(),
        })
    }

    /// Env vars override explicitly passed values.
    pub fn from_env(url: &str, model: &str, timeout: Duration) -> Result<Self> {
        let url = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| url.to_string());
        let model = std::env::var(MODEL_ENV).unwrap_or_else(|_| model.to_string());
        Self::new(url, model, timeout)
    }
}

impl Backend for HttpBackend {
    fn complete_once(&self, request: &PromptRequest) -> Result<String> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &request.system_text,
                },
                ChatMessage {
                    role: "user",
                    content: &request.user_text,
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let resp = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| Error::Transport {
                attempts: 1,
                reason: e.to_string(),
            })?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Error::Transport {
                attempts: 1,
                reason: format!("status {status}"),
            });
        }
        if !status.is_success() {
            return Err(Error::Parse(format!("endpoint returned status {status}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| Error::Parse(e.to_string()))?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| Error::Parse("response had no choices".to_string()))
    }
}

/// Backend plus the policies SR3 needs: transport retry and a separate
/// parse retry budget (a malformed reply is not a rectification iteration).
pub struct Gateway<'a> {
    pub backend: &'a dyn Backend,
    pub retry: RetryPolicy,
    pub parse_retries: usize,
}

impl<'a> Gateway<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        Gateway {
            backend,
            retry: RetryPolicy::default(),
            parse_retries: 2,
        }
    }

    pub fn rate_initial_credibility(&self, x: &str) -> Result<CredibilityScore> {
        let request = render_rating_prompt(x);
        let mut last = None;
        for _ in 0..=self.parse_retries {
            let raw = complete(&request, self.backend, &self.retry)?;
            match parse_score_only(&raw) {
                Ok(score) => return Ok(score),
                Err(e @ (Error::Parse(_) | Error::ScoreRange(_))) => last = Some(e),
                Err(other) => return Err(other),
            }
        }
        let _ = last;
        Err(Error::ParseBudgetExhausted(self.parse_retries + 1))
    }

    pub fn request_reasoning(&self, request: &PromptRequest) -> Result<ParsedReasoning> {
        let mut last = None;
        for _ in 0..=self.parse_retries {
            let raw = complete(request, self.backend, &self.retry)?;
            match parse_response(&raw) {
                Ok(parsed) => return Ok(parsed),
                Err(e @ (Error::Parse(_) | Error::ScoreRange(_))) => last = Some(e),
                Err(other) => return Err(other),
            }
        }
        let _ = last;
        Err(Error::ParseBudgetExhausted(self.parse_retries + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_prompt_embeds_all_slots() {
        let p = render_initial_prompt(
            "claim text here",
            BinaryLabel::Fake,
            ReasoningType::Positive,
            CredibilityScore::new(70).unwrap(),
            AlterationState::Decrease,
        );
        assert!(p.user_text.contains("claim text here"));
        assert!(p.user_text.contains("fake"));
        assert!(p.user_text.contains("70"));
        assert!(p.user_text.contains("decrease"));
        assert!(p.user_text.contains("SCORE"));
    }

    #[test]
    fn prompts_are_deterministic() {
        let make = || {
            render_initial_prompt(
                "x",
                BinaryLabel::Real,
                ReasoningType::Negative,
                CredibilityScore::new(80).unwrap(),
                AlterationState::Decrease,
            )
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn negative_prompt_for_real_news_argues_against_real() {
        let p = render_initial_prompt(
            "x",
            BinaryLabel::Real,
            ReasoningType::Negative,
            CredibilityScore::new(80).unwrap(),
            AlterationState::Decrease,
        );
        assert!(p.user_text.contains("AGAINST"));
        assert!(p.user_text.contains("decrease"));
    }

    #[test]
    fn rectify_prompt_embeds_previous_pair() {
        let p = render_rectify_prompt(
            "x",
            BinaryLabel::Fake,
            ReasoningType::Positive,
            CredibilityScore::new(70).unwrap(),
            AlterationState::Decrease,
            "previous analysis",
            CredibilityScore::new(80).unwrap(),
        );
        assert!(p.user_text.contains("80"));
        assert!(p.user_text.contains("70"));
        assert!(p.user_text.contains("decrease"));
        assert!(p.user_text.contains("previous analysis"));
    }

    #[test]
    fn rectify_prompt_negative_increase_demands_above_initial() {
        let p = render_rectify_prompt(
            "x",
            BinaryLabel::Fake,
            ReasoningType::Negative,
            CredibilityScore::new(30).unwrap(),
            AlterationState::Increase,
            "r",
            CredibilityScore::new(25).unwrap(),
        );
        assert!(p.user_text.contains("a score above 30"));
    }

    #[test]
    fn parse_well_formed() {
        let r = parse_response("REASONING: The claim cites no source. SCORE: 35").unwrap();
        assert_eq!(r.reasoning_text, "The claim cites no source.");
        assert_eq!(r.score.value(), 35);
    }

    #[test]
    fn parse_out_of_range_is_error() {
        assert!(matches!(
            parse_response("Sure! REASONING: text SCORE: 101"),
            Err(Error::ScoreRange(101))
        ));
    }

    #[test]
    fn parse_missing_score_is_error() {
        assert!(matches!(
            parse_response("no tags at all"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn parse_tolerates_prose_and_markdown() {
        let r = parse_response(
            "Sure, here you go.\n**REASONING:** The sourcing is weak.\n**SCORE:** 20\n",
        )
        .unwrap();
        assert_eq!(r.score.value(), 20);
        assert!(r.reasoning_text.contains("sourcing is weak"));
    }

    #[test]
    fn score_only_parse() {
        assert_eq!(parse_score_only("SCORE: 70").unwrap().value(), 70);
        assert_eq!(
            parse_score_only("some prose then SCORE: 0").unwrap().value(),
            0
        );
        assert!(parse_score_only("SCORE: 120").is_err());
    }

    #[test]
    fn mock_pops_fifo_and_exhausts() {
        let mock = MockBackend::new(["A", "B"]);
        let req = render_rating_prompt("x");
        let retry = RetryPolicy::default();
        assert_eq!(complete(&req, &mock, &retry).unwrap(), "A");
        assert_eq!(complete(&req, &mock, &retry).unwrap(), "B");
        assert!(matches!(
            complete(&req, &mock, &retry),
            Err(Error::ScriptExhausted)
        ));
    }

    #[test]
    fn rate_initial_retries_parse_failures() {
        let mock = MockBackend::new(["SCORE: 120", "SCORE: 70"]);
        let gw = Gateway::new(&mock);
        assert_eq!(gw.rate_initial_credibility("x").unwrap().value(), 70);

        let mock = MockBackend::new(["bad", "bad", "bad"]);
        let gw = Gateway::new(&mock);
        assert!(matches!(
            gw.rate_initial_credibility("x"),
            Err(Error::ParseBudgetExhausted(_))
        ));
    }
}
