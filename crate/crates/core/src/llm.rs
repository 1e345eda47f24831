//! Prompted classification through a remote text-generation endpoint.
//!
//! Two templates describe the wire format, to match any JSON-over-HTTP
//! server shape:
//!
//! - the request template is a JSON document in which `{model}` and
//!   `{prompt}` are replaced by JSON-escaped strings;
//! - the response template is a JSON document with the string `"{reply}"`
//!   at the location of the generated text.
//!
//! Replies are mapped to labels by keyword: the earliest case-insensitive
//! occurrence of `phishing`, `clean` or `legitimate` decides. Replies without
//! a keyword, timeouts and HTTP errors become abstentions, which score as
//! wrong predictions.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::pipeline::{Confusion, EvalReport, Metrics};
use crate::{Label, RawEmail};

pub const DEFAULT_PROMPT: &str =
    "Classify the following email as 'phishing' or 'clean'. Reply with one word. Email: {email}";

pub const DEFAULT_REQUEST_TEMPLATE: &str =
    r#"{"model": "{model}", "messages": [{"role": "user", "content": "{prompt}"}], "stream": false}"#;

pub const DEFAULT_RESPONSE_TEMPLATE: &str = r#"{"choices": [{"message": {"content": "{reply}"}}]}"#;

#[derive(Debug, Error, PartialEq)]
pub enum LlmError {
    #[error("prompt template must contain `{{email}}` exactly once (found {0})")]
    PromptSlot(usize),
    #[error("timeout must be positive")]
    Timeout,
    #[error("request template is not valid JSON after substitution: {0}")]
    RequestTemplate(String),
    #[error("response template must be JSON holding the string \"{{reply}}\" exactly once")]
    ResponseTemplate,
    #[error("reports cover different email sets ({0} vs {1} samples)")]
    SubsetMismatch(u64, u64),
    #[error("empty campaign")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Full URL requests are POSTed to.
    pub url: String,
    pub model: String,
    pub timeout_secs: f64,
    pub prompt_template: String,
    /// Used instead of `prompt_template` when set; same `{email}` slot.
    pub few_shot_template: Option<String>,
    pub request_template: String,
    pub response_template: String,
    /// Emails are cut to this many characters before prompting.
    pub max_chars: usize,
    /// Upper bound on emails per campaign; 0 means no bound.
    pub max_emails: usize,
    /// Concurrent requests. Above 1 the timing comparison is disabled.
    pub parallelism: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "llama3.2".into(),
            timeout_secs: 60.0,
            prompt_template: DEFAULT_PROMPT.into(),
            few_shot_template: None,
            request_template: DEFAULT_REQUEST_TEMPLATE.into(),
            response_template: DEFAULT_RESPONSE_TEMPLATE.into(),
            max_chars: 4000,
            max_emails: 0,
            parallelism: 1,
        }
    }
}

impl EndpointConfig {
    pub fn prompt_mode(&self) -> PromptMode {
        if self.few_shot_template.is_some() {
            PromptMode::FewShot
        } else {
            PromptMode::ZeroShot
        }
    }

    fn active_template(&self) -> &str {
        self.few_shot_template.as_deref().unwrap_or(&self.prompt_template)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let slots = self.active_template().matches("{email}").count();
        if slots != 1 {
            return Err(LlmError::PromptSlot(slots));
        }
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(LlmError::Timeout);
        }
        self.request_body("probe")?;
        reply_pointer(&self.response_template)?;
        Ok(())
    }

    pub fn prompt(&self, email: &str) -> String {
        let cut: String = email.chars().take(self.max_chars).collect();
        self.active_template().replace("{email}", &cut)
    }

    fn request_body(&self, prompt: &str) -> Result<String, LlmError> {
        let esc = |s: &str| {
            let quoted = serde_json::to_string(s).expect("strings serialize");
            quoted[1..quoted.len() - 1].to_string()
        };
        let body = self.request_template.replace("{model}", &esc(&self.model)).replace("{prompt}", &esc(prompt));
        serde_json::from_str::<Value>(&body).map_err(|e| LlmError::RequestTemplate(e.to_string()))?;
        Ok(body)
    }
}

/// JSON pointer to the `"{reply}"` string of a response template.
pub fn reply_pointer(template: &str) -> Result<String, LlmError> {
    fn walk(v: &Value, path: &mut Vec<String>, found: &mut Vec<String>) {
        match v {
            Value::String(s) if s == "{reply}" => found.push(path.iter().map(|p| format!("/{p}")).collect()),
            Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    path.push(i.to_string());
                    walk(item, path, found);
                    path.pop();
                }
            }
            Value::Object(map) => {
                for (k, item) in map {
                    path.push(k.replace('~', "~0").replace('/', "~1"));
                    walk(item, path, found);
                    path.pop();
                }
            }
            _ => {}
        }
    }
    let v: Value = serde_json::from_str(template).map_err(|_| LlmError::ResponseTemplate)?;
    let mut found = Vec::new();
    walk(&v, &mut Vec::new(), &mut found);
    match found.as_slice() {
        [p] => Ok(p.clone()),
        _ => Err(LlmError::ResponseTemplate),
    }
}

/// Label named by the first decision keyword in `reply`.
pub fn parse_reply(reply: &str) -> Option<Label> {
    let lower = reply.to_lowercase();
    [("phishing", Label::Phishing), ("clean", Label::Clean), ("legitimate", Label::Clean)]
        .into_iter()
        .filter_map(|(k, l)| lower.find(k).map(|i| (i, l)))
        .min_by_key(|&(i, _)| i)
        .map(|(_, l)| l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteVerdict {
    /// `None` is an abstention.
    pub label: Option<Label>,
    pub raw: String,
    pub latency_seconds: f64,
    pub error: Option<String>,
}

/// Sends one prompt and parses the reply. Transport and HTTP failures are
/// recorded in the verdict, not returned.
pub fn classify_remote(config: &EndpointConfig, email: &str) -> Result<RemoteVerdict, LlmError> {
    config.validate()?;
    let agent = agent(config);
    let pointer = reply_pointer(&config.response_template)?;
    classify_with(&agent, config, &pointer, email)
}

fn agent(config: &EndpointConfig) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn classify_with(agent: &ureq::Agent, config: &EndpointConfig, pointer: &str, email: &str) -> Result<RemoteVerdict, LlmError> {
    let body = config.request_body(&config.prompt(email))?;
    let start = Instant::now();
    let outcome = agent
        .post(&config.url)
        .header("Content-Type", "application/json")
        .send(body.as_str())
        .and_then(|mut r| {
            let status = r.status().as_u16();
            r.body_mut().read_to_string().map(|text| (status, text))
        });
    let latency_seconds = start.elapsed().as_secs_f64();
    let verdict = |label, raw, error| RemoteVerdict { label, raw, latency_seconds, error };
    Ok(match outcome {
        Err(e) => verdict(None, String::new(), Some(e.to_string())),
        Ok((status, text)) if !(200..300).contains(&status) => verdict(None, text, Some(format!("HTTP {status}"))),
        Ok((_, text)) => match serde_json::from_str::<Value>(&text).ok().as_ref().and_then(|v| v.pointer(pointer)) {
            Some(Value::String(reply)) => verdict(parse_reply(reply), reply.clone(), None),
            _ => verdict(None, text, Some(format!("no string at {pointer}"))),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRecord {
    pub email_id: String,
    pub truth: Label,
    #[serde(flatten)]
    pub verdict: RemoteVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmReport {
    pub model: String,
    pub prompt_mode: PromptMode,
    pub prompt_template: String,
    pub records: Vec<LlmRecord>,
    pub abstentions: u64,
    /// Abstentions are counted as the wrong class.
    pub confusion: Confusion,
    pub metrics: Metrics,
    /// Mean request latency; `None` when requests ran concurrently.
    pub seconds_per_sample: Option<f64>,
}

/// Classifies every email (up to `max_emails`). Failures never stop the
/// campaign; each email yields exactly one record.
pub fn run_campaign(config: &EndpointConfig, emails: &[RawEmail]) -> Result<LlmReport, LlmError> {
    config.validate()?;
    let n = if config.max_emails == 0 { emails.len() } else { emails.len().min(config.max_emails) };
    let emails = &emails[..n];
    if emails.is_empty() {
        return Err(LlmError::Empty);
    }
    let agent = agent(config);
    let pointer = reply_pointer(&config.response_template)?;
    let one = |e: &RawEmail| -> Result<LlmRecord, LlmError> {
        let text = format!("Subject: {}\n\n{}", e.subject, e.body);
        Ok(LlmRecord { email_id: e.id.clone(), truth: e.label, verdict: classify_with(&agent, config, &pointer, &text)? })
    };
    let records: Vec<LlmRecord> = if config.parallelism > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .expect("thread pool builds");
        pool.install(|| emails.par_iter().map(one).collect::<Result<_, _>>())?
    } else {
        emails.iter().map(one).collect::<Result<_, _>>()?
    };
    let mut confusion = [[0u64; 2]; 2];
    for r in &records {
        let predicted = r.verdict.label.unwrap_or(r.truth.other());
        confusion[r.truth.index()][predicted.index()] += 1;
    }
    let metrics = Metrics::from_confusion(&confusion).map_err(|_| LlmError::Empty)?;
    let seconds_per_sample = (config.parallelism <= 1)
        .then(|| records.iter().map(|r| r.verdict.latency_seconds).sum::<f64>() / records.len() as f64);
    Ok(LlmReport {
        model: config.model.clone(),
        prompt_mode: config.prompt_mode(),
        prompt_template: config.active_template().to_string(),
        abstentions: records.iter().filter(|r| r.verdict.label.is_none()).count() as u64,
        records,
        confusion,
        metrics,
        seconds_per_sample,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n_samples: u64,
    pub local: Metrics,
    pub remote: Metrics,
    pub local_seconds: f64,
    pub remote_seconds: Option<f64>,
    /// Remote over local per-sample time.
    pub speedup: Option<f64>,
}

pub fn compare(local: &EvalReport, remote: &LlmReport) -> Result<Comparison, LlmError> {
    let n_remote = remote.records.len() as u64;
    if local.n_samples != n_remote {
        return Err(LlmError::SubsetMismatch(local.n_samples, n_remote));
    }
    Ok(Comparison {
        n_samples: n_remote,
        local: local.metrics,
        remote: remote.metrics,
        local_seconds: local.seconds_per_sample,
        remote_seconds: remote.seconds_per_sample,
        speedup: remote.seconds_per_sample.map(|r| r / local.seconds_per_sample),
    })
}

impl Comparison {
    pub fn to_table(&self, local_name: &str, remote_name: &str) -> String {
        let mut out = String::new();
        let w = local_name.len().max(remote_name.len()).max(5);
        let _ = writeln!(out, "{:<w$}  accuracy  f1(w)    f1(m)    s/sample", "model");
        let row = |out: &mut String, name: &str, m: &Metrics, s: Option<f64>| {
            let secs = s.map_or("n/a".to_string(), |s| format!("{s:.6}"));
            let _ = writeln!(out, "{name:<w$}  {:.5}   {:.5}  {:.5}  {secs}", m.accuracy, m.f1.weighted, m.f1.macro_avg);
        };
        row(&mut out, local_name, &self.local, Some(self.local_seconds));
        row(&mut out, remote_name, &self.remote, self.remote_seconds);
        match self.speedup {
            Some(s) => {
                let _ = writeln!(out, "speedup: {s:.1}x");
            }
            None => {
                let _ = writeln!(out, "speedup: n/a (concurrent requests)");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keywords() {
        assert_eq!(parse_reply("This is a phishing email."), Some(Label::Phishing));
        assert_eq!(parse_reply("legitimate message"), Some(Label::Clean));
        assert_eq!(parse_reply("CLEAN"), Some(Label::Clean));
        assert_eq!(parse_reply("Clean, not phishing"), Some(Label::Clean));
        assert_eq!(parse_reply("I cannot tell"), None);
    }

    #[test]
    fn templates() {
        let c = EndpointConfig::default();
        c.validate().unwrap();
        let body = c.request_body("say \"hi\"\n").unwrap();
        let v: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["messages"][0]["content"], "say \"hi\"\n");
        assert_eq!(reply_pointer(DEFAULT_RESPONSE_TEMPLATE).unwrap(), "/choices/0/message/content");
        assert_eq!(reply_pointer(r#"{"response": "{reply}"}"#).unwrap(), "/response");
        assert_eq!(reply_pointer(r#"{"a": 1}"#), Err(LlmError::ResponseTemplate));
        let bad = EndpointConfig { prompt_template: "{email} {email}".into(), ..EndpointConfig::default() };
        assert_eq!(bad.validate(), Err(LlmError::PromptSlot(2)));
        let bad = EndpointConfig { timeout_secs: 0.0, ..EndpointConfig::default() };
        assert_eq!(bad.validate(), Err(LlmError::Timeout));
    }

    #[test]
    fn prompt_truncates() {
        let c = EndpointConfig { max_chars: 3, prompt_template: "<{email}>".into(), ..EndpointConfig::default() };
        assert_eq!(c.prompt("abcdef"), "<abc>");
        assert_eq!(c.prompt_mode(), PromptMode::ZeroShot);
    }
}
