//! OpenAI-compatible chat-completion client for candidate proposal.

use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};

use super::{AgentSpec, CandidateKind, PromptAgent, PromptCandidate, SelectConfig};

/// System instruction sent with every request.
pub const INSTRUCTION_TEMPLATE: &str = "\
You propose short text prompts that describe what images of a category look like.
Given a category name:
- If disambiguation is on and the name is polysemous, give one prompt per sense, \
formatted as \"<name> (<sense>)\", and set \"sense\" to the sense.
- If expansion is on, give prompts covering distinct visual modes (view, style, \
context), and set \"sense\" to null.
- Set \"visual\" to false for senses that cannot be depicted in a photo.
Reply with a JSON array only, no prose. Each element: \
{\"text\": string, \"sense\": string or null, \"visual\": boolean}.";

static REQUEST_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone)]
pub struct HttpAgent {
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposedPrompt {
    text: String,
    sense: Option<String>,
    visual: bool,
}

impl HttpAgent {
    pub fn from_spec(spec: &AgentSpec) -> Result<Self> {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::Config("http agent requires an endpoint".into()))?;
        let api_key = match spec.api_key_env.as_deref() {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Agent(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(spec.timeout_secs.max(1)))
            .build()
            .map_err(|e| Error::Agent(format!("building http client: {e}")))?;
        Ok(HttpAgent {
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model: spec.model.clone().unwrap_or_else(|| "default".into()),
            api_key,
            client,
        })
    }

    fn user_message(class_name: &str, cfg: &SelectConfig) -> String {
        let on = |b: bool| if b { "on" } else { "off" };
        format!(
            "Category: {class_name}\nDisambiguation: {}\nExpansion: {}",
            on(cfg.disambiguation_enabled),
            on(cfg.expansion_enabled)
        )
    }

    fn request(&self, class_name: &str, cfg: &SelectConfig) -> Result<String> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": INSTRUCTION_TEMPLATE},
                {"role": "user", "content": Self::user_message(class_name, cfg)},
            ],
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        // One request in flight per process, however many runs share the agent config.
        let _turn = REQUEST_LOCK.lock().unwrap_or_else(|e| e.into_inner());
        let resp = req
            .send()
            .map_err(|e| Error::Agent(format!("POST {}: {e}", self.url)))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Error::Agent(format!("reading response from {}: {e}", self.url)))?;
        if !status.is_success() {
            return Err(Error::Agent(format!("POST {} returned {status}: {text}", self.url)));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| Error::Agent(format!("malformed chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Agent("chat response has no choices".into()))
    }
}

/// Parses the model's reply into candidates. A single surrounding code fence
/// is tolerated; anything else that is not the documented array is an error.
pub(crate) fn parse_reply(
    content: &str,
    class_id: usize,
    cfg: &SelectConfig,
) -> Result<Vec<PromptCandidate>> {
    let mut body = content.trim();
    if let Some(rest) = body.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        body = rest
            .strip_suffix("```")
            .ok_or_else(|| Error::Agent("unterminated code fence in reply".into()))?
            .trim();
    }
    let items: Vec<ProposedPrompt> = serde_json::from_str(body)
        .map_err(|e| Error::Agent(format!("reply is not the expected JSON array: {e}")))?;
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let text = item.text.trim().to_string();
        if text.is_empty() || text.contains(['\t', '\n', '\r']) {
            return Err(Error::Agent(format!("invalid prompt text {:?}", item.text)));
        }
        let sense = item.sense.filter(|s| !s.trim().is_empty());
        let kind = if sense.is_some() {
            CandidateKind::Disambiguation
        } else {
            CandidateKind::Expansion
        };
        let wanted = match kind {
            CandidateKind::Disambiguation => cfg.disambiguation_enabled,
            _ => cfg.expansion_enabled,
        };
        if wanted {
            out.push(PromptCandidate {
                text,
                class_id,
                kind,
                mode_tag: sense,
                visual: item.visual,
            });
        }
    }
    Ok(out)
}

impl PromptAgent for HttpAgent {
    fn propose(
        &self,
        class_id: usize,
        class_name: &str,
        cfg: &SelectConfig,
    ) -> Result<Vec<PromptCandidate>> {
        let mut out = vec![PromptCandidate::bare(class_id, class_name)];
        if !cfg.disambiguation_enabled && !cfg.expansion_enabled {
            return Ok(out);
        }
        let content = self.request(class_name, cfg)?;
        for c in parse_reply(&content, class_id, cfg)? {
            if c.text != class_name {
                out.push(c);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_and_fenced_replies() {
        let cfg = SelectConfig::default();
        let reply = r#"[{"text": "crane (bird)", "sense": "bird", "visual": true},
                        {"text": "a sketch of a crane", "sense": null, "visual": true}]"#;
        let c = parse_reply(reply, 3, &cfg).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].kind, CandidateKind::Disambiguation);
        assert_eq!(c[0].mode_tag.as_deref(), Some("bird"));
        assert_eq!(c[1].kind, CandidateKind::Expansion);
        assert!(c.iter().all(|p| p.class_id == 3));

        let fenced = format!("```json\n{reply}\n```");
        assert_eq!(parse_reply(&fenced, 3, &cfg).unwrap(), c);
    }

    #[test]
    fn flags_filter_reply_items() {
        let cfg = SelectConfig {
            disambiguation_enabled: false,
            ..SelectConfig::default()
        };
        let reply = r#"[{"text": "crane (bird)", "sense": "bird", "visual": true},
                        {"text": "crane at night", "sense": null, "visual": true}]"#;
        let c = parse_reply(reply, 0, &cfg).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].text, "crane at night");
    }

    #[test]
    fn malformed_replies_are_errors() {
        let cfg = SelectConfig::default();
        for bad in [
            "Sure! Here are some prompts.",
            r#"{"text": "x"}"#,
            r#"[{"text": "x", "visual": "yes", "sense": null}]"#,
            r#"[{"text": "", "sense": null, "visual": true}]"#,
            "```json\n[]",
        ] {
            assert!(matches!(parse_reply(bad, 0, &cfg), Err(Error::Agent(_))), "{bad}");
        }
    }
}
