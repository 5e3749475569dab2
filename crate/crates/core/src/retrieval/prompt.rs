use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TEMPLATES_JSON: &str = include_str!("../../assets/prompt_templates.json");

#[derive(Debug, Deserialize)]
struct Template {
    requires_context: bool,
    messages: Vec<Message>,
}

static TEMPLATES: LazyLock<BTreeMap<String, Template>> =
    LazyLock::new(|| serde_json::from_str(TEMPLATES_JSON).expect("bundled templates parse"));

/// Closed-book (`*_cb`) and RAG (`*_rag`) layouts. `llama_*` uses a system
/// turn; `gm_*` (Gemma, Mistral) uses user turns only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    LlamaCb,
    LlamaRag,
    GmCb,
    GmRag,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [TemplateId::LlamaCb, TemplateId::LlamaRag, TemplateId::GmCb, TemplateId::GmRag];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::LlamaCb => "llama_cb",
            TemplateId::LlamaRag => "llama_rag",
            TemplateId::GmCb => "gm_cb",
            TemplateId::GmRag => "gm_rag",
        }
    }

    pub fn requires_context(self) -> bool {
        TEMPLATES[self.as_str()].requires_context
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown template `{s}`; expected one of {:?}", template_ids())))
    }
}

pub fn template_ids() -> Vec<&'static str> {
    TemplateId::ALL.iter().map(|t| t.as_str()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub template: TemplateId,
    pub messages: Vec<Message>,
}

/// Fills `{question}` and `{context}` in one pass, so placeholder-like text
/// inside either value is left alone. The templates append `?` after the
/// question, so one trailing `?` on the question itself is dropped.
pub fn render_prompt(template: TemplateId, question: &str, context: Option<&str>) -> Result<Prompt> {
    let spec = &TEMPLATES[template.as_str()];
    let context = match (spec.requires_context, context) {
        (true, None) => return Err(Error::MissingContext(template.to_string())),
        (_, c) => c.unwrap_or_default(),
    };
    let question = question.trim();
    let question = question.strip_suffix('?').unwrap_or(question);
    let messages = spec
        .messages
        .iter()
        .map(|m| Message {
            role: m.role.clone(),
            content: substitute(&m.content, question, context),
        })
        .collect();
    Ok(Prompt { template, messages })
}

fn substitute(template: &str, question: &str, context: &str) -> String {
    let mut out = String::with_capacity(template.len() + question.len() + context.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        if let Some(after) = tail.strip_prefix("{question}") {
            out.push_str(question);
            rest = after;
        } else if let Some(after) = tail.strip_prefix("{context}") {
            out.push_str(context);
            rest = after;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}
