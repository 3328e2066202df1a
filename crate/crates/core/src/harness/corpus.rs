//! Prompt corpora in JSON Lines: one `{"id": ..., "prompt": "...", "lang": "..."}`
//! object per line. Ids may be strings or integers and must be unique.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawId {
    Int(i64),
    Str(String),
}

#[derive(Deserialize)]
struct RawPrompt {
    id: RawId,
    prompt: String,
    #[serde(default)]
    lang: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub prompt: String,
    pub lang: Option<String>,
}

pub fn parse_prompts(text: &str) -> Result<Vec<PromptRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let raw: RawPrompt = serde_json::from_str(line)
            .map_err(|e| Error::parse("prompt record", line, format!("line {}: {e}", lineno + 1)))?;
        let id = match raw.id {
            RawId::Int(i) => i.to_string(),
            RawId::Str(s) => s,
        };
        if !seen.insert(id.clone()) {
            return Err(Error::InvalidInput(format!("duplicate prompt id {id:?}")));
        }
        out.push(PromptRecord {
            id,
            prompt: raw.prompt,
            lang: raw.lang,
        });
    }
    Ok(out)
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<PromptRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompts(&text)
}
