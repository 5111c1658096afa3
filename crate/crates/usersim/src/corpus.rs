//! Conversation ingestion, normalization, and the four-stage
//! filtering/tagging/curation pipeline.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatGateway, ChatMessage, ChatRequest};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnRole {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: TurnRole,
    pub content: String,
    #[serde(default)]
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageTag {
    pub code: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationTags {
    pub domain: String,
    pub task_type: String,
    pub complexity: u8,
    pub engagement: u8,
    pub depth: u8,
}

impl ConversationTags {
    pub fn quality_score(&self) -> u8 {
        self.complexity + self.engagement + self.depth
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, v) in [
            ("complexity", self.complexity),
            ("engagement", self.engagement),
            ("depth", self.depth),
        ] {
            if !(1..=5).contains(&v) {
                return Err(CorpusError::TagParse(format!("{name} {v} out of 1-5")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub user_id: String,
    pub source_model: String,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<LanguageTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<ConversationTags>,
}

impl Conversation {
    /// Role alternation starting with user: drops empty and leading-assistant
    /// turns, merges consecutive same-role turns, recompacts indices.
    pub fn normalize(mut self) -> Option<Self> {
        let mut turns: Vec<Turn> = Vec::new();
        for turn in self.turns.drain(..) {
            if turn.content.trim().is_empty() {
                continue;
            }
            if turns.is_empty() && turn.role == TurnRole::Assistant {
                continue;
            }
            match turns.last_mut() {
                Some(last) if last.role == turn.role => {
                    last.content.push('\n');
                    last.content.push_str(&turn.content);
                }
                _ => turns.push(turn),
            }
        }
        for (i, t) in turns.iter_mut().enumerate() {
            t.index = i;
        }
        if turns.iter().any(|t| t.role == TurnRole::User) {
            self.turns = turns;
            Some(self)
        } else {
            None
        }
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.role == TurnRole::User)
    }

    pub fn transcript(&self) -> String {
        let pairs: Vec<(bool, &str)> = self
            .turns
            .iter()
            .map(|t| (t.role == TurnRole::User, t.content.as_str()))
            .collect();
        prompts::transcript(&pairs)
    }

    pub fn quality_score(&self) -> Option<u8> {
        self.tags.as_ref().map(|t| t.quality_score())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationPolicy {
    pub per_domain_cap: usize,
    pub per_task_cap: usize,
    pub per_user_cap: usize,
    pub min_domain_count: usize,
    #[serde(default)]
    pub excluded_domains: Vec<String>,
    #[serde(default)]
    pub excluded_task_types: Vec<String>,
}

impl Default for CurationPolicy {
    fn default() -> Self {
        Self {
            per_domain_cap: 1000,
            per_task_cap: 500,
            per_user_cap: 5,
            min_domain_count: 3,
            excluded_domains: vec![],
            excluded_task_types: vec!["Translation".into(), "Summarization".into()],
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no valid conversation records in input")]
    Format,
    #[error("could not parse conversation tags: {0}")]
    TagParse(String),
    #[error("gateway: {0}")]
    Gateway(#[from] crate::gateway::GatewayError),
}

#[derive(Debug)]
pub struct ParseOutcome {
    pub conversations: Vec<Conversation>,
    pub skipped: usize,
}

/// Parse line-delimited conversation records. Malformed lines are counted
/// and skipped; the call fails only when nothing parses at all.
pub fn parse_conversations<R: BufRead>(reader: R) -> Result<ParseOutcome, CorpusError> {
    let mut conversations = Vec::new();
    let mut skipped = 0usize;
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Conversation>(&line) {
            Ok(conv) => match conv.normalize() {
                Some(conv) => conversations.push(conv),
                None => skipped += 1,
            },
            Err(_) => skipped += 1,
        }
    }
    if conversations.is_empty() {
        return Err(CorpusError::Format);
    }
    Ok(ParseOutcome { conversations, skipped })
}

/// Default greeting/thanks lexicon for trivial-round trimming.
pub const DEFAULT_TRIVIAL_LEXICON: &[&str] = &[
    "hi", "hello", "hey", "thanks", "thank", "thx", "ok", "okay", "bye", "goodbye", "great",
    "cool", "perfect",
];

fn is_trivial(content: &str, lexicon: &[&str]) -> bool {
    let words: Vec<String> = content
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .collect();
    if words.is_empty() || words.len() > 5 {
        return false;
    }
    words.iter().any(|w| lexicon.contains(&w.as_str()))
}

/// Remove greeting/thank-you rounds of at most 5 words (user turn plus its
/// paired assistant reply) and recompact indices.
pub fn trim_trivial_rounds(conv: &Conversation, lexicon: &[&str]) -> Conversation {
    let mut turns = Vec::new();
    let mut i = 0;
    while i < conv.turns.len() {
        let turn = &conv.turns[i];
        if turn.role == TurnRole::User && is_trivial(&turn.content, lexicon) {
            // skip this user turn and its paired assistant reply, if any
            if conv
                .turns
                .get(i + 1)
                .is_some_and(|t| t.role == TurnRole::Assistant)
            {
                i += 2;
            } else {
                i += 1;
            }
            continue;
        }
        turns.push(turn.clone());
        i += 1;
    }
    for (i, t) in turns.iter_mut().enumerate() {
        t.index = i;
    }
    Conversation { turns, ..conv.clone() }
}

/// Baseline English-likelihood scorer: fraction of character trigrams that
/// are common English trigrams, scaled into a confidence. Pluggable; any
/// real language-id model can replace it through the scorer argument of
/// [`filter_stage1`].
pub fn english_scorer(text: &str) -> (String, f64) {
    const COMMON: &[&str] = &[
        "the", "and", "ing", "ent", "ion", "her", "for", "tha", "nth", "int", "ere", "tio",
        "ter", "est", "ers", "ati", "hat", "ate", "all", "eth", "hes", "ver", "his", "oft",
        "ith", "fth", "sth", "oth", "res", "ont", "are", "ear", "wit", "was", "you", "thi",
        "can", "not", "hav", "wha", "out", "use", "our", "ave", "men", "ould", "how",
    ];
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphabetic() { c } else { ' ' })
        .collect();
    let mut total = 0usize;
    let mut hits = 0usize;
    for word in cleaned.split_whitespace() {
        let bytes = word.as_bytes();
        if bytes.len() < 3 {
            continue;
        }
        for window in bytes.windows(3) {
            total += 1;
            let tri = std::str::from_utf8(window).unwrap();
            if COMMON.contains(&tri) {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return ("und".into(), 0.0);
    }
    let confidence = ((hits as f64 / total as f64) * 8.0).min(1.0);
    ("en".into(), confidence)
}

/// Stage 1: keep multi-turn conversations confidently identified as the
/// target language; annotate the language field.
pub fn filter_stage1<F>(
    convs: Vec<Conversation>,
    min_turns: usize,
    lang: &str,
    min_confidence: f64,
    scorer: F,
) -> Vec<Conversation>
where
    F: Fn(&str) -> (String, f64) + Sync,
{
    let scored = crate::par::map(&convs, |conv| {
        let text: String = conv
            .turns
            .iter()
            .map(|t| t.content.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        scorer(&text)
    });
    convs
        .into_iter()
        .zip(scored)
        .filter_map(|(mut conv, (code, confidence))| {
            if conv.turns.len() >= min_turns && code == lang && confidence >= min_confidence {
                conv.language = Some(LanguageTag { code, confidence });
                Some(conv)
            } else {
                None
            }
        })
        .collect()
}

/// Stage 2: trim trivial rounds, then keep conversations from the required
/// source model with enough substantive user turns.
pub fn filter_stage2(
    convs: Vec<Conversation>,
    required_model: &str,
    min_substantive_turns: usize,
    lexicon: &[&str],
) -> Vec<Conversation> {
    let trimmed = crate::par::map(&convs, |conv| trim_trivial_rounds(conv, lexicon));
    trimmed
        .into_iter()
        .filter(|conv| {
            conv.source_model == required_model
                && conv.user_turns().count() >= min_substantive_turns
        })
        .collect()
}

fn parse_tags_reply(reply: &str) -> Result<ConversationTags, CorpusError> {
    let value: serde_json::Value = serde_json::from_str(extract_json(reply))
        .map_err(|e| CorpusError::TagParse(e.to_string()))?;
    let get_score = |key: &str| -> Result<u8, CorpusError> {
        value[key]
            .as_u64()
            .and_then(|v| u8::try_from(v).ok())
            .ok_or_else(|| CorpusError::TagParse(format!("missing {key}")))
    };
    let tags = ConversationTags {
        domain: value["domain"]
            .as_str()
            .ok_or_else(|| CorpusError::TagParse("missing domain".into()))?
            .to_string(),
        task_type: value["task_type"]
            .as_str()
            .ok_or_else(|| CorpusError::TagParse("missing task_type".into()))?
            .to_string(),
        complexity: get_score("complexity")?,
        engagement: get_score("engagement")?,
        depth: get_score("depth")?,
    };
    tags.validate()?;
    Ok(tags)
}

/// Trim any prose around the first JSON object/array in an LLM reply.
pub(crate) fn extract_json(reply: &str) -> &str {
    let start = reply.find(['{', '[']);
    let end = reply.rfind(['}', ']']);
    match (start, end) {
        (Some(s), Some(e)) if s <= e => &reply[s..=e],
        _ => reply,
    }
}

/// Tag one conversation with domain, task type, and quality scores via a
/// judge-style completion. One repair retry on a malformed reply.
pub fn tag_conversation(
    conv: &Conversation,
    gateway: &dyn ChatGateway,
    model: &str,
) -> Result<ConversationTags, CorpusError> {
    let prompt = prompts::tagging_prompt(&conv.transcript());
    let request = ChatRequest::new(
        model,
        prompts::JUDGE_TEMPERATURE,
        vec![ChatMessage::user(prompt.clone())],
    );
    let reply = gateway.complete(&request)?;
    match parse_tags_reply(&reply.content) {
        Ok(tags) => Ok(tags),
        Err(first_err) => {
            let repair = ChatRequest::new(
                model,
                prompts::JUDGE_TEMPERATURE,
                vec![
                    ChatMessage::user(prompt),
                    ChatMessage::assistant(reply.content),
                    ChatMessage::user(format!(
                        "That reply was invalid ({first_err}). Reply again with only the \
                         JSON object, scores as integers 1-5."
                    )),
                ],
            );
            let repaired = gateway.complete(&repair)?;
            parse_tags_reply(&repaired.content)
        }
    }
}

/// Final curation: exclusions, deterministic caps, then minimum domain
/// counts. Sort order is quality descending with conversation_id ascending
/// as the tiebreak, which also fixes the output order.
pub fn curate(convs: Vec<Conversation>, policy: &CurationPolicy) -> Vec<Conversation> {
    let mut convs: Vec<Conversation> = convs
        .into_iter()
        .filter(|c| {
            c.tags.as_ref().is_some_and(|t| {
                !policy.excluded_domains.contains(&t.domain)
                    && !policy.excluded_task_types.contains(&t.task_type)
            })
        })
        .collect();
    convs.sort_by(|a, b| {
        b.quality_score()
            .cmp(&a.quality_score())
            .then(a.conversation_id.cmp(&b.conversation_id))
    });

    let mut per_domain: HashMap<String, usize> = HashMap::new();
    let mut per_task: HashMap<String, usize> = HashMap::new();
    let mut per_user: HashMap<String, usize> = HashMap::new();
    let mut kept = Vec::new();
    for conv in convs {
        let tags = conv.tags.as_ref().unwrap();
        let d = per_domain.entry(tags.domain.clone()).or_insert(0);
        let t = per_task.entry(tags.task_type.clone()).or_insert(0);
        let u = per_user.entry(conv.user_id.clone()).or_insert(0);
        if *d < policy.per_domain_cap && *t < policy.per_task_cap && *u < policy.per_user_cap {
            *d += 1;
            *t += 1;
            *u += 1;
            kept.push(conv);
        }
    }

    let mut domain_counts: HashMap<&str, usize> = HashMap::new();
    for conv in &kept {
        *domain_counts
            .entry(conv.tags.as_ref().unwrap().domain.as_str())
            .or_insert(0) += 1;
    }
    let surviving: Vec<String> = domain_counts
        .iter()
        .filter(|(_, &n)| n >= policy.min_domain_count)
        .map(|(d, _)| d.to_string())
        .collect();
    kept.retain(|c| surviving.contains(&c.tags.as_ref().unwrap().domain));
    kept
}
