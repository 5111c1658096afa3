//! Per-user behavioral profiles: the executable persona manual (style
//! commands with verbatim examples) and the demographic record, consolidated
//! into a [`UserProfile`].

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Conversation;
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest};
use crate::prompts;

pub const MAX_COMMANDS: usize = 15;

pub const AGE_BRACKETS: &[&str] =
    &["under 18", "18-24", "25-34", "35-44", "45-54", "55-64", "65+"];

pub const EDUCATION_LEVELS: &[&str] = &[
    "no formal education",
    "primary education",
    "secondary education",
    "high school diploma",
    "associate degree",
    "bachelor's degree",
    "master's degree",
    "doctoral degree",
];

/// Income bracket labels. The field is categorical but the level list is an
/// artifact convention; override via config when a corpus declares its own.
pub const INCOME_BRACKETS: &[&str] = &[
    "under $25,000",
    "$25,000-$49,999",
    "$50,000-$74,999",
    "$75,000-$99,999",
    "$100,000-$149,999",
    "$150,000+",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleDimension {
    Capitalization,
    Punctuation,
    MessageLength,
    Formality,
    TechnicalRegister,
    Greeting,
    Emoticon,
    IntentDensity,
}

impl StyleDimension {
    pub const ALL: [StyleDimension; 8] = [
        StyleDimension::Capitalization,
        StyleDimension::Punctuation,
        StyleDimension::MessageLength,
        StyleDimension::Formality,
        StyleDimension::TechnicalRegister,
        StyleDimension::Greeting,
        StyleDimension::Emoticon,
        StyleDimension::IntentDensity,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleExample {
    pub quote: String,
    pub source_conversation_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleCommand {
    pub command: String,
    pub dimension: StyleDimension,
    pub examples: Vec<StyleExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaManual {
    pub user_id: String,
    pub commands: Vec<StyleCommand>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoField {
    Age,
    Education,
    Gender,
    Occupation,
    MaritalStatus,
    Income,
    Location,
}

impl DemoField {
    pub const ALL: [DemoField; 7] = [
        DemoField::Age,
        DemoField::Education,
        DemoField::Gender,
        DemoField::Occupation,
        DemoField::MaritalStatus,
        DemoField::Income,
        DemoField::Location,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DemoField::Age => "Age",
            DemoField::Education => "Education",
            DemoField::Gender => "Gender",
            DemoField::Occupation => "Occupation",
            DemoField::MaritalStatus => "Marital status",
            DemoField::Income => "Income",
            DemoField::Location => "Location",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            DemoField::Age => "age",
            DemoField::Education => "education",
            DemoField::Gender => "gender",
            DemoField::Occupation => "occupation",
            DemoField::MaritalStatus => "marital_status",
            DemoField::Income => "income",
            DemoField::Location => "location",
        }
    }

    fn from_key(key: &str) -> Option<Self> {
        DemoField::ALL.into_iter().find(|f| f.key() == key)
    }

    /// Whitelist for categorical fields; free-text fields return None.
    pub fn whitelist(self) -> Option<&'static [&'static str]> {
        match self {
            DemoField::Age => Some(AGE_BRACKETS),
            DemoField::Education => Some(EDUCATION_LEVELS),
            DemoField::Income => Some(INCOME_BRACKETS),
            _ => None,
        }
    }

    pub fn accepts(self, value: &str) -> bool {
        match self.whitelist() {
            Some(list) => list.contains(&value),
            None => !value.trim().is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMention {
    pub field: DemoField,
    pub value: String,
    pub conversation_id: String,
    pub evidence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueSource {
    Extracted,
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldValue {
    pub value: String,
    pub source: ValueSource,
    pub supporting_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DemographicRecord {
    pub fields: BTreeMap<DemoField, FieldValue>,
    pub consistency: f64,
    pub completeness: f64,
}

impl DemographicRecord {
    pub fn get(&self, field: DemoField) -> Option<&FieldValue> {
        self.fields.get(&field)
    }

    pub fn recompute_completeness(&mut self) {
        self.completeness = self.fields.len() as f64 / DemoField::ALL.len() as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub manual: PersonaManual,
    pub demographics: DemographicRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
    pub conversation_ids: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ProfilingError {
    #[error("could not parse persona manual: {0}")]
    ManualParse(String),
    #[error("all commands dropped by example verification")]
    EmptyManual,
    #[error("could not parse demographic mentions: {0}")]
    MentionParse(String),
    #[error("could not parse demographic inference: {0}")]
    InferenceParse(String),
    #[error("conflicting extracted values for {field}: {a:?} vs {b:?}")]
    Conflict { field: String, a: String, b: String },
    #[error("gateway: {0}")]
    Gateway(#[from] crate::gateway::GatewayError),
}

/// Unicode NFC plus whitespace collapse, the normalization used for
/// verbatim-example verification.
pub fn normalize_for_match(text: &str) -> String {
    text.nfc()
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn complete_with_repair(
    gateway: &dyn ChatGateway,
    model: &str,
    prompt: String,
    parse: impl Fn(&str) -> Result<serde_json::Value, String>,
) -> Result<serde_json::Value, (String, crate::gateway::GatewayError)> {
    let request = ChatRequest::new(
        model,
        prompts::JUDGE_TEMPERATURE,
        vec![ChatMessage::user(prompt.clone())],
    );
    let reply = gateway.complete(&request).map_err(|e| (String::new(), e))?;
    match parse(&reply.content) {
        Ok(v) => Ok(v),
        Err(first_err) => {
            let repair = ChatRequest::new(
                model,
                prompts::JUDGE_TEMPERATURE,
                vec![
                    ChatMessage::user(prompt),
                    ChatMessage::assistant(reply.content),
                    ChatMessage::user(format!(
                        "That reply was invalid ({first_err}). Reply again with only valid JSON \
                         in the requested schema."
                    )),
                ],
            );
            let repaired = gateway.complete(&repair).map_err(|e| (first_err.clone(), e))?;
            parse(&repaired.content).map_err(|e| {
                (
                    e,
                    crate::gateway::GatewayError::Provider("unparseable after repair".into()),
                )
            })
        }
    }
}

fn parse_raw_commands(reply: &str) -> Result<serde_json::Value, String> {
    let value: serde_json::Value =
        serde_json::from_str(crate::corpus::extract_json(reply)).map_err(|e| e.to_string())?;
    if !value.is_array() {
        return Err("expected a JSON array of commands".into());
    }
    for item in value.as_array().unwrap() {
        if item["command"].as_str().is_none() {
            return Err("command missing".into());
        }
        let dim = item["dimension"].as_str().ok_or("dimension missing")?;
        if serde_json::from_value::<StyleDimension>(serde_json::Value::String(dim.into())).is_err()
        {
            return Err(format!("unknown dimension {dim}"));
        }
        if !item["examples"].is_array() {
            return Err("examples missing".into());
        }
    }
    Ok(value)
}

/// One style-analysis completion per user, parsed into at most 15 commands.
/// Every example is verbatim-verified against the user's own turns
/// (normalized comparison); fabricated examples are dropped, commands with no
/// surviving example are dropped, and surviving examples are tagged with the
/// first conversation that contains them.
pub fn extract_style_profile(
    user_convs: &[Conversation],
    gateway: &dyn ChatGateway,
    model: &str,
) -> Result<PersonaManual, ProfilingError> {
    assert!(!user_convs.is_empty(), "need at least one conversation");
    let user_id = user_convs[0].user_id.clone();
    debug_assert!(user_convs.iter().all(|c| c.user_id == user_id));

    let mut text = String::new();
    for conv in user_convs {
        text.push_str(&format!("[conversation {}]\n", conv.conversation_id));
        text.push_str(&conv.transcript());
        text.push('\n');
    }
    let value = complete_with_repair(gateway, model, prompts::style_prompt(&text), parse_raw_commands)
        .map_err(|(msg, gw_err)| {
            if msg.is_empty() {
                ProfilingError::Gateway(gw_err)
            } else {
                ProfilingError::ManualParse(msg)
            }
        })?;

    // normalized user-turn text per conversation, in input order
    let normalized: Vec<(String, String)> = user_convs
        .iter()
        .map(|c| {
            let joined: String = c
                .user_turns()
                .map(|t| t.content.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            (c.conversation_id.clone(), normalize_for_match(&joined))
        })
        .collect();

    let mut commands = Vec::new();
    for item in value.as_array().unwrap().iter().take(MAX_COMMANDS) {
        let command = item["command"].as_str().unwrap().to_string();
        let dimension: StyleDimension =
            serde_json::from_value(item["dimension"].clone()).unwrap();
        let mut examples = Vec::new();
        for quote in item["examples"].as_array().unwrap() {
            let Some(quote) = quote.as_str() else { continue };
            let needle = normalize_for_match(quote);
            if needle.is_empty() {
                continue;
            }
            if let Some((conv_id, _)) = normalized.iter().find(|(_, hay)| hay.contains(&needle)) {
                examples.push(StyleExample {
                    quote: quote.to_string(),
                    source_conversation_id: conv_id.clone(),
                });
            }
        }
        if !examples.is_empty() {
            commands.push(StyleCommand { command, dimension, examples });
        }
    }
    if commands.is_empty() {
        return Err(ProfilingError::EmptyManual);
    }
    Ok(PersonaManual { user_id, commands })
}

fn parse_raw_mentions(reply: &str) -> Result<serde_json::Value, String> {
    let value: serde_json::Value =
        serde_json::from_str(crate::corpus::extract_json(reply)).map_err(|e| e.to_string())?;
    if !value.is_array() {
        return Err("expected a JSON array of mentions".into());
    }
    Ok(value)
}

/// Scan one conversation for explicit demographic self-disclosures.
/// Categorical fields are validated against their whitelists; invalid
/// categories are rejected rather than coerced.
pub fn extract_demographic_mentions(
    conv: &Conversation,
    gateway: &dyn ChatGateway,
    model: &str,
) -> Result<Vec<FieldMention>, ProfilingError> {
    let prompt = prompts::demo_extract_prompt(&conv.transcript());
    let value = complete_with_repair(gateway, model, prompt, parse_raw_mentions).map_err(
        |(msg, gw_err)| {
            if msg.is_empty() {
                ProfilingError::Gateway(gw_err)
            } else {
                ProfilingError::MentionParse(msg)
            }
        },
    )?;

    let mut mentions = Vec::new();
    for item in value.as_array().unwrap() {
        let Some(field) = item["field"].as_str().and_then(DemoField::from_key) else {
            continue;
        };
        let Some(raw) = item["value"].as_str() else { continue };
        let candidate = raw.trim().to_lowercase();
        let accepted = match field.whitelist() {
            Some(_) => field.accepts(candidate.as_str()),
            None => field.accepts(raw),
        };
        if !accepted {
            continue;
        }
        let stored = if field.whitelist().is_some() { candidate } else { raw.trim().to_string() };
        mentions.push(FieldMention {
            field,
            value: stored,
            conversation_id: conv.conversation_id.clone(),
            evidence: item["evidence"].as_str().unwrap_or_default().to_string(),
        });
    }
    Ok(mentions)
}

/// Majority vote per field across one user's mentions. Strict ties abstain.
/// Consistency is the share of fields (with at least two mentions) where all
/// mentions agree; 1.0 vacuously when no field has two.
pub fn aggregate_demographics(mentions: &[FieldMention]) -> DemographicRecord {
    let mut by_field: BTreeMap<DemoField, Vec<&str>> = BTreeMap::new();
    for m in mentions {
        by_field.entry(m.field).or_default().push(m.value.as_str());
    }

    let mut fields = BTreeMap::new();
    let mut multi_fields = 0usize;
    let mut agreeing_fields = 0usize;
    for (field, values) in &by_field {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for v in values {
            *counts.entry(v).or_insert(0) += 1;
        }
        if values.len() >= 2 {
            multi_fields += 1;
            if counts.len() == 1 {
                agreeing_fields += 1;
            }
        }
        let max = counts.values().copied().max().unwrap();
        let winners: Vec<&str> = counts
            .iter()
            .filter(|(_, &n)| n == max)
            .map(|(v, _)| *v)
            .collect();
        if winners.len() == 1 {
            fields.insert(
                *field,
                FieldValue {
                    value: winners[0].to_string(),
                    source: ValueSource::Extracted,
                    supporting_count: max,
                },
            );
        }
        // strict tie: abstain
    }

    let consistency = if multi_fields == 0 {
        1.0
    } else {
        agreeing_fields as f64 / multi_fields as f64
    };
    let mut record = DemographicRecord { fields, consistency, completeness: 0.0 };
    record.recompute_completeness();
    record
}

fn parse_raw_inference(reply: &str) -> Result<serde_json::Value, String> {
    let value: serde_json::Value =
        serde_json::from_str(crate::corpus::extract_json(reply)).map_err(|e| e.to_string())?;
    if !value.is_object() {
        return Err("expected a JSON object".into());
    }
    Ok(value)
}

/// Infer values only for fields the extracted record leaves empty. The
/// prompt instructs abstention; "unknown" replies and whitelist failures
/// leave the field empty. Returns a record holding only the inferred fields.
pub fn infer_demographics(
    user_convs: &[Conversation],
    existing: &DemographicRecord,
    gateway: &dyn ChatGateway,
    model: &str,
) -> Result<DemographicRecord, ProfilingError> {
    let missing: Vec<DemoField> = DemoField::ALL
        .into_iter()
        .filter(|f| existing.get(*f).is_none())
        .collect();
    let mut record = DemographicRecord { consistency: 1.0, ..Default::default() };
    if missing.is_empty() {
        return Ok(record);
    }

    let mut text = String::new();
    for conv in user_convs {
        text.push_str(&conv.transcript());
        text.push('\n');
    }
    let keys: Vec<&str> = missing.iter().map(|f| f.key()).collect();
    let prompt = prompts::demo_infer_prompt(&keys, &text);
    let value = complete_with_repair(gateway, model, prompt, parse_raw_inference).map_err(
        |(msg, gw_err)| {
            if msg.is_empty() {
                ProfilingError::Gateway(gw_err)
            } else {
                ProfilingError::InferenceParse(msg)
            }
        },
    )?;

    for field in missing {
        let Some(raw) = value[field.key()].as_str() else { continue };
        let trimmed = raw.trim();
        if trimmed.eq_ignore_ascii_case("unknown") || trimmed.is_empty() {
            continue;
        }
        let candidate = if field.whitelist().is_some() {
            trimmed.to_lowercase()
        } else {
            trimmed.to_string()
        };
        if !field.accepts(candidate.as_str()) {
            continue;
        }
        record.fields.insert(
            field,
            FieldValue { value: candidate, source: ValueSource::Inferred, supporting_count: 0 },
        );
    }
    record.recompute_completeness();
    Ok(record)
}

/// Merge manual + demographics into a profile. Extracted values always win
/// over inferred ones; two different extracted claims for one field are an
/// upstream bug and fail loudly.
pub fn consolidate_profile(
    manual: PersonaManual,
    extracted: &DemographicRecord,
    inferred: &DemographicRecord,
    background: Option<String>,
    conversation_ids: Vec<String>,
) -> Result<UserProfile, ProfilingError> {
    let mut fields = extracted.fields.clone();
    for (field, value) in &inferred.fields {
        match fields.get(field) {
            Some(existing) => {
                if existing.source == ValueSource::Extracted
                    && value.source == ValueSource::Extracted
                    && existing.value != value.value
                {
                    return Err(ProfilingError::Conflict {
                        field: field.key().to_string(),
                        a: existing.value.clone(),
                        b: value.value.clone(),
                    });
                }
                // extracted (or earlier) value wins
            }
            None => {
                fields.insert(*field, value.clone());
            }
        }
    }
    let mut demographics = DemographicRecord {
        fields,
        consistency: extracted.consistency,
        completeness: 0.0,
    };
    demographics.recompute_completeness();

    let mut conversation_ids = conversation_ids;
    for cmd in &manual.commands {
        for ex in &cmd.examples {
            if !conversation_ids.contains(&ex.source_conversation_id) {
                conversation_ids.push(ex.source_conversation_id.clone());
            }
        }
    }

    Ok(UserProfile {
        user_id: manual.user_id.clone(),
        manual,
        demographics,
        background,
        conversation_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub field: String,
    pub test_cases: usize,
    pub inferred: usize,
    pub correct: usize,
    /// None when nothing was inferred for the field (reported as n/a).
    pub accuracy: Option<f64>,
}

/// Per-field inference accuracy against golden extracted records, paired by
/// index. Strict categorical matching; the overall row is the column sums.
pub fn validate_inference(
    inferred: &[DemographicRecord],
    golden: &[DemographicRecord],
) -> Vec<AccuracyRow> {
    assert_eq!(inferred.len(), golden.len(), "records must pair up");
    let mut rows = Vec::new();
    let mut totals = (0usize, 0usize, 0usize);
    for field in DemoField::ALL {
        let mut test_cases = 0;
        let mut inferred_count = 0;
        let mut correct = 0;
        for (inf, gold) in inferred.iter().zip(golden) {
            let Some(gold_value) = gold.get(field) else { continue };
            if gold_value.source != ValueSource::Extracted {
                continue;
            }
            test_cases += 1;
            if let Some(inf_value) = inf.get(field) {
                inferred_count += 1;
                if inf_value.value == gold_value.value {
                    correct += 1;
                }
            }
        }
        totals.0 += test_cases;
        totals.1 += inferred_count;
        totals.2 += correct;
        rows.push(AccuracyRow {
            field: field.label().to_string(),
            test_cases,
            inferred: inferred_count,
            correct,
            accuracy: (inferred_count > 0).then(|| correct as f64 / inferred_count as f64),
        });
    }
    rows.push(AccuracyRow {
        field: "Overall".into(),
        test_cases: totals.0,
        inferred: totals.1,
        correct: totals.2,
        accuracy: (totals.1 > 0).then(|| totals.2 as f64 / totals.1 as f64),
    });
    rows
}

/// Write profiles as line-delimited JSON records.
pub fn save_profiles<W: Write>(mut writer: W, profiles: &[UserProfile]) -> std::io::Result<()> {
    for p in profiles {
        writeln!(writer, "{}", serde_json::to_string(p)?)?;
    }
    Ok(())
}

pub fn load_profiles<R: BufRead>(reader: R) -> std::io::Result<Vec<UserProfile>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: UserProfile = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TurnRole;
    use crate::gateway::{FallbackPolicy, FixtureGateway};

    fn conv(id: &str, user_text: &str) -> Conversation {
        Conversation {
            conversation_id: id.into(),
            user_id: "u1".into(),
            source_model: "gpt-4o".into(),
            turns: vec![
                crate::corpus::Turn { role: TurnRole::User, content: user_text.into(), index: 0 },
                crate::corpus::Turn { role: TurnRole::Assistant, content: "reply".into(), index: 1 },
            ],
            language: None,
            tags: None,
        }
    }

    fn mention(field: DemoField, value: &str) -> FieldMention {
        FieldMention {
            field,
            value: value.into(),
            conversation_id: "c1".into(),
            evidence: value.into(),
        }
    }

    fn canned(reply: &str) -> FixtureGateway {
        FixtureGateway::new(FallbackPolicy::Canned(reply.into()))
    }

    #[test]
    fn style_extraction_keeps_verbatim_examples() {
        let convs = vec![conv("C1", "i wanna share a place that i love")];
        let gw = canned(
            r#"[{"command":"Use all lowercase letters","dimension":"capitalization","examples":["i wanna share a place"]}]"#,
        );
        let manual = extract_style_profile(&convs, &gw, "m").unwrap();
        assert_eq!(manual.commands.len(), 1);
        assert_eq!(manual.commands[0].examples[0].source_conversation_id, "C1");
    }

    #[test]
    fn style_extraction_drops_fabricated_examples() {
        let convs = vec![conv("C1", "short real message")];
        let gw = canned(
            r#"[{"command":"Ramble at length","dimension":"message_length","examples":["this quote appears nowhere"]},
                {"command":"Keep it short","dimension":"message_length","examples":["short real message"]}]"#,
        );
        let manual = extract_style_profile(&convs, &gw, "m").unwrap();
        assert_eq!(manual.commands.len(), 1);
        assert_eq!(manual.commands[0].command, "Keep it short");
    }

    #[test]
    fn style_extraction_caps_at_fifteen() {
        let convs = vec![conv("C1", "the same message repeated here")];
        let items: Vec<String> = (0..20)
            .map(|i| {
                format!(
                    r#"{{"command":"Command {i}","dimension":"formality","examples":["the same message"]}}"#
                )
            })
            .collect();
        let gw = canned(&format!("[{}]", items.join(",")));
        let manual = extract_style_profile(&convs, &gw, "m").unwrap();
        assert_eq!(manual.commands.len(), 15);
        assert_eq!(manual.commands[0].command, "Command 0");
    }

    #[test]
    fn style_extraction_all_dropped_is_empty_manual() {
        let convs = vec![conv("C1", "real text")];
        let gw = canned(
            r#"[{"command":"X","dimension":"greeting","examples":["fabricated"]}]"#,
        );
        assert!(matches!(
            extract_style_profile(&convs, &gw, "m"),
            Err(ProfilingError::EmptyManual)
        ));
    }

    #[test]
    fn verbatim_match_survives_whitespace_and_nfc() {
        let convs = vec![conv("C1", "caf\u{00e9}  was   nice")];
        // same text with combining accent and collapsed spacing
        let gw = canned(
            r#"[{"command":"X","dimension":"formality","examples":["café was nice"]}]"#,
        );
        let manual = extract_style_profile(&convs, &gw, "m").unwrap();
        assert_eq!(manual.commands.len(), 1);
    }

    #[test]
    fn mentions_validate_categorical_whitelist() {
        let c = conv("C1", "i am 19 and in the 18-24 group");
        let gw = canned(
            r#"[{"field":"age","value":"18-24","evidence":"18-24 group"},
                {"field":"age","value":"19","evidence":"i am 19"}]"#,
        );
        let mentions = extract_demographic_mentions(&c, &gw, "m").unwrap();
        assert_eq!(mentions.len(), 1);
        assert_eq!(mentions[0].value, "18-24");
    }

    #[test]
    fn mentions_empty_for_no_disclosures() {
        let c = conv("C1", "how do i sort a vector");
        let gw = canned("[]");
        assert!(extract_demographic_mentions(&c, &gw, "m").unwrap().is_empty());
    }

    #[test]
    fn majority_vote_picks_winner() {
        let record = aggregate_demographics(&[
            mention(DemoField::Age, "18-24"),
            mention(DemoField::Age, "18-24"),
            mention(DemoField::Age, "25-34"),
        ]);
        let age = record.get(DemoField::Age).unwrap();
        assert_eq!(age.value, "18-24");
        assert_eq!(age.supporting_count, 2);
    }

    #[test]
    fn majority_tie_abstains() {
        let record = aggregate_demographics(&[
            mention(DemoField::Age, "18-24"),
            mention(DemoField::Age, "25-34"),
        ]);
        assert!(record.get(DemoField::Age).is_none());
    }

    #[test]
    fn vacuous_consistency_is_one() {
        let record = aggregate_demographics(&[
            mention(DemoField::Age, "18-24"),
            mention(DemoField::Gender, "female"),
        ]);
        assert_eq!(record.consistency, 1.0);
        assert!((record.completeness - 2.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn inference_skips_populated_fields_and_unknowns() {
        let existing = aggregate_demographics(&[mention(DemoField::Age, "18-24")]);
        let gw = canned(
            r#"{"education":"bachelor's degree","income":"unknown","gender":"unknown",
                "occupation":"unknown","marital_status":"unknown","location":"unknown"}"#,
        );
        let inferred =
            infer_demographics(&[conv("C1", "text")], &existing, &gw, "m").unwrap();
        assert!(inferred.get(DemoField::Age).is_none());
        let edu = inferred.get(DemoField::Education).unwrap();
        assert_eq!(edu.value, "bachelor's degree");
        assert_eq!(edu.source, ValueSource::Inferred);
        assert!(inferred.get(DemoField::Income).is_none());
    }

    #[test]
    fn inference_rejects_off_whitelist_values() {
        let existing = DemographicRecord::default();
        let gw = canned(r#"{"age":"young adult","education":"phd dropout"}"#);
        let inferred =
            infer_demographics(&[conv("C1", "text")], &existing, &gw, "m").unwrap();
        assert!(inferred.fields.is_empty());
    }

    fn manual_for(user: &str) -> PersonaManual {
        PersonaManual {
            user_id: user.into(),
            commands: vec![StyleCommand {
                command: "Keep it short".into(),
                dimension: StyleDimension::MessageLength,
                examples: vec![StyleExample {
                    quote: "ok".into(),
                    source_conversation_id: "C1".into(),
                }],
            }],
        }
    }

    #[test]
    fn consolidate_extracted_wins() {
        let extracted = aggregate_demographics(&[mention(DemoField::Age, "18-24")]);
        let mut inferred = DemographicRecord::default();
        inferred.fields.insert(
            DemoField::Age,
            FieldValue { value: "25-34".into(), source: ValueSource::Inferred, supporting_count: 0 },
        );
        let profile =
            consolidate_profile(manual_for("u1"), &extracted, &inferred, None, vec!["C1".into()])
                .unwrap();
        let age = profile.demographics.get(DemoField::Age).unwrap();
        assert_eq!(age.value, "18-24");
        assert_eq!(age.source, ValueSource::Extracted);
    }

    #[test]
    fn consolidate_fills_from_inferred() {
        let extracted = DemographicRecord::default();
        let mut inferred = DemographicRecord::default();
        inferred.fields.insert(
            DemoField::Gender,
            FieldValue { value: "female".into(), source: ValueSource::Inferred, supporting_count: 0 },
        );
        let profile =
            consolidate_profile(manual_for("u1"), &extracted, &inferred, None, vec!["C1".into()])
                .unwrap();
        assert_eq!(profile.demographics.get(DemoField::Gender).unwrap().value, "female");
        assert!((profile.demographics.completeness - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn consolidate_conflicting_extracted_fails() {
        let a = aggregate_demographics(&[mention(DemoField::Age, "18-24")]);
        let b = aggregate_demographics(&[mention(DemoField::Age, "25-34")]);
        assert!(matches!(
            consolidate_profile(manual_for("u1"), &a, &b, None, vec!["C1".into()]),
            Err(ProfilingError::Conflict { .. })
        ));
    }

    #[test]
    fn consolidate_covers_example_sources() {
        let profile = consolidate_profile(
            manual_for("u1"),
            &DemographicRecord::default(),
            &DemographicRecord::default(),
            None,
            vec![],
        )
        .unwrap();
        assert!(profile.conversation_ids.contains(&"C1".to_string()));
    }

    fn golden_record(field: DemoField, value: &str) -> DemographicRecord {
        aggregate_demographics(&[mention(field, value)])
    }

    fn inferred_record(field: DemoField, value: &str) -> DemographicRecord {
        let mut r = DemographicRecord::default();
        r.fields.insert(
            field,
            FieldValue { value: value.into(), source: ValueSource::Inferred, supporting_count: 0 },
        );
        r
    }

    #[test]
    fn validation_accuracy_per_field_and_overall() {
        let golden = vec![
            golden_record(DemoField::Gender, "female"),
            golden_record(DemoField::Gender, "male"),
            golden_record(DemoField::Gender, "female"),
        ];
        let inferred = vec![
            inferred_record(DemoField::Gender, "female"),
            inferred_record(DemoField::Gender, "female"),
            DemographicRecord::default(),
        ];
        let rows = validate_inference(&inferred, &golden);
        let gender = rows.iter().find(|r| r.field == "Gender").unwrap();
        assert_eq!((gender.test_cases, gender.inferred, gender.correct), (3, 2, 1));
        assert!((gender.accuracy.unwrap() - 0.5).abs() < 1e-12);
        let overall = rows.last().unwrap();
        assert_eq!((overall.test_cases, overall.inferred, overall.correct), (3, 2, 1));
    }

    #[test]
    fn validation_zero_inferred_is_na() {
        let golden = vec![golden_record(DemoField::Income, "under $25,000")];
        let inferred = vec![DemographicRecord::default()];
        let rows = validate_inference(&inferred, &golden);
        let income = rows.iter().find(|r| r.field == "Income").unwrap();
        assert_eq!(income.inferred, 0);
        assert!(income.accuracy.is_none());
    }

    #[test]
    fn profiles_round_trip_through_jsonl() {
        let profile = consolidate_profile(
            manual_for("u1"),
            &aggregate_demographics(&[mention(DemoField::Age, "18-24")]),
            &DemographicRecord::default(),
            Some("background note".into()),
            vec!["C1".into()],
        )
        .unwrap();
        let mut buf = Vec::new();
        save_profiles(&mut buf, &[profile.clone()]).unwrap();
        let loaded = load_profiles(&buf[..]).unwrap();
        assert_eq!(loaded, vec![profile]);
    }
}
