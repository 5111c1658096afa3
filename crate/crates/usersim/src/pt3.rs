//! Paired-trajectory fidelity auditing: benchmark subsets, anti-leakage
//! profile cleaning, the five-dimension paired judge, and fidelity
//! aggregation/reporting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Conversation, TurnRole};
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest};
use crate::profiling::UserProfile;
use crate::prompts;
use crate::simulation::{SimCondition, SimTrajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_filter: Option<String>,
    #[serde(default)]
    pub excluded_domains: Vec<String>,
    #[serde(default)]
    pub excluded_task_types: Vec<String>,
    pub size: usize,
    pub min_user_turns: usize,
    pub min_quality: u8,
    pub max_message_chars: usize,
    pub per_user_cap: usize,
    /// Per-domain cap applied only to mixed-domain subsets.
    pub mixed_per_domain_cap: usize,
}

impl Default for SubsetSpec {
    fn default() -> Self {
        Self {
            name: "subset".into(),
            domain_filter: None,
            excluded_domains: vec!["Game Development".into()],
            excluded_task_types: vec![],
            size: 100,
            min_user_turns: 3,
            min_quality: 10,
            max_message_chars: 2000,
            per_user_cap: 2,
            mixed_per_domain_cap: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleaningClass {
    StrippedAll,
    RemovedTagged,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub case_id: String,
    pub real_conversation: Conversation,
    pub profile: UserProfile,
    pub cleaned_profile: UserProfile,
    pub cleaning_class: CleaningClass,
    pub subset: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    PersonaAffect,
    LinguisticStyle,
    TechCompetency,
    InteractionFlow,
    Pacing,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::PersonaAffect,
        Dimension::LinguisticStyle,
        Dimension::TechCompetency,
        Dimension::InteractionFlow,
        Dimension::Pacing,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Dimension::PersonaAffect => "persona_affect",
            Dimension::LinguisticStyle => "linguistic_style",
            Dimension::TechCompetency => "tech_competency",
            Dimension::InteractionFlow => "interaction_flow",
            Dimension::Pacing => "pacing",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Dimension::PersonaAffect => "Persona & Affective Traits",
            Dimension::LinguisticStyle => "Linguistic Style & Mechanics",
            Dimension::TechCompetency => "Tech Competency & Knowledge",
            Dimension::InteractionFlow => "Interaction & Data Flow",
            Dimension::Pacing => "Pacing & Action Sequencing",
        }
    }

    pub fn rubric(self) -> &'static str {
        match self {
            Dimension::PersonaAffect => {
                "Demeanor, emotional state, patience level, personality cues"
            }
            Dimension::LinguisticStyle => {
                "Vocabulary, phrasing, formality, typos, message length patterns"
            }
            Dimension::TechCompetency => {
                "Domain expertise, terminology usage, depth of questions"
            }
            Dimension::InteractionFlow => {
                "Information-sharing habits (scattered vs. dense), questioning style"
            }
            Dimension::Pacing => {
                "Turn length, topic transitions, conversation conclusion patterns"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionVerdict {
    #[serde(rename = "match")]
    pub matched: bool,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pt3Verdict {
    pub case_id: String,
    pub condition: SimCondition,
    pub verdicts: BTreeMap<Dimension, DimensionVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub dimension_rates: BTreeMap<Dimension, f64>,
    pub subset_rates: BTreeMap<String, f64>,
    pub fidelity_index: f64,
    pub weights: BTreeMap<Dimension, f64>,
    pub judgment_count: usize,
}

#[derive(Debug, Error)]
pub enum Pt3Error {
    #[error("only {available} qualifying conversations for a subset of size {needed}")]
    InsufficientCorpus { needed: usize, available: usize },
    #[error("missing profile for user {0}")]
    MissingProfile(String),
    #[error("could not parse judge verdict: {0}")]
    VerdictParse(String),
    #[error("weights must sum to 1, got {0}")]
    BadWeights(f64),
    #[error("no verdicts to aggregate")]
    Empty,
    #[error("gateway: {0}")]
    Gateway(#[from] crate::gateway::GatewayError),
}

/// Per-test-case anti-leakage cleaning. Commands are never removed; only
/// examples originating from the test conversation are.
pub fn clean_profile(profile: &UserProfile, test_conv_id: &str) -> (UserProfile, CleaningClass) {
    let sources = &profile.conversation_ids;
    if !sources.iter().any(|id| id == test_conv_id) {
        return (profile.clone(), CleaningClass::Unchanged);
    }
    let single_source = sources.len() == 1;
    let mut cleaned = profile.clone();
    for cmd in &mut cleaned.manual.commands {
        if single_source {
            cmd.examples.clear();
        } else {
            cmd.examples.retain(|e| e.source_conversation_id != test_conv_id);
        }
    }
    let class = if single_source {
        CleaningClass::StrippedAll
    } else {
        CleaningClass::RemovedTagged
    };
    (cleaned, class)
}

/// Build one benchmark subset: quality filters, exclusions, per-user (and
/// for mixed-domain subsets per-domain) caps, deterministic quality-sorted
/// selection of the top `size` cases with cleaned profiles attached.
pub fn build_subset(
    corpus: &[Conversation],
    profiles: &BTreeMap<String, UserProfile>,
    spec: &SubsetSpec,
) -> Result<Vec<TestCase>, Pt3Error> {
    let mut qualifying: Vec<&Conversation> = corpus
        .iter()
        .filter(|c| {
            let Some(tags) = c.tags.as_ref() else { return false };
            if let Some(domain) = &spec.domain_filter {
                if &tags.domain != domain {
                    return false;
                }
            }
            if spec.excluded_domains.contains(&tags.domain)
                || spec.excluded_task_types.contains(&tags.task_type)
            {
                return false;
            }
            tags.quality_score() >= spec.min_quality
                && c.user_turns().count() >= spec.min_user_turns
                && c.user_turns().all(|t| t.content.chars().count() <= spec.max_message_chars)
                && profiles.contains_key(&c.user_id)
        })
        .collect();
    qualifying.sort_by(|a, b| {
        b.quality_score()
            .cmp(&a.quality_score())
            .then(a.conversation_id.cmp(&b.conversation_id))
    });

    let mut per_user: BTreeMap<&str, usize> = BTreeMap::new();
    let mut per_domain: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cases = Vec::new();
    for conv in qualifying {
        if cases.len() == spec.size {
            break;
        }
        let user = per_user.entry(conv.user_id.as_str()).or_insert(0);
        if *user >= spec.per_user_cap {
            continue;
        }
        if spec.domain_filter.is_none() {
            let domain = conv.tags.as_ref().unwrap().domain.as_str();
            let count = per_domain.entry(domain).or_insert(0);
            if *count >= spec.mixed_per_domain_cap {
                continue;
            }
            *count += 1;
        }
        *user += 1;
        let profile = profiles.get(&conv.user_id).unwrap();
        let (cleaned_profile, cleaning_class) = clean_profile(profile, &conv.conversation_id);
        cases.push(TestCase {
            case_id: format!("case-{}", conv.conversation_id),
            real_conversation: conv.clone(),
            profile: profile.clone(),
            cleaned_profile,
            cleaning_class,
            subset: spec.name.clone(),
        });
    }

    if cases.len() < spec.size {
        return Err(Pt3Error::InsufficientCorpus { needed: spec.size, available: cases.len() });
    }
    Ok(cases)
}

/// Remove the termination token line from the final user turn; drop the
/// turn entirely when nothing else remains.
pub fn strip_termination(traj: &SimTrajectory) -> SimTrajectory {
    let mut out = traj.clone();
    let Some(last) = out.turns.last_mut() else { return out };
    if last.role != TurnRole::User {
        return out;
    }
    let stripped: Vec<&str> = last
        .content
        .lines()
        .filter(|l| l.trim() != prompts::TERMINATION_TOKEN)
        .collect();
    let new_content = stripped.join("\n").trim_end().to_string();
    if new_content.trim().is_empty() {
        out.turns.pop();
    } else {
        last.content = new_content;
    }
    for (i, t) in out.turns.iter_mut().enumerate() {
        t.index = i;
    }
    out
}

/// Left/right presentation order per case: true means the real conversation
/// is shown first. Seeded and balanced to within one across a subset.
pub fn presentation_orders(cases: usize, seed: u64) -> Vec<bool> {
    let mut orders: Vec<bool> = (0..cases).map(|i| i % 2 == 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    orders.shuffle(&mut rng);
    orders
}

fn rubric_text() -> String {
    Dimension::ALL
        .iter()
        .map(|d| format!("- {} ({}): {}", d.key(), d.label(), d.rubric()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn trajectory_transcript(traj: &SimTrajectory) -> String {
    let pairs: Vec<(bool, &str)> = traj
        .turns
        .iter()
        .map(|t| (t.role == TurnRole::User, t.content.as_str()))
        .collect();
    prompts::transcript(&pairs)
}

fn parse_verdict_reply(
    reply: &str,
    case_id: &str,
    condition: SimCondition,
) -> Result<Pt3Verdict, String> {
    let value: serde_json::Value =
        serde_json::from_str(crate::corpus::extract_json(reply)).map_err(|e| e.to_string())?;
    let mut verdicts = BTreeMap::new();
    for dim in Dimension::ALL {
        let entry = &value[dim.key()];
        let matched = entry["match"]
            .as_bool()
            .ok_or_else(|| format!("dimension {} missing or malformed", dim.key()))?;
        verdicts.insert(
            dim,
            DimensionVerdict {
                matched,
                rationale: entry["rationale"].as_str().unwrap_or_default().to_string(),
            },
        );
    }
    Ok(Pt3Verdict { case_id: case_id.into(), condition, verdicts, subset: None })
}

/// One paired judgment: both trajectories presented without labels in the
/// given order, scored on the five dimensions. One repair attempt.
#[allow(clippy::too_many_arguments)]
pub fn judge_pair(
    real: &Conversation,
    synthetic: &SimTrajectory,
    real_first: bool,
    gateway: &dyn ChatGateway,
    model: &str,
    case_id: &str,
) -> Result<Pt3Verdict, Pt3Error> {
    let real_text = real.transcript();
    let synth_text = trajectory_transcript(synthetic);
    let (left, right) = if real_first {
        (real_text.as_str(), synth_text.as_str())
    } else {
        (synth_text.as_str(), real_text.as_str())
    };
    let prompt = prompts::judge_prompt(&rubric_text(), left, right);
    let condition = match synthetic.condition {
        SimCondition::Baseline => SimCondition::Baseline,
        SimCondition::WithProfile => SimCondition::WithProfile,
    };
    let request = ChatRequest::new(
        model,
        prompts::JUDGE_TEMPERATURE,
        vec![ChatMessage::user(prompt.clone())],
    );
    let reply = gateway.complete(&request)?;
    match parse_verdict_reply(&reply.content, case_id, condition) {
        Ok(v) => Ok(v),
        Err(first_err) => {
            let repair = ChatRequest::new(
                model,
                prompts::JUDGE_TEMPERATURE,
                vec![
                    ChatMessage::user(prompt),
                    ChatMessage::assistant(reply.content),
                    ChatMessage::user(format!(
                        "That reply was invalid ({first_err}). Reply again with only the JSON \
                         object covering all five dimension keys."
                    )),
                ],
            );
            let repaired = gateway.complete(&repair)?;
            parse_verdict_reply(&repaired.content, case_id, condition)
                .map_err(Pt3Error::VerdictParse)
        }
    }
}

pub fn uniform_weights() -> BTreeMap<Dimension, f64> {
    Dimension::ALL.iter().map(|d| (*d, 0.2)).collect()
}

/// Weighted fidelity index from per-dimension match rates.
pub fn fidelity_index_from_rates(
    rates: &BTreeMap<Dimension, f64>,
    weights: &BTreeMap<Dimension, f64>,
) -> f64 {
    Dimension::ALL
        .iter()
        .map(|d| weights.get(d).copied().unwrap_or(0.0) * rates.get(d).copied().unwrap_or(0.0))
        .sum()
}

/// Aggregate verdicts into dimension rates, per-subset rates, and the
/// weighted fidelity index.
pub fn aggregate_fidelity(
    verdicts: &[Pt3Verdict],
    weights: &BTreeMap<Dimension, f64>,
) -> Result<FidelityReport, Pt3Error> {
    if verdicts.is_empty() {
        return Err(Pt3Error::Empty);
    }
    let weight_sum: f64 = weights.values().sum();
    if (weight_sum - 1.0).abs() > 1e-9 {
        return Err(Pt3Error::BadWeights(weight_sum));
    }

    let mut dimension_rates = BTreeMap::new();
    for dim in Dimension::ALL {
        let matches = verdicts.iter().filter(|v| v.verdicts[&dim].matched).count();
        dimension_rates.insert(dim, matches as f64 / verdicts.len() as f64);
    }

    let mut subset_rates = BTreeMap::new();
    let mut by_subset: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for v in verdicts {
        if let Some(subset) = &v.subset {
            let entry = by_subset.entry(subset.as_str()).or_insert((0, 0));
            entry.0 += v.verdicts.values().filter(|d| d.matched).count();
            entry.1 += v.verdicts.len();
        }
    }
    for (subset, (matches, total)) in by_subset {
        subset_rates.insert(subset.to_string(), matches as f64 / total as f64);
    }

    Ok(FidelityReport {
        fidelity_index: fidelity_index_from_rates(&dimension_rates, weights),
        dimension_rates,
        subset_rates,
        weights: weights.clone(),
        judgment_count: Dimension::ALL.len() * verdicts.len(),
    })
}

/// Half-up rounding to one decimal, in percent, the display convention for
/// all report tables.
pub fn round_percent(rate: f64) -> f64 {
    (rate * 1000.0).round() / 10.0
}

/// Formatted comparison table over two conditions.
pub fn render_fidelity_table(baseline: &FidelityReport, with_profile: &FidelityReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<34} {:>10} {:>14} {:>8}\n",
        "", "Baseline", "With Profile", "Delta"
    ));
    out.push_str("By dimension\n");
    for dim in Dimension::ALL {
        let b = round_percent(baseline.dimension_rates[&dim]);
        let w = round_percent(with_profile.dimension_rates[&dim]);
        out.push_str(&format!(
            "  {:<32} {:>10.1} {:>14.1} {:>+8.1}\n",
            dim.label(),
            b,
            w,
            ((w - b) * 10.0).round() / 10.0
        ));
    }
    if !baseline.subset_rates.is_empty() {
        out.push_str("By subset\n");
        for (subset, b_rate) in &baseline.subset_rates {
            if let Some(w_rate) = with_profile.subset_rates.get(subset) {
                let b = round_percent(*b_rate);
                let w = round_percent(*w_rate);
                out.push_str(&format!(
                    "  {:<32} {:>10.1} {:>14.1} {:>+8.1}\n",
                    subset,
                    b,
                    w,
                    ((w - b) * 10.0).round() / 10.0
                ));
            }
        }
    }
    let b = round_percent(baseline.fidelity_index);
    let w = round_percent(with_profile.fidelity_index);
    out.push_str(&format!(
        "{:<34} {:>10.1} {:>14.1} {:>+8.1}\n",
        "Overall",
        b,
        w,
        ((w - b) * 10.0).round() / 10.0
    ));
    out
}

/// Tab-separated variant of the fidelity report for machine consumption.
pub fn fidelity_tsv(report: &FidelityReport) -> String {
    let mut out = String::from("row\trate_percent\n");
    for dim in Dimension::ALL {
        out.push_str(&format!(
            "{}\t{:.1}\n",
            dim.key(),
            round_percent(report.dimension_rates[&dim])
        ));
    }
    for (subset, rate) in &report.subset_rates {
        out.push_str(&format!("subset:{}\t{:.1}\n", subset, round_percent(*rate)));
    }
    out.push_str(&format!("overall\t{:.1}\n", round_percent(report.fidelity_index)));
    out
}
