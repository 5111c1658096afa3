//! Deterministic behavioral statistics over message sets and trait-vector
//! clustering of profiles: roleplay-marker detection, lexicon rates,
//! length/structure stats, the versioned 48-trait vocabulary, and seeded
//! k-means.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiling::{DemoField, StyleDimension, UserProfile};

/// Shipped default frustration word list; callers may substitute their own.
pub const DEFAULT_FRUSTRATION_LEXICON: &[&str] = &[
    "upset",
    "angry",
    "frustrated",
    "furious",
    "annoyed",
    "unacceptable",
    "ridiculous",
    "terrible",
    "outrageous",
];

pub const KMEANS_ITERATION_CAP: usize = 300;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("profile {0} has no style commands")]
    EmptyProfile(String),
    #[error("vocabulary mismatch: expected version {expected}, got {got}")]
    VocabularyMismatch { expected: String, got: String },
    #[error("k must satisfy 1 <= k <= {points}, got {k}")]
    InvalidK { k: usize, points: usize },
    #[error("no vectors to cluster")]
    NoVectors,
}

// ---------------------------------------------------------------------------
// Roleplay markers
// ---------------------------------------------------------------------------

/// One asterisk-bracketed action span, byte offsets into the message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerSpan {
    pub start: usize,
    pub end: usize,
    pub interior: String,
}

/// Interior rule for an action span: 1–60 chars, no newline, at least one
/// ASCII letter, and no digits (arithmetic exclusion for strings like
/// `2*3=6 and 3*4*5`).
pub fn marker_interior_valid(interior: &str) -> bool {
    let len = interior.chars().count();
    (1..=60).contains(&len)
        && !interior.contains('*')
        && !interior.contains('\n')
        && interior.chars().any(|c| c.is_ascii_alphabetic())
        && !interior.chars().any(|c| c.is_ascii_digit())
}

/// All spans of the form `*` + valid interior + `*`. Because the interior
/// may not contain `*`, candidates are exactly the gaps between adjacent
/// asterisks; adjacent spans may share an asterisk.
pub fn detect_roleplay_markers(message: &str) -> Vec<MarkerSpan> {
    let stars: Vec<usize> = message
        .char_indices()
        .filter(|(_, c)| *c == '*')
        .map(|(i, _)| i)
        .collect();
    let mut spans = Vec::new();
    for pair in stars.windows(2) {
        let (open, close) = (pair[0], pair[1]);
        let interior = &message[open + 1..close];
        if marker_interior_valid(interior) {
            spans.push(MarkerSpan {
                start: open,
                end: close + 1,
                interior: interior.to_string(),
            });
        }
    }
    spans
}

/// Reference implementation for equivalence testing: apply the span
/// predicate to every substring.
pub fn detect_roleplay_markers_oracle(message: &str) -> Vec<MarkerSpan> {
    let boundaries: Vec<usize> = message
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(message.len()))
        .collect();
    let mut spans = Vec::new();
    for (bi, &start) in boundaries.iter().enumerate() {
        for &end in &boundaries[bi + 1..] {
            let sub = &message[start..end];
            if sub.len() >= 2
                && sub.starts_with('*')
                && sub.ends_with('*')
                && marker_interior_valid(&sub[1..sub.len() - 1])
            {
                spans.push(MarkerSpan {
                    start,
                    end,
                    interior: sub[1..sub.len() - 1].to_string(),
                });
            }
        }
    }
    spans
}

// ---------------------------------------------------------------------------
// Metric bundles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub roleplay_marker_rate: f64,
    pub stage_direction_rate: f64,
    pub frustration_rate: f64,
    pub please_rate: f64,
    pub list_rate: f64,
    pub multiline_rate: f64,
    pub avg_message_chars: f64,
    pub avg_messages_per_conversation: f64,
    pub message_count: usize,
    pub conversation_count: usize,
    pub empty: bool,
}

fn contains_word(haystack_lower: &str, word: &str) -> bool {
    let bytes = haystack_lower.as_bytes();
    let mut from = 0;
    while let Some(pos) = haystack_lower[from..].find(word) {
        let start = from + pos;
        let end = start + word.len();
        let left_ok = start == 0 || !bytes[start - 1].is_ascii_alphanumeric();
        let right_ok = end == bytes.len() || !bytes[end].is_ascii_alphanumeric();
        if left_ok && right_ok {
            return true;
        }
        from = start + 1;
    }
    false
}

fn is_list_line(line: &str) -> bool {
    let t = line.trim_start();
    if t.starts_with("- ") || t.starts_with("* ") || t.starts_with("• ") {
        return true;
    }
    let digits: String = t.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return false;
    }
    matches!(t[digits.len()..].chars().next(), Some('.') | Some(')'))
}

/// Per-message behavioral rates and length averages over a set of
/// conversations' user messages. Empty input yields a flagged zero bundle.
pub fn compute_metrics(convs: &[Vec<String>], frustration_lexicon: &[&str]) -> MetricBundle {
    let messages: Vec<&String> = convs.iter().flatten().collect();
    let conversation_count = convs.len();
    let message_count = messages.len();
    if message_count == 0 {
        return MetricBundle {
            roleplay_marker_rate: 0.0,
            stage_direction_rate: 0.0,
            frustration_rate: 0.0,
            please_rate: 0.0,
            list_rate: 0.0,
            multiline_rate: 0.0,
            avg_message_chars: 0.0,
            avg_messages_per_conversation: 0.0,
            message_count: 0,
            conversation_count,
            empty: true,
        };
    }

    // (roleplay, stage_direction, frustration, please, list, multiline)
    let flags = crate::par::map(&messages, |msg| {
        let spans = detect_roleplay_markers(msg);
        let lower = msg.to_lowercase();
        (
            !spans.is_empty(),
            spans.iter().any(|s| s.start == 0),
            frustration_lexicon.iter().any(|w| contains_word(&lower, &w.to_lowercase())),
            lower.contains("please"),
            msg.lines().filter(|l| is_list_line(l)).count() >= 2,
            msg.lines().filter(|l| !l.trim().is_empty()).count() >= 3,
        )
    });

    let rate = |pick: &dyn Fn(&(bool, bool, bool, bool, bool, bool)) -> bool| {
        flags.iter().filter(|f| pick(f)).count() as f64 / message_count as f64
    };
    let total_chars: usize = messages.iter().map(|m| m.chars().count()).sum();

    MetricBundle {
        roleplay_marker_rate: rate(&|f| f.0),
        stage_direction_rate: rate(&|f| f.1),
        frustration_rate: rate(&|f| f.2),
        please_rate: rate(&|f| f.3),
        list_rate: rate(&|f| f.4),
        multiline_rate: rate(&|f| f.5),
        avg_message_chars: total_chars as f64 / message_count as f64,
        avg_messages_per_conversation: message_count as f64 / conversation_count.max(1) as f64,
        message_count,
        conversation_count,
        empty: false,
    }
}

/// Tab-separated rendering of a metric bundle.
pub fn metrics_tsv(bundle: &MetricBundle) -> String {
    format!(
        "metric\tvalue\n\
         roleplay_marker_rate\t{:.4}\n\
         stage_direction_rate\t{:.4}\n\
         frustration_rate\t{:.4}\n\
         please_rate\t{:.4}\n\
         list_rate\t{:.4}\n\
         multiline_rate\t{:.4}\n\
         avg_message_chars\t{:.2}\n\
         avg_messages_per_conversation\t{:.2}\n\
         message_count\t{}\n\
         conversation_count\t{}\n",
        bundle.roleplay_marker_rate,
        bundle.stage_direction_rate,
        bundle.frustration_rate,
        bundle.please_rate,
        bundle.list_rate,
        bundle.multiline_rate,
        bundle.avg_message_chars,
        bundle.avg_messages_per_conversation,
        bundle.message_count,
        bundle.conversation_count,
    )
}

// ---------------------------------------------------------------------------
// Trait vocabulary and vectors
// ---------------------------------------------------------------------------

pub const TRAIT_VOCABULARY_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitDef {
    pub name: String,
    pub dimension: StyleDimension,
    /// Lowercased phrases matched as whole words against command text; an
    /// empty list marks the dimension's catch-all trait.
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitVocabulary {
    pub version: String,
    pub traits: Vec<TraitDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitVector {
    pub user_id: String,
    pub bits: Vec<bool>,
    pub vocabulary_version: String,
}

fn trait_defs(dimension: StyleDimension, tags: &[(&str, &[&str])]) -> Vec<TraitDef> {
    tags.iter()
        .map(|(name, keywords)| TraitDef {
            name: name.to_string(),
            dimension,
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
        })
        .collect()
}

impl TraitVocabulary {
    /// The shipped 48-trait vocabulary: six ordered tags per style
    /// dimension, the last of each group a catch-all.
    pub fn shipped() -> Self {
        let mut traits = Vec::new();
        traits.extend(trait_defs(
            StyleDimension::Capitalization,
            &[
                ("all_lowercase", &["lowercase"]),
                ("all_caps", &["all caps", "uppercase"]),
                ("sentence_case", &["sentence case", "capitalize"]),
                ("proper_nouns_only", &["proper noun"]),
                ("inconsistent_caps", &["inconsistent", "erratic"]),
                ("capitalization_other", &[]),
            ],
        ));
        traits.extend(trait_defs(
            StyleDimension::Punctuation,
            &[
                ("no_terminal_period", &["terminal period", "final period", "trailing period"]),
                ("minimal_punctuation", &["minimal", "no punctuation", "sparse"]),
                ("heavy_punctuation", &["heavy", "excessive"]),
                ("exclamation_marks", &["exclamation"]),
                ("ellipses", &["ellipsis", "ellipses", "..."]),
                ("punctuation_other", &[]),
            ],
        ));
        traits.extend(trait_defs(
            StyleDimension::MessageLength,
            &[
                ("very_short_messages", &["very short", "terse", "one line"]),
                ("short_messages", &["short", "brief", "direct"]),
                ("medium_messages", &["medium", "moderate"]),
                ("long_messages", &["long", "detailed", "lengthy"]),
                ("variable_length", &["variable", "varies", "varying"]),
                ("message_length_other", &[]),
            ],
        ));
        traits.extend(trait_defs(
            StyleDimension::Formality,
            &[
                ("very_casual", &["very casual", "slang"]),
                ("casual", &["casual", "informal", "relaxed"]),
                ("neutral_formality", &["neutral"]),
                ("formal", &["formal", "professional"]),
                ("polite_register", &["polite", "courteous"]),
                ("formality_other", &[]),
            ],
        ));
        traits.extend(trait_defs(
            StyleDimension::TechnicalRegister,
            &[
                ("expert_jargon", &["jargon", "expert"]),
                ("technical_terms", &["technical", "terminology"]),
                ("plain_language", &["plain", "simple", "layman"]),
                ("code_snippets", &["code", "snippet"]),
                ("acronyms", &["acronym", "abbreviation"]),
                ("technical_register_other", &[]),
            ],
        ));
        traits.extend(trait_defs(
            StyleDimension::Greeting,
            &[
                ("no_greeting", &["no greeting", "skip greeting", "without greeting"]),
                ("casual_greeting", &["hi", "hey", "hello"]),
                ("formal_greeting", &["dear", "good morning", "good afternoon"]),
                ("signs_off", &["sign off", "regards", "closing"]),
                ("abrupt_start", &["abrupt", "straight"]),
                ("greeting_other", &[]),
            ],
        ));
        traits.extend(trait_defs(
            StyleDimension::Emoticon,
            &[
                ("no_emoticons", &["no emoticon", "no emoji", "never use emoticon"]),
                ("uses_emoticons", &["emoticon"]),
                ("uses_emoji", &["emoji"]),
                ("smileys", &["smiley", ":)"]),
                ("kaomoji", &["kaomoji"]),
                ("emoticon_other", &[]),
            ],
        ));
        traits.extend(trait_defs(
            StyleDimension::IntentDensity,
            &[
                ("single_intent", &["single", "one request", "one question"]),
                ("multi_intent", &["multiple", "several"]),
                ("scattered_info", &["scatter", "scattered"]),
                ("dense_info", &["dense", "all at once", "everything upfront"]),
                ("drip_feed", &["drip", "piecemeal", "bit by bit"]),
                ("intent_density_other", &[]),
            ],
        ));
        debug_assert_eq!(traits.len(), 48);
        Self { version: TRAIT_VOCABULARY_VERSION.into(), traits }
    }
}

fn keyword_matches(command_lower: &str, keyword: &str) -> bool {
    if keyword.chars().any(|c| !c.is_ascii_alphanumeric()) {
        // Phrases and symbol keywords are matched as substrings.
        command_lower.contains(keyword)
    } else {
        contains_word(command_lower, keyword)
    }
}

/// Binary trait encoding of a profile. Each command sets exactly one bit:
/// the first trait of its dimension whose keyword matches, else the
/// dimension's catch-all.
pub fn trait_vector(
    profile: &UserProfile,
    vocabulary: &TraitVocabulary,
) -> Result<TraitVector, MetricsError> {
    if profile.manual.commands.is_empty() {
        return Err(MetricsError::EmptyProfile(profile.user_id.clone()));
    }
    if vocabulary.version != TRAIT_VOCABULARY_VERSION {
        return Err(MetricsError::VocabularyMismatch {
            expected: TRAIT_VOCABULARY_VERSION.into(),
            got: vocabulary.version.clone(),
        });
    }
    let mut bits = vec![false; vocabulary.traits.len()];
    for cmd in &profile.manual.commands {
        let text = cmd.command.to_lowercase();
        let group: Vec<(usize, &TraitDef)> = vocabulary
            .traits
            .iter()
            .enumerate()
            .filter(|(_, t)| t.dimension == cmd.dimension)
            .collect();
        let hit = group
            .iter()
            .find(|(_, t)| t.keywords.iter().any(|k| keyword_matches(&text, k)))
            .or_else(|| group.iter().find(|(_, t)| t.keywords.is_empty()));
        if let Some((i, _)) = hit {
            bits[*i] = true;
        }
    }
    Ok(TraitVector {
        user_id: profile.user_id.clone(),
        bits,
        vocabulary_version: vocabulary.version.clone(),
    })
}

/// Plain matrix export: one row per vector, space-separated 0/1, prefixed
/// by the user id.
pub fn vectors_matrix(vectors: &[TraitVector]) -> String {
    let mut out = String::new();
    for v in vectors {
        out.push_str(&v.user_id);
        for bit in &v.bits {
            out.push(' ');
            out.push(if *bit { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<String, usize>,
    pub inertia: f64,
    pub seed: u64,
    /// Inertia after each Lloyd iteration; non-increasing.
    pub inertia_history: Vec<f64>,
    /// Set when the input collapsed to a single distinct point and the
    /// model was reduced to an effective k of 1.
    pub degenerate: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Seeded k-means: greedy farthest-point initialization from a random
/// seeded start, then Lloyd iterations to an assignment fixpoint or the
/// iteration cap. Deterministic under a fixed seed.
pub fn kmeans(vectors: &[TraitVector], k: usize, seed: u64) -> Result<ClusterModel, MetricsError> {
    if vectors.is_empty() {
        return Err(MetricsError::NoVectors);
    }
    if k == 0 || k > vectors.len() {
        return Err(MetricsError::InvalidK { k, points: vectors.len() });
    }
    let points: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect())
        .collect();

    let all_identical = points.iter().all(|p| *p == points[0]);
    if all_identical && k > 1 {
        let assignments = vectors.iter().map(|v| (v.user_id.clone(), 0)).collect();
        return Ok(ClusterModel {
            k: 1,
            centroids: vec![points[0].clone()],
            assignments,
            inertia: 0.0,
            seed,
            inertia_history: vec![0.0],
            degenerate: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let (idx, _) = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, nearest(p, &centroids).1))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap();
        centroids.push(points[idx].clone());
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut inertia_history = Vec::new();
    for _ in 0..KMEANS_ITERATION_CAP {
        // Update step: empty clusters keep their previous centroid.
        for (ci, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assignments)
                .filter(|(_, a)| **a == ci)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (d, slot) in centroid.iter_mut().enumerate() {
                *slot = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let inertia: f64 = points
            .iter()
            .zip(&next)
            .map(|(p, a)| sq_dist(p, &centroids[*a]))
            .sum();
        inertia_history.push(inertia);
        if next == assignments {
            break;
        }
        assignments = next;
    }

    let inertia = *inertia_history.last().unwrap();
    Ok(ClusterModel {
        k,
        centroids,
        assignments: vectors
            .iter()
            .zip(&assignments)
            .map(|(v, a)| (v.user_id.clone(), *a))
            .collect(),
        inertia,
        seed,
        inertia_history,
        degenerate: false,
    })
}

// ---------------------------------------------------------------------------
// Cluster composition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterComposition {
    pub cluster: usize,
    pub size: usize,
    /// Value → share, including an "unknown" row; rows sum to 1.
    pub age: BTreeMap<String, f64>,
    pub education: BTreeMap<String, f64>,
}

fn field_distribution(
    members: &[&UserProfile],
    field: DemoField,
) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in members {
        let value = p
            .demographics
            .fields
            .get(&field)
            .map(|f| f.value.clone())
            .unwrap_or_else(|| "unknown".into());
        *counts.entry(value).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|(v, c)| (v, c as f64 / members.len() as f64))
        .collect()
}

/// Age and education composition of each non-empty cluster.
pub fn cluster_demographics(
    model: &ClusterModel,
    profiles: &BTreeMap<String, UserProfile>,
) -> Vec<ClusterComposition> {
    let mut out = Vec::new();
    for cluster in 0..model.k {
        let members: Vec<&UserProfile> = model
            .assignments
            .iter()
            .filter(|(_, a)| **a == cluster)
            .filter_map(|(user, _)| profiles.get(user))
            .collect();
        if members.is_empty() {
            continue;
        }
        out.push(ClusterComposition {
            cluster,
            size: members.len(),
            age: field_distribution(&members, DemoField::Age),
            education: field_distribution(&members, DemoField::Education),
        });
    }
    out
}

/// Tab-separated composition table: cluster, field, value, share.
pub fn composition_tsv(compositions: &[ClusterComposition]) -> String {
    let mut out = String::from("cluster\tsize\tfield\tvalue\tshare\n");
    for c in compositions {
        for (value, share) in &c.age {
            out.push_str(&format!("{}\t{}\tage\t{}\t{:.4}\n", c.cluster, c.size, value, share));
        }
        for (value, share) in &c.education {
            out.push_str(&format!(
                "{}\t{}\teducation\t{}\t{:.4}\n",
                c.cluster, c.size, value, share
            ));
        }
    }
    out
}
