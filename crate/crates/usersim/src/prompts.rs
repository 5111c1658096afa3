//! Prompt templates shared across the pipeline.
//!
//! Every analysis prompt opens with a fixed sentinel line. The scripted
//! offline provider keys on these sentinels to decide what kind of reply
//! to synthesize, so the sentinel text is part of the offline contract:
//! change a sentinel and the scripted provider must change with it.

/// Literal token a simulated user emits alone on its final line to end a
/// dialogue. Stripped from trajectories before judging.
pub const TERMINATION_TOKEN: &str = "###DONE###";

/// Anti-normalization constraint included verbatim in grounded-mode
/// simulation guidelines.
pub const ANTI_NORMALIZATION: &str = "Do not 'clean up' the writing. If the commands require poor grammar and frequent typos, your response must be equally messy.";

pub const SENTINEL_TAGGING: &str = "Classify the following conversation.";
pub const SENTINEL_STYLE: &str =
    "Analyze the communication style of the user in the conversations below.";
pub const SENTINEL_DEMO_EXTRACT: &str =
    "Identify explicit demographic self-disclosures in the conversation below.";
pub const SENTINEL_DEMO_INFER: &str =
    "Infer the user's demographic attributes from conversational cues below.";
pub const SENTINEL_SEPARATE: &str =
    "Decompose the scenario below into task content and behavioral directives.";
pub const SENTINEL_TASK_SPEC: &str =
    "Extract a task specification from the conversation excerpt below.";
pub const SENTINEL_JUDGE: &str =
    "You will compare two conversations between a user and an assistant.";
pub const SENTINEL_SIMULATOR: &str = "You are playing the role of a real user";
pub const SENTINEL_AGENT: &str = "You are a helpful customer support assistant.";

/// Default sampling temperatures. The simulated user and the agent sample
/// at 0.7; the judge runs deterministically at 0.
pub const SIM_TEMPERATURE: f64 = 0.7;
pub const AGENT_TEMPERATURE: f64 = 0.7;
pub const JUDGE_TEMPERATURE: f64 = 0.0;

pub fn tagging_prompt(conversation_text: &str) -> String {
    format!(
        "{SENTINEL_TAGGING}\n\
         Reply with a single JSON object with keys: domain (string), \
         task_type (string), complexity (integer 1-5), engagement (integer 1-5), \
         depth (integer 1-5).\n\nConversation:\n{conversation_text}"
    )
}

pub fn style_prompt(conversation_text: &str) -> String {
    format!(
        "{SENTINEL_STYLE}\n\
         Produce up to 15 style commands as a JSON array of objects with keys: \
         command (imperative instruction), dimension (one of: capitalization, \
         punctuation, message_length, formality, technical_register, greeting, \
         emoticon, intent_density), examples (array of verbatim quotes from the \
         user's own messages).\n\nConversations:\n{conversation_text}"
    )
}

pub fn demo_extract_prompt(conversation_text: &str) -> String {
    format!(
        "{SENTINEL_DEMO_EXTRACT}\n\
         Reply with a JSON array of objects with keys: field (one of: age, \
         education, gender, occupation, marital_status, income, location), \
         value, evidence (verbatim quote). Report only what the user states \
         explicitly. Age, education, and income must use the declared \
         categorical brackets.\n\nConversation:\n{conversation_text}"
    )
}

pub fn demo_infer_prompt(fields: &[&str], conversation_text: &str) -> String {
    format!(
        "{SENTINEL_DEMO_INFER}\n\
         Infer values only for these fields: {}. Answer \"unknown\" for any \
         field the evidence does not support; do not guess. Reply with a JSON \
         object mapping each field to a value or \"unknown\". Age, education, \
         and income must use the declared categorical brackets.\n\n\
         Conversations:\n{conversation_text}",
        fields.join(", ")
    )
}

pub fn separate_prompt(scenario: &str) -> String {
    format!(
        "{SENTINEL_SEPARATE}\n\
         Task content is everything factually needed to complete the task: \
         booking numbers, order IDs, names, desired outcomes, procedural steps. \
         Behavioral directives are tone, emotion, and interaction-style \
         instructions. When a clause mixes both, keep the factual part in the \
         task content. Reply with a JSON object: {{\"task_only\": string, \
         \"directives\": [string]}}.\n\nScenario:\n{scenario}"
    )
}

pub fn task_spec_prompt(excerpt: &str) -> String {
    format!(
        "{SENTINEL_TASK_SPEC}\n\
         Reply with a JSON object: {{\"problem_description\": string, \
         \"solution_conditions\": [string]}} with at least one condition.\n\n\
         Excerpt:\n{excerpt}"
    )
}

pub fn judge_prompt(rubrics: &str, left: &str, right: &str) -> String {
    format!(
        "{SENTINEL_JUDGE}\n\
         One is a real user's conversation; the other is simulated. You are \
         not told which is which. For each dimension below, decide whether the \
         two users are behaviorally consistent (match) or not. Reply with a \
         JSON object mapping each dimension key to {{\"match\": bool, \
         \"rationale\": string}}.\n\nDimensions:\n{rubrics}\n\n\
         Conversation A:\n{left}\n\nConversation B:\n{right}"
    )
}

/// Render a conversation as the `USER:`/`ASSISTANT:` transcript format used
/// inside analysis prompts.
pub fn transcript(turns: &[(bool, &str)]) -> String {
    let mut out = String::new();
    for (is_user, content) in turns {
        let tag = if *is_user { "USER" } else { "ASSISTANT" };
        out.push_str(tag);
        out.push_str(": ");
        out.push_str(content);
        out.push('\n');
    }
    out
}
