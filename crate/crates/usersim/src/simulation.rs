//! Task-spec extraction and the simulated-user / agent dialogue loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Conversation, Turn, TurnRole};
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest};
use crate::persona::{self, GuidelineMode, PromptBundle, ScenarioSplit};
use crate::profiling::UserProfile;
use crate::prompts;

/// Shared task specification extracted from the opening of a real
/// conversation. "First 10 messages" counts messages of both roles.
pub const TASK_SPEC_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub problem_description: String,
    pub solution_conditions: Vec<String>,
    pub source_conversation_id: String,
}

impl TaskSpec {
    /// Scenario text handed to the simulator.
    pub fn scenario_text(&self) -> String {
        let mut s = format!("Your goal: {}\n\nYou are done when:\n", self.problem_description);
        for cond in &self.solution_conditions {
            s.push_str(&format!("- {cond}\n"));
        }
        s.trim_end().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub max_agent_messages: usize,
    pub sim_temperature: f64,
    pub agent_temperature: f64,
    pub sim_model: String,
    pub agent_model: String,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_agent_messages: 9,
            sim_temperature: prompts::SIM_TEMPERATURE,
            agent_temperature: prompts::AGENT_TEMPERATURE,
            sim_model: "sim-model".into(),
            agent_model: "agent-model".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    UserSignal,
    CapReached,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimCondition {
    Baseline,
    WithProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    pub turns: Vec<Turn>,
    pub terminated_by: TerminatedBy,
    pub condition: SimCondition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_id: Option<String>,
    /// Fingerprint of the simulator's system prompt, for isolation checks.
    pub sim_prompt_fingerprint: String,
}

impl SimTrajectory {
    pub fn assistant_count(&self) -> usize {
        self.turns.iter().filter(|t| t.role == TurnRole::Assistant).count()
    }
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("could not parse task spec: {0}")]
    SpecParse(String),
    #[error("gateway failure mid-dialogue: {source}")]
    Gateway {
        source: crate::gateway::GatewayError,
        /// What had been recorded before the failure, for post-mortems.
        partial: Box<SimTrajectory>,
    },
    #[error("gateway: {0}")]
    GatewayDirect(#[from] crate::gateway::GatewayError),
}

fn parse_task_spec(reply: &str, source_id: &str) -> Result<TaskSpec, String> {
    let value: serde_json::Value =
        serde_json::from_str(crate::corpus::extract_json(reply)).map_err(|e| e.to_string())?;
    let problem_description = value["problem_description"]
        .as_str()
        .ok_or("problem_description missing")?
        .trim()
        .to_string();
    let solution_conditions: Vec<String> = value["solution_conditions"]
        .as_array()
        .ok_or("solution_conditions missing")?
        .iter()
        .filter_map(|c| c.as_str().map(str::to_string))
        .collect();
    if problem_description.is_empty() {
        return Err("problem_description empty".into());
    }
    if solution_conditions.is_empty() {
        return Err("need at least one solution condition".into());
    }
    Ok(TaskSpec {
        problem_description,
        solution_conditions,
        source_conversation_id: source_id.to_string(),
    })
}

/// Prompt text used for extraction; exposed so tests can pin the windowing.
pub fn task_spec_prompt_for(conv: &Conversation) -> String {
    let window: Vec<(bool, &str)> = conv
        .turns
        .iter()
        .take(TASK_SPEC_WINDOW)
        .map(|t| (t.role == TurnRole::User, t.content.as_str()))
        .collect();
    prompts::task_spec_prompt(&prompts::transcript(&window))
}

/// Extract a problem description and solution conditions from the first 10
/// messages of a conversation. One repair attempt on a malformed reply.
pub fn extract_task_spec(
    conv: &Conversation,
    gateway: &dyn ChatGateway,
    model: &str,
) -> Result<TaskSpec, SimulationError> {
    let prompt = task_spec_prompt_for(conv);
    let request = ChatRequest::new(
        model,
        prompts::JUDGE_TEMPERATURE,
        vec![ChatMessage::user(prompt.clone())],
    );
    let reply = gateway.complete(&request)?;
    match parse_task_spec(&reply.content, &conv.conversation_id) {
        Ok(spec) => Ok(spec),
        Err(first_err) => {
            let repair = ChatRequest::new(
                model,
                prompts::JUDGE_TEMPERATURE,
                vec![
                    ChatMessage::user(prompt),
                    ChatMessage::assistant(reply.content),
                    ChatMessage::user(format!(
                        "That reply was invalid ({first_err}). Reply again with only the JSON object."
                    )),
                ],
            );
            let repaired = gateway.complete(&repair)?;
            parse_task_spec(&repaired.content, &conv.conversation_id)
                .map_err(SimulationError::SpecParse)
        }
    }
}

/// Build the simulator system prompt for one arm of a paired run.
pub fn simulator_prompt(spec: &TaskSpec, profile: Option<&UserProfile>) -> PromptBundle {
    let split = ScenarioSplit {
        task_only: spec.scenario_text(),
        directives: vec![],
        user_background: None,
    };
    // Both arms share the grounded guideline text so their prompts differ
    // only by the persona override block.
    let guidelines = persona::simulation_guidelines(GuidelineMode::Grounded);
    let block = profile.map(persona::format_persona);
    persona::assemble_prompt(&guidelines, &split, block.as_ref())
}

const SIM_KICKOFF: &str = "The conversation begins. Send your first message as the user.";

fn agent_system_prompt() -> String {
    format!(
        "{} Help the user with whatever they need, asking for any details \
         required to complete their request.",
        prompts::SENTINEL_AGENT
    )
}

fn ends_with_termination(content: &str) -> bool {
    content
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim() == prompts::TERMINATION_TOKEN)
}

/// Run one simulated-user / agent dialogue. The loop alternates simulator
/// and agent completions until the simulator emits the termination token or
/// the agent-message cap is reached. Termination tokens are left in the
/// recorded trajectory; stripping happens at judging time.
pub fn run_paired_simulation(
    spec: &TaskSpec,
    profile: Option<&UserProfile>,
    cfg: &SimConfig,
    gateway: &dyn ChatGateway,
) -> Result<SimTrajectory, SimulationError> {
    let sim_bundle = simulator_prompt(spec, profile);
    let condition = if profile.is_some() {
        SimCondition::WithProfile
    } else {
        SimCondition::Baseline
    };
    let probe = ChatRequest::new(&cfg.sim_model, cfg.sim_temperature, vec![
        ChatMessage::system(sim_bundle.system_prompt.clone()),
    ]);
    let sim_prompt_fingerprint = crate::gateway::fingerprint(&probe);

    let mut trajectory = SimTrajectory {
        turns: Vec::new(),
        terminated_by: TerminatedBy::Error,
        condition,
        profile_id: profile.map(|p| p.user_id.clone()),
        sim_prompt_fingerprint,
    };

    let mut sim_messages = vec![
        ChatMessage::system(sim_bundle.system_prompt.clone()),
        ChatMessage::user(SIM_KICKOFF),
    ];
    let mut agent_messages = vec![ChatMessage::system(agent_system_prompt())];
    let mut agent_count = 0usize;

    loop {
        // simulator speaks
        let mut request =
            ChatRequest::new(&cfg.sim_model, cfg.sim_temperature, sim_messages.clone());
        request.seed = Some(cfg.seed as i64);
        let user_msg = match gateway.complete(&request) {
            Ok(r) => r.content,
            Err(e) => {
                return Err(SimulationError::Gateway { source: e, partial: Box::new(trajectory) })
            }
        };
        trajectory.turns.push(Turn {
            role: TurnRole::User,
            content: user_msg.clone(),
            index: trajectory.turns.len(),
        });
        if ends_with_termination(&user_msg) {
            trajectory.terminated_by = TerminatedBy::UserSignal;
            break;
        }
        sim_messages.push(ChatMessage::assistant(user_msg.clone()));
        agent_messages.push(ChatMessage::user(user_msg));

        // agent replies
        let mut request =
            ChatRequest::new(&cfg.agent_model, cfg.agent_temperature, agent_messages.clone());
        request.seed = Some(cfg.seed as i64);
        let agent_msg = match gateway.complete(&request) {
            Ok(r) => r.content,
            Err(e) => {
                return Err(SimulationError::Gateway { source: e, partial: Box::new(trajectory) })
            }
        };
        trajectory.turns.push(Turn {
            role: TurnRole::Assistant,
            content: agent_msg.clone(),
            index: trajectory.turns.len(),
        });
        agent_count += 1;
        if agent_count >= cfg.max_agent_messages {
            trajectory.terminated_by = TerminatedBy::CapReached;
            break;
        }
        agent_messages.push(ChatMessage::assistant(agent_msg.clone()));
        sim_messages.push(ChatMessage::user(agent_msg));
    }
    Ok(trajectory)
}

/// Persisted trajectory record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub case_id: String,
    pub condition: SimCondition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_id: Option<String>,
    pub turns: Vec<Turn>,
    pub terminated_by: TerminatedBy,
}

impl TrajectoryRecord {
    pub fn from_trajectory(case_id: &str, traj: &SimTrajectory) -> Self {
        Self {
            case_id: case_id.to_string(),
            condition: traj.condition,
            profile_id: traj.profile_id.clone(),
            turns: traj.turns.clone(),
            terminated_by: traj.terminated_by,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FallbackPolicy, FixtureGateway, ScriptedGateway};

    fn conv_with_messages(n: usize) -> Conversation {
        Conversation {
            conversation_id: "C1".into(),
            user_id: "u1".into(),
            source_model: "gpt-4o".into(),
            turns: (0..n)
                .map(|i| Turn {
                    role: if i % 2 == 0 { TurnRole::User } else { TurnRole::Assistant },
                    content: format!("message {i}"),
                    index: i,
                })
                .collect(),
            language: None,
            tags: None,
        }
    }

    #[test]
    fn task_spec_prompt_windows_to_ten_messages() {
        let prompt = task_spec_prompt_for(&conv_with_messages(14));
        assert!(prompt.contains("message 9"));
        assert!(!prompt.contains("message 10"));
        // short conversations use everything they have
        let short = task_spec_prompt_for(&conv_with_messages(6));
        assert!(short.contains("message 5"));
    }

    #[test]
    fn task_spec_extraction_parses_conditions() {
        let gw = FixtureGateway::new(FallbackPolicy::Canned(
            r#"{"problem_description":"fix the build","solution_conditions":["build passes","tests pass"]}"#.into(),
        ));
        let spec = extract_task_spec(&conv_with_messages(6), &gw, "m").unwrap();
        assert_eq!(spec.solution_conditions.len(), 2);
        assert_eq!(spec.source_conversation_id, "C1");
    }

    #[test]
    fn task_spec_requires_conditions() {
        let gw = FixtureGateway::new(FallbackPolicy::Canned(
            r#"{"problem_description":"fix it","solution_conditions":[]}"#.into(),
        ));
        assert!(matches!(
            extract_task_spec(&conv_with_messages(6), &gw, "m"),
            Err(SimulationError::SpecParse(_))
        ));
    }

    fn spec() -> TaskSpec {
        TaskSpec {
            problem_description: "get a refund for order AB12345".into(),
            solution_conditions: vec!["refund confirmed".into()],
            source_conversation_id: "C1".into(),
        }
    }

    #[test]
    fn scripted_dialogue_terminates_by_user_signal() {
        let traj =
            run_paired_simulation(&spec(), None, &SimConfig::default(), &ScriptedGateway::new())
                .unwrap();
        assert_eq!(traj.terminated_by, TerminatedBy::UserSignal);
        assert!(traj.assistant_count() <= 3);
        assert!(traj.turns.last().unwrap().content.contains(prompts::TERMINATION_TOKEN));
    }

    /// Simulator that never emits the termination token.
    struct NonTerminating;
    impl crate::gateway::ChatGateway for NonTerminating {
        fn complete(
            &self,
            request: &ChatRequest,
        ) -> Result<crate::gateway::ChatResponse, crate::gateway::GatewayError> {
            request.validate()?;
            let system = &request.messages[0].content;
            if system.contains(prompts::SENTINEL_SIMULATOR) {
                Ok(crate::gateway::ChatResponse::complete("still not done"))
            } else {
                Ok(crate::gateway::ChatResponse::complete("how can I help?"))
            }
        }
    }

    #[test]
    fn cap_is_enforced_at_nine_agent_messages() {
        let traj =
            run_paired_simulation(&spec(), None, &SimConfig::default(), &NonTerminating).unwrap();
        assert_eq!(traj.terminated_by, TerminatedBy::CapReached);
        assert_eq!(traj.assistant_count(), 9);
    }

    #[test]
    fn arms_differ_only_in_simulator_prompt() {
        let profile = crate::profiling::UserProfile {
            user_id: "u1".into(),
            manual: crate::profiling::PersonaManual {
                user_id: "u1".into(),
                commands: vec![crate::profiling::StyleCommand {
                    command: "Write terse messages".into(),
                    dimension: crate::profiling::StyleDimension::MessageLength,
                    examples: vec![],
                }],
            },
            demographics: Default::default(),
            background: None,
            conversation_ids: vec![],
        };
        let cfg = SimConfig::default();
        let gw = ScriptedGateway::new();
        let baseline = run_paired_simulation(&spec(), None, &cfg, &gw).unwrap();
        let with = run_paired_simulation(&spec(), Some(&profile), &cfg, &gw).unwrap();
        assert_ne!(baseline.sim_prompt_fingerprint, with.sim_prompt_fingerprint);
        assert_eq!(baseline.condition, SimCondition::Baseline);
        assert_eq!(with.condition, SimCondition::WithProfile);
        assert_eq!(with.profile_id.as_deref(), Some("u1"));
    }

    #[test]
    fn scripted_runs_are_deterministic() {
        let cfg = SimConfig { seed: 7, ..Default::default() };
        let gw = ScriptedGateway::new();
        let a = run_paired_simulation(&spec(), None, &cfg, &gw).unwrap();
        let b = run_paired_simulation(&spec(), None, &cfg, &gw).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gateway_failure_attaches_partial_trajectory() {
        // fixture with no entries fails on the first simulator call
        let gw = FixtureGateway::new(FallbackPolicy::Error);
        match run_paired_simulation(&spec(), None, &SimConfig::default(), &gw) {
            Err(SimulationError::Gateway { partial, .. }) => {
                assert!(partial.turns.is_empty());
            }
            other => panic!("expected gateway error, got {other:?}"),
        }
    }
}
