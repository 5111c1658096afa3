//! Three-condition agent evaluation: seeded persona assignment, demographic
//! pools, the Perfect User, a pluggable task-environment interface with a
//! scripted mock, multi-run aggregation, and directive-sensitivity reporting.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Turn, TurnRole};
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest};
use crate::metrics::{compute_metrics, MetricBundle, DEFAULT_FRUSTRATION_LEXICON};
use crate::persona::{
    self, GuidelineMode, PersonaBlock, PersonaSection, PromptBundle, ScenarioSplit,
};
use crate::profiling::{DemoField, UserProfile};
use crate::simulation::{SimCondition, SimConfig, SimTrajectory, TerminatedBy, TrajectoryRecord};

/// Seeds for the three default persona runs.
pub const DEFAULT_PERSONA_SEEDS: [u64; 3] = [7, 8, 9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskDomain {
    Airline,
    Retail,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub task_id: String,
    pub domain: TaskDomain,
    pub raw_scenario: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<ScenarioSplit>,
    /// Hand-written behavioral persona embedded by the source benchmark,
    /// when it ships one separately from the scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured_persona: Option<String>,
    /// Names the scenario declares for the user; checked for survival when
    /// directives are stripped.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub declared_user_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaAssignment {
    pub seed: u64,
    pub pool_name: String,
    /// task_id → profile user_id.
    pub mapping: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunCondition {
    Original,
    Np,
    Persona,
}

impl RunCondition {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(Self::Original),
            "np" => Some(Self::Np),
            "persona" => Some(Self::Persona),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub condition: RunCondition,
    pub domain: TaskDomain,
    pub sim_model: String,
    pub agent_model: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_name: Option<String>,
    pub outcomes: Vec<TaskOutcome>,
    pub success_rate: f64,
    pub trajectories: Vec<TrajectoryRecord>,
    /// task_id → simulator system-prompt fingerprint, for isolation checks.
    pub prompt_fingerprints: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("persona pool is empty (criterion {0})")]
    EmptyPool(String),
    #[error("task {0} has no scenario split; run separation first")]
    MissingSplit(String),
    #[error("persona condition requires an assignment")]
    MissingAssignment,
    #[error("assignment references unknown profile {0}")]
    UnknownProfile(String),
    #[error("task file line {line}: {message}")]
    TaskParse { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Task files and persona assignment
// ---------------------------------------------------------------------------

pub fn load_tasks(path: &std::path::Path) -> Result<Vec<EvalTask>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: EvalTask = serde_json::from_str(line)
            .map_err(|e| HarnessError::TaskParse { line: i + 1, message: e.to_string() })?;
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn save_tasks(path: &std::path::Path, tasks: &[EvalTask]) -> Result<(), HarnessError> {
    let mut out = String::new();
    for task in tasks {
        out.push_str(&serde_json::to_string(task).expect("tasks serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Seeded uniform sampling with replacement across the pool, in task order.
/// Deterministic for a fixed (pool order, seed).
pub fn assign_personas(
    tasks: &[EvalTask],
    pool: &[UserProfile],
    pool_name: &str,
    seed: u64,
) -> Result<PersonaAssignment, HarnessError> {
    if pool.is_empty() {
        return Err(HarnessError::EmptyPool(pool_name.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mapping = tasks
        .iter()
        .map(|t| (t.task_id.clone(), pool[rng.gen_range(0..pool.len())].user_id.clone()))
        .collect();
    Ok(PersonaAssignment { seed, pool_name: pool_name.to_string(), mapping })
}

// ---------------------------------------------------------------------------
// Demographic pools and the Perfect User
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolCriterion {
    HighEdu,
    LowEdu,
    Young,
    Oldest,
    All,
}

impl PoolCriterion {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "high_edu" => Some(Self::HighEdu),
            "low_edu" => Some(Self::LowEdu),
            "young" => Some(Self::Young),
            "oldest" => Some(Self::Oldest),
            "all" => Some(Self::All),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HighEdu => "high_edu",
            Self::LowEdu => "low_edu",
            Self::Young => "young",
            Self::Oldest => "oldest",
            Self::All => "all",
        }
    }
}

/// Membership rules for the demographic pools. Defaults: high_edu is
/// bachelor's and above, low_edu is everything below bachelor's, young is
/// {under 18, 18-24}, oldest is {55-64, 65+}. Unknown values exclude a
/// profile from every targeted pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub high_edu_levels: Vec<String>,
    pub low_edu_levels: Vec<String>,
    pub young_ages: Vec<String>,
    pub oldest_ages: Vec<String>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        let s = |items: &[&str]| items.iter().map(|i| i.to_string()).collect();
        Self {
            high_edu_levels: s(&["bachelor's degree", "master's degree", "doctoral degree"]),
            low_edu_levels: s(&[
                "no formal education",
                "primary education",
                "secondary education",
                "high school diploma",
                "associate degree",
            ]),
            young_ages: s(&["under 18", "18-24"]),
            oldest_ages: s(&["55-64", "65+"]),
        }
    }
}

pub fn select_pool(
    profiles: &[UserProfile],
    criterion: PoolCriterion,
    cfg: &PoolConfig,
) -> Result<Vec<UserProfile>, HarnessError> {
    let field_in = |p: &UserProfile, field: DemoField, allowed: &[String]| {
        p.demographics
            .get(field)
            .map(|v| allowed.iter().any(|a| a == &v.value))
            .unwrap_or(false)
    };
    let pool: Vec<UserProfile> = profiles
        .iter()
        .filter(|p| match criterion {
            PoolCriterion::All => true,
            PoolCriterion::HighEdu => field_in(p, DemoField::Education, &cfg.high_edu_levels),
            PoolCriterion::LowEdu => field_in(p, DemoField::Education, &cfg.low_edu_levels),
            PoolCriterion::Young => field_in(p, DemoField::Age, &cfg.young_ages),
            PoolCriterion::Oldest => field_in(p, DemoField::Age, &cfg.oldest_ages),
        })
        .cloned()
        .collect();
    if pool.is_empty() {
        return Err(HarnessError::EmptyPool(criterion.name().to_string()));
    }
    Ok(pool)
}

pub const PERFECT_USER_VERSION: &str = "v1";

/// The synthetic upper-bound persona: cooperative, clear, decisive,
/// complete-information communication. Carries no demographics section and
/// renders through the same prompt assembly as real personas.
pub fn perfect_user_persona() -> PersonaBlock {
    let rendered = "\
Communication Style Instructions:
Command: State your goal completely and precisely in your first message, including every identifier, date, and constraint the task mentions.

Command: Answer every question the assistant asks directly and in full, without omitting details.

Command: Confirm or decline proposed actions decisively in a single short sentence.

Command: Stay cooperative and patient; never derail the conversation with emotion or unrelated requests.

Command: Use clear, well-structured sentences with standard spelling and punctuation."
        .to_string();
    PersonaBlock { rendered, sections_present: vec![PersonaSection::Style] }
}

// ---------------------------------------------------------------------------
// Task-environment interface and the scripted mock
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
#[error("environment error: {0}")]
pub struct EnvironmentError(pub String);

/// Minimal adapter surface for real benchmark backends: reset per task, feed
/// agent turns as tool steps, read a success verdict. `observe_user` has a
/// default no-op so adapters that only inspect agent actions stay small.
pub trait TaskEnvironment {
    fn reset(&mut self, task: &EvalTask);
    fn step(&mut self, agent_message: &str) -> Result<String, EnvironmentError>;
    fn observe_user(&mut self, _user_message: &str) {}
    fn is_success(&self) -> bool;
}

/// Scripted environment reproducing the three observed failure mechanisms:
/// information loss (a required identifier never reaches the agent through
/// a user message), agent misinterpretation (an all-caps shouted user turn
/// derails the task), and compliance failure (in a scenario that forbids an
/// action, the user authorizes it anyway).
pub struct MockEnvironment {
    required_identifiers: Vec<String>,
    forbidden_authorization: bool,
    user_messages: Vec<String>,
    steps: usize,
}

impl MockEnvironment {
    pub fn new() -> Self {
        Self {
            required_identifiers: Vec::new(),
            forbidden_authorization: false,
            user_messages: Vec::new(),
            steps: 0,
        }
    }

    fn scenario_forbids_action(scenario: &str) -> bool {
        let lower = scenario.to_lowercase();
        lower.contains("without cancelling")
            || lower.contains("without canceling")
            || lower.contains("do not cancel")
    }

    fn is_shouted(message: &str) -> bool {
        let letters: Vec<char> = message.chars().filter(|c| c.is_ascii_alphabetic()).collect();
        letters.len() >= 10 && letters.iter().all(|c| c.is_ascii_uppercase())
    }
}

impl Default for MockEnvironment {
    fn default() -> Self {
        Self::new()
    }
}

impl TaskEnvironment for MockEnvironment {
    fn reset(&mut self, task: &EvalTask) {
        self.required_identifiers = persona::extract_identifiers(&task.raw_scenario);
        self.forbidden_authorization = Self::scenario_forbids_action(&task.raw_scenario);
        self.user_messages.clear();
        self.steps = 0;
    }

    fn step(&mut self, _agent_message: &str) -> Result<String, EnvironmentError> {
        self.steps += 1;
        Ok("ok".to_string())
    }

    fn observe_user(&mut self, user_message: &str) {
        self.user_messages.push(user_message.to_string());
    }

    fn is_success(&self) -> bool {
        let info_complete = self
            .required_identifiers
            .iter()
            .all(|id| self.user_messages.iter().any(|m| m.contains(id.as_str())));
        let no_shouting = !self.user_messages.iter().any(|m| Self::is_shouted(m));
        let compliant = !self.forbidden_authorization
            || !self.user_messages.iter().any(|m| {
                let lower = m.to_lowercase();
                lower.contains("go ahead and cancel") || lower.contains("cancel it")
            });
        info_complete && no_shouting && compliant
    }
}

// ---------------------------------------------------------------------------
// Running a condition
// ---------------------------------------------------------------------------

/// Simulator system prompt for one (task, condition) cell. NP and Persona
/// build on the identical task-only text, so their prompts differ only by
/// the persona override block.
pub fn condition_prompt(
    task: &EvalTask,
    condition: RunCondition,
    persona: Option<&PersonaBlock>,
) -> Result<PromptBundle, HarnessError> {
    match condition {
        RunCondition::Original => Ok(persona::assemble_original(
            &persona::simulation_guidelines(GuidelineMode::Baseline),
            &task.raw_scenario,
        )),
        RunCondition::Np => {
            let split = task
                .split
                .as_ref()
                .ok_or_else(|| HarnessError::MissingSplit(task.task_id.clone()))?;
            Ok(persona::assemble_prompt(
                &persona::simulation_guidelines(GuidelineMode::Baseline),
                split,
                None,
            ))
        }
        RunCondition::Persona => {
            let split = task
                .split
                .as_ref()
                .ok_or_else(|| HarnessError::MissingSplit(task.task_id.clone()))?;
            let block = persona.ok_or(HarnessError::MissingAssignment)?;
            Ok(persona::assemble_prompt(
                &persona::simulation_guidelines(GuidelineMode::Baseline),
                split,
                Some(block),
            ))
        }
    }
}

fn ends_with_termination(content: &str) -> bool {
    content
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim() == crate::prompts::TERMINATION_TOKEN)
}

fn run_dialogue(
    system_prompt: &str,
    cfg: &SimConfig,
    gateway: &dyn ChatGateway,
    env: &mut dyn TaskEnvironment,
    condition: SimCondition,
    profile_id: Option<String>,
) -> Result<SimTrajectory, EnvironmentError> {
    let probe =
        ChatRequest::new(&cfg.sim_model, cfg.sim_temperature, vec![ChatMessage::system(
            system_prompt.to_string(),
        )]);
    let mut trajectory = SimTrajectory {
        turns: Vec::new(),
        terminated_by: TerminatedBy::Error,
        condition,
        profile_id,
        sim_prompt_fingerprint: crate::gateway::fingerprint(&probe),
    };

    let mut sim_messages = vec![
        ChatMessage::system(system_prompt.to_string()),
        ChatMessage::user("The conversation begins. Send your first message as the user."),
    ];
    let mut agent_messages = vec![ChatMessage::system(format!(
        "{} Help the user with whatever they need, asking for any details \
         required to complete their request.",
        crate::prompts::SENTINEL_AGENT
    ))];
    let mut agent_count = 0usize;

    loop {
        let mut request =
            ChatRequest::new(&cfg.sim_model, cfg.sim_temperature, sim_messages.clone());
        request.seed = Some(cfg.seed as i64);
        let user_msg = gateway
            .complete(&request)
            .map_err(|e| EnvironmentError(format!("simulator gateway: {e}")))?
            .content;
        env.observe_user(&user_msg);
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

        let mut request =
            ChatRequest::new(&cfg.agent_model, cfg.agent_temperature, agent_messages.clone());
        request.seed = Some(cfg.seed as i64);
        let agent_msg = gateway
            .complete(&request)
            .map_err(|e| EnvironmentError(format!("agent gateway: {e}")))?
            .content;
        env.step(&agent_msg)?;
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

/// Run every task under one condition. Environment or gateway failures on a
/// task are recorded as failures with a diagnostic and the run continues.
pub fn run_condition(
    tasks: &[EvalTask],
    condition: RunCondition,
    assignment: Option<&PersonaAssignment>,
    profiles: &BTreeMap<String, UserProfile>,
    cfg: &SimConfig,
    env: &mut dyn TaskEnvironment,
    gateway: &dyn ChatGateway,
) -> Result<RunResult, HarnessError> {
    if condition == RunCondition::Persona && assignment.is_none() {
        return Err(HarnessError::MissingAssignment);
    }
    let domain = tasks.first().map(|t| t.domain).unwrap_or(TaskDomain::Custom);
    let mut outcomes = Vec::new();
    let mut trajectories = Vec::new();
    let mut prompt_fingerprints = BTreeMap::new();

    for task in tasks {
        let (block, profile_id) = match (condition, assignment) {
            (RunCondition::Persona, Some(a)) => {
                let profile_id = a
                    .mapping
                    .get(&task.task_id)
                    .ok_or_else(|| HarnessError::UnknownProfile(task.task_id.clone()))?;
                let profile = profiles
                    .get(profile_id)
                    .ok_or_else(|| HarnessError::UnknownProfile(profile_id.clone()))?;
                (Some(persona::format_persona(profile)), Some(profile_id.clone()))
            }
            _ => (None, None),
        };
        let bundle = condition_prompt(task, condition, block.as_ref())?;
        let sim_condition = match condition {
            RunCondition::Persona => SimCondition::WithProfile,
            _ => SimCondition::Baseline,
        };
        env.reset(task);
        match run_dialogue(
            &bundle.system_prompt,
            cfg,
            gateway,
            env,
            sim_condition,
            profile_id,
        ) {
            Ok(traj) => {
                prompt_fingerprints
                    .insert(task.task_id.clone(), traj.sim_prompt_fingerprint.clone());
                trajectories.push(TrajectoryRecord::from_trajectory(&task.task_id, &traj));
                outcomes.push(TaskOutcome {
                    task_id: task.task_id.clone(),
                    success: env.is_success(),
                    diagnostic: None,
                });
            }
            Err(e) => outcomes.push(TaskOutcome {
                task_id: task.task_id.clone(),
                success: false,
                diagnostic: Some(e.to_string()),
            }),
        }
    }

    let successes = outcomes.iter().filter(|o| o.success).count();
    Ok(RunResult {
        condition,
        domain,
        sim_model: cfg.sim_model.clone(),
        agent_model: cfg.agent_model.clone(),
        seed: cfg.seed,
        pool_name: assignment.map(|a| a.pool_name.clone()),
        success_rate: successes as f64 / tasks.len().max(1) as f64,
        outcomes,
        trajectories,
        prompt_fingerprints,
    })
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Success percentages for one (model, domain) cell of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCell {
    pub model: String,
    pub orig: Option<f64>,
    pub np: Option<f64>,
    /// One entry per persona seed.
    pub persona_runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub orig: Option<f64>,
    pub np: Option<f64>,
    pub persona_mean: Option<f64>,
    /// Persona mean minus NP, full precision.
    pub delta: Option<f64>,
    /// max − min across persona seeds.
    pub range: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub domain: String,
    pub rows: Vec<AggregateRow>,
    pub mean_row: AggregateRow,
    /// Human-readable descriptions of blanked grid cells.
    pub missing: Vec<String>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn aggregate_row(cell: &ModelCell, missing: &mut Vec<String>) -> AggregateRow {
    for (label, value) in [("orig", cell.orig), ("np", cell.np)] {
        if value.is_none() {
            missing.push(format!("{}/{}", cell.model, label));
        }
    }
    if cell.persona_runs.is_empty() {
        missing.push(format!("{}/persona", cell.model));
    }
    let persona_mean = mean(&cell.persona_runs);
    let delta = match (persona_mean, cell.np) {
        (Some(p), Some(np)) => Some(p - np),
        _ => None,
    };
    let range = if cell.persona_runs.is_empty() {
        None
    } else {
        let max = cell.persona_runs.iter().cloned().fold(f64::MIN, f64::max);
        let min = cell.persona_runs.iter().cloned().fold(f64::MAX, f64::min);
        Some(max - min)
    };
    AggregateRow { model: cell.model.clone(), orig: cell.orig, np: cell.np, persona_mean, delta, range }
}

/// Aggregate one domain's grid of per-model cells: persona mean over seeds,
/// Δ against NP, per-model range, and an unweighted mean row. Missing cells
/// are blanked and reported, not fatal.
pub fn aggregate_cells(domain: &str, cells: &[ModelCell]) -> AggregateTable {
    let mut missing = Vec::new();
    let rows: Vec<AggregateRow> =
        cells.iter().map(|c| aggregate_row(c, &mut missing)).collect();
    let column = |pick: &dyn Fn(&AggregateRow) -> Option<f64>| {
        let values: Vec<f64> = rows.iter().filter_map(pick).collect();
        if values.len() == rows.len() {
            mean(&values)
        } else {
            None
        }
    };
    let mean_row = AggregateRow {
        model: "Mean".into(),
        orig: column(&|r| r.orig),
        np: column(&|r| r.np),
        persona_mean: column(&|r| r.persona_mean),
        delta: column(&|r| r.delta),
        range: column(&|r| r.range),
    };
    AggregateTable { domain: domain.to_string(), rows, mean_row, missing }
}

/// Group raw run results into grid cells (declared model order) and
/// aggregate per domain.
pub fn aggregate_runs(results: &[RunResult], model_order: &[String]) -> Vec<AggregateTable> {
    let mut domains: Vec<TaskDomain> = results.iter().map(|r| r.domain).collect();
    domains.sort();
    domains.dedup();
    let mut tables = Vec::new();
    for domain in domains {
        let cells: Vec<ModelCell> = model_order
            .iter()
            .map(|model| {
                let of = |cond: RunCondition| -> Vec<f64> {
                    results
                        .iter()
                        .filter(|r| {
                            r.domain == domain && &r.sim_model == model && r.condition == cond
                        })
                        .map(|r| r.success_rate * 100.0)
                        .collect()
                };
                ModelCell {
                    model: model.clone(),
                    orig: of(RunCondition::Original).first().copied(),
                    np: of(RunCondition::Np).first().copied(),
                    persona_runs: of(RunCondition::Persona),
                }
            })
            .collect();
        let name = format!("{:?}", domain).to_lowercase();
        tables.push(aggregate_cells(&name, &cells));
    }
    tables
}

fn fmt_cell(value: Option<f64>, signed: bool) -> String {
    match value {
        None => "—".into(),
        Some(v) => {
            let rounded = (v * 10.0).round() / 10.0;
            if signed {
                format!("{rounded:+.1}")
            } else {
                format!("{rounded:.1}")
            }
        }
    }
}

/// Formatted success-rate table: Orig / NP / Persona / Δ per model plus the
/// mean row, half-up one-decimal display.
pub fn render_aggregate_table(table: &AggregateTable) -> String {
    let mut out = format!(
        "{:<18} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        table.domain, "Orig", "NP", "Persona", "Delta", "Range"
    );
    for row in table.rows.iter().chain(std::iter::once(&table.mean_row)) {
        out.push_str(&format!(
            "{:<18} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            row.model,
            fmt_cell(row.orig, false),
            fmt_cell(row.np, false),
            fmt_cell(row.persona_mean, false),
            fmt_cell(row.delta, true),
            fmt_cell(row.range, false),
        ));
    }
    for m in &table.missing {
        out.push_str(&format!("missing cell: {m}\n"));
    }
    out
}

// ---------------------------------------------------------------------------
// Directive sensitivity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Metrics with directives present (Original condition).
    pub with_directives: MetricBundle,
    /// Metrics with directives stripped (NP condition).
    pub without_directives: MetricBundle,
}

fn user_messages(trajs: &[TrajectoryRecord]) -> Vec<Vec<String>> {
    trajs
        .iter()
        .map(|t| {
            t.turns
                .iter()
                .filter(|turn| turn.role == TurnRole::User)
                .map(|turn| turn.content.clone())
                .collect()
        })
        .collect()
}

/// Behavioral-metric comparison between Original and NP trajectory sets
/// from the same model and domain.
pub fn directive_sensitivity_report(
    orig_trajs: &[TrajectoryRecord],
    np_trajs: &[TrajectoryRecord],
) -> SensitivityReport {
    SensitivityReport {
        with_directives: compute_metrics(&user_messages(orig_trajs), DEFAULT_FRUSTRATION_LEXICON),
        without_directives: compute_metrics(&user_messages(np_trajs), DEFAULT_FRUSTRATION_LEXICON),
    }
}

pub fn render_sensitivity_table(report: &SensitivityReport) -> String {
    let rows: [(&str, f64, f64); 6] = [
        (
            "roleplay_marker_rate",
            report.with_directives.roleplay_marker_rate,
            report.without_directives.roleplay_marker_rate,
        ),
        (
            "stage_direction_rate",
            report.with_directives.stage_direction_rate,
            report.without_directives.stage_direction_rate,
        ),
        (
            "frustration_rate",
            report.with_directives.frustration_rate,
            report.without_directives.frustration_rate,
        ),
        ("please_rate", report.with_directives.please_rate, report.without_directives.please_rate),
        ("list_rate", report.with_directives.list_rate, report.without_directives.list_rate),
        (
            "multiline_rate",
            report.with_directives.multiline_rate,
            report.without_directives.multiline_rate,
        ),
    ];
    let mut out = format!("{:<24} {:>10} {:>10}\n", "metric", "With", "Without");
    for (name, with, without) in rows {
        out.push_str(&format!(
            "{:<24} {:>9.1}% {:>9.1}%\n",
            name,
            (with * 1000.0).round() / 10.0,
            (without * 1000.0).round() / 10.0
        ));
    }
    out
}
