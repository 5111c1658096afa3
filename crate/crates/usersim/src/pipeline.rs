//! End-to-end orchestration helpers shared by the CLI and integration
//! tests: per-user profile construction and the full
//! corpus → profiles → benchmark → simulation → judging → report flow.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::{tag_conversation, Conversation, CorpusError};
use crate::gateway::ChatGateway;
use crate::profiling::{
    aggregate_demographics, consolidate_profile, extract_demographic_mentions,
    extract_style_profile, infer_demographics, ProfilingError, UserProfile,
};
use crate::pt3::{
    aggregate_fidelity, build_subset, judge_pair, presentation_orders, render_fidelity_table,
    strip_termination, uniform_weights, FidelityReport, Pt3Error, Pt3Verdict, SubsetSpec,
    TestCase,
};
use crate::simulation::{
    extract_task_spec, run_paired_simulation, SimConfig, SimTrajectory, SimulationError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("profiling user {user}: {source}")]
    Profiling { user: String, source: ProfilingError },
    #[error("benchmark: {0}")]
    Pt3(#[from] Pt3Error),
    #[error("simulation for case {case}: {source}")]
    Simulation { case: String, source: SimulationError },
}

/// Full profile for one user's conversations: style manual, extracted and
/// inferred demographics, consolidated with extracted-wins precedence.
pub fn build_profile(
    user_convs: &[Conversation],
    gateway: &dyn ChatGateway,
    model: &str,
) -> Result<UserProfile, ProfilingError> {
    let manual = extract_style_profile(user_convs, gateway, model)?;
    let mut mentions = Vec::new();
    for conv in user_convs {
        mentions.extend(extract_demographic_mentions(conv, gateway, model)?);
    }
    let extracted = aggregate_demographics(&mentions);
    let inferred = infer_demographics(user_convs, &extracted, gateway, model)?;
    let conversation_ids = user_convs.iter().map(|c| c.conversation_id.clone()).collect();
    consolidate_profile(manual, &extracted, &inferred, None, conversation_ids)
}

/// Group conversations by user (insertion order preserved within a user).
pub fn group_by_user(convs: &[Conversation]) -> BTreeMap<String, Vec<Conversation>> {
    let mut groups: BTreeMap<String, Vec<Conversation>> = BTreeMap::new();
    for conv in convs {
        groups.entry(conv.user_id.clone()).or_default().push(conv.clone());
    }
    groups
}

/// Profiles for every user in the corpus. Users whose manuals come back
/// empty are skipped rather than failing the batch.
pub fn build_all_profiles(
    convs: &[Conversation],
    gateway: &dyn ChatGateway,
    model: &str,
) -> Result<BTreeMap<String, UserProfile>, PipelineError> {
    let mut profiles = BTreeMap::new();
    for (user, user_convs) in group_by_user(convs) {
        match build_profile(&user_convs, gateway, model) {
            Ok(profile) => {
                profiles.insert(user, profile);
            }
            Err(ProfilingError::EmptyManual) => continue,
            Err(source) => return Err(PipelineError::Profiling { user, source }),
        }
    }
    Ok(profiles)
}

pub struct EndToEndArtifacts {
    pub profiles: BTreeMap<String, UserProfile>,
    pub cases: Vec<TestCase>,
    pub baseline_trajectories: Vec<SimTrajectory>,
    pub profile_trajectories: Vec<SimTrajectory>,
    pub baseline_verdicts: Vec<Pt3Verdict>,
    pub profile_verdicts: Vec<Pt3Verdict>,
    pub baseline_report: FidelityReport,
    pub profile_report: FidelityReport,
    /// Final rendered comparison table; byte-stable for a fixed seed with a
    /// deterministic gateway.
    pub report_text: String,
}

/// ingest → tag → profile → consolidate → build_subset → clean → simulate
/// (both conditions) → judge → report. Deterministic for a fixed seed when
/// the gateway is deterministic.
pub fn run_end_to_end(
    mut convs: Vec<Conversation>,
    subset: &SubsetSpec,
    seed: u64,
    gateway: &dyn ChatGateway,
    model: &str,
) -> Result<EndToEndArtifacts, PipelineError> {
    for conv in &mut convs {
        if conv.tags.is_none() {
            conv.tags = Some(tag_conversation(conv, gateway, model)?);
        }
    }

    let profiles = build_all_profiles(&convs, gateway, model)?;
    let cases = build_subset(&convs, &profiles, subset)?;
    let orders = presentation_orders(cases.len(), seed);

    let cfg = SimConfig { seed, sim_model: model.into(), agent_model: model.into(), ..Default::default() };
    let mut baseline_trajectories = Vec::new();
    let mut profile_trajectories = Vec::new();
    let mut baseline_verdicts = Vec::new();
    let mut profile_verdicts = Vec::new();

    for (case, real_first) in cases.iter().zip(&orders) {
        let spec = extract_task_spec(&case.real_conversation, gateway, model)
            .map_err(|source| PipelineError::Simulation { case: case.case_id.clone(), source })?;

        for with_profile in [false, true] {
            let profile = with_profile.then_some(&case.cleaned_profile);
            let traj = run_paired_simulation(&spec, profile, &cfg, gateway)
                .map_err(|source| PipelineError::Simulation {
                    case: case.case_id.clone(),
                    source,
                })?;
            let stripped = strip_termination(&traj);
            let mut verdict = judge_pair(
                &case.real_conversation,
                &stripped,
                *real_first,
                gateway,
                model,
                &case.case_id,
            )?;
            verdict.subset = Some(case.subset.clone());
            if with_profile {
                profile_trajectories.push(traj);
                profile_verdicts.push(verdict);
            } else {
                baseline_trajectories.push(traj);
                baseline_verdicts.push(verdict);
            }
        }
    }

    let weights = uniform_weights();
    let baseline_report = aggregate_fidelity(&baseline_verdicts, &weights)?;
    let profile_report = aggregate_fidelity(&profile_verdicts, &weights)?;
    let report_text = render_fidelity_table(&baseline_report, &profile_report);

    Ok(EndToEndArtifacts {
        profiles,
        cases,
        baseline_trajectories,
        profile_trajectories,
        baseline_verdicts,
        profile_verdicts,
        baseline_report,
        profile_report,
        report_text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Turn, TurnRole};
    use crate::gateway::ScriptedGateway;

    fn fixture_corpus() -> Vec<Conversation> {
        // Two conversations per user so profiles span multiple sources.
        let mut convs = Vec::new();
        for u in 0..5 {
            for c in 0..2 {
                let id = format!("C{u}{c}");
                let turns = (0..4)
                    .flat_map(|i| {
                        vec![
                            Turn {
                                role: TurnRole::User,
                                content: format!("user {u} message {i} in {id} asking about an order"),
                                index: i * 2,
                            },
                            Turn {
                                role: TurnRole::Assistant,
                                content: format!("assistant reply {i}"),
                                index: i * 2 + 1,
                            },
                        ]
                    })
                    .collect();
                convs.push(Conversation {
                    conversation_id: id,
                    user_id: format!("u{u}"),
                    source_model: "gpt-4o".into(),
                    turns,
                    language: None,
                    tags: None,
                });
            }
        }
        convs
    }

    fn small_subset() -> SubsetSpec {
        SubsetSpec { size: 4, min_quality: 0, min_user_turns: 3, ..Default::default() }
    }

    #[test]
    fn end_to_end_runs_on_scripted_gateway() {
        let gateway = ScriptedGateway::new();
        let artifacts =
            run_end_to_end(fixture_corpus(), &small_subset(), 7, &gateway, "mock").unwrap();
        assert_eq!(artifacts.cases.len(), 4);
        assert_eq!(artifacts.baseline_trajectories.len(), 4);
        assert_eq!(artifacts.profile_trajectories.len(), 4);
        assert!(artifacts.report_text.contains("Overall"));
    }

    #[test]
    fn end_to_end_is_byte_identical_across_runs() {
        let gateway = ScriptedGateway::new();
        let a = run_end_to_end(fixture_corpus(), &small_subset(), 7, &gateway, "mock").unwrap();
        let b = run_end_to_end(fixture_corpus(), &small_subset(), 7, &gateway, "mock").unwrap();
        assert_eq!(a.report_text, b.report_text);
        assert_eq!(a.baseline_verdicts, b.baseline_verdicts);
        assert_eq!(a.profile_verdicts, b.profile_verdicts);
    }
}
