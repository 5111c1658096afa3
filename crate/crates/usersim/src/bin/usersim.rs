//! Command-line entry point for the toolkit: corpus curation, profile
//! construction, persona rendering, paired simulation, fidelity judging,
//! behavioral metrics, and the three-condition agent harness.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use usersim::corpus::{self, Conversation, CurationPolicy, DEFAULT_TRIVIAL_LEXICON};
use usersim::gateway::{ChatGateway, HttpGateway, ProviderConfig, ScriptedGateway};
use usersim::harness::{
    self, MockEnvironment, PersonaAssignment, PoolConfig, PoolCriterion, RunCondition, RunResult,
    TaskEnvironment,
};
use usersim::metrics::{
    self, TraitVocabulary, DEFAULT_FRUSTRATION_LEXICON,
};
use usersim::persona;
use usersim::pipeline;
use usersim::profiling::{self, DemographicRecord, UserProfile};
use usersim::pt3::{self, SubsetSpec, TestCase};
use usersim::simulation::{self, SimConfig, TrajectoryRecord};

#[derive(Parser)]
#[command(name = "usersim", about = "Behavioral user profiles and grounded user simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Gateway backend: "scripted" (offline deterministic) or "http".
    #[arg(long, global = true, default_value = "scripted")]
    gateway: String,
    /// Provider config JSON (endpoint, auth_env, limits); required for
    /// --gateway http. The API key is read from the named env var.
    #[arg(long, global = true)]
    provider_config: Option<PathBuf>,
    /// Model name sent to the gateway.
    #[arg(long, global = true, default_value = "mock-model")]
    model: String,
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Corpus(CorpusCmd),
    #[command(subcommand)]
    Profile(ProfileCmd),
    #[command(subcommand)]
    Persona(PersonaCmd),
    /// Run paired simulations for a benchmark case file.
    Simulate(SimulateArgs),
    #[command(subcommand)]
    Pt3(Pt3Cmd),
    #[command(subcommand)]
    Metrics(MetricsCmd),
    #[command(subcommand)]
    Harness(HarnessCmd),
}

#[derive(Args)]
struct InOut {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Parse and normalize line-delimited conversation records.
    Ingest(InOut),
    /// Remove trivial greeting/thanks rounds.
    Trim(InOut),
    /// Apply stage-1 (length, language) and stage-2 (model, substance) filters.
    Filter {
        #[command(flatten)]
        io: InOut,
        #[arg(long, default_value_t = 2)]
        min_turns: usize,
        #[arg(long, default_value = "en")]
        lang: String,
        #[arg(long, default_value_t = 0.5)]
        min_confidence: f64,
        #[arg(long, default_value = "gpt-4o")]
        source_model: String,
        #[arg(long, default_value_t = 1)]
        min_substantive_turns: usize,
    },
    /// Tag conversations with domain/task-type/quality scores via the gateway.
    Tag(InOut),
    /// Apply exclusions, caps, and minimum domain counts.
    Curate {
        #[command(flatten)]
        io: InOut,
        /// Curation policy JSON; defaults are used when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ProfileCmd {
    /// Extract persona manuals (command + example pairs) per user.
    Style(InOut),
    /// Extract explicitly stated demographics per user.
    DemoExtract(InOut),
    /// Infer missing demographic fields per user (abstains when unsure).
    DemoInfer {
        #[command(flatten)]
        io: InOut,
        /// Extracted records JSONL from demo-extract.
        #[arg(long)]
        extracted: PathBuf,
    },
    /// Full per-user pipeline: style + demographics, consolidated profiles.
    Consolidate(InOut),
    /// Score inferred records against golden records (paired by line).
    Validate {
        #[arg(long)]
        inferred: PathBuf,
        #[arg(long)]
        golden: PathBuf,
    },
}

#[derive(Subcommand)]
enum PersonaCmd {
    /// Render a profile's persona block.
    Render {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        user: String,
    },
    /// Separate a scenario into task content and behavioral directives.
    Separate {
        /// File holding the raw scenario text.
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Benchmark case file (JSONL of test cases from `pt3 build`).
    #[arg(long)]
    cases: PathBuf,
    /// "baseline" or "profile".
    #[arg(long)]
    condition: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum Pt3Cmd {
    /// Build a benchmark subset with anti-leakage cleaning applied.
    Build {
        #[arg(long)]
        convs: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 100)]
        size: usize,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long, default_value = "subset")]
        name: String,
        #[arg(long, default_value_t = 10)]
        min_quality: u8,
    },
    /// Report cleaning-class counts and run the post-cleaning leakage sweep.
    Clean {
        #[arg(long)]
        cases: PathBuf,
    },
    /// Judge real-vs-synthetic pairs for one condition's trajectories.
    Judge {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Render the fidelity comparison table from two verdict files.
    Report {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        profile: PathBuf,
    },
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// Behavioral metric bundle over user messages in a trajectory file.
    Compute {
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// Export binary trait vectors as a plain matrix.
    Vectors {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Seeded k-means over trait vectors.
    Cluster {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Age/education composition per cluster.
    Composition {
        #[arg(long)]
        cluster_model: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
    },
}

#[derive(Subcommand)]
enum HarnessCmd {
    /// Strip behavioral directives from task scenarios (fills `split`).
    Separate(InOut),
    /// Seeded persona-to-task assignment from a demographic pool.
    Assign {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long, default_value = "all")]
        pool: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run one condition over a task file.
    Run {
        #[arg(long)]
        tasks: PathBuf,
        /// "original", "np", or "persona".
        #[arg(long)]
        condition: String,
        #[arg(long)]
        assignment: Option<PathBuf>,
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// "mock" or "adapter:<path>" (adapters are external; only the mock
        /// environment ships with the toolkit).
        #[arg(long, default_value = "mock")]
        env: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Aggregate run results into the Orig/NP/Persona/Δ table.
    Aggregate {
        /// Run-result JSON files.
        #[arg(long, num_args = 1..)]
        results: Vec<PathBuf>,
        /// Comma-separated model order for the report rows.
        #[arg(long)]
        models: String,
    },
    /// With/without-directives behavioral metric comparison.
    Sensitivity {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        np: PathBuf,
    },
}

fn make_gateway(cli: &Cli) -> Result<Box<dyn ChatGateway>> {
    match cli.gateway.as_str() {
        "scripted" => Ok(Box::new(ScriptedGateway::new())),
        "http" => {
            let path = cli
                .provider_config
                .as_ref()
                .context("--gateway http requires --provider-config")?;
            let config: ProviderConfig = serde_json::from_str(&std::fs::read_to_string(path)?)
                .context("could not parse provider config")?;
            Ok(Box::new(HttpGateway::from_config(config)?))
        }
        other => bail!("unknown gateway backend {other:?}; use scripted or http"),
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("open {path:?}"))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{} malformed record", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut file = File::create(path).with_context(|| format!("create {path:?}"))?;
    for item in items {
        serde_json::to_writer(&mut file, item)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

fn load_convs(path: &Path) -> Result<Vec<Conversation>> {
    read_jsonl(path)
}

fn load_profile_map(path: &Path) -> Result<BTreeMap<String, UserProfile>> {
    let profiles: Vec<UserProfile> = read_jsonl(path)?;
    Ok(profiles.into_iter().map(|p| (p.user_id.clone(), p)).collect())
}

fn user_messages_of(trajs: &[TrajectoryRecord]) -> Vec<Vec<String>> {
    trajs
        .iter()
        .map(|t| {
            t.turns
                .iter()
                .filter(|turn| turn.role == corpus::TurnRole::User)
                .map(|turn| turn.content.clone())
                .collect()
        })
        .collect()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let gateway = make_gateway(&cli)?;
    let model = cli.model.clone();

    match cli.command {
        Command::Corpus(cmd) => run_corpus(cmd, gateway.as_ref(), &model),
        Command::Profile(cmd) => run_profile(cmd, gateway.as_ref(), &model),
        Command::Persona(cmd) => run_persona(cmd, gateway.as_ref(), &model),
        Command::Simulate(args) => run_simulate(args, gateway.as_ref(), &model),
        Command::Pt3(cmd) => run_pt3(cmd, gateway.as_ref(), &model),
        Command::Metrics(cmd) => run_metrics(cmd),
        Command::Harness(cmd) => run_harness(cmd, gateway.as_ref(), &model),
    }
}

fn run_corpus(cmd: CorpusCmd, gateway: &dyn ChatGateway, model: &str) -> Result<()> {
    match cmd {
        CorpusCmd::Ingest(io) => {
            let reader = BufReader::new(File::open(&io.input)?);
            let outcome = corpus::parse_conversations(reader)?;
            eprintln!(
                "parsed {} conversations, skipped {} malformed lines",
                outcome.conversations.len(),
                outcome.skipped
            );
            write_jsonl(&io.output, &outcome.conversations)
        }
        CorpusCmd::Trim(io) => {
            let convs = load_convs(&io.input)?;
            let trimmed: Vec<Conversation> = convs
                .iter()
                .map(|c| corpus::trim_trivial_rounds(c, DEFAULT_TRIVIAL_LEXICON))
                .collect();
            write_jsonl(&io.output, &trimmed)
        }
        CorpusCmd::Filter {
            io,
            min_turns,
            lang,
            min_confidence,
            source_model,
            min_substantive_turns,
        } => {
            let convs = load_convs(&io.input)?;
            let stage1 = corpus::filter_stage1(
                convs,
                min_turns,
                &lang,
                min_confidence,
                corpus::english_scorer,
            );
            let stage2 = corpus::filter_stage2(
                stage1,
                &source_model,
                min_substantive_turns,
                DEFAULT_TRIVIAL_LEXICON,
            );
            eprintln!("{} conversations after filtering", stage2.len());
            write_jsonl(&io.output, &stage2)
        }
        CorpusCmd::Tag(io) => {
            let mut convs = load_convs(&io.input)?;
            for conv in &mut convs {
                conv.tags = Some(corpus::tag_conversation(conv, gateway, model)?);
            }
            write_jsonl(&io.output, &convs)
        }
        CorpusCmd::Curate { io, policy } => {
            let convs = load_convs(&io.input)?;
            let policy: CurationPolicy = match policy {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => CurationPolicy::default(),
            };
            let curated = corpus::curate(convs, &policy);
            eprintln!("{} conversations after curation", curated.len());
            write_jsonl(&io.output, &curated)
        }
    }
}

fn run_profile(cmd: ProfileCmd, gateway: &dyn ChatGateway, model: &str) -> Result<()> {
    match cmd {
        ProfileCmd::Style(io) => {
            let convs = load_convs(&io.input)?;
            let mut manuals = Vec::new();
            for (_, user_convs) in pipeline::group_by_user(&convs) {
                manuals.push(profiling::extract_style_profile(&user_convs, gateway, model)?);
            }
            write_jsonl(&io.output, &manuals)
        }
        ProfileCmd::DemoExtract(io) => {
            let convs = load_convs(&io.input)?;
            let mut records = Vec::new();
            for (user, user_convs) in pipeline::group_by_user(&convs) {
                let mut mentions = Vec::new();
                for conv in &user_convs {
                    mentions.extend(profiling::extract_demographic_mentions(
                        conv, gateway, model,
                    )?);
                }
                let record = profiling::aggregate_demographics(&mentions);
                records.push(serde_json::json!({ "user_id": user, "record": record }));
            }
            write_jsonl(&io.output, &records)
        }
        ProfileCmd::DemoInfer { io, extracted } => {
            let convs = load_convs(&io.input)?;
            let rows: Vec<serde_json::Value> = read_jsonl(&extracted)?;
            let mut by_user: BTreeMap<String, DemographicRecord> = BTreeMap::new();
            for row in rows {
                let user = row["user_id"].as_str().unwrap_or_default().to_string();
                let record: DemographicRecord = serde_json::from_value(row["record"].clone())?;
                by_user.insert(user, record);
            }
            let mut out = Vec::new();
            for (user, user_convs) in pipeline::group_by_user(&convs) {
                let existing = by_user.remove(&user).unwrap_or_default();
                let inferred =
                    profiling::infer_demographics(&user_convs, &existing, gateway, model)?;
                out.push(serde_json::json!({ "user_id": user, "record": inferred }));
            }
            write_jsonl(&io.output, &out)
        }
        ProfileCmd::Consolidate(io) => {
            let convs = load_convs(&io.input)?;
            let profiles = pipeline::build_all_profiles(&convs, gateway, model)?;
            let profiles: Vec<UserProfile> = profiles.into_values().collect();
            eprintln!("built {} profiles", profiles.len());
            write_jsonl(&io.output, &profiles)
        }
        ProfileCmd::Validate { inferred, golden } => {
            let inferred: Vec<DemographicRecord> = read_jsonl(&inferred)?;
            let golden: Vec<DemographicRecord> = read_jsonl(&golden)?;
            for row in profiling::validate_inference(&inferred, &golden) {
                println!("{row:?}");
            }
            Ok(())
        }
    }
}

fn run_persona(cmd: PersonaCmd, gateway: &dyn ChatGateway, model: &str) -> Result<()> {
    match cmd {
        PersonaCmd::Render { profiles, user } => {
            let map = load_profile_map(&profiles)?;
            let profile = map.get(&user).with_context(|| format!("no profile for {user}"))?;
            println!("{}", persona::format_persona(profile).rendered);
            Ok(())
        }
        PersonaCmd::Separate { scenario } => {
            let text = std::fs::read_to_string(scenario)?;
            let split = persona::separate_directives(&text, &[], gateway, model)?;
            println!("{}", serde_json::to_string_pretty(&split)?);
            Ok(())
        }
    }
}

fn run_simulate(args: SimulateArgs, gateway: &dyn ChatGateway, model: &str) -> Result<()> {
    let cases: Vec<TestCase> = read_jsonl(&args.cases)?;
    let with_profile = match args.condition.as_str() {
        "baseline" => false,
        "profile" => true,
        other => bail!("unknown condition {other:?}; use baseline or profile"),
    };
    let cfg = SimConfig {
        seed: args.seed,
        sim_model: model.into(),
        agent_model: model.into(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for case in &cases {
        let spec = simulation::extract_task_spec(&case.real_conversation, gateway, model)?;
        let profile = with_profile.then_some(&case.cleaned_profile);
        let traj = simulation::run_paired_simulation(&spec, profile, &cfg, gateway)?;
        records.push(TrajectoryRecord::from_trajectory(&case.case_id, &traj));
    }
    write_jsonl(&args.output, &records)
}

fn run_pt3(cmd: Pt3Cmd, gateway: &dyn ChatGateway, model: &str) -> Result<()> {
    match cmd {
        Pt3Cmd::Build { convs, profiles, output, size, domain, name, min_quality } => {
            let convs = load_convs(&convs)?;
            let profiles = load_profile_map(&profiles)?;
            let spec = SubsetSpec {
                name,
                size,
                domain_filter: domain,
                min_quality,
                ..Default::default()
            };
            let cases = pt3::build_subset(&convs, &profiles, &spec)?;
            write_jsonl(&output, &cases)
        }
        Pt3Cmd::Clean { cases } => {
            let cases: Vec<TestCase> = read_jsonl(&cases)?;
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            let mut leaked = 0usize;
            for case in &cases {
                let class = match case.cleaning_class {
                    pt3::CleaningClass::StrippedAll => "stripped_all",
                    pt3::CleaningClass::RemovedTagged => "removed_tagged",
                    pt3::CleaningClass::Unchanged => "unchanged",
                };
                *counts.entry(class).or_insert(0) += 1;
                let test_id = &case.real_conversation.conversation_id;
                for cmd in &case.cleaned_profile.manual.commands {
                    leaked += cmd
                        .examples
                        .iter()
                        .filter(|e| &e.source_conversation_id == test_id)
                        .count();
                }
            }
            for (class, count) in counts {
                println!("{class}\t{count}");
            }
            println!("leaked_examples\t{leaked}");
            Ok(())
        }
        Pt3Cmd::Judge { cases, trajectories, seed, output } => {
            let cases: Vec<TestCase> = read_jsonl(&cases)?;
            let trajs: Vec<TrajectoryRecord> = read_jsonl(&trajectories)?;
            let by_case: BTreeMap<&str, &TrajectoryRecord> =
                trajs.iter().map(|t| (t.case_id.as_str(), t)).collect();
            let orders = pt3::presentation_orders(cases.len(), seed);
            let mut verdicts = Vec::new();
            for (case, real_first) in cases.iter().zip(orders) {
                let record = by_case
                    .get(case.case_id.as_str())
                    .with_context(|| format!("no trajectory for {}", case.case_id))?;
                let traj = usersim::simulation::SimTrajectory {
                    turns: record.turns.clone(),
                    terminated_by: record.terminated_by,
                    condition: record.condition,
                    profile_id: record.profile_id.clone(),
                    sim_prompt_fingerprint: String::new(),
                };
                let stripped = pt3::strip_termination(&traj);
                let mut verdict = pt3::judge_pair(
                    &case.real_conversation,
                    &stripped,
                    real_first,
                    gateway,
                    model,
                    &case.case_id,
                )?;
                verdict.subset = Some(case.subset.clone());
                verdicts.push(verdict);
            }
            write_jsonl(&output, &verdicts)
        }
        Pt3Cmd::Report { baseline, profile } => {
            let baseline_verdicts: Vec<pt3::Pt3Verdict> = read_jsonl(&baseline)?;
            let profile_verdicts: Vec<pt3::Pt3Verdict> = read_jsonl(&profile)?;
            let weights = pt3::uniform_weights();
            let b = pt3::aggregate_fidelity(&baseline_verdicts, &weights)?;
            let p = pt3::aggregate_fidelity(&profile_verdicts, &weights)?;
            print!("{}", pt3::render_fidelity_table(&b, &p));
            Ok(())
        }
    }
}

fn run_metrics(cmd: MetricsCmd) -> Result<()> {
    match cmd {
        MetricsCmd::Compute { trajectories } => {
            let trajs: Vec<TrajectoryRecord> = read_jsonl(&trajectories)?;
            let bundle =
                metrics::compute_metrics(&user_messages_of(&trajs), DEFAULT_FRUSTRATION_LEXICON);
            print!("{}", metrics::metrics_tsv(&bundle));
            Ok(())
        }
        MetricsCmd::Vectors { profiles, output } => {
            let map = load_profile_map(&profiles)?;
            let vocab = TraitVocabulary::shipped();
            let vectors: Vec<_> = map
                .values()
                .map(|p| metrics::trait_vector(p, &vocab))
                .collect::<Result<_, _>>()?;
            std::fs::write(&output, metrics::vectors_matrix(&vectors))?;
            Ok(())
        }
        MetricsCmd::Cluster { profiles, k, seed, output } => {
            let map = load_profile_map(&profiles)?;
            let vocab = TraitVocabulary::shipped();
            let vectors: Vec<_> = map
                .values()
                .map(|p| metrics::trait_vector(p, &vocab))
                .collect::<Result<_, _>>()?;
            let model = metrics::kmeans(&vectors, k, seed)?;
            if model.degenerate {
                eprintln!("warning: all vectors identical; reduced to k=1");
            }
            std::fs::write(&output, serde_json::to_string_pretty(&model)?)?;
            Ok(())
        }
        MetricsCmd::Composition { cluster_model, profiles } => {
            let cluster_model: metrics::ClusterModel =
                serde_json::from_str(&std::fs::read_to_string(cluster_model)?)?;
            let map = load_profile_map(&profiles)?;
            let compositions = metrics::cluster_demographics(&cluster_model, &map);
            print!("{}", metrics::composition_tsv(&compositions));
            Ok(())
        }
    }
}

fn run_harness(cmd: HarnessCmd, gateway: &dyn ChatGateway, model: &str) -> Result<()> {
    match cmd {
        HarnessCmd::Separate(io) => {
            let mut tasks = harness::load_tasks(&io.input)?;
            for task in &mut tasks {
                let split = persona::separate_directives(
                    &task.raw_scenario,
                    &task.declared_user_names,
                    gateway,
                    model,
                )?;
                task.split = Some(split);
            }
            harness::save_tasks(&io.output, &tasks)?;
            Ok(())
        }
        HarnessCmd::Assign { tasks, profiles, pool, seed, output } => {
            let tasks = harness::load_tasks(&tasks)?;
            let map = load_profile_map(&profiles)?;
            let all: Vec<UserProfile> = map.into_values().collect();
            let criterion =
                PoolCriterion::parse(&pool).with_context(|| format!("unknown pool {pool:?}"))?;
            let pool_profiles = harness::select_pool(&all, criterion, &PoolConfig::default())?;
            let assignment =
                harness::assign_personas(&tasks, &pool_profiles, criterion.name(), seed)?;
            std::fs::write(&output, serde_json::to_string_pretty(&assignment)?)?;
            Ok(())
        }
        HarnessCmd::Run { tasks, condition, assignment, profiles, seed, env, output } => {
            let tasks = harness::load_tasks(&tasks)?;
            let condition = RunCondition::parse(&condition)
                .with_context(|| format!("unknown condition {condition:?}"))?;
            let assignment: Option<PersonaAssignment> = match assignment {
                Some(path) => Some(serde_json::from_str(&std::fs::read_to_string(path)?)?),
                None => None,
            };
            let profile_map = match profiles {
                Some(path) => load_profile_map(&path)?,
                None => BTreeMap::new(),
            };
            if env != "mock" {
                bail!("only the mock environment ships with the toolkit; adapters are external");
            }
            let mut environment: Box<dyn TaskEnvironment> = Box::new(MockEnvironment::new());
            let cfg = SimConfig {
                seed,
                sim_model: model.into(),
                agent_model: model.into(),
                ..Default::default()
            };
            let result = harness::run_condition(
                &tasks,
                condition,
                assignment.as_ref(),
                &profile_map,
                &cfg,
                environment.as_mut(),
                gateway,
            )?;
            eprintln!("success rate: {:.3}", result.success_rate);
            std::fs::write(&output, serde_json::to_string_pretty(&result)?)?;
            Ok(())
        }
        HarnessCmd::Aggregate { results, models } => {
            let mut runs: Vec<RunResult> = Vec::new();
            for path in results {
                runs.push(serde_json::from_str(&std::fs::read_to_string(path)?)?);
            }
            let order: Vec<String> = models.split(',').map(|m| m.trim().to_string()).collect();
            for table in harness::aggregate_runs(&runs, &order) {
                print!("{}", harness::render_aggregate_table(&table));
            }
            Ok(())
        }
        HarnessCmd::Sensitivity { orig, np } => {
            let orig: Vec<TrajectoryRecord> = read_jsonl(&orig)?;
            let np: Vec<TrajectoryRecord> = read_jsonl(&np)?;
            let report = harness::directive_sensitivity_report(&orig, &np);
            print!("{}", harness::render_sensitivity_table(&report));
            Ok(())
        }
    }
}
