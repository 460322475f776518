use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use cogmap_core::board_sim::{derive_seed, inject_session_faults, simulate_session, AgentProfile, FaultProfile};
use cogmap_core::plan::{default_plan, AssessmentPlan};
use cogmap_core::report::{export_report, rescore_session, AnalysisReport, ExportFormat, ScoredSession};
use cogmap_core::scoring::{evaluate, LocatedMap, MapScores};
use cogmap_core::session::{apply_posthoc_corrections, Correction, Participant};
use cogmap_core::storage::{
    load_plan, read_corrections, read_log, write_corrections, write_log, write_plan, SessionHistory, StorageError,
    TrialCorrection, SESSION_EXT,
};
use cogmap_service::{Hub, SystemClock};

use crate::profiles::ProfileSet;
use crate::{CliError, Command, Format, PlanArg, PlanInitArgs, ReplayArgs, ScoreArgs, ServeArgs, SimulateArgs};

pub const CORRECTIONS_EXT: &str = ".corrections.json";

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Serve(args) => serve(args),
        Command::Score(args) => score(args),
        Command::Simulate(args) => simulate(args),
        Command::Replay(args) => replay(args),
        Command::PlanInit(args) => plan_init(args),
    }
}

pub fn resolve_plan(arg: &PlanArg) -> anyhow::Result<AssessmentPlan> {
    match &arg.plan {
        Some(path) => load_plan(path).context("loading plan"),
        None => Ok(default_plan()),
    }
}

/// `dir/S01.session.jsonl` -> `dir/S01.corrections.json`.
pub fn sibling_corrections(session_path: &Path) -> PathBuf {
    let name = session_path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let stem = name.strip_suffix(SESSION_EXT).unwrap_or_else(|| name.split('.').next().unwrap_or(name));
    session_path.with_file_name(format!("{stem}{CORRECTIONS_EXT}"))
}

fn load_corrections(session_path: &Path, explicit: Option<&Path>) -> anyhow::Result<Vec<TrialCorrection>> {
    if let Some(path) = explicit {
        return read_corrections(path).context("loading corrections");
    }
    let sibling = sibling_corrections(session_path);
    if sibling.exists() {
        return read_corrections(&sibling).context("loading corrections");
    }
    Ok(Vec::new())
}

fn load_history(path: &Path) -> anyhow::Result<SessionHistory> {
    let records = match read_log(path) {
        Ok(r) => r,
        Err(e @ StorageError::PartialRead { .. }) => {
            return Err(anyhow!(e).context(format!("{} is truncated or corrupt", path.display())))
        }
        Err(e) => return Err(anyhow!(e).context("reading session log")),
    };
    SessionHistory::from_records(&records).with_context(|| format!("reading {}", path.display()))
}

fn score_one(path: &Path, plan: &AssessmentPlan, explicit: Option<&Path>) -> anyhow::Result<ScoredSession> {
    let history = load_history(path)?;
    let corrections = load_corrections(path, explicit)?;
    rescore_session(&history, plan, &corrections).map_err(|e| match e.pending_events() {
        Some(ids) => anyhow!(
            "session {} has unresolved events: {}; supply corrections for them",
            history.meta.session_id,
            ids.join(", ")
        ),
        None => anyhow!(e).context(format!("scoring {}", path.display())),
    })
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let plan = resolve_plan(&args.plan)?;
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let hub = Hub::new(plan, &args.log_dir, Arc::new(SystemClock::default()))
        .with_context(|| format!("preparing log directory {}", args.log_dir.display()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let addr = std::net::SocketAddr::new(args.host, args.port);
    runtime.block_on(cogmap_service::serve(hub, addr, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(())
}

fn score(args: ScoreArgs) -> Result<(), CliError> {
    if args.corrections.is_some() && args.session.len() > 1 {
        return Err(CliError::Usage("--corrections applies to a single --session".into()));
    }
    let plan = resolve_plan(&args.plan)?;
    let mut scored = Vec::new();
    for path in &args.session {
        scored.push(score_one(path, &plan, args.corrections.as_deref())?);
    }
    let format = match args.format {
        Format::Json => ExportFormat::Json,
        Format::Csv => ExportFormat::Csv,
    };
    let written = export_report(&scored, &args.out, format)?;
    for s in &scored {
        for t in &s.trials {
            println!(
                "{} trial {} ({} buildings): similarity {:.4}, totalTime {:.1} s",
                s.session_id, t.index, t.num_buildings, t.report.similarity, t.report.total_time_s
            );
        }
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let profiles = ProfileSet::load(&args.profiles)?;
    let plan = resolve_plan(&args.plan)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut scored = Vec::new();
    for (g, group) in profiles.groups.iter().enumerate() {
        for p in 0..args.participants {
            let id = format!("{}-{:03}", group.name, p + 1);
            let seed_for = |own: u64| derive_seed(&[args.seed, g as u64, p as u64, own]);
            let agent = AgentProfile { rng_seed: seed_for(group.agent.rng_seed), ..group.agent };
            let participant = Participant { id: format!("P-{id}"), group: group.group };
            let session =
                simulate_session(&id, participant, &plan, &agent).with_context(|| format!("simulating {id}"))?;
            let (records, corrections) = match &group.faults {
                Some(f) => {
                    let faults = FaultProfile { rng_seed: seed_for(f.rng_seed), ..*f };
                    inject_session_faults(session.journal(), &faults)?
                }
                None => (session.journal().to_vec(), Vec::new()),
            };
            let log_path = args.out.join(format!("{id}{SESSION_EXT}"));
            write_log(&log_path, &records)?;
            if group.faults.is_some() {
                write_corrections(&sibling_corrections(&log_path), &corrections)?;
            }
            let history = SessionHistory::from_records(&records)?;
            scored.push(rescore_session(&history, &plan, &corrections).with_context(|| format!("scoring {id}"))?);
        }
    }

    export_report(&scored, &args.out.join("report.json"), ExportFormat::Json)?;
    export_report(&scored, &args.out.join("report.csv"), ExportFormat::Csv)?;
    print_group_table(&AnalysisReport::build(&scored));
    println!("wrote {} sessions to {}", scored.len(), args.out.display());
    Ok(())
}

fn print_group_table(report: &AnalysisReport) {
    println!("{:<8} {:>9} {:>18} {:>20}", "group", "buildings", "similarity", "totalTime_s");
    for row in report.summary.iter().filter(|r| r.metric == "similarity") {
        let time = report.summary_for(row.group, row.num_buildings, "totalTime_s");
        let cell = |mean: Option<f64>, se: Option<f64>, digits: usize| match (mean, se) {
            (Some(m), Some(s)) => format!("{m:.digits$} ± {s:.digits$}"),
            _ => "-".to_string(),
        };
        println!(
            "{:<8} {:>9} {:>18} {:>20}",
            row.group.to_string(),
            row.num_buildings,
            cell(row.mean, row.se, 3),
            time.map(|t| cell(t.mean, t.se, 1)).unwrap_or_else(|| "-".into())
        );
    }
}

/// Board contents and metrics after the first `at_event` events of a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayView {
    pub session_id: String,
    pub trial: usize,
    pub applied: usize,
    pub total: usize,
    pub board: cogmap_core::map_model::MapConfiguration,
    pub scores: MapScores,
}

pub fn replay_view(args: &ReplayArgs) -> anyhow::Result<ReplayView> {
    let plan = resolve_plan(&args.plan)?;
    let history = load_history(&args.session)?;
    let trial = history
        .trial(args.trial)
        .ok_or_else(|| anyhow!("trial {} is not in {}", args.trial, args.session.display()))?;
    let def = plan.trial(args.trial).ok_or_else(|| anyhow!("trial {} is not in the plan", args.trial))?;
    let total = trial.log.len();
    if args.at_event > total {
        return Err(anyhow!("--at-event {} is past the end of trial {} ({total} events)", args.at_event, args.trial));
    }
    let corrections: Vec<Correction> = load_corrections(&args.session, args.corrections.as_deref())?
        .into_iter()
        .filter(|c| c.trial == args.trial)
        .map(|c| c.correction)
        .collect();
    let log = apply_posthoc_corrections(&trial.log, &corrections, &def.initial, &plan.geometry)?;
    let board = log
        .replay_prefix(&def.initial, &plan.geometry, args.at_event)
        .with_context(|| format!("replaying trial {}", args.trial))?;
    let params = plan.metric_params()?;
    let m = LocatedMap::from_configuration(&def.target, &plan.geometry)?;
    let c = LocatedMap::from_configuration(&board, &plan.geometry)?;
    let scores = evaluate(&m, &c, &params)?;
    Ok(ReplayView {
        session_id: history.meta.session_id,
        trial: args.trial,
        applied: args.at_event,
        total,
        board,
        scores,
    })
}

fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let view = replay_view(&args)?;
    println!("session {} trial {} after {} of {} events", view.session_id, view.trial, view.applied, view.total);
    println!("board:");
    if view.board.is_empty() {
        println!("  (empty)");
    }
    for p in view.board.placements() {
        println!("  {}  col {:>2}  row {:>2}  facing {:>3}", p.building, p.col, p.row, p.orientation.degrees());
    }
    let s = &view.scores;
    println!("metrics:");
    match s.number {
        Some(n) => println!("  number         {n}"),
        None => println!("  number         undefined"),
    }
    println!("  difference     {}", s.difference);
    println!("  distance       {}", s.distance);
    println!("  orient         {}", s.orient);
    println!("  interbuilding  {}", s.interbuilding);
    println!("  similarity     {}", s.similarity);
    Ok(())
}

fn plan_init(args: PlanInitArgs) -> Result<(), CliError> {
    let path = write_plan(&default_plan(), &args.out)?;
    println!("wrote {}", path.display());
    Ok(())
}
