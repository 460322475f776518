//! Acceptance checks. Runs without the libtest harness so that every check
//! prints a PASS or FAIL line; exits non-zero if any check fails.

use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cogmap_cli::commands::replay_view;
use cogmap_cli::{PlanArg, ReplayArgs};
use cogmap_core::board_sim::{inject_faults, reconcile, synth_participant, AgentProfile, FaultProfile};
use cogmap_core::map_model::{BoardGeometry, BuildingId, MapConfiguration, Orientation, Placement, Point, Slot};
use cogmap_core::plan::default_plan;
use cogmap_core::report::AnalysisReport;
use cogmap_core::scoring::{
    d_sim, difference, distance, evaluate, interbuilding, orient, LocatedMap, MetricParams, Timeline, TimelineSample,
};
use cogmap_core::session::{apply_posthoc_corrections, AgeGroup};
use cogmap_core::storage::{encode_records, read_log, write_log, SessionHistory};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type CheckFn = fn() -> Check;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let e = start.elapsed();
    ensure(e < budget, || format!("took {e:.2?}, budget {budget:?}"))
}

fn random_map(rng: &mut ChaCha8Rng, g: &BoardGeometry, size: usize) -> MapConfiguration {
    let ids: Vec<BuildingId> = BuildingId::all().collect();
    let slots: Vec<Slot> = g.buildable_slots().collect();
    let chosen_ids: Vec<BuildingId> = ids.choose_multiple(rng, size).copied().collect();
    let chosen_slots: Vec<Slot> = slots.choose_multiple(rng, size).copied().collect();
    let placements = chosen_ids
        .into_iter()
        .zip(chosen_slots)
        .map(|(id, slot)| Placement::new(id, slot, *Orientation::ALL.choose(rng).unwrap()));
    MapConfiguration::from_placements(placements, g).expect("distinct ids and slots")
}

fn located(config: &MapConfiguration, g: &BoardGeometry) -> LocatedMap {
    LocatedMap::from_configuration(config, g).unwrap()
}

fn identity_suite() -> Check {
    let start = Instant::now();
    let g = BoardGeometry::default();
    let params = MetricParams::for_board(&g, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let size = rng.random_range(1..=8);
        let m = located(&random_map(&mut rng, &g, size), &g);
        let s = evaluate(&m, &m.clone(), &params).map_err(|e| e.to_string())?;
        let all = [s.number.unwrap_or(f64::NAN), s.difference, s.distance, s.orient, s.interbuilding, s.similarity];
        ensure(all.iter().all(|&v| v == 1.0), || format!("map {i} (size {size}): {all:?}"))?;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("1000 maps, {:.2?}", start.elapsed()))
}

/// Brute-force transcription of the formulas over plain tuples
/// `(id, x, y, degrees)`.
mod oracle {
    pub type Item = (u8, f64, f64, f64);

    fn odiff(a: f64, b: f64) -> f64 {
        let d = (a - b).abs() % 360.0;
        if d > 180.0 {
            360.0 - d
        } else {
            d
        }
    }

    pub fn metrics(m: &[Item], c: &[Item], d_max: f64, m_max: f64) -> [f64; 6] {
        let pairs: Vec<(&Item, &Item)> =
            m.iter().flat_map(|a| c.iter().filter(move |b| b.0 == a.0).map(move |b| (a, b))).collect();
        let common = pairs.len() as f64;
        let (nm, nc) = (m.len() as f64, c.len() as f64);
        let number = 1.0 - (nm - nc).abs() / nm;
        let difference = 1.0 - ((nm - common) + (nc - common)) / (nm + nc);
        let len = |dx: f64, dy: f64| (dx * dx + dy * dy).sqrt();
        let mut d = 0.0;
        let mut o = 0.0;
        for (a, b) in &pairs {
            d += len(a.1 - b.1, a.2 - b.2) / d_max;
            o += odiff(a.3, b.3) / 180.0;
        }
        let mut ib = 0.0;
        for (ai, bi) in &pairs {
            for (aj, bj) in &pairs {
                ib += (len(ai.1 - aj.1, ai.2 - aj.2) - len(bi.1 - bj.1, bi.2 - bj.2)).abs() / d_max;
            }
        }
        let distance = 1.0 - d / m_max;
        let orient = 1.0 - o / m_max;
        [number, difference, distance, orient, 1.0 - ib / (m_max * m_max), difference * distance * orient]
    }
}

fn enumerate_small(cols: u32, rows: u32) -> Vec<Vec<(u8, Slot, Orientation)>> {
    fn extend(
        ids: &[u8],
        cols: u32,
        rows: u32,
        partial: &mut Vec<(u8, Slot, Orientation)>,
        out: &mut Vec<Vec<(u8, Slot, Orientation)>>,
    ) {
        let Some((&id, rest)) = ids.split_first() else {
            out.push(partial.clone());
            return;
        };
        for col in 0..cols {
            for row in 0..rows {
                let slot = Slot { col, row };
                if partial.iter().any(|p| p.1 == slot) {
                    continue;
                }
                for o in Orientation::ALL {
                    partial.push((id, slot, o));
                    extend(rest, cols, rows, partial, out);
                    partial.pop();
                }
            }
        }
    }
    let mut out = Vec::new();
    for mask in 0u8..8 {
        let ids: Vec<u8> = (1..=3).filter(|i| mask & (1 << (i - 1)) != 0).collect();
        extend(&ids, cols, rows, &mut Vec::new(), &mut out);
    }
    out
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let (cols, rows, w, h) = (4u32, 4u32, 40.0, 30.0);
    let g = BoardGeometry::open(cols, rows, w, h);
    let d_max = (w * w + h * h).sqrt();
    let params = MetricParams::new(d_max, 3).unwrap();
    let configs = enumerate_small(cols, rows);
    ensure(configs.len() == 1 + 3 * 64 + 3 * 240 * 16 + 3360 * 64, || format!("{} configurations", configs.len()))?;

    let engine: Vec<LocatedMap> = configs
        .iter()
        .map(|items| {
            let placements = items.iter().map(|&(id, slot, o)| Placement::new(BuildingId::new(id).unwrap(), slot, o));
            located(&MapConfiguration::from_placements(placements, &g).unwrap(), &g)
        })
        .collect();
    let plain: Vec<Vec<oracle::Item>> = configs
        .iter()
        .map(|items| {
            items
                .iter()
                .map(|&(id, s, o)| {
                    let x = (s.col as f64 + 0.5) * w / cols as f64;
                    let y = (s.row as f64 + 0.5) * h / rows as f64;
                    (id, x, y, o.degrees() as f64)
                })
                .collect()
        })
        .collect();

    // Every configuration is scored as C against a panel of targets that
    // covers each target size.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut targets = Vec::new();
    for size in 1..=3 {
        let of_size: Vec<usize> = (0..configs.len()).filter(|&i| configs[i].len() == size).collect();
        targets.extend(of_size.choose_multiple(&mut rng, 8).copied());
    }
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for &t in &targets {
        for (c, (cm, cp)) in engine.iter().zip(&plain).enumerate() {
            let s = evaluate(&engine[t], cm, &params).map_err(|e| e.to_string())?;
            let got = [s.number.unwrap(), s.difference, s.distance, s.orient, s.interbuilding, s.similarity];
            let want = oracle::metrics(&plain[t], cp, d_max, 3.0);
            for k in 0..6 {
                let r = rel(got[k], want[k]);
                if r > 1e-12 {
                    return Err(format!("target {t} config {c} metric {k}: {} vs {}", got[k], want[k]));
                }
                worst = worst.max(r);
            }
            compared += 1;
        }
    }
    within(start, Duration::from_secs(120))?;
    Ok(format!(
        "{} configurations x {} targets = {compared} pairs, max rel dev {worst:.1e}, {:.2?}",
        configs.len(),
        targets.len(),
        start.elapsed()
    ))
}

fn range_and_symmetry() -> Check {
    let g = BoardGeometry::default();
    let params = MetricParams::for_board(&g, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_shift = 0.0f64;
    let pairs = 10_000;
    for i in 0..pairs {
        let size_m = rng.random_range(1..=8);
        let size_c = rng.random_range(0..=8);
        let m = located(&random_map(&mut rng, &g, size_m), &g);
        let c = located(&random_map(&mut rng, &g, size_c), &g);
        let s = evaluate(&m, &c, &params).map_err(|e| e.to_string())?;
        let values = [s.difference, s.distance, s.orient, s.interbuilding, s.similarity];
        ensure(values.iter().all(|v| (0.0..=1.0).contains(v)), || format!("pair {i} out of range: {values:?}"))?;
        if !c.is_empty() {
            let forward = [
                difference(&m, &c).unwrap(),
                distance(&m, &c, &params),
                orient(&m, &c, &params),
                interbuilding(&m, &c, &params),
            ];
            let backward = [
                difference(&c, &m).unwrap(),
                distance(&c, &m, &params),
                orient(&c, &m, &params),
                interbuilding(&c, &m, &params),
            ];
            ensure(forward == backward, || format!("pair {i} asymmetric: {forward:?} vs {backward:?}"))?;
        }
        let (dx, dy) = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
        let shifted = c.map_positions(|p| Point::new(p.x + dx, p.y + dy));
        let delta = (interbuilding(&m, &c, &params) - interbuilding(&m, &shifted, &params)).abs();
        worst_shift = worst_shift.max(delta);
        ensure(delta <= 1e-9, || format!("pair {i}: translation changed interbuilding by {delta:e}"))?;
    }
    Ok(format!("{pairs} pairs, max translation drift {worst_shift:.1e}"))
}

fn noisy_agent(seed: u64) -> AgentProfile {
    AgentProfile {
        recall_capacity: 7,
        position_noise_sigma_cm: 9.0,
        orientation_error_rate: 0.2,
        mean_inter_action_s: 10.0,
        rng_seed: seed,
    }
}

/// Runs the built binary quietly. Returns its exit code and stderr.
fn cogmap(args: &[String]) -> (i32, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_cogmap"))
        .args(args)
        .env_remove("CMP_PLAN_DIR")
        .output()
        .expect("run cogmap");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn timeline_consistency() -> Check {
    let plan = default_plan();
    let g = &plan.geometry;
    let params = plan.metric_params().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut paths: Vec<PathBuf> = Vec::new();
    for seed in 0..29u64 {
        let group = if seed % 2 == 0 { AgeGroup::Young } else { AgeGroup::Elderly };
        let participant = cogmap_core::session::Participant { id: format!("P{seed}"), group };
        let s =
            cogmap_core::board_sim::simulate_session(&format!("T{seed:02}"), participant, &plan, &noisy_agent(seed))
                .map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("T{seed:02}.session.jsonl"));
        write_log(&path, s.journal()).unwrap();
        paths.push(path);
    }
    let out = dir.path().join("report.json");
    let mut args = vec!["score".into(), "--session".into()];
    args.extend(paths.iter().map(|p| p.display().to_string()));
    args.extend(["--out".into(), out.display().to_string()]);
    let (code, err) = cogmap(&args);
    ensure(code == 0, || format!("score exited {code}: {err}"))?;
    let report: AnalysisReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();

    let mut logs = 0;
    let mut samples = 0;
    for path in &paths {
        let history = SessionHistory::from_records(&read_log(path).unwrap()).unwrap();
        for t in history.trials.iter().filter(|t| t.kind.is_recorded()) {
            let def = plan.trial(t.index).unwrap();
            let target = located(&def.target, g);
            let sid = &history.meta.session_id;
            let exported: Vec<_> =
                report.timelines.iter().filter(|r| &r.session_id == sid && r.trial == t.index).collect();
            let mut j = 0;
            for (i, e) in t.log.events().iter().enumerate() {
                if e.rejected {
                    continue;
                }
                let board = t.log.replay_prefix(&def.initial, g, i + 1).unwrap();
                let scratch = evaluate(&target, &located(&board, g), &params).unwrap().similarity;
                let row = exported.get(j).ok_or_else(|| format!("{sid} trial {}: timeline too short", t.index))?;
                ensure(row.similarity == scratch && row.t_s == e.event.t_ms as f64 / 1000.0, || {
                    format!("{sid} trial {} sample {j}: {} at {} vs {scratch}", t.index, row.similarity, row.t_s)
                })?;
                j += 1;
            }
            ensure(j == exported.len(), || format!("{sid} trial {}: timeline too long", t.index))?;
            samples += j;

            let view = replay_view(&ReplayArgs {
                session: path.clone(),
                plan: PlanArg { plan: None },
                trial: t.index,
                at_event: t.log.len(),
                corrections: None,
            })
            .map_err(|e| e.to_string())?;
            let row = report.trials.iter().find(|r| &r.session_id == sid && r.trial == t.index).unwrap();
            let v = &view.scores;
            let same = v.number == row.number
                && v.difference == row.difference
                && v.distance == row.distance
                && v.orient == row.orient
                && v.interbuilding == row.interbuilding
                && v.similarity == row.similarity
                && exported.last().is_none_or(|s| s.similarity == row.similarity);
            ensure(same, || format!("{sid} trial {}: replay {v:?} vs score {row:?}", t.index))?;
            logs += 1;
        }
    }
    ensure(logs >= 200, || format!("only {logs} logs"))?;
    Ok(format!("{logs} trial logs, {samples} samples"))
}

fn d_sim_cases() -> Check {
    let tl = |pts: &[(f64, f64)]| Timeline {
        samples: pts.iter().map(|&(t_s, similarity)| TimelineSample { t_s, similarity }).collect(),
    };
    let hand = d_sim(&tl(&[(0.0, 0.0), (10.0, 0.5), (20.0, 0.8)])).unwrap().unwrap();
    ensure((hand - 0.04).abs() <= 1e-15, || format!("hand case {hand}"))?;
    let flat = d_sim(&tl(&[(0.0, 0.6), (3.0, 0.6), (9.0, 0.6), (10.0, 0.6)])).unwrap();
    ensure(flat == Some(0.0), || format!("constant series {flat:?}"))?;
    let single = d_sim(&tl(&[(4.0, 0.3)])).unwrap();
    ensure(single.is_none(), || format!("single sample {single:?}"))?;
    Ok(format!("hand case {hand}, constant 0, single null"))
}

fn fault_statistics() -> Check {
    let plan = default_plan();
    let g = BoardGeometry::default();
    let trial = plan.recorded().last().unwrap();
    let empty = MapConfiguration::new();
    let (mut total, mut unknown, mut wrong) = (0usize, 0usize, 0usize);
    let mut seed = 0;
    while total < 10_000 {
        let clean = synth_participant(&AgentProfile::perfect(seed), trial, &g).unwrap();
        let out = inject_faults(&clean, &FaultProfile { rng_seed: 5000 + seed, ..FaultProfile::default() }).unwrap();
        total += clean.len();
        unknown += out.unidentified;
        wrong += out.misidentified;
        seed += 1;
    }
    let fu = unknown as f64 / total as f64;
    let fm = wrong as f64 / total as f64;
    ensure((fu - 0.18).abs() <= 0.01, || format!("unidentified fraction {fu}"))?;
    ensure((fm - 0.02).abs() <= 0.005, || format!("misidentified fraction {fm}"))?;

    let mut restored_ok = 0;
    for seed in 0..100 {
        let clean = synth_participant(&noisy_agent(seed), trial, &g).unwrap();
        let out = inject_faults(&clean, &FaultProfile { rng_seed: seed, ..FaultProfile::default() }).unwrap();
        let fixes = reconcile(&out.log, &out.truth).map_err(|e| e.to_string())?;
        let restored = apply_posthoc_corrections(&out.log, &fixes, &empty, &g).map_err(|e| e.to_string())?;
        if restored.replay_states(&empty, &g).unwrap() == clean.replay_states(&empty, &g).unwrap() {
            restored_ok += 1;
        }
    }
    ensure(restored_ok == 100, || format!("{restored_ok}/100 round trips"))?;
    Ok(format!("{total} events: unidentified {fu:.4}, misidentified {fm:.4}; {restored_ok}/100 round trips"))
}

fn profiles_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles/group-contrast.json")
}

fn group_contrast() -> Check {
    let start = Instant::now();
    let set = cogmap_cli::profiles::ProfileSet::load(&profiles_file()).map_err(|e| e.to_string())?;
    let [young, elderly] = [AgeGroup::Young, AgeGroup::Elderly]
        .map(|grp| set.groups.iter().find(|g| g.group == grp).expect("both groups in the profile file"));
    ensure(
        elderly.agent.position_noise_sigma_cm > young.agent.position_noise_sigma_cm
            && elderly.agent.mean_inter_action_s > young.agent.mean_inter_action_s,
        || "profile file does not describe a high-noise, slower group".into(),
    )?;

    let dir = tempfile::tempdir().unwrap();
    let (code, err) = cogmap(&[
        "simulate".into(),
        "--profiles".into(),
        profiles_file().display().to_string(),
        "--participants".into(),
        "10".into(),
        "--seed".into(),
        "2024".into(),
        "--out".into(),
        dir.path().display().to_string(),
    ]);
    ensure(code == 0, || format!("simulate exited {code}: {err}"))?;
    let report: AnalysisReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let mean = |grp, n, metric| {
        report.summary_for(grp, n, metric).and_then(|r| r.mean).ok_or_else(|| format!("no {metric} for {grp} {n}"))
    };
    let mut worst_gap = f64::INFINITY;
    for def in default_plan().recorded() {
        let n = def.num_buildings();
        let (sy, se) = (mean(AgeGroup::Young, n, "similarity")?, mean(AgeGroup::Elderly, n, "similarity")?);
        ensure(se <= sy, || format!("{n} buildings: high-noise similarity {se} > low-noise {sy}"))?;
        let (ty, te) = (mean(AgeGroup::Young, n, "totalTime_s")?, mean(AgeGroup::Elderly, n, "totalTime_s")?);
        ensure(te >= ty, || format!("{n} buildings: slower group finished first ({te} s vs {ty} s)"))?;
        worst_gap = worst_gap.min(sy - se);
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("7 trials, smallest similarity gap {worst_gap:.3}, {:.2?}", start.elapsed()))
}

mod scripted {
    use std::time::Duration;

    use cogmap_core::plan::default_plan;
    use cogmap_core::session::SessionStatus;
    use cogmap_service::protocol::{ServerEnvelope, ServerMessage};
    use futures::{SinkExt, StreamExt};
    use serde_json::{json, Value};
    use tokio_tungstenite::tungstenite::Message;

    type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

    pub struct Client {
        ws: Socket,
        seq: u64,
        session: String,
    }

    impl Client {
        pub async fn connect(addr: std::net::SocketAddr, session: &str) -> Self {
            let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
            Self { ws, seq: 0, session: session.into() }
        }

        async fn next(&mut self) -> ServerEnvelope {
            loop {
                let frame = tokio::time::timeout(Duration::from_secs(5), self.ws.next())
                    .await
                    .expect("server reply in time")
                    .expect("socket open")
                    .unwrap();
                if let Message::Text(t) = frame {
                    return serde_json::from_str(t.as_str()).unwrap();
                }
            }
        }

        /// Sends `body` and returns the first reply addressed to it.
        pub async fn request(&mut self, mut body: Value) -> ServerMessage {
            self.seq += 1;
            body["seq"] = json!(self.seq);
            body["session_id"] = json!(self.session);
            self.ws.send(Message::Text(body.to_string().into())).await.unwrap();
            loop {
                let m = self.next().await;
                if m.reply_to == Some(self.seq) {
                    return m.message;
                }
            }
        }

        pub async fn wait_for(&mut self, kind: &str) -> ServerMessage {
            loop {
                let m = self.next().await;
                if m.message.kind() == kind {
                    return m.message;
                }
            }
        }

        pub async fn close(mut self) {
            let _ = self.ws.close(None).await;
        }
    }

    fn ack_status(m: &ServerMessage) -> Option<&str> {
        match m {
            ServerMessage::EventAck { status, .. } => Some(status.as_str()),
            _ => None,
        }
    }

    /// Drives a whole session over two sockets. Returns the scores the
    /// assessor received.
    pub async fn run_session(
        addr: std::net::SocketAddr,
        id: &str,
    ) -> Result<Vec<cogmap_core::scoring::ScoreReport>, String> {
        let plan = default_plan();
        let mut assessor = Client::connect(addr, id).await;
        let joined = assessor
            .request(json!({"kind":"join","role":"assessor","participant":{"id":"P-E2E","group":"elderly"}}))
            .await;
        if joined.kind() != "joined" {
            return Err(format!("assessor join: {joined:?}"));
        }
        let mut participant = Client::connect(addr, id).await;
        participant.request(json!({"kind":"join","role":"participant"})).await;

        let mut scores = Vec::new();
        let mut flagged_once = false;
        for (i, trial) in plan.trials.iter().enumerate() {
            participant.request(json!({"kind":"tour_ready"})).await;
            if !trial.tour.is_empty() {
                participant.request(json!({"kind":"tour_pause","waypoint":0})).await;
                participant.request(json!({"kind":"tour_resume"})).await;
            }
            participant.request(json!({"kind":"tour_complete"})).await;
            if trial.kind.is_recorded() {
                let placements: Vec<_> = trial.target.placements().copied().collect();
                for (k, p) in placements.iter().enumerate() {
                    // Last building is turned a quarter; first building of
                    // the first recorded trial arrives unidentified.
                    let orientation = if k + 1 == placements.len() {
                        (p.orientation.degrees() + 90) % 360
                    } else {
                        p.orientation.degrees()
                    };
                    let unknown = !flagged_once && k == 0;
                    let building = if unknown { json!("unknown") } else { json!(p.building) };
                    let ack = participant
                        .request(json!({"kind":"board_event","action":"place","building":building,"col":p.col,"row":p.row,"orientation":orientation}))
                        .await;
                    let expected = if unknown { "flagged" } else { "accepted" };
                    if ack_status(&ack) != Some(expected) {
                        return Err(format!("trial {i} event {k}: {ack:?}"));
                    }
                    if unknown {
                        flagged_once = true;
                        let ServerMessage::CorrectionNeeded { event_id, .. } =
                            assessor.wait_for("correction_needed").await
                        else {
                            unreachable!()
                        };
                        let r =
                            assessor.request(json!({"kind":"resolve","event_id":event_id,"building":p.building})).await;
                        if ack_status(&r) != Some("resolved") {
                            return Err(format!("resolve: {r:?}"));
                        }
                    }
                }
            }
            let done = participant.request(json!({"kind":"done"})).await;
            if done.kind() == "error" {
                return Err(format!("trial {i} done: {done:?}"));
            }
            if trial.kind.is_recorded() {
                match assessor.wait_for("trial_score").await {
                    ServerMessage::TrialScore { report } => scores.push(report),
                    _ => unreachable!(),
                }
            }
            if i + 1 < plan.trials.len() {
                let next = assessor.request(json!({"kind":"advance"})).await;
                if !matches!(next, ServerMessage::TrialStart { index, .. } if index == i + 1) {
                    return Err(format!("advance after trial {i}: {next:?}"));
                }
            }
        }
        match participant.wait_for("session_complete").await {
            ServerMessage::SessionComplete { status: SessionStatus::Complete } => {}
            other => return Err(format!("session end: {other:?}")),
        }
        participant.close().await;
        assessor.close().await;
        Ok(scores)
    }
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let hub = cogmap_service::Hub::new(default_plan(), dir.path(), Arc::new(cogmap_service::SystemClock::default()))
        .map_err(|e| e.to_string())?;
    let log_path = hub.log_path("E2E-1");
    let live = runtime.block_on(async {
        let (addr, _server) = cogmap_service::spawn(hub).await.unwrap();
        scripted::run_session(addr, "E2E-1").await
    })?;
    ensure(live.len() == 7, || format!("{} scores received", live.len()))?;

    let bytes = std::fs::read(&log_path).unwrap();
    let records = read_log(&log_path).map_err(|e| e.to_string())?;
    ensure(encode_records(&records).as_bytes() == bytes.as_slice(), || "re-encoded log differs".into())?;
    let copy = dir.path().join("copy.session.jsonl");
    write_log(&copy, &records).unwrap();
    ensure(std::fs::read(&copy).unwrap() == bytes, || "rewritten log differs".into())?;
    let history = SessionHistory::from_records(&records).map_err(|e| e.to_string())?;
    ensure(history.trials.len() == 10, || format!("{} trials logged", history.trials.len()))?;

    let out = dir.path().join("e2e.json");
    let (code, err) = cogmap(&[
        "score".into(),
        "--session".into(),
        log_path.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ]);
    ensure(code == 0, || format!("score exited {code}: {err}"))?;
    let report: AnalysisReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for (row, live) in report.trials.iter().zip(&live) {
        ensure(row.similarity == live.similarity && row.total_time_s == live.total_time_s, || {
            format!("trial {}: offline {row:?} vs live {live:?}", row.trial)
        })?;
        ensure(row.similarity < 1.0, || format!("trial {} scored perfectly despite the turned building", row.trial))?;
    }
    Ok(format!("3 practice + 7 recorded trials, {} log lines", records.len()))
}

fn main() {
    let checks: [(&str, CheckFn); 8] = [
        ("metric identity", identity_suite),
        ("metric oracle equivalence", oracle_equivalence),
        ("range and symmetry", range_and_symmetry),
        ("timeline consistency", timeline_consistency),
        ("dSim", d_sim_cases),
        ("fault statistics", fault_statistics),
        ("synthetic group contrast", group_contrast),
        ("end-to-end scripted session", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
