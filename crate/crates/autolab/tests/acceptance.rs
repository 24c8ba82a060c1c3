//! Acceptance suite. Every criterion runs offline: scripted LLM replies,
//! the stub trainer and a simulated clock. One PASS/FAIL line each.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use autolab::agents::{AgentSet, OfflineCorpus, ToolHost};
use autolab::clock::{Clock, SimClock};
use autolab::engine::journal::{invalid_cycles, phases_by_cycle, read_journal};
use autolab::executor::{ExecSettings, Workspace};
use autolab::memory_store::MemoryStore;
use autolab::procfs;
use autolab_core::backoff::cooldown_secs;
use autolab_core::cost::{cost_report, overhead_for_count, overhead_reduction, CostLedger, CostScenario, LedgerPhase, Pricing};
use autolab_core::memory::{render_memory, LogCaps, LogEntry, MemoryLog, ProjectBrief};
use autolab_core::roster::{AgentKind, ToolCall};
use autolab_core::state::{is_valid_cycle_phases, ExitClass, ExperimentRecord, LoopState, Phase};
use chrono::{TimeZone, Utc};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("AC1", "zero-cost monitoring", ac1),
        ("AC2", "cost model", ac2),
        ("AC3", "memory bound", ac3),
        ("AC4", "tool overhead", ac4),
        ("AC5", "dry-run gate", ac5),
        ("AC6", "protected files", ac6),
        ("AC7", "directive protocol", ac7),
        ("AC8", "anti-burn backoff", ac8),
        ("AC9", "crash recovery", ac9),
        ("AC10", "end-to-end scripted run", ac10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| id.eq_ignore_ascii_case(x)) {
            continue;
        }
        let t = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let ms = t.elapsed().as_millis();
        match res {
            Ok(detail) => println!("{id} PASS {name} ({ms} ms): {detail}"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL {name} ({ms} ms): {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ac1() -> Outcome {
    let started = Instant::now();
    let p = Project::new(|c| c.monitor.poll_interval = 900);
    let t0 = p.clock.now();
    let state_path = p.ws().join("state.json");
    p.clock.schedule_at(t0 + chrono::Duration::hours(8), move || {
        let st: LoopState = serde_json::from_str(&fs::read_to_string(&state_path).unwrap()).unwrap();
        let pid = st.active_experiment.and_then(|r| r.pid).expect("running experiment");
        procfs::kill_group(pid as i32);
        std::thread::sleep(Duration::from_millis(200));
    });
    let fixture = [
        leader_dispatch("long baseline", "code_agent", "launch the 8 hour run"),
        code_launch("\"--forever\", \"--interval\", \"1\""),
        leader_reflect(None, "run was cut at 8 h; analyse the curve"),
    ]
    .concat();
    let (mut e, _) = p.engine(&fixture);
    let events = p.hub.subscribe();
    let snaps: Arc<Mutex<Vec<(Phase, CostLedger)>>> = Arc::default();
    let s2 = snaps.clone();
    e.on_transition(Box::new(move |ph, st| s2.lock().unwrap().push((ph, st.ledger.clone()))));
    e.run(1).map_err(|e| e.to_string())?;

    let polls = events.try_iter().filter(|l| l.contains("\"type\":\"monitor\"")).count();
    ensure!(polls == 32, "{polls} monitor polls, expected 32");
    let journal = fs::read_to_string(p.ws().join(ExperimentRecord::monitor_journal_path(1))).unwrap_or_default();
    ensure!(journal.lines().count() == 32, "monitor journal has {} lines", journal.lines().count());
    let snaps = snaps.lock().unwrap();
    let at = |want: Phase| snaps.iter().find(|(ph, _)| *ph == want).map(|(_, l)| l.clone());
    let (m, r) = (at(Phase::Monitor).ok_or("no monitor phase")?, at(Phase::Reflect).ok_or("no reflect phase")?);
    ensure!(m == r, "ledger changed across Monitor");
    ensure!(
        serde_json::to_string(&m).unwrap() == serde_json::to_string(&r).unwrap(),
        "ledger bytes differ across Monitor"
    );
    let ledger = &e.state().ledger;
    ensure!(ledger.phase(LedgerPhase::Monitor).calls == 0, "monitor calls recorded");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "32 polls over 8 simulated hours, monitor calls 0, ledger identical ({} calls before and after)",
        m.total_calls()
    ))
}

fn ac2() -> Outcome {
    // analytic half, through the CLI
    let t = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_autolab"))
        .args([
            "--config",
            "/nonexistent/autolab.yaml",
            "report-cost",
            "--analytic-only",
            "--format",
            "csv",
            "--training-hours",
            "8",
            "--poll-interval-minutes",
            "5",
            "--tokens-per-poll",
            "2000",
        ])
        .env("RUST_LOG", "off")
        .output()
        .map_err(|e| e.to_string())?;
    let cli_time = t.elapsed();
    ensure!(out.status.success(), "report-cost failed: {}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8_lossy(&out.stdout).to_string();
    let row = |label: &str| -> Option<(u64, u64, f64)> {
        csv.lines().find_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f.len() == 5 && f[0] == "conventional" && f[1] == label)
                .then(|| (f[2].parse().unwrap(), f[3].parse().unwrap(), f[4].parse().unwrap()))
        })
    };
    let monitor = row("monitor").ok_or("no monitor row")?;
    let total = row("total").ok_or("no total row")?;
    ensure!((monitor.0, monitor.1) == (96, 192_000), "monitor row {monitor:?}");
    ensure!((total.0, total.1) == (291, 602_000), "total row {total:?}");
    // reference dollars for the conventional agent
    for (label, usd, reference) in [
        ("monitor", monitor.2, 0.50),
        ("idle_poll", row("idle_poll").ok_or("no idle row")?.2, 0.94),
        ("active", row("active").ok_or("no active row")?.2, 0.16),
        ("total", total.2, 1.60),
    ] {
        ensure!((usd / reference - 1.0).abs() <= 0.20, "{label} ${usd:.3} vs ${reference:.2}");
    }
    ensure!(cli_time < Duration::from_secs(1), "report-cost took {cli_time:?}");

    // measured half: one scripted cycle of ~50K tokens
    let p = Project::new(|c| c.monitor.poll_interval = 60);
    let usage = |i: u64, o: u64| format!("  usage: {{input_tokens: {i}, output_tokens: {o}}}\n");
    let fixture = [
        leader_dispatch("baseline", "code_agent", "launch") + &usage(14_000, 1_000),
        format!(
            "- system_contains: \"{CODE}\"\n  tool_calls:\n    - name: launch_experiment\n      arguments: {{command: [\"sh\", \"train.sh\", \"--steps\", \"2\"]}}\n{}- system_contains: \"{CODE}\"\n  reply: done\n{}",
            usage(12_000, 500),
            usage(12_000, 500)
        ),
        leader_reflect(Some("baseline done"), "tune lr") + &usage(9_500, 500),
    ]
    .concat();
    let (mut e, _) = p.engine(&fixture);
    e.run(1).map_err(|e| e.to_string())?;
    let ledger = e.state().ledger.clone();
    let measured = ledger.total().usage.total_tokens();
    ensure!(measured == 50_000, "measured cycle used {measured} tokens");
    let table = cost_report(Some(&ledger), &CostScenario::default(), &Pricing::default()).map_err(|e| e.to_string())?;
    let ratio = table.token_ratio.ok_or("no ratio")?;
    ensure!((10.0..=20.0).contains(&ratio), "reduction ratio {ratio:.2}");
    Ok(format!(
        "monitor 96 calls / 192000 tokens, day 291 / 602000, ${:.3} total, reduction {ratio:.1}x vs {measured} measured tokens",
        total.2
    ))
}

fn ac3() -> Outcome {
    let t = Instant::now();
    let t0 = Utc.with_ymd_and_hms(2026, 4, 7, 9, 0, 0).unwrap();
    let caps = LogCaps::default();
    let brief = ProjectBrief::new(&"b".repeat(2999), "PROJECT_BRIEF.md", 3000).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC3);
    let mut checks = 0u64;
    for seq in 0..10_000u64 {
        let mut log = MemoryLog::new(caps);
        let steps = rng.gen_range(1..=40);
        for step in 0..steps {
            let cycle = seq * 100 + step;
            let len = if rng.gen_ratio(1, 10) { rng.gen_range(200..=3000) } else { rng.gen_range(1..=200) };
            let text: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
            let entry = LogEntry::new(cycle, &text, t0).map_err(|e| e.to_string())?;
            let newest;
            if rng.gen_bool(0.3) {
                if log.append_key_result(entry).is_err() {
                    continue;
                }
                newest = log.key_results().last().map(|e| e.cycle);
            } else {
                log.append_decision(entry);
                newest = log.recent_decisions().last().map(|e| e.cycle);
            }
            ensure!(newest == Some(cycle), "newest entry evicted (seq {seq} step {step})");
            let rendered = log.render();
            ensure!(rendered.chars().count() <= 2000, "tier-2 {} chars", rendered.chars().count());
            ensure!(log.rendered_chars() == rendered.chars().count(), "char accounting drift");
            ensure!(log.recent_decisions().len() <= 15, "{} decisions", log.recent_decisions().len());
            ensure!(log.key_results_chars() <= 1200, "milestones {} chars", log.key_results_chars());
            let m = render_memory(&brief, &log).chars().count();
            ensure!(m <= 5000, "render {m} chars");
            checks += 1;
        }
    }
    // 120 cycles: a decision each cycle, a milestone about every third
    let mut log = MemoryLog::new(caps);
    let mut rng = ChaCha8Rng::seed_from_u64(120);
    let mut sizes = Vec::new();
    for cycle in 1..=120u64 {
        let at = t0 + chrono::Duration::hours(6 * cycle as i64);
        if rng.gen_ratio(1, 3) {
            let n = rng.gen_range(45..=95);
            let _ = log.append_key_result(LogEntry::new(cycle, &"k".repeat(n), at).unwrap());
        }
        let n = rng.gen_range(55..=115);
        log.append_decision(LogEntry::new(cycle, &"d".repeat(n), at).unwrap());
        sizes.push(log.rendered_chars());
    }
    let steady = *sizes.last().unwrap();
    ensure!((1800..=2000).contains(&steady), "steady state {steady} chars");
    ensure!(t.elapsed() < Duration::from_secs(10), "took {:?}", t.elapsed());
    Ok(format!("{checks} states over 10000 sequences within caps; 120-cycle steady state {steady} chars"))
}

fn ac4() -> Outcome {
    ensure!(overhead_for_count(4) == 800, "overhead(4)");
    ensure!(overhead_for_count(15) == 3000, "overhead(15)");
    let pct = (overhead_reduction(4, 15) * 100.0).round();
    ensure!(pct == 73.0, "reduction {pct}%");
    let agents = AgentSet::builtin();
    let mut got = Vec::new();
    for (kind, want) in [
        (AgentKind::Leader, 600),
        (AgentKind::Idea, 800),
        (AgentKind::Code, 1000),
        (AgentKind::Writing, 600),
    ] {
        let schemas = agents.get(kind).tool_schemas();
        let tokens = autolab_core::cost::overhead_tokens(&schemas);
        ensure!(tokens == want, "{kind}: {tokens} tokens, expected {want}");
        got.push(tokens);
    }
    // the gateway bills the same overhead on a real call
    let p = Project::new(|_| {});
    let (mut e, _) = p.engine(&leader_wait("idle"));
    e.run(1).map_err(|e| e.to_string())?;
    let billed = e.gateway().calls()[0].usage.tool_overhead_tokens;
    ensure!(billed == 600, "leader call billed {billed} overhead tokens");
    Ok(format!("800 / 3000 tokens, 73% reduction, per agent {got:?}"))
}

fn tagged_processes(tag: &str) -> Vec<u32> {
    let mut out = Vec::new();
    for e in fs::read_dir("/proc").into_iter().flatten().flatten() {
        let Ok(pid) = e.file_name().to_string_lossy().parse::<u32>() else { continue };
        if let Ok(cmd) = fs::read(format!("/proc/{pid}/cmdline")) {
            if String::from_utf8_lossy(&cmd).split('\0').any(|a| a == tag) {
                if procfs::stat(pid).is_some_and(|s| s.state != 'Z') {
                    out.push(pid);
                }
            }
        }
    }
    out
}

fn ac5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ws = Workspace::open(dir.path()).map_err(|e| e.to_string())?;
    fs::write(ws.root().join("PROJECT_BRIEF.md"), "brief\n").unwrap();
    fs::write(ws.root().join("train.sh"), STUB_TRAINER).unwrap();
    let mut memory = MemoryStore::open(
        &ws.root().join("PROJECT_BRIEF.md"),
        &ws.root().join("MEMORY_LOG.md"),
        3000,
        LogCaps::default(),
    )
    .map_err(|e| e.to_string())?;
    let papers = OfflineCorpus::bundled();
    let clock = SimClock::new(Utc::now());
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC5);
    let mut next_id = 1;
    let (mut launched, mut refused) = (0, 0);
    for i in 0..24 {
        let broken = rng.gen_bool(0.5);
        let gate = rng.gen_ratio(3, 4);
        let tag = format!("ac5-run-{i}");
        let mut argv = vec!["sh", "train.sh", "--steps", "2", "--tag", tag.as_str()];
        if broken {
            argv.push("--broken-import");
        }
        let mut host = ToolHost {
            ws: &ws,
            memory: &mut memory,
            papers: &papers,
            clock: &clock,
            exec: ExecSettings {
                mandatory_dry_run: gate,
                dry_run_timeout: Duration::from_secs(30),
                shell_timeout: Duration::from_secs(30),
                gpu: None,
            },
            cycle: 1,
            busy: None,
            next_experiment_id: next_id,
            effects: Default::default(),
            trace: Vec::new(),
        };
        let r = host.execute(
            AgentKind::Code,
            &ToolCall {
                id: format!("c{i}"),
                name: "launch_experiment".into(),
                arguments: json!({ "command": argv }),
            },
        );
        let verdict_ok = host.trace.iter().find(|t| t.tool == "dry_run").map(|t| t.ok);
        ensure!(verdict_ok == Some(!gate || !broken), "attempt {i}: dry-run verdict {verdict_ok:?}");
        let should_launch = !gate || !broken;
        next_id = host.next_experiment_id;
        match host.effects.launched.take() {
            Some((rec, mut handle)) => {
                ensure!(should_launch, "attempt {i} launched after a failed dry-run");
                ensure!(r.ok, "attempt {i}: {}", r.content);
                if let Some(c) = handle.child.as_mut() {
                    let _ = c.wait();
                }
                ensure!(ws.root().join(&rec.log_path).exists(), "attempt {i}: no run log");
                launched += 1;
            }
            None => {
                ensure!(!should_launch, "attempt {i} not launched: {}", r.content);
                ensure!(r.content.starts_with("error: DryRunNotPassed"), "attempt {i}: {}", r.content);
                ensure!(
                    !ws.root().join(ExperimentRecord::run_dir(next_id)).exists(),
                    "attempt {i}: run dir created"
                );
                refused += 1;
            }
        }
        let left = tagged_processes(&tag);
        ensure!(left.is_empty(), "attempt {i}: processes left {left:?}");
    }
    ensure!(launched > 0 && refused > 0, "sequence did not cover both outcomes");
    Ok(format!("{launched} launches (passed or gate off), {refused} refused, no stray processes"))
}

/// Lexical model of where a write lands: `None` if it escapes the workspace.
fn oracle_target(root: &Path, path: &str) -> Option<PathBuf> {
    let mut parts: Vec<String> = if Path::new(path).is_absolute() {
        Vec::new()
    } else {
        root.components().filter_map(|c| c.as_os_str().to_str().map(str::to_string)).collect()
    };
    let root_len = root.components().count();
    for comp in Path::new(path).components() {
        match comp {
            Component::RootDir => parts.clear(),
            Component::CurDir | Component::Prefix(_) => {}
            Component::ParentDir => {
                parts.pop();
            }
            Component::Normal(n) => {
                let n = n.to_string_lossy().to_string();
                // `here` is a symlink to the workspace root
                if parts.len() == root_len && n == "here" {
                    continue;
                }
                parts.push(n);
            }
        }
    }
    let joined: PathBuf = parts.iter().collect();
    let joined = if root.is_absolute() { Path::new("/").join(joined) } else { joined };
    let rel = joined.strip_prefix(root).ok()?;
    Some(rel.to_path_buf())
}

fn ac6() -> Outcome {
    let outer = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ws_dir = outer.path().join("ws");
    let ws = Workspace::open(&ws_dir).map_err(|e| e.to_string())?;
    let root = ws.root().to_path_buf();
    let protected = ["state.json", "MEMORY_LOG.md", "PROJECT_BRIEF.md"];
    fs::write(root.join("PROJECT_BRIEF.md"), "frozen brief\n").unwrap();
    fs::write(root.join("state.json"), "{\"cycle\": 7}\n").unwrap();
    std::os::unix::fs::symlink(&root, root.join("here")).unwrap();
    let mut memory =
        MemoryStore::open(&root.join("PROJECT_BRIEF.md"), &root.join("MEMORY_LOG.md"), 3000, LogCaps::default())
            .map_err(|e| e.to_string())?;
    memory
        .update(|l| l.append_decision(LogEntry::new(1, "keep", Utc::now()).unwrap()))
        .map_err(|e| e.to_string())?;
    let before: Vec<Vec<u8>> = protected.iter().map(|f| fs::read(root.join(f)).unwrap()).collect();
    let outer_before: BTreeSet<_> = fs::read_dir(outer.path()).unwrap().flatten().map(|e| e.file_name()).collect();

    let papers = OfflineCorpus::bundled();
    let clock = SimClock::new(Utc::now());
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC6);
    let root_s = root.to_string_lossy().to_string();
    let ws_name = root.file_name().unwrap().to_string_lossy().to_string();
    let names = ["state.json", "MEMORY_LOG.md", "PROJECT_BRIEF.md", "notes.md", "src/model.py", "ideas/h1.md"];
    let decorations = [
        String::new(),
        "./".into(),
        "a/../".into(),
        "./b/./../".into(),
        "here/".into(),
        "here/here/".into(),
        format!("{root_s}/"),
        format!("{root_s}//"),
        format!("../{ws_name}/"),
        "../".into(),
        "../../".into(),
        "/tmp/".into(),
        "x/../../".into(),
        "src/../".into(),
    ];
    let suffixes = ["", "/.", "/"];
    let agents = [AgentKind::Leader, AgentKind::Idea, AgentKind::Code, AgentKind::Writing];
    let mut violations = 0;
    for i in 0..1000 {
        let path = format!(
            "{}{}{}",
            decorations[rng.gen_range(0..decorations.len())],
            names[rng.gen_range(0..names.len())],
            if rng.gen_ratio(1, 8) { suffixes[rng.gen_range(1..3)] } else { suffixes[0] }
        );
        let agent = agents[rng.gen_range(0..agents.len())];
        let mut host = ToolHost {
            ws: &ws,
            memory: &mut memory,
            papers: &papers,
            clock: &clock,
            exec: ExecSettings {
                mandatory_dry_run: true,
                dry_run_timeout: Duration::from_secs(5),
                shell_timeout: Duration::from_secs(5),
                gpu: None,
            },
            cycle: 1,
            busy: None,
            next_experiment_id: 1,
            effects: Default::default(),
            trace: Vec::new(),
        };
        let r = host.execute(
            agent,
            &ToolCall {
                id: format!("w{i}"),
                name: "write_file".into(),
                arguments: json!({"path": path, "content": format!("overwrite {i}")}),
            },
        );
        let target = oracle_target(&root, &path);
        let violation = match &target {
            None => true,
            Some(rel) => protected.iter().any(|p| rel == Path::new(p)),
        };
        if violation {
            violations += 1;
            ensure!(
                r.content.starts_with("error: ProtectedFileViolation") || r.content.starts_with("error: PathEscape"),
                "{agent} write to {path:?} not refused: {}",
                r.content
            );
        }
    }
    for (f, b) in protected.iter().zip(&before) {
        ensure!(&fs::read(root.join(f)).unwrap() == b, "{f} changed");
    }
    let outer_after: BTreeSet<_> = fs::read_dir(outer.path()).unwrap().flatten().map(|e| e.file_name()).collect();
    ensure!(outer_before == outer_after, "files appeared outside the workspace");
    Ok(format!("1000 writes, {violations} violations all refused, protected files byte-identical"))
}

fn ac7() -> Outcome {
    // file dropped during a cooldown at a known simulated time
    let p = Project::new(|_| {});
    let ws = p.ws();
    p.clock.schedule_in(Duration::from_secs(150), move || {
        fs::write(ws.join("HUMAN_DIRECTIVE.md"), "Switch the optimizer to AdamW.\n").unwrap();
    });
    let fixture: String = (0..3).map(|i| leader_wait(&format!("w{i}"))).collect();
    let (mut e, log) = p.engine(&fixture);
    e.run(3).map_err(|e| e.to_string())?;
    let archive: Vec<String> = autolab::directives::archived(&p.ws());
    ensure!(archive == vec!["directive_20260407_090230.md".to_string()], "archive {archive:?}");
    let prompts: Vec<String> = log.requests().iter().map(|r| r.messages[0].content.clone()).collect();
    ensure!(prompts.len() == 3, "{} think calls", prompts.len());
    let has = |s: &String| s.contains("Switch the optimizer to AdamW.");
    ensure!(!has(&prompts[0]) && has(&prompts[1]) && !has(&prompts[2]), "directive seen in wrong cycles");
    ensure!(!p.ws().join("HUMAN_DIRECTIVE.md").exists(), "directive file still present");
    ensure!(e.state().directives_consumed == 1, "consumed {}", e.state().directives_consumed);
    drop(e);

    // file and CLI both pending: file first, CLI on the following cycle
    let q = Project::new(|_| {});
    fs::write(q.ws().join("HUMAN_DIRECTIVE.md"), "FROM FILE\n").unwrap();
    let fixture: String = (0..3).map(|i| leader_wait(&format!("w{i}"))).collect();
    let (mut e, log) = q.engine(&fixture);
    e.inject_cli_directive("FROM CLI").map_err(|e| e.to_string())?;
    e.run(3).map_err(|e| e.to_string())?;
    let prompts: Vec<String> = log.requests().iter().map(|r| r.messages[0].content.clone()).collect();
    ensure!(prompts[0].contains("FROM FILE") && !prompts[0].contains("FROM CLI"), "cycle 1 wrong directive");
    ensure!(prompts[1].contains("FROM CLI") && !prompts[1].contains("FROM FILE"), "cycle 2 wrong directive");
    ensure!(!prompts[2].contains("FROM"), "cycle 3 saw a directive again");
    ensure!(
        autolab::directives::archived(&q.ws()) == vec!["directive_20260407_090000.md".to_string()],
        "precedence archive {:?}",
        autolab::directives::archived(&q.ws())
    );
    Ok("consumed next cycle, archived as directive_20260407_090230.md, never re-read; file before CLI".into())
}

fn ac8() -> Outcome {
    let p = Project::new(|c| {
        c.agent.cooldown_interval = 300;
        c.monitor.poll_interval = 60;
    });
    let mut fixture: String = (0..6).map(|i| leader_wait(&format!("nothing new {i}"))).collect();
    fixture.push_str(&leader_dispatch("short run", "code_agent", "launch"));
    fixture.push_str(&code_launch("\"--steps\", \"2\""));
    fixture.push_str(&leader_reflect(Some("short run finished"), "continue"));
    fixture.push_str(&leader_wait("after the run"));
    let (mut e, _) = p.engine(&fixture);
    e.run(6).map_err(|e| e.to_string())?;
    let got: Vec<u64> = p.clock.sleeps().iter().map(|d| d.as_secs()).collect();
    ensure!(got == vec![300, 600, 1200, 1800, 1800, 1800], "cooldowns {got:?}");
    ensure!(e.state().burn_level == 6, "burn level {}", e.state().burn_level);
    e.run(8).map_err(|e| e.to_string())?;
    // cycle 7 reset the level to 0; the cycle 8 wait raised it to 1
    ensure!(e.state().burn_level == 1, "burn level {} after launch + wait", e.state().burn_level);
    let last = read_journal(&e.layout().journal).map_err(|e| e.to_string())?;
    let cd = last
        .iter()
        .rev()
        .find(|l| l.phase == Phase::Cooldown)
        .ok_or("no cooldown line")?;
    ensure!(cd.cycle == 8 && cd.summary.starts_with("300s"), "cycle 8 cooldown: {:?}", cd.summary);
    ensure!(p.clock.sleeps().last().map(|d| d.as_secs()) == Some(300), "last sleep not 300");
    ensure!(cooldown_secs(300, 0) == 300, "formula");
    Ok("300, 600, 1200, 1800, 1800, 1800 s; 300 s again after a launch cycle".into())
}

fn write_project(dir: &Path) -> PathBuf {
    let ws = dir.join("ws");
    fs::create_dir_all(&ws).unwrap();
    fs::write(ws.join("PROJECT_BRIEF.md"), "Raise CIFAR-100 accuracy.\n").unwrap();
    fs::write(ws.join("train.sh"), STUB_TRAINER).unwrap();
    let cfg = dir.join("autolab.yaml");
    fs::write(
        &cfg,
        "project: {name: ac9, brief: PROJECT_BRIEF.md, workspace: ws}\n\
         agent: {cooldown_interval: 1}\n\
         gpu: {auto_detect: false}\n\
         monitor: {poll_interval: 1, gpu_probe: []}\n\
         api: {enabled: false}\n",
    )
    .unwrap();
    cfg
}

fn load(ws: &Path) -> Option<LoopState> {
    serde_json::from_str(&fs::read_to_string(ws.join("state.json")).ok()?).ok()
}

fn ac9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = write_project(dir.path());
    let ws = dir.path().join("ws");
    let first = dir.path().join("first.yaml");
    fs::write(
        &first,
        [
            leader_dispatch("baseline", "code_agent", "launch"),
            code_launch("\"--steps\", \"8\", \"--interval\", \"1\""),
        ]
        .concat(),
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_autolab");
    let mut daemon = Command::new(bin)
        .args(["--config", cfg.to_str().unwrap(), "run", "--max-cycles", "1"])
        .env("AUTOLAB_MOCK_FIXTURE", &first)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let deadline = Instant::now() + Duration::from_secs(20);
    let at_kill = loop {
        if let Some(s) = load(&ws).filter(|s| s.phase == Phase::Monitor) {
            std::thread::sleep(Duration::from_millis(1500));
            break s;
        }
        ensure!(Instant::now() < deadline, "daemon never reached Monitor");
        std::thread::sleep(Duration::from_millis(50));
    };
    daemon.kill().map_err(|e| e.to_string())?;
    let _ = daemon.wait();
    let rec = at_kill.active_experiment.clone().ok_or("no active experiment persisted")?;
    let pid = rec.pid.ok_or("no pid")?;
    ensure!(
        autolab::monitor::check_liveness(pid, rec.start_time),
        "training died with the daemon"
    );
    let persisted = load(&ws).ok_or("state unreadable after kill")?;

    // only the reflect reply exists; it must see the finished log
    let second = dir.path().join("second.yaml");
    fs::write(
        &second,
        format!(
            "- system_contains: \"{LEADER}\"\n  expect: \"training complete\"\n  reply: |\n    milestone: resumed run finished\n    decision: keep the schedule\n"
        ),
    )
    .unwrap();
    let out = Command::new(bin)
        .args(["--config", cfg.to_str().unwrap(), "run", "--max-cycles", "1"])
        .env("AUTOLAB_MOCK_FIXTURE", &second)
        .env("RUST_LOG", "info")
        .output()
        .map_err(|e| e.to_string())?;
    let log = String::from_utf8_lossy(&out.stderr);
    ensure!(out.status.success(), "restart failed: {log}");
    ensure!(
        log.contains(&format!("pid Some({pid})")) && log.contains("resuming monitor"),
        "did not re-adopt pid {pid}: {log}"
    );
    let fin = load(&ws).ok_or("no final state")?;
    ensure!(fin.cycle == 1 && fin.phase == Phase::Idle, "cycle {} phase {:?}", fin.cycle, fin.phase);
    for ph in [LedgerPhase::Think, LedgerPhase::Execute, LedgerPhase::Monitor] {
        ensure!(
            fin.ledger.phase(ph) == persisted.ledger.phase(ph),
            "{} row changed across restart",
            ph.label()
        );
    }
    let reflect = fin.ledger.phase(LedgerPhase::Reflect).calls - persisted.ledger.phase(LedgerPhase::Reflect).calls;
    ensure!(reflect == 1, "{reflect} reflect calls");
    ensure!(fin.ledger.total_calls() == persisted.ledger.total_calls() + 1, "extra LLM calls");
    let record: ExperimentRecord =
        serde_json::from_str(&fs::read_to_string(ws.join("runs/exp001/record.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure!(record.pid == Some(pid), "record pid {:?}", record.pid);
    ensure!(record.exit_class == Some(ExitClass::ExitedOk), "exit class {:?}", record.exit_class);
    let lines = read_journal(&ws.join("cycles.log")).map_err(|e| e.to_string())?;
    let reflects = lines.iter().filter(|l| l.phase == Phase::Reflect).count();
    ensure!(reflects == 1, "{reflects} reflect phases journaled");
    ensure!(invalid_cycles(&lines).is_empty(), "journal phase order broken");
    Ok(format!("pid {pid} re-adopted in Monitor, 0 calls until exit, 1 Reflect, other ledger rows identical"))
}

fn ac10() -> Outcome {
    let t = Instant::now();
    let p = Project::new(|c| c.monitor.poll_interval = 60);
    let fixture = [
        leader_wait("waiting for the data pipeline fix"),
        leader_dispatch("baseline run", "code_agent", "launch the baseline"),
        code_launch("\"--steps\", \"3\""),
        leader_reflect(Some("baseline exp001 acc 85.00 after 3 steps"), "next: cosine schedule"),
        leader_dispatch("cosine schedule", "code_agent", "launch with the new augmentation"),
        code_launch("\"--broken-import\""),
        leader_reflect(None, "fix the augmentation import before relaunching"),
    ]
    .concat();
    let (mut e, log) = p.engine(&fixture);
    e.run(3).map_err(|e| e.to_string())?;
    let st: LoopState = serde_json::from_str(&fs::read_to_string(p.ws().join("state.json")).unwrap()).unwrap();
    ensure!(st.cycle == 3, "cycle {}", st.cycle);
    ensure!(log.len() == 9, "{} LLM requests", log.len());
    let mem = fs::read_to_string(p.ws().join("MEMORY_LOG.md")).unwrap();
    let parsed = MemoryLog::parse(&mem, LogCaps::default());
    let k = parsed.log.key_results().len();
    let d: Vec<String> = parsed.log.recent_decisions().map(|e| e.text().to_string()).collect();
    ensure!(k == 1, "{k} milestones");
    ensure!(d.len() == 3, "{} decisions: {d:?}", d.len());
    ensure!(d[0].starts_with("wait: waiting for the data pipeline fix"), "wait rationale missing: {d:?}");
    ensure!(st.dry_runs.caught == 1, "dry-run failure not recorded");
    let lines = read_journal(&p.ws().join("cycles.log")).map_err(|e| e.to_string())?;
    let per = phases_by_cycle(&lines);
    ensure!(per.len() == 3, "{} cycles journaled", per.len());
    for (c, phases) in &per {
        ensure!(is_valid_cycle_phases(phases), "cycle {c}: {phases:?}");
    }
    ensure!(t.elapsed() < Duration::from_secs(30), "took {:?}", t.elapsed());
    Ok("cycle 3, 1 milestone, 3 decisions (wait rationale first), journal phase order valid".into())
}
