use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use autolab::agents::OfflineCorpus;
use autolab::api::{ApiContext, ApiServer, TOKEN_ENV};
use autolab::clock::SystemClock;
use autolab::config_file::{load_config, LoadedConfig, ProjectLayout};
use autolab::control::Hub;
use autolab::directives::{submit_file, InboxError};
use autolab::engine::journal::journal_tail;
use autolab::engine::persist::load_state;
use autolab::engine::{Engine, EngineDeps};
use autolab::llm::backend_from_env;
use autolab::memory_store::load_memory;
use autolab_core::backoff::cooldown_secs;
use autolab_core::cost::{cost_report, CostScenario, Pricing};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "autolab", version, about = "Autonomous experiment loop for deep-learning research")]
struct Cli {
    /// Project config file.
    #[arg(short, long, global = true, default_value = "autolab.yaml")]
    config: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the loop in the foreground.
    Run {
        /// One-time directive for the first cycle.
        #[arg(long)]
        directive: Option<String>,
        /// Stop once this many cycles exist in total (-1: no limit).
        #[arg(long, allow_negative_numbers = true)]
        max_cycles: Option<i64>,
        /// Do not start the HTTP API even if enabled in the config.
        #[arg(long)]
        no_api: bool,
    },
    /// Print loop state from the files on disk.
    Status {
        #[arg(long)]
        json: bool,
    },
    /// Leave a directive for the next cycle.
    Directive { text: String },
    /// Pause a running daemon at the next phase boundary.
    Pause,
    Resume,
    /// Stop a running daemon; training keeps running unless --kill-active.
    Stop {
        #[arg(long)]
        kill_active: bool,
    },
    /// Measured LLM cost against a conventional polling agent.
    ReportCost {
        /// Skip the measured ledger; print the analytic model only.
        #[arg(long)]
        analytic_only: bool,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long)]
        training_hours: Option<f64>,
        #[arg(long)]
        poll_interval_minutes: Option<f64>,
        #[arg(long)]
        tokens_per_poll: Option<u64>,
        #[arg(long)]
        idle_hours: Option<f64>,
        #[arg(long)]
        idle_poll_interval_minutes: Option<f64>,
    },
    /// Check the config and report unknown keys.
    ValidateConfig,
}

static SIGNALLED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    SIGNALLED.store(true, Ordering::SeqCst);
}

fn install_signal_watch(hub: Arc<Hub>) {
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_signal as *const () as libc::sighandler_t);
    }
    std::thread::spawn(move || loop {
        if SIGNALLED.load(Ordering::SeqCst) {
            log::info!("signal received; stopping at the next safe point");
            hub.control.stop(false);
            return;
        }
        std::thread::sleep(Duration::from_millis(200));
    });
}

struct Failure {
    code: u8,
    msg: String,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        msg: msg.to_string(),
    }
}

fn config(path: &Path) -> Result<LoadedConfig, Failure> {
    load_config(path).map_err(|e| fail(2, e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("autolab: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Run {
            directive,
            max_cycles,
            no_api,
        } => run(&cli.config, directive, max_cycles, no_api),
        Cmd::Status { json } => status(&cli.config, json),
        Cmd::Directive { text } => {
            let loaded = config(&cli.config)?;
            let layout = ProjectLayout::resolve(&loaded.config, &loaded.base_dir);
            match submit_file(&layout.workspace, &text) {
                Ok(p) => {
                    println!("directive queued in {}", p.display());
                    Ok(())
                }
                Err(e @ InboxError::Invalid(_)) => Err(fail(2, e)),
                Err(e) => Err(fail(1, e)),
            }
        }
        Cmd::Pause => control(&cli.config, "/pause", None),
        Cmd::Resume => control(&cli.config, "/resume", None),
        Cmd::Stop { kill_active } => control(
            &cli.config,
            "/stop",
            Some(serde_json::json!({"kill_active": kill_active})),
        ),
        Cmd::ReportCost {
            analytic_only,
            format,
            training_hours,
            poll_interval_minutes,
            tokens_per_poll,
            idle_hours,
            idle_poll_interval_minutes,
        } => {
            let mut sc = CostScenario::default();
            if let Some(v) = training_hours {
                sc.training_hours = v;
            }
            if let Some(v) = poll_interval_minutes {
                sc.llm_poll_interval_minutes = v;
            }
            if let Some(v) = tokens_per_poll {
                sc.tokens_per_poll_call = v;
            }
            if let Some(v) = idle_hours {
                sc.idle_hours = v;
            }
            if let Some(v) = idle_poll_interval_minutes {
                sc.idle_poll_interval_minutes = v;
            }
            report_cost(&cli.config, analytic_only, format, &sc)
        }
        Cmd::ValidateConfig => {
            let loaded = config(&cli.config)?;
            for k in &loaded.unknown_keys {
                println!("warning: unknown key `{k}`");
            }
            println!("{}: ok", cli.config.display());
            Ok(())
        }
    }
}

fn run(path: &Path, directive: Option<String>, max_cycles: Option<i64>, no_api: bool) -> Result<(), Failure> {
    let loaded = config(path)?;
    let cfg = loaded.config;
    let max = max_cycles.unwrap_or(cfg.agent.max_cycles);
    if max < -1 {
        return Err(fail(2, "--max-cycles must be -1 or a non-negative count"));
    }
    let backend = backend_from_env().map_err(|e| fail(2, e))?;
    let hub = Arc::new(Hub::new(&cfg.project.name));
    let deps = EngineDeps {
        clock: Arc::new(SystemClock),
        backend,
        papers: Box::new(OfflineCorpus::bundled()),
        hub: hub.clone(),
    };
    let api_cfg = cfg.api.clone();
    let mut engine = Engine::open(cfg, &loaded.base_dir, deps).map_err(|e| fail(1, e))?;
    if let Some(d) = directive {
        engine.inject_cli_directive(&d).map_err(|e| fail(2, e))?;
    }
    install_signal_watch(hub.clone());
    let _api = if api_cfg.enabled && !no_api {
        let ctx = ApiContext {
            hub: hub.clone(),
            workspace: engine.layout().workspace.clone(),
            journal: engine.layout().journal.clone(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        };
        Some(ApiServer::start(&api_cfg.bind, ctx).map_err(|e| fail(1, e))?)
    } else {
        None
    };
    let summary = engine.run(max).map_err(|e| fail(1, e))?;
    let st = engine.state();
    println!(
        "{} cycle(s) this run; now at cycle {}, burn level {}, {} LLM call(s), ${:.4}",
        summary.cycles_completed,
        st.cycle,
        st.burn_level,
        st.ledger.total_calls(),
        st.ledger.total().usd
    );
    Ok(())
}

fn status(path: &Path, json: bool) -> Result<(), Failure> {
    let loaded = config(path)?;
    let cfg = &loaded.config;
    let layout = ProjectLayout::resolve(cfg, &loaded.base_dir);
    let state = load_state(&layout.state).map_err(|e| fail(1, e))?;
    let memory = load_memory(&layout.memory_log, cfg.memory_caps()).map_err(|e| fail(1, e))?;
    let recent = journal_tail(&layout.journal, 10);
    let pending = autolab::directives::pending_file(&layout.workspace);
    if json {
        let v = serde_json::json!({
            "project": cfg.project.name,
            "state": state,
            "memory_log": memory.log.render(),
            "directive_pending": pending.is_some(),
            "recent_cycles": recent,
        });
        println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
        return Ok(());
    }
    println!("project: {}", cfg.project.name);
    match &state {
        None => println!("no state yet (the loop has not run)"),
        Some(s) => {
            println!("cycle {}  phase {}  burn level {}", s.cycle, s.phase.as_str(), s.burn_level);
            println!(
                "next cooldown {}s  paused {}",
                cooldown_secs(cfg.agent.cooldown_interval, s.burn_level),
                s.paused
            );
            if let Some(r) = &s.active_experiment {
                println!("active: exp{:03} pid {:?} log {}", r.id, r.pid, r.log_path);
            }
            let t = s.ledger.total();
            println!("llm calls {}  cost ${:.4}", t.calls, t.usd);
        }
    }
    println!(
        "memory log: {} chars, {} key results, {} decisions",
        memory.log.rendered_chars(),
        memory.log.key_results().len(),
        memory.log.recent_decisions().len()
    );
    if pending.is_some() {
        println!("directive pending");
    }
    if !recent.is_empty() {
        println!("recent:");
        for l in recent {
            println!("  {l}");
        }
    }
    Ok(())
}

fn control(path: &Path, route: &str, body: Option<serde_json::Value>) -> Result<(), Failure> {
    let loaded = config(path)?;
    let url = format!("http://{}{route}", loaded.config.api.bind);
    let mut req = ureq::post(&url).timeout(Duration::from_secs(10));
    if let Ok(t) = std::env::var(TOKEN_ENV) {
        req = req.set("Authorization", &format!("Bearer {t}"));
    }
    let res = match body {
        Some(b) => req.send_json(b),
        None => req.call(),
    };
    match res {
        Ok(r) => {
            println!("{}", r.into_string().unwrap_or_default().trim());
            Ok(())
        }
        Err(ureq::Error::Status(code, r)) => Err(fail(1, format!("HTTP {code}: {}", r.into_string().unwrap_or_default().trim()))),
        Err(e) => Err(fail(1, format!("no daemon reachable: {e}"))),
    }
}

fn report_cost(path: &Path, analytic_only: bool, format: Format, sc: &CostScenario) -> Result<(), Failure> {
    let (pricing, ledger) = if analytic_only {
        let pricing = load_config(path).map(|l| l.config.pricing).unwrap_or_else(|_| Pricing::default());
        (pricing, None)
    } else {
        let loaded = config(path)?;
        let layout = ProjectLayout::resolve(&loaded.config, &loaded.base_dir);
        let state = load_state(&layout.state).map_err(|e| fail(1, e))?;
        let Some(state) = state else {
            return Err(fail(
                1,
                format!(
                    "no ledger at {} (run the loop first, or pass --analytic-only)",
                    layout.state.display()
                ),
            ));
        };
        (loaded.config.pricing, Some(state.ledger))
    };
    let table = cost_report(ledger.as_ref(), sc, &pricing).map_err(|e| fail(2, e))?;
    match format {
        Format::Table => print!("{}", table.to_table()),
        Format::Csv => print!("{}", table.to_csv()),
    }
    Ok(())
}
