// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edgeds_core::clock;
use edgeds_core::config::DeploymentConfig;
use edgeds_core::connector::parse_rules;
use edgeds_core::harness::inproc::{InProcessDeployment, LocalHostApi};
use edgeds_core::harness::load::{run_load_test, LoadTestConfig};
use edgeds_core::harness::report::{emit_report, ReportFormat};
use edgeds_core::harness::scenario::{run_scenario, CaseId, Mode, ScenarioContext, ScenarioSpec};
use edgeds_core::harness::sweep::{medians, run_size_sweep};
use edgeds_core::harness::HostApi;
use edgeds_core::host::MecHost;
use edgeds_core::ids::ParticipantId;
use edgeds_node::client::{HttpHostApi, HttpNetwork};

#[derive(Parser)]
#[command(name = "edgeds", version, about = "Edge data-sovereignty hosts and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve one or all hosts of a deployment over HTTP.
    Boot {
        #[arg(long)]
        config: PathBuf,
        /// Only boot this host id.
        #[arg(long)]
        host: Option<String>,
    },
    /// Run one exchange topology and report its phase timings.
    Scenario {
        #[arg(long)]
        case: CaseId,
        /// Payload size in bytes.
        #[arg(long)]
        size: usize,
        /// Rule list such as `provide` or `ntimes:3,interval:<start>/<end>`.
        #[arg(long, default_value = "provide")]
        rules: String,
        #[arg(long, default_value = "ids")]
        mode: Mode,
        /// Succeed only if the run fails with this error code.
        #[arg(long)]
        expect_failure: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        target: Target,
    },
    /// Sweep payload sizes for connector-mediated and direct exchange.
    Sweep {
        /// Sizes in MB.
        #[arg(long, value_delimiter = ',', default_value = "1,8,32,64")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "ids,direct")]
        modes: Vec<Mode>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Also run 150 MB.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
        #[command(flatten)]
        target: Target,
    },
    /// Concurrent fetches against one provider, with or without autoscaling.
    Loadtest {
        #[arg(long, default_value_t = 32)]
        concurrency: usize,
        #[arg(long)]
        autoscale: bool,
        #[arg(long, default_value_t = 40)]
        requests: usize,
        #[arg(long, default_value = "load.json")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Target {
    /// Deployment config; a built-in two-host layout when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Addresses of running hosts, provider host first. Runs in-process when omitted.
    #[arg(long, value_delimiter = ',')]
    remote: Vec<String>,
}

/// Hosts a harness command drives, either in this process or over HTTP.
enum Hosts {
    Local(Vec<LocalHostApi>),
    Remote(Vec<HttpHostApi>),
}

impl Hosts {
    fn apis(&self) -> Vec<&dyn HostApi> {
        match self {
            Hosts::Local(apis) => apis.iter().map(|a| a as &dyn HostApi).collect(),
            Hosts::Remote(apis) => apis.iter().map(|a| a as &dyn HostApi).collect(),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<DeploymentConfig, String> {
    match path {
        Some(p) => DeploymentConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(DeploymentConfig::two_host_default()),
    }
}

fn connect(target: &Target) -> Result<(Hosts, ParticipantId, String), String> {
    let cfg = load_config(target.config.as_deref())?;
    let (participant, credential) = cfg
        .hosts
        .first()
        .and_then(|h| h.external_participants.first())
        .map(|p| (p.participant_id.clone(), p.credential.clone()))
        .unwrap_or_else(|| (ParticipantId::new("external"), String::new()));
    let hosts = if target.remote.is_empty() {
        let dep = InProcessDeployment::boot(&cfg, clock::system()).map_err(|e| e.to_string())?;
        Hosts::Local((0..dep.hosts().len()).map(|i| dep.api(i)).collect())
    } else {
        let apis = target
            .remote
            .iter()
            .map(|a| HttpHostApi::connect(a).map_err(|e| format!("{a}: {}", e.message)))
            .collect::<Result<_, _>>()?;
        Hosts::Remote(apis)
    };
    Ok((hosts, participant, credential))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    std::fs::write(path, text).map_err(|e| format!("writing {}: {e}", path.display()))
}

fn boot(config: &Path, only: Option<&str>) -> Result<(), String> {
    let cfg = DeploymentConfig::load(config).map_err(|e| e.to_string())?;
    let ids: Vec<String> = match only {
        Some(h) => vec![h.to_owned()],
        None => cfg.hosts.iter().map(|h| h.host_id.to_string()).collect(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let net = HttpNetwork::new();
        let mut tasks = tokio::task::JoinSet::new();
        let mut hosts = Vec::new();
        for id in &ids {
            let host_cfg = cfg.host(id).ok_or_else(|| format!("unknown host {id}"))?;
            let listener = tokio::net::TcpListener::bind(&host_cfg.address)
                .await
                .map_err(|e| format!("binding {}: {e}", host_cfg.address))?;
            let host = MecHost::boot(&cfg, id, net.wiring(clock::system())).map_err(|e| e.to_string())?;
            host.spawn_autoscaler();
            tasks.spawn(edgeds_node::server::serve(host.clone(), listener));
            hosts.push(host);
        }
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {
                log::info!("shutting down");
                Ok(())
            }
            Some(res) = tasks.join_next() => match res {
                Ok(Ok(())) => Ok(()),
                Ok(Err(e)) => Err(format!("server stopped: {e}")),
                Err(e) => Err(format!("server task failed: {e}")),
            },
        }
    })
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Boot { config, host } => boot(&config, host.as_deref()),
        Command::Scenario { case, size, rules, mode, expect_failure, out, target } => {
            let (hosts, participant, credential) = connect(&target)?;
            let ctx = ScenarioContext::new(hosts.apis(), participant, credential);
            let spec = ScenarioSpec { rules: parse_rules(&rules)?, mode, ..ScenarioSpec::new(case, size) };
            let outcome = run_scenario(&ctx, &spec);
            println!("{}", serde_json::to_string_pretty(&outcome).map_err(|e| e.to_string())?);
            // JSON keeps the itemized prepare steps; CSV has the report columns only.
            match out {
                Some(path) if ReportFormat::for_path(&path) == ReportFormat::Json => write_json(&path, &outcome)?,
                Some(path) => emit_report(std::slice::from_ref(&outcome.timings), ReportFormat::Csv, &path)
                    .map_err(|e| e.to_string())?,
                None => {}
            }
            match (expect_failure, outcome.error_code()) {
                (None, None) => Ok(()),
                (None, Some(code)) => Err(format!("scenario failed: {code}")),
                (Some(want), Some(got)) if want == got => Ok(()),
                (Some(want), got) => Err(format!("expected failure {want}, got {}", got.unwrap_or("PASS"))),
            }
        }
        Command::Sweep { mut sizes, modes, repeats, full, out, target } => {
            if full && !sizes.contains(&150) {
                sizes.push(150);
            }
            let (hosts, participant, credential) = connect(&target)?;
            let ctx = ScenarioContext::new(hosts.apis(), participant, credential);
            let rows = run_size_sweep(&ctx, &sizes, &modes, repeats, 1).map_err(|e| format!("{}: {}", e.code, e.message))?;
            emit_report(&rows, ReportFormat::for_path(&out), &out).map_err(|e| e.to_string())?;
            for m in medians(&rows) {
                println!("{m:?}");
            }
            Ok(())
        }
        Command::Loadtest { concurrency, autoscale, requests, out } => {
            let cfg = LoadTestConfig { concurrency, requests_per_client: requests, autoscale, ..LoadTestConfig::default() };
            let report = run_load_test(&cfg).map_err(|e| format!("{}: {}", e.code, e.message))?;
            println!(
                "p50 {:.3}s p95 {:.3}s max {:.3}s, peak replicas {}",
                report.p50_s,
                report.p95_s,
                report.max_s,
                report.replica_trajectory.iter().max().copied().unwrap_or(0)
            );
            write_json(&out, &report)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
