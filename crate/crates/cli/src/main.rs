use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use scm_forge_client::{Client, Registration, DEFAULT_URL};
use scm_forge_core::job::{JobAction, JobRequest};
use scm_forge_core::repo::{DirRepository, MemoryRepository, PayloadSource};
use scm_forge_core::scm::AppDescriptor;
use scm_forge_core::NodeUri;
use scm_forge_server::{router, ApiConfig, Service, ServiceConfig};
use scm_forge_transport::{Fleet, LinkConfig, DEFAULT_SERVER_ID};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "scm-forge",
    version,
    about = "OMA-DM software component deployment server and client"
)]
struct Cli {
    /// Admin API base URL.
    #[arg(long, global = true, env = "SCM_FORGE_URL", default_value = DEFAULT_URL)]
    server: String,
    /// Operator token for the admin API.
    #[arg(long, global = true, env = "SCM_ADMIN_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the management server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8640")]
        listen: SocketAddr,
        #[arg(long)]
        state_dir: PathBuf,
        /// Start a simulated fleet of N devices when the state dir is empty.
        #[arg(long)]
        fleet: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory of payloads reachable as sim://repo/<file>.
        #[arg(long)]
        repo: Option<PathBuf>,
        /// Built console bundle served at /console.
        #[arg(long)]
        console: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_SERVER_ID)]
        server_id: String,
    },
    /// Submit a deployment job and wait for it.
    Job {
        action: Action,
        /// Comma-separated device ids.
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<String>,
        #[arg(long)]
        app: Option<String>,
        #[arg(long)]
        payload: Option<PathBuf>,
        /// JSON app descriptor; derived from the payload when absent.
        #[arg(long)]
        descriptor: Option<PathBuf>,
        /// Version for a derived descriptor.
        #[arg(long, default_value = "1.0")]
        version: String,
        /// Node for get-node.
        #[arg(long)]
        uri: Option<String>,
        /// Print the job id and return without waiting.
        #[arg(long)]
        no_wait: bool,
    },
    /// List registered devices.
    Devices,
    /// Register a device: simulated by the server, or a TCP agent with --addr.
    Register {
        device_id: String,
        #[arg(long)]
        secret: String,
        #[arg(long)]
        addr: Option<SocketAddr>,
    },
    /// Show a device's cached inventory.
    Inventory { device_id: String },
    /// List recorded sessions.
    Sessions {
        #[arg(long)]
        device: Option<String>,
    },
    /// Print a session transcript as JSON lines.
    Transcript { session_id: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Action {
    Deliver,
    Install,
    Activate,
    Deactivate,
    Remove,
    Update,
    RegisterDownload,
    StartDownload,
    Inventory,
    GetNode,
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let client = Client::new(&cli.server).with_token(cli.token.clone());
    match cli.command {
        Command::Serve {
            listen,
            state_dir,
            fleet,
            seed,
            repo,
            console,
            server_id,
        } => serve(listen, state_dir, fleet, seed, repo, console, server_id, cli.token).await,
        Command::Job {
            action,
            targets,
            app,
            payload,
            descriptor,
            version,
            uri,
            no_wait,
        } => {
            let action = build_action(action, app, payload.as_deref(), descriptor.as_deref(), &version, uri)?;
            let id = client.submit_job(&JobRequest { targets, action }).await?;
            if no_wait {
                println!("{id}");
                return Ok(());
            }
            let job = client
                .wait_job(&id, Duration::from_millis(200), Duration::from_secs(600))
                .await?;
            println!("{}", serde_json::to_string_pretty(&job)?);
            Ok(())
        }
        Command::Devices => {
            for d in client.devices().await? {
                let apps = d
                    .inventory
                    .map(|c| c.value.len())
                    .map_or("-".to_string(), |n| n.to_string());
                let seen = d.last_seen.unwrap_or_else(|| "never".into());
                println!(
                    "{:<16} {:<24} apps={:<3} last_seen={seen}",
                    d.device_id, d.address, apps
                );
            }
            Ok(())
        }
        Command::Register {
            device_id,
            secret,
            addr,
        } => {
            let address = addr.map(|a| serde_json::json!({"kind": "tcp", "addr": a}));
            let d = client
                .register(&Registration {
                    device_id,
                    secret,
                    auth_name: None,
                    address,
                })
                .await?;
            println!("{}", serde_json::to_string_pretty(&d)?);
            Ok(())
        }
        Command::Inventory { device_id } => {
            println!(
                "{}",
                serde_json::to_string_pretty(&client.inventory(&device_id).await?)?
            );
            Ok(())
        }
        Command::Sessions { device } => {
            for s in client.sessions(device.as_deref()).await? {
                println!("{:<24} packages={:<3} {}", s.session_id, s.packages, s.outcome);
            }
            Ok(())
        }
        Command::Transcript { session_id } => {
            print!("{}", client.transcript(&session_id).await?);
            Ok(())
        }
    }
}

fn build_action(
    action: Action,
    app: Option<String>,
    payload: Option<&Path>,
    descriptor: Option<&Path>,
    version: &str,
    uri: Option<String>,
) -> Result<JobAction> {
    let app_id = || app.clone().context("this action needs --app");
    let read_payload = || -> Result<Vec<u8>> {
        let p = payload.context("this action needs --payload")?;
        std::fs::read(p).with_context(|| format!("reading {}", p.display()))
    };
    let descriptor_for = |bytes: &[u8]| -> Result<AppDescriptor> {
        match descriptor {
            Some(p) => {
                let text = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_slice(&text).with_context(|| format!("parsing {}", p.display()))
            }
            None => {
                let id = app_id()?;
                Ok(AppDescriptor::for_payload(
                    &id,
                    &id,
                    version,
                    "unknown",
                    "application/octet-stream",
                    bytes,
                ))
            }
        }
    };
    Ok(match action {
        Action::Deliver => {
            let payload = read_payload()?;
            JobAction::Deliver {
                descriptor: descriptor_for(&payload)?,
                payload,
            }
        }
        Action::Update => {
            let payload = read_payload()?;
            JobAction::Update {
                app_id: app_id()?,
                descriptor: descriptor_for(&payload)?,
                payload,
            }
        }
        Action::RegisterDownload => {
            let bytes = read_payload()?;
            let mut d = descriptor_for(&bytes)?;
            if d.source_uri.is_none() {
                let name = payload
                    .and_then(|p| p.file_name())
                    .and_then(|n| n.to_str())
                    .context("payload file name")?;
                d = d.with_source(MemoryRepository::uri_for(name));
            }
            JobAction::RegisterDownload { descriptor: d }
        }
        Action::Install => JobAction::Install { app_id: app_id()? },
        Action::Activate => JobAction::Activate { app_id: app_id()? },
        Action::Deactivate => JobAction::Deactivate { app_id: app_id()? },
        Action::Remove => JobAction::Remove { app_id: app_id()? },
        Action::StartDownload => JobAction::StartDownload { app_id: app_id()? },
        Action::Inventory => JobAction::Inventory,
        Action::GetNode => {
            let Some(uri) = uri else { bail!("get-node needs --uri") };
            JobAction::GetNode {
                uri: NodeUri::parse(&uri).with_context(|| format!("bad uri {uri:?}"))?,
            }
        }
    })
}

#[allow(clippy::too_many_arguments)]
async fn serve(
    listen: SocketAddr,
    state_dir: PathBuf,
    fleet: Option<usize>,
    seed: u64,
    repo: Option<PathBuf>,
    console: Option<PathBuf>,
    server_id: String,
    token: Option<String>,
) -> Result<()> {
    let repo: Arc<dyn PayloadSource> = match repo {
        Some(dir) => Arc::new(DirRepository::new(dir)),
        None => Arc::new(MemoryRepository::new()),
    };
    let config = ServiceConfig {
        server_id: server_id.clone(),
        link: LinkConfig::from_env(),
        state_dir: Some(state_dir.clone()),
        repo: repo.clone(),
    };
    let service = Service::open(config).with_context(|| format!("restoring {}", state_dir.display()))?;
    if let Some(n) = fleet {
        if service.devices().is_empty() {
            let fleet = Fleet::spawn_for(n, seed, &server_id)?;
            for d in fleet.devices() {
                let mut device = d.device.lock().await;
                *device = device.clone().with_repo(repo.clone());
            }
            service.attach(&fleet).await?;
            tracing::info!(devices = n, seed, "simulated fleet attached");
        } else {
            tracing::info!("state restored; --fleet ignored");
        }
    }
    let api = ApiConfig {
        admin_token: token.filter(|t| !t.is_empty()),
        console_dir: console,
    };
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .with_context(|| format!("binding {listen}"))?;
    tracing::info!(addr = %listener.local_addr()?, "serving admin API");
    axum::serve(listener, router(service, api))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
