use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use matcontrib_api::{router, ApiKeys, Service};
use matcontrib_core::builder::HttpPlotPublisher;
use matcontrib_core::refs::{HttpCitationSource, Resolver, DEFAULT_DOI_RESOLVER};
use matcontrib_core::store::Store;

#[derive(Parser)]
#[command(name = "matcontrib-server", about = "Material contribution service")]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "MATCONTRIB_BIND", default_value = "127.0.0.1:8080")]
    bind: String,
    /// Directory holding the record store.
    #[arg(long, env = "MATCONTRIB_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// File of `key = project` lines.
    #[arg(long, env = "MATCONTRIB_KEY_FILE")]
    key_file: PathBuf,
    /// Base URL for DOI lookups.
    #[arg(long, env = "MATCONTRIB_DOI_RESOLVER", default_value = DEFAULT_DOI_RESOLVER)]
    doi_resolver: String,
    /// Never contact a DOI resolver.
    #[arg(long)]
    offline: bool,
    /// Endpoint that accepts rendered plots and answers with a URL.
    #[arg(long, env = "MATCONTRIB_PLOT_SERVICE")]
    plot_service: Option<String>,
}

fn setup(args: &Args) -> Result<Service, String> {
    let keys = ApiKeys::load(&args.key_file).map_err(|e| e.to_string())?;
    if keys.is_empty() {
        eprintln!("warning: {} lists no API keys; the service is read-only", args.key_file.display());
    }
    let store = Store::open(&args.data_dir).map_err(|e| e.to_string())?;
    let mut service = Service::new(store, keys);
    if !args.offline {
        let source = HttpCitationSource::new(&args.doi_resolver).map_err(|e| e.to_string())?;
        service = service.with_resolver(Resolver::online(Arc::new(source)));
    }
    if let Some(endpoint) = &args.plot_service {
        let publisher = HttpPlotPublisher::new(endpoint).map_err(|e| e.to_string())?;
        service = service.with_publisher(Box::new(publisher));
    }
    Ok(service)
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let service = match setup(&args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let listener = match tokio::net::TcpListener::bind(&args.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.bind);
            return ExitCode::FAILURE;
        }
    };
    eprintln!("listening on http://{}", args.bind);
    let served = axum::serve(listener, router(Arc::new(service)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    match served {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
