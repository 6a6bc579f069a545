//! Builds a snapshot, serves it on a local port and fetches a few endpoints.
//! Pass `--keep` to leave the server running.

use std::time::Duration;

use s3monitor::api::{self, AppState};
use s3monitor::fixture::{Fixture, FixtureConfig};
use s3monitor::pipeline::{Pipeline, SNAPSHOT_FILE};
use std::io::{Read, Write};

fn get(addr: std::net::SocketAddr, path: &str) -> std::io::Result<String> {
    let mut stream = std::net::TcpStream::connect(addr)?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n")?;
    let mut out = String::new();
    stream.read_to_string(&mut out)?;
    Ok(out)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let keep = std::env::args().any(|a| a == "--keep");
    let dir = tempfile::tempdir()?;
    let paths = Fixture::generate(&FixtureConfig::default()).write(dir.path())?;
    let pipeline = Pipeline::from_path(&paths.config)?;
    tokio::task::block_in_place(|| pipeline.all())?;

    let snapshot = pipeline.run_dir.join(SNAPSHOT_FILE);
    let state = AppState::new(api::load_index(&snapshot)?);
    api::spawn_reloader(state.clone(), snapshot, Duration::from_secs(5));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let app = api::router(state, &["http://localhost:5173".to_string()]);
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    println!("listening on http://{addr}\n");

    for path in [
        "/api/meta",
        "/api/projects?area=HEALTH&type=university&limit=2",
        "/api/network?year=2020",
        "/api/projects?limit=ten",
        "/api/export/projects.csv?sdg=7",
    ] {
        let resp = tokio::task::spawn_blocking(move || get(addr, path)).await??;
        let (head, body) = resp.split_once("\r\n\r\n").unwrap_or((&resp, ""));
        let status = head.lines().next().unwrap_or_default();
        let preview: String = body.chars().take(160).collect();
        println!("GET {path}\n  {status}\n  {preview}...\n");
    }

    if keep {
        println!("serving until ctrl-c");
        tokio::signal::ctrl_c().await?;
    }
    server.abort();
    Ok(())
}
