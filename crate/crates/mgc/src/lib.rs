//! `mgc`: validate MPFiles locally, submit them, inspect and delete
//! contributions, trigger rebuilds.
//!
//! Exit codes: 0 success, 1 remote or authentication failure, 2 invalid
//! input. Result lines on stdout are tab-separated; messages go to stderr.

pub mod client;
pub mod config;
pub mod embed;
pub mod view;

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use matcontrib_core::pipeline::{Cid, SizeCheck};
use matcontrib_core::store::atomic_write;
use matcontrib_core::submission::{prepare, PreparedDraft};

use crate::client::{Client, ClientError};
use crate::config::{resolve, Partial, Settings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REMOTE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

/// Project name used for offline checks when none is configured.
const LOCAL_PROJECT: &str = "local";

#[derive(Parser)]
#[command(name = "mgc", version, about = "Contribute MPFiles to a materials database")]
struct Cli {
    /// Base URL of the service.
    #[arg(long, global = true)]
    api_url: Option<String>,
    /// API key identifying your project.
    #[arg(long, global = true)]
    api_key: Option<String>,
    /// Project the key must belong to.
    #[arg(long, global = true)]
    project: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a file offline and summarize its contributions.
    Validate { file: PathBuf },
    /// Submit a file and write the assigned ids back into it.
    Submit {
        file: PathBuf,
        /// Only validate.
        #[arg(long)]
        dry_run: bool,
    },
    /// Show a contribution (by cid) or a material (by identifier).
    View { target: String },
    /// Delete one of your contributions.
    Delete {
        cid: String,
        /// Skip the confirmation prompt.
        #[arg(long, short)]
        yes: bool,
    },
    /// Rebuild one material, or all of them.
    Build {
        #[arg(long)]
        material: Option<String>,
    },
}

/// Everything the command reads from or writes to its surroundings.
pub struct Context<'a> {
    pub env: HashMap<String, String>,
    pub config_file: Option<PathBuf>,
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

impl Context<'_> {
    fn settings(&self, cli: &Cli) -> Settings {
        let file = self
            .config_file
            .as_ref()
            .and_then(|p| std::fs::read_to_string(p).ok());
        let flags = Partial {
            api_url: cli.api_url.clone(),
            api_key: cli.api_key.clone(),
            project: cli.project.clone(),
        };
        resolve(&flags, &self.env, file.as_deref())
    }

    fn fail(&mut self, code: i32, message: impl std::fmt::Display) -> i32 {
        let _ = writeln!(self.stderr, "error: {message}");
        code
    }
}

fn read_file(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn bytes(size: &SizeCheck) -> usize {
    match size {
        SizeCheck::Ok { bytes } | SizeCheck::Warning { bytes } => *bytes,
    }
}

fn summarize(ctx: &mut Context, prepared: &[PreparedDraft]) {
    for p in prepared {
        let _ = writeln!(
            ctx.stdout,
            "{}\t{}\ttables={}\tplots={}\tbytes={}",
            p.draft.title,
            p.draft.material.canonical_key(),
            p.draft.tables.len(),
            p.plots.len(),
            bytes(&p.size)
        );
        if let Some(w) = p.warning() {
            let _ = writeln!(ctx.stderr, "warning: {w}");
        }
    }
}

fn remote_code(e: &ClientError) -> i32 {
    if e.is_validation() {
        EXIT_INVALID
    } else {
        EXIT_REMOTE
    }
}

fn client(ctx: &mut Context, settings: &Settings, need_key: bool) -> Result<Client, i32> {
    if need_key && settings.api_key.is_none() {
        return Err(ctx.fail(
            EXIT_REMOTE,
            "no API key; pass --api-key, set MGC_API_KEY or add api_key to ~/.mgc.conf",
        ));
    }
    Client::new(&settings.api_url, settings.api_key.clone()).map_err(|e| ctx.fail(EXIT_REMOTE, e))
}

fn validate(ctx: &mut Context, settings: &Settings, file: &Path) -> i32 {
    let text = match read_file(file) {
        Ok(t) => t,
        Err(e) => return ctx.fail(EXIT_INVALID, e),
    };
    let project = settings.project.as_deref().unwrap_or(LOCAL_PROJECT);
    match prepare(&text, project) {
        Ok(prepared) => {
            summarize(ctx, &prepared);
            EXIT_OK
        }
        Err(e) => ctx.fail(EXIT_INVALID, e),
    }
}

fn submit(ctx: &mut Context, settings: &Settings, file: &Path, dry_run: bool) -> i32 {
    if dry_run {
        return validate(ctx, settings, file);
    }
    let text = match read_file(file) {
        Ok(t) => t,
        Err(e) => return ctx.fail(EXIT_INVALID, e),
    };
    let project = settings.project.as_deref().unwrap_or(LOCAL_PROJECT);
    if let Err(e) = prepare(&text, project) {
        return ctx.fail(EXIT_INVALID, e);
    }
    let client = match client(ctx, settings, true) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let items = match client.submit(&text, settings.project.as_deref()) {
        Ok(items) => items,
        Err(e) => return ctx.fail(remote_code(&e), e),
    };
    let cids: Vec<Cid> = items.iter().map(|i| i.cid.clone()).collect();
    let rewritten = match embed::embed_cids(&text, &cids) {
        Ok(t) => t,
        Err(e) => return ctx.fail(EXIT_REMOTE, format!("submitted, but cannot record ids: {e}")),
    };
    if rewritten != text {
        if let Err(e) = atomic_write(file, rewritten.as_bytes()) {
            return ctx.fail(EXIT_REMOTE, format!("submitted, but cannot rewrite {}: {e}", file.display()));
        }
    }
    for item in &items {
        let _ = writeln!(ctx.stdout, "{}\t{}\t{}", item.cid.display(), item.material, item.action);
        for w in &item.warnings {
            let _ = writeln!(ctx.stderr, "warning: {w}");
        }
    }
    EXIT_OK
}

fn view(ctx: &mut Context, settings: &Settings, target: &str) -> i32 {
    let client = match client(ctx, settings, false) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let shown = match Cid::parse(target) {
        Some(cid) => client.contribution(cid.as_str()).map(|c| view::contribution(&c)),
        None => client.material(target).map(|d| view::material(&d)),
    };
    match shown {
        Ok(text) => {
            let _ = write!(ctx.stdout, "{text}");
            EXIT_OK
        }
        Err(e) => ctx.fail(EXIT_REMOTE, e),
    }
}

fn delete(ctx: &mut Context, settings: &Settings, cid: &str, yes: bool) -> i32 {
    let client = match client(ctx, settings, true) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if !yes {
        let _ = write!(ctx.stderr, "delete contribution {cid}? [y/N] ");
        let _ = ctx.stderr.flush();
        let mut answer = String::new();
        let _ = ctx.stdin.read_line(&mut answer);
        if !matches!(answer.trim(), "y" | "Y" | "yes") {
            let _ = writeln!(ctx.stderr, "aborted");
            return EXIT_OK;
        }
    }
    match client.delete(cid) {
        Ok(item) => {
            let _ = writeln!(ctx.stdout, "{}\t{}\t{}", item.cid.display(), item.material, item.action);
            EXIT_OK
        }
        Err(e) => ctx.fail(EXIT_REMOTE, e),
    }
}

fn build(ctx: &mut Context, settings: &Settings, material: Option<&str>) -> i32 {
    let client = match client(ctx, settings, true) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match client.build(material) {
        Ok(n) => {
            let plural = if n == 1 { "" } else { "s" };
            let _ = writeln!(ctx.stdout, "rebuilt {n} material{plural}");
            EXIT_OK
        }
        Err(e) => ctx.fail(EXIT_REMOTE, e),
    }
}

pub fn run<I, T>(args: I, ctx: &mut Context) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(ctx.stderr, "{rendered}");
                return EXIT_INVALID;
            }
            let _ = write!(ctx.stdout, "{rendered}");
            return EXIT_OK;
        }
    };
    let settings = ctx.settings(&cli);
    match &cli.command {
        Command::Validate { file } => validate(ctx, &settings, file),
        Command::Submit { file, dry_run } => submit(ctx, &settings, file, *dry_run),
        Command::View { target } => view(ctx, &settings, target),
        Command::Delete { cid, yes } => delete(ctx, &settings, cid, *yes),
        Command::Build { material } => build(ctx, &settings, material.as_deref()),
    }
}
