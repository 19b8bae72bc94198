use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use mgc::config::CONFIG_FILE;
use mgc::{run, Context};

fn main() -> ExitCode {
    let env: std::collections::HashMap<String, String> = std::env::vars().collect();
    let config_file = env.get("HOME").map(|h| PathBuf::from(h).join(CONFIG_FILE));
    let stdin = io::stdin();
    let mut stdin = stdin.lock();
    let mut stdout = io::stdout();
    let mut stderr = io::stderr();
    let mut ctx = Context {
        env,
        config_file,
        stdin: &mut stdin,
        stdout: &mut stdout,
        stderr: &mut stderr,
    };
    let code = run(std::env::args_os(), &mut ctx);
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}
