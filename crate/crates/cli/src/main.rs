use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use wgpairs_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!(
                "{}",
                json!({ "error": "threads", "message": e.to_string() })
            );
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(o) => {
            // A closed pipe on stdout is not an error of the run.
            let mut stdout = std::io::stdout().lock();
            for l in &o.lines {
                let _ = writeln!(stdout, "{l}");
            }
            if let Some(m) = &o.manifest {
                let _ = writeln!(stdout, "manifest: {}", m.display());
            }
            if o.exit != 0 {
                eprintln!(
                    "{}",
                    json!({ "error": "acceptance", "command": o.command, "detail": o.summary })
                );
            }
            ExitCode::from(o.exit)
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
