use std::io::{BufRead, IsTerminal, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ffibridge::SearchPath;
use ffibridge_cli::demo::{self, FftOptions};
use ffibridge_cli::{Session, SessionError, EXIT_ENVIRONMENT, EXIT_SCRIPT};

#[derive(Parser)]
#[command(name = "ffibridge", version, about = "Call C libraries from scripts")]
struct Cli {
    /// Directory searched for libraries before FFI_LIBRARY_PATH.
    #[arg(long, global = true, value_name = "DIR")]
    lib_path: Vec<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a script file (`-` reads standard input).
    Run { script: PathBuf },
    /// Check a script without executing it.
    Check { script: PathBuf },
    /// Read statements interactively.
    Repl,
    /// Run one of the worked examples.
    #[command(subcommand)]
    Demo(Demo),
}

#[derive(Subcommand)]
enum Demo {
    /// Multiply random polynomials through FFTW.
    Fft {
        #[arg(long, default_value_t = 4)]
        degree: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Time schoolbook against FFT products for doubling degrees.
        #[arg(long)]
        bench: bool,
        #[arg(long, requires = "bench")]
        csv: bool,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Solve a Gauss-Markov linear model with LAPACK.
    Glm {
        /// JSON file with keys A, B and d; defaults to the built-in example.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compile a Fibonacci function with the C compiler and call it.
    Jit {
        #[arg(long, default_value_t = 35)]
        n: u32,
        /// Compare against the interpreted host recurrence.
        #[arg(long)]
        bench: bool,
    },
}

fn read_source(path: &PathBuf) -> std::io::Result<String> {
    if path.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin())
    } else {
        std::fs::read_to_string(path)
    }
}

fn session_exit(e: &SessionError) -> ExitCode {
    ExitCode::from(if e.is_environmental() {
        EXIT_ENVIRONMENT
    } else {
        EXIT_SCRIPT
    } as u8)
}

fn repl(search: SearchPath) -> ExitCode {
    let interactive = std::io::stdin().is_terminal();
    let mut session = Session::new(std::io::stdout(), search);
    let mut failed = false;
    let mut lines = std::io::stdin().lock().lines();
    for number in 1.. {
        if interactive {
            print!("ffi> ");
            let _ = std::io::stdout().flush();
        }
        let Some(Ok(line)) = lines.next() else { break };
        if let Err(e) = session.execute_line(&line, number) {
            eprintln!("error: {e}");
            failed = true;
        }
    }
    if interactive {
        println!();
    }
    ExitCode::from(if failed { EXIT_SCRIPT as u8 } else { 0 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage mistakes count as script errors; 2 is kept for the environment.
            return ExitCode::from(if e.use_stderr() { EXIT_SCRIPT as u8 } else { 0 });
        }
    };
    let mut search = SearchPath::from_env();
    for dir in cli.lib_path.iter().rev() {
        search.prepend(dir.clone());
    }
    if !cli.lib_path.is_empty() {
        // The demos look libraries up through the environment.
        let joined = std::env::join_paths(search.dirs()).expect("directories without separators");
        std::env::set_var("FFI_LIBRARY_PATH", joined);
    }

    match cli.command {
        Command::Run { script } => {
            let source = match read_source(&script) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {}: {e}", script.display());
                    return ExitCode::from(EXIT_SCRIPT as u8);
                }
            };
            let mut session = Session::new(std::io::stdout().lock(), search);
            match session.run_script(&source) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {}: {e}", script.display());
                    session_exit(&e)
                }
            }
        }
        Command::Check { script } => match read_source(&script)
            .map_err(|e| e.to_string())
            .and_then(|s| ffibridge_cli::check_script(&s).map_err(|e| e.to_string()))
        {
            Ok(statements) => {
                println!("{}: {} statement(s) ok", script.display(), statements.len());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {}: {e}", script.display());
                ExitCode::from(EXIT_SCRIPT as u8)
            }
        },
        Command::Repl => repl(search),
        Command::Demo(which) => {
            let mut out = std::io::stdout().lock();
            let result = match which {
                Demo::Fft {
                    degree,
                    seed,
                    bench,
                    csv,
                    runs,
                } => demo::fft(
                    &FftOptions {
                        degree,
                        seed,
                        bench,
                        csv,
                        runs,
                    },
                    &mut out,
                ),
                Demo::Glm { input } => demo::glm(input.as_deref(), &mut out),
                Demo::Jit { n, bench } => demo::jit(n, bench, &mut out),
            };
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(if e.is_environmental() {
                        EXIT_ENVIRONMENT
                    } else {
                        EXIT_SCRIPT
                    } as u8)
                }
            }
        }
    }
}
