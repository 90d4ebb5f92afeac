use clap::Parser;
use linsoc::cli::{execute, Args};

fn main() {
    let args = Args::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = execute(&args, &mut stdout) {
        eprintln!("linsoc: {e}");
        std::process::exit(e.exit_code());
    }
}
