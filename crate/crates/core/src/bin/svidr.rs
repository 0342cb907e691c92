use clap::Parser;

fn main() {
    let cli = svidr::cli::Cli::parse();
    if let Err(e) = svidr::cli::run(cli) {
        eprintln!("svidr: {e}");
        std::process::exit(e.exit_code());
    }
}
