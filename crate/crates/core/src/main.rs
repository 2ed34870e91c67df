use clap::Parser;

fn main() {
    let cli = prefroute::cli::Cli::parse();
    if let Err(e) = prefroute::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
