use clap::Parser;

fn main() {
    let cli = cotrain::cli::Cli::parse();
    if let Err(e) = cotrain::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
