use clap::Parser;

fn main() {
    let cli = gradsim::cli::Cli::parse();
    if let Err(e) = gradsim::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
