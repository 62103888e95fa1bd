use clap::Parser;

fn main() {
    let cli = youpi::cli::Cli::parse();
    std::process::exit(youpi::cli::run(cli));
}
