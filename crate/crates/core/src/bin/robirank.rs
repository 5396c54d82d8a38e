use clap::Parser;

fn main() {
    let cli = robirank::cli::Cli::parse();
    std::process::exit(robirank::cli::run(cli));
}
