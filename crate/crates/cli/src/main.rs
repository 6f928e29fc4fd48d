use clap::Parser;

fn main() {
    let cli = infsel_cli::Cli::parse();
    std::process::exit(infsel_cli::run(cli));
}
