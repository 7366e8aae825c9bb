use clap::Parser;

fn main() {
    let cli = mec_ce::cli::Cli::parse();
    std::process::exit(mec_ce::cli::run(cli));
}
