use clap::Parser;

fn main() {
    let cli = zipcoll_cli::args::Cli::parse();
    if let Err(e) = zipcoll_cli::run(cli) {
        eprintln!("zipcoll: {e:#}");
        std::process::exit(1);
    }
}
