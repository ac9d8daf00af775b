use clap::Parser;
use xdrec_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = xdrec_cli::run(&cli, &mut std::io::stdout().lock()) {
        eprintln!("error: {err:#}");
        std::process::exit(xdrec_cli::exit_code(&err));
    }
}
