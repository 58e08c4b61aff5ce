use clap::Parser;

fn main() {
    let cli = pathchoice_cli::Cli::parse();
    std::process::exit(pathchoice_cli::run(cli));
}
