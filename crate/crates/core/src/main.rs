use clap::Parser;

fn main() {
    let cli = permshield::cli::Cli::parse();
    let code = permshield::cli::run(cli, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
