use clap::Parser;

fn main() {
    let cli = hssc::cli::Cli::parse();
    if let Err(e) = hssc::cli::run(cli) {
        eprintln!("hssc: {e}");
        std::process::exit(e.exit_code());
    }
}
