use clap::Parser;

fn main() {
    let cli = qmem_cli::Cli::parse();
    if let Err(e) = qmem_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
