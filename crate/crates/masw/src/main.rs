use clap::Parser;

fn main() {
    let cli = masw::cli::Cli::parse();
    if let Err(error) = masw::cli::run(&cli) {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}
