use clap::Parser;

fn main() {
    let cli = ctanet::cli::Cli::parse();
    if let Err(err) = ctanet::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code() as i32);
    }
}
