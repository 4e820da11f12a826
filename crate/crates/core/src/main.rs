use clap::Parser;

fn main() {
    let cli = crtgemm::cli::Cli::parse();
    match crtgemm::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
