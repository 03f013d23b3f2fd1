use clap::Parser;
use nmqsd_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(written) => {
            for path in written {
                eprintln!("wrote {}", path.display());
            }
        }
        Err(e) => {
            eprintln!("nmqsd: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
