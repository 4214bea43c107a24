use clap::error::ErrorKind;
use clap::Parser;
use stdglm_cli::cli::Cli;
use stdglm_cli::error::CliError;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return;
        }
        Err(e) => {
            let text = e.to_string();
            let message: Vec<&str> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .collect();
            fail(CliError::Usage(message.join(" ").trim_start_matches("error: ").to_string()));
        }
    };
    if let Err(e) = stdglm_cli::commands::run(cli) {
        fail(e);
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.report());
    std::process::exit(e.exit_code());
}
