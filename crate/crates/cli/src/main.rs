use clap::Parser;

fn main() {
    let cli = regionpost_cli::Cli::parse();
    match regionpost_cli::run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
        }
        Err(failure) => {
            eprintln!("{}", failure.to_json());
            std::process::exit(failure.exit_code());
        }
    }
}
