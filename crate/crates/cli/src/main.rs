use clap::Parser;

fn main() {
    let cli = match cbc_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() {
                cbc_cli::EXIT_USAGE
            } else {
                cbc_cli::EXIT_OK
            });
        }
    };
    std::process::exit(cbc_cli::run(cli));
}
