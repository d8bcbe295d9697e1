use clap::Parser;

fn main() {
    let cli = match attnct_cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = attnct_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(attnct_cli::exit_code(&e));
    }
}
