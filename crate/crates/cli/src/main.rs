use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "# {} {}", record.level(), record.args()))
        .init();
    symdet_cli::run(std::env::args_os())
}
