use log::LevelFilter;

fn log_level() -> LevelFilter {
    match std::env::var("POLYRANK_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("info") => LevelFilter::Info,
        Ok("trace") => LevelFilter::Trace,
        _ => LevelFilter::Warn,
    }
}

fn main() {
    env_logger::Builder::new().filter_level(log_level()).init();
    let code = polyrank_cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
