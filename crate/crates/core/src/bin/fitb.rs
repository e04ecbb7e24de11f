fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match fitb::harness::dispatch(std::env::args_os()) {
        Ok(()) => {}
        Err(fitb::FitbError::Usage(m)) if m.is_empty() => {}
        Err(e) => {
            eprintln!("{}", e.one_line());
            std::process::exit(2);
        }
    }
}
