fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(bilm_cli::LOG_ENV, "warn")).init();
    std::process::exit(bilm_cli::dispatch(std::env::args()));
}
