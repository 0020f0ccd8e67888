fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MINARET_LOG", "warn")).init();
    std::process::exit(minaret::cli::run(std::env::args_os()));
}
