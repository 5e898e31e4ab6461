fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info,usvg=error")).init();
    std::process::exit(noisy_ssl::cli::run(std::env::args_os()));
}
