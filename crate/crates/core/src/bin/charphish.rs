fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = charphish::cli::run(std::env::args_os().collect(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
