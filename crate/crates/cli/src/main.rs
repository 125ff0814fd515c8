fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    std::process::exit(bdf_weak_adjoint_cli::main_with_args(std::env::args_os()));
}
