fn main() -> std::process::ExitCode {
    qvc_cli::run(std::env::args_os())
}
