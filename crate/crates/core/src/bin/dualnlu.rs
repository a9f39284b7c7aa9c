fn main() -> std::process::ExitCode {
    dual_nlu::cli::main_with(std::env::args_os())
}
