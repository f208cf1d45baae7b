fn main() -> std::process::ExitCode {
    caspian_service::cli::main()
}
