fn main() -> std::process::ExitCode {
    vidon::cli::main()
}
