fn main() -> std::process::ExitCode {
    losstwin::cli::main()
}
