fn main() -> std::process::ExitCode {
    sctnet::cli::main()
}
