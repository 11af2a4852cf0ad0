fn main() -> std::process::ExitCode {
    afnet::cli::main()
}
