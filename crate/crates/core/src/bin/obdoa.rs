fn main() -> std::process::ExitCode {
    onebit_doa::cli::main()
}
