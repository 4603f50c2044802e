fn main() -> std::process::ExitCode {
    spt_cli::app::main()
}
