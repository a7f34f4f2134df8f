fn main() -> std::process::ExitCode {
    c2f_cli::main_entry()
}
