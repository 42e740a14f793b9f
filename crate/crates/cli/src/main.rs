fn main() -> std::process::ExitCode {
    longpref_cli::main_entry()
}
