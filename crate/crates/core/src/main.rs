fn main() -> std::process::ExitCode {
    sprintopt::cli::main()
}
