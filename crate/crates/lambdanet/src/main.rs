fn main() -> std::process::ExitCode {
    lambdanet::cli::main_entry()
}
