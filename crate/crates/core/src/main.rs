fn main() {
    std::process::exit(splatuq::cli::cli_main(std::env::args_os()));
}
