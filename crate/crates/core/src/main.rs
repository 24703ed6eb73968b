fn main() {
    std::process::exit(certsmooth::pipeline::cli_main(std::env::args_os()));
}
