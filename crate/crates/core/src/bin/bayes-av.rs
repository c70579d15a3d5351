fn main() {
    std::process::exit(bayes_av::cli::run(std::env::args_os()));
}
