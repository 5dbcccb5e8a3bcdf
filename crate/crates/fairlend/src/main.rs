fn main() {
    fairlend::cli::run();
}
