fn main() {
    let mut stdout = std::io::stdout();
    let code = crafter_harness::run(std::env::args_os(), &mut stdout);
    std::process::exit(code);
}
