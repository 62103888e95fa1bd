fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(youpi_core::mock_tool::run("swarp", &args));
}
