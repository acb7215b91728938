//! Print the canonical default run config.

fn main() {
    let run = coldstream_cli::config::RunFile::default();
    println!("{}", coldstream_cli::config::dump_config(&run).unwrap());
}
