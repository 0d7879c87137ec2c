//! Runs the full verification suite through the command-line driver, writing
//! CSV output to a temporary directory.

use std::io::{sink, stderr};

fn main() {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/s1.json");
    let out = std::env::temp_dir().join("perlyap-verify-example");
    let args = ["perlyap", "verify", "--config", config, "--out", out.to_str().unwrap(), "--trials", "5"];
    let code = perlyap::cli::run(args, &mut sink(), &mut stderr());
    println!("exit code {code}");
    print!("{}", std::fs::read_to_string(out.join("verify.csv")).unwrap_or_default());
}
