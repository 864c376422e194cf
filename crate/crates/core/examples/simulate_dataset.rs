//! Generates a small synthetic dataset directory and prints its class mix.
//!
//!     cargo run --release --example simulate_dataset -- /tmp/iis-data 40 7

use iis_core::synthgen::{class_mix, Generator};

fn main() -> iis_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "target/example-data".into());
    let n: usize = args.next().map_or(Ok(40), |a| a.parse()).expect("n");
    let seed: u64 = args.next().map_or(Ok(7), |a| a.parse()).expect("seed");

    let generator = Generator::default();
    let manifest = generator.dataset(&dir, n, seed)?;
    println!("{} sessions in {dir}", manifest.sessions.len());

    let recordings = generator.recordings(n, seed);
    for (label, count) in class_mix(&recordings) {
        println!("{label:<8}{count:>6}");
    }
    let greeters = recordings
        .iter()
        .filter(|r| r.metadata.get("greeter").map(String::as_str) == Some("true"))
        .count();
    println!("greeters {greeters}/{n}");
    Ok(())
}
