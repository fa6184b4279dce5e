//! Generates a synthetic genre-walk interaction corpus as a `.dat` file,
//! ready for `unigrf prepare`.
//!
//! Usage: `cargo run -p unigrf-core --example gen_synth -- out.dat [users] [seed]`

use unigrf_core::data::synth::{generate, write_dat, SynthSpec};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "synth.dat".to_string());
    let users: u32 = args
        .next()
        .map(|s| s.parse().expect("users must be an integer"))
        .unwrap_or(64);
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);

    let spec = SynthSpec {
        users,
        seed,
        ..Default::default()
    };
    let records = generate(&spec).expect("generation failed");
    write_dat(&records, std::path::Path::new(&path)).expect("write failed");
    println!(
        "wrote {} interactions for {} users over {} items to {path}",
        records.len(),
        spec.users,
        spec.item_count()
    );
}
