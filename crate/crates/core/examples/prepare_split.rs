//! Ingests a small ratings file and writes the clean, noisy and temporal
//! split bundles to a temporary directory.

use std::fmt::Write as _;

use diffrec::data::{parse, prepare_bundle, write_bundle, InputFormat, Regime};

fn main() -> diffrec::Result<()> {
    let mut text = String::new();
    for u in 0..12 {
        for k in 0..8 {
            let item = (u * 3 + k * 5) % 20;
            let rating = 1 + (u + k) % 5;
            let _ = writeln!(text, "u{u}\ti{item}\t{rating}\t{}", 1000 + u * 8 + k);
        }
    }
    let ds = parse(&text, InputFormat::Tsv)?;
    println!("{} records, {} users, {} items", ds.records.len(), ds.users.len(), ds.items.len());

    let root = std::env::temp_dir().join("diffrec-prepare-example");
    for regime in ["clean", "natural", "random(0.2)", "temporal"] {
        let regime: Regime = regime.parse()?;
        let bundle = prepare_bundle(&ds, regime, 7)?;
        let dir = root.join(regime.to_string().replace(['(', ')'], "_"));
        write_bundle(&bundle, &dir)?;
        println!(
            "{regime:<12} train {:>3}  val {:>3}  test {:>3}  injected {:>3}  -> {}",
            bundle.train.nnz(),
            bundle.val.nnz(),
            bundle.test.nnz(),
            bundle.injected.len(),
            dir.display()
        );
    }
    Ok(())
}
