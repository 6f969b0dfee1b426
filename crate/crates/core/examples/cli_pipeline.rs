//! Runs prepare, train, eval and infer through the configuration layer used
//! by the `diffrec` binary, on a generated ratings file.

use std::fmt::Write as _;

use diffrec::cli::{cmd_eval, cmd_infer, cmd_prepare, cmd_train, format_recommendations, RunConfig};

fn main() -> diffrec::Result<()> {
    let root = std::env::temp_dir().join("diffrec-cli-example");
    std::fs::create_dir_all(&root).map_err(|e| diffrec::Error::io(&root, e))?;
    let mut ratings = String::new();
    for u in 0..80 {
        for k in 0..12 {
            let item = (u % 4) * 10 + (u + 3 * k) % 10;
            let _ = writeln!(ratings, "{u}\t{item}\t5\t{}", k * 100 + u);
        }
    }
    let input = root.join("ratings.tsv");
    std::fs::write(&input, ratings).map_err(|e| diffrec::Error::io(&input, e))?;

    let mut cfg = RunConfig::new();
    for pair in [
        format!("input={}", input.display()),
        format!("data_dir={}", root.join("bundle").display()),
        format!("out_dir={}", root.join("run").display()),
        "epochs=15".into(),
        "batch_size=20".into(),
        "lr=0.001".into(),
        "hidden=32".into(),
    ] {
        cfg.set_pair(&pair)?;
    }
    cmd_prepare(&cfg)?;
    let trained = cmd_train(&cfg)?;
    print!("{}", trained.log.to_text());
    let eval = cmd_eval(&cfg)?;
    print!("{}", eval.report.to_key_values());

    let history = root.join("history.txt");
    std::fs::write(&history, "0\n1\n2\n").map_err(|e| diffrec::Error::io(&history, e))?;
    cfg.set_pair(&format!("history={}", history.display()))?;
    cfg.set_pair("k=5")?;
    print!("{}", format_recommendations(&cmd_infer(&cfg)?));
    Ok(())
}
