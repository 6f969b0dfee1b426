//! Split directory layout:
//!
//! - `train.tsv`, `val.tsv`, `test.tsv`: `user-index \t item-index \t weight \t timestamp`
//!   (timestamp `-` when absent), grouped by user, each row in chronological order
//! - `vocab_users.tsv`, `vocab_items.tsv`: `index \t token`
//! - `manifest`: sorted `key=value` lines
//! - `injected.tsv`: `user-index \t item-index`, random-noise regime only

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::ingest::Vocab;
use super::matrix::{Interaction, InteractionMatrix};
use super::split::{Regime, SplitBundle};
use crate::error::{Error, Result};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn format_matrix(m: &InteractionMatrix) -> String {
    let mut out = String::new();
    for (u, row) in m.rows().iter().enumerate() {
        for it in row {
            let ts = it.timestamp.map_or_else(|| "-".to_string(), |t| t.to_string());
            let _ = writeln!(out, "{u}\t{}\t{}\t{ts}", it.item, it.weight);
        }
    }
    out
}

pub fn parse_matrix(text: &str, n_users: usize, n_items: usize) -> Result<InteractionMatrix> {
    let mut m = InteractionMatrix::new(n_users, n_items);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::input(format!("malformed split line {}: {line:?}", i + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let user: usize = f[0].parse().map_err(|_| bad())?;
        let item: usize = f[1].parse().map_err(|_| bad())?;
        let weight: f64 = f[2].parse().map_err(|_| bad())?;
        let timestamp = match f[3] {
            "-" => None,
            t => Some(t.parse().map_err(|_| bad())?),
        };
        m.push(
            user,
            Interaction {
                item,
                weight,
                timestamp,
            },
        )?;
    }
    Ok(m)
}

fn format_vocab(v: &Vocab) -> String {
    v.tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{i}\t{t}\n"))
        .collect()
}

fn parse_vocab(text: &str) -> Result<Vocab> {
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (idx, tok) = line
            .split_once('\t')
            .ok_or_else(|| Error::input(format!("malformed vocabulary line {}", i + 1)))?;
        if idx.parse::<usize>().ok() != Some(i) {
            return Err(Error::input(format!("vocabulary index out of order on line {}", i + 1)));
        }
        tokens.push(tok.to_string());
    }
    Vocab::from_tokens(tokens)
}

pub fn format_key_values(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {} is not key=value: {line:?}", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn write_bundle(bundle: &SplitBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("train.tsv"), &format_matrix(&bundle.train))?;
    write_file(&dir.join("val.tsv"), &format_matrix(&bundle.val))?;
    write_file(&dir.join("test.tsv"), &format_matrix(&bundle.test))?;
    write_file(&dir.join("vocab_users.tsv"), &format_vocab(&bundle.users))?;
    write_file(&dir.join("vocab_items.tsv"), &format_vocab(&bundle.items))?;
    write_file(&dir.join("manifest"), &format_key_values(&bundle.manifest))?;
    if !bundle.injected.is_empty() {
        let text: String = bundle.injected.iter().map(|(u, i)| format!("{u}\t{i}\n")).collect();
        write_file(&dir.join("injected.tsv"), &text)?;
    }
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<SplitBundle> {
    let manifest = parse_key_values(&read_file(&dir.join("manifest"))?)?;
    let users = parse_vocab(&read_file(&dir.join("vocab_users.tsv"))?)?;
    let items = parse_vocab(&read_file(&dir.join("vocab_items.tsv"))?)?;
    let regime: Regime = manifest
        .get("regime")
        .ok_or_else(|| Error::input("manifest lacks a regime"))?
        .parse()?;
    let (nu, ni) = (users.len(), items.len());
    let train = parse_matrix(&read_file(&dir.join("train.tsv"))?, nu, ni)?;
    let val = parse_matrix(&read_file(&dir.join("val.tsv"))?, nu, ni)?;
    let test = parse_matrix(&read_file(&dir.join("test.tsv"))?, nu, ni)?;
    let injected_path = dir.join("injected.tsv");
    let mut injected = Vec::new();
    if injected_path.exists() {
        for line in read_file(&injected_path)?.lines() {
            let parsed = line
                .split_once('\t')
                .and_then(|(u, i)| Some((u.parse().ok()?, i.parse().ok()?)));
            injected.push(parsed.ok_or_else(|| Error::input(format!("malformed injected line {line:?}")))?);
        }
    }
    Ok(SplitBundle {
        train,
        val,
        test,
        regime,
        users,
        items,
        injected,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ingest::{parse, InputFormat};
    use crate::data::split::{prepare_bundle, Regime};

    #[test]
    fn bundle_round_trip() {
        let text = "a\tx\t5\t1\nb\ty\t4\t2\na\ty\t5\t3\nb\tx\t4.5\t4\nc\tz\t5\t5\n";
        let ds = parse(text, InputFormat::Tsv).unwrap();
        let b = prepare_bundle(&ds, Regime::RandomNoise(0.5), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&b, dir.path()).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn key_values_reject_garbage() {
        assert!(parse_key_values("a=1\nnot a pair\n").is_err());
        let m = parse_key_values("# comment\n a = 1 \n").unwrap();
        assert_eq!(m["a"], "1");
    }
}
