//! Prepared-corpus directory format.
//!
//! * `vocab.tsv`: header `domain\tindex\titem`, then one row per item.
//! * `train.tsv`: header `user\titems`; `items` is a space-separated list of
//!   global indices in chronological order.
//! * `eval.tsv`: header `user\tdomain\tpartition\ttarget\tprefix`; `target`
//!   and `prefix` use global indices.
//!
//! Rows are written in a fixed order so identical inputs give identical bytes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{CrossDomainSequence, DatasetSplit, Domain, DomainVocab, EvalInstance, ItemRef};
use crate::error::{Error, Result};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const EVAL_FILE: &str = "eval.tsv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prepared {
    pub vocab: DomainVocab,
    pub split: DatasetSplit,
}

fn join(items: &[ItemRef]) -> String {
    items
        .iter()
        .map(|i| i.global.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_prepared(dir: &Path, vocab: &DomainVocab, split: &DatasetSplit) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        body(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&path, e))
    };
    write(VOCAB_FILE, &|out| {
        writeln!(out, "domain\tindex\titem")?;
        for d in Domain::BOTH {
            for (i, item) in vocab.items(d).iter().enumerate() {
                writeln!(out, "{d}\t{i}\t{item}")?;
            }
        }
        Ok(())
    })?;
    write(TRAIN_FILE, &|out| {
        writeln!(out, "user\titems")?;
        for s in &split.train {
            writeln!(out, "{}\t{}", s.user, join(&s.items))?;
        }
        Ok(())
    })?;
    write(EVAL_FILE, &|out| {
        writeln!(out, "user\tdomain\tpartition\ttarget\tprefix")?;
        for i in &split.eval {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                i.user,
                i.domain,
                i.partition,
                i.target.global,
                join(&i.prefix)
            )?;
        }
        Ok(())
    })
}

fn read_rows(dir: &Path, name: &str, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let path = dir.join(name);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if i == 0 {
            if line != header {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("{name}: expected header {header:?}"),
                });
            }
            continue;
        }
        rows.push((i + 1, line.split('\t').map(String::from).collect()));
    }
    Ok(rows)
}

fn parse_items(vocab: &DomainVocab, text: &str, line: usize) -> Result<Vec<ItemRef>> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .ok()
                .and_then(|g| vocab.from_global(g))
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("bad item index {tok:?}"),
                })
        })
        .collect()
}

fn field(row: &[String], i: usize, line: usize) -> Result<&str> {
    row.get(i).map(String::as_str).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field {}", i + 1),
    })
}

pub fn read_prepared(dir: &Path) -> Result<Prepared> {
    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    let mut items: [Vec<String>; 2] = Default::default();
    for (line, row) in read_rows(dir, VOCAB_FILE, "domain\tindex\titem")? {
        let domain: Domain = field(&row, 0, line)?
            .parse()
            .map_err(|m| parse_err(line, m))?;
        let index: usize = field(&row, 1, line)?
            .parse()
            .map_err(|_| parse_err(line, "bad index".into()))?;
        let slot = &mut items[domain as usize];
        if index != slot.len() {
            return Err(parse_err(
                line,
                "vocab indices must be dense and ordered".into(),
            ));
        }
        slot.push(field(&row, 2, line)?.to_string());
    }
    let [xs, ys] = items;
    let vocab = DomainVocab::new(xs, ys);

    let mut train = Vec::new();
    for (line, row) in read_rows(dir, TRAIN_FILE, "user\titems")? {
        train.push(CrossDomainSequence {
            user: field(&row, 0, line)?.to_string(),
            items: parse_items(&vocab, row.get(1).map(String::as_str).unwrap_or(""), line)?,
        });
    }

    let mut eval = Vec::new();
    for (line, row) in read_rows(dir, EVAL_FILE, "user\tdomain\tpartition\ttarget\tprefix")? {
        let domain: Domain = field(&row, 1, line)?
            .parse()
            .map_err(|m| parse_err(line, m))?;
        let partition = field(&row, 2, line)?
            .parse()
            .map_err(|m| parse_err(line, m))?;
        let target = parse_items(&vocab, field(&row, 3, line)?, line)?
            .pop()
            .ok_or_else(|| parse_err(line, "missing target".into()))?;
        if target.domain != domain {
            return Err(parse_err(line, "target domain mismatch".into()));
        }
        eval.push(EvalInstance {
            user: field(&row, 0, line)?.to_string(),
            domain,
            partition,
            target,
            prefix: parse_items(&vocab, row.get(4).map(String::as_str).unwrap_or(""), line)?,
        });
    }
    Ok(Prepared {
        vocab,
        split: DatasetSplit { train, eval },
    })
}
