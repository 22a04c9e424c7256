//! Text container for scorer parameters.
//!
//! ```text
//! # fairrank checkpoint
//! format_version=1
//! method=pg
//! p=64
//! q=26
//! h1=64
//! h2=32
//! init_seed=42
//! end_header
//! w1 64 90
//! <64 rows of 90 comma-separated values>
//! b1 1 64
//! ...
//! b3 1 1
//! ```
//!
//! Blocks appear in the order `w1 b1 w2 b2 w3 b3`, each as a `name rows cols`
//! line followed by `rows` lines of `cols` values (row-major, one output unit
//! per row). Values are written with the shortest representation that parses
//! back to the same bits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{FairRankError, Result};
use crate::scorer::{MlpParams, ScorerConfig};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "# fairrank checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Training method tag, e.g. `pg`, `bc`, `regress`.
    pub method: String,
    pub params: MlpParams,
}

fn blocks(c: &ScorerConfig) -> [(&'static str, usize, usize); 6] {
    [
        ("w1", c.h1, c.input_dim()),
        ("b1", 1, c.h1),
        ("w2", c.h2, c.h1),
        ("b2", 1, c.h2),
        ("w3", 1, c.h2),
        ("b3", 1, 1),
    ]
}

pub fn to_string(ckpt: &Checkpoint) -> String {
    let c = ckpt.params.config();
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "format_version={FORMAT_VERSION}").unwrap();
    writeln!(out, "method={}", ckpt.method).unwrap();
    writeln!(out, "p={}\nq={}\nh1={}\nh2={}\ninit_seed={}", c.p, c.q, c.h1, c.h2, c.init_seed).unwrap();
    out.push_str("end_header\n");
    let mut values = ckpt.params.as_slice().iter();
    for (name, rows, cols) in blocks(c) {
        writeln!(out, "{name} {rows} {cols}").unwrap();
        for _ in 0..rows {
            let row: Vec<String> = values.by_ref().take(cols).map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, to_string(ckpt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    parse(&fs::read_to_string(path)?)
}

pub fn parse(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, MAGIC)) => {}
        Some((n, _)) => return Err(FairRankError::parse(n, "missing checkpoint magic line")),
        None => return Err(FairRankError::parse(1, "empty checkpoint")),
    }
    let mut header = std::collections::BTreeMap::new();
    let mut last = 1;
    loop {
        let Some((n, line)) = lines.next() else {
            return Err(FairRankError::parse(last + 1, "header not terminated by end_header"));
        };
        last = n;
        if line == "end_header" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FairRankError::parse(n, format!("expected key=value, got {line:?}")))?;
        header.insert(k.to_string(), (n, v.to_string()));
    }
    let version = header
        .get("format_version")
        .ok_or_else(|| FairRankError::parse(last, "missing format_version"))?;
    if version.1 != FORMAT_VERSION.to_string() {
        return Err(FairRankError::Version {
            found: version.1.clone(),
            expected: FORMAT_VERSION,
        });
    }
    let num = |key: &str| -> Result<u64> {
        let (n, v) = header
            .get(key)
            .ok_or_else(|| FairRankError::parse(last, format!("missing header field {key}")))?;
        v.parse()
            .map_err(|_| FairRankError::parse(*n, format!("{key}: not an integer: {v:?}")))
    };
    let config = ScorerConfig {
        p: num("p")? as usize,
        q: num("q")? as usize,
        h1: num("h1")? as usize,
        h2: num("h2")? as usize,
        init_seed: num("init_seed")?,
    };
    config.validate()?;
    let method = header.get("method").map_or_else(|| "unknown".to_string(), |(_, v)| v.clone());

    let mut values = Vec::with_capacity(config.layout().len);
    for (name, rows, cols) in blocks(&config) {
        let (n, line) = lines
            .next()
            .ok_or_else(|| FairRankError::parse(last + 1, format!("truncated checkpoint: block {name} missing")))?;
        last = n;
        let expected = format!("{name} {rows} {cols}");
        if line != expected {
            return Err(FairRankError::parse(n, format!("expected {expected:?}, got {line:?}")));
        }
        for _ in 0..rows {
            let (n, line) = lines
                .next()
                .ok_or_else(|| FairRankError::parse(last + 1, format!("truncated checkpoint inside block {name}")))?;
            last = n;
            let before = values.len();
            for field in line.split(',') {
                values.push(
                    field
                        .parse::<f64>()
                        .map_err(|_| FairRankError::parse(n, format!("bad number {field:?}")))?,
                );
            }
            if values.len() - before != cols {
                return Err(FairRankError::parse(
                    n,
                    format!("block {name}: expected {cols} values, got {}", values.len() - before),
                ));
            }
        }
    }
    if let Some((n, extra)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(FairRankError::parse(n, format!("unexpected trailing content {extra:?}")));
    }
    Ok(Checkpoint {
        method,
        params: MlpParams::from_values(config, values)?,
    })
}
