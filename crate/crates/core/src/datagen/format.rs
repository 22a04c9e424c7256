//! Line-oriented dataset file.
//!
//! ```text
//! # fairrank dataset
//! format_version=1
//! p=64
//! q=26
//! L=6
//! M=20
//! K=10                         (optional)
//! n_trials=400
//! trial_binary=0..4;9..35      (optional schema metadata)
//! site_histogram=0..26         (optional schema metadata)
//! end_header
//! trial,<id>,<split>,<tags>,<p values>
//! site,<id>,<enrollment>,<L membership weights>,<q values>
//! ...
//! ```
//!
//! Every `trial` record is followed by exactly `M` `site` records. Tags are
//! `key:value` pairs joined by `;`, or `-` when empty. Numbers use the
//! shortest representation that parses back to the same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use super::{Dataset, Split};
use crate::domain::{validate_candidate_set, CandidateSet, FeatureSchema, GroupDistribution, SiteFeatures, TrialFeatures};
use crate::error::{FairRankError, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "# fairrank dataset";

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '\n', '\r', ';', ':', '=']) {
        return Err(FairRankError::invalid(format!(
            "{kind} {s:?} is empty or contains a reserved character"
        )));
    }
    Ok(())
}

fn push_values(out: &mut String, values: &[f64]) {
    for v in values {
        write!(out, ",{v}").unwrap();
    }
}

fn ranges_to_string(ranges: &[Range<usize>]) -> String {
    ranges
        .iter()
        .map(|r| format!("{}..{}", r.start, r.end))
        .collect::<Vec<_>>()
        .join(";")
}

/// Serializes a dataset to the text format.
pub fn write_to(ds: &Dataset) -> Result<String> {
    let s = &ds.schema;
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "format_version={FORMAT_VERSION}").unwrap();
    writeln!(out, "p={}", s.p).unwrap();
    writeln!(out, "q={}", s.q).unwrap();
    writeln!(out, "L={}", s.l).unwrap();
    writeln!(out, "M={}", ds.m).unwrap();
    if let Some(k) = ds.k {
        writeln!(out, "K={k}").unwrap();
    }
    writeln!(out, "n_trials={}", ds.sets.len()).unwrap();
    if !s.trial_binary.is_empty() {
        writeln!(out, "trial_binary={}", ranges_to_string(&s.trial_binary)).unwrap();
    }
    if !s.site_histogram.is_empty() {
        writeln!(out, "site_histogram={}", ranges_to_string(&s.site_histogram)).unwrap();
    }
    writeln!(out, "end_header").unwrap();

    for (cs, split) in ds.sets.iter().zip(&ds.splits) {
        if cs.num_sites() != ds.m {
            return Err(FairRankError::dim(format!(
                "trial {} has {} sites, header declares M = {}",
                cs.trial.id,
                cs.num_sites(),
                ds.m
            )));
        }
        check_token("trial id", &cs.trial.id)?;
        let tags = if cs.trial.tags.is_empty() {
            "-".to_string()
        } else {
            let mut parts = Vec::new();
            for (k, v) in &cs.trial.tags {
                check_token("tag key", k)?;
                check_token("tag value", v)?;
                parts.push(format!("{k}:{v}"));
            }
            parts.join(";")
        };
        write!(out, "trial,{},{},{}", cs.trial.id, split.as_str(), tags).unwrap();
        push_values(&mut out, &cs.trial.values);
        out.push('\n');
        for ((site, e), row) in cs.sites.iter().zip(&cs.enrollment).zip(&cs.membership) {
            check_token("site id", &site.id)?;
            write!(out, "site,{},{e}", site.id).unwrap();
            push_values(&mut out, row.weights());
            push_values(&mut out, &site.values);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn save(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_to(ds)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    parse(&fs::read_to_string(path)?)
}

fn parse_ranges(line: usize, s: &str) -> Result<Vec<Range<usize>>> {
    s.split(';')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once("..")
                .ok_or_else(|| FairRankError::parse(line, format!("bad range {p:?}")))?;
            let a = a.parse().map_err(|_| FairRankError::parse(line, format!("bad range {p:?}")))?;
            let b = b.parse().map_err(|_| FairRankError::parse(line, format!("bad range {p:?}")))?;
            Ok(a..b)
        })
        .collect()
}

fn parse_f64s(line: usize, what: &str, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| FairRankError::parse(line, format!("{what} field {i}: {f:?} is not a number")))
        })
        .collect()
}

struct Header {
    schema: FeatureSchema,
    m: usize,
    k: Option<usize>,
    n_trials: usize,
}

fn parse_header<'a, I: Iterator<Item = (usize, &'a str)>>(lines: &mut I) -> Result<Header> {
    let (first_no, first) = lines.next().ok_or_else(|| FairRankError::parse(1, "empty file"))?;
    if first.trim() != MAGIC {
        return Err(FairRankError::parse(first_no, format!("expected {MAGIC:?}")));
    }
    let mut kv = BTreeMap::new();
    let mut end = None;
    for (no, line) in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            end = Some(no);
            break;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FairRankError::parse(no, format!("expected key=value, got {line:?}")))?;
        kv.insert(k.trim().to_string(), (no, v.trim().to_string()));
    }
    let end = end.ok_or_else(|| FairRankError::parse(0, "header is missing end_header"))?;

    let version = kv
        .get("format_version")
        .ok_or_else(|| FairRankError::parse(end, "header is missing format_version"))?;
    if version.1 != FORMAT_VERSION.to_string() {
        return Err(FairRankError::Version {
            found: version.1.clone(),
            expected: FORMAT_VERSION,
        });
    }
    let num = |key: &str| -> Result<usize> {
        let (no, v) = kv
            .get(key)
            .ok_or_else(|| FairRankError::parse(end, format!("header is missing {key}")))?;
        v.parse()
            .map_err(|_| FairRankError::parse(*no, format!("{key}={v:?} is not a count")))
    };
    let mut schema = FeatureSchema::dims(num("p")?, num("q")?, num("L")?);
    if let Some((no, v)) = kv.get("trial_binary") {
        schema.trial_binary = parse_ranges(*no, v)?;
    }
    if let Some((no, v)) = kv.get("site_histogram") {
        schema.site_histogram = parse_ranges(*no, v)?;
    }
    let k = if kv.contains_key("K") { Some(num("K")?) } else { None };
    Ok(Header {
        schema,
        m: num("M")?,
        k,
        n_trials: num("n_trials")?,
    })
}

/// Parses the text format and validates every candidate set.
pub fn parse(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header = parse_header(&mut lines)?;
    let Header { schema, m, k, n_trials } = header;
    let (p, q, l) = (schema.p, schema.q, schema.l);

    let mut records = lines.filter(|(_, l)| !l.trim().is_empty());
    let mut sets = Vec::with_capacity(n_trials);
    let mut splits = Vec::with_capacity(n_trials);
    while let Some((no, line)) = records.next() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[0] != "trial" {
            return Err(FairRankError::parse(no, format!("expected a trial record, found {:?}", fields[0])));
        }
        if fields.len() != 4 + p {
            return Err(FairRankError::parse(
                no,
                format!("trial record has {} fields, expected {}", fields.len(), 4 + p),
            ));
        }
        let id = fields[1].to_string();
        let split = Split::parse(fields[2])
            .ok_or_else(|| FairRankError::parse(no, format!("trial {id}: unknown split {:?}", fields[2])))?;
        let mut trial = TrialFeatures::new(id.clone(), parse_f64s(no, "trial", &fields[4..])?);
        if fields[3] != "-" {
            for tag in fields[3].split(';') {
                let (key, value) = tag
                    .split_once(':')
                    .ok_or_else(|| FairRankError::parse(no, format!("trial {id}: bad tag {tag:?}")))?;
                trial.tags.insert(key.to_string(), value.to_string());
            }
        }

        let mut sites = Vec::with_capacity(m);
        let mut enrollment = Vec::with_capacity(m);
        let mut membership = Vec::with_capacity(m);
        for j in 0..m {
            let (sno, sline) = records.next().ok_or_else(|| {
                FairRankError::parse(no, format!("trial {id}: expected {m} site records, file ends after {j}"))
            })?;
            let f: Vec<&str> = sline.split(',').collect();
            if f[0] != "site" {
                return Err(FairRankError::parse(
                    sno,
                    format!("trial {id}: expected site record {j} of {m}, found {:?}", f[0]),
                ));
            }
            if f.len() != 3 + l + q {
                return Err(FairRankError::parse(
                    sno,
                    format!("site record has {} fields, expected {}", f.len(), 3 + l + q),
                ));
            }
            let e = parse_f64s(sno, "enrollment", &f[2..3])?[0];
            let row = parse_f64s(sno, "membership", &f[3..3 + l])?;
            let values = parse_f64s(sno, "site", &f[3 + l..])?;
            sites.push(SiteFeatures::new(f[1], values));
            enrollment.push(e);
            // raw row; validation below renormalizes or rejects it
            membership.push(GroupDistribution::from_raw(row));
        }
        let cs = CandidateSet {
            trial,
            sites,
            enrollment,
            membership,
        };
        let cs = validate_candidate_set(cs, Some(&schema))
            .map_err(|e| FairRankError::parse(no, format!("trial {id}: {e}")))?;
        sets.push(cs);
        splits.push(split);
    }
    if sets.len() != n_trials {
        return Err(FairRankError::parse(
            0,
            format!("header declares {n_trials} trials, file has {}", sets.len()),
        ));
    }
    Ok(Dataset {
        schema,
        m,
        k,
        sets,
        splits,
    })
}
