//! MIPL-JSONL v1: a header line followed by one JSON object per bag.
//!
//! ```text
//! {"version":1,"num_classes":5,"feature_dim":8,"metadata":{...}}
//! {"bag_id":"bag-00000","instances":[[...],...],"candidate_labels":[0,3],"true_label":3}
//! ```
//!
//! Reals are written in shortest round-trip form and parsed exactly, so a
//! write/read cycle reproduces every feature bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Bag, MiplDataset};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    num_classes: usize,
    feature_dim: usize,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

pub fn write_dataset<W: Write>(mut w: W, dataset: &MiplDataset) -> Result<()> {
    let header = Header {
        version: FORMAT_VERSION,
        num_classes: dataset.num_classes(),
        feature_dim: dataset.feature_dim(),
        metadata: dataset.metadata().clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for bag in dataset.bags() {
        serde_json::to_writer(&mut w, bag)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<MiplDataset> {
    let mut header: Option<Header> = None;
    let mut bags = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse { line: lineno, message: e.to_string() };
        match header {
            None => {
                let h: Header = serde_json::from_str(&line).map_err(parse_err)?;
                if h.version != FORMAT_VERSION {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("unsupported format version {}", h.version),
                    });
                }
                header = Some(h);
            }
            Some(_) => bags.push(serde_json::from_str::<Bag>(&line).map_err(parse_err)?),
        }
    }
    let h = header.ok_or_else(|| Error::Parse { line: 1, message: "missing header line".into() })?;
    MiplDataset::new(h.num_classes, h.feature_dim, bags, h.metadata)
}

pub fn dataset_to_string(dataset: &MiplDataset) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, dataset)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &MiplDataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), dataset)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<MiplDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
