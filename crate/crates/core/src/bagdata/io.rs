//! Dataset file: UTF-8 text, one JSON object per line.
//!
//! ```text
//! {"d_raw":16,"C":2,"count":300}
//! {"id":"bag-00000","label":[0.0,1.0],"features":[[1.23456789e-1,...],...],"latent":[0,1,...]}
//! ```
//!
//! Features are written with 9 significant digits. The synthetic generator
//! rounds to that precision up front, so generated datasets round-trip
//! bit-for-bit. `latent` is optional and carries the generator's per-instance
//! ground truth (1 = positive).

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bag, Dataset, Instance, InstanceClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub d_raw: usize,
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub count: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    label: Vec<f64>,
    features: Vec<Vec<f64>>,
    #[serde(default)]
    latent: Option<Vec<u8>>,
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    let manifest = Manifest {
        d_raw: ds.d_raw,
        num_classes: ds.num_classes,
        count: ds.len(),
    };
    let mut line = serde_json::to_string(&manifest).expect("manifest serializes");
    line.push('\n');
    for bag in &ds.bags {
        encode_record(bag, &mut line)?;
        line.push('\n');
    }
    out.write_all(line.as_bytes())
        .map_err(|e| Error::io("<dataset writer>", e))?;
    out.flush().map_err(|e| Error::io("<dataset writer>", e))
}

fn encode_record(bag: &Bag, buf: &mut String) -> Result<()> {
    let json = |v: &f64| serde_json::to_string(v).expect("finite f64 serializes");
    if bag.label.iter().any(|v| !v.is_finite()) {
        return Err(Error::Schema(format!("bag {} has a non-finite label", bag.id)));
    }
    buf.push_str("{\"id\":");
    buf.push_str(&serde_json::to_string(&bag.id).expect("string serializes"));
    buf.push_str(",\"label\":[");
    buf.push_str(&bag.label.iter().map(json).collect::<Vec<_>>().join(","));
    buf.push_str("],\"features\":[");
    for (k, inst) in bag.instances.iter().enumerate() {
        if k > 0 {
            buf.push(',');
        }
        buf.push('[');
        for (j, &v) in inst.features.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Schema(format!(
                    "bag {} instance {k} has a non-finite feature",
                    bag.id
                )));
            }
            if j > 0 {
                buf.push(',');
            }
            write!(buf, "{v:.8e}").expect("write to String");
        }
        buf.push(']');
    }
    buf.push(']');
    if bag.instances.iter().all(|i| i.latent_class.is_some()) {
        buf.push_str(",\"latent\":[");
        let flags: Vec<&str> = bag
            .instances
            .iter()
            .map(|i| match i.latent_class {
                Some(InstanceClass::Positive) => "1",
                _ => "0",
            })
            .collect();
        buf.push_str(&flags.join(","));
        buf.push(']');
    }
    buf.push('}');
    Ok(())
}

/// Reads a whole dataset. Any malformed line fails the read; no partial
/// dataset is ever returned.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines().enumerate();

    let manifest: Manifest = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: 1,
                message: format!("bad manifest: {e}"),
            })?
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing manifest line".into(),
            })
        }
    };

    let mut bags = Vec::with_capacity(manifest.count);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if bags.len() == manifest.count {
            return Err(Error::Parse {
                line: lineno,
                message: format!("more records than the manifest count {}", manifest.count),
            });
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        bags.push(decode_record(rec, &manifest, lineno)?);
    }
    if bags.len() != manifest.count {
        return Err(Error::Parse {
            line: bags.len() + 2,
            message: format!(
                "file truncated: manifest promises {} records, found {}",
                manifest.count,
                bags.len()
            ),
        });
    }
    Dataset::new(manifest.d_raw, manifest.num_classes, bags)
}

fn decode_record(rec: Record, manifest: &Manifest, lineno: usize) -> Result<Bag> {
    if rec.label.len() != manifest.num_classes {
        return Err(Error::Schema(format!(
            "line {lineno}: label has {} entries, manifest says C={}",
            rec.label.len(),
            manifest.num_classes
        )));
    }
    if let Some(k) = rec.features.iter().position(|f| f.len() != manifest.d_raw) {
        return Err(Error::Schema(format!(
            "line {lineno}: instance {k} has {} features, manifest says d_raw={}",
            rec.features[k].len(),
            manifest.d_raw
        )));
    }
    if let Some(lat) = &rec.latent {
        if lat.len() != rec.features.len() {
            return Err(Error::Schema(format!(
                "line {lineno}: latent has {} entries for {} instances",
                lat.len(),
                rec.features.len()
            )));
        }
    }
    let latent = rec.latent.unwrap_or_default();
    let instances = rec
        .features
        .into_iter()
        .enumerate()
        .map(|(k, features)| Instance {
            features,
            latent_class: latent.get(k).map(|&f| {
                if f != 0 {
                    InstanceClass::Positive
                } else {
                    InstanceClass::Negative
                }
            }),
        })
        .collect();
    let bag = Bag {
        id: rec.id,
        instances,
        label: rec.label,
    };
    bag.validate()
        .map_err(|e| Error::Schema(format!("line {lineno}: {e}")))?;
    Ok(bag)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file)
}
