//! Versioned text checkpoint container with bit-exact float round-trips.
//!
//! A checkpoint is a line-oriented text file: a header carrying the format
//! version, the model kind, a JSON metadata line (the model configuration),
//! and a JSON layout descriptor; then named segments whose values are 64-bit
//! floats encoded as 16-digit hexadecimal bit patterns, one per line. Hex bit
//! patterns round-trip every finite value exactly on any platform and diff
//! cleanly under version control.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::{StudentConfig, StudentNet};
use crate::engine::{Layout, ParamVector};
use crate::error::{Error, Result};
use crate::ple::{PleConfig, PleNetwork};
use crate::swag::{SwagPosterior, SwagScope};

const MAGIC: &str = "#daum-checkpoint";
const FORMAT_VERSION: u32 = 1;

/// Extra header fields of a SWAG posterior checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SwagMeta {
    rank: usize,
    scope: SwagScope,
}

/// Everything a checkpoint can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Ple { config: PleConfig, params: ParamVector },
    Student { config: StudentConfig, params: ParamVector },
    Swag(SwagPosterior),
}

impl Checkpoint {
    fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Ple { .. } => "ple",
            Checkpoint::Student { .. } => "student",
            Checkpoint::Swag(_) => "swag-posterior",
        }
    }
}

fn push_segment(out: &mut String, name: &str, values: &[f64]) {
    writeln!(out, "segment {name} {}", values.len()).unwrap();
    for v in values {
        writeln!(out, "{:016x}", v.to_bits()).unwrap();
    }
}

/// Render a checkpoint to its text form.
pub fn to_string(ckpt: &Checkpoint) -> Result<String> {
    let (meta, layout): (String, &Layout) = match ckpt {
        Checkpoint::Ple { config, params } => {
            (serde_json::to_string(config).map_err(json_err)?, &params.layout)
        }
        Checkpoint::Student { config, params } => {
            (serde_json::to_string(config).map_err(json_err)?, &params.layout)
        }
        Checkpoint::Swag(p) => (
            serde_json::to_string(&SwagMeta { rank: p.rank, scope: p.scope })
                .map_err(json_err)?,
            &p.mean.layout,
        ),
    };
    let mut out = String::new();
    writeln!(out, "{MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(out, "kind {}", ckpt.kind()).unwrap();
    writeln!(out, "meta {meta}").unwrap();
    writeln!(out, "layout {}", serde_json::to_string(layout).map_err(json_err)?).unwrap();
    match ckpt {
        Checkpoint::Ple { params, .. } | Checkpoint::Student { params, .. } => {
            push_segment(&mut out, "params", &params.values);
        }
        Checkpoint::Swag(p) => {
            push_segment(&mut out, "mean", &p.mean.values);
            push_segment(&mut out, "diag", &p.diag_var);
            let flat: Vec<f64> = p.deviations.iter().flatten().copied().collect();
            push_segment(&mut out, "deviations", &flat);
        }
    }
    out.push_str("end\n");
    Ok(out)
}

fn json_err(e: serde_json::Error) -> Error {
    Error::format(format!("checkpoint JSON field: {e}"))
}

struct Parser<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Parser<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| Error::format("checkpoint truncated".to_string()))
    }

    /// Consume a `key rest...` line, returning `rest`.
    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        let err = || {
            Error::format(format!(
                "line {}: expected `{key} ...`, found `{line}`",
                self.line_no
            ))
        };
        let (head, rest) = line.split_once(' ').ok_or_else(err)?;
        if head != key {
            return Err(err());
        }
        Ok(rest)
    }

    fn segment(&mut self, name: &str) -> Result<Vec<f64>> {
        let rest = self.keyed("segment")?;
        let (seg_name, len) = rest
            .split_once(' ')
            .ok_or_else(|| Error::format(format!("malformed segment header `{rest}`")))?;
        if seg_name != name {
            return Err(Error::format(format!(
                "expected segment `{name}`, found `{seg_name}`"
            )));
        }
        let len: usize = len
            .parse()
            .map_err(|_| Error::format(format!("bad segment length `{len}`")))?;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            let line = self.next_line()?;
            let bits = u64::from_str_radix(line, 16).map_err(|_| {
                Error::format(format!("line {}: bad hex float `{line}`", self.line_no))
            })?;
            values.push(f64::from_bits(bits));
        }
        Ok(values)
    }
}

/// Parse a checkpoint from its text form.
pub fn from_str(text: &str) -> Result<Checkpoint> {
    let mut p = Parser { lines: text.lines(), line_no: 0 };
    let version = p.keyed(MAGIC)?;
    let version: u32 = version
        .parse()
        .map_err(|_| Error::format(format!("bad format version `{version}`")))?;
    if version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint format version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    let kind = p.keyed("kind")?.to_string();
    let meta = p.keyed("meta")?.to_string();
    let layout: Layout = serde_json::from_str(p.keyed("layout")?).map_err(json_err)?;
    let ckpt = match kind.as_str() {
        "ple" => {
            let config: PleConfig = serde_json::from_str(&meta).map_err(json_err)?;
            let params = ParamVector::new(p.segment("params")?, layout)?;
            Checkpoint::Ple { config, params }
        }
        "student" => {
            let config: StudentConfig = serde_json::from_str(&meta).map_err(json_err)?;
            let params = ParamVector::new(p.segment("params")?, layout)?;
            Checkpoint::Student { config, params }
        }
        "swag-posterior" => {
            let meta: SwagMeta = serde_json::from_str(&meta).map_err(json_err)?;
            let mean = ParamVector::new(p.segment("mean")?, layout)?;
            let diag_var = p.segment("diag")?;
            let flat = p.segment("deviations")?;
            let d = mean.len();
            if diag_var.len() != d || flat.len() != meta.rank * d {
                return Err(Error::format(format!(
                    "swag segment sizes disagree: d={d}, diag={}, deviations={}, rank={}",
                    diag_var.len(),
                    flat.len(),
                    meta.rank
                )));
            }
            let deviations = flat.chunks(d).map(<[f64]>::to_vec).collect();
            Checkpoint::Swag(SwagPosterior {
                mean,
                diag_var,
                deviations,
                rank: meta.rank,
                scope: meta.scope,
            })
        }
        other => {
            return Err(Error::format(format!("unknown model kind `{other}`")));
        }
    };
    let trailer = p.next_line()?;
    if trailer != "end" {
        return Err(Error::format(format!("expected `end`, found `{trailer}`")));
    }
    Ok(ckpt)
}

pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_string(ckpt)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    from_str(&fs::read_to_string(path)?)
}

/// Load a checkpoint that must hold a PLE network.
pub fn load_ple(path: impl AsRef<Path>) -> Result<PleNetwork> {
    match load(path)? {
        Checkpoint::Ple { config, params } => {
            PleNetwork::zeros(config)?.with_params(params)
        }
        other => Err(Error::format(format!(
            "expected a ple checkpoint, found `{}`",
            other.kind()
        ))),
    }
}

/// Load a checkpoint that must hold a student network.
pub fn load_student(path: impl AsRef<Path>) -> Result<StudentNet> {
    match load(path)? {
        Checkpoint::Student { config, params } => StudentNet::with_params(config, params),
        other => Err(Error::format(format!(
            "expected a student checkpoint, found `{}`",
            other.kind()
        ))),
    }
}

/// Load a checkpoint that must hold a SWAG posterior.
pub fn load_swag(path: impl AsRef<Path>) -> Result<SwagPosterior> {
    match load(path)? {
        Checkpoint::Swag(p) => Ok(p),
        other => Err(Error::format(format!(
            "expected a swag-posterior checkpoint, found `{}`",
            other.kind()
        ))),
    }
}
