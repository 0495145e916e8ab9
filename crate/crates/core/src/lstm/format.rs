//! Text weight-file format.
//!
//! ```text
//! cropda-lstm 1
//! encoding mean            | encoding ensemble <M>
//! lai_scale <f64>
//! input_dim <n>
//! hidden <h1> <h2> ...
//! params <count>
//! <one f64 per line, flat layout described in `network`>
//! ```
//!
//! Lines starting with `#` are comments. Values are written in shortest
//! round-trip decimal form, so save/load is lossless.

use std::fmt::Write as _;
use std::path::Path;

use super::emulator::{Emulator, InputEncoding};
use super::network::LstmNetwork;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &str = "cropda-lstm";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn to_string(emulator: &Emulator) -> String {
    let net = &emulator.network;
    let mut out = String::new();
    writeln!(out, "{WEIGHTS_MAGIC} {WEIGHTS_VERSION}").unwrap();
    out.push_str("# gate rows per layer: input, forget, candidate, output; Wx, Wh, b; then head w, head b\n");
    match emulator.encoding {
        InputEncoding::Mean => out.push_str("encoding mean\n"),
        InputEncoding::Ensemble { members } => writeln!(out, "encoding ensemble {members}").unwrap(),
    }
    writeln!(out, "lai_scale {}", emulator.lai_scale).unwrap();
    writeln!(out, "input_dim {}", net.input_dim()).unwrap();
    let hidden: Vec<String> = net.hidden().iter().map(|h| h.to_string()).collect();
    writeln!(out, "hidden {}", hidden.join(" ")).unwrap();
    writeln!(out, "params {}", net.num_params()).unwrap();
    for p in net.params() {
        writeln!(out, "{p}").unwrap();
    }
    out
}

pub fn from_str(text: &str, path: &Path) -> Result<Emulator> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::format(path, 0, format!("unexpected end of file, expected {what}")))
    };

    let (ln, header) = next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(WEIGHTS_MAGIC) {
        return Err(Error::format(path, ln, "not a cropda LSTM weight file"));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(path, ln, "missing format version"))?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(path, ln, format!("unsupported weight format version {version}")));
    }

    let field = |line: (usize, &str), key: &str| -> Result<(usize, Vec<String>)> {
        let mut it = line.1.split_whitespace();
        if it.next() != Some(key) {
            return Err(Error::format(path, line.0, format!("expected `{key}`")));
        }
        Ok((line.0, it.map(str::to_owned).collect()))
    };
    let parse_usize = |ln: usize, s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, ln, format!("invalid integer `{s}`")))
    };

    let (ln, enc) = field(next("encoding")?, "encoding")?;
    let encoding = match enc.as_slice() {
        [m] if m == "mean" => InputEncoding::Mean,
        [m, n] if m == "ensemble" => InputEncoding::Ensemble {
            members: parse_usize(ln, n)?,
        },
        _ => return Err(Error::format(path, ln, "unknown encoding")),
    };
    let (ln, scale) = field(next("lai_scale")?, "lai_scale")?;
    let lai_scale: f64 = scale
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, ln, "invalid lai_scale"))?;
    let (ln, dim) = field(next("input_dim")?, "input_dim")?;
    let input_dim = parse_usize(ln, dim.first().map_or("", String::as_str))?;
    let (ln, hidden) = field(next("hidden")?, "hidden")?;
    let hidden = hidden
        .iter()
        .map(|h| parse_usize(ln, h))
        .collect::<Result<Vec<_>>>()?;
    let (ln, count) = field(next("params")?, "params")?;
    let count = parse_usize(ln, count.first().map_or("", String::as_str))?;

    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, v) = next("parameter value")?;
        let p: f64 = v
            .parse()
            .map_err(|_| Error::format(path, ln, format!("invalid parameter `{v}`")))?;
        params.push(p);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::format(path, ln, "trailing data after parameters"));
    }
    let network = LstmNetwork::from_params(input_dim, &hidden, params)
        .map_err(|e| Error::format(path, ln, e.to_string()))?;
    Emulator::new(network, encoding, lai_scale).map_err(|e| Error::format(path, ln, e.to_string()))
}

pub fn save(emulator: &Emulator, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(emulator)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Emulator> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text, path)
}
