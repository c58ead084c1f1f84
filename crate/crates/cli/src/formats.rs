//! On-disk formats: PGM and float-CSV images, bucket and pattern CSVs, model checkpoints.

use std::fs;
use std::path::Path;

use ghostqc_core::imaging::{phantoms, BucketSignals, Image, PatternSet};
use ghostqc_core::nn::Tensor;
use ghostqc_core::qcircuit::ParamVector;
use ghostqc_core::qcsgi::{HybridModel, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// 17 significant digits: every f64 survives a write/read cycle exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, what: &str) -> CliResult<f64> {
    s.trim().parse::<f64>().map_err(|e| CliError::input(format!("{what}: cannot parse {s:?}: {e}")))
}

/// Binary 8-bit PGM; values are clamped to `[0,1]` and rounded.
pub fn pgm_bytes(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Reads P5 (8- or 16-bit) and P2 files, scaled to `[0,1]`.
pub fn parse_pgm(bytes: &[u8]) -> CliResult<Image> {
    let mut pos = 0;
    let mut token = || -> CliResult<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CliError::input("truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| s.parse::<usize>().map_err(|_| CliError::input(format!("bad PGM header field {s:?}")));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 || width == 0 || height == 0 {
        return Err(CliError::input("unsupported PGM geometry or maxval"));
    }
    let n = width * height;
    let values: Vec<f64> = match magic.as_str() {
        "P5" => {
            let data = &bytes[(pos + 1).min(bytes.len())..];
            let wide = maxval > 255;
            let need = if wide { 2 * n } else { n };
            if data.len() < need {
                return Err(CliError::input(format!("PGM has {} data bytes, needs {need}", data.len())));
            }
            if wide {
                data[..need].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64).collect()
            } else {
                data[..n].iter().map(|&b| b as f64 / maxval as f64).collect()
            }
        }
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let vals: Vec<f64> = text
                .split_whitespace()
                .take(n)
                .map(|t| t.parse::<f64>().map(|v| v / maxval as f64))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::input(format!("bad P2 sample: {e}")))?;
            if vals.len() != n {
                return Err(CliError::input("truncated P2 data"));
            }
            vals
        }
        other => return Err(CliError::input(format!("not a PGM file (magic {other:?})"))),
    };
    Ok(Image::clamped(height, width, values)?)
}

/// One image row per line.
pub fn image_csv(img: &Image) -> String {
    let mut s = String::new();
    for r in 0..img.height() {
        let row: Vec<String> = (0..img.width()).map(|c| fmt_f64(img.get(r, c))).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_image_csv(text: &str) -> CliResult<Image> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| l.split(',').map(|t| parse_f64(t, &format!("image row {i}"))).collect())
        .collect::<CliResult<_>>()?;
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(CliError::input("image CSV rows must be non-empty and of equal length"));
    }
    let height = rows.len();
    Image::new(height, width, rows.into_iter().flatten().collect())
        .map_err(|e| CliError::input(format!("image CSV: {e}")))
}

/// Loads `builtin:<name>[:<side>]`, a `.pgm` or a float `.csv` image.
pub fn load_image(spec: &str) -> CliResult<Image> {
    if let Some(rest) = spec.strip_prefix("builtin:") {
        let (name, size) = match rest.split_once(':') {
            Some((n, s)) => (n, s.parse::<usize>().map_err(|_| CliError::config(format!("bad builtin size in {spec:?}")))?),
            None => (rest, 32),
        };
        return Ok(phantoms::by_name(name, size)?);
    }
    let path = Path::new(spec);
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("{spec}: {e}")))?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm") => parse_pgm(&bytes),
        Some("csv") => parse_image_csv(&String::from_utf8_lossy(&bytes)),
        _ => Err(CliError::input(format!("{spec}: expected a .pgm or .csv image"))),
    }
    .map_err(|e| e.context(spec))
}

/// One bucket per line.
pub fn buckets_csv(b: &BucketSignals) -> String {
    b.values.iter().map(|v| fmt_f64(*v) + "\n").collect()
}

pub fn parse_buckets_csv(text: &str) -> CliResult<Vec<f64>> {
    let vals: Vec<f64> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| parse_f64(l, &format!("bucket {i}")))
        .collect::<CliResult<_>>()?;
    if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
        return Err(CliError::input(format!("bucket {i} is not finite")));
    }
    Ok(vals)
}

/// One binary pattern per line, pixels row-major.
pub fn patterns_csv(p: &PatternSet) -> String {
    let mut s = String::with_capacity(p.count() * p.pixels() * 2);
    for j in 0..p.count() {
        let row: Vec<&str> = p.row(j).iter().map(|&b| if b != 0 { "1" } else { "0" }).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// `dims` defaults to a square inferred from the row length.
pub fn parse_patterns_csv(text: &str, dims: Option<(usize, usize)>) -> CliResult<PatternSet> {
    let rows: Vec<Vec<u8>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|t| match t.trim() {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(CliError::input(format!("pattern {i}: entry {other:?} is not 0 or 1"))),
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    let len = rows.first().map_or(0, Vec::len);
    let (h, w) = match dims {
        Some(d) => d,
        None => {
            let side = (len as f64).sqrt().round() as usize;
            if side * side != len {
                return Err(CliError::input(format!("pattern length {len} is not a square; give the image size")));
            }
            (side, side)
        }
    };
    PatternSet::from_rows(h, w, &rows).map_err(|e| CliError::input(format!("patterns: {e}")))
}

/// Checkpoint header, stored as the first line of the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub model: ModelConfig,
    pub num_buckets: usize,
    /// Block names and lengths in storage order.
    pub blocks: Vec<(String, usize)>,
}

const CHECKPOINT_FORMAT: &str = "ghostqc-checkpoint-v1";

fn model_blocks(model: &HybridModel) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    if let Some(q) = &model.quantum {
        for (g, th) in q.thetas.iter().enumerate() {
            out.push((format!("theta[{g}]"), th.values().to_vec()));
        }
        for (g, w) in q.weights.iter().enumerate() {
            out.push((format!("weights[{g}]"), w.clone()));
        }
    }
    let p = model.decoder.params();
    for (name, t) in p.names.iter().zip(&p.tensors) {
        out.push((name.clone(), t.data().to_vec()));
    }
    out
}

/// JSON header line followed by little-endian f64 blocks in declaration order.
pub fn checkpoint_bytes(model: &HybridModel) -> Vec<u8> {
    let blocks = model_blocks(model);
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        model: model.config().clone(),
        num_buckets: model.num_buckets(),
        blocks: blocks.iter().map(|(n, v)| (n.clone(), v.len())).collect(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for (_, v) in &blocks {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn load_checkpoint(bytes: &[u8]) -> CliResult<HybridModel> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| CliError::input("checkpoint has no header line"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| CliError::input(format!("checkpoint header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(CliError::input(format!("unknown checkpoint format {:?}", header.format)));
    }
    let mut model = HybridModel::new(header.model.clone(), header.num_buckets)?;
    let expected: Vec<(String, usize)> = model_blocks(&model).into_iter().map(|(n, v)| (n, v.len())).collect();
    if expected != header.blocks {
        return Err(CliError::input("checkpoint block layout does not match its model config"));
    }
    let body = &bytes[nl + 1..];
    let total: usize = expected.iter().map(|b| b.1).sum();
    if body.len() != 8 * total {
        return Err(CliError::input(format!("checkpoint body has {} bytes, expected {}", body.len(), 8 * total)));
    }
    let mut vals = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
    if let Some(q) = model.quantum.as_mut() {
        for th in q.thetas.iter_mut() {
            *th = ParamVector(take(th.len()));
        }
        for w in q.weights.iter_mut() {
            *w = take(w.len());
        }
    }
    let mut params = model.decoder.params().clone();
    for t in params.tensors.iter_mut() {
        *t = Tensor::from_vec(t.shape(), take(t.len())).map_err(|e| CliError::input(format!("checkpoint: {e}")))?;
    }
    model.decoder.set_params(params)?;
    Ok(model)
}
