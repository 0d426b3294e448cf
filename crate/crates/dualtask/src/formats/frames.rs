//! Frame feature files: a text layout with a `video_id<TAB>n_frames<TAB>dim`
//! header per video, and the equivalent little-endian binary layout `DTFF`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dualtask_core::Tensor2;

use super::binary::{Decoder, Encoder};
use super::{read_bytes, write_bytes};

const MAGIC: &[u8; 4] = b"DTFF";
const VERSION: u32 = 1;

pub type FrameMap = BTreeMap<String, Tensor2>;

pub fn parse_text(text: &str) -> Result<FrameMap> {
    let mut out = BTreeMap::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    while let Some((n, header)) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = header.split('\t').collect();
        ensure!(fields.len() == 3, "line {n}: expected header video_id<TAB>n_frames<TAB>dim");
        let rows: usize = fields[1].trim().parse().with_context(|| format!("line {n}: bad frame count"))?;
        let cols: usize = fields[2].trim().parse().with_context(|| format!("line {n}: bad dimension"))?;
        ensure!(rows > 0 && cols > 0, "line {n}: video {} has no frames or zero dimension", fields[0]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let Some((m, line)) = lines.next() else {
                bail!("video {}: file ends before its {rows} frames", fields[0]);
            };
            let before = data.len();
            for v in line.split_whitespace() {
                data.push(v.parse::<f64>().with_context(|| format!("line {m}: bad number {v:?}"))?);
            }
            ensure!(data.len() - before == cols, "line {m}: expected {cols} values, found {}", data.len() - before);
        }
        ensure!(data.iter().all(|x| x.is_finite()), "video {}: non-finite frame value", fields[0]);
        let t = Tensor2::from_vec(rows, cols, data)?;
        ensure!(out.insert(fields[0].to_string(), t).is_none(), "line {n}: video {} listed twice", fields[0]);
    }
    Ok(out)
}

pub fn format_text(frames: &FrameMap) -> String {
    let mut s = String::new();
    for (vid, t) in frames {
        writeln!(s, "{vid}\t{}\t{}", t.rows(), t.cols()).unwrap();
        for r in t.row_iter() {
            let line: Vec<String> = r.iter().map(|x| x.to_string()).collect();
            writeln!(s, "{}", line.join(" ")).unwrap();
        }
    }
    s
}

pub fn encode_binary(frames: &FrameMap) -> Vec<u8> {
    let mut e = Encoder::new(MAGIC, VERSION);
    e.usize(frames.len());
    for (vid, t) in frames {
        e.str(vid);
        e.usize(t.rows());
        e.usize(t.cols());
        e.f64s(t.data());
    }
    e.finish()
}

pub fn decode_binary(bytes: &[u8]) -> Result<FrameMap> {
    let (mut d, version) = Decoder::open(bytes, MAGIC, "frame feature")?;
    ensure!(version == VERSION, "unsupported frame file version {version}");
    let n = d.usize()?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let vid = d.str()?;
        let (rows, cols) = (d.usize()?, d.usize()?);
        ensure!(rows > 0 && cols > 0, "video {vid} has no frames or zero dimension");
        let data = d.f64s(rows * cols)?;
        ensure!(data.iter().all(|x| x.is_finite()), "video {vid}: non-finite frame value");
        ensure!(out.insert(vid.clone(), Tensor2::from_vec(rows, cols, data)?).is_none(), "video {vid} listed twice");
    }
    d.finish()?;
    Ok(out)
}

/// Reads either layout, recognising the binary one by its magic bytes.
pub fn read_frames(path: &Path) -> Result<FrameMap> {
    let bytes = read_bytes(path)?;
    let frames = if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)
    } else {
        std::str::from_utf8(&bytes).map_err(anyhow::Error::from).and_then(parse_text)
    }
    .with_context(|| format!("in {}", path.display()))?;
    ensure!(!frames.is_empty(), "{} holds no videos", path.display());
    Ok(frames)
}

/// Writes the text layout when the path ends in `.txt` or `.tsv`, binary
/// otherwise.
pub fn write_frames(path: &Path, frames: &FrameMap) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("txt" | "tsv") => write_bytes(path, format_text(frames).as_bytes()),
        _ => write_bytes(path, &encode_binary(frames)),
    }
}

/// The shared frame dimension of every video.
pub fn common_dim(frames: &FrameMap) -> Result<usize> {
    let mut dims = frames.iter().map(|(v, t)| (v, t.cols()));
    let (_, dim) = dims.next().context("no videos")?;
    for (v, d) in dims {
        ensure!(d == dim, "video {v} has {d}-dimensional frames, others have {dim}");
    }
    Ok(dim)
}
