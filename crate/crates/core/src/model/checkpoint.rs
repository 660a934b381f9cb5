//! Checkpoint files: a line-oriented text manifest followed by the raw
//! little-endian `f32` arrays in manifest order.
//!
//! ```text
//! PITCH-EPV-CKPT 1
//! head success
//! grid 104 68
//! ...
//! temperature 1
//! meta epoch 12
//! param enc1.conv1.weight trainable 16 10 5 5
//! ...
//! end
//! <f32 data>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use pitch_autograd::{Tensor, TensorError};

use super::{HeadKind, ModelError, ModelSpec, PassNet};

pub const MAGIC: &str = "PITCH-EPV-CKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt checkpoint manifest: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("parameter `{name}`: checkpoint shape {found:?} does not match model shape {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint<W: Write>(net: &PassNet<f32>, mut w: W) -> Result<(), CheckpointError> {
    let spec = net.spec();
    let mut head = String::new();
    head.push_str(&format!("{MAGIC} {FORMAT_VERSION}\n"));
    head.push_str(&format!("head {}\n", spec.head.name()));
    head.push_str(&format!("grid {} {}\n", spec.grid.0, spec.grid.1));
    head.push_str(&format!("in_channels {}\n", spec.in_channels));
    head.push_str(&format!("encoder {}\n", join(&spec.encoder)));
    head.push_str(&format!("decoder {}\n", join(&spec.decoder)));
    head.push_str(&format!("kernel {}\n", spec.kernel));
    head.push_str(&format!("leaky_alpha {}\n", spec.leaky_alpha));
    head.push_str(&format!("temperature {}\n", net.temperature));
    for (k, v) in &net.meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(corrupt(format!("metadata entry `{k}` cannot be stored")));
        }
        head.push_str(&format!("meta {k} {v}\n"));
    }
    for (_, p) in net.store().iter() {
        let kind = if p.trainable { "trainable" } else { "fixed" };
        head.push_str(&format!("param {} {kind} {}\n", p.name, join(p.value.shape())));
    }
    head.push_str("end\n");
    w.write_all(head.as_bytes())?;
    for (_, p) in net.store().iter() {
        for &x in p.value.data() {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(net: &PassNet<f32>, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Manifest {
    spec: ModelSpec,
    temperature: f64,
    meta: BTreeMap<String, String>,
    params: Vec<(String, bool, Vec<usize>)>,
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, CheckpointError> {
    s.parse().map_err(|_| corrupt(format!("bad {what} `{s}`")))
}

fn parse_list(rest: &str, what: &str) -> Result<Vec<usize>, CheckpointError> {
    rest.split_whitespace().map(|t| parse_num(t, what)).collect()
}

fn read_manifest<R: BufRead>(r: &mut R) -> Result<Manifest, CheckpointError> {
    let mut line = String::new();
    let mut next = |r: &mut R| -> Result<String, CheckpointError> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(corrupt("manifest ends before `end`"));
        }
        if !line.ends_with('\n') {
            return Err(corrupt("manifest line is truncated"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    let first = next(r)?;
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|v| v.strip_prefix(' '))
        .ok_or_else(|| corrupt("missing checkpoint magic"))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(CheckpointError::Version { found: version.to_string() });
    }
    let mut field = |r: &mut R, key: &str| -> Result<String, CheckpointError> {
        let l = next(r)?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(corrupt(format!("expected `{key}`, found `{l}`"))),
        }
    };
    let head = field(r, "head")?;
    let head = HeadKind::parse(&head).ok_or_else(|| corrupt(format!("unknown head `{head}`")))?;
    let grid = parse_list(&field(r, "grid")?, "grid")?;
    let [gx, gy] = grid[..] else {
        return Err(corrupt("grid needs two dimensions"));
    };
    let in_channels = parse_num(&field(r, "in_channels")?, "in_channels")?;
    let encoder = parse_list(&field(r, "encoder")?, "encoder")?;
    let decoder = parse_list(&field(r, "decoder")?, "decoder")?;
    let kernel = parse_num(&field(r, "kernel")?, "kernel")?;
    let leaky_alpha = parse_num(&field(r, "leaky_alpha")?, "leaky_alpha")?;
    let temperature = parse_num(&field(r, "temperature")?, "temperature")?;
    let spec = ModelSpec {
        head,
        in_channels,
        grid: (gx, gy),
        encoder,
        decoder,
        kernel,
        leaky_alpha,
    };
    let mut meta = BTreeMap::new();
    let mut params = Vec::new();
    loop {
        let l = next(r)?;
        if l == "end" {
            break;
        }
        if let Some(rest) = l.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.insert(k.to_string(), v.to_string());
        } else if let Some(rest) = l.strip_prefix("param ") {
            let mut it = rest.split_whitespace();
            let name = it.next().ok_or_else(|| corrupt("param without name"))?;
            let trainable = match it.next() {
                Some("trainable") => true,
                Some("fixed") => false,
                other => return Err(corrupt(format!("param `{name}` has bad kind {other:?}"))),
            };
            let dims = it.map(|t| parse_num(t, "dimension")).collect::<Result<Vec<usize>, _>>()?;
            params.push((name.to_string(), trainable, dims));
        } else {
            return Err(corrupt(format!("unexpected manifest line `{l}`")));
        }
    }
    Ok(Manifest { spec, temperature, meta, params })
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<PassNet<f32>, CheckpointError> {
    let mut r = io::BufReader::new(r);
    let m = read_manifest(&mut r)?;
    if m.temperature.is_nan() || m.temperature <= 0.0 {
        return Err(corrupt(format!("temperature {} is not positive", m.temperature)));
    }
    let mut net = PassNet::<f32>::new(m.spec, 0)?;
    let expected: Vec<(String, bool, Vec<usize>)> = net
        .store()
        .iter()
        .map(|(_, p)| (p.name.clone(), p.trainable, p.value.shape().to_vec()))
        .collect();
    if expected.len() != m.params.len() {
        return Err(corrupt(format!(
            "manifest lists {} parameters, model has {}",
            m.params.len(),
            expected.len()
        )));
    }
    for ((name, trainable, dims), (ename, etrain, edims)) in m.params.iter().zip(&expected) {
        if name != ename || trainable != etrain {
            return Err(corrupt(format!("parameter `{name}` where `{ename}` was expected")));
        }
        if dims != edims {
            return Err(CheckpointError::Shape {
                name: name.clone(),
                expected: edims.clone(),
                found: dims.clone(),
            });
        }
    }
    let ids: Vec<_> = net.store().iter().map(|(id, _)| id).collect();
    for (id, (name, _, dims)) in ids.into_iter().zip(&m.params) {
        let n: usize = dims.iter().product();
        let mut data = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => corrupt(format!("data for `{name}` is truncated")),
            _ => CheckpointError::Io(e),
        })?;
        net.store_mut().get_mut(id).value = Tensor::new(dims.clone(), data)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(corrupt("trailing bytes after parameter data"));
    }
    net.store_mut().set_stats_ready(true);
    net.temperature = m.temperature;
    net.meta = m.meta;
    Ok(net)
}

pub fn load_checkpoint(path: &Path) -> Result<PassNet<f32>, CheckpointError> {
    read_checkpoint(fs::File::open(path)?)
}
