//! Versioned plain-text parameter dump.
//!
//! ```text
//! adv-sdf-checkpoint 1
//! hidden_layers 8
//! hidden_width 256
//! skip_layer 4            (or `none`)
//! activation relu         (or `softplus <beta>`)
//! init geometric 0.5      (or `uniform-he`)
//! seed 0
//! lambda1 1e0
//! lambda2 1e0
//! layer <out> <in>
//! <in weights per line, out lines>
//! <out biases>
//! ...
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{layer_shapes, Activation, Dense, FieldConfig, FieldParams, InitScheme};
use crate::error::{Error, Result};

const MAGIC: &str = "adv-sdf-checkpoint";
const VERSION: u32 = 1;

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint(params: &FieldParams, mut w: impl Write) -> std::io::Result<()> {
    let c = &params.config;
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(w, "hidden_layers {}", c.hidden_layers)?;
    writeln!(w, "hidden_width {}", c.hidden_width)?;
    match c.skip_layer {
        Some(s) => writeln!(w, "skip_layer {s}")?,
        None => writeln!(w, "skip_layer none")?,
    }
    match c.activation {
        Activation::Relu => writeln!(w, "activation relu")?,
        Activation::Softplus { beta } => writeln!(w, "activation softplus {beta:e}")?,
    }
    match c.init {
        InitScheme::Geometric { radius } => writeln!(w, "init geometric {radius:e}")?,
        InitScheme::UniformHe => writeln!(w, "init uniform-he")?,
    }
    writeln!(w, "seed {}", c.seed)?;
    writeln!(w, "lambda1 {:e}", params.lambda1)?;
    writeln!(w, "lambda2 {:e}", params.lambda2)?;
    for d in &params.layers {
        writeln!(w, "layer {} {}", d.out_dim(), d.in_dim())?;
        for row in d.weight.rows() {
            writeln!(w, "{}", join(row.iter().copied()))?;
        }
        writeln!(w, "{}", join(d.bias.iter().copied()))?;
    }
    w.flush()
}

pub fn save_checkpoint(params: &FieldParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::Checkpoint(format!("line {}: {e}", self.line))),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.line))
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let l = self.next()?;
        let mut tokens = l.split_whitespace();
        if tokens.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(tokens.map(str::to_owned).collect())
    }

    fn parse<T: std::str::FromStr>(&self, token: Option<&String>) -> Result<T> {
        token
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| self.err("malformed value"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let l = self.next()?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| self.err(e))?;
        if v.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(self.err("non-finite value"));
        }
        Ok(v)
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<FieldParams> {
    let mut lines = Lines {
        inner: BufReader::new(r).lines(),
        line: 0,
    };
    let header = lines.keyed(MAGIC)?;
    let version: u32 = lines.parse(header.first())?;
    if version != VERSION {
        return Err(lines.err(format!("unsupported version {version}")));
    }
    let t = lines.keyed("hidden_layers")?;
    let hidden_layers = lines.parse(t.first())?;
    let t = lines.keyed("hidden_width")?;
    let hidden_width = lines.parse(t.first())?;
    let t = lines.keyed("skip_layer")?;
    let skip_layer = match t.first().map(String::as_str) {
        Some("none") => None,
        _ => Some(lines.parse(t.first())?),
    };
    let t = lines.keyed("activation")?;
    let activation = match t.first().map(String::as_str) {
        Some("relu") => Activation::Relu,
        Some("softplus") => Activation::Softplus {
            beta: lines.parse(t.get(1))?,
        },
        _ => return Err(lines.err("unknown activation")),
    };
    let t = lines.keyed("init")?;
    let init = match t.first().map(String::as_str) {
        Some("geometric") => InitScheme::Geometric {
            radius: lines.parse(t.get(1))?,
        },
        Some("uniform-he") => InitScheme::UniformHe,
        _ => return Err(lines.err("unknown init scheme")),
    };
    let t = lines.keyed("seed")?;
    let seed = lines.parse(t.first())?;
    let t = lines.keyed("lambda1")?;
    let lambda1: f64 = lines.parse(t.first())?;
    let t = lines.keyed("lambda2")?;
    let lambda2: f64 = lines.parse(t.first())?;
    if !(lambda1 > 0.0 && lambda2 > 0.0) {
        return Err(lines.err("loss weights must be positive"));
    }

    let config = FieldConfig {
        hidden_layers,
        hidden_width,
        skip_layer,
        activation,
        init,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut layers = Vec::new();
    for (out, inp) in layer_shapes(&config) {
        let t = lines.keyed("layer")?;
        let dims: (usize, usize) = (lines.parse(t.first())?, lines.parse(t.get(1))?);
        if dims != (out, inp) {
            return Err(lines.err(format!(
                "layer shape {dims:?} does not match config ({out}, {inp})"
            )));
        }
        let mut weight = Vec::with_capacity(out * inp);
        for _ in 0..out {
            weight.extend(lines.floats(inp)?);
        }
        let bias = lines.floats(out)?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((out, inp), weight).expect("shape checked"),
            bias: Array1::from(bias),
        });
    }
    Ok(FieldParams {
        config,
        layers,
        lambda1,
        lambda2,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FieldParams> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}

#[cfg(test)]
mod tests {
    use super::super::init_field;
    use super::*;

    fn roundtrip(p: &FieldParams) -> FieldParams {
        let mut buf = Vec::new();
        write_checkpoint(p, &mut buf).unwrap();
        read_checkpoint(&buf[..]).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for cfg in [
            FieldConfig {
                hidden_layers: 3,
                hidden_width: 7,
                skip_layer: Some(1),
                seed: 11,
                ..FieldConfig::default()
            },
            FieldConfig {
                hidden_layers: 2,
                hidden_width: 5,
                skip_layer: None,
                activation: Activation::Softplus { beta: 100.0 },
                init: InitScheme::UniformHe,
                seed: 12,
            },
        ] {
            let mut p = init_field(&cfg).unwrap();
            p.lambda1 = 0.1 + 0.2;
            p.lambda2 = 1e-6;
            let q = roundtrip(&p);
            assert_eq!(p.config, q.config);
            assert!(p.values().zip(q.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        let p = init_field(&FieldConfig {
            hidden_layers: 1,
            hidden_width: 2,
            skip_layer: None,
            ..FieldConfig::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let bad_version = text.replacen("adv-sdf-checkpoint 1", "adv-sdf-checkpoint 9", 1);
        assert!(read_checkpoint(bad_version.as_bytes()).is_err());
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(read_checkpoint(truncated.as_bytes()).is_err());
        let bad_shape = text.replacen("layer 2 3", "layer 3 3", 1);
        assert!(read_checkpoint(bad_shape.as_bytes()).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.ckpt");
        let p = FieldParams::linear([0.5, -0.25, 1.0], 0.125);
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
    }
}
