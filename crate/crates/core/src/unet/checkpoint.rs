//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "UNETCKPT"
//! version      u32
//! config       u32 depth, u32 base_channels, u32 in_channels,
//!              u32 num_classes, u32 input_size, u8 output head, u8 skip flag
//! table        u32 tensor count, then per tensor:
//!              u32 name length, UTF-8 name, u32 rank, rank x u32 extents
//! payload      f64 values of every tensor, in table order
//! ```
//!
//! Tensors are named `<layer>.weight` and `<layer>.bias`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{layer_plan, Layer, OutputHead, UNetConfig, UNetParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UNETCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn ckpt_err<T>(field: impl Into<String>, message: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint {
        field: field.into(),
        message: message.into(),
    })
}

fn put_u32(buf: &mut Vec<u8>, v: usize, field: &str) -> Result<()> {
    let v = u32::try_from(v).or_else(|_| ckpt_err(field, format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(params: &UNetParams, config: &UNetConfig) -> Result<Vec<u8>> {
    params.check_against(config)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut buf, config.depth, "config.depth")?;
    put_u32(&mut buf, config.base_channels, "config.base_channels")?;
    put_u32(&mut buf, config.in_channels, "config.in_channels")?;
    put_u32(&mut buf, config.num_classes, "config.num_classes")?;
    put_u32(&mut buf, config.input_size, "config.input_size")?;
    buf.push(config.output_head.as_byte());
    buf.push(config.skip_connections as u8);

    let entries: Vec<(String, &Tensor)> = params
        .layers()
        .iter()
        .flat_map(|l| {
            [
                (format!("{}.weight", l.name), &l.weight),
                (format!("{}.bias", l.name), &l.bias),
            ]
        })
        .collect();
    put_u32(&mut buf, entries.len(), "table.count")?;
    for (name, t) in &entries {
        put_u32(&mut buf, name.len(), "table.name")?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.shape().len(), "table.rank")?;
        for &e in t.shape() {
            put_u32(&mut buf, e, "table.extent")?;
        }
    }
    for (_, t) in &entries {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn save_checkpoint(params: &UNetParams, config: &UNetConfig, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(params, config)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos..self.pos.saturating_add(n)) {
            Some(s) => {
                self.pos += n;
                Ok(s)
            }
            None => ckpt_err(field, format!("truncated at byte {} (need {n} more bytes)", self.pos)),
        }
    }

    fn u32(&mut self, field: &str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(UNetParams, UNetConfig)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return ckpt_err("magic", "not a UNETCKPT file");
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return ckpt_err("version", format!("unsupported version {version}"));
    }
    let depth = r.u32("config.depth")?;
    let base_channels = r.u32("config.base_channels")?;
    let in_channels = r.u32("config.in_channels")?;
    let num_classes = r.u32("config.num_classes")?;
    let input_size = r.u32("config.input_size")?;
    let head = r.u8("config.output_head")?;
    let output_head = OutputHead::from_byte(head).map_or_else(
        || ckpt_err("config.output_head", format!("unknown head byte {head}")),
        Ok,
    )?;
    let skip_connections = match r.u8("config.skip_connections")? {
        0 => false,
        1 => true,
        b => return ckpt_err("config.skip_connections", format!("flag byte {b}")),
    };
    let config = UNetConfig {
        depth,
        base_channels,
        in_channels,
        num_classes,
        output_head,
        input_size,
        skip_connections,
    };
    let plan = layer_plan(&config).or_else(|e| ckpt_err("config", e.to_string()))?;

    let count = r.u32("table.count")?;
    if count != 2 * plan.len() {
        return ckpt_err(
            "table.count",
            format!("{count} tensors, config implies {}", 2 * plan.len()),
        );
    }
    let mut table = Vec::with_capacity(count);
    for i in 0..count {
        let field = |what: &str| format!("table[{i}].{what}");
        let len = r.u32(&field("name_length"))?;
        let name = std::str::from_utf8(r.take(len, &field("name"))?)
            .or_else(|_| ckpt_err(field("name"), "invalid UTF-8"))?
            .to_owned();
        let rank = r.u32(&field("rank"))?;
        if rank == 0 || rank > 8 {
            return ckpt_err(field("rank"), format!("rank {rank}"));
        }
        let shape = (0..rank)
            .map(|_| r.u32(&field("extents")))
            .collect::<Result<Vec<_>>>()?;
        let layer = &plan[i / 2];
        let (want_name, want_shape) = if i % 2 == 0 {
            (format!("{}.weight", layer.name), layer.kind.weight_shape())
        } else {
            (format!("{}.bias", layer.name), vec![layer.kind.out_channels()])
        };
        if name != want_name {
            return ckpt_err(field("name"), format!("found {name:?}, config implies {want_name:?}"));
        }
        if shape != want_shape {
            return ckpt_err(
                field("extents"),
                format!("{name} has shape {shape:?}, config implies {want_shape:?}"),
            );
        }
        table.push((name, shape));
    }

    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in &table {
        let n: usize = shape.iter().product();
        let field = format!("payload[{name}]");
        let raw = r.take(
            n.checked_mul(8).map_or_else(|| ckpt_err(&field, "size overflow"), Ok)?,
            &field,
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return ckpt_err(field, "non-finite value");
        }
        tensors.push(Tensor::from_vec(shape, data)?);
    }
    if r.pos != bytes.len() {
        return ckpt_err("payload", format!("{} trailing bytes", bytes.len() - r.pos));
    }

    let mut it = tensors.into_iter();
    let layers = plan
        .into_iter()
        .map(|p| Layer {
            name: p.name,
            weight: it.next().expect("counted"),
            bias: it.next().expect("counted"),
        })
        .collect();
    Ok((UNetParams::from_layers(layers), config))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UNetParams, UNetConfig)> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads a checkpoint and requires its config to equal `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &UNetConfig) -> Result<UNetParams> {
    let (params, config) = load_checkpoint(path)?;
    let fields = [
        ("depth", config.depth, expected.depth),
        ("base_channels", config.base_channels, expected.base_channels),
        ("in_channels", config.in_channels, expected.in_channels),
        ("num_classes", config.num_classes, expected.num_classes),
        ("input_size", config.input_size, expected.input_size),
        (
            "output_head",
            config.output_head.as_byte() as usize,
            expected.output_head.as_byte() as usize,
        ),
        (
            "skip_connections",
            config.skip_connections as usize,
            expected.skip_connections as usize,
        ),
    ];
    for (name, got, want) in fields {
        if got != want {
            return ckpt_err(
                format!("config.{name}"),
                format!("checkpoint has {got}, run expects {want}"),
            );
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::build;

    fn small() -> UNetConfig {
        UNetConfig {
            depth: 2,
            base_channels: 2,
            input_size: 8,
            ..UNetConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let config = UNetConfig {
            output_head: OutputHead::Softmax,
            ..small()
        };
        let params = build(&config, 5).unwrap();
        save_checkpoint(&params, &config, &path).unwrap();
        let (loaded, loaded_config) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_config, config);
        for (a, b) in params.tensors().zip(loaded.tensors()) {
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"UNETCKPT");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(bytes[32], 1); // softmax head
    }

    #[test]
    fn truncation_is_reported_at_every_cut() {
        let config = small();
        let bytes = encode_checkpoint(&build(&config, 1).unwrap(), &config).unwrap();
        for cut in [0, 5, 10, 20, 33, 40, 100, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint { .. }), "cut {cut}: {err}");
        }
        let err = decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("payload[head.bias]"), "{err}");
    }

    #[test]
    fn bad_magic_version_and_trailing_bytes() {
        let config = small();
        let good = encode_checkpoint(&build(&config, 1).unwrap(), &config).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = good.clone();
        bad[8] = 9;
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("version"));
        let mut bad = good.clone();
        bad.push(0);
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn inconsistent_table_names_the_field() {
        let config = small();
        let mut bytes = encode_checkpoint(&build(&config, 1).unwrap(), &config).unwrap();
        // First extent of the first tensor: magic 8 + version 4 + config 22
        // + count 4 + name length 4 + "enc0.conv1.weight" 17 + rank 4.
        let at = 8 + 4 + 22 + 4 + 4 + 17 + 4;
        assert_eq!(&bytes[at..at + 4], &2u32.to_le_bytes());
        bytes[at] = 3;
        let err = decode_checkpoint(&bytes).unwrap_err().to_string();
        assert!(err.contains("table[0].extents"), "{err}");
    }

    #[test]
    fn depth_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.ckpt");
        let deep = UNetConfig {
            depth: 4,
            base_channels: 1,
            input_size: 16,
            ..UNetConfig::default()
        };
        save_checkpoint(&build(&deep, 0).unwrap(), &deep, &path).unwrap();
        let shallow = UNetConfig {
            depth: 3,
            ..deep.clone()
        };
        let err = load_checkpoint_for(&path, &shallow).unwrap_err().to_string();
        assert!(err.contains("config.depth"), "{err}");
        assert!(load_checkpoint_for(&path, &deep).is_ok());
    }
}
