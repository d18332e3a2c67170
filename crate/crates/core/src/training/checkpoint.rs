//! Checkpoint layout: a text header of `key = value` lines ending with an
//! `end` line, then the tensors as consecutive binary records. The header
//! holds the model config, variant, progress counters, Adam state scalars
//! and one `tensor.<i> = <kind> <name> <offset>` entry per record, with
//! offsets relative to the first byte after the header.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::kv::Kv;
use crate::model::{check_layout, ModelConfig, TransCt, Variant};
use crate::tensor::{io, AdamConfig, AdamState, ParamSet, Tensor};

const MAGIC_LINE: &str = "# transct checkpoint 1";
const END_LINE: &str = "end";

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: TransCt<f32>,
    pub adam: AdamState<f32>,
    /// Next epoch to run.
    pub epoch: usize,
    pub steps: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut table = Vec::new();
        for p in self.model.params.iter() {
            table.push(format!("param {} {}", p.name, payload.len()));
            io::encode_into(&p.value, &mut payload)?;
        }
        for (name, (m, v)) in &self.adam.moments {
            for (kind, data) in [("m", m), ("v", v)] {
                table.push(format!("{kind} {name} {}", payload.len()));
                io::encode_into(&Tensor::new(&[data.len()], data.clone())?, &mut payload)?;
            }
        }
        let mut head = format!("{MAGIC_LINE}\n");
        let _ = writeln!(head, "variant = {}", self.model.variant);
        let _ = writeln!(head, "epoch = {}", self.epoch);
        let _ = writeln!(head, "steps = {}", self.steps);
        self.model.config.write_kv("model", &mut head);
        let a = &self.adam.config;
        let _ = writeln!(head, "adam.beta1 = {:?}", a.beta1);
        let _ = writeln!(head, "adam.beta2 = {:?}", a.beta2);
        let _ = writeln!(head, "adam.eps = {:?}", a.eps);
        let _ = writeln!(head, "adam.t = {}", self.adam.t);
        let _ = writeln!(head, "tensors = {}", table.len());
        for (i, t) in table.iter().enumerate() {
            let _ = writeln!(head, "tensor.{i} = {t}");
        }
        let _ = writeln!(head, "{END_LINE}");
        let mut out = head.into_bytes();
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(MAGIC_LINE.as_bytes()) {
            return Err(Error::Parse {
                offset: 0,
                message: "not a transct checkpoint (bad magic line)".into(),
            });
        }
        let marker = format!("\n{END_LINE}\n");
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker.as_bytes())
            .ok_or_else(|| Error::Parse {
                offset: bytes.len() as u64,
                message: "checkpoint header has no end line".into(),
            })?;
        let payload_start = end + marker.len();
        let header = std::str::from_utf8(&bytes[..end]).map_err(|e| Error::Parse {
            offset: e.valid_up_to() as u64,
            message: "checkpoint header is not UTF-8".into(),
        })?;
        let parse_err = |e: Error| match e {
            Error::Config(m) => Error::Parse { offset: 0, message: format!("checkpoint header: {m}") },
            other => other,
        };
        let mut kv = Kv::parse(header).map_err(parse_err)?;
        let (variant, epoch, steps, config, adam_cfg, t, n) = (|| -> Result<_> {
            let variant: Variant = kv.require::<String>("variant")?.parse()?;
            let epoch: usize = kv.require("epoch")?;
            let steps: u64 = kv.require("steps")?;
            let mut config = ModelConfig::default();
            config.read_kv(&mut kv, "model")?;
            let adam_cfg = AdamConfig {
                beta1: kv.require("adam.beta1")?,
                beta2: kv.require("adam.beta2")?,
                eps: kv.require("adam.eps")?,
            };
            let t: u64 = kv.require("adam.t")?;
            let n: usize = kv.require("tensors")?;
            Ok((variant, epoch, steps, config, adam_cfg, t, n))
        })()
        .map_err(parse_err)?;

        let mut params = ParamSet::new();
        let mut moments: IndexMap<String, (Vec<f32>, Vec<f32>)> = IndexMap::new();
        let mut expected_offset = 0usize;
        for i in 0..n {
            let key = format!("tensor.{i}");
            let entry: String = kv.require(&key).map_err(parse_err)?;
            let line_offset = header.find(&format!("\n{key} =")).map_or(0, |p| p + 1) as u64;
            let bad = |m: String| Error::Parse { offset: line_offset, message: m };
            let fields: Vec<&str> = entry.split_whitespace().collect();
            let [kind, name, off] = fields[..] else {
                return Err(bad(format!("{key}: expected `<kind> <name> <offset>`, got {entry:?}")));
            };
            let off: usize = off.parse().map_err(|_| bad(format!("{key}: bad offset {off:?}")))?;
            if off != expected_offset || payload_start + off > bytes.len() {
                return Err(bad(format!("{key}: offset {off} does not match the record layout")));
            }
            let abs = payload_start + off;
            let (record, used) = io::decode(&bytes[abs..], abs as u64)?;
            expected_offset += used;
            let tensor = record.into_tensor::<f32>()?;
            match kind {
                "param" => params.insert(name, tensor.detach_with_grad(true))?,
                "m" => moments.entry(name.to_string()).or_default().0 = tensor.to_vec(),
                "v" => moments.entry(name.to_string()).or_default().1 = tensor.to_vec(),
                other => return Err(bad(format!("{key}: unknown tensor kind {other:?}"))),
            }
        }
        kv.reject_unknown().map_err(parse_err)?;
        if payload_start + expected_offset != bytes.len() {
            return Err(Error::Parse {
                offset: (payload_start + expected_offset) as u64,
                message: "trailing bytes after the last tensor record".into(),
            });
        }
        let model = TransCt::from_params(config, variant, params)?;
        Ok(Checkpoint {
            model,
            adam: AdamState { config: adam_cfg, t, moments },
            epoch,
            steps,
        })
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ck.to_bytes()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads and insists on a given architecture; the error lists differing
/// config fields and the first parameter that does not fit.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    variant: Variant,
) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.model.config == *config && ck.model.variant == variant {
        return Ok(ck);
    }
    let mut parts = ck.model.config.diff(config);
    if ck.model.variant != variant {
        parts.push(format!("variant ({} vs {variant})", ck.model.variant));
    }
    let mut msg = format!("checkpoint vs requested config differ in {}", parts.join(", "));
    let wanted = TransCt::<f32>::new(config.clone(), variant, 0)?;
    if let Err(Error::CheckpointMismatch(p)) = check_layout(&wanted.params, &ck.model.params) {
        msg.push_str(&format!("; first mismatch: {p}"));
    }
    Err(Error::CheckpointMismatch(msg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig { width: 0.125, n_heads: 2, ffn_mult: 1, ..Default::default() };
        let model = TransCt::new(cfg, Variant::Full, 3).unwrap();
        let mut adam = AdamState::new(AdamConfig::default());
        adam.t = 7;
        let p = model.params.iter().next().unwrap();
        adam.moments.insert(p.name.clone(), (vec![0.5; p.value.len()], vec![0.25; p.value.len()]));
        Checkpoint { model, adam, epoch: 2, steps: 7 }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let a = sample().to_bytes().unwrap();
        let b = Checkpoint::from_bytes(&a).unwrap().to_bytes().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loaded_model_computes_the_same() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let x = Tensor::full(&[1, 1, 64, 64], 0.7);
        assert_eq!(ck.model.denoise(&x).unwrap().data(), back.model.denoise(&x).unwrap().data());
        assert_eq!(back.epoch, 2);
        assert_eq!(back.adam.t, 7);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Parse { offset: 0, .. })));

        let text_end = bytes.windows(5).position(|w| w == b"\nend\n").unwrap() + 5;
        let mut bad = bytes.clone();
        bad[text_end] = b'Q';
        match Checkpoint::from_bytes(&bad) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, text_end as u64),
            other => panic!("{other:?}"),
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn mismatched_width_names_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tct");
        let ck = sample();
        save_checkpoint(&ck, &path).unwrap();
        let other = ModelConfig { width: 0.25, ..ck.model.config.clone() };
        let err = load_checkpoint_expecting(&path, &other, Variant::Full).unwrap_err().to_string();
        assert!(err.contains("width") && err.contains("lf.trunk.0.w"), "{err}");
        assert!(load_checkpoint_expecting(&path, &ck.model.config, Variant::Full).is_ok());
    }
}
