//! Versioned textual checkpoints.
//!
//! Every float is stored as the hex of its IEEE-754 bits, so save -> load is
//! bit-exact. Frozen encoder and vocabulary weights are not stored; they are
//! reconstructed from their seeds and re-derived deterministically.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CotModel, LambdaKind, LambdaSpec, ModelSeeds, ModelSpec};
use crate::prompt_chain::PredictionMode;
use crate::tensor::Tensor;

const MAGIC: &str = "promptchain checkpoint v1";

fn hex_f64(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn parse_hex_f64(text: &str) -> Result<f64> {
    let bits = u64::from_str_radix(text, 16)
        .map_err(|_| Error::Parse(format!("bad float bits '{text}' in checkpoint")))?;
    Ok(f64::from_bits(bits))
}

pub fn save(model: &CotModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let dims = model.encoders.dims();
    out.push_str(&format!("encoder_seed {}\n", model.encoders.seed()));
    out.push_str(&format!("vocab_seed {}\n", model.vocab.seed()));
    out.push_str(&format!(
        "dims {} {} {}\n",
        dims.token, dims.image_feature, dims.joint
    ));
    out.push_str(&format!("classes {}\n", model.vocab.num_classes()));
    out.push_str(&format!("class_tokens {}\n", model.vocab.tokens_per_class()));
    out.push_str(&format!("chain_length {}\n", model.prompts.chain_length()));
    out.push_str(&format!("prompt_length {}\n", model.prompts.prompt_length()));
    out.push_str(&format!("temperature {}\n", hex_f64(model.temperature())));
    out.push_str(&format!("prediction {}\n", model.prediction_mode()));
    match &model.lambda {
        LambdaKind::Dynamic(_) => out.push_str("lambda dynamic\n"),
        LambdaKind::Fixed(c) => out.push_str(&format!("lambda fixed {}\n", hex_f64(*c))),
        LambdaKind::Absent => out.push_str("lambda none\n"),
    }
    out.push_str(&format!("chained_meta_nets {}\n", model.meta.is_chained()));
    for id in model.params.ids() {
        let tensor = model.params.get(id);
        out.push_str(&format!("tensor {}", model.params.name(id)));
        out.push_str(&format!(" {}", tensor.shape().len()));
        for d in tensor.shape() {
            out.push_str(&format!(" {d}"));
        }
        for v in tensor.data() {
            out.push_str(&format!(" {}", hex_f64(*v)));
        }
        out.push('\n');
    }
    out.push_str("end\n");

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

struct Header {
    encoder_seed: u64,
    vocab_seed: u64,
    dims: [usize; 3],
    classes: usize,
    class_tokens: usize,
    chain_length: usize,
    prompt_length: usize,
    temperature: f64,
    prediction: PredictionMode,
    lambda: LambdaSpec,
    chained_meta_nets: bool,
}

fn parse_header(lines: &mut std::str::Lines<'_>) -> Result<Header> {
    let mut encoder_seed = None;
    let mut vocab_seed = None;
    let mut dims = None;
    let mut classes = None;
    let mut class_tokens = None;
    let mut chain_length = None;
    let mut prompt_length = None;
    let mut temperature = None;
    let mut prediction = None;
    let mut lambda = None;
    let mut chained = None;

    let missing = |field: &str| Error::Parse(format!("checkpoint is missing '{field}'"));
    let parse_u64 = |v: &str, field: &str| -> Result<u64> {
        v.parse()
            .map_err(|_| Error::Parse(format!("bad value for '{field}' in checkpoint")))
    };

    for line in lines.by_ref() {
        if line.starts_with("tensor ") || line == "end" {
            // Header ends where tensors begin; the caller re-parses this
            // line, so push it back by returning early with what we have.
            return Err(Error::Parse("checkpoint header ended unexpectedly".into()));
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().ok_or_else(|| Error::Parse("empty checkpoint line".into()))?;
        let rest: Vec<&str> = parts.collect();
        match key {
            "encoder_seed" => encoder_seed = Some(parse_u64(rest[0], key)?),
            "vocab_seed" => vocab_seed = Some(parse_u64(rest[0], key)?),
            "dims" => {
                if rest.len() != 3 {
                    return Err(Error::Parse("dims line needs three values".into()));
                }
                dims = Some([
                    parse_u64(rest[0], key)? as usize,
                    parse_u64(rest[1], key)? as usize,
                    parse_u64(rest[2], key)? as usize,
                ]);
            }
            "classes" => classes = Some(parse_u64(rest[0], key)? as usize),
            "class_tokens" => class_tokens = Some(parse_u64(rest[0], key)? as usize),
            "chain_length" => chain_length = Some(parse_u64(rest[0], key)? as usize),
            "prompt_length" => prompt_length = Some(parse_u64(rest[0], key)? as usize),
            "temperature" => temperature = Some(parse_hex_f64(rest[0])?),
            "prediction" => prediction = Some(PredictionMode::parse(rest[0])?),
            "lambda" => {
                lambda = Some(match rest[0] {
                    "dynamic" => LambdaSpec::Dynamic,
                    "none" => LambdaSpec::Absent,
                    "fixed" => LambdaSpec::Fixed(parse_hex_f64(rest[1])?),
                    other => return Err(Error::Parse(format!("unknown lambda kind '{other}'"))),
                })
            }
            "chained_meta_nets" => {
                chained = Some(match rest[0] {
                    "true" => true,
                    "false" => false,
                    other => return Err(Error::Parse(format!("bad bool '{other}'"))),
                })
            }
            other => return Err(Error::Parse(format!("unknown checkpoint field '{other}'"))),
        }
        if encoder_seed.is_some()
            && vocab_seed.is_some()
            && dims.is_some()
            && classes.is_some()
            && class_tokens.is_some()
            && chain_length.is_some()
            && prompt_length.is_some()
            && temperature.is_some()
            && prediction.is_some()
            && lambda.is_some()
            && chained.is_some()
        {
            break;
        }
    }

    Ok(Header {
        encoder_seed: encoder_seed.ok_or_else(|| missing("encoder_seed"))?,
        vocab_seed: vocab_seed.ok_or_else(|| missing("vocab_seed"))?,
        dims: dims.ok_or_else(|| missing("dims"))?,
        classes: classes.ok_or_else(|| missing("classes"))?,
        class_tokens: class_tokens.ok_or_else(|| missing("class_tokens"))?,
        chain_length: chain_length.ok_or_else(|| missing("chain_length"))?,
        prompt_length: prompt_length.ok_or_else(|| missing("prompt_length"))?,
        temperature: temperature.ok_or_else(|| missing("temperature"))?,
        prediction: prediction.ok_or_else(|| missing("prediction"))?,
        lambda: lambda.ok_or_else(|| missing("lambda"))?,
        chained_meta_nets: chained.ok_or_else(|| missing("chained_meta_nets"))?,
    })
}

pub fn load(path: &Path) -> Result<CotModel> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(line) if line == MAGIC => {}
        other => {
            return Err(Error::Parse(format!(
                "not a checkpoint (expected '{MAGIC}', found '{}')",
                other.unwrap_or("")
            )))
        }
    }
    let header = parse_header(&mut lines)?;

    let spec = ModelSpec {
        dims: crate::encoders::EncoderDims {
            token: header.dims[0],
            image_feature: header.dims[1],
            joint: header.dims[2],
        },
        classes: header.classes,
        class_tokens: header.class_tokens,
        chain_length: header.chain_length,
        prompt_length: header.prompt_length,
        temperature: header.temperature,
        prediction: header.prediction,
        lambda: header.lambda,
        chained_meta_nets: header.chained_meta_nets,
    };
    // Trainable init seeds are irrelevant: every stored tensor overwrites the
    // fresh values below.
    let seeds = ModelSeeds {
        encoders: header.encoder_seed,
        vocab: header.vocab_seed,
        prompts: 0,
        meta_nets: 0,
        controller: 0,
    };
    let mut model = CotModel::build(&spec, &seeds)?;

    let mut restored = 0usize;
    for line in lines {
        if line == "end" {
            break;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("tensor") => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected tensor line, found '{}'",
                    other.unwrap_or("")
                )))
            }
        }
        let name = parts
            .next()
            .ok_or_else(|| Error::Parse("tensor line without a name".into()))?;
        let rank: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad rank for tensor '{name}'")))?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad shape for tensor '{name}'")))?;
            shape.push(d);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let v = parts
                .next()
                .ok_or_else(|| Error::Parse(format!("tensor '{name}' is truncated")))?;
            data.push(parse_hex_f64(v)?);
        }
        if parts.next().is_some() {
            return Err(Error::Parse(format!("tensor '{name}' has trailing values")));
        }

        let id = model
            .params
            .ids()
            .find(|&id| model.params.name(id) == name)
            .ok_or_else(|| Error::Parse(format!("checkpoint tensor '{name}' has no slot in the model")))?;
        let slot = model.params.get_mut(id);
        if slot.shape() != shape.as_slice() {
            return Err(Error::Parse(format!(
                "tensor '{name}' shape {:?} does not match the model's {:?}",
                shape,
                slot.shape()
            )));
        }
        *slot = if slot.requires_grad() {
            Tensor::new(shape, data)?.with_requires_grad()
        } else {
            Tensor::new(shape, data)?
        };
        restored += 1;
    }

    if restored != model.params.len() {
        return Err(Error::Parse(format!(
            "checkpoint restored {restored} tensors but the model has {}",
            model.params.len()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderDims;
    use crate::model::{LambdaSpec, ModelSeeds, ModelSpec};
    use crate::prompt_chain::PredictionMode;

    fn build_model(lambda: LambdaSpec, prediction: PredictionMode) -> CotModel {
        let spec = ModelSpec {
            dims: EncoderDims {
                token: 8,
                image_feature: 16,
                joint: 32,
            },
            classes: 4,
            class_tokens: 2,
            chain_length: 3,
            prompt_length: 2,
            temperature: 0.01,
            prediction,
            lambda,
            chained_meta_nets: true,
        };
        let seeds = ModelSeeds {
            encoders: 51,
            vocab: 52,
            prompts: 53,
            meta_nets: 54,
            controller: 55,
        };
        CotModel::build(&spec, &seeds).unwrap()
    }

    fn assert_bit_equal(a: &CotModel, b: &CotModel) {
        assert_eq!(a.frozen_hashes(), b.frozen_hashes());
        assert_eq!(a.params.len(), b.params.len());
        for (ia, ib) in a.params.ids().zip(b.params.ids()) {
            assert_eq!(a.params.name(ia), b.params.name(ib));
            let ta = a.params.get(ia);
            let tb = b.params.get(ib);
            assert_eq!(ta.shape(), tb.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(ta), bits(tb));
        }
        assert_eq!(a.temperature().to_bits(), b.temperature().to_bits());
        assert_eq!(a.prediction_mode(), b.prediction_mode());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("promptchain-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.txt");

        let mut model = build_model(LambdaSpec::Dynamic, PredictionMode::Final);
        // Touch the parameters so the file is not just an init snapshot.
        for id in model.params.trainable_ids() {
            for v in model.params.get_mut(id).data_mut() {
                *v += 0.001953125; // 2^-9, exactly representable
            }
        }
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_bit_equal(&model, &loaded);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn fixed_lambda_round_trips_exactly() {
        let dir = std::env::temp_dir().join("promptchain-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("fixed.txt");

        let model = build_model(LambdaSpec::Fixed(0.7), PredictionMode::ConcatK(2));
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();
        match loaded.lambda {
            crate::model::LambdaKind::Fixed(c) => assert_eq!(c.to_bits(), 0.7_f64.to_bits()),
            _ => panic!("lambda kind lost"),
        }
        assert_eq!(loaded.prediction_mode(), PredictionMode::ConcatK(2));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn garbage_files_are_rejected() {
        let dir = std::env::temp_dir().join("promptchain-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.txt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(matches!(load(&path), Err(Error::Parse(_))));
        std::fs::remove_file(&path).unwrap();
    }
}
