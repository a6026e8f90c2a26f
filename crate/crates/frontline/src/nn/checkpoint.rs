//! Model checkpoint container.
//!
//! Layout: the magic line `FRONTLINE-NN-1\n`, a little-endian u32 header
//! length, a JSON header (architecture config, model role, named tensor
//! shapes in order), then the tensors as little-endian 32-bit float blobs in
//! the declared layer order - weights, biases, batch-norm affine parameters,
//! and batch-norm running statistics. Adam state is not persisted.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::tensor::TensorGrid;
use crate::nn::unet::{ConvUnit, ModelRole, ParameterSet, UNet, UNetConfig};

pub const MAGIC: &[u8] = b"FRONTLINE-NN-1\n";

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Header {
    config: UNetConfig,
    role: ModelRole,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct TensorMeta {
    name: String,
    len: usize,
}

/// Declared tensor order for one conv unit.
fn conv_unit_tensors<'a>(name: &str, unit: &'a ConvUnit) -> Vec<(String, Vec<f64>)> {
    vec![
        (format!("{name}.w"), unit.w.value.data().to_vec()),
        (format!("{name}.b"), unit.b.value.clone()),
        (format!("{name}.bn_gamma"), unit.bn_gamma.value.clone()),
        (format!("{name}.bn_beta"), unit.bn_beta.value.clone()),
        (format!("{name}.running_mean"), unit.running_mean.clone()),
        (format!("{name}.running_var"), unit.running_var.clone()),
    ]
}

fn collect_tensors(params: &ParameterSet) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for (i, units) in params.encoder.iter().enumerate() {
        out.extend(conv_unit_tensors(&format!("enc{i}_conv0"), &units[0]));
        out.extend(conv_unit_tensors(&format!("enc{i}_conv1"), &units[1]));
    }
    out.extend(conv_unit_tensors("bottleneck_conv0", &params.bottleneck[0]));
    out.extend(conv_unit_tensors("bottleneck_conv1", &params.bottleneck[1]));
    for (j, level) in params.decoder.iter().enumerate() {
        out.push((format!("dec{j}_up.w"), level.up.w.value.data().to_vec()));
        out.push((format!("dec{j}_up.b"), level.up.b.value.clone()));
        out.extend(conv_unit_tensors(&format!("dec{j}_conv0"), &level.convs[0]));
        out.extend(conv_unit_tensors(&format!("dec{j}_conv1"), &level.convs[1]));
    }
    out.push(("final.w".into(), params.final_w.value.data().to_vec()));
    out.push(("final.b".into(), params.final_b.value.clone()));
    out
}

/// Writes a checkpoint atomically (temp file + rename).
pub fn save(model: &UNet, role: ModelRole, path: &Path) -> Result<()> {
    let tensors = collect_tensors(&model.params);
    let header = Header {
        config: model.config,
        role,
        tensors: tensors
            .iter()
            .map(|(name, v)| TensorMeta {
                name: name.clone(),
                len: v.len(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization failed: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for (_, values) in &tensors {
        for &v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint; Adam moments start fresh.
pub fn load(path: &Path) -> Result<(UNet, ModelRole)> {
    if !path.exists() {
        return Err(Error::ModelNotFound(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a frontline checkpoint",
            path.display()
        )));
    }
    let mut off = MAGIC.len();
    let hlen = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    off += 4;
    if bytes.len() < off + hlen {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[off..off + hlen])
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    off += hlen;

    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if bytes.len() != off + 4 * total {
        return Err(Error::Checkpoint(format!(
            "expected {} tensor bytes, found {}",
            4 * total,
            bytes.len() - off
        )));
    }

    let mut model = UNet::init(header.config, 0)?;
    let expected = collect_tensors(&model.params);
    if expected.len() != header.tensors.len()
        || expected
            .iter()
            .zip(&header.tensors)
            .any(|((name, v), meta)| *name != meta.name || v.len() != meta.len)
    {
        return Err(Error::Checkpoint(
            "tensor list does not match the declared architecture".into(),
        ));
    }

    let read_tensor = |len: usize, off: &mut usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            let raw = f32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap());
            v.push(raw as f64);
            *off += 4;
        }
        v
    };

    {
        let assign_unit = |unit: &mut ConvUnit, off: &mut usize| {
            let w_len = unit.w.value.len();
            let shape = unit.w.value.shape();
            unit.w.value = TensorGrid::from_vec(shape.0, shape.1, shape.2, shape.3, read_tensor(w_len, off))
                .expect("checkpoint tensor length already validated");
            unit.b.value = read_tensor(unit.b.value.len(), off);
            unit.bn_gamma.value = read_tensor(unit.bn_gamma.value.len(), off);
            unit.bn_beta.value = read_tensor(unit.bn_beta.value.len(), off);
            unit.running_mean = read_tensor(unit.running_mean.len(), off);
            unit.running_var = read_tensor(unit.running_var.len(), off);
        };
        let depth = model.config.depth;
        for i in 0..depth {
            assign_unit(&mut model.params.encoder[i][0], &mut off);
            assign_unit(&mut model.params.encoder[i][1], &mut off);
        }
        assign_unit(&mut model.params.bottleneck[0], &mut off);
        assign_unit(&mut model.params.bottleneck[1], &mut off);
        for j in 0..depth {
            let shape = model.params.decoder[j].up.w.value.shape();
            let len = model.params.decoder[j].up.w.value.len();
            model.params.decoder[j].up.w.value =
                TensorGrid::from_vec(shape.0, shape.1, shape.2, shape.3, read_tensor(len, &mut off))
                    .expect("checkpoint tensor length already validated");
            let blen = model.params.decoder[j].up.b.value.len();
            model.params.decoder[j].up.b.value = read_tensor(blen, &mut off);
            assign_unit(&mut model.params.decoder[j].convs[0], &mut off);
            assign_unit(&mut model.params.decoder[j].convs[1], &mut off);
        }
        let shape = model.params.final_w.value.shape();
        let len = model.params.final_w.value.len();
        model.params.final_w.value =
            TensorGrid::from_vec(shape.0, shape.1, shape.2, shape.3, read_tensor(len, &mut off))
                .expect("checkpoint tensor length already validated");
        let blen = model.params.final_b.value.len();
        model.params.final_b.value = read_tensor(blen, &mut off);
    }
    model.params.step = 0;
    Ok((model, header.role))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_values() {
        let config = UNetConfig {
            depth: 2,
            base_filters: 3,
            conv_kernel: 3,
            leaky_slope: 0.01,
            final_kernel: 3,
        };
        let model = UNet::init(config, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nn");
        save(&model, ModelRole::DistanceRegressor, &path).unwrap();
        let (loaded, role) = load(&path).unwrap();
        assert_eq!(role, ModelRole::DistanceRegressor);
        assert_eq!(loaded.config, model.config);
        for (a, b) in loaded
            .params
            .final_w
            .value
            .data()
            .iter()
            .zip(model.params.final_w.value.data())
        {
            assert_eq!(*a, *b as f32 as f64, "values must round-trip through f32");
        }
        // Saving the loaded model reproduces the file byte for byte.
        let path2 = dir.path().join("model2.nn");
        save(&loaded, role, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn missing_file_is_model_not_found() {
        assert!(matches!(
            load(Path::new("/nonexistent/model.nn")),
            Err(Error::ModelNotFound(_))
        ));
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.nn");
        std::fs::write(&path, b"NOT-A-CHECKPOINT").unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }
}
