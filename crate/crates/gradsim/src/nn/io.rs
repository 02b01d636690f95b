//! Versioned parameter container.
//!
//! JSON keeps the file self-describing and diff-friendly; `f64` values are
//! written in shortest round-trip form, so save → load reproduces every bit.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::params::ParamVector;
use crate::nn::spec::NetworkSpec;
use crate::{Error, Result};

const FORMAT: &str = "gradsim-params";
const VERSION: u32 = 1;
/// Flattening convention: layer-major, weights before bias, weights row-major.
const LAYOUT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamContainer {
    format: String,
    version: u32,
    layout_version: u32,
    spec: NetworkSpec,
    values: Vec<f64>,
}

fn file_error(path: &Path, message: impl Into<String>) -> Error {
    Error::ParamFile {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn save_params(
    path: impl AsRef<Path>,
    spec: &NetworkSpec,
    params: &ParamVector,
) -> Result<()> {
    let path = path.as_ref();
    spec.validate()?;
    if params.len() != spec.param_count() {
        return Err(file_error(
            path,
            format!(
                "parameter vector has {} values but the spec needs {}",
                params.len(),
                spec.param_count()
            ),
        ));
    }
    let container = ParamContainer {
        format: FORMAT.to_string(),
        version: VERSION,
        layout_version: LAYOUT_VERSION,
        spec: spec.clone(),
        values: params.values().to_vec(),
    };
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, &container)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// Load a container, returning the embedded spec along with the parameters.
pub fn load_params(path: impl AsRef<Path>) -> Result<(NetworkSpec, ParamVector)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let container: ParamContainer = serde_json::from_reader(BufReader::new(file))?;
    if container.format != FORMAT {
        return Err(file_error(
            path,
            format!("unrecognized format tag {:?}", container.format),
        ));
    }
    if container.version != VERSION {
        return Err(file_error(
            path,
            format!(
                "unsupported container version {} (this build reads {VERSION})",
                container.version
            ),
        ));
    }
    if container.layout_version != LAYOUT_VERSION {
        return Err(file_error(
            path,
            format!(
                "unsupported layout version {} (this build reads {LAYOUT_VERSION})",
                container.layout_version
            ),
        ));
    }
    container
        .spec
        .validate()
        .map_err(|e| file_error(path, format!("embedded spec invalid: {e}")))?;
    let layout = container.spec.layout();
    if container.values.len() != layout.total {
        return Err(file_error(
            path,
            format!(
                "value count {} does not match the embedded spec's {} parameters",
                container.values.len(),
                layout.total
            ),
        ));
    }
    let params = ParamVector::new(container.values, layout)?;
    Ok((container.spec, params))
}

/// Load parameters that must belong to `expected`; any spec difference is
/// rejected rather than reinterpreted.
pub fn load_params_with_spec(
    path: impl AsRef<Path>,
    expected: &NetworkSpec,
) -> Result<ParamVector> {
    let path = path.as_ref();
    let (spec, params) = load_params(path)?;
    if &spec != expected {
        return Err(file_error(
            path,
            format!(
                "container was saved for layer sizes {:?}, expected {:?}",
                spec.layer_sizes, expected.layer_sizes
            ),
        ));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Activation;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let spec = NetworkSpec::mlp(vec![3, 16, 2], Activation::Tanh).unwrap();
        let params = ParamVector::init(&spec, 99);
        save_params(&path, &spec, &params).unwrap();
        let (loaded_spec, loaded) = load_params(&path).unwrap();
        assert_eq!(loaded_spec, spec);
        assert_eq!(loaded.values(), params.values());
        assert_eq!(loaded.layout(), params.layout());

        // And again through the full cycle to make sure nothing drifts.
        save_params(&path, &loaded_spec, &loaded).unwrap();
        let (_, again) = load_params(&path).unwrap();
        assert_eq!(again.values(), params.values());
    }

    #[test]
    fn wrong_spec_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let spec = NetworkSpec::mlp(vec![3, 8, 1], Activation::Tanh).unwrap();
        save_params(&path, &spec, &ParamVector::init(&spec, 0)).unwrap();
        let other = NetworkSpec::mlp(vec![3, 9, 1], Activation::Tanh).unwrap();
        match load_params_with_spec(&path, &other) {
            Err(Error::ParamFile { message, .. }) => {
                assert!(message.contains("layer sizes"), "{message}");
            }
            other => panic!("expected ParamFile error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_versions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let spec = NetworkSpec::mlp(vec![2, 4, 1], Activation::Tanh).unwrap();
        save_params(&path, &spec, &ParamVector::init(&spec, 0)).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 999");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_params(&path), Err(Error::ParamFile { .. })));
    }
}
