//! LP-format export of a checkpointed surrogate against a design
//! specification, for cross-checking with external solvers.

use anyhow::{Context, Result};
use dispatch_core::finetune::DesignSpecification;
use dispatch_core::milp::{encode, write_lp_format};
use dispatch_core::sampling::Hyperbox;
use dispatch_core::surrogate::load_checkpoint;
use std::io::{BufReader, Write};
use std::path::Path;

/// Load a model checkpoint and a specification file, map the
/// specification's output intervals through the checkpoint's
/// normalizer, and emit the feasibility program in LP text format.
pub fn export_lp(model_path: &Path, spec_path: &Path, mut out: &mut dyn Write) -> Result<()> {
    let file = std::fs::File::open(model_path)
        .with_context(|| format!("opening checkpoint {}", model_path.display()))?;
    let (params, normalizer) = load_checkpoint(BufReader::new(file))
        .with_context(|| format!("parsing checkpoint {}", model_path.display()))?;

    let spec_text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("reading spec {}", spec_path.display()))?;
    let spec: DesignSpecification = serde_json::from_str(&spec_text)
        .with_context(|| format!("parsing spec {}", spec_path.display()))?;
    let n_outputs = normalizer.output.len();
    spec.validate(n_outputs)?;

    let intervals: Vec<_> = spec
        .output_intervals(n_outputs)
        .into_iter()
        .enumerate()
        .map(|(k, iv)| iv.map(|iv| normalizer.normalize_output_interval(k, iv)))
        .collect();
    let program = encode(&params, &Hyperbox::unit(normalizer.input.len()), &intervals);
    write_lp_format(&program, &mut out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dispatch_core::finetune::{ConstraintKind, OutputConstraint};
    use dispatch_core::sampling::Interval;
    use dispatch_core::surrogate::{init_params, save_checkpoint, MlpSpec, Normalizer};

    #[test]
    fn exports_checkpoint_against_spec() {
        let dir = tempfile::tempdir().unwrap();
        let params = init_params(&MlpSpec::new(2, vec![6], 2).unwrap(), 9);
        let input_box = Hyperbox::new(vec![
            Interval::new(400.0, 800.0),
            Interval::new(1e-8, 1e-6),
        ])
        .unwrap();
        let normalizer = Normalizer::from_observations(
            &input_box,
            &[vec![-3.0, 500.0], vec![1.0, 2000.0]],
        )
        .unwrap();
        let model_path = dir.path().join("m.ckpt");
        let mut f = std::fs::File::create(&model_path).unwrap();
        save_checkpoint(&mut f, &params, &normalizer).unwrap();
        drop(f);

        let spec = DesignSpecification {
            constraints: vec![OutputConstraint {
                name: "bandwidth_hz".into(),
                output_index: 1,
                kind: ConstraintKind::Within(990.0, 1010.0),
                hard: true,
            }],
            target: None,
        };
        let spec_path = dir.path().join("spec.json");
        std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();

        let mut buf = Vec::new();
        export_lp(&model_path, &spec_path, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("Subject To"));
        assert!(text.contains("End"));
    }
}
