//! Run-directory artifacts: the files a `recover` run leaves behind.
//!
//! Every run writes `expression.txt`, `metrics.csv`, `candidates.tsv`,
//! `loss_trace.csv`, the resolved `config.json`, and a `model.satw`
//! parameter checkpoint. All files except the runtime column of
//! `metrics.csv` are deterministic for a fixed config and seed.

use crate::config::RunConfig;
use crate::satw::write_satw;
use satform_core::pipeline::{MetricsReport, PipelineResult};
use std::fs;
use std::io;
use std::path::Path;

pub const METRICS_HEADER: &str = "task,r2,mae,rmse,nodes,runtime_s";

/// Render an optional R² (absent when the target has zero variance).
fn r2_field(m: &MetricsReport) -> String {
    match m.r2 {
        Some(v) => format!("{v}"),
        None => "undefined".to_string(),
    }
}

/// One metrics row matching [`METRICS_HEADER`].
pub fn metrics_row(task: &str, m: &MetricsReport, nodes: usize, runtime_s: f64) -> String {
    format!(
        "{task},{},{},{},{nodes},{runtime_s}",
        r2_field(m),
        m.mae,
        m.rmse
    )
}

/// Write every artifact for a finished recovery run.
pub fn write_run_dir(
    dir: &Path,
    task: &str,
    result: &PipelineResult,
    config: &RunConfig,
    runtime_s: f64,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;

    fs::write(dir.join("expression.txt"), format!("{}\n", result.expr))?;

    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    metrics.push_str(&metrics_row(task, &result.held_out, result.nodes, runtime_s));
    metrics.push('\n');
    fs::write(dir.join("metrics.csv"), metrics)?;

    let mut cands = String::from("expression\tnodes\tmse\tce\tphy\ttotal\n");
    for s in &result.candidates {
        let total = s.refined.mse + s.ce + s.refined.phy;
        cands.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            s.refined.expr,
            s.refined.expr.node_count(),
            s.refined.mse,
            s.ce,
            s.refined.phy,
            total
        ));
    }
    fs::write(dir.join("candidates.tsv"), cands)?;

    let mut trace = String::from("stage,epoch,loss\n");
    for (i, v) in result.stage1_trace.iter().enumerate() {
        trace.push_str(&format!("1,{i},{v}\n"));
    }
    for (i, v) in result.ce_trace.iter().enumerate() {
        trace.push_str(&format!("2,{i},{v}\n"));
    }
    fs::write(dir.join("loss_trace.csv"), trace)?;

    config
        .save(&dir.join("config.json"))
        .map_err(|e| io::Error::other(e.to_string()))?;

    write_satw(&dir.join("model.satw"), &result.params)
        .map_err(|e| io::Error::other(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use satform_core::nn::{EncoderConfig, SeqModelConfig};
    use satform_core::pipeline::{run_pipeline, TrainConfig};
    use satform_core::search::BeamConfig;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            seed: 4,
            n_samples: 4,
            scene_side: 16,
            stage1_epochs: 2,
            stage2_epochs: 25,
            enc: EncoderConfig {
                patch_size: 4,
                embed_dim: 8,
                stages: 1,
                blocks_per_stage: 1,
                window: 4,
                heads: 2,
                out_dim: 16,
                per_band: false,
            },
            seq: SeqModelConfig {
                layers: 1,
                heads: 2,
                hidden: 32,
                ..SeqModelConfig::default()
            },
            beam: BeamConfig {
                width: 3,
                ..BeamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn run_dir_contains_all_artifacts() {
        let result = run_pipeline("h", &tiny_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        write_run_dir(&out, "h", &result, &RunConfig::default(), 1.25).unwrap();

        for f in [
            "expression.txt",
            "metrics.csv",
            "candidates.tsv",
            "loss_trace.csv",
            "config.json",
            "model.satw",
        ] {
            assert!(out.join(f).exists(), "missing {f}");
        }

        // the expression parses back
        let text = fs::read_to_string(out.join("expression.txt")).unwrap();
        satform_core::expr::parse(text.trim()).unwrap();

        let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
        let mut lines = metrics.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("h,"));
        assert!(row.ends_with(",1.25"));

        let cands = fs::read_to_string(out.join("candidates.tsv")).unwrap();
        assert!(cands.lines().count() >= 2, "no candidate rows");

        // checkpoint loads back bitwise
        let store = crate::satw::read_satw(&out.join("model.satw")).unwrap();
        assert_eq!(store.checksum(""), result.params.checksum(""));
    }

    #[test]
    fn zero_variance_r2_written_as_undefined() {
        let m = MetricsReport {
            mae: 0.5,
            rmse: 0.5,
            r2: None,
        };
        assert_eq!(metrics_row("h", &m, 3, 0.0), "h,undefined,0.5,0.5,3,0");
    }
}
