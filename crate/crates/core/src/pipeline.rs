//! End-to-end recovery pipeline: two-stage training, beam decoding,
//! constant refinement, candidate selection, and held-out metrics.
//!
//! Stage one trains the image encoder alone on the feature-consistency term,
//! aligning `F_img` with features derived from the target map. Stage two
//! freezes the encoder bitwise and teacher-forces the expression encoder,
//! fusion block, and decoder on the supervision skeleton with the
//! cross-entropy term. Inference then decodes skeleton candidates with
//! grammar-masked beam search, fits each candidate's constants with BFGS,
//! scores every candidate, and evaluates the winner on a held-out split.

use crate::expr::{to_tokens, Expr, Token, TokenSeq};
use crate::indices;
use crate::loss::{self, LossParts, LossReport, LossWeights, CE_PROB_FLOOR};
use crate::math;
use crate::nn::{
    adam_step, decoder_forward, expression_encoder_forward, feature_fusion,
    image_encoder_forward, raster_to_tensor, AdamState, Binder, EncoderConfig, Model,
    SeqModelConfig, IMG_PREFIX,
};
use crate::raster::{make_dataset, DatasetError, Sample, SceneSpec};
use crate::rng;
use crate::search::{
    bfgs_refine, decode_candidates, select_best, skeleton_of, BeamConfig, BfgsConfig, Scored,
};
use crate::tensor::{Tape, Tensor};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Fraction of samples used for training; the rest are held out.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Full training configuration with desk-scale defaults.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub n_samples: usize,
    /// Square scene side length in pixels.
    pub scene_side: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub enc: EncoderConfig,
    pub seq: SeqModelConfig,
    pub beam: BeamConfig,
    pub bfgs: BfgsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            n_samples: 10,
            scene_side: 64,
            stage1_epochs: 15,
            stage2_epochs: 60,
            // desk-scale models memorize faster at a larger step than the
            // full-size schedule
            lr: 1e-3,
            weights: LossWeights::default(),
            enc: EncoderConfig::default(),
            seq: SeqModelConfig::default(),
            beam: BeamConfig::default(),
            bfgs: BfgsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    Dataset(DatasetError),
    Config(String),
    NoCandidates,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Dataset(e) => write!(f, "{e}"),
            PipelineError::Config(msg) => write!(f, "{msg}"),
            PipelineError::NoCandidates => write!(f, "beam search produced no candidates"),
        }
    }
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        PipelineError::Dataset(e)
    }
}

/// Pooled regression metrics. `r2` is `None` when the target has zero
/// variance, where the coefficient of determination is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
}

/// MAE, RMSE, and R-squared of predictions against targets.
pub fn metrics(pred: &[f64], target: &[f64]) -> MetricsReport {
    assert_eq!(pred.len(), target.len(), "metrics: length mismatch");
    assert!(!pred.is_empty(), "metrics: empty input");
    let n = pred.len() as f64;
    let mae = pred
        .iter()
        .zip(target)
        .map(|(p, t)| math::abs(p - t))
        .sum::<f64>()
        / n;
    let ss_res: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let rmse = math::sqrt(ss_res / n);
    let mean = target.iter().sum::<f64>() / n;
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = if ss_tot > 0.0 {
        Some(1.0 - ss_res / ss_tot)
    } else {
        None
    };
    MetricsReport { mae, rmse, r2 }
}

/// Fixed (untrained) two-layer MLP mapping target-map statistics to the
/// encoder feature space; stage one pulls `F_img` toward its output.
#[derive(Debug, Clone)]
pub struct TargetMlp {
    w1: Vec<f64>, // 4 x 32
    b1: Vec<f64>,
    w2: Vec<f64>, // 32 x 16
    b2: Vec<f64>,
    w3: Vec<f64>, // 16 x out
    b3: Vec<f64>,
    out: usize,
}

const TMLP_H1: usize = 32;
const TMLP_H2: usize = 16;

/// Build the deterministic target-feature MLP for feature width `out`.
pub fn fit_target_mlp(seed: u64, out: usize) -> TargetMlp {
    let draw = |tag: u64, n: usize, fan_in: usize| {
        let mut s = rng::substream(seed, 0x7a67_0000 + tag);
        let b = 1.0 / math::sqrt(fan_in as f64);
        (0..n).map(|_| rng::uniform_in(&mut s, -b, b)).collect::<Vec<f64>>()
    };
    TargetMlp {
        w1: draw(1, 4 * TMLP_H1, 4),
        b1: draw(2, TMLP_H1, 4),
        w2: draw(3, TMLP_H1 * TMLP_H2, TMLP_H1),
        b2: draw(4, TMLP_H2, TMLP_H1),
        w3: draw(5, TMLP_H2 * out, TMLP_H2),
        b3: draw(6, out, TMLP_H2),
        out,
    }
}

fn dense(x: &[f64], w: &[f64], b: &[f64], relu: bool) -> Vec<f64> {
    let (n_in, n_out) = (x.len(), b.len());
    let mut out = b.to_vec();
    for i in 0..n_in {
        for j in 0..n_out {
            out[j] += x[i] * w[i * n_out + j];
        }
    }
    if relu {
        for v in &mut out {
            *v = v.max(0.0);
        }
    }
    out
}

impl TargetMlp {
    /// Feature vector for a target map: MLP over `[mean, std, min, max]`,
    /// normalized to unit length so its scale matches fresh encoder outputs.
    pub fn features(&self, target: &[f64]) -> Vec<f64> {
        assert!(!target.is_empty());
        let n = target.len() as f64;
        let mean = target.iter().sum::<f64>() / n;
        let var = target.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        let min = target.iter().copied().fold(f64::INFINITY, f64::min);
        let max = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let stats = [mean, math::sqrt(var), min, max];
        let h1 = dense(&stats, &self.w1, &self.b1, true);
        let h2 = dense(&h1, &self.w2, &self.b2, true);
        let raw = dense(&h2, &self.w3, &self.b3, false);
        let norm = math::sqrt(raw.iter().map(|v| v * v).sum::<f64>());
        if norm > 0.0 {
            raw.iter().map(|v| v / norm).collect()
        } else {
            raw
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out
    }
}

/// Neutral expression fed to the expression encoder when no previous formula
/// exists: the single-constant skeleton.
pub fn seed_skeleton() -> TokenSeq {
    TokenSeq::new(alloc::vec![Token::Bos, Token::Const, Token::Eos])
        .expect("seed skeleton is well-formed")
}

fn consistency_scalar(t: &Tape, f_img: Tensor, target_feat: &[f64]) -> Tensor {
    let ft = t.constant(1, target_feat.len(), target_feat.to_vec());
    let diff = t.sub(f_img, ft);
    t.sum_all(t.mul(diff, diff))
}

/// Train the image encoder on the weighted consistency term; returns the
/// per-epoch mean loss trace.
pub fn stage1_train(
    model: &mut Model,
    train: &[Sample],
    tmlp: &TargetMlp,
    cfg: &TrainConfig,
) -> Vec<f64> {
    let mut adam = AdamState::new();
    let mut trace = Vec::with_capacity(cfg.stage1_epochs);
    for _ in 0..cfg.stage1_epochs {
        let mut epoch = 0.0;
        for sample in train {
            let tape = Tape::new();
            let binder = Binder::new(&tape, &model.params);
            let x = raster_to_tensor(&tape, &sample.image, false);
            let side = sample.image.width();
            let (_, f_img) =
                image_encoder_forward(&binder, x, side, sample.image.bands(), &model.enc);
            let con = consistency_scalar(&tape, f_img, &tmlp.features(&sample.target));
            let weighted = tape.scale(con, cfg.weights.lambda_con);
            tape.backward(weighted);
            epoch += tape.value_scalar(weighted);
            let grads = binder.grads();
            adam_step(&mut model.params, &grads, &mut adam, cfg.lr);
        }
        trace.push(epoch / train.len() as f64);
    }
    trace
}

/// Encoder features for every sample with current parameters, as plain values.
fn encode_all(model: &Model, samples: &[Sample]) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|sample| {
            let tape = Tape::new();
            let binder = Binder::new(&tape, &model.params);
            let x = raster_to_tensor(&tape, &sample.image, false);
            let (_, f_img) = image_encoder_forward(
                &binder,
                x,
                sample.image.width(),
                sample.image.bands(),
                &model.enc,
            );
            tape.values(f_img)
        })
        .collect()
}

/// Decoder memory for one image feature vector: fuse with the seed skeleton
/// through the (trainable) expression encoder and fusion block.
fn memory_for(binder: &Binder, f_img_vals: &[f64], seq: &SeqModelConfig) -> Tensor {
    let t = binder.tape;
    let f_img = t.constant(1, f_img_vals.len(), f_img_vals.to_vec());
    let f_exp = expression_encoder_forward(binder, seed_skeleton().tokens(), seq);
    feature_fusion(binder, f_img, f_exp)
}

/// Stage-two outcome: the per-epoch CE trace and the final loss report with
/// all four terms evaluated at the trained parameters.
#[derive(Debug, Clone)]
pub struct Stage2Result {
    pub ce_trace: Vec<f64>,
    pub report: LossReport,
}

/// Teacher-force the decoder on the supervision skeleton with the encoder
/// frozen. The report's `mse`/`phy` come from a short constant refit of the
/// supervision skeleton on the first training sample.
pub fn stage2_train(
    model: &mut Model,
    train: &[Sample],
    features: &[Vec<f64>],
    stage1_con: f64,
    cfg: &TrainConfig,
) -> Result<Stage2Result, PipelineError> {
    let skeleton = train
        .iter()
        .find_map(|s| s.skeleton.clone())
        .ok_or_else(|| PipelineError::Config("training samples carry no skeleton".into()))?;
    let prefix: Vec<Token> = skeleton.tokens()[..skeleton.len() - 1].to_vec();
    let targets: Vec<usize> = skeleton.tokens()[1..].iter().map(|t| t.index()).collect();
    let mask = alloc::vec![true; targets.len()];

    let mut adam = AdamState::new();
    let mut ce_trace = Vec::with_capacity(cfg.stage2_epochs);
    for _ in 0..cfg.stage2_epochs {
        let mut epoch = 0.0;
        for feat in features {
            let tape = Tape::new();
            let binder = Binder::new(&tape, &model.params).with_frozen(&[IMG_PREFIX]);
            let memory = memory_for(&binder, feat, &model.seq);
            let probs = decoder_forward(&binder, &prefix, memory, &model.seq);
            let ce = tape.pick_log_mean(probs, &targets, &mask, CE_PROB_FLOOR);
            let weighted = tape.scale(ce, cfg.weights.lambda_ce);
            tape.backward(weighted);
            epoch += tape.value_scalar(ce);
            let grads = binder.grads();
            adam_step(&mut model.params, &grads, &mut adam, cfg.lr);
        }
        ce_trace.push(epoch / features.len() as f64);
    }

    // final report: all four terms at the trained parameters
    let ce = ce_for_sequence(model, &features[0], &skeleton);
    let refit_cfg = BfgsConfig {
        max_iters: 20,
        ..cfg.bfgs.clone()
    };
    let refined = bfgs_refine(
        &skeleton_of(&skeleton),
        &train[0].image,
        &train[0].target,
        &cfg.weights,
        &refit_cfg,
    );
    let report = loss::total_loss(
        LossParts {
            con: stage1_con,
            mse: refined.mse,
            ce,
            phy: refined.phy,
        },
        &cfg.weights,
    )
    .map_err(|e| PipelineError::Config(alloc::format!("loss report: {e:?}")))?;
    Ok(Stage2Result { ce_trace, report })
}

/// Teacher-forced cross-entropy of the decoder against one token sequence.
fn ce_for_sequence(model: &Model, f_img: &[f64], seq: &TokenSeq) -> f64 {
    let tape = Tape::new();
    let binder = Binder::new(&tape, &model.params);
    let memory = memory_for(&binder, f_img, &model.seq);
    let prefix: Vec<Token> = seq.tokens()[..seq.len() - 1].to_vec();
    let targets: Vec<usize> = seq.tokens()[1..].iter().map(|t| t.index()).collect();
    let probs = decoder_forward(&binder, &prefix, memory, &model.seq);
    loss::ce_loss(
        &tape.values(probs),
        model.seq.vocab,
        &targets,
        &alloc::vec![true; targets.len()],
    )
    .expect("decoder rows are normalized distributions")
}

/// Everything the pipeline produces for one task.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    /// Winning formula with fitted constants bound.
    pub expr: Expr,
    pub consts: Vec<f64>,
    pub nodes: usize,
    /// All scored candidates, in beam order.
    pub candidates: Vec<Scored>,
    /// Index of the winner within `candidates`.
    pub selected: usize,
    pub stage1_trace: Vec<f64>,
    pub ce_trace: Vec<f64>,
    pub train_report: LossReport,
    /// Pooled held-out metrics.
    pub held_out: MetricsReport,
    /// Encoder parameter checksums before and after stage two; equal when
    /// the freeze held bitwise.
    pub encoder_checksums: (u64, u64),
    /// Trained parameters, for checkpointing.
    pub params: crate::nn::ParamStore,
}

/// Run the full pipeline for one task, generating its dataset internally.
pub fn run_pipeline(task: &str, cfg: &TrainConfig) -> Result<PipelineResult, PipelineError> {
    let spec = indices::index_spec(task)
        .ok_or_else(|| PipelineError::Config(alloc::format!("unknown task '{task}'")))?;
    let scene = SceneSpec::for_task(task, cfg.scene_side, cfg.scene_side);
    let samples = make_dataset(cfg.seed, cfg.n_samples, scene, task)?;
    run_pipeline_with_samples(&samples, spec.required_bands, cfg)
}

/// Run the full pipeline on externally supplied samples. Every sample must
/// carry the supervision skeleton and a target map matching its image, and
/// all images must be square with side `scene_side`-compatible dimensions
/// for the configured encoder.
pub fn run_pipeline_with_samples(
    samples: &[Sample],
    band_count: u8,
    cfg: &TrainConfig,
) -> Result<PipelineResult, PipelineError> {
    if samples.len() < 2 {
        return Err(PipelineError::Config(
            "need at least 2 samples for a train/held-out split".into(),
        ));
    }
    let side = samples[0].image.width();
    if samples
        .iter()
        .any(|s| s.image.width() != side || s.image.height() != side)
    {
        return Err(PipelineError::Config(
            "all samples must be square scenes of equal size".into(),
        ));
    }
    cfg.enc
        .validate(side, side)
        .map_err(|e| PipelineError::Config(e.0.clone()))?;
    cfg.seq
        .validate()
        .map_err(|e| PipelineError::Config(e.0.clone()))?;

    let n_train = ((samples.len() as f64 * TRAIN_FRACTION) as usize).max(1);
    let n_train = n_train.min(samples.len() - 1);
    let (train, held) = samples.split_at(n_train);

    let bands = band_count as usize;
    let mut model = Model::init(cfg.enc, cfg.seq, bands, cfg.seed);
    let tmlp = fit_target_mlp(cfg.seed, cfg.enc.out_dim);

    let stage1_trace = stage1_train(&mut model, train, &tmlp, cfg);
    let stage1_con = stage1_trace.last().copied().unwrap_or(0.0) / cfg.weights.lambda_con.max(1e-12);

    let features = encode_all(&model, train);
    let checksum_before = model.params.checksum(IMG_PREFIX);
    let stage2 = stage2_train(&mut model, train, &features, stage1_con, cfg)?;
    let checksum_after = model.params.checksum(IMG_PREFIX);

    // decode candidates conditioned on the first training image
    let beam = BeamConfig {
        band_count,
        ..cfg.beam
    };
    let step = |prefix: &[Token]| {
        let tape = Tape::new();
        let binder = Binder::new(&tape, &model.params);
        let memory = memory_for(&binder, &features[0], &model.seq);
        let probs = decoder_forward(&binder, prefix, memory, &model.seq);
        let (rows, vocab) = tape.shape(probs);
        let all = tape.values(probs);
        all[(rows - 1) * vocab..].to_vec()
    };
    let candidates = decode_candidates(step, &beam);
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates);
    }

    // refine and score every candidate on the first training sample
    let scored: Vec<Scored> = candidates
        .iter()
        .map(|c| {
            let refined = bfgs_refine(
                &skeleton_of(&c.seq),
                &train[0].image,
                &train[0].target,
                &cfg.weights,
                &cfg.bfgs,
            );
            let ce = ce_for_sequence(&model, &features[0], &c.seq);
            Scored {
                seq: c.seq.clone(),
                refined,
                ce,
            }
        })
        .collect();
    let selected = select_best(&scored, &cfg.weights).expect("candidate list is nonempty");
    let winner = &scored[selected];

    // held-out evaluation, pixels pooled across scenes
    let mut pred_all = Vec::new();
    let mut target_all = Vec::new();
    for sample in held {
        let pred = crate::expr::eval(&winner.refined.expr, &sample.image, &winner.refined.consts)
            .map_err(|e| PipelineError::Config(alloc::format!("held-out eval: {e}")))?;
        pred_all.extend(pred);
        target_all.extend_from_slice(&sample.target);
    }
    let held_out = metrics(&pred_all, &target_all);

    Ok(PipelineResult {
        expr: winner.refined.expr.clone(),
        consts: winner.refined.consts.clone(),
        nodes: winner.refined.expr.node_count(),
        candidates: scored,
        selected,
        stage1_trace,
        ce_trace: stage2.ce_trace,
        train_report: stage2.report,
        held_out,
        encoder_checksums: (checksum_before, checksum_after),
        params: model.params,
    })
}

/// One point of a sample-count sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub n_samples: usize,
    pub metrics: MetricsReport,
    pub nodes: usize,
}

/// Re-run the pipeline at several dataset sizes and report held-out metrics
/// for each.
pub fn sampling_sweep(
    task: &str,
    sizes: &[usize],
    base: &TrainConfig,
) -> Result<Vec<SweepPoint>, PipelineError> {
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let cfg = TrainConfig {
            n_samples: n,
            ..base.clone()
        };
        let result = run_pipeline(task, &cfg)?;
        out.push(SweepPoint {
            n_samples: n,
            metrics: result.held_out,
            nodes: result.nodes,
        });
    }
    Ok(out)
}

/// Reference skeleton for a task (used as the supervision target).
pub fn reference_skeleton(task: &str) -> Option<TokenSeq> {
    indices::index_spec(task).map(|s| to_tokens(&s.reference_expr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_hand_case() {
        // target (0,1,2), pred (0,1,1): MAE 1/3, RMSE sqrt(1/3), R2 0.5
        let m = metrics(&[0.0, 1.0, 1.0], &[0.0, 1.0, 2.0]);
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.rmse - math::sqrt(1.0 / 3.0)).abs() < 1e-12);
        assert!((m.r2.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn metrics_zero_variance_flagged() {
        let m = metrics(&[1.0, 1.0], &[2.0, 2.0]);
        assert_eq!(m.r2, None);
        assert!((m.mae - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_perfect_prediction() {
        let m = metrics(&[0.5, 1.5, 2.5], &[0.5, 1.5, 2.5]);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.r2, Some(1.0));
    }

    #[test]
    fn target_mlp_deterministic_and_discriminative() {
        let m = fit_target_mlp(5, 16);
        let a = m.features(&[0.1, 0.2, 0.3, 0.4]);
        let b = m.features(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(a, b);
        let c = m.features(&[10.0, 20.0, 30.0, 40.0]);
        assert!(a.iter().zip(&c).any(|(x, y)| (x - y).abs() > 1e-6));
        // unit norm
        let n: f64 = a.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-9);
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            n_samples: 5,
            scene_side: 16,
            stage1_epochs: 2,
            stage2_epochs: 30,
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
                width: 4,
                ..BeamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn stage1_loss_decreases() {
        let cfg = TrainConfig {
            stage1_epochs: 8,
            ..quick_cfg(3)
        };
        let scene = SceneSpec::for_task("ndvi", 16, 16);
        let samples = make_dataset(3, 4, scene, "ndvi").unwrap();
        let mut model = Model::init(cfg.enc, cfg.seq, 4, 3);
        let tmlp = fit_target_mlp(3, cfg.enc.out_dim);
        let trace = stage1_train(&mut model, &samples, &tmlp, &cfg);
        assert_eq!(trace.len(), 8);
        assert!(
            trace.last().unwrap() < trace.first().unwrap(),
            "stage 1 loss did not decrease: {trace:?}"
        );
    }

    #[test]
    fn pipeline_recovers_ndvi_and_freezes_encoder() {
        let cfg = quick_cfg(7);
        let out = run_pipeline("ndvi", &cfg).unwrap();
        assert_eq!(
            out.encoder_checksums.0, out.encoder_checksums.1,
            "encoder parameters changed during stage two"
        );
        assert!(
            out.ce_trace.last().unwrap() < out.ce_trace.first().unwrap(),
            "stage 2 CE did not decrease: first {} last {}",
            out.ce_trace.first().unwrap(),
            out.ce_trace.last().unwrap()
        );
        let r2 = out.held_out.r2.expect("ndvi targets have variance");
        assert!(r2 > 0.99, "held-out R2 = {r2}, formula {}", out.expr);
        assert!(out.nodes <= 15, "formula too large: {}", out.expr);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let cfg = quick_cfg(11);
        let a = run_pipeline("ndwi", &cfg).unwrap();
        let b = run_pipeline("ndwi", &cfg).unwrap();
        assert_eq!(a.expr, b.expr);
        assert_eq!(a.consts, b.consts);
        assert_eq!(a.held_out, b.held_out);
        assert_eq!(a.stage1_trace, b.stage1_trace);
        assert_eq!(a.ce_trace, b.ce_trace);
    }

    #[test]
    fn pipeline_rejects_bad_config() {
        let cfg = TrainConfig {
            n_samples: 1,
            ..quick_cfg(1)
        };
        assert!(matches!(
            run_pipeline("ndvi", &cfg),
            Err(PipelineError::Config(_))
        ));
        assert!(matches!(
            run_pipeline("nope", &quick_cfg(1)),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn sweep_runs_every_size() {
        let cfg = TrainConfig {
            stage2_epochs: 15,
            ..quick_cfg(5)
        };
        let points = sampling_sweep("h", &[3, 5], &cfg).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].n_samples, 3);
        assert_eq!(points[1].n_samples, 5);
    }

    #[test]
    fn reference_skeletons_exist_for_all_tasks() {
        for task in indices::TASKS {
            let seq = reference_skeleton(task).unwrap();
            assert!(seq.len() >= 3);
        }
        assert!(reference_skeleton("nope").is_none());
    }
}
