//! End-to-end training over paired grayscale datasets.
//!
//! Every batch member runs forward and backward on its own tape (members may
//! execute in parallel); gradients are reduced in member order at a single
//! point, then one optimizer step updates the shared parameters. The loss
//! trace and all parameter updates are fully determined by (seed, config,
//! dataset).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::imageio;
use crate::loss::{loss_total_taped, LossBreakdown, LossConfig};
use crate::lrrnet::{fuse_forward_taped, LrrNetParams, LrrNetVars};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// Adaptive-moment estimation.
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// Plain gradient descent, kept for gradient-audit runs.
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub image_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Hard cap on optimizer steps across all epochs.
    pub max_iters: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 4,
            batch_size: 8,
            image_size: 128,
            optimizer: OptimizerKind::default(),
            seed: 0,
            max_iters: None,
            checkpoint_every: None,
            checkpoint_dir: None,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Contract(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Contract("epoch count must be at least 1".into()));
        }
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return Err(Error::Contract(format!(
                "image size must be a positive multiple of 16 (four pooling stages), got {}",
                self.image_size
            )));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Debug)]
struct PairEntry {
    stem: String,
    ir: PathBuf,
    vi: PathBuf,
}

/// Filename-matched infrared/visible pairs, loaded lazily as `[0, 1]`
/// grayscale maps resized to `image_size`.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    pairs: Vec<PairEntry>,
    image_size: usize,
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("png") | Some("pgm")) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

/// Pairs files by stem; both directories must match bijectively.
pub fn load_dataset(
    ir_dir: impl AsRef<Path>,
    vi_dir: impl AsRef<Path>,
    image_size: usize,
) -> Result<PairedDataset> {
    let ir = list_images(ir_dir.as_ref())?;
    let vi = list_images(vi_dir.as_ref())?;
    let only_ir: Vec<&String> = ir.keys().filter(|k| !vi.contains_key(*k)).collect();
    let only_vi: Vec<&String> = vi.keys().filter(|k| !ir.contains_key(*k)).collect();
    if !only_ir.is_empty() || !only_vi.is_empty() {
        let mut msg = String::from("unmatched stems");
        if !only_ir.is_empty() {
            msg.push_str(&format!(
                "; infrared only: {}",
                only_ir.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }
        if !only_vi.is_empty() {
            msg.push_str(&format!(
                "; visible only: {}",
                only_vi.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }
        return Err(Error::Pairing(msg));
    }
    let pairs = ir
        .into_iter()
        .map(|(stem, ir_path)| PairEntry {
            vi: vi[&stem].clone(),
            ir: ir_path,
            stem,
        })
        .collect();
    Ok(PairedDataset { pairs, image_size })
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn stem(&self, idx: usize) -> &str {
        &self.pairs[idx].stem
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// Decodes, resizes, and returns `(infrared, visible)`.
    pub fn load_pair(&self, idx: usize) -> Result<(Tensor, Tensor)> {
        let entry = &self.pairs[idx];
        let ir = imageio::read_gray(&entry.ir)?;
        let vi = imageio::read_gray(&entry.vi)?;
        Ok((
            imageio::resize_bilinear(&ir, self.image_size, self.image_size)?,
            imageio::resize_bilinear(&vi, self.image_size, self.image_size)?,
        ))
    }
}

pub type GradMap = BTreeMap<String, Vec<f64>>;

#[derive(Clone, Debug, Default)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state plus step rule. Parameters are re-quantized through f32
/// after every update so containers stay lossless.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    slots: BTreeMap<String, AdamSlot>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            slots: BTreeMap::new(),
            t: 0,
        }
    }

    fn apply(&mut self, name: &str, param: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGrad(name.to_string()));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in param.iter_mut().zip(grad) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let slot = self.slots.entry(name.to_string()).or_insert_with(|| AdamSlot {
                    m: vec![0.0; param.len()],
                    v: vec![0.0; param.len()],
                });
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..param.len() {
                    slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * grad[i];
                    slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let m_hat = slot.m[i] / bc1;
                    let v_hat = slot.v[i] / bc2;
                    param[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        for p in param.iter_mut() {
            *p = *p as f32 as f64;
        }
        Ok(())
    }

    /// One optimizer step over a single flat value vector.
    pub fn step_single(&mut self, name: &str, values: &mut [f64], grad: &[f64]) -> Result<()> {
        self.t += 1;
        self.apply(name, values, grad)
    }

    /// One optimizer step over the full parameter set. Missing gradient
    /// entries count as zero.
    pub fn step_params(&mut self, params: &mut LrrNetParams, grads: &GradMap) -> Result<()> {
        self.t += 1;
        let mut failure = None;
        let mut this = std::mem::replace(self, Optimizer::new(self.kind, self.learning_rate));
        params.for_each_mut(|name, tensor| {
            if failure.is_some() {
                return;
            }
            if let Some(grad) = grads.get(name) {
                if let Err(e) = this.apply(name, tensor.data_mut(), grad) {
                    failure = Some(e);
                }
            }
        });
        *self = this;
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// One logged training iteration; the batch-averaged per-term losses.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub iter: usize,
    pub pixel: f64,
    pub shallow: f64,
    pub middle: f64,
    pub deep: f64,
    pub total: f64,
}

/// CSV with header `iter,pixel,shallow,middle,deep,total`.
pub fn write_trace_csv(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from("iter,pixel,shallow,middle,deep,total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iter, r.pixel, r.shallow, r.middle, r.deep, r.total
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn fisher_yates(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
}

fn batch_gradients(
    params: &LrrNetParams,
    backbone: &Backbone,
    dataset: &PairedDataset,
    members: &[usize],
    cfg: &LossConfig,
) -> Result<(GradMap, LossBreakdown)> {
    let per_member: Vec<Result<(Vec<(String, Vec<f64>)>, LossBreakdown)>> = members
        .par_iter()
        .map(|&idx| {
            let (ir, vi) = dataset.load_pair(idx)?;
            let mut tape = Tape::new();
            let irv = tape.leaf(ir.clone());
            let viv = tape.leaf(vi.clone());
            let vars = LrrNetVars::register(&mut tape, params);
            let fused = fuse_forward_taped(&mut tape, irv, viv, &vars)?;
            let (total, breakdown) =
                loss_total_taped(&mut tape, fused.fused, &ir, &vi, backbone, cfg)?;
            let grads = tape.backward(total)?;
            let named = vars
                .named()
                .into_iter()
                .map(|(name, var)| {
                    let g = grads.grad(var);
                    (name, g.into_data())
                })
                .collect();
            Ok((named, breakdown))
        })
        .collect();

    let scale = 1.0 / members.len() as f64;
    let mut acc: GradMap = BTreeMap::new();
    let mut sums = LossBreakdown::default();
    for result in per_member {
        let (named, breakdown) = result?;
        for (name, grad) in named {
            match acc.get_mut(&name) {
                Some(slot) => {
                    for (a, g) in slot.iter_mut().zip(&grad) {
                        *a += g;
                    }
                }
                None => {
                    acc.insert(name, grad);
                }
            }
        }
        sums.pixel += breakdown.pixel;
        sums.shallow += breakdown.shallow;
        sums.middle += breakdown.middle;
        sums.deep += breakdown.deep;
        sums.total += breakdown.total;
    }
    for grad in acc.values_mut() {
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    Ok((
        acc,
        LossBreakdown {
            pixel: sums.pixel * scale,
            shallow: sums.shallow * scale,
            middle: sums.middle * scale,
            deep: sums.deep * scale,
            total: sums.total * scale,
        },
    ))
}

/// Trains `initial` over the dataset and returns the final parameters plus
/// the per-iteration loss trace.
pub fn train(
    cfg: &TrainConfig,
    dataset: &PairedDataset,
    backbone: &Backbone,
    initial: LrrNetParams,
) -> Result<(LrrNetParams, Vec<TraceRow>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("training dataset is empty".into()));
    }
    if dataset.image_size() != cfg.image_size {
        return Err(Error::Contract(format!(
            "dataset images are {} but the config expects {}",
            dataset.image_size(),
            cfg.image_size
        )));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }

    let mut params = initial;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    let mut iter = 0usize;

    'epochs: for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        fisher_yates(&mut order, &mut rng);
        for members in order.chunks(cfg.batch_size) {
            iter += 1;
            let (grads, avg) = batch_gradients(&params, backbone, dataset, members, &cfg.loss)?;
            optimizer.step_params(&mut params, &grads)?;

            let mut bad = None;
            params.for_each(|name, t| {
                if bad.is_none() && !t.all_finite() {
                    bad = Some(name.to_string());
                }
            });
            if let Some(name) = bad {
                return Err(Error::NonFinite(format!("parameter '{name}' after iteration {iter}")));
            }

            trace.push(TraceRow {
                iter,
                pixel: avg.pixel,
                shallow: avg.shallow,
                middle: avg.middle,
                deep: avg.deep,
                total: avg.total,
            });

            if let (Some(every), Some(dir)) = (cfg.checkpoint_every, cfg.checkpoint_dir.as_ref()) {
                if every > 0 && iter % every == 0 {
                    params.save(dir.join(format!("checkpoint_{iter:05}.lrrw")))?;
                }
            }
            if let Some(cap) = cfg.max_iters {
                if iter >= cap {
                    break 'epochs;
                }
            }
        }
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn sgd_step_is_exact_for_dyadic_rate() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.125);
        let mut x = vec![1.0];
        for expect in [0.875, 0.75, 0.625, 0.5] {
            opt.step_single("x", &mut x, &[1.0]).unwrap();
            assert_eq!(x[0], expect);
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_untouched() {
        let mut params = LrrNetParams::init(1, 3, 1, 3).unwrap();
        let reference = params.clone();
        let mut grads: GradMap = BTreeMap::new();
        params.for_each(|name, t| {
            grads.insert(name.to_string(), vec![0.0; t.numel()]);
        });
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.01);
        opt.step_params(&mut params, &grads).unwrap();
        let mut same = true;
        params.for_each(|name, t| {
            let mut other = None;
            reference.for_each(|n2, t2| {
                if n2 == name {
                    other = Some(t2.clone());
                }
            });
            same &= other.unwrap().data() == t.data();
        });
        assert!(same);
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.05);
        let mut x = vec![1.0];
        for _ in 0..500 {
            let g = [x[0]];
            opt.step_single("x", &mut x, &g).unwrap();
        }
        assert!(x[0].abs() < 1e-3, "final x = {}", x[0]);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.01);
        let mut x = vec![1.0];
        match opt.step_single("vi.b0.c1", &mut x, &[f64::NAN]) {
            Err(Error::NonFiniteGrad(name)) => assert_eq!(name, "vi.b0.c1"),
            other => panic!("expected NonFiniteGrad, got {other:?}"),
        }
    }

    #[test]
    fn dataset_pairing_rules() {
        let dir = tempfile::tempdir().unwrap();
        let ir = dir.path().join("ir");
        let vi = dir.path().join("vi");
        std::fs::create_dir_all(&ir).unwrap();
        std::fs::create_dir_all(&vi).unwrap();

        let empty = load_dataset(&ir, &vi, 32).unwrap();
        assert!(empty.is_empty());

        synth::write_synth_dataset(&ir, &vi, 3, 24, 5).unwrap();
        let ds = load_dataset(&ir, &vi, 32).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.stem(0), "pair0000");
        assert_eq!(ds.stem(2), "pair0002");
        let (a, b) = ds.load_pair(1).unwrap();
        assert_eq!(a.shape(), [1, 32, 32]);
        assert_eq!(b.shape(), [1, 32, 32]);

        // One extra infrared file breaks the bijection.
        let (extra, _) = synth::synth_pair(5, 99, 24);
        imageio::write_gray(ir.join("stray.png"), &extra).unwrap();
        match load_dataset(&ir, &vi, 32) {
            Err(Error::Pairing(msg)) => assert!(msg.contains("stray"), "{msg}"),
            other => panic!("expected pairing error, got {other:?}"),
        }
    }

    fn desk_setup(count: usize, size: usize) -> (tempfile::TempDir, PairedDataset) {
        let dir = tempfile::tempdir().unwrap();
        let ir = dir.path().join("ir");
        let vi = dir.path().join("vi");
        synth::write_synth_dataset(&ir, &vi, count, size, 7).unwrap();
        let ds = load_dataset(&ir, &vi, size).unwrap();
        (dir, ds)
    }

    #[test]
    fn zero_learning_rate_is_the_identity() {
        let (_tmp, ds) = desk_setup(4, 32);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 2,
            image_size: 32,
            seed: 3,
            ..TrainConfig::default()
        };
        let backbone = Backbone::tiny_test();
        let init = LrrNetParams::init(2, 3, 2, 8).unwrap();
        let reference = init.clone();
        let (out, trace) = train(&cfg, &ds, &backbone, init).unwrap();
        assert_eq!(trace.len(), 2);
        let mut same = true;
        out.for_each(|name, t| {
            reference.for_each(|n2, t2| {
                if n2 == name {
                    same &= t2.data() == t.data();
                }
            });
        });
        assert!(same);
    }

    #[test]
    fn same_seed_gives_identical_trace() {
        let (_tmp, ds) = desk_setup(6, 32);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 2,
            batch_size: 2,
            image_size: 32,
            seed: 11,
            ..TrainConfig::default()
        };
        let backbone = Backbone::tiny_test();
        let run = |cfg: &TrainConfig| {
            let init = LrrNetParams::init(1, 3, 1, 9).unwrap();
            train(cfg, &ds, &backbone, init).unwrap().1
        };
        let a = run(&cfg);
        let b = run(&cfg);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.total, y.total);
            assert_eq!(x.pixel, y.pixel);
        }
    }

    #[test]
    fn trace_totals_are_consistent_with_terms() {
        let (_tmp, ds) = desk_setup(4, 32);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 1,
            batch_size: 4,
            image_size: 32,
            seed: 2,
            ..TrainConfig::default()
        };
        let backbone = Backbone::tiny_test();
        let init = LrrNetParams::init(1, 3, 1, 10).unwrap();
        let (_, trace) = train(&cfg, &ds, &backbone, init).unwrap();
        let l = &cfg.loss;
        for row in &trace {
            let recomposed =
                l.gamma1 * row.pixel + l.gamma2 * row.shallow + row.middle + l.gamma4 * row.deep;
            assert!((row.total - recomposed).abs() <= 1e-6 * row.total.max(1.0));
        }
    }

    #[test]
    fn checkpoints_are_written() {
        let (_tmp, ds) = desk_setup(4, 32);
        let ckpt = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 1,
            batch_size: 2,
            image_size: 32,
            seed: 2,
            checkpoint_every: Some(1),
            checkpoint_dir: Some(ckpt.path().to_path_buf()),
            ..TrainConfig::default()
        };
        let backbone = Backbone::tiny_test();
        let init = LrrNetParams::init(1, 3, 1, 12).unwrap();
        train(&cfg, &ds, &backbone, init).unwrap();
        assert!(ckpt.path().join("checkpoint_00001.lrrw").exists());
        assert!(ckpt.path().join("checkpoint_00002.lrrw").exists());
        assert!(LrrNetParams::load(ckpt.path().join("checkpoint_00002.lrrw")).is_ok());
    }

    #[test]
    fn max_iters_caps_the_run() {
        let (_tmp, ds) = desk_setup(6, 32);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 2,
            image_size: 32,
            seed: 2,
            max_iters: Some(4),
            ..TrainConfig::default()
        };
        let backbone = Backbone::tiny_test();
        let init = LrrNetParams::init(1, 3, 1, 13).unwrap();
        let (_, trace) = train(&cfg, &ds, &backbone, init).unwrap();
        assert_eq!(trace.len(), 4);
    }
}
