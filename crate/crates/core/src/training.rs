//! Pretraining and training: the corruption function, both losses with
//! analytic gradients, the warmup/decay learning-rate schedule, Adam, and
//! the epoch loops with best-checkpoint retention.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buzzword::{build_trend_text, generate_buzzwords, BuzzwordConfig, FrequencyTable, Vocabulary};
use crate::corpus::Corpus;
use crate::generate::{beam_search, GenerationConfig, ModelScorer};
use crate::model::{checkpoint, is_extractor_param, layers::DropoutCtx, ModelError, ModelParams};
use crate::rouge::rouge_l;
use crate::similarity::{tokenize, TokenSeq};
use crate::symbols;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("corruption config invalid: {0}")]
    BadCorruption(String),
    #[error("train config invalid: {0}")]
    BadTrainConfig(String),
    #[error("headline must be non-empty")]
    EmptyHeadline,
    #[error("corruption selected zero positions and select_rate is 0; loss undefined")]
    NothingSelected,
    #[error("non-finite loss {loss} at step {step} (example {example})")]
    NonFiniteLoss { loss: f64, step: u64, example: usize },
    #[error("learning-rate schedule undefined at step 0")]
    ZeroStep,
    #[error("empty dataset")]
    EmptyDataset,
}

/// BERT-style corruption: each position is selected independently at
/// `select_rate`; a selected token becomes the mask token, a random real
/// token, or stays put, according to the three sub-fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub select_rate: f64,
    pub mask_fraction: f64,
    pub random_fraction: f64,
    pub keep_fraction: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            select_rate: 0.15,
            mask_fraction: 0.8,
            random_fraction: 0.1,
            keep_fraction: 0.1,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.select_rate) {
            return Err(TrainError::BadCorruption(format!("select_rate {} outside [0,1]", self.select_rate)));
        }
        let sum = self.mask_fraction + self.random_fraction + self.keep_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TrainError::BadCorruption(format!("mask/random/keep fractions sum to {sum}, expected 1")));
        }
        if self.mask_fraction < 0.0 || self.random_fraction < 0.0 || self.keep_fraction < 0.0 {
            return Err(TrainError::BadCorruption("fractions must be non-negative".into()));
        }
        Ok(())
    }
}

/// Corrupts a headline, returning the corrupted ids and the selected
/// positions (loss is evaluated only there). Seeded by the config.
pub fn corrupt(y: &[u32], vocab: &Vocabulary, cfg: &CorruptionConfig) -> (Vec<u32>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    corrupt_with_rng(y, vocab, cfg, &mut rng)
}

pub fn corrupt_with_rng(
    y: &[u32],
    vocab: &Vocabulary,
    cfg: &CorruptionConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<u32>, Vec<usize>) {
    let mut out = y.to_vec();
    let mut positions = Vec::new();
    let real = vocab.real_ids();
    for (i, slot) in out.iter_mut().enumerate() {
        if rng.gen::<f64>() >= cfg.select_rate {
            continue;
        }
        positions.push(i);
        let u: f64 = rng.gen();
        if u < cfg.mask_fraction {
            *slot = symbols::MASK_ID;
        } else if u < cfg.mask_fraction + cfg.random_fraction {
            *slot = rng.gen_range(real.clone());
        }
        // else: keep the original token
    }
    (out, positions)
}

/// One prepared example: everything a loss needs, already tokenized and
/// mapped through the vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Example {
    pub article: Vec<u32>,
    pub style: Vec<u32>,
    pub trend: Vec<u32>,
    pub headline: Vec<u32>,
}

/// Builds examples for every post in the corpus: style text from the
/// user's earlier headlines, trend text from the post's step buzzwords.
/// Posts with an empty headline or article are skipped.
pub fn prepare_examples(
    corpus: &Corpus,
    vocab: &Vocabulary,
    bw_cfg: &BuzzwordConfig,
    max_positions: usize,
    max_headline: usize,
) -> Vec<Example> {
    prepare_examples_in_context(corpus, corpus, vocab, bw_cfg, max_positions, max_headline)
        .expect("target is its own context")
}

/// As [`prepare_examples`], but style text, time steps, and frequency
/// counts come from `context`, a superset corpus (e.g. the full filtered
/// corpus when `target` is a validation split). Every target post must
/// exist in the context.
pub fn prepare_examples_in_context(
    target: &Corpus,
    context: &Corpus,
    vocab: &Vocabulary,
    bw_cfg: &BuzzwordConfig,
    max_positions: usize,
    max_headline: usize,
) -> Result<Vec<Example>, TrainError> {
    let table = FrequencyTable::count_frequencies(context, vocab);
    let max_step = context.max_step().map(|s| s.0).unwrap_or(0);
    let trend_by_step: Vec<Vec<u32>> = (0..=max_step)
        .map(|s| {
            let bw = generate_buzzwords(&table, vocab, crate::corpus::TimeStep(s), bw_cfg);
            vocab.encode(&build_trend_text(&bw, max_positions))
        })
        .collect();
    let mut out = Vec::new();
    for post in target.posts() {
        let headline = tokenize(&post.headline).into_tokens();
        let article = tokenize(&post.article).into_tokens();
        if headline.is_empty() || article.is_empty() {
            continue;
        }
        if context.get(&post.id).is_none() {
            return Err(TrainError::BadTrainConfig(format!(
                "post {:?} is missing from the context corpus",
                post.id
            )));
        }
        let style = context.build_style_text(&post.id, max_positions).expect("post in context");
        let step = context.step_of(post.timestamp).0 as usize;
        let mut headline_ids = vocab.encode(&headline);
        headline_ids.truncate(max_headline);
        let mut article_ids = vocab.encode(&article);
        article_ids.truncate(max_positions);
        out.push(Example {
            article: article_ids,
            style: vocab.encode(&style),
            trend: trend_by_step[step].clone(),
            headline: headline_ids,
        });
    }
    Ok(out)
}

/// Mean cross-entropy over weighted positions; returns (loss, dlogits).
/// dlogits rows are (softmax - onehot) * weight / total_weight.
fn cross_entropy(logits: &Array2<f64>, targets: &[u32], weights: &[f64]) -> (f64, Array2<f64>) {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        if w > 0.0 {
            loss += w * (log_z - row[t as usize]);
        }
        if w > 0.0 {
            let scale = w / total;
            let mut drow = dlogits.row_mut(i);
            for (j, dv) in drow.iter_mut().enumerate() {
                let p = (row[j] - log_z).exp();
                *dv = scale * (p - if j == t as usize { 1.0 } else { 0.0 });
            }
        }
    }
    (loss / total, dlogits)
}

fn decoder_io(headline: &[u32], append_eos: bool) -> (Vec<u32>, Vec<u32>) {
    let mut input = Vec::with_capacity(headline.len() + 1);
    input.push(symbols::BOS_ID);
    let mut targets = headline.to_vec();
    if append_eos {
        input.extend_from_slice(headline);
        targets.push(symbols::EOS_ID);
    } else {
        input.extend_from_slice(&headline[..headline.len() - 1]);
    }
    (input, targets)
}

/// Teacher-forced autoregressive NLL over the fused article states; the
/// mean runs over the headline tokens plus the closing eos. With `grad`,
/// gradients accumulate into every parameter.
pub fn train_loss(
    params: &mut ModelParams,
    example: &Example,
    drop: &mut DropoutCtx,
    grad: bool,
) -> Result<f64, TrainError> {
    if example.headline.is_empty() {
        return Err(TrainError::EmptyHeadline);
    }
    let (dec_input, targets) = decoder_io(&example.headline, true);
    let weights = vec![1.0; targets.len()];
    fused_loss(params, &example.article, example, &dec_input, &targets, &weights, drop, grad)
}

/// Masked-reconstruction loss: the encoder reads the corrupted headline,
/// the decoder reconstructs the original, and only the selected positions
/// count. Gradients flow to the extractor parameters only; the encoder,
/// decoder, and shared embedding stay frozen.
pub fn pretrain_loss(
    params: &mut ModelParams,
    example: &Example,
    vocab: &Vocabulary,
    ccfg: &CorruptionConfig,
    drop: &mut DropoutCtx,
    grad: bool,
) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(ccfg.seed);
    pretrain_loss_with_rng(params, example, vocab, ccfg, &mut rng, drop, grad)
}

pub fn pretrain_loss_with_rng(
    params: &mut ModelParams,
    example: &Example,
    vocab: &Vocabulary,
    ccfg: &CorruptionConfig,
    corruption_rng: &mut ChaCha8Rng,
    drop: &mut DropoutCtx,
    grad: bool,
) -> Result<f64, TrainError> {
    ccfg.validate()?;
    if example.headline.is_empty() {
        return Err(TrainError::EmptyHeadline);
    }
    // resample until at least one position is selected; with a zero rate
    // the loss is undefined
    if ccfg.select_rate <= 0.0 {
        return Err(TrainError::NothingSelected);
    }
    let (corrupted, positions) = loop {
        let (c, p) = corrupt_with_rng(&example.headline, vocab, ccfg, corruption_rng);
        if !p.is_empty() {
            break (c, p);
        }
    };
    let (dec_input, targets) = decoder_io(&example.headline, false);
    let mut weights = vec![0.0; targets.len()];
    for &p in &positions {
        weights[p] = 1.0;
    }
    let loss = fused_loss(params, &corrupted, example, &dec_input, &targets, &weights, drop, grad)?;
    if grad {
        params.zero_frozen_grads();
    }
    Ok(loss)
}

/// Shared forward/backward: encode `encoder_input`, fuse with the style
/// and trend encodings, decode, and score the targets.
#[allow(clippy::too_many_arguments)]
fn fused_loss(
    params: &mut ModelParams,
    encoder_input: &[u32],
    example: &Example,
    dec_input: &[u32],
    targets: &[u32],
    weights: &[f64],
    drop: &mut DropoutCtx,
    grad: bool,
) -> Result<f64, TrainError> {
    let (hidden, enc_cache) = params.encode_train(encoder_input, drop)?;
    let (h_se, se_cache) = params.extract_style_train(&example.style, drop)?;
    let (h_te, te_cache) = params.extract_trend_train(&example.trend, drop)?;
    let fused = ModelParams::fuse(&hidden, &h_se, &h_te);
    let dec_cache = params.decoder_forward(dec_input, &fused, drop)?;
    let logits = params.logits(&dec_cache.hidden);
    let (loss, dlogits) = cross_entropy(&logits, targets, weights);
    if !grad {
        return Ok(loss);
    }
    let dh_dec = params.logits_backward(&dec_cache.hidden, &dlogits);
    let mut dmem = Array2::zeros(fused.states.raw_dim());
    params.decoder_backward(&dec_cache, &dh_dec, &mut dmem);
    // S = H + h_se + h_te: the memory gradient feeds the encoder directly
    // and both extractors through the broadcast sum
    let dpool: Array1<f64> = dmem.sum_axis(ndarray::Axis(0));
    params.extract_style_backward(&se_cache, &dpool);
    params.extract_trend_backward(&te_cache, &dpool);
    params.encoder_backward(&enc_cache, &dmem);
    Ok(loss)
}

/// Learning-rate schedule: `2e-3 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_at(step: u64, warmup: u64) -> Result<f64, TrainError> {
    lr_schedule(2e-3, step, warmup)
}

pub fn lr_schedule(scale: f64, step: u64, warmup: u64) -> Result<f64, TrainError> {
    if step == 0 {
        return Err(TrainError::ZeroStep);
    }
    let s = step as f64;
    let w = (warmup.max(1)) as f64;
    Ok(scale * (s.powf(-0.5)).min(s * w.powf(-1.5)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accum: usize,
    pub warmup: u64,
    pub lr_scale: f64,
    pub epochs: usize,
    /// Validate every this many optimizer steps (and at the end of every
    /// epoch).
    pub eval_interval: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            grad_accum: 4,
            warmup: 100,
            lr_scale: 2e-3,
            epochs: 5,
            eval_interval: 64,
            seed: 3407,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.grad_accum == 0 || self.warmup == 0 || self.epochs == 0 || self.eval_interval == 0 {
            return Err(TrainError::BadTrainConfig("all fields must be positive".into()));
        }
        if self.lr_scale <= 0.0 {
            return Err(TrainError::BadTrainConfig("lr_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction; state is laid out in parameter-visit order.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &mut ModelParams) -> Self {
        let shapes: Vec<_> = params.params_mut().iter().map(|(_, p)| p.w.raw_dim()).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|d| Array2::zeros(d.clone())).collect(),
            v: shapes.iter().map(|d| Array2::zeros(d.clone())).collect(),
        }
    }

    /// Applies one update from the accumulated gradients. Parameters whose
    /// path fails `trainable` are left untouched (bit-identical).
    pub fn step(&mut self, params: &mut ModelParams, lr: f64, trainable: impl Fn(&str) -> bool) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, p)) in params.params_mut().into_iter().enumerate() {
            if !trainable(&name) {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut p.w)
                .and(m)
                .and(v)
                .and(&p.g)
                .for_each(|w, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub metrics: Vec<MetricsRow>,
    pub best_step: u64,
    pub best_metric: f64,
    pub final_mean_loss: f64,
}

enum Objective<'a> {
    Pretrain { vocab: &'a Vocabulary, ccfg: &'a CorruptionConfig },
    Train,
}

fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    // splitmix-style mixing keeps per-example streams independent of the
    // batch schedule
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(1 + epoch as u64))
        .wrapping_add(0x517c_c1b7_2722_0a95_u64.wrapping_mul(1 + index as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Masked-token top-1 accuracy over the validation set with per-example
/// fixed corruption, so successive evaluations are comparable.
pub fn masked_accuracy(
    params: &mut ModelParams,
    examples: &[Example],
    vocab: &Vocabulary,
    ccfg: &CorruptionConfig,
) -> Result<f64, TrainError> {
    let mut hit = 0u64;
    let mut total = 0u64;
    for (i, ex) in examples.iter().enumerate() {
        if ex.headline.is_empty() {
            continue;
        }
        let mut rng = example_rng(ccfg.seed, 0, i);
        let (corrupted, positions) = loop {
            let (c, p) = corrupt_with_rng(&ex.headline, vocab, ccfg, &mut rng);
            if !p.is_empty() {
                break (c, p);
            }
        };
        let hidden = params.encode(&corrupted)?;
        let h_se = params.extract_style(&ex.style)?;
        let h_te = params.extract_trend(&ex.trend)?;
        let fused = ModelParams::fuse(&hidden, &h_se, &h_te);
        let (dec_input, targets) = decoder_io(&ex.headline, false);
        let cache = params.decoder_forward(&dec_input, &fused, &mut DropoutCtx::eval())?;
        let logits = params.logits(&cache.hidden);
        for &p in &positions {
            let row = logits.row(p);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, _)| j as u32)
                .unwrap();
            total += 1;
            if argmax == targets[p] {
                hit += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Mean ROUGE-L F1 of beam-search output against the reference headlines.
pub fn validation_rouge_l(
    params: &ModelParams,
    examples: &[Example],
    vocab: &Vocabulary,
    gen_cfg: &GenerationConfig,
) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for ex in examples {
        let hidden = params.encode(&ex.article)?;
        let h_se = params.extract_style(&ex.style)?;
        let h_te = params.extract_trend(&ex.trend)?;
        let fused = ModelParams::fuse(&hidden, &h_se, &h_te);
        let mut scorer = ModelScorer::new(params, &fused);
        let hyps = beam_search(&mut scorer, gen_cfg);
        let cand = hyps.first().map(|h| h.tokens.clone()).unwrap_or_default();
        let cand_seq = TokenSeq::new(vocab.decode(&cand));
        let ref_seq = TokenSeq::new(vocab.decode(&ex.headline));
        sum += rouge_l(&cand_seq, &ref_seq).f1;
    }
    Ok(sum / examples.len() as f64)
}

/// Runs either loop to completion: shuffled epochs, gradient accumulation,
/// the shared LR schedule, periodic validation, and best/final checkpoints
/// written under `out_dir` when given. Deterministic given the seed.
#[allow(clippy::too_many_arguments)]
fn run_loop(
    params: &mut ModelParams,
    objective: Objective<'_>,
    train: &[Example],
    val: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    gen_cfg: &GenerationConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::BadTrainConfig(format!("out dir: {e}")))?;
    }
    let trainable: fn(&str) -> bool = match objective {
        Objective::Pretrain { .. } => is_extractor_param,
        Objective::Train => |_| true,
    };
    let mut adam = Adam::new(params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step: u64 = 0;
    let mut metrics = Vec::new();
    let mut best: Option<(u64, f64)> = None;
    let mut last_losses: Vec<f64> = Vec::new();
    let micro_per_step = cfg.grad_accum;

    let evaluate = |params: &mut ModelParams, step: u64, loss: f64, metrics: &mut Vec<MetricsRow>, best: &mut Option<(u64, f64)>| -> Result<(), TrainError> {
        let metric = match &objective {
            Objective::Pretrain { vocab, ccfg } => masked_accuracy(params, val, vocab, ccfg)?,
            Objective::Train => validation_rouge_l(params, val, vocab, gen_cfg)?,
        };
        let lr = lr_schedule(cfg.lr_scale, step.max(1), cfg.warmup)?;
        metrics.push(MetricsRow { step, loss, lr, val_metric: Some(metric) });
        if best.map(|(_, m)| metric > m).unwrap_or(true) {
            *best = Some((step, metric));
            if let Some(dir) = out_dir {
                checkpoint::save(params, Some(vocab), &dir.join("best.ckpt"))?;
            }
        }
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut cursor = 0usize;
        while cursor < order.len() {
            // one optimizer step = grad_accum micro-batches
            params.zero_grads();
            let mut step_loss = 0.0;
            let mut n_examples = 0usize;
            for _ in 0..micro_per_step {
                let end = (cursor + cfg.batch_size).min(order.len());
                for &idx in &order[cursor..end] {
                    let ex = &train[idx];
                    let mut drop = if params.cfg.dropout > 0.0 {
                        DropoutCtx::train(params.cfg.dropout, example_rng(cfg.seed ^ 0xd5, epoch, idx))
                    } else {
                        DropoutCtx::eval()
                    };
                    let loss = match &objective {
                        Objective::Pretrain { vocab, ccfg } => {
                            let mut rng = example_rng(ccfg.seed, epoch, idx);
                            pretrain_loss_with_rng(params, ex, vocab, ccfg, &mut rng, &mut drop, true)?
                        }
                        Objective::Train => train_loss(params, ex, &mut drop, true)?,
                    };
                    if !loss.is_finite() {
                        return Err(TrainError::NonFiniteLoss { loss, step, example: idx });
                    }
                    step_loss += loss;
                    n_examples += 1;
                }
                cursor = end;
                if cursor >= order.len() {
                    break;
                }
            }
            if n_examples == 0 {
                break;
            }
            // normalize accumulated sums to the mean over the update's examples
            for (name, p) in params.params_mut() {
                if trainable(&name) {
                    p.g /= n_examples as f64;
                }
            }
            step += 1;
            let lr = lr_schedule(cfg.lr_scale, step, cfg.warmup)?;
            adam.step(params, lr, trainable);
            let mean_loss = step_loss / n_examples as f64;
            last_losses.push(mean_loss);
            if step % cfg.eval_interval == 0 {
                evaluate(params, step, mean_loss, &mut metrics, &mut best)?;
            } else {
                metrics.push(MetricsRow { step, loss: mean_loss, lr, val_metric: None });
            }
        }
        let epoch_loss = last_losses.last().copied().unwrap_or(f64::NAN);
        evaluate(params, step, epoch_loss, &mut metrics, &mut best)?;
    }
    if let Some(dir) = out_dir {
        checkpoint::save(params, Some(vocab), &dir.join("final.ckpt"))?;
    }
    let (best_step, best_metric) = best.unwrap_or((0, 0.0));
    let tail = last_losses.iter().rev().take(10).copied().collect::<Vec<_>>();
    let final_mean_loss = if tail.is_empty() { f64::NAN } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    Ok(TrainReport { metrics, best_step, best_metric, final_mean_loss })
}

/// Pretraining: masked reconstruction with the encoder, decoder, and
/// shared embedding frozen; best checkpoint by masked-token accuracy.
pub fn run_pretraining(
    params: &mut ModelParams,
    train: &[Example],
    val: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    ccfg: &CorruptionConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    ccfg.validate()?;
    run_loop(
        params,
        Objective::Pretrain { vocab, ccfg },
        train,
        val,
        vocab,
        cfg,
        &GenerationConfig::default(),
        out_dir,
    )
}

/// Training: full-parameter teacher-forced NLL; best checkpoint by
/// validation ROUGE-L F1.
pub fn run_training(
    params: &mut ModelParams,
    train: &[Example],
    val: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    gen_cfg: &GenerationConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    run_loop(params, Objective::Train, train, val, vocab, cfg, gen_cfg, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn test_vocab(n: usize) -> Vocabulary {
        Vocabulary::from_real_tokens((0..n).map(|i| format!("t{i:02}")).collect(), 0, 1.0)
    }

    fn toy_example(vocab: &Vocabulary) -> Example {
        let r = vocab.n_reserved();
        Example {
            article: vec![r, r + 1, r + 2, r + 3],
            style: vec![r + 4, r + 5],
            trend: vec![r + 6],
            headline: vec![r + 1, r + 2, r + 7],
        }
    }

    #[test]
    fn corrupt_identity_at_rate_zero() {
        let vocab = test_vocab(20);
        let y = vec![6, 7, 8, 9];
        let cfg = CorruptionConfig { select_rate: 0.0, seed: 1, ..Default::default() };
        let (out, pos) = corrupt(&y, &vocab, &cfg);
        assert_eq!(out, y);
        assert!(pos.is_empty());
    }

    #[test]
    fn corrupt_all_mask_at_full_rates() {
        let vocab = test_vocab(20);
        let y = vec![6, 7, 8, 9];
        let cfg = CorruptionConfig {
            select_rate: 1.0,
            mask_fraction: 1.0,
            random_fraction: 0.0,
            keep_fraction: 0.0,
            seed: 1,
        };
        let (out, pos) = corrupt(&y, &vocab, &cfg);
        assert!(out.iter().all(|&t| t == symbols::MASK_ID));
        assert_eq!(pos, vec![0, 1, 2, 3]);
    }

    #[test]
    fn corrupt_statistics_near_configured_rates() {
        let vocab = test_vocab(50);
        let y: Vec<u32> = (0..120_000).map(|i| 6 + (i % 44) as u32).collect();
        let cfg = CorruptionConfig { seed: 9, ..Default::default() };
        let (out, pos) = corrupt(&y, &vocab, &cfg);
        let selected = pos.len() as f64 / y.len() as f64;
        assert!((selected - 0.15).abs() < 0.01, "selected {selected}");
        let mut masked = 0usize;
        let mut kept = 0usize;
        let mut random = 0usize;
        for &p in &pos {
            if out[p] == symbols::MASK_ID {
                masked += 1;
            } else if out[p] == y[p] {
                kept += 1;
            } else {
                random += 1;
            }
        }
        let n = pos.len() as f64;
        assert!((masked as f64 / n - 0.8).abs() < 0.02);
        // a "random" replacement can collide with the original token, which
        // counts toward kept; the tolerance absorbs it
        assert!((random as f64 / n - 0.1).abs() < 0.02);
        assert!((kept as f64 / n - 0.1).abs() < 0.02);
    }

    #[test]
    fn corruption_config_validation() {
        let bad = CorruptionConfig { mask_fraction: 0.5, random_fraction: 0.1, keep_fraction: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn uniform_logits_give_log_vocab_loss() {
        let vocab = test_vocab(10);
        let cfg = ModelConfig { vocab_size: vocab.len(), d_model: 8, n_layers: 1, n_heads: 1, ffn_width: 16, max_positions: 16, dropout: 0.0, seed: 3 };
        let mut params = ModelParams::new(&cfg).unwrap();
        // zero embeddings + zero decoder output path give uniform logits
        for (_, p) in params.params_mut() {
            p.w.fill(0.0);
        }
        let ex = toy_example(&vocab);
        let loss = train_loss(&mut params, &ex, &mut DropoutCtx::eval(), false).unwrap();
        assert!((loss - (vocab.len() as f64).ln()).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn train_loss_is_nonnegative_and_duplication_invariant() {
        let vocab = test_vocab(12);
        let cfg = ModelConfig { vocab_size: vocab.len(), d_model: 8, n_layers: 1, n_heads: 2, ffn_width: 16, max_positions: 16, dropout: 0.0, seed: 4 };
        let mut params = ModelParams::new(&cfg).unwrap();
        let ex = toy_example(&vocab);
        let single = train_loss(&mut params, &ex, &mut DropoutCtx::eval(), false).unwrap();
        assert!(single >= 0.0);
        // the batch mean of identical examples equals the single loss
        let doubled = (train_loss(&mut params, &ex, &mut DropoutCtx::eval(), false).unwrap() + single) / 2.0;
        assert!((doubled - single).abs() < 1e-12);
    }

    #[test]
    fn pretrain_gradients_respect_freezing() {
        let vocab = test_vocab(12);
        let cfg = ModelConfig { vocab_size: vocab.len(), d_model: 8, n_layers: 1, n_heads: 2, ffn_width: 16, max_positions: 16, dropout: 0.0, seed: 5 };
        let mut params = ModelParams::new(&cfg).unwrap();
        let ex = toy_example(&vocab);
        let ccfg = CorruptionConfig { seed: 11, select_rate: 0.5, ..Default::default() };
        params.zero_grads();
        pretrain_loss(&mut params, &ex, &vocab, &ccfg, &mut DropoutCtx::eval(), true).unwrap();
        let mut saw_extractor_grad = false;
        for (name, p) in params.params_mut() {
            let norm: f64 = p.g.iter().map(|v| v * v).sum();
            if is_extractor_param(&name) {
                saw_extractor_grad |= norm > 0.0;
            } else {
                assert_eq!(norm, 0.0, "frozen {name} has gradient");
            }
        }
        assert!(saw_extractor_grad);
    }

    #[test]
    fn lr_matches_closed_form() {
        assert!((lr_at(100, 100).unwrap() - 2e-4).abs() < 1e-18);
        assert!((lr_at(1, 100).unwrap() - 2e-6).abs() < 1e-18);
        assert!(lr_at(0, 100).is_err());
        // non-decreasing through warmup, non-increasing after
        let mut prev = 0.0;
        for step in 1..=100 {
            let lr = lr_at(step, 100).unwrap();
            assert!(lr >= prev);
            prev = lr;
        }
        for step in 101..1_000 {
            let lr = lr_at(step, 100).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn pretraining_leaves_frozen_tensors_untouched() {
        let vocab = test_vocab(12);
        let cfg = ModelConfig { vocab_size: vocab.len(), d_model: 8, n_layers: 1, n_heads: 2, ffn_width: 16, max_positions: 16, dropout: 0.0, seed: 6 };
        let mut params = ModelParams::new(&cfg).unwrap();
        let mut initial = ModelParams::new(&cfg).unwrap();
        let ex = toy_example(&vocab);
        let train: Vec<Example> = vec![ex.clone(); 6];
        let tcfg = TrainConfig { batch_size: 2, grad_accum: 1, warmup: 5, lr_scale: 1e-3, epochs: 3, eval_interval: 100, seed: 1 };
        let ccfg = CorruptionConfig { seed: 2, select_rate: 0.5, ..Default::default() };
        run_pretraining(&mut params, &train, &[ex], &vocab, &tcfg, &ccfg, None).unwrap();
        let after = params.params_mut();
        let before = initial.params_mut();
        let mut extractor_changed = false;
        for ((name, a), (_, b)) in after.into_iter().zip(before) {
            let identical = a.w.iter().zip(b.w.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
            if is_extractor_param(&name) {
                extractor_changed |= !identical;
            } else {
                assert!(identical, "frozen {name} changed");
            }
        }
        assert!(extractor_changed, "no extractor parameter moved");
    }

    #[test]
    fn same_seed_reproduces_checkpoints() {
        let vocab = test_vocab(12);
        let cfg = ModelConfig { vocab_size: vocab.len(), d_model: 8, n_layers: 1, n_heads: 2, ffn_width: 16, max_positions: 16, dropout: 0.1, seed: 6 };
        let ex = toy_example(&vocab);
        let train: Vec<Example> = vec![ex.clone(); 4];
        let tcfg = TrainConfig { batch_size: 2, grad_accum: 2, warmup: 5, lr_scale: 1e-3, epochs: 2, eval_interval: 100, seed: 9 };
        let gen = GenerationConfig { max_length: 5, ..Default::default() };
        let run = |seed: u64| -> Vec<u64> {
            let mut params = ModelParams::new(&cfg).unwrap();
            run_training(&mut params, &train, &[], &vocab, &TrainConfig { seed, ..tcfg.clone() }, &gen, None).unwrap();
            params.params_mut().into_iter().flat_map(|(_, p)| p.w.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }
}
