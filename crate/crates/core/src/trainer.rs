//! Adversarial training procedures and the leave-one-subject-out loop.
//!
//! One training step binds the bundle to a fresh tape, stacks every row the
//! step needs (source batch, target batch, pseudo-labeled anchors and their
//! source partners) into one input matrix, runs the feature extractor once
//! and routes slices of the features into the class and domain heads. The
//! domain head sees features through the reversal layer, so a single
//! backward pass and optimizer step descends on the class loss while the
//! feature extractor ascends on the domain loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grl_lambda_schedule, Tape, Tensor, Var};
use crate::cluster::{self, PseudoLabelSet};
use crate::error::{Error, Result};
use crate::nets::{transfer_pretrained, Autoencoder, BoundBundle, ModelBundle};
use crate::optim::{Optimizer, OptimizerKind};
use crate::synth::SubjectData;

pub const SOURCE_DOMAIN: usize = 0;
pub const TARGET_DOMAIN: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Class loss on source only.
    Nontransfer,
    /// Class loss plus global adversarial domain loss.
    Dan,
    /// Global loss during warm-up, then the subdomain-adjusted domain loss.
    Msan,
    /// Autoencoder pre-training, encoder transfer, then the `Msan` schedule.
    MsanPt,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Nontransfer, Mode::Dan, Mode::Msan, Mode::MsanPt];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Nontransfer => "nontransfer",
            Mode::Dan => "dan",
            Mode::Msan => "msan",
            Mode::MsanPt => "msan_pt",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub epochs: usize,
    pub batch_source: usize,
    pub batch_target: usize,
    /// Fraction of each cluster kept as pseudo-labeled anchors.
    pub q: f64,
    pub subdomain_warmup_epochs: usize,
    pub pseudo_refresh_every: usize,
    pub grl_lambda: f64,
    /// Scale `grl_lambda` by the `2/(1+exp(-10p))-1` ramp over training progress.
    pub grl_ramp: bool,
    pub ae_pretrain_epochs: usize,
    /// Learning rate and optimizer of autoencoder pre-training, which is
    /// plain reconstruction and needs none of the adversarial tuning.
    pub ae_lr: f64,
    pub ae_optimizer: OptimizerKind,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Msan,
            lr: 0.001,
            epochs: 50,
            batch_source: 64,
            batch_target: 64,
            q: 0.10,
            subdomain_warmup_epochs: 5,
            pseudo_refresh_every: 1,
            grl_lambda: 1.0,
            grl_ramp: false,
            ae_pretrain_epochs: 30,
            ae_lr: 0.001,
            ae_optimizer: OptimizerKind::Adam,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_source < 1 {
            return Err(Error::config("batch_source", "must be at least 1"));
        }
        if self.batch_target < 1 {
            return Err(Error::config("batch_target", "must be at least 1"));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::config("q", "must lie in (0, 1]"));
        }
        if self.subdomain_warmup_epochs > self.epochs {
            return Err(Error::config("subdomain_warmup_epochs", "cannot exceed epochs"));
        }
        if self.pseudo_refresh_every < 1 {
            return Err(Error::config("pseudo_refresh_every", "must be at least 1"));
        }
        if !(self.ae_lr > 0.0) {
            return Err(Error::config("ae_lr", "must be positive"));
        }
        if !(self.grl_lambda >= 0.0) {
            return Err(Error::config("grl_lambda", "must be non-negative"));
        }
        Ok(())
    }

    fn lambda_at(&self, epoch: usize) -> f64 {
        if self.grl_ramp {
            self.grl_lambda * grl_lambda_schedule(epoch as f64 / self.epochs as f64)
        } else {
            self.grl_lambda
        }
    }
}

/// Labeled source rows, `[n, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSplit {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

/// Unlabeled target rows, `[n, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSplit {
    pub features: Tensor,
}

/// Target ground truth. Only evaluation can read it.
#[derive(Clone, Debug, PartialEq)]
pub struct HeldOutLabels(Vec<usize>);

impl HeldOutLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        HeldOutLabels(labels)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [usize] {
        &mut self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub source: LabeledSplit,
    pub target: UnlabeledSplit,
    pub target_truth: HeldOutLabels,
    pub num_classes: usize,
}

impl DomainDataset {
    pub fn new(
        source_features: Tensor,
        source_labels: Vec<usize>,
        target_features: Tensor,
        target_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let source = source_features.flatten_rows();
        let target = target_features.flatten_rows();
        if source.rows() != source_labels.len() || target.rows() != target_labels.len() {
            return Err(Error::Shape("feature rows and label counts differ".into()));
        }
        if source.rows() == 0 || target.rows() == 0 {
            return Err(Error::Data("source and target must both be non-empty".into()));
        }
        if source.cols() != target.cols() {
            return Err(Error::Shape(format!(
                "source width {} differs from target width {}",
                source.cols(),
                target.cols()
            )));
        }
        if let Some(&bad) = source_labels.iter().chain(&target_labels).find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(DomainDataset {
            source: LabeledSplit { features: source, labels: source_labels },
            target: UnlabeledSplit { features: target },
            target_truth: HeldOutLabels(target_labels),
            num_classes,
        })
    }

    /// Pools every subject except `target_id` as source, sorted by subject id.
    pub fn leave_one_out(subjects: &[SubjectData], target_id: usize) -> Result<Self> {
        let mut sorted: Vec<&SubjectData> = subjects.iter().collect();
        sorted.sort_by_key(|s| s.subject_id);
        let target = sorted
            .iter()
            .find(|s| s.subject_id == target_id)
            .ok_or_else(|| Error::Data(format!("no subject with id {target_id}")))?;
        let num_classes = subjects.iter().flat_map(|s| s.labels.iter()).max().map_or(0, |m| m + 1);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for s in sorted.iter().filter(|s| s.subject_id != target_id) {
            let f = s.flat_features();
            width = Some(f.cols());
            rows.extend_from_slice(f.data());
            labels.extend_from_slice(&s.labels);
        }
        let width = width.ok_or_else(|| Error::Data("no source subjects".into()))?;
        let source = Tensor::new(vec![labels.len(), width], rows)?;
        DomainDataset::new(source, labels, target.flat_features(), target.labels.clone(), num_classes)
    }
}

/// One step's data.
#[derive(Clone, Debug)]
pub struct Batch {
    pub source: Tensor,
    pub source_labels: Vec<usize>,
    /// `[0, d]` when the step uses no target rows.
    pub target: Tensor,
}

/// Pseudo-labeled target rows with one same-class and one other-class
/// source partner each.
#[derive(Clone, Debug)]
pub struct AnchorPairs {
    pub target: Tensor,
    pub same_class: Tensor,
    pub other_class: Tensor,
}

impl AnchorPairs {
    pub fn len(&self) -> usize {
        self.target.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.target.rows() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Pairing {
    target_index: usize,
    same: usize,
    other: usize,
}

/// Draws one same-class and one other-class source partner for every
/// pseudo-labeled target sample.
fn draw_partners(pseudo: &PseudoLabelSet, labels: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Pairing>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    pseudo
        .entries
        .iter()
        .map(|e| {
            let same = &by_class[e.label];
            if same.is_empty() {
                return Err(Error::Data(format!("no source sample of class {}", e.label)));
            }
            let others: usize = (0..k).filter(|&c| c != e.label).map(|c| by_class[c].len()).sum();
            if others == 0 {
                return Err(Error::Data(format!("no source sample outside class {}", e.label)));
            }
            let s = same[rng.random_range(0..same.len())];
            let mut pick = rng.random_range(0..others);
            let mut other = 0;
            for c in (0..k).filter(|&c| c != e.label) {
                if pick < by_class[c].len() {
                    other = by_class[c][pick];
                    break;
                }
                pick -= by_class[c].len();
            }
            Ok(Pairing { target_index: e.target_index, same: s, other })
        })
        .collect()
}

fn anchors_from(pairs: &[Pairing], source: &Tensor, target: &Tensor) -> AnchorPairs {
    let t: Vec<usize> = pairs.iter().map(|p| p.target_index).collect();
    let s: Vec<usize> = pairs.iter().map(|p| p.same).collect();
    let o: Vec<usize> = pairs.iter().map(|p| p.other).collect();
    AnchorPairs {
        target: target.select_rows(&t),
        same_class: source.select_rows(&s),
        other_class: source.select_rows(&o),
    }
}

/// Scalar loss nodes of one step.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: Var,
    pub class: Var,
    pub domain: Option<Var>,
    pub subdomain: Option<Var>,
}

/// Plain values of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub class: f64,
    pub domain: f64,
    pub subdomain: f64,
}

impl LossNodes {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.value(x).data()[0]);
        LossValues {
            total: v(Some(self.total)),
            class: v(Some(self.class)),
            domain: v(self.domain),
            subdomain: v(self.subdomain),
        }
    }
}

pub fn stack_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let cols = parts.iter().find(|p| p.rows() > 0).map_or(parts[0].cols(), |p| p.cols());
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.rows() == 0 {
            continue;
        }
        if p.cols() != cols {
            return Err(Error::Shape(format!("cannot stack width {} onto width {cols}", p.cols())));
        }
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![rows, cols], data)
}

fn domain_ce(
    tape: &mut Tape,
    bound: &BoundBundle,
    feats: Var,
    rows: &[usize],
    labels: &[usize],
    reverse: Option<f64>,
) -> Result<Var> {
    let f = tape.gather_rows(feats, rows)?;
    let f = match reverse {
        Some(lambda) => tape.grl(f, lambda)?,
        None => f,
    };
    let logits = bound.predict_domain(tape, f)?;
    tape.softmax_cross_entropy(logits, labels)
}

/// Which domain objective a step uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    ClassOnly,
    Global,
    Subdomain,
}

/// Records one step's loss graph on `tape`.
///
/// `Global`: source class loss plus the domain loss over every batch row
/// through the reversal layer. `Subdomain`: the same two terms plus, for
/// every anchor, the domain loss on (anchor, same-class partner) through the
/// reversal layer and on (anchor, other-class partner) without it.
pub fn build_loss(
    tape: &mut Tape,
    bound: &BoundBundle,
    batch: &Batch,
    anchors: Option<&AnchorPairs>,
    objective: Objective,
    lambda: f64,
) -> Result<LossNodes> {
    let ns = batch.source.rows();
    if ns == 0 {
        return Err(Error::Argument("batch needs at least one source sample".into()));
    }
    if ns != batch.source_labels.len() {
        return Err(Error::Shape("source rows and labels differ".into()));
    }
    let nt = if objective == Objective::ClassOnly { 0 } else { batch.target.rows() };
    let anchors = match (objective, anchors) {
        (Objective::Subdomain, Some(a)) if !a.is_empty() => Some(a),
        _ => None,
    };
    let na = anchors.map_or(0, AnchorPairs::len);

    let empty = Tensor::zeros(&[0, batch.source.cols()]);
    let target = if nt > 0 { &batch.target } else { &empty };
    let input = match anchors {
        Some(a) => stack_rows(&[&batch.source, target, &a.target, &a.same_class, &a.other_class])?,
        None => stack_rows(&[&batch.source, target])?,
    };
    let x = tape.constant(input);
    let feats = bound.forward_features(tape, x)?;

    let src_rows: Vec<usize> = (0..ns).collect();
    let f_src = tape.gather_rows(feats, &src_rows)?;
    let logits = bound.predict_class(tape, f_src)?;
    let class = tape.softmax_cross_entropy(logits, &batch.source_labels)?;
    if objective == Objective::ClassOnly {
        return Ok(LossNodes { total: class, class, domain: None, subdomain: None });
    }

    let all: Vec<usize> = (0..ns + nt).collect();
    let mut dom_labels = vec![SOURCE_DOMAIN; ns];
    dom_labels.resize(ns + nt, TARGET_DOMAIN);
    let domain = domain_ce(tape, bound, feats, &all, &dom_labels, Some(lambda))?;
    let mut total = tape.add(class, domain)?;

    let mut subdomain = None;
    if na > 0 {
        let base = ns + nt;
        let anchor_rows: Vec<usize> = (base..base + na).collect();
        let same_rows: Vec<usize> = (base + na..base + 2 * na).collect();
        let other_rows: Vec<usize> = (base + 2 * na..base + 3 * na).collect();
        let mut pair_labels = vec![TARGET_DOMAIN; na];
        pair_labels.resize(2 * na, SOURCE_DOMAIN);

        let same: Vec<usize> = anchor_rows.iter().chain(&same_rows).copied().collect();
        let aligned = domain_ce(tape, bound, feats, &same, &pair_labels, Some(lambda))?;
        let other: Vec<usize> = anchor_rows.iter().chain(&other_rows).copied().collect();
        let separated = domain_ce(tape, bound, feats, &other, &pair_labels, None)?;
        let sub = tape.add(aligned, separated)?;
        total = tape.add(total, sub)?;
        subdomain = Some(sub);
    }
    Ok(LossNodes { total, class, domain: Some(domain), subdomain })
}

/// Global objective evaluated on a fresh tape.
pub fn loss_global(bundle: &ModelBundle, batch: &Batch, lambda: f64) -> Result<LossValues> {
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape);
    let nodes = build_loss(&mut tape, &bound, batch, None, Objective::Global, lambda)?;
    Ok(nodes.values(&tape))
}

/// Subdomain-adjusted objective evaluated on a fresh tape.
pub fn loss_subdomain(bundle: &ModelBundle, batch: &Batch, anchors: &AnchorPairs, lambda: f64) -> Result<LossValues> {
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape);
    let nodes = build_loss(&mut tape, &bound, batch, Some(anchors), Objective::Subdomain, lambda)?;
    Ok(nodes.values(&tape))
}

/// Pairs every pseudo-labeled target sample with source partners.
pub fn pair_anchors(
    pseudo: &PseudoLabelSet,
    source: &LabeledSplit,
    target: &UnlabeledSplit,
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AnchorPairs> {
    let pairs = draw_partners(pseudo, &source.labels, num_classes, rng)?;
    Ok(anchors_from(&pairs, &source.features, &target.features))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub class_loss: f64,
    pub domain_loss: f64,
    pub subdomain_loss: f64,
    pub target_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub epochs: Vec<EpochRecord>,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// Mean reconstruction loss per pre-training epoch (`msan_pt` only).
    pub ae_loss: Vec<f64>,
}

impl Metrics {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,class_loss,domain_loss,subdomain_loss,target_acc\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.class_loss, r.domain_loss, r.subdomain_loss, r.target_acc
            ));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and per-class recall of class predictions from logits.
pub fn score_logits(logits: &Tensor, labels: &[usize]) -> Result<Evaluation> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", logits.rows(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty set".into()));
    }
    let k = logits.cols();
    let mut hits = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Data(format!("label {y} outside [0, {k})")));
        }
        counts[y] += 1;
        if argmax(logits.row(i)) == y {
            hits[y] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    let per_class = hits.iter().zip(&counts).map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 }).collect();
    Ok(Evaluation { accuracy: correct as f64 / labels.len() as f64, per_class })
}

/// Scores `D_c(G_f(x))` against `labels`.
pub fn evaluate(bundle: &ModelBundle, features: &Tensor, labels: &[usize]) -> Result<Evaluation> {
    let x = features.flatten_rows();
    if x.cols() != bundle.input_width() {
        return Err(Error::Shape(format!("model expects width {}, got {}", bundle.input_width(), x.cols())));
    }
    score_logits(&bundle.class_logits(&x)?, labels)
}

/// Independent RNG streams of one run.
struct Streams {
    batches: ChaCha8Rng,
    pairs: ChaCha8Rng,
    pretrain: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |id| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        Streams { batches: stream(1), pairs: stream(2), pretrain: stream(3) }
    }
}

/// Minimizes reconstruction MSE over `features` (`[n, d]`, no labels).
/// Returns the trained autoencoder and the mean loss of every epoch.
pub fn pretrain_autoencoder(
    mut ae: Autoencoder,
    features: &Tensor,
    cfg: &TrainConfig,
) -> Result<(Autoencoder, Vec<f64>)> {
    let x = features.flatten_rows();
    if x.rows() == 0 {
        return Err(Error::Argument("autoencoder pre-training needs data".into()));
    }
    if x.cols() != ae.encoder.spec.input_width() {
        return Err(Error::Shape(format!(
            "autoencoder expects width {}, got {}",
            ae.encoder.spec.input_width(),
            x.cols()
        )));
    }
    let mut rng = Streams::new(cfg.seed).pretrain;
    let mut opt = Optimizer::new(cfg.ae_optimizer, cfg.ae_lr);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut curve = Vec::with_capacity(cfg.ae_pretrain_epochs);
    for _ in 0..cfg.ae_pretrain_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_source) {
            let xb = x.select_rows(chunk);
            let mut tape = Tape::new();
            let enc = ae.encoder.bind(&mut tape);
            let dec = ae.decoder.bind(&mut tape);
            let xv = tape.constant(xb);
            let code = enc.forward(&mut tape, xv)?;
            let recon = dec.forward(&mut tape, code)?;
            let loss = tape.mse(recon, xv)?;
            total += tape.value(loss).data()[0];
            steps += 1;
            let g = tape.backward(loss)?;
            let mut grads = enc.grads(&g);
            grads.extend(dec.grads(&g));
            opt.step(ae.params_mut(), &grads);
        }
        curve.push(total / steps as f64);
    }
    Ok((ae, curve))
}

fn fold_seed(seed: u64, subject_id: usize) -> u64 {
    splitmix64(seed ^ splitmix64(subject_id as u64 ^ 0xA5A5_5A5A))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains a bundle on `dataset` according to `cfg.mode`.
///
/// Target ground truth is read only to report per-epoch and final accuracy.
pub fn fit(dataset: &DomainDataset, cfg: &TrainConfig) -> Result<(ModelBundle, Metrics)> {
    fit_with(dataset, cfg, None)
}

/// Like [`fit`], but an `msan_pt` run starts from the supplied pre-trained
/// autoencoder (and its loss curve) instead of training one.
pub fn fit_with(
    dataset: &DomainDataset,
    cfg: &TrainConfig,
    pretrained: Option<(&Autoencoder, &[f64])>,
) -> Result<(ModelBundle, Metrics)> {
    cfg.validate()?;
    let mut bundle = ModelBundle::with_defaults(dataset.source.features.cols(), dataset.num_classes, cfg.seed)?;
    let mut metrics = Metrics::default();
    if cfg.mode == Mode::MsanPt {
        let (ae, curve) = match pretrained {
            Some((ae, curve)) => (ae.clone(), curve.to_vec()),
            None => {
                let all = stack_rows(&[&dataset.source.features, &dataset.target.features])?;
                let ae = Autoencoder::new(&bundle.feature.spec, cfg.seed.wrapping_add(3))?;
                pretrain_autoencoder(ae, &all, cfg)?
            }
        };
        bundle = transfer_pretrained(&ae, &bundle)?;
        metrics.ae_loss = curve;
    }
    train_adversarial(
        &mut bundle,
        &dataset.source,
        &dataset.target,
        dataset.num_classes,
        cfg,
        |b| evaluate(b, &dataset.target.features, dataset.target_truth.as_slice()).map(|e| e.accuracy),
        &mut metrics,
    )?;
    let eval = evaluate(&bundle, &dataset.target.features, dataset.target_truth.as_slice())?;
    metrics.accuracy = eval.accuracy;
    metrics.per_class_accuracy = eval.per_class;
    Ok((bundle, metrics))
}

/// The training loop proper. It sees only the labeled source split and the
/// unlabeled target split; `score` reports target accuracy per epoch.
fn train_adversarial(
    bundle: &mut ModelBundle,
    source: &LabeledSplit,
    target: &UnlabeledSplit,
    num_classes: usize,
    cfg: &TrainConfig,
    score: impl Fn(&ModelBundle) -> Result<f64>,
    metrics: &mut Metrics,
) -> Result<()> {
    let mut streams = Streams::new(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let ns = source.features.rows();
    let nt = target.features.rows();
    let mut src_order: Vec<usize> = (0..ns).collect();
    let mut tgt_order: Vec<usize> = (0..nt).collect();
    let steps = ns.div_ceil(cfg.batch_source);
    let subdomain_mode = matches!(cfg.mode, Mode::Msan | Mode::MsanPt);
    let mut pseudo: Option<PseudoLabelSet> = None;

    for epoch in 0..cfg.epochs {
        let lambda = cfg.lambda_at(epoch);
        let subdomain_on = subdomain_mode && epoch >= cfg.subdomain_warmup_epochs;
        let objective = match cfg.mode {
            Mode::Nontransfer => Objective::ClassOnly,
            _ if subdomain_on => Objective::Subdomain,
            _ => Objective::Global,
        };

        // Pseudo-labels change only here, at epoch boundaries.
        let mut anchor_pairs: Vec<Pairing> = Vec::new();
        if subdomain_on {
            if (epoch - cfg.subdomain_warmup_epochs).is_multiple_of(cfg.pseudo_refresh_every) || pseudo.is_none() {
                let fs = bundle.features(&source.features)?;
                let ft = bundle.features(&target.features)?;
                let (_, selected) = cluster::pseudo_label(&fs, &source.labels, &ft, num_classes, cfg.q)?;
                pseudo = Some(selected);
            }
            if let Some(p) = &pseudo {
                anchor_pairs = draw_partners(p, &source.labels, num_classes, &mut streams.pairs)?;
            }
        }
        // Each target index appears at most once in a pseudo-label set.
        let mut anchor_of = vec![None; nt];
        for (i, p) in anchor_pairs.iter().enumerate() {
            anchor_of[p.target_index] = Some(i);
        }

        src_order.shuffle(&mut streams.batches);
        tgt_order.shuffle(&mut streams.batches);
        let mut tgt_cursor = 0;
        let mut sums = LossValues::default();
        for step in 0..steps {
            let s_idx = &src_order[step * cfg.batch_source..((step + 1) * cfg.batch_source).min(ns)];
            let mut t_idx = Vec::with_capacity(cfg.batch_target);
            while t_idx.len() < cfg.batch_target.min(nt) {
                if tgt_cursor == nt {
                    tgt_order.shuffle(&mut streams.batches);
                    tgt_cursor = 0;
                }
                t_idx.push(tgt_order[tgt_cursor]);
                tgt_cursor += 1;
            }
            let batch = Batch {
                source: source.features.select_rows(s_idx),
                source_labels: s_idx.iter().map(|&i| source.labels[i]).collect(),
                target: target.features.select_rows(&t_idx),
            };
            let in_batch: Vec<Pairing> = t_idx.iter().filter_map(|&t| anchor_of[t]).map(|i| anchor_pairs[i]).collect();
            let anchors = anchors_from(&in_batch, &source.features, &target.features);

            let mut tape = Tape::new();
            let bound = bundle.bind(&mut tape);
            let nodes = build_loss(&mut tape, &bound, &batch, Some(&anchors), objective, lambda)?;
            let v = nodes.values(&tape);
            sums.class += v.class;
            sums.domain += v.domain;
            sums.subdomain += v.subdomain;
            let g = tape.backward(nodes.total)?;
            let grads = bound.grads(&g);
            opt.step(bundle.params_mut(), &grads);
        }
        let n = steps as f64;
        metrics.epochs.push(EpochRecord {
            epoch,
            class_loss: sums.class / n,
            domain_loss: sums.domain / n,
            subdomain_loss: sums.subdomain / n,
            target_acc: score(bundle)?,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub subject_id: usize,
    pub accuracy: f64,
    pub metrics: Metrics,
    pub bundle: ModelBundle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LosoReport {
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    /// Population standard deviation of the fold accuracies.
    pub std: f64,
}

impl LosoReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    /// `fold,subject_id,accuracy` rows followed by `mean,<v>` and `std,<v>`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("fold,subject_id,accuracy\n");
        for f in &self.folds {
            s.push_str(&format!("{},{},{}\n", f.fold, f.subject_id, f.accuracy));
        }
        s.push_str(&format!("mean,{}\nstd,{}\n", self.mean, self.std));
        s
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Leave-one-subject-out: each subject in turn is the unlabeled target and
/// the rest are pooled as labeled source. Folds follow ascending subject id
/// and each fold's seed depends only on `(cfg.seed, subject_id)`.
///
/// In `msan_pt` mode the autoencoder is pre-trained once on all subjects,
/// which is exactly the source-plus-target pool of every fold.
pub fn loso_run(subjects: &[SubjectData], cfg: &TrainConfig) -> Result<LosoReport> {
    if subjects.len() < 2 {
        return Err(Error::Argument(format!("leave-one-subject-out needs >= 2 subjects, got {}", subjects.len())));
    }
    cfg.validate()?;
    let mut ids: Vec<usize> = subjects.iter().map(|s| s.subject_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Data("duplicate subject ids".into()));
    }

    let pretrained = if cfg.mode == Mode::MsanPt {
        let mut sorted: Vec<&SubjectData> = subjects.iter().collect();
        sorted.sort_by_key(|s| s.subject_id);
        let flats: Vec<Tensor> = sorted.iter().map(|s| s.flat_features()).collect();
        let refs: Vec<&Tensor> = flats.iter().collect();
        let all = stack_rows(&refs)?;
        let spec = crate::nets::default_feature_spec(all.cols());
        let ae = Autoencoder::new(&spec, cfg.seed.wrapping_add(3))?;
        Some(pretrain_autoencoder(ae, &all, cfg)?)
    } else {
        None
    };

    let mut folds = Vec::with_capacity(ids.len());
    for (fold, &id) in ids.iter().enumerate() {
        let data = DomainDataset::leave_one_out(subjects, id)?;
        let fold_cfg = TrainConfig { seed: fold_seed(cfg.seed, id), ..cfg.clone() };
        let pre = pretrained.as_ref().map(|(ae, c)| (ae, c.as_slice()));
        let (bundle, metrics) = fit_with(&data, &fold_cfg, pre)?;
        folds.push(FoldResult { fold, subject_id: id, accuracy: metrics.accuracy, metrics, bundle });
    }
    let (mean, std) = mean_std(&folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    Ok(LosoReport { folds, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::PseudoLabel;
    use crate::nets::{Activation, Linear, Mlp, MlpSpec};
    use crate::synth::{generate_benchmark, SynthConfig};

    fn small_synth(seed: u64) -> Vec<SubjectData> {
        let cfg = SynthConfig {
            num_subjects: 3,
            samples_per_class: 12,
            feature_dims: (2, 2, 2),
            seed,
            ..SynthConfig::default()
        };
        generate_benchmark(&cfg).unwrap()
    }

    fn quick(mode: Mode, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            epochs: 4,
            batch_source: 16,
            batch_target: 16,
            subdomain_warmup_epochs: 1,
            ae_pretrain_epochs: 2,
            q: 0.5,
            seed,
            ..TrainConfig::default()
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, ns: usize, nt: usize, d: usize) -> Batch {
        let mut m =
            |n: usize| Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (source, target) = (m(ns), m(nt));
        Batch { source, source_labels: (0..ns).map(|i| i % 3).collect(), target }
    }

    fn ce(logits: &[f64], label: usize) -> f64 {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        -(logits[label] - m - z.ln())
    }

    /// Domain loss over the stacked `rows` with or without the reversal layer,
    /// returning the value and the gradients of every parameter group.
    fn domain_term(
        bundle: &ModelBundle,
        x: &Tensor,
        labels: &[usize],
        reverse: Option<f64>,
    ) -> (f64, Vec<Tensor>, Vec<Tensor>) {
        let mut tape = Tape::new();
        let bound = bundle.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let f = bound.forward_features(&mut tape, xv).unwrap();
        let rows: Vec<usize> = (0..x.rows()).collect();
        let l = domain_ce(&mut tape, &bound, f, &rows, labels, reverse).unwrap();
        let g = tape.backward(l).unwrap();
        (tape.value(l).data()[0], bound.feature.grads(&g), bound.domain.grads(&g))
    }

    #[test]
    fn degenerate_batch_has_source_only_domain_term() {
        let bundle = ModelBundle::with_defaults(6, 3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_batch(&mut rng, 1, 0, 6);
        let v = loss_global(&bundle, &b, 1.0).unwrap();
        let logits = bundle.domain.infer(&bundle.features(&b.source).unwrap()).unwrap();
        assert!((v.domain - ce(logits.row(0), SOURCE_DOMAIN)).abs() < 1e-12);
        let empty = Batch { source: Tensor::zeros(&[0, 6]), source_labels: vec![], target: b.source.clone() };
        assert!(matches!(loss_global(&bundle, &empty, 1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_class_head_gives_ln_k() {
        let mut bundle = ModelBundle::with_defaults(5, 3, 4).unwrap();
        bundle.classifier = Mlp::zeros(&bundle.classifier.spec);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = loss_global(&bundle, &random_batch(&mut rng, 7, 5, 5), 1.0).unwrap();
        assert!((v.class - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reversal_negates_feature_gradient_only() {
        let bundle = ModelBundle::with_defaults(6, 3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_batch(&mut rng, 5, 4, 6);
        let x = stack_rows(&[&b.source, &b.target]).unwrap();
        let labels: Vec<usize> = (0..9).map(|i| usize::from(i >= 5)).collect();
        for lambda in [0.0, 0.5, 1.0] {
            let (v0, gf0, gd0) = domain_term(&bundle, &x, &labels, None);
            let (v1, gf1, gd1) = domain_term(&bundle, &x, &labels, Some(lambda));
            assert_eq!(v0, v1);
            for (a, b) in gd0.iter().zip(&gd1) {
                assert!(a.bit_eq(b));
            }
            for (a, b) in gf0.iter().zip(&gf1) {
                for (p, q) in a.data().iter().zip(b.data()) {
                    assert!((q + lambda * p).abs() <= 1e-9 * (1.0 + p.abs()), "{p} {q}");
                }
            }
        }
        // The un-reversed gradient itself against central differences.
        let (_, gf, _) = domain_term(&bundle, &x, &labels, None);
        let h = 1e-5;
        for &(layer, idx) in &[(0usize, 0usize), (0, 17), (1, 40), (2, 5)] {
            let mut plus = bundle.clone();
            plus.feature.layers[layer].weight.data_mut()[idx] += h;
            let mut minus = bundle.clone();
            minus.feature.layers[layer].weight.data_mut()[idx] -= h;
            let fd = (domain_term(&plus, &x, &labels, None).0 - domain_term(&minus, &x, &labels, None).0) / (2.0 * h);
            let an = gf[2 * layer].data()[idx];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "layer {layer}[{idx}]: {fd} vs {an}");
        }
    }

    #[test]
    fn domain_step_lowers_domain_loss() {
        let mut bundle = ModelBundle::with_defaults(6, 3, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = random_batch(&mut rng, 8, 8, 6);
        let mut tape = Tape::new();
        let bound = bundle.bind(&mut tape);
        let nodes = build_loss(&mut tape, &bound, &b, None, Objective::Global, 1.0).unwrap();
        let before = nodes.values(&tape).domain;
        let g = tape.backward(nodes.total).unwrap();
        let grads = bound.domain.grads(&g);
        Optimizer::new(OptimizerKind::Sgd, 0.05).step(bundle.domain.params_mut(), &grads);
        let after = loss_global(&bundle, &b, 1.0).unwrap().domain;
        assert!(after <= before, "{after} > {before}");
    }

    fn anchors_for(b: &Batch, t: usize, same: usize, other: usize) -> AnchorPairs {
        AnchorPairs {
            target: b.target.select_rows(&[t]),
            same_class: b.source.select_rows(&[same]),
            other_class: b.source.select_rows(&[other]),
        }
    }

    #[test]
    fn subdomain_without_anchors_reduces_to_global() {
        let bundle = ModelBundle::with_defaults(4, 3, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_batch(&mut rng, 6, 6, 4);
        let none = AnchorPairs {
            target: Tensor::zeros(&[0, 4]),
            same_class: Tensor::zeros(&[0, 4]),
            other_class: Tensor::zeros(&[0, 4]),
        };
        let s = loss_subdomain(&bundle, &b, &none, 1.0).unwrap();
        let g = loss_global(&bundle, &b, 1.0).unwrap();
        assert_eq!(s, g);
    }

    #[test]
    fn pair_terms_follow_the_reversal_rule() {
        let bundle = ModelBundle::with_defaults(4, 3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = random_batch(&mut rng, 3, 2, 4);
        let a = anchors_for(&b, 0, 0, 1);
        let pair_labels = [TARGET_DOMAIN, SOURCE_DOMAIN];
        let same = stack_rows(&[&a.target, &a.same_class]).unwrap();
        let (_, plain, _) = domain_term(&bundle, &same, &pair_labels, None);
        let (_, reversed, _) = domain_term(&bundle, &same, &pair_labels, Some(1.0));
        for (p, r) in plain.iter().zip(&reversed) {
            assert!(p.data().iter().zip(r.data()).all(|(x, y)| (x + y).abs() < 1e-12));
        }

        // Inside the full objective, term 3 adds its plain gradient: the
        // total minus the global part minus the reversed term 2 equals it.
        let grads = |anchors: Option<&AnchorPairs>, obj| {
            let mut tape = Tape::new();
            let bound = bundle.bind(&mut tape);
            let n = build_loss(&mut tape, &bound, &b, anchors, obj, 1.0).unwrap();
            bound.feature.grads(&tape.backward(n.total).unwrap())
        };
        let full = grads(Some(&a), Objective::Subdomain);
        let global = grads(None, Objective::Global);
        let other = stack_rows(&[&a.target, &a.other_class]).unwrap();
        let (_, term3, _) = domain_term(&bundle, &other, &pair_labels, None);
        for i in 0..full.len() {
            for j in 0..full[i].len() {
                let rest = full[i].data()[j] - global[i].data()[j] - reversed[i].data()[j];
                assert!((rest - term3[i].data()[j]).abs() < 1e-10);
            }
        }
    }

    fn identity(n: usize) -> Tensor {
        Tensor::new(vec![n, n], (0..n * n).map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 }).collect()).unwrap()
    }

    #[test]
    fn three_sample_instance_matches_hand_sum() {
        let fspec = MlpSpec::new(vec![2, 2, 2, 2], Activation::Relu).unwrap();
        let layer = || Linear { weight: identity(2), bias: Tensor::zeros(&[2]) };
        let feature = Mlp::from_layers(fspec, vec![layer(), layer(), layer()]).unwrap();
        let head = |w: [f64; 4], b: [f64; 2]| {
            let spec = MlpSpec::new(vec![2, 2], Activation::Relu).unwrap();
            Mlp::from_layers(
                spec,
                vec![Linear { weight: Tensor::new(vec![2, 2], w.to_vec()).unwrap(), bias: Tensor::vector(b.to_vec()) }],
            )
            .unwrap()
        };
        let (wc, bc) = ([1.0, -1.0, 0.5, 2.0], [0.1, 0.0]);
        let (wd, bd) = ([0.3, -0.7, 1.2, 0.4], [0.0, 0.2]);
        let bundle = ModelBundle { feature, classifier: head(wc, bc), domain: head(wd, bd) };
        let (s1, s2, t) = ([1.0, 0.0], [0.0, 2.0], [0.5, 0.5]);
        let b = Batch {
            source: Tensor::from_rows(&[s1, s2]).unwrap(),
            source_labels: vec![0, 1],
            target: Tensor::from_rows(&[t]).unwrap(),
        };
        let a = anchors_for(&b, 0, 0, 1);
        let v = loss_subdomain(&bundle, &b, &a, 1.0).unwrap();

        let logits = |x: [f64; 2], w: [f64; 4], bias: [f64; 2]| {
            [x[0] * w[0] + x[1] * w[2] + bias[0], x[0] * w[1] + x[1] * w[3] + bias[1]]
        };
        let c = |x, y| ce(&logits(x, wc, bc), y);
        let d = |x, y| ce(&logits(x, wd, bd), y);
        let class = (c(s1, 0) + c(s2, 1)) / 2.0;
        let global = (d(s1, 0) + d(s2, 0) + d(t, 1)) / 3.0;
        let same = (d(t, 1) + d(s1, 0)) / 2.0;
        let other = (d(t, 1) + d(s2, 0)) / 2.0;
        assert!((v.class - class).abs() < 1e-12);
        assert!((v.domain - global).abs() < 1e-12);
        assert!((v.subdomain - (same + other)).abs() < 1e-12);
        assert!((v.total - (class + global + same + other)).abs() < 1e-12);
    }

    #[test]
    fn partners_respect_labels() {
        let labels = vec![0, 0, 1, 1, 2];
        let pseudo = PseudoLabelSet {
            entries: (0..30).map(|i| PseudoLabel { target_index: i, label: i % 3, distance: 0.0 }).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in draw_partners(&pseudo, &labels, 3, &mut rng).unwrap() {
            assert_eq!(labels[p.same], p.target_index % 3);
            assert_ne!(labels[p.other], p.target_index % 3);
        }
        let err = draw_partners(&pseudo, &[0, 0, 1], 3, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Data(m) if m.contains("class 2")));
    }

    #[test]
    fn pretraining_reduces_loss_and_is_deterministic() {
        let s = small_synth(1);
        let all =
            stack_rows(&s.iter().map(|x| x.flat_features()).collect::<Vec<_>>().iter().collect::<Vec<_>>()).unwrap();
        let cfg = TrainConfig { ae_pretrain_epochs: 8, batch_source: 16, ..TrainConfig::default() };
        let ae = Autoencoder::new(&crate::nets::default_feature_spec(8), 3).unwrap();
        let (a1, c1) = pretrain_autoencoder(ae.clone(), &all, &cfg).unwrap();
        let (a2, c2) = pretrain_autoencoder(ae, &all, &cfg).unwrap();
        assert!(c1.last().unwrap() < &c1[0]);
        assert_eq!(c1, c2);
        assert!(a1.encoder.params().zip(a2.encoder.params()).all(|(x, y)| x.bit_eq(y)));
        assert!(matches!(pretrain_autoencoder(a1, &Tensor::zeros(&[0, 8]), &cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn constant_rows_are_learned() {
        let x = Tensor::new(vec![128, 8], [0.3, -0.2, 0.5, 0.1, 0.0, -0.4, 0.2, 0.6].repeat(128)).unwrap();
        let ae = Autoencoder::new(&crate::nets::default_feature_spec(8), 0).unwrap();
        let (_, curve) = pretrain_autoencoder(ae, &x, &TrainConfig::default()).unwrap();
        assert_eq!(curve.len(), 30);
        assert!(*curve.last().unwrap() < 1e-3, "{curve:?}");
    }

    #[test]
    fn fit_is_deterministic() {
        let s = small_synth(2);
        let data = DomainDataset::leave_one_out(&s, 1).unwrap();
        for mode in Mode::ALL {
            let (b1, m1) = fit(&data, &quick(mode, 9)).unwrap();
            let (b2, m2) = fit(&data, &quick(mode, 9)).unwrap();
            assert!(b1.bit_eq(&b2), "{mode:?}");
            assert_eq!(m1, m2);
            assert_eq!(m1.epochs.len(), 4);
            assert_eq!(m1.ae_loss.is_empty(), mode != Mode::MsanPt);
        }
    }

    #[test]
    fn hidden_labels_never_reach_training() {
        let s = small_synth(3);
        let data = DomainDataset::leave_one_out(&s, 0).unwrap();
        let mut corrupted = data.clone();
        for l in corrupted.target_truth.as_mut_slice() {
            *l = (*l + 1) % 3;
        }
        for mode in Mode::ALL {
            let (b1, _) = fit(&data, &quick(mode, 4)).unwrap();
            let (b2, _) = fit(&corrupted, &quick(mode, 4)).unwrap();
            assert!(b1.bit_eq(&b2), "{mode:?}");
        }
    }

    #[test]
    fn full_warmup_msan_equals_dan() {
        let s = small_synth(4);
        let data = DomainDataset::leave_one_out(&s, 2).unwrap();
        let cfg = TrainConfig { subdomain_warmup_epochs: 4, ..quick(Mode::Msan, 1) };
        let (b1, m1) = fit(&data, &cfg).unwrap();
        let (b2, m2) = fit(&data, &TrainConfig { mode: Mode::Dan, ..cfg }).unwrap();
        assert!(b1.bit_eq(&b2));
        assert_eq!(m1, m2);
    }

    fn benchmark_like(mode: Mode, synth: SynthConfig) -> (DomainDataset, TrainConfig) {
        let s = generate_benchmark(&SynthConfig { num_subjects: 3, samples_per_class: 40, ..synth }).unwrap();
        let cfg = TrainConfig {
            mode,
            optimizer: OptimizerKind::Sgd,
            lr: 0.05,
            epochs: 15,
            subdomain_warmup_epochs: 3,
            ..TrainConfig::default()
        };
        (DomainDataset::leave_one_out(&s, 0).unwrap(), cfg)
    }

    #[test]
    fn source_only_training_transfers_without_shift() {
        let (data, cfg) =
            benchmark_like(Mode::Nontransfer, SynthConfig { subject_shift: 0.0, ..SynthConfig::default() });
        let (_, m) = fit(&data, &TrainConfig { epochs: 50, ..cfg }).unwrap();
        assert!(m.accuracy >= 0.95, "{}", m.accuracy);
    }

    #[test]
    fn pure_pseudo_labels_do_not_hurt() {
        let (data, cfg) = benchmark_like(Mode::Msan, SynthConfig::separable());
        let (_, msan) = fit(&data, &TrainConfig { q: 1.0, ..cfg.clone() }).unwrap();
        let (_, dan) = fit(&data, &TrainConfig { mode: Mode::Dan, ..cfg }).unwrap();
        assert!(msan.accuracy >= dan.accuracy, "msan {} dan {}", msan.accuracy, dan.accuracy);
    }

    #[test]
    fn config_errors_come_first() {
        let s = small_synth(5);
        let data = DomainDataset::leave_one_out(&s, 0).unwrap();
        for bad in [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { q: 1.5, ..TrainConfig::default() },
            TrainConfig { subdomain_warmup_epochs: 60, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(fit(&data, &bad), Err(Error::Config { .. })));
        }
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let mut bundle = ModelBundle::with_defaults(4, 3, 0).unwrap();
        bundle.classifier = Mlp::zeros(&bundle.classifier.spec);
        let x = Tensor::new(vec![6, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        let e = evaluate(&bundle, &x, &[0, 1, 2, 0, 1, 2]).unwrap();
        assert!((e.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.per_class, vec![1.0, 0.0, 0.0]);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn scoring_matches_confusion_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 200;
        let logits = Tensor::new(vec![n, 4], (0..4 * n).map(|_| rng.random_range(0..3) as f64).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let mut confusion = [[0usize; 4]; 4];
        for i in 0..n {
            let row = logits.row(i);
            let mut best = 0;
            for c in 1..4 {
                if row[c] > row[best] {
                    best = c;
                }
            }
            confusion[labels[i]][best] += 1;
        }
        let e = score_logits(&logits, &labels).unwrap();
        let correct: usize = (0..4).map(|c| confusion[c][c]).sum();
        assert!((e.accuracy - correct as f64 / n as f64).abs() < 1e-15);
        for c in 0..4 {
            let total: usize = confusion[c].iter().sum();
            assert!((e.per_class[c] - confusion[c][c] as f64 / total as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn loso_folds_and_aggregates() {
        let s = small_synth(6);
        let cfg = TrainConfig { epochs: 2, ..quick(Mode::Dan, 3) };
        let r = loso_run(&s[..2], &cfg).unwrap();
        assert_eq!(r.folds.len(), 2);
        assert_eq!(r.folds.iter().map(|f| f.subject_id).collect::<Vec<_>>(), vec![0, 1]);

        let full = loso_run(&s, &cfg).unwrap();
        let mut reversed = s.clone();
        reversed.reverse();
        assert_eq!(loso_run(&reversed, &cfg).unwrap(), full);
        let acc = full.accuracies();
        let mean = acc.iter().sum::<f64>() / 3.0;
        let std = (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((full.mean - mean).abs() < 1e-15 && (full.std - std).abs() < 1e-15);
        let csv = full.summary_csv();
        assert!(csv.starts_with("fold,subject_id,accuracy\n0,0,"));
        assert!(csv.ends_with(&format!("mean,{}\nstd,{}\n", full.mean, full.std)));
        assert!(matches!(loso_run(&s[..1], &cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn leave_one_out_excludes_target() {
        let s = small_synth(7);
        let d = DomainDataset::leave_one_out(&s, 1).unwrap();
        assert_eq!(d.source.features.rows(), 2 * 36);
        assert!(d.target.features.bit_eq(&s[1].flat_features()));
        assert_eq!(&d.source.features.data()[..8], s[0].flat_features().row(0));
    }
}
