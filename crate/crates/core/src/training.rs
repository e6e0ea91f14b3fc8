//! Corpus splitting, windowing and the optimization loop.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use log::{info, warn};
use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{featurize, EmbeddingTable, FeatureConfig, FeatureMatrix, INPUT_DIM};
use crate::kv::{join_list, KeyValues};
use crate::model::{Batch, Model, ModelConfig};
use crate::nn::loss::masked_cross_entropy;
use crate::nn::{Adam, AdamConfig};
use crate::{Dialogue, PunctuationClass};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Words per training window.
    pub window: usize,
    /// Offset between window starts; equal to `window` for a partition.
    pub stride: usize,
    /// Train, validation and test proportions.
    pub ratios: [f64; 3],
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub use_time: bool,
    pub class_weighting: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            window: 200,
            stride: 200,
            ratios: [8.0, 1.0, 1.0],
            patience: 2,
            max_epochs: 100,
            seed: 0,
            use_time: true,
            class_weighting: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.window == 0 || self.stride == 0 {
            return fail("batch_size, window and stride must be positive".into());
        }
        if self.stride > self.window {
            return fail(format!("stride {} exceeds window {}", self.stride, self.window));
        }
        if self.ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || self.ratios[0] <= 0.0 || self.ratios[1] <= 0.0 {
            return fail(format!("bad split ratios {:?}", self.ratios));
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be positive".into());
        }
        self.adam.validate()
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            use_time: self.use_time,
            ..FeatureConfig::default()
        }
    }

    /// Reads training keys out of `kv`, leaving other keys in place.
    pub fn take_from(kv: &mut KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let window = kv.take_or("window", d.window)?;
        let ratios = match kv.take_list::<f64>("split")? {
            Some(r) if r.len() == 3 => [r[0], r[1], r[2]],
            Some(r) => return Err(Error::Config(format!("split needs three ratios, got {}", r.len()))),
            None => d.ratios,
        };
        let config = TrainConfig {
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            window,
            stride: kv.take_or("stride", window)?,
            ratios,
            patience: kv.take_or("patience", d.patience)?,
            max_epochs: kv.take_or("max_epochs", d.max_epochs)?,
            seed: kv.take_or("seed", d.seed)?,
            use_time: kv.take_or("use_time", d.use_time)?,
            class_weighting: kv.take_or("class_weighting", d.class_weighting)?,
            adam: AdamConfig {
                lr: kv.take_or("learning_rate", d.adam.lr)?,
                beta1: kv.take_or("beta1", d.adam.beta1)?,
                beta2: kv.take_or("beta2", d.adam.beta2)?,
                epsilon: kv.take_or("epsilon", d.adam.epsilon)?,
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        format!(
            "batch_size = {}\nwindow = {}\nstride = {}\nsplit = {}\npatience = {}\nmax_epochs = {}\nseed = {}\n\
             use_time = {}\nclass_weighting = {}\nlearning_rate = {}\nbeta1 = {}\nbeta2 = {}\nepsilon = {}\n",
            self.batch_size,
            self.window,
            self.stride,
            join_list(&self.ratios),
            self.patience,
            self.max_epochs,
            self.seed,
            self.use_time,
            self.class_weighting,
            self.adam.lr,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.epsilon
        )
    }
}

/// Conversation ids per split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

fn split_key(seed: u64, id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

/// Splits by conversation. Ids are ordered by a keyed hash so the assignment
/// depends only on the seed and the ids, not on corpus order.
pub fn split_corpus(dialogues: &[Dialogue], ratios: [f64; 3], seed: u64) -> Result<Split> {
    let mut seen = HashSet::new();
    for d in dialogues {
        if !seen.insert(d.id()) {
            return Err(Error::Corpus(format!("duplicate conversation id {:?}", d.id())));
        }
    }
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || total <= 0.0 {
        return Err(Error::Config(format!("bad split ratios {ratios:?}")));
    }
    let n = dialogues.len();
    if n < 10 {
        warn!("only {n} conversations; splits will be tiny");
    }
    let mut ids: Vec<(&str, [u8; 32])> = dialogues.iter().map(|d| (d.id(), split_key(seed, d.id()))).collect();
    ids.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let n_train = ((n as f64 * ratios[0] / total).round() as usize).min(n);
    let n_val = ((n as f64 * ratios[1] / total).round() as usize).min(n - n_train);
    let owned = |r: &[(&str, [u8; 32])]| r.iter().map(|(id, _)| id.to_string()).collect::<Vec<_>>();
    Ok(Split {
        train: owned(&ids[..n_train]),
        validation: owned(&ids[n_train..n_train + n_val]),
        test: owned(&ids[n_train + n_val..]),
    })
}

/// Selects the dialogues named in `ids`, keeping corpus order.
pub fn select<'a>(dialogues: &'a [Dialogue], ids: &[String]) -> Vec<&'a Dialogue> {
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    dialogues.iter().filter(|d| wanted.contains(d.id())).collect()
}

/// A fixed-length slice of a conversation. Positions past the end of the
/// conversation are zero rows with `mask` false.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Window {
    pub fn valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Cuts a featurized, labelled conversation into windows starting every
/// `stride` words, stopping once a window reaches the last word.
pub fn make_windows(
    features: &FeatureMatrix,
    labels: &[PunctuationClass],
    window: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    let n = features.len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} labels", labels.len())));
    }
    if window == 0 || stride == 0 || stride > window {
        return Err(Error::Config(format!("window {window} and stride {stride} are inconsistent")));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + window).min(n);
        let mut rows = Array2::zeros((window, features.rows.ncols()));
        rows.slice_mut(s![..end - start, ..]).assign(&features.rows.slice(s![start..end, ..]));
        let mut lab = vec![0; window];
        let mut mask = vec![false; window];
        for (i, t) in (start..end).enumerate() {
            lab[i] = labels[t].index();
            mask[i] = features.mask[t];
        }
        out.push(Window {
            features: rows,
            labels: lab,
            mask,
        });
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// Featurizes and windows labelled dialogues.
pub fn dialogue_windows<'a>(
    dialogues: impl IntoIterator<Item = &'a Dialogue>,
    table: &EmbeddingTable,
    features: FeatureConfig,
    window: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for d in dialogues {
        let labels = d.labels()?;
        out.extend(make_windows(&featurize(d, table, features), &labels, window, stride)?);
    }
    Ok(out)
}

/// `total / (classes * count_c)` over valid positions; classes that never
/// occur get weight 1.
pub fn class_weights(windows: &[Window], classes: usize) -> Vec<f64> {
    let mut counts = vec![0u64; classes];
    for w in windows {
        for (&l, &m) in w.labels.iter().zip(&w.mask) {
            if m {
                counts[l] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { total as f64 / (classes as f64 * c as f64) })
        .collect()
}

/// Validation-loss early stopping. An epoch improves when its loss is
/// strictly below the best so far; training stops once `patience` epochs in
/// a row have not improved.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Waiting,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            wait: 0,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> Progress {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.wait = 0;
            return Progress::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            Progress::Stop
        } else {
            Progress::Waiting
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn stopping_epoch(&self) -> usize {
        self.epochs.len()
    }

    /// `epoch train_loss val_loss`, tab-separated, one line per epoch.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", e.epoch, e.train_loss, e.val_loss);
        }
        out
    }
}

/// Runs epochs until early stopping or `max_epochs`, returning a snapshot
/// of `state` from the best epoch. `epoch` gets the 1-based epoch number
/// and returns `(train_loss, val_loss)`.
pub fn run_epochs<S: Clone>(
    state: &mut S,
    patience: usize,
    max_epochs: usize,
    mut epoch: impl FnMut(&mut S, usize) -> Result<(f64, f64)>,
) -> Result<(S, TrainReport)> {
    let mut stopper = EarlyStopping::new(patience);
    let mut report = TrainReport::default();
    let mut best = state.clone();
    for e in 1..=max_epochs {
        let (train_loss, val_loss) = epoch(state, e)?;
        report.epochs.push(EpochLog {
            epoch: e,
            train_loss,
            val_loss,
        });
        match stopper.update(e, val_loss) {
            Progress::Improved => best = state.clone(),
            Progress::Waiting => {}
            Progress::Stop => {
                report.stopped_early = true;
                break;
            }
        }
    }
    report.best_epoch = stopper.best_epoch().unwrap_or(0);
    Ok((best, report))
}

fn pack(windows: &[&Window], gap: usize) -> Result<Batch<f32>> {
    let views: Vec<_> = windows.iter().map(|w| w.features.view()).collect();
    let labels: Vec<&[usize]> = windows.iter().map(|w| w.labels.as_slice()).collect();
    let masks: Vec<&[bool]> = windows.iter().map(|w| w.mask.as_slice()).collect();
    Batch::pack(&views, &labels, &masks, gap)
}

/// Mean inference-mode cross-entropy over all valid positions, plus the L2
/// penalty.
pub fn evaluate_loss(model: &Model<f32>, windows: &[Window], batch_size: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&Window> = chunk.iter().filter(|w| w.valid() > 0).collect();
        if refs.is_empty() {
            continue;
        }
        let batch = pack(&refs, model.required_gap())?;
        let (probs, _) = model.forward(&batch.x, batch.layout, None)?;
        let (ce, _) = masked_cross_entropy(probs.view(), &batch.labels, &batch.mask, None)?;
        let m = batch.mask.iter().filter(|&&v| v).count();
        sum += ce * m as f64;
        count += m;
    }
    if count == 0 {
        return Err(Error::DegenerateBatch);
    }
    Ok(sum / count as f64 + model.decay_loss())
}

/// Trains a fresh model and returns the weights of the best validation
/// epoch. Everything is driven by `config.seed`, so equal inputs give
/// bitwise-equal results.
pub fn fit(
    config: &TrainConfig,
    model_config: ModelConfig,
    train: &[Window],
    validation: &[Window],
) -> Result<(Model<f32>, TrainReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    if model_config.input_dim != train[0].features.ncols() {
        return Err(Error::Shape(format!(
            "model expects {} inputs, windows have {} (feature width is {INPUT_DIM})",
            model_config.input_dim,
            train[0].features.ncols()
        )));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut model = Model::<f32>::new(model_config, &mut init_rng)?;
    let weights = config.class_weighting.then(|| class_weights(train, model.config().classes));
    if let Some(w) = &weights {
        info!("class weights {w:?}");
    }
    let usable: Vec<&Window> = train.iter().filter(|w| w.valid() > 0).collect();
    let mut adam = Adam::new(config.adam);
    let gap = model.required_gap();
    let (best, report) = run_epochs(&mut model, config.patience, config.max_epochs, |model, epoch| {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let windows: Vec<&Window> = chunk.iter().map(|&i| usable[i]).collect();
            let batch = pack(&windows, gap)?;
            model.zero_grad();
            let loss = model.loss_and_grad(&batch, Some(&mut rng), weights.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            adam.step(&mut model.parameters_mut());
            total += loss;
            batches += 1;
        }
        let train_loss = total / batches.max(1) as f64;
        let val_loss = evaluate_loss(model, validation, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batches,
                loss: val_loss,
            });
        }
        info!("epoch {epoch}: train {train_loss:.4} validation {val_loss:.4}");
        Ok((train_loss, val_loss))
    })?;
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Side, Word};
    use proptest::prelude::*;

    fn dialogue(id: &str, n: usize) -> Dialogue {
        let words = (0..n)
            .map(|i| Word::new(format!("w{}", i % 7), Side::A, i as f64, 0.1, Some(PunctuationClass::ALL[i % 4])).unwrap())
            .collect();
        Dialogue::new(id, words).unwrap()
    }

    fn windows_of(n: usize, window: usize, stride: usize) -> Vec<Window> {
        let d = dialogue("c", n);
        let f = featurize(&d, &EmbeddingTable::empty(), FeatureConfig::default());
        make_windows(&f, &d.labels().unwrap(), window, stride).unwrap()
    }

    #[test]
    fn window_counts() {
        let w = windows_of(450, 200, 200);
        assert_eq!(w.iter().map(Window::valid).collect::<Vec<_>>(), [200, 200, 50]);
        assert!(w[2].features.slice(s![50.., ..]).iter().all(|&v| v == 0.0));
        assert_eq!(windows_of(200, 200, 200).iter().map(Window::valid).collect::<Vec<_>>(), [200]);
        assert_eq!(windows_of(1, 200, 200).iter().map(Window::valid).collect::<Vec<_>>(), [1]);
        assert!(windows_of(0, 200, 200).is_empty());
        // Overlapping windows stop once the end is covered.
        assert_eq!(windows_of(10, 4, 2).iter().map(Window::valid).collect::<Vec<_>>(), [4, 4, 4, 4]);
    }

    proptest! {
        #[test]
        fn windows_partition_labels(n in 0usize..700, window in 1usize..250) {
            let d = dialogue("c", n);
            let labels = d.labels().unwrap();
            let f = featurize(&d, &EmbeddingTable::empty(), FeatureConfig::default());
            let w = make_windows(&f, &labels, window, window).unwrap();
            let rebuilt: Vec<usize> = w
                .iter()
                .flat_map(|w| w.labels.iter().zip(&w.mask).filter(|(_, m)| **m).map(|(l, _)| *l))
                .collect();
            prop_assert_eq!(rebuilt, labels.iter().map(|l| l.index()).collect::<Vec<_>>());
            prop_assert_eq!(w.len(), n.div_ceil(window));
        }

        #[test]
        fn split_is_a_partition(n in 1usize..200, seed in any::<u64>()) {
            let corpus: Vec<Dialogue> = (0..n).map(|i| dialogue(&format!("conv{i}"), 1)).collect();
            let split = split_corpus(&corpus, [8.0, 1.0, 1.0], seed).unwrap();
            let mut all: Vec<String> = split.train.iter().chain(&split.validation).chain(&split.test).cloned().collect();
            all.sort();
            let mut ids: Vec<String> = corpus.iter().map(|d| d.id().to_string()).collect();
            ids.sort();
            prop_assert_eq!(all, ids);
            let exact = |r: f64| n as f64 * r / 10.0;
            prop_assert!((split.train.len() as f64 - exact(8.0)).abs() <= 1.0);
            prop_assert!((split.validation.len() as f64 - exact(1.0)).abs() <= 1.0);
            prop_assert!((split.test.len() as f64 - exact(1.0)).abs() <= 1.0);
        }
    }

    #[test]
    fn ten_conversations_split_eight_one_one() {
        let corpus: Vec<Dialogue> = (0..10).map(|i| dialogue(&format!("c{i}"), 3)).collect();
        let split = split_corpus(&corpus, [8.0, 1.0, 1.0], 7).unwrap();
        assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (8, 1, 1));
        assert_eq!(split_corpus(&corpus, [8.0, 1.0, 1.0], 7).unwrap(), split);
        let mut reversed = corpus.clone();
        reversed.reverse();
        assert_eq!(split_corpus(&reversed, [8.0, 1.0, 1.0], 7).unwrap(), split);
        assert_ne!(split_corpus(&corpus, [8.0, 1.0, 1.0], 8).unwrap(), split);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let corpus = vec![dialogue("a", 1), dialogue("a", 2)];
        assert!(matches!(split_corpus(&corpus, [8.0, 1.0, 1.0], 0), Err(Error::Corpus(_))));
    }

    #[test]
    fn early_stopping_patience_zero() {
        let losses = [1.0, 1.5, 2.0];
        let (best, report) = run_epochs(&mut 0usize, 0, 10, |s, e| {
            *s = e;
            Ok((0.0, losses[e - 1]))
        })
        .unwrap();
        assert_eq!(report.stopping_epoch(), 2);
        assert_eq!(best, 1);
        assert!(report.stopped_early);
    }

    #[test]
    fn early_stopping_counts_consecutive_failures() {
        // Equal loss is not an improvement.
        let losses = [3.0, 2.0, 2.5, 1.5, 1.5, 1.6, 1.0];
        let (best, report) = run_epochs(&mut 0usize, 2, 10, |s, e| {
            *s = e;
            Ok((0.0, losses[e - 1]))
        })
        .unwrap();
        assert_eq!(report.stopping_epoch(), 6);
        assert_eq!(report.best_epoch, 4);
        assert_eq!(best, 4);
    }

    #[test]
    fn max_epochs_caps_training() {
        let (best, report) = run_epochs(&mut 0usize, 2, 3, |s, e| {
            *s = e;
            Ok((0.0, 10.0 - e as f64))
        })
        .unwrap();
        assert_eq!((best, report.stopping_epoch(), report.stopped_early), (3, 3, false));
        assert_eq!(report.to_tsv().lines().next(), Some("1\t0.000000\t9.000000"));
    }

    #[test]
    fn class_weights_balance_counts() {
        let w = Window {
            features: Array2::zeros((4, 1)),
            labels: vec![0, 0, 0, 1],
            mask: vec![true, true, true, true],
        };
        let weights = class_weights(&[w], 4);
        assert_eq!(weights, vec![4.0 / 12.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn config_text_round_trip() {
        let config = TrainConfig {
            batch_size: 16,
            class_weighting: true,
            ratios: [6.0, 2.0, 2.0],
            ..Default::default()
        };
        let mut kv = KeyValues::parse(&config.to_text()).unwrap();
        assert_eq!(TrainConfig::take_from(&mut kv).unwrap(), config);
        kv.finish().unwrap();
        let mut bad = KeyValues::parse("stride = 300").unwrap();
        assert!(TrainConfig::take_from(&mut bad).is_err());
    }
}
