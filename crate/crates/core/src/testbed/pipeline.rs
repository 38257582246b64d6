//! A toy chained mention → coreference → relation pipeline with planted
//! thresholds, used to exercise threshold calibration.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibrate::{CalibratableModel, Counts, EpochPredictions, ScoredInstance, ThresholdSet};
use crate::error::{Error, Result};

const NO_LINK: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub spans_per_doc: usize,
    pub relations_per_doc: usize,
    pub gold_mention_rate: f64,
    pub gold_relation_rate: f64,
    pub link_rate: f64,
    /// Logit distance between classes at full quality.
    pub separation: f64,
    pub noise_sd: f64,
    /// Mention and coreference noise is clipped to `±bound`, leaving a clean
    /// margin around their planted thresholds once quality is high.
    pub upstream_noise_bound: f64,
    pub mention_bias: f64,
    pub coref_bias: f64,
    pub relation_bias: (f64, f64),
    pub zipf_exponent: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub quality_tau: f64,
    pub peak_epoch: f64,
    pub overfit_rate: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            spans_per_doc: 12,
            relations_per_doc: 30,
            gold_mention_rate: 0.6,
            gold_relation_rate: 0.5,
            link_rate: 0.5,
            separation: 2.5,
            noise_sd: 1.0,
            upstream_noise_bound: 1.0,
            mention_bias: 1.2,
            coref_bias: -1.0,
            relation_bias: (-2.5, -0.5),
            zipf_exponent: 1.0,
            val_fraction: 0.25,
            test_fraction: 0.25,
            quality_tau: 5.0,
            peak_epoch: 18.0,
            overfit_rate: 0.01,
        }
    }
}

/// Flattened instances of one data split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub span_gold: Vec<bool>,
    pub span_noise: Vec<f64>,
    pub pair_spans: Vec<(u32, u32)>,
    pub pair_gold: Vec<bool>,
    pub pair_noise: Vec<f64>,
    pub rel_head: Vec<u32>,
    pub rel_tail: Vec<u32>,
    /// Coreference pair the candidate depends on, `u32::MAX` if none.
    pub rel_link: Vec<u32>,
    pub rel_class: Vec<u32>,
    pub rel_gold: Vec<bool>,
    pub rel_noise: Vec<f64>,
}

impl Split {
    pub fn n_gold_relations(&self) -> u64 {
        self.rel_gold.iter().filter(|g| **g).count() as u64
    }

    pub fn link(&self, i: usize) -> Option<usize> {
        let l = self.rel_link[i];
        (l != NO_LINK).then_some(l as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub seed: u64,
    pub n_docs: usize,
    pub n_classes: usize,
    pub config: PipelineConfig,
    pub class_bias: Vec<f64>,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn clipped_normal(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z.clamp(-bound, bound)
}

/// Generates a reproducible corpus with Zipf-distributed relation classes.
pub fn generate_corpus(seed: u64, n_docs: usize, n_classes: usize) -> Result<Corpus> {
    generate_corpus_with(seed, n_docs, n_classes, PipelineConfig::default())
}

pub fn generate_corpus_with(
    seed: u64,
    n_docs: usize,
    n_classes: usize,
    config: PipelineConfig,
) -> Result<Corpus> {
    if n_docs < 1 || n_classes < 1 {
        return Err(Error::InvalidArgument(
            "need n_docs >= 1 and n_classes >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = config.upstream_noise_bound;
    let (lo, hi) = config.relation_bias;
    let class_bias: Vec<f64> = (0..n_classes).map(|_| rng.random_range(lo..=hi)).collect();
    let zipf: Vec<f64> = (0..n_classes)
        .map(|c| 1.0 / ((c + 1) as f64).powf(config.zipf_exponent))
        .collect();
    let total: f64 = zipf.iter().sum();
    let mut cumulative = Vec::with_capacity(n_classes);
    let mut acc = 0.0;
    for w in &zipf {
        acc += w / total;
        cumulative.push(acc);
    }

    let n_test = ((n_docs as f64) * config.test_fraction).round() as usize;
    let n_val = ((n_docs as f64) * config.val_fraction).round() as usize;
    let mut splits = [Split::default(), Split::default(), Split::default()];
    for doc in 0..n_docs {
        let target = if doc < n_val {
            1
        } else if doc < n_val + n_test {
            2
        } else {
            0
        };
        let split = &mut splits[target];
        let base = split.span_gold.len() as u32;
        let golds: Vec<bool> = (0..config.spans_per_doc)
            .map(|_| rng.random::<f64>() < config.gold_mention_rate)
            .collect();
        for g in &golds {
            split.span_gold.push(*g);
            split.span_noise.push(clipped_normal(&mut rng, bound));
        }
        // coreference candidates between consecutive spans; gold when both are gold mentions of one entity
        let pair_base = split.pair_gold.len() as u32;
        let n_pairs = config.spans_per_doc.saturating_sub(1);
        for i in 0..n_pairs {
            let gold = golds[i] && golds[i + 1] && rng.random::<f64>() < 0.5;
            split
                .pair_spans
                .push((base + i as u32, base + i as u32 + 1));
            split.pair_gold.push(gold);
            split.pair_noise.push(clipped_normal(&mut rng, bound));
        }
        for _ in 0..config.relations_per_doc {
            let h = rng.random_range(0..config.spans_per_doc);
            let mut t = rng.random_range(0..config.spans_per_doc);
            if t == h {
                t = (t + 1) % config.spans_per_doc;
            }
            let link = if n_pairs > 0 && rng.random::<f64>() < config.link_rate {
                let p = rng.random_range(0..n_pairs);
                Some(p)
            } else {
                None
            };
            let u: f64 = rng.random();
            let class = cumulative
                .iter()
                .position(|c| u <= *c)
                .unwrap_or(n_classes - 1);
            let link_ok = link.is_none_or(|p| split.pair_gold[pair_base as usize + p]);
            let gold =
                golds[h] && golds[t] && link_ok && rng.random::<f64>() < config.gold_relation_rate;
            split.rel_head.push(base + h as u32);
            split.rel_tail.push(base + t as u32);
            split
                .rel_link
                .push(link.map_or(NO_LINK, |p| pair_base + p as u32));
            split.rel_class.push(class as u32);
            split.rel_gold.push(gold);
            split.rel_noise.push(StandardNormal.sample(&mut rng));
        }
    }
    let [train, val, test] = splits;
    Ok(Corpus {
        seed,
        n_docs,
        n_classes,
        config,
        class_bias,
        train,
        val,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

/// Stage-level counts of one prediction pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PipelineCounts {
    pub mention: Counts,
    pub coref: Counts,
    pub relation: Counts,
}

#[derive(Debug, Clone, Default)]
struct Probabilities {
    span: Vec<f64>,
    pair: Vec<f64>,
    rel: Vec<f64>,
}

/// The corpus plus a scalar model quality that sets prediction sharpness.
#[derive(Debug)]
pub struct ToyPipeline {
    pub corpus: Corpus,
    quality: f64,
    probs: [Probabilities; 3],
    passes: AtomicU64,
}

impl ToyPipeline {
    pub fn new(corpus: Corpus, quality: f64) -> Self {
        let mut p = ToyPipeline {
            corpus,
            quality,
            probs: Default::default(),
            passes: AtomicU64::new(0),
        };
        p.set_quality(quality);
        p
    }

    pub fn quality(&self) -> f64 {
        self.quality
    }

    pub fn n_classes(&self) -> usize {
        self.corpus.n_classes
    }

    pub fn set_quality(&mut self, quality: f64) {
        self.quality = quality;
        for kind in [SplitKind::Train, SplitKind::Val, SplitKind::Test] {
            self.probs[kind as usize] = self.compute(kind, quality);
        }
    }

    /// Quality reached after `epoch` epochs of training.
    pub fn quality_at(&self, epoch: u32) -> f64 {
        let c = &self.corpus.config;
        let e = epoch as f64;
        ((1.0 - (-e / c.quality_tau).exp()) - c.overfit_rate * (e - c.peak_epoch).max(0.0)).max(0.0)
    }

    pub fn split(&self, kind: SplitKind) -> &Split {
        match kind {
            SplitKind::Train => &self.corpus.train,
            SplitKind::Val => &self.corpus.val,
            SplitKind::Test => &self.corpus.test,
        }
    }

    fn compute(&self, kind: SplitKind, q: f64) -> Probabilities {
        let c = &self.corpus.config;
        let s = self.split(kind);
        let logit = |gold: bool, noise: f64, bias: f64| {
            let sign = if gold { 1.0 } else { -1.0 };
            sigmoid(c.separation * q * sign + c.noise_sd * noise + bias)
        };
        Probabilities {
            span: s
                .span_gold
                .iter()
                .zip(&s.span_noise)
                .map(|(g, z)| logit(*g, *z, c.mention_bias))
                .collect(),
            pair: s
                .pair_gold
                .iter()
                .zip(&s.pair_noise)
                .map(|(g, z)| logit(*g, *z, c.coref_bias))
                .collect(),
            rel: (0..s.rel_gold.len())
                .map(|i| {
                    logit(
                        s.rel_gold[i],
                        s.rel_noise[i],
                        self.corpus.class_bias[s.rel_class[i] as usize],
                    )
                })
                .collect(),
        }
    }

    /// Thresholds at the logit midpoint of each stage's two classes.
    pub fn planted_thresholds(&self) -> ThresholdSet {
        let c = &self.corpus.config;
        ThresholdSet {
            mention: sigmoid(c.mention_bias),
            coref: sigmoid(c.coref_bias),
            relation: self.corpus.class_bias.iter().map(|b| sigmoid(*b)).collect(),
        }
    }

    /// Number of multi-set prediction passes so far.
    pub fn passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    /// Chained prediction under one threshold set.
    pub fn predict(&self, kind: SplitKind, thresholds: &ThresholdSet) -> PipelineCounts {
        self.predict_many(kind, std::slice::from_ref(thresholds))[0]
    }

    /// Chained prediction under every threshold set in a single pass over the
    /// split. Spans pass at `p > mention`; pairs need both spans and
    /// `p > coref`; relations need both spans, their linked pair, and
    /// `p > relation[class]`.
    pub fn predict_many(&self, kind: SplitKind, sets: &[ThresholdSet]) -> Vec<PipelineCounts> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        self.count(kind, &self.probs[kind as usize], sets)
    }

    /// Single-set prediction at an arbitrary quality, leaving the model untouched.
    pub fn predict_at(
        &self,
        kind: SplitKind,
        quality: f64,
        thresholds: &ThresholdSet,
    ) -> PipelineCounts {
        let probs = self.compute(kind, quality);
        self.count(kind, &probs, std::slice::from_ref(thresholds))[0]
    }

    fn count(
        &self,
        kind: SplitKind,
        p: &Probabilities,
        sets: &[ThresholdSet],
    ) -> Vec<PipelineCounts> {
        let s = self.split(kind);
        let mut out = vec![PipelineCounts::default(); sets.len()];
        for (i, gold) in s.span_gold.iter().enumerate() {
            for (o, t) in out.iter_mut().zip(sets) {
                tally(&mut o.mention, p.span[i] > t.mention, *gold);
            }
        }
        for (i, gold) in s.pair_gold.iter().enumerate() {
            let (a, b) = s.pair_spans[i];
            for (o, t) in out.iter_mut().zip(sets) {
                let fed = p.span[a as usize] > t.mention && p.span[b as usize] > t.mention;
                tally(&mut o.coref, fed && p.pair[i] > t.coref, *gold);
            }
        }
        for i in 0..s.rel_gold.len() {
            let (ph, pt) = (
                p.span[s.rel_head[i] as usize],
                p.span[s.rel_tail[i] as usize],
            );
            let pl = s.link(i).map(|l| p.pair[l]);
            let pr = p.rel[i];
            let class = s.rel_class[i] as usize;
            let gold = s.rel_gold[i];
            for (o, t) in out.iter_mut().zip(sets) {
                let fed = ph > t.mention && pt > t.mention && pl.is_none_or(|v| v > t.coref);
                tally(&mut o.relation, fed && pr > t.relation[class], gold);
            }
        }
        out
    }

    /// Predictions of one split as calibration inputs.
    pub fn scored(&self, kind: SplitKind) -> EpochPredictions {
        let s = self.split(kind);
        let p = &self.probs[kind as usize];
        EpochPredictions {
            mention: p
                .span
                .iter()
                .copied()
                .zip(s.span_gold.iter().copied())
                .collect(),
            coref: p
                .pair
                .iter()
                .copied()
                .zip(s.pair_gold.iter().copied())
                .collect(),
            relation: (0..s.rel_gold.len())
                .map(|i| ScoredInstance {
                    prob: p.rel[i],
                    gold: s.rel_gold[i],
                    class: s.rel_class[i] as usize,
                })
                .collect(),
        }
    }
}

fn tally(c: &mut Counts, predicted: bool, gold: bool) {
    match (predicted, gold) {
        (true, true) => c.tp += 1,
        (true, false) => c.fp += 1,
        (false, true) => c.fn_ += 1,
        (false, false) => {}
    }
}

/// Relation-level counts under one threshold set.
pub fn toy_predict(
    pipeline: &ToyPipeline,
    kind: SplitKind,
    thresholds: &ThresholdSet,
) -> PipelineCounts {
    pipeline.predict(kind, thresholds)
}

/// [`CalibratableModel`] over a [`ToyPipeline`]: training raises quality
/// along a fixed curve; checkpoints store the quality.
#[derive(Debug)]
pub struct ToyModel {
    pub pipeline: ToyPipeline,
    checkpoint: Option<f64>,
    validations: u64,
}

impl ToyModel {
    pub fn new(corpus: Corpus) -> Self {
        ToyModel {
            pipeline: ToyPipeline::new(corpus, 0.0),
            checkpoint: None,
            validations: 0,
        }
    }

    /// Calls to [`CalibratableModel::validate`] so far.
    pub fn validations(&self) -> u64 {
        self.validations
    }
}

impl CalibratableModel for ToyModel {
    fn n_classes(&self) -> usize {
        self.pipeline.n_classes()
    }

    fn train_epoch(&mut self, epoch: u32) -> Result<EpochPredictions> {
        let q = self.pipeline.quality_at(epoch);
        self.pipeline.set_quality(q);
        Ok(self.pipeline.scored(SplitKind::Train))
    }

    fn validate(&mut self, sets: &[ThresholdSet], beta: f64) -> Result<Vec<f64>> {
        for s in sets {
            s.validate(self.n_classes())?;
        }
        self.validations += 1;
        Ok(self
            .pipeline
            .predict_many(SplitKind::Val, sets)
            .iter()
            .map(|c| c.relation.f_beta(beta))
            .collect())
    }

    fn test(&mut self, thresholds: &ThresholdSet, beta: f64) -> Result<f64> {
        thresholds.validate(self.n_classes())?;
        Ok(self
            .pipeline
            .predict(SplitKind::Test, thresholds)
            .relation
            .f_beta(beta))
    }

    fn save_checkpoint(&mut self) -> Result<()> {
        self.checkpoint = Some(self.pipeline.quality());
        Ok(())
    }

    fn restore_checkpoint(&mut self) -> Result<()> {
        let q = self
            .checkpoint
            .ok_or_else(|| Error::InvalidArgument("no checkpoint saved".into()))?;
        self.pipeline.set_quality(q);
        Ok(())
    }
}
