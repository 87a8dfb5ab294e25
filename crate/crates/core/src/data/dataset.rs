//! Multi-subject, multi-domain dataset generation, baselines and label budgets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::classes::GlanceClass;
use crate::data::render::{derive_seed, render_sample, DomainSpec, SubjectProfile, JITTER_FRACTION};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

/// One face crop / eye patch pair with its bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    /// `[S, S, 1]`, values in `[-1, 1]`.
    pub face: Tensor<f32>,
    /// `[S, S, 1]`, values in `[-1, 1]`.
    pub eye: Tensor<f32>,
    /// Ground truth. For unlabeled samples it is kept only so evaluation can
    /// score them; training code reads labels through [`Dataset::labels`].
    pub class: GlanceClass,
    pub subject: u32,
    pub domain: u32,
    pub labeled: bool,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub subjects_per_domain: usize,
    pub per_class: usize,
    /// Road frames per subject are `round(road_factor * per_class)`.
    pub road_factor: f64,
    /// Train, validation and test subject fractions.
    pub split_fractions: [f64; 3],
    pub max_head_offset: f64,
    pub bias_gain: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            subjects_per_domain: 10,
            per_class: 20,
            road_factor: 1.0,
            split_fractions: [0.6, 0.2, 0.2],
            max_head_offset: 0.08,
            bias_gain: 1.0,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 4 {
            return bad(format!("image size {} is too small", self.image_size));
        }
        if self.subjects_per_domain == 0 || self.per_class == 0 {
            return bad("need at least one subject and one sample per class".into());
        }
        if !(self.road_factor > 0.0 && self.road_factor.is_finite()) {
            return bad(format!("road factor {} must be positive", self.road_factor));
        }
        let total: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must be in [0, 1] and sum to 1", self.split_fractions));
        }
        if !(0.0..=0.25).contains(&self.max_head_offset) || !(self.bias_gain >= 0.0 && self.bias_gain.is_finite()) {
            return bad("head offset must be in [0, 0.25] and bias gain nonnegative".into());
        }
        Ok(())
    }

    pub fn road_count(&self) -> usize {
        (self.road_factor * self.per_class as f64).round().max(1.0) as usize
    }

    /// Subjects assigned to train, val and test within one domain.
    pub fn split_counts(&self) -> Result<[usize; 3]> {
        let n = self.subjects_per_domain;
        let train = (self.split_fractions[0] * n as f64).round() as usize;
        let val = ((self.split_fractions[1] * n as f64).round() as usize).min(n - train.min(n));
        let counts = [train.min(n), val, n - train.min(n) - val];
        for (i, (&c, &f)) in counts.iter().zip(&self.split_fractions).enumerate() {
            if f > 0.0 && c == 0 {
                return Err(Error::Config(format!(
                    "{n} subjects leave the {} split empty (fractions {:?})",
                    Split::ALL[i],
                    self.split_fractions
                )));
            }
        }
        Ok(counts)
    }
}

/// A generated or loaded collection of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub image_size: usize,
    pub samples: Vec<Sample>,
}

/// Renders every subject of every domain.
///
/// Subjects are numbered globally (`domain_index * subjects_per_domain + k`)
/// and assigned to splits per domain, so splits never share a subject. Each
/// sample's randomness comes from a seed derived from its ids, so the output
/// does not depend on generation order.
pub fn generate_dataset(config: &DatasetConfig, domains: &[DomainSpec]) -> Result<Dataset> {
    config.validate()?;
    if domains.is_empty() {
        return Err(Error::Config("need at least one domain".into()));
    }
    let counts = config.split_counts()?;
    let sigma = JITTER_FRACTION * GlanceClass::min_code_distance();
    let mut samples = Vec::new();
    for (di, domain) in domains.iter().enumerate() {
        domain.validate()?;
        let base = (di * config.subjects_per_domain) as u32;
        let mut order: Vec<u32> = (0..config.subjects_per_domain as u32).map(|k| base + k).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 1, domain.id as u64])));
        let mut split_of = BTreeMap::new();
        let mut cursor = order.iter();
        for (split, &n) in Split::ALL.iter().zip(&counts) {
            for s in cursor.by_ref().take(n) {
                split_of.insert(*s, *split);
            }
        }
        for (&subject, &split) in &split_of {
            let mut prng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 2, subject as u64]));
            let profile = SubjectProfile::sample(subject, config.max_head_offset, config.bias_gain, &mut prng);
            profile.validate()?;
            for class in GlanceClass::ALL {
                let n = if class == GlanceClass::Road { config.road_count() } else { config.per_class };
                for k in 0..n {
                    let seed = derive_seed(&[config.seed, 3, subject as u64, domain.id as u64, class.code() as u64, k as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut s = render_sample(&profile, domain, class, config.image_size, sigma, &mut rng);
                    s.id = samples.len() as u64;
                    s.split = split;
                    samples.push(s);
                }
            }
        }
    }
    Ok(Dataset { image_size: config.image_size, samples })
}

/// Per-subject mean Road frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Baseline {
    pub face: Tensor<f32>,
    pub eye: Tensor<f32>,
}

/// How to handle subjects with no usable Road frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BaselineFallback {
    #[default]
    Error,
    /// Use the mean Road frame over every subject in the same split.
    PopulationMean,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of samples matching `pred`, in storage order.
    pub fn select(&self, pred: impl Fn(&Sample) -> bool) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| pred(&self.samples[i])).collect()
    }

    pub fn subjects(&self, split: Split) -> BTreeSet<u32> {
        self.samples.iter().filter(|s| s.split == split).map(|s| s.subject).collect()
    }

    /// `[batch, S, S, 2]` network input: face in channel 0, eye patch in channel 1.
    pub fn inputs<T: Scalar>(&self, idx: &[usize]) -> Tensor<T> {
        let s = self.image_size;
        let mut data = Vec::with_capacity(idx.len() * s * s * 2);
        for &i in idx {
            let sample = &self.samples[i];
            for (f, e) in sample.face.data().iter().zip(sample.eye.data()) {
                data.push(T::from_f64_lossy(*f as f64));
                data.push(T::from_f64_lossy(*e as f64));
            }
        }
        Tensor::new([idx.len(), s, s, 2], data).expect("non-empty batch")
    }

    /// One-hot targets. Fails if any requested sample is unlabeled, so an
    /// unlabeled sample's class can never reach a classification loss.
    pub fn labels<T: Scalar>(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let mut t = Tensor::zeros([idx.len(), GlanceClass::ALL.len()]);
        for (row, &i) in idx.iter().enumerate() {
            let s = &self.samples[i];
            if !s.labeled {
                return Err(Error::Contract(format!("sample {} is unlabeled; its label is not available to training", s.id)));
            }
            t.data_mut()[row * GlanceClass::ALL.len() + s.class.code() as usize] = T::one();
        }
        Ok(t)
    }

    /// Ground-truth class codes for evaluation.
    pub fn eval_classes(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.samples[i].class.code() as usize).collect()
    }

    /// Element-wise mean of `subject`'s labeled Road frames in `split`.
    ///
    /// Training subjects use their training frames. Validation and test
    /// subjects are disjoint from training, so their own split's Road frames
    /// act as the calibration recording.
    pub fn compute_baseline(&self, subject: u32, split: Split) -> Result<Baseline> {
        let idx = self.select(|s| s.subject == subject && s.split == split && s.labeled && s.class == GlanceClass::Road);
        self.mean_frame(&idx).ok_or(Error::BaselineUnavailable { subject })
    }

    fn mean_frame(&self, idx: &[usize]) -> Option<Baseline> {
        let first = &self.samples[*idx.first()?];
        let mut face = vec![0.0f64; first.face.len()];
        let mut eye = vec![0.0f64; first.eye.len()];
        for &i in idx {
            let s = &self.samples[i];
            face.iter_mut().zip(s.face.data()).for_each(|(a, &v)| *a += v as f64);
            eye.iter_mut().zip(s.eye.data()).for_each(|(a, &v)| *a += v as f64);
        }
        let n = idx.len() as f64;
        let to = |v: Vec<f64>| Tensor::new(first.face.shape().to_vec(), v.into_iter().map(|x| (x / n) as f32).collect());
        Some(Baseline { face: to(face).ok()?, eye: to(eye).ok()? })
    }

    /// Baselines for every subject in `split`.
    pub fn baselines(&self, split: Split, fallback: BaselineFallback) -> Result<BTreeMap<u32, Baseline>> {
        let mut out = BTreeMap::new();
        let mut population = None;
        for subject in self.subjects(split) {
            match (self.compute_baseline(subject, split), fallback) {
                (Ok(b), _) => {
                    out.insert(subject, b);
                }
                (Err(e), BaselineFallback::Error) => return Err(e),
                (Err(_), BaselineFallback::PopulationMean) => {
                    if population.is_none() {
                        let idx = self.select(|s| s.split == split && s.labeled && s.class == GlanceClass::Road);
                        population = Some(self.mean_frame(&idx).ok_or(Error::BaselineUnavailable { subject })?);
                    }
                    log::warn!("subject {subject} has no Road frames in {split}; using the population mean");
                    out.insert(subject, population.clone().expect("set above"));
                }
            }
        }
        Ok(out)
    }

    /// `[batch, S, S, 2]` baseline input matching the samples in `idx`.
    pub fn baseline_inputs<T: Scalar>(&self, idx: &[usize], baselines: &BTreeMap<u32, Baseline>) -> Result<Tensor<T>> {
        let s = self.image_size;
        let mut data = Vec::with_capacity(idx.len() * s * s * 2);
        for &i in idx {
            let subject = self.samples[i].subject;
            let b = baselines.get(&subject).ok_or(Error::BaselineUnavailable { subject })?;
            for (f, e) in b.face.data().iter().zip(b.eye.data()) {
                data.push(T::from_f64_lossy(*f as f64));
                data.push(T::from_f64_lossy(*e as f64));
            }
        }
        Tensor::new([idx.len(), s, s, 2], data)
    }

    /// Keeps `ceil(fraction * n)` of `domain`'s training samples labeled,
    /// stratified by class; the rest become unlabeled.
    ///
    /// Per-class quotas are `floor(fraction * n_c)` plus one for the classes
    /// with the largest remainders. Classes whose quota would be zero keep one
    /// labeled sample and a warning is logged. Returns the number labeled.
    pub fn apply_label_budget<R: Rng + ?Sized>(&mut self, domain: u32, fraction: f64, rng: &mut R) -> Result<usize> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("label fraction {fraction} outside (0, 1]")));
        }
        let mut by_class: BTreeMap<GlanceClass, Vec<usize>> = BTreeMap::new();
        for i in self.select(|s| s.domain == domain && s.split == Split::Train) {
            by_class.entry(self.samples[i].class).or_default().push(i);
        }
        let n: usize = by_class.values().map(Vec::len).sum();
        if n == 0 {
            return Err(Error::Config(format!("domain {domain} has no training samples")));
        }
        let target = (fraction * n as f64 - 1e-9).ceil() as usize;
        let mut quota: BTreeMap<GlanceClass, usize> = BTreeMap::new();
        let mut remainders = Vec::new();
        for (&c, members) in &by_class {
            let exact = fraction * members.len() as f64;
            quota.insert(c, exact.floor() as usize);
            remainders.push((exact - exact.floor(), c));
        }
        let assigned: usize = quota.values().sum();
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, c) in remainders.iter().take(target.saturating_sub(assigned)) {
            *quota.get_mut(&c).expect("class present") += 1;
        }
        let mut labeled = 0;
        for (c, members) in by_class.iter_mut() {
            let q = quota[c];
            let q = if q == 0 {
                log::warn!("label fraction {fraction} leaves class {c} without labels in domain {domain}; keeping one");
                1
            } else {
                q
            };
            members.shuffle(rng);
            for (k, &i) in members.iter().enumerate() {
                self.samples[i].labeled = k < q;
            }
            labeled += q.min(members.len());
        }
        Ok(labeled)
    }
}
