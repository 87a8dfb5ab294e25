//! Dataset + regime + seeds: the unit that produces a report.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::render::derive_seed;
use crate::data::{generate_dataset, Dataset, DatasetConfig, DomainSpec, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport, ReportTable};
use crate::model::ModelWeights;
use crate::scalar::Scalar;
use crate::train::config::RegimeConfig;
use crate::train::engine::score;
use crate::train::regimes::{eval_baselines, train_regime, TrainOutcome, D2};

const BUDGET_STREAM: u64 = 0x6275_6467;

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub data: DatasetConfig,
    /// 1 renders the primary camera only; 2 adds the secondary camera.
    pub n_domains: usize,
    pub regime: RegimeConfig,
}

impl Experiment {
    /// Defaults for `regime`, with two domains when the regime needs them.
    pub fn new(name: impl Into<String>, regime: RegimeConfig) -> Self {
        let n_domains = if regime.regime.uses_two_domains() { 2 } else { 1 };
        Self { name: name.into(), data: DatasetConfig::default(), n_domains, regime }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.regime.validate()?;
        if !(1..=2).contains(&self.n_domains) {
            return Err(Error::Config(format!("n_domains must be 1 or 2, got {}", self.n_domains)));
        }
        if self.regime.regime.uses_two_domains() && self.n_domains != 2 {
            return Err(Error::Config(format!("regime {} needs two domains", self.regime.regime)));
        }
        if self.regime.label_fraction < 1.0 && self.n_domains != 2 {
            return Err(Error::Config("a label fraction below 1 needs a second domain".into()));
        }
        Ok(())
    }

    pub fn domains(&self) -> Vec<DomainSpec> {
        [DomainSpec::primary(), DomainSpec::secondary()].into_iter().take(self.n_domains).collect()
    }

    /// Regime name, with the ablation label appended when any ablation is on.
    pub fn regime_label(&self) -> String {
        let label = self.regime.ablations.label();
        if label == "full" {
            self.regime.regime.name().to_string()
        } else {
            format!("{}/{label}", self.regime.regime.name())
        }
    }

    /// Named test sets: `test` for one domain, `d1_test` and `d2_test` for two.
    pub fn eval_sets(&self) -> Vec<(String, Vec<u32>)> {
        if self.n_domains == 1 {
            vec![("test".into(), vec![0])]
        } else {
            vec![("d1_test".into(), vec![0]), ("d2_test".into(), vec![1])]
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        generate_dataset(&self.data, &self.domains())
    }

    /// Copy of `base` with the second domain's label budget applied for `seed`.
    pub fn budgeted(&self, base: &Dataset, seed: u64) -> Result<Dataset> {
        let mut ds = base.clone();
        if self.n_domains == 2 && self.regime.label_fraction < 1.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.data.seed, seed, BUDGET_STREAM]));
            ds.apply_label_budget(D2, self.regime.label_fraction, &mut rng)?;
        }
        Ok(ds)
    }
}

/// Test-set metrics of `w` on every set in `sets`.
pub fn evaluate_weights<T: Scalar>(
    w: &ModelWeights<T>,
    ds: &Dataset,
    sets: &[(String, Vec<u32>)],
) -> Result<Vec<(String, MetricsReport)>> {
    let baselines = eval_baselines(w, ds, Split::Test)?;
    sets.iter()
        .map(|(name, domains)| {
            let idx = ds.select(|s| s.split == Split::Test && domains.contains(&s.domain));
            if idx.is_empty() {
                return Err(Error::Config(format!("evaluation set `{name}` is empty")));
            }
            Ok((name.clone(), evaluate(&score(w, ds, &idx, baselines.as_ref())?)?))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SeedRun<T> {
    pub seed: u64,
    pub outcome: TrainOutcome<T>,
    pub reports: Vec<(String, MetricsReport)>,
}

impl<T> SeedRun<T> {
    pub fn macro_auc(&self, eval_set: &str) -> Option<f64> {
        self.reports.iter().find(|(n, _)| n == eval_set).map(|(_, m)| m.auc.macro_avg)
    }
}

pub fn run_seed<T: Scalar>(exp: &Experiment, base: &Dataset, seed: u64) -> Result<SeedRun<T>> {
    let ds = exp.budgeted(base, seed)?;
    let outcome = train_regime::<T>(&exp.regime, &ds, seed)?;
    let reports = evaluate_weights(&outcome.weights, &ds, &exp.eval_sets())?;
    Ok(SeedRun { seed, outcome, reports })
}

/// Every configured seed, in order, plus per-seed and aggregate report rows.
pub fn run_experiment<T: Scalar>(
    exp: &Experiment,
    base: &Dataset,
    config_hash: &str,
) -> Result<(ReportTable, Vec<SeedRun<T>>)> {
    exp.validate()?;
    let mut table = ReportTable::new(config_hash);
    let mut runs = Vec::new();
    for &seed in &exp.regime.seeds {
        log::info!("{} ({}): seed {seed}", exp.name, exp.regime_label());
        let run = run_seed::<T>(exp, base, seed)?;
        for (set, m) in &run.reports {
            table.add_run(&exp.name, &exp.regime_label(), exp.regime.label_fraction, seed, set, m);
        }
        runs.push(run);
    }
    table.add_aggregates();
    Ok((table, runs))
}
