//! Line-oriented experiment files: `key = value`, `#` starts a comment.
//!
//! Every key is optional. Unknown keys, repeated keys and unparsable values
//! are errors. `regime` is applied first because it sets the defaults of
//! `lr`, `batch_size` and `n_domains`; `scale` then picks the size preset
//! that the individual architecture keys refine.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `name` | `experiment` | label used in reports |
//! | `regime` | `standard` | standard, personalized, multidomain, mixed, finetune, gradrev, tritraining, distillation |
//! | `scale` | `desk` | `desk` (32 px, 3 blocks, base 4, 128-d) or `full` (96 px, 5 blocks, base 64, 512-d) |
//! | `image_size` | from `scale` | input side length, used for both rendering and the model |
//! | `n_blocks` | from `scale` | encoder blocks |
//! | `base_channels` | from `scale` | filters of the first block |
//! | `embedding_dim` | from `scale` | embedding width |
//! | `lambda1`, `lambda2`, `lambda3` | `1`, `1`, `10` | reconstruction weights (standard, personalized, multi-domain) |
//! | `lr` | `1e-3` personalized, else `1e-4` | Adam learning rate |
//! | `batch_size` | `16` personalized, else `8` | mini-batch size |
//! | `max_epochs` | `30` | epoch limit per training phase |
//! | `finetune_epochs` | `max_epochs` | epoch limit of the d2 phase of fine-tuning (a count, or `max_epochs`) |
//! | `patience` | `3` | epochs without improvement before stopping |
//! | `min_improvement` | `1e-4` | relative val-loss decrease that counts as improvement |
//! | `fresh_optimizer` | `true` | reset Adam moments between training phases |
//! | `dropout` | `0.7` | head dropout rate |
//! | `mse_rec`, `no_skip`, `no_rec`, `no_cls_pretrain` | `false` | ablations (standard regime) |
//! | `seeds` | `0,1,2,3,4` | training seeds |
//! | `label_fraction` | `1` | labeled fraction of the second domain's training samples |
//! | `domain_weight` | `1` | domain-loss weight (gradrev) |
//! | `lambda_rev` | `1` | reversed-gradient multiplier (gradrev) |
//! | `distill_loss` | `cross_entropy` | `cross_entropy` or `mse` (distillation) |
//! | `n_domains` | `2` for two-domain regimes, else `1` | rendered cameras |
//! | `subjects_per_domain` | `10` | synthetic subjects per camera |
//! | `per_class` | `20` | frames per subject and non-road class |
//! | `road_factor` | `1` | road frames per subject as a multiple of `per_class` |
//! | `split_fractions` | `0.6,0.2,0.2` | train, val, test subject fractions |
//! | `max_head_offset` | `0.08` | largest per-subject head offset |
//! | `bias_gain` | `1` | per-subject gaze bias relative to head offset |
//! | `data_seed` | `0` | dataset generation seed |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ArchitectureScale;
use crate::persist::atomic::read_file;
use crate::train::{DistillLoss, Experiment, Regime, RegimeConfig};

pub const CONFIG_KEYS: &[&str] = &[
    "name",
    "regime",
    "scale",
    "image_size",
    "n_blocks",
    "base_channels",
    "embedding_dim",
    "lambda1",
    "lambda2",
    "lambda3",
    "lr",
    "batch_size",
    "max_epochs",
    "finetune_epochs",
    "patience",
    "min_improvement",
    "fresh_optimizer",
    "dropout",
    "mse_rec",
    "no_skip",
    "no_rec",
    "no_cls_pretrain",
    "seeds",
    "label_fraction",
    "domain_weight",
    "lambda_rev",
    "distill_loss",
    "n_domains",
    "subjects_per_domain",
    "per_class",
    "road_factor",
    "split_fractions",
    "max_head_offset",
    "bias_gain",
    "data_seed",
];

struct Entry {
    line: usize,
    value: String,
}

struct Entries(BTreeMap<String, Entry>);

impl Entries {
    fn get<V: FromStr>(&mut self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        match self.0.remove(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|err| Error::Config(format!("line {}: bad value {:?} for `{key}`: {err}", e.line, e.value))),
        }
    }

    fn set<V: FromStr>(&mut self, key: &str, slot: &mut V) -> Result<()>
    where
        V::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<V: FromStr>(&mut self, key: &str) -> Result<Option<Vec<V>>>
    where
        V::Err: std::fmt::Display,
    {
        match self.0.remove(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|err| Error::Config(format!("line {}: bad list item {p:?} for `{key}`: {err}", e.line)))
                })
                .collect::<Result<Vec<V>>>()
                .map(Some),
        }
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config(format!("line {line}: expected `key = value`, got {content:?}")));
        };
        let (key, value) = (key.trim(), value.trim());
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(Error::Config(format!("line {line}: `{key}` has no value")));
        }
        if let Some(prev) = map.insert(key.to_string(), Entry { line, value: value.to_string() }) {
            return Err(Error::Config(format!("line {line}: `{key}` already set on line {}", prev.line)));
        }
    }
    Ok(Entries(map))
}

fn parse_distill(s: &str) -> Result<DistillLoss> {
    match s {
        "cross_entropy" => Ok(DistillLoss::CrossEntropy),
        "mse" => Ok(DistillLoss::Mse),
        _ => Err(Error::Config(format!("distill_loss must be cross_entropy or mse, got {s:?}"))),
    }
}

fn distill_name(d: DistillLoss) -> &'static str {
    match d {
        DistillLoss::CrossEntropy => "cross_entropy",
        DistillLoss::Mse => "mse",
    }
}

pub fn parse_config(text: &str) -> Result<Experiment> {
    let mut e = tokenize(text)?;
    let regime: Regime = e.get("regime")?.unwrap_or(Regime::Standard);
    let mut exp = Experiment::new("experiment", RegimeConfig::new(regime));
    e.set("name", &mut exp.name)?;
    let r = &mut exp.regime;
    match e.get::<String>("scale")?.as_deref() {
        None | Some("desk") => r.scale = ArchitectureScale::desk(),
        Some("full") => r.scale = ArchitectureScale::full(),
        Some(other) => return Err(Error::Config(format!("scale must be desk or full, got {other:?}"))),
    }
    exp.data.image_size = r.scale.input_size;
    if let Some(size) = e.get("image_size")? {
        r.scale.input_size = size;
        exp.data.image_size = size;
    }
    e.set("n_blocks", &mut r.scale.n_blocks)?;
    e.set("base_channels", &mut r.scale.base_channels)?;
    e.set("embedding_dim", &mut r.scale.embedding_dim)?;
    e.set("lambda1", &mut r.loss_weights.lambda1)?;
    e.set("lambda2", &mut r.loss_weights.lambda2)?;
    e.set("lambda3", &mut r.loss_weights.lambda3)?;
    e.set("lr", &mut r.lr)?;
    e.set("batch_size", &mut r.batch_size)?;
    e.set("max_epochs", &mut r.max_epochs)?;
    match e.get::<String>("finetune_epochs")?.as_deref() {
        None | Some("max_epochs") => {}
        Some(n) => {
            let n = n.parse().map_err(|_| Error::Config(format!("finetune_epochs must be a count or `max_epochs`, got {n:?}")))?;
            r.finetune_epochs = Some(n);
        }
    }
    e.set("patience", &mut r.patience)?;
    e.set("min_improvement", &mut r.min_improvement)?;
    e.set("fresh_optimizer", &mut r.fresh_optimizer)?;
    e.set("dropout", &mut r.dropout)?;
    e.set("mse_rec", &mut r.ablations.mse_rec)?;
    e.set("no_skip", &mut r.ablations.no_skip)?;
    e.set("no_rec", &mut r.ablations.no_rec)?;
    e.set("no_cls_pretrain", &mut r.ablations.no_cls_pretrain)?;
    if let Some(seeds) = e.list("seeds")? {
        r.seeds = seeds;
    }
    e.set("label_fraction", &mut r.label_fraction)?;
    e.set("domain_weight", &mut r.domain_weight)?;
    e.set("lambda_rev", &mut r.lambda_rev)?;
    if let Some(d) = e.get::<String>("distill_loss")? {
        r.distill_loss = parse_distill(&d)?;
    }
    e.set("n_domains", &mut exp.n_domains)?;
    let d = &mut exp.data;
    e.set("subjects_per_domain", &mut d.subjects_per_domain)?;
    e.set("per_class", &mut d.per_class)?;
    e.set("road_factor", &mut d.road_factor)?;
    if let Some(f) = e.list::<f64>("split_fractions")? {
        d.split_fractions = f
            .try_into()
            .map_err(|v: Vec<f64>| Error::Config(format!("split_fractions needs three values, got {}", v.len())))?;
    }
    e.set("max_head_offset", &mut d.max_head_offset)?;
    e.set("bias_gain", &mut d.bias_gain)?;
    e.set("data_seed", &mut d.seed)?;
    debug_assert!(e.0.is_empty(), "every listed key is consumed");
    exp.validate()?;
    Ok(exp)
}

pub fn load_config(path: &Path) -> Result<Experiment> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
    parse_config(&text)
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Every key with its effective value; `parse_config` of the result
/// reproduces `exp`.
pub fn render_config(exp: &Experiment) -> String {
    let r = &exp.regime;
    let d = &exp.data;
    let s = r.scale;
    let preset = if s == ArchitectureScale::full() { "full" } else { "desk" };
    let pairs: Vec<(&str, String)> = vec![
        ("name", exp.name.clone()),
        ("regime", r.regime.to_string()),
        ("scale", preset.into()),
        ("image_size", s.input_size.to_string()),
        ("n_blocks", s.n_blocks.to_string()),
        ("base_channels", s.base_channels.to_string()),
        ("embedding_dim", s.embedding_dim.to_string()),
        ("lambda1", r.loss_weights.lambda1.to_string()),
        ("lambda2", r.loss_weights.lambda2.to_string()),
        ("lambda3", r.loss_weights.lambda3.to_string()),
        ("lr", r.lr.to_string()),
        ("batch_size", r.batch_size.to_string()),
        ("max_epochs", r.max_epochs.to_string()),
        ("finetune_epochs", r.finetune_epochs.map_or("max_epochs".into(), |n| n.to_string())),
        ("patience", r.patience.to_string()),
        ("min_improvement", r.min_improvement.to_string()),
        ("fresh_optimizer", r.fresh_optimizer.to_string()),
        ("dropout", r.dropout.to_string()),
        ("mse_rec", r.ablations.mse_rec.to_string()),
        ("no_skip", r.ablations.no_skip.to_string()),
        ("no_rec", r.ablations.no_rec.to_string()),
        ("no_cls_pretrain", r.ablations.no_cls_pretrain.to_string()),
        ("seeds", list(&r.seeds)),
        ("label_fraction", r.label_fraction.to_string()),
        ("domain_weight", r.domain_weight.to_string()),
        ("lambda_rev", r.lambda_rev.to_string()),
        ("distill_loss", distill_name(r.distill_loss).into()),
        ("n_domains", exp.n_domains.to_string()),
        ("subjects_per_domain", d.subjects_per_domain.to_string()),
        ("per_class", d.per_class.to_string()),
        ("road_factor", d.road_factor.to_string()),
        ("split_fractions", list(&d.split_fractions)),
        ("max_head_offset", d.max_head_offset.to_string()),
        ("bias_gain", d.bias_gain.to_string()),
        ("data_seed", d.seed.to_string()),
    ];
    let mut out = String::new();
    for (k, v) in pairs {
        writeln!(out, "{k} = {v}").expect("writing to a String");
    }
    out
}

/// Hex SHA-256 of the rendered config, so equivalent files hash alike.
pub fn config_hash(exp: &Experiment) -> String {
    let digest = Sha256::digest(render_config(exp).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let e = parse_config("# nothing\n\n").unwrap();
        assert_eq!(e, Experiment::new("experiment", RegimeConfig::new(Regime::Standard)));
        let p = parse_config("regime = personalized").unwrap();
        assert_eq!((p.regime.lr, p.regime.batch_size, p.n_domains), (1e-3, 16, 1));
        assert_eq!(parse_config("regime = mixed").unwrap().n_domains, 2);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for bad in ["colour = red", "lr = 1\nlr = 2", "lr", "lr = fast", "seeds = 1,x", "split_fractions = 0.5,0.5", "scale = huge", "regime = best"] {
            assert!(matches!(parse_config(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn render_round_trips() {
        let e = parse_config("regime = gradrev\nlabel_fraction = 0.1\nseeds = 3, 9\nmax_epochs = 4 # short\nno_skip = false").unwrap();
        assert_eq!(e.regime.seeds, vec![3, 9]);
        assert_eq!(parse_config(&render_config(&e)).unwrap(), e);
        let mut pinned = e.clone();
        pinned.regime.finetune_epochs = Some(2);
        assert_eq!(parse_config(&render_config(&pinned)).unwrap(), pinned);
        assert_eq!(config_hash(&e).len(), 64);
        let full = parse_config("scale = full").unwrap();
        assert_eq!(full.regime.scale, ArchitectureScale::full());
        assert_eq!(full.data.image_size, 96);
    }
}
