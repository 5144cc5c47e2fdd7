//! Attacks on the stored (permuted) weights: brute-force effort,
//! divide-and-conquer key recovery driven by extracted-model accuracy,
//! layer significance, and small-matrix leakage.

use num_bigint::BigUint;
use num_traits::One;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::benes::{PermutationModule, PmKey};
use crate::config::{Arch, SystemConfig};
use crate::error::{Error, Result};
use crate::keys::build_schedule;
use crate::mapping::{adversary_extract, protect_model, LayerPlacement};
use crate::model::{ModelDescriptor, QuantModel};
use crate::quant::QuantMatrix;
use crate::rng::SeedTree;
use crate::system::accuracy;

pub const DEFAULT_TRIALS: usize = 40;
pub const SENSITIVITY_GAP: f64 = 0.05;

pub fn factorial(n: usize) -> BigUint {
    (2..=n).fold(BigUint::one(), |acc, i| acc * BigUint::from(i))
}

/// `log2` of a big integer, accurate to double precision.
pub fn log2_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits == 0 {
        return f64::NEG_INFINITY;
    }
    if bits <= 64 {
        let v = x.iter_u64_digits().next().unwrap_or(0);
        return (v as f64).log2();
    }
    let shift = bits - 64;
    let top: BigUint = x >> shift;
    let v = top.iter_u64_digits().next().unwrap_or(0);
    (v as f64).log2() + shift as f64
}

/// Exact number of arrangements a brute-force attacker must try for one
/// `m x n` layer.
pub fn brute_force_layer_count(m: usize, n: usize, c: usize, ports: usize) -> Result<BigUint> {
    if ports < 2 || !ports.is_power_of_two() || !c.is_power_of_two() || !c.is_multiple_of(ports) {
        return Err(Error::Config(format!("{ports}-port blocks do not divide C={c}")));
    }
    let full = factorial(ports);
    if m >= c || n >= c {
        return Ok(num_traits::pow(full, c / ports));
    }
    let d = m.max(n);
    Ok(num_traits::pow(full, d / ports) * factorial(d % ports))
}

pub fn brute_force_layer(m: usize, n: usize, c: usize, ports: usize) -> Result<f64> {
    Ok(log2_big(&brute_force_layer_count(m, n, c, ports)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecurityEstimate {
    pub arch: Arch,
    pub crossbar_size: usize,
    pub bn_ports: usize,
    pub blocks: usize,
    /// `log2` effort per layer.
    pub per_layer: Vec<f64>,
    /// `log2` effort for the whole model.
    pub model: f64,
}

pub fn brute_force_model(model: &ModelDescriptor, cfg: &SystemConfig) -> Result<SecurityEstimate> {
    let per_layer = model
        .layers
        .iter()
        .map(|l| brute_force_layer(l.m, l.n, cfg.crossbar_size, cfg.bn_ports))
        .collect::<Result<Vec<_>>>()?;
    let total = match cfg.arch {
        // one shared key: breaking the largest layer breaks them all
        Arch::Config1 => per_layer.iter().cloned().fold(0.0, f64::max),
        Arch::Config2 => per_layer.iter().sum(),
    };
    Ok(SecurityEstimate {
        arch: cfg.arch,
        crossbar_size: cfg.crossbar_size,
        bn_ports: cfg.bn_ports,
        blocks: cfg.crossbar_size / cfg.bn_ports,
        per_layer,
        model: total,
    })
}

/// Correct-key accuracy beats wrong-key accuracy by at least five points.
pub fn attack_sensitive(correct_acc: f64, wrong_acc: f64) -> bool {
    // rounding guard so that e.g. 0.15 vs 0.10 counts
    correct_acc - wrong_acc >= SENSITIVITY_GAP - 1e-9
}

/// Labelled samples used to score recovered models.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub features: &'a [Vec<u8>],
    pub labels: &'a [u8],
}

impl<'a> EvalSet<'a> {
    pub fn new(features: &'a [Vec<u8>], labels: &'a [u8]) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::dim(features.len(), labels.len(), "evaluation set"));
        }
        Ok(Self { features, labels })
    }

    pub fn accuracy(&self, model: &QuantModel) -> Result<f64> {
        accuracy(model, self.features, self.labels)
    }
}

pub fn random_key(pm: &PermutationModule, rng: &mut impl Rng) -> PmKey {
    PmKey::from_bits((0..pm.key_len()).map(|_| rng.random()).collect())
}

/// What the adversary reads when `keys[i]` protects layer `i`.
pub fn place_model(model: &QuantModel, pm: &PermutationModule, keys: &[&PmKey]) -> Result<QuantModel> {
    if keys.len() != model.len() {
        return Err(Error::dim(model.len(), keys.len(), "layer keys"));
    }
    let weights = model
        .layers
        .iter()
        .zip(keys)
        .map(|(l, k)| LayerPlacement::new(pm, k, l.spec.m, l.spec.n)?.place(&l.weights))
        .collect::<Result<Vec<_>>>()?;
    model.with_weights(weights)
}

/// Undoes placement of each layer with a guessed key; `None` leaves the
/// stored matrix as read.
pub fn recover_model(stored: &QuantModel, pm: &PermutationModule, guesses: &[Option<&PmKey>]) -> Result<QuantModel> {
    if guesses.len() != stored.len() {
        return Err(Error::dim(stored.len(), guesses.len(), "key guesses"));
    }
    let weights = stored
        .layers
        .iter()
        .zip(guesses)
        .map(|(l, g)| match g {
            Some(k) => LayerPlacement::new(pm, k, l.spec.m, l.spec.n)?.unplace(&l.weights),
            None => Ok(l.weights.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    stored.with_weights(weights)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs `trials` seeded evaluations and returns them in seed order.
fn run_trials<F>(trials: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    (0..trials as u64).into_par_iter().map(f).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectivenessReport {
    pub arch: Arch,
    pub bn_ports: usize,
    pub clean_accuracy: f64,
    pub trial_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Accuracy of the model read straight off the crossbars, over fresh
/// device seeds.
pub fn effectiveness(
    model: &QuantModel,
    cfg: &SystemConfig,
    eval: EvalSet<'_>,
    trials: usize,
) -> Result<EffectivenessReport> {
    let tree = SeedTree::new(cfg.seed).child("effectiveness");
    let desc = model.descriptor();
    let acc = run_trials(trials, |t| {
        let mut sched = build_schedule(cfg, &desc, tree.index(t).seed(), None)?;
        let mapping = protect_model(model, cfg, &mut sched)?;
        eval.accuracy(&adversary_extract(&mapping)?)
    })?;
    Ok(EffectivenessReport {
        arch: cfg.arch,
        bn_ports: cfg.bn_ports,
        clean_accuracy: eval.accuracy(model)?,
        mean_accuracy: mean(&acc),
        trial_accuracy: acc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSignificance {
    /// Most significant first.
    pub order: Vec<usize>,
    /// Mean accuracy with only layer `i` protected.
    pub accuracy: Vec<f64>,
}

/// Protects one layer at a time with random keys; lower accuracy means
/// more significant.
pub fn layer_significance(
    model: &QuantModel,
    pm: &PermutationModule,
    eval: EvalSet<'_>,
    trials: usize,
    seed: u64,
) -> Result<LayerSignificance> {
    let tree = SeedTree::new(seed).child("significance");
    let mut accs = Vec::with_capacity(model.len());
    for li in 0..model.len() {
        let node = tree.index(li as u64);
        let a = run_trials(trials, |t| {
            let key = random_key(pm, &mut node.index(t).rng());
            let l = &model.layers[li];
            let placed = LayerPlacement::new(pm, &key, l.spec.m, l.spec.n)?.place(&l.weights)?;
            let mut w: Vec<QuantMatrix> = model.layers.iter().map(|l| l.weights.clone()).collect();
            w[li] = placed;
            eval.accuracy(&model.with_weights(w)?)
        })?;
        accs.push(mean(&a));
    }
    let mut order: Vec<usize> = (0..model.len()).collect();
    order.sort_by(|&a, &b| accs[a].total_cmp(&accs[b]).then(a.cmp(&b)));
    Ok(LayerSignificance { order, accuracy: accs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DncStep {
    /// Percent of key bits guessed (config1) or layers guessed (config2).
    pub step: usize,
    pub correct_acc: f64,
    pub wrong_acc: f64,
    pub sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DncResult {
    pub arch: Arch,
    /// Config1: sensitive ratio in percent.
    pub ratio_percent: Option<usize>,
    /// Config2: layers whose keys must be guessed, in significance order.
    pub list2: Vec<usize>,
    pub effort_log2: f64,
    pub steps: Vec<DncStep>,
}

impl DncResult {
    pub fn ratio(&self) -> Option<f64> {
        self.ratio_percent.map(|r| r as f64 / 100.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,correct_acc,wrong_acc,sensitive\n");
        for st in &self.steps {
            s.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                st.step, st.correct_acc, st.wrong_acc, st.sensitive
            ));
        }
        s
    }
}

/// Bits guessed at ratio `percent`.
pub fn guessed_bits(key_len: usize, percent: usize) -> usize {
    (key_len * percent).div_ceil(100)
}

/// Divide and conquer on the shared config1 key: guess the first `r` of
/// the key bits correctly and the rest at random, for `r` = 1%..100%,
/// until the model becomes attack-sensitive.
#[allow(clippy::too_many_arguments)]
pub fn dnc_config1(
    stored: &QuantModel,
    true_key: &PmKey,
    pm: &PermutationModule,
    eval: EvalSet<'_>,
    t_bf_log2: f64,
    trials: usize,
    seed: u64,
) -> Result<DncResult> {
    if true_key.len() != pm.key_len() {
        return Err(Error::dim(pm.key_len(), true_key.len(), "config1 key"));
    }
    let tree = SeedTree::new(seed).child("dnc1");
    let layers = stored.len();
    let mut steps = Vec::new();
    for r in 1..=100usize {
        let node = tree.index(r as u64);
        let bits = guessed_bits(pm.key_len(), r);
        let correct = run_trials(trials, |t| {
            let rest = random_key(pm, &mut node.child("correct").index(t).rng());
            let guess = true_key.splice(bits, &rest);
            eval.accuracy(&recover_model(stored, pm, &vec![Some(&guess); layers])?)
        })?;
        let wrong = run_trials(trials, |t| {
            let guess = random_key(pm, &mut node.child("wrong").index(t).rng());
            eval.accuracy(&recover_model(stored, pm, &vec![Some(&guess); layers])?)
        })?;
        let (c, w) = (mean(&correct), mean(&wrong));
        let sensitive = attack_sensitive(c, w);
        steps.push(DncStep {
            step: r,
            correct_acc: c,
            wrong_acc: w,
            sensitive,
        });
        if sensitive {
            return Ok(DncResult {
                arch: Arch::Config1,
                ratio_percent: Some(r),
                list2: Vec::new(),
                effort_log2: (r as f64 / 100.0).log2() + t_bf_log2,
                steps,
            });
        }
    }
    // unreachable for a faithful recovery: the full key restores the model
    Ok(DncResult {
        arch: Arch::Config1,
        ratio_percent: None,
        list2: Vec::new(),
        effort_log2: t_bf_log2,
        steps,
    })
}

/// Divide and conquer over config2 layer keys: move layers from the
/// significance list into the guessed set until guessing them correctly
/// (other layers left as read) beats random guesses.
#[allow(clippy::too_many_arguments)]
pub fn dnc_config2(
    stored: &QuantModel,
    true_keys: &[PmKey],
    pm: &PermutationModule,
    list1: &[usize],
    eval: EvalSet<'_>,
    per_layer_log2: &[f64],
    trials: usize,
    seed: u64,
) -> Result<DncResult> {
    let layers = stored.len();
    if true_keys.len() != layers || per_layer_log2.len() != layers {
        return Err(Error::dim(layers, true_keys.len(), "config2 layer keys"));
    }
    let tree = SeedTree::new(seed).child("dnc2");
    let mut list2: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    for &layer in list1 {
        list2.push(layer);
        let mut correct_guess: Vec<Option<&PmKey>> = vec![None; layers];
        for &l in &list2 {
            correct_guess[l] = Some(&true_keys[l]);
        }
        let c = eval.accuracy(&recover_model(stored, pm, &correct_guess)?)?;
        let node = tree.index(list2.len() as u64);
        let wrong = run_trials(trials, |t| {
            let mut rng = node.index(t).rng();
            let keys: Vec<PmKey> = list2.iter().map(|_| random_key(pm, &mut rng)).collect();
            let mut guess: Vec<Option<&PmKey>> = vec![None; layers];
            for (&l, k) in list2.iter().zip(&keys) {
                guess[l] = Some(k);
            }
            eval.accuracy(&recover_model(stored, pm, &guess)?)
        })?;
        let w = mean(&wrong);
        let sensitive = attack_sensitive(c, w);
        steps.push(DncStep {
            step: list2.len(),
            correct_acc: c,
            wrong_acc: w,
            sensitive,
        });
        if sensitive {
            break;
        }
    }
    Ok(DncResult {
        arch: Arch::Config2,
        ratio_percent: None,
        effort_log2: list2.iter().map(|&l| per_layer_log2[l]).sum(),
        list2,
        steps,
    })
}

/// Accuracy when only the first `c` rows of `layer` are shuffled, for
/// each `c` in `row_counts`.
pub fn partial_row_permutation_study(
    model: &QuantModel,
    layer: usize,
    row_counts: &[usize],
    eval: EvalSet<'_>,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let l = model
        .layers
        .get(layer)
        .ok_or_else(|| Error::Config(format!("layer {layer} out of range")))?;
    if row_counts.windows(2).any(|w| w[0] > w[1]) || row_counts.iter().any(|&c| c > l.spec.m) {
        return Err(Error::Config(
            "row counts must ascend and not exceed the layer height".into(),
        ));
    }
    let tree = SeedTree::new(seed).child("partial-rows");
    row_counts
        .iter()
        .map(|&rows| {
            if rows == 0 {
                return eval.accuracy(model);
            }
            let node = tree.index(rows as u64);
            let acc = run_trials(trials, |t| {
                let mut order: Vec<usize> = (0..rows).collect();
                order.shuffle(&mut node.index(t).rng());
                let src = &l.weights;
                let mut w = src.clone();
                for (i, &d) in order.iter().enumerate() {
                    for c in 0..src.cols() {
                        w.set(d, c, src.get(i, c));
                    }
                }
                let mut all: Vec<QuantMatrix> = model.layers.iter().map(|l| l.weights.clone()).collect();
                all[layer] = w;
                eval.accuracy(&model.with_weights(all)?)
            })?;
            Ok(mean(&acc))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leakage {
    pub naive_space_log2: f64,
    pub indexed_space_log2: f64,
    pub reduction: f64,
}

/// Search space for `m_rows` real rows on `ports` crossbar rows: without
/// index vectors the occupied rows are visible, leaving `m!(ports-m)!`.
pub fn small_matrix_leakage(m_rows: usize, ports: usize) -> Result<Leakage> {
    if m_rows == 0 || m_rows > ports {
        return Err(Error::Config(format!("{m_rows} rows do not fit {ports} ports")));
    }
    let naive = log2_big(&(factorial(m_rows) * factorial(ports - m_rows)));
    let full = log2_big(&factorial(ports));
    Ok(Leakage {
        naive_space_log2: naive,
        indexed_space_log2: full,
        reduction: 1.0 - (naive - full).exp2(),
    })
}
