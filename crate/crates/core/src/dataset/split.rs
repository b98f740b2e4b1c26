use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, LabeledSample};
use crate::seed::{derive_seed, rng_from_seed, SeedPart};
use crate::{ConditionClass, NUM_CLASSES};

/// Fewest samples a stratified split accepts.
const MIN_STRATIFIED: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DatasetError::InvalidConfig(format!(
                "train_fraction {} must lie strictly between 0 and 1",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

pub fn class_counts(samples: &[LabeledSample]) -> [usize; NUM_CLASSES] {
    let mut c = [0; NUM_CLASSES];
    for s in samples {
        c[s.label.index()] += 1;
    }
    c
}

/// Largest-remainder apportionment of `round(fraction * total)` across
/// groups. Equal remainders favour the lower group index.
pub fn apportion(counts: &[usize], fraction: f64) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let target = (fraction * n as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut out: Vec<usize> = exact
        .iter()
        .zip(counts)
        .map(|(&e, &c)| ((e + 1e-9).floor() as usize).min(c))
        .collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - out[a] as f64;
        let rb = exact[b] - out[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(out.iter().sum());
    for &g in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if out[g] < counts[g] {
            out[g] += 1;
            remaining -= 1;
        }
    }
    out
}

fn sorted_shuffled(mut items: Vec<LabeledSample>, seed: u64) -> Vec<LabeledSample> {
    items.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    items.shuffle(&mut rng_from_seed(seed));
    items
}

fn by_id(mut v: Vec<LabeledSample>) -> Vec<LabeledSample> {
    v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    v
}

/// Partitions samples into (train, test), each sorted by sample id.
/// Input order does not matter.
pub fn split(
    samples: &[LabeledSample],
    cfg: &SplitConfig,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>), DatasetError> {
    cfg.validate()?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    if cfg.stratified {
        if samples.len() < MIN_STRATIFIED {
            return Err(DatasetError::TooFewSamples {
                n: samples.len(),
                min: MIN_STRATIFIED,
            });
        }
        let counts = class_counts(samples);
        let quota = apportion(&counts, cfg.train_fraction);
        for class in ConditionClass::ALL {
            let i = class.index();
            if counts[i] == 0 {
                tracing::warn!(class = class.name(), "no samples of this class; skipped in split");
                continue;
            }
            let members = samples.iter().filter(|s| s.label == class).cloned().collect();
            let seed = derive_seed(cfg.seed, &["split".into(), class.name().into()]);
            let mut shuffled = sorted_shuffled(members, seed);
            test.extend(shuffled.split_off(quota[i]));
            train.extend(shuffled);
        }
    } else {
        let quota = apportion(&[samples.len()], cfg.train_fraction)[0];
        let seed = derive_seed(cfg.seed, &[SeedPart::Str("split")]);
        let mut shuffled = sorted_shuffled(samples.to_vec(), seed);
        test = shuffled.split_off(quota);
        train = shuffled;
    }
    Ok((by_id(train), by_id(test)))
}

/// Holds out `fraction` of `train` for validation; returns (fit, validation).
/// Stratified when there are enough samples.
pub fn holdout_validation(
    train: &[LabeledSample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>), DatasetError> {
    if fraction == 0.0 || train.len() < 2 {
        return Ok((by_id(train.to_vec()), Vec::new()));
    }
    let cfg = SplitConfig {
        train_fraction: 1.0 - fraction,
        seed: derive_seed(seed, &["validation".into()]),
        stratified: train.len() >= MIN_STRATIFIED,
    };
    split(train, &cfg)
}

/// Duplicates randomly chosen members of each minority class until every
/// present class has the majority count. The input comes first, unchanged;
/// duplicates follow in class order.
pub fn oversample(train: &[LabeledSample], seed: u64) -> Result<Vec<LabeledSample>, DatasetError> {
    if train.is_empty() {
        return Err(DatasetError::EmptyTrain);
    }
    let counts = class_counts(train);
    let max = *counts.iter().max().expect("five classes");
    let mut out = train.to_vec();
    for class in ConditionClass::ALL {
        let have = counts[class.index()];
        if have == 0 || have == max {
            continue;
        }
        let members: Vec<&LabeledSample> = train.iter().filter(|s| s.label == class).collect();
        let mut rng = rng_from_seed(derive_seed(seed, &["oversample".into(), class.name().into()]));
        for _ in have..max {
            out.push(members[rng.random_range(0..members.len())].clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn samples(counts: &[usize]) -> Vec<LabeledSample> {
        let mut v = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for k in 0..n {
                v.push(LabeledSample {
                    sample_id: format!("c{c}_{k:04}"),
                    image: format!("img/c{c}_{k}.png"),
                    label: ConditionClass::from_index(c).unwrap(),
                    condition_score: 50.0,
                });
            }
        }
        v
    }

    #[test]
    fn ten_samples_split_eight_two() {
        let s = samples(&[2, 2, 2, 2, 2]);
        for stratified in [true, false] {
            let cfg = SplitConfig {
                stratified,
                ..Default::default()
            };
            let (tr, te) = split(&s, &cfg).unwrap();
            assert_eq!((tr.len(), te.len()), (8, 2));
        }
    }

    #[test]
    fn stratified_counts_follow_rounding_oracle() {
        let s = samples(&[40, 30, 15, 10, 5]);
        let (tr, te) = split(&s, &SplitConfig::default()).unwrap();
        assert_eq!(class_counts(&tr), [32, 24, 12, 8, 4]);
        assert_eq!(class_counts(&te), [8, 6, 3, 2, 1]);
    }

    #[test]
    fn same_seed_same_partition_regardless_of_input_order() {
        let s = samples(&[13, 7, 9, 4, 11]);
        let mut rev = s.clone();
        rev.reverse();
        let cfg = SplitConfig {
            seed: 99,
            ..Default::default()
        };
        assert_eq!(split(&s, &cfg).unwrap(), split(&rev, &cfg).unwrap());
        let other = SplitConfig {
            seed: 100,
            ..Default::default()
        };
        assert_ne!(split(&s, &cfg).unwrap(), split(&s, &other).unwrap());
    }

    #[test]
    fn stratified_requires_five_samples() {
        let s = samples(&[1, 1, 1, 1, 0]);
        assert_eq!(
            split(&s, &SplitConfig::default()),
            Err(DatasetError::TooFewSamples { n: 4, min: 5 })
        );
        assert!(split(
            &s,
            &SplitConfig {
                stratified: false,
                ..Default::default()
            }
        )
        .is_ok());
    }

    #[test]
    fn missing_class_is_skipped() {
        let s = samples(&[10, 0, 5, 5, 0]);
        let (tr, te) = split(&s, &SplitConfig::default()).unwrap();
        assert_eq!(tr.len() + te.len(), 20);
        assert_eq!(class_counts(&tr), [8, 0, 4, 4, 0]);
    }

    #[test]
    fn bad_fraction_rejected() {
        for f in [0.0, 1.0, -0.1, f64::NAN] {
            let cfg = SplitConfig {
                train_fraction: f,
                ..Default::default()
            };
            assert!(split(&samples(&[5; 5]), &cfg).is_err());
        }
    }

    #[test]
    fn oversample_examples() {
        let bal = samples(&[3, 3, 3, 3, 3]);
        assert_eq!(oversample(&bal, 1).unwrap(), bal);

        let two = samples(&[10, 4]);
        let out = oversample(&two, 1).unwrap();
        assert_eq!(class_counts(&out), [10, 10, 0, 0, 0]);
        assert_eq!(out.len() - two.len(), 6);
        assert!(out[two.len()..].iter().all(|s| s.label == ConditionClass::Good));

        let five = samples(&[7, 5, 3, 2, 1]);
        let out = oversample(&five, 1).unwrap();
        assert_eq!(class_counts(&out), [7; 5]);
        assert_eq!(out.len(), 35);
        assert_eq!(oversample(&[], 1), Err(DatasetError::EmptyTrain));
    }

    #[test]
    fn holdout_is_disjoint_and_ten_percent() {
        let s = samples(&[20, 20, 20, 20, 20]);
        let (fit, val) = holdout_validation(&s, 0.1, 3).unwrap();
        assert_eq!(val.len(), 10);
        assert_eq!(class_counts(&val), [2; 5]);
        let ids: HashSet<_> = fit.iter().map(|s| &s.sample_id).collect();
        assert!(val.iter().all(|v| !ids.contains(&v.sample_id)));
        let (fit0, val0) = holdout_validation(&s, 0.0, 3).unwrap();
        assert_eq!((fit0.len(), val0.len()), (100, 0));
    }

    proptest! {
        #[test]
        fn split_partitions_and_rounds(
            counts in proptest::collection::vec(0usize..40, 5),
            seed in any::<u64>(),
            stratified in any::<bool>(),
        ) {
            let s = samples(&counts);
            let n = s.len();
            prop_assume!(n >= 5);
            let cfg = SplitConfig { train_fraction: 0.8, seed, stratified };
            let (tr, te) = split(&s, &cfg).unwrap();
            prop_assert_eq!(tr.len(), (0.8 * n as f64).round() as usize);
            let mut all: Vec<_> = tr.iter().chain(&te).map(|s| s.sample_id.clone()).collect();
            all.sort();
            let mut want: Vec<_> = s.iter().map(|s| s.sample_id.clone()).collect();
            want.sort();
            prop_assert_eq!(all, want);
            if stratified {
                for (c, &have) in class_counts(&tr).iter().enumerate() {
                    prop_assert!((have as f64 - 0.8 * counts[c] as f64).abs() <= 1.0);
                }
            }
        }

        #[test]
        fn oversample_only_duplicates(
            counts in proptest::collection::vec(0usize..15, 5),
            seed in any::<u64>(),
        ) {
            let s = samples(&counts);
            prop_assume!(!s.is_empty());
            let out = oversample(&s, seed).unwrap();
            prop_assert_eq!(&out[..s.len()], &s[..]);
            let ids: HashSet<_> = s.iter().map(|x| x.sample_id.as_str()).collect();
            prop_assert!(out.iter().all(|x| ids.contains(x.sample_id.as_str())));
            let max = *counts.iter().max().unwrap();
            for (c, &k) in class_counts(&out).iter().enumerate() {
                prop_assert_eq!(k, if counts[c] == 0 { 0 } else { max });
            }
        }
    }
}
