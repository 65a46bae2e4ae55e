use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::series::FrameSeries;
use super::window::Window;
use crate::error::{Error, Result};

/// Anything that can be assigned to a partition by game or team.
pub trait Splittable {
    fn game_id(&self) -> &str;
    fn team(&self) -> &str;
}

impl Splittable for FrameSeries {
    fn game_id(&self) -> &str {
        &self.game_id
    }
    fn team(&self) -> &str {
        &self.focal_team
    }
}

impl Splittable for Window {
    fn game_id(&self) -> &str {
        &self.game_id
    }
    fn team(&self) -> &str {
        &self.focal_team
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Item-level shuffle, optionally restricted to one team.
    RandomWithinTeam { team: Option<String> },
    /// Whole games go to exactly one partition.
    ByGame { team: Option<String> },
    /// Train/validation from `train_teams`, test from `test_teams`.
    ByTeam {
        train_teams: Vec<String>,
        test_teams: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            validation: 0.2,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Parameter(format!(
                "split ratios must be in [0,1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

impl<T: Splittable> Split<T> {
    pub fn games(part: &[T]) -> BTreeSet<String> {
        part.iter().map(|i| i.game_id().to_string()).collect()
    }

    pub fn teams(part: &[T]) -> BTreeSet<String> {
        part.iter().map(|i| i.team().to_string()).collect()
    }
}

/// Partition sizes for `n` units: test and validation rounded, remainder to train.
fn counts(n: usize, r: &SplitRatios, at_least_one_test: bool) -> (usize, usize) {
    let mut test = (n as f64 * r.test).round() as usize;
    if at_least_one_test && r.test > 0.0 {
        test = test.max(1);
    }
    let mut val = (n as f64 * r.validation).round() as usize;
    if at_least_one_test && r.validation > 0.0 && n > test + 1 {
        val = val.max(1);
    }
    (test.min(n), val.min(n.saturating_sub(test)))
}

fn assign_by_game<T: Splittable>(
    items: Vec<T>,
    ratios: &SplitRatios,
    rng: &mut ChaCha8Rng,
    out: &mut Split<T>,
) -> Result<()> {
    let mut games: Vec<String> = Split::games(&items).into_iter().collect();
    games.shuffle(rng);
    let (n_test, n_val) = counts(games.len(), ratios, true);
    if games.len() < n_test + n_val + 1 {
        return Err(Error::Configuration(format!(
            "{} games cannot fill train/validation/test with ratios {ratios:?}",
            games.len()
        )));
    }
    let role: BTreeMap<String, u8> = games
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let r = if i < n_test {
                2
            } else if i < n_test + n_val {
                1
            } else {
                0
            };
            (g.clone(), r)
        })
        .collect();
    for item in items {
        match role[item.game_id()] {
            2 => out.test.push(item),
            1 => out.validation.push(item),
            _ => out.train.push(item),
        }
    }
    Ok(())
}

/// Split items into train/validation/test. Items keep their input order
/// within each partition; shuffling for training happens downstream.
pub fn split_dataset<T: Splittable>(
    items: Vec<T>,
    policy: &SplitPolicy,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Split<T>> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Split {
        train: vec![],
        validation: vec![],
        test: vec![],
    };
    let only = |team: &Option<String>, items: Vec<T>| -> Vec<T> {
        match team {
            Some(t) => items.into_iter().filter(|i| i.team() == t).collect(),
            None => items,
        }
    };
    match policy {
        SplitPolicy::RandomWithinTeam { team } => {
            let items = only(team, items);
            if items.is_empty() {
                return Err(Error::Configuration("no items for random split".into()));
            }
            let mut order: Vec<usize> = (0..items.len()).collect();
            order.shuffle(&mut rng);
            let (n_test, n_val) = counts(items.len(), &ratios, false);
            let mut role = vec![0u8; items.len()];
            for (rank, &i) in order.iter().enumerate() {
                role[i] = if rank < n_test {
                    2
                } else if rank < n_test + n_val {
                    1
                } else {
                    0
                };
            }
            for (item, r) in items.into_iter().zip(role) {
                match r {
                    2 => out.test.push(item),
                    1 => out.validation.push(item),
                    _ => out.train.push(item),
                }
            }
        }
        SplitPolicy::ByGame { team } => {
            let items = only(team, items);
            assign_by_game(items, &ratios, &mut rng, &mut out)?;
        }
        SplitPolicy::ByTeam {
            train_teams,
            test_teams,
        } => {
            if train_teams.iter().any(|t| test_teams.contains(t)) {
                return Err(Error::Configuration(
                    "by_team split needs disjoint train and test team sets".into(),
                ));
            }
            let (mut fit, mut test) = (vec![], vec![]);
            for item in items {
                if train_teams.iter().any(|t| t == item.team()) {
                    fit.push(item);
                } else if test_teams.iter().any(|t| t == item.team()) {
                    test.push(item);
                }
            }
            if fit.is_empty() || test.is_empty() {
                return Err(Error::Configuration(format!(
                    "by_team split found {} training and {} test items",
                    fit.len(),
                    test.len()
                )));
            }
            let fit_share = ratios.train + ratios.validation;
            let inner = SplitRatios {
                train: if fit_share > 0.0 { ratios.train / fit_share } else { 1.0 },
                validation: if fit_share > 0.0 {
                    ratios.validation / fit_share
                } else {
                    0.0
                },
                test: 0.0,
            };
            assign_by_game(fit, &inner, &mut rng, &mut out)?;
            out.test = test;
        }
    }
    if out.train.is_empty() {
        return Err(Error::Configuration("split left the training set empty".into()));
    }
    Ok(out)
}
