use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::behavior::{concave, GroundTruthBehavior};
use super::graph::SocialGraph;
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Visit-frequency cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActivityLevel {
    Daily,
    Weekly,
    Monthly,
    Inactive,
}

/// Contribution-frequency cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContributionLevel {
    DailyContrib,
    WeeklyContrib,
    MonthlyContrib,
    NonContrib,
}

impl ActivityLevel {
    pub const ALL: [ActivityLevel; 4] = [Self::Daily, Self::Weekly, Self::Monthly, Self::Inactive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Daily => "Daily",
            Self::Weekly => "Weekly",
            Self::Monthly => "Monthly",
            Self::Inactive => "Inactive",
        }
    }
}

impl ContributionLevel {
    pub const ALL: [ContributionLevel; 4] =
        [Self::DailyContrib, Self::WeeklyContrib, Self::MonthlyContrib, Self::NonContrib];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DailyContrib => "DailyContrib",
            Self::WeeklyContrib => "WeeklyContrib",
            Self::MonthlyContrib => "MonthlyContrib",
            Self::NonContrib => "NonContrib",
        }
    }

    /// A contributor at some frequency must visit at least that often.
    pub fn consistent_with(self, activity: ActivityLevel) -> bool {
        self.index() >= activity.index()
    }
}

impl fmt::Display for ActivityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for ContributionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::schema(format!("unknown activity level {s:?}")))
    }
}

impl FromStr for ContributionLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::schema(format!("unknown contribution level {s:?}")))
    }
}

/// Number of leading static-feature slots holding the cohort one-hots
/// (four activity levels, then four contribution levels).
pub const COHORT_SLOTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u32,
    pub activity_level: ActivityLevel,
    pub contribution_level: ContributionLevel,
    pub country: u8,
    pub n_followers: u32,
    pub n_followees: u32,
    /// `[activity one-hot (4) | contribution one-hot (4) | country one-hot |
    /// ln(1+followers) | ln(1+followees)]`
    pub static_features: Vec<f64>,
}

impl UserProfile {
    pub fn new(
        user_id: u32,
        activity_level: ActivityLevel,
        contribution_level: ContributionLevel,
        country: u8,
        n_countries: usize,
        n_followers: u32,
        n_followees: u32,
    ) -> Self {
        let mut s = vec![0.0; COHORT_SLOTS + n_countries + 2];
        s[activity_level.index()] = 1.0;
        s[4 + contribution_level.index()] = 1.0;
        s[COHORT_SLOTS + country as usize] = 1.0;
        s[COHORT_SLOTS + n_countries] = f64::from(n_followers).ln_1p();
        s[COHORT_SLOTS + n_countries + 1] = f64::from(n_followees).ln_1p();
        Self { user_id, activity_level, contribution_level, country, n_followers, n_followees, static_features: s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub profile: UserProfile,
    pub behavior: GroundTruthBehavior,
}

/// Uniform sampling ranges for one activity cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorRange {
    pub base: (f64, f64),
    pub gain: (f64, f64),
    pub rho: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub cohort_mix: BTreeMap<ActivityLevel, f64>,
    pub behavior: BTreeMap<ActivityLevel, BehaviorRange>,
    pub contribution_mix: BTreeMap<ActivityLevel, BTreeMap<ContributionLevel, f64>>,
    /// Added to the sampled base logit.
    pub contribution_offset: BTreeMap<ContributionLevel, f64>,
    /// One entry per country; also added to the base logit.
    pub country_offsets: Vec<f64>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        use ActivityLevel::*;
        use ContributionLevel::*;
        let range = |base, gain| BehaviorRange { base, gain, rho: (1.0, 1.5) };
        Self {
            cohort_mix: [(Daily, 0.3), (Weekly, 0.3), (Monthly, 0.3), (Inactive, 0.1)].into(),
            behavior: [
                (Daily, range((-3.2, -2.6), (1.2, 1.6))),
                (Weekly, range((-2.4, -1.8), (0.0, 0.1))),
                (Monthly, range((-3.6, -3.0), (2.4, 3.0))),
                (Inactive, range((-5.0, -4.0), (0.0, 0.2))),
            ]
            .into(),
            contribution_mix: [
                (Daily, [(DailyContrib, 0.25), (WeeklyContrib, 0.35), (MonthlyContrib, 0.2), (NonContrib, 0.2)].into()),
                (Weekly, [(WeeklyContrib, 0.3), (MonthlyContrib, 0.35), (NonContrib, 0.35)].into()),
                (Monthly, [(MonthlyContrib, 0.4), (NonContrib, 0.6)].into()),
                (Inactive, [(NonContrib, 1.0)].into()),
            ]
            .into(),
            contribution_offset: [(DailyContrib, 0.4), (WeeklyContrib, 0.2), (MonthlyContrib, 0.0), (NonContrib, -0.2)]
                .into(),
            country_offsets: vec![0.0, 0.15, -0.15],
        }
    }
}

fn check_fractions<K: fmt::Debug>(what: &str, mix: &BTreeMap<K, f64>) -> Result<()> {
    if mix.values().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::config(format!("{what}: fractions must be finite and >= 0")));
    }
    let total: f64 = mix.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("{what}: fractions sum to {total}, expected 1")));
    }
    Ok(())
}

impl PopulationConfig {
    /// Config with every user in one activity cohort.
    pub fn single_cohort(level: ActivityLevel) -> Self {
        Self { cohort_mix: [(level, 1.0)].into(), ..Self::default() }
    }

    pub fn n_countries(&self) -> usize {
        self.country_offsets.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_fractions("cohort_mix", &self.cohort_mix)?;
        if self.country_offsets.is_empty() || self.country_offsets.len() > 255 {
            return Err(Error::config("country_offsets must have 1..=255 entries"));
        }
        let min_country = self.country_offsets.iter().copied().fold(f64::INFINITY, f64::min);
        let max_country = self.country_offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (&level, &frac) in &self.cohort_mix {
            if frac == 0.0 {
                continue;
            }
            let range =
                self.behavior.get(&level).ok_or_else(|| Error::config(format!("no behavior range for {level}")))?;
            let mix = self
                .contribution_mix
                .get(&level)
                .ok_or_else(|| Error::config(format!("no contribution_mix for {level}")))?;
            check_fractions(&format!("contribution_mix.{level}"), mix)?;
            for (&c, &f) in mix {
                if f > 0.0 && !c.consistent_with(level) {
                    return Err(Error::config(format!("{c} is inconsistent with activity {level}")));
                }
            }
            for (name, (lo, hi)) in [("base", range.base), ("gain", range.gain), ("rho", range.rho)] {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::config(format!("{level}.{name}: invalid range ({lo}, {hi})")));
                }
            }
            if range.gain.0 < 0.0 || range.rho.0 <= 0.0 {
                return Err(Error::config(format!("{level}: gain must be >= 0 and rho > 0")));
            }
            let offsets: Vec<f64> = mix
                .iter()
                .filter(|(_, &f)| f > 0.0)
                .map(|(c, _)| self.contribution_offset.get(c).copied().unwrap_or(0.0))
                .collect();
            let lo = range.base.0 + offsets.iter().copied().fold(f64::INFINITY, f64::min) + min_country;
            let hi = range.base.1 + offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max) + max_country;
            let grid = |(a, b): (f64, f64), i: usize| a + (b - a) * i as f64 / 8.0;
            for i in 0..=8 {
                for j in 0..=8 {
                    let (base, rho) = (grid((lo, hi), i), grid(range.rho, j));
                    if !concave(base, range.gain.1, rho) {
                        return Err(Error::config(format!(
                            "{level}: gain up to {} breaks concavity at base {base:.3}, rho {rho:.3}",
                            range.gain.1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn draw<K: Copy>(rng: &mut crate::rng::Rng, mix: &BTreeMap<K, f64>) -> K {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (&k, &f) in mix {
        if f <= 0.0 {
            continue;
        }
        acc += f;
        last = Some(k);
        if u < acc {
            return k;
        }
    }
    last.expect("validated mix has positive mass")
}

fn uniform(rng: &mut crate::rng::Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Assigns cohorts, static features and ground-truth behaviour to every
/// user of `graph`.
pub fn assign_population(graph: &SocialGraph, config: &PopulationConfig, seed: u64) -> Result<Vec<Member>> {
    config.validate()?;
    let mut rng = rng_from(seed);
    let n_countries = config.n_countries();
    let mut members = Vec::with_capacity(graph.n_users());
    for user in 0..graph.n_users() as u32 {
        let activity = draw(&mut rng, &config.cohort_mix);
        let contribution = draw(&mut rng, &config.contribution_mix[&activity]);
        let country = rng.random_range(0..n_countries) as u8;
        let range = &config.behavior[&activity];
        let base = uniform(&mut rng, range.base)
            + config.contribution_offset.get(&contribution).copied().unwrap_or(0.0)
            + config.country_offsets[country as usize];
        let gain = uniform(&mut rng, range.gain);
        let rho = uniform(&mut rng, range.rho);
        let behavior = GroundTruthBehavior::new(base, gain, rho)?;
        let profile = UserProfile::new(
            user,
            activity,
            contribution,
            country,
            n_countries,
            graph.in_degree(user) as u32,
            graph.out_degree(user) as u32,
        );
        members.push(Member { profile, behavior });
    }
    Ok(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecosystem::generate_graph;

    #[test]
    fn degenerate_mix_puts_everyone_in_one_cohort() {
        let g = generate_graph(200, 4.0, 0.1, 1).unwrap();
        let cfg = PopulationConfig::single_cohort(ActivityLevel::Daily);
        let pop = assign_population(&g, &cfg, 3).unwrap();
        assert!(pop.iter().all(|m| m.profile.activity_level == ActivityLevel::Daily));
    }

    #[test]
    fn realised_mix_matches_request() {
        let g = generate_graph(10_000, 4.0, 0.1, 1).unwrap();
        let pop = assign_population(&g, &PopulationConfig::default(), 3).unwrap();
        let mut counts = [0usize; 4];
        for m in &pop {
            counts[m.profile.activity_level.index()] += 1;
        }
        for (c, expected) in counts.iter().zip([3000usize, 3000, 3000, 1000]) {
            assert!(c.abs_diff(expected) <= 200, "{counts:?}");
        }
    }

    #[test]
    fn monthly_cohort_is_more_sensitive_than_daily() {
        let g = generate_graph(3000, 4.0, 0.1, 2).unwrap();
        let pop = assign_population(&g, &PopulationConfig::default(), 8).unwrap();
        let mean_gain = |level| {
            let gains: Vec<f64> =
                pop.iter().filter(|m| m.profile.activity_level == level).map(|m| m.behavior.gain).collect();
            assert!(gains.len() >= 500);
            gains.iter().sum::<f64>() / gains.len() as f64
        };
        assert!(mean_gain(ActivityLevel::Monthly) > mean_gain(ActivityLevel::Daily));
    }

    #[test]
    fn cohorts_are_consistent_and_params_in_range() {
        let g = generate_graph(2000, 4.0, 0.1, 4).unwrap();
        let cfg = PopulationConfig::default();
        let pop = assign_population(&g, &cfg, 5).unwrap();
        for m in &pop {
            let p = &m.profile;
            assert!(p.contribution_level.consistent_with(p.activity_level));
            let r = cfg.behavior[&p.activity_level];
            assert!(m.behavior.gain >= r.gain.0 && m.behavior.gain <= r.gain.1);
            assert!(m.behavior.rho >= r.rho.0 && m.behavior.rho <= r.rho.1);
            assert_eq!(p.static_features.len(), COHORT_SLOTS + 3 + 2);
            assert_eq!(p.static_features[..COHORT_SLOTS].iter().sum::<f64>(), 2.0);
        }
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let g = generate_graph(50, 4.0, 0.1, 1).unwrap();
        let mut cfg = PopulationConfig::default();
        cfg.cohort_mix.insert(ActivityLevel::Daily, 0.5);
        assert!(matches!(assign_population(&g, &cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn inconsistent_contribution_mix_is_rejected() {
        let mut cfg = PopulationConfig::default();
        cfg.contribution_mix.insert(ActivityLevel::Monthly, [(ContributionLevel::DailyContrib, 1.0)].into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn non_concave_range_is_rejected() {
        let mut cfg = PopulationConfig::default();
        let monthly = cfg.behavior.get_mut(&ActivityLevel::Monthly).unwrap();
        monthly.gain = (4.0, 6.0);
        monthly.rho = (0.3, 0.5);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn level_names_round_trip() {
        for l in ActivityLevel::ALL {
            assert_eq!(l.as_str().parse::<ActivityLevel>().unwrap(), l);
        }
        for l in ContributionLevel::ALL {
            assert_eq!(l.as_str().parse::<ContributionLevel>().unwrap(), l);
        }
        assert!("Hourly".parse::<ActivityLevel>().is_err());
    }
}
