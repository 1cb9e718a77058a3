//! Synthetic check-in corpus generator with three independently plantable
//! signals — a category-by-time affinity, shared group itineraries, and
//! spatial locality — each controlled by a strength knob in `[0, 1]` where
//! `0` removes the signal entirely. Output is written in the standard
//! tab-separated check-in format so the whole pipeline consumes it
//! unmodified.

use chrono::{TimeZone, Utc};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::data::{parse_checkins_str, CategoryScheme, CheckInLog, SourceFormat};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Monday 2012-04-02 00:00:00 UTC; user start times jitter within the
/// following week.
const BASE_TS: i64 = 1333324800;
/// Sharpness of the hour-of-day category preference.
const HOUR_KAPPA: f64 = 12.0;
/// Fraction of semantic steps that follow the category-succession rule;
/// the rest follow the hour-of-day preference.
const SUCCESSION_SHARE: f64 = 0.5;
/// Mean inter-visit gap: gamma with shape 2, scale 2h.
const GAP_SHAPE: f64 = 2.0;
const GAP_SCALE_SECS: f64 = 7200.0;
/// How often a group itinerary advances one stop (one mean visit gap, so
/// the active stretch drifts at roughly one stop per check-in).
const ITINERARY_SHIFT_SECS: i64 = 4 * 3600;
/// Users join the group itinerary in alternating day-long stretches
/// (phase set by user id). Someone coming back from an off stretch has a
/// stale picture of where the group is, while groupmates on the opposite
/// phase have been following along — so the freshest evidence about a
/// member's next social stop lives in the *neighbors'* recent visits.
const SOCIAL_BLOCK_SECS: i64 = 86400;
/// The category whose preferred hour is pinned to local noon (index 2 is
/// Food in the bundled scheme).
const NOON_CATEGORY: usize = 2;

/// Knobs of the generator. Strengths are firing probabilities per
/// check-in; the three mechanisms draw independently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_pois: usize,
    pub n_categories: usize,
    pub n_groups: usize,
    /// Probability the next category follows the planted affinity
    /// (hour-of-day preference or category succession) instead of uniform.
    pub semantic_strength: f64,
    /// Probability the next POI comes from the user's group itinerary.
    pub social_strength: f64,
    /// Radius (normalized coordinates) of the locality ball around the
    /// previous POI when a geographic step fires.
    pub geo_radius: f64,
    /// Probability the next POI is drawn from within `geo_radius` of the
    /// previous one.
    pub geo_strength: f64,
    pub checkins_per_user: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 50,
            n_pois: 100,
            n_categories: 8,
            n_groups: 10,
            semantic_strength: 0.9,
            social_strength: 0.8,
            geo_radius: 0.5,
            geo_strength: 0.7,
            checkins_per_user: 40,
            seed: 0,
        }
    }
}

/// Raw category names the generator can emit: the high-level names of the
/// bundled scheme (so the standard table maps them onto themselves).
pub fn synthetic_category_names() -> Vec<String> {
    let mut names = CategoryScheme::foursquare().category_names();
    names.pop(); // drop the trailing catch-all; it is never emitted
    names
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::Config(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        pos(self.n_users, "n_users")?;
        pos(self.n_pois, "n_pois")?;
        pos(self.n_categories, "n_categories")?;
        pos(self.n_groups, "n_groups")?;
        pos(self.checkins_per_user, "checkins_per_user")?;
        let max_cats = synthetic_category_names().len();
        if self.n_categories > max_cats {
            return Err(Error::Config(format!(
                "n_categories = {} exceeds the {} available category names",
                self.n_categories, max_cats
            )));
        }
        if self.n_groups > self.n_users {
            return Err(Error::Config(format!(
                "n_groups = {} exceeds n_users = {}",
                self.n_groups, self.n_users
            )));
        }
        for (v, what) in [
            (self.semantic_strength, "semantic_strength"),
            (self.social_strength, "social_strength"),
            (self.geo_strength, "geo_strength"),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{what} = {v} outside [0, 1]")));
            }
        }
        if !(self.geo_radius > 0.0 && self.geo_radius <= 2.0) {
            return Err(Error::Config(format!(
                "geo_radius = {} outside (0, 2]",
                self.geo_radius
            )));
        }
        Ok(())
    }
}

/// Generated corpus as text artifacts: the check-in file and the
/// ground-truth group file (`raw_user_id TAB group_id` per line).
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub checkins_tsv: String,
    pub groups_tsv: String,
}

/// Preferred hour (local, fractional) of each category: evenly spaced
/// around the clock with [`NOON_CATEGORY`] pinned to the middle of the
/// 12:00 hour (12.5, so the whole-hour bin 12 straddles the peak instead
/// of splitting it with bin 11).
fn category_center(c: usize, n_categories: usize) -> f64 {
    let anchor = NOON_CATEGORY.min(n_categories - 1);
    let spacing = 24.0 / n_categories as f64;
    (12.5 + (c as f64 - anchor as f64) * spacing).rem_euclid(24.0)
}

/// Weighted category choice at local hour `h` using a circular preference
/// peaked at each category's center; `u` is a uniform draw in [0, 1).
fn pick_category_by_hour(h: f64, n_categories: usize, u: f64) -> usize {
    let weights: Vec<f64> = (0..n_categories)
        .map(|c| {
            let delta = 2.0 * std::f64::consts::PI * (h - category_center(c, n_categories)) / 24.0;
            (HOUR_KAPPA * delta.cos()).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (c, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return c;
        }
    }
    n_categories - 1
}

fn index_from_unit(u: f64, len: usize) -> usize {
    ((u * len as f64) as usize).min(len - 1)
}

/// Generates the corpus as text. Per check-in, independent draws decide
/// whether the social, semantic, and geographic mechanisms fire; the draw
/// schedule is identical across strength settings (every step consumes the
/// same number of random values), so changing one knob flips only which
/// mechanisms fire, never the underlying draws.
pub fn generate_tsv(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let names = synthetic_category_names();

    // POI placement: uniform in [-1, 1]^2, category round-robin.
    let mut poi_rng = stream(cfg.seed, "pois", &[]);
    let coords: Vec<(f64, f64)> = (0..cfg.n_pois)
        .map(|_| (poi_rng.gen_range(-1.0..1.0), poi_rng.gen_range(-1.0..1.0)))
        .collect();
    let poi_cat: Vec<usize> = (0..cfg.n_pois).map(|j| j % cfg.n_categories).collect();
    let mut by_category: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_categories];
    for (j, &c) in poi_cat.iter().enumerate() {
        by_category[c].push(j);
    }

    // Group itineraries: each group walks a fixed circular tour of POIs.
    // At any moment the "active stretch" is a window of `pool_size`
    // consecutive stops, advancing one stop every ITINERARY_SHIFT_SECS;
    // members sample from the current stretch when the social mechanism
    // fires, so groupmates co-visit *and* a member's next social stop is
    // best revealed by what the group visited most recently.
    let pool_size = (cfg.n_pois / (4 * cfg.n_groups)).max(3).min(cfg.n_pois);
    let tour_len = (4 * pool_size).min(cfg.n_pois);
    let tours: Vec<Vec<usize>> = (0..cfg.n_groups)
        .map(|g| {
            let mut rng = stream(cfg.seed, "group-pool", &[g as u64]);
            let mut ids: Vec<usize> = (0..cfg.n_pois).collect();
            for i in 0..tour_len {
                let j = rng.gen_range(i..ids.len());
                ids.swap(i, j);
            }
            ids.truncate(tour_len);
            ids
        })
        .collect();
    let active_stop = |g: usize, t: i64, u: f64| -> usize {
        let tour = &tours[g];
        let step = ((t - BASE_TS).div_euclid(ITINERARY_SHIFT_SECS)) as usize;
        tour[(step + index_from_unit(u, pool_size.min(tour.len()))) % tour.len()]
    };

    let gap = Gamma::new(GAP_SHAPE, GAP_SCALE_SECS).expect("valid gamma parameters");
    let mut checkins = String::new();
    let mut groups = String::new();

    for u in 0..cfg.n_users {
        let g = u % cfg.n_groups;
        groups.push_str(&format!("u{u}\t{g}\n"));
        let mut rng = stream(cfg.seed, "user", &[u as u64]);
        let mut t = BASE_TS + rng.gen_range(0..7 * 86400) as i64;
        let mut prev: Option<usize> = None;
        let mut prev_cat = rng.gen_range(0..cfg.n_categories);

        for _ in 0..cfg.checkins_per_user {
            // Fixed per-step draw schedule.
            let b_soc: f64 = rng.gen();
            let b_sem: f64 = rng.gen();
            let b_geo: f64 = rng.gen();
            let u_mode: f64 = rng.gen();
            let u_cat: f64 = rng.gen();
            let u_pool: f64 = rng.gen();
            let u_pick: f64 = rng.gen();

            // Phase alternates across *within-group* indices (u / n_groups)
            // so every group always has members on both phases; phasing by
            // raw user id would synchronise whole groups because membership
            // is assigned round-robin.
            let on_block = ((t - BASE_TS).div_euclid(SOCIAL_BLOCK_SECS) as usize
                + u / cfg.n_groups)
                % 2
                == 0;
            let poi = if on_block && b_soc < cfg.social_strength {
                active_stop(g, t, u_pool)
            } else {
                let hour = (t.rem_euclid(86400)) as f64 / 3600.0;
                let mut candidates: Vec<usize> = if b_sem < cfg.semantic_strength {
                    // Either the category that succeeds the previous one or
                    // the hour-of-day preference. The succession steps two
                    // places against the hour-center order so successor
                    // visits (typically ~2h after the predecessor) land far
                    // from the successor's own preferred hour and do not
                    // skew its hourly peak.
                    let c = if u_mode < SUCCESSION_SHARE {
                        (prev_cat + cfg.n_categories.saturating_sub(2)) % cfg.n_categories
                    } else {
                        pick_category_by_hour(hour, cfg.n_categories, u_cat)
                    };
                    if by_category[c].is_empty() {
                        (0..cfg.n_pois).collect()
                    } else {
                        by_category[c].clone()
                    }
                } else {
                    (0..cfg.n_pois).collect()
                };
                if b_geo < cfg.geo_strength {
                    if let Some(p) = prev {
                        let (px, py) = coords[p];
                        let near: Vec<usize> = candidates
                            .iter()
                            .copied()
                            .filter(|&j| {
                                let (x, y) = coords[j];
                                ((x - px).powi(2) + (y - py).powi(2)).sqrt() <= cfg.geo_radius
                            })
                            .collect();
                        if !near.is_empty() {
                            candidates = near;
                        }
                    }
                }
                candidates[index_from_unit(u_pick, candidates.len())]
            };

            let c = poi_cat[poi];
            let (x, y) = coords[poi];
            let when = Utc
                .timestamp_opt(t, 0)
                .single()
                .ok_or_else(|| Error::Config(format!("timestamp {t} out of range")))?
                .format("%a %b %d %H:%M:%S %z %Y");
            checkins.push_str(&format!(
                "u{u}\tp{poi}\tsynth{c}\t{}\t{:.6}\t{:.6}\t0\t{when}\n",
                names[c],
                40.0 + y * 0.5,
                -74.0 + x * 0.5,
            ));

            prev = Some(poi);
            prev_cat = c;
            t += (gap.sample(&mut rng) as i64).max(1);
        }
    }

    Ok(SynthOutput { checkins_tsv: checkins, groups_tsv: groups })
}

/// Parses a groups file into a per-dense-user group id using the log's
/// raw user ids. Unknown users error.
pub fn parse_groups(text: &str, log: &CheckInLog) -> Result<Vec<u32>> {
    let mut by_raw: BTreeMap<&str, u32> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let (raw, grp) = (it.next(), it.next());
        let (Some(raw), Some(grp)) = (raw, grp) else {
            return Err(Error::Malformed(format!(
                "groups line {}: expected `user TAB group`",
                lineno + 1
            )));
        };
        let grp: u32 = grp
            .trim()
            .parse()
            .map_err(|_| Error::Malformed(format!("groups line {}: bad group id `{grp}`", lineno + 1)))?;
        by_raw.insert(raw, grp);
    }
    log.users
        .iter()
        .map(|raw| {
            by_raw
                .get(raw.as_str())
                .copied()
                .ok_or_else(|| Error::Dataset(format!("user `{raw}` missing from groups file")))
        })
        .collect()
}

/// Generates and immediately parses the corpus, returning the log plus the
/// ground-truth group of each dense user id.
pub fn generate(cfg: &SynthConfig) -> Result<(CheckInLog, Vec<u32>)> {
    let out = generate_tsv(cfg)?;
    let (log, _) = parse_checkins_str(&out.checkins_tsv, SourceFormat::Foursquare, "synthetic")?;
    let groups = parse_groups(&out.groups_tsv, &log)?;
    Ok((log, groups))
}
