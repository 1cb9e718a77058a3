//! Data-driven context analyses: hour-of-day category histograms,
//! dynamic-time-warping trajectory distances, 6-hour trajectory clips, and
//! the intra/inter distance statistics that make the planted signals of
//! the synthetic generator (and their real-data counterparts) visible.

use rand::Rng;

use crate::data::{CheckIn, CheckInLog, PoiRegistry};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Gap above which a trajectory is cut into separate clips.
pub const CLIP_GAP_SECS: i64 = 6 * 3600;

/// Default cap on enumerated inter-clip pairs before seeded sampling
/// takes over.
pub const INTER_PAIR_CAP: usize = 100_000;

/// Check-in counts per (high-level category, local hour of day).
pub fn hourly_category_histogram(log: &CheckInLog, registry: &PoiRegistry) -> Vec<[u64; 24]> {
    let mut hist = vec![[0u64; 24]; registry.category_count()];
    for c in log.iter_all() {
        let cat = registry.pois[c.poi as usize].category as usize;
        let hour = (c.slot % 24) as usize;
        hist[cat][hour] += 1;
    }
    hist
}

/// One CSV row per category: `category,h0,...,h23`.
pub fn histogram_csv(hist: &[[u64; 24]], registry: &PoiRegistry) -> String {
    let mut out = String::from("category");
    for h in 0..24 {
        out.push_str(&format!(",h{h}"));
    }
    out.push('\n');
    for (cat, row) in hist.iter().enumerate() {
        out.push_str(&registry.category_names[cat].replace(',', ";"));
        for count in row {
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    out
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Dynamic time warping with Euclidean point cost and a full window: the
/// total cost of the cheapest monotone alignment path.
pub fn dtw_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("dtw requires nonempty sequences".into()));
    }
    let (n, m) = (a.len(), b.len());
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for i in 0..n {
        for j in 0..m {
            let cost = euclid(a[i], b[j]);
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j - 1].min(prev[j]).min(cur[j - 1]),
            };
            cur[j] = best + cost;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Splits a chronologically sorted sequence at every gap strictly larger
/// than `max_gap_secs`; a gap of exactly the threshold stays joined.
/// Concatenating the clips in order reproduces the input.
pub fn clip_split(seq: &[CheckIn], max_gap_secs: i64) -> Vec<&[CheckIn]> {
    if seq.is_empty() {
        return Vec::new();
    }
    let mut clips = Vec::new();
    let mut start = 0usize;
    for i in 1..seq.len() {
        if seq[i].ts - seq[i - 1].ts > max_gap_secs {
            clips.push(&seq[start..i]);
            start = i;
        }
    }
    clips.push(&seq[start..]);
    clips
}

/// Every user's clips as normalized POI coordinate sequences.
pub fn coordinate_clips(
    log: &CheckInLog,
    registry: &PoiRegistry,
    max_gap_secs: i64,
) -> Vec<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for u in 0..log.user_count() as u32 {
        for clip in clip_split(log.user(u), max_gap_secs) {
            out.push(clip.iter().map(|c| poi_coord(registry, c)).collect());
        }
    }
    out
}

fn poi_coord(registry: &PoiRegistry, c: &CheckIn) -> (f64, f64) {
    let p = &registry.pois[c.poi as usize];
    (p.x, p.y)
}

/// Mean pairwise point distance within clips and across clips. Intra is
/// exhaustive; inter enumerates exhaustively up to `cap` pairs and falls
/// back to seeded uniform sampling of `cap` cross-clip pairs beyond that.
/// A side with no pairs reports `None`.
pub fn clip_distance_stats(
    clips: &[Vec<(f64, f64)>],
    cap: usize,
    seed: u64,
) -> (Option<f64>, Option<f64>) {
    let mut intra_sum = 0.0;
    let mut intra_n = 0usize;
    for clip in clips {
        for i in 0..clip.len() {
            for j in (i + 1)..clip.len() {
                intra_sum += euclid(clip[i], clip[j]);
                intra_n += 1;
            }
        }
    }

    let sizes: Vec<usize> = clips.iter().map(Vec::len).collect();
    let total_points: usize = sizes.iter().sum();
    let cross_pairs: usize = {
        let sq: usize = sizes.iter().map(|s| s * s).sum();
        (total_points * total_points - sq) / 2
    };

    let mut inter_sum = 0.0;
    let mut inter_n = 0usize;
    if cross_pairs > 0 {
        if cross_pairs <= cap {
            for a in 0..clips.len() {
                for b in (a + 1)..clips.len() {
                    for &p in &clips[a] {
                        for &q in &clips[b] {
                            inter_sum += euclid(p, q);
                            inter_n += 1;
                        }
                    }
                }
            }
        } else {
            // Flat index -> (clip, point) via prefix sums.
            let mut prefix = Vec::with_capacity(sizes.len() + 1);
            prefix.push(0usize);
            for s in &sizes {
                prefix.push(prefix.last().unwrap() + s);
            }
            let locate = |flat: usize| {
                let clip = prefix.partition_point(|&p| p <= flat) - 1;
                (clip, flat - prefix[clip])
            };
            let mut rng = stream(seed, "inter-pairs", &[]);
            let mut attempts = 0usize;
            while inter_n < cap && attempts < 20 * cap {
                attempts += 1;
                let (ca, pa) = locate(rng.gen_range(0..total_points));
                let (cb, pb) = locate(rng.gen_range(0..total_points));
                if ca == cb {
                    continue;
                }
                inter_sum += euclid(clips[ca][pa], clips[cb][pb]);
                inter_n += 1;
            }
        }
    }

    (
        (intra_n > 0).then(|| intra_sum / intra_n as f64),
        (inter_n > 0).then(|| inter_sum / inter_n as f64),
    )
}

/// Per user: DTW from their full coordinate trajectory to each groupmate's
/// and to an equal-sized seeded sample of non-groupmates'. Returns the
/// grand means (friend, stranger); a side with no pairs is `None`.
pub fn dtw_friend_vs_stranger(
    log: &CheckInLog,
    registry: &PoiRegistry,
    groups: &[u32],
    seed: u64,
) -> Result<(Option<f64>, Option<f64>)> {
    let n = log.user_count();
    if groups.len() != n {
        return Err(Error::Config(format!(
            "groups cover {} users but the log has {n}",
            groups.len()
        )));
    }
    let trajs: Vec<Vec<(f64, f64)>> = (0..n as u32)
        .map(|u| log.user(u).iter().map(|c| poi_coord(registry, c)).collect())
        .collect();

    let mut friend_sum = 0.0;
    let mut friend_n = 0usize;
    let mut stranger_sum = 0.0;
    let mut stranger_n = 0usize;

    for u in 0..n {
        if trajs[u].is_empty() {
            continue;
        }
        let friends: Vec<usize> = (0..n)
            .filter(|&v| v != u && groups[v] == groups[u] && !trajs[v].is_empty())
            .collect();
        if friends.is_empty() {
            continue;
        }
        let mut strangers: Vec<usize> =
            (0..n).filter(|&v| groups[v] != groups[u] && !trajs[v].is_empty()).collect();
        let mut rng = stream(seed, "strangers", &[u as u64]);
        let take = friends.len().min(strangers.len());
        for i in 0..take {
            let j = rng.gen_range(i..strangers.len());
            strangers.swap(i, j);
        }
        for &f in &friends {
            friend_sum += dtw_distance(&trajs[u], &trajs[f])?;
            friend_n += 1;
        }
        for &s in &strangers[..take] {
            stranger_sum += dtw_distance(&trajs[u], &trajs[s])?;
            stranger_n += 1;
        }
    }

    Ok((
        (friend_n > 0).then(|| friend_sum / friend_n as f64),
        (stranger_n > 0).then(|| stranger_sum / stranger_n as f64),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_poi_registry, parse_checkins_str, CategoryScheme, SourceFormat};
    use crate::synth::{generate, SynthConfig};
    use approx::assert_abs_diff_eq;

    fn foursquare_log(lines: &[String]) -> (CheckInLog, PoiRegistry) {
        let (log, _) =
            parse_checkins_str(&lines.join("\n"), SourceFormat::Foursquare, "test").unwrap();
        let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 1.0).unwrap();
        (log, registry)
    }

    fn fsq_line(user: &str, poi: &str, cat: &str, lat: f64, lon: f64, when: &str) -> String {
        format!("{user}\t{poi}\tvcat\t{cat}\t{lat}\t{lon}\t0\t{when}")
    }

    #[test]
    fn histogram_counts_single_checkin_at_local_noon() {
        let (log, registry) = foursquare_log(&[fsq_line(
            "u1",
            "p1",
            "Food",
            40.7,
            -74.0,
            "Tue Apr 03 12:15:00 +0000 2012",
        )]);
        let hist = hourly_category_histogram(&log, &registry);
        let food = registry.category_names.iter().position(|n| n == "Food").unwrap();
        for (cat, row) in hist.iter().enumerate() {
            for (hour, &count) in row.iter().enumerate() {
                let expect = if cat == food && hour == 12 { 1 } else { 0 };
                assert_eq!(count, expect, "category {cat} hour {hour}");
            }
        }
    }

    #[test]
    fn histogram_of_empty_log_is_all_zero() {
        let (log, registry) = foursquare_log(&[fsq_line(
            "u1",
            "p1",
            "Food",
            40.7,
            -74.0,
            "Tue Apr 03 12:15:00 +0000 2012",
        )]);
        let empty = CheckInLog::default();
        let hist = hourly_category_histogram(&empty, &registry);
        assert!(hist.iter().all(|row| row.iter().all(|&c| c == 0)));
        let _ = log;
    }

    #[test]
    fn histogram_csv_layout() {
        let (log, registry) = foursquare_log(&[fsq_line(
            "u1",
            "p1",
            "Food",
            40.7,
            -74.0,
            "Tue Apr 03 12:15:00 +0000 2012",
        )]);
        let csv = histogram_csv(&hourly_category_histogram(&log, &registry), &registry);
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("category,h0,") && header.ends_with(",h23"));
        assert_eq!(csv.lines().count(), 1 + registry.category_count());
    }

    #[test]
    fn planted_noon_affinity_peaks_the_food_histogram_at_twelve() {
        for seed in 0..3 {
            let cfg = SynthConfig {
                n_users: 300,
                n_pois: 60,
                n_categories: 9,
                n_groups: 10,
                semantic_strength: 1.0,
                social_strength: 0.0,
                geo_strength: 0.0,
                checkins_per_user: 150,
                seed,
                ..SynthConfig::default()
            };
            let (log, _) = generate(&cfg).unwrap();
            let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 1.0).unwrap();
            let hist = hourly_category_histogram(&log, &registry);
            let food = registry.category_names.iter().position(|n| n == "Food").unwrap();
            let row = &hist[food];
            for (hour, &count) in row.iter().enumerate() {
                assert!(
                    hour == 12 || count < row[12],
                    "seed {seed}: food histogram {row:?} should peak strictly at noon"
                );
            }
        }
    }

    #[test]
    fn dtw_known_values() {
        let a = vec![(0.0, 0.0), (1.0, 0.0), (2.0, 1.0)];
        assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        let p = vec![(0.0, 0.0)];
        let q = vec![(3.0, 4.0)];
        assert_abs_diff_eq!(dtw_distance(&p, &q).unwrap(), 5.0, epsilon = 1e-12);
        // The duplicate zero aligns at no cost.
        let b = vec![(0.0, 0.0), (1.0, 0.0)];
        let c = vec![(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)];
        assert_eq!(dtw_distance(&b, &c).unwrap(), 0.0);
        assert!(dtw_distance(&[], &b).is_err());
        assert!(dtw_distance(&b, &[]).is_err());
    }

    /// Minimum left-fold cost over every explicit monotone alignment path,
    /// enumerated by depth-first search.
    fn dtw_brute(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        fn walk(a: &[(f64, f64)], b: &[(f64, f64)], i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = acc + euclid(a[i], b[j]);
            if i == a.len() - 1 && j == b.len() - 1 {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                walk(a, b, i + 1, j + 1, acc, best);
            }
            if i + 1 < a.len() {
                walk(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.len() {
                walk(a, b, i, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        walk(a, b, 0, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn dtw_matches_brute_force_exactly_on_the_grid() {
        let mut rng = stream(17, "dtw-grid", &[]);
        for _ in 0..1000 {
            let len_a = rng.gen_range(1..=5);
            let len_b = rng.gen_range(1..=5);
            let mut draw = |len: usize| -> Vec<(f64, f64)> {
                (0..len)
                    .map(|_| (rng.gen_range(0..3) as f64, rng.gen_range(0..3) as f64))
                    .collect()
            };
            let a = draw(len_a);
            let b = draw(len_b);
            let dp = dtw_distance(&a, &b).unwrap();
            let bf = dtw_brute(&a, &b);
            assert_eq!(dp, bf, "dp != brute force for {a:?} vs {b:?}");
            assert_eq!(
                dp,
                dtw_distance(&b, &a).unwrap(),
                "dtw must be symmetric for {a:?} vs {b:?}"
            );
            assert!(dp >= 0.0);
        }
    }

    fn checkins_with_gaps(gaps_hours: &[i64]) -> Vec<CheckIn> {
        let mut ts = 1_000_000i64;
        let mut out = vec![CheckIn {
            user: 0,
            poi: 0,
            raw_cat: 0,
            ts,
            tz_offset_min: 0,
            lat: 0.0,
            lon: 0.0,
            slot: 0,
        }];
        for (i, g) in gaps_hours.iter().enumerate() {
            ts += g * 3600;
            out.push(CheckIn { poi: (i + 1) as u32, ts, ..out[0].clone() });
        }
        out
    }

    #[test]
    fn clip_split_rule_examples() {
        let seq = checkins_with_gaps(&[1, 7, 2]);
        let clips = clip_split(&seq, CLIP_GAP_SECS);
        assert_eq!(clips.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![2, 2]);

        let seq = checkins_with_gaps(&[6]);
        assert_eq!(clip_split(&seq, CLIP_GAP_SECS).len(), 1, "a 6h gap stays joined");

        let seq = checkins_with_gaps(&[8, 9]);
        let clips = clip_split(&seq, CLIP_GAP_SECS);
        assert_eq!(clips.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![1, 1, 1]);

        assert!(clip_split(&[], CLIP_GAP_SECS).is_empty());
    }

    #[test]
    fn clip_split_is_a_partition() {
        let mut rng = stream(3, "clip-partition", &[]);
        for _ in 0..200 {
            let gaps: Vec<i64> = (0..rng.gen_range(0..12)).map(|_| rng.gen_range(0..12)).collect();
            let seq = checkins_with_gaps(&gaps);
            let clips = clip_split(&seq, CLIP_GAP_SECS);
            let rebuilt: Vec<u32> = clips.iter().flat_map(|c| c.iter().map(|x| x.poi)).collect();
            let original: Vec<u32> = seq.iter().map(|x| x.poi).collect();
            assert_eq!(rebuilt, original);
        }
    }

    #[test]
    fn clip_distance_stats_degenerate_cases() {
        // Every point identical -> both means zero.
        let clips = vec![vec![(0.5, 0.5); 3], vec![(0.5, 0.5); 2]];
        let (intra, inter) = clip_distance_stats(&clips, INTER_PAIR_CAP, 0);
        assert_eq!(intra, Some(0.0));
        assert_eq!(inter, Some(0.0));
        // Two singleton clips at distance one: no intra pairs at all.
        let clips = vec![vec![(0.0, 0.0)], vec![(1.0, 0.0)]];
        let (intra, inter) = clip_distance_stats(&clips, INTER_PAIR_CAP, 0);
        assert_eq!(intra, None);
        assert_eq!(inter, Some(1.0));
        // No clips at all.
        let (intra, inter) = clip_distance_stats(&[], INTER_PAIR_CAP, 0);
        assert_eq!((intra, inter), (None, None));
    }

    #[test]
    fn sampled_inter_mean_approximates_the_exhaustive_mean() {
        let mut rng = stream(9, "sample-check", &[]);
        let clips: Vec<Vec<(f64, f64)>> = (0..40)
            .map(|_| {
                (0..30)
                    .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let (_, exact) = clip_distance_stats(&clips, usize::MAX, 0);
        let (_, sampled) = clip_distance_stats(&clips, 20_000, 0);
        let (e, s) = (exact.unwrap(), sampled.unwrap());
        assert!((e - s).abs() < 0.05, "sampled {s:.4} too far from exact {e:.4}");
        // Sampling is deterministic under the seed.
        let (_, again) = clip_distance_stats(&clips, 20_000, 0);
        assert_eq!(sampled, again);
    }

    #[test]
    fn planted_locality_separates_intra_from_inter() {
        let cfg = SynthConfig {
            n_users: 20,
            n_pois: 80,
            n_categories: 5,
            n_groups: 4,
            semantic_strength: 0.0,
            social_strength: 0.0,
            geo_strength: 0.9,
            geo_radius: 0.3,
            checkins_per_user: 40,
            seed: 0,
        };
        let (log, _) = generate(&cfg).unwrap();
        let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 1.0).unwrap();
        let clips = coordinate_clips(&log, &registry, CLIP_GAP_SECS);
        let (intra, inter) = clip_distance_stats(&clips, INTER_PAIR_CAP, 0);
        let (intra, inter) = (intra.unwrap(), inter.unwrap());
        assert!(
            intra < inter,
            "intra-clip mean {intra:.4} should undercut inter-clip mean {inter:.4}"
        );
    }

    #[test]
    fn friend_stranger_dtw_degenerate_cases() {
        // Four users, two groups, identical trajectories: both means zero.
        let when = "Tue Apr 03 09:00:00 +0000 2012";
        let mut lines = Vec::new();
        for u in 0..4 {
            lines.push(fsq_line(&format!("u{u}"), "p0", "Food", 40.0, -74.0, when));
            lines.push(fsq_line(
                &format!("u{u}"),
                "p1",
                "Food",
                40.1,
                -74.1,
                "Tue Apr 03 10:00:00 +0000 2012",
            ));
        }
        let (log, registry) = foursquare_log(&lines);
        let groups = vec![0, 0, 1, 1];
        let (f, s) = dtw_friend_vs_stranger(&log, &registry, &groups, 0).unwrap();
        assert_eq!(f, Some(0.0));
        assert_eq!(s, Some(0.0));

        // Two friends sharing a trajectory, one far-away stranger.
        let mut lines = Vec::new();
        for u in 0..2 {
            lines.push(fsq_line(&format!("u{u}"), "p0", "Food", 40.0, -74.0, when));
        }
        lines.push(fsq_line("u2", "pfar", "Food", 41.0, -75.0, when));
        let (log, registry) = foursquare_log(&lines);
        let (f, s) = dtw_friend_vs_stranger(&log, &registry, &[0, 0, 1], 0).unwrap();
        assert_eq!(f, Some(0.0));
        assert!(s.unwrap() > 0.0, "stranger mean should be positive");

        // Group size mismatch is rejected.
        assert!(dtw_friend_vs_stranger(&log, &registry, &[0, 0], 0).is_err());
    }

    #[test]
    fn planted_social_signal_pulls_friend_dtw_below_stranger() {
        for seed in 0..5 {
            let cfg = SynthConfig {
                n_users: 12,
                n_pois: 50,
                n_categories: 5,
                n_groups: 3,
                semantic_strength: 0.0,
                social_strength: 0.8,
                geo_strength: 0.0,
                checkins_per_user: 15,
                seed,
                ..SynthConfig::default()
            };
            let (log, groups) = generate(&cfg).unwrap();
            let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 1.0).unwrap();
            let (f, s) = dtw_friend_vs_stranger(&log, &registry, &groups, seed).unwrap();
            let (f, s) = (f.unwrap(), s.unwrap());
            assert!(f < s, "seed {seed}: friend mean {f:.4} not below stranger mean {s:.4}");
        }
    }
}
