//! Check-in ingestion: formats, dense ids, categories, local time slots,
//! coordinate normalization, sliding windows, chronological splits.
//!
//! Two tab-separated source layouts are supported:
//!
//! * `Foursquare`: `user  venue  category_id  category_name  lat  lon
//!   tz_offset_minutes  "Tue Apr 03 18:00:09 +0000 2012"`
//! * `Gowalla`: `user  2010-10-19T23:55:27Z  lat  lon  location_id`
//!   (no category column; such check-ins land in the reserved `Other`
//!   category, and the timezone offset is zero)
//!
//! Raw string ids become dense integers in first-appearance order, so the
//! same file always produces the same id assignment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hours in a week; time slots index `local_weekday * 24 + local_hour`.
pub const WEEK_SLOTS: usize = 168;

// ── Records ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckIn {
    pub user: u32,
    pub poi: u32,
    /// Index into [`CheckInLog::raw_categories`].
    pub raw_cat: u32,
    /// Unix seconds, UTC.
    pub ts: i64,
    /// Minutes to add to UTC for local wall-clock time.
    pub tz_offset_min: i32,
    pub lat: f64,
    pub lon: f64,
    /// Local weekday/hour slot in `0..168`, Monday midnight = 0.
    pub slot: u16,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckInLog {
    /// Dense user id -> raw id.
    pub users: Vec<String>,
    /// Dense POI id -> raw id.
    pub pois: Vec<String>,
    /// Raw category names as they appeared in the source.
    pub raw_categories: Vec<String>,
    /// Per user, sorted by timestamp (stable for equal stamps).
    pub checkins: Vec<Vec<CheckIn>>,
}

impl CheckInLog {
    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn poi_count(&self) -> usize {
        self.pois.len()
    }

    pub fn checkin_count(&self) -> usize {
        self.checkins.iter().map(Vec::len).sum()
    }

    pub fn user(&self, u: u32) -> &[CheckIn] {
        &self.checkins[u as usize]
    }

    /// Every check-in of every user, user-major, time order within user.
    pub fn iter_all(&self) -> impl Iterator<Item = &CheckIn> {
        self.checkins.iter().flatten()
    }
}

/// Number of leading check-ins that belong to the training portion when a
/// user has `count` check-ins split at `train_frac`.
pub fn train_boundary(count: usize, train_frac: f64) -> usize {
    ((count as f64) * train_frac).round() as usize
}

// ── Local time slots ─────────────────────────────────────────────────────

/// Week slot of a UTC timestamp under a fixed minute offset: Monday 00:xx
/// local is 0, Sunday 23:xx local is 167.
pub fn time_slot(ts_utc: i64, tz_offset_min: i32) -> u16 {
    let local = DateTime::from_timestamp(ts_utc + i64::from(tz_offset_min) * 60, 0)
        .expect("timestamp within chrono range");
    (local.weekday().num_days_from_monday() * 24 + local.hour()) as u16
}

// ── Parsing ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceFormat {
    Foursquare,
    Gowalla,
}

impl std::str::FromStr for SourceFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "foursquare" => Ok(Self::Foursquare),
            "gowalla" => Ok(Self::Gowalla),
            other => Err(Error::Config(format!(
                "unknown source format `{other}` (expected foursquare or gowalla)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub parsed: usize,
    pub malformed: usize,
    /// First few offending lines: (1-based line number, reason).
    pub samples: Vec<(usize, String)>,
}

struct RawRow {
    user: String,
    poi: String,
    category: String,
    ts: i64,
    tz_offset_min: i32,
    lat: f64,
    lon: f64,
}

fn parse_foursquare_time(s: &str) -> std::result::Result<i64, String> {
    DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y")
        .map(|dt| dt.timestamp())
        .map_err(|e| format!("bad time `{s}`: {e}"))
}

fn parse_iso_time(s: &str) -> std::result::Result<i64, String> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%SZ")
        .map(|dt| dt.and_utc().timestamp())
        .map_err(|e| format!("bad time `{s}`: {e}"))
}

fn parse_row(line: &str, format: SourceFormat) -> std::result::Result<RawRow, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let num = |s: &str, what: &str| -> std::result::Result<f64, String> {
        s.trim().parse::<f64>().map_err(|_| format!("bad {what} `{s}`"))
    };
    match format {
        SourceFormat::Foursquare => {
            if fields.len() != 8 {
                return Err(format!("expected 8 tab-separated fields, got {}", fields.len()));
            }
            Ok(RawRow {
                user: fields[0].to_string(),
                poi: fields[1].to_string(),
                category: fields[3].to_string(),
                lat: num(fields[4], "latitude")?,
                lon: num(fields[5], "longitude")?,
                tz_offset_min: fields[6]
                    .trim()
                    .parse::<i32>()
                    .map_err(|_| format!("bad tz offset `{}`", fields[6]))?,
                ts: parse_foursquare_time(fields[7])?,
            })
        }
        SourceFormat::Gowalla => {
            if fields.len() != 5 {
                return Err(format!("expected 5 tab-separated fields, got {}", fields.len()));
            }
            Ok(RawRow {
                user: fields[0].to_string(),
                poi: fields[4].to_string(),
                category: String::new(),
                ts: parse_iso_time(fields[1])?,
                tz_offset_min: 0,
                lat: num(fields[2], "latitude")?,
                lon: num(fields[3], "longitude")?,
            })
        }
    }
}

/// Parse a check-in file. Lines that fail to parse are skipped and counted;
/// if more than 1% of non-empty lines are malformed the whole parse fails
/// with the first offending lines listed.
pub fn parse_checkins(path: &Path, format: SourceFormat) -> Result<(CheckInLog, ParseReport)> {
    let text = std::fs::read_to_string(path)?;
    parse_checkins_str(&text, format, &path.display().to_string())
}

pub fn parse_checkins_str(
    text: &str,
    format: SourceFormat,
    source: &str,
) -> Result<(CheckInLog, ParseReport)> {
    let mut users: Vec<String> = Vec::new();
    let mut pois: Vec<String> = Vec::new();
    let mut cats: Vec<String> = Vec::new();
    let mut user_ids: BTreeMap<String, u32> = BTreeMap::new();
    let mut poi_ids: BTreeMap<String, u32> = BTreeMap::new();
    let mut cat_ids: BTreeMap<String, u32> = BTreeMap::new();
    let mut per_user: Vec<Vec<CheckIn>> = Vec::new();
    let mut report = ParseReport::default();
    let mut total = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_row(line, format) {
            Ok(row) => {
                let user = *user_ids.entry(row.user.clone()).or_insert_with(|| {
                    users.push(row.user.clone());
                    per_user.push(Vec::new());
                    (users.len() - 1) as u32
                });
                let poi = *poi_ids.entry(row.poi.clone()).or_insert_with(|| {
                    pois.push(row.poi.clone());
                    (pois.len() - 1) as u32
                });
                let raw_cat = *cat_ids.entry(row.category.clone()).or_insert_with(|| {
                    cats.push(row.category.clone());
                    (cats.len() - 1) as u32
                });
                per_user[user as usize].push(CheckIn {
                    user,
                    poi,
                    raw_cat,
                    ts: row.ts,
                    tz_offset_min: row.tz_offset_min,
                    lat: row.lat,
                    lon: row.lon,
                    slot: time_slot(row.ts, row.tz_offset_min),
                });
                report.parsed += 1;
            }
            Err(reason) => {
                report.malformed += 1;
                if report.samples.len() < 5 {
                    report.samples.push((lineno + 1, reason));
                }
            }
        }
    }

    if total > 0 && (report.malformed as f64) > 0.01 * (total as f64) {
        let mut detail = format!(
            "{source}: {} of {} lines malformed (>1%); first offenders:",
            report.malformed, total
        );
        for (line, reason) in &report.samples {
            let _ = write!(detail, "\n  line {line}: {reason}");
        }
        return Err(Error::Malformed(detail));
    }

    for seq in &mut per_user {
        seq.sort_by_key(|c| c.ts);
    }
    let log = CheckInLog { users, pois, raw_categories: cats, checkins: per_user };
    Ok((log, report))
}

// ── Category scheme ──────────────────────────────────────────────────────

/// Maps raw category names onto a small set of high-level categories. The
/// reserved `Other` category always exists as the final id and catches any
/// raw name the table does not cover (including the empty name).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryScheme {
    names: Vec<String>,
    map: BTreeMap<String, u32>,
}

pub const OTHER_CATEGORY: &str = "Other";

impl CategoryScheme {
    /// Parse `raw<TAB>high-level` lines. High-level ids follow first
    /// appearance order in the file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((raw, high)) = line.split_once('\t') else {
                return Err(Error::Malformed(format!(
                    "category scheme line {}: expected `raw<TAB>high-level`",
                    lineno + 1
                )));
            };
            let high = high.trim();
            let id = match names.iter().position(|n| n == high) {
                Some(i) => i as u32,
                None => {
                    names.push(high.to_string());
                    (names.len() - 1) as u32
                }
            };
            map.insert(raw.trim().to_string(), id);
        }
        if names.is_empty() {
            return Err(Error::Malformed("category scheme defines no categories".into()));
        }
        Ok(Self { names, map })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Built-in scheme for Foursquare-style data: nine high-level
    /// categories plus `Other`.
    pub fn foursquare() -> Self {
        Self::parse(include_str!("../assets/foursquare_categories.tsv"))
            .expect("bundled scheme parses")
    }

    /// Built-in scheme matching an eleven-way place taxonomy, for sources
    /// without Foursquare category names.
    pub fn arcgis() -> Self {
        Self::parse(include_str!("../assets/arcgis_categories.tsv")).expect("bundled scheme parses")
    }

    /// High-level id for a raw name; unmapped names land in `Other`.
    pub fn category_of(&self, raw: &str) -> u32 {
        self.map.get(raw).copied().unwrap_or(self.other_id())
    }

    pub fn other_id(&self) -> u32 {
        self.names.len() as u32
    }

    /// All category names including the trailing `Other`.
    pub fn category_names(&self) -> Vec<String> {
        let mut v = self.names.clone();
        v.push(OTHER_CATEGORY.to_string());
        v
    }

    pub fn category_count(&self) -> usize {
        self.names.len() + 1
    }
}

// ── POI registry and coordinate normalization ────────────────────────────

/// Min-max box fitted on training-split check-ins; maps (lon, lat) onto
/// x, y in `[-1, 1]`. Coordinates outside the box clamp to the edge, and a
/// degenerate axis (all equal) maps to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordBounds {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl CoordBounds {
    fn axis(v: f64, min: f64, max: f64) -> f64 {
        if max <= min {
            return 0.0;
        }
        (2.0 * (v - min) / (max - min) - 1.0).clamp(-1.0, 1.0)
    }

    pub fn normalize(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            Self::axis(lon, self.lon_min, self.lon_max),
            Self::axis(lat, self.lat_min, self.lat_max),
        )
    }

    pub fn denormalize(&self, x: f64, y: f64) -> (f64, f64) {
        let undo = |t: f64, min: f64, max: f64| {
            if max <= min {
                min
            } else {
                min + (t + 1.0) * 0.5 * (max - min)
            }
        };
        (
            undo(x, self.lon_min, self.lon_max),
            undo(y, self.lat_min, self.lat_max),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoiEntry {
    /// High-level category id (dense, `Other` included).
    pub category: u32,
    pub lat: f64,
    pub lon: f64,
    /// Normalized position; x from longitude, y from latitude.
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoiRegistry {
    pub category_names: Vec<String>,
    pub pois: Vec<PoiEntry>,
    pub bounds: CoordBounds,
}

impl PoiRegistry {
    pub fn poi_count(&self) -> usize {
        self.pois.len()
    }

    pub fn category_count(&self) -> usize {
        self.category_names.len()
    }

    pub fn coord(&self, poi: u32) -> (f64, f64) {
        let e = &self.pois[poi as usize];
        (e.x, e.y)
    }

    /// Flat `[poi_count, 2]` table of normalized coordinates, row per POI.
    pub fn coord_table(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.pois.len() * 2);
        for e in &self.pois {
            t.push(e.x);
            t.push(e.y);
        }
        t
    }
}

/// Build the POI registry: one entry per dense POI id with its category and
/// representative coordinates (first check-in wins), normalized by a
/// min-max box fitted over *training-portion* check-ins only so the test
/// period cannot leak into the scale.
pub fn build_poi_registry(
    log: &CheckInLog,
    scheme: &CategoryScheme,
    train_frac: f64,
) -> Result<PoiRegistry> {
    if log.checkin_count() == 0 {
        return Err(Error::Dataset("cannot build a POI registry from an empty log".into()));
    }
    let mut bounds: Option<CoordBounds> = None;
    for seq in &log.checkins {
        let b = train_boundary(seq.len(), train_frac);
        for c in &seq[..b] {
            let bb = bounds.get_or_insert(CoordBounds {
                lon_min: c.lon,
                lon_max: c.lon,
                lat_min: c.lat,
                lat_max: c.lat,
            });
            bb.lon_min = bb.lon_min.min(c.lon);
            bb.lon_max = bb.lon_max.max(c.lon);
            bb.lat_min = bb.lat_min.min(c.lat);
            bb.lat_max = bb.lat_max.max(c.lat);
        }
    }
    let bounds = bounds
        .ok_or_else(|| Error::Dataset("no training-portion check-ins to fit bounds".into()))?;

    let mut pois: Vec<Option<PoiEntry>> = vec![None; log.pois.len()];
    for c in log.iter_all() {
        let slot = &mut pois[c.poi as usize];
        if slot.is_none() {
            let (x, y) = bounds.normalize(c.lon, c.lat);
            *slot = Some(PoiEntry {
                category: scheme.category_of(&log.raw_categories[c.raw_cat as usize]),
                lat: c.lat,
                lon: c.lon,
                x,
                y,
            });
        }
    }
    let pois = pois
        .into_iter()
        .enumerate()
        .map(|(i, e)| e.ok_or_else(|| Error::Dataset(format!("POI id {i} never appears"))))
        .collect::<Result<Vec<_>>>()?;

    Ok(PoiRegistry { category_names: scheme.category_names(), pois, bounds })
}

// ── Windows and splits ───────────────────────────────────────────────────

/// Fixed-length observation sequence (shared by the user's own windows and
/// by neighbor context windows).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct History {
    pub poi_ids: Vec<u32>,
    pub category_ids: Vec<u32>,
    pub time_slots: Vec<u16>,
    /// Normalized POI coordinates, one (x, y) per observation.
    pub coords: Vec<(f64, f64)>,
    pub last_ts: i64,
}

impl History {
    pub fn len(&self) -> usize {
        self.poi_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poi_ids.is_empty()
    }

    pub(crate) fn from_checkins(window: &[CheckIn], registry: &PoiRegistry) -> Self {
        let mut h = History {
            poi_ids: Vec::with_capacity(window.len()),
            category_ids: Vec::with_capacity(window.len()),
            time_slots: Vec::with_capacity(window.len()),
            coords: Vec::with_capacity(window.len()),
            last_ts: window.last().map_or(i64::MIN, |c| c.ts),
        };
        for c in window {
            h.poi_ids.push(c.poi);
            h.category_ids.push(registry.pois[c.poi as usize].category);
            h.time_slots.push(c.slot);
            h.coords.push(registry.coord(c.poi));
        }
        h
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryWindow {
    pub user: u32,
    pub history: History,
    pub target_poi: u32,
    /// Normalized coordinates of the target POI.
    pub target_coord: (f64, f64),
    /// Index of the target check-in within the user's time-ordered log.
    pub target_index: usize,
    pub target_ts: i64,
}

/// Stride-1 sliding windows over one user's check-ins: every check-in at
/// index `>= n` becomes the target of one window whose history is the `n`
/// immediately preceding check-ins. Users with `<= n` check-ins yield none.
pub fn window_sequences(
    log: &CheckInLog,
    user: u32,
    registry: &PoiRegistry,
    n: usize,
) -> Vec<TrajectoryWindow> {
    let seq = log.user(user);
    if seq.len() <= n {
        return Vec::new();
    }
    (n..seq.len())
        .map(|t| {
            let target = &seq[t];
            TrajectoryWindow {
                user,
                history: History::from_checkins(&seq[t - n..t], registry),
                target_poi: target.poi,
                target_coord: registry.coord(target.poi),
                target_index: t,
                target_ts: target.ts,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<TrajectoryWindow>,
    pub val: Vec<TrajectoryWindow>,
    pub test: Vec<TrajectoryWindow>,
}

impl DatasetSplit {
    pub fn summary(&self) -> String {
        format!(
            "windows: {} train / {} val / {} test",
            self.train.len(),
            self.val.len(),
            self.test.len()
        )
    }
}

/// Chronological per-user split. Each user's check-ins partition at
/// `train_frac`; a window belongs to the split its *target* index falls in
/// (histories may reach back across the boundary). The last
/// `val_frac_of_train` of each user's training targets form the validation
/// set.
pub fn split(
    log: &CheckInLog,
    registry: &PoiRegistry,
    n: usize,
    train_frac: f64,
    val_frac_of_train: f64,
) -> Result<DatasetSplit> {
    if !(0.0 < train_frac && train_frac < 1.0) {
        return Err(Error::Config(format!("train_frac = {train_frac} outside (0, 1)")));
    }
    if !(0.0..1.0).contains(&val_frac_of_train) {
        return Err(Error::Config(format!(
            "val_frac_of_train = {val_frac_of_train} outside [0, 1)"
        )));
    }
    let mut out = DatasetSplit::default();
    for user in 0..log.user_count() as u32 {
        let count = log.user(user).len();
        let boundary = train_boundary(count, train_frac);
        let windows = window_sequences(log, user, registry, n);
        let mut candidates = Vec::new();
        for w in windows {
            if w.target_index >= boundary {
                out.test.push(w);
            } else {
                candidates.push(w);
            }
        }
        let n_val = ((candidates.len() as f64) * val_frac_of_train).round() as usize;
        let n_train = candidates.len() - n_val;
        for (i, w) in candidates.into_iter().enumerate() {
            if i < n_train {
                out.train.push(w);
            } else {
                out.val.push(w);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fs_line(user: &str, venue: &str, cat: &str, lat: f64, lon: f64, off: i32, time: &str) -> String {
        format!("{user}\t{venue}\tcatid_{cat}\t{cat}\t{lat}\t{lon}\t{off}\t{time}")
    }

    #[test]
    fn time_slot_monday_midnight_is_zero() {
        // 2012-04-02 was a Monday; 00:10 UTC with zero offset.
        let ts = parse_iso_time("2012-04-02T00:10:00Z").unwrap();
        assert_eq!(time_slot(ts, 0), 0);
    }

    #[test]
    fn time_slot_sunday_late_is_167() {
        let ts = parse_iso_time("2012-04-08T23:59:59Z").unwrap();
        assert_eq!(time_slot(ts, 0), 167);
    }

    #[test]
    fn time_slot_applies_tz_offset() {
        // Tue Apr 03 18:00:09 +0000 2012 at offset +240 minutes is Tuesday
        // 22:00 local: slot 1*24 + 22 = 46.
        let ts = parse_foursquare_time("Tue Apr 03 18:00:09 +0000 2012").unwrap();
        assert_eq!(time_slot(ts, 240), 46);
    }

    #[test]
    fn time_slot_negative_offset_wraps_week() {
        // Monday 00:30 UTC minus an hour is Sunday 23:30 local.
        let ts = parse_iso_time("2012-04-02T00:30:00Z").unwrap();
        assert_eq!(time_slot(ts, -60), 167);
    }

    #[test]
    fn foursquare_rows_parse_and_densify() {
        let text = [
            fs_line("u9", "vA", "Japanese Restaurant", 40.7, -74.0, -240, "Tue Apr 03 18:00:09 +0000 2012"),
            fs_line("u3", "vB", "Bar", 40.8, -73.9, -240, "Tue Apr 03 19:00:09 +0000 2012"),
            fs_line("u9", "vA", "Japanese Restaurant", 40.7, -74.0, -240, "Tue Apr 03 20:00:09 +0000 2012"),
        ]
        .join("\n");
        let (log, report) = parse_checkins_str(&text, SourceFormat::Foursquare, "mem").unwrap();
        assert_eq!(report.parsed, 3);
        assert_eq!(report.malformed, 0);
        assert_eq!(log.user_count(), 2);
        assert_eq!(log.poi_count(), 2);
        // First-appearance order: u9 -> 0, u3 -> 1.
        assert_eq!(log.users, vec!["u9".to_string(), "u3".to_string()]);
        assert_eq!(log.user(0).len(), 2);
        assert!(log.user(0)[0].ts < log.user(0)[1].ts);
    }

    #[test]
    fn gowalla_rows_parse() {
        let text = "196514\t2010-10-19T23:55:27Z\t30.2359091167\t-97.7951395833\t22847\n\
                    196514\t2010-10-18T22:17:43Z\t30.2691029532\t-97.7493953705\t420315";
        let (log, _) = parse_checkins_str(text, SourceFormat::Gowalla, "mem").unwrap();
        assert_eq!(log.user_count(), 1);
        assert_eq!(log.poi_count(), 2);
        // Sorted by time: the Oct 18 check-in comes first.
        assert_eq!(log.user(0)[0].poi, 1);
        assert_eq!(log.user(0)[0].tz_offset_min, 0);
    }

    #[test]
    fn a_few_malformed_lines_are_skipped() {
        let mut lines: Vec<String> = (0..200)
            .map(|i| {
                fs_line(&format!("u{}", i % 7), &format!("v{i}"), "Food", 40.0, -74.0, 0, "Tue Apr 03 18:00:09 +0000 2012")
            })
            .collect();
        lines.push("garbage line".to_string());
        let (log, report) =
            parse_checkins_str(&lines.join("\n"), SourceFormat::Foursquare, "mem").unwrap();
        assert_eq!(report.malformed, 1);
        assert_eq!(log.checkin_count(), 200);
    }

    #[test]
    fn too_many_malformed_lines_fail_with_samples() {
        let mut lines = vec![fs_line("u", "v", "Food", 40.0, -74.0, 0, "Tue Apr 03 18:00:09 +0000 2012"); 50];
        for _ in 0..3 {
            lines.push("not\ta\tvalid\trow".to_string());
        }
        let err = parse_checkins_str(&lines.join("\n"), SourceFormat::Foursquare, "mem")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 51"), "{err}");
    }

    #[test]
    fn scheme_maps_raw_to_high_level_with_other_fallback() {
        let scheme = CategoryScheme::foursquare();
        let names = scheme.category_names();
        let food = scheme.category_of("Japanese Restaurant");
        assert_eq!(names[food as usize], "Food");
        assert_eq!(scheme.category_of("Completely Unknown Venue Kind"), scheme.other_id());
        assert_eq!(names.last().map(String::as_str), Some("Other"));
        assert_eq!(names.len(), 10); // nine high-level + Other
    }

    #[test]
    fn category_totals_are_conserved() {
        let scheme = CategoryScheme::foursquare();
        let text = [
            fs_line("u", "v1", "Japanese Restaurant", 40.0, -74.0, 0, "Tue Apr 03 18:00:09 +0000 2012"),
            fs_line("u", "v2", "Bar", 40.1, -74.1, 0, "Tue Apr 03 19:00:09 +0000 2012"),
            fs_line("u", "v3", "No Such Category", 40.2, -74.2, 0, "Tue Apr 03 20:00:09 +0000 2012"),
        ]
        .join("\n");
        let (log, _) = parse_checkins_str(&text, SourceFormat::Foursquare, "mem").unwrap();
        let registry = build_poi_registry(&log, &scheme, 0.8).unwrap();
        let mut counts = vec![0usize; registry.category_count()];
        for e in &registry.pois {
            counts[e.category as usize] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), registry.poi_count());
        assert_eq!(counts[scheme.other_id() as usize], 1);
    }

    fn synthetic_log(count: usize) -> CheckInLog {
        // One user, one check-in per hour, POIs on a line so coordinates
        // spread.
        let lines: Vec<String> = (0..count)
            .map(|i| {
                let lat = 40.0 + (i as f64) * 0.01;
                let lon = -74.0 + (i as f64) * 0.02;
                let h = i % 24;
                let d = 2 + i / 24;
                format!("u\t2012-04-{d:02}T{h:02}:00:09Z\t{lat}\t{lon}\tv{i}")
            })
            .collect();
        parse_checkins_str(&lines.join("\n"), SourceFormat::Gowalla, "mem").unwrap().0
    }

    #[test]
    fn normalization_fits_training_portion_and_clamps_test() {
        let log = synthetic_log(10);
        let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 0.8).unwrap();
        // Train portion = first 8 check-ins; the later POIs lie outside the
        // box and clamp to the edge.
        let b = &registry.bounds;
        assert_abs_diff_eq!(b.lon_min, -74.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.lon_max, -74.0 + 7.0 * 0.02, epsilon = 1e-12);
        assert_eq!(registry.coord(0), (-1.0, -1.0));
        assert_eq!(registry.coord(7), (1.0, 1.0));
        assert_eq!(registry.coord(9), (1.0, 1.0));
        // In-bounds coordinates round-trip.
        let (lon, lat) = (-74.0 + 3.0 * 0.02, 40.0 + 3.0 * 0.01);
        let (x, y) = b.normalize(lon, lat);
        let (lon2, lat2) = b.denormalize(x, y);
        assert_abs_diff_eq!(lon, lon2, epsilon = 1e-9);
        assert_abs_diff_eq!(lat, lat2, epsilon = 1e-9);
        assert!((-1.0..=1.0).contains(&x) && (-1.0..=1.0).contains(&y));
    }

    #[test]
    fn degenerate_axis_maps_to_zero() {
        let b = CoordBounds { lon_min: 5.0, lon_max: 5.0, lat_min: 0.0, lat_max: 2.0 };
        assert_eq!(b.normalize(5.0, 1.0), (0.0, 0.0));
        assert_eq!(b.normalize(9.9, 2.0), (0.0, 1.0));
    }

    #[test]
    fn window_count_matches_formula() {
        let registry_log = synthetic_log(20);
        let registry = build_poi_registry(&registry_log, &CategoryScheme::foursquare(), 0.8).unwrap();
        // A user with 20 check-ins and n = 5 yields 15 windows.
        assert_eq!(window_sequences(&registry_log, 0, &registry, 5).len(), 15);
        // Users with <= n check-ins yield none.
        assert_eq!(window_sequences(&registry_log, 0, &registry, 20).len(), 0);
        assert_eq!(window_sequences(&registry_log, 0, &registry, 25).len(), 0);
    }

    #[test]
    fn windows_never_include_or_follow_their_target() {
        let log = synthetic_log(30);
        let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 0.8).unwrap();
        for w in window_sequences(&log, 0, &registry, 7) {
            assert_eq!(w.history.len(), 7);
            assert!(w.history.last_ts < w.target_ts);
            // POIs here are unique per index, so ids expose positions:
            // every history id must precede the target index.
            for &p in &w.history.poi_ids {
                assert!((p as usize) < w.target_index);
            }
        }
    }

    #[test]
    fn split_at_eighty_twenty_with_val_carveout() {
        let log = synthetic_log(100);
        let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 0.8).unwrap();
        // With no history requirement every check-in is a target: the 80
        // training targets split 72/8 and the last 20 are the test period.
        let s = split(&log, &registry, 0, 0.8, 0.1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (72, 8, 20));
        // With n = 20 the first 20 check-ins can only serve as history.
        let s = split(&log, &registry, 20, 0.8, 0.1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (54, 6, 20));
    }

    #[test]
    fn split_is_chronological_per_user() {
        let log = synthetic_log(60);
        let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 0.8).unwrap();
        let s = split(&log, &registry, 5, 0.8, 0.1).unwrap();
        let max_train = s.train.iter().map(|w| w.target_ts).max().unwrap();
        let min_val = s.val.iter().map(|w| w.target_ts).min().unwrap();
        let max_val = s.val.iter().map(|w| w.target_ts).max().unwrap();
        let min_test = s.test.iter().map(|w| w.target_ts).min().unwrap();
        assert!(max_train < min_val);
        assert!(max_val < min_test);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let log = synthetic_log(10);
        let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 0.8).unwrap();
        assert!(split(&log, &registry, 2, 0.0, 0.1).is_err());
        assert!(split(&log, &registry, 2, 1.0, 0.1).is_err());
    }

    #[test]
    fn registry_requires_checkins() {
        let log = CheckInLog::default();
        assert!(build_poi_registry(&log, &CategoryScheme::foursquare(), 0.8).is_err());
    }
}
