//! Trip ingestion, region assignment, per-slot demand tensors, the
//! historical-mean demand predictor and seeded synthetic demand.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::DemandTensor;
use crate::error::{Error, Result};

pub const TIME_FORMAT: &str = "%m/%d/%Y %H:%M";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub trip_id: String,
    pub start_time: NaiveDateTime,
    pub end_time: NaiveDateTime,
    pub distance_m: f64,
    pub duration_s: f64,
    pub start_lon: f64,
    pub start_lat: f64,
    pub end_lon: f64,
    pub end_lat: f64,
    pub operator: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTrips {
    pub trips: Vec<TripRecord>,
    pub skipped: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Field {
    TripId,
    Start,
    End,
    Distance,
    Duration,
    StartLon,
    StartLat,
    EndLon,
    EndLat,
    StartPair,
    EndPair,
    Operator,
}

fn normalize_header(h: &str) -> String {
    let mut out = String::new();
    for ch in h.trim().chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn classify(h: &str) -> Option<Field> {
    Some(match normalize_header(h).as_str() {
        "trip_id" => Field::TripId,
        "start_time" => Field::Start,
        "end_time" => Field::End,
        "trip_distance_m" | "distance_m" => Field::Distance,
        "trip_duration_s" | "duration_s" => Field::Duration,
        "start_lon" => Field::StartLon,
        "start_lat" => Field::StartLat,
        "end_lon" => Field::EndLon,
        "end_lat" => Field::EndLat,
        "start_region" => Field::StartPair,
        "end_region" => Field::EndPair,
        "operator" | "vehicle_operator" => Field::Operator,
        _ => return None,
    })
}

fn parse_number(s: &str) -> Option<f64> {
    let cleaned: String = s.trim().chars().filter(|c| *c != ',').collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_pair(s: &str) -> Option<(f64, f64)> {
    let mut it = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|p| !p.is_empty());
    let lon = it.next()?.parse::<f64>().ok()?;
    let lat = it.next()?.parse::<f64>().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((lon, lat))
}

pub fn parse_time(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), TIME_FORMAT).ok()
}

/// Parses a trip CSV. Header matching ignores case, punctuation and column
/// order; coordinates may come as four columns or as two "lon lat" pairs.
/// Rows that fail to parse are skipped and counted.
pub fn parse_trips<R: Read>(reader: R) -> Result<ParsedTrips> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols: BTreeMap<u8, usize> = BTreeMap::new();
    let mut fields = Vec::new();
    for (idx, h) in headers.iter().enumerate() {
        if let Some(f) = classify(h) {
            cols.insert(f as u8, idx);
            fields.push(f);
        }
    }
    let col = |f: Field| cols.get(&(f as u8)).copied();
    let required = [
        (Field::TripId, "trip_id"),
        (Field::Start, "start_time"),
        (Field::End, "end_time"),
        (Field::Distance, "trip_distance_m"),
        (Field::Duration, "trip_duration_s"),
        (Field::Operator, "operator"),
    ];
    for (f, name) in required {
        if col(f).is_none() {
            return Err(Error::MissingColumn(name.into()));
        }
    }
    let four = [
        (Field::StartLon, "start_lon"),
        (Field::StartLat, "start_lat"),
        (Field::EndLon, "end_lon"),
        (Field::EndLat, "end_lat"),
    ];
    let use_pairs = col(Field::StartPair).is_some() && col(Field::EndPair).is_some();
    if !use_pairs {
        for (f, name) in four {
            if col(f).is_none() {
                return Err(Error::MissingColumn(name.into()));
            }
        }
    }

    let mut out = ParsedTrips::default();
    for (row_no, rec) in rdr.records().enumerate() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                warn!("row {}: {e}", row_no + 2);
                out.skipped += 1;
                continue;
            }
        };
        let get = |f: Field| col(f).and_then(|i| rec.get(i));
        let parsed = (|| {
            let trip_id = get(Field::TripId)?.to_string();
            let start_time = parse_time(get(Field::Start)?)?;
            let end_time = parse_time(get(Field::End)?)?;
            let distance_m = parse_number(get(Field::Distance)?)?;
            let duration_s = parse_number(get(Field::Duration)?)?;
            let (start_lon, start_lat, end_lon, end_lat) = if use_pairs {
                let (a, b) = parse_pair(get(Field::StartPair)?)?;
                let (c, d) = parse_pair(get(Field::EndPair)?)?;
                (a, b, c, d)
            } else {
                (
                    parse_number(get(Field::StartLon)?)?,
                    parse_number(get(Field::StartLat)?)?,
                    parse_number(get(Field::EndLon)?)?,
                    parse_number(get(Field::EndLat)?)?,
                )
            };
            let operator = get(Field::Operator)?.to_string();
            if operator.is_empty() || end_time < start_time || distance_m < 0.0 || duration_s < 0.0 {
                return None;
            }
            Some(TripRecord {
                trip_id,
                start_time,
                end_time,
                distance_m,
                duration_s,
                start_lon,
                start_lat,
                end_lon,
                end_lat,
                operator,
            })
        })();
        match parsed {
            Some(t) => out.trips.push(t),
            None => {
                warn!("row {}: unparseable trip, skipped", row_no + 2);
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

/// Writes trips in the ten-column layout accepted by [`parse_trips`].
pub fn write_trips<W: Write>(writer: W, trips: &[TripRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "trip_id",
        "start_time",
        "end_time",
        "trip_distance_m",
        "trip_duration_s",
        "start_lon",
        "start_lat",
        "end_lon",
        "end_lat",
        "operator",
    ])?;
    for t in trips {
        w.write_record([
            t.trip_id.clone(),
            t.start_time.format(TIME_FORMAT).to_string(),
            t.end_time.format(TIME_FORMAT).to_string(),
            format!("{}", t.distance_m),
            format!("{}", t.duration_s),
            format!("{}", t.start_lon),
            format!("{}", t.start_lat),
            format!("{}", t.end_lon),
            format!("{}", t.end_lat),
            t.operator.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Region centroids; region ids are `0..N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    centroids: Vec<(f64, f64)>,
}

impl RegionMap {
    pub fn new(centroids: Vec<(f64, f64)>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::InvalidArgument("region map is empty".into()));
        }
        Ok(Self { centroids })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroid(&self, id: usize) -> (f64, f64) {
        self.centroids[id]
    }

    /// Reads `region_id, lon, lat` rows; ids must cover `0..N` exactly once.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| normalize_header(h) == name)
                .ok_or_else(|| Error::MissingColumn(name.into()))
        };
        let (ci, clon, clat) = (find("region_id")?, find("lon")?, find("lat")?);
        let mut rows = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let bad = |what: &str| Error::InvalidArgument(format!("region map: bad {what} in {rec:?}"));
            let id: usize = rec[ci].parse().map_err(|_| bad("region_id"))?;
            let lon = parse_number(&rec[clon]).ok_or_else(|| bad("lon"))?;
            let lat = parse_number(&rec[clat]).ok_or_else(|| bad("lat"))?;
            if rows.insert(id, (lon, lat)).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate region id {id}")));
            }
        }
        for (expect, id) in rows.keys().enumerate() {
            if *id != expect {
                return Err(Error::InvalidArgument(format!(
                    "region ids must be 0..N without gaps, missing {expect}"
                )));
            }
        }
        Self::new(rows.into_values().collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["region_id", "lon", "lat"])?;
        for (id, (lon, lat)) in self.centroids.iter().enumerate() {
            w.write_record([id.to_string(), lon.to_string(), lat.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Great-circle distances between centroids in kilometres.
    pub fn distance_matrix_km(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let km = haversine_km(self.centroids[i], self.centroids[j]);
                d[i][j] = km;
                d[j][i] = km;
            }
        }
        d
    }
}

fn haversine_km((lon1, lat1): (f64, f64), (lon2, lat2): (f64, f64)) -> f64 {
    const EARTH_RADIUS_KM: f64 = 6371.0;
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().asin()
}

/// Nearest centroid by squared Euclidean distance in (lon, lat); ties go to
/// the lowest region id.
pub fn assign_region(lon: f64, lat: f64, map: &RegionMap) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (id, (clon, clat)) in map.centroids.iter().enumerate() {
        let d = (lon - clon).powi(2) + (lat - clat).powi(2);
        if d < best_d {
            best_d = d;
            best = id;
        }
    }
    best
}

/// Per-slot demand tensors over a contiguous run of days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandDataset {
    pub slots_per_day: usize,
    pub start_date: NaiveDate,
    pub days: usize,
    pub regions: usize,
    pub operators: Vec<String>,
    /// One tensor per slot, `days * slots_per_day` in total.
    pub tensors: Vec<DemandTensor>,
    /// Mean trip duration in seconds, flattened `[m][i][j]`; zero where no trip was seen.
    pub mean_duration_s: Vec<f64>,
    /// Trips dropped during construction (outside the date range).
    pub skipped: usize,
}

impl DemandDataset {
    pub fn num_operators(&self) -> usize {
        self.operators.len()
    }

    pub fn num_slots(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensor(&self, slot: usize) -> &DemandTensor {
        &self.tensors[slot]
    }

    pub fn mean_duration(&self, m: usize, i: usize, j: usize) -> f64 {
        self.mean_duration_s[(m * self.regions + i) * self.regions + j]
    }

    pub fn total_trips(&self) -> u64 {
        self.tensors.iter().map(DemandTensor::total).sum()
    }

    /// Origin demand totals `[m][i]` summed over the given days.
    pub fn origin_totals_over(&self, days: std::ops::Range<usize>) -> Vec<Vec<u64>> {
        let mut out = vec![vec![0u64; self.regions]; self.num_operators()];
        for day in days {
            for k in 0..self.slots_per_day {
                let t = &self.tensors[day * self.slots_per_day + k];
                for (m, row) in out.iter_mut().enumerate() {
                    for (i, v) in row.iter_mut().enumerate() {
                        *v += t.origin_total(m, i);
                    }
                }
            }
        }
        out
    }

    /// Restricts the dataset to a day range.
    pub fn slice_days(&self, days: std::ops::Range<usize>) -> Result<Self> {
        if days.end > self.days || days.start >= days.end {
            return Err(Error::InvalidArgument(format!(
                "day range {days:?} outside 0..{}",
                self.days
            )));
        }
        let spd = self.slots_per_day;
        let tensors = self.tensors[days.start * spd..days.end * spd]
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let mut t = t.clone();
                t.slot = k;
                t
            })
            .collect();
        Ok(Self {
            start_date: self.start_date + chrono::Days::new(days.start as u64),
            days: days.len(),
            tensors,
            ..self.clone()
        })
    }
}

/// Slot of day containing a timestamp.
pub fn slot_of_day(time: &NaiveDateTime, slots_per_day: usize) -> usize {
    let minute = time.hour() as usize * 60 + time.minute() as usize;
    minute * slots_per_day / 1440
}

/// Buckets trips into per-slot tensors. Operators are the sorted distinct
/// labels. With `date_range = None` the covered range spans the earliest to
/// the latest trip date; trips outside an explicit range are skipped.
pub fn build_demand(
    trips: &[TripRecord],
    map: &RegionMap,
    slots_per_day: usize,
    date_range: Option<(NaiveDate, NaiveDate)>,
) -> Result<DemandDataset> {
    if trips.is_empty() {
        return Err(Error::InvalidArgument("no trips to build demand from".into()));
    }
    if slots_per_day == 0 || 1440 % slots_per_day != 0 {
        return Err(Error::InvalidArgument(format!(
            "slots_per_day {slots_per_day} must divide 1440"
        )));
    }
    let labels: BTreeSet<&str> = trips.iter().map(|t| t.operator.as_str()).collect();
    let operators: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
    let (first, last) = match date_range {
        Some(r) => r,
        None => {
            let first = trips.iter().map(|t| t.start_time.date()).min().unwrap();
            let last = trips.iter().map(|t| t.start_time.date()).max().unwrap();
            (first, last)
        }
    };
    if last < first {
        return Err(Error::InvalidArgument("date range ends before it starts".into()));
    }
    let days = (last - first).num_days() as usize + 1;
    let n = map.len();
    let m_count = operators.len();
    let mut tensors: Vec<DemandTensor> = (0..days * slots_per_day)
        .map(|s| DemandTensor::zeros(m_count, n, s))
        .collect();
    let mut dur_sum = vec![0.0; m_count * n * n];
    let mut dur_cnt = vec![0u64; m_count * n * n];
    let mut skipped = 0;
    for t in trips {
        let date = t.start_time.date();
        if date < first || date > last {
            skipped += 1;
            continue;
        }
        let day = (date - first).num_days() as usize;
        let slot = day * slots_per_day + slot_of_day(&t.start_time, slots_per_day);
        let m = operators.binary_search(&t.operator).expect("label enumerated");
        let i = assign_region(t.start_lon, t.start_lat, map);
        let j = assign_region(t.end_lon, t.end_lat, map);
        tensors[slot].add(m, i, j, 1);
        let k = (m * n + i) * n + j;
        dur_sum[k] += t.duration_s;
        dur_cnt[k] += 1;
    }
    let mean_duration_s = dur_sum
        .iter()
        .zip(&dur_cnt)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(DemandDataset {
        slots_per_day,
        start_date: first,
        days,
        regions: n,
        operators,
        tensors,
        mean_duration_s,
        skipped,
    })
}

/// Predicted demand `[i][j]` flattened row-major for one operator and slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedSlot {
    pub regions: usize,
    pub values: Vec<f64>,
}

impl PredictedSlot {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.regions + j]
    }

    pub fn origin_total(&self, i: usize) -> f64 {
        self.values[i * self.regions..(i + 1) * self.regions].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Historical per-(operator, origin, destination, slot-of-day) mean demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalMeanPredictor {
    slots_per_day: usize,
    operators: usize,
    regions: usize,
    /// `[k][m][i][j]`
    means: Vec<f64>,
}

impl HistoricalMeanPredictor {
    /// Averages the tensors of the given training days. An empty range yields
    /// an all-zero predictor.
    pub fn fit(dataset: &DemandDataset, days: std::ops::Range<usize>) -> Self {
        let (spd, mc, n) = (dataset.slots_per_day, dataset.num_operators(), dataset.regions);
        let mut means = vec![0.0; spd * mc * n * n];
        let days: Vec<usize> = days.filter(|d| *d < dataset.days).collect();
        if !days.is_empty() {
            let block = mc * n * n;
            for &day in &days {
                for k in 0..spd {
                    let t = dataset.tensor(day * spd + k);
                    for m in 0..mc {
                        for i in 0..n {
                            for (j, &v) in t.row(m, i).iter().enumerate() {
                                means[k * block + (m * n + i) * n + j] += v as f64;
                            }
                        }
                    }
                }
            }
            let inv = 1.0 / days.len() as f64;
            means.iter_mut().for_each(|v| *v *= inv);
        }
        Self {
            slots_per_day: spd,
            operators: mc,
            regions: n,
            means,
        }
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    /// Predictions for slots `current_slot .. current_slot + horizon`.
    pub fn predict(&self, operator: usize, current_slot: usize, horizon: usize) -> Vec<PredictedSlot> {
        let n = self.regions;
        let block = self.operators * n * n;
        (0..horizon)
            .map(|dh| {
                let k = (current_slot + dh) % self.slots_per_day;
                let start = k * block + operator * n * n;
                PredictedSlot {
                    regions: n,
                    values: self.means[start..start + n * n].to_vec(),
                }
            })
            .collect()
    }
}

/// Seeded synthetic demand generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub regions: usize,
    pub operators: usize,
    pub days: usize,
    #[serde(default = "default_slots_per_day")]
    pub slots_per_day: usize,
    /// Mean trips per slot before the daily profile, `[m][i][j]`.
    pub rates: Vec<Vec<Vec<f64>>>,
    /// Multiplier per slot of day, length `slots_per_day`.
    pub profile: Vec<f64>,
    /// Trip duration in seconds per origin-destination pair, `[i][j]`.
    pub durations_s: Vec<Vec<f64>>,
    #[serde(default)]
    pub operator_labels: Vec<String>,
}

fn default_slots_per_day() -> usize {
    24
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let dim = |field: &str, reason: String| Error::Config {
            field: format!("synthetic.{field}"),
            reason,
        };
        if self.regions == 0 || self.operators == 0 || self.days == 0 || self.slots_per_day == 0 {
            return Err(dim("regions", "regions, operators, days and slots_per_day must be positive".into()));
        }
        if self.profile.len() != self.slots_per_day {
            return Err(dim(
                "profile",
                format!("length {} != slots_per_day {}", self.profile.len(), self.slots_per_day),
            ));
        }
        if self.profile.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(dim("profile", "weights must be finite and non-negative".into()));
        }
        let n = self.regions;
        if self.rates.len() != self.operators
            || self
                .rates
                .iter()
                .any(|mat| mat.len() != n || mat.iter().any(|r| r.len() != n))
        {
            return Err(dim("rates", format!("expected {}x{n}x{n}", self.operators)));
        }
        if self.rates.iter().flatten().flatten().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(dim("rates", "rates must be finite and non-negative".into()));
        }
        if self.durations_s.len() != n || self.durations_s.iter().any(|r| r.len() != n) {
            return Err(dim("durations_s", format!("expected {n}x{n}")));
        }
        if self.durations_s.iter().flatten().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(dim("durations_s", "durations must be positive".into()));
        }
        if !self.operator_labels.is_empty() && self.operator_labels.len() != self.operators {
            return Err(dim("operator_labels", "one label per operator".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        if self.operator_labels.is_empty() {
            (0..self.operators).map(|m| format!("op{m}")).collect()
        } else {
            self.operator_labels.clone()
        }
    }
}

/// Draws every cell from a Poisson law with mean `rate * profile[slot]`.
/// Each slot uses its own ChaCha stream keyed by the slot index, so the
/// output depends only on `(config, seed)`.
pub fn synth_demand(config: &SynthConfig, seed: u64) -> Result<DemandDataset> {
    config.validate()?;
    let (n, mc, spd) = (config.regions, config.operators, config.slots_per_day);
    let mut tensors = Vec::with_capacity(config.days * spd);
    for slot in 0..config.days * spd {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(slot as u64);
        let weight = config.profile[slot % spd];
        let mut t = DemandTensor::zeros(mc, n, slot);
        for m in 0..mc {
            for i in 0..n {
                for j in 0..n {
                    let lambda = config.rates[m][i][j] * weight;
                    if lambda > 0.0 {
                        let draw: f64 = Poisson::new(lambda)
                            .map_err(|e| Error::InvalidArgument(e.to_string()))?
                            .sample(&mut rng);
                        t.set(m, i, j, draw as u32);
                    }
                }
            }
        }
        tensors.push(t);
    }
    let mut mean_duration_s = Vec::with_capacity(mc * n * n);
    for _ in 0..mc {
        for row in &config.durations_s {
            mean_duration_s.extend_from_slice(row);
        }
    }
    Ok(DemandDataset {
        slots_per_day: spd,
        start_date: NaiveDate::from_ymd_opt(2022, 6, 1).expect("valid date"),
        days: config.days,
        regions: n,
        operators: config.labels(),
        tensors,
        mean_duration_s,
        skipped: 0,
    })
}

/// Expands a dataset into individual trip records located at region
/// centroids, one per unit of demand.
pub fn dataset_to_trips(dataset: &DemandDataset, map: &RegionMap) -> Result<Vec<TripRecord>> {
    if map.len() != dataset.regions {
        return Err(Error::Dimension(format!(
            "region map has {} regions, dataset {}",
            map.len(),
            dataset.regions
        )));
    }
    let spd = dataset.slots_per_day;
    let slot_minutes = (1440 / spd) as i64;
    let mut trips = Vec::new();
    let mut counter = 0u64;
    for (s, t) in dataset.tensors.iter().enumerate() {
        let date = dataset.start_date + chrono::Days::new((s / spd) as u64);
        let start = date.and_hms_opt(0, 0, 0).expect("midnight")
            + chrono::Duration::minutes((s % spd) as i64 * slot_minutes);
        for m in 0..dataset.num_operators() {
            for i in 0..dataset.regions {
                for j in 0..dataset.regions {
                    let dur = dataset.mean_duration(m, i, j);
                    for _ in 0..t.get(m, i, j) {
                        counter += 1;
                        let (slon, slat) = map.centroid(i);
                        let (elon, elat) = map.centroid(j);
                        trips.push(TripRecord {
                            trip_id: format!("S{counter:07}"),
                            start_time: start,
                            end_time: start + chrono::Duration::minutes((dur / 60.0).round() as i64),
                            distance_m: haversine_km((slon, slat), (elon, elat)) * 1000.0,
                            duration_s: dur,
                            start_lon: slon,
                            start_lat: slat,
                            end_lon: elon,
                            end_lat: elat,
                            operator: dataset.operators[m].clone(),
                        });
                    }
                }
            }
        }
    }
    Ok(trips)
}
