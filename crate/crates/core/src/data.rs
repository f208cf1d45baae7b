//! Dataset directories, splits and the synthetic depth oracle.
//!
//! Layout:
//!
//! ```text
//! manifest.json
//! locations.csv    id,lon,lat,segment_id
//! segments.csv     segment_id,vertex_idx,lon,lat
//! scenarios.csv    scenario_id,bitstring
//! depths/<scenario_id>.csv   location_id,peak_depth_m
//! ```
//!
//! Coordinates and depths are stored as `f32`, written in shortest
//! round-trip form (at most nine significant digits).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::TrainingPair;
use crate::error::{Error, Result};
use crate::grid::{
    build_index_map, encode_inundation, encode_susceptibility, nearest_segment_at, CoastalLocation,
    DepthVector, GridIndexMap, SegmentGeometry,
};
use crate::scenario::{make_base_scenarios, random_scenarios, ProtectionScenario};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCATIONS_FILE: &str = "locations.csv";
pub const SEGMENTS_FILE: &str = "segments.csv";
pub const SCENARIOS_FILE: &str = "scenarios.csv";
pub const DEPTHS_DIR: &str = "depths";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOracleParams {
    pub base_min: f64,
    pub base_max: f64,
    /// Shielding of a protected segment's own locations.
    pub alpha: f64,
    /// Spillover onto locations of segments next to protected ones.
    pub beta: f64,
    pub seed: u64,
}

impl Default for SynthOracleParams {
    fn default() -> Self {
        Self {
            base_min: 0.0,
            base_max: 2.0,
            alpha: 1.0,
            beta: 0.3,
            seed: 42,
        }
    }
}

impl SynthOracleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("oracle coefficients must be non-negative".into()));
        }
        if !(self.base_min <= self.base_max && self.base_min.is_finite() && self.base_max.is_finite()) {
            return Err(Error::Config(format!(
                "invalid base range [{}, {}]",
                self.base_min, self.base_max
            )));
        }
        Ok(())
    }

    /// Unflooded-by-protection depth of one location; fixed per location id.
    pub fn base_depth(&self, location_id: u32) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(location_id as u64);
        if self.base_max == self.base_min {
            return self.base_min;
        }
        rng.gen_range(self.base_min..self.base_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub d_x: usize,
    pub d_y: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub n_scenarios: usize,
    pub files: Vec<String>,
    pub segment_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthOracleParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scenario_id: u32,
    pub scenario: ProtectionScenario,
    pub depths: DepthVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Sorted by id; depth vectors follow this order.
    pub locations: Vec<CoastalLocation>,
    pub segments: Vec<SegmentGeometry>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn d_x(&self) -> usize {
        self.manifest.d_x
    }

    pub fn d_y(&self) -> usize {
        self.locations.len()
    }

    pub fn index_map(&self) -> Result<GridIndexMap> {
        build_index_map(&self.locations, self.manifest.height, self.manifest.width)
    }

    /// Input/target grid pairs for the given samples.
    pub fn pairs(&self, samples: &[Sample], index_map: &GridIndexMap) -> Result<Vec<TrainingPair>> {
        samples
            .iter()
            .map(|s| {
                Ok((
                    encode_susceptibility(&s.scenario, &self.locations, index_map)?,
                    Arc::new(encode_inundation(&s.depths, index_map)?),
                ))
            })
            .collect()
    }

    /// Mean depth over every location of every given sample.
    pub fn global_mean(samples: &[Sample]) -> f64 {
        let (sum, n) = samples.iter().fold((0.0, 0usize), |(s, n), x| {
            (s + x.depths.values.iter().map(|&v| v as f64).sum::<f64>(), n + x.depths.len())
        });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LocationRow {
    id: u32,
    lon: f32,
    lat: f32,
    segment_id: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRow {
    segment_id: usize,
    vertex_idx: usize,
    lon: f32,
    lat: f32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioRow {
    scenario_id: u32,
    bitstring: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DepthRow {
    location_id: u32,
    peak_depth_m: f32,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::dataset(path, e.to_string()))?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::dataset(path, format!("row {}: {e}", i + 1))))
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::dataset(path, e.to_string()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn depth_file(id: u32) -> String {
    format!("{DEPTHS_DIR}/{id}.csv")
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&text).map_err(|e| Error::dataset(&mpath, e.to_string()))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::dataset(
            &mpath,
            format!("unsupported schema version {}", manifest.schema_version),
        ));
    }
    for f in &manifest.files {
        if !dir.join(f).is_file() {
            return Err(Error::dataset(dir.join(f), "listed in the manifest but missing"));
        }
    }

    let lpath = dir.join(LOCATIONS_FILE);
    let mut locations: Vec<CoastalLocation> = read_rows::<LocationRow>(&lpath)?
        .into_iter()
        .map(|r| CoastalLocation {
            id: r.id,
            lon: r.lon as f64,
            lat: r.lat as f64,
            segment_id: r.segment_id,
        })
        .collect();
    locations.sort_by_key(|l| l.id);
    if locations.len() != manifest.d_y {
        return Err(Error::dataset(
            &lpath,
            format!("{} locations, manifest says d_y = {}", locations.len(), manifest.d_y),
        ));
    }
    if let Some(w) = locations.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::dataset(&lpath, format!("duplicate location id {}", w[0].id)));
    }
    if let Some(l) = locations.iter().find(|l| l.segment_id >= manifest.d_x) {
        return Err(Error::dataset(
            &lpath,
            format!("location {} references segment {} (d_x = {})", l.id, l.segment_id, manifest.d_x),
        ));
    }

    let spath = dir.join(SEGMENTS_FILE);
    let mut verts: BTreeMap<usize, Vec<(usize, (f64, f64))>> = BTreeMap::new();
    for r in read_rows::<SegmentRow>(&spath)? {
        verts
            .entry(r.segment_id)
            .or_default()
            .push((r.vertex_idx, (r.lon as f64, r.lat as f64)));
    }
    if verts.len() != manifest.d_x || verts.keys().enumerate().any(|(i, &k)| i != k) {
        return Err(Error::dataset(
            &spath,
            format!("expected segments 0..{}, found {:?}", manifest.d_x, verts.keys().collect::<Vec<_>>()),
        ));
    }
    let segments = verts
        .into_iter()
        .map(|(id, mut v)| {
            v.sort_by_key(|p| p.0);
            SegmentGeometry::new(id, v.into_iter().map(|p| p.1).collect())
                .map_err(|e| Error::dataset(&spath, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let cpath = dir.join(SCENARIOS_FILE);
    let rows = read_rows::<ScenarioRow>(&cpath)?;
    if rows.len() != manifest.n_scenarios {
        return Err(Error::dataset(
            &cpath,
            format!("{} scenarios, manifest says {}", rows.len(), manifest.n_scenarios),
        ));
    }
    let position: HashMap<u32, usize> = locations.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
    let mut samples = Vec::with_capacity(rows.len());
    let mut seen = HashSet::new();
    for row in rows {
        if !seen.insert(row.scenario_id) {
            return Err(Error::dataset(&cpath, format!("duplicate scenario id {}", row.scenario_id)));
        }
        let scenario: ProtectionScenario = row
            .bitstring
            .parse()
            .map_err(|e: Error| Error::dataset(&cpath, format!("scenario {}: {e}", row.scenario_id)))?;
        if scenario.d_x() != manifest.d_x {
            return Err(Error::dataset(
                &cpath,
                format!("scenario {} has {} bits, d_x = {}", row.scenario_id, scenario.d_x(), manifest.d_x),
            ));
        }
        let dpath = dir.join(depth_file(row.scenario_id));
        let mut values = vec![f32::NAN; locations.len()];
        for d in read_rows::<DepthRow>(&dpath)? {
            let Some(&i) = position.get(&d.location_id) else {
                return Err(Error::dataset(&dpath, format!("unknown location id {}", d.location_id)));
            };
            if !values[i].is_nan() {
                return Err(Error::dataset(&dpath, format!("location {} listed twice", d.location_id)));
            }
            if !(d.peak_depth_m >= 0.0) || !d.peak_depth_m.is_finite() {
                return Err(Error::dataset(
                    &dpath,
                    format!("location {} has invalid depth {}", d.location_id, d.peak_depth_m),
                ));
            }
            values[i] = d.peak_depth_m;
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::dataset(&dpath, format!("missing depth for location id {}", locations[i].id)));
        }
        samples.push(Sample {
            scenario_id: row.scenario_id,
            scenario,
            depths: DepthVector::new(values),
        });
    }
    Ok(Dataset {
        manifest,
        locations,
        segments,
        samples,
    })
}

/// Writes `dataset` to `dir`, replacing the manifest's file inventory.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir.join(DEPTHS_DIR)).map_err(|e| Error::io(dir, e))?;
    write_rows(
        &dir.join(LOCATIONS_FILE),
        dataset.locations.iter().map(|l| LocationRow {
            id: l.id,
            lon: l.lon as f32,
            lat: l.lat as f32,
            segment_id: l.segment_id,
        }),
    )?;
    write_rows(
        &dir.join(SEGMENTS_FILE),
        dataset.segments.iter().flat_map(|s| {
            s.vertices.iter().enumerate().map(|(i, &(lon, lat))| SegmentRow {
                segment_id: s.segment_id,
                vertex_idx: i,
                lon: lon as f32,
                lat: lat as f32,
            })
        }),
    )?;
    write_rows(
        &dir.join(SCENARIOS_FILE),
        dataset.samples.iter().map(|s| ScenarioRow {
            scenario_id: s.scenario_id,
            bitstring: s.scenario.to_string(),
        }),
    )?;
    let mut files = vec![
        LOCATIONS_FILE.to_string(),
        SEGMENTS_FILE.to_string(),
        SCENARIOS_FILE.to_string(),
    ];
    for s in &dataset.samples {
        let f = depth_file(s.scenario_id);
        write_rows(
            &dir.join(&f),
            dataset.locations.iter().zip(&s.depths.values).map(|(l, &v)| DepthRow {
                location_id: l.id,
                peak_depth_m: v,
            }),
        )?;
        files.push(f);
    }
    let manifest = DatasetManifest {
        files,
        n_scenarios: dataset.samples.len(),
        d_y: dataset.locations.len(),
        ..dataset.manifest.clone()
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn paper(seed: u64) -> Self {
        Self {
            train: 112,
            val: 12,
            test: 18,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded permutation followed by contiguous train/val/test slices.
pub fn split_dataset<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<Splits<T>> {
    let need = spec.train + spec.val + spec.test;
    if need > items.len() {
        return Err(Error::Capacity(format!(
            "split {}/{}/{} needs {need} items, have {}",
            spec.train,
            spec.val,
            spec.test,
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |r: std::ops::Range<usize>| order[r].iter().map(|&i| items[i].clone()).collect();
    Ok(Splits {
        train: pick(0..spec.train),
        val: pick(spec.train..spec.train + spec.val),
        test: pick(spec.train + spec.val..need),
    })
}

/// Fraction of a segment's index-adjacent segments that are protected.
pub fn protected_neighbor_fraction(scenario: &ProtectionScenario, segment: usize) -> f64 {
    let d = scenario.d_x();
    let neighbors: Vec<usize> = [segment.checked_sub(1), Some(segment + 1)]
        .into_iter()
        .flatten()
        .filter(|&s| s < d)
        .collect();
    if neighbors.is_empty() {
        return 0.0;
    }
    neighbors.iter().filter(|&&s| scenario.is_protected(s)).count() as f64 / neighbors.len() as f64
}

/// Toy flood response: `max(0, base - alpha * shielded + beta * spillover)`
/// per location, keyed on its nearest segment.
pub fn synth_oracle(
    scenario: &ProtectionScenario,
    locations: &[CoastalLocation],
    segments: &[SegmentGeometry],
    params: &SynthOracleParams,
) -> Result<DepthVector> {
    if segments.len() != scenario.d_x() {
        return Err(Error::Consistency(format!(
            "{} segments for a {}-bit scenario",
            segments.len(),
            scenario.d_x()
        )));
    }
    let mut values = Vec::with_capacity(locations.len());
    for loc in locations {
        let s = nearest_segment_at(loc.lon, loc.lat, segments)?;
        let shield = if scenario.is_protected(s) { 1.0 } else { 0.0 };
        let v = params.base_depth(loc.id) - params.alpha * shield + params.beta * protected_neighbor_fraction(scenario, s);
        values.push(v.max(0.0) as f32);
    }
    Ok(DepthVector::new(values))
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// A meandering coastline split into `d_x` equal-length segments, with
/// `n_locations` points scattered on the landward side.
pub fn synthetic_geometry(
    d_x: usize,
    n_locations: usize,
    seed: u64,
) -> Result<(Vec<SegmentGeometry>, Vec<CoastalLocation>)> {
    if d_x == 0 {
        return Err(Error::Config("d_x must be positive".into()));
    }
    const VERTS: usize = 4;
    let coast = |t: f64| (54.0 + 0.05 * t, 24.4 + 0.02 * (t * 1.3).sin());
    let segments = (0..d_x)
        .map(|s| {
            let v = (0..=VERTS)
                .map(|k| {
                    let (x, y) = coast(s as f64 + k as f64 / VERTS as f64);
                    (quantize(x), quantize(y))
                })
                .collect();
            SegmentGeometry::new(s, v)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut locations = Vec::with_capacity(n_locations);
    for id in 0..n_locations as u32 {
        let t = rng.gen_range(0.0..d_x as f64);
        let inland = rng.gen_range(0.001..0.02);
        let (x, y) = coast(t);
        let (lon, lat) = (quantize(x), quantize(y + inland));
        let segment_id = nearest_segment_at(lon, lat, &segments)?;
        locations.push(CoastalLocation {
            id,
            lon,
            lat,
            segment_id,
        });
    }
    Ok((segments, locations))
}

/// Builds a synthetic dataset in memory: the base scenarios first, then
/// distinct random ones, with depths from [`synth_oracle`].
pub fn synthetic_dataset(
    d_x: usize,
    n_locations: usize,
    height: usize,
    width: usize,
    n_scenarios: usize,
    params: &SynthOracleParams,
) -> Result<Dataset> {
    params.validate()?;
    if d_x < 64 && n_scenarios as u64 > 1u64 << d_x {
        return Err(Error::Capacity(format!("{n_scenarios} scenarios exceed 2^{d_x}")));
    }
    let (segments, locations) = synthetic_geometry(d_x, n_locations, params.seed)?;
    build_index_map(&locations, height, width)?;
    let mut scenarios = make_base_scenarios(d_x, true);
    scenarios.truncate(n_scenarios);
    let exclude: HashSet<ProtectionScenario> = scenarios.iter().cloned().collect();
    scenarios.extend(random_scenarios(n_scenarios - scenarios.len(), d_x, params.seed, &exclude)?);
    let samples = scenarios
        .into_iter()
        .enumerate()
        .map(|(i, scenario)| {
            Ok(Sample {
                scenario_id: i as u32,
                depths: synth_oracle(&scenario, &locations, &segments, params)?,
                scenario,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: DatasetManifest {
            schema_version: SCHEMA_VERSION,
            d_x,
            d_y: n_locations,
            height,
            width,
            n_scenarios: samples.len(),
            files: Vec::new(),
            segment_order: "bit i of a scenario bitstring (leftmost = 0) protects segment_id i".into(),
            synthetic: Some(*params),
        },
        locations,
        segments,
        samples,
    })
}

pub fn generate_synthetic_dataset(
    d_x: usize,
    n_locations: usize,
    height: usize,
    width: usize,
    n_scenarios: usize,
    params: &SynthOracleParams,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let ds = synthetic_dataset(d_x, n_locations, height, width, n_scenarios, params)?;
    save_dataset(&ds, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        synthetic_dataset(6, 40, 16, 16, 20, &SynthOracleParams::default()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = toy();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.manifest, manifest);
        assert_eq!(back.locations, ds.locations);
        assert_eq!(back.segments, ds.segments);
        assert_eq!(back.samples, ds.samples);
    }

    #[test]
    fn base_scenarios_come_first() {
        let ds = toy();
        let base = make_base_scenarios(6, true);
        assert_eq!(base.len(), 16);
        for (s, b) in ds.samples.iter().zip(&base) {
            assert_eq!(&s.scenario, b);
        }
        let distinct: HashSet<_> = ds.samples.iter().map(|s| s.scenario.clone()).collect();
        assert_eq!(distinct.len(), 20);
        assert!(ds.samples.iter().all(|s| s.depths.values.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn oracle_extremes() {
        let ds = toy();
        let p = SynthOracleParams::default();
        let all = synth_oracle(&ProtectionScenario::all(6, true), &ds.locations, &ds.segments, &p).unwrap();
        let none = synth_oracle(&ProtectionScenario::all(6, false), &ds.locations, &ds.segments, &p).unwrap();
        for (i, l) in ds.locations.iter().enumerate() {
            let b = p.base_depth(l.id);
            assert_eq!(all.values[i], (b - 1.0 + 0.3).max(0.0) as f32);
            assert_eq!(none.values[i], b as f32);
        }
    }

    #[test]
    fn single_protection_is_local() {
        let ds = toy();
        let p = SynthOracleParams::default();
        let none = synth_oracle(&ProtectionScenario::all(6, false), &ds.locations, &ds.segments, &p).unwrap();
        for s in 0..6 {
            let one = synth_oracle(&ProtectionScenario::unit(6, s, false), &ds.locations, &ds.segments, &p).unwrap();
            for (i, l) in ds.locations.iter().enumerate() {
                if l.segment_id.abs_diff(s) > 1 {
                    assert_eq!(one.values[i], none.values[i]);
                }
            }
        }
    }

    #[test]
    fn missing_and_bad_depths_are_reported() {
        let ds = toy();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let f = dir.path().join(depth_file(3));
        let text = fs::read_to_string(&f).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let dropped = lines[1].split(',').next().unwrap().to_string();
        let mut kept = vec![lines[0]];
        kept.extend(&lines[2..]);
        fs::write(&f, kept.join("\n")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains(&format!("location id {dropped}")), "{err}");

        let mut neg = lines.clone();
        let replaced = format!("{dropped},-1");
        neg[1] = &replaced;
        fs::write(&f, neg.join("\n")).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("invalid depth"));

        let mut unknown = lines.clone();
        unknown[1] = "9999,0.5";
        fs::write(&f, unknown.join("\n")).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("unknown location id 9999"));

        fs::remove_file(&f).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Dataset { .. })));
    }

    #[test]
    fn splits() {
        let items: Vec<usize> = (0..142).collect();
        let s = split_dataset(&items, &SplitSpec::paper(7)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (112, 12, 18));
        let all: HashSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(all.len(), 142);
        assert_eq!(s, split_dataset(&items, &SplitSpec::paper(7)).unwrap());
        let three = split_dataset(&[1, 2, 3], &SplitSpec { train: 1, val: 1, test: 1, seed: 0 }).unwrap();
        let mut got = vec![three.train[0], three.val[0], three.test[0]];
        got.sort();
        assert_eq!(got, vec![1, 2, 3]);
        assert!(split_dataset(&[1, 2], &SplitSpec { train: 1, val: 1, test: 1, seed: 0 }).is_err());
    }

    #[test]
    fn monotone_without_spillover() {
        let ds = toy();
        let p = SynthOracleParams { beta: 0.0, ..Default::default() };
        for code in 0u32..64 {
            let s = ProtectionScenario::new((0..6).map(|i| code >> (5 - i) & 1 == 1).collect()).unwrap();
            let base = synth_oracle(&s, &ds.locations, &ds.segments, &p).unwrap();
            for seg in 0..6 {
                if !s.is_protected(seg) {
                    let more = synth_oracle(&s.toggled(seg), &ds.locations, &ds.segments, &p).unwrap();
                    assert!(more.values.iter().zip(&base.values).all(|(a, b)| a <= b));
                }
            }
        }
    }
}
