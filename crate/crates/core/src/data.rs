//! Survey records, region boundaries and their validated file formats.
//!
//! Records come from a CSV file with one row per surveyed individual
//! (`region_id,cluster_id,weight,outcome`, optionally `stratum`). Region
//! boundaries come from a GeoJSON `FeatureCollection` whose features carry a
//! `region_id` property and a `Polygon` or `MultiPolygon` geometry.
//!
//! Lines starting with `#` in the CSV files are treated as comments, which is
//! where the pipeline writes its provenance header.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

/// Distance (degrees) under which a cluster point counts as lying on a
/// region edge.
pub const EDGE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("schema error: required column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {line}: {reason}")]
    InvalidRow { line: u64, reason: String },
    #[error("cluster `{cluster}` is assigned to two regions (`{first}` and `{second}`)")]
    InconsistentCluster {
        cluster: String,
        first: String,
        second: String,
    },
    #[error("not a GeoJSON FeatureCollection: {0}")]
    NotFeatureCollection(String),
    #[error("{feature}: {reason}")]
    InvalidFeature { feature: String, reason: String },
    #[error("{feature}: unsupported geometry type `{kind}` (expected Polygon or MultiPolygon)")]
    UnsupportedGeometry { feature: String, kind: String },
    #[error("{feature}: ring {ring} is not closed or has fewer than 4 positions")]
    InvalidRing { feature: String, ring: usize },
    #[error("duplicate region_id `{0}`")]
    DuplicateRegion(String),
    #[error("region `{0}` referenced by records has no boundary")]
    UnknownRegion(String),
    #[error("region `{0}` has no survey records")]
    EmptyRegion(String),
    #[error("dataset needs at least 2 regions, found {0}")]
    TooFewRegions(usize),
    #[error("no records remain after dropping records without a region boundary")]
    EmptyDataset,
}

/// A surveyed individual.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRecord {
    pub region_id: String,
    pub cluster_id: String,
    /// Design weight (inverse inclusion probability up to a constant).
    pub weight: f64,
    /// 1 = positive, 0 = negative.
    pub outcome: u8,
    /// Optional design stratum; variance sums are taken within strata.
    pub stratum: Option<String>,
}

impl IndividualRecord {
    pub fn new(region_id: impl Into<String>, cluster_id: impl Into<String>, weight: f64, outcome: u8) -> Self {
        IndividualRecord {
            region_id: region_id.into(),
            cluster_id: cluster_id.into(),
            weight,
            outcome,
            stratum: None,
        }
    }

    fn check(&self) -> Result<(), String> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(format!("weight must be positive and finite, got {}", self.weight));
        }
        if self.outcome > 1 {
            return Err(format!("outcome must be 0 or 1, got {}", self.outcome));
        }
        if self.region_id.is_empty() {
            return Err("empty region_id".into());
        }
        if self.cluster_id.is_empty() {
            return Err("empty cluster_id".into());
        }
        Ok(())
    }
}

/// A closed ring of `[longitude, latitude]` positions.
pub type Ring = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Exterior ring followed by holes.
    Polygon(Vec<Ring>),
    MultiPolygon(Vec<Vec<Ring>>),
}

impl Geometry {
    pub fn polygons(&self) -> Vec<&[Ring]> {
        match self {
            Geometry::Polygon(rings) => vec![rings.as_slice()],
            Geometry::MultiPolygon(polys) => polys.iter().map(|p| p.as_slice()).collect(),
        }
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        let rings: Vec<&Ring> = match self {
            Geometry::Polygon(rings) => rings.iter().collect(),
            Geometry::MultiPolygon(polys) => polys.iter().flatten().collect(),
        };
        rings.into_iter()
    }

    pub fn ring_count(&self) -> usize {
        self.rings().count()
    }

    /// `(min_lon, min_lat, max_lon, max_lat)`; `None` for an empty geometry.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        let mut it = self.rings().flatten().peekable();
        it.peek()?;
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in it {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        Some(b)
    }

    /// Even-odd containment: inside any polygon part, with holes excluded.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        self.polygons()
            .into_iter()
            .any(|rings| rings.iter().filter(|ring| ray_crosses_odd(ring, lon, lat)).count() % 2 == 1)
    }

    /// Smallest distance from the point to any ring edge.
    pub fn edge_distance(&self, lon: f64, lat: f64) -> f64 {
        self.rings()
            .flat_map(|ring| ring.windows(2))
            .map(|w| segment_distance([lon, lat], w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn ray_crosses_odd(ring: &Ring, x: f64, y: f64) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a[1] > y) != (b[1] > y) {
            let xi = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if x < xi {
                inside = !inside;
            }
        }
    }
    inside
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionBoundary {
    pub region_id: String,
    pub country: Option<String>,
    pub geometry: Geometry,
}

impl RegionBoundary {
    /// Country label, or the empty string when none was given.
    pub fn group(&self) -> &str {
        self.country.as_deref().unwrap_or("")
    }
}

/// Records plus the boundaries they refer to. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    records: Vec<IndividualRecord>,
    regions: Vec<RegionBoundary>,
    provenance: String,
}

impl SurveyDataset {
    /// Validates that every record's region has a boundary, every boundary
    /// has at least one record, and there are at least two regions.
    pub fn new(
        records: Vec<IndividualRecord>,
        regions: Vec<RegionBoundary>,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        let mut seen = BTreeSet::new();
        for r in &regions {
            if !seen.insert(r.region_id.as_str()) {
                return Err(DataError::DuplicateRegion(r.region_id.clone()));
            }
        }
        if regions.len() < 2 {
            return Err(DataError::TooFewRegions(regions.len()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for rec in &records {
            if !seen.contains(rec.region_id.as_str()) {
                return Err(DataError::UnknownRegion(rec.region_id.clone()));
            }
            *counts.entry(rec.region_id.as_str()).or_default() += 1;
        }
        if let Some(r) = regions.iter().find(|r| !counts.contains_key(r.region_id.as_str())) {
            return Err(DataError::EmptyRegion(r.region_id.clone()));
        }
        Ok(SurveyDataset {
            records,
            regions,
            provenance: provenance.into(),
        })
    }

    pub fn records(&self) -> &[IndividualRecord] {
        &self.records
    }

    pub fn regions(&self) -> &[RegionBoundary] {
        &self.regions
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Records grouped by region, keyed and ordered by region_id.
    pub fn by_region(&self) -> BTreeMap<&str, Vec<&IndividualRecord>> {
        let mut out: BTreeMap<&str, Vec<&IndividualRecord>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.region_id.as_str()).or_default().push(r);
        }
        out
    }
}

/// Column names used to read the records CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordSchema {
    pub region_id: String,
    pub cluster_id: String,
    pub weight: String,
    pub outcome: String,
    /// Optional column; absence is not an error.
    pub stratum: String,
}

impl Default for RecordSchema {
    fn default() -> Self {
        RecordSchema {
            region_id: "region_id".into(),
            cluster_id: "cluster_id".into(),
            weight: "weight".into(),
            outcome: "outcome".into(),
            stratum: "stratum".into(),
        }
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

struct RawRow {
    line: u64,
    region_id: Option<String>,
    cluster_id: String,
    weight: f64,
    outcome: u8,
    stratum: Option<String>,
}

fn read_rows(path: &Path, schema: &RecordSchema, need_region: bool) -> Result<Vec<RawRow>, DataError> {
    let mut rdr = csv_reader(path)?;
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let region_col = if need_region {
        Some(column(&headers, &schema.region_id)?)
    } else {
        None
    };
    let cluster_col = column(&headers, &schema.cluster_id)?;
    let weight_col = column(&headers, &schema.weight)?;
    let outcome_col = column(&headers, &schema.outcome)?;
    let stratum_col = headers.iter().position(|h| h == schema.stratum);

    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let invalid = |reason: String| DataError::InvalidRow { line, reason };
        let weight: f64 = row[weight_col]
            .parse()
            .map_err(|_| invalid(format!("weight `{}` is not a number", &row[weight_col])))?;
        let outcome: u8 = match &row[outcome_col] {
            "0" => 0,
            "1" => 1,
            other => return Err(invalid(format!("outcome must be 0 or 1, got `{other}`"))),
        };
        rows.push(RawRow {
            line,
            region_id: region_col.map(|c| row[c].to_string()),
            cluster_id: row[cluster_col].to_string(),
            weight,
            outcome,
            stratum: stratum_col.map(|c| row[c].to_string()).filter(|s| !s.is_empty()),
        });
    }
    Ok(rows)
}

fn finish_records(rows: Vec<(u64, IndividualRecord)>) -> Result<Vec<IndividualRecord>, DataError> {
    let mut cluster_region: HashMap<String, String> = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        rec.check().map_err(|reason| DataError::InvalidRow { line, reason })?;
        match cluster_region.get(&rec.cluster_id) {
            Some(region) if *region != rec.region_id => {
                return Err(DataError::InconsistentCluster {
                    cluster: rec.cluster_id.clone(),
                    first: region.clone(),
                    second: rec.region_id.clone(),
                })
            }
            Some(_) => {}
            None => {
                cluster_region.insert(rec.cluster_id.clone(), rec.region_id.clone());
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads and validates a records CSV.
pub fn load_records(path: &Path, schema: &RecordSchema) -> Result<Vec<IndividualRecord>, DataError> {
    let rows = read_rows(path, schema, true)?;
    finish_records(
        rows.into_iter()
            .map(|r| {
                (
                    r.line,
                    IndividualRecord {
                        region_id: r.region_id.unwrap_or_default(),
                        cluster_id: r.cluster_id,
                        weight: r.weight,
                        outcome: r.outcome,
                        stratum: r.stratum,
                    },
                )
            })
            .collect(),
    )
}

/// Reads a records CSV whose region is resolved through cluster locations
/// rather than a `region_id` column. Rows whose cluster was not placed in any
/// region are skipped; their count is returned alongside the records.
pub fn load_records_by_cluster(
    path: &Path,
    schema: &RecordSchema,
    assignment: &ClusterAssignment,
) -> Result<(Vec<IndividualRecord>, usize), DataError> {
    let rows = read_rows(path, schema, false)?;
    let mut skipped = 0;
    let mut kept = Vec::with_capacity(rows.len());
    for r in rows {
        match assignment.regions.get(&r.cluster_id) {
            Some(region) => kept.push((
                r.line,
                IndividualRecord {
                    region_id: region.clone(),
                    cluster_id: r.cluster_id,
                    weight: r.weight,
                    outcome: r.outcome,
                    stratum: r.stratum,
                },
            )),
            None => skipped += 1,
        }
    }
    Ok((finish_records(kept)?, skipped))
}

/// Writes records in the canonical column order. `header` lines are emitted
/// as `#` comments before the CSV header.
pub fn write_records(path: &Path, records: &[IndividualRecord], header: &[String]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_comment_header(&mut out, header).map_err(io_err)?;
    let with_stratum = records.iter().any(|r| r.stratum.is_some());
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut head = vec!["region_id", "cluster_id", "weight", "outcome"];
    if with_stratum {
        head.push("stratum");
    }
    w.write_record(&head).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.region_id.clone(),
            r.cluster_id.clone(),
            r.weight.to_string(),
            r.outcome.to_string(),
        ];
        if with_stratum {
            row.push(r.stratum.clone().unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub(crate) fn write_comment_header<W: Write>(out: &mut W, header: &[String]) -> std::io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

struct FeatureName<'a>(usize, Option<&'a str>);

impl fmt::Display for FeatureName<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.1 {
            Some(id) => write!(f, "feature {} (region_id `{}`)", self.0, id),
            None => write!(f, "feature {}", self.0),
        }
    }
}

fn parse_ring(value: &Value, feature: &str, index: usize) -> Result<Ring, DataError> {
    let bad = || DataError::InvalidFeature {
        feature: feature.to_string(),
        reason: format!("ring {index} is not an array of [lon, lat] positions"),
    };
    let positions = value.as_array().ok_or_else(bad)?;
    let mut ring = Vec::with_capacity(positions.len());
    for p in positions {
        let xy = p.as_array().ok_or_else(bad)?;
        if xy.len() < 2 {
            return Err(bad());
        }
        let lon = xy[0].as_f64().ok_or_else(bad)?;
        let lat = xy[1].as_f64().ok_or_else(bad)?;
        ring.push([lon, lat]);
    }
    if ring.len() < 4 || ring.first() != ring.last() {
        return Err(DataError::InvalidRing {
            feature: feature.to_string(),
            ring: index,
        });
    }
    Ok(ring)
}

fn parse_polygon(value: &Value, feature: &str, ring_offset: &mut usize) -> Result<Vec<Ring>, DataError> {
    let rings = value.as_array().ok_or_else(|| DataError::InvalidFeature {
        feature: feature.to_string(),
        reason: "polygon coordinates must be an array of rings".into(),
    })?;
    let mut out = Vec::with_capacity(rings.len());
    for r in rings {
        out.push(parse_ring(r, feature, *ring_offset)?);
        *ring_offset += 1;
    }
    Ok(out)
}

/// Parses a GeoJSON `FeatureCollection` of region boundaries.
pub fn parse_boundaries(text: &str, path: &Path) -> Result<Vec<RegionBoundary>, DataError> {
    let doc: Value = serde_json::from_str(text).map_err(|source| DataError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(DataError::NotFeatureCollection(path.display().to_string()));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| DataError::NotFeatureCollection(format!("{}: no features array", path.display())))?;

    let mut out = Vec::with_capacity(features.len());
    let mut seen = BTreeSet::new();
    for (i, feat) in features.iter().enumerate() {
        let props = feat.get("properties");
        let region_id = props.and_then(|p| p.get("region_id")).and_then(Value::as_str);
        let name = FeatureName(i, region_id).to_string();
        let region_id = region_id.ok_or_else(|| DataError::InvalidFeature {
            feature: name.clone(),
            reason: "missing string property `region_id`".into(),
        })?;
        let country = props
            .and_then(|p| p.get("country"))
            .and_then(Value::as_str)
            .map(str::to_string);
        let geom = feat.get("geometry").ok_or_else(|| DataError::InvalidFeature {
            feature: name.clone(),
            reason: "missing geometry".into(),
        })?;
        let kind = geom.get("type").and_then(Value::as_str).unwrap_or("<none>");
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let mut ring_index = 0;
        let geometry = match kind {
            "Polygon" => Geometry::Polygon(parse_polygon(coords, &name, &mut ring_index)?),
            "MultiPolygon" => {
                let polys = coords.as_array().ok_or_else(|| DataError::InvalidFeature {
                    feature: name.clone(),
                    reason: "multipolygon coordinates must be an array of polygons".into(),
                })?;
                Geometry::MultiPolygon(
                    polys
                        .iter()
                        .map(|p| parse_polygon(p, &name, &mut ring_index))
                        .collect::<Result<_, _>>()?,
                )
            }
            other => {
                return Err(DataError::UnsupportedGeometry {
                    feature: name,
                    kind: other.to_string(),
                })
            }
        };
        if !seen.insert(region_id.to_string()) {
            return Err(DataError::DuplicateRegion(region_id.to_string()));
        }
        out.push(RegionBoundary {
            region_id: region_id.to_string(),
            country,
            geometry,
        });
    }
    Ok(out)
}

pub fn load_boundaries(path: &Path) -> Result<Vec<RegionBoundary>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_boundaries(&text, path)
}

fn ring_json(ring: &Ring) -> Value {
    Value::Array(ring.iter().map(|p| json!([p[0], p[1]])).collect())
}

fn feature_json(b: &RegionBoundary) -> Value {
    let mut props = Map::new();
    props.insert("region_id".into(), json!(b.region_id));
    if let Some(c) = &b.country {
        props.insert("country".into(), json!(c));
    }
    let geometry = match &b.geometry {
        Geometry::Polygon(rings) => json!({
            "type": "Polygon",
            "coordinates": rings.iter().map(ring_json).collect::<Vec<_>>(),
        }),
        Geometry::MultiPolygon(polys) => json!({
            "type": "MultiPolygon",
            "coordinates": polys
                .iter()
                .map(|p| p.iter().map(ring_json).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        }),
    };
    json!({ "type": "Feature", "properties": props, "geometry": geometry })
}

/// Writes a `FeatureCollection`, one feature per line. `metadata` becomes a
/// foreign top-level member, which GeoJSON readers ignore.
pub fn write_boundaries(
    path: &Path,
    boundaries: &[RegionBoundary],
    metadata: &BTreeMap<String, String>,
) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let meta = serde_json::to_string(metadata).expect("string map serializes");
    let mut text = String::new();
    text.push_str("{\"type\":\"FeatureCollection\",\n");
    if !metadata.is_empty() {
        text.push_str(&format!("\"metadata\":{meta},\n"));
    }
    text.push_str("\"features\":[\n");
    for (i, b) in boundaries.iter().enumerate() {
        text.push_str(&feature_json(b).to_string());
        text.push_str(if i + 1 < boundaries.len() { ",\n" } else { "\n" });
    }
    text.push_str("]}\n");
    out.write_all(text.as_bytes()).map_err(io_err)?;
    out.flush().map_err(io_err)
}

/// Outcome of [`drop_unlinked`].
#[derive(Debug, Clone, PartialEq)]
pub struct DropReport {
    pub dropped_records: usize,
    pub retained_fraction: f64,
    /// Boundaries removed because no record refers to them.
    pub dropped_regions: Vec<String>,
}

/// Removes records whose region has no boundary, and boundaries without
/// records, then builds the dataset.
pub fn drop_unlinked(
    records: Vec<IndividualRecord>,
    boundaries: Vec<RegionBoundary>,
    provenance: impl Into<String>,
) -> Result<(SurveyDataset, DropReport), DataError> {
    let total = records.len();
    let known: BTreeSet<&str> = boundaries.iter().map(|b| b.region_id.as_str()).collect();
    let kept: Vec<IndividualRecord> = records
        .iter()
        .filter(|r| known.contains(r.region_id.as_str()))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let used: BTreeSet<&str> = kept.iter().map(|r| r.region_id.as_str()).collect();
    let (regions, dropped): (Vec<_>, Vec<_>) = boundaries
        .into_iter()
        .partition(|b| used.contains(b.region_id.as_str()));
    let report = DropReport {
        dropped_records: total - kept.len(),
        retained_fraction: kept.len() as f64 / total as f64,
        dropped_regions: dropped.into_iter().map(|b| b.region_id).collect(),
    };
    Ok((SurveyDataset::new(kept, regions, provenance)?, report))
}

/// Location of one survey cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPoint {
    pub cluster_id: String,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterAssignment {
    pub regions: BTreeMap<String, String>,
    /// Clusters lying on a region edge; assigned to the smallest candidate id.
    pub ambiguous: Vec<String>,
    /// Clusters outside every region.
    pub unassigned: Vec<String>,
}

pub fn load_cluster_points(path: &Path) -> Result<Vec<ClusterPoint>, DataError> {
    let mut rdr = csv_reader(path)?;
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let (c, x, y) = (
        column(&headers, "cluster_id")?,
        column(&headers, "lon")?,
        column(&headers, "lat")?,
    );
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<f64, DataError> {
            row[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::InvalidRow {
                    line,
                    reason: format!("coordinate `{}` is not a finite number", &row[i]),
                })
        };
        out.push(ClusterPoint {
            cluster_id: row[c].to_string(),
            lon: num(x)?,
            lat: num(y)?,
        });
    }
    Ok(out)
}

/// Places each cluster in the region containing it (even-odd ray casting).
pub fn assign_clusters(points: &[ClusterPoint], boundaries: &[RegionBoundary]) -> ClusterAssignment {
    let mut out = ClusterAssignment::default();
    for p in points {
        let mut on_edge: Vec<&str> = Vec::new();
        let mut inside: Vec<&str> = Vec::new();
        for b in boundaries {
            if b.geometry.edge_distance(p.lon, p.lat) <= EDGE_EPSILON {
                on_edge.push(&b.region_id);
            } else if b.geometry.contains(p.lon, p.lat) {
                inside.push(&b.region_id);
            }
        }
        let chosen = if !on_edge.is_empty() {
            out.ambiguous.push(p.cluster_id.clone());
            on_edge.into_iter().chain(inside).min()
        } else {
            inside.into_iter().min()
        };
        match chosen {
            Some(region) => {
                out.regions.insert(p.cluster_id.clone(), region.to_string());
            }
            None => out.unassigned.push(p.cluster_id.clone()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: f64, y: f64) -> Geometry {
        Geometry::Polygon(vec![vec![
            [x, y],
            [x + 1.0, y],
            [x + 1.0, y + 1.0],
            [x, y + 1.0],
            [x, y],
        ]])
    }

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_valid_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "r.csv",
            "region_id,cluster_id,weight,outcome,extra\nA,c1,1.0,1,x\nA,c1,2,0,y\nB,c2,1,0,z\nB,c3,0.5,1,w\n",
        );
        let recs = load_records(&p, &RecordSchema::default()).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[3], IndividualRecord::new("B", "c3", 0.5, 1));
    }

    #[test]
    fn zero_weight_cites_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "r.csv",
            "region_id,cluster_id,weight,outcome\nA,c1,1,1\nA,c1,0,0\n",
        );
        match load_records(&p, &RecordSchema::default()) {
            Err(DataError::InvalidRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_outcome_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "r.csv", "region_id,cluster_id,weight,outcome\nA,c1,1,2\n");
        assert!(matches!(
            load_records(&p, &RecordSchema::default()),
            Err(DataError::InvalidRow { line: 2, .. })
        ));
    }

    #[test]
    fn cluster_in_two_regions_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "r.csv",
            "region_id,cluster_id,weight,outcome\nA,C7,1,1\nB,C7,1,0\n",
        );
        let err = load_records(&p, &RecordSchema::default()).unwrap_err();
        assert!(err.to_string().contains("C7"), "{err}");
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "r.csv", "region,cluster_id,weight,outcome\nA,c,1,1\n");
        let err = load_records(&p, &RecordSchema::default()).unwrap_err();
        assert!(matches!(&err, DataError::MissingColumn(c) if c == "region_id"));
    }

    #[test]
    fn schema_renames_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "r.csv", "admin1,psu,wt,hiv\nA,c,2,1\n");
        let schema = RecordSchema {
            region_id: "admin1".into(),
            cluster_id: "psu".into(),
            weight: "wt".into(),
            outcome: "hiv".into(),
            ..RecordSchema::default()
        };
        let recs = load_records(&p, &schema).unwrap();
        assert_eq!(recs, vec![IndividualRecord::new("A", "c", 2.0, 1)]);
    }

    const TWO_SQUARES: &str = r#"{"type":"FeatureCollection","features":[
      {"type":"Feature","properties":{"region_id":"R1","country":"K"},
       "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
      {"type":"Feature","properties":{"region_id":"R2"},
       "geometry":{"type":"MultiPolygon","coordinates":[[[[1,0],[2,0],[2,1],[1,1],[1,0]]]]}}]}"#;

    #[test]
    fn loads_two_squares() {
        let b = parse_boundaries(TWO_SQUARES, Path::new("mem")).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].country.as_deref(), Some("K"));
        assert_eq!(b[1].country, None);
        assert_eq!(b[1].geometry.ring_count(), 1);
    }

    #[test]
    fn duplicate_region_is_named() {
        let text = TWO_SQUARES.replace("\"R2\"", "\"R1\"");
        let err = parse_boundaries(&text, Path::new("mem")).unwrap_err();
        assert!(matches!(&err, DataError::DuplicateRegion(r) if r == "R1"));
    }

    #[test]
    fn line_string_is_unsupported() {
        let text = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"region_id":"L"},
           "geometry":{"type":"LineString","coordinates":[[0,0],[1,1]]}}]}"#;
        let err = parse_boundaries(text, Path::new("mem")).unwrap_err();
        assert!(matches!(err, DataError::UnsupportedGeometry { .. }));
    }

    #[test]
    fn open_ring_is_rejected() {
        let text = TWO_SQUARES.replace("[0,1],[0,0]]]", "[0,1],[0,0.5]]]");
        let err = parse_boundaries(&text, Path::new("mem")).unwrap_err();
        assert!(matches!(&err, DataError::InvalidRing { feature, .. } if feature.contains("R1")));
    }

    fn boundaries(ids: &[&str]) -> Vec<RegionBoundary> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| RegionBoundary {
                region_id: id.to_string(),
                country: None,
                geometry: square(i as f64, 0.0),
            })
            .collect()
    }

    #[test]
    fn drop_unlinked_reports_fraction() {
        let mut recs: Vec<_> = (0..9)
            .map(|i| IndividualRecord::new(if i % 2 == 0 { "A" } else { "B" }, format!("c{}", i % 2), 1.0, 0))
            .collect();
        recs.push(IndividualRecord::new("Z", "cz", 1.0, 1));
        let (ds, rep) = drop_unlinked(recs, boundaries(&["A", "B"]), "t").unwrap();
        assert_eq!(ds.records().len(), 9);
        assert_eq!(rep.dropped_records, 1);
        assert!((rep.retained_fraction - 0.9).abs() < 1e-15);

        let (again, rep2) = drop_unlinked(ds.records().to_vec(), ds.regions().to_vec(), "t").unwrap();
        assert_eq!(again, ds);
        assert_eq!(rep2.retained_fraction, 1.0);
    }

    #[test]
    fn drop_everything_is_an_error() {
        let recs = vec![IndividualRecord::new("Z", "c", 1.0, 1)];
        assert!(matches!(
            drop_unlinked(recs, boundaries(&["A", "B"]), ""),
            Err(DataError::EmptyDataset)
        ));
    }

    #[test]
    fn point_assignment_and_edges() {
        let b = boundaries(&["B", "A"]);
        let pts = vec![
            ClusterPoint {
                cluster_id: "in_b".into(),
                lon: 0.5,
                lat: 0.5,
            },
            ClusterPoint {
                cluster_id: "edge".into(),
                lon: 1.0,
                lat: 0.5,
            },
            ClusterPoint {
                cluster_id: "out".into(),
                lon: 5.0,
                lat: 5.0,
            },
        ];
        let a = assign_clusters(&pts, &b);
        assert_eq!(a.regions["in_b"], "B");
        assert_eq!(a.regions["edge"], "A");
        assert_eq!(a.ambiguous, vec!["edge".to_string()]);
        assert_eq!(a.unassigned, vec!["out".to_string()]);
    }

    #[test]
    fn holes_are_excluded() {
        let g = Geometry::Polygon(vec![
            vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0], [0.0, 0.0]],
            vec![[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0], [1.0, 1.0]],
        ]);
        assert!(g.contains(0.5, 0.5));
        assert!(!g.contains(2.0, 2.0));
    }
}
