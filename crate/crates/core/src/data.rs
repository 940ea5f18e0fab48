//! Domain types for irregularly sampled mixed-type functional observations
//! and their long-form CSV + JSON sidecar representation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measurement scale of one functional component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum VariableType {
    Continuous,
    Truncated,
    Ordinal { levels: u32 },
    Binary,
}

impl VariableType {
    pub fn ordinal(levels: u32) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidArgument(format!(
                "ordinal variables need at least 2 levels, got {levels}"
            )));
        }
        Ok(VariableType::Ordinal { levels })
    }

    /// Number of latent thresholds the observation map uses.
    pub fn n_cutoffs(&self) -> usize {
        match *self {
            VariableType::Continuous => 0,
            VariableType::Truncated | VariableType::Binary => 1,
            VariableType::Ordinal { levels } => levels as usize - 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, VariableType::Binary | VariableType::Ordinal { .. })
    }

    /// Whether `value` is admissible for this type.
    pub fn admits(&self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        match *self {
            VariableType::Continuous => true,
            VariableType::Truncated => value >= 0.0,
            VariableType::Binary => value == 0.0 || value == 1.0,
            VariableType::Ordinal { levels } => {
                value >= 0.0 && value.fract() == 0.0 && value < levels as f64
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            VariableType::Continuous => "continuous",
            VariableType::Truncated => "truncated",
            VariableType::Ordinal { .. } => "ordinal",
            VariableType::Binary => "binary",
        }
    }
}

impl fmt::Display for VariableType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariableType::Ordinal { levels } => write!(f, "ordinal({levels})"),
            other => f.write_str(other.name()),
        }
    }
}

/// A single measurement: subject index, component index (0-based), time in [0, 1], value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub subject: usize,
    pub component: usize,
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub vtype: VariableType,
}

/// Validated, immutable collection of mixed-type functional observations.
///
/// Observations are kept sorted by (subject, component, time). For each
/// component and pooled time point an index of `(subject, value)` pairs
/// sorted by subject is built at construction; the Kendall and marginal
/// estimators read from it.
#[derive(Debug, Clone)]
pub struct MixedDataset {
    subjects: Vec<String>,
    components: Vec<Component>,
    observations: Vec<Observation>,
    pooled_times: Vec<f64>,
    time_index: Vec<usize>,
    cells: Vec<Vec<Vec<(usize, f64)>>>,
}

impl PartialEq for MixedDataset {
    fn eq(&self, other: &Self) -> bool {
        self.subjects == other.subjects
            && self.components == other.components
            && self.observations == other.observations
    }
}

impl MixedDataset {
    /// Builds a dataset, checking type consistency, the time domain and duplicates.
    pub fn new(
        subjects: Vec<String>,
        components: Vec<Component>,
        mut observations: Vec<Observation>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::NoObservations);
        }
        if components.is_empty() {
            return Err(Error::InvalidArgument("no components declared".into()));
        }
        let mut offending = Vec::new();
        for o in &observations {
            if o.subject >= subjects.len() || o.component >= components.len() {
                return Err(Error::Validation(format!(
                    "observation references unknown subject {} or component {}",
                    o.subject, o.component
                )));
            }
            if !(0.0..=1.0).contains(&o.time) {
                offending.push(format!(
                    "({}, {}, {}): time outside [0, 1]",
                    subjects[o.subject], components[o.component].name, o.time
                ));
                continue;
            }
            let vtype = components[o.component].vtype;
            if !vtype.admits(o.value) {
                offending.push(format!(
                    "({}, {}, {}): value {} invalid for {}",
                    subjects[o.subject], components[o.component].name, o.time, o.value, vtype
                ));
            }
        }
        if !offending.is_empty() {
            return Err(Error::Validation(offending.join("; ")));
        }

        observations.sort_by(|a, b| {
            (a.subject, a.component)
                .cmp(&(b.subject, b.component))
                .then(a.time.total_cmp(&b.time))
        });
        let duplicates: Vec<String> = observations
            .windows(2)
            .filter(|w| {
                w[0].subject == w[1].subject
                    && w[0].component == w[1].component
                    && w[0].time == w[1].time
            })
            .map(|w| {
                format!(
                    "({}, {}, {})",
                    subjects[w[0].subject], components[w[0].component].name, w[0].time
                )
            })
            .collect();
        if !duplicates.is_empty() {
            return Err(Error::Validation(format!(
                "duplicate (subject, component, time) triples: {}",
                duplicates.join("; ")
            )));
        }

        let mut pooled_times: Vec<f64> = observations.iter().map(|o| o.time).collect();
        pooled_times.sort_by(f64::total_cmp);
        pooled_times.dedup();

        let time_index: Vec<usize> = observations
            .iter()
            .map(|o| {
                pooled_times
                    .binary_search_by(|t| t.total_cmp(&o.time))
                    .expect("pooled times contain every observation time")
            })
            .collect();

        let mut cells = vec![vec![Vec::new(); pooled_times.len()]; components.len()];
        for (o, &ti) in observations.iter().zip(&time_index) {
            cells[o.component][ti].push((o.subject, o.value));
        }
        // observations are sorted by subject first, so each cell is already sorted

        Ok(Self {
            subjects,
            components,
            observations,
            pooled_times,
            time_index,
            cells,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn vtype(&self, component: usize) -> VariableType {
        self.components[component].vtype
    }

    pub fn types(&self) -> Vec<VariableType> {
        self.components.iter().map(|c| c.vtype).collect()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Sorted, duplicate-free union of all observation times.
    pub fn pooled_times(&self) -> &[f64] {
        &self.pooled_times
    }

    /// Index into [`pooled_times`](Self::pooled_times) of each observation, aligned with
    /// [`observations`](Self::observations).
    pub fn time_indices(&self) -> &[usize] {
        &self.time_index
    }

    /// `(subject, value)` pairs for `component` at pooled time index `time`, sorted by subject.
    pub fn cell(&self, component: usize, time: usize) -> &[(usize, f64)] {
        &self.cells[component][time]
    }

    /// Observations of one subject, sorted by (component, time), with their pooled time indices.
    pub fn subject_observations(&self, subject: usize) -> Vec<(Observation, usize)> {
        let start = self.observations.partition_point(|o| o.subject < subject);
        let end = self.observations.partition_point(|o| o.subject <= subject);
        (start..end)
            .map(|i| (self.observations[i], self.time_index[i]))
            .collect()
    }

    /// Writes the long-form CSV and its sidecar. Times are already on [0, 1],
    /// so the sidecar declares the identity normalization.
    pub fn save(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(csv_path)?;
        writer.write_record(["subject_id", "component", "time", "value"])?;
        for o in &self.observations {
            writer.write_record([
                self.subjects[o.subject].clone(),
                self.components[o.component].name.clone(),
                o.time.to_string(),
                o.value.to_string(),
            ])?;
        }
        writer.flush()?;
        let sidecar = Sidecar {
            components: self
                .components
                .iter()
                .map(|c| SidecarComponent::from_component(c))
                .collect(),
            time_range: [0.0, 1.0],
        };
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }
}

// =============================================================================
// Ingestion
// =============================================================================

/// Names of the CSV columns holding each field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub subject: String,
    pub component: String,
    pub time: String,
    pub value: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            subject: "subject_id".into(),
            component: "component".into(),
            time: "time".into(),
            value: "value".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarComponent {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
}

impl SidecarComponent {
    fn from_component(c: &Component) -> Self {
        Self {
            name: c.name.clone(),
            kind: c.vtype.name().into(),
            levels: match c.vtype {
                VariableType::Ordinal { levels } => Some(levels),
                _ => None,
            },
        }
    }

    fn to_component(&self) -> Result<Component> {
        let vtype = match self.kind.as_str() {
            "continuous" => VariableType::Continuous,
            "truncated" => VariableType::Truncated,
            "binary" => VariableType::Binary,
            "ordinal" => VariableType::ordinal(self.levels.ok_or_else(|| {
                Error::InvalidArgument(format!("ordinal component '{}' needs levels", self.name))
            })?)?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown variable type '{other}' for component '{}'",
                    self.name
                )))
            }
        };
        Ok(Component {
            name: self.name.clone(),
            vtype,
        })
    }
}

/// JSON sidecar declaring component types and the affine time normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub components: Vec<SidecarComponent>,
    pub time_range: [f64; 2],
}

impl Sidecar {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn from_components(components: &[Component], time_range: [f64; 2]) -> Self {
        Self {
            components: components.iter().map(SidecarComponent::from_component).collect(),
            time_range,
        }
    }
}

/// Reads a long-form CSV, normalizes times by the sidecar's `time_range`
/// and validates every value against its declared type.
pub fn load_dataset(csv_path: &Path, schema: &Schema, sidecar: &Sidecar) -> Result<MixedDataset> {
    let reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(csv_path)?;
    read_dataset(reader, schema, sidecar)
}

pub fn read_dataset<R: std::io::Read>(
    mut reader: csv::Reader<R>,
    schema: &Schema,
    sidecar: &Sidecar,
) -> Result<MixedDataset> {
    let components: Vec<Component> = sidecar
        .components
        .iter()
        .map(SidecarComponent::to_component)
        .collect::<Result<_>>()?;
    let [a, b] = sidecar.time_range;
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(Error::InvalidArgument(format!(
            "time_range must satisfy a < b, got [{a}, {b}]"
        )));
    }

    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("missing column '{name}'"),
        })
    };
    let (cs, cc, ct, cv) = (
        column(&schema.subject)?,
        column(&schema.component)?,
        column(&schema.time)?,
        column(&schema.value)?,
    );
    let by_name: HashMap<&str, usize> = components
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();

    let mut subject_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut subjects = Vec::new();
    let mut observations = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |idx: usize| {
            record.get(idx).ok_or_else(|| Error::Parse {
                row,
                message: "too few fields".into(),
            })
        };
        let subject_id = field(cs)?.to_string();
        let comp_field = field(cc)?;
        let component = match by_name.get(comp_field) {
            Some(&idx) => idx,
            None => match comp_field.parse::<usize>() {
                Ok(idx) if (1..=components.len()).contains(&idx) => idx - 1,
                _ => {
                    return Err(Error::Parse {
                        row,
                        message: format!("unknown component '{comp_field}'"),
                    })
                }
            },
        };
        let parse_num = |name: &str, text: &str| {
            text.parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("invalid {name} '{text}'"),
            })
        };
        let raw_time = parse_num("time", field(ct)?)?;
        let value = parse_num("value", field(cv)?)?;
        let time = (raw_time - a) / (b - a);
        let subject = *subject_ids.entry(subject_id.clone()).or_insert_with(|| {
            subjects.push(subject_id);
            subjects.len() - 1
        });
        observations.push(Observation {
            subject,
            component,
            time,
            value,
        });
    }
    MixedDataset::new(subjects, components, observations)
}

/// `m` equidistant points on [0, 1], endpoints included.
pub fn regular_grid(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least 2 points, got {m}"
        )));
    }
    let h = 1.0 / (m - 1) as f64;
    Ok((0..m)
        .map(|i| if i == m - 1 { 1.0 } else { i as f64 * h })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sidecar() -> Sidecar {
        Sidecar {
            components: vec![
                SidecarComponent {
                    name: "mood".into(),
                    kind: "binary".into(),
                    levels: None,
                },
                SidecarComponent {
                    name: "activity".into(),
                    kind: "continuous".into(),
                    levels: None,
                },
            ],
            time_range: [0.0, 10.0],
        }
    }

    fn parse(text: &str) -> Result<MixedDataset> {
        let reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        read_dataset(reader, &Schema::default(), &sidecar())
    }

    #[test]
    fn four_rows_one_subject() {
        let ds = parse(
            "subject_id,component,time,value\n\
             a,mood,0,1\na,mood,5,0\na,activity,0,2.5\na,activity,10,-1\n",
        )
        .unwrap();
        assert_eq!(ds.n_subjects(), 1);
        assert_eq!(ds.n_components(), 2);
        assert_eq!(ds.pooled_times(), &[0.0, 0.5, 1.0]);
        assert!(ds.pooled_times().len() <= 4);
    }

    #[test]
    fn binary_value_out_of_range() {
        let err = parse("subject_id,component,time,value\na,mood,2,3\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("(a, mood, 0.2)"), "{msg}");
    }

    #[test]
    fn empty_file() {
        let err = parse("subject_id,component,time,value\n").unwrap_err();
        assert_eq!(err.to_string(), "no observations");
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let err = parse("subject_id,component,time,value\na,mood,1,0\na,mood,x,1\n").unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_triple_rejected() {
        let err = parse("subject_id,component,time,value\na,mood,1,0\na,mood,1,1\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn numeric_component_index() {
        let ds = parse("subject_id,component,time,value\na,2,1,0.3\n").unwrap();
        assert_eq!(ds.observations()[0].component, 1);
    }

    #[test]
    fn grids() {
        assert!(regular_grid(1).is_err());
        assert_eq!(regular_grid(2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(regular_grid(3).unwrap(), vec![0.0, 0.5, 1.0]);
        let g = regular_grid(16).unwrap();
        assert_eq!(g.len(), 16);
        for w in g.windows(2) {
            assert!((w[1] - w[0] - 1.0 / 15.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ordinal_needs_two_levels() {
        assert!(VariableType::ordinal(1).is_err());
        assert!(VariableType::ordinal(2).is_ok());
        let t = VariableType::ordinal(4).unwrap();
        assert!(t.admits(3.0) && !t.admits(4.0) && !t.admits(1.5));
    }
}
