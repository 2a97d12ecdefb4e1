//! File formats: graph and weights JSON, comparison, simulation and
//! experiment CSVs, and the plain-text report.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bt::{BTScores, ComparisonRecord, Normalization, PresentationOrder};
use crate::clearing::ClearingResult;
use crate::error::{Error, Result};
use crate::experiment::{RawRow, SummaryRow};
use crate::graph::{BloodClass, BloodType, CompatibilityGraph, Profile, Vertex, VertexKind};
use crate::sim::RunMetrics;
use crate::weights::ProfileWeights;

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

// ---------------------------------------------------------------------------
// Graphs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Pair,
    Altruist,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VertexRecord {
    id: u32,
    kind: KindTag,
    donor_blood: BloodType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patient_blood: Option<BloodType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profile_id: Option<Profile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    vertices: Vec<VertexRecord>,
    edges: Vec<(u32, u32)>,
}

impl VertexRecord {
    fn into_vertex(self) -> Result<Vertex> {
        match (self.kind, self.patient_blood, self.profile_id) {
            (KindTag::Pair, Some(patient), Some(profile)) => Ok(Vertex::pair(self.id, self.donor_blood, patient, profile)),
            (KindTag::Pair, _, _) => Err(Error::graph(format!(
                "pair {} needs both patient_blood and profile_id",
                self.id
            ))),
            (KindTag::Altruist, None, None) => Ok(Vertex::altruist(self.id, self.donor_blood)),
            (KindTag::Altruist, _, _) => Err(Error::graph(format!(
                "altruist {} cannot have a patient_blood or profile_id",
                self.id
            ))),
        }
    }

    fn from_vertex(v: &Vertex) -> Self {
        match v.kind {
            VertexKind::Pair {
                patient_blood,
                profile,
            } => VertexRecord {
                id: v.id,
                kind: KindTag::Pair,
                donor_blood: v.donor_blood,
                patient_blood: Some(patient_blood),
                profile_id: Some(profile),
            },
            VertexKind::Altruist => VertexRecord {
                id: v.id,
                kind: KindTag::Altruist,
                donor_blood: v.donor_blood,
                patient_blood: None,
                profile_id: None,
            },
        }
    }
}

/// Parses and validates a graph document.
pub fn parse_graph(json: &str) -> Result<CompatibilityGraph> {
    let file: GraphFile = serde_json::from_str(json)?;
    let vertices = file
        .vertices
        .into_iter()
        .map(VertexRecord::into_vertex)
        .collect::<Result<Vec<_>>>()?;
    CompatibilityGraph::new(vertices, file.edges)
}

pub fn read_graph(path: &Path) -> Result<CompatibilityGraph> {
    parse_graph(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))
}

pub fn graph_to_json(graph: &CompatibilityGraph) -> String {
    let file = GraphFile {
        vertices: graph.vertices().iter().map(VertexRecord::from_vertex).collect(),
        edges: graph.edges().into_iter().collect(),
    };
    serde_json::to_string_pretty(&file).expect("graph documents always serialize")
}

// ---------------------------------------------------------------------------
// Comparisons

pub const COMPARISON_HEADER: [&str; 5] = ["respondent_id", "profile_a", "profile_b", "chosen", "order"];

fn parse_profile(field: &str, name: &str) -> std::result::Result<Profile, String> {
    let id: u8 = field
        .trim()
        .parse()
        .map_err(|_| format!("{name} {field:?} is not a profile id"))?;
    Profile::new(id).map_err(|e| format!("{name}: {e}"))
}

/// Reads comparison records. Row numbers in errors count data rows from 1.
pub fn read_comparisons<R: Read>(reader: R) -> Result<Vec<ComparisonRecord>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers()?.clone();
    if header.iter().map(str::trim).ne(COMPARISON_HEADER) {
        return Err(Error::Ingest {
            row: 0,
            msg: format!("expected header {}, found {}", COMPARISON_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut records = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row_number = i + 1;
        let ingest = |msg: String| Error::Ingest { row: row_number, msg };
        let row = row.map_err(|e| ingest(e.to_string()))?;
        let a = parse_profile(&row[1], "profile_a").map_err(ingest)?;
        let b = parse_profile(&row[2], "profile_b").map_err(ingest)?;
        let chosen = parse_profile(&row[3], "chosen").map_err(ingest)?;
        let order: PresentationOrder = row[4].trim().parse().map_err(|e: Error| ingest(e.to_string()))?;
        let record = ComparisonRecord::new(row[0].trim(), a, b, chosen, order).map_err(|e| ingest(e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_comparisons_file(path: &Path) -> Result<Vec<ComparisonRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    read_comparisons(file).map_err(|e| e.context(path.display().to_string()))
}

pub fn write_comparisons<W: Write>(writer: W, records: &[ComparisonRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(COMPARISON_HEADER)?;
    for r in records {
        let order = match r.order {
            PresentationOrder::Original => "original",
            PresentationOrder::Reversed => "reversed",
        };
        csv.write_record([
            r.respondent_id.as_str(),
            &r.profile_a.id().to_string(),
            &r.profile_b.id().to_string(),
            &r.chosen.id().to_string(),
            order,
        ])?;
    }
    csv.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Weights

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    pub scores: ProfileWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

impl WeightsFile {
    pub fn from_fit(fit: &BTScores) -> Result<Self> {
        Ok(WeightsFile {
            normalization: Some(fit.normalization),
            scores: fit.profile_scores()?,
            log_likelihood: Some(fit.log_likelihood),
            converged: Some(fit.converged),
        })
    }

    /// Bare scores; tagged `max_is_one` when the largest score is exactly 1.
    pub fn from_scores(scores: ProfileWeights) -> Self {
        let max = scores.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        WeightsFile {
            normalization: (max == 1.0).then_some(Normalization::MaxIsOne),
            scores,
            log_likelihood: None,
            converged: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights always serialize")
    }
}

/// Accepts either the full weights document or a bare `{"1": w1, ...}` map.
pub fn parse_weights(json: &str) -> Result<ProfileWeights> {
    if let Ok(file) = serde_json::from_str::<WeightsFile>(json) {
        return Ok(file.scores);
    }
    serde_json::from_str::<ProfileWeights>(json).map_err(|e| {
        Error::param(format!(
            "weights must be a profile map {{\"1\": .., \"8\": ..}} or an object with \"scores\": {e}"
        ))
    })
}

pub fn read_weights(path: &Path) -> Result<ProfileWeights> {
    parse_weights(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))
}

pub fn write_weights(path: &Path, weights: &WeightsFile) -> Result<()> {
    write_file(path, &(weights.to_json() + "\n"))
}

// ---------------------------------------------------------------------------
// Clearing results

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingOutput {
    #[serde(rename = "Q")]
    pub q: usize,
    pub weighted_value: f64,
    pub cycles: Vec<Vec<u32>>,
    pub matched_pairs: Vec<u32>,
}

impl From<&ClearingResult> for ClearingOutput {
    fn from(r: &ClearingResult) -> Self {
        let selected = r.selected();
        ClearingOutput {
            q: r.q,
            weighted_value: r.weighted_value,
            cycles: selected.cycles().iter().map(|c| c.vertex_ids().to_vec()).collect(),
            matched_pairs: selected.matched_pair_ids().into_iter().collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Simulation output

pub const SIMULATION_HEADER: [&str; 6] = ["run", "mode", "profile", "blood_class", "entered", "matched"];
pub const TRACE_HEADER: [&str; 4] = ["run", "day", "pool_size", "matched_today"];

/// One row per (run, profile, blood class).
pub fn write_simulation_csv<W: Write>(writer: W, runs: &[RunMetrics]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(SIMULATION_HEADER)?;
    for (run, metrics) in runs.iter().enumerate() {
        for profile in Profile::ALL {
            for class in BloodClass::ALL {
                let cell = metrics.cell(profile, class);
                csv.write_record([
                    run.to_string(),
                    metrics.mode.to_string(),
                    profile.id().to_string(),
                    class.as_str().to_string(),
                    cell.entered.to_string(),
                    cell.matched.to_string(),
                ])?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(writer: W, runs: &[RunMetrics]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(TRACE_HEADER)?;
    for (run, metrics) in runs.iter().enumerate() {
        for d in &metrics.days {
            csv.write_record([
                run.to_string(),
                d.day.to_string(),
                d.pool_size.to_string(),
                d.matched_today.to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Experiment output

pub const RAW_HEADER: [&str; 7] = ["arm", "run", "profile", "blood_class", "entered", "matched", "proportion"];
pub const SUMMARY_HEADER: [&str; 9] = [
    "arm",
    "profile",
    "group",
    "q1",
    "median",
    "q3",
    "lo_whisker",
    "hi_whisker",
    "n_outliers",
];

/// The proportion column is empty when nothing entered.
pub fn write_raw_csv<W: Write>(writer: W, rows: &[RawRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(RAW_HEADER)?;
    for r in rows {
        csv.write_record([
            r.arm.clone(),
            r.run.to_string(),
            r.profile.id().to_string(),
            r.blood_class.as_str().to_string(),
            r.entered.to_string(),
            r.matched.to_string(),
            r.proportion().map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_raw_csv<R: Read>(reader: R) -> Result<Vec<RawRow>> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let ingest = |msg: String| Error::Ingest { row: i + 1, msg };
        let record = record.map_err(|e| ingest(e.to_string()))?;
        if record.len() != RAW_HEADER.len() {
            return Err(ingest(format!("expected {} fields, found {}", RAW_HEADER.len(), record.len())));
        }
        let number = |j: usize| -> Result<u64> {
            record[j]
                .parse()
                .map_err(|_| ingest(format!("{} {:?} is not a count", RAW_HEADER[j], &record[j])))
        };
        rows.push(RawRow {
            arm: record[0].to_string(),
            run: number(1)? as usize,
            profile: parse_profile(&record[2], "profile").map_err(ingest)?,
            blood_class: record[3].parse().map_err(|e: Error| ingest(e.to_string()))?,
            entered: number(4)?,
            matched: number(5)?,
        });
    }
    Ok(rows)
}

/// A parsed line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub arm: String,
    pub profile: Profile,
    pub group: String,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lo_whisker: f64,
    pub hi_whisker: f64,
    pub n_outliers: usize,
}

impl From<&SummaryRow> for SummaryRecord {
    fn from(r: &SummaryRow) -> Self {
        SummaryRecord {
            arm: r.arm.clone(),
            profile: r.profile,
            group: r.group.to_string(),
            q1: r.stats.q1,
            median: r.stats.median,
            q3: r.stats.q3,
            lo_whisker: r.stats.lo_whisker,
            hi_whisker: r.stats.hi_whisker,
            n_outliers: r.stats.outliers.len(),
        }
    }
}

pub fn write_summary_csv<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(SUMMARY_HEADER)?;
    for r in rows.iter().map(SummaryRecord::from) {
        csv.write_record([
            r.arm,
            r.profile.id().to_string(),
            r.group,
            r.q1.to_string(),
            r.median.to_string(),
            r.q3.to_string(),
            r.lo_whisker.to_string(),
            r.hi_whisker.to_string(),
            r.n_outliers.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(reader: R) -> Result<Vec<SummaryRecord>> {
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.clone();
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(Error::Ingest {
            row: 0,
            msg: format!("expected header {}", SUMMARY_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let ingest = |msg: String| Error::Ingest { row: i + 1, msg };
        let record = record.map_err(|e| ingest(e.to_string()))?;
        let real = |j: usize| -> Result<f64> {
            record[j]
                .parse()
                .map_err(|_| ingest(format!("{} {:?} is not a number", SUMMARY_HEADER[j], &record[j])))
        };
        rows.push(SummaryRecord {
            arm: record[0].to_string(),
            profile: parse_profile(&record[1], "profile").map_err(ingest)?,
            group: record[2].to_string(),
            q1: real(3)?,
            median: real(4)?,
            q3: real(5)?,
            lo_whisker: real(6)?,
            hi_whisker: real(7)?,
            n_outliers: record[8]
                .parse()
                .map_err(|_| ingest(format!("n_outliers {:?} is not a count", &record[8])))?,
        });
    }
    Ok(rows)
}

/// Renders summary rows as a column-aligned table.
pub fn render_report(rows: &[SummaryRecord]) -> String {
    let mut table: Vec<Vec<String>> = vec![SUMMARY_HEADER.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        table.push(vec![
            r.arm.clone(),
            r.profile.id().to_string(),
            r.group.clone(),
            format!("{:.4}", r.q1),
            format!("{:.4}", r.median),
            format!("{:.4}", r.q3),
            format!("{:.4}", r.lo_whisker),
            format!("{:.4}", r.hi_whisker),
            r.n_outliers.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..SUMMARY_HEADER.len())
        .map(|j| table.iter().map(|row| row[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (cell, &w))| {
                // Text columns left-aligned, numbers right-aligned.
                if j == 0 || j == 2 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn graph_round_trip() {
        let g = fixtures::fig2(Profile::ALL[..4].try_into().unwrap());
        let json = graph_to_json(&g);
        let back = parse_graph(&json).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.vertices(), g.vertices());
    }

    #[test]
    fn graph_with_altruist() {
        let json = r#"{"vertices":[
            {"id":1,"kind":"pair","donor_blood":"A","patient_blood":"O","profile_id":3},
            {"id":2,"kind":"altruist","donor_blood":"O"}],
            "edges":[[2,1],[1,2]]}"#;
        let g = parse_graph(json).unwrap();
        assert!(g.vertex(2).unwrap().is_altruist());
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn graph_rejections() {
        let missing_profile = r#"{"vertices":[{"id":1,"kind":"pair","donor_blood":"A","patient_blood":"O"}],"edges":[]}"#;
        assert!(matches!(parse_graph(missing_profile), Err(Error::Graph(_))));
        let altruist_patient = r#"{"vertices":[{"id":1,"kind":"altruist","donor_blood":"A","patient_blood":"O"}],"edges":[]}"#;
        assert!(matches!(parse_graph(altruist_patient), Err(Error::Graph(_))));
        let incompatible = r#"{"vertices":[
            {"id":1,"kind":"pair","donor_blood":"A","patient_blood":"B","profile_id":1},
            {"id":2,"kind":"pair","donor_blood":"AB","patient_blood":"O","profile_id":1}],
            "edges":[[2,1]]}"#;
        assert!(matches!(parse_graph(incompatible), Err(Error::Graph(_))));
        assert!(parse_graph(r#"{"vertices":[{"id":1,"kind":"donor","donor_blood":"A"}],"edges":[]}"#).is_err());
        assert!(parse_graph(r#"{"vertices":[],"edges":[],"extra":1}"#).is_err());
    }

    #[test]
    fn comparisons_round_trip() {
        let text = "respondent_id,profile_a,profile_b,chosen,order\nr1,1,8,1,original\nr2,3,2,2,reversed\n";
        let records = read_comparisons(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].chosen.id(), 2);
        assert_eq!(records[1].order, PresentationOrder::Reversed);
        let mut buf = Vec::new();
        write_comparisons(&mut buf, &records).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn comparison_errors_name_the_row() {
        let cases = [
            "respondent_id,profile_a,profile_b,chosen,order\nr1,1,8,1,original\nr2,1,9,1,original\n",
            "respondent_id,profile_a,profile_b,chosen,order\nr1,1,8,1,original\nr2,1,8,4,original\n",
            "respondent_id,profile_a,profile_b,chosen,order\nr1,1,8,1,original\nr2,1,8,1,sideways\n",
            "respondent_id,profile_a,profile_b,chosen,order\nr1,1,8,1,original\nr2,1,8\n",
        ];
        for text in cases {
            match read_comparisons(text.as_bytes()) {
                Err(Error::Ingest { row, .. }) => assert_eq!(row, 2, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        let bad_header = "id,a,b,chosen,order\n";
        assert!(matches!(read_comparisons(bad_header.as_bytes()), Err(Error::Ingest { row: 0, .. })));
    }

    #[test]
    fn weights_formats() {
        let bare = r#"{"1":1,"2":0.5,"3":0.5,"4":0.5,"5":0.5,"6":0.5,"7":0.5,"8":0.25}"#;
        let w = parse_weights(bare).unwrap();
        assert_eq!(w.get(Profile::ALL[7]), 0.25);
        let full = WeightsFile::from_scores(w).to_json();
        assert!(full.contains("\"normalization\": \"max_is_one\""));
        assert_eq!(parse_weights(&full).unwrap(), w);
        assert!(parse_weights(r#"{"1":1}"#).is_err());
    }

    #[test]
    fn summary_round_trip_and_report() {
        use crate::experiment::{summarize, Group};
        let raw: Vec<RawRow> = (0..3)
            .map(|run| RawRow {
                arm: "A".into(),
                run,
                profile: Profile::ALL[0],
                blood_class: BloodClass::Overdemanded,
                entered: 10,
                matched: 5 + run as u64,
            })
            .collect();
        let mut buf = Vec::new();
        write_raw_csv(&mut buf, &raw).unwrap();
        assert_eq!(read_raw_csv(buf.as_slice()).unwrap(), raw);

        let summary = summarize(&raw, &[Group::All]);
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &summary).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("arm,profile,group,q1,median,q3,lo_whisker,hi_whisker,n_outliers\nA,1,all,"));
        let records = read_summary_csv(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        assert!((records[0].q1 - 0.55).abs() < 1e-12);
        assert!((records[0].q3 - 0.65).abs() < 1e-12);
        let report = render_report(&records);
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split_whitespace().take(3).collect::<Vec<_>>(), ["A", "1", "all"]);
        assert_eq!(lines[0].find("q1"), lines[1].find("0.5500").map(|i| i + 4));
        assert!(lines[1].contains("0.6000"));
    }
}
