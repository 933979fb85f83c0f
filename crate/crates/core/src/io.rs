//! File formats.
//!
//! | file | format |
//! |------|--------|
//! | testbed | CSV `model,orig_correct,orig_total,new_correct,new_total` or `model,orig_acc,new_acc` (percent), optional trailing `family` |
//! | annotations | JSONL `{"image_id","class_id","selected","shown","keyword"?}` |
//! | per-image evals | CSV `image_id,selected,shown,<model>...` with 0/1 cells |
//! | embeddings | CSV `image_id,<v0>,<v1>...` with a header row, or JSONL `{"image_id","values"}` |
//! | dataset manifest | JSONL `{"image_id","class_id","bin_index","strategy"}` |
//! | review list | CSV `id_a,id_b,metric,score` |
//! | band | TSV `x lower point upper` |

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dedup::{EmbeddingVector, ReviewPair};
use crate::regression::{BandPoint, PairedAccuracy};
use crate::sampling::{AnnotatedImage, SampledDataset, SelectionHistogram};
use crate::stats::AccuracyRecord;
use crate::testbed::{AccuracyMetric, EvalSet, PerImageEval, ReportRow, TestbedTable};
use crate::{Error, Result};

fn malformed(line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        line,
        message: message.into(),
    }
}

/// Parses a percentage with a finite decimal expansion into an exact
/// fraction: `"95.5"` becomes 955 out of 1000.
pub fn parse_percent(text: &str) -> Option<(u64, u64)> {
    let text = text.trim();
    let (int, frac) = match text.split_once('.') {
        Some((i, f)) => (i, f),
        None => (text, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 6 {
        return None;
    }
    let scale = 10u64.pow(frac.len() as u32);
    let whole: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let part: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    let numerator = whole.checked_mul(scale)?.checked_add(part)?;
    let denominator = 100 * scale;
    (numerator <= denominator).then_some((numerator, denominator))
}

/// Reads a testbed table. Count-form rows are preferred; percent-form rows
/// mark the table as digitized.
pub fn parse_testbed(reader: impl std::io::Read, dataset: &str) -> Result<TestbedTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let model = col("model").ok_or_else(|| malformed(1, "missing `model` column"))?;
    let counts = [col("orig_correct"), col("orig_total"), col("new_correct"), col("new_total")];
    let percents = [col("orig_acc"), col("new_acc")];
    let family = col("family");
    let has_counts = counts.iter().all(Option::is_some);
    let has_percents = percents.iter().all(Option::is_some);
    if !has_counts && !has_percents {
        return Err(malformed(
            1,
            "header needs orig_correct,orig_total,new_correct,new_total or orig_acc,new_acc",
        ));
    }

    let mut rows = Vec::new();
    let mut families = BTreeMap::new();
    let mut digitized = false;
    let mut seen = std::collections::BTreeSet::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(line, e.to_string()))?;
        let field = |idx: Option<usize>| idx.and_then(|k| record.get(k)).filter(|s| !s.is_empty());
        let id = field(Some(model)).ok_or_else(|| malformed(line, "empty model id"))?.to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateModel(id));
        }
        let count_cells: Vec<_> = counts.iter().map(|&c| field(c)).collect();
        let percent_cells: Vec<_> = percents.iter().map(|&c| field(c)).collect();
        let count_form = count_cells.iter().any(Option::is_some);
        let percent_form = percent_cells.iter().any(Option::is_some);
        let (orig, new) = match (count_form, percent_form) {
            (true, true) => {
                return Err(malformed(line, format!("`{id}` gives both counts and percentages")))
            }
            (false, false) => return Err(malformed(line, format!("`{id}` has no accuracies"))),
            (true, false) => {
                let mut v = [0u64; 4];
                for (slot, cell) in v.iter_mut().zip(&count_cells) {
                    let cell = cell.ok_or_else(|| malformed(line, "incomplete count columns"))?;
                    *slot = cell
                        .parse()
                        .map_err(|_| malformed(line, format!("`{cell}` is not a count")))?;
                }
                ((v[0], v[1]), (v[2], v[3]))
            }
            (false, true) => {
                digitized = true;
                let mut v = [(0u64, 1u64); 2];
                for (slot, cell) in v.iter_mut().zip(&percent_cells) {
                    let cell = cell.ok_or_else(|| malformed(line, "incomplete percentage columns"))?;
                    *slot = parse_percent(cell)
                        .ok_or_else(|| malformed(line, format!("`{cell}` is not a percentage")))?;
                }
                (v[0], v[1])
            }
        };
        let orig = AccuracyRecord::new(id.clone(), orig.0, orig.1)
            .map_err(|e| malformed(line, e.to_string()))?;
        let new = AccuracyRecord::new(id.clone(), new.0, new.1)
            .map_err(|e| malformed(line, e.to_string()))?;
        if let Some(f) = field(family) {
            families.insert(id.clone(), f.to_string());
        }
        rows.push(PairedAccuracy::new(orig, new)?);
    }
    if rows.is_empty() {
        return Err(Error::NoRows);
    }
    let mut table = TestbedTable::new(rows, AccuracyMetric::Top1, dataset)?;
    table.families = families;
    table.digitized = digitized;
    Ok(table)
}

pub fn load_testbed(path: &Path) -> Result<TestbedTable> {
    let dataset = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_testbed(std::fs::File::open(path)?, &dataset)
}

/// Writes a table in count form.
pub fn write_testbed(table: &TestbedTable, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "orig_correct", "orig_total", "new_correct", "new_total"])?;
    for r in &table.rows {
        w.write_record([
            r.model_id.clone(),
            r.orig.correct.to_string(),
            r.orig.total.to_string(),
            r.new.correct.to_string(),
            r.new.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationLine {
    image_id: String,
    class_id: String,
    selected: u32,
    shown: u32,
    #[serde(default)]
    keyword: Option<String>,
}

pub fn parse_annotations(reader: impl BufRead) -> Result<Vec<AnnotatedImage>> {
    let mut images = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: AnnotationLine =
            serde_json::from_str(&line).map_err(|e| malformed(line_no, e.to_string()))?;
        let image = AnnotatedImage {
            image_id: raw.image_id,
            class_id: raw.class_id,
            selected: raw.selected,
            shown: raw.shown,
            keyword: raw.keyword,
        };
        image.validate().map_err(|e| malformed(line_no, e.to_string()))?;
        images.push(image);
    }
    Ok(images)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotatedImage>> {
    parse_annotations(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn write_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>, mut writer: impl Write) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, &item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_annotations(images: &[AnnotatedImage], writer: impl Write) -> Result<()> {
    write_jsonl(images, writer)
}

pub fn write_dataset_manifest(dataset: &SampledDataset, writer: impl Write) -> Result<()> {
    write_jsonl(&dataset.entries, writer)
}

pub fn write_histograms(histograms: &BTreeMap<String, SelectionHistogram>, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["class_id", "bin0", "bin1", "bin2", "bin3", "bin4"])?;
    for h in histograms.values() {
        let mut rec = vec![h.class_id.clone()];
        rec.extend(h.bin_mass.iter().map(|m| m.to_string()));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_histograms(reader: impl std::io::Read) -> Result<BTreeMap<String, SelectionHistogram>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        if rec.len() != 6 {
            return Err(malformed(line, "expected class_id and five bin masses"));
        }
        let mut mass = [0.0; 5];
        for (m, cell) in mass.iter_mut().zip(rec.iter().skip(1)) {
            *m = cell.trim().parse().map_err(|_| malformed(line, format!("bad mass `{cell}`")))?;
        }
        let h = SelectionHistogram::new(&rec[0], mass).map_err(|e| malformed(line, e.to_string()))?;
        out.insert(h.class_id.clone(), h);
    }
    Ok(out)
}

pub fn parse_evals(reader: impl std::io::Read) -> Result<EvalSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 4 || &headers[0] != "image_id" || &headers[1] != "selected" || &headers[2] != "shown" {
        return Err(malformed(1, "header must be image_id,selected,shown,<model>..."));
    }
    let model_ids: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
    let mut images = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        let num = |k: usize| -> Result<u32> {
            rec[k].parse().map_err(|_| malformed(line, format!("`{}` is not a count", &rec[k])))
        };
        let correct = rec
            .iter()
            .skip(3)
            .map(|c| match c {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(malformed(line, format!("`{other}` is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        images.push(PerImageEval {
            image_id: rec[0].to_string(),
            selected: num(1)?,
            shown: num(2)?,
            correct,
        });
    }
    EvalSet::new(model_ids, images)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingVector>> {
    let file = std::fs::File::open(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        let mut out = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?);
        }
        return Ok(out);
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>().map_err(|_| malformed(line, format!("`{c}` is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(EmbeddingVector {
            image_id: rec.get(0).unwrap_or_default().to_string(),
            values,
        });
    }
    Ok(out)
}

pub fn write_review_list(pairs: &[ReviewPair], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id_a", "id_b", "metric", "score"])?;
    for p in pairs {
        for (metric, score) in &p.hits {
            w.write_record([p.id_a.as_str(), p.id_b.as_str(), metric.name(), &score.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_band_tsv(points: &[BandPoint], mut writer: impl Write) -> Result<()> {
    writeln!(writer, "x\tlower\tpoint\tupper")?;
    for p in points {
        writeln!(writer, "{}\t{}\t{}\t{}", p.x, p.lower, p.point, p.upper)?;
    }
    writer.flush()?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

/// Per-model report; accuracies at one decimal in percent.
pub fn write_report(rows: &[ReportRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "orig_rank",
        "model",
        "orig_acc",
        "orig_ci_lower",
        "orig_ci_upper",
        "new_acc",
        "new_ci_lower",
        "new_ci_upper",
        "gap",
        "new_rank",
        "delta_rank",
    ])?;
    for r in rows {
        w.write_record([
            r.orig_rank.to_string(),
            r.model.clone(),
            format!("{:.1}", r.orig_acc),
            fmt_opt(r.orig_ci_lower),
            fmt_opt(r.orig_ci_upper),
            format!("{:.1}", r.new_acc),
            fmt_opt(r.new_ci_lower),
            fmt_opt(r.new_ci_upper),
            format!("{:.1}", r.gap),
            r.new_rank.to_string(),
            r.delta_rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce one command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub rng_scheme: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_parsing_is_exact() {
        assert_eq!(parse_percent("95.5"), Some((955, 1000)));
        assert_eq!(parse_percent("100"), Some((100, 100)));
        assert_eq!(parse_percent("0.25"), Some((25, 10000)));
        assert_eq!(parse_percent(" 7. "), Some((7, 100)));
        assert_eq!(parse_percent("100.1"), None);
        assert_eq!(parse_percent("-3"), None);
        assert_eq!(parse_percent("abc"), None);
        assert_eq!(parse_percent(""), None);
    }

    #[test]
    fn testbed_count_form() {
        let csv = "model,orig_correct,orig_total,new_correct,new_total\na,90,100,80,100\nb,70,100,50,100\n";
        let t = parse_testbed(csv.as_bytes(), "t").unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(!t.digitized);
        assert_eq!(t.rows[1].new.point(), 0.5);
    }

    #[test]
    fn testbed_percent_form_with_family() {
        let csv = "model,orig_acc,new_acc,family\na,82.9,72.2,convnet\nb,35.1,24.1,fisher_vector\n";
        let t = parse_testbed(csv.as_bytes(), "t").unwrap();
        assert!(t.digitized);
        assert_eq!(t.rows[0].orig.correct, 829);
        assert_eq!(t.with_family("convnet").rows.len(), 1);
    }

    #[test]
    fn testbed_errors() {
        let empty = "model,orig_acc,new_acc\n";
        assert_eq!(parse_testbed(empty.as_bytes(), "t").unwrap_err().to_string(), "no rows");

        let dup = "model,orig_acc,new_acc\na,1,2\na,3,4\n";
        assert!(matches!(parse_testbed(dup.as_bytes(), "t"), Err(Error::DuplicateModel(m)) if m == "a"));

        let both = "model,orig_correct,orig_total,new_correct,new_total,orig_acc,new_acc\na,1,2,1,2,50,50\n";
        assert!(matches!(parse_testbed(both.as_bytes(), "t"), Err(Error::Malformed { line: 2, .. })));

        let bad = "model,orig_acc,new_acc\na,1,2\nb,x,2\n";
        assert!(matches!(parse_testbed(bad.as_bytes(), "t"), Err(Error::Malformed { line: 3, .. })));

        let over = "model,orig_correct,orig_total,new_correct,new_total\na,5,4,1,2\n";
        assert!(matches!(parse_testbed(over.as_bytes(), "t"), Err(Error::Malformed { line: 2, .. })));

        let header = "name,acc\na,1\n";
        assert!(parse_testbed(header.as_bytes(), "t").is_err());
    }

    #[test]
    fn annotations_parse_and_validate() {
        let ok = r#"{"image_id":"a","class_id":"c1","selected":7,"shown":10}"#;
        let images = parse_annotations(ok.as_bytes()).unwrap();
        assert_eq!(images[0].frequency(), 0.7);

        let zero = r#"{"image_id":"a","class_id":"c1","selected":0,"shown":0}"#;
        assert!(parse_annotations(zero.as_bytes()).is_err());

        let over = "\n{\"image_id\":\"a\",\"class_id\":\"c1\",\"selected\":3,\"shown\":2}";
        assert!(matches!(parse_annotations(over.as_bytes()), Err(Error::Malformed { line: 2, .. })));

        let stored = r#"{"image_id":"a","class_id":"c1","selected":1,"shown":2,"frequency":0.5}"#;
        assert!(parse_annotations(stored.as_bytes()).is_err());
    }

    #[test]
    fn evals_parse() {
        let csv = "image_id,selected,shown,m1,m2\na,1,10,1,0\nb,9,10,1,1\n";
        let e = parse_evals(csv.as_bytes()).unwrap();
        assert_eq!(e.model_ids, ["m1", "m2"]);
        assert_eq!(e.images[1].correct, [true, true]);
        assert!(parse_evals("image_id,selected,shown,m1\na,1,10,2\n".as_bytes()).is_err());
    }

    #[test]
    fn histogram_csv_roundtrip() {
        let h = BTreeMap::from([(
            "c".to_string(),
            SelectionHistogram::new("c", [0.1, 0.2, 0.3, 0.2, 0.2]).unwrap(),
        )]);
        let mut buf = Vec::new();
        write_histograms(&h, &mut buf).unwrap();
        assert_eq!(parse_histograms(&buf[..]).unwrap(), h);
    }
}
