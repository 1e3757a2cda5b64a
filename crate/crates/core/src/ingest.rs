//! Dataset files: companies (CSV or JSON), edges (CSV), global knowledge (text).
//!
//! Company columns are `id`, `industry`, `knowledge`, then one column per
//! feature and timestamp named `<feature>@<t>`. Any other column is an extra
//! static attribute. Timestamp order is the order in which labels first
//! appear in the company header. Edge rows are `supplier_id,customer_id,t`
//! where `t` is a timestamp label (or, failing that, a zero-based index).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::model::{CompanyId, CompanyRecord, Dataset, Edge, EdgeSet, FeatureVector, ModelError};

const ID: &str = "id";
const INDUSTRY: &str = "industry";
const KNOWLEDGE: &str = "knowledge";

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> ModelError {
    ModelError::ParseError {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, ModelError> {
    if !path.exists() {
        return Err(ModelError::MissingFile(path.display().to_string()));
    }
    fs::read_to_string(path).map_err(|e| parse_err(&path.display().to_string(), 0, e.to_string()))
}

pub fn load_dataset(companies: &Path, edges: &Path, knowledge: &Path) -> Result<Dataset, ModelError> {
    let companies_text = read(companies)?;
    let edges_text = read(edges)?;
    let knowledge_text = read(knowledge)?;
    let is_json = companies
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || companies_text.trim_start().starts_with('[');
    let table = if is_json {
        companies_table_from_json(&companies_text)?
    } else {
        companies_table_from_csv(&companies_text)?
    };
    dataset_from_parts(table, &edges_text, knowledge_text)
}

/// Parses in-memory file contents; used by the HTTP upload endpoint.
pub fn parse_dataset(companies: &str, edges: &str, knowledge: &str) -> Result<Dataset, ModelError> {
    let table = if companies.trim_start().starts_with('[') {
        companies_table_from_json(companies)?
    } else {
        companies_table_from_csv(companies)?
    };
    dataset_from_parts(table, edges, knowledge.to_string())
}

/// Header plus rows of raw cell strings, with the source line of each row.
struct Table {
    file: &'static str,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn companies_table_from_csv(text: &str) -> Result<Table, ModelError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err("companies", 1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err("companies", line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table {
        file: "companies",
        header,
        rows,
    })
}

fn companies_table_from_json(text: &str) -> Result<Table, ModelError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| parse_err("companies", e.line(), e.to_string()))?;
    let items = value
        .as_array()
        .ok_or_else(|| parse_err("companies", 1, "expected a JSON array of company objects"))?;
    let mut header: Vec<String> = Vec::new();
    let mut objects = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let obj = item
            .as_object()
            .ok_or_else(|| parse_err("companies", i + 1, "expected an object"))?;
        for key in obj.keys() {
            if !header.contains(key) {
                header.push(key.clone());
            }
        }
        objects.push(obj);
    }
    let rows = objects
        .into_iter()
        .enumerate()
        .map(|(i, obj)| {
            let cells = header
                .iter()
                .map(|h| match obj.get(h) {
                    None | Some(serde_json::Value::Null) => String::new(),
                    Some(serde_json::Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                })
                .collect();
            (i + 1, cells)
        })
        .collect();
    Ok(Table {
        file: "companies",
        header,
        rows,
    })
}

fn dataset_from_parts(table: Table, edges_text: &str, knowledge: String) -> Result<Dataset, ModelError> {
    let col = |name: &str| {
        table
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(table.file, 1, format!("missing column `{name}`")))
    };
    let id_col = col(ID)?;
    let industry_col = col(INDUSTRY)?;
    let knowledge_col = table.header.iter().position(|h| h == KNOWLEDGE);

    let mut feature_names: Vec<String> = Vec::new();
    let mut timestamps: Vec<String> = Vec::new();
    let mut feature_cols: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut extra_cols = Vec::new();
    for (i, h) in table.header.iter().enumerate() {
        if i == id_col || i == industry_col || Some(i) == knowledge_col {
            continue;
        }
        match h.rsplit_once('@') {
            Some((feature, t)) if !feature.is_empty() && !t.is_empty() => {
                let f = position_or_push(&mut feature_names, feature);
                let ti = position_or_push(&mut timestamps, t);
                if feature_cols.insert((f, ti), i).is_some() {
                    return Err(parse_err(table.file, 1, format!("duplicate column `{h}`")));
                }
            }
            _ => extra_cols.push(i),
        }
    }
    if timestamps.is_empty() || feature_names.is_empty() {
        return Err(parse_err(table.file, 1, "no `<feature>@<t>` columns"));
    }
    for f in 0..feature_names.len() {
        for t in 0..timestamps.len() {
            if !feature_cols.contains_key(&(f, t)) {
                return Err(parse_err(
                    table.file,
                    1,
                    format!("missing column `{}@{}`", feature_names[f], timestamps[t]),
                ));
            }
        }
    }

    let mut companies = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, cells) in &table.rows {
        let cell = |i: usize| cells.get(i).map(String::as_str).unwrap_or("");
        let id = CompanyId::new(cell(id_col).trim())
            .map_err(|_| parse_err(table.file, *line, "empty company id"))?;
        if !seen.insert(id.clone()) {
            return Err(parse_err(table.file, *line, format!("duplicate company `{id}`")));
        }
        let industry = cell(industry_col).trim().to_string();
        if industry.is_empty() {
            return Err(parse_err(table.file, *line, format!("company `{id}` has no industry")));
        }
        let mut features = Vec::with_capacity(timestamps.len());
        for (t, label) in timestamps.iter().enumerate() {
            let mut values = Vec::with_capacity(feature_names.len());
            for (f, name) in feature_names.iter().enumerate() {
                let raw = cell(feature_cols[&(f, t)]).trim();
                let v: f64 = raw.parse().map_err(|_| {
                    parse_err(table.file, *line, format!("`{name}@{label}` is not a number: `{raw}`"))
                })?;
                if !v.is_finite() {
                    return Err(parse_err(table.file, *line, format!("`{name}@{label}` is not finite")));
                }
                if !(0.0..=100.0).contains(&v) {
                    return Err(ModelError::FeatureOutOfRange {
                        company: id.to_string(),
                        feature: name.clone(),
                        timestamp: label.clone(),
                        value: v,
                    });
                }
                values.push(v);
            }
            features.push(FeatureVector(values));
        }
        let extra = extra_cols
            .iter()
            .map(|&i| (table.header[i].clone(), cell(i).to_string()))
            .collect();
        companies.push(CompanyRecord {
            id,
            industry,
            features,
            knowledge: knowledge_col.map(|i| cell(i).to_string()).unwrap_or_default(),
            extra,
        });
    }

    let snapshots = parse_edges(edges_text, &seen, &timestamps)?;
    Dataset::new(companies, snapshots, knowledge, feature_names, timestamps)
}

fn position_or_push(list: &mut Vec<String>, item: &str) -> usize {
    match list.iter().position(|x| x == item) {
        Some(i) => i,
        None => {
            list.push(item.to_string());
            list.len() - 1
        }
    }
}

fn parse_edges(
    text: &str,
    known: &BTreeSet<CompanyId>,
    timestamps: &[String],
) -> Result<Vec<EdgeSet>, ModelError> {
    let mut snapshots = vec![EdgeSet::new(); timestamps.len()];
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err("edges", i + 1, e.to_string()))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let cells: Vec<&str> = rec.iter().map(str::trim).collect();
        if cells.iter().all(|c| c.is_empty()) {
            continue;
        }
        if i == 0 && cells.first() == Some(&"supplier_id") {
            continue;
        }
        if cells.len() != 3 {
            return Err(parse_err("edges", line, format!("expected 3 fields, got {}", cells.len())));
        }
        let t = match timestamps.iter().position(|l| l == cells[2]) {
            Some(t) => t,
            None => cells[2]
                .parse::<usize>()
                .ok()
                .filter(|&t| t < timestamps.len())
                .ok_or_else(|| parse_err("edges", line, format!("unknown timestamp `{}`", cells[2])))?,
        };
        for id in &cells[..2] {
            if !known.contains(&CompanyId::from(*id)) {
                return Err(ModelError::UnknownCompanyInEdge {
                    line,
                    id: id.to_string(),
                });
            }
        }
        if cells[0] == cells[1] {
            return Err(ModelError::SelfEdge {
                line,
                id: cells[0].to_string(),
            });
        }
        if !snapshots[t].insert(Edge::new(cells[0], cells[1])) {
            return Err(ModelError::DuplicateEdge {
                line,
                supplier: cells[0].to_string(),
                customer: cells[1].to_string(),
                timestamp: timestamps[t].clone(),
            });
        }
    }
    Ok(snapshots)
}

/// Renders the company table in the CSV layout [`load_dataset`] reads.
pub fn companies_csv(dataset: &Dataset) -> String {
    let extra_names: BTreeSet<&String> = dataset
        .companies
        .values()
        .flat_map(|c| c.extra.keys())
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![ID.to_string(), INDUSTRY.to_string(), KNOWLEDGE.to_string()];
    header.extend(extra_names.iter().map(|s| s.to_string()));
    for t in &dataset.timestamps {
        for f in &dataset.feature_names {
            header.push(format!("{f}@{t}"));
        }
    }
    w.write_record(&header).expect("in-memory write");
    for c in dataset.companies.values() {
        let mut row = vec![c.id.to_string(), c.industry.clone(), c.knowledge.clone()];
        row.extend(extra_names.iter().map(|k| c.extra.get(*k).cloned().unwrap_or_default()));
        for fv in &c.features {
            row.extend(fv.0.iter().map(|v| v.to_string()));
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn edges_csv(dataset: &Dataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["supplier_id", "customer_id", "t"]).expect("in-memory write");
    for (t, edges) in dataset.network.snapshots().iter().enumerate() {
        for e in edges.iter() {
            w.write_record([e.supplier.as_str(), e.customer.as_str(), dataset.timestamps[t].as_str()])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Writes `companies.csv`, `edges.csv` and `knowledge.txt` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("companies.csv"), companies_csv(dataset))?;
    fs::write(dir.join("edges.csv"), edges_csv(dataset))?;
    fs::write(dir.join("knowledge.txt"), &dataset.global_knowledge)?;
    Ok(())
}

pub fn load_dataset_dir(dir: &Path) -> Result<Dataset, ModelError> {
    let companies = if dir.join("companies.json").exists() {
        dir.join("companies.json")
    } else {
        dir.join("companies.csv")
    };
    load_dataset(&companies, &dir.join("edges.csv"), &dir.join("knowledge.txt"))
}
