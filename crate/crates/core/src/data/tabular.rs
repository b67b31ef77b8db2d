use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Interaction, SensitiveFeature};
use crate::error::{Error, Result};

/// Column mapping for a delimited interaction table with a header row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub delimiter: char,
    pub user_column: String,
    pub item_column: String,
    pub feature_columns: Vec<String>,
    /// Classes held by fewer users than this merge into one `other` class.
    pub group_min_count: Option<usize>,
}

pub const MERGED_CLASS: &str = "other";

/// Loads a delimited table where each row is one interaction and carries
/// the user's feature values. Users and items are indexed in order of first
/// appearance; a user's feature values must agree across rows.
pub fn load_tabular(path: impl AsRef<Path>, schema: &TabularSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let columns: Vec<&str> = header.split(schema.delimiter).map(str::trim).collect();
    let col = |name: &str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column {name:?}", path.display())))
    };
    let user_col = col(&schema.user_column)?;
    let item_col = col(&schema.item_column)?;
    let feature_cols = schema.feature_columns.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;

    let mut user_ids: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut raw_features: Vec<Vec<String>> = Vec::new();
    let mut interactions = Vec::new();

    for (n, line) in lines {
        let line_no = n + 1;
        let fields: Vec<&str> = line.split(schema.delimiter).map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected {} fields, got {}", columns.len(), fields.len()),
            });
        }
        let values: Vec<String> = feature_cols.iter().map(|&c| fields[c].to_string()).collect();
        if let Some(pos) = values.iter().position(String::is_empty) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("user {} lacks a value for {}", fields[user_col], schema.feature_columns[pos]),
            });
        }
        let uid = fields[user_col].to_string();
        let user = match user_index.get(&uid) {
            Some(&u) => {
                if raw_features[u as usize] != values {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: format!("user {uid} has conflicting feature values"),
                    });
                }
                u
            }
            None => {
                let u = user_ids.len() as u32;
                user_index.insert(uid.clone(), u);
                user_ids.push(uid);
                raw_features.push(values);
                u
            }
        };
        let iid = fields[item_col].to_string();
        let item = *item_index.entry(iid.clone()).or_insert_with(|| {
            item_ids.push(iid);
            item_ids.len() as u32 - 1
        });
        interactions.push(Interaction {
            user,
            item,
            timestamp: None,
        });
    }
    if interactions.is_empty() {
        return Err(Error::Data(format!("{}: no interactions", path.display())));
    }

    let mut features = Vec::with_capacity(feature_cols.len());
    for (k, name) in schema.feature_columns.iter().enumerate() {
        let raw: Vec<&str> = raw_features.iter().map(|v| v[k].as_str()).collect();
        let feature = encode_feature(name, &raw, schema.group_min_count)?;
        features.push(feature);
    }
    Dataset::new(user_ids, item_ids, interactions, features)
}

fn encode_feature(name: &str, raw: &[&str], group_min_count: Option<usize>) -> Result<SensitiveFeature> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in raw {
        *counts.entry(v).or_default() += 1;
    }
    let threshold = group_min_count.unwrap_or(0);
    let mut labels: Vec<String> = counts
        .iter()
        .filter(|(_, &c)| c >= threshold)
        .map(|(v, _)| v.to_string())
        .collect();
    let merged = counts.values().any(|&c| c < threshold);
    if merged {
        labels.push(MERGED_CLASS.to_string());
    }
    if labels.len() < 2 {
        return Err(Error::Data(format!(
            "feature {name} has cardinality {} after grouping",
            labels.len()
        )));
    }
    let index: HashMap<&str, u32> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();
    let other = labels.len() as u32 - 1;
    let values = raw
        .iter()
        .map(|v| if counts[v] >= threshold { index[v] } else { other })
        .collect();
    Ok(SensitiveFeature {
        name: name.to_string(),
        labels,
        values,
    })
}
