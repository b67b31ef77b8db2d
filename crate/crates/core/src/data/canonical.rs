//! Tab-delimited canonical export of a dataset, its split and its frozen
//! evaluation candidates.
//!
//! ```text
//! interactions.tsv   user  item  timestamp  split      (dense indices; "-" for none)
//! users.tsv          user  <feature>...                (class indices)
//! features.tsv       feature  class  label
//! user_index.tsv     index  id                         (raw ids)
//! item_index.tsv     index  id
//! candidates_<split>.tsv  user  positives  negatives  shortfall   (comma lists)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{Dataset, FrozenCandidates, Interaction, SensitiveFeature, Split, SplitKind, UserCandidates};
use crate::error::{Error, Result};

pub(crate) fn interactions_table(dataset: &Dataset, split: Option<&Split>) -> String {
    let mut out = String::from("user\titem\ttimestamp\tsplit\n");
    for (i, x) in dataset.interactions().iter().enumerate() {
        let ts = x.timestamp.map_or("-".to_string(), |t| t.to_string());
        let kind = split.map_or("-", |s| s.kind(i).as_str());
        writeln!(out, "{}\t{}\t{}\t{}", x.user, x.item, ts, kind).unwrap();
    }
    out
}

pub(crate) fn users_table(dataset: &Dataset) -> String {
    let mut out = String::from("user");
    for f in dataset.features() {
        write!(out, "\t{}", f.name).unwrap();
    }
    out.push('\n');
    for u in 0..dataset.n_users() {
        write!(out, "{u}").unwrap();
        for f in dataset.features() {
            write!(out, "\t{}", f.values[u]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub(crate) fn features_table(dataset: &Dataset) -> String {
    let mut out = String::from("feature\tclass\tlabel\n");
    for f in dataset.features() {
        for (c, label) in f.labels.iter().enumerate() {
            writeln!(out, "{}\t{c}\t{label}", f.name).unwrap();
        }
    }
    out
}

pub(crate) fn index_table(ids: &[String]) -> String {
    let mut out = String::from("index\tid\n");
    for (i, id) in ids.iter().enumerate() {
        writeln!(out, "{i}\t{id}").unwrap();
    }
    out
}

fn candidates_table(c: &FrozenCandidates) -> String {
    let join = |xs: &[u32]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut out = format!("# n_negatives={}\nuser\tpositives\tnegatives\tshortfall\n", c.n_negatives);
    for u in &c.users {
        writeln!(out, "{}\t{}\t{}\t{}", u.user, join(&u.positives), join(&u.negatives), u.shortfall).unwrap();
    }
    out
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Writes the dataset (and split, when given) to `dir`.
pub fn write_canonical(dir: &Path, dataset: &Dataset, split: Option<&Split>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(dir, "interactions.tsv", &interactions_table(dataset, split))?;
    write_file(dir, "users.tsv", &users_table(dataset))?;
    write_file(dir, "features.tsv", &features_table(dataset))?;
    write_file(dir, "user_index.tsv", &index_table(dataset.user_ids()))?;
    write_file(dir, "item_index.tsv", &index_table(dataset.item_ids()))?;
    Ok(())
}

struct Table {
    path: std::path::PathBuf,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(dir: &Path, name: &str, expected_header: Option<&[&str]>) -> Result<(Vec<String>, Table)> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.is_empty());
    let header: Vec<String> = lines
        .next()
        .map(|(_, h)| h.split('\t').map(String::from).collect())
        .ok_or_else(|| Error::Data(format!("{}: missing header", path.display())))?;
    if let Some(exp) = expected_header {
        if header != exp {
            return Err(Error::Parse {
                path,
                line: 1,
                message: format!("unexpected header {header:?}"),
            });
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        let fields: Vec<String> = line.split('\t').map(String::from).collect();
        if fields.len() != header.len() {
            return Err(Error::Parse {
                path,
                line: n + 1,
                message: format!("expected {} fields", header.len()),
            });
        }
        rows.push((n + 1, fields));
    }
    Ok((header, Table { path, rows }))
}

impl Table {
    fn parse<T: std::str::FromStr>(&self, line: usize, field: &str) -> Result<T> {
        field.parse().map_err(|_| Error::Parse {
            path: self.path.clone(),
            line,
            message: format!("cannot parse {field:?}"),
        })
    }
}

fn read_index(dir: &Path, name: &str) -> Result<Vec<String>> {
    let (_, t) = read_table(dir, name, Some(&["index", "id"]))?;
    let mut ids = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let i: usize = t.parse(*line, &row[0])?;
        if i != ids.len() {
            return Err(Error::Parse {
                path: t.path.clone(),
                line: *line,
                message: "index rows must be dense and ordered".into(),
            });
        }
        ids.push(row[1].clone());
    }
    Ok(ids)
}

/// Reads a directory written by [`write_canonical`]. The split is returned
/// when every interaction carries a split label.
pub fn read_canonical(dir: &Path) -> Result<(Dataset, Option<Split>)> {
    let user_ids = read_index(dir, "user_index.tsv")?;
    let item_ids = read_index(dir, "item_index.tsv")?;

    let (_, ft) = read_table(dir, "features.tsv", Some(&["feature", "class", "label"]))?;
    let mut features: Vec<SensitiveFeature> = Vec::new();
    for (line, row) in &ft.rows {
        let class: usize = ft.parse(*line, &row[1])?;
        if features.last().map(|f| f.name != row[0]).unwrap_or(true) {
            features.push(SensitiveFeature {
                name: row[0].clone(),
                labels: Vec::new(),
                values: Vec::new(),
            });
        }
        let f = features.last_mut().unwrap();
        if class != f.labels.len() {
            return Err(Error::Parse {
                path: ft.path.clone(),
                line: *line,
                message: "feature classes must be dense and ordered".into(),
            });
        }
        f.labels.push(row[2].clone());
    }

    let (uheader, ut) = read_table(dir, "users.tsv", None)?;
    let names: Vec<&str> = features.iter().map(|f| f.name.as_str()).collect();
    if uheader[0] != "user" || uheader[1..] != names[..] {
        return Err(Error::Data(format!("{}: columns {uheader:?} do not match features", ut.path.display())));
    }
    for (line, row) in &ut.rows {
        let u: usize = ut.parse(*line, &row[0])?;
        if u != features.first().map_or(u, |f| f.values.len()) {
            return Err(Error::Parse {
                path: ut.path.clone(),
                line: *line,
                message: "user rows must be dense and ordered".into(),
            });
        }
        for (f, v) in features.iter_mut().zip(&row[1..]) {
            f.values.push(ut.parse(*line, v)?);
        }
    }

    let (_, it) = read_table(dir, "interactions.tsv", Some(&["user", "item", "timestamp", "split"]))?;
    let mut interactions = Vec::with_capacity(it.rows.len());
    let mut kinds = Vec::with_capacity(it.rows.len());
    for (line, row) in &it.rows {
        let timestamp = if row[2] == "-" { None } else { Some(it.parse(*line, &row[2])?) };
        interactions.push(Interaction {
            user: it.parse(*line, &row[0])?,
            item: it.parse(*line, &row[1])?,
            timestamp,
        });
        kinds.push(if row[3] == "-" { None } else { Some(SplitKind::parse(&row[3])?) });
    }
    let dataset = Dataset::new(user_ids, item_ids, interactions.clone(), features)?;
    if dataset.interactions() != interactions.as_slice() {
        return Err(Error::Data(format!("{}: interactions not in canonical order", it.path.display())));
    }
    let split = match kinds.into_iter().collect::<Option<Vec<_>>>() {
        Some(k) => Some(Split::from_assignment(&dataset, k)?),
        None => None,
    };
    Ok((dataset, split))
}

fn read_candidates(dir: &Path, kind: SplitKind) -> Result<FrozenCandidates> {
    let name = format!("candidates_{}.tsv", kind.as_str());
    let path = dir.join(&name);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let n_negatives = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# n_negatives="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Data(format!("{}: missing n_negatives line", path.display())))?;
    let (_, t) = read_table(dir, &name, Some(&["user", "positives", "negatives", "shortfall"]))?;
    let list = |line: usize, s: &str| -> Result<Vec<u32>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|x| t.parse(line, x)).collect()
    };
    let mut users = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        users.push(UserCandidates {
            user: t.parse(*line, &row[0])?,
            positives: list(*line, &row[1])?,
            negatives: list(*line, &row[2])?,
            shortfall: t.parse(*line, &row[3])?,
        });
    }
    Ok(FrozenCandidates {
        kind,
        n_negatives,
        users,
    })
}

/// A dataset with its split and frozen validation/test candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub dataset: Dataset,
    pub split: Split,
    pub validation: FrozenCandidates,
    pub test: FrozenCandidates,
}

impl Prepared {
    pub fn candidates(&self, kind: SplitKind) -> Result<&FrozenCandidates> {
        match kind {
            SplitKind::Validation => Ok(&self.validation),
            SplitKind::Test => Ok(&self.test),
            SplitKind::Train => Err(Error::Config("no frozen candidates for the train split".into())),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_canonical(dir, &self.dataset, Some(&self.split))?;
        write_file(dir, "candidates_validation.tsv", &candidates_table(&self.validation))?;
        write_file(dir, "candidates_test.tsv", &candidates_table(&self.test))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let (dataset, split) = read_canonical(dir)?;
        let split = split.ok_or_else(|| Error::Data(format!("{}: dataset has no split", dir.display())))?;
        Ok(Prepared {
            validation: read_candidates(dir, SplitKind::Validation)?,
            test: read_candidates(dir, SplitKind::Test)?,
            dataset,
            split,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{freeze_candidates, generate_synthetic, split_dataset, SplitRatios, SyntheticSpec};
    use crate::numcore::Rng;

    #[test]
    fn prepared_round_trip() {
        let spec = SyntheticSpec {
            n_users: 60,
            n_items: 30,
            feature_cardinalities: vec![2, 3],
            ..Default::default()
        };
        let data = generate_synthetic(&spec, &mut Rng::new(3, 0)).unwrap();
        let split = split_dataset(&data.dataset, SplitRatios::default(), &mut Rng::new(3, 1)).unwrap();
        let mut rng = Rng::new(3, 2);
        let prepared = Prepared {
            validation: freeze_candidates(&data.dataset, &split, SplitKind::Validation, 10, &mut rng),
            test: freeze_candidates(&data.dataset, &split, SplitKind::Test, 10, &mut rng),
            dataset: data.dataset,
            split,
        };
        let dir = tempfile::tempdir().unwrap();
        prepared.write(dir.path()).unwrap();
        let back = Prepared::read(dir.path()).unwrap();
        assert_eq!(back, prepared);
        assert_eq!(back.dataset.fingerprint(), prepared.dataset.fingerprint());
    }

    #[test]
    fn unsplit_export_round_trip() {
        let spec = SyntheticSpec {
            n_users: 20,
            n_items: 15,
            ..Default::default()
        };
        let data = generate_synthetic(&spec, &mut Rng::new(9, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_canonical(dir.path(), &data.dataset, None).unwrap();
        let (back, split) = read_canonical(dir.path()).unwrap();
        assert_eq!(back, data.dataset);
        assert!(split.is_none());
    }
}
