use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data::{Dataset, Interaction, SensitiveFeature};
use crate::error::{Error, Result};

/// Age-group codes of the MovieLens-1M user table; each code is one class.
pub const MOVIELENS_AGE_CODES: [u32; 7] = [1, 18, 25, 35, 45, 50, 56];

const N_OCCUPATIONS: u32 = 21;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads the `::`-delimited MovieLens-1M ratings and users tables.
///
/// Every rating counts as positive implicit feedback. Users keep the order
/// of the users table; items are indexed by `MovieID - 1` over the full id
/// range `1..=max MovieID`, so ids that were never rated remain valid items.
pub fn load_movielens(interactions_path: impl AsRef<Path>, users_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ipath, upath) = (interactions_path.as_ref(), users_path.as_ref());

    let mut user_ids = Vec::new();
    let mut user_index = HashMap::new();
    let mut gender = Vec::new();
    let mut age = Vec::new();
    let mut occupation = Vec::new();
    for (n, line) in read(upath)?.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 5 {
            return Err(parse_err(upath, line_no, format!("expected 5 fields, got {}", fields.len())));
        }
        let uid = fields[0].trim();
        if uid.parse::<u64>().is_err() {
            return Err(parse_err(upath, line_no, format!("bad UserID {uid:?}")));
        }
        let g = match fields[1] {
            "F" => 0,
            "M" => 1,
            other => return Err(parse_err(upath, line_no, format!("bad gender {other:?}"))),
        };
        let code: u32 = fields[2]
            .parse()
            .map_err(|_| parse_err(upath, line_no, format!("bad age {:?}", fields[2])))?;
        let a = MOVIELENS_AGE_CODES
            .iter()
            .position(|&c| c == code)
            .ok_or_else(|| parse_err(upath, line_no, format!("unknown age code {code}")))?;
        let o: u32 = fields[3]
            .parse()
            .ok()
            .filter(|&o| o < N_OCCUPATIONS)
            .ok_or_else(|| parse_err(upath, line_no, format!("bad occupation {:?}", fields[3])))?;
        if user_index.insert(uid.to_string(), user_ids.len() as u32).is_some() {
            return Err(parse_err(upath, line_no, format!("duplicate UserID {uid}")));
        }
        user_ids.push(uid.to_string());
        gender.push(g);
        age.push(a as u32);
        occupation.push(o);
    }
    if user_ids.is_empty() {
        return Err(Error::Data(format!("{}: no users", upath.display())));
    }

    let mut interactions = Vec::new();
    let mut max_item = 0u32;
    for (n, line) in read(ipath)?.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 {
            return Err(parse_err(ipath, line_no, format!("expected 4 fields, got {}", fields.len())));
        }
        let user = *user_index
            .get(fields[0].trim())
            .ok_or_else(|| parse_err(ipath, line_no, format!("UserID {} not in users table", fields[0])))?;
        let movie: u32 = fields[1]
            .parse()
            .ok()
            .filter(|&m| m >= 1)
            .ok_or_else(|| parse_err(ipath, line_no, format!("bad MovieID {:?}", fields[1])))?;
        fields[2]
            .parse::<f64>()
            .map_err(|_| parse_err(ipath, line_no, format!("bad rating {:?}", fields[2])))?;
        let ts: i64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(ipath, line_no, format!("bad timestamp {:?}", fields[3])))?;
        max_item = max_item.max(movie);
        interactions.push(Interaction {
            user,
            item: movie - 1,
            timestamp: Some(ts),
        });
    }
    if interactions.is_empty() {
        return Err(Error::Data(format!("{}: no interactions", ipath.display())));
    }
    let item_ids = (1..=max_item).map(|m| m.to_string()).collect();
    let features = vec![
        SensitiveFeature {
            name: "gender".into(),
            labels: vec!["F".into(), "M".into()],
            values: gender,
        },
        SensitiveFeature {
            name: "age".into(),
            labels: MOVIELENS_AGE_CODES.iter().map(|c| c.to_string()).collect(),
            values: age,
        },
        SensitiveFeature {
            name: "occupation".into(),
            labels: (0..N_OCCUPATIONS).map(|o| o.to_string()).collect(),
            values: occupation,
        },
    ];
    Dataset::new(user_ids, item_ids, interactions, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    const USERS: &str = "1::F::1::10::48067\n2::M::56::16::70072\n";

    #[test]
    fn toy_file_with_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(
            dir.path(),
            "ratings.dat",
            "1::3::5::978300760\n1::3::4::978300761\n2::1::3::978302109\n",
        );
        let u = write(dir.path(), "users.dat", USERS);
        let d = load_movielens(&r, &u).unwrap();
        assert_eq!(d.n_interactions(), 2);
        assert_eq!(d.n_users(), 2);
        assert_eq!(d.n_items(), 3);
        assert_eq!(d.feature(0).values, vec![0, 1]);
        assert_eq!(d.feature(1).values, vec![0, 6]);
        assert_eq!(d.feature(1).cardinality(), 7);
        assert_eq!(d.feature(2).cardinality(), 21);
        assert_eq!(d.interactions()[0].timestamp, Some(978300760));
    }

    #[test]
    fn empty_interactions_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "ratings.dat", "");
        let u = write(dir.path(), "users.dat", USERS);
        assert!(matches!(load_movielens(&r, &u), Err(Error::Data(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "ratings.dat", "1::3::5::978300760\n1::oops\n");
        let u = write(dir.path(), "users.dat", USERS);
        match load_movielens(&r, &u) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_age_code_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "ratings.dat", "1::3::5::978300760\n");
        let u = write(dir.path(), "users.dat", "1::F::17::10::48067\n");
        assert!(matches!(load_movielens(&r, &u), Err(Error::Parse { line: 1, .. })));
    }
}
