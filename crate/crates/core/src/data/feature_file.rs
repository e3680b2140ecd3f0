//! CSV feature files: `client_id,identity_id,camera_id,split,f_0,...,f_{D-1}`.
//!
//! Floats are written with 17 significant digits so a save/load round trip is
//! bit-exact. An empty file (header only) loads with `client_id = 0`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ClientDataset, Record};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 4] = ["client_id", "identity_id", "camera_id", "split"];

pub fn save_feature_file(dataset: &ClientDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = FIXED_COLUMNS.join(",");
    for k in 0..dataset.feature_dim {
        line.push_str(&format!(",f_{k}"));
    }
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    for r in &dataset.records {
        let mut line = format!("{},{},{},{}", dataset.client_id, r.identity_id, r.camera_id, r.split);
        for v in &r.features {
            line.push_str(&format!(",{v:.16e}"));
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_feature_file(path: &Path) -> Result<ClientDataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;

    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() < FIXED_COLUMNS.len() || headers.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
        return Err(parse_err(
            1,
            format!("header must start with {}", FIXED_COLUMNS.join(",")),
        ));
    }
    let feature_dim = headers.len() - FIXED_COLUMNS.len();
    for (k, name) in headers.iter().skip(FIXED_COLUMNS.len()).enumerate() {
        if name != format!("f_{k}") {
            return Err(parse_err(1, format!("expected column f_{k}, found `{name}`")));
        }
    }

    let mut dataset = ClientDataset::new(0, feature_dim);
    for (row, result) in reader.records().enumerate() {
        let line = row + 2;
        let rec = result.map_err(|e| {
            let line = e.position().map_or(line, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        if rec.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let int = |idx: usize| -> Result<usize> {
            rec[idx]
                .parse()
                .map_err(|_| parse_err(line, format!("invalid {} `{}`", FIXED_COLUMNS[idx], &rec[idx])))
        };
        let client_id = int(0)?;
        if row == 0 {
            dataset.client_id = client_id;
        } else if client_id != dataset.client_id {
            return Err(parse_err(
                line,
                format!("client_id {client_id} differs from {}", dataset.client_id),
            ));
        }
        let identity_id = int(1)?;
        let camera_id = int(2)?;
        let split = rec[3].parse().map_err(|m| parse_err(line, m))?;
        let features = (0..feature_dim)
            .map(|k| {
                let field = &rec[FIXED_COLUMNS.len() + k];
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("invalid value `{field}` in f_{k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        dataset.records.push(Record {
            features,
            identity_id,
            camera_id,
            split,
        });
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticConfig};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&SyntheticConfig {
            clients: 2,
            identities_per_client: 3,
            eval_identities_per_client: 3,
            ..SyntheticConfig::default()
        })
        .unwrap();
        for ds in &data {
            let path = dir.path().join(format!("c{}.csv", ds.client_id));
            save_feature_file(ds, &path).unwrap();
            assert_eq!(&load_feature_file(&path).unwrap(), ds);
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        let ds = ClientDataset::new(0, 4);
        save_feature_file(&ds, &path).unwrap();
        assert_eq!(load_feature_file(&path).unwrap(), ds);
    }

    #[test]
    fn truncated_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(
            &path,
            "client_id,identity_id,camera_id,split,f_0,f_1\n0,1,0,train,1.0,2.0\n0,1,1,train,1.5",
        )
        .unwrap();
        match load_feature_file(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        std::fs::write(&path, "client,identity_id,camera_id,split,f_0\n").unwrap();
        assert!(matches!(load_feature_file(&path), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&path, "client_id,identity_id,camera_id,split,f_0\n0,1,0,train,abc\n").unwrap();
        assert!(matches!(load_feature_file(&path), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&path, "client_id,identity_id,camera_id,split,f_0\n0,1,0,holdout,1.0\n").unwrap();
        assert!(matches!(load_feature_file(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_feature_file(Path::new("/nonexistent/x.csv")),
            Err(Error::Io { .. })
        ));
    }
}
