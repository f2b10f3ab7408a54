//! Plain-text population files.
//!
//! Layout, one record per line, comma-separated, LF endings (a trailing CR
//! is tolerated on read):
//!
//! ```text
//! t,<t_1>,...,<t_d>[,stratum]
//! <unit_id>,<y_1>,...,<y_d>[,<label>]
//! ```
//!
//! The header names every grid point; a literal last column `stratum`
//! declares that each row carries a 1-based stratum label. Unit ids are
//! written as 1-based row numbers and ignored on read — row order is the
//! unit order. Values are written with Rust's shortest-roundtrip float
//! formatting, so a write/read cycle reproduces the population bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::population::{CurvePopulation, TimeGrid};

impl CurvePopulation {
    /// Reads a population from `path` in the layout above.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let mut lines = BufReader::new(file).lines().enumerate();

        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "file is empty, expected a header line"))?;
        let header = header?;
        let header = trim_cr(&header);
        let mut fields = header.split(',');
        match fields.next() {
            Some("t") => {}
            _ => {
                return Err(parse_err(
                    1,
                    "header must start with a literal 't' column",
                ))
            }
        }
        let mut times: Vec<f64> = Vec::new();
        let mut has_strata = false;
        let rest: Vec<&str> = fields.collect();
        for (i, tok) in rest.iter().enumerate() {
            if i + 1 == rest.len() && *tok == "stratum" {
                has_strata = true;
                break;
            }
            let t: f64 = tok.parse().map_err(|_| {
                parse_err(1, format!("grid point {:?} is not a number", tok))
            })?;
            times.push(t);
        }
        let grid = TimeGrid::new(times).map_err(|e| match e {
            Error::GridTooShort { min, got } => parse_err(
                1,
                format!("header declares {got} grid point(s), at least {min} needed"),
            ),
            Error::GridNotIncreasing { index } => parse_err(
                1,
                format!("grid points must be strictly increasing (column {})", index + 2),
            ),
            other => other,
        })?;
        let d = grid.len();

        let mut rows: Vec<f64> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();
        let mut n = 0usize;
        for (idx, line) in lines {
            let line_no = idx + 1; // enumerate is 0-based, file lines are 1-based
            let line = line?;
            let line = trim_cr(&line);
            if line.is_empty() {
                continue;
            }
            let expected = 1 + d + usize::from(has_strata);
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected {
                return Err(parse_err(
                    line_no,
                    format!("expected {expected} fields, found {}", fields.len()),
                ));
            }
            for tok in &fields[1..1 + d] {
                let v: f64 = tok.parse().map_err(|_| {
                    parse_err(line_no, format!("curve value {:?} is not a number", tok))
                })?;
                if !v.is_finite() {
                    return Err(parse_err(
                        line_no,
                        format!("curve value {v} is not finite"),
                    ));
                }
                rows.push(v);
            }
            if has_strata {
                let tok = fields[1 + d];
                let h: usize = tok.parse().map_err(|_| {
                    parse_err(
                        line_no,
                        format!("stratum label {:?} is not a positive integer", tok),
                    )
                })?;
                if h == 0 {
                    return Err(parse_err(line_no, "stratum labels are 1-based"));
                }
                labels.push(h);
            }
            n += 1;
        }
        if n == 0 {
            return Err(parse_err(2, "no data rows after the header"));
        }
        let values = Array2::from_shape_vec((n, d), rows)
            .expect("row count and width tracked during parsing");
        if has_strata {
            CurvePopulation::with_strata(grid, values, labels)
        } else {
            CurvePopulation::new(grid, values)
        }
    }

    /// Writes the population to `path` in the layout above.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut out = BufWriter::new(file);
        let mut header = String::from("t");
        for t in self.grid().points() {
            header.push(',');
            header.push_str(&t.to_string());
        }
        if self.strata().is_some() {
            header.push_str(",stratum");
        }
        header.push('\n');
        out.write_all(header.as_bytes())?;
        for k in 0..self.size() {
            let mut line = (k + 1).to_string();
            for v in self.curve(k).expect("index in range") {
                line.push(',');
                line.push_str(&v.to_string());
            }
            if let Some(labels) = self.strata() {
                line.push(',');
                line.push_str(&labels[k].to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

fn trim_cr(line: &str) -> &str {
    line.strip_suffix('\r').unwrap_or(line)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::CsvParse {
        line,
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let grid = TimeGrid::new(vec![0.0, 0.1, 1.0 / 3.0 + 0.1, 2.0]).unwrap();
        let values = array![
            [1.0, 2.0, std::f64::consts::PI, -0.25],
            [0.1 + 0.2, 4.0, 5.5, 1e-17],
        ];
        let pop =
            CurvePopulation::with_strata(grid, values, vec![2, 1]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        pop.save_csv(f.path()).unwrap();
        let back = CurvePopulation::load_csv(f.path()).unwrap();
        assert_eq!(back, pop);
    }

    #[test]
    fn roundtrip_without_strata() {
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let pop = CurvePopulation::new(grid, array![[1.0, 2.0, 3.0]]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        pop.save_csv(f.path()).unwrap();
        let back = CurvePopulation::load_csv(f.path()).unwrap();
        assert_eq!(back, pop);
        assert!(back.strata().is_none());
    }

    #[test]
    fn loads_documented_example() {
        let f = write_temp("t,0,0.5,1,stratum\nu1,1,2,3,1\nu2,4,5,6,1\nu3,7,8,9,2\n");
        let pop = CurvePopulation::load_csv(f.path()).unwrap();
        assert_eq!(pop.size(), 3);
        assert_eq!(pop.grid().points(), &[0.0, 0.5, 1.0]);
        assert_eq!(pop.strata().unwrap(), &[1, 1, 2]);
        assert_eq!(pop.curve(2).unwrap(), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn errors_name_the_offending_line() {
        // Ragged row.
        let f = write_temp("t,0,1\nu1,1\nu2,1,2\n");
        match CurvePopulation::load_csv(f.path()) {
            Err(Error::CsvParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        // Non-numeric value.
        let f = write_temp("t,0,1\nu1,1,2\nu2,x,2\n");
        match CurvePopulation::load_csv(f.path()) {
            Err(Error::CsvParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        // Non-finite value.
        let f = write_temp("t,0,1\nu1,inf,2\n");
        assert!(matches!(
            CurvePopulation::load_csv(f.path()),
            Err(Error::CsvParse { line: 2, .. })
        ));
    }

    #[test]
    fn header_problems_are_line_one_errors() {
        for bad in [
            "time,0,1\nu1,1,2\n",          // wrong first column
            "t,0,abc\nu1,1,2\n",           // non-numeric grid point
            "t,1,0\nu1,1,2\n",             // non-increasing grid
            "t,0\nu1,1\n",                 // single grid point
            "t,0,stratum\nu1,1,2\n",       // stratum column but only one time
            "",                            // empty file
        ] {
            match CurvePopulation::load_csv(write_temp(bad).path()) {
                Err(Error::CsvParse { line: 1, .. }) => {}
                other => panic!("input {bad:?}: expected line-1 parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn stratum_labels_are_validated_on_load() {
        // Label 0.
        let f = write_temp("t,0,1,stratum\nu1,1,2,0\n");
        assert!(CurvePopulation::load_csv(f.path()).is_err());
        // Hole in 1..=H.
        let f = write_temp("t,0,1,stratum\nu1,1,2,1\nu2,3,4,3\n");
        assert!(matches!(
            CurvePopulation::load_csv(f.path()),
            Err(Error::DegenerateStratum { stratum: 2, .. })
        ));
    }

    #[test]
    fn no_data_rows_is_an_error() {
        let f = write_temp("t,0,1\n");
        assert!(CurvePopulation::load_csv(f.path()).is_err());
    }

    #[test]
    fn crlf_input_is_tolerated() {
        let f = write_temp("t,0,1\r\nu1,1,2\r\n");
        let pop = CurvePopulation::load_csv(f.path()).unwrap();
        assert_eq!(pop.curve(0).unwrap(), &[1.0, 2.0]);
    }
}
