//! Sample files: `#` comment lines, a header `i,x1,...,xk,y`, one row per
//! spatial unit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use spel_core::{Error, Result};

#[derive(Debug)]
pub struct Sample {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

pub fn format_sample(header: &[String], x: &DMatrix<f64>, y: &DVector<f64>) -> String {
    let mut out = String::new();
    for h in header {
        let _ = writeln!(out, "# {h}");
    }
    out.push('i');
    for c in 1..=x.ncols() {
        let _ = write!(out, ",x{c}");
    }
    out.push_str(",y\n");
    for i in 0..x.nrows() {
        let _ = write!(out, "{}", i + 1);
        for c in 0..x.ncols() {
            let _ = write!(out, ",{}", x[(i, c)]);
        }
        let _ = writeln!(out, ",{}", y[i]);
    }
    out
}

pub fn parse_sample(text: &str, path: &Path) -> Result<Sample> {
    let err = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty sample file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let k = cols.len().saturating_sub(2);
    let expected: Vec<String> = std::iter::once("i".to_string())
        .chain((1..=k).map(|c| format!("x{c}")))
        .chain(std::iter::once("y".to_string()))
        .collect();
    if k == 0 || cols != expected {
        return Err(err(hline, format!("expected header `{}`", expected.join(","))));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != k + 2 {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", k + 2, fields.len()),
            ));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("bad unit index `{}`", fields[0])))?;
        if idx != ys.len() + 1 {
            return Err(err(lineno, format!("unit index {idx} out of order")));
        }
        let mut row = Vec::with_capacity(k + 1);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| err(lineno, format!("cannot parse `{f}` as a number")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value `{f}`")));
            }
            row.push(v);
        }
        ys.push(row.pop().expect("k + 1 values"));
        xs.extend(row);
    }
    if ys.is_empty() {
        return Err(err(hline, "no data rows".into()));
    }
    let n = ys.len();
    Ok(Sample {
        x: DMatrix::from_row_slice(n, k, &xs),
        y: DVector::from_vec(ys),
    })
}

pub fn load_sample(path: &Path) -> Result<Sample> {
    parse_sample(&std::fs::read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.25, 1.0, 0.5, 1.0, 0.75]);
        let y = DVector::from_vec(vec![0.1, -2.5, 1e-17]);
        let text = format_sample(&["seed=3".into()], &x, &y);
        assert!(text.starts_with("# seed=3\ni,x1,x2,y\n1,1,0.25,0.1\n"));
        let s = parse_sample(&text, Path::new("s.csv")).unwrap();
        assert_eq!(s.x, x);
        assert_eq!(s.y, y);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = "i,x1,y\n1,0.5,2\n2,0.5\n";
        match parse_sample(bad, Path::new("s.csv")) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_sample("i,z,y\n1,2,3\n", Path::new("s.csv")).is_err());
        assert!(parse_sample("i,x1,y\n2,0.5,1\n", Path::new("s.csv")).is_err());
    }
}
