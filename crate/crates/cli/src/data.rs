//! Argument parsing helpers and CSV input/output.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use specgp::fourier_gp::{sample_prior_stream, standard_normals};
use specgp::{Dataset, FourierExpansion, HyperBox, MaternParams, QuadratureRule};

use crate::{usage, CliError, CliResult, DataArgs};

/// Parses "a,b,nu_lo,nu_hi,rho_lo,rho_hi".
pub fn parse_box(spec: &str) -> CliResult<HyperBox> {
    let v = parse_floats(spec, "--box")?;
    if v.len() != 6 {
        return usage(format!("--box needs 6 comma-separated numbers, got {}", v.len()));
    }
    HyperBox::new(v[0], v[1], v[2], v[3], v[4], v[5]).map_err(|e| CliError::Usage(format!("--box: {e}")))
}

pub fn parse_floats(spec: &str, flag: &str) -> CliResult<Vec<f64>> {
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{flag}: cannot parse {t:?} as a number")))
        })
        .collect()
}

/// Comma-separated sizes such as "1e5,1000000"; empty means none.
pub fn parse_sizes(spec: &str) -> CliResult<Vec<usize>> {
    if spec.trim().is_empty() {
        return Ok(Vec::new());
    }
    parse_floats(spec, "--N")?
        .into_iter()
        .map(|v| {
            if v >= 1.0 && v.fract() == 0.0 && v <= 1e12 {
                Ok(v as usize)
            } else {
                usage(format!("--N: {v} is not a positive integer"))
            }
        })
        .collect()
}

/// "embedded" or a rule file path.
pub fn load_rule(spec: &str) -> CliResult<QuadratureRule> {
    if spec == "embedded" {
        Ok(QuadratureRule::embedded())
    } else {
        Ok(QuadratureRule::load(spec)?)
    }
}

pub fn params(nu: f64, rho: f64) -> CliResult<MaternParams> {
    MaternParams::new(nu, rho).map_err(|e| CliError::Usage(e.to_string()))
}

/// Reads an "x,y" CSV.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
        return usage(format!("{}: expected header \"x,y\"", path.display()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| -> CliResult<f64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Usage(format!("{}: bad number on data row {}", path.display(), i + 1)))
        };
        xs.push(field(0)?);
        ys.push(field(1)?);
    }
    Dataset::new(xs, ys).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Writes an "x,y" CSV; `{}` formatting round-trips every `f64` exactly.
pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y"])?;
    for (x, y) in data.xs().iter().zip(data.ys()) {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_columns(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Dataset from `--data`, or the synthetic recipe with noise variance
/// `noise_variance`.
pub fn dataset(args: &DataArgs, noise_variance: f64) -> CliResult<Dataset> {
    let data = match &args.data {
        Some(p) => read_dataset(p)?,
        None => {
            if args.n_points < 2 {
                return usage("--N must be at least 2 for synthetic data");
            }
            Dataset::synthetic(args.n_points, noise_variance, args.seed)
                .map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    save_if_requested(args, &data)?;
    Ok(data)
}

/// A prior draw of the rule's expansion plus `N(0, sigma2)` noise at
/// equispaced points of the box interval.
pub fn prior_dataset(
    args: &DataArgs,
    rule: &QuadratureRule,
    truth: &MaternParams,
    sigma2: f64,
) -> CliResult<Dataset> {
    if args.n_points < 2 {
        return usage("--N must be at least 2 for synthetic data");
    }
    let hb = rule.hyper_box();
    let n = args.n_points;
    let xs: Vec<f64> = (0..n).map(|i| hb.a + (hb.b - hb.a) * i as f64 / (n - 1) as f64).collect();
    let ex = FourierExpansion::new(rule, *truth)?;
    let f = sample_prior_stream(&ex, args.seed, 1, &xs);
    let z = standard_normals(args.seed, 2, n);
    let sd = sigma2.sqrt();
    let ys = f.iter().zip(&z).map(|(f, e)| f + sd * e).collect();
    let data = Dataset::new(xs, ys)?;
    save_if_requested(args, &data)?;
    Ok(data)
}

fn save_if_requested(args: &DataArgs, data: &Dataset) -> CliResult<()> {
    if let Some(p) = &args.save_data {
        write_dataset(p, data)?;
    }
    Ok(())
}

pub fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => File::create(p)?.write_all(text.as_bytes())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_accept_scientific_notation() {
        assert_eq!(parse_sizes("1e5, 20").unwrap(), vec![100_000, 20]);
        assert!(parse_sizes("").unwrap().is_empty());
        assert!(parse_sizes("1.5").is_err());
        assert!(parse_sizes("0").is_err());
    }

    #[test]
    fn box_needs_six_ordered_numbers() {
        assert!(parse_box("-1,1,1.5,3.5,0.1,0.5").is_ok());
        assert!(parse_box("-1,1,1.5,3.5,0.5,0.1").is_err());
        assert!(parse_box("-1,1,1.5,3.5,0.1").is_err());
        assert!(parse_box("-1,1,a,3.5,0.1,0.5").is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = Dataset::new(vec![0.1, -1.0 / 3.0, 1e-300], vec![std::f64::consts::PI, 2.0, -7e12]).unwrap();
        write_dataset(&path, &d).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), d);
    }

    #[test]
    fn csv_header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
