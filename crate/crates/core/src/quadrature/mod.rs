//! Quadrature rules over the spectral density that reproduce a whole box of
//! Matérn kernels, their text file format, and the rule constructor.

mod builder;
mod embedded;

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::HyperBox;

pub use builder::{
    build_integrand_family, build_rule, refine_rule, select_nodes, solve_weights, validate_rule,
    BuildOptions, BuildReport, IntegrandFamily, RefineReport, ValidationGrid, ValidationReport,
    WeightSolution,
};
pub use embedded::{reference_l2_error, REFERENCE_L2_ERRORS};

const FORMAT_VERSION: u32 = 1;

/// Frequencies `ξ_i` and positive weights `w_i` such that
/// `Σ 2 w_i k̂(ξ_i) cos(2π ξ_i d)` approximates `k(d)` for every kernel in
/// `hyper_box` and every lag in `[0, b - a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    hyper_box: HyperBox<f64>,
    epsilon: f64,
}

impl QuadratureRule {
    /// Checks that nodes are positive and strictly increasing and that all
    /// weights are positive.
    pub fn new(
        nodes: Vec<f64>,
        weights: Vec<f64>,
        hyper_box: HyperBox<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        if nodes.len() != weights.len() {
            return Err(Error::Domain(format!(
                "{} nodes but {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.is_empty() {
            return Err(Error::Domain("a rule needs at least one node".into()));
        }
        if let Some(i) = nodes.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Domain(format!("node {i} is not a positive finite frequency")));
        }
        if let Some(i) = nodes.windows(2).position(|p| p[0] >= p[1]) {
            return Err(Error::Domain(format!("nodes {i} and {} are not increasing", i + 1)));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Domain(format!("weight {i} is not positive")));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            nodes,
            weights,
            hyper_box,
            epsilon,
        })
    }

    /// The published 86-node rule for `[-1, 1]`, `ν ∈ [1.5, 3.5]`,
    /// `ρ ∈ [0.1, 0.5]`.
    ///
    /// Its stated tolerance was `1e-5`, but its measured worst pointwise
    /// error over the box is about `1.96e-4` (near `ν = 1.5, ρ = 0.1`), so
    /// the recorded `epsilon` is `2e-4`.
    pub fn embedded() -> Self {
        let (nodes, weights) = embedded::NODES_AND_WEIGHTS.iter().copied().unzip();
        Self::new(nodes, weights, HyperBox::reference(), 2e-4).expect("embedded rule is valid")
    }

    #[inline]
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of frequencies `m`; the trigonometric basis has `2m` columns.
    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn hyper_box(&self) -> &HyperBox<f64> {
        &self.hyper_box
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Same nodes with every weight multiplied by `factor > 0`.
    pub fn with_scaled_weights(&self, factor: f64) -> Result<Self> {
        let weights = self.weights.iter().map(|w| w * factor).collect();
        Self::new(self.nodes.clone(), weights, self.hyper_box, self.epsilon)
    }

    /// The `count` lowest frequencies and their weights.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        let count = count.min(self.len());
        Self::new(
            self.nodes[..count].to_vec(),
            self.weights[..count].to_vec(),
            self.hyper_box,
            self.epsilon,
        )
    }

    /// Serializes the rule in the line-oriented text format.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let hb = &self.hyper_box;
        writeln!(out, "# version={FORMAT_VERSION}")?;
        writeln!(out, "# interval={:.16e},{:.16e}", hb.a, hb.b)?;
        writeln!(out, "# nu={:.16e},{:.16e}", hb.nu_lo, hb.nu_hi)?;
        writeln!(out, "# rho={:.16e},{:.16e}", hb.rho_lo, hb.rho_hi)?;
        writeln!(out, "# epsilon={:.16e}", self.epsilon)?;
        writeln!(out, "# m={}", self.len())?;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            writeln!(out, "{x:.16e} {w:.16e}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Parses the text format, rejecting malformed or missing headers,
    /// unsorted nodes and nonpositive weights.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut header = Header::default();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut last_line = 0;

        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            last_line = lineno;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                if !nodes.is_empty() {
                    return parse_err(lineno, "header after node lines");
                }
                header.absorb(rest.trim(), lineno)?;
                continue;
            }
            let mut fields = trimmed.split_whitespace();
            let (Some(xs), Some(ws), None) = (fields.next(), fields.next(), fields.next()) else {
                return parse_err(lineno, "expected `<xi> <w>`");
            };
            let x: f64 = xs
                .parse()
                .map_err(|_| parse_error(lineno, format!("bad node `{xs}`")))?;
            let w: f64 = ws
                .parse()
                .map_err(|_| parse_error(lineno, format!("bad weight `{ws}`")))?;
            if !(x.is_finite() && x > 0.0) {
                return parse_err(lineno, "node must be positive and finite");
            }
            if nodes.last().is_some_and(|&prev| x <= prev) {
                return parse_err(lineno, "nodes must be strictly increasing");
            }
            if !(w.is_finite() && w > 0.0) {
                return parse_err(lineno, "weight must be positive");
            }
            nodes.push(x);
            weights.push(w);
        }

        let (hyper_box, epsilon, m) = header.finish(last_line)?;
        if m != nodes.len() {
            return parse_err(
                last_line,
                format!("header declares m={m} but {} node lines follow", nodes.len()),
            );
        }
        Self::new(nodes, weights, hyper_box, epsilon)
            .map_err(|e| parse_error(last_line, e.to_string()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(parse_error(line, message))
}

#[derive(Default)]
struct Header {
    version: Option<u32>,
    interval: Option<(f64, f64)>,
    nu: Option<(f64, f64)>,
    rho: Option<(f64, f64)>,
    epsilon: Option<f64>,
    m: Option<usize>,
}

impl Header {
    fn absorb(&mut self, entry: &str, line: usize) -> Result<()> {
        let Some((key, value)) = entry.split_once('=') else {
            return parse_err(line, format!("malformed header `{entry}`"));
        };
        let value = value.trim();
        let pair = |v: &str| -> Result<(f64, f64)> {
            let (lo, hi) = v
                .split_once(',')
                .ok_or_else(|| parse_error(line, format!("expected two values in `{v}`")))?;
            let lo = lo.trim().parse().map_err(|_| parse_error(line, format!("bad number `{lo}`")))?;
            let hi = hi.trim().parse().map_err(|_| parse_error(line, format!("bad number `{hi}`")))?;
            Ok((lo, hi))
        };
        let slot_taken = || parse_error(line, format!("duplicate header `{}`", key.trim()));
        match key.trim() {
            "version" => {
                let v: u32 = value
                    .parse()
                    .map_err(|_| parse_error(line, format!("bad version `{value}`")))?;
                if v != FORMAT_VERSION {
                    return parse_err(line, format!("unsupported version {v}"));
                }
                self.version.replace(v).map_or(Ok(()), |_| Err(slot_taken()))
            }
            "interval" => self.interval.replace(pair(value)?).map_or(Ok(()), |_| Err(slot_taken())),
            "nu" => self.nu.replace(pair(value)?).map_or(Ok(()), |_| Err(slot_taken())),
            "rho" => self.rho.replace(pair(value)?).map_or(Ok(()), |_| Err(slot_taken())),
            "epsilon" => {
                let e = value
                    .parse()
                    .map_err(|_| parse_error(line, format!("bad epsilon `{value}`")))?;
                self.epsilon.replace(e).map_or(Ok(()), |_| Err(slot_taken()))
            }
            "m" => {
                let m = value
                    .parse()
                    .map_err(|_| parse_error(line, format!("bad node count `{value}`")))?;
                self.m.replace(m).map_or(Ok(()), |_| Err(slot_taken()))
            }
            other => parse_err(line, format!("unknown header key `{other}`")),
        }
    }

    fn finish(self, line: usize) -> Result<(HyperBox<f64>, f64, usize)> {
        let missing = |what: &str| parse_error(line, format!("missing `{what}` header"));
        self.version.ok_or_else(|| missing("version"))?;
        let (a, b) = self.interval.ok_or_else(|| missing("interval"))?;
        let (nu_lo, nu_hi) = self.nu.ok_or_else(|| missing("nu"))?;
        let (rho_lo, rho_hi) = self.rho.ok_or_else(|| missing("rho"))?;
        let epsilon = self.epsilon.ok_or_else(|| missing("epsilon"))?;
        let m = self.m.ok_or_else(|| missing("m"))?;
        let hb = HyperBox::new(a, b, nu_lo, nu_hi, rho_lo, rho_hi)
            .map_err(|e| parse_error(line, e.to_string()))?;
        Ok((hb, epsilon, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_rule_has_86_positive_weights() {
        let rule = QuadratureRule::embedded();
        assert_eq!(rule.len(), 86);
        assert!(rule.weights().iter().all(|&w| w > 0.0));
        assert_eq!(rule.nodes()[0], 0.0960748783232733);
        assert_eq!(rule.weights()[85], 1.5256479816263220);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let rule = QuadratureRule::embedded();
        let text = rule.to_text();
        let back = QuadratureRule::parse(&text).unwrap();
        assert_eq!(back, rule);
        assert_eq!(back.to_text(), text);
    }

    fn sample(body: &str) -> String {
        format!(
            "# version=1\n# interval=-1,1\n# nu=1.5,3.5\n# rho=0.1,0.5\n# epsilon=1e-5\n{body}"
        )
    }

    #[test]
    fn parser_rejects_bad_files() {
        let unsorted = sample("# m=2\n2.0 1.0\n1.0 1.0\n");
        assert!(matches!(QuadratureRule::parse(&unsorted), Err(Error::Parse { line: 8, .. })));

        let negative = sample("# m=1\n1.0 -1.0\n");
        assert!(QuadratureRule::parse(&negative).is_err());

        let zero = sample("# m=1\n1.0 0.0\n");
        assert!(QuadratureRule::parse(&zero).is_err());

        let wrong_count = sample("# m=3\n1.0 1.0\n");
        assert!(QuadratureRule::parse(&wrong_count).is_err());

        let no_version = "# interval=-1,1\n# nu=1.5,3.5\n# rho=0.1,0.5\n# epsilon=1e-5\n# m=1\n1 1\n";
        assert!(QuadratureRule::parse(no_version).is_err());

        let garbage = sample("# m 1\n1 1\n");
        assert!(QuadratureRule::parse(&garbage).is_err());

        let bad_version = sample("# m=1\n1 1\n").replace("version=1", "version=7");
        assert!(QuadratureRule::parse(&bad_version).is_err());

        let good = sample("# m=2\n1.0 0.5\n2.0 0.25\n");
        assert_eq!(QuadratureRule::parse(&good).unwrap().len(), 2);
    }

    #[test]
    fn constructor_enforces_invariants() {
        let hb = HyperBox::reference();
        assert!(QuadratureRule::new(vec![1.0, 1.0], vec![1.0, 1.0], hb, 1e-5).is_err());
        assert!(QuadratureRule::new(vec![0.0], vec![1.0], hb, 1e-5).is_err());
        assert!(QuadratureRule::new(vec![1.0], vec![1.0, 2.0], hb, 1e-5).is_err());
        assert!(QuadratureRule::new(vec![1.0], vec![1.0], hb, 1e-5).is_ok());
    }
}
