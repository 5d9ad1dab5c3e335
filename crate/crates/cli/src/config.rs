//! Run configuration: one JSON file, overridden by flags.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use excursion_core::field::ModelSpec;
use excursion_core::geometry::RectDomain;
use excursion_core::mec::Method;
use excursion_core::quad::QuadSpec;
use excursion_core::Error;
use serde::Deserialize;

/// A bound is a number or a small product/quotient expression in `pi`,
/// e.g. `"3*pi/2"` or `"-pi"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Num(f64),
    Expr(String),
}

impl Bound {
    pub fn value(&self) -> Result<f64, Error> {
        match self {
            Bound::Num(x) => Ok(*x),
            Bound::Expr(s) => eval_expr(s),
        }
    }
}

fn eval_expr(src: &str) -> Result<f64, Error> {
    let bad = || Error::Config(format!("cannot parse bound '{src}'"));
    let s: String = src.chars().filter(|c| !c.is_whitespace()).collect();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.as_str()),
    };
    if body.is_empty() {
        return Err(bad());
    }
    let mut acc = 1.0;
    let mut op = '*';
    let mut start = 0;
    let bytes: Vec<char> = body.chars().collect();
    for i in 0..=bytes.len() {
        if i == bytes.len() || bytes[i] == '*' || bytes[i] == '/' {
            let tok: String = bytes[start..i].iter().collect();
            let v = match tok.as_str() {
                "pi" | "π" => PI,
                "" => return Err(bad()),
                t => t.parse::<f64>().map_err(|_| bad())?,
            };
            acc = if op == '*' { acc * v } else { acc / v };
            if i < bytes.len() {
                op = bytes[i];
            }
            start = i + 1;
        }
    }
    if !acc.is_finite() {
        return Err(bad());
    }
    Ok(if neg { -acc } else { acc })
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<Bound>,
    pub upper: Vec<Bound>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Levels {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Levels {
    /// Parse `A:B:S` (stop inclusive).
    pub fn parse_range(s: &str) -> Result<Self, Error> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("levels must look like START:STOP:STEP, got '{s}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| bad());
        Ok(Levels::Range {
            start: num(parts[0])?,
            stop: num(parts[1])?,
            step: num(parts[2])?,
        })
    }

    pub fn values(&self) -> Result<Vec<f64>, Error> {
        let v = match self {
            Levels::List(v) => v.clone(),
            Levels::Range { start, stop, step } => {
                if !(*step > 0.0) || !step.is_finite() {
                    return Err(Error::Config("level step must be positive".into()));
                }
                let n = ((stop - start) / step + 1e-9).floor();
                if !(n >= 0.0) || n > 1e6 {
                    return Err(Error::Config(format!("empty or oversized level range {start}:{stop}:{step}")));
                }
                (0..=n as usize).map(|i| start + i as f64 * step).collect()
            }
        };
        if v.is_empty() {
            return Err(Error::Config("no levels given".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("levels must be finite".into()));
        }
        if v.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("levels must be strictly increasing".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMethod {
    Analytic(Method),
    Mc,
}

impl std::str::FromStr for RunMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "mc" {
            Ok(RunMethod::Mc)
        } else {
            s.parse().map(RunMethod::Analytic)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    pub order: Option<usize>,
    pub rel_tol: Option<f64>,
    pub max_subdivisions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub grid: usize,
    pub reps: usize,
    pub dual_resolution: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            reps: 1000,
            dual_resolution: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub field: ModelSpec,
    pub domain: DomainConfig,
    #[serde(default)]
    pub levels: Option<Levels>,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub quad: QuadConfig,
    #[serde(default)]
    pub mc: McConfig,
    /// Fixed default so that runs without `--seed` are reproducible.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed configuration: {e}")))
    }

    pub fn domain(&self) -> Result<RectDomain, Error> {
        let eval = |v: &[Bound]| v.iter().map(Bound::value).collect::<Result<Vec<_>, _>>();
        RectDomain::new(eval(&self.domain.lower)?, eval(&self.domain.upper)?)
    }

    pub fn method(&self) -> Result<RunMethod, Error> {
        self.method.as_deref().unwrap_or("mu_approx").parse()
    }

    pub fn levels(&self) -> Result<Vec<f64>, Error> {
        self.levels
            .as_ref()
            .ok_or_else(|| Error::Config("no levels given (config 'levels' or --levels)".into()))?
            .values()
    }

    pub fn quad_spec(&self) -> Result<QuadSpec, Error> {
        let d = QuadSpec::default();
        let spec = QuadSpec {
            order_per_axis: self.quad.order.unwrap_or(d.order_per_axis),
            rel_tol: self.quad.rel_tol.unwrap_or(d.rel_tol),
            max_subdivisions: self.quad.max_subdivisions.unwrap_or(d.max_subdivisions),
            ..d
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pi_expressions() {
        let v = |s: &str| Bound::Expr(s.into()).value().unwrap();
        assert_eq!(v("pi"), PI);
        assert_eq!(v("3*pi/2"), 3.0 * PI / 2.0);
        assert_eq!(v("-pi / 2"), -PI / 2.0);
        assert_eq!(v("0.25"), 0.25);
        for bad in ["", "pi*", "2pi", "e", "-", "1/0"] {
            assert!(Bound::Expr(bad.into()).value().is_err(), "{bad}");
        }
    }

    #[test]
    fn level_ranges() {
        assert_eq!(Levels::parse_range("5:9:1").unwrap().values().unwrap(), vec![5.0, 6.0, 7.0, 8.0, 9.0]);
        let v = Levels::parse_range("0:1:0.1").unwrap().values().unwrap();
        assert_eq!(v.len(), 11);
        assert!(Levels::parse_range("1:0:1").unwrap().values().is_err());
        assert!(Levels::parse_range("1:2").is_err());
        assert!(Levels::List(vec![2.0, 1.0]).values().is_err());
        assert!(Levels::List(vec![]).values().is_err());
    }

    #[test]
    fn full_config() {
        let c = RunConfig::parse(
            r#"{"field":{"type":"cosine"},
                "domain":{"lower":[0,0],"upper":["3*pi/2","pi"]},
                "levels":{"start":5,"stop":8,"step":1},
                "method":"mean_ec","quad":{"order":16},"mc":{"grid":32},"seed":7}"#,
        )
        .unwrap();
        assert_eq!(c.domain().unwrap().upper(), &[1.5 * PI, PI]);
        assert_eq!(c.levels().unwrap().len(), 4);
        assert_eq!(c.method().unwrap(), RunMethod::Analytic(Method::MeanEc));
        assert_eq!(c.quad_spec().unwrap().order_per_axis, 16);
        assert_eq!(c.mc.grid, 32);
        assert_eq!(c.mc.reps, 1000);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn defaults_and_rejections() {
        let c = RunConfig::parse(r#"{"field":{"type":"cosine"},"domain":{"lower":[0,0],"upper":[1,1]}}"#).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.method().unwrap(), RunMethod::Analytic(Method::MuApprox));
        assert!(c.levels().is_err());
        assert!(RunConfig::parse(r#"{"field":{"type":"cosine"},"domain":{"lower":[0],"upper":[1]},"extra":1}"#).is_err());
        let c = RunConfig::parse(r#"{"field":{"type":"cosine"},"domain":{"lower":[0,2],"upper":[1,1]}}"#).unwrap();
        let e = c.domain().unwrap_err().to_string();
        assert!(e.contains("axis 2"), "{e}");
        let c = RunConfig::parse(r#"{"field":{"type":"cosine"},"domain":{"lower":[0],"upper":[1]},"method":"mc"}"#).unwrap();
        assert_eq!(c.method().unwrap(), RunMethod::Mc);
    }
}
