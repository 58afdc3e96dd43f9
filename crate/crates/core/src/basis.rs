//! Univariate symbolic basis functions used inside leaf expressions.
//!
//! Every function has the shape `x^p * g(x)` where `g` is one of
//! `1, exp(x), exp(-x), exp(1/x), exp(-1/x)` and `x` is one designated
//! coordinate of the input vector.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Inputs whose designated coordinate is closer to zero than this are
/// rejected by forms containing `1/x`.
pub const X_GUARD: f64 = 1e-6;

/// The exponential factor of a basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExpFactor {
    None,
    Exp,
    NegExp,
    ExpInv,
    NegExpInv,
}

impl ExpFactor {
    fn uses_reciprocal(self) -> bool {
        matches!(self, ExpFactor::ExpInv | ExpFactor::NegExpInv)
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            ExpFactor::None => 1.0,
            ExpFactor::Exp => x.exp(),
            ExpFactor::NegExp => (-x).exp(),
            ExpFactor::ExpInv => (1.0 / x).exp(),
            ExpFactor::NegExpInv => (-1.0 / x).exp(),
        }
    }

    fn suffix(self) -> Option<&'static str> {
        match self {
            ExpFactor::None => None,
            ExpFactor::Exp => Some("exp(VAR)"),
            ExpFactor::NegExp => Some("exp(-VAR)"),
            ExpFactor::ExpInv => Some("exp(1/VAR)"),
            ExpFactor::NegExpInv => Some("exp(-1/VAR)"),
        }
    }
}

/// Symbolic form `x^power * factor(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Form {
    pub power: u32,
    pub factor: ExpFactor,
}

impl Form {
    pub const fn new(power: u32, factor: ExpFactor) -> Self {
        Form { power, factor }
    }

    pub fn eval(&self, x: f64) -> f64 {
        x.powi(self.power as i32) * self.factor.eval(x)
    }

    /// Renders the form with `var` standing for the coordinate.
    pub fn render(&self, var: &str) -> String {
        let mono = match self.power {
            0 => None,
            1 => Some(var.to_string()),
            p => Some(format!("{var}^{p}")),
        };
        let fac = self.factor.suffix().map(|s| s.replace("VAR", var));
        match (mono, fac) {
            (None, None) => "1".to_string(),
            (Some(m), None) => m,
            (None, Some(f)) => f,
            (Some(m), Some(f)) => format!("{m}*{f}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisFunction {
    /// 1-based position inside its set.
    pub id: usize,
    pub form: Form,
    /// Input coordinate the function reads.
    pub coordinate: usize,
}

impl BasisFunction {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = *x.get(self.coordinate).ok_or_else(|| {
            Error::Dimension(format!(
                "basis function {} reads coordinate {} but input has {} entries",
                self.id,
                self.coordinate,
                x.len()
            ))
        })?;
        if self.form.factor.uses_reciprocal() && v.abs() < X_GUARD {
            return Err(Error::Domain(format!(
                "basis function {} ({}) evaluated at {v}: |x| < {X_GUARD}",
                self.id,
                self.label()
            )));
        }
        Ok(self.form.eval(v))
    }

    /// Text form as written in model files, e.g. `x^2*exp(x)`.
    pub fn label(&self) -> String {
        self.form.render(&var_name(self.coordinate))
    }
}

impl fmt::Display for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn var_name(coordinate: usize) -> String {
    if coordinate == 0 {
        "x".to_string()
    } else {
        format!("x[{coordinate}]")
    }
}

/// Ordered collection of basis functions with ids `1..=len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisSet {
    functions: Vec<BasisFunction>,
}

impl BasisSet {
    /// Builds a set from `(form, coordinate)` pairs, assigning ids in order.
    pub fn new(forms: impl IntoIterator<Item = (Form, usize)>) -> Self {
        let functions = forms
            .into_iter()
            .enumerate()
            .map(|(i, (form, coordinate))| BasisFunction {
                id: i + 1,
                form,
                coordinate,
            })
            .collect();
        BasisSet { functions }
    }

    /// The constant function only.
    pub fn constant() -> Self {
        BasisSet::new([(Form::new(0, ExpFactor::None), 0)])
    }

    /// `{1, x_0, ..., x_{n-1}}`, the feature set of a linear-leaf tree.
    pub fn affine(n_features: usize) -> Self {
        let mut forms = vec![(Form::new(0, ExpFactor::None), 0)];
        forms.extend((0..n_features).map(|f| (Form::new(1, ExpFactor::None), f)));
        BasisSet::new(forms)
    }

    pub fn functions(&self) -> &[BasisFunction] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Looks a function up by its 1-based id.
    pub fn get(&self, id: usize) -> Option<&BasisFunction> {
        id.checked_sub(1).and_then(|i| self.functions.get(i))
    }

    pub fn labels(&self) -> Vec<String> {
        self.functions.iter().map(BasisFunction::label).collect()
    }

    /// Parses labels produced by [`BasisSet::labels`].
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let forms = labels
            .iter()
            .enumerate()
            .map(|(i, s)| {
                parse_label(s.as_ref())
                    .map_err(|m| Error::parse(format!("basis[{i}]"), m))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BasisSet::new(forms))
    }

    /// Evaluates every function at `x`, in id order.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.functions.iter().map(|f| f.eval(x)).collect()
    }

    /// Largest coordinate read by any function, plus one.
    pub fn min_input_dim(&self) -> usize {
        self.functions
            .iter()
            .map(|f| f.coordinate + 1)
            .max()
            .unwrap_or(0)
    }
}

impl FromStr for BasisSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let labels: Vec<&str> = s.split(',').map(str::trim).collect();
        BasisSet::from_labels(&labels)
    }
}

/// The 19 functions of the reference case study, in table order.
pub fn canonical_basis() -> BasisSet {
    use ExpFactor::*;
    let forms = [
        Form::new(0, None),
        Form::new(1, None),
        Form::new(2, None),
        Form::new(3, None),
        Form::new(4, None),
        Form::new(5, None),
        Form::new(0, Exp),
        Form::new(1, Exp),
        Form::new(2, Exp),
        Form::new(3, Exp),
        Form::new(0, NegExp),
        Form::new(1, NegExp),
        Form::new(2, NegExp),
        Form::new(3, NegExp),
        Form::new(1, ExpInv),
        Form::new(2, ExpInv),
        Form::new(3, ExpInv),
        Form::new(0, NegExpInv),
        Form::new(1, NegExpInv),
    ];
    BasisSet::new(forms.into_iter().map(|f| (f, 0)))
}

/// Convenience wrapper around [`BasisSet::evaluate`].
pub fn evaluate_basis(bs: &BasisSet, x: &[f64]) -> Result<Vec<f64>> {
    bs.evaluate(x)
}

fn parse_label(s: &str) -> std::result::Result<(Form, usize), String> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if s == "1" {
        return Ok((Form::new(0, ExpFactor::None), 0));
    }
    let (mono, fac) = match s.find("exp(") {
        Some(0) => (None, Some(&s[..])),
        Some(pos) => {
            let head = &s[..pos];
            let head = head
                .strip_suffix('*')
                .ok_or_else(|| format!("expected '*' before exp in {s:?}"))?;
            (Some(head), Some(&s[pos..]))
        }
        None => (Some(&s[..]), None),
    };

    let mut coordinate: Option<usize> = None;
    let mut bind = |c: usize| -> std::result::Result<(), String> {
        match coordinate {
            Some(prev) if prev != c => Err(format!("{s:?} mixes coordinates {prev} and {c}")),
            _ => {
                coordinate = Some(c);
                Ok(())
            }
        }
    };

    let power = match mono {
        None => 0,
        Some(m) => {
            let (var, pow) = match m.split_once('^') {
                Some((v, p)) => (
                    v,
                    p.parse::<u32>()
                        .map_err(|_| format!("bad power in {s:?}"))?,
                ),
                None => (m, 1),
            };
            bind(parse_var(var).ok_or_else(|| format!("bad variable {var:?} in {s:?}"))?)?;
            pow
        }
    };

    let factor = match fac {
        None => ExpFactor::None,
        Some(f) => {
            let inner = f
                .strip_prefix("exp(")
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| format!("malformed exponential in {s:?}"))?;
            let (factor, var) = if let Some(v) = inner.strip_prefix("-1/") {
                (ExpFactor::NegExpInv, v)
            } else if let Some(v) = inner.strip_prefix("1/") {
                (ExpFactor::ExpInv, v)
            } else if let Some(v) = inner.strip_prefix('-') {
                (ExpFactor::NegExp, v)
            } else {
                (ExpFactor::Exp, inner)
            };
            bind(parse_var(var).ok_or_else(|| format!("bad variable {var:?} in {s:?}"))?)?;
            factor
        }
    };

    Ok((Form::new(power, factor), coordinate.unwrap_or(0)))
}

fn parse_var(v: &str) -> Option<usize> {
    if v == "x" {
        return Some(0);
    }
    v.strip_prefix("x[")?.strip_suffix(']')?.parse().ok()
}
