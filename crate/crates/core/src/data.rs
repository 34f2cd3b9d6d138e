//! Samples, datasets, hyperboxes and box-union policies.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Binary treatment label, `+1` (treat) or `-1` (do not treat).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Minus,
    Plus,
}

impl Label {
    pub fn from_sign(v: i64) -> Option<Label> {
        match v {
            1 => Some(Label::Plus),
            -1 => Some(Label::Minus),
            _ => None,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Label::Plus => 1.0,
            Label::Minus => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Plus => 1,
            Label::Minus => -1,
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Plus => Label::Minus,
            Label::Minus => Label::Plus,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Plus => write!(f, "+1"),
            Label::Minus => write!(f, "-1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub t: Label,
    pub y: f64,
}

/// A non-empty collection of samples sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    d: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Dataset> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Invalid("dataset must contain at least one sample".into()))?;
        let d = first.x.len();
        for s in &samples {
            if s.x.len() != d {
                return Err(Error::Dimension { expected: d, got: s.x.len() });
            }
            if !s.y.is_finite() || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("non-finite value in sample".into()));
            }
        }
        Ok(Dataset { samples, d })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Copy of the dataset with every treatment label negated.
    pub fn with_flipped_labels(&self) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample { x: s.x.clone(), t: s.t.flip(), y: s.y })
            .collect();
        Dataset { samples, d: self.d }
    }

    /// Smallest box containing every sample.
    pub fn bounding_box(&self) -> Hyperbox {
        Hyperbox::span(self.samples.iter().map(|s| s.x.as_slice()))
            .expect("dataset is non-empty")
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.d).map(|t| format!("x{t}")).collect();
        writeln!(out, "{},t,y", header.join(","))?;
        for s in &self.samples {
            for v in &s.x {
                write!(out, "{v},")?;
            }
            writeln!(out, "{},{}", s.t.as_i8(), s.y)?;
        }
        Ok(())
    }
}

/// Reads a dataset from a `x0,...,x{d-1},t,y` CSV file.
///
/// With `zero_one_labels`, a treatment column of `0`/`1` is mapped to
/// `-1`/`+1`; otherwise only `-1`/`1` are accepted.
pub fn load_csv(path: impl AsRef<Path>, zero_one_labels: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    read_csv(file, zero_one_labels)
}

pub fn read_csv(reader: impl std::io::Read, zero_one_labels: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Csv { row: 0, msg: e.to_string() })?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 {
        return Err(Error::Csv { row: 0, msg: "header needs x0,...,t,y".into() });
    }
    let d = cols.len() - 2;
    for (t, name) in cols[..d].iter().enumerate() {
        if *name != format!("x{t}") {
            return Err(Error::Csv { row: 0, msg: format!("expected column x{t}, found `{name}`") });
        }
    }
    if cols[d] != "t" || cols[d + 1] != "y" {
        return Err(Error::Csv { row: 0, msg: "last two columns must be t,y".into() });
    }

    let mut samples = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Csv { row, msg: e.to_string() })?;
        if record.len() != d + 2 {
            return Err(Error::Csv {
                row,
                msg: format!("expected {} columns, found {}", d + 2, record.len()),
            });
        }
        let num = |j: usize| -> Result<f64> {
            let cell = &record[j];
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Csv { row, msg: format!("non-numeric cell `{cell}`") })?;
            if !v.is_finite() {
                return Err(Error::Csv { row, msg: format!("non-finite cell `{cell}`") });
            }
            Ok(v)
        };
        let x = (0..d).map(num).collect::<Result<Vec<_>>>()?;
        let raw_t = num(d)?;
        let t = match (raw_t, zero_one_labels) {
            (v, true) if v == 0.0 => Label::Minus,
            (v, true) if v == 1.0 => Label::Plus,
            (v, false) if v == 1.0 => Label::Plus,
            (v, false) if v == -1.0 => Label::Minus,
            (v, _) => {
                let allowed = if zero_one_labels { "{0,1}" } else { "{-1,1}" };
                return Err(Error::Csv { row, msg: format!("label {v} outside {allowed}") });
            }
        };
        let y = num(d + 1)?;
        samples.push(Sample { x, t, y });
    }
    if samples.is_empty() {
        return Err(Error::Csv { row: 1, msg: "empty body".into() });
    }
    Dataset::new(samples)
}

/// Closed axis-aligned box `[l_1,u_1] x ... x [l_d,u_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperbox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Hyperbox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Hyperbox> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension { expected: lower.len(), got: upper.len() });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Invalid("box lower bound exceeds upper bound".into()));
        }
        Ok(Hyperbox { lower, upper })
    }

    /// Smallest box containing all given points, `None` for no points.
    pub fn span<'a>(mut points: impl Iterator<Item = &'a [f64]>) -> Option<Hyperbox> {
        let first = points.next()?;
        let mut lower = first.to_vec();
        let mut upper = first.to_vec();
        for p in points {
            for (t, &v) in p.iter().enumerate() {
                if v < lower[t] {
                    lower[t] = v;
                }
                if v > upper[t] {
                    upper[t] = v;
                }
            }
        }
        Some(Hyperbox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        debug_assert_eq!(x.len(), self.dim());
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(x)
            .all(|((l, u), v)| *l <= *v && *v <= *u)
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    /// Exact identity key over all `2d` endpoints (`-0.0` folded into `0.0`).
    pub fn key(&self) -> Vec<u64> {
        self.lower
            .iter()
            .chain(&self.upper)
            .map(|v| (v + 0.0).to_bits())
            .collect()
    }
}

/// Closed-interval membership with a dimension check.
pub fn box_contains(b: &Hyperbox, x: &[f64]) -> Result<bool> {
    if b.dim() != x.len() {
        return Err(Error::Dimension { expected: b.dim(), got: x.len() });
    }
    Ok(b.contains(x))
}

/// Union-of-boxes policy: `+1` inside any box, `-1` elsewhere, negated when
/// `flipped` is set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Policy {
    pub boxes: Vec<Hyperbox>,
    pub flipped: bool,
}

impl Policy {
    pub fn new(boxes: Vec<Hyperbox>, flipped: bool) -> Policy {
        Policy { boxes, flipped }
    }

    /// Decision without the dimension check; `x` must have the boxes' dimension.
    pub fn decide(&self, x: &[f64]) -> Label {
        let inside = self.boxes.iter().any(|b| b.contains(x));
        let label = if inside { Label::Plus } else { Label::Minus };
        if self.flipped {
            label.flip()
        } else {
            label
        }
    }
}

pub fn policy_decide(policy: &Policy, x: &[f64]) -> Result<Label> {
    if let Some(b) = policy.boxes.iter().find(|b| b.dim() != x.len()) {
        return Err(Error::Dimension { expected: b.dim(), got: x.len() });
    }
    Ok(policy.decide(x))
}

/// Sign / treatment partition of the retained samples. All indices are
/// positions in the score vector, not dataset rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndexPartition {
    /// `T = +1`
    pub i_plus: Vec<usize>,
    /// `T = -1`
    pub i_minus: Vec<usize>,
    /// `psi > 0`
    pub p: Vec<usize>,
    /// `psi < 0`
    pub n_set: Vec<usize>,
}

/// Which of the four constraint families a retained sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleClass {
    /// treated, positive weight: must be covered to avoid a mismatch
    TreatedPositive,
    /// untreated, positive weight: any covering box causes a mismatch
    UntreatedPositive,
    /// treated, negative weight: any covering box removes the mismatch
    TreatedNegative,
    /// untreated, negative weight: mismatch only if covered
    UntreatedNegative,
}

impl SampleClass {
    pub fn of(psi: f64, t: Label) -> SampleClass {
        match (psi > 0.0, t) {
            (true, Label::Plus) => SampleClass::TreatedPositive,
            (true, Label::Minus) => SampleClass::UntreatedPositive,
            (false, Label::Plus) => SampleClass::TreatedNegative,
            (false, Label::Minus) => SampleClass::UntreatedNegative,
        }
    }
}

pub fn partition(psi: &[f64], t: &[Label]) -> Result<IndexPartition> {
    if psi.len() != t.len() {
        return Err(Error::Dimension { expected: psi.len(), got: t.len() });
    }
    let mut part = IndexPartition::default();
    for (i, (&v, &label)) in psi.iter().zip(t).enumerate() {
        if v == 0.0 || !v.is_finite() {
            return Err(Error::Invalid(format!("score {i} is {v}; zero scores must be dropped first")));
        }
        if v > 0.0 {
            part.p.push(i);
        } else {
            part.n_set.push(i);
        }
        match label {
            Label::Plus => part.i_plus.push(i),
            Label::Minus => part.i_minus.push(i),
        }
    }
    Ok(part)
}

pub const DEFAULT_SPAN_GUARD: usize = 14;

/// All distinct boxes spanned by non-empty subsets of the samples.
pub fn spanned_boxes(dataset: &Dataset, max_n: usize) -> Result<Vec<Hyperbox>> {
    let n = dataset.n();
    if n > max_n {
        return Err(Error::GuardExceeded { size: n as u128, guard: max_n as u128 });
    }
    let points: Vec<&[f64]> = dataset.samples().iter().map(|s| s.x.as_slice()).collect();
    let mut seen = HashSet::new();
    let mut boxes = Vec::new();
    for mask in 1u64..(1u64 << n) {
        let subset = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| points[i]);
        let b = Hyperbox::span(subset).expect("mask is non-zero");
        if seen.insert(b.key()) {
            boxes.push(b);
        }
    }
    Ok(boxes)
}
