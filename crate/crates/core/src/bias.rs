//! Relative attention bias: linear and periodic (triangular-wave) penalties,
//! head grouping, causal masks, and matrix dumps.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::{Mask, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum BiasError {
    #[error("invalid period {period}: must be at least 2")]
    InvalidPeriod { period: usize },
    #[error("raw period {period} must be a positive integer")]
    ZeroPeriod { period: usize },
    #[error("stride {stride} does not divide period {period}")]
    Indivisible { period: usize, stride: usize },
    #[error("stride must be positive")]
    ZeroStride,
    #[error("head index {k} out of range 1..={n}")]
    HeadOutOfRange { k: usize, n: usize },
    #[error("{groups} groups do not divide {heads} heads")]
    GroupsDontDivide { heads: usize, groups: usize },
    #[error("regime {regime} needs at least one period")]
    MissingPeriods { regime: Regime },
    #[error("matrix extents must be positive, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("unknown regime '{0}' (expected nobias, nonperiodic, periodic or both)")]
    UnknownRegime(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T, E = BiasError> = std::result::Result<T, E>;

/// Which bias families the attention groups receive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    NoBias,
    NonPeriodic,
    Periodic,
    #[default]
    Both,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::NoBias, Regime::NonPeriodic, Regime::Periodic, Regime::Both];

    pub fn name(self) -> &'static str {
        match self {
            Regime::NoBias => "nobias",
            Regime::NonPeriodic => "nonperiodic",
            Regime::Periodic => "periodic",
            Regime::Both => "both",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = BiasError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "nobias" | "none" => Ok(Regime::NoBias),
            "nonperiodic" | "linear" => Ok(Regime::NonPeriodic),
            "periodic" => Ok(Regime::Periodic),
            "both" => Ok(Regime::Both),
            _ => Err(BiasError::UnknownRegime(s.to_string())),
        }
    }
}

/// Raw periods in timesteps together with their image in patch tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeriodSet {
    raw: Vec<usize>,
    stride: usize,
    patched: Vec<usize>,
}

impl PeriodSet {
    pub fn new(raw: &[usize], stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(BiasError::ZeroStride);
        }
        let mut patched = Vec::with_capacity(raw.len());
        for &period in raw {
            if period == 0 {
                return Err(BiasError::ZeroPeriod { period });
            }
            if period % stride != 0 {
                return Err(BiasError::Indivisible { period, stride });
            }
            patched.push(period / stride);
        }
        patched.sort_unstable();
        patched.dedup();
        Ok(Self {
            raw: raw.to_vec(),
            stride,
            patched,
        })
    }

    /// Periods already expressed in tokens (stride 1).
    pub fn patched(periods: &[usize]) -> Result<Self> {
        Self::new(periods, 1)
    }

    pub fn raw(&self) -> &[usize] {
        &self.raw
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn patched_periods(&self) -> &[usize] {
        &self.patched
    }

    pub fn is_empty(&self) -> bool {
        self.patched.is_empty()
    }
}

/// `2^(-8/k)` for head index `k` in `1..=n`.
pub fn slope(k: usize, n: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(BiasError::HeadOutOfRange { k, n });
    }
    Ok((-8.0 / k as f64).exp2())
}

/// Slopes shared by every group of `n` heads.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeVector {
    slopes: Vec<f64>,
}

impl SlopeVector {
    pub fn new(n: usize) -> Self {
        Self {
            slopes: (1..=n).map(|k| (-8.0 / k as f64).exp2()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.slopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slopes.is_empty()
    }

    /// Slope for 1-based index `k`.
    pub fn get(&self, k: usize) -> Result<f64> {
        slope(k, self.slopes.len())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.slopes
    }
}

/// Distance to the nearest multiple of `period`.
pub fn triangular_distance(d: usize, period: usize) -> Result<usize> {
    if period < 2 {
        return Err(BiasError::InvalidPeriod { period });
    }
    let u = d % period;
    Ok(if 2 * u < period { u } else { period - u })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BiasKind {
    None,
    NonPeriodic,
    Periodic(usize),
}

impl fmt::Display for BiasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BiasKind::None => f.write_str("none"),
            BiasKind::NonPeriodic => f.write_str("nonperiodic"),
            BiasKind::Periodic(p) => write!(f, "periodic({p})"),
        }
    }
}

/// Everything needed to materialize one head's bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasSpec {
    pub kind: BiasKind,
    pub slope: f64,
    pub rows: usize,
    pub cols: usize,
    pub decoder_offset: usize,
}

impl BiasSpec {
    pub fn encoder(kind: BiasKind, slope: f64, n: usize) -> Self {
        Self {
            kind,
            slope,
            rows: n,
            cols: n,
            decoder_offset: 0,
        }
    }

    pub fn build(&self) -> Result<BiasMatrix> {
        match self.kind {
            BiasKind::None => BiasMatrix::from_fn(self.rows, self.cols, |_, _| 0.0),
            BiasKind::NonPeriodic => build_nonperiodic(self.rows, self.cols, self.slope, self.decoder_offset),
            BiasKind::Periodic(p) => build_periodic(self.rows, self.cols, self.slope, p, self.decoder_offset),
        }
    }
}

/// Dense row-major bias values.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl BiasMatrix {
    fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(BiasError::EmptyMatrix { rows, cols });
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                // keep -0.0 out of dumps
                data.push(f(i, j) + 0.0);
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{}", v + 0.0)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary greyscale image, `min` maps to black and `0` to white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        let lo = self.min();
        out.extend(self.data.iter().map(|&v| {
            if lo == 0.0 {
                255
            } else {
                (255.0 * (v - lo) / -lo).round().clamp(0.0, 255.0) as u8
            }
        }));
        out
    }
}

/// `-m·|i + offset - j|` over a `rows × cols` grid.
pub fn build_nonperiodic(rows: usize, cols: usize, m: f64, offset: usize) -> Result<BiasMatrix> {
    BiasMatrix::from_fn(rows, cols, |i, j| -m * (i + offset).abs_diff(j) as f64)
}

/// `-m·tri(|i + offset - j|, period)` over a `rows × cols` grid.
pub fn build_periodic(rows: usize, cols: usize, m: f64, period: usize, offset: usize) -> Result<BiasMatrix> {
    triangular_distance(0, period)?;
    BiasMatrix::from_fn(rows, cols, |i, j| {
        let u = (i + offset).abs_diff(j) % period;
        let t = if 2 * u < period { u } else { period - u };
        -m * t as f64
    })
}

/// Query `i` may see key `j` iff `j <= i + offset`.
pub fn causal_mask(rows: usize, cols: usize, offset: usize) -> Result<Mask> {
    if rows == 0 || cols == 0 {
        return Err(BiasError::EmptyMatrix { rows, cols });
    }
    Ok(Mask::from_fn(rows, cols, |i, j| j <= i + offset)?)
}

/// Bias kind for each attention group, in group order.
pub fn group_kinds(regime: Regime, periods: &PeriodSet) -> Result<Vec<BiasKind>> {
    let periodic = periods.patched_periods().iter().map(|&p| BiasKind::Periodic(p));
    match regime {
        Regime::NoBias => Ok(vec![BiasKind::None]),
        Regime::NonPeriodic => Ok(vec![BiasKind::NonPeriodic]),
        Regime::Periodic | Regime::Both if periods.is_empty() => Err(BiasError::MissingPeriods { regime }),
        Regime::Periodic => Ok(periodic.collect()),
        Regime::Both => Ok(std::iter::once(BiasKind::NonPeriodic).chain(periodic).collect()),
    }
}

/// One head's position in the grouping and its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadBias {
    /// Global head index, 1-based.
    pub head: usize,
    /// Group index, 0-based.
    pub group: usize,
    /// Index within the group, 1-based; selects the slope.
    pub within: usize,
    pub kind: BiasKind,
    pub slope: f64,
    pub matrix: BiasMatrix,
}

/// Per-head biases for a whole attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasStack {
    kinds: Vec<BiasKind>,
    heads: Vec<HeadBias>,
}

impl BiasStack {
    pub fn groups(&self) -> usize {
        self.kinds.len()
    }

    pub fn heads_per_group(&self) -> usize {
        self.heads.len() / self.kinds.len()
    }

    pub fn kinds(&self) -> &[BiasKind] {
        &self.kinds
    }

    pub fn heads(&self) -> &[HeadBias] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.heads[0].matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.heads[0].matrix.cols()
    }

    /// Heads belonging to group `r`.
    pub fn group(&self, r: usize) -> &[HeadBias] {
        let n = self.heads_per_group();
        &self.heads[r * n..(r + 1) * n]
    }

    /// Write one file per head into `dir`, named `head{H}_group{r}` (both 1-based).
    pub fn dump(&self, dir: &Path, format: DumpFormat) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|source| BiasError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut written = Vec::with_capacity(self.heads.len());
        for hb in &self.heads {
            let path = dir.join(format!("head{}_group{}.{}", hb.head, hb.group + 1, format.extension()));
            let bytes = match format {
                DumpFormat::Csv => hb.matrix.to_csv().into_bytes(),
                DumpFormat::Pgm => hb.matrix.to_pgm(),
            };
            fs::File::create(&path)
                .and_then(|mut f| f.write_all(&bytes))
                .map_err(|source| BiasError::Io {
                    path: path.clone(),
                    source,
                })?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Build every head's bias for `heads` heads over a query/key grid.
///
/// Heads are split into contiguous groups; the `k`-th head of every group
/// uses slope `m_k`.
pub fn assemble_bias_stack(
    regime: Regime,
    periods: &PeriodSet,
    heads: usize,
    rows: usize,
    cols: usize,
    decoder_offset: usize,
) -> Result<BiasStack> {
    let kinds = group_kinds(regime, periods)?;
    let groups = kinds.len();
    if heads == 0 || heads % groups != 0 {
        return Err(BiasError::GroupsDontDivide { heads, groups });
    }
    let n = heads / groups;
    let slopes = SlopeVector::new(n);
    let mut out = Vec::with_capacity(heads);
    for head in 1..=heads {
        let group = (head - 1) / n;
        let within = (head - 1) % n + 1;
        let kind = kinds[group];
        let slope = slopes.get(within)?;
        let matrix = BiasSpec {
            kind,
            slope,
            rows,
            cols,
            decoder_offset,
        }
        .build()?;
        out.push(HeadBias {
            head,
            group,
            within,
            kind,
            slope,
            matrix,
        });
    }
    Ok(BiasStack { kinds, heads: out })
}

/// Square encoder stack over `n` tokens.
pub fn encoder_stack(regime: Regime, periods: &PeriodSet, heads: usize, n: usize) -> Result<BiasStack> {
    assemble_bias_stack(regime, periods, heads, n, n, 0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpFormat {
    #[default]
    Csv,
    Pgm,
}

impl DumpFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DumpFormat::Csv => "csv",
            DumpFormat::Pgm => "pgm",
        }
    }
}

impl FromStr for DumpFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DumpFormat::Csv),
            "pgm" => Ok(DumpFormat::Pgm),
            other => Err(format!("unknown format '{other}' (expected csv or pgm)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_distance(d: usize, period: usize) -> usize {
        (0..=d / period + 1)
            .map(|m| (d as i64 - (m * period) as i64).unsigned_abs() as usize)
            .min()
            .unwrap()
    }

    fn rows(m: &BiasMatrix) -> Vec<Vec<f64>> {
        (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(triangular_distance(0, 3).unwrap(), 0);
        assert_eq!(triangular_distance(4, 3).unwrap(), brute_distance(4, 3));
        assert_eq!(triangular_distance(4, 3).unwrap(), 1);
        assert_eq!(triangular_distance(10, 21).unwrap(), 10);
        assert_eq!(triangular_distance(11, 21).unwrap(), 10);
        assert!(matches!(triangular_distance(5, 1), Err(BiasError::InvalidPeriod { period: 1 })));
        assert!(triangular_distance(5, 0).is_err());
    }

    #[test]
    fn distance_matches_brute_force() {
        for period in [2, 3, 5, 21, 24] {
            for d in 0..5 * period {
                assert_eq!(triangular_distance(d, period).unwrap(), brute_distance(d, period), "d={d} p={period}");
            }
        }
    }

    #[test]
    fn slope_examples() {
        assert_eq!(slope(1, 8).unwrap(), 0.00390625);
        assert_eq!(slope(2, 8).unwrap(), 0.0625);
        assert_eq!(slope(8, 8).unwrap(), 0.5);
        assert!(slope(0, 4).is_err());
        assert!(slope(5, 4).is_err());
    }

    #[test]
    fn slopes_increase_inside_unit_interval() {
        let s = SlopeVector::new(12);
        for k in 1..=12 {
            assert_eq!(s.get(k).unwrap(), 2f64.powf(-8.0 / k as f64));
        }
        assert!(s.as_slice().windows(2).all(|w| w[0] < w[1]));
        assert!(s.as_slice().iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn nonperiodic_examples() {
        let m = build_nonperiodic(3, 3, 1.0, 0).unwrap();
        assert_eq!(rows(&m), vec![vec![0.0, -1.0, -2.0], vec![-1.0, 0.0, -1.0], vec![-2.0, -1.0, 0.0]]);
        assert_eq!(build_nonperiodic(1, 1, 0.3, 0).unwrap().data(), &[0.0]);

        let dec = build_nonperiodic(2, 3, 1.0, 3).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(dec.get(i, j), -(((i + 3) as f64) - j as f64).abs());
            }
        }
    }

    #[test]
    fn periodic_examples() {
        let m = build_periodic(4, 4, 1.0, 3, 0).unwrap();
        assert_eq!(m.row(0), &[0.0, -1.0, -1.0, 0.0]);

        let stripes = build_periodic(5, 5, 0.25, 2, 0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if (i + j) % 2 == 0 { 0.0 } else { -0.25 };
                assert_eq!(stripes.get(i, j), want);
            }
        }

        // weekly period of hourly data after stride 8
        let set = PeriodSet::new(&[24, 168], 8).unwrap();
        assert_eq!(set.patched_periods(), &[3, 21]);
        let mk = 0.0625;
        let weekly = build_periodic(42, 42, mk, 21, 0).unwrap();
        assert_eq!(weekly.get(0, 21), 0.0);
        assert_eq!(weekly.get(0, 10), -(brute_distance(10, 21) as f64) * mk);
        assert_eq!(weekly.get(0, 10), -10.0 * mk);

        assert!(matches!(build_periodic(3, 3, 1.0, 1, 0), Err(BiasError::InvalidPeriod { .. })));
    }

    #[test]
    fn period_set_rules() {
        assert!(matches!(PeriodSet::new(&[24, 30], 8), Err(BiasError::Indivisible { period: 30, stride: 8 })));
        let dup = PeriodSet::new(&[48, 24, 48], 8).unwrap();
        assert_eq!(dup.patched_periods(), &[3, 6]);
        assert_eq!(dup.raw(), &[48, 24, 48]);
        assert!(PeriodSet::new(&[], 8).unwrap().is_empty());
        assert!(PeriodSet::new(&[0], 1).is_err());
    }

    #[test]
    fn stack_both_regime() {
        let set = PeriodSet::patched(&[3, 21]).unwrap();
        let stack = encoder_stack(Regime::Both, &set, 12, 42).unwrap();
        assert_eq!(stack.groups(), 3);
        assert_eq!(stack.heads_per_group(), 4);
        assert_eq!(stack.kinds(), &[BiasKind::NonPeriodic, BiasKind::Periodic(3), BiasKind::Periodic(21)]);
        let want = [2f64.powi(-8), 2f64.powi(-4), 2f64.powf(-8.0 / 3.0), 2f64.powi(-2)];
        for r in 0..3 {
            let slopes: Vec<f64> = stack.group(r).iter().map(|h| h.slope).collect();
            assert_eq!(slopes, want);
            assert!(stack.group(r).iter().all(|h| h.kind == stack.kinds()[r] && h.group == r));
        }
    }

    #[test]
    fn stack_nobias_is_zero() {
        let stack = encoder_stack(Regime::NoBias, &PeriodSet::patched(&[]).unwrap(), 4, 7).unwrap();
        assert_eq!(stack.len(), 4);
        assert_eq!(stack.groups(), 1);
        assert!(stack.heads().iter().all(|h| h.matrix.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stack_periodic_single_group() {
        let stack = encoder_stack(Regime::Periodic, &PeriodSet::patched(&[3]).unwrap(), 12, 10).unwrap();
        assert_eq!(stack.groups(), 1);
        for (idx, h) in stack.heads().iter().enumerate() {
            assert_eq!(h.within, idx + 1);
            assert_eq!(h.slope, 2f64.powf(-8.0 / (idx + 1) as f64));
            assert_eq!(h.kind, BiasKind::Periodic(3));
        }
    }

    #[test]
    fn stack_configuration_errors() {
        let set = PeriodSet::patched(&[3, 21]).unwrap();
        assert!(matches!(
            encoder_stack(Regime::Both, &set, 8, 10),
            Err(BiasError::GroupsDontDivide { heads: 8, groups: 3 })
        ));
        let empty = PeriodSet::patched(&[]).unwrap();
        assert!(matches!(encoder_stack(Regime::Periodic, &empty, 4, 10), Err(BiasError::MissingPeriods { .. })));
        assert!(matches!(encoder_stack(Regime::Both, &empty, 4, 10), Err(BiasError::MissingPeriods { .. })));
    }

    #[test]
    fn causal_examples() {
        let m = causal_mask(3, 3, 0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.is_allowed(i, j), j <= i);
            }
        }
        assert!(causal_mask(1, 1, 0).unwrap().is_allowed(0, 0));
        let d = causal_mask(2, 5, 3).unwrap();
        assert_eq!(d.allowed(), &[true, true, true, true, false, true, true, true, true, true]);
    }

    #[test]
    fn regime_parsing() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
            let json = serde_json::to_string(&r).unwrap();
            assert_eq!(json, format!("\"{}\"", r.name()));
        }
        assert_eq!("Non-Periodic".parse::<Regime>().unwrap(), Regime::NonPeriodic);
        assert!("sideways".parse::<Regime>().is_err());
    }

    #[test]
    fn csv_and_pgm_rendering() {
        let m = build_periodic(2, 3, 1.0, 3, 0).unwrap();
        assert_eq!(m.to_csv(), "0,-1,-1\n-1,0,-1\n");
        let pgm = m.to_pgm();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[255, 0, 0, 0, 255, 0]);

        let zero = BiasSpec::encoder(BiasKind::None, 1.0, 2).build().unwrap();
        assert!(zero.to_pgm()[b"P5\n2 2\n255\n".len()..].iter().all(|&b| b == 255));
    }

    #[test]
    fn dump_names_every_head() {
        let dir = tempfile::tempdir().unwrap();
        let stack = encoder_stack(Regime::Both, &PeriodSet::patched(&[3, 21]).unwrap(), 12, 42).unwrap();
        let files = stack.dump(dir.path(), DumpFormat::Csv).unwrap();
        assert_eq!(files.len(), 12);
        assert!(dir.path().join("head1_group1.csv").exists());
        assert!(dir.path().join("head12_group3.csv").exists());
        let text = fs::read_to_string(dir.path().join("head5_group2.csv")).unwrap();
        assert_eq!(text.lines().count(), 42);
        assert!(text.lines().all(|l| l.split(',').count() == 42));
    }

    proptest! {
        #[test]
        fn distance_is_periodic_and_bounded(period in 2usize..64, d in 0usize..2000) {
            let t = triangular_distance(d, period).unwrap();
            prop_assert_eq!(t, brute_distance(d, period));
            prop_assert_eq!(t, triangular_distance(d + period, period).unwrap());
            prop_assert!(t <= period / 2);
            prop_assert_eq!(t == 0, d % period == 0);
        }

        #[test]
        fn encoder_matrices_are_symmetric_toeplitz(
            n in 1usize..24,
            k in 1usize..8,
            period in 2usize..12,
            periodic in any::<bool>(),
        ) {
            let m = slope(k, 8).unwrap();
            let mat = if periodic {
                build_periodic(n, n, m, period, 0).unwrap()
            } else {
                build_nonperiodic(n, n, m, 0).unwrap()
            };
            let floor = if periodic { -m * (period / 2) as f64 } else { -m * (n - 1) as f64 };
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(mat.get(i, j), mat.get(j, i));
                    prop_assert!(mat.get(i, j) <= 0.0 && mat.get(i, j) >= floor);
                    if i + 1 < n && j + 1 < n {
                        prop_assert_eq!(mat.get(i, j), mat.get(i + 1, j + 1));
                    }
                }
                if !periodic {
                    prop_assert_eq!(mat.get(i, i), 0.0);
                }
            }
        }

        #[test]
        fn decoder_rows_match_larger_encoder(
            n in 1usize..16,
            rows in 1usize..8,
            period in 2usize..9,
            periodic in any::<bool>(),
        ) {
            let (dec, enc) = if periodic {
                (build_periodic(rows, n, 0.5, period, n).unwrap(), build_periodic(n + rows, n + rows, 0.5, period, 0).unwrap())
            } else {
                (build_nonperiodic(rows, n, 0.5, n).unwrap(), build_nonperiodic(n + rows, n + rows, 0.5, 0).unwrap())
            };
            for i in 0..rows {
                for j in 0..n {
                    prop_assert_eq!(dec.get(i, j), enc.get(i + n, j));
                    prop_assert!(dec.get(i, j) >= -0.5 * (rows - 1 + n) as f64);
                }
            }
        }

        #[test]
        fn slopes_ignore_group_labels(
            a in 2usize..8,
            b in 9usize..16,
            c in 17usize..24,
            n in 1usize..5,
        ) {
            let periodic = encoder_stack(Regime::Periodic, &PeriodSet::patched(&[a, b, c]).unwrap(), 3 * n, 12).unwrap();
            let both = encoder_stack(Regime::Both, &PeriodSet::patched(&[c, a]).unwrap(), 3 * n, 12).unwrap();
            prop_assert_ne!(periodic.kinds(), both.kinds());
            for (x, y) in periodic.heads().iter().zip(both.heads()) {
                prop_assert_eq!(x.within, (x.head - 1) % n + 1);
                prop_assert_eq!(x.group, y.group);
                prop_assert_eq!(x.slope, y.slope);
            }
        }
    }
}
