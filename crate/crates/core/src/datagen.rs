//! Load-case grids, pressure elimination, Treloar ingestion and the dataset
//! CSV format.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kinematics::{self, diag, Tensor3};
use crate::reference_models::{ref_stress, MaterialParams};
use crate::{Error, Result, INCOMPRESSIBILITY_TOL};

/// One strain–stress pair; masked-out stress components hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub f: Tensor3,
    pub p: Tensor3,
    /// Row-major; `true` where the component enters the loss.
    pub mask: [bool; 9],
}

impl Sample {
    pub fn full(f: Tensor3, p: Tensor3) -> Self {
        Self { f, p, mask: [true; 9] }
    }

    pub fn mask_tensor(&self) -> Tensor3 {
        Tensor3::from_fn(|i, j| if self.mask[3 * i + j] { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(Error::MalformedCsv(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub partition: Vec<Partition>,
    /// Whether the stresses carry an eliminated pressure (`det F = 1` data).
    pub incompressible: bool,
}

impl Dataset {
    /// All samples tagged as training data.
    pub fn training(samples: Vec<Sample>, incompressible: bool) -> Self {
        let partition = vec![Partition::Train; samples.len()];
        Self { samples, partition, incompressible }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, part: Partition) -> usize {
        self.partition.iter().filter(|&&p| p == part).count()
    }

    pub fn subset(&self, part: Partition) -> Vec<&Sample> {
        self.samples
            .iter()
            .zip(&self.partition)
            .filter(|(_, &p)| p == part)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn kind_name(&self) -> &'static str {
        if self.incompressible {
            "incompressible"
        } else {
            "compressible"
        }
    }
}

/// Pressure making `P33 = G33 − p/F33` vanish for diagonal, isochoric `F`.
pub fn solve_pressure(d_psi_d_f: &Tensor3, f: &Tensor3) -> Result<f64> {
    for i in 0..3 {
        for j in 0..3 {
            if i != j && f[(i, j)] != 0.0 {
                return Err(Error::NotDiagonal);
            }
        }
    }
    Ok(f[(2, 2)] * d_psi_d_f[(2, 2)])
}

/// `start + k·step` for integer multiples, avoiding accumulated rounding.
fn range_scaled(start: i64, step: i64, end: i64, denom: f64) -> Vec<f64> {
    (0..)
        .map(|k| start + k * step)
        .take_while(|&v| v <= end)
        .map(|v| v as f64 / denom)
        .collect()
}

/// Identity, uniaxial, equibiaxial and pure-shear states (52 in total, the
/// identity repeats inside each range).
pub fn incompressible_loadcases() -> Vec<Tensor3> {
    let mut out = vec![Tensor3::identity()];
    for l in range_scaled(5, 1, 25, 10.0) {
        let t = 1.0 / l.sqrt();
        out.push(diag(l, t, t));
    }
    for l in range_scaled(7, 1, 20, 10.0) {
        out.push(diag(l, l, 1.0 / (l * l)));
    }
    for l in range_scaled(5, 1, 20, 10.0) {
        out.push(diag(l, 1.0, 1.0 / l));
    }
    out
}

/// `[F11, F22] ∈ [0.5 : 0.075 : 2]²` with `F33 = 1/(F11·F22)`; 441 states.
pub fn inc_mielke_grid() -> Vec<Tensor3> {
    let axis = range_scaled(500, 75, 2000, 1000.0);
    let mut out = Vec::with_capacity(axis.len() * axis.len());
    for &a in &axis {
        for &b in &axis {
            out.push(diag(a, b, 1.0 / (a * b)));
        }
    }
    out
}

/// Diagonal states with `λ1 ≥ λ2 ≥ λ3` from `[0.6 : 0.2 : 2.0]`; 120 states.
pub fn mielke_compressible_grid() -> Vec<Tensor3> {
    let axis = range_scaled(6, 2, 20, 10.0);
    let mut out = Vec::new();
    for (i, &a) in axis.iter().enumerate().rev() {
        for (j, &b) in axis[..=i].iter().enumerate().rev() {
            for &c in axis[..=j].iter().rev() {
                out.push(diag(a, b, c));
            }
        }
    }
    out
}

/// Evaluates the reference stress on every state, full mask, all training.
pub fn build_dataset(
    params: &MaterialParams,
    loadcases: &[Tensor3],
    incompressible: bool,
) -> Result<Dataset> {
    params.validate()?;
    let samples = loadcases
        .iter()
        .map(|f| Ok(Sample::full(*f, ref_stress(params, f, incompressible)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::training(samples, incompressible))
}

/// Rows expected in a Treloar file, and the split sizes for that count.
pub const TRELOAR_ROWS: usize = 56;
const TRELOAR_SPLIT: (usize, usize, usize) = (41, 10, 5);

/// Reads `loadcase, stretch, nominal stress` rows (UT/ET/PS) into masked
/// samples and splits them reproducibly.
pub fn load_treloar(path: &Path, split_seed: u64) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_treloar(&text, split_seed)
}

pub fn parse_treloar(text: &str, split_seed: u64) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut samples = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedCsv(e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::MalformedCsv(format!(
                "row {}: expected 3 columns, got {}",
                line + 1,
                record.len()
            )));
        }
        let stretch = record[1].parse::<f64>();
        if line == 0 && stretch.is_err() {
            continue; // header
        }
        let bad = |what: &str| Error::MalformedCsv(format!("row {}: bad {what}", line + 1));
        let l = stretch.map_err(|_| bad("stretch"))?;
        let s: f64 = record[2].parse().map_err(|_| bad("stress"))?;
        if !(l.is_finite() && l > 0.0 && s.is_finite()) {
            return Err(bad("value"));
        }
        let mut mask = [false; 9];
        let mut p = Tensor3::zeros();
        mask[0] = true;
        p[(0, 0)] = s;
        let f = match record[0].to_ascii_uppercase().as_str() {
            "UT" => {
                let t = 1.0 / l.sqrt();
                diag(l, t, t)
            }
            "ET" => {
                mask[4] = true;
                p[(1, 1)] = s;
                diag(l, l, 1.0 / (l * l))
            }
            // the in-plane width stress of the pure-shear specimen is unknown
            "PS" => diag(l, 1.0, 1.0 / l),
            other => {
                return Err(Error::MalformedCsv(format!(
                    "row {}: unknown load case `{other}`",
                    line + 1
                )))
            }
        };
        samples.push(Sample { f, p, mask });
    }
    let n = samples.len();
    if n != TRELOAR_ROWS {
        log::warn!("Treloar file has {n} rows, expected {TRELOAR_ROWS}; split is scaled");
    }
    let (n_train, n_val) = if n == TRELOAR_ROWS {
        (TRELOAR_SPLIT.0, TRELOAR_SPLIT.1)
    } else {
        let val = (n * TRELOAR_SPLIT.1 + TRELOAR_ROWS / 2) / TRELOAR_ROWS;
        let test = (n * TRELOAR_SPLIT.2 + TRELOAR_ROWS / 2) / TRELOAR_ROWS;
        (n.saturating_sub(val + test), val)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let mut partition = vec![Partition::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        partition[i] = if rank < n_train {
            Partition::Train
        } else if rank < n_train + n_val {
            Partition::Val
        } else {
            Partition::Test
        };
    }
    Ok(Dataset { samples, partition, incompressible: true })
}

const COMPONENTS: [&str; 9] = ["11", "12", "13", "21", "22", "23", "31", "32", "33"];

fn header() -> Vec<String> {
    let mut h = Vec::with_capacity(28);
    for prefix in ["F", "P", "m"] {
        h.extend(COMPONENTS.iter().map(|c| format!("{prefix}{c}")));
    }
    h.push("split".into());
    h
}

/// Writes the dataset with a header row and one sample per line.
pub fn write_csv_to<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::MalformedCsv(e.to_string());
    w.write_record(header()).map_err(map)?;
    for (s, part) in dataset.samples.iter().zip(&dataset.partition) {
        let mut row: Vec<String> = Vec::with_capacity(28);
        // `{:?}` prints the shortest string that parses back to the same f64
        row.extend(kinematics::to_row_major(&s.f).iter().map(|v| format!("{v:?}")));
        row.extend(kinematics::to_row_major(&s.p).iter().map(|v| format!("{v:?}")));
        row.extend(s.mask.iter().map(|&m| if m { "1" } else { "0" }.to_string()));
        row.push(part.to_string());
        w.write_record(&row).map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    write_csv_to(dataset, File::create(path)?)
}

/// Parses a dataset; the trailing `split` column is optional (default train).
/// Compressibility is inferred: all `|det F − 1| ≤ 1e-8` means incompressible.
pub fn read_csv_from<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let head: Vec<String> = first.trim().split(',').map(|s| s.trim().to_string()).collect();
    let expected = header();
    let has_split = head.len() == 28;
    if head.as_slice() != &expected[..head.len().min(28)] || head.len() < 27 {
        return Err(Error::MalformedCsv(format!("unexpected header `{}`", first.trim())));
    }
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut samples = Vec::new();
    let mut partition = Vec::new();
    for (line, record) in csv_reader.records().enumerate() {
        let row = line + 2;
        let record = record.map_err(|e| Error::MalformedCsv(format!("line {row}: {e}")))?;
        if record.len() != head.len() {
            return Err(Error::MalformedCsv(format!(
                "line {row}: expected {} fields, got {}",
                head.len(),
                record.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            record[k]
                .parse::<f64>()
                .map_err(|_| Error::MalformedCsv(format!("line {row}: bad number `{}`", &record[k])))
        };
        let mut f = [0.0; 9];
        let mut p = [0.0; 9];
        let mut mask = [false; 9];
        for k in 0..9 {
            f[k] = num(k)?;
            p[k] = num(9 + k)?;
            mask[k] = match &record[18 + k] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::MalformedCsv(format!("line {row}: mask entry `{other}`")))
                }
            };
        }
        let f = kinematics::from_row_major(&f);
        kinematics::ensure_finite(&f).map_err(|_| Error::MalformedCsv(format!("line {row}: non-finite F")))?;
        samples.push(Sample { f, p: kinematics::from_row_major(&p), mask });
        partition.push(if has_split { record[27].parse()? } else { Partition::Train });
    }
    let incompressible = !samples.is_empty()
        && samples
            .iter()
            .all(|s| (kinematics::det(&s.f) - 1.0).abs() <= INCOMPRESSIBILITY_TOL);
    Ok(Dataset { samples, partition, incompressible })
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    read_csv_from(File::open(path)?)
}
