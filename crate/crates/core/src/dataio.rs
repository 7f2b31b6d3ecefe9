//! On-disk formats and the synthetic data generator.
//!
//! Features: `MTLF` magic, `u16` version, `u32` rows, `u32` cols, then
//! little-endian `f32` values row-major. Files ending in `.csv` are read as
//! headerless comma-separated text instead, also narrowed to `f32`.
//!
//! Models: `MTLM` magic, `u16` version, `u32` d, k, m, every task name as a
//! `u32` byte length followed by UTF-8, then `L` and `S` as little-endian
//! `f64` row-major.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::{Dataset, Group, GroupPartition, LatentModel, TaskData};
use crate::trainer::rng_for;

const FEATURE_MAGIC: &[u8; 4] = b"MTLF";
const MODEL_MAGIC: &[u8; 4] = b"MTLM";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor that reports the byte offset of failures.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated {what} at byte {}: need {n} bytes, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != magic {
            return Err(Error::format(
                self.path,
                format!(
                    "bad magic {:?} at byte 0, expected {:?}",
                    String::from_utf8_lossy(found),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let version = self.u16("version")?;
        if version != VERSION {
            return Err(Error::format(
                self.path,
                format!("unsupported version {version} at byte 4, expected {VERSION}"),
            ));
        }
        Ok(())
    }
}

fn to_u32(path: &Path, what: &str, v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::format(path, format!("{what} {v} does not fit in 32 bits")))
}

/// Reads a feature matrix, widening stored `f32` values to `f64`.
pub fn load_features(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    if is_csv(path) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return parse_features_csv(&text, path);
    }
    parse_features(&read(path)?, path)
}

pub fn parse_features(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    r.magic(FEATURE_MAGIC)?;
    let n = r.u32("row count")?;
    let d = r.u32("column count")?;
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format(path, "feature dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "payload of {n}x{d} features needs {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(n * d);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(
                path,
                format!(
                    "non-finite value at byte {} (row {}, col {})",
                    HEADER_LEN + 4 * i,
                    i / d.max(1),
                    i % d.max(1)
                ),
            ));
        }
        data.push(f64::from(v));
    }
    Matrix::new(n, d, data)
}

fn parse_features_csv(text: &str, path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(Error::format(
                path,
                format!(
                    "line {line}: expected {} values, found {}",
                    cols.unwrap(),
                    record.len()
                ),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f32 = field.parse().map_err(|_| {
                Error::format(
                    path,
                    format!("line {line} col {}: invalid number '{field}'", c + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    path,
                    format!("line {line} col {}: non-finite value", c + 1),
                ));
            }
            data.push(f64::from(v));
        }
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::format(
            path,
            format!("line {line}: expected {expected_len} values, found {len}"),
        ),
        _ => Error::format(path, format!("line {line}: {e}")),
    }
}

/// Writes features as `MTLF` (or CSV for a `.csv` path). Values are
/// narrowed to `f32`.
pub fn save_features(path: impl AsRef<Path>, x: &Matrix) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        let mut out = String::new();
        for r in 0..x.rows() {
            let line: Vec<String> = x.row(r).iter().map(|v| (*v as f32).to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        return write(path, out.as_bytes());
    }
    write(path, &encode_features(x, path)?)
}

pub fn encode_features(x: &Matrix, path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * x.as_slice().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(path, "row count", x.rows())?);
    out.extend_from_slice(&to_u32(path, "column count", x.cols())?);
    for &v in x.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Reads a label table: a header of attribute names, then one row per
/// sample of `-1`/`+1` values. With `zero_one`, `0` is read as `-1`.
pub fn load_labels(path: impl AsRef<Path>, zero_one: bool) -> Result<(Vec<String>, Matrix)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, zero_one, path)
}

pub fn parse_labels(text: &str, zero_one: bool, path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(Error::format(path, "label header must name every column"));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        rows += 1;
        for (c, field) in record.iter().enumerate() {
            let v = match field {
                "1" | "+1" => 1.0,
                "-1" => -1.0,
                "0" if zero_one => -1.0,
                _ => {
                    return Err(Error::format(
                        path,
                        format!("invalid label {field} at row {rows} col {}", c + 1),
                    ))
                }
            };
            data.push(v);
        }
    }
    Ok((names.clone(), Matrix::new(rows, names.len(), data)?))
}

pub fn save_labels(path: impl AsRef<Path>, names: &[String], labels: &Matrix) -> Result<()> {
    let path = path.as_ref();
    if names.len() != labels.cols() {
        return Err(Error::Dimension {
            context: "label names vs columns",
            expected: labels.cols(),
            found: names.len(),
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(names).map_err(io)?;
    for r in 0..labels.rows() {
        w.write_record(
            labels
                .row(r)
                .iter()
                .map(|v| if *v > 0.0 { "1" } else { "-1" }),
        )
        .map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(path, e.to_string()))?;
    write(path, &bytes)
}

/// Reads a group file, one `Name: attr, attr, ...` line per group, resolved
/// against the attribute `names`. Blank lines and `#` comments are skipped.
pub fn load_groups(path: impl AsRef<Path>, names: &[String]) -> Result<GroupPartition> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_groups(&text, names, path)
}

pub fn parse_groups(text: &str, names: &[String], path: &Path) -> Result<GroupPartition> {
    let mut groups: Vec<Group> = Vec::new();
    let mut owner: Vec<Option<usize>> = vec![None; names.len()];
    let mut problems = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((name, rest)) = line.split_once(':') else {
            problems.push(format!("line {}: expected 'Group: attr, ...'", i + 1));
            continue;
        };
        let g = groups.len();
        let mut members = Vec::new();
        for attr in rest.split(',').map(str::trim).filter(|a| !a.is_empty()) {
            match names.iter().position(|n| n == attr) {
                None => problems.push(format!("line {}: unknown attribute '{attr}'", i + 1)),
                Some(m) => match owner[m] {
                    Some(prev) => problems.push(format!(
                        "line {}: attribute '{attr}' already belongs to group '{}'",
                        i + 1,
                        groups.get(prev).map_or(name.trim(), |p| p.name.as_str())
                    )),
                    None => {
                        owner[m] = Some(g);
                        members.push(m);
                    }
                },
            }
        }
        groups.push(Group {
            name: name.trim().to_string(),
            members,
        });
    }
    for (m, o) in owner.iter().enumerate() {
        if o.is_none() {
            problems.push(format!("attribute '{}' is not in any group", names[m]));
        }
    }
    if !problems.is_empty() {
        return Err(Error::format(path, problems.join("; ")));
    }
    GroupPartition::new(groups, names.len()).map_err(|e| Error::format(path, e.to_string()))
}

pub fn format_groups(partition: &GroupPartition, names: &[String]) -> String {
    let mut out = String::new();
    for g in partition.groups() {
        let members: Vec<&str> = g.members.iter().map(|&m| names[m].as_str()).collect();
        out.push_str(&format!("{}: {}\n", g.name, members.join(", ")));
    }
    out
}

pub fn save_groups(
    path: impl AsRef<Path>,
    partition: &GroupPartition,
    names: &[String],
) -> Result<()> {
    write(path.as_ref(), format_groups(partition, names).as_bytes())
}

pub fn encode_model(model: &LatentModel, path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(path, "d", model.d())?);
    out.extend_from_slice(&to_u32(path, "k", model.k())?);
    out.extend_from_slice(&to_u32(path, "m", model.m())?);
    for name in &model.names {
        out.extend_from_slice(&to_u32(path, "name length", name.len())?);
        out.extend_from_slice(name.as_bytes());
    }
    for v in model.l.as_slice().iter().chain(model.s.as_slice()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn save_model(path: impl AsRef<Path>, model: &LatentModel) -> Result<()> {
    let path = path.as_ref();
    write(path, &encode_model(model, path)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LatentModel> {
    let path = path.as_ref();
    parse_model(&read(path)?, path)
}

pub fn parse_model(bytes: &[u8], path: &Path) -> Result<LatentModel> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    r.magic(MODEL_MAGIC)?;
    let d = r.u32("d")?;
    let k = r.u32("k")?;
    let m = r.u32("m")?;
    let mut names = Vec::with_capacity(m);
    for _ in 0..m {
        let len = r.u32("name length")?;
        let at = r.pos;
        let raw = r.take(len, "name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::format(path, format!("name at byte {at} is not UTF-8")))?;
        names.push(name.to_string());
    }
    let mut floats = |rows: usize, cols: usize, what: &str| -> Result<Matrix> {
        let at = r.pos;
        let raw = r.take(rows * cols * 8, what)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::new(rows, cols, data)
            .map_err(|e| Error::format(path, format!("{what} at byte {at}: {e}")))
    };
    let l = floats(d, k, "L")?;
    let s = floats(k, m, "S")?;
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!(
                "{} trailing bytes after byte {}",
                bytes.len() - r.pos,
                r.pos
            ),
        ));
    }
    LatentModel::new(l, s, names).map_err(|e| Error::format(path, e.to_string()))
}

/// Parameters of a synthetic group-structured problem.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub d: usize,
    pub k_true: usize,
    pub m: usize,
    pub partition: GroupPartition,
    /// Training samples per task.
    pub n_per_task: Vec<usize>,
    /// Test samples per task.
    pub n_test: usize,
    /// Fraction of nonzero entries in the true latent matrix.
    pub density: f64,
    /// Probability of flipping each training label.
    pub noise: f64,
    /// Target median of `|xᵀw*|` over each task's training pool.
    pub margin: f64,
}

impl SynthSpec {
    /// `m` tasks dealt round-robin into `groups` groups, `n` samples each.
    pub fn round_robin(d: usize, k_true: usize, m: usize, groups: usize, n: usize) -> Result<Self> {
        Ok(SynthSpec {
            d,
            k_true,
            m,
            partition: round_robin_partition(m, groups)?,
            n_per_task: vec![n; m],
            n_test: 1000,
            density: 1.0,
            noise: 0.0,
            margin: 1.0,
        })
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        if self.d == 0 || self.k_true == 0 || self.m == 0 || self.n_test == 0 {
            return bad("d, k_true, m and n_test must be >= 1".into());
        }
        if self.n_per_task.len() != self.m || self.n_per_task.contains(&0) {
            return bad(format!("need {} training counts, each >= 1", self.m));
        }
        if self.partition.num_tasks() != self.m {
            return bad("partition does not cover the tasks".into());
        }
        if self.k_true < self.partition.num_groups() {
            return bad(format!(
                "latent band width below 1: {} latent rows for {} groups",
                self.k_true,
                self.partition.num_groups()
            ));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density {} must lie in (0, 1]", self.density));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return bad(format!("noise {} must lie in [0, 0.5)", self.noise));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin {} must be > 0", self.margin));
        }
        Ok(())
    }

    /// Latent rows owned by group `g`: contiguous bands, the first
    /// `k_true mod G` groups one row wider.
    pub fn band(&self, g: usize) -> std::ops::Range<usize> {
        let groups = self.partition.num_groups();
        let (base, extra) = (self.k_true / groups, self.k_true % groups);
        let start = g * base + g.min(extra);
        start..start + base + usize::from(g < extra)
    }
}

pub fn round_robin_partition(m: usize, groups: usize) -> Result<GroupPartition> {
    if groups == 0 || groups > m {
        return Err(Error::Argument(format!(
            "cannot deal {m} tasks into {groups} groups"
        )));
    }
    let groups = (0..groups)
        .map(|g| Group {
            name: format!("group{g}"),
            members: (g..m).step_by(groups).collect(),
        })
        .collect();
    GroupPartition::new(groups, m)
}

/// A generated problem and the factors that produced it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub train: Dataset,
    pub test: Dataset,
    pub l_star: Matrix,
    pub s_star: Matrix,
}

impl Synthetic {
    pub fn w_star(&self) -> Matrix {
        self.l_star.matmul(&self.s_star)
    }
}

pub fn synth_task_name(m: usize) -> String {
    format!("t{m:02}")
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Draws a problem whose tasks share latent structure within groups.
///
/// `L*` has a `density` fraction of Gaussian entries (at least one per
/// column). Each group owns a band of latent rows and its tasks combine
/// only those rows. Features are standard Gaussian, labels are the sign
/// of `xᵀw*` and training labels are then flipped with probability
/// `noise`. Each `w*` column is rescaled so that its median unsigned
/// training margin equals `margin`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Synthetic> {
    spec.check()?;
    let mut rng = rng_for(seed, "synth:latent");
    let mut l_star = Matrix::zeros(spec.d, spec.k_true);
    for j in 0..spec.k_true {
        let mut any = false;
        for r in 0..spec.d {
            if rng.random::<f64>() < spec.density {
                l_star.set(r, j, StandardNormal.sample(&mut rng));
                any = true;
            }
        }
        if !any {
            let r = rng.random_range(0..spec.d);
            l_star.set(r, j, StandardNormal.sample(&mut rng));
        }
    }

    let mut s_star = Matrix::zeros(spec.k_true, spec.m);
    let mut train = Vec::with_capacity(spec.m);
    let mut test = Vec::with_capacity(spec.m);
    for m in 0..spec.m {
        let name = synth_task_name(m);
        let mut rng = rng_for(seed, &format!("synth:combination:{m}"));
        for k in spec.band(spec.partition.group_of(m)) {
            s_star.set(k, m, StandardNormal.sample(&mut rng));
        }
        let mut w: Vec<f64> = (0..spec.d)
            .map(|r| dot(l_star.row(r), &s_star.col(m)))
            .collect();

        let x_train = gaussian_matrix(
            spec.n_per_task[m],
            spec.d,
            &mut rng_for(seed, &format!("synth:train:{m}")),
        );
        let x_test = gaussian_matrix(
            spec.n_test,
            spec.d,
            &mut rng_for(seed, &format!("synth:test:{m}")),
        );
        let med = median(x_train.matvec(&w).iter().map(|v| v.abs()).collect());
        if med > 0.0 {
            let factor = spec.margin / med;
            for k in 0..spec.k_true {
                s_star.set(k, m, s_star.get(k, m) * factor);
            }
            w.iter_mut().for_each(|v| *v *= factor);
        }

        let sign = |v: f64| if v >= 0.0 { 1.0 } else { -1.0 };
        let mut flip = rng_for(seed, &format!("synth:noise:{m}"));
        let y_train: Vec<f64> = x_train
            .matvec(&w)
            .into_iter()
            .map(|v| {
                let y = sign(v);
                if flip.random::<f64>() < spec.noise {
                    -y
                } else {
                    y
                }
            })
            .collect();
        let y_test: Vec<f64> = x_test.matvec(&w).into_iter().map(sign).collect();
        train.push(TaskData::new(name.clone(), x_train, y_train));
        test.push(TaskData::new(name, x_test, y_test));
    }
    Ok(Synthetic {
        train: Dataset::new(train)?,
        test: Dataset::new(test)?,
        l_star,
        s_star,
    })
}
